//! Runs a trained [`DualEncoder`] over a [`SyntheticDataset`] and collects
//! every diagnostic in one place.

use crate::data::{Split, SyntheticDataset};
use crate::encoder::EmbeddingBatch;
use crate::error::Result;
use crate::loss::cross_modal_cyclic_loss;
use crate::math::Matrix;
use crate::metrics::{
    alignment, class_text_embedding, coarse_grained_accuracy, consistency_score,
    fine_grained_accuracy, linear_probe, topk_accuracy, uniformity, ClassTextEmbeddings,
    HierarchyLabel, LabeledEmbeddings, ProbeConfig,
};
use crate::train::DualEncoder;

/// k values reported for zero-shot top-k accuracy.
pub const ZERO_SHOT_KS: [usize; 3] = [1, 3, 5];
/// k values reported for the kNN consistency score.
pub const CONSISTENCY_KS: [usize; 4] = [1, 3, 5, 10];
/// Batch size used for the batch-averaged cross-modal gap.
pub const GAP_BATCH: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct SplitEmbeddings {
    pub images: EmbeddingBatch,
    pub texts: EmbeddingBatch,
    pub labels: Vec<usize>,
}

pub fn embed_split(model: &DualEncoder, split: &Split) -> Result<SplitEmbeddings> {
    Ok(SplitEmbeddings {
        images: model.image_encoder.embed(&split.images)?,
        texts: model.text_encoder.embed(&split.texts)?,
        labels: split.labels.clone(),
    })
}

/// Prompt-ensembled text embedding for every class, using all templates.
pub fn class_embeddings(
    model: &DualEncoder,
    dataset: &SyntheticDataset,
) -> Result<ClassTextEmbeddings> {
    let mut rows = Vec::with_capacity(dataset.n_classes());
    for c in 0..dataset.n_classes() {
        let views = dataset.prompt_views(c, dataset.n_templates())?;
        let prompts = model.text_encoder.embed(&views)?;
        rows.push(class_text_embedding(&prompts)?.into_vec());
    }
    ClassTextEmbeddings::new(EmbeddingBatch::new(Matrix::from_rows(&rows)?)?)
}

/// Each image paired with the ensembled text embedding of its class.
pub fn proxy_captions(classes: &ClassTextEmbeddings, labels: &[usize]) -> EmbeddingBatch {
    classes.batch().select(labels)
}

/// Mean over consecutive test batches of the cross-modal consistency loss.
pub fn cross_modal_gap(
    images: &EmbeddingBatch,
    texts: &EmbeddingBatch,
    batch: usize,
) -> Result<f64> {
    let idx: Vec<usize> = (0..images.count()).collect();
    let mut chunks = idx.chunks_exact(batch).peekable();
    if chunks.peek().is_none() {
        return Ok(cross_modal_cyclic_loss(images, texts)?.value);
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for rows in chunks {
        sum += cross_modal_cyclic_loss(&images.select(rows), &texts.select(rows))?.value;
        count += 1;
    }
    Ok(sum / count as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Geometry {
    /// Images against the ensembled text embedding of their class.
    pub alignment: f64,
    pub uniformity: f64,
    /// Images against their own paired text view.
    pub paired_alignment: f64,
    pub paired_uniformity: f64,
    pub cross_modal_gap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub zero_shot_topk: Vec<(usize, f64)>,
    pub consistency: Vec<(usize, f64)>,
    pub geometry: Geometry,
    pub fine_grained: f64,
    pub coarse_grained: f64,
}

pub struct Evaluator<'a> {
    pub dataset: &'a SyntheticDataset,
    pub classes: ClassTextEmbeddings,
    pub train: SplitEmbeddings,
    pub test: SplitEmbeddings,
}

impl<'a> Evaluator<'a> {
    pub fn new(model: &DualEncoder, dataset: &'a SyntheticDataset) -> Result<Self> {
        Ok(Self {
            dataset,
            classes: class_embeddings(model, dataset)?,
            train: embed_split(model, &dataset.train)?,
            test: embed_split(model, &dataset.test)?,
        })
    }

    pub fn zero_shot_topk(&self, ks: &[usize]) -> Result<Vec<(usize, f64)>> {
        ks.iter()
            .map(|&k| {
                Ok((
                    k,
                    topk_accuracy(&self.test.images, &self.test.labels, &self.classes, k)?,
                ))
            })
            .collect()
    }

    pub fn consistency(&self, ks: &[usize]) -> Result<Vec<(usize, f64)>> {
        let train = LabeledEmbeddings::new(self.train.images.clone(), self.train.labels.clone())?;
        ks.iter()
            .map(|&k| {
                Ok((
                    k,
                    consistency_score(&self.test.images, &train, &self.classes, k)?,
                ))
            })
            .collect()
    }

    pub fn geometry(&self) -> Result<Geometry> {
        let proxies = proxy_captions(&self.classes, &self.test.labels);
        Ok(Geometry {
            alignment: alignment(&self.test.images, &proxies)?,
            uniformity: uniformity(&self.test.images, &proxies)?,
            paired_alignment: alignment(&self.test.images, &self.test.texts)?,
            paired_uniformity: uniformity(&self.test.images, &self.test.texts)?,
            cross_modal_gap: cross_modal_gap(&self.test.images, &self.test.texts, GAP_BATCH)?,
        })
    }

    fn hierarchy_labels(&self) -> Vec<HierarchyLabel> {
        self.test
            .labels
            .iter()
            .map(|&c| HierarchyLabel {
                subclass: c,
                superclass: self.dataset.superclass_of(c),
            })
            .collect()
    }

    /// `(fine, coarse)`.
    pub fn grained(&self) -> Result<(f64, f64)> {
        let labels = self.hierarchy_labels();
        let h = &self.dataset.hierarchy;
        Ok((
            fine_grained_accuracy(&self.test.images, &labels, &self.classes, h)?,
            coarse_grained_accuracy(&self.test.images, &labels, &self.classes, h)?,
        ))
    }

    pub fn linear_probe(&self, cfg: &ProbeConfig) -> Result<f64> {
        let train = LabeledEmbeddings::new(self.train.images.clone(), self.train.labels.clone())?;
        let test = LabeledEmbeddings::new(self.test.images.clone(), self.test.labels.clone())?;
        linear_probe(&train, &test, cfg)
    }

    pub fn evaluate(&self) -> Result<Evaluation> {
        let (fine_grained, coarse_grained) = self.grained()?;
        Ok(Evaluation {
            zero_shot_topk: self.zero_shot_topk(&ZERO_SHOT_KS)?,
            consistency: self.consistency(&CONSISTENCY_KS)?,
            geometry: self.geometry()?,
            fine_grained,
            coarse_grained,
        })
    }
}
