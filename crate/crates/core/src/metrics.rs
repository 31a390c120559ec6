//! Embedding-space diagnostics: zero-shot and kNN predictors, the consistency
//! score between them, hypersphere alignment/uniformity, hierarchy-aware
//! accuracies, and a linear probe.
//!
//! Class ids are zero-based throughout. Similarity is the inner product of
//! unit vectors; every argmax breaks ties toward the smaller index.

use std::cmp::Ordering;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::encoder::EmbeddingBatch;
use crate::error::{Error, Result};
use crate::math::{dot, l2_normalize, Matrix, Vector};
use crate::train::{adam_step, lr_at, AdamConfig, OptimizerState, TensorSpec};

/// Subclass → superclass map and its inverse.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassHierarchy {
    parent_of: Vec<usize>,
    children_of: Vec<Vec<usize>>,
}

impl ClassHierarchy {
    pub fn new(parent_of: Vec<usize>, n_superclasses: usize) -> Result<Self> {
        let mut children_of = vec![Vec::new(); n_superclasses];
        for (child, &parent) in parent_of.iter().enumerate() {
            let slot = children_of.get_mut(parent).ok_or_else(|| {
                Error::HierarchyViolation(format!(
                    "subclass {child} maps to superclass {parent} of {n_superclasses}"
                ))
            })?;
            slot.push(child);
        }
        if let Some(p) = children_of.iter().position(Vec::is_empty) {
            return Err(Error::HierarchyViolation(format!(
                "superclass {p} has no children"
            )));
        }
        Ok(Self {
            parent_of,
            children_of,
        })
    }

    /// Every subclass is its own superclass.
    pub fn flat(n_classes: usize) -> Self {
        Self::new((0..n_classes).collect(), n_classes).expect("identity hierarchy")
    }

    pub fn n_subclasses(&self) -> usize {
        self.parent_of.len()
    }

    pub fn n_superclasses(&self) -> usize {
        self.children_of.len()
    }

    pub fn parent_of(&self, subclass: usize) -> usize {
        self.parent_of[subclass]
    }

    pub fn children_of(&self, superclass: usize) -> &[usize] {
        &self.children_of[superclass]
    }

    pub fn parents(&self) -> &[usize] {
        &self.parent_of
    }

    pub fn children_per_parent(&self) -> Vec<usize> {
        self.children_of.iter().map(Vec::len).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledEmbeddings {
    embeddings: EmbeddingBatch,
    labels: Vec<usize>,
}

impl LabeledEmbeddings {
    pub fn new(embeddings: EmbeddingBatch, labels: Vec<usize>) -> Result<Self> {
        if embeddings.count() != labels.len() {
            return Err(Error::BatchMismatch(format!(
                "{} embeddings but {} labels",
                embeddings.count(),
                labels.len()
            )));
        }
        Ok(Self { embeddings, labels })
    }

    pub fn embeddings(&self) -> &EmbeddingBatch {
        &self.embeddings
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// One unit-norm text embedding per class; row `c` belongs to class `c`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassTextEmbeddings(EmbeddingBatch);

impl ClassTextEmbeddings {
    pub fn new(per_class: EmbeddingBatch) -> Result<Self> {
        if per_class.count() == 0 {
            return Err(Error::DegenerateBatch("no classes".into()));
        }
        Ok(Self(per_class))
    }

    pub fn n_classes(&self) -> usize {
        self.0.count()
    }

    pub fn dim(&self) -> usize {
        self.0.dim()
    }

    pub fn embedding(&self, class: usize) -> &[f64] {
        self.0.row(class)
    }

    pub fn batch(&self) -> &EmbeddingBatch {
        &self.0
    }
}

/// Prompt ensembling: normalize each prompt embedding, average, renormalize.
pub fn class_text_embedding(prompt_embeddings: &EmbeddingBatch) -> Result<Vector> {
    if prompt_embeddings.count() == 0 {
        return Err(Error::DegenerateBatch("no prompt embeddings".into()));
    }
    let mut mean = vec![0.0; prompt_embeddings.dim()];
    for row in prompt_embeddings.vectors().row_iter() {
        let unit = l2_normalize(&Vector::new(row.to_vec())?)?;
        for (m, x) in mean.iter_mut().zip(unit.as_slice()) {
            *m += x;
        }
    }
    let count = prompt_embeddings.count() as f64;
    mean.iter_mut().for_each(|m| *m /= count);
    l2_normalize(&Vector::new(mean)?)
}

fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimMismatch { expected, got });
    }
    Ok(())
}

/// Descending similarity, ascending index on ties.
fn by_similarity(a: &(usize, f64), b: &(usize, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

/// Class ids ordered from most to least similar.
pub fn rank_classes(image_embedding: &[f64], classes: &ClassTextEmbeddings) -> Result<Vec<usize>> {
    check_dim(classes.dim(), image_embedding.len())?;
    let mut scored: Vec<(usize, f64)> = (0..classes.n_classes())
        .map(|c| (c, dot(image_embedding, classes.embedding(c))))
        .collect();
    scored.sort_by(by_similarity);
    Ok(scored.into_iter().map(|(c, _)| c).collect())
}

fn argmax_over(
    image_embedding: &[f64],
    classes: &ClassTextEmbeddings,
    candidates: impl Iterator<Item = usize>,
) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for c in candidates {
        let s = dot(image_embedding, classes.embedding(c));
        match best {
            Some((_, bs)) if s <= bs => {}
            _ => best = Some((c, s)),
        }
    }
    best.map(|(c, _)| c)
}

pub fn zero_shot_predict(image_embedding: &[f64], classes: &ClassTextEmbeddings) -> Result<usize> {
    check_dim(classes.dim(), image_embedding.len())?;
    Ok(argmax_over(image_embedding, classes, 0..classes.n_classes()).expect("at least one class"))
}

/// Majority vote over the `k` most similar training rows.
///
/// Neighbour ties go to the lower training index. Vote ties go to the label
/// whose closest member is most similar, then to the smaller label.
pub fn knn_predict(train: &LabeledEmbeddings, query: &[f64], k: usize) -> Result<usize> {
    if train.is_empty() {
        return Err(Error::EmptyTrainSet);
    }
    if k == 0 || k > train.len() {
        return Err(Error::BadK {
            k,
            max: train.len(),
        });
    }
    check_dim(train.embeddings().dim(), query.len())?;
    let mut scored: Vec<(usize, f64)> = (0..train.len())
        .map(|i| (i, dot(query, train.embeddings().row(i))))
        .collect();
    if k < scored.len() {
        scored.select_nth_unstable_by(k - 1, by_similarity);
        scored.truncate(k);
    }

    // (label, votes, best similarity)
    let mut tally: Vec<(usize, usize, f64)> = Vec::with_capacity(k);
    for &(i, s) in &scored {
        let label = train.labels()[i];
        match tally.iter_mut().find(|t| t.0 == label) {
            Some(t) => {
                t.1 += 1;
                t.2 = t.2.max(s);
            }
            None => tally.push((label, 1, s)),
        }
    }
    let winner = tally
        .into_iter()
        .min_by(|a, b| b.1.cmp(&a.1).then(b.2.total_cmp(&a.2)).then(a.0.cmp(&b.0)))
        .expect("k >= 1");
    Ok(winner.0)
}

/// Fraction of test images whose kNN label (image space) equals their
/// zero-shot label (text space).
pub fn consistency_score(
    test_images: &EmbeddingBatch,
    train: &LabeledEmbeddings,
    classes: &ClassTextEmbeddings,
    k: usize,
) -> Result<f64> {
    if test_images.count() == 0 {
        return Err(Error::EmptySplit("test images"));
    }
    let mut agree = 0usize;
    for row in test_images.vectors().row_iter() {
        if knn_predict(train, row, k)? == zero_shot_predict(row, classes)? {
            agree += 1;
        }
    }
    Ok(agree as f64 / test_images.count() as f64)
}

fn check_pair(images: &EmbeddingBatch, texts: &EmbeddingBatch) -> Result<()> {
    if images.count() != texts.count() || images.dim() != texts.dim() {
        return Err(Error::BatchMismatch(format!(
            "{}x{} vs {}x{}",
            images.count(),
            images.dim(),
            texts.count(),
            texts.dim()
        )));
    }
    Ok(())
}

/// Mean similarity of matched pairs.
pub fn alignment(images: &EmbeddingBatch, texts: &EmbeddingBatch) -> Result<f64> {
    check_pair(images, texts)?;
    if images.count() == 0 {
        return Err(Error::DegenerateBatch("alignment of an empty batch".into()));
    }
    let sum: f64 = (0..images.count())
        .map(|j| dot(images.row(j), texts.row(j)))
        .sum();
    Ok(sum / images.count() as f64)
}

/// `log` of the mean of `exp(−⟨I_j, T_k⟩)` over mismatched pairs `j ≠ k`.
pub fn uniformity(images: &EmbeddingBatch, texts: &EmbeddingBatch) -> Result<f64> {
    check_pair(images, texts)?;
    let n = images.count();
    if n < 2 {
        return Err(Error::DegenerateBatch(
            "uniformity needs at least two pairs".into(),
        ));
    }
    let mut sum = 0.0;
    for j in 0..n {
        for k in 0..n {
            if j != k {
                sum += (-dot(images.row(j), texts.row(k))).exp();
            }
        }
    }
    Ok((sum / (n * (n - 1)) as f64).ln())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HierarchyLabel {
    pub subclass: usize,
    pub superclass: usize,
}

fn check_grained(
    images: &EmbeddingBatch,
    labels: &[HierarchyLabel],
    classes: &ClassTextEmbeddings,
    hierarchy: &ClassHierarchy,
) -> Result<()> {
    if images.count() != labels.len() {
        return Err(Error::BatchMismatch(format!(
            "{} images but {} labels",
            images.count(),
            labels.len()
        )));
    }
    if images.count() == 0 {
        return Err(Error::EmptySplit("test images"));
    }
    check_dim(classes.dim(), images.dim())?;
    if classes.n_classes() != hierarchy.n_subclasses() {
        return Err(Error::HierarchyViolation(format!(
            "{} class embeddings for {} subclasses",
            classes.n_classes(),
            hierarchy.n_subclasses()
        )));
    }
    for (j, l) in labels.iter().enumerate() {
        if l.subclass >= hierarchy.n_subclasses() || hierarchy.parent_of(l.subclass) != l.superclass
        {
            return Err(Error::HierarchyViolation(format!(
                "row {j}: subclass {} is not a child of superclass {}",
                l.subclass, l.superclass
            )));
        }
    }
    Ok(())
}

/// Subclass accuracy with the argmax restricted to the true superclass's children.
pub fn fine_grained_accuracy(
    images: &EmbeddingBatch,
    labels: &[HierarchyLabel],
    classes: &ClassTextEmbeddings,
    hierarchy: &ClassHierarchy,
) -> Result<f64> {
    check_grained(images, labels, classes, hierarchy)?;
    let hits = labels
        .iter()
        .enumerate()
        .filter(|(j, l)| {
            let children = hierarchy.children_of(l.superclass).iter().copied();
            argmax_over(images.row(*j), classes, children) == Some(l.subclass)
        })
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Rate at which the unrestricted argmax lands among the true superclass's children.
pub fn coarse_grained_accuracy(
    images: &EmbeddingBatch,
    labels: &[HierarchyLabel],
    classes: &ClassTextEmbeddings,
    hierarchy: &ClassHierarchy,
) -> Result<f64> {
    check_grained(images, labels, classes, hierarchy)?;
    let mut hits = 0usize;
    for (j, l) in labels.iter().enumerate() {
        let predicted = zero_shot_predict(images.row(j), classes)?;
        if hierarchy.parent_of(predicted) == l.superclass {
            hits += 1;
        }
    }
    Ok(hits as f64 / labels.len() as f64)
}

pub fn topk_accuracy(
    images: &EmbeddingBatch,
    true_labels: &[usize],
    classes: &ClassTextEmbeddings,
    k: usize,
) -> Result<f64> {
    if k == 0 || k > classes.n_classes() {
        return Err(Error::BadK {
            k,
            max: classes.n_classes(),
        });
    }
    if images.count() != true_labels.len() {
        return Err(Error::BatchMismatch(format!(
            "{} images but {} labels",
            images.count(),
            true_labels.len()
        )));
    }
    if images.count() == 0 {
        return Err(Error::EmptySplit("test images"));
    }
    let mut hits = 0usize;
    for (j, &label) in true_labels.iter().enumerate() {
        if rank_classes(images.row(j), classes)?[..k].contains(&label) {
            hits += 1;
        }
    }
    Ok(hits as f64 / true_labels.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Applied to the weight matrix only, never the bias.
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            epochs: 32,
            batch_size: 16,
            learning_rate: 0.005,
            weight_decay: 0.01,
            seed: 0,
        }
    }
}

/// Affine softmax classifier trained on frozen embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProbe {
    /// `classes × dim`.
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl LinearProbe {
    pub fn predict(&self, x: &[f64]) -> usize {
        let mut best = (0, f64::NEG_INFINITY);
        for c in 0..self.weight.rows() {
            let s = dot(self.weight.row(c), x) + self.bias[c];
            if s > best.1 {
                best = (c, s);
            }
        }
        best.0
    }

    pub fn accuracy(&self, data: &LabeledEmbeddings) -> f64 {
        let hits = (0..data.len())
            .filter(|&i| self.predict(data.embeddings().row(i)) == data.labels()[i])
            .count();
        hits as f64 / data.len() as f64
    }
}

/// Trains with Adam on minibatches, cosine-decayed learning rate and
/// decoupled weight decay on the weight matrix.
pub fn fit_linear_probe(
    train: &LabeledEmbeddings,
    n_classes: usize,
    cfg: &ProbeConfig,
) -> Result<LinearProbe> {
    if train.is_empty() {
        return Err(Error::EmptySplit("probe training set"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::BadConfig("probe batch size must be positive".into()));
    }
    if let Some(&bad) = train.labels().iter().find(|&&l| l >= n_classes) {
        return Err(Error::BadClass(bad));
    }
    let dim = train.embeddings().dim();
    let mut probe = LinearProbe {
        weight: Matrix::zeros(n_classes, dim),
        bias: vec![0.0; n_classes],
    };
    let mut state = OptimizerState::new(vec![
        TensorSpec::decayed(n_classes * dim),
        TensorSpec::exempt(n_classes),
    ]);
    let adam = AdamConfig {
        weight_decay: cfg.weight_decay,
        ..AdamConfig::default()
    };
    let batches_per_epoch = train.len().div_ceil(cfg.batch_size);
    let total_steps = cfg.epochs * batches_per_epoch;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut step = 0;
    let mut grad_w = Matrix::zeros(n_classes, dim);
    let mut grad_b = vec![0.0; n_classes];
    let mut logits = vec![0.0; n_classes];
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            grad_w.data_mut().fill(0.0);
            grad_b.fill(0.0);
            let inv = 1.0 / batch.len() as f64;
            for &i in batch {
                let x = train.embeddings().row(i);
                for (c, l) in logits.iter_mut().enumerate() {
                    *l = dot(probe.weight.row(c), x) + probe.bias[c];
                }
                let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = logits.iter().map(|l| (l - max).exp()).sum();
                for c in 0..n_classes {
                    let mut g = (logits[c] - max).exp() / z;
                    if c == train.labels()[i] {
                        g -= 1.0;
                    }
                    g *= inv;
                    grad_b[c] += g;
                    for (gw, xv) in grad_w.row_mut(c).iter_mut().zip(x) {
                        *gw += g * xv;
                    }
                }
            }
            step += 1;
            let lr = lr_at(step, total_steps, 0, cfg.learning_rate)?;
            adam_step(
                &mut [probe.weight.data_mut(), &mut probe.bias],
                &[grad_w.data(), &grad_b],
                &mut state,
                lr,
                &adam,
            )?;
        }
    }
    Ok(probe)
}

/// Fits a probe on `train` and returns its accuracy on `test`.
pub fn linear_probe(
    train: &LabeledEmbeddings,
    test: &LabeledEmbeddings,
    cfg: &ProbeConfig,
) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::EmptySplit("probe test set"));
    }
    check_dim(train.embeddings().dim(), test.embeddings().dim())?;
    let n_classes = train
        .labels()
        .iter()
        .chain(test.labels())
        .max()
        .map_or(0, |m| m + 1);
    let probe = fit_linear_probe(train, n_classes, cfg)?;
    Ok(probe.accuracy(test))
}
