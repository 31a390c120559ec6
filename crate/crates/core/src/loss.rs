//! Contrastive loss and the two cycle-consistency regularizers, each with
//! exact gradients with respect to both embedding batches and the logit scale.
//!
//! The `*_matrix` variants work on raw matrices and do not require unit-norm
//! rows; they are what the gradient checks perturb directly.

use crate::encoder::EmbeddingBatch;
use crate::error::{Error, Result};
use crate::math::{logsumexp_row, similarity_matrix, Matrix};

/// Upper bound of the logit scale `s`; `exp(−4.6052) ≈ 0.01` is the smallest temperature.
pub const LOGIT_SCALE_MAX: f64 = 4.6052;
pub const LOGIT_SCALE_MIN: f64 = 0.0;
/// `ln(1 / 0.07)`, the usual CLIP starting temperature.
pub const DEFAULT_INIT_LOGIT_SCALE: f64 = 2.659_260_036_932_778_5;

/// Learnable logit scale `s`; logits are `exp(s) · ⟨I_j, T_k⟩`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogitScale(f64);

impl LogitScale {
    /// Clamps into `[0, 4.6052]`.
    pub fn new(s: f64) -> Self {
        Self(Self::clamp(s))
    }

    pub fn clamp(s: f64) -> f64 {
        s.clamp(LOGIT_SCALE_MIN, LOGIT_SCALE_MAX)
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn multiplier(self) -> f64 {
        self.0.exp()
    }

    pub fn temperature(self) -> f64 {
        (-self.0).exp()
    }
}

impl Default for LogitScale {
    fn default() -> Self {
        Self(DEFAULT_INIT_LOGIT_SCALE)
    }
}

/// `lambda1` weighs the in-modal term, `lambda2` the cross-modal term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
}

impl LossWeights {
    pub const CLIP: Self = Self {
        lambda1: 0.0,
        lambda2: 0.0,
    };
    pub const CYCLIP: Self = Self {
        lambda1: 0.25,
        lambda2: 0.25,
    };
    pub const I_CYCLIP: Self = Self {
        lambda1: 0.5,
        lambda2: 0.0,
    };
    pub const C_CYCLIP: Self = Self {
        lambda1: 0.0,
        lambda2: 0.5,
    };

    pub fn new(lambda1: f64, lambda2: f64) -> Result<Self> {
        if !(lambda1 >= 0.0 && lambda2 >= 0.0) || !lambda1.is_finite() || !lambda2.is_finite() {
            return Err(Error::BadConfig(format!(
                "loss weights must be finite and nonnegative, got ({lambda1}, {lambda2})"
            )));
        }
        Ok(Self { lambda1, lambda2 })
    }
}

/// The four named variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Clip,
    Cyclip,
    ICyclip,
    CCyclip,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Clip,
        Variant::Cyclip,
        Variant::ICyclip,
        Variant::CCyclip,
    ];

    pub fn weights(self) -> LossWeights {
        match self {
            Variant::Clip => LossWeights::CLIP,
            Variant::Cyclip => LossWeights::CYCLIP,
            Variant::ICyclip => LossWeights::I_CYCLIP,
            Variant::CCyclip => LossWeights::C_CYCLIP,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Clip => "clip",
            Variant::Cyclip => "cyclip",
            Variant::ICyclip => "i-cyclip",
            Variant::CCyclip => "c-cyclip",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::BadConfig(format!("unknown variant {s:?}")))
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// A loss value with its gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct LossTerm {
    pub value: f64,
    pub grad_images: Matrix,
    pub grad_texts: Matrix,
    pub grad_logit_scale: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub clip_loss: f64,
    pub in_modal_loss: f64,
    pub cross_modal_loss: f64,
    pub total: f64,
    pub grad_image_embeddings: Matrix,
    pub grad_text_embeddings: Matrix,
    pub grad_logit_scale: f64,
}

fn check_pair(images: &Matrix, texts: &Matrix) -> Result<usize> {
    if images.shape() != texts.shape() {
        return Err(Error::BatchMismatch(format!(
            "images {:?} vs texts {:?}",
            images.shape(),
            texts.shape()
        )));
    }
    Ok(images.rows())
}

/// Symmetric InfoNCE over the logits `exp(s) · I Tᵀ`, averaged over both directions.
pub fn clip_loss(
    images: &EmbeddingBatch,
    texts: &EmbeddingBatch,
    scale: LogitScale,
) -> Result<LossTerm> {
    clip_loss_matrix(images.vectors(), texts.vectors(), scale.value())
}

pub fn clip_loss_matrix(images: &Matrix, texts: &Matrix, s: f64) -> Result<LossTerm> {
    let n = check_pair(images, texts)?;
    if n == 0 {
        return Err(Error::DegenerateBatch(
            "contrastive loss needs at least one pair".into(),
        ));
    }
    let mult = s.exp();
    let logits = similarity_matrix(images, texts)?.scaled(mult);
    let cols = logits.transpose();

    let norm = 1.0 / (2.0 * n as f64);
    // d loss / d logits = norm · (row_softmax + col_softmax − 2·I)
    let mut dlogits = Matrix::zeros(n, n);
    let mut value = 0.0;
    for j in 0..n {
        let row = logits.row(j);
        let lse = logsumexp_row(row)?;
        value += lse - row[j];
        for (k, &l) in row.iter().enumerate() {
            let p = (l - lse).exp();
            dlogits.set(j, k, dlogits.get(j, k) + p);
        }
    }
    for k in 0..n {
        let col = cols.row(k);
        let lse = logsumexp_row(col)?;
        value += lse - col[k];
        for (j, &l) in col.iter().enumerate() {
            let p = (l - lse).exp();
            dlogits.set(j, k, dlogits.get(j, k) + p);
        }
    }
    for j in 0..n {
        dlogits.set(j, j, dlogits.get(j, j) - 2.0);
    }
    dlogits.scale(norm);
    value *= norm;

    // logits depend on s through exp(s)
    let grad_logit_scale: f64 = dlogits
        .data()
        .iter()
        .zip(logits.data())
        .map(|(g, l)| g * l)
        .sum();
    let dsim = dlogits.scaled(mult);
    let grad_images = dsim.matmul(texts)?;
    let grad_texts = dsim.transposed_matmul(images)?;
    Ok(LossTerm {
        value,
        grad_images,
        grad_texts,
        grad_logit_scale,
    })
}

/// `(1/N) Σ_j Σ_k (⟨I_j,T_k⟩ − ⟨I_k,T_j⟩)²`.
pub fn cross_modal_cyclic_loss(
    images: &EmbeddingBatch,
    texts: &EmbeddingBatch,
) -> Result<LossTerm> {
    cross_modal_cyclic_loss_matrix(images.vectors(), texts.vectors())
}

pub fn cross_modal_cyclic_loss_matrix(images: &Matrix, texts: &Matrix) -> Result<LossTerm> {
    let n = check_pair(images, texts)?;
    if n == 0 {
        return Err(Error::DegenerateBatch(
            "cross-modal loss needs at least one pair".into(),
        ));
    }
    let sim = similarity_matrix(images, texts)?;
    let inv_n = 1.0 / n as f64;
    let mut gap = Matrix::zeros(n, n);
    let mut value = 0.0;
    for j in 0..n {
        for k in 0..n {
            let g = sim.get(j, k) - sim.get(k, j);
            gap.set(j, k, g);
            value += g * g;
        }
    }
    value *= inv_n;
    // S_jk appears in the (j,k) and (k,j) terms with the same gap sign
    let dsim = gap.scaled(4.0 * inv_n);
    Ok(LossTerm {
        value,
        grad_images: dsim.matmul(texts)?,
        grad_texts: dsim.transposed_matmul(images)?,
        grad_logit_scale: 0.0,
    })
}

/// `(1/N) Σ_j Σ_k (⟨I_j,I_k⟩ − ⟨T_k,T_j⟩)²`.
pub fn in_modal_cyclic_loss(images: &EmbeddingBatch, texts: &EmbeddingBatch) -> Result<LossTerm> {
    in_modal_cyclic_loss_matrix(images.vectors(), texts.vectors())
}

pub fn in_modal_cyclic_loss_matrix(images: &Matrix, texts: &Matrix) -> Result<LossTerm> {
    let n = check_pair(images, texts)?;
    if n == 0 {
        return Err(Error::DegenerateBatch(
            "in-modal loss needs at least one pair".into(),
        ));
    }
    let image_sim = similarity_matrix(images, images)?;
    let text_sim = similarity_matrix(texts, texts)?;
    let inv_n = 1.0 / n as f64;
    let mut diff = Matrix::zeros(n, n);
    let mut value = 0.0;
    for j in 0..n {
        for k in 0..n {
            let d = image_sim.get(j, k) - text_sim.get(k, j);
            diff.set(j, k, d);
            value += d * d;
        }
    }
    value *= inv_n;
    // both Gram matrices are symmetric, so d/dI = (4/N)·D·I and d/dT = −(4/N)·D·T
    let coef = 4.0 * inv_n;
    let grad_images = diff.matmul(images)?.scaled(coef);
    let grad_texts = diff.matmul(texts)?.scaled(-coef);
    Ok(LossTerm {
        value,
        grad_images,
        grad_texts,
        grad_logit_scale: 0.0,
    })
}

pub fn cyclip_loss(
    images: &EmbeddingBatch,
    texts: &EmbeddingBatch,
    scale: LogitScale,
    weights: LossWeights,
) -> Result<LossBreakdown> {
    cyclip_loss_matrix(images.vectors(), texts.vectors(), scale.value(), weights)
}

/// `clip + λ1·in_modal + λ2·cross_modal`.
pub fn cyclip_loss_matrix(
    images: &Matrix,
    texts: &Matrix,
    s: f64,
    weights: LossWeights,
) -> Result<LossBreakdown> {
    let clip = clip_loss_matrix(images, texts, s)?;
    let in_modal = in_modal_cyclic_loss_matrix(images, texts)?;
    let cross = cross_modal_cyclic_loss_matrix(images, texts)?;

    let mut grad_images = clip.grad_images;
    grad_images.add_scaled(&in_modal.grad_images, weights.lambda1)?;
    grad_images.add_scaled(&cross.grad_images, weights.lambda2)?;
    let mut grad_texts = clip.grad_texts;
    grad_texts.add_scaled(&in_modal.grad_texts, weights.lambda1)?;
    grad_texts.add_scaled(&cross.grad_texts, weights.lambda2)?;

    Ok(LossBreakdown {
        clip_loss: clip.value,
        in_modal_loss: in_modal.value,
        cross_modal_loss: cross.value,
        total: clip.value + weights.lambda1 * in_modal.value + weights.lambda2 * cross.value,
        grad_image_embeddings: grad_images,
        grad_text_embeddings: grad_texts,
        grad_logit_scale: clip.grad_logit_scale,
    })
}
