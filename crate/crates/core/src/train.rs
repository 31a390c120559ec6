//! Optimization: Adam with decoupled weight decay, linear-warmup cosine
//! schedule, and the training loop over paired image/text views.
//!
//! Weight decay skips biases and the logit scale. The encoders have no
//! normalization layers, so there is nothing else to exempt.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::SyntheticDataset;
use crate::encoder::MlpEncoder;
use crate::error::{Error, Result};
use crate::loss::{
    cyclip_loss, LogitScale, LossWeights, Variant, DEFAULT_INIT_LOGIT_SCALE, LOGIT_SCALE_MAX,
    LOGIT_SCALE_MIN,
};
use crate::math::Matrix;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-8,
            weight_decay: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TensorSpec {
    pub len: usize,
    pub decay_exempt: bool,
    /// Projected into this interval after every update.
    pub bounds: Option<(f64, f64)>,
}

impl TensorSpec {
    pub fn decayed(len: usize) -> Self {
        Self {
            len,
            decay_exempt: false,
            bounds: None,
        }
    }

    pub fn exempt(len: usize) -> Self {
        Self {
            len,
            decay_exempt: true,
            bounds: None,
        }
    }

    pub fn with_bounds(mut self, lo: f64, hi: f64) -> Self {
        self.bounds = Some((lo, hi));
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    specs: Vec<TensorSpec>,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
    step: u64,
}

impl OptimizerState {
    pub fn new(specs: Vec<TensorSpec>) -> Self {
        let zeros = || specs.iter().map(|s| vec![0.0; s.len]).collect::<Vec<_>>();
        Self {
            first_moment: zeros(),
            second_moment: zeros(),
            specs,
            step: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn specs(&self) -> &[TensorSpec] {
        &self.specs
    }
}

/// One bias-corrected Adam update with decoupled decay `p ← p − lr·wd·p`
/// on non-exempt tensors.
pub fn adam_step(
    params: &mut [&mut [f64]],
    grads: &[&[f64]],
    state: &mut OptimizerState,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    if params.len() != state.specs.len() || grads.len() != state.specs.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} parameter tensors, {} gradients, {} optimizer slots",
            params.len(),
            grads.len(),
            state.specs.len()
        )));
    }
    for (i, ((p, g), spec)) in params.iter().zip(grads).zip(&state.specs).enumerate() {
        if p.len() != spec.len || g.len() != spec.len {
            return Err(Error::ShapeMismatch(format!(
                "tensor {i}: {} params, {} grads, expected {}",
                p.len(),
                g.len(),
                spec.len
            )));
        }
    }
    if lr.is_nan() || lr < 0.0 {
        return Err(Error::BadConfig(format!(
            "learning rate must be nonnegative, got {lr}"
        )));
    }

    state.step += 1;
    let t = state.step as i32;
    let bias1 = 1.0 - cfg.beta1.powi(t);
    let bias2 = 1.0 - cfg.beta2.powi(t);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let spec = state.specs[i];
        let m = &mut state.first_moment[i];
        let v = &mut state.second_moment[i];
        let decay = if spec.decay_exempt {
            0.0
        } else {
            lr * cfg.weight_decay
        };
        for j in 0..spec.len {
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
            let m_hat = m[j] / bias1;
            let v_hat = v[j] / bias2;
            let mut x = p[j] - decay * p[j];
            x -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
            if let Some((lo, hi)) = spec.bounds {
                x = x.clamp(lo, hi);
            }
            p[j] = x;
        }
    }
    Ok(())
}

/// Linear warmup over `warmup` steps to `base_lr`, then cosine decay to 0 at `total`.
pub fn lr_at(step: usize, total: usize, warmup: usize, base_lr: f64) -> Result<f64> {
    if step > total {
        return Err(Error::BadStep { step, total });
    }
    if step < warmup {
        return Ok(base_lr * step as f64 / warmup as f64);
    }
    if total == warmup {
        return Ok(0.0);
    }
    let progress = (step - warmup) as f64 / (total - warmup) as f64;
    Ok(base_lr * 0.5 * (1.0 + (PI * progress).cos()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub variant: Variant,
    pub weights: LossWeights,
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    pub warmup_steps: usize,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub init_logit_scale: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::for_variant(Variant::Cyclip)
    }
}

impl TrainConfig {
    pub fn for_variant(variant: Variant) -> Self {
        Self {
            variant,
            weights: variant.weights(),
            epochs: 30,
            batch_size: 64,
            base_lr: 5e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.99,
            adam_eps: 1e-8,
            weight_decay: 0.1,
            warmup_steps: 200,
            hidden_dim: 64,
            embed_dim: 32,
            init_logit_scale: DEFAULT_INIT_LOGIT_SCALE,
            seed: 0,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
            weight_decay: self.weight_decay,
        }
    }

    pub fn validate(&self) -> Result<()> {
        LossWeights::new(self.weights.lambda1, self.weights.lambda2)?;
        let bad = |m: &str| Err(Error::BadConfig(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.hidden_dim == 0 || self.embed_dim == 0 {
            return bad("hidden_dim and embed_dim must be positive");
        }
        if !(self.base_lr >= 0.0 && self.base_lr.is_finite()) {
            return bad("learning_rate must be finite and nonnegative");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("adam betas must lie in [0, 1)");
        }
        if self.adam_eps.is_nan()
            || self.adam_eps <= 0.0
            || self.weight_decay.is_nan()
            || self.weight_decay < 0.0
        {
            return bad("adam_eps must be positive and weight_decay nonnegative");
        }
        if !self.init_logit_scale.is_finite() {
            return bad("init_logit_scale must be finite");
        }
        Ok(())
    }
}

/// Independent seed for a named purpose, derived from the run seed.
fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.next_u64()
}

const IMAGE_INIT_STREAM: u64 = 1;
const TEXT_INIT_STREAM: u64 = 2;
const SHUFFLE_STREAM: u64 = 3;

/// Both encoders and the logit scale.
#[derive(Debug, Clone, PartialEq)]
pub struct DualEncoder {
    pub image_encoder: MlpEncoder,
    pub text_encoder: MlpEncoder,
    pub logit_scale: LogitScale,
}

impl DualEncoder {
    pub fn init(image_dim: usize, text_dim: usize, cfg: &TrainConfig) -> Result<Self> {
        Ok(Self {
            image_encoder: MlpEncoder::new(
                &[image_dim, cfg.hidden_dim, cfg.embed_dim],
                derive_seed(cfg.seed, IMAGE_INIT_STREAM),
            )?,
            text_encoder: MlpEncoder::new(
                &[text_dim, cfg.hidden_dim, cfg.embed_dim],
                derive_seed(cfg.seed, TEXT_INIT_STREAM),
            )?,
            logit_scale: LogitScale::new(cfg.init_logit_scale),
        })
    }

    fn tensor_specs(&self) -> Vec<TensorSpec> {
        let mut specs = Vec::new();
        for enc in [&self.image_encoder, &self.text_encoder] {
            for (t, is_bias) in enc.tensors().iter().zip(enc.bias_flags()) {
                specs.push(if is_bias {
                    TensorSpec::exempt(t.len())
                } else {
                    TensorSpec::decayed(t.len())
                });
            }
        }
        specs.push(TensorSpec::exempt(1).with_bounds(LOGIT_SCALE_MIN, LOGIT_SCALE_MAX));
        specs
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    /// Logit scale used to evaluate this step's loss.
    pub logit_scale: f64,
    pub clip_loss: f64,
    pub in_modal_loss: f64,
    pub cross_modal_loss: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutput {
    pub model: DualEncoder,
    pub log: Vec<StepRecord>,
}

fn gather_rows(m: &Matrix, rows: &[usize]) -> Matrix {
    let mut data = Vec::with_capacity(rows.len() * m.cols());
    for &r in rows {
        data.extend_from_slice(m.row(r));
    }
    Matrix::new(rows.len(), m.cols(), data).expect("rows of a valid matrix")
}

/// Steps per epoch; the trailing partial batch is dropped.
pub fn steps_per_epoch(n_train: usize, batch_size: usize) -> usize {
    n_train / batch_size
}

pub fn train(dataset: &SyntheticDataset, cfg: &TrainConfig) -> Result<TrainOutput> {
    cfg.validate()?;
    let split = &dataset.train;
    if split.is_empty() {
        return Err(Error::EmptySplit("training pairs"));
    }
    if cfg.batch_size > split.len() {
        return Err(Error::BadConfig(format!(
            "batch_size {} exceeds {} training pairs",
            cfg.batch_size,
            split.len()
        )));
    }
    let mut model = DualEncoder::init(split.images.cols(), split.texts.cols(), cfg)?;
    let mut state = OptimizerState::new(model.tensor_specs());
    let adam = cfg.adam();

    let per_epoch = steps_per_epoch(split.len(), cfg.batch_size);
    let total = cfg.epochs * per_epoch;
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, SHUFFLE_STREAM));
    let mut order: Vec<usize> = (0..split.len()).collect();
    let mut log = Vec::with_capacity(total);
    let mut step = 0;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        for batch in order.chunks_exact(cfg.batch_size) {
            let (images, image_tape) = model
                .image_encoder
                .encode(&gather_rows(&split.images, batch))?;
            let (texts, text_tape) = model
                .text_encoder
                .encode(&gather_rows(&split.texts, batch))?;
            let loss = cyclip_loss(&images, &texts, model.logit_scale, cfg.weights)?;
            if !loss.total.is_finite() {
                return Err(Error::NonFiniteLoss { step });
            }
            let image_grads = model
                .image_encoder
                .backward(&image_tape, &loss.grad_image_embeddings)?;
            let text_grads = model
                .text_encoder
                .backward(&text_tape, &loss.grad_text_embeddings)?;
            let lr = lr_at(step + 1, total, cfg.warmup_steps, cfg.base_lr)?;

            log.push(StepRecord {
                step,
                epoch,
                lr,
                logit_scale: model.logit_scale.value(),
                clip_loss: loss.clip_loss,
                in_modal_loss: loss.in_modal_loss,
                cross_modal_loss: loss.cross_modal_loss,
                total: loss.total,
            });

            let mut scale = [model.logit_scale.value()];
            let scale_grad = [loss.grad_logit_scale];
            let mut grads = image_grads.tensors();
            grads.extend(text_grads.tensors());
            grads.push(&scale_grad);
            let mut params = model.image_encoder.tensors_mut();
            params.extend(model.text_encoder.tensors_mut());
            params.push(&mut scale);
            adam_step(&mut params, &grads, &mut state, lr, &adam)?;
            model.logit_scale = LogitScale::new(scale[0]);
            step += 1;
        }
    }
    Ok(TrainOutput { model, log })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_landmarks() {
        let (w, t, lr) = (200, 1000, 5e-4);
        assert_eq!(lr_at(0, t, w, lr).unwrap(), 0.0);
        assert!((lr_at(100, t, w, lr).unwrap() - lr / 2.0).abs() < 1e-18);
        assert_eq!(lr_at(w, t, w, lr).unwrap(), lr);
        assert!(lr_at(t, t, w, lr).unwrap().abs() < 1e-20);
        assert!((lr_at(w + (t - w) / 2, t, w, lr).unwrap() - lr / 2.0).abs() < 1e-18);
        assert!(matches!(lr_at(t + 1, t, w, lr), Err(Error::BadStep { .. })));
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = [1.0];
        let mut state = OptimizerState::new(vec![TensorSpec::exempt(1)]);
        adam_step(
            &mut [&mut p],
            &[&[0.5]],
            &mut state,
            5e-4,
            &AdamConfig::default(),
        )
        .unwrap();
        assert!((p[0] - (1.0 - 5e-4)).abs() < 1e-10);
        assert_eq!(state.step(), 1);
    }

    #[test]
    fn adam_zero_gradient_decay_rules() {
        let cfg = AdamConfig::default();
        let mut exempt = [2.0, -3.0];
        let mut decayed = [2.0, -3.0];
        let mut state = OptimizerState::new(vec![TensorSpec::exempt(2), TensorSpec::decayed(2)]);
        adam_step(
            &mut [&mut exempt, &mut decayed],
            &[&[0.0, 0.0], &[0.0, 0.0]],
            &mut state,
            5e-4,
            &cfg,
        )
        .unwrap();
        assert_eq!(exempt, [2.0, -3.0]);
        let f = 1.0 - 5e-4 * 0.1;
        assert!((decayed[0] - 2.0 * f).abs() < 1e-15);
        assert!((decayed[1] + 3.0 * f).abs() < 1e-15);
    }

    #[test]
    fn adam_bounds_and_shape_checks() {
        let mut s = [4.6];
        let mut state =
            OptimizerState::new(vec![TensorSpec::exempt(1).with_bounds(0.0, LOGIT_SCALE_MAX)]);
        adam_step(
            &mut [&mut s],
            &[&[-10.0]],
            &mut state,
            0.1,
            &AdamConfig::default(),
        )
        .unwrap();
        assert_eq!(s[0], LOGIT_SCALE_MAX);
        let mut two = [0.0, 0.0];
        assert!(matches!(
            adam_step(
                &mut [&mut two],
                &[&[0.0, 0.0]],
                &mut state,
                0.1,
                &AdamConfig::default()
            ),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn derived_seeds_differ_by_stream() {
        assert_ne!(
            derive_seed(1, IMAGE_INIT_STREAM),
            derive_seed(1, TEXT_INIT_STREAM)
        );
        assert_eq!(
            derive_seed(9, SHUFFLE_STREAM),
            derive_seed(9, SHUFFLE_STREAM)
        );
    }
}
