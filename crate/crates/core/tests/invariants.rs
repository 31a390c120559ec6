//! Property tests for loss, encoder and metric invariants.

mod common;

use common::*;
use cyclip::encoder::{EmbeddingBatch, MlpEncoder};
use cyclip::loss::{
    clip_loss, cross_modal_cyclic_loss, cyclip_loss, in_modal_cyclic_loss, LogitScale, LossWeights,
    LOGIT_SCALE_MAX, LOGIT_SCALE_MIN,
};
use cyclip::math::{l2_normalize, Matrix, Vector};
use cyclip::metrics::{class_text_embedding, zero_shot_predict, ClassTextEmbeddings};
use proptest::prelude::*;

const CASES: u32 = 128;
const TOL: f64 = 1e-10;

/// Seed plus batch shape; the batch itself is drawn from the seed.
fn shape() -> impl Strategy<Value = (u64, usize, usize)> {
    (any::<u64>(), 1usize..10, 1usize..8)
}

fn pair(seed: u64, n: usize, d: usize) -> (EmbeddingBatch, EmbeddingBatch) {
    let mut r = rng(seed);
    (unit_batch(&mut r, n, d), unit_batch(&mut r, n, d))
}

/// Random orthogonal matrix as a product of Householder reflections.
fn orthogonal(seed: u64, d: usize) -> Matrix {
    let mut r = rng(seed ^ 0x5eed);
    let mut q = Matrix::identity(d);
    for _ in 0..d {
        let v = gaussian_matrix(&mut r, 1, d);
        let norm2: f64 = v.data().iter().map(|x| x * x).sum();
        let mut h = Matrix::identity(d);
        for i in 0..d {
            for j in 0..d {
                h.set(i, j, h.get(i, j) - 2.0 * v.get(0, i) * v.get(0, j) / norm2);
            }
        }
        q = q.matmul(&h).unwrap();
    }
    q
}

fn permutation(seed: u64, n: usize) -> Vec<usize> {
    let mut r = rng(seed ^ 0xbeef);
    let mut p: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        p.swap(i, rand::Rng::random_range(&mut r, 0..=i));
    }
    p
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(CASES))]

    #[test]
    fn losses_are_nonnegative((seed, n, d) in shape(), s in 0.0f64..4.6) {
        let (i, t) = pair(seed, n, d);
        prop_assert!(clip_loss(&i, &t, LogitScale::new(s)).unwrap().value >= 0.0);
        prop_assert!(in_modal_cyclic_loss(&i, &t).unwrap().value >= 0.0);
        prop_assert!(cross_modal_cyclic_loss(&i, &t).unwrap().value >= 0.0);
    }

    #[test]
    fn losses_are_symmetric_under_modality_swap((seed, n, d) in shape(), s in 0.0f64..4.6) {
        let (i, t) = pair(seed, n, d);
        let scale = LogitScale::new(s);
        prop_assert!((clip_loss(&i, &t, scale).unwrap().value - clip_loss(&t, &i, scale).unwrap().value).abs() < TOL);
        prop_assert!((in_modal_cyclic_loss(&i, &t).unwrap().value - in_modal_cyclic_loss(&t, &i).unwrap().value).abs() < TOL);
        prop_assert!((cross_modal_cyclic_loss(&i, &t).unwrap().value - cross_modal_cyclic_loss(&t, &i).unwrap().value).abs() < TOL);
    }

    #[test]
    fn losses_are_invariant_to_joint_permutation((seed, n, d) in shape(), s in 0.0f64..4.6) {
        let (i, t) = pair(seed, n, d);
        let p = permutation(seed, n);
        let (pi, pt) = (i.select(&p), t.select(&p));
        let w = LossWeights::CYCLIP;
        let a = cyclip_loss(&i, &t, LogitScale::new(s), w).unwrap();
        let b = cyclip_loss(&pi, &pt, LogitScale::new(s), w).unwrap();
        prop_assert!((a.clip_loss - b.clip_loss).abs() < TOL);
        prop_assert!((a.in_modal_loss - b.in_modal_loss).abs() < TOL);
        prop_assert!((a.cross_modal_loss - b.cross_modal_loss).abs() < TOL);
        // gradients permute with the rows
        for (k, &src) in p.iter().enumerate() {
            for c in 0..d {
                prop_assert!((b.grad_image_embeddings.get(k, c) - a.grad_image_embeddings.get(src, c)).abs() < TOL);
            }
        }
    }

    #[test]
    fn cross_modal_vanishes_for_symmetric_similarity((seed, n, d) in shape()) {
        let (i, _) = pair(seed, n, d);
        // texts identical to images give S = I Iᵀ, which is symmetric
        let term = cross_modal_cyclic_loss(&i, &i).unwrap();
        prop_assert!(term.value.abs() < TOL);
        prop_assert!(term.grad_images.data().iter().all(|g| g.abs() < TOL));
    }

    #[test]
    fn in_modal_vanishes_under_shared_rotation((seed, n, d) in shape()) {
        let (i, _) = pair(seed, n, d);
        let q = orthogonal(seed, d);
        let t = EmbeddingBatch::from_unnormalized(i.vectors().matmul(&q).unwrap()).unwrap();
        let term = in_modal_cyclic_loss(&i, &t).unwrap();
        prop_assert!(term.value.abs() < 1e-9);
        prop_assert!(term.grad_texts.data().iter().all(|g| g.abs() < 1e-9));
    }

    #[test]
    fn logit_scale_is_clamped(s in prop::num::f64::NORMAL | prop::num::f64::ZERO | prop::num::f64::INFINITE) {
        let v = LogitScale::new(s).value();
        prop_assert!((LOGIT_SCALE_MIN..=LOGIT_SCALE_MAX).contains(&v));
        if (LOGIT_SCALE_MIN..=LOGIT_SCALE_MAX).contains(&s) {
            prop_assert_eq!(v, s);
        }
        prop_assert!(LogitScale::new(s).multiplier() <= LOGIT_SCALE_MAX.exp());
    }

    #[test]
    fn zero_shot_argmax_ignores_positive_logit_scaling(
        (seed, n, d) in shape(),
        exponent in -20i32..20,
        s in 0.0f64..4.6,
    ) {
        let (images, class_rows) = pair(seed, n, d);
        let classes = ClassTextEmbeddings::new(class_rows).unwrap();
        let factor = 2f64.powi(exponent);
        for j in 0..images.count() {
            let x = images.row(j);
            let base = zero_shot_predict(x, &classes).unwrap();
            let scaled: Vec<f64> = x.iter().map(|v| v * factor).collect();
            prop_assert_eq!(zero_shot_predict(&scaled, &classes).unwrap(), base);
            // argmax of exp(s)-scaled logits picks the same class
            let m = LogitScale::new(s).multiplier();
            let logits: Vec<f64> = (0..classes.n_classes())
                .map(|c| m * x.iter().zip(classes.embedding(c)).map(|(a, b)| a * b).sum::<f64>())
                .collect();
            let mut arg = 0;
            for c in 1..logits.len() {
                if logits[c] > logits[arg] {
                    arg = c;
                }
            }
            prop_assert_eq!(arg, base);
        }
    }

    #[test]
    fn encoder_outputs_are_unit_norm(seed in any::<u64>(), n in 1usize..8, din in 1usize..6, hidden in 1usize..6, dout in 1usize..6) {
        let mut r = rng(seed);
        let enc = MlpEncoder::new(&[din, hidden, dout], seed).unwrap();
        let x = gaussian_matrix(&mut r, n, din);
        if let Ok(out) = enc.embed(&x) {
            for row in out.vectors().row_iter() {
                let norm: f64 = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                prop_assert!((norm - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn normalization_postconditions((seed, n, d) in shape(), scale in 1e-3f64..1e3) {
        let mut r = rng(seed);
        let m = gaussian_matrix(&mut r, n, d);
        let v = Vector::new(m.row(0).iter().map(|x| x * scale).collect()).unwrap();
        if let Ok(u) = l2_normalize(&v) {
            prop_assert!((u.norm() - 1.0).abs() < 1e-12);
        }
        let b = EmbeddingBatch::from_unnormalized(m).unwrap();
        if let Ok(c) = class_text_embedding(&b) {
            prop_assert!((c.norm() - 1.0).abs() < 1e-12);
        }
    }
}
