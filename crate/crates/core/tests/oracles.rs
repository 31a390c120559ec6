//! Vectorized losses and metrics against the naive loops in `common`.

mod common;

use common::*;
use cyclip::encoder::EmbeddingBatch;
use cyclip::loss::{
    clip_loss, cross_modal_cyclic_loss, cyclip_loss, in_modal_cyclic_loss, LogitScale, LossWeights,
};
use cyclip::math::Matrix;
use cyclip::metrics::{
    alignment, coarse_grained_accuracy, consistency_score, fine_grained_accuracy, knn_predict,
    topk_accuracy, uniformity, zero_shot_predict, ClassTextEmbeddings, HierarchyLabel,
    LabeledEmbeddings,
};
use rand::Rng;

const LOSS_TOL: f64 = 1e-10;
const METRIC_TOL: f64 = 1e-12;
const INSTANCES: u64 = 100;

/// Train rows with deliberate duplicates so neighbour and vote ties occur.
fn train_with_ties(
    rng: &mut rand_chacha::ChaCha8Rng,
    n: usize,
    d: usize,
    n_classes: usize,
) -> (EmbeddingBatch, Vec<usize>) {
    let base = unit_batch(rng, n, d);
    let mut idx: Vec<usize> = (0..n).collect();
    for _ in 0..n / 2 {
        idx.push(rng.random_range(0..n));
    }
    let labels = idx.iter().map(|_| rng.random_range(0..n_classes)).collect();
    (base.select(&idx), labels)
}

#[test]
fn losses_match_naive_loops() {
    for seed in 0..INSTANCES {
        let mut r = rng(seed);
        let n = r.random_range(1..=12);
        let d = r.random_range(1..=10);
        let images = unit_batch(&mut r, n, d);
        let texts = unit_batch(&mut r, n, d);
        let s = r.random_range(0.0..4.6);
        let (im, tx) = (images.vectors(), texts.vectors());

        let clip = clip_loss(&images, &texts, LogitScale::new(s))
            .unwrap()
            .value;
        let inm = in_modal_cyclic_loss(&images, &texts).unwrap().value;
        let cross = cross_modal_cyclic_loss(&images, &texts).unwrap().value;
        assert!(
            (clip - naive_clip(im, tx, s)).abs() <= LOSS_TOL,
            "clip seed {seed}"
        );
        assert!(
            (inm - naive_in_modal(im, tx)).abs() <= LOSS_TOL,
            "in-modal seed {seed}"
        );
        assert!(
            (cross - naive_cross_modal(im, tx)).abs() <= LOSS_TOL,
            "cross-modal seed {seed}"
        );

        let w = LossWeights::new(r.random_range(0.0..1.0), r.random_range(0.0..1.0)).unwrap();
        let total = cyclip_loss(&images, &texts, LogitScale::new(s), w)
            .unwrap()
            .total;
        let expected = naive_clip(im, tx, s)
            + w.lambda1 * naive_in_modal(im, tx)
            + w.lambda2 * naive_cross_modal(im, tx);
        assert!((total - expected).abs() <= LOSS_TOL, "total seed {seed}");
    }
}

#[test]
fn knn_and_consistency_match_naive_loops() {
    for seed in 0..INSTANCES {
        let mut r = rng(1_000 + seed);
        let d = r.random_range(2..=6);
        let n_classes = r.random_range(1..=5);
        let n_train = r.random_range(1..=10);
        let (train, labels) = train_with_ties(&mut r, n_train, d, n_classes);
        let classes = ClassTextEmbeddings::new(unit_batch(&mut r, n_classes, d)).unwrap();
        let n_test = r.random_range(1..=8);
        let test = unit_batch(&mut r, n_test, d);
        let labeled = LabeledEmbeddings::new(train.clone(), labels.clone()).unwrap();
        for k in 1..=train.count() {
            for j in 0..test.count() {
                assert_eq!(
                    knn_predict(&labeled, test.row(j), k).unwrap(),
                    naive_knn(&train, &labels, test.row(j), k),
                    "knn seed {seed} k {k}"
                );
            }
            let got = consistency_score(&test, &labeled, &classes, k).unwrap();
            assert!(
                (got - naive_consistency(&test, &train, &labels, &classes, k)).abs() <= METRIC_TOL
            );
        }
        // a train row queried against itself exercises exact similarity ties
        let q = train.row(0).to_vec();
        assert_eq!(
            knn_predict(&labeled, &q, 1).unwrap(),
            naive_knn(&train, &labels, &q, 1)
        );
    }
}

#[test]
fn zero_shot_metrics_match_naive_loops() {
    for seed in 0..INSTANCES {
        let mut r = rng(2_000 + seed);
        let h = random_hierarchy(&mut r);
        let n_classes = h.n_subclasses();
        let d = r.random_range(2..=6);
        let mut class_rows = unit_batch(&mut r, n_classes, d);
        if n_classes > 1 && r.random_bool(0.3) {
            // duplicate a class embedding to force argmax ties
            let mut idx: Vec<usize> = (0..n_classes).collect();
            idx[n_classes - 1] = 0;
            class_rows = class_rows.select(&idx);
        }
        let classes = ClassTextEmbeddings::new(class_rows).unwrap();
        let n = r.random_range(1..=12);
        let images = unit_batch(&mut r, n, d);
        let labels: Vec<usize> = (0..n).map(|_| r.random_range(0..n_classes)).collect();
        let hl: Vec<HierarchyLabel> = labels
            .iter()
            .map(|&c| HierarchyLabel {
                subclass: c,
                superclass: h.parent_of(c),
            })
            .collect();

        for j in 0..n {
            assert_eq!(
                zero_shot_predict(images.row(j), &classes).unwrap(),
                naive_zero_shot(images.row(j), &classes)
            );
        }
        for k in 1..=n_classes {
            let got = topk_accuracy(&images, &labels, &classes, k).unwrap();
            assert!(
                (got - naive_topk(&images, &labels, &classes, k)).abs() <= METRIC_TOL,
                "top-{k} seed {seed}"
            );
        }
        let fine = fine_grained_accuracy(&images, &hl, &classes, &h).unwrap();
        let coarse = coarse_grained_accuracy(&images, &hl, &classes, &h).unwrap();
        assert!(
            (fine - naive_fine(&images, &labels, &classes, &h)).abs() <= METRIC_TOL,
            "fine seed {seed}"
        );
        assert!(
            (coarse - naive_coarse(&images, &labels, &classes, &h)).abs() <= METRIC_TOL,
            "coarse seed {seed}"
        );
    }
}

#[test]
fn geometry_matches_naive_loops() {
    for seed in 0..INSTANCES {
        let mut r = rng(3_000 + seed);
        let n = r.random_range(2..=16);
        let d = r.random_range(1..=8);
        let images = unit_batch(&mut r, n, d);
        let texts = unit_batch(&mut r, n, d);
        assert!(
            (alignment(&images, &texts).unwrap() - naive_alignment(&images, &texts)).abs()
                <= METRIC_TOL
        );
        assert!(
            (uniformity(&images, &texts).unwrap() - naive_uniformity(&images, &texts)).abs()
                <= METRIC_TOL
        );
    }
}

#[test]
fn matrix_level_losses_accept_unnormalized_rows() {
    let mut r = rng(9);
    let a = gaussian_matrix(&mut r, 5, 3);
    let b = gaussian_matrix(&mut r, 5, 3);
    let got = cyclip::loss::cross_modal_cyclic_loss_matrix(&a, &b)
        .unwrap()
        .value;
    assert!((got - naive_cross_modal(&a, &b)).abs() <= LOSS_TOL);
    let z = Matrix::zeros(5, 3);
    assert_eq!(
        cyclip::loss::in_modal_cyclic_loss_matrix(&z, &z)
            .unwrap()
            .value,
        0.0
    );
}
