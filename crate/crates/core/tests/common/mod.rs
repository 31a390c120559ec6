//! Random instance builders and naive scalar-loop oracles shared by the
//! integration targets.
#![allow(dead_code, clippy::needless_range_loop)]

use std::collections::BTreeMap;

use cyclip::encoder::{EmbeddingBatch, MlpEncoder};
use cyclip::math::Matrix;
use cyclip::metrics::{ClassHierarchy, ClassTextEmbeddings};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| rng.sample(StandardNormal))
        .collect();
    Matrix::new(rows, cols, data).unwrap()
}

pub fn unit_batch(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> EmbeddingBatch {
    EmbeddingBatch::from_unnormalized(gaussian_matrix(rng, rows, cols)).unwrap()
}

/// Random encoder with every parameter (biases included) away from zero.
pub fn random_encoder(rng: &mut ChaCha8Rng, dims: &[usize]) -> MlpEncoder {
    let mut enc = MlpEncoder::new(dims, rng.random()).unwrap();
    let flat: Vec<f64> = enc
        .params_flat()
        .iter()
        .map(|p| p + 0.3 * rng.sample::<f64, _>(StandardNormal))
        .collect();
    enc.set_params_flat(&flat).unwrap();
    enc
}

/// Random hierarchy with every superclass owning at least one child.
pub fn random_hierarchy(rng: &mut ChaCha8Rng) -> ClassHierarchy {
    let n_sup = rng.random_range(1..=4);
    let mut parents: Vec<usize> = (0..n_sup).collect();
    for _ in 0..rng.random_range(0..=6) {
        parents.push(rng.random_range(0..n_sup));
    }
    // shuffle so children are not contiguous
    for i in (1..parents.len()).rev() {
        parents.swap(i, rng.random_range(0..=i));
    }
    ClassHierarchy::new(parents, n_sup).unwrap()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += a[i] * b[i];
    }
    s
}

fn rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

pub fn naive_clip(images: &Matrix, texts: &Matrix, s: f64) -> f64 {
    let (im, tx) = (rows(images), rows(texts));
    let n = im.len();
    let scale = s.exp();
    let mut total = 0.0;
    for j in 0..n {
        let mut row_sum = 0.0;
        let mut col_sum = 0.0;
        for k in 0..n {
            row_sum += (scale * dot(&im[j], &tx[k])).exp();
            col_sum += (scale * dot(&im[k], &tx[j])).exp();
        }
        let diag = scale * dot(&im[j], &tx[j]);
        total += (row_sum.ln() - diag) + (col_sum.ln() - diag);
    }
    total / (2.0 * n as f64)
}

pub fn naive_in_modal(images: &Matrix, texts: &Matrix) -> f64 {
    let (im, tx) = (rows(images), rows(texts));
    let n = im.len();
    let mut total = 0.0;
    for j in 0..n {
        for k in 0..n {
            let d = dot(&im[j], &im[k]) - dot(&tx[k], &tx[j]);
            total += d * d;
        }
    }
    total / n as f64
}

pub fn naive_cross_modal(images: &Matrix, texts: &Matrix) -> f64 {
    let (im, tx) = (rows(images), rows(texts));
    let n = im.len();
    let mut total = 0.0;
    for j in 0..n {
        for k in 0..n {
            let d = dot(&im[j], &tx[k]) - dot(&im[k], &tx[j]);
            total += d * d;
        }
    }
    total / n as f64
}

/// First class with the strictly largest similarity.
pub fn naive_argmax(image: &[f64], classes: &ClassTextEmbeddings, candidates: &[usize]) -> usize {
    let mut best = candidates[0];
    let mut best_sim = dot(image, classes.embedding(best));
    for &c in &candidates[1..] {
        let s = dot(image, classes.embedding(c));
        if s > best_sim || (s == best_sim && c < best) {
            best = c;
            best_sim = s;
        }
    }
    best
}

pub fn naive_zero_shot(image: &[f64], classes: &ClassTextEmbeddings) -> usize {
    let all: Vec<usize> = (0..classes.n_classes()).collect();
    naive_argmax(image, classes, &all)
}

/// Majority of the k nearest rows; vote ties go to the label whose best member
/// is most similar, then to the smaller label.
pub fn naive_knn(train: &EmbeddingBatch, labels: &[usize], query: &[f64], k: usize) -> usize {
    let mut order: Vec<usize> = Vec::new();
    for i in 0..train.count() {
        let s = dot(query, train.row(i));
        let mut pos = order.len();
        while pos > 0 && dot(query, train.row(order[pos - 1])) < s {
            pos -= 1;
        }
        order.insert(pos, i);
    }
    let mut votes: BTreeMap<usize, (usize, f64)> = BTreeMap::new();
    for &i in &order[..k] {
        let s = dot(query, train.row(i));
        let e = votes.entry(labels[i]).or_insert((0, f64::NEG_INFINITY));
        e.0 += 1;
        if s > e.1 {
            e.1 = s;
        }
    }
    let mut winner = None;
    for (&label, &(count, best)) in &votes {
        winner = match winner {
            None => Some((label, count, best)),
            Some((_, wc, wb)) if count > wc || (count == wc && best > wb) => {
                Some((label, count, best))
            }
            keep => keep,
        };
    }
    winner.unwrap().0
}

pub fn naive_consistency(
    test: &EmbeddingBatch,
    train: &EmbeddingBatch,
    labels: &[usize],
    classes: &ClassTextEmbeddings,
    k: usize,
) -> f64 {
    let mut agree = 0.0;
    for j in 0..test.count() {
        if naive_knn(train, labels, test.row(j), k) == naive_zero_shot(test.row(j), classes) {
            agree += 1.0;
        }
    }
    agree / test.count() as f64
}

/// A label is in the top k when fewer than k classes outrank it.
pub fn naive_topk(
    images: &EmbeddingBatch,
    labels: &[usize],
    classes: &ClassTextEmbeddings,
    k: usize,
) -> f64 {
    let mut hits = 0.0;
    for j in 0..images.count() {
        let own = dot(images.row(j), classes.embedding(labels[j]));
        let mut ahead = 0;
        for c in 0..classes.n_classes() {
            let s = dot(images.row(j), classes.embedding(c));
            if s > own || (s == own && c < labels[j]) {
                ahead += 1;
            }
        }
        if ahead < k {
            hits += 1.0;
        }
    }
    hits / images.count() as f64
}

pub fn naive_fine(
    images: &EmbeddingBatch,
    labels: &[usize],
    classes: &ClassTextEmbeddings,
    h: &ClassHierarchy,
) -> f64 {
    let mut hits = 0.0;
    for j in 0..images.count() {
        let parent = h.parent_of(labels[j]);
        let siblings: Vec<usize> = (0..h.n_subclasses())
            .filter(|&c| h.parent_of(c) == parent)
            .collect();
        if naive_argmax(images.row(j), classes, &siblings) == labels[j] {
            hits += 1.0;
        }
    }
    hits / images.count() as f64
}

pub fn naive_coarse(
    images: &EmbeddingBatch,
    labels: &[usize],
    classes: &ClassTextEmbeddings,
    h: &ClassHierarchy,
) -> f64 {
    let mut hits = 0.0;
    for j in 0..images.count() {
        if h.parent_of(naive_zero_shot(images.row(j), classes)) == h.parent_of(labels[j]) {
            hits += 1.0;
        }
    }
    hits / images.count() as f64
}

pub fn naive_alignment(images: &EmbeddingBatch, texts: &EmbeddingBatch) -> f64 {
    let mut s = 0.0;
    for j in 0..images.count() {
        s += dot(images.row(j), texts.row(j));
    }
    s / images.count() as f64
}

pub fn naive_uniformity(images: &EmbeddingBatch, texts: &EmbeddingBatch) -> f64 {
    let n = images.count();
    let mut s = 0.0;
    for j in 0..n {
        for k in 0..n {
            if j != k {
                s += (-dot(images.row(j), texts.row(k))).exp();
            }
        }
    }
    (s / (n * (n - 1)) as f64).ln()
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}
