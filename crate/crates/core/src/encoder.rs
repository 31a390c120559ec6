//! MLP encoders mapping per-modality feature vectors onto the unit hypersphere.
//!
//! Every layer is affine; all but the last are followed by `tanh`. The final
//! output is ℓ2-normalized row by row, and [`MlpEncoder::backward`] carries
//! gradients through that normalization with the Jacobian `(I − eeᵀ)/‖u‖`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::math::{dot, l2_normalize_rows, norm, Matrix, Vector};

/// Tolerance on row norms accepted by [`EmbeddingBatch::new`].
pub const UNIT_NORM_TOL: f64 = 1e-9;

/// N unit-norm embeddings of dimension d, one per row.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBatch {
    vectors: Matrix,
}

impl EmbeddingBatch {
    pub fn new(vectors: Matrix) -> Result<Self> {
        for (row, v) in vectors.row_iter().enumerate() {
            let n = norm(v);
            if (n - 1.0).abs() > UNIT_NORM_TOL {
                return Err(Error::NotUnitNorm { row, norm: n });
            }
        }
        Ok(Self { vectors })
    }

    /// Normalizes every row first.
    pub fn from_unnormalized(mut vectors: Matrix) -> Result<Self> {
        l2_normalize_rows(&mut vectors)?;
        Ok(Self { vectors })
    }

    pub fn count(&self) -> usize {
        self.vectors.rows()
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }

    pub fn vectors(&self) -> &Matrix {
        &self.vectors
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.vectors.row(i)
    }

    pub fn into_matrix(self) -> Matrix {
        self.vectors
    }

    /// Rows selected by `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> EmbeddingBatch {
        let mut data = Vec::with_capacity(indices.len() * self.dim());
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        EmbeddingBatch {
            vectors: Matrix::new(indices.len(), self.dim(), data).expect("rows of a valid batch"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    /// `out × in`.
    pub weight: Matrix,
    pub bias: Vector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpEncoder {
    layer_dims: Vec<usize>,
    layers: Vec<DenseLayer>,
}

/// Activations retained by [`MlpEncoder::encode`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardTape {
    input: Matrix,
    /// Post-`tanh` output of each hidden layer.
    hidden: Vec<Matrix>,
    pre_norm_norms: Vec<f64>,
    output: Matrix,
}

impl ForwardTape {
    pub fn batch_size(&self) -> usize {
        self.input.rows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradients {
    pub weight: Matrix,
    pub bias: Vector,
}

/// Gradients shaped like an [`MlpEncoder`], plus a slot for the logit scale.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGradients {
    pub layers: Vec<LayerGradients>,
    pub logit_scale: f64,
}

impl ParamGradients {
    /// Gradient tensors in the same order as [`MlpEncoder::tensors_mut`].
    pub fn tensors(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.data(), l.bias.as_slice()])
            .collect()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.tensors().concat()
    }
}

pub fn init_encoder(layer_dims: &[usize], seed: u64) -> Result<MlpEncoder> {
    MlpEncoder::new(layer_dims, seed)
}

impl MlpEncoder {
    /// Glorot-uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn new(layer_dims: &[usize], seed: u64) -> Result<Self> {
        if layer_dims.len() < 2 {
            return Err(Error::BadArchitecture(format!(
                "need at least input and output dims, got {layer_dims:?}"
            )));
        }
        if layer_dims.contains(&0) {
            return Err(Error::BadArchitecture(format!(
                "zero width in {layer_dims:?}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = layer_dims
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let data = (0..fan_in * fan_out)
                    .map(|_| rng.random_range(-limit..limit))
                    .collect();
                DenseLayer {
                    weight: Matrix::new(fan_out, fan_in, data).expect("finite init"),
                    bias: Vector::zeros(fan_out),
                }
            })
            .collect();
        Ok(Self {
            layer_dims: layer_dims.to_vec(),
            layers,
        })
    }

    /// Assembles an encoder from explicit layers, checking shape compatibility.
    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Self> {
        let first = layers
            .first()
            .ok_or_else(|| Error::BadArchitecture("no layers".into()))?;
        let mut dims = vec![first.weight.cols()];
        for l in &layers {
            let (out, inp) = l.weight.shape();
            if inp != *dims.last().unwrap() || l.bias.dim() != out || out == 0 || inp == 0 {
                return Err(Error::BadArchitecture(format!(
                    "layer {}x{} with bias {} does not follow width {}",
                    out,
                    inp,
                    l.bias.dim(),
                    dims.last().unwrap()
                )));
            }
            dims.push(out);
        }
        Ok(Self {
            layer_dims: dims,
            layers,
        })
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.data().len() + l.bias.dim())
            .sum()
    }

    /// Parameter tensors in order `w0, b0, w1, b1, …`.
    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weight.data_mut(), l.bias.as_mut_slice()])
            .collect()
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.data(), l.bias.as_slice()])
            .collect()
    }

    /// Whether each tensor of [`Self::tensors`] is a bias (exempt from weight decay).
    pub fn bias_flags(&self) -> Vec<bool> {
        self.layers.iter().flat_map(|_| [false, true]).collect()
    }

    pub fn params_flat(&self) -> Vec<f64> {
        self.tensors().concat()
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::ShapeMismatch(format!(
                "{} values for {} parameters",
                flat.len(),
                self.param_count()
            )));
        }
        let mut offset = 0;
        for t in self.tensors_mut() {
            t.copy_from_slice(&flat[offset..offset + t.len()]);
            offset += t.len();
        }
        Ok(())
    }

    pub fn encode(&self, inputs: &Matrix) -> Result<(EmbeddingBatch, ForwardTape)> {
        if inputs.cols() != self.input_dim() {
            return Err(Error::DimMismatch {
                expected: self.input_dim(),
                got: inputs.cols(),
            });
        }
        let last = self.layers.len() - 1;
        let mut hidden = Vec::with_capacity(last);
        let mut current = inputs.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = current.matmul_transposed(&layer.weight)?;
            for r in 0..z.rows() {
                for (v, b) in z.row_mut(r).iter_mut().zip(layer.bias.as_slice()) {
                    *v += b;
                }
            }
            if i < last {
                z.data_mut().iter_mut().for_each(|v| *v = v.tanh());
                hidden.push(z.clone());
            }
            current = z;
        }
        let norms = l2_normalize_rows(&mut current)?;
        let tape = ForwardTape {
            input: inputs.clone(),
            hidden,
            pre_norm_norms: norms,
            output: current.clone(),
        };
        Ok((EmbeddingBatch { vectors: current }, tape))
    }

    /// Embeds without keeping a tape.
    pub fn embed(&self, inputs: &Matrix) -> Result<EmbeddingBatch> {
        Ok(self.encode(inputs)?.0)
    }

    /// Gradients of a scalar with respect to every parameter, given its
    /// gradient with respect to the normalized embeddings.
    pub fn backward(&self, tape: &ForwardTape, grad_embeddings: &Matrix) -> Result<ParamGradients> {
        let n = tape.batch_size();
        if grad_embeddings.shape() != (n, self.output_dim())
            || tape.output.shape() != (n, self.output_dim())
            || tape.input.cols() != self.input_dim()
            || tape.hidden.len() + 1 != self.layers.len()
            || tape.pre_norm_norms.len() != n
        {
            return Err(Error::TapeMismatch);
        }
        for (h, l) in tape.hidden.iter().zip(&self.layers) {
            if h.shape() != (n, l.weight.rows()) {
                return Err(Error::TapeMismatch);
            }
        }

        // d/du of e = u/‖u‖ is (I − eeᵀ)/‖u‖
        let mut delta = Matrix::zeros(n, self.output_dim());
        for r in 0..n {
            let e = tape.output.row(r);
            let g = grad_embeddings.row(r);
            let radial = dot(g, e);
            let inv = 1.0 / tape.pre_norm_norms[r];
            for ((d, &gi), &ei) in delta.row_mut(r).iter_mut().zip(g).zip(e) {
                *d = (gi - radial * ei) * inv;
            }
        }

        let mut grads = Vec::with_capacity(self.layers.len());
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            let layer_input = if i == 0 {
                &tape.input
            } else {
                &tape.hidden[i - 1]
            };
            let weight = delta.transposed_matmul(layer_input)?;
            let mut bias = vec![0.0; layer.bias.dim()];
            for r in delta.row_iter() {
                for (b, d) in bias.iter_mut().zip(r) {
                    *b += d;
                }
            }
            grads.push(LayerGradients {
                weight,
                bias: Vector::new(bias)?,
            });
            if i > 0 {
                let mut upstream = delta.matmul(&layer.weight)?;
                // tanh' = 1 − tanh²
                for (u, h) in upstream.data_mut().iter_mut().zip(layer_input.data()) {
                    *u *= 1.0 - h * h;
                }
                delta = upstream;
            }
        }
        grads.reverse();
        Ok(ParamGradients {
            layers: grads,
            logit_scale: 0.0,
        })
    }
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)]
mod tests {
    use super::*;
    use crate::math::finite_diff_grad;
    use rand_distr::{Distribution, StandardNormal};

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..rows * cols)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        Matrix::new(rows, cols, data).unwrap()
    }

    #[test]
    fn init_is_deterministic() {
        let a = init_encoder(&[4, 8, 3], 7).unwrap();
        let b = init_encoder(&[4, 8, 3], 7).unwrap();
        let bits = |e: &MlpEncoder| {
            e.params_flat()
                .iter()
                .map(|x| x.to_bits())
                .collect::<Vec<_>>()
        };
        assert_eq!(bits(&a), bits(&b));
        assert_ne!(bits(&a), bits(&init_encoder(&[4, 8, 3], 8).unwrap()));
    }

    #[test]
    fn init_rejects_bad_dims() {
        assert!(matches!(
            init_encoder(&[4], 0),
            Err(Error::BadArchitecture(_))
        ));
        assert!(matches!(
            init_encoder(&[], 0),
            Err(Error::BadArchitecture(_))
        ));
        assert!(matches!(
            init_encoder(&[4, 0, 2], 0),
            Err(Error::BadArchitecture(_))
        ));
    }

    #[test]
    fn init_zero_biases_and_bounded_weights() {
        let e = init_encoder(&[16, 32, 8], 0).unwrap();
        for l in e.layers() {
            assert!(l.bias.as_slice().iter().all(|&b| b == 0.0));
            let (out, inp) = l.weight.shape();
            let limit = (6.0 / (inp + out) as f64).sqrt();
            assert!(l.weight.data().iter().all(|w| w.abs() <= limit));
        }
    }

    #[test]
    fn identity_encoder_passes_unit_inputs() {
        let enc = MlpEncoder::from_layers(vec![DenseLayer {
            weight: Matrix::identity(3),
            bias: Vector::zeros(3),
        }])
        .unwrap();
        let x = EmbeddingBatch::from_unnormalized(random_matrix(5, 3, 1)).unwrap();
        let (out, _) = enc.encode(x.vectors()).unwrap();
        assert!(out.vectors().max_abs_diff(x.vectors()) < 1e-15);
    }

    #[test]
    fn outputs_are_unit_norm() {
        let enc = init_encoder(&[6, 10, 4], 3).unwrap();
        let (out, _) = enc.encode(&random_matrix(9, 6, 2)).unwrap();
        for r in out.vectors().row_iter() {
            assert!((norm(r) - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn forward_matches_straight_line_evaluation() {
        let enc = init_encoder(&[5, 7, 3], 7).unwrap();
        let x = random_matrix(4, 5, 11);
        let (out, _) = enc.encode(&x).unwrap();
        let (w0, b0) = (&enc.layers()[0].weight, enc.layers()[0].bias.as_slice());
        let (w1, b1) = (&enc.layers()[1].weight, enc.layers()[1].bias.as_slice());
        for n in 0..4 {
            let mut h = [0.0; 7];
            for o in 0..7 {
                let mut s = b0[o];
                for i in 0..5 {
                    s += w0.get(o, i) * x.get(n, i);
                }
                h[o] = s.tanh();
            }
            let mut u = [0.0; 3];
            for o in 0..3 {
                let mut s = b1[o];
                for i in 0..7 {
                    s += w1.get(o, i) * h[i];
                }
                u[o] = s;
            }
            let len = (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]).sqrt();
            for o in 0..3 {
                assert!((out.vectors().get(n, o) - u[o] / len).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn encode_dim_mismatch() {
        let enc = init_encoder(&[5, 3], 0).unwrap();
        assert!(matches!(
            enc.encode(&random_matrix(2, 4, 0)),
            Err(Error::DimMismatch { .. })
        ));
    }

    #[test]
    fn encode_zero_output_is_zero_norm() {
        let enc = MlpEncoder::from_layers(vec![DenseLayer {
            weight: Matrix::zeros(2, 3),
            bias: Vector::zeros(2),
        }])
        .unwrap();
        assert!(matches!(
            enc.encode(&random_matrix(1, 3, 0)),
            Err(Error::ZeroNorm { .. })
        ));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let enc = init_encoder(&[4, 6, 3], 1).unwrap();
        let (_, tape) = enc.encode(&random_matrix(5, 4, 1)).unwrap();
        let g = enc.backward(&tape, &Matrix::zeros(5, 3)).unwrap();
        assert!(g.to_flat().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn radial_upstream_is_projected_out() {
        let enc = init_encoder(&[4, 6, 3], 1).unwrap();
        let (out, tape) = enc.encode(&random_matrix(5, 4, 1)).unwrap();
        let g = enc.backward(&tape, &out.vectors().scaled(2.5)).unwrap();
        assert!(g.to_flat().iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn backward_matches_finite_differences() {
        let enc = init_encoder(&[4, 6, 3], 7).unwrap();
        let x = random_matrix(3, 4, 5);
        let (_, tape) = enc.encode(&x).unwrap();
        let mut upstream = Matrix::zeros(3, 3);
        upstream.set(0, 0, 1.0);
        let analytic = enc.backward(&tape, &upstream).unwrap().to_flat();
        let mut probe = enc.clone();
        let numeric = finite_diff_grad(
            |p| {
                probe.set_params_flat(p).unwrap();
                probe.embed(&x).unwrap().vectors().get(0, 0)
            },
            &enc.params_flat(),
            1e-6,
        )
        .unwrap();
        let err = crate::math::relative_error(&analytic, &numeric, 1e-10);
        assert!(err <= 1e-5, "relative error {err}");
    }

    #[test]
    fn backward_rejects_mismatched_tape() {
        let enc = init_encoder(&[4, 6, 3], 1).unwrap();
        let other = init_encoder(&[4, 5, 3], 1).unwrap();
        let (_, tape) = other.encode(&random_matrix(2, 4, 0)).unwrap();
        assert!(matches!(
            enc.backward(&tape, &Matrix::zeros(2, 3)),
            Err(Error::TapeMismatch)
        ));
        let (_, tape) = enc.encode(&random_matrix(2, 4, 0)).unwrap();
        assert!(matches!(
            enc.backward(&tape, &Matrix::zeros(3, 3)),
            Err(Error::TapeMismatch)
        ));
    }

    #[test]
    fn final_layer_rescale_invariance() {
        let enc = init_encoder(&[4, 6, 3], 2).unwrap();
        let x = random_matrix(6, 4, 9);
        let base = enc.embed(&x).unwrap();
        let mut scaled = enc.clone();
        let tensors = scaled.tensors_mut();
        let n = tensors.len();
        for t in tensors.into_iter().skip(n - 2) {
            t.iter_mut().for_each(|v| *v *= 3.7);
        }
        let out = scaled.embed(&x).unwrap();
        assert!(out.vectors().max_abs_diff(base.vectors()) < 1e-9);
    }
}
