//! Feed-forward embedding network with a final L2-normalization layer.

use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::linalg::{dot_unchecked, Matrix, NORM_EPS};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    None,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `out_dim x in_dim`
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Dense {
    pub fn in_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.rows()
    }
}

/// `f(x) = normalize(W_L relu(... relu(W_1 x + b_1) ...) + b_L)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingNet {
    layers: Vec<Dense>,
}

/// Values retained by [`EmbeddingNet::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input to each layer; `inputs[0]` is the batch itself.
    inputs: Vec<Matrix>,
    /// Pre-activation output of each layer.
    pre_activations: Vec<Matrix>,
    /// Norm of each row of the final pre-normalization output.
    norms: Vec<f64>,
    /// The normalized embeddings.
    outputs: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetGradients {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
}

impl NetGradients {
    /// Flat views in the same order as [`EmbeddingNet::param_slices_mut`].
    pub fn slices(&self) -> Vec<&[f64]> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| [w.as_slice(), b.as_slice()])
            .collect()
    }
}

impl EmbeddingNet {
    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("network needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::DimMismatch {
                    expected: pair[0].out_dim(),
                    found: pair[1].in_dim(),
                });
            }
        }
        for l in &layers {
            if l.bias.len() != l.out_dim() {
                return Err(Error::DimMismatch {
                    expected: l.out_dim(),
                    found: l.bias.len(),
                });
            }
        }
        if layers.last().map(|l| l.activation) != Some(Activation::None) {
            return Err(Error::Config("final layer must be linear".into()));
        }
        Ok(Self { layers })
    }

    /// He-initialized network with ReLU on every hidden layer. `dims` lists
    /// the input width, the hidden widths and the embedding size.
    pub fn new<R: rand::Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::Config(format!("invalid layer sizes {dims:?}")));
        }
        let last = dims.len() - 2;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let std = (2.0 / fan_in as f64).sqrt();
                let normal = Normal::new(0.0, std).expect("positive std");
                let data = (0..fan_in * fan_out).map(|_| normal.sample(rng)).collect();
                Dense {
                    weights: Matrix::from_vec(fan_out, fan_in, data).expect("shape"),
                    bias: vec![0.0; fan_out],
                    activation: if i == last { Activation::None } else { Activation::Relu },
                }
            })
            .collect();
        Self::from_layers(layers)
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, Dense::out_dim)
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.as_slice().len() + l.bias.len())
            .sum()
    }

    /// Mutable flat views: `[W_1, b_1, W_2, b_2, ...]`.
    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weights.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }

    pub fn param_slices(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()])
            .collect()
    }

    pub fn forward(&self, batch: &Matrix) -> Result<(Matrix, ForwardCache)> {
        if batch.cols() != self.input_dim() {
            return Err(Error::DimMismatch {
                expected: self.input_dim(),
                found: batch.cols(),
            });
        }
        let n = batch.rows();
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        let mut current = batch.clone();

        for layer in &self.layers {
            let mut z = Matrix::zeros(n, layer.out_dim());
            for r in 0..n {
                let x = current.row(r);
                let zr = z.row_mut(r);
                for (o, zo) in zr.iter_mut().enumerate() {
                    *zo = dot_unchecked(layer.weights.row(o), x) + layer.bias[o];
                }
            }
            let mut a = z.clone();
            if layer.activation == Activation::Relu {
                a.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
            }
            inputs.push(std::mem::replace(&mut current, a));
            pre_activations.push(z);
        }

        let mut norms = Vec::with_capacity(n);
        for r in 0..n {
            let row = current.row_mut(r);
            let norm = crate::linalg::norm(row);
            if !norm.is_finite() {
                return Err(Error::NonFinite("embedding norm"));
            }
            if norm <= NORM_EPS {
                return Err(Error::NormTooSmall { norm });
            }
            row.iter_mut().for_each(|v| *v /= norm);
            norms.push(norm);
        }
        let cache = ForwardCache {
            inputs,
            pre_activations,
            norms,
            outputs: current.clone(),
        };
        Ok((current, cache))
    }

    /// Embeds without keeping a cache.
    pub fn embed(&self, batch: &Matrix) -> Result<Matrix> {
        self.forward(batch).map(|(e, _)| e)
    }

    /// Backpropagates `d_embeddings` (gradient w.r.t. the normalized output)
    /// to every weight and bias.
    pub fn backward(&self, cache: &ForwardCache, d_embeddings: &Matrix) -> Result<NetGradients> {
        if cache.inputs.len() != self.layers.len()
            || cache.outputs.shape() != d_embeddings.shape()
            || cache.outputs.cols() != self.out_dim()
            || cache
                .inputs
                .iter()
                .zip(&self.layers)
                .any(|(x, l)| x.cols() != l.in_dim())
        {
            return Err(Error::CacheMismatch);
        }
        let n = d_embeddings.rows();

        // Through normalization: dy = (g - yhat (yhat . g)) / ||y||
        let mut delta = Matrix::zeros(n, self.out_dim());
        for r in 0..n {
            let g = d_embeddings.row(r);
            let yhat = cache.outputs.row(r);
            let radial = dot_unchecked(yhat, g);
            let inv = 1.0 / cache.norms[r];
            for ((d, gi), yi) in delta.row_mut(r).iter_mut().zip(g).zip(yhat) {
                *d = (gi - yi * radial) * inv;
            }
        }

        let mut weights = Vec::with_capacity(self.layers.len());
        let mut biases = Vec::with_capacity(self.layers.len());
        for (li, layer) in self.layers.iter().enumerate().rev() {
            if layer.activation == Activation::Relu {
                // subgradient 0 at z == 0
                let z = &cache.pre_activations[li];
                for (d, zv) in delta.as_mut_slice().iter_mut().zip(z.as_slice()) {
                    if *zv <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            let x = &cache.inputs[li];
            let mut dw = Matrix::zeros(layer.out_dim(), layer.in_dim());
            let mut db = vec![0.0; layer.out_dim()];
            for r in 0..n {
                let dr = delta.row(r);
                let xr = x.row(r);
                for (o, &dz) in dr.iter().enumerate() {
                    if dz != 0.0 {
                        db[o] += dz;
                        crate::linalg::axpy(dw.row_mut(o), dz, xr);
                    }
                }
            }
            if li > 0 {
                let mut next = Matrix::zeros(n, layer.in_dim());
                for r in 0..n {
                    let dr = delta.row(r);
                    let out = next.row_mut(r);
                    for (o, &dz) in dr.iter().enumerate() {
                        if dz != 0.0 {
                            crate::linalg::axpy(out, dz, layer.weights.row(o));
                        }
                    }
                }
                delta = next;
            }
            weights.push(dw);
            biases.push(db);
        }
        weights.reverse();
        biases.reverse();
        Ok(NetGradients { weights, biases })
    }
}
