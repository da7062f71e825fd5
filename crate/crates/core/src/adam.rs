//! Adam with bias correction, shared by the network weights and the
//! per-class target densities.

use crate::density::DensityState;
use crate::error::{Error, Result};
use crate::net::{EmbeddingNet, NetGradients};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub lr: f64,
    /// First moments, one buffer per parameter tensor.
    pub m: Vec<Vec<f64>>,
    /// Second moments.
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(tensor_sizes: &[usize], lr: f64) -> Self {
        Self {
            t: 0,
            beta1: BETA1,
            beta2: BETA2,
            eps: EPSILON,
            lr,
            m: tensor_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: tensor_sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    /// Buffers for every network tensor followed by one for the alphas.
    pub fn for_model(net: &EmbeddingNet, density: &DensityState, lr: f64) -> Self {
        let mut sizes: Vec<usize> = net.param_slices().iter().map(|s| s.len()).collect();
        sizes.push(density.num_classes());
        Self::new(&sizes, lr)
    }

    pub fn tensor_sizes(&self) -> Vec<usize> {
        self.m.iter().map(Vec::len).collect()
    }

    /// One Adam update over all tensors. `lr_scales[i]` multiplies the
    /// learning rate of tensor `i`.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]], lr_scales: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() || lr_scales.len() != self.m.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} tensors, {} gradients, {} scales for {} moment buffers",
                params.len(),
                grads.len(),
                lr_scales.len(),
                self.m.len()
            )));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.m) {
            if p.len() != m.len() || g.len() != m.len() {
                return Err(Error::ShapeMismatch(format!(
                    "tensor of {} with gradient of {} for buffer of {}",
                    p.len(),
                    g.len(),
                    m.len()
                )));
            }
        }

        self.t += 1;
        let t = self.t as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let lr = self.lr * lr_scales[i];
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for k in 0..p.len() {
                let gk = g[k];
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * gk;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * gk * gk;
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                p[k] -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Updates network weights and target densities together, then clamps the
/// targets at zero.
pub fn adam_step(
    net: &mut EmbeddingNet,
    density: &mut DensityState,
    net_grads: &NetGradients,
    d_alpha: &[f64],
    adam: &mut AdamState,
    alpha_lr_scale: f64,
) -> Result<()> {
    let mut grads = net_grads.slices();
    grads.push(d_alpha);
    let mut params = net.param_slices_mut();
    params.push(density.alphas.as_mut_slice());
    let mut scales = vec![1.0; params.len()];
    *scales.last_mut().expect("alpha tensor") = alpha_lr_scale;
    adam.step(&mut params, &grads, &scales)?;
    density.clamp_alphas();
    Ok(())
}
