//! Per-class density estimation and the density-adaptive regularizer.
//!
//! The density of a class is the mean squared distance of its embeddings to
//! their centroid. The regularizer pulls each class density toward a
//! learnable target `alpha_c`, rewards larger targets, and penalizes target
//! ratios that drift from the ratios of the classes' original (pre-embedding)
//! densities raised to `eta`:
//!
//! ```text
//! L = 1/C sum_c (D_c - a_c)^2 - 1/C sum_c a_c
//!     + w/C^2 sum_{i,j} (W_j a_i - W_i a_j)^2,    W_c = max(d0_c, 1e-6)^eta
//! ```
//!
//! Sums range over the classes that have at least two samples in the batch.

use std::collections::BTreeMap;

use log::warn;

use crate::error::{Error, Result};
use crate::linalg::{sq_dist, Matrix, Vector};

/// Original densities below this are floored before exponentiation.
pub const D0_FLOOR: f64 = 1e-6;

/// How the `1/C` factors are computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ClassNormalization {
    /// `C` is the number of regularized classes in the current batch.
    #[default]
    Batch,
    /// `C` is the total number of training classes.
    Global,
}

impl ClassNormalization {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Batch => "batch",
            Self::Global => "global",
        }
    }
}

impl std::str::FromStr for ClassNormalization {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "batch" => Ok(Self::Batch),
            "global" => Ok(Self::Global),
            other => Err(Error::Config(format!("unknown class normalization {other:?}"))),
        }
    }
}

/// Learnable target densities plus the fixed quantities the regularizer needs.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityState {
    pub alphas: Vec<f64>,
    pub d0: Vec<f64>,
    pub eta: f64,
    pub lambda: f64,
    /// Scales the inter-class correlation penalty; 0 drops the constraint.
    pub penalty_weight: f64,
    pub normalization: ClassNormalization,
}

impl DensityState {
    pub fn new(d0: Vec<f64>, alpha_init: f64, eta: f64, lambda: f64) -> Result<Self> {
        let state = Self {
            alphas: vec![alpha_init; d0.len()],
            d0,
            eta,
            lambda,
            penalty_weight: 1.0,
            normalization: ClassNormalization::Batch,
        };
        state.validate()?;
        for (c, &d) in state.d0.iter().enumerate() {
            if d < D0_FLOOR {
                warn!("class {c} has original density {d:e}; flooring at {D0_FLOOR:e}");
            }
        }
        Ok(state)
    }

    pub fn num_classes(&self) -> usize {
        self.alphas.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.alphas.len() != self.d0.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} alphas for {} classes",
                self.alphas.len(),
                self.d0.len()
            )));
        }
        if self
            .alphas
            .iter()
            .chain(&self.d0)
            .any(|v| !v.is_finite() || *v < 0.0)
        {
            return Err(Error::Config("alphas and d0 must be finite and >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::Config(format!("eta {} outside [0, 1]", self.eta)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda {} must be >= 0", self.lambda)));
        }
        if !(self.penalty_weight >= 0.0 && self.penalty_weight.is_finite()) {
            return Err(Error::Config("penalty weight must be >= 0".into()));
        }
        Ok(())
    }

    /// `max(d0_c, floor)^eta`, the weight class `c` carries in the penalty.
    pub fn correlation_weight(&self, class: usize) -> f64 {
        self.d0[class].max(D0_FLOOR).powf(self.eta)
    }

    /// Clamps every target density to be non-negative.
    pub fn clamp_alphas(&mut self) {
        for a in &mut self.alphas {
            if *a < 0.0 {
                *a = 0.0;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassDensity {
    pub class_id: usize,
    pub centroid: Vector,
    pub d_avg: f64,
    pub count: usize,
}

/// Arithmetic mean of the rows. Not re-normalized.
pub fn class_centroid(rows: &Matrix) -> Result<Vector> {
    if rows.rows() == 0 {
        return Err(Error::EmptyClass);
    }
    // first row plus mean deviation from it: identical rows give it back exactly
    let first = rows.row(0);
    let mut dev = vec![0.0; rows.cols()];
    for r in rows.iter_rows().skip(1) {
        for ((m, v), f) in dev.iter_mut().zip(r).zip(first) {
            *m += v - f;
        }
    }
    let n = rows.rows() as f64;
    Vector::new(first.iter().zip(&dev).map(|(f, d)| f + d / n).collect())
}

/// Mean squared distance of the rows to their centroid.
pub fn avg_intra_distance(class_id: usize, rows: &Matrix) -> Result<ClassDensity> {
    let centroid = class_centroid(rows)?;
    let d_avg = rows
        .iter_rows()
        .map(|r| sq_dist(r, centroid.as_slice()))
        .sum::<f64>()
        / rows.rows() as f64;
    Ok(ClassDensity {
        class_id,
        centroid,
        d_avg,
        count: rows.rows(),
    })
}

/// Groups row indices by label, ordered by label.
pub fn group_by_class(labels: &[usize]) -> BTreeMap<usize, Vec<usize>> {
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        groups.entry(l).or_default().push(i);
    }
    groups
}

/// Original density of every class `0..num_classes`, from raw input features.
pub fn compute_d0(features: &Matrix, labels: &[usize], num_classes: usize) -> Result<Vec<f64>> {
    if features.rows() != labels.len() {
        return Err(Error::LengthMismatch {
            left: features.rows(),
            right: labels.len(),
        });
    }
    let groups = group_by_class(labels);
    (0..num_classes)
        .map(|c| {
            let idx = groups.get(&c).ok_or(Error::EmptyClass)?;
            Ok(avg_intra_distance(c, &features.select_rows(idx))?.d_avg)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegularizerOutput {
    pub value: f64,
    /// Value of the inter-class correlation penalty alone (already weighted).
    pub penalty: f64,
    pub d_embeddings: Matrix,
    /// Gradient per global class id; zero for classes not regularized.
    pub d_alpha: Vec<f64>,
    /// Densities of the regularized classes, ordered by class id.
    pub densities: Vec<ClassDensity>,
}

/// Inter-class correlation penalty `w/C^2 sum_{i,j} (W_j a_i - W_i a_j)^2`
/// over `classes`, with `C = norm_count`.
pub fn correlation_penalty(state: &DensityState, classes: &[usize], norm_count: usize) -> f64 {
    let weights: Vec<f64> = classes.iter().map(|&c| state.correlation_weight(c)).collect();
    let mut sum = 0.0;
    for (a, &ci) in classes.iter().enumerate() {
        for (b, &cj) in classes.iter().enumerate() {
            let r = weights[b] * state.alphas[ci] - weights[a] * state.alphas[cj];
            sum += r * r;
        }
    }
    let c = norm_count as f64;
    state.penalty_weight * sum / (c * c)
}

/// Density-adaptive regularizer on a batch, with gradients for the
/// embeddings and for the target densities.
pub fn density_regularizer(
    embeddings: &Matrix,
    labels: &[usize],
    state: &DensityState,
) -> Result<RegularizerOutput> {
    let (n, dim) = embeddings.shape();
    if labels.len() != n {
        return Err(Error::LengthMismatch { left: n, right: labels.len() });
    }
    let groups = group_by_class(labels);
    if let Some(&bad) = groups.keys().find(|&&c| c >= state.num_classes()) {
        return Err(Error::UnknownClass(bad));
    }
    // Singletons have zero spread by construction and are left out.
    let active: Vec<(usize, &Vec<usize>)> = groups
        .iter()
        .filter(|(_, idx)| idx.len() >= 2)
        .map(|(&c, idx)| (c, idx))
        .collect();
    if active.is_empty() {
        return Err(Error::AllSingletonClasses);
    }
    let norm_count = match state.normalization {
        ClassNormalization::Batch => active.len(),
        ClassNormalization::Global => state.num_classes(),
    };
    let inv_c = 1.0 / norm_count as f64;

    let mut d_embeddings = Matrix::zeros(n, dim);
    let mut d_alpha = vec![0.0; state.num_classes()];
    let mut densities = Vec::with_capacity(active.len());
    let mut fit = 0.0;
    let mut reward = 0.0;
    let mut centered_sum = vec![0.0; dim];

    for &(c, idx) in &active {
        let density = avg_intra_distance(c, &embeddings.select_rows(idx))?;
        let alpha = state.alphas[c];
        let gap = density.d_avg - alpha;
        fit += gap * gap;
        reward += alpha;
        d_alpha[c] = -2.0 * inv_c * gap - inv_c;

        // dD/df_i = 2/n (f_i - mu) - 2/n^2 sum_k (f_k - mu); the second term
        // is the centroid's own dependence on f_i.
        let cnt = idx.len() as f64;
        let outer = 2.0 * inv_c * gap;
        let mu = density.centroid.as_slice();
        centered_sum.iter_mut().for_each(|s| *s = 0.0);
        for &i in idx {
            for ((s, f), m) in centered_sum.iter_mut().zip(embeddings.row(i)).zip(mu) {
                *s += f - m;
            }
        }
        for &i in idx {
            let fi = embeddings.row(i);
            let gi = d_embeddings.row_mut(i);
            for k in 0..dim {
                gi[k] += outer * (2.0 / cnt * (fi[k] - mu[k]) - 2.0 / (cnt * cnt) * centered_sum[k]);
            }
        }
        densities.push(density);
    }

    let classes: Vec<usize> = active.iter().map(|&(c, _)| c).collect();
    let penalty = correlation_penalty(state, &classes, norm_count);
    // d/da_c of sum_{i,j} r_ij^2 = 4 sum_j r_cj W_j, where r_cj = W_j a_c - W_c a_j
    let weights: Vec<f64> = classes.iter().map(|&c| state.correlation_weight(c)).collect();
    let scale = state.penalty_weight * 4.0 * inv_c * inv_c;
    for (a, &ci) in classes.iter().enumerate() {
        let mut acc = 0.0;
        for (b, &cj) in classes.iter().enumerate() {
            let r = weights[b] * state.alphas[ci] - weights[a] * state.alphas[cj];
            acc += r * weights[b];
        }
        d_alpha[ci] += scale * acc;
    }

    Ok(RegularizerOutput {
        value: inv_c * fit - inv_c * reward + penalty,
        penalty,
        d_embeddings,
        d_alpha,
        densities,
    })
}

/// Base loss combined with the weighted regularizer.
#[derive(Debug, Clone, PartialEq)]
pub struct JointGradients {
    pub value: f64,
    pub d_embeddings: Matrix,
    pub d_alpha: Vec<f64>,
}

/// `base + lambda * reg`. With no regularizer the base passes through and
/// `d_alpha` is all zeros of length `num_classes`.
pub fn joint_objective(
    base: &crate::losses::LossGradients,
    reg: Option<&RegularizerOutput>,
    lambda: f64,
    num_classes: usize,
) -> Result<JointGradients> {
    let mut d_embeddings = base.d_embeddings.clone();
    let mut value = base.value;
    let mut d_alpha = vec![0.0; num_classes];
    if let Some(reg) = reg {
        d_embeddings.add_scaled(&reg.d_embeddings, lambda)?;
        if reg.d_alpha.len() != num_classes {
            return Err(Error::ShapeMismatch(format!(
                "{} alpha gradients for {num_classes} classes",
                reg.d_alpha.len()
            )));
        }
        value += lambda * reg.value;
        for (d, g) in d_alpha.iter_mut().zip(&reg.d_alpha) {
            *d = lambda * g;
        }
    }
    Ok(JointGradients { value, d_embeddings, d_alpha })
}
