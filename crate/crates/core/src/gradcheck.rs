//! Central finite-difference checks of every analytic gradient.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::config::{LossKind, TrainConfig};
use crate::density::{density_regularizer, DensityState};
use crate::error::{Error, Result};
use crate::linalg::{l2_normalize, Matrix};
use crate::net::EmbeddingNet;
use crate::train::{base_loss, mine, objective, Mined};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Component {
    Contrastive,
    Triplet,
    Npair,
    Density,
    Network,
    EndToEnd,
}

impl Component {
    pub const ALL: [Component; 6] = [
        Component::Contrastive,
        Component::Triplet,
        Component::Npair,
        Component::Density,
        Component::Network,
        Component::EndToEnd,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Contrastive => "contrastive",
            Self::Triplet => "triplet",
            Self::Npair => "npair",
            Self::Density => "density",
            Self::Network => "network",
            Self::EndToEnd => "end-to-end",
        }
    }
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Component {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown gradcheck component {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    pub seed: u64,
    pub step: f64,
    pub tolerance: f64,
    /// Coordinates with smaller analytic magnitude are not ratio-checked.
    pub floor: f64,
    /// Added to every analytic gradient entry. Only for exercising the
    /// harness itself; keep at 0.
    pub perturb: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            step: 1e-5,
            tolerance: 1e-4,
            floor: 1e-8,
            perturb: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub component: Component,
    pub worst_rel_err: f64,
    pub coords_checked: usize,
    pub passed: bool,
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<12} {} worst_rel_err={:.3e} coords={}",
            self.component,
            if self.passed { "PASS" } else { "FAIL" },
            self.worst_rel_err,
            self.coords_checked
        )
    }
}

/// Central differences `(f(x + h e_i) - f(x - h e_i)) / 2h` for every i.
pub fn finite_difference(mut f: impl FnMut(&[f64]) -> Result<f64>, x: &[f64], step: f64) -> Result<Vec<f64>> {
    let mut probe = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        probe[i] = x[i] + step;
        let plus = f(&probe)?;
        probe[i] = x[i] - step;
        let minus = f(&probe)?;
        probe[i] = x[i];
        out.push((plus - minus) / (2.0 * step));
    }
    Ok(out)
}

/// Worst relative error and number of ratio-checked coordinates.
///
/// Where `|analytic| <= floor` the numeric value must also be tiny
/// (`<= 100 * floor + 1e-6`), otherwise that coordinate counts as error 1.
pub fn compare(analytic: &[f64], numeric: &[f64], floor: f64) -> (f64, usize) {
    let mut worst = 0.0f64;
    let mut checked = 0;
    for (&a, &n) in analytic.iter().zip(numeric) {
        if a.abs() > floor {
            checked += 1;
            worst = worst.max((a - n).abs() / a.abs().max(n.abs()));
        } else if n.abs() > 100.0 * floor + 1e-6 {
            worst = worst.max(1.0);
        }
    }
    (worst, checked)
}

fn report(component: Component, analytic: &[f64], numeric: &[f64], opts: &GradCheckOptions) -> GradCheckReport {
    let perturbed: Vec<f64> = analytic.iter().map(|a| a + opts.perturb).collect();
    let (worst, checked) = compare(&perturbed, numeric, opts.floor);
    GradCheckReport {
        component,
        worst_rel_err: worst,
        coords_checked: checked,
        passed: worst < opts.tolerance && checked > 0,
    }
}

const DIM: usize = 8;
const CLASSES: usize = 4;

fn random_unit_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Matrix {
    let normal = Normal::new(0.0, 1.0).expect("valid");
    let mut data = Vec::with_capacity(n * d);
    for _ in 0..n {
        let row: Vec<f64> = (0..d).map(|_| normal.sample(rng)).collect();
        data.extend(l2_normalize(&row).expect("non-degenerate"));
    }
    Matrix::from_vec(n, d, data).expect("shape")
}

fn balanced_labels(per_class: usize) -> Vec<usize> {
    (0..CLASSES).flat_map(|c| std::iter::repeat_n(c, per_class)).collect()
}

fn random_density_state(rng: &mut ChaCha8Rng, lambda: f64) -> DensityState {
    let d0 = (0..CLASSES).map(|_| rng.random_range(0.2..2.0)).collect();
    let mut st = DensityState::new(d0, 0.5, 0.5, lambda).expect("valid");
    st.alphas = (0..CLASSES).map(|_| rng.random_range(0.1..1.2)).collect();
    st
}

fn loss_check(component: Component, kind: LossKind, opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let emb = random_unit_rows(&mut rng, 12, DIM);
    let labels = balanced_labels(3);
    let cfg = TrainConfig { loss: kind, triplets_per_anchor: 3, ..TrainConfig::default() };
    let mined = mine(&cfg, &labels, &mut rng)?;
    let analytic = base_loss(&emb, &mined, cfg.margin)?.d_embeddings;
    let numeric = finite_difference(
        |x| {
            let m = Matrix::from_vec(emb.rows(), emb.cols(), x.to_vec())?;
            Ok(base_loss(&m, &mined, cfg.margin)?.value)
        },
        emb.as_slice(),
        opts.step,
    )?;
    Ok(report(component, analytic.as_slice(), &numeric, opts))
}

fn density_check(opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let emb = random_unit_rows(&mut rng, 20, DIM);
    let labels = balanced_labels(5);
    let state = random_density_state(&mut rng, 10.0);
    let out = density_regularizer(&emb, &labels, &state)?;

    let numeric_emb = finite_difference(
        |x| {
            let m = Matrix::from_vec(emb.rows(), emb.cols(), x.to_vec())?;
            Ok(density_regularizer(&m, &labels, &state)?.value)
        },
        emb.as_slice(),
        opts.step,
    )?;
    let numeric_alpha = finite_difference(
        |a| {
            let mut st = state.clone();
            st.alphas.copy_from_slice(a);
            Ok(density_regularizer(&emb, &labels, &st)?.value)
        },
        &state.alphas,
        opts.step,
    )?;
    let mut analytic = out.d_embeddings.into_vec();
    analytic.extend(&out.d_alpha);
    let mut numeric = numeric_emb;
    numeric.extend(numeric_alpha);
    Ok(report(Component::Density, &analytic, &numeric, opts))
}

fn flat_params(net: &EmbeddingNet) -> Vec<f64> {
    net.param_slices().concat()
}

fn set_params(net: &mut EmbeddingNet, flat: &[f64]) {
    let mut offset = 0;
    for p in net.param_slices_mut() {
        p.copy_from_slice(&flat[offset..offset + p.len()]);
        offset += p.len();
    }
}

fn small_net(rng: &mut ChaCha8Rng) -> Result<EmbeddingNet> {
    let mut net = EmbeddingNet::new(&[6, 10, DIM], rng)?;
    // non-zero biases so the bias gradients are exercised off the origin
    for layer_bias in net.param_slices_mut().into_iter().skip(1).step_by(2) {
        layer_bias.iter_mut().for_each(|b| *b = rng.random_range(-0.1..0.1));
    }
    Ok(net)
}

fn random_features(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Matrix {
    let normal = Normal::new(0.0, 1.0).expect("valid");
    Matrix::from_vec(n, d, (0..n * d).map(|_| normal.sample(rng)).collect()).expect("shape")
}

fn network_check(opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let net = small_net(&mut rng)?;
    let x = random_features(&mut rng, 12, 6);
    // loss = sum(G * f(x)) for a fixed random G
    let g = random_features(&mut rng, 12, DIM);
    let (_, cache) = net.forward(&x)?;
    let analytic = net.backward(&cache, &g)?.slices().concat();
    let mut probe = net.clone();
    let numeric = finite_difference(
        |p| {
            set_params(&mut probe, p);
            let y = probe.embed(&x)?;
            Ok(y.as_slice().iter().zip(g.as_slice()).map(|(a, b)| a * b).sum())
        },
        &flat_params(&net),
        opts.step,
    )?;
    Ok(report(Component::Network, &analytic, &numeric, opts))
}

/// Whole objective (each loss, lambda = 10) w.r.t. network weights and alphas.
fn end_to_end_check(opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let mut worst = GradCheckReport {
        component: Component::EndToEnd,
        worst_rel_err: 0.0,
        coords_checked: 0,
        passed: true,
    };
    for (i, kind) in LossKind::ALL.into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(i as u64));
        let net = small_net(&mut rng)?;
        let x = random_features(&mut rng, 16, 6);
        let labels = balanced_labels(4);
        let density = random_density_state(&mut rng, 10.0);
        let cfg = TrainConfig { loss: kind, triplets_per_anchor: 3, ..TrainConfig::default() };
        let mined: Mined = mine(&cfg, &labels, &mut rng)?;

        let out = objective(&cfg, &net, &density, &x, &labels, &mined)?;
        let mut analytic = out.net_grads.slices().concat();
        analytic.extend(&out.d_alpha);

        let n_params = net.num_params();
        let mut point = flat_params(&net);
        point.extend(&density.alphas);
        let (mut probe_net, mut probe_density) = (net.clone(), density.clone());
        let numeric = finite_difference(
            |p| {
                set_params(&mut probe_net, &p[..n_params]);
                probe_density.alphas.copy_from_slice(&p[n_params..]);
                Ok(objective(&cfg, &probe_net, &probe_density, &x, &labels, &mined)?.total)
            },
            &point,
            opts.step,
        )?;
        let r = report(Component::EndToEnd, &analytic, &numeric, opts);
        worst.worst_rel_err = worst.worst_rel_err.max(r.worst_rel_err);
        worst.coords_checked += r.coords_checked;
        worst.passed &= r.passed;
    }
    Ok(worst)
}

pub fn check(component: Component, opts: &GradCheckOptions) -> Result<GradCheckReport> {
    match component {
        Component::Contrastive => loss_check(component, LossKind::Contrastive, opts),
        Component::Triplet => loss_check(component, LossKind::Triplet, opts),
        Component::Npair => loss_check(component, LossKind::Npair, opts),
        Component::Density => density_check(opts),
        Component::Network => network_check(opts),
        Component::EndToEnd => end_to_end_check(opts),
    }
}

pub fn check_all(opts: &GradCheckOptions) -> Result<Vec<GradCheckReport>> {
    Component::ALL.into_iter().map(|c| check(c, opts)).collect()
}
