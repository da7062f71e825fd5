//! The training loop: sample a class-balanced batch, mine index sets,
//! evaluate base loss plus weighted density regularizer, backpropagate, and
//! take one Adam step on the network weights and the target densities.

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::adam::{adam_step, AdamState};
use crate::config::{BaseNormalization, LossKind, TrainConfig};
use crate::data::Dataset;
use crate::density::{compute_d0, density_regularizer, joint_objective, DensityState, RegularizerOutput};
use crate::error::{Error, Result};
use crate::eval::density_report;
use crate::linalg::Matrix;
use crate::losses::{contrastive_loss, npair_loss, triplet_loss, LossGradients, PairSet, TripletSet, TupletSet};
use crate::net::{EmbeddingNet, NetGradients};
use crate::sampler::{make_batch, mine_pairs, mine_triplets, mine_tuplets};

/// Index sets mined from one batch.
#[derive(Debug, Clone, PartialEq)]
pub enum Mined {
    Pairs(PairSet),
    Triplets(TripletSet),
    Tuplets(TupletSet),
}

impl Mined {
    pub fn len(&self) -> usize {
        match self {
            Mined::Pairs(p) => p.len(),
            Mined::Triplets(t) => t.len(),
            Mined::Tuplets(t) => t.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn mine<R: rand::Rng + ?Sized>(cfg: &TrainConfig, labels: &[usize], rng: &mut R) -> Result<Mined> {
    Ok(match cfg.loss {
        LossKind::Contrastive => Mined::Pairs(mine_pairs(labels)),
        LossKind::Triplet => Mined::Triplets(mine_triplets(labels, cfg.triplets_per_anchor, rng)?),
        LossKind::Npair => Mined::Tuplets(mine_tuplets(labels, rng)?),
    })
}

pub fn base_loss(embeddings: &Matrix, mined: &Mined, margin: f64) -> Result<LossGradients> {
    match mined {
        Mined::Pairs(p) => contrastive_loss(embeddings, p, margin),
        Mined::Triplets(t) => triplet_loss(embeddings, t, margin),
        Mined::Tuplets(t) => npair_loss(embeddings, t),
    }
}

/// Objective value and gradients for one batch.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub base: f64,
    pub regularizer: Option<RegularizerOutput>,
    pub total: f64,
    pub net_grads: NetGradients,
    pub d_alpha: Vec<f64>,
    pub embeddings: Matrix,
}

/// Full objective `base + lambda * L_DA` and its gradients for a fixed batch
/// and fixed mined sets. The regularizer is skipped when `lambda == 0`.
pub fn objective(
    cfg: &TrainConfig,
    net: &EmbeddingNet,
    density: &DensityState,
    features: &Matrix,
    labels: &[usize],
    mined: &Mined,
) -> Result<StepOutcome> {
    let (embeddings, cache) = net.forward(features)?;
    let mut base = base_loss(&embeddings, mined, cfg.margin)?;
    let divisor = match cfg.base_normalization {
        BaseNormalization::None => 1,
        BaseNormalization::Units => mined.len(),
        BaseNormalization::Batch => labels.len(),
    };
    if divisor > 1 {
        let inv = 1.0 / divisor as f64;
        base.value *= inv;
        base.d_embeddings.scale(inv);
    }
    let regularizer = if density.lambda > 0.0 {
        Some(density_regularizer(&embeddings, labels, density)?)
    } else {
        None
    };
    let joint = joint_objective(&base, regularizer.as_ref(), density.lambda, density.num_classes())?;
    let net_grads = net.backward(&cache, &joint.d_embeddings)?;
    Ok(StepOutcome {
        base: base.value,
        regularizer,
        total: joint.value,
        net_grads,
        d_alpha: joint.d_alpha,
        embeddings,
    })
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRecord {
    pub iteration: u64,
    pub loss_base: f64,
    pub loss_da: f64,
    pub mean_alpha: f64,
    pub mean_batch_density: f64,
}

impl fmt::Display for LogRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "iteration={} loss_base={:?} loss_da={:?} mean_alpha={:?} mean_batch_density={:?}",
            self.iteration, self.loss_base, self.loss_da, self.mean_alpha, self.mean_batch_density
        )
    }
}

/// Complete mutable training state. Saving and restoring all of it through
/// a checkpoint makes a resumed run identical to an uninterrupted one.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub config: TrainConfig,
    pub net: EmbeddingNet,
    pub density: DensityState,
    pub adam: AdamState,
    pub rng: ChaCha8Rng,
    pub iteration: u64,
}

impl Trainer {
    /// Fresh state: network initialized from `config.seed`, original
    /// densities computed from the raw training features.
    pub fn new(config: TrainConfig, train: &Dataset) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let net = EmbeddingNet::new(&config.layer_dims(train.dim()), &mut rng)?;
        let d0 = compute_d0(train.features(), train.labels(), train.num_classes())?;
        let mut density = DensityState::new(d0, config.alpha_init, config.eta, config.lambda)?;
        density.penalty_weight = config.penalty_weight;
        density.normalization = config.class_normalization;
        let adam = AdamState::for_model(&net, &density, config.learning_rate);
        log::info!(
            "base loss normalization: {} (the regularizer is added as lambda * L_DA on top)",
            config.base_normalization.as_str()
        );
        Ok(Self {
            config,
            net,
            density,
            adam,
            rng,
            iteration: 0,
        })
    }

    pub fn step(&mut self, train: &Dataset) -> Result<LogRecord> {
        let batch = make_batch(train, &self.config.batch_plan(), &mut self.rng)?;
        let mined = mine(&self.config, &batch.labels, &mut self.rng)?;
        let diverged = Error::DivergenceDetected { iteration: self.iteration };
        let out = match objective(&self.config, &self.net, &self.density, &batch.features, &batch.labels, &mined) {
            Err(Error::NonFinite(_)) => return Err(diverged),
            other => other?,
        };
        if !out.total.is_finite() {
            return Err(diverged);
        }

        let (loss_da, mean_batch_density) = match &out.regularizer {
            Some(reg) => (
                reg.value,
                reg.densities.iter().map(|d| d.d_avg).sum::<f64>() / reg.densities.len() as f64,
            ),
            None => {
                let report = density_report(&out.embeddings, &batch.labels)?;
                let mean = if report.is_empty() {
                    0.0
                } else {
                    report.values().sum::<f64>() / report.len() as f64
                };
                (0.0, mean)
            }
        };

        adam_step(
            &mut self.net,
            &mut self.density,
            &out.net_grads,
            &out.d_alpha,
            &mut self.adam,
            self.config.alpha_lr_scale,
        )?;
        self.iteration += 1;
        Ok(LogRecord {
            iteration: self.iteration,
            loss_base: out.base,
            loss_da,
            mean_alpha: self.density.alphas.iter().sum::<f64>() / self.density.num_classes() as f64,
            mean_batch_density,
        })
    }

    /// Trains until `config.iterations`, passing every `log_every`-th record
    /// (and the last one) to `log`.
    pub fn run(&mut self, train: &Dataset, mut log: impl FnMut(&LogRecord)) -> Result<()> {
        let every = self.config.log_every.max(1);
        while self.iteration < self.config.iterations {
            let rec = self.step(train)?;
            if rec.iteration % every == 0 || rec.iteration == self.config.iterations {
                log(&rec);
            }
        }
        Ok(())
    }

    pub fn embed(&self, features: &Matrix) -> Result<Matrix> {
        self.net.embed(features)
    }
}

/// Trains from scratch and returns the final state with its log.
pub fn train(config: TrainConfig, dataset: &Dataset) -> Result<(Trainer, Vec<LogRecord>)> {
    let mut trainer = Trainer::new(config, dataset)?;
    let mut log = Vec::new();
    trainer.run(dataset, |r| log.push(*r))?;
    Ok((trainer, log))
}
