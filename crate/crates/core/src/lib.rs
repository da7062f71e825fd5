//! Deep metric learning with a density-adaptive regularizer.
//!
//! An embedding network maps feature vectors onto the unit hypersphere and
//! is trained with a contrastive, triplet or N-pair loss. The regularizer
//! in [`density`] learns a target spread per class and pushes each class's
//! intra-class variation toward it, while keeping the targets' ratios
//! consistent with how spread out the classes were in the input features.
//! [`eval`] measures the result with Recall@K and k-means NMI.

pub mod adam;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod density;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod linalg;
pub mod losses;
pub mod net;
pub mod sampler;
pub mod train;

pub use adam::{adam_step, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use config::{BaseNormalization, LossKind, TrainConfig};
pub use data::{load_features, save_features, synthesize, Dataset, Split, SynthConfig};
pub use density::{
    avg_intra_distance, class_centroid, compute_d0, density_regularizer, joint_objective, ClassDensity,
    ClassNormalization, DensityState, RegularizerOutput,
};
pub use error::{Error, Result};
pub use eval::{evaluate, kmeans, nmi, recall_at_k, EvalReport};
pub use linalg::{dot, l2_normalize, sq_euclidean, Matrix, Vector};
pub use losses::{contrastive_loss, npair_loss, triplet_loss, LossGradients, PairSet, TripletSet, TupletSet};
pub use net::EmbeddingNet;
pub use sampler::{make_batch, mine_pairs, mine_triplets, mine_tuplets, Batch, BatchPlan};
pub use train::{train, LogRecord, Trainer};
