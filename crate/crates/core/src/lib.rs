//! Nonrigid structure from motion by robust low-rank factorization.
//!
//! A tracking matrix of `m` frames and `n` points is explained by a rank
//! `3k + 1` product: per-frame cameras mixing `k` shape bases, plus an
//! image offset. [`robust`] fits that product while rejecting gross
//! outliers, [`upgrade`] turns it into rotations, deformation weights and
//! 3D shapes, and [`synth`] / [`eval`] provide the deformable cube
//! benchmark.

pub mod error;
pub mod eval;
pub mod factor;
pub mod linalg;
pub mod model;
pub mod par;
pub mod rng;
pub mod robust;
pub mod synth;
pub mod tracking;
pub mod upgrade;

pub use error::{Error, Result};
pub use factor::{alternating_factor, truncated_factor, Factorization, SolverConfig, WeightMatrix};
pub use model::{AffineCamera, DeformationWeights, EuclideanMotion, ShapeBases};
pub use par::Parallelism;
pub use robust::{
    factor_with, reconstruct_with, robust_factor, robust_reconstruct, Audit, FactorResult, Method, Reconstruction,
    RobustConfig,
};
pub use synth::{corrupt, generate_scene, SceneConfig, SceneGroundTruth};
pub use tracking::{load_tracking, parse_trk, Mask, TrackingMatrix};
pub use upgrade::{recover_upgrade, EuclideanReconstruction, UpgradeConfig, UpgradeMatrix};
