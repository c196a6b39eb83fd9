//! Dense numeric building blocks shared by every other module.

pub mod adam;
pub mod gradcheck;
pub mod matrix;
pub mod mlp;
pub mod pca;
pub mod rng;
pub mod train;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{flatten, grad_check, unflatten_into};
pub use matrix::{gemm, sgemm_abt, Matrix, MatrixF32, Trans};
pub use mlp::{Activation, Layer, Mlp, MlpCache, MlpF32, MlpGrads};
pub use pca::{jacobi_eigen, pca_fit, PcaFit};
pub use rng::{derive_seed, splitmix64, Rng64};
pub use train::{epoch_batches, TrainOptions};
