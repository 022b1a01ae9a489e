//! Geometric optimization on Stiefel manifolds and a linear orthogonal
//! autoencoder that separates luminance-related from luminance-unrelated
//! components of exposure differences.

pub mod colorspace;
pub mod error;
pub mod imaging;
pub mod linalg;
pub mod old;
pub mod report;
pub mod stiefel;
pub mod synth;

pub use error::{Error, Result};
pub use imaging::{DifferenceImage, ImageBuffer, Metrics};
pub use linalg::Matrix;
pub use old::{DecoderCost, DifferenceDataset, OldModel, PenaltyModel, PerturbMode};
pub use report::VarianceReport;
pub use stiefel::{DescentTrace, OptimConfig, StepSize, StiefelPoint, TangentVector};
