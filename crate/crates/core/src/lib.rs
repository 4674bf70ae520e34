//! Critical point processes of smooth stationary isotropic Gaussian random
//! fields.
//!
//! The crate is organized around the pipeline
//! covariance model -> joint derivative laws -> Kac-Rice moment
//! characteristics -> field simulation -> critical point extraction ->
//! estimators and their asymptotics.

pub mod covmodels;
pub mod critpoints;
pub mod error;
pub mod fieldsim;
pub mod gaussjoint;
pub mod kacrice;
pub mod linalg;
pub mod mc;
pub mod quad;
pub mod special;
pub mod stats;

pub use covmodels::{CovarianceModel, Family, SpectralMoments};
pub use error::{CritError, Result};
pub use gaussjoint::{ConditionalGaussian, GOESample, JointDerivativeGaussian};
pub use critpoints::{ExtractionConfig, PointPattern};
pub use fieldsim::{FieldRealization, SmoothField, Window};
pub use kacrice::{IndexSet, SummaryCurve};
pub use mc::McEstimate;
pub use stats::CltReport;
