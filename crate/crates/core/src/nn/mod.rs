//! Parametric networks built on the [`crate::autodiff`] tape.
//!
//! Every network keeps its weights in a [`ParamStore`] and exposes a
//! `forward` that takes the store's bound tape variables, so the same code
//! path serves inference, training and gradient checking.

mod embedding;
mod encoder;
mod estimator;
pub mod gradcheck;
mod params;
mod recurrent;

pub use embedding::time_embedding;
pub use encoder::{SequenceEncoder, SequenceEncoderConfig, SetEncoder, SetEncoderConfig};
pub use estimator::{EstimatorConfig, NoiseEstimator};
pub use params::ParamStore;
pub use recurrent::{position_features, SeqLayout};
pub(crate) use recurrent::BiGruSpec;
