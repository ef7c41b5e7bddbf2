//! DICE climate-economy model with direct-transcription optimal control,
//! an interior-point NLP solver, receding-horizon control and social cost
//! of carbon estimation.

pub mod ad;
pub mod dynamics;
pub mod error;
pub mod exogenous;
pub mod nlp;
pub mod mpc;
pub mod params;
pub mod scc;
pub mod transcription;

pub use error::{Error, Result};
pub use params::{load_parameter_set, ParameterSet, Vintage};
