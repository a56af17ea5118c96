//! Reverse-mode autodiff, parameter storage and the spot/action Q network.

pub mod params;
pub mod satop;
pub mod tape;

pub use params::{ParamId, ParamStore, RmsProp, RmsPropConfig};
pub use satop::{argmax, GeometryContext, Sample, SatopConfig, SatopNet, FEATURE_DIM};
pub use tape::{Gradients, Tape, Var};
