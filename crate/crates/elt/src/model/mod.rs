//! The weight-tied looped transformer: configuration, shared parameters,
//! block composition and analytic accounting.

pub mod accounting;
pub mod block;
pub mod config;
pub mod params;

pub use accounting::{count_flops, count_params, generation_flops, FlopsCount, ParamCount};
pub use block::{BoundParams, ConditioningContext, LoopedModel, LN_EPS};
pub use config::{LoopConfig, MlpKind, Mode};
pub use params::BlockParams;
