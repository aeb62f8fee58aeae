//! Exact stochastic simulation of reaction networks with streaming,
//! time-aligned ensemble reduction.
//!
//! The crate is organised bottom-up:
//!
//! - [`expr`]: the arithmetic expression language used for reaction rates
//!   and custom propensities.
//! - [`model`]: immutable reaction-network model (species, parameters,
//!   reactions, propensities).
//! - [`modelfile`]: the line-oriented textual model format.
//! - [`rng`]: deterministic per-trajectory random number streams.
//! - [`engine`]: the Gillespie direct-method simulator producing trajectory
//!   point streams.
//! - [`reduce`]: mergeable moment statistics and the sliding-window aligner
//!   that combines many trajectory streams online.
//! - [`farm`]: emitter/worker/collector execution of whole ensembles with
//!   two-level reduction.

pub mod engine;
pub mod expr;
pub mod farm;
pub mod model;
pub mod modelfile;
pub mod reduce;
pub mod rng;

pub use engine::{
    gillespie_step, run_trajectory, SamplingPolicy, SimError, State, StepOutcome, TrajectoryCursor,
    TrajectoryPoint, TrajectorySummary,
};
pub use expr::Expr;
pub use farm::{run_farm, unroll, EnsembleSpec, FarmError, OutputMode, RunReport, SimulationTask};
pub use model::{ModelError, Parameter, Propensity, RateSpec, Reaction, ReactionNetwork, Species};
pub use modelfile::{parse_model, serialize_model, ModelFileError};
pub use reduce::{
    CombinedPoint, MomentAccumulator, ReduceError, ReducedPoint, SelectiveMemory,
    DEFAULT_STREAM_CAPACITY,
};
pub use rng::RngStream;
