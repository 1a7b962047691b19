//! Token-space image restoration with iterative token evaluation and
//! refinement, at toy scale.
//!
//! A degraded input is first mapped to clean-token predictions by a
//! restoration network. A conditioned masked-token diffusion model then
//! iteratively re-samples the grid: a refiner proposes tokens for every cell,
//! an evaluator scores which of them to keep, and the number kept per step
//! follows a mask schedule. The evaluator also picks the start step, so easy
//! inputs need fewer iterations.

pub mod config;
pub mod diffusion;
pub mod error;
pub mod eval;
pub mod imaging;
pub mod losses;
pub mod nets;
pub mod rng;
pub mod sampler;
pub mod schedule;
pub mod token;
pub mod trainer;
pub mod world;

pub use diffusion::{apply_mask, forward_mask, DiffusionState};
pub use config::RunConfig;
pub use error::{Error, Result};
pub use imaging::Image;
pub use nets::{InputMode, Logits, ModelParams, NetConfig, Nets};
pub use sampler::{sample, SampleConfig, SelectionMode, Strategy, Trajectory};
pub use schedule::{ScheduleKind, ScheduleSpec};
pub use token::{Codebook, LatentGrid, Mask, TokenGrid};
pub use trainer::{TrainConfig, Trainer};
pub use world::{World, WorldConfig, WorldStream};
