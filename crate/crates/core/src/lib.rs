//! Object-goal navigation over points of interest: occupancy mapping, PoI
//! memory, prompt assembly, decision policies, a grid simulator, verifiable
//! rewards with a GRPO toy trainer, and episode metrics.

pub mod geometry;
pub mod mapping;
pub mod planner;
pub mod poi;
pub mod policy;
pub mod prompting;
pub mod metrics;
pub mod rlvr;
pub mod rng;
pub mod runner;
pub mod simulator;

pub use geometry::{Point2, Pose};
pub use mapping::{Cell, CellState, CostMap, DepthScan, Frustum, GridMap};
pub use planner::{Action, Path};
pub use poi::{Poi, PoiId, PoiKind, PoiState, PoiStore};
pub use policy::{ConfirmResult, Decision, DecisionPolicy, PolicyError};
pub use simulator::{Scene, SceneError, SceneFile};
pub use runner::{collect_dataset, run_batch, run_episode, EpisodeTrace, PolicyKind, RunConfig, RunError, Timing};
