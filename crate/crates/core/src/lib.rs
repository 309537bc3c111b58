//! Hierarchical long-horizon manipulation on a 2D tabletop.
//!
//! A task manager is re-invoked on the current frame and a one-line progress
//! memory, and returns the completed/remaining split of the plan plus a 2D
//! trace of where the gripper should go next. A trace-following executor turns
//! that into velocity and gripper commands for a seeded kinematic simulator.
//! The curator turns episode logs back into manager supervision, and
//! [`metrics`] scores traces and episodes.

pub mod curator;
pub mod executor;
pub mod geometry;
pub mod manager;
pub mod memory;
pub mod metrics;
pub mod model;
pub mod orchestrator;
pub mod render;
pub mod sim;

pub use executor::{act, Executor, ExecutorConfig, PurePursuit};
pub use geometry::{Pixel, PixelProjection, Point2, Workspace};
pub use manager::{build_trace, detect_progress, Instruction, ManagerOutput, ScriptedManager, TaskManager};
pub use memory::{parse_memory, render_memory, MemoryError};
pub use model::{Destination, ObjectId, Observation, Plan, PlanState, Primitive, Trace, Verb};
pub use orchestrator::{run_batch, run_episode, EpisodeConfig, EpisodeLog, Mode, Outcome};
pub use sim::{Action, FailureConfig, GripperCmd, Scene, WorldState};
