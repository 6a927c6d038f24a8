//! Crowd simulation: ORCA pedestrians, world stepping, collisions and scenarios.

pub mod collision;
pub mod lp;
pub mod orca;
pub mod scenario;
pub mod trajectory;
pub mod world;

pub use collision::{detect_collisions, CollisionReport};
pub use orca::{orca_solve, orca_velocity, preferred_velocity, OrcaParams, OrcaSolution};
pub use scenario::{spawn_scenario, ScenarioFile, SCENARIO_SCHEMA};
pub use world::step_world;
