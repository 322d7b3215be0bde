//! Bandwidth-aware map sharing between two robots.
//!
//! A *Seeker* navigates to a goal on a partially known occupancy grid. A
//! *Supporter* flying a fixed route compresses its field of view with one of
//! a finite set of averaging templates and sends the compressed values. The
//! Seeker reconstructs the map by projecting a prior mean onto everything it
//! has measured or received, and replans every step.
//!
//! Modules, bottom-up:
//!
//! - [`grid_world`]: maps, coordinates, windows, map files.
//! - [`planner`]: cell costs and deterministic Dijkstra.
//! - [`abstraction`]: templates, template files, bit cost.
//! - [`constraints`]: the accumulated linear system and its rank reduction.
//! - [`decoder`]: the constrained least-squares reconstruction.
//! - [`encoder`]: path weights and template selection.
//! - [`simulator`]: the closed loop for the FI, AS and U frameworks, metrics.
//! - [`mapgen`]: seeded random maps and scenarios.
//! - [`experiment`]: experiment files, batch runs, CSV output.
//! - [`render`]: PPM frames.

pub mod abstraction;
pub mod constraints;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod experiment;
pub mod grid_world;
pub mod mapgen;
pub mod planner;
pub mod render;
pub mod simulator;
pub mod sparse;

pub use error::{Error, Result};
