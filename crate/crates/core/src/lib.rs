//! Simulation, shaped reward, SACfD learner and evaluation harness for
//! tethered tensile perching of a quadrotor on a branch.

pub mod config;
pub mod demo;
pub mod descent;
pub mod env;
pub mod error;
pub mod eval;
pub mod learn;
pub mod math;
pub mod nn;
pub mod reward;
pub mod sim;
pub mod traj;

pub use math::Vec3;
