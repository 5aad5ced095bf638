//! Risk-bounded motion planning for a wall-climbing hexapod.

pub mod error;
pub mod gait;
pub mod gp;
pub mod nlp;
pub mod planner;
pub mod risk;
pub mod robot;
mod scalar;
pub mod terrain;
pub mod validator;

pub use error::{Error, Result};
pub use scalar::Real;

pub type GpModel = gp::GpModel<f64>;
pub type GripState = gp::GripState<f64>;
pub type Hyperparams = gp::Hyperparams<f64>;
pub type RobotModel = robot::RobotModel<f64>;
pub type BodyPose = robot::BodyPose<f64>;
pub type ContactFrame = robot::ContactFrame<f64>;
