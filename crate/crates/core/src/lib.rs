//! Desk-scale simulator and imitation-learning harness for gentle object
//! retrieval from densely cluttered, side-access shelves.
//!
//! The pipeline: [`scene`] generates randomized shelves, [`sim`] runs planar
//! quasi-static physics, [`sensors`] turns contacts into tactile images, wrench
//! estimates, suction pressure and an egocentric camera image, [`safety`]
//! watches contact impulses, [`expert`] produces scripted demonstrations,
//! [`policy`] trains a small diffusion policy under sensor ablations,
//! [`data`] stores episodes, [`eval`] runs the ablation and its statistics,
//! and [`teleop`] serves the live simulator to a browser demonstrator.

pub mod data;
pub mod eval;
pub mod expert;
pub mod geom;
pub mod policy;
pub mod rollout;
pub mod safety;
pub mod scene;
pub mod sensors;
pub mod sim;
pub mod teleop;

mod error;

pub use error::Error;
