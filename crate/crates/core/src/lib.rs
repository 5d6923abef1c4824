//! Keypoint-based visual servoing with hypernetwork controllers.
//!
//! The crate simulates a pinhole camera servoing toward a desired pose above a
//! small rigid target, and provides the classical PBVS/IBVS laws, three
//! learned controllers (FCN-NC, AE-NC, HPN-NC) on a small dense-network
//! kernel, DAgger training against the PBVS expert, and a seeded evaluation
//! harness.
//!
//! ```
//! use hpn_servo::controllers::PbvsController;
//! use hpn_servo::eval::{evaluate, EvalOptions};
//! use hpn_servo::sim::EpisodeConfig;
//!
//! let config = EpisodeConfig::default();
//! let (report, _) = evaluate(&PbvsController::default(), &config, &EvalOptions::new(5, 7)).unwrap();
//! assert_eq!(report.sr, 100.0);
//! ```

pub mod camera;
pub mod classic;
pub mod config;
pub mod controllers;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod gradcheck;
pub mod nn;
pub mod sim;
pub mod training;

pub use error::{Result, ServoError};
