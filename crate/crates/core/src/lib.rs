//! Interactive generalized dynamic Bayesian networks (I-GDBN) for LiDAR
//! blockage prediction.
//!
//! The pipeline runs in two halves:
//!
//! * offline training: frames are cropped and denoised, vehicles are tracked
//!   with a JPDA filter, tracks are turned into generalized states by an
//!   unmotivated Kalman filter, clustered with growing neural gas and summarized
//!   as per-vehicle vocabularies. Blocked tracks additionally produce dummy
//!   models, and all vocabularies are coupled into a word-level [`WordBook`].
//! * online testing: each test track picks its closest model, then an
//!   interactive Markov jump particle filter predicts the next word and flags
//!   frames where the prediction disagrees with the observed word.
//!
//! [`WordBook`]: coupling::WordBook

pub mod config;
pub mod coupling;
pub mod error;
pub mod gng;
pub mod gstate;
pub mod imjpf;
pub mod io;
pub mod pipeline;
pub mod plot;
pub mod scene;
pub mod selection;
pub mod tracking;
pub mod vocabulary;

mod geom;
mod linalg;

pub use error::{Error, Result};

/// 3D vector in meters (or m/s for velocities).
pub type Vec3 = nalgebra::Vector3<f64>;

/// First id handed out to dummy (blockage) models. Normal models reuse track ids below it.
pub const DUMMY_ID_BASE: u32 = 1000;
