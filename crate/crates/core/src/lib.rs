#![no_std]

//! Desk-scale laboratory for reliability-aware multi-modal UAV beam prediction.
//!
//! The crate is split along the data path:
//!
//! * [`channel`] generates trajectories, frequency-domain mmWave channels, the
//!   steering codebook and the SNR-optimal beam label.
//! * [`sensors`] renders camera frames, GPS, height/distance and posture
//!   readings, injects controllable degradation and emits quality cues.
//! * [`autodiff`] is the reverse-mode differentiation engine every trainable
//!   component is built on.
//! * [`encoders`], [`fusion`] and [`losses`] make up the model: per-modality
//!   encoders, cross-modal attention, reliability-aware weighting, the beam
//!   head and the contrastive alignment objective.
//! * [`model`] ties the parameters together and [`trainer`] fits and scores them.
//!
//! Everything here is pure computation over `alloc`; file formats and the
//! command-line driver live in the companion `sam2b-lab` crate.

extern crate alloc;

pub mod autodiff;
pub mod channel;
pub mod encoders;
pub mod error;
pub mod fusion;
pub mod losses;
pub mod model;
pub mod nn;
pub mod rng;
pub mod sensors;
pub mod trainer;

pub use error::{Error, Result};
