//! Multi-station RF sensing pipeline for low-altitude UAVs.
//!
//! The crate simulates base stations that transmit LFMCW chirps, synthesizes
//! de-chirped echoes (direct returns, reflector ghosts, rotor micro-Doppler),
//! and runs the per-station measurement chain (range/velocity FFTs, CA-CFAR,
//! MUSIC) followed by micro-Doppler recognition, grid-based log-odds fusion,
//! DBSCAN clustering and MMSE localization. Fisher-information bounds and a
//! Q-learning station selector sit on top of the same pipeline.
//!
//! Module map:
//!
//! - [`scene`]: geometry, propagation paths, path SNR.
//! - [`waveform`]: chirp parameters, IF echo cube and rotor echo synthesis.
//! - [`estimation`]: range/velocity profiles, CA-CFAR, MUSIC.
//! - [`mds`]: STFT, EMD, features, SVM, recognition probability.
//! - [`fusion`]: grid sizing, calibration, log-odds fusion, DBSCAN, MMSE.
//! - [`crlb`]: equivalent Fisher information and its trace bound.
//! - [`select`]: rewards, Q-learning, FCM error states, P3 selection.
//! - [`harness`]: default scenes, Monte Carlo campaigns, aggregation.
//! - [`cli`]: config files and batch subcommands.

pub mod cli;
pub mod crlb;
pub mod error;
pub mod estimation;
pub mod fusion;
pub mod geometry;
pub mod harness;
pub mod io;
pub mod mds;
pub mod rng;
pub mod scene;
pub mod select;
pub mod waveform;

pub use error::{Error, Result};
pub use geometry::Vec2;

/// Speed of light in vacuum (m/s).
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
