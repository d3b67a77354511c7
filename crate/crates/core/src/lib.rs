//! Freehand 3D ultrasound trajectory reconstruction from image sequences and
//! multiple IMU streams: a selective state-space image encoder, adaptive IMU
//! fusion, SE(3) trajectory composition with drift metrics, a synthetic
//! phantom data generator, and a train / adapt / reconstruct / evaluate
//! pipeline — all on a small from-scratch f64 autodiff tape.

pub mod config;
pub mod encoder;
pub mod error;
pub mod fusion;
pub mod imu;
pub mod layers;
pub mod losses;
pub mod model;
pub mod pipeline;
pub mod pose;
pub mod rng;
pub mod ssm;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
