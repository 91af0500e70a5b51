//! Federated 3D Gaussian splatting at desk scale.
//!
//! The crate is organised around the pieces of a federated reconstruction
//! run:
//!
//! * [`types`]: Gaussians, clouds, poses, cameras and images.
//! * [`render`]: per-pixel differentiable splatting with an appearance-only
//!   backward pass and per-Gaussian visibility reporting.
//! * [`stitch`]: Sim(3) trajectory alignment and SE(3) boundary smoothing.
//! * [`init`]: point-cloud back-projection, KNN scale estimation and Gaussian
//!   initialisation.
//! * [`fed`]: partitioning, local training with frozen positions, the
//!   client-update wire format and visibility-weighted aggregation.
//! * [`metrics`]: PSNR, SSIM and the local/global evaluation protocols.
//! * [`synth`]: synthetic corridor scenes and their on-disk layout.

#![allow(clippy::needless_range_loop)]

pub mod error;
pub mod fed;
pub mod init;
pub mod metrics;
pub mod render;
pub mod stitch;
pub mod synth;
pub mod types;

pub use error::{Error, Result};
pub use types::{Camera, Frame, Gaussian, GaussianCloud, Image, Pose};
