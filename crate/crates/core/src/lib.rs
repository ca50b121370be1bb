//! Continual test-time adaptation of a compact point-cloud segmentation network.
//!
//! The crate is organised bottom-up:
//!
//! * [`cloud`] point-cloud containers, XYZL text I/O, grid subsampling,
//!   spherical sub-cloud batching and exact k-nearest-neighbour search.
//! * [`corrupt`] the seven LiDAR corruption generators and benchmark manifests.
//! * [`net`] the per-point network with manual backward pass, SGD with
//!   momentum, checkpoints and the weak/strong augmentation pair.
//! * [`adapt`] the adaptation step (gradient-scored layer selection,
//!   entropy-gated consistency, randomized source interpolation) and the
//!   simple baselines.
//! * [`eval`] confusion matrices, OA and mIoU.
//! * [`harness`] synthetic scenes, pretraining, stream runs, ablations and sweeps.

pub mod adapt;
pub mod cloud;
pub mod corrupt;
mod error;
pub mod eval;
pub mod harness;
pub mod net;
pub mod rng;

pub use error::{Error, Result};
