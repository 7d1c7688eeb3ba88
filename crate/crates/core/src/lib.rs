//! Numerical core for learning a relightable, pose-driven actor in UV space.
//!
//! The crate is `no_std` (it needs `alloc`). Everything here is pure
//! computation over in-memory buffers: a small reverse-mode tensor engine,
//! environment lighting, the articulated proxy body, volumetric density
//! fields, UV-space geometry baking, inpainting networks and the microfacet
//! relighting renderer. File formats, configuration and the command line live
//! in the `uvrelight` companion crate.
//!
//! The `parallel` feature (which implies `std`) lets the heavier kernels fan
//! out over rayon's pool; results are bit-identical either way because every
//! output element is computed by exactly one worker in a fixed order.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod autodiff;
pub mod body;
pub mod camera;
pub mod density;
pub mod envlight;
pub mod error;
pub mod geomaps;
pub mod image;
pub mod inpaint;
pub mod math;
pub mod metrics;
pub mod par;
pub mod relight;
pub mod rng;
pub mod shading;

pub use error::{Error, Result};
