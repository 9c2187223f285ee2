//! Event-fused photometric stereo: calibration geometry, event and RGB
//! observation maps, a small autodiff engine, the normal-estimation network
//! and a synthetic data generator.

pub mod capture;
pub mod diffcore;
pub mod error;
pub mod eventrep;
pub mod geometry;
pub mod imaging;
pub mod io;
pub mod networks;
pub mod obsmap;
pub mod par;
pub mod synthgen;

pub use error::{Error, Result};
