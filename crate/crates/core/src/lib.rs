//! Height-parameterized image-to-BEV lifting.
//!
//! - [`geometry`]: pinhole cameras, rigid transforms, the ground-aligned virtual frame.
//! - [`binning`]: height and depth discretization (UD, SID, LID, DID).
//! - [`lifting`]: height and depth projectors, context/distribution fusion, wedge clouds.
//! - [`bevpool`]: sum pooling of wedge clouds into BEV grids.
//! - [`scene`]: synthetic scenes, ray-cast ground truth, noise-model predictions.
//! - [`robustness`]: extrinsic disturbance, scatter overlap, localization error.
//! - [`experiment`]: config-driven commands behind the CLI.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bevpool;
pub mod binning;
pub mod error;
pub mod experiment;
pub mod geometry;
pub mod lifting;
pub mod robustness;
pub mod scene;
pub mod tensor;

pub use error::{Error, Result};
