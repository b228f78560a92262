//! LiDAR-to-camera domain translation: spherical range-image projection, a
//! depth- and semantics-aware conditional generator trained with a
//! Wasserstein gradient-penalty critic, and the evaluation metrics used to
//! score its segment and depth outputs.

pub mod autodiff;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod filters;
pub mod image;
pub mod losses;
pub mod metrics;
pub mod network;
pub mod nn;
pub mod optim;
pub mod projection;
pub mod synthdata;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
