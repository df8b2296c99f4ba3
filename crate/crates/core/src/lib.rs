//! A hierarchical LGN → V1 → V2 → V4 color-opponent model with hue tuning,
//! hue-distance correlation and hue reconstruction experiments.

pub mod cli;
pub mod colorspace;
pub mod error;
pub mod experiments;
pub mod imaging;
pub mod model;
pub mod regression;

pub use error::{Error, Result};
pub use imaging::{Plane, RgbImage};
pub use model::{run_pipeline, Hierarchy, Layer, Model, ModelConfig};
