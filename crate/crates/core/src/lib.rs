//! Explainable next-POI recommendation with built-in explanations and
//! perturbation audits of those explanations.

pub mod audit;
pub mod autodiff;
pub mod checkpoint;
pub mod compressor;
pub mod error;
pub mod explain;
pub mod geo;
pub mod gradcheck;
pub mod ids;
pub mod ingest;
pub mod params;
pub mod recommender;
pub mod rng;
pub mod stats;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
pub use ids::{PoiId, UserId};
pub use tensor::{Real, Tensor};
