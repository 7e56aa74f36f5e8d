pub mod config;
pub mod ctp;
pub mod error;
pub mod formats;
pub mod hashopt;
pub mod linalg;
pub mod losses;
pub mod pipeline;
pub mod profile;
pub mod retrieval;
pub mod rng;
pub mod synth;
pub mod vit;

pub use error::{EetError, Result};
pub use linalg::Matrix;
pub use rng::Rng;
