pub mod container;
pub mod descriptors;
pub mod disksynth;
pub mod embed;
pub mod encode;
pub mod error;
pub mod eval;
pub mod gmm;
pub mod index;
pub mod regressor;
pub mod seed;
pub mod tsne;

pub use error::{Error, Result};
