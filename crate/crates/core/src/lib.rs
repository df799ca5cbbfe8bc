pub mod analysis;
pub mod corpus;
pub mod embeddings;
pub mod error;
pub mod experiment;
pub mod knn;
pub mod ot;
pub mod synthetic;
pub mod textrep;
pub mod wmd;

pub use error::{Error, Result};
