pub mod error;
pub mod numerics;

pub use error::{Error, Result};
pub mod lattice;
pub mod model;
pub mod vocab;
pub mod metrics;
pub mod corpus;
pub mod decoder;
pub mod optim;
pub mod baseline;
pub mod harness;
