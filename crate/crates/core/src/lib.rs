pub mod error;
pub mod extractor;
pub mod fsner;
pub mod fixtures;
pub mod io;
pub mod ontology;
pub mod rng;
pub mod session;
pub mod sir;
pub mod superposition;
pub mod synth;

pub use error::{Error, Result};
