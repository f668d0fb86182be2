//! Branching diffusions with chemotaxis: the particle model, its hybrid
//! mean-field limits, the Patlak-Keller-Segel system with proliferation, and
//! numerical diagnostics of the limits between them.

pub mod analysis;
pub mod config;
pub mod error;
pub mod field;
pub mod grid;
pub mod lineage;
pub mod macroscopic;
pub mod meanfield;
pub mod measure;
pub mod micro;
pub mod model;
pub mod noise;
pub mod path;
pub mod state;

pub use error::{Error, Result};
pub use lineage::LineageIndex;
pub use state::{Point, PopulationState};
