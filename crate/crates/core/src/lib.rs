//! Terrain-context locomotion: qualitative terrain descriptions become
//! one-hot context vectors that a linear ARS policy consumes next to its
//! sensor observation.

pub mod ars;
pub mod embedding;
pub mod env;
pub mod error;
pub mod eval;
pub mod policy;
pub mod rollout;
pub mod session;
pub mod terrain;
pub mod translator;

pub use error::{Error, Result};
