pub mod capacity;
pub mod diagnostics;
pub mod ensemble;
pub mod error;
pub mod export;
pub mod grid;
pub mod linalg;
pub mod models;
pub mod noise;
pub mod scenarios;
pub mod solver;
pub mod stencil;

pub use error::{Error, Result};
pub use grid::{Field, FieldKind, Grid, Norm, SpaceTimeField};
