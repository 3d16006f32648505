pub mod dbscan;
pub mod error;
pub mod evaluation;
pub mod io;
pub mod math;
pub mod model;
pub mod offline;
pub mod online;
pub mod preprocess;
pub mod registry;

pub use error::{GmmError, Result};
pub use math::{Matrix, Vector};
pub use model::{Assignment, GaussianComponent, MixtureModel, OutlierStore};
