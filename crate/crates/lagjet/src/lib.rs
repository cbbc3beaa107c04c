//! Truncated formal jets for the Moyal–Weyl algebra, the formal Weil
//! representation, Maslov cocycles, cotangent jet bundles and jet-level
//! Lagrangian modules.

pub mod cli;
pub mod error;
pub mod geometry;
pub mod maslov;
pub mod module;
pub mod report;
pub mod series;
pub mod suites;
pub mod weil;
pub mod weyl;

pub use error::{Error, Result};
pub use series::{Series, Space, C64};
