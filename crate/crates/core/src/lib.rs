//! Rate splitting for multicell MIMO broadcast channels assisted by RIS and
//! STAR-RIS under I/Q imbalance, with improper Gaussian signaling.

pub mod channel;
pub mod config;
pub mod error;
pub mod experiment;
pub mod framework;
pub mod linalg;
pub mod rates;
pub mod realdec;
pub mod rispace;
pub mod solver;
pub mod subproblems;
pub mod surrogates;

pub use error::{Error, Result};
