pub mod error;
pub mod heightlaw;
pub mod rng;
pub mod serde_ext;
pub mod symbolic;
pub mod theory;
pub mod realization;
pub mod analysis;
pub mod config;
pub mod cli;
