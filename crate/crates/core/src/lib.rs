pub mod calculus;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod estimates;
pub mod fields;
pub mod flow;
pub mod geometry;
mod linalg;
pub mod mesh;
pub mod scenarios;
pub mod suite;

pub use linalg::solve_tridiagonal;
