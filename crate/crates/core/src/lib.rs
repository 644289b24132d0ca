//! Execution-time prediction from simulated LLVM IR traces.
//!
//! The pipeline interprets a program's IR under data-cache and
//! branch-predictor models, condenses the run into a fixed 42-component
//! feature vector, and fits regressors against measured execution times.

pub mod branch;
pub mod cache;
pub mod interp;
pub mod ir;
pub mod ml;
pub mod par;
pub mod pipeline;
pub mod trace;
