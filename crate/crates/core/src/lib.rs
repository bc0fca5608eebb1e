//! Data availability checks with two-dimensional Reed-Solomon coding,
//! fraud proofs for state transitions and encodings, and the sampling
//! probabilities that go with them.

pub mod block;
pub mod erasure;
pub mod fraud;
pub mod merkle;
pub mod prob;
pub mod sim;
pub mod rs2d;
pub mod smt;
pub mod state;
