//! Federated incomplete multi-view clustering.
//!
//! Each client holds one view of the data and trains a dual-head graph
//! encoder guided by a fused graph that the server builds from all clients'
//! high-level features. The server fuses features, runs global clustering
//! and hands back pseudo-labels. Missing samples are recovered by borrowing
//! adjacency rows from the fused graph and replacing them with decoder
//! reconstructions.

pub mod assignment;
pub mod cli;
pub mod client;
pub mod data;
pub mod error;
pub mod federation;
pub mod graph;
pub mod metrics;
pub mod server;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Matrix;
