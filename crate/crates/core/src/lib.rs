//! Simulation laboratory for MIMO turbo receivers built around expectation
//! propagation (EP) and its graph-neural-network enhancement (GEPNet).
//!
//! The crate is organised bottom-up:
//!
//! * [`numerics`]: dense SPD kernels, seeded substreams, Gauss–Hermite quadrature
//! * [`channel`]: Rayleigh / Kronecker channels, real-valued decomposition, AWGN, pilot LMMSE
//! * [`modem`]: Gray-labelled PAM, PDF ↔ LLR conversion
//! * [`coding`]: convolutional and parallel-concatenated codes, log-MAP BCJR
//! * [`ep`]: the EP detector plus LMMSE and exhaustive MAP baselines
//! * [`gnn`]: pair-wise MRF message passing network with an explicit reverse pass
//! * [`gepnet`]: EP + GNN layers, covariance-driven edge pruning, weight archives
//! * [`training`]: synthetic a-priori LLRs and the APP → labels → EXT training scheme
//! * [`turbo`]: the detector/decoder loop and error-rate accounting
//! * [`complexity`]: real-valued multiplication counts per detector
//! * [`experiment`]: configuration files, sweeps and CSV emission

pub mod channel;
pub mod coding;
pub mod complexity;
pub mod ep;
mod error;
pub mod experiment;
pub mod gepnet;
pub mod gnn;
pub mod modem;
pub mod numerics;
pub mod training;
pub mod turbo;

pub use error::{Error, Result};
