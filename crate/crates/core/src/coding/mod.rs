//! Channel coding: convolutional and parallel-concatenated (turbo) codes with
//! log-MAP BCJR decoding, plus seeded random interleaving.

mod conv;
mod interleaver;
mod trellis;
mod turbo_code;

pub use conv::{ConvCode, ConvCodeSpec, Puncture};
pub use interleaver::Interleaver;
pub use trellis::{bcjr, BcjrOutput, EndState, Trellis};
pub use turbo_code::{TurboCode, TurboCodeSpec};

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Soft-in/soft-out decoder output.
#[derive(Clone, Debug, PartialEq)]
pub struct SisoOutput {
    /// A-posteriori LLRs of the message bits.
    pub message_app: Vec<f64>,
    /// Extrinsic LLRs of the coded bits (a-posteriori minus channel input).
    pub coded_extrinsic: Vec<f64>,
}

/// Code selection for the turbo receiver.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CodeSpec {
    Convolutional(ConvCodeSpec),
    Turbo(TurboCodeSpec),
}

/// A constructed channel code ready for encoding and decoding.
#[derive(Clone, Debug)]
pub enum ChannelCode {
    Convolutional(ConvCode),
    Turbo(TurboCode),
}

impl ChannelCode {
    pub fn new(spec: &CodeSpec, n_b: usize) -> Result<Self> {
        Ok(match spec {
            CodeSpec::Convolutional(s) => ChannelCode::Convolutional(ConvCode::new(s.clone(), n_b)?),
            CodeSpec::Turbo(s) => ChannelCode::Turbo(TurboCode::new(s.clone(), n_b)?),
        })
    }

    pub fn message_len(&self) -> usize {
        match self {
            ChannelCode::Convolutional(c) => c.message_len(),
            ChannelCode::Turbo(c) => c.message_len(),
        }
    }

    pub fn coded_len(&self) -> usize {
        match self {
            ChannelCode::Convolutional(c) => c.coded_len(),
            ChannelCode::Turbo(c) => c.coded_len(),
        }
    }

    pub fn encode(&self, message: &[u8]) -> Result<Vec<u8>> {
        match self {
            ChannelCode::Convolutional(c) => c.encode(message),
            ChannelCode::Turbo(c) => c.encode(message),
        }
    }

    /// Decodes channel LLRs on the coded bits with no message-bit prior.
    pub fn decode(&self, channel: &[f64]) -> Result<SisoOutput> {
        match self {
            ChannelCode::Convolutional(c) => c.decode(channel, None),
            ChannelCode::Turbo(c) => c.decode(channel),
        }
    }
}
