//! Pair-wise MRF graph neural network: node initialisation, edge MLP messages,
//! GRU node updates, softmax readout, an explicit reverse pass and Adam.
//!
//! All learnable tensors live in one flat `f64` buffer ([`GnnParams::data`]);
//! gradients and optimiser moments use the same layout.

mod adam;
mod kernels;
mod net;

pub use adam::Adam;
pub use net::{
    backward, init_state, layer_forward, readout_pdf, replay, EdgeMask, GnnState, GraphInputs, LayerInputs,
    LayerTape,
};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct GnnHyperparams {
    /// Node feature size `N_u`.
    pub n_u: usize,
    /// First hidden width `N_h1` (also the GRU state size).
    pub n_h1: usize,
    /// Second hidden width `N_h2`.
    pub n_h2: usize,
    /// Message-passing rounds `L` per layer.
    pub rounds: usize,
}

impl Default for GnnHyperparams {
    fn default() -> Self {
        Self {
            n_u: 8,
            n_h1: 64,
            n_h2: 32,
            rounds: 2,
        }
    }
}

impl GnnHyperparams {
    pub fn validate(&self) -> Result<()> {
        if self.n_u == 0 || self.n_h1 == 0 || self.n_h2 == 0 || self.rounds == 0 {
            return Err(Error::InvalidConfig("GNN sizes and rounds must be positive".into()));
        }
        Ok(())
    }
}

/// Learnable tensors in storage order. GRU gates are stored update, reset,
/// candidate; each gate has input weights `W`, recurrent weights `U`, bias `b`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(usize)]
pub enum TensorId {
    W1,
    B1,
    MlpW1,
    MlpB1,
    MlpW2,
    MlpB2,
    MlpW3,
    MlpB3,
    GruWz,
    GruUz,
    GruBz,
    GruWr,
    GruUr,
    GruBr,
    GruWn,
    GruUn,
    GruBn,
    W2,
    B2,
    ReadW1,
    ReadB1,
    ReadW2,
    ReadB2,
    ReadW3,
    ReadB3,
}

pub const NUM_TENSORS: usize = 25;

pub const TENSOR_IDS: [TensorId; NUM_TENSORS] = [
    TensorId::W1,
    TensorId::B1,
    TensorId::MlpW1,
    TensorId::MlpB1,
    TensorId::MlpW2,
    TensorId::MlpB2,
    TensorId::MlpW3,
    TensorId::MlpB3,
    TensorId::GruWz,
    TensorId::GruUz,
    TensorId::GruBz,
    TensorId::GruWr,
    TensorId::GruUr,
    TensorId::GruBr,
    TensorId::GruWn,
    TensorId::GruUn,
    TensorId::GruBn,
    TensorId::W2,
    TensorId::B2,
    TensorId::ReadW1,
    TensorId::ReadB1,
    TensorId::ReadW2,
    TensorId::ReadB2,
    TensorId::ReadW3,
    TensorId::ReadB3,
];

impl TensorId {
    pub fn name(self) -> &'static str {
        match self {
            TensorId::W1 => "init.w",
            TensorId::B1 => "init.b",
            TensorId::MlpW1 => "msg.0.w",
            TensorId::MlpB1 => "msg.0.b",
            TensorId::MlpW2 => "msg.1.w",
            TensorId::MlpB2 => "msg.1.b",
            TensorId::MlpW3 => "msg.2.w",
            TensorId::MlpB3 => "msg.2.b",
            TensorId::GruWz => "gru.w_z",
            TensorId::GruUz => "gru.u_z",
            TensorId::GruBz => "gru.b_z",
            TensorId::GruWr => "gru.w_r",
            TensorId::GruUr => "gru.u_r",
            TensorId::GruBr => "gru.b_r",
            TensorId::GruWn => "gru.w_n",
            TensorId::GruUn => "gru.u_n",
            TensorId::GruBn => "gru.b_n",
            TensorId::W2 => "out.w",
            TensorId::B2 => "out.b",
            TensorId::ReadW1 => "readout.0.w",
            TensorId::ReadB1 => "readout.0.b",
            TensorId::ReadW2 => "readout.1.w",
            TensorId::ReadB2 => "readout.1.b",
            TensorId::ReadW3 => "readout.2.w",
            TensorId::ReadB3 => "readout.2.b",
        }
    }

    pub fn is_bias(self) -> bool {
        self.name().ends_with(".b") || self.name().starts_with("gru.b")
    }

    /// Parameter group used when reporting gradients: `init`, `msg`, `gru`, `out`, `readout`.
    pub fn group(self) -> &'static str {
        self.name().split('.').next().unwrap_or("")
    }
}

/// Tensor shapes `(rows, cols)` for given sizes and constellation size `m`.
pub fn tensor_shapes(hp: &GnnHyperparams, m: usize) -> [(usize, usize); NUM_TENSORS] {
    let (u, h1, h2) = (hp.n_u, hp.n_h1, hp.n_h2);
    let d = u + 2;
    [
        (u, 3),
        (u, 1),
        (h1, 2 * u + 2),
        (h1, 1),
        (h2, h1),
        (h2, 1),
        (u, h2),
        (u, 1),
        (h1, d),
        (h1, h1),
        (h1, 1),
        (h1, d),
        (h1, h1),
        (h1, 1),
        (h1, d),
        (h1, h1),
        (h1, 1),
        (u, h1),
        (u, 1),
        (h1, u),
        (h1, 1),
        (h2, h1),
        (h2, 1),
        (m, h2),
        (m, 1),
    ]
}

/// All GNN weights in one flat buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct GnnParams {
    pub hp: GnnHyperparams,
    /// Readout width (constellation size `M`).
    pub m: usize,
    shapes: [(usize, usize); NUM_TENSORS],
    offsets: [usize; NUM_TENSORS + 1],
    pub data: Vec<f64>,
}

impl GnnParams {
    pub fn zeros(hp: GnnHyperparams, m: usize) -> Result<Self> {
        hp.validate()?;
        if m < 2 {
            return Err(Error::InvalidConfig("readout needs at least two classes".into()));
        }
        let shapes = tensor_shapes(&hp, m);
        let mut offsets = [0; NUM_TENSORS + 1];
        for i in 0..NUM_TENSORS {
            offsets[i + 1] = offsets[i] + shapes[i].0 * shapes[i].1;
        }
        Ok(Self {
            hp,
            m,
            shapes,
            offsets,
            data: vec![0.0; offsets[NUM_TENSORS]],
        })
    }

    /// Glorot-normal weights (variance `2/(fan_in + fan_out)`), zero biases.
    pub fn glorot<R: Rng + ?Sized>(hp: GnnHyperparams, m: usize, rng: &mut R) -> Result<Self> {
        let mut p = Self::zeros(hp, m)?;
        for id in TENSOR_IDS {
            if id.is_bias() {
                continue;
            }
            let (r, c) = p.shape(id);
            let normal = Normal::new(0.0, (2.0 / (r + c) as f64).sqrt()).expect("positive std");
            for v in p.tensor_mut(id) {
                *v = normal.sample(rng);
            }
        }
        Ok(p)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn shape(&self, id: TensorId) -> (usize, usize) {
        self.shapes[id as usize]
    }

    pub fn range(&self, id: TensorId) -> std::ops::Range<usize> {
        self.offsets[id as usize]..self.offsets[id as usize + 1]
    }

    pub fn tensor(&self, id: TensorId) -> &[f64] {
        &self.data[self.range(id)]
    }

    pub fn tensor_mut(&mut self, id: TensorId) -> &mut [f64] {
        let r = self.range(id);
        &mut self.data[r]
    }

    /// A zeroed gradient buffer with this layout.
    pub fn zero_grad(&self) -> Vec<f64> {
        vec![0.0; self.data.len()]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn layout_is_contiguous() {
        let p = GnnParams::zeros(GnnHyperparams::default(), 2).unwrap();
        let mut end = 0;
        for id in TENSOR_IDS {
            assert_eq!(p.range(id).start, end);
            end = p.range(id).end;
        }
        assert_eq!(end, p.len());
    }

    #[test]
    fn glorot_biases_zero_and_seeded() {
        let hp = GnnHyperparams::default();
        let a = GnnParams::glorot(hp, 4, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = GnnParams::glorot(hp, 4, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(a, b);
        for id in TENSOR_IDS.into_iter().filter(|i| i.is_bias()) {
            assert!(a.tensor(id).iter().all(|&v| v == 0.0), "{}", id.name());
        }
    }

    #[test]
    fn glorot_variance() {
        // Large tensor: 64x64 gives variance 2/128.
        let hp = GnnHyperparams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut s2 = 0.0;
        let mut n = 0usize;
        while n < 100_000 {
            let p = GnnParams::glorot(hp, 2, &mut rng).unwrap();
            for v in p.tensor(TensorId::GruUz) {
                s2 += v * v;
                n += 1;
            }
        }
        let var = s2 / n as f64;
        assert!((var / (2.0 / 128.0) - 1.0).abs() < 0.03, "{var}");
    }

    #[test]
    fn unit_tensor_variance() {
        // A 1x1 weight has variance 2/(1+1) = 1.
        let hp = GnnHyperparams {
            n_u: 1,
            n_h1: 1,
            n_h2: 1,
            rounds: 1,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let draws: Vec<f64> = (0..100_000)
            .map(|_| GnnParams::glorot(hp, 2, &mut rng).unwrap().tensor(TensorId::MlpW2)[0])
            .collect();
        let var = draws.iter().map(|v| v * v).sum::<f64>() / draws.len() as f64;
        assert!((var - 1.0).abs() < 0.03, "{var}");
    }
}
