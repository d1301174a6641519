//! The three-step training scheme: synthetic a-priori LLRs, APP training with
//! a symbol cross-entropy, masked extrinsic label generation, and EXT training
//! with a soft-bit cross-entropy.

mod dataset;
mod fit;

pub use dataset::{generate_dataset, generate_ext_labels, read_dataset, write_dataset, TrainingSample, DATASET_MAGIC, DATASET_VERSION};
pub use fit::{sample_gradient, train, train_step1, train_step3, validation_loss, EpochStats, LossKind, TrainOutcome};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::channel::ChannelModelSpec;
use crate::error::{Error, Result};
use crate::modem::{log_sum_exp, softplus, Constellation, Modulation};
use crate::numerics::gauss_hermite_expect;

/// Mutual-information levels a training vector's prior is drawn at.
pub const IA_SET: [f64; 8] = [0.0, 0.33, 0.67, 0.78, 0.89, 0.94, 0.99, 1.0];

/// `μ_A` used for `I_A = 1`.
pub const MU_CAP: f64 = 100.0;

const LUT_NODES: usize = 128;

/// `J_A(μ) = 1 − E[log₂(1 + e^{−L})]` with `L ~ N(μ, 2μ)`.
pub fn j_function(mu: f64, nodes: usize) -> Result<f64> {
    if mu <= 0.0 {
        return Ok(0.0);
    }
    let e = gauss_hermite_expect(|l| softplus(-l) / std::f64::consts::LN_2, mu, 2.0 * mu, nodes)?;
    Ok(1.0 - e)
}

/// `I_A → μ_A` for the members of [`IA_SET`], no interpolation.
#[derive(Clone, Debug, PartialEq)]
pub struct IaLut {
    entries: Vec<(f64, f64)>,
}

impl IaLut {
    /// Inverts `J_A` by bisection on `[0, MU_CAP]`.
    pub fn build(nodes: usize) -> Result<Self> {
        let mut entries = Vec::with_capacity(IA_SET.len());
        for &ia in &IA_SET {
            let mu = if ia == 0.0 {
                0.0
            } else if ia == 1.0 {
                MU_CAP
            } else {
                let (mut lo, mut hi) = (0.0f64, MU_CAP);
                if j_function(hi, nodes)? < ia {
                    return Err(Error::NumericalDomain(format!("J_A({MU_CAP}) is below {ia}")));
                }
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if j_function(mid, nodes)? < ia {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                    if hi - lo < 1e-12 {
                        break;
                    }
                }
                if hi - lo > 1e-9 {
                    return Err(Error::NumericalDomain(format!("bisection for I_A = {ia} did not converge")));
                }
                0.5 * (lo + hi)
            };
            entries.push((ia, mu));
        }
        Ok(Self { entries })
    }

    pub fn standard() -> Self {
        Self::build(LUT_NODES).expect("fixed set inverts")
    }

    pub fn entries(&self) -> &[(f64, f64)] {
        &self.entries
    }

    /// `μ_A` for an exact member of the set.
    pub fn mu(&self, ia: f64) -> Result<f64> {
        self.entries
            .iter()
            .find(|(i, _)| *i == ia)
            .map(|&(_, m)| m)
            .ok_or_else(|| Error::InvalidConfig(format!("I_A = {ia} is not in the lookup set")))
    }
}

/// Gaussian a-priori LLRs `L ~ N((2c − 1)μ_A, 2μ_A)` for the given bits.
pub fn sample_prior_llrs<R: Rng + ?Sized>(bits: &[u8], mu_a: f64, rng: &mut R) -> Vec<f64> {
    if mu_a <= 0.0 {
        return vec![0.0; bits.len()];
    }
    let std = (2.0 * mu_a).sqrt();
    bits.iter()
        .map(|&b| {
            let n: f64 = StandardNormal.sample(rng);
            (2.0 * f64::from(b) - 1.0) * mu_a + std * n
        })
        .collect()
}

/// `−Σ_k log p̂_k(x_k)` for one sample, from log-weights (`K × M`).
/// Returns the loss and writes `p̂ − onehot` into `dlogits`.
pub fn loss_app(logw: &[f64], labels: &[usize], m: usize, dlogits: &mut [f64]) -> f64 {
    let mut loss = 0.0;
    for (k, (w, &x)) in logw.chunks(m).zip(labels).enumerate() {
        let lse = log_sum_exp(w);
        loss += lse - w[x];
        for (j, &v) in w.iter().enumerate() {
            dlogits[k * m + j] = (v - lse).exp() - if j == x { 1.0 } else { 0.0 };
        }
    }
    loss
}

/// Binary cross-entropy between soft bits `σ(label)` and `σ(model)`.
pub fn soft_bit_ce(model: f64, label: f64) -> f64 {
    let s = sigmoid(label);
    s * softplus(-model) + (1.0 - s) * softplus(model)
}

/// Binary entropy (nats) of `σ(l)`: the floor of [`soft_bit_ce`] against label `l`.
pub fn soft_bit_entropy(l: f64) -> f64 {
    soft_bit_ce(l, l)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Soft-bit loss on the LLRs demapped (unclipped) from GNN logits `z` (`K × M`).
/// Returns the loss and writes its gradient with respect to `z` into `dlogits`.
pub fn loss_ext(logits: &[f64], labels: &[f64], c: &Constellation, dlogits: &mut [f64]) -> f64 {
    let m = c.size();
    let q = c.bits_per_symbol();
    dlogits.iter_mut().for_each(|v| *v = 0.0);
    let mut loss = 0.0;
    let mut one = Vec::with_capacity(m);
    let mut zero = Vec::with_capacity(m);
    for (k, z) in logits.chunks(m).enumerate() {
        for i in 0..q {
            one.clear();
            zero.clear();
            for (j, &v) in z.iter().enumerate() {
                if c.bit(j, i) == 1 {
                    one.push(v);
                } else {
                    zero.push(v);
                }
            }
            let (l1, l0) = (log_sum_exp(&one), log_sum_exp(&zero));
            let l = l1 - l0;
            let label = labels[k * q + i];
            loss += soft_bit_ce(l, label);
            let dl = sigmoid(l) - sigmoid(label);
            for (j, &v) in z.iter().enumerate() {
                dlogits[k * m + j] += if c.bit(j, i) == 1 {
                    dl * (v - l1).exp()
                } else {
                    -dl * (v - l0).exp()
                };
            }
        }
    }
    loss
}

/// How a pruned model is trained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PruneTraining {
    /// Train with the same pruning factor as inference.
    Matched,
    /// Train fully connected and prune only at inference.
    PostHoc,
}

/// Dataset and optimizer settings for one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingSpec {
    pub modulation: Modulation,
    pub channel: ChannelModelSpec,
    pub snr_train_db: f64,
    /// Optional half-width of a uniform SNR jitter around `snr_train_db`.
    pub snr_jitter_db: Option<f64>,
    /// `I_A` values priors are drawn at; each must belong to [`IA_SET`].
    pub ia_values: Vec<f64>,
    pub step1_samples: usize,
    pub step2_samples: usize,
    pub val_samples: usize,
    pub epochs: usize,
    pub step3_epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub prune_training: PruneTraining,
    pub seed: u64,
}

impl Default for TrainingSpec {
    fn default() -> Self {
        Self {
            modulation: Modulation::Qpsk,
            channel: ChannelModelSpec::rayleigh(4, 4),
            snr_train_db: 8.0,
            snr_jitter_db: None,
            ia_values: IA_SET.to_vec(),
            step1_samples: 200_000,
            step2_samples: 20_000,
            val_samples: 6_000,
            epochs: 300,
            step3_epochs: 300,
            batch_size: 128,
            lr: 1e-3,
            prune_training: PruneTraining::Matched,
            seed: 1,
        }
    }
}

impl TrainingSpec {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be positive".into()));
        }
        self.channel.validate()?;
        if self.ia_values.is_empty() || self.ia_values.iter().any(|v| !IA_SET.contains(v)) {
            return Err(Error::InvalidConfig(format!("I_A values must be a non-empty subset of {IA_SET:?}")));
        }
        if !(self.lr > 0.0) || !self.snr_train_db.is_finite() {
            return Err(Error::InvalidConfig("learning rate must be positive and SNR finite".into()));
        }
        if let Some(j) = self.snr_jitter_db {
            if !(j >= 0.0) {
                return Err(Error::InvalidConfig("SNR jitter must be >= 0".into()));
            }
        }
        Ok(())
    }
}
