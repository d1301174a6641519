use rand::Rng;

use crate::numerics::{SeededRng, Stream};
use crate::training::{sample_prior_llrs, IaLut};

/// Keeps decoder LLRs inside the range the detector saw during training.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LlrScaler {
    /// Magnitude bound `r`.
    pub r: f64,
}

impl LlrScaler {
    pub fn new(r: f64) -> Self {
        Self { r }
    }

    /// `r` as the `p_r` quantile of `|L|` over training LLRs.
    pub fn from_samples(llrs: &[f64], p_r: f64) -> Self {
        let mut a: Vec<f64> = llrs.iter().map(|l| l.abs()).collect();
        a.sort_by(f64::total_cmp);
        if a.is_empty() {
            return Self { r: f64::INFINITY };
        }
        let idx = ((p_r * a.len() as f64).ceil() as usize).clamp(1, a.len()) - 1;
        Self { r: a[idx] }
    }

    /// `r` from synthetic a-priori LLRs drawn like the training priors:
    /// random bits, `I_A` uniform over the lookup set. Values are left unclipped
    /// so the quantile is not swallowed by a point mass at the clip level.
    pub fn synthetic(lut: &IaLut, p_r: f64, draws: usize, seed: u64) -> Self {
        Self::from_samples(&synthetic_training_llrs(lut, draws, seed), p_r)
    }

    /// If `max|L| = r_ι > r`, multiplies every value by `r/r_ι`; otherwise identity.
    pub fn apply(&self, llrs: &mut [f64]) {
        let r_i = llrs.iter().fold(0.0f64, |m, l| m.max(l.abs()));
        if r_i > self.r {
            let s = self.r / r_i;
            llrs.iter_mut().for_each(|l| *l *= s);
        }
    }
}

/// Draws `draws` training-style prior LLRs.
pub fn synthetic_training_llrs(lut: &IaLut, draws: usize, seed: u64) -> Vec<f64> {
    let mut rng = SeededRng::new(seed).substream(Stream::LlrSynthesis, 0);
    let entries = lut.entries();
    let mut out = Vec::with_capacity(draws);
    while out.len() < draws {
        let (_, mu) = entries[rng.random_range(0..entries.len())];
        let bits: Vec<u8> = (0..64).map(|_| rng.random_range(0..2u8)).collect();
        out.extend(sample_prior_llrs(&bits, mu, &mut rng));
    }
    out.truncate(draws);
    out
}
