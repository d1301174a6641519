//! Gray-labelled PAM constellations and conversions between symbol PDFs and bit LLRs.
//!
//! A square `M²`-QAM symbol is handled as two independent real `M`-PAM symbols,
//! each carrying `Q = log₂ M` bits. LLRs follow `L = log P(c=1) / P(c=0)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default LLR magnitude ceiling.
pub const LLR_CLIP: f64 = 30.0;

/// Real PAM alphabet obtained from a square QAM constellation.
#[derive(Clone, Debug, PartialEq)]
pub struct Constellation {
    levels: Vec<f64>,
    /// Gray label of each sorted level, most-significant bit first.
    labels: Vec<usize>,
    bits: usize,
    es: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modulation {
    Qpsk,
    Qam16,
    Qam64,
}

impl Modulation {
    pub fn constellation(self) -> Constellation {
        let m = match self {
            Modulation::Qpsk => 2,
            Modulation::Qam16 => 4,
            Modulation::Qam64 => 8,
        };
        Constellation::pam(m).expect("fixed sizes are powers of two")
    }
}

impl Constellation {
    /// `m`-PAM scaled so the parent `m²`-QAM has unit average complex energy.
    pub fn pam(m: usize) -> Result<Self> {
        if m < 2 || !m.is_power_of_two() {
            return Err(Error::InvalidConfig(format!("PAM size {m} is not a power of two >= 2")));
        }
        let scale = (3.0 / (2.0 * ((m * m) as f64 - 1.0))).sqrt();
        let levels: Vec<f64> = (0..m)
            .map(|i| (2.0 * i as f64 - (m as f64 - 1.0)) * scale)
            .collect();
        let labels = (0..m).map(|i| i ^ (i >> 1)).collect();
        let es = levels.iter().map(|a| a * a).sum::<f64>() / m as f64;
        Ok(Self {
            levels,
            labels,
            bits: m.trailing_zeros() as usize,
            es,
        })
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    /// Alphabet size `M`.
    pub fn size(&self) -> usize {
        self.levels.len()
    }

    /// Bits per real symbol `Q`.
    pub fn bits_per_symbol(&self) -> usize {
        self.bits
    }

    /// Average energy per real dimension.
    pub fn es(&self) -> f64 {
        self.es
    }

    pub fn max_level(&self) -> f64 {
        self.levels[self.levels.len() - 1]
    }

    /// Bit `i` (MSB first) of the label of level `m`.
    pub fn bit(&self, m: usize, i: usize) -> u8 {
        ((self.labels[m] >> (self.bits - 1 - i)) & 1) as u8
    }

    pub fn label(&self, m: usize) -> usize {
        self.labels[m]
    }

    /// Index of the level carrying `label`.
    pub fn index_of_label(&self, label: usize) -> usize {
        let mut idx = label;
        let mut shift = label >> 1;
        while shift != 0 {
            idx ^= shift;
            shift >>= 1;
        }
        idx
    }

    /// Index of the level nearest to `x`.
    pub fn nearest(&self, x: f64) -> usize {
        let mut best = 0;
        for (m, a) in self.levels.iter().enumerate() {
            if (a - x).abs() < (self.levels[best] - x).abs() {
                best = m;
            }
        }
        best
    }

    /// Maps groups of `Q` bits to level indices.
    pub fn map_indices(&self, bits: &[u8]) -> Result<Vec<usize>> {
        if bits.len() % self.bits != 0 {
            return Err(Error::InvalidLength {
                expected: bits.len().div_ceil(self.bits) * self.bits,
                actual: bits.len(),
            });
        }
        Ok(bits
            .chunks(self.bits)
            .map(|c| {
                let label = c.iter().fold(0usize, |acc, &b| (acc << 1) | (b & 1) as usize);
                self.index_of_label(label)
            })
            .collect())
    }

    /// Maps groups of `Q` bits to PAM levels.
    pub fn modulate(&self, bits: &[u8]) -> Result<Vec<f64>> {
        Ok(self
            .map_indices(bits)?
            .into_iter()
            .map(|m| self.levels[m])
            .collect())
    }

    /// Bits carried by a sequence of level indices.
    pub fn demap_indices(&self, indices: &[usize]) -> Vec<u8> {
        indices
            .iter()
            .flat_map(|&m| (0..self.bits).map(move |i| self.bit(m, i)))
            .collect()
    }
}

/// Discrete distribution over the `M` levels of a constellation.
#[derive(Clone, Debug, PartialEq)]
pub struct SymbolPdf(pub Vec<f64>);

impl SymbolPdf {
    pub fn uniform(m: usize) -> Self {
        Self(vec![1.0 / m as f64; m])
    }

    pub fn one_hot(m: usize, idx: usize) -> Self {
        let mut p = vec![0.0; m];
        p[idx] = 1.0;
        Self(p)
    }

    /// Normalizes unnormalized log-probabilities.
    pub fn from_log_weights(logw: &[f64]) -> Self {
        let mx = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = logw.iter().map(|l| (l - mx).exp()).collect();
        let s: f64 = w.iter().sum();
        Self(w.into_iter().map(|v| v / s).collect())
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.0.iter().enumerate() {
            if p > self.0[best] {
                best = i;
            }
        }
        best
    }
}

pub fn clip_llr(l: f64, clip: f64) -> f64 {
    if l.is_nan() {
        0.0
    } else {
        l.clamp(-clip, clip)
    }
}

/// `log(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Product-of-Bernoulli prior over the levels from the `Q` bit LLRs of one symbol.
pub fn prior_pdf_from_llrs(llrs: &[f64], c: &Constellation) -> SymbolPdf {
    debug_assert_eq!(llrs.len(), c.bits_per_symbol());
    let logw: Vec<f64> = (0..c.size())
        .map(|m| {
            llrs.iter()
                .enumerate()
                .map(|(i, &l)| f64::from(c.bit(m, i)) * l - softplus(l))
                .sum()
        })
        .collect();
    SymbolPdf::from_log_weights(&logw)
}

/// Mean and variance of a symbol PDF.
pub fn prior_moments(pdf: &SymbolPdf, c: &Constellation) -> (f64, f64) {
    let mean: f64 = pdf.0.iter().zip(c.levels()).map(|(p, a)| p * a).sum();
    let var: f64 = pdf
        .0
        .iter()
        .zip(c.levels())
        .map(|(p, a)| p * (a - mean) * (a - mean))
        .sum();
    (mean, var.max(0.0))
}

/// Bit LLRs `log Σ_{c_i=1} p / Σ_{c_i=0} p` of a symbol PDF.
pub fn pdf_to_extrinsic_llrs(pdf: &SymbolPdf, c: &Constellation, clip: f64) -> Vec<f64> {
    (0..c.bits_per_symbol())
        .map(|i| {
            let (mut s0, mut s1) = (0.0, 0.0);
            for (m, &p) in pdf.0.iter().enumerate() {
                if c.bit(m, i) == 1 {
                    s1 += p;
                } else {
                    s0 += p;
                }
            }
            let l = match (s1 > 0.0, s0 > 0.0) {
                (true, true) => s1.ln() - s0.ln(),
                (true, false) => clip,
                (false, true) => -clip,
                (false, false) => 0.0,
            };
            clip_llr(l, clip)
        })
        .collect()
}

/// Bit LLRs computed in the log domain from unnormalized log-weights over the levels.
pub fn log_weights_to_llrs(logw: &[f64], c: &Constellation, clip: f64) -> Vec<f64> {
    (0..c.bits_per_symbol())
        .map(|i| {
            let mut one = Vec::with_capacity(logw.len());
            let mut zero = Vec::with_capacity(logw.len());
            for (m, &l) in logw.iter().enumerate() {
                if c.bit(m, i) == 1 {
                    one.push(l);
                } else {
                    zero.push(l);
                }
            }
            clip_llr(log_sum_exp(&one) - log_sum_exp(&zero), clip)
        })
        .collect()
}

pub fn log_sum_exp(v: &[f64]) -> f64 {
    let mx = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if mx == f64::NEG_INFINITY {
        return mx;
    }
    mx + v.iter().map(|x| (x - mx).exp()).sum::<f64>().ln()
}

/// Log-weights of a Gaussian `N(mean, var)` evaluated at the levels.
pub fn gaussian_log_weights(mean: f64, var: f64, c: &Constellation) -> Vec<f64> {
    c.levels()
        .iter()
        .map(|a| -(a - mean) * (a - mean) / (2.0 * var))
        .collect()
}

/// Discrete PDF obtained by evaluating `N(mean, var)` on the levels and normalizing.
pub fn gaussian_to_pdf(mean: f64, var: f64, c: &Constellation) -> SymbolPdf {
    SymbolPdf::from_log_weights(&gaussian_log_weights(mean, var, c))
}

/// Bit LLRs of a Gaussian extrinsic message.
pub fn gaussian_to_llrs(mean: f64, var: f64, c: &Constellation, clip: f64) -> Vec<f64> {
    log_weights_to_llrs(&gaussian_log_weights(mean, var, c), c, clip)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn sixteen_qam_levels_and_energy() {
        let c = Modulation::Qam16.constellation();
        let s = 10f64.sqrt();
        let expect = [-3.0 / s, -1.0 / s, 1.0 / s, 3.0 / s];
        for (a, b) in c.levels().iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
        // enumerate the alphabet: (9 + 1 + 1 + 9) / 10 / 4 = 0.5
        let es = c.levels().iter().map(|a| a * a).sum::<f64>() / 4.0;
        assert!((es - 0.5).abs() < 1e-15);
        assert!((c.es() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn gray_labels_differ_by_one_bit_between_neighbours() {
        for m in [2, 4, 8, 16] {
            let c = Constellation::pam(m).unwrap();
            for i in 1..m {
                assert_eq!((c.label(i) ^ c.label(i - 1)).count_ones(), 1);
            }
            for i in 0..m {
                assert_eq!(c.index_of_label(c.label(i)), i);
            }
        }
    }

    #[test]
    fn bpsk_mapping_is_symmetric() {
        let c = Modulation::Qpsk.constellation();
        let x = c.modulate(&[1, 0]).unwrap();
        assert!(x[0] > 0.0 && x[1] < 0.0);
        assert_eq!(x[0], -x[1]);
    }

    #[test]
    fn modulate_rejects_partial_symbols() {
        let c = Modulation::Qam16.constellation();
        assert!(matches!(c.modulate(&[1, 0, 1]), Err(Error::InvalidLength { .. })));
    }

    #[test]
    fn modulate_then_hard_demap_roundtrip() {
        let c = Modulation::Qam64.constellation();
        let bits: Vec<u8> = (0..60).map(|i| ((i * 7 + 3) % 5 % 2) as u8).collect();
        let x = c.modulate(&bits).unwrap();
        let idx: Vec<usize> = x
            .iter()
            .map(|&v| {
                let llrs = pdf_to_extrinsic_llrs(&SymbolPdf::one_hot(c.size(), c.nearest(v)), &c, LLR_CLIP);
                prior_pdf_from_llrs(&llrs, &c).argmax()
            })
            .collect();
        assert_eq!(c.demap_indices(&idx), bits);
    }

    #[test]
    fn zero_llrs_give_uniform_prior() {
        let c = Modulation::Qam16.constellation();
        let p = prior_pdf_from_llrs(&[0.0, 0.0], &c);
        for v in p.probs() {
            assert!((v - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn saturated_llrs_concentrate_on_all_ones() {
        let c = Modulation::Qam16.constellation();
        let p = prior_pdf_from_llrs(&[LLR_CLIP, LLR_CLIP], &c);
        let idx = c.index_of_label(0b11);
        assert!(p.probs()[idx] > 0.999);
    }

    #[test]
    fn prior_pdf_matches_bit_pattern_enumeration() {
        let c = Modulation::Qam16.constellation();
        let l = [1.0f64, -0.5];
        let p = prior_pdf_from_llrs(&l, &c);
        // P(c=1) = e^L/(1+e^L), P(c=0) = 1/(1+e^L)
        let pb = |b: u8, l: f64| if b == 1 { l.exp() / (1.0 + l.exp()) } else { 1.0 / (1.0 + l.exp()) };
        for label in 0..4usize {
            let b0 = ((label >> 1) & 1) as u8;
            let b1 = (label & 1) as u8;
            let expect = pb(b0, l[0]) * pb(b1, l[1]);
            assert!((p.probs()[c.index_of_label(label)] - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn moments_of_simple_pdfs() {
        let c = Modulation::Qam16.constellation();
        let (m, v) = prior_moments(&SymbolPdf::uniform(4), &c);
        assert!(m.abs() < 1e-15 && (v - c.es()).abs() < 1e-15);
        let (m, v) = prior_moments(&SymbolPdf::one_hot(4, 2), &c);
        assert_eq!((m, v), (c.levels()[2], 0.0));
        let p = prior_pdf_from_llrs(&[1.0, -0.5], &c);
        let (m, v) = prior_moments(&p, &c);
        let (mut em, mut e2) = (0.0, 0.0);
        for (i, a) in c.levels().iter().enumerate() {
            em += a * p.probs()[i];
            e2 += a * a * p.probs()[i];
        }
        assert!((m - em).abs() < 1e-12);
        assert!((v - (e2 - em * em)).abs() < 1e-12);
    }

    #[test]
    fn llrs_of_uniform_and_one_hot() {
        let c = Modulation::Qam16.constellation();
        assert_eq!(pdf_to_extrinsic_llrs(&SymbolPdf::uniform(4), &c, LLR_CLIP), vec![0.0, 0.0]);
        for m in 0..4 {
            let l = pdf_to_extrinsic_llrs(&SymbolPdf::one_hot(4, m), &c, LLR_CLIP);
            for (i, v) in l.iter().enumerate() {
                let expect = if c.bit(m, i) == 1 { LLR_CLIP } else { -LLR_CLIP };
                assert_eq!(*v, expect);
            }
        }
    }

    #[test]
    fn gaussian_llrs_match_subset_sums() {
        let c = Modulation::Qam16.constellation();
        let mean = c.levels()[1];
        let var = c.es() / 10.0;
        let l = gaussian_to_llrs(mean, var, &c, LLR_CLIP);
        let dens: Vec<f64> = c.levels().iter().map(|a| (-(a - mean).powi(2) / (2.0 * var)).exp()).collect();
        for i in 0..2 {
            let s1: f64 = (0..4).filter(|&m| c.bit(m, i) == 1).map(|m| dens[m]).sum();
            let s0: f64 = (0..4).filter(|&m| c.bit(m, i) == 0).map(|m| dens[m]).sum();
            assert!((l[i] - (s1 / s0).ln()).abs() < 1e-12);
        }
        let via_pdf = pdf_to_extrinsic_llrs(&gaussian_to_pdf(mean, var, &c), &c, LLR_CLIP);
        for (a, b) in l.iter().zip(&via_pdf) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    proptest! {
        #[test]
        fn llr_pdf_llr_roundtrip(l0 in -20.0f64..20.0, l1 in -20.0f64..20.0, l2 in -20.0f64..20.0) {
            let c = Modulation::Qam64.constellation();
            let l = [l0, l1, l2];
            let back = pdf_to_extrinsic_llrs(&prior_pdf_from_llrs(&l, &c), &c, LLR_CLIP);
            for (a, b) in l.iter().zip(&back) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }

        #[test]
        fn variance_bounded_by_peak_energy(w in proptest::collection::vec(0.0f64..1.0, 4)) {
            let c = Modulation::Qam16.constellation();
            let s: f64 = w.iter().sum::<f64>() + 1e-12;
            let pdf = SymbolPdf(w.iter().map(|v| (v + 1e-12 / 4.0) / s).collect());
            let (_, v) = prior_moments(&pdf, &c);
            prop_assert!(v >= 0.0 && v <= c.max_level().powi(2));
        }
    }
}
