//! Real-valued multiplication (RVM) counts of the turbo receivers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    MmsePic,
    Ep,
    Dep,
    Gepnet,
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "mmse-pic" => Ok(Algorithm::MmsePic),
            "ep" => Ok(Algorithm::Ep),
            "dep" => Ok(Algorithm::Dep),
            "gepnet" => Ok(Algorithm::Gepnet),
            _ => Err(Error::UnknownAlgorithm(s.to_string())),
        }
    }
}

/// Dimensions of a complexity evaluation (real-valued model sizes).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComplexityQuery {
    pub algorithm: Algorithm,
    pub n: f64,
    pub k: f64,
    /// Real constellation size `M`.
    pub m: f64,
    /// Detector layers `T`.
    pub t: f64,
    /// Turbo iterations `I`.
    pub i: f64,
    pub n_u: f64,
    pub n_h1: f64,
    pub n_h2: f64,
    /// GNN rounds `L`.
    pub l: f64,
    /// Retained edge share `η`.
    pub eta: f64,
}

impl ComplexityQuery {
    /// The 8×8 example: `N = K = 8`, `M = 4`, `T = 5`, `I = 2`, default GNN sizes.
    pub fn example(algorithm: Algorithm, eta: f64) -> Self {
        Self {
            algorithm,
            n: 8.0,
            k: 8.0,
            m: 4.0,
            t: 5.0,
            i: 2.0,
            n_u: 8.0,
            n_h1: 64.0,
            n_h2: 32.0,
            l: 2.0,
            eta,
        }
    }
}

/// Per-iteration counts: `(first iteration, each later iteration)`.
pub fn complexity_terms(q: &ComplexityQuery) -> Result<(f64, f64)> {
    if !(0.0..=1.0).contains(&q.eta) {
        return Err(Error::InvalidConfig(format!("eta = {} outside [0, 1]", q.eta)));
    }
    if q.i < 1.0 || q.k < 1.0 || q.n < 1.0 || q.m < 2.0 {
        return Err(Error::InvalidConfig("complexity query needs I, K, N >= 1 and M >= 2".into()));
    }
    let (n, k, m, t) = (q.n, q.k, q.m, q.t);
    let front = n * k * k + n * k;
    let ep_layer = k.powi(3) + k * k + 13.0 * k + 2.0 * m * k;
    Ok(match q.algorithm {
        Algorithm::MmsePic => {
            let c1 = front + k.powi(3) + 4.0 * k * k + (m + 3.0) * k;
            (c1, c1 + 3.0 * m * k)
        }
        Algorithm::Ep => {
            let c1 = front + ep_layer * t;
            (c1, c1 + 2.0 * m * k * t + 3.0 * m * k)
        }
        Algorithm::Dep => {
            let c1 = front + ep_layer * t;
            (c1, c1 + 2.0 * m * k * t + 8.0 * m * k)
        }
        Algorithm::Gepnet => {
            let (nu, h1, h2, l) = (q.n_u, q.n_h1, q.n_h2, q.l);
            let edges = ((2.0 * nu + 2.0) * h1 + h1 * h2 + h2 * nu) * l * t * k * (k - 1.0) * q.eta;
            let gru = (4.0 * nu + 3.0 * h1 + 9.0) * h1 * k * l * t;
            let layer = (ep_layer + (nu * h1 + h1 * h2 + h2 * m) * k) * t;
            let c1 = edges + gru + layer;
            (c1, c1 + k * m.log2() + 2.0 * m * k * t + 3.0 * m * k)
        }
    })
}

/// Total RVMs over `I` turbo iterations: `C_1 + (I − 1)·C_ι`.
pub fn complexity_rvm(q: &ComplexityQuery) -> Result<f64> {
    let (c1, ci) = complexity_terms(q)?;
    Ok(c1 + (q.i - 1.0) * ci)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn example_column() {
        let ex = |a, eta| complexity_rvm(&ComplexityQuery::example(a, eta)).unwrap();
        assert_eq!(ex(Algorithm::MmsePic, 1.0), 2896.0);
        assert_eq!(ex(Algorithm::Ep, 1.0), 9008.0);
        assert_eq!(ex(Algorithm::Dep, 1.0), 9168.0);
        for (eta, expect) in [(1.0, 6.48e6), (0.410, 4.20e6), (0.313, 3.82e6), (0.186, 3.33e6), (0.066, 2.87e6)] {
            let v = ex(Algorithm::Gepnet, eta);
            assert!((v / expect - 1.0).abs() < 0.01, "eta {eta}: {v}");
        }
    }

    #[test]
    fn rejects_bad_queries() {
        assert!(complexity_rvm(&ComplexityQuery::example(Algorithm::Gepnet, 1.5)).is_err());
        assert!(matches!("qr".parse::<Algorithm>(), Err(Error::UnknownAlgorithm(_))));
        assert_eq!("MMSE_PIC".parse::<Algorithm>().unwrap(), Algorithm::MmsePic);
    }

    #[test]
    fn single_iteration_is_first_term() {
        let mut q = ComplexityQuery::example(Algorithm::Ep, 1.0);
        q.i = 1.0;
        assert_eq!(complexity_rvm(&q).unwrap(), complexity_terms(&q).unwrap().0);
    }
}
