//! Expectation-propagation MIMO detection with turbo prior injection, plus the
//! single-shot LMMSE and exhaustive MAP reference detectors.

use serde::{Deserialize, Serialize};

use crate::channel::RealChannelInstance;
use crate::error::{Error, Result};
use crate::modem::{
    clip_llr, gaussian_log_weights, gaussian_to_llrs, log_sum_exp, prior_moments, prior_pdf_from_llrs,
    Constellation, SymbolPdf,
};
use crate::numerics::DenseMatrix;

/// Lower bound applied to `σ_w²` so noiseless instances remain well posed.
pub const NOISE_FLOOR: f64 = 1e-10;

/// Largest symbol-vector space the exhaustive detector will enumerate.
pub const MAP_ORACLE_CAP: u128 = 1 << 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpConfig {
    /// Number of layers `T`.
    pub layers: usize,
    /// Damping factor `β` (1 means undamped).
    pub damping: f64,
    /// Variance floor `ε_v`.
    pub var_floor: f64,
    pub llr_clip: f64,
    /// Skip the natural-parameter update after the final layer.
    pub skip_final_update: bool,
}

impl Default for EpConfig {
    fn default() -> Self {
        Self {
            layers: 5,
            damping: 0.2,
            var_floor: 1e-8,
            llr_clip: crate::modem::LLR_CLIP,
            skip_final_update: true,
        }
    }
}

impl EpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 {
            return Err(Error::InvalidConfig("EP needs at least one layer".into()));
        }
        if !(0.0..=1.0).contains(&self.damping) {
            return Err(Error::InvalidConfig(format!("damping {} outside [0, 1]", self.damping)));
        }
        if !(self.var_floor > 0.0) || !(self.llr_clip > 0.0) {
            return Err(Error::InvalidConfig("variance floor and LLR clip must be positive".into()));
        }
        Ok(())
    }
}

/// Quantities shared by every layer of one detection: `HᵀH/σ²` and `Hᵀy/σ²`.
#[derive(Clone, Debug)]
pub struct EpProblem {
    pub gram: DenseMatrix,
    pub hty: Vec<f64>,
    pub sigma2: f64,
}

impl EpProblem {
    pub fn new(inst: &RealChannelInstance) -> Result<Self> {
        if inst.y.len() != inst.h.rows() {
            return Err(Error::DimensionMismatch(format!(
                "y has {} entries, H has {} rows",
                inst.y.len(),
                inst.h.rows()
            )));
        }
        let sigma2 = inst.sigma_w2.max(NOISE_FLOOR);
        Ok(Self {
            gram: inst.h.gram().scale(1.0 / sigma2),
            hty: inst.h.tr_matvec(&inst.y).into_iter().map(|v| v / sigma2).collect(),
            sigma2,
        })
    }

    pub fn k(&self) -> usize {
        self.hty.len()
    }
}

/// Per-layer EP quantities.
#[derive(Clone, Debug, PartialEq)]
pub struct EpState {
    pub gamma: Vec<f64>,
    pub lambda: Vec<f64>,
    pub mu: Vec<f64>,
    pub sigma: DenseMatrix,
    pub x_e: Vec<f64>,
    pub v_e: Vec<f64>,
    pub xhat: Vec<f64>,
    pub v: Vec<f64>,
}

/// Initial natural parameters. `None` (or an exactly uniform PDF) gives
/// `(0, 1/E_s)`; otherwise `λ = 1/var`, `γ = λ·mean` with the variance floored.
pub fn ep_init(priors: Option<&[SymbolPdf]>, k: usize, c: &Constellation, var_floor: f64) -> (Vec<f64>, Vec<f64>) {
    let mut gamma = vec![0.0; k];
    let mut lambda = vec![1.0 / c.es(); k];
    if let Some(p) = priors {
        for (i, pdf) in p.iter().enumerate().take(k) {
            if pdf.0.iter().all(|&v| v == pdf.0[0]) {
                continue;
            }
            let (mean, var) = prior_moments(pdf, c);
            let l = 1.0 / var.max(var_floor);
            lambda[i] = l;
            gamma[i] = l * mean;
        }
    }
    (gamma, lambda)
}

/// `Σ = (HᵀH/σ² + diag λ)⁻¹`, `μ = Σ(Hᵀy/σ² + γ)`.
pub fn lmmse_step(problem: &EpProblem, gamma: &[f64], lambda: &[f64]) -> Result<(Vec<f64>, DenseMatrix)> {
    let k = problem.k();
    let mut a = problem.gram.clone();
    for i in 0..k {
        a[(i, i)] += lambda[i];
    }
    let sigma = a.spd_inverse()?;
    let rhs: Vec<f64> = problem.hty.iter().zip(gamma).map(|(h, g)| h + g).collect();
    Ok((sigma.matvec(&rhs), sigma))
}

/// Removes each site's Gaussian factor from the LMMSE marginals.
///
/// The denominator `1 − Σ_kk λ_k` is floored at `ε_v`, so the cavity variance
/// stays finite (at most `Σ_kk/ε_v`) when the site precision nearly explains
/// the whole marginal; the result is then floored at `ε_v` from below.
pub fn cavity(mu: &[f64], sigma_diag: &[f64], gamma: &[f64], lambda: &[f64], var_floor: f64) -> (Vec<f64>, Vec<f64>) {
    let k = mu.len();
    let mut x_e = Vec::with_capacity(k);
    let mut v_e = Vec::with_capacity(k);
    for i in 0..k {
        let s = sigma_diag[i].max(f64::MIN_POSITIVE);
        let denom = (1.0 - s * lambda[i]).max(var_floor);
        let v = (s / denom).max(var_floor);
        x_e.push(v * (mu[i] / s - gamma[i]));
        v_e.push(v);
    }
    (x_e, v_e)
}

/// Discrete posterior `∝ N(a; x_e, v_e)·p_A(a)` with its mean and floored variance.
pub fn posterior_moments(x_e: f64, v_e: f64, prior: Option<&SymbolPdf>, c: &Constellation, var_floor: f64) -> (f64, f64, SymbolPdf) {
    let mut logw = gaussian_log_weights(x_e, v_e, c);
    if let Some(p) = prior {
        for (w, &pa) in logw.iter_mut().zip(&p.0) {
            *w += pa.ln();
        }
    }
    let pdf = SymbolPdf::from_log_weights(&logw);
    let (mean, var) = prior_moments(&pdf, c);
    (mean, var.max(var_floor), pdf)
}

/// Gaussian division followed by the negativity guard and damping.
/// Components whose new precision is not strictly positive keep their previous pair.
#[allow(clippy::too_many_arguments)]
pub fn natural_update(
    gamma: &mut [f64],
    lambda: &mut [f64],
    xhat: &[f64],
    v: &[f64],
    x_e: &[f64],
    v_e: &[f64],
    beta: f64,
) {
    for i in 0..gamma.len() {
        let lam_new = 1.0 / v[i] - 1.0 / v_e[i];
        if !(lam_new > 0.0) {
            continue;
        }
        let gam_new = xhat[i] / v[i] - x_e[i] / v_e[i];
        lambda[i] = beta * lam_new + (1.0 - beta) * lambda[i];
        gamma[i] = beta * gam_new + (1.0 - beta) * gamma[i];
    }
}

/// Result of an EP detection.
#[derive(Clone, Debug)]
pub struct EpOutput {
    /// Final-layer cavity moments.
    pub x_e: Vec<f64>,
    pub v_e: Vec<f64>,
    /// Final-layer discrete posteriors.
    pub posterior: Vec<SymbolPdf>,
    /// Extrinsic bit LLRs demapped from the final cavity Gaussians (`K·Q` entries).
    pub llrs: Vec<f64>,
    /// State after each layer.
    pub trace: Vec<EpState>,
}

impl EpOutput {
    /// Symbol decisions (level indices) from the final posteriors.
    pub fn decisions(&self) -> Vec<usize> {
        self.posterior.iter().map(SymbolPdf::argmax).collect()
    }
}

/// Converts a bit-LLR vector (`K·Q` entries) into per-symbol prior PDFs.
pub fn priors_from_llrs(llrs: &[f64], c: &Constellation) -> Vec<SymbolPdf> {
    llrs.chunks(c.bits_per_symbol())
        .map(|l| prior_pdf_from_llrs(l, c))
        .collect()
}

/// Runs `T` EP layers. `prior_llrs` are the decoder's a-priori LLRs (`None` in
/// the first turbo iteration).
pub fn ep_detect(inst: &RealChannelInstance, prior_llrs: Option<&[f64]>, c: &Constellation, cfg: &EpConfig) -> Result<EpOutput> {
    cfg.validate()?;
    let problem = EpProblem::new(inst)?;
    let k = problem.k();
    let priors = match prior_llrs {
        Some(l) => {
            check_len(l.len(), k * c.bits_per_symbol())?;
            Some(priors_from_llrs(l, c))
        }
        None => None,
    };
    let (mut gamma, mut lambda) = ep_init(priors.as_deref(), k, c, cfg.var_floor);
    let mut trace = Vec::with_capacity(cfg.layers);
    let mut posterior = Vec::new();
    for t in 1..=cfg.layers {
        let (mu, sigma) = lmmse_step(&problem, &gamma, &lambda)?;
        let (x_e, v_e) = cavity(&mu, &sigma.diag(), &gamma, &lambda, cfg.var_floor);
        let mut xhat = Vec::with_capacity(k);
        let mut v = Vec::with_capacity(k);
        posterior.clear();
        for i in 0..k {
            let (m, var, pdf) = posterior_moments(x_e[i], v_e[i], priors.as_ref().map(|p| &p[i]), c, cfg.var_floor);
            xhat.push(m);
            v.push(var);
            posterior.push(pdf);
        }
        let state_gamma = gamma.clone();
        let state_lambda = lambda.clone();
        if t < cfg.layers || !cfg.skip_final_update {
            natural_update(&mut gamma, &mut lambda, &xhat, &v, &x_e, &v_e, cfg.damping);
        }
        trace.push(EpState {
            gamma: state_gamma,
            lambda: state_lambda,
            mu,
            sigma,
            x_e,
            v_e,
            xhat,
            v,
        });
    }
    let last = trace.last().expect("at least one layer");
    let llrs = last
        .x_e
        .iter()
        .zip(&last.v_e)
        .flat_map(|(&m, &v)| gaussian_to_llrs(m, v, c, cfg.llr_clip))
        .collect();
    Ok(EpOutput {
        x_e: last.x_e.clone(),
        v_e: last.v_e.clone(),
        posterior,
        llrs,
        trace,
    })
}

fn check_len(actual: usize, expected: usize) -> Result<()> {
    if actual != expected {
        return Err(Error::InvalidLength { expected, actual });
    }
    Ok(())
}

/// Exact marginals obtained by enumerating every symbol vector.
#[derive(Clone, Debug)]
pub struct MapOutput {
    pub marginals: Vec<SymbolPdf>,
    /// A-posteriori bit LLRs.
    pub app_llrs: Vec<f64>,
    /// Extrinsic bit LLRs (a-posteriori minus the bit's own prior).
    pub llrs: Vec<f64>,
}

impl MapOutput {
    pub fn decisions(&self) -> Vec<usize> {
        self.marginals.iter().map(SymbolPdf::argmax).collect()
    }
}

/// Brute-force MAP detector over `M^K` vectors (capped at 2²⁰).
pub fn map_oracle(inst: &RealChannelInstance, prior_llrs: Option<&[f64]>, c: &Constellation, llr_clip: f64) -> Result<MapOutput> {
    let k = inst.k();
    let m = c.size();
    let q = c.bits_per_symbol();
    let total = (m as u128).checked_pow(k as u32).unwrap_or(u128::MAX);
    if total > MAP_ORACLE_CAP {
        return Err(Error::SizeTooLarge(total));
    }
    if inst.y.len() != inst.n() {
        return Err(Error::DimensionMismatch("y length differs from H rows".into()));
    }
    let log_prior: Vec<Vec<f64>> = match prior_llrs {
        Some(l) => {
            check_len(l.len(), k * q)?;
            priors_from_llrs(l, c)
                .iter()
                .map(|p| p.0.iter().map(|v| v.ln()).collect())
                .collect()
        }
        None => vec![vec![0.0; m]; k],
    };
    let sigma2 = inst.sigma_w2.max(NOISE_FLOOR);
    let levels = c.levels();
    // Per-(k, level) log-sum accumulators, kept as running (max, sum) pairs.
    let mut acc = vec![vec![(f64::NEG_INFINITY, 0.0f64); m]; k];
    let mut idx = vec![0usize; k];
    let mut resid = vec![0.0; inst.n()];
    for _ in 0..total as u64 {
        resid.copy_from_slice(&inst.y);
        let mut lw = 0.0;
        for (j, &ij) in idx.iter().enumerate() {
            let a = levels[ij];
            for (r, row) in resid.iter_mut().enumerate() {
                *row -= inst.h[(r, j)] * a;
            }
            lw += log_prior[j][ij];
        }
        lw -= resid.iter().map(|v| v * v).sum::<f64>() / (2.0 * sigma2);
        for (j, &ij) in idx.iter().enumerate() {
            let (mx, s) = &mut acc[j][ij];
            if lw > *mx {
                *s = *s * (*mx - lw).exp() + 1.0;
                *mx = lw;
            } else {
                *s += (lw - *mx).exp();
            }
        }
        for d in idx.iter_mut() {
            *d += 1;
            if *d < m {
                break;
            }
            *d = 0;
        }
    }
    let mut marginals = Vec::with_capacity(k);
    let mut app_llrs = Vec::with_capacity(k * q);
    for a in &acc {
        let logm: Vec<f64> = a
            .iter()
            .map(|&(mx, s)| if s > 0.0 { mx + s.ln() } else { f64::NEG_INFINITY })
            .collect();
        for i in 0..q {
            let ones: Vec<f64> = (0..m).filter(|&l| c.bit(l, i) == 1).map(|l| logm[l]).collect();
            let zeros: Vec<f64> = (0..m).filter(|&l| c.bit(l, i) == 0).map(|l| logm[l]).collect();
            app_llrs.push(log_sum_exp(&ones) - log_sum_exp(&zeros));
        }
        marginals.push(SymbolPdf::from_log_weights(&logm));
    }
    let llrs = app_llrs
        .iter()
        .enumerate()
        .map(|(j, &l)| clip_llr(l - prior_llrs.map_or(0.0, |p| p[j]), llr_clip))
        .collect();
    let app_llrs = app_llrs.into_iter().map(|l| clip_llr(l, llr_clip)).collect();
    Ok(MapOutput {
        marginals,
        app_llrs,
        llrs,
    })
}

/// Output of the linear detector.
#[derive(Clone, Debug)]
pub struct LmmseOutput {
    /// LMMSE estimate `Σ(Hᵀy/σ² + V⁻¹m)`.
    pub estimate: Vec<f64>,
    /// Unbiased per-symbol Gaussian messages.
    pub x_e: Vec<f64>,
    pub v_e: Vec<f64>,
    pub llrs: Vec<f64>,
}

impl LmmseOutput {
    pub fn decisions(&self, c: &Constellation) -> Vec<usize> {
        self.x_e.iter().map(|&x| c.nearest(x)).collect()
    }
}

/// Single LMMSE estimate with prior means/variances and Gaussian LLR demapping.
pub fn lmmse_detect(inst: &RealChannelInstance, prior: Option<(&[f64], &[f64])>, c: &Constellation, cfg: &EpConfig) -> Result<LmmseOutput> {
    let problem = EpProblem::new(inst)?;
    let k = problem.k();
    let (mean, var) = match prior {
        Some((m, v)) => {
            check_len(m.len(), k)?;
            check_len(v.len(), k)?;
            (m.to_vec(), v.iter().map(|x| x.max(cfg.var_floor)).collect::<Vec<_>>())
        }
        None => (vec![0.0; k], vec![c.es(); k]),
    };
    let lambda: Vec<f64> = var.iter().map(|v| 1.0 / v).collect();
    let gamma: Vec<f64> = mean.iter().zip(&lambda).map(|(m, l)| m * l).collect();
    let (mu, sigma) = lmmse_step(&problem, &gamma, &lambda)?;
    let (x_e, v_e) = cavity(&mu, &sigma.diag(), &gamma, &lambda, cfg.var_floor);
    let llrs = x_e
        .iter()
        .zip(&v_e)
        .flat_map(|(&m, &v)| gaussian_to_llrs(m, v, c, cfg.llr_clip))
        .collect();
    Ok(LmmseOutput {
        estimate: mu,
        x_e,
        v_e,
        llrs,
    })
}
