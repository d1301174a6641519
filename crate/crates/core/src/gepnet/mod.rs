//! GEPNet: EP layers with a GNN refining the symbol distribution between the
//! LMMSE and posterior modules, covariance-driven edge pruning, output heads
//! and weight archives.

mod archive;

pub use archive::{ArchiveMeta, WeightArchive, ARCHIVE_EXTENSION, ARCHIVE_MAGIC, ARCHIVE_VERSION};

use serde::{Deserialize, Serialize};

use crate::channel::RealChannelInstance;
use crate::ep::{cavity, ep_init, lmmse_step, natural_update, priors_from_llrs, EpConfig, EpProblem, EpState};
use crate::error::{Error, Result};
use crate::gnn::{init_state, layer_forward, EdgeMask, GnnHyperparams, GnnParams, GraphInputs, LayerInputs, LayerTape};
use crate::modem::{clip_llr, pdf_to_extrinsic_llrs, prior_moments, Constellation, SymbolPdf};
use crate::numerics::DenseMatrix;

/// Which LLRs a GEPNet hands to the decoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputHead {
    /// A-posteriori LLRs demapped from `p̂_G`.
    App,
    /// A-posteriori LLRs minus the a-priori LLRs (naive extrinsic).
    AppMinusPrior,
    /// LLRs demapped from the GNN output `q_G` alone.
    Ext,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GepnetConfig {
    pub ep: EpConfig,
    pub gnn: GnnHyperparams,
    /// Pruning factor `α` (0 keeps every edge).
    pub alpha: f64,
    pub head: OutputHead,
}

impl Default for GepnetConfig {
    fn default() -> Self {
        Self {
            ep: EpConfig::default(),
            gnn: GnnHyperparams::default(),
            alpha: 0.0,
            head: OutputHead::Ext,
        }
    }
}

impl GepnetConfig {
    pub fn validate(&self) -> Result<()> {
        self.ep.validate()?;
        self.gnn.validate()?;
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(Error::InvalidConfig(format!("pruning factor {} must be finite and >= 0", self.alpha)));
        }
        Ok(())
    }
}

/// Configuration plus weights.
#[derive(Clone, Debug, PartialEq)]
pub struct Gepnet {
    pub config: GepnetConfig,
    pub params: GnnParams,
}

impl Gepnet {
    pub fn new(config: GepnetConfig, params: GnnParams) -> Result<Self> {
        config.validate()?;
        if params.hp != config.gnn {
            return Err(Error::InvalidConfig("parameter hyperparameters differ from the configuration".into()));
        }
        Ok(Self { config, params })
    }
}

/// Directed mask from the layer covariance. Edge `i → j` is dropped when
/// `ρ_ij² < α · mean_{k≠j} ρ_kj²` with `ρ_ij = Σ_ij / √(Σ_ii Σ_jj)`.
pub fn prune_edges(sigma: &DenseMatrix, alpha: f64) -> EdgeMask {
    let k = sigma.rows();
    let mut mask = EdgeMask::full(k);
    if alpha > 0.0 && k > 1 {
        prune_pairs(sigma, alpha, &mut mask);
    }
    mask
}

fn prune_pairs(sigma: &DenseMatrix, alpha: f64, mask: &mut EdgeMask) {
    let k = sigma.rows();
    let d = sigma.diag();
    let rho2 = |i: usize, j: usize| {
        let s = sigma[(i, j)];
        s * s / (d[i] * d[j])
    };
    for j in 0..k {
        let mean = (0..k).filter(|&i| i != j).map(|i| rho2(i, j)).sum::<f64>() / (k - 1) as f64;
        let thr = alpha * mean;
        for i in 0..k {
            if i != j && rho2(i, j) < thr {
                mask.set(j, i, false);
            }
        }
    }
}

/// Everything a GEPNet detection produces.
#[derive(Clone, Debug)]
pub struct GepnetOutput {
    /// `q_G` of every layer.
    pub layer_q: Vec<Vec<SymbolPdf>>,
    /// Final readout logits, `K × M` row per node.
    pub logits: Vec<f64>,
    /// Final `q_G^{(T)}`.
    pub q: Vec<SymbolPdf>,
    /// Final `p̂_G^{(T)} ∝ q_G · p_A`.
    pub posterior: Vec<SymbolPdf>,
    /// Per-symbol priors built from the input LLRs.
    pub priors: Option<Vec<SymbolPdf>>,
    pub trace: Vec<EpState>,
    /// Retained edge share per layer.
    pub retention: Vec<f64>,
}

impl GepnetOutput {
    pub fn decisions(&self) -> Vec<usize> {
        self.posterior.iter().map(SymbolPdf::argmax).collect()
    }

    /// Decoder LLRs for `head`. `prior_llrs` are the inputs of the detection.
    pub fn llrs(&self, head: OutputHead, prior_llrs: Option<&[f64]>, c: &Constellation, clip: f64) -> Vec<f64> {
        match head {
            OutputHead::App => app_llr_head(&self.posterior, c, clip),
            OutputHead::AppMinusPrior => app_minus_prior_head(&self.posterior, prior_llrs, c, clip),
            OutputHead::Ext => ext_llr_head(&self.q, c, clip),
        }
    }
}

/// Inputs and activations kept for the reverse pass.
#[derive(Clone, Debug)]
pub struct GepnetTape {
    pub graph: GraphInputs,
    pub layers: Vec<LayerInputs>,
    pub tapes: Vec<LayerTape>,
}

/// A-posteriori bit LLRs of `p̂_G`.
pub fn app_llr_head(posterior: &[SymbolPdf], c: &Constellation, clip: f64) -> Vec<f64> {
    posterior.iter().flat_map(|p| pdf_to_extrinsic_llrs(p, c, clip)).collect()
}

/// A-posteriori LLRs with the a-priori LLRs subtracted.
pub fn app_minus_prior_head(posterior: &[SymbolPdf], prior_llrs: Option<&[f64]>, c: &Constellation, clip: f64) -> Vec<f64> {
    let mut l = app_llr_head(posterior, c, clip);
    if let Some(p) = prior_llrs {
        for (v, a) in l.iter_mut().zip(p) {
            *v = clip_llr(*v - a, clip);
        }
    }
    l
}

/// Bit LLRs of the GNN output `q_G`.
pub fn ext_llr_head(q: &[SymbolPdf], c: &Constellation, clip: f64) -> Vec<f64> {
    app_llr_head(q, c, clip)
}

/// Runs the `T` GEPNet layers.
pub fn gepnet_forward(model: &Gepnet, inst: &RealChannelInstance, prior_llrs: Option<&[f64]>, c: &Constellation) -> Result<GepnetOutput> {
    forward_impl(model, inst, prior_llrs, c, None)
}

/// As [`gepnet_forward`], also recording what [`crate::gnn::backward`] needs.
pub fn gepnet_forward_recorded(
    model: &Gepnet,
    inst: &RealChannelInstance,
    prior_llrs: Option<&[f64]>,
    c: &Constellation,
) -> Result<(GepnetOutput, GepnetTape)> {
    let mut tape = None;
    let out = forward_impl(model, inst, prior_llrs, c, Some(&mut tape))?;
    Ok((out, tape.expect("recorded")))
}

fn forward_impl(
    model: &Gepnet,
    inst: &RealChannelInstance,
    prior_llrs: Option<&[f64]>,
    c: &Constellation,
    record: Option<&mut Option<GepnetTape>>,
) -> Result<GepnetOutput> {
    let cfg = &model.config;
    let p = &model.params;
    if p.m != c.size() {
        return Err(Error::DimensionMismatch(format!("model readout has {} classes, constellation {}", p.m, c.size())));
    }
    let problem = EpProblem::new(inst)?;
    let k = problem.k();
    let m = c.size();
    let priors = match prior_llrs {
        Some(l) => {
            if l.len() != k * c.bits_per_symbol() {
                return Err(Error::InvalidLength {
                    expected: k * c.bits_per_symbol(),
                    actual: l.len(),
                });
            }
            Some(priors_from_llrs(l, c))
        }
        None => None,
    };
    let graph = GraphInputs::new(&inst.h, &inst.y, problem.sigma2);
    let mut state = init_state(p, &graph);
    let (mut gamma, mut lambda) = ep_init(priors.as_deref(), k, c, cfg.ep.var_floor);
    let t_max = cfg.ep.layers;
    let recording = record.is_some();
    let mut layers = Vec::new();
    let mut tapes = Vec::new();
    let mut layer_q = Vec::with_capacity(t_max);
    let mut trace = Vec::with_capacity(t_max);
    let mut retention = Vec::with_capacity(t_max);
    let mut logits = Vec::new();
    let mut posterior = Vec::new();
    for t in 1..=t_max {
        let (mu, sigma) = lmmse_step(&problem, &gamma, &lambda)?;
        let (x_e, v_e) = cavity(&mu, &sigma.diag(), &gamma, &lambda, cfg.ep.var_floor);
        let mask = prune_edges(&sigma, cfg.alpha);
        retention.push(mask.retention());
        let layer = LayerInputs {
            attrs: x_e.iter().zip(&v_e).map(|(&a, &b)| [a, b]).collect(),
            mask,
        };
        logits = if recording {
            let mut lt = LayerTape::default();
            let z = layer_forward(p, &graph, &layer, &mut state, Some(&mut lt));
            tapes.push(lt);
            z
        } else {
            layer_forward(p, &graph, &layer, &mut state, None)
        };
        if recording {
            layers.push(layer);
        }
        let q: Vec<SymbolPdf> = logits.chunks(m).map(SymbolPdf::from_log_weights).collect();
        posterior = posterior_pdfs(&logits, priors.as_deref(), m);
        let mut xhat = Vec::with_capacity(k);
        let mut v = Vec::with_capacity(k);
        for pdf in &posterior {
            let (mean, var) = prior_moments(pdf, c);
            xhat.push(mean);
            v.push(var.max(cfg.ep.var_floor));
        }
        let state_gamma = gamma.clone();
        let state_lambda = lambda.clone();
        if t < t_max || !cfg.ep.skip_final_update {
            natural_update(&mut gamma, &mut lambda, &xhat, &v, &x_e, &v_e, cfg.ep.damping);
        }
        layer_q.push(q);
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
    if let Some(slot) = record {
        *slot = Some(GepnetTape { graph, layers, tapes });
    }
    Ok(GepnetOutput {
        q: layer_q.last().cloned().unwrap_or_default(),
        layer_q,
        logits,
        posterior,
        priors,
        trace,
        retention,
    })
}

/// `p̂ ∝ softmax(z) · p_A`, computed from the logits in the log domain.
/// Exactly flat priors are skipped so they leave `q_G` bit-identical.
pub fn posterior_pdfs(logits: &[f64], priors: Option<&[SymbolPdf]>, m: usize) -> Vec<SymbolPdf> {
    posterior_log_weights(logits, priors, m)
        .chunks(m)
        .map(SymbolPdf::from_log_weights)
        .collect()
}

/// Unnormalized `log p̂`: `z + log p_A` per node (flat priors skipped).
pub fn posterior_log_weights(logits: &[f64], priors: Option<&[SymbolPdf]>, m: usize) -> Vec<f64> {
    let mut w = logits.to_vec();
    if let Some(p) = priors {
        for (row, pa) in w.chunks_mut(m).zip(p) {
            if pa.0.iter().any(|&v| v != pa.0[0]) {
                for (a, b) in row.iter_mut().zip(&pa.0) {
                    *a += b.ln();
                }
            }
        }
    }
    w
}

/// Per-bit masked inference: output `j` comes from a run in which input LLR
/// `j` was replaced by zero, so it cannot depend on that input.
pub fn masked_outputs(model: &Gepnet, inst: &RealChannelInstance, prior_llrs: &[f64], c: &Constellation, head: OutputHead) -> Result<Vec<f64>> {
    let clip = model.config.ep.llr_clip;
    let mut unmasked: Option<Vec<f64>> = None;
    let mut out = Vec::with_capacity(prior_llrs.len());
    let mut buf = prior_llrs.to_vec();
    for j in 0..prior_llrs.len() {
        if prior_llrs[j].to_bits() == 0f64.to_bits() {
            if unmasked.is_none() {
                let o = gepnet_forward(model, inst, Some(prior_llrs), c)?;
                unmasked = Some(o.llrs(head, Some(prior_llrs), c, clip));
            }
            out.push(unmasked.as_ref().expect("computed")[j]);
            continue;
        }
        buf[j] = 0.0;
        let o = gepnet_forward(model, inst, Some(&buf), c)?;
        out.push(o.llrs(head, Some(&buf), c, clip)[j]);
        buf[j] = prior_llrs[j];
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{apply_awgn, generate_channel, ChannelModelSpec};
    use crate::modem::Modulation;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_hp() -> GnnHyperparams {
        GnnHyperparams {
            n_u: 4,
            n_h1: 6,
            n_h2: 5,
            rounds: 2,
        }
    }

    fn instance(rng: &mut ChaCha8Rng, n_r: usize, n_t: usize, c: &Constellation, snr: f64) -> RealChannelInstance {
        let h = generate_channel(&ChannelModelSpec::rayleigh(n_r, n_t), rng).unwrap();
        let x: Vec<f64> = (0..2 * n_t).map(|_| c.levels()[rng.random_range(0..c.size())]).collect();
        apply_awgn(&h, &x, snr, c.es(), rng)
    }

    fn model(seed: u64, c: &Constellation, alpha: f64) -> Gepnet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = GepnetConfig {
            gnn: small_hp(),
            alpha,
            ..Default::default()
        };
        Gepnet::new(cfg, GnnParams::glorot(small_hp(), c.size(), &mut rng).unwrap()).unwrap()
    }

    #[test]
    fn alpha_zero_keeps_everything() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = DenseMatrix::from_vec(4, 4, (0..16).map(|_| rng.random_range(-1.0..1.0)).collect());
        let s = a.gram().add(&DenseMatrix::identity(4));
        assert_eq!(prune_edges(&s, 0.0).count(), 12);
    }

    #[test]
    fn diagonal_covariance_keeps_everything() {
        let s = DenseMatrix::from_diag(&[1.0, 2.0, 0.5, 3.0]);
        for alpha in [0.5, 1.0, 4.0, 100.0] {
            assert_eq!(prune_edges(&s, alpha).count(), 12);
        }
    }

    #[test]
    fn dominant_pair_survives() {
        let mut s = DenseMatrix::identity(4);
        s[(0, 1)] = 0.6;
        s[(1, 0)] = 0.6;
        s[(2, 3)] = 0.05;
        s[(3, 2)] = 0.05;
        s[(0, 2)] = 0.01;
        s[(2, 0)] = 0.01;
        // ρ² into node 0: from 1: 0.36, from 2: 1e-4, from 3: 0 → mean 0.120033
        // into node 2: from 0: 1e-4, from 1: 0, from 3: 0.0025 → mean 8.667e-4
        let mask = prune_edges(&s, 1.0);
        assert!(mask.active(0, 1) && !mask.active(0, 2) && !mask.active(0, 3));
        assert!(mask.active(1, 0) && !mask.active(1, 2) && !mask.active(1, 3));
        assert!(mask.active(2, 3) && !mask.active(2, 0) && !mask.active(2, 1));
        assert!(mask.active(3, 2) && !mask.active(3, 0) && !mask.active(3, 1));
    }

    #[test]
    fn uniform_heads_give_zero() {
        let c = Modulation::Qam16.constellation();
        let u = vec![SymbolPdf::uniform(4); 3];
        assert!(app_llr_head(&u, &c, 30.0).iter().all(|&l| l == 0.0));
        assert!(ext_llr_head(&u, &c, 30.0).iter().all(|&l| l == 0.0));
    }

    #[test]
    fn heads_match_subset_sums() {
        let c = Modulation::Qam16.constellation();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let w: Vec<f64> = (0..4).map(|_| rng.random_range(0.01..1.0)).collect();
            let s: f64 = w.iter().sum();
            let pdf = SymbolPdf(w.iter().map(|v| v / s).collect());
            let l = app_llr_head(std::slice::from_ref(&pdf), &c, 30.0);
            for i in 0..2 {
                let one: f64 = (0..4).filter(|&m| c.bit(m, i) == 1).map(|m| pdf.0[m]).sum();
                let zero: f64 = (0..4).filter(|&m| c.bit(m, i) == 0).map(|m| pdf.0[m]).sum();
                assert!((l[i] - (one / zero).ln()).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn zero_parameters_reduce_to_prior() {
        let c = Modulation::Qam16.constellation();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let inst = instance(&mut rng, 2, 2, &c, 10.0);
        let cfg = GepnetConfig {
            gnn: small_hp(),
            ..Default::default()
        };
        let model = Gepnet::new(cfg, GnnParams::zeros(small_hp(), 4).unwrap()).unwrap();
        let out = gepnet_forward(&model, &inst, None, &c).unwrap();
        for layer in &out.layer_q {
            for q in layer {
                assert!(q.0.iter().all(|&p| (p - 0.25).abs() < 1e-15));
            }
        }
        let llrs: Vec<f64> = (0..8).map(|_| rng.random_range(-3.0..3.0)).collect();
        let out = gepnet_forward(&model, &inst, Some(&llrs), &c).unwrap();
        let priors = priors_from_llrs(&llrs, &c);
        for (p, a) in out.posterior.iter().zip(&priors) {
            for (x, y) in p.0.iter().zip(&a.0) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn flat_prior_makes_heads_agree() {
        let c = Modulation::Qam16.constellation();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let inst = instance(&mut rng, 2, 2, &c, 8.0);
        let m = model(7, &c, 0.0);
        let zeros = vec![0.0; 8];
        let out = gepnet_forward(&m, &inst, Some(&zeros), &c).unwrap();
        let a = out.llrs(OutputHead::App, Some(&zeros), &c, 30.0);
        let e = out.llrs(OutputHead::Ext, Some(&zeros), &c, 30.0);
        let d = out.llrs(OutputHead::AppMinusPrior, Some(&zeros), &c, 30.0);
        assert_eq!(a, e);
        assert_eq!(a, d);
    }

    #[test]
    fn unprunable_alpha_is_bit_identical() {
        let c = Modulation::Qpsk.constellation();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let inst = instance(&mut rng, 3, 3, &c, 5.0);
        let full = gepnet_forward(&model(9, &c, 0.0), &inst, None, &c).unwrap();
        let tiny = gepnet_forward(&model(9, &c, 1e-300), &inst, None, &c).unwrap();
        assert!(tiny.retention.iter().all(|&r| r == 1.0));
        assert_eq!(full.logits, tiny.logits);
    }

    #[test]
    fn forward_is_deterministic_and_recorded_matches() {
        let c = Modulation::Qpsk.constellation();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let inst = instance(&mut rng, 2, 2, &c, 5.0);
        let m = model(11, &c, 0.5);
        let llrs: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
        let a = gepnet_forward(&m, &inst, Some(&llrs), &c).unwrap();
        let (b, tape) = gepnet_forward_recorded(&m, &inst, Some(&llrs), &c).unwrap();
        assert_eq!(a.logits, b.logits);
        assert_eq!(tape.layers.len(), m.config.ep.layers);
        let replayed = crate::gnn::replay(&m.params, &tape.graph, &tape.layers);
        assert_eq!(replayed.last().unwrap(), &a.logits);
    }

    #[test]
    fn masked_outputs_ignore_own_input() {
        let c = Modulation::Qam16.constellation();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let inst = instance(&mut rng, 2, 2, &c, 10.0);
        let m = model(13, &c, 0.0);
        let llrs: Vec<f64> = (0..8).map(|_| rng.random_range(-4.0..4.0)).collect();
        for head in [OutputHead::AppMinusPrior, OutputHead::Ext] {
            let base = masked_outputs(&m, &inst, &llrs, &c, head).unwrap();
            for j in 0..8 {
                let mut p = llrs.clone();
                p[j] = rng.random_range(-20.0..20.0);
                let o = masked_outputs(&m, &inst, &p, &c, head).unwrap();
                assert_eq!(o[j].to_bits(), base[j].to_bits());
            }
        }
    }

    #[test]
    fn masked_with_zero_prior_equals_unmasked() {
        let c = Modulation::Qpsk.constellation();
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let inst = instance(&mut rng, 2, 2, &c, 3.0);
        let m = model(15, &c, 0.0);
        let zeros = vec![0.0; 4];
        let masked = masked_outputs(&m, &inst, &zeros, &c, OutputHead::AppMinusPrior).unwrap();
        let plain = gepnet_forward(&m, &inst, Some(&zeros), &c).unwrap();
        assert_eq!(masked, plain.llrs(OutputHead::AppMinusPrior, Some(&zeros), &c, 30.0));
    }
}
