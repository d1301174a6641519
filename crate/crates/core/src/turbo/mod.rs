//! The iterative detection and decoding loop, decoder-LLR range control and
//! error-rate accounting.

mod metrics;
mod scaler;

pub use metrics::{wilson_half_width, wilson_interval, Metrics};
pub use scaler::{synthetic_training_llrs, LlrScaler};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{apply_awgn, generate_channel, ChannelModelSpec, RealChannelInstance};
use crate::coding::{ChannelCode, CodeSpec, ConvCodeSpec, Interleaver, Puncture};
use crate::ep::{ep_detect, lmmse_detect, map_oracle, priors_from_llrs, EpConfig};
use crate::error::{Error, Result};
use crate::gepnet::{gepnet_forward, Gepnet, OutputHead};
use crate::modem::{prior_moments, Constellation, Modulation};
use crate::numerics::{SeededRng, Stream};
use crate::training::IaLut;

/// Detector choices of the receiver.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorKind {
    Ep,
    /// APP-trained GEPNet with the prior-subtracted head.
    GepnetApp,
    /// APP-trained GEPNet fitted without priors (`I_A = 0`), prior-subtracted head.
    GepnetIa0,
    ExtGepnet,
    Lmmse,
    MapOracle,
}

impl DetectorKind {
    pub const ALL: [DetectorKind; 6] = [
        DetectorKind::Ep,
        DetectorKind::GepnetApp,
        DetectorKind::GepnetIa0,
        DetectorKind::ExtGepnet,
        DetectorKind::Lmmse,
        DetectorKind::MapOracle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DetectorKind::Ep => "ep",
            DetectorKind::GepnetApp => "gepnet_app",
            DetectorKind::GepnetIa0 => "gepnet_ia0",
            DetectorKind::ExtGepnet => "ext_gepnet",
            DetectorKind::Lmmse => "lmmse",
            DetectorKind::MapOracle => "map_oracle",
        }
    }

    pub fn is_learned(self) -> bool {
        matches!(self, DetectorKind::GepnetApp | DetectorKind::GepnetIa0 | DetectorKind::ExtGepnet)
    }

    pub fn head(self) -> Option<OutputHead> {
        match self {
            DetectorKind::GepnetApp | DetectorKind::GepnetIa0 => Some(OutputHead::AppMinusPrior),
            DetectorKind::ExtGepnet => Some(OutputHead::Ext),
            _ => None,
        }
    }
}

impl std::fmt::Display for DetectorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// A ready-to-run detector.
#[derive(Clone, Debug)]
pub enum Detector {
    Ep(EpConfig),
    Lmmse(EpConfig),
    MapOracle { llr_clip: f64 },
    Gepnet { kind: DetectorKind, model: Box<Gepnet> },
}

/// Extrinsic LLRs (`K·Q`) and level decisions (`K`) of one detection.
#[derive(Clone, Debug, PartialEq)]
pub struct Detection {
    pub llrs: Vec<f64>,
    pub decisions: Vec<usize>,
}

impl Detector {
    pub fn kind(&self) -> DetectorKind {
        match self {
            Detector::Ep(_) => DetectorKind::Ep,
            Detector::Lmmse(_) => DetectorKind::Lmmse,
            Detector::MapOracle { .. } => DetectorKind::MapOracle,
            Detector::Gepnet { kind, .. } => *kind,
        }
    }

    /// Wraps a trained model as detector `kind`, forcing the matching head.
    pub fn gepnet(kind: DetectorKind, mut model: Gepnet) -> Result<Self> {
        let head = kind.head().ok_or_else(|| Error::InvalidConfig(format!("{kind} is not a learned detector")))?;
        model.config.head = head;
        Ok(Detector::Gepnet {
            kind,
            model: Box::new(model),
        })
    }

    pub fn detect(&self, inst: &RealChannelInstance, prior_llrs: Option<&[f64]>, c: &Constellation) -> Result<Detection> {
        match self {
            Detector::Ep(cfg) => {
                let o = ep_detect(inst, prior_llrs, c, cfg)?;
                Ok(Detection {
                    decisions: o.decisions(),
                    llrs: o.llrs,
                })
            }
            Detector::Lmmse(cfg) => {
                let moments = prior_llrs.map(|l| {
                    let (m, v): (Vec<f64>, Vec<f64>) = priors_from_llrs(l, c).iter().map(|p| prior_moments(p, c)).unzip();
                    (m, v)
                });
                let o = lmmse_detect(inst, moments.as_ref().map(|(m, v)| (m.as_slice(), v.as_slice())), c, cfg)?;
                Ok(Detection {
                    decisions: o.decisions(c),
                    llrs: o.llrs,
                })
            }
            Detector::MapOracle { llr_clip } => {
                let o = map_oracle(inst, prior_llrs, c, *llr_clip)?;
                Ok(Detection {
                    decisions: o.decisions(),
                    llrs: o.llrs,
                })
            }
            Detector::Gepnet { model, .. } => {
                let o = gepnet_forward(model, inst, prior_llrs, c)?;
                Ok(Detection {
                    decisions: o.decisions(),
                    llrs: o.llrs(model.config.head, prior_llrs, c, model.config.ep.llr_clip),
                })
            }
        }
    }
}

/// Decoder-LLR range control settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScalerSpec {
    pub enabled: bool,
    /// Coverage `p_r` of the training-LLR range.
    pub p_r: f64,
    /// Fixed `r`; computed from synthetic training LLRs when absent.
    pub range: Option<f64>,
}

impl Default for ScalerSpec {
    fn default() -> Self {
        Self {
            enabled: true,
            p_r: 0.97,
            range: None,
        }
    }
}

impl ScalerSpec {
    /// The scaler for learned detectors (`None` when disabled).
    pub fn build(&self) -> Option<LlrScaler> {
        if !self.enabled {
            return None;
        }
        Some(match self.range {
            Some(r) => LlrScaler::new(r),
            None => LlrScaler::synthetic(&IaLut::standard(), self.p_r, 100_000, 0),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TurboConfig {
    /// Maximum turbo iterations `I`.
    pub iterations: usize,
    pub code: CodeSpec,
    /// Message length `N_b`.
    pub message_bits: usize,
    pub interleaver_seed: u64,
    pub scaler: ScalerSpec,
    /// Stop a point once the last iteration has this many word errors.
    pub word_error_target: Option<u64>,
    pub max_words: u64,
    /// Cap on simulated message bits per point.
    pub max_bits: u64,
    /// Words simulated between stopping checks.
    pub chunk_words: u64,
}

impl Default for TurboConfig {
    fn default() -> Self {
        Self {
            iterations: 2,
            code: CodeSpec::Convolutional(ConvCodeSpec::standard(Puncture::None)),
            message_bits: 128,
            interleaver_seed: 7,
            scaler: ScalerSpec::default(),
            word_error_target: Some(200),
            max_words: 2000,
            max_bits: 50_000_000,
            chunk_words: 50,
        }
    }
}

impl TurboConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::InvalidConfig("at least one turbo iteration is required".into()));
        }
        if self.message_bits == 0 || self.max_words == 0 || self.chunk_words == 0 {
            return Err(Error::InvalidConfig("message length, word budget and chunk size must be positive".into()));
        }
        if !(self.scaler.p_r > 0.0 && self.scaler.p_r <= 1.0) {
            return Err(Error::InvalidConfig(format!("p_r = {} outside (0, 1]", self.scaler.p_r)));
        }
        Ok(())
    }
}

/// Code, interleaver and slot layout shared by every word of a simulation.
#[derive(Clone, Debug)]
pub struct Link {
    pub channel: ChannelModelSpec,
    pub constellation: Constellation,
    pub code: ChannelCode,
    pub interleaver: Interleaver,
    /// Slots (channel uses) per codeword.
    pub slots: usize,
    /// Coded bits per slot, `K·Q`.
    pub bits_per_slot: usize,
}

impl Link {
    pub fn new(channel: ChannelModelSpec, modulation: Modulation, cfg: &TurboConfig) -> Result<Self> {
        channel.validate()?;
        cfg.validate()?;
        let constellation = modulation.constellation();
        let code = ChannelCode::new(&cfg.code, cfg.message_bits)?;
        let n_c = code.coded_len();
        let bits_per_slot = channel.k() * constellation.bits_per_symbol();
        Ok(Self {
            channel,
            constellation,
            interleaver: Interleaver::new(n_c, cfg.interleaver_seed),
            slots: n_c.div_ceil(bits_per_slot),
            bits_per_slot,
            code,
        })
    }
}

/// One transmitted codeword: message, coded bits and the received slots.
#[derive(Clone, Debug)]
pub struct WordInstance {
    pub message: Vec<u8>,
    /// Transmitted level index per real dimension, slot-major.
    pub symbols: Vec<Vec<usize>>,
    pub slots: Vec<RealChannelInstance>,
}

/// Draws word `index`; its randomness depends only on `(root, index)`.
pub fn draw_word(link: &Link, snr_db: f64, root: SeededRng, index: u64) -> Result<WordInstance> {
    let c = &link.constellation;
    let mut bits_rng = root.substream(Stream::Bits, index);
    let message: Vec<u8> = (0..link.code.message_len()).map(|_| bits_rng.random_range(0..2u8)).collect();
    let mut tx = link.interleaver.interleave(&link.code.encode(&message)?);
    tx.resize(link.slots * link.bits_per_slot, 0);
    for b in tx.iter_mut().skip(link.code.coded_len()) {
        *b = bits_rng.random_range(0..2u8);
    }
    let per_word = link.slots as u64;
    let mut symbols = Vec::with_capacity(link.slots);
    let mut slots = Vec::with_capacity(link.slots);
    for (s, chunk) in tx.chunks(link.bits_per_slot).enumerate() {
        let sub = index * per_word + s as u64;
        let h = generate_channel(&link.channel, &mut root.substream(Stream::Channel, sub))?;
        let idx = c.map_indices(chunk)?;
        let x: Vec<f64> = idx.iter().map(|&i| c.levels()[i]).collect();
        slots.push(apply_awgn(&h, &x, snr_db, c.es(), &mut root.substream(Stream::Noise, sub)));
        symbols.push(idx);
    }
    Ok(WordInstance { message, symbols, slots })
}

/// Per-iteration results of one word.
#[derive(Clone, Debug)]
pub struct IddTrace {
    /// Hard message decisions after each iteration.
    pub decisions: Vec<Vec<u8>>,
    /// Detector level decisions after each iteration (slot-major).
    pub symbol_decisions: Vec<Vec<Vec<usize>>>,
    /// Detector extrinsic LLRs (deinterleaved, coded order) per iteration.
    pub detector_llrs: Vec<Vec<f64>>,
    /// Decoder a-priori feedback (interleaved, padded) used by the next iteration.
    pub feedback: Vec<Vec<f64>>,
}

/// Runs `iterations` detector ↔ decoder exchanges on one word.
pub fn run_idd(link: &Link, word: &WordInstance, detector: &Detector, iterations: usize, scaler: Option<&LlrScaler>) -> Result<IddTrace> {
    let c = &link.constellation;
    let n_c = link.code.coded_len();
    let mut prior: Option<Vec<f64>> = None;
    let mut trace = IddTrace {
        decisions: Vec::with_capacity(iterations),
        symbol_decisions: Vec::with_capacity(iterations),
        detector_llrs: Vec::with_capacity(iterations),
        feedback: Vec::new(),
    };
    for it in 0..iterations {
        let mut llrs = Vec::with_capacity(link.slots * link.bits_per_slot);
        let mut dec = Vec::with_capacity(link.slots);
        for (s, inst) in word.slots.iter().enumerate() {
            let p = prior.as_ref().map(|p| &p[s * link.bits_per_slot..(s + 1) * link.bits_per_slot]);
            let d = detector.detect(inst, p, c)?;
            llrs.extend_from_slice(&d.llrs);
            dec.push(d.decisions);
        }
        llrs.truncate(n_c);
        let channel = link.interleaver.deinterleave(&llrs);
        let out = link.code.decode(&channel)?;
        trace.decisions.push(out.message_app.iter().map(|&l| u8::from(l > 0.0)).collect());
        trace.symbol_decisions.push(dec);
        trace.detector_llrs.push(channel);
        if it + 1 < iterations {
            let mut ext = out.coded_extrinsic;
            if detector.kind().is_learned() {
                if let Some(sc) = scaler {
                    sc.apply(&mut ext);
                }
            }
            let mut fb = link.interleaver.interleave(&ext);
            fb.resize(link.slots * link.bits_per_slot, 0.0);
            trace.feedback.push(fb.clone());
            prior = Some(fb);
        }
    }
    Ok(trace)
}

/// Complex-symbol errors: real dimensions `k` and `k + K/2` form one symbol.
pub fn complex_symbol_pairs(levels: &[usize]) -> Vec<(usize, usize)> {
    let h = levels.len() / 2;
    (0..h).map(|k| (levels[k], levels[k + h])).collect()
}

/// Simulates one SNR point; returns counters per turbo iteration.
///
/// Words are processed in fixed chunks whose counters are merged in word
/// order, so totals do not depend on the worker count.
pub fn simulate_point(link: &Link, detector: &Detector, cfg: &TurboConfig, snr_db: f64, root: SeededRng) -> Result<Vec<Metrics>> {
    let scaler = cfg.scaler.build();
    let max_words = cfg.max_words.min((cfg.max_bits / cfg.message_bits as u64).max(1));
    let mut totals = vec![Metrics::default(); cfg.iterations];
    let mut next = 0u64;
    while next < max_words {
        let end = (next + cfg.chunk_words).min(max_words);
        let parts: Vec<Vec<Metrics>> = (next..end)
            .into_par_iter()
            .map(|w| {
                let word = draw_word(link, snr_db, root, w)?;
                let t = run_idd(link, &word, detector, cfg.iterations, scaler.as_ref())?;
                let mut ms = vec![Metrics::default(); cfg.iterations];
                for (i, m) in ms.iter_mut().enumerate() {
                    m.record_word(&word.message, &t.decisions[i]);
                    for (truth, dec) in word.symbols.iter().zip(&t.symbol_decisions[i]) {
                        m.record_symbols(&complex_symbol_pairs(truth), &complex_symbol_pairs(dec));
                    }
                }
                Ok(ms)
            })
            .collect::<Result<_>>()?;
        for p in &parts {
            for (t, m) in totals.iter_mut().zip(p) {
                t.merge(m);
            }
        }
        next = end;
        if let Some(target) = cfg.word_error_target {
            if totals.last().is_some_and(|m| m.word_errors >= target) {
                break;
            }
        }
    }
    Ok(totals)
}

/// Uncoded symbol error counting without priors over `vectors` channel uses.
pub fn simulate_uncoded(
    channel: &ChannelModelSpec,
    c: &Constellation,
    detector: &Detector,
    snr_db: f64,
    vectors: u64,
    root: SeededRng,
) -> Result<Metrics> {
    let parts: Vec<Metrics> = (0..vectors)
        .into_par_iter()
        .map(|i| {
            let h = generate_channel(channel, &mut root.substream(Stream::Channel, i))?;
            let mut rng = root.substream(Stream::Bits, i);
            let idx: Vec<usize> = (0..h.cols()).map(|_| rng.random_range(0..c.size())).collect();
            let x: Vec<f64> = idx.iter().map(|&s| c.levels()[s]).collect();
            let inst = apply_awgn(&h, &x, snr_db, c.es(), &mut root.substream(Stream::Noise, i));
            let d = detector.detect(&inst, None, c)?;
            let mut m = Metrics::default();
            m.record_symbols(&complex_symbol_pairs(&idx), &complex_symbol_pairs(&d.decisions));
            let truth_bits = c.demap_indices(&idx);
            let dec_bits = c.demap_indices(&d.decisions);
            m.record_word(&truth_bits, &dec_bits);
            Ok(m)
        })
        .collect::<Result<_>>()?;
    let mut total = Metrics::default();
    for p in &parts {
        total.merge(p);
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn link(iterations: usize) -> (Link, TurboConfig) {
        let cfg = TurboConfig {
            iterations,
            message_bits: 32,
            max_words: 20,
            chunk_words: 7,
            ..Default::default()
        };
        (Link::new(ChannelModelSpec::rayleigh(2, 2), Modulation::Qpsk, &cfg).unwrap(), cfg)
    }

    #[test]
    fn slot_packing() {
        let (l, _) = link(1);
        assert_eq!(l.code.coded_len(), 2 * (32 + 6));
        assert_eq!(l.bits_per_slot, 4);
        assert_eq!(l.slots, 19);
    }

    #[test]
    fn noiseless_word_decodes_first_iteration() {
        let (l, _) = link(2);
        let w = draw_word(&l, f64::INFINITY, SeededRng::new(1), 0).unwrap();
        let t = run_idd(&l, &w, &Detector::Ep(EpConfig::default()), 2, None).unwrap();
        assert_eq!(t.decisions[0], w.message);
        assert_eq!(t.symbol_decisions[0], w.symbols);
    }

    #[test]
    fn single_iteration_is_plain_detection_and_decoding() {
        let (l, _) = link(1);
        let w = draw_word(&l, 2.0, SeededRng::new(2), 3).unwrap();
        let det = Detector::Ep(EpConfig::default());
        let t = run_idd(&l, &w, &det, 1, None).unwrap();
        let mut llrs = Vec::new();
        for s in &w.slots {
            llrs.extend(det.detect(s, None, &l.constellation).unwrap().llrs);
        }
        llrs.truncate(l.code.coded_len());
        let out = l.code.decode(&l.interleaver.deinterleave(&llrs)).unwrap();
        let d: Vec<u8> = out.message_app.iter().map(|&v| u8::from(v > 0.0)).collect();
        assert_eq!(t.decisions[0], d);
        assert!(t.feedback.is_empty());
    }

    #[test]
    fn point_is_thread_independent() {
        let (l, cfg) = link(2);
        let det = Detector::Ep(EpConfig::default());
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| simulate_point(&l, &det, &cfg, 3.0, SeededRng::new(9)).unwrap())
        };
        assert_eq!(run(1), run(3));
    }
}
