//! Experiment configuration (TOML), the training/evaluation pipelines and
//! result emission (CSV rows plus a JSON manifest).

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::channel::{ChannelKind, ChannelModelSpec};
use crate::complexity::{complexity_terms, Algorithm, ComplexityQuery};
use crate::error::Error;
use crate::gepnet::{GepnetConfig, WeightArchive, ARCHIVE_EXTENSION};
use crate::modem::Modulation;
use crate::numerics::SeededRng;
use crate::training::{
    generate_dataset, generate_ext_labels, read_dataset, train_step1, train_step3, write_dataset, EpochStats, IaLut, TrainingSpec,
};
use crate::turbo::{simulate_point, simulate_uncoded, Detector, DetectorKind, Link, Metrics, TurboConfig};

/// Extension of dataset cache files.
pub const DATASET_EXTENSION: &str = "gepd";

/// Prefix of the environment variables that override command-line flags.
pub const ENV_PREFIX: &str = "TURBO_GEP_";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemConfig {
    pub n_r: usize,
    pub n_t: usize,
    pub modulation: Modulation,
    pub channel: ChannelKind,
    pub snr_db: Vec<f64>,
    pub seed: u64,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            n_r: 4,
            n_t: 4,
            modulation: Modulation::Qpsk,
            channel: ChannelKind::IidRayleigh,
            snr_db: vec![8.0],
            seed: 1,
        }
    }
}

impl SystemConfig {
    pub fn channel_spec(&self) -> ChannelModelSpec {
        ChannelModelSpec {
            kind: self.channel,
            n_r: self.n_r,
            n_t: self.n_t,
        }
    }
}

/// Archive locations of the learned detectors; unset entries default to
/// `<out-dir>/{app,ia0,ext}.gepw`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchivePaths {
    pub app: Option<PathBuf>,
    pub ia0: Option<PathBuf>,
    pub ext: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateConfig {
    /// Channel uses per SNR point for uncoded evaluation.
    pub vectors: u64,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        Self { vectors: 25_000 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("results") }
    }
}

/// Complexity queries; each algorithm is evaluated at every listed `η`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ComplexityConfig {
    pub algorithms: Vec<Algorithm>,
    pub n: f64,
    pub k: f64,
    pub m: f64,
    pub t: f64,
    pub i: f64,
    pub n_u: f64,
    pub n_h1: f64,
    pub n_h2: f64,
    pub l: f64,
    pub eta: Vec<f64>,
}

impl Default for ComplexityConfig {
    fn default() -> Self {
        let q = ComplexityQuery::example(Algorithm::Ep, 1.0);
        Self {
            algorithms: vec![Algorithm::MmsePic, Algorithm::Ep, Algorithm::Dep, Algorithm::Gepnet],
            n: q.n,
            k: q.k,
            m: q.m,
            t: q.t,
            i: q.i,
            n_u: q.n_u,
            n_h1: q.n_h1,
            n_h2: q.n_h2,
            l: q.l,
            eta: vec![1.0, 0.410, 0.313, 0.186, 0.066],
        }
    }
}

/// Whole experiment file. Every section is optional.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: SystemConfig,
    pub detectors: Vec<DetectorKind>,
    pub archives: ArchivePaths,
    pub gepnet: GepnetConfig,
    pub turbo: TurboConfig,
    /// `modulation` and `channel` are taken from `[system]`.
    pub training: TrainingSpec,
    pub evaluate: EvaluateConfig,
    pub complexity: ComplexityConfig,
    pub output: OutputConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ExperimentError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ExperimentError::Config(one_line(&e.to_string())))?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let cfg = |e: Error| ExperimentError::Config(e.to_string());
        self.system.channel_spec().validate().map_err(cfg)?;
        if self.system.snr_db.is_empty() || self.system.snr_db.iter().any(|s| s.is_nan()) {
            return Err(ExperimentError::Config("system.snr_db must be a non-empty list of numbers".into()));
        }
        self.gepnet.validate().map_err(cfg)?;
        self.turbo.validate().map_err(cfg)?;
        self.training_spec().validate().map_err(cfg)?;
        if self.evaluate.vectors == 0 {
            return Err(ExperimentError::Config("evaluate.vectors must be positive".into()));
        }
        Ok(())
    }

    pub fn training_spec(&self) -> TrainingSpec {
        let mut t = self.training.clone();
        t.modulation = self.system.modulation;
        t.channel = self.system.channel_spec();
        t
    }

    /// Detectors to evaluate (all non-learned ones when the list is empty).
    pub fn detector_list(&self) -> Vec<DetectorKind> {
        if self.detectors.is_empty() {
            vec![DetectorKind::Ep, DetectorKind::Lmmse]
        } else {
            self.detectors.clone()
        }
    }
}

/// Failure classes of a run, each with its process exit code.
#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("missing archive: {}", .0.display())]
    MissingArchive(PathBuf),
    #[error("runtime error: {0}")]
    Runtime(#[from] Error),
}

impl ExperimentError {
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Config(_) => 2,
            ExperimentError::MissingArchive(_) => 3,
            ExperimentError::Runtime(_) => 1,
        }
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn io_err(e: std::io::Error) -> ExperimentError {
    ExperimentError::Runtime(Error::Io(e))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    TrainStep1,
    GenExtLabels,
    TrainStep3,
    Evaluate,
    Sweep,
    Complexity,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::TrainStep1 => "train-step1",
            Command::GenExtLabels => "gen-ext-labels",
            Command::TrainStep3 => "train-step3",
            Command::Evaluate => "evaluate",
            Command::Sweep => "sweep",
            Command::Complexity => "complexity",
        }
    }
}

/// Overrides coming from flags or environment variables.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub threads: Option<usize>,
    pub archive: Option<PathBuf>,
    /// `train-step1` only: train the prior-free variant (`I_A = 0`).
    pub ia_zero: bool,
    /// Print per-epoch progress to stderr.
    pub verbose: bool,
}

/// One normative CSV row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub snr_db: f64,
    pub detector: String,
    pub turbo_iter: usize,
    pub ser: f64,
    pub ber: f64,
    pub wer: f64,
    pub n_bits: u64,
    pub n_errors: u64,
    pub stderr_est: f64,
    pub seed: u64,
    pub git_rev: String,
}

impl ResultRow {
    pub fn new(snr_db: f64, detector: DetectorKind, turbo_iter: usize, m: &Metrics, seed: u64, git_rev: &str) -> Self {
        Self {
            snr_db,
            detector: detector.name().to_string(),
            turbo_iter,
            ser: m.ser(),
            ber: m.ber(),
            wer: m.wer(),
            n_bits: m.bits,
            n_errors: m.bit_errors,
            stderr_est: m.ber_stderr(),
            seed,
            git_rev: git_rev.to_string(),
        }
    }
}

/// Normative column order.
pub const CSV_COLUMNS: [&str; 11] = [
    "snr_db", "detector", "turbo_iter", "ser", "ber", "wer", "n_bits", "n_errors", "stderr_est", "seed", "git_rev",
];

pub fn rows_to_csv(rows: &[ResultRow]) -> Result<Vec<u8>, ExperimentError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    if rows.is_empty() {
        w.write_record(CSV_COLUMNS).map_err(|e| ExperimentError::Runtime(Error::Malformed(e.to_string())))?;
    }
    for r in rows {
        w.serialize(r).map_err(|e| ExperimentError::Runtime(Error::Malformed(e.to_string())))?;
    }
    w.into_inner().map_err(|e| ExperimentError::Runtime(Error::Malformed(e.to_string())))
}

/// Revision recorded in results: `TURBO_GEP_GIT_REV`, else `git rev-parse`, else `unknown`.
pub fn git_rev() -> String {
    if let Ok(v) = std::env::var(format!("{ENV_PREFIX}GIT_REV")) {
        return v;
    }
    std::process::Command::new("git")
        .args(["rev-parse", "--short=12", "HEAD"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".into())
}

/// Everything a finished run produced.
#[derive(Clone, Debug, Default, Serialize)]
pub struct RunSummary {
    pub command: String,
    pub outputs: Vec<PathBuf>,
    pub rows: Vec<ResultRow>,
    pub lines: Vec<String>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    crate_version: &'a str,
    git_rev: String,
    seed: u64,
    threads: usize,
    started_unix: u64,
    finished_unix: u64,
    outputs: &'a [PathBuf],
    config: &'a ExperimentConfig,
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

/// Runs `cmd` inside a pool of `threads` workers and writes the manifest.
pub fn run(cmd: Command, mut cfg: ExperimentConfig, opts: &RunOptions) -> Result<RunSummary, ExperimentError> {
    if let Some(s) = opts.seed {
        cfg.system.seed = s;
        cfg.training.seed = s;
    }
    if let Some(d) = &opts.out_dir {
        cfg.output.dir = d.clone();
    }
    cfg.validate()?;
    if opts.threads == Some(0) {
        return Err(ExperimentError::Config("--threads must be positive".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.threads.unwrap_or(0))
        .build()
        .map_err(|e| ExperimentError::Config(e.to_string()))?;
    let threads = pool.current_num_threads();
    std::fs::create_dir_all(&cfg.output.dir).map_err(io_err)?;
    let started = unix_now();
    let mut summary = pool.install(|| match cmd {
        Command::TrainStep1 => run_train_step1(&cfg, opts),
        Command::GenExtLabels => run_gen_labels(&cfg, opts),
        Command::TrainStep3 => run_train_step3(&cfg, opts),
        Command::Evaluate => run_results(&cfg, opts, false),
        Command::Sweep => run_results(&cfg, opts, true),
        Command::Complexity => run_complexity(&cfg),
    })?;
    summary.command = cmd.name().to_string();
    let manifest_path = cfg.output.dir.join(format!("{}.manifest.json", cmd.name()));
    let manifest = Manifest {
        command: cmd.name(),
        crate_version: env!("CARGO_PKG_VERSION"),
        git_rev: git_rev(),
        seed: cfg.system.seed,
        threads,
        started_unix: started,
        finished_unix: unix_now(),
        outputs: &summary.outputs,
        config: &cfg,
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| ExperimentError::Runtime(Error::Malformed(e.to_string())))?;
    std::fs::write(&manifest_path, text).map_err(io_err)?;
    summary.outputs.push(manifest_path);
    Ok(summary)
}

fn archive_path(cfg: &ExperimentConfig, kind: DetectorKind) -> PathBuf {
    let (set, name) = match kind {
        DetectorKind::GepnetApp => (&cfg.archives.app, "app"),
        DetectorKind::GepnetIa0 => (&cfg.archives.ia0, "ia0"),
        _ => (&cfg.archives.ext, "ext"),
    };
    set.clone().unwrap_or_else(|| cfg.output.dir.join(format!("{name}.{ARCHIVE_EXTENSION}")))
}

/// Loads an archive, checking it against the configured GNN sizes.
pub fn load_archive(path: &Path, cfg: &ExperimentConfig) -> Result<WeightArchive, ExperimentError> {
    if !path.is_file() {
        return Err(ExperimentError::MissingArchive(path.to_path_buf()));
    }
    let m = cfg.system.modulation.constellation().size();
    WeightArchive::load(path, Some((&cfg.gepnet.gnn, m))).map_err(|e| match e {
        Error::ShapeMismatch { .. } => ExperimentError::Config(format!("{} does not match [gepnet.gnn]: {e}", path.display())),
        other => ExperimentError::Runtime(other),
    })
}

/// Builds the detector for `kind`; learned detectors read their archive.
pub fn build_detector(kind: DetectorKind, cfg: &ExperimentConfig, archive_override: Option<&Path>) -> Result<Detector, ExperimentError> {
    Ok(match kind {
        DetectorKind::Ep => Detector::Ep(cfg.gepnet.ep.clone()),
        DetectorKind::Lmmse => Detector::Lmmse(cfg.gepnet.ep.clone()),
        DetectorKind::MapOracle => Detector::MapOracle { llr_clip: cfg.gepnet.ep.llr_clip },
        learned => {
            let path = archive_override.map(Path::to_path_buf).unwrap_or_else(|| archive_path(cfg, learned));
            let archive = load_archive(&path, cfg)?;
            let mut model = archive.model()?;
            model.config.ep = cfg.gepnet.ep.clone();
            model.config.alpha = cfg.gepnet.alpha;
            Detector::gepnet(learned, model)?
        }
    })
}

fn epoch_logger(verbose: bool, label: &'static str) -> impl FnMut(&EpochStats) {
    move |s: &EpochStats| {
        if verbose {
            eprintln!("[{label}] epoch {} train {:.6} val {:.6}", s.epoch, s.train_loss, s.val_loss);
        }
    }
}

fn history_csv(history: &[EpochStats]) -> String {
    let mut s = String::from("epoch,train_loss,val_loss\n");
    for h in history {
        s.push_str(&format!("{},{},{}\n", h.epoch, h.train_loss, h.val_loss));
    }
    s
}

fn write(path: PathBuf, bytes: impl AsRef<[u8]>, outputs: &mut Vec<PathBuf>) -> Result<(), ExperimentError> {
    std::fs::write(&path, bytes).map_err(io_err)?;
    outputs.push(path);
    Ok(())
}

fn run_train_step1(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunSummary, ExperimentError> {
    let mut spec = cfg.training_spec();
    let name = if opts.ia_zero {
        spec.ia_values = vec![0.0];
        "ia0"
    } else {
        "app"
    };
    let lut = IaLut::build(128)?;
    let root = SeededRng::new(spec.seed);
    let train_set = generate_dataset(&spec, &lut, spec.step1_samples, root.child(1))?;
    let val = generate_dataset(&spec, &lut, spec.val_samples, root.child(2))?;
    let dir = &cfg.output.dir;
    let mut summary = RunSummary::default();
    if !train_set.is_empty() {
        write_dataset(&dir.join(format!("step1_{name}_train.{DATASET_EXTENSION}")), &train_set)?;
        summary.outputs.push(dir.join(format!("step1_{name}_train.{DATASET_EXTENSION}")));
    }
    let out = train_step1(&spec, &cfg.gepnet, &train_set, &val, &mut epoch_logger(opts.verbose, "step1"))?;
    let path = opts.archive.clone().unwrap_or_else(|| dir.join(format!("{name}.{ARCHIVE_EXTENSION}")));
    out.archive.save(&path)?;
    summary.outputs.push(path.clone());
    write(dir.join(format!("history_step1_{name}.csv")), history_csv(&out.history), &mut summary.outputs)?;
    summary.lines.push(format!("wrote {} ({} epochs)", path.display(), out.history.len()));
    Ok(summary)
}

fn step1_archive(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<WeightArchive, ExperimentError> {
    let path = opts.archive.clone().unwrap_or_else(|| archive_path(cfg, DetectorKind::GepnetApp));
    load_archive(&path, cfg)
}

fn label_paths(cfg: &ExperimentConfig) -> (PathBuf, PathBuf) {
    let d = &cfg.output.dir;
    (
        d.join(format!("labels_train.{DATASET_EXTENSION}")),
        d.join(format!("labels_val.{DATASET_EXTENSION}")),
    )
}

fn run_gen_labels(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunSummary, ExperimentError> {
    let spec = cfg.training_spec();
    let archive = step1_archive(cfg, opts)?;
    let mut model = archive.model()?;
    model.config.ep = cfg.gepnet.ep.clone();
    let c = spec.modulation.constellation();
    let lut = IaLut::build(128)?;
    let root = SeededRng::new(spec.seed);
    let mut train_set = generate_dataset(&spec, &lut, spec.step2_samples, root.child(3))?;
    let mut val = generate_dataset(&spec, &lut, spec.val_samples, root.child(4))?;
    generate_ext_labels(&model, &mut train_set, &c)?;
    generate_ext_labels(&model, &mut val, &c)?;
    let (tp, vp) = label_paths(cfg);
    let mut summary = RunSummary::default();
    for (p, d) in [(tp, &train_set), (vp, &val)] {
        if d.is_empty() {
            continue;
        }
        write_dataset(&p, d)?;
        summary.lines.push(format!("wrote {} ({} vectors)", p.display(), d.len()));
        summary.outputs.push(p);
    }
    Ok(summary)
}

fn run_train_step3(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunSummary, ExperimentError> {
    let spec = cfg.training_spec();
    let init = step1_archive(cfg, opts)?;
    let (tp, vp) = label_paths(cfg);
    if !tp.is_file() {
        return Err(ExperimentError::Config(format!("{} not found; run gen-ext-labels first", tp.display())));
    }
    let train_set = read_dataset(&tp)?;
    let val = if vp.is_file() { read_dataset(&vp)? } else { Vec::new() };
    let out = train_step3(&spec, &init, &train_set, &val, &mut epoch_logger(opts.verbose, "step3"))?;
    let path = archive_path(cfg, DetectorKind::ExtGepnet);
    out.archive.save(&path)?;
    let mut summary = RunSummary::default();
    summary.outputs.push(path.clone());
    write(cfg.output.dir.join("history_step3.csv"), history_csv(&out.history), &mut summary.outputs)?;
    summary.lines.push(format!("wrote {} ({} epochs)", path.display(), out.history.len()));
    Ok(summary)
}

/// Result rows for every configured SNR and detector. All detectors at one
/// SNR see the same words, channels and noise.
pub fn result_rows(cfg: &ExperimentConfig, opts: &RunOptions, coded: bool) -> Result<Vec<ResultRow>, ExperimentError> {
    let kinds = cfg.detector_list();
    let learned = kinds.iter().filter(|k| k.is_learned()).count();
    if opts.archive.is_some() && learned != 1 {
        return Err(ExperimentError::Config("--archive needs exactly one learned detector in the list".into()));
    }
    let detectors = kinds
        .iter()
        .map(|&k| build_detector(k, cfg, if k.is_learned() { opts.archive.as_deref() } else { None }))
        .collect::<Result<Vec<_>, _>>()?;
    let rev = git_rev();
    let seed = cfg.system.seed;
    let channel = cfg.system.channel_spec();
    let link = if coded { Some(Link::new(channel, cfg.system.modulation, &cfg.turbo)?) } else { None };
    let c = cfg.system.modulation.constellation();
    let mut rows = Vec::new();
    for (si, &snr) in cfg.system.snr_db.iter().enumerate() {
        let root = SeededRng::new(seed).child(si as u64);
        for (kind, det) in kinds.iter().zip(&detectors) {
            match &link {
                Some(link) => {
                    for (it, m) in simulate_point(link, det, &cfg.turbo, snr, root)?.iter().enumerate() {
                        rows.push(ResultRow::new(snr, *kind, it + 1, m, seed, &rev));
                    }
                }
                None => {
                    let m = simulate_uncoded(&channel, &c, det, snr, cfg.evaluate.vectors, root)?;
                    rows.push(ResultRow::new(snr, *kind, 0, &m, seed, &rev));
                }
            }
        }
    }
    Ok(rows)
}

fn run_results(cfg: &ExperimentConfig, opts: &RunOptions, coded: bool) -> Result<RunSummary, ExperimentError> {
    let rows = result_rows(cfg, opts, coded)?;
    let name = if coded { "sweep.csv" } else { "evaluate.csv" };
    let mut summary = RunSummary::default();
    write(cfg.output.dir.join(name), rows_to_csv(&rows)?, &mut summary.outputs)?;
    for r in &rows {
        summary.lines.push(format!(
            "snr {:>6.2} dB  {:<11} iter {}  SER {:.4e}  BER {:.4e}  WER {:.4e}",
            r.snr_db, r.detector, r.turbo_iter, r.ser, r.ber, r.wer
        ));
    }
    summary.rows = rows;
    Ok(summary)
}

fn run_complexity(cfg: &ExperimentConfig) -> Result<RunSummary, ExperimentError> {
    let q = &cfg.complexity;
    let mut csv = String::from("algorithm,n,k,m,t,i,eta,c_first,c_later,total_rvm\n");
    let mut summary = RunSummary::default();
    for &alg in &q.algorithms {
        let etas: &[f64] = if alg == Algorithm::Gepnet { &q.eta } else { &[1.0] };
        for &eta in etas {
            let query = ComplexityQuery {
                algorithm: alg,
                n: q.n,
                k: q.k,
                m: q.m,
                t: q.t,
                i: q.i,
                n_u: q.n_u,
                n_h1: q.n_h1,
                n_h2: q.n_h2,
                l: q.l,
                eta,
            };
            let (c1, ci) = complexity_terms(&query).map_err(|e| ExperimentError::Config(e.to_string()))?;
            let total = c1 + (q.i - 1.0) * ci;
            let name = serde_json::to_value(alg).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
            csv.push_str(&format!("{name},{},{},{},{},{},{eta},{c1},{ci},{total}\n", q.n, q.k, q.m, q.t, q.i));
            summary.lines.push(format!("{name:<9} eta {eta:<6} total {total:.4e} RVM"));
        }
    }
    write(cfg.output.dir.join("complexity.csv"), csv, &mut summary.outputs)?;
    Ok(summary)
}
