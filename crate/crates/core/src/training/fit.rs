use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::{loss_app, loss_ext, TrainingSample, TrainingSpec, PruneTraining};
use crate::error::{Error, Result};
use crate::gepnet::{gepnet_forward, gepnet_forward_recorded, posterior_log_weights, ArchiveMeta, Gepnet, GepnetConfig, OutputHead, WeightArchive};
use crate::gnn::{backward, Adam, GnnParams};
use crate::modem::Constellation;
use crate::numerics::{SeededRng, Stream};

/// Training objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    /// Symbol cross-entropy on `p̂_G` against the transmitted symbols.
    App,
    /// Soft-bit cross-entropy of the `q_G` LLRs against the extrinsic labels.
    Ext,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub archive: WeightArchive,
    pub history: Vec<EpochStats>,
}

fn sample_loss_and_dlogits(s: &TrainingSample, c: &Constellation, kind: LossKind, logits: &[f64], priors: Option<&[crate::modem::SymbolPdf]>) -> Result<(f64, Vec<f64>)> {
    let mut d = vec![0.0; logits.len()];
    let loss = match kind {
        LossKind::App => {
            let w = posterior_log_weights(logits, priors, c.size());
            loss_app(&w, &s.symbols, c.size(), &mut d)
        }
        LossKind::Ext => {
            let labels = s.ext_labels.as_ref().ok_or_else(|| Error::InvalidConfig("sample has no extrinsic labels".into()))?;
            loss_ext(logits, labels, c, &mut d)
        }
    };
    Ok((loss, d))
}

/// Loss of one sample; its gradient is accumulated into `grad`.
pub fn sample_gradient(model: &Gepnet, s: &TrainingSample, c: &Constellation, kind: LossKind, grad: &mut [f64]) -> Result<f64> {
    let (out, tape) = gepnet_forward_recorded(model, &s.inst, Some(&s.prior_llrs), c)?;
    let (loss, d) = sample_loss_and_dlogits(s, c, kind, &out.logits, out.priors.as_deref())?;
    let mut dl: Vec<Option<&[f64]>> = vec![None; tape.tapes.len()];
    if let Some(last) = dl.last_mut() {
        *last = Some(&d);
    }
    backward(&model.params, &tape.graph, &tape.tapes, &dl, grad);
    Ok(loss)
}

/// Mean loss over `samples` (forward only).
pub fn validation_loss(model: &Gepnet, samples: &[TrainingSample], c: &Constellation, kind: LossKind) -> Result<f64> {
    if samples.is_empty() {
        return Ok(f64::NAN);
    }
    let losses: Vec<f64> = samples
        .par_iter()
        .map(|s| {
            let out = gepnet_forward(model, &s.inst, Some(&s.prior_llrs), c)?;
            sample_loss_and_dlogits(s, c, kind, &out.logits, out.priors.as_deref()).map(|r| r.0)
        })
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / samples.len() as f64)
}

/// Mini-batch Adam. Per-sample gradients are computed in parallel and summed in
/// sample order, so results do not depend on the thread count. Returns the
/// parameters with the lowest validation loss (training loss when `val` is empty).
#[allow(clippy::too_many_arguments)]
pub fn train(
    mut model: Gepnet,
    train_set: &[TrainingSample],
    val: &[TrainingSample],
    c: &Constellation,
    kind: LossKind,
    epochs: usize,
    batch_size: usize,
    lr: f64,
    shuffle: SeededRng,
    on_epoch: &mut dyn FnMut(&EpochStats),
) -> Result<(GnnParams, Option<f64>, Vec<EpochStats>)> {
    if epochs == 0 {
        return Ok((model.params, None, Vec::new()));
    }
    if train_set.is_empty() || batch_size == 0 {
        return Err(Error::InvalidConfig("training needs samples and a positive batch size".into()));
    }
    let mut adam = Adam::new(model.params.len(), lr);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut best: Option<(f64, GnnParams)> = None;
    let mut history = Vec::with_capacity(epochs);
    let mut grad = model.params.zero_grad();
    for epoch in 0..epochs {
        order.sort_unstable();
        order.shuffle(&mut shuffle.substream(Stream::Shuffle, epoch as u64));
        let mut total = 0.0;
        for batch in order.chunks(batch_size) {
            let parts: Vec<(f64, Vec<f64>)> = batch
                .par_iter()
                .map(|&i| {
                    let mut g = model.params.zero_grad();
                    sample_gradient(&model, &train_set[i], c, kind, &mut g).map(|l| (l, g))
                })
                .collect::<Result<_>>()?;
            grad.iter_mut().for_each(|v| *v = 0.0);
            let mut batch_loss = 0.0;
            for (l, g) in &parts {
                batch_loss += l;
                for (a, b) in grad.iter_mut().zip(g) {
                    *a += b;
                }
            }
            if !batch_loss.is_finite() || grad.iter().any(|v| !v.is_finite()) {
                return Err(Error::Diverged { epoch, loss: batch_loss });
            }
            let scale = 1.0 / batch.len() as f64;
            grad.iter_mut().for_each(|v| *v *= scale);
            adam.step(&mut model.params.data, &grad);
            total += batch_loss;
        }
        let train_loss = total / train_set.len() as f64;
        let val_loss = if val.is_empty() { train_loss } else { validation_loss(&model, val, c, kind)? };
        if !val_loss.is_finite() {
            return Err(Error::Diverged { epoch, loss: val_loss });
        }
        let stats = EpochStats { epoch, train_loss, val_loss };
        on_epoch(&stats);
        history.push(stats);
        if best.as_ref().is_none_or(|(b, _)| val_loss < *b) {
            best = Some((val_loss, model.params.clone()));
        }
    }
    let (v, p) = best.expect("at least one epoch");
    Ok((p, Some(v), history))
}

/// Step 1: APP-GEPNet trained on `p̂_G` with the symbol cross-entropy.
/// `config.alpha` is the inference pruning factor recorded in the archive.
pub fn train_step1(
    spec: &TrainingSpec,
    config: &GepnetConfig,
    train_set: &[TrainingSample],
    val: &[TrainingSample],
    on_epoch: &mut dyn FnMut(&EpochStats),
) -> Result<TrainOutcome> {
    spec.validate()?;
    let c = spec.modulation.constellation();
    let root = SeededRng::new(spec.seed);
    let params = GnnParams::glorot(config.gnn, c.size(), &mut root.substream(Stream::Weights, 0))?;
    let mut stored = config.clone();
    stored.head = OutputHead::AppMinusPrior;
    fit(spec, stored, params, train_set, val, LossKind::App, spec.epochs, 1, on_epoch)
}

/// Step 3: EXT-GEPNet initialized from `init` and trained on the extrinsic labels.
pub fn train_step3(
    spec: &TrainingSpec,
    init: &WeightArchive,
    train_set: &[TrainingSample],
    val: &[TrainingSample],
    on_epoch: &mut dyn FnMut(&EpochStats),
) -> Result<TrainOutcome> {
    spec.validate()?;
    let mut stored = init.meta.config.clone();
    stored.gnn = init.params.hp;
    stored.head = OutputHead::Ext;
    fit(spec, stored, init.params.clone(), train_set, val, LossKind::Ext, spec.step3_epochs, 3, on_epoch)
}

#[allow(clippy::too_many_arguments)]
fn fit(
    spec: &TrainingSpec,
    stored: GepnetConfig,
    params: GnnParams,
    train_set: &[TrainingSample],
    val: &[TrainingSample],
    kind: LossKind,
    epochs: usize,
    step: u8,
    on_epoch: &mut dyn FnMut(&EpochStats),
) -> Result<TrainOutcome> {
    let c = spec.modulation.constellation();
    let mut train_cfg = stored.clone();
    if spec.prune_training == PruneTraining::PostHoc {
        train_cfg.alpha = 0.0;
    }
    let model = Gepnet::new(train_cfg, params)?;
    let shuffle = SeededRng::new(spec.seed).child(u64::from(step));
    let (params, best_val_loss, history) = train(model, train_set, val, &c, kind, epochs, spec.batch_size, spec.lr, shuffle, on_epoch)?;
    let meta = ArchiveMeta {
        step,
        snr_train_db: spec.snr_train_db,
        seed: spec.seed,
        config: stored,
        epochs: history.len(),
        best_val_loss,
    };
    Ok(TrainOutcome {
        archive: WeightArchive::new(meta, params),
        history,
    })
}
