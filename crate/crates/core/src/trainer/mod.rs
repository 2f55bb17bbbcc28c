//! Pre-training, two-stage fine-tuning and the alternating protocol in which
//! the denoiser and the quality estimator take turns being updated.

mod data;
mod log;
mod protocol;
mod state;

pub use data::{epoch_order, BatchStream, TrainData, Utterance};
pub use log::{Phase, StepLog, StepRecord, STEP_LOG_HEADER};
pub use protocol::{ProtocolSpec, DEFAULT_MINIBATCH};
pub use state::{
    load_checkpoint, meta_path, save_checkpoint, sha256_file, CheckpointMeta, Counters, RunInfo, Streams,
    TrainState,
};

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::autodiff::{Adam, Graph, ParamGrads, ParamStore};
use crate::dsp::{Spectrogram, Stft};
use crate::error::{Error, Result};
use crate::exec::ExecMode;
use crate::losses::{self, LossConfig, LossKind};
use crate::metrics::{seg_snr, EvalRow, QualityOracle, SegSnrConfig, SegSnrOracle};
use crate::mixer::Kind;
use crate::models::{Bind, DenoiserInput, DenoiserNet, NormStats, QualityNet};

/// Fixed ingredients shared by every training step.
#[derive(Debug)]
pub struct TrainContext {
    pub stft: Stft,
    pub loss: LossConfig,
    pub seg: SegSnrConfig,
    pub minibatch: usize,
    pub exec: ExecMode,
}

impl TrainContext {
    pub fn oracle(&self) -> SegSnrOracle {
        SegSnrOracle { cfg: self.seg }
    }
}

/// Per-epoch summary of a supervised stage; epoch 0 is the initial state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochReport {
    pub epoch: usize,
    pub train_loss: Option<f64>,
    pub val_loss: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Objective {
    Synth,
    Total,
}

fn synth_refs(u: &Utterance) -> Result<(&Spectrogram, &Spectrogram)> {
    match (&u.clean, &u.clean_rev) {
        (Some((_, s)), Some((_, r))) => Ok((s, r)),
        _ => Err(Error::domain("j_synth", format!("utterance {} has no clean reference", u.id()))),
    }
}

fn denoiser_grad(state: &TrainState, ctx: &TrainContext, u: &Utterance, obj: Objective) -> Result<(f64, ParamGrads<f32>)> {
    let input = DenoiserInput::<f32>::from_spectrogram(&u.y, &state.norm)?;
    let mut g = Graph::new();
    let out = state.denoiser.forward(&mut g, &input, Bind::Train)?;
    let synth = match u.kind() {
        Kind::Synthetic => {
            let (clean, rev) = synth_refs(u)?;
            Some(losses::synth_var(&mut g, out.est_re, out.est_im, clean, rev, &ctx.loss)?)
        }
        Kind::Real => None,
    };
    let loss = match obj {
        Objective::Synth => synth.ok_or_else(|| Error::domain("j_synth", "real utterance in supervised stage"))?,
        Objective::Total => {
            let amp = g.complex_abs(out.est_re, out.est_im)?;
            let q = state.quality.forward(&mut g, amp, &state.norm, Bind::Frozen)?;
            losses::total_var(&mut g, u.kind(), synth, q, &ctx.loss)?
        }
    };
    let grads = g.gradients(loss)?;
    Ok((g.scalar(loss).into(), g.param_grads(&grads)))
}

/// Enhanced amplitude of one utterance under a frozen denoiser, with its
/// oracle label.
#[derive(Clone, Debug)]
pub struct QualitySample {
    pub frames: usize,
    pub amplitude: Vec<f32>,
    pub label: f64,
}

pub fn quality_sample(state: &TrainState, ctx: &TrainContext, u: &Utterance) -> Result<QualitySample> {
    let (_, est) = state.denoiser.enhance(&u.y, &state.norm)?;
    let enhanced = ctx.stft.synthesize(&est, u.noisy.len())?;
    let (reference, _) = u
        .clean_rev
        .as_ref()
        .ok_or_else(|| Error::domain("quality_label", format!("utterance {} has no reference", u.id())))?;
    let label = ctx.oracle().score(reference, &enhanced)?.value();
    Ok(QualitySample {
        frames: est.frames(),
        amplitude: est.magnitude().into_iter().map(|v| v as f32).collect(),
        label,
    })
}

fn quality_grad(state: &TrainState, s: &QualitySample) -> Result<(f64, ParamGrads<f32>)> {
    let mut g = Graph::new();
    let amp = g.constant(vec![1, s.frames, state.norm.bins()], s.amplitude.clone())?;
    let q = state.quality.forward(&mut g, amp, &state.norm, Bind::Train)?;
    let loss = losses::pesqnet_var(&mut g, q, s.label)?;
    let grads = g.gradients(loss)?;
    Ok((g.scalar(loss).into(), g.param_grads(&grads)))
}

fn apply_update(store: &mut ParamStore<f32>, opt: &mut Adam<f32>, results: Vec<(f64, ParamGrads<f32>)>) -> Result<f64> {
    let n = results.len();
    store.zero_grad();
    let mut total = 0.0;
    for (loss, grads) in &results {
        total += loss;
        store.accumulate(grads);
    }
    store.scale_grads(1.0 / n as f32);
    opt.step(store)?;
    Ok(total / n as f64)
}

fn denoiser_update(state: &mut TrainState, ctx: &TrainContext, batch: &[&Utterance], obj: Objective) -> Result<f64> {
    let snapshot: &TrainState = state;
    let results = ctx.exec.try_map(batch, |u| denoiser_grad(snapshot, ctx, u, obj))?;
    let loss = apply_update(&mut state.denoiser.store, &mut state.denoiser_opt, results)?;
    state.counters.denoiser_updates += 1;
    state.counters.step += 1;
    Ok(loss)
}

fn quality_update(state: &mut TrainState, ctx: &TrainContext, batch: &[&QualitySample]) -> Result<f64> {
    let snapshot: &TrainState = state;
    let results = ctx.exec.try_map(batch, |s| quality_grad(snapshot, s))?;
    let loss = apply_update(&mut state.quality.store, &mut state.quality_opt, results)?;
    state.counters.quality_updates += 1;
    state.counters.step += 1;
    Ok(loss)
}

fn record(state: &TrainState, phase: Phase, kind: LossKind, loss: f64, t0: Instant) -> StepRecord {
    let lr = if phase.updates_denoiser() {
        state.denoiser_opt.config.lr
    } else {
        state.quality_opt.config.lr
    };
    let (d, q) = state.checksums();
    StepRecord {
        step: state.counters.step,
        cycle: state.counters.cycle,
        phase,
        loss_kind: kind,
        loss_value: loss,
        lr,
        wall_ms: t0.elapsed().as_secs_f64() * 1e3,
        denoiser_checksum: d,
        quality_checksum: q,
    }
}

/// Mean `j_synth` of the current denoiser over synthetic utterances.
pub fn validation_synth_loss(state: &TrainState, ctx: &TrainContext, val: &[Utterance]) -> Result<Option<f64>> {
    if val.is_empty() {
        return Ok(None);
    }
    let losses = ctx.exec.try_map(val, |u| -> Result<f64> {
        let (_, est) = state.denoiser.enhance(&u.y, &state.norm)?;
        let (clean, rev) = synth_refs(u)?;
        Ok(losses::j_synth(&est, clean, rev, &ctx.loss)?.value)
    })?;
    Ok(Some(losses.iter().sum::<f64>() / losses.len() as f64))
}

/// Mean squared error of the quality estimator against oracle labels of
/// utterances enhanced by the current denoiser.
pub fn validation_quality_mse(state: &TrainState, ctx: &TrainContext, val: &[Utterance]) -> Result<Option<f64>> {
    if val.is_empty() {
        return Ok(None);
    }
    let samples = ctx.exec.try_map(val, |u| quality_sample(state, ctx, u))?;
    Ok(Some(quality_mse(state, &samples)?))
}

fn quality_mse(state: &TrainState, samples: &[QualitySample]) -> Result<f64> {
    let mut total = 0.0;
    for s in samples {
        let amp: Vec<f64> = s.amplitude.iter().map(|&v| f64::from(v)).collect();
        let q = state.quality.score(&amp, s.frames, &state.norm)?;
        total += losses::j_pesqnet(q, s.label)?.value;
    }
    Ok(total / samples.len() as f64)
}

/// Supervised denoiser training with `j_synth` on synthetic utterances.
pub fn train_denoiser_supervised(
    state: &mut TrainState,
    ctx: &TrainContext,
    train: &[Utterance],
    val: &[Utterance],
    epochs: usize,
    phase: Phase,
    log: &mut StepLog,
) -> Result<Vec<EpochReport>> {
    if epochs > 0 && train.is_empty() {
        return Err(Error::DataExhausted(format!("{phase}: no synthetic training utterances")));
    }
    let mut reports = vec![EpochReport { epoch: 0, train_loss: None, val_loss: validation_synth_loss(state, ctx, val)? }];
    for epoch in 1..=epochs {
        let order = epoch_order(train.len(), state.seed, &phase.to_string(), epoch);
        let mut sum = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(ctx.minibatch) {
            let t0 = Instant::now();
            let batch: Vec<&Utterance> = chunk.iter().map(|&i| &train[i]).collect();
            let loss = denoiser_update(state, ctx, &batch, Objective::Synth)?;
            log.push(record(state, phase, LossKind::Synth, loss, t0))?;
            sum += loss;
            batches += 1;
        }
        let val_loss = validation_synth_loss(state, ctx, val)?;
        ::log::info!("{phase} epoch {epoch}: train {:.5} val {:?}", sum / batches as f64, val_loss);
        reports.push(EpochReport { epoch, train_loss: Some(sum / batches as f64), val_loss });
    }
    Ok(reports)
}

/// Supervised quality-estimator training on outputs of the frozen denoiser.
pub fn train_quality_supervised(
    state: &mut TrainState,
    ctx: &TrainContext,
    train: &[Utterance],
    val: &[Utterance],
    epochs: usize,
    phase: Phase,
    log: &mut StepLog,
) -> Result<Vec<EpochReport>> {
    if epochs > 0 && train.is_empty() {
        return Err(Error::DataExhausted(format!("{phase}: no synthetic training utterances")));
    }
    let snapshot: &TrainState = state;
    let train_samples = ctx.exec.try_map(train, |u| quality_sample(snapshot, ctx, u))?;
    let val_samples = ctx.exec.try_map(val, |u| quality_sample(snapshot, ctx, u))?;
    let val_mse = |s: &TrainState| -> Result<Option<f64>> {
        if val_samples.is_empty() {
            Ok(None)
        } else {
            quality_mse(s, &val_samples).map(Some)
        }
    };
    let mut reports = vec![EpochReport { epoch: 0, train_loss: None, val_loss: val_mse(state)? }];
    for epoch in 1..=epochs {
        let order = epoch_order(train.len(), state.seed, &phase.to_string(), epoch);
        let mut sum = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(ctx.minibatch) {
            let t0 = Instant::now();
            let batch: Vec<&QualitySample> = chunk.iter().map(|&i| &train_samples[i]).collect();
            let loss = quality_update(state, ctx, &batch)?;
            log.push(record(state, phase, LossKind::Pesqnet, loss, t0))?;
            sum += loss;
            batches += 1;
        }
        let val_loss = val_mse(state)?;
        ::log::info!("{phase} epoch {epoch}: train {:.5} val {:?}", sum / batches as f64, val_loss);
        reports.push(EpochReport { epoch, train_loss: Some(sum / batches as f64), val_loss });
    }
    Ok(reports)
}

pub fn pretrain_denoiser(
    state: &mut TrainState,
    ctx: &TrainContext,
    data: &TrainData,
    epochs: usize,
    log: &mut StepLog,
) -> Result<Vec<EpochReport>> {
    train_denoiser_supervised(state, ctx, &data.synth_train, &data.synth_val, epochs, Phase::PretrainDenoiser, log)
}

pub fn pretrain_qualitynet(
    state: &mut TrainState,
    ctx: &TrainContext,
    data: &TrainData,
    epochs: usize,
    log: &mut StepLog,
) -> Result<Vec<EpochReport>> {
    train_quality_supervised(state, ctx, &data.synth_train, &data.synth_val, epochs, Phase::PretrainQuality, log)
}

/// First fine-tuning stage: the denoiser with `j_synth`, then the quality
/// estimator on the fine-tuned denoiser's outputs.
pub fn run_stage1(
    state: &mut TrainState,
    ctx: &TrainContext,
    data: &TrainData,
    denoiser_epochs: usize,
    quality_epochs: usize,
    log: &mut StepLog,
) -> Result<(Vec<EpochReport>, Vec<EpochReport>)> {
    let d = train_denoiser_supervised(state, ctx, &data.synth_train, &data.synth_val, denoiser_epochs, Phase::Stage1Denoiser, log)?;
    let q = train_quality_supervised(state, ctx, &data.synth_train, &data.synth_val, quality_epochs, Phase::Stage1Quality, log)?;
    Ok((d, q))
}

/// One full alternating cycle. On error the state is left untouched and no
/// step is logged.
pub fn run_protocol_cycle(
    state: &mut TrainState,
    ctx: &TrainContext,
    data: &TrainData,
    protocol: &ProtocolSpec,
    log: &mut StepLog,
) -> Result<()> {
    protocol.validate()?;
    let mut work = state.clone();
    let mut records = Vec::new();
    let b = protocol.minibatch_size;

    for (count, phase) in [(protocol.r, Phase::FcrnReal), (protocol.s, Phase::FcrnSynth)] {
        let (pool, what) = match phase {
            Phase::FcrnReal => (&data.real_train, "real"),
            _ => (&data.synth_train, "synthetic"),
        };
        for _ in 0..count {
            let t0 = Instant::now();
            let stream = match phase {
                Phase::FcrnReal => &mut work.streams.real,
                _ => &mut work.streams.synth,
            };
            let idx = stream.next_batch(pool.len(), b, what)?;
            let batch: Vec<&Utterance> = idx.iter().map(|&i| &pool[i]).collect();
            let loss = denoiser_update(&mut work, ctx, &batch, Objective::Total)?;
            records.push(record(&work, phase, LossKind::Total, loss, t0));
        }
    }

    let pool = &data.synth_train;
    let mut batches = Vec::with_capacity(protocol.p);
    for _ in 0..protocol.p {
        batches.push(work.streams.quality.next_batch(pool.len(), b, "synthetic")?);
    }
    let mut unique: Vec<usize> = batches.iter().flatten().copied().collect();
    unique.sort_unstable();
    unique.dedup();
    let frozen: &TrainState = &work;
    let samples = ctx.exec.try_map(&unique, |&i| quality_sample(frozen, ctx, &pool[i]))?;
    let cache: BTreeMap<usize, QualitySample> = unique.into_iter().zip(samples).collect();
    for idx in &batches {
        let t0 = Instant::now();
        let batch: Vec<&QualitySample> = idx.iter().map(|i| &cache[i]).collect();
        let loss = quality_update(&mut work, ctx, &batch)?;
        records.push(record(&work, Phase::Pesqnet, LossKind::Pesqnet, loss, t0));
    }

    work.counters.cycle += 1;
    work.counters.run += 1;
    *state = work;
    for r in records {
        log.push(r)?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Stage2Config {
    pub protocol: ProtocolSpec,
    /// Total protocol runs; training continues from the state's counter.
    pub runs: u64,
    pub checkpoint_every: u64,
    pub checkpoint_dir: Option<PathBuf>,
}

pub fn checkpoint_name(run: u64) -> String {
    format!("ckpt_{run}.wdns")
}

/// Second fine-tuning stage: alternating cycles until `cfg.runs`, with a
/// checkpoint whenever the run counter is a multiple of `checkpoint_every`.
/// `on_cycle` sees the state after every cycle.
pub fn run_stage2(
    state: &mut TrainState,
    ctx: &TrainContext,
    data: &TrainData,
    cfg: &Stage2Config,
    info: &RunInfo,
    log: &mut StepLog,
    on_cycle: &mut dyn FnMut(&TrainState) -> Result<()>,
) -> Result<Vec<PathBuf>> {
    if cfg.checkpoint_every == 0 {
        return Err(Error::Config("checkpoint_every must be positive".into()));
    }
    let mut written = Vec::new();
    while state.counters.run < cfg.runs {
        run_protocol_cycle(state, ctx, data, &cfg.protocol, log)?;
        on_cycle(state)?;
        let run = state.counters.run;
        if run.is_multiple_of(cfg.checkpoint_every) {
            if let Some(dir) = &cfg.checkpoint_dir {
                let path = dir.join(checkpoint_name(run));
                save_checkpoint(&path, state, info)?;
                ::log::info!("checkpoint {}", path.display());
                written.push(path);
            }
        }
    }
    log.flush()?;
    Ok(written)
}

/// Validation losses of every candidate and the chosen index per set.
#[derive(Clone, Debug, PartialEq)]
pub struct Selection {
    pub candidates: Vec<PathBuf>,
    pub synth_losses: Option<Vec<f64>>,
    pub real_losses: Option<Vec<f64>>,
    pub chosen_synth: Option<usize>,
    pub chosen_real: Option<usize>,
}

impl Selection {
    /// Candidate indices from best to worst.
    pub fn ranking(losses: &[f64]) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..losses.len()).collect();
        idx.sort_by(|&a, &b| losses[a].total_cmp(&losses[b]).then(a.cmp(&b)));
        idx
    }

    /// The synthetic-set choice, falling back to the real-set choice.
    pub fn chosen(&self) -> Option<&Path> {
        self.chosen_synth.or(self.chosen_real).map(|i| self.candidates[i].as_path())
    }
}

pub fn argmin(losses: &[f64]) -> Option<usize> {
    Selection::ranking(losses).first().copied()
}

/// Mean total loss of a state on synthetic and real validation sets.
pub fn validation_total_losses(state: &TrainState, ctx: &TrainContext, data: &TrainData) -> Result<(Option<f64>, Option<f64>)> {
    let total = |set: &[Utterance]| -> Result<Option<f64>> {
        if set.is_empty() {
            return Ok(None);
        }
        let v = ctx.exec.try_map(set, |u| -> Result<f64> {
            let (_, est) = state.denoiser.enhance(&u.y, &state.norm)?;
            let q = state.quality.score(&est.magnitude(), est.frames(), &state.norm)?;
            let synth = match u.kind() {
                Kind::Synthetic => {
                    let (clean, rev) = synth_refs(u)?;
                    Some(losses::j_synth(&est, clean, rev, &ctx.loss)?.value)
                }
                Kind::Real => None,
            };
            Ok(losses::j_total(u.kind(), synth, q, &ctx.loss)?.value)
        })?;
        Ok(Some(v.iter().sum::<f64>() / v.len() as f64))
    };
    Ok((total(&data.synth_val)?, total(&data.real_val)?))
}

/// Picks the checkpoint with the lowest validation total loss, separately on
/// the synthetic and the real validation set. Each checkpoint is scored with
/// its own quality estimator.
pub fn select_model(checkpoints: &[PathBuf], ctx: &TrainContext, data: &TrainData) -> Result<Selection> {
    if checkpoints.is_empty() {
        return Err(Error::Checkpoint("no checkpoints to select from".into()));
    }
    let mut synth = Vec::new();
    let mut real = Vec::new();
    for path in checkpoints {
        let (state, _) = load_checkpoint(path)?;
        let (s, r) = validation_total_losses(&state, ctx, data)?;
        synth.extend(s);
        real.extend(r);
    }
    let synth_losses = (!data.synth_val.is_empty()).then_some(synth);
    let real_losses = (!data.real_val.is_empty()).then_some(real);
    Ok(Selection {
        candidates: checkpoints.to_vec(),
        chosen_synth: synth_losses.as_deref().and_then(argmin),
        chosen_real: real_losses.as_deref().and_then(argmin),
        synth_losses,
        real_losses,
    })
}

/// Enhancement used by [`evaluate`]: a trained denoiser or the identity.
pub enum Enhancer<'a> {
    Identity,
    Denoiser(&'a DenoiserNet<f32>),
}

/// Per-utterance report rows for synthetic utterances.
pub fn evaluate(
    enhancer: &Enhancer<'_>,
    quality: Option<&QualityNet<f32>>,
    norm: &NormStats,
    ctx: &TrainContext,
    utts: &[Utterance],
) -> Result<Vec<EvalRow>> {
    let synth: Vec<&Utterance> = utts.iter().filter(|u| u.kind() == Kind::Synthetic).collect();
    ctx.exec.try_map(&synth, |u| -> Result<EvalRow> {
        let (reference, _) = u.clean_rev.as_ref().expect("synthetic utterances carry references");
        let (enhanced, est) = match enhancer {
            Enhancer::Identity => (u.noisy.clone(), u.y.clone()),
            Enhancer::Denoiser(net) => {
                let (_, est) = net.enhance(&u.y, norm)?;
                (ctx.stft.synthesize(&est, u.noisy.len())?, est)
            }
        };
        let noisy_db = seg_snr(reference, &u.noisy, &ctx.seg)?;
        let enhanced_db = seg_snr(reference, &enhanced, &ctx.seg)?;
        let oracle = ctx.oracle();
        let estimated = quality
            .map(|q| q.score(&est.magnitude(), est.frames(), norm))
            .transpose()?;
        Ok(EvalRow {
            utterance_id: u.id().to_string(),
            reverberated: u.meta.reverberated,
            seg_snr_noisy: noisy_db,
            seg_snr_enhanced: enhanced_db,
            delta_seg_snr: enhanced_db - noisy_db,
            oracle_q_noisy: oracle.score(reference, &u.noisy)?.value(),
            oracle_q_enhanced: oracle.score(reference, &enhanced)?.value(),
            estimated_q_enhanced: estimated,
        })
    })
}
