//! `weakdns` command-line driver.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use weakdns::audio::{read_wav, write_wav};
use weakdns::config::RunConfig;
use weakdns::fixture::{write_fixture, FixtureConfig};
use weakdns::metrics::{aggregate_rows, write_report};
use weakdns::mixer::{build_corpus, Dataset, Kind, Split, METADATA_FILE};
use weakdns::models::fit_norm_stats;
use weakdns::trainer::{
    evaluate, load_checkpoint, pretrain_denoiser, pretrain_qualitynet, run_stage1, run_stage2, save_checkpoint,
    select_model, sha256_file, Enhancer, RunInfo, Stage2Config, StepLog, TrainData, TrainState,
};
use weakdns::{Error, ExecMode, Result};

#[derive(Parser, Debug)]
#[command(name = "weakdns", version, about = "Weakly supervised speech enhancement")]
struct Cli {
    /// JSON run configuration; flags override its keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    exec: Option<ExecArg>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ExecArg {
    Sequential,
    Parallel,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Stage {
    PretrainDenoiser,
    PretrainQuality,
    FinetuneStage1,
    FinetuneStage2,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
    All,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build a synthetic corpus from a manifest.
    Mix {
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Run one training stage.
    Train {
        #[arg(long, value_enum)]
        stage: Stage,
        #[arg(long)]
        protocol: Option<String>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        beta: Option<f64>,
        /// Learning rate for both models.
        #[arg(long)]
        lr: Option<f64>,
        /// Epochs for the supervised stages (both models in stage 1).
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        runs: Option<u64>,
        #[arg(long)]
        checkpoint_every: Option<u64>,
        #[arg(long)]
        pretrain: Option<PathBuf>,
        #[arg(long)]
        finetune: Option<PathBuf>,
        /// Continue the alternating stage from one of its checkpoints.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Enhance a single WAV file.
    Enhance {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Write a per-utterance metrics report for a corpus.
    Evaluate {
        #[arg(long, required_unless_present = "identity")]
        checkpoint: Option<PathBuf>,
        /// Evaluate the unprocessed noisy signal (mask of one).
        #[arg(long, conflicts_with = "checkpoint")]
        identity: bool,
        /// Checkpoint whose quality estimator fills `estimated_q_enhanced`.
        #[arg(long)]
        quality: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "all")]
        split: SplitArg,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Generate a small synthetic corpus with a manifest.
    GenFixture {
        #[arg(long, default_value_t = 60)]
        clean: usize,
        #[arg(long, default_value_t = 12)]
        real: usize,
        #[arg(long, default_value_t = 6)]
        noises: usize,
        #[arg(long, default_value_t = 4)]
        rirs: usize,
        #[arg(long, default_value_t = 2.0)]
        seconds: f64,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Json(_) | Error::SampleRate { .. } => 2,
        Error::MissingFile(_)
        | Error::Io { .. }
        | Error::Wav { .. }
        | Error::Manifest(_)
        | Error::DataExhausted(_)
        | Error::Checkpoint(_) => 3,
        Error::Sequencing { .. } => 4,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("WEAKDNS_LOG", "info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
        cfg.corpus.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    if let Some(e) = cli.exec {
        cfg.exec = match e {
            ExecArg::Sequential => ExecMode::Sequential,
            ExecArg::Parallel => ExecMode::Parallel,
        };
    }
    match cli.command {
        Command::Mix { manifest } => cmd_mix(cfg, manifest),
        Command::Train {
            stage,
            protocol,
            alpha,
            beta,
            lr,
            epochs,
            runs,
            checkpoint_every,
            pretrain,
            finetune,
            resume,
        } => {
            if let Some(p) = protocol {
                cfg.protocol = p;
            }
            if let Some(a) = alpha {
                cfg.loss.alpha = a;
            }
            if let Some(b) = beta {
                cfg.loss.beta = b;
            }
            if let Some(lr) = lr {
                cfg.optimizer.denoiser.lr = lr;
                cfg.optimizer.quality.lr = lr;
            }
            if let Some(n) = epochs {
                let s = &mut cfg.schedule;
                match stage {
                    Stage::PretrainDenoiser => s.pretrain_denoiser_epochs = n,
                    Stage::PretrainQuality => s.pretrain_quality_epochs = n,
                    Stage::FinetuneStage1 => {
                        s.stage1_denoiser_epochs = n;
                        s.stage1_quality_epochs = n;
                    }
                    Stage::FinetuneStage2 => {}
                }
            }
            if let Some(r) = runs {
                cfg.schedule.runs = r;
            }
            if let Some(c) = checkpoint_every {
                cfg.schedule.checkpoint_every = c;
            }
            if pretrain.is_some() {
                cfg.data.pretrain = pretrain;
            }
            if finetune.is_some() {
                cfg.data.finetune = finetune;
            }
            cfg.validate()?;
            cmd_train(&cfg, stage, resume)
        }
        Command::Enhance { checkpoint, input, output } => cmd_enhance(&cfg, &checkpoint, &input, &output),
        Command::Evaluate { checkpoint, identity, quality, data, split, report } => {
            cmd_evaluate(&cfg, checkpoint.filter(|_| !identity), quality, data, split, report)
        }
        Command::GenFixture { clean, real, noises, rirs, seconds } => {
            let fx = FixtureConfig { clean, real, noises, rirs, seconds, seed: cfg.seed };
            let manifest = write_fixture(&cfg.out, &fx)?;
            println!("{}", manifest.display());
            Ok(())
        }
    }
}

fn cmd_mix(cfg: RunConfig, manifest: Option<PathBuf>) -> Result<()> {
    let manifest = manifest
        .or(cfg.data.manifest.clone())
        .ok_or_else(|| Error::Config("mix needs --manifest or data.manifest".into()))?;
    let summary = build_corpus(&manifest, &cfg.corpus, &cfg.out, cfg.exec)?;
    let reverb_fraction = if summary.synthetic > 0 {
        summary.reverberated as f64 / summary.synthetic as f64
    } else {
        0.0
    };
    let hist: BTreeMap<String, usize> =
        summary.snr_histogram.iter().map(|(lo, n)| (format!("[{lo},{})", lo + 5), *n)).collect();
    let report = serde_json::json!({
        "utterances": summary.synthetic + summary.real,
        "synthetic": summary.synthetic,
        "real": summary.real,
        "reverb_fraction": reverb_fraction,
        "snr_histogram_db": hist,
    });
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn load_data(dir: Option<&PathBuf>, what: &str, cfg: &RunConfig) -> Result<(TrainData, String)> {
    let dir = dir.ok_or_else(|| Error::Config(format!("no {what} corpus configured (data.{what})")))?;
    let ds = Dataset::load(dir, cfg.exec)?;
    let ctx = cfg.context()?;
    let hash = sha256_file(dir.join(METADATA_FILE))?;
    Ok((TrainData::from_dataset(&ds, &ctx.stft, cfg.exec)?, hash))
}

fn require(stage: &str, path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Sequencing { stage: stage.into(), missing: format!("checkpoint {}", path.display()) })
    }
}

fn cmd_train(cfg: &RunConfig, stage: Stage, resume: Option<PathBuf>) -> Result<()> {
    let out = &cfg.out;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out.clone(), e))?;
    let ctx = cfg.context()?;
    let mut log = StepLog::to_csv(out.join("steps.csv"))?;
    let pre_den = out.join("pretrain_denoiser.wdns");
    let pre_q = out.join("pretrain_quality.wdns");
    let stage1 = out.join("stage1.wdns");
    let mut info = RunInfo { loss: cfg.loss, ..Default::default() };
    match stage {
        Stage::PretrainDenoiser => {
            let (data, hash) = load_data(cfg.data.pretrain.as_ref(), "pretrain", cfg)?;
            let norm = fit_norm_stats(data.synth_train.iter().map(|u| &u.y))?;
            let mut state = TrainState::new(cfg.seed, norm, cfg.optimizer.denoiser, cfg.optimizer.quality);
            let reports = pretrain_denoiser(&mut state, &ctx, &data, cfg.schedule.pretrain_denoiser_epochs, &mut log)?;
            print_reports("pretrain-denoiser", "val_j_synth", &reports);
            info.stage = "pretrain-denoiser".into();
            info.manifests.insert("pretrain".into(), hash);
            save_checkpoint(&pre_den, &state, &info)?;
        }
        Stage::PretrainQuality => {
            require("pretrain-quality", &pre_den)?;
            let (mut state, meta) = load_checkpoint(&pre_den)?;
            let (data, hash) = load_data(cfg.data.pretrain.as_ref(), "pretrain", cfg)?;
            let reports = pretrain_qualitynet(&mut state, &ctx, &data, cfg.schedule.pretrain_quality_epochs, &mut log)?;
            print_reports("pretrain-quality", "val_mse", &reports);
            info.stage = "pretrain-quality".into();
            info.manifests = meta.manifests;
            info.manifests.insert("pretrain".into(), hash);
            save_checkpoint(&pre_q, &state, &info)?;
        }
        Stage::FinetuneStage1 => {
            require("finetune-stage1", &pre_den)?;
            require("finetune-stage1", &pre_q)?;
            let (mut state, meta) = load_checkpoint(&pre_q)?;
            state.set_optimizers(cfg.optimizer.denoiser, cfg.optimizer.quality);
            let (data, hash) = load_data(cfg.data.finetune.as_ref(), "finetune", cfg)?;
            let s = &cfg.schedule;
            let (d, q) = run_stage1(&mut state, &ctx, &data, s.stage1_denoiser_epochs, s.stage1_quality_epochs, &mut log)?;
            print_reports("stage1-denoiser", "val_j_synth", &d);
            print_reports("stage1-quality", "val_mse", &q);
            info.stage = "finetune-stage1".into();
            info.manifests = meta.manifests;
            info.manifests.insert("finetune".into(), hash);
            save_checkpoint(&stage1, &state, &info)?;
        }
        Stage::FinetuneStage2 => {
            require("finetune-stage2", &pre_den)?;
            require("finetune-stage2", &pre_q)?;
            let start = match &resume {
                Some(p) => p.clone(),
                None if stage1.is_file() => stage1.clone(),
                None => pre_q.clone(),
            };
            let (mut state, meta) = load_checkpoint(&start)?;
            if resume.is_none() {
                state.set_optimizers(cfg.optimizer.denoiser, cfg.optimizer.quality);
                state.counters.run = 0;
                state.counters.cycle = 0;
            }
            log::info!("stage 2 starts from {}", start.display());
            let (data, hash) = load_data(cfg.data.finetune.as_ref(), "finetune", cfg)?;
            info.stage = "finetune-stage2".into();
            info.protocol = Some(cfg.protocol.clone());
            info.manifests = meta.manifests;
            info.manifests.insert("finetune".into(), hash);
            let dir = out.join("stage2");
            let s2 = Stage2Config {
                protocol: cfg.protocol_spec()?,
                runs: cfg.schedule.runs,
                checkpoint_every: cfg.schedule.checkpoint_every,
                checkpoint_dir: Some(dir.clone()),
            };
            run_stage2(&mut state, &ctx, &data, &s2, &info, &mut log, &mut |_| Ok(()))?;
            let mut ckpts: Vec<(u64, PathBuf)> = std::fs::read_dir(&dir)
                .map_err(|e| Error::io(dir.clone(), e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter_map(|p| {
                    let run = p.file_name()?.to_str()?.strip_prefix("ckpt_")?.strip_suffix(".wdns")?.parse().ok()?;
                    Some((run, p))
                })
                .collect();
            ckpts.sort();
            let paths: Vec<PathBuf> = ckpts.into_iter().map(|(_, p)| p).collect();
            if paths.is_empty() {
                log::warn!("no stage-2 checkpoints written (runs < checkpoint_every)");
                return Ok(());
            }
            let sel = select_model(&paths, &ctx, &data)?;
            let names: Vec<String> = sel.candidates.iter().map(|p| p.display().to_string()).collect();
            let pick = |i: Option<usize>| i.map(|i| names[i].clone());
            let report = serde_json::json!({
                "candidates": names,
                "synthetic_val_j_total": sel.synth_losses,
                "real_val_j_total": sel.real_losses,
                "chosen_synthetic": pick(sel.chosen_synth),
                "chosen_real": pick(sel.chosen_real),
            });
            let text = serde_json::to_string_pretty(&report)?;
            let p = out.join("selection.json");
            std::fs::write(&p, &text).map_err(|e| Error::io(p, e))?;
            println!("{text}");
        }
    }
    log.flush()
}

fn print_reports(stage: &str, what: &str, reports: &[weakdns::trainer::EpochReport]) {
    for r in reports {
        let fmt = |v: Option<f64>| v.map(|v| format!("{v:.6}")).unwrap_or_else(|| "-".into());
        println!("{stage} epoch {} train_loss {} {what} {}", r.epoch, fmt(r.train_loss), fmt(r.val_loss));
    }
}

fn cmd_enhance(cfg: &RunConfig, checkpoint: &Path, input: &Path, output: &Path) -> Result<()> {
    let noisy = read_wav(input)?;
    if noisy.is_empty() {
        return Err(Error::Wav { path: input.to_path_buf(), msg: "no samples".into() });
    }
    let (state, _) = load_checkpoint(checkpoint)?;
    let ctx = cfg.context()?;
    let y = ctx.stft.analyze(&noisy)?;
    let (_, est) = state.denoiser.enhance(&y, &state.norm)?;
    let enhanced = ctx.stft.synthesize(&est, noisy.len())?;
    write_wav(output, &enhanced)
}

fn cmd_evaluate(
    cfg: &RunConfig,
    checkpoint: Option<PathBuf>,
    quality: Option<PathBuf>,
    data: Option<PathBuf>,
    split: SplitArg,
    report: Option<PathBuf>,
) -> Result<()> {
    let ctx = cfg.context()?;
    let dir = data
        .or(cfg.data.finetune.clone())
        .ok_or_else(|| Error::Config("evaluate needs --data or data.finetune".into()))?;
    let mut ds = Dataset::load(&dir, cfg.exec)?;
    ds.records.retain(|r| {
        r.meta.kind == Kind::Synthetic
            && match split {
                SplitArg::All => true,
                SplitArg::Train => r.meta.split == Split::Train,
                SplitArg::Val => r.meta.split == Split::Val,
                SplitArg::Test => r.meta.split == Split::Test,
            }
    });
    let data = TrainData::from_dataset(&ds, &ctx.stft, cfg.exec)?;
    let utts: Vec<_> = [data.synth_train, data.synth_val, data.synth_test].concat();
    let main = checkpoint.as_ref().map(load_checkpoint).transpose()?.map(|(s, _)| s);
    let extra = quality.as_ref().map(load_checkpoint).transpose()?.map(|(s, _)| s);
    let quality_state = extra.as_ref().or(main.as_ref());
    let norm = match (&main, quality_state) {
        (Some(s), _) | (None, Some(s)) => s.norm.clone(),
        (None, None) => fit_norm_stats(utts.iter().map(|u| &u.y))?,
    };
    let enhancer = match &main {
        Some(s) => Enhancer::Denoiser(&s.denoiser),
        None => Enhancer::Identity,
    };
    let rows = evaluate(&enhancer, quality_state.map(|s| &s.quality), &norm, &ctx, &utts)?;
    if rows.is_empty() {
        return Err(Error::DataExhausted(format!("no synthetic utterances in {}", dir.display())));
    }
    let path = report.unwrap_or_else(|| cfg.out.join("report.csv"));
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent.to_path_buf(), e))?;
    }
    write_report(&path, &rows)?;
    for a in aggregate_rows(&rows) {
        println!(
            "{}: seg_snr_noisy {:.3} seg_snr_enhanced {:.3} delta_seg_snr {:.3}",
            a.utterance_id, a.seg_snr_noisy, a.seg_snr_enhanced, a.delta_seg_snr
        );
    }
    println!("report written to {}", path.display());
    Ok(())
}
