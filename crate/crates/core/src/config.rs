//! Run configuration: one JSON document describing a whole experiment.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::autodiff::AdamConfig;
use crate::dsp::{Stft, StftConfig};
use crate::error::{Error, Result};
use crate::exec::ExecMode;
use crate::losses::LossConfig;
use crate::metrics::SegSnrConfig;
use crate::mixer::CorpusConfig;
use crate::trainer::{ProtocolSpec, TrainContext, DEFAULT_MINIBATCH};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub denoiser: AdamConfig,
    pub quality: AdamConfig,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Manifest consumed by `mix`.
    pub manifest: Option<PathBuf>,
    /// Corpus directory used for pre-training.
    pub pretrain: Option<PathBuf>,
    /// Corpus directory used for both fine-tuning stages.
    pub finetune: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Schedule {
    pub pretrain_denoiser_epochs: usize,
    pub pretrain_quality_epochs: usize,
    pub stage1_denoiser_epochs: usize,
    pub stage1_quality_epochs: usize,
    pub runs: u64,
    pub checkpoint_every: u64,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule {
            pretrain_denoiser_epochs: 10,
            pretrain_quality_epochs: 10,
            stage1_denoiser_epochs: 2,
            stage1_quality_epochs: 2,
            runs: 78,
            checkpoint_every: 39,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub exec: ExecMode,
    pub stft: StftConfig,
    pub loss: LossConfig,
    /// Alternating protocol as `r-s-p` (or `⟨r−s−p⟩`), kept verbatim.
    pub protocol: String,
    pub minibatch_size: usize,
    pub optimizer: OptimizerConfig,
    pub data: DataConfig,
    pub corpus: CorpusConfig,
    pub schedule: Schedule,
    pub seg_snr: SegSnrConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out: PathBuf::from("runs/default"),
            exec: ExecMode::default(),
            stft: StftConfig::default(),
            loss: LossConfig::default(),
            protocol: "1-1-50".into(),
            minibatch_size: DEFAULT_MINIBATCH,
            optimizer: OptimizerConfig::default(),
            data: DataConfig::default(),
            corpus: CorpusConfig::default(),
            schedule: Schedule::default(),
            seg_snr: SegSnrConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::Config(format!("config file {} not found", path.display())),
            _ => Error::io(path, e),
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.stft.validate()?;
        self.loss.validate()?;
        self.protocol_spec()?;
        self.corpus.validate()?;
        self.seg_snr.validate()?;
        for (name, a) in [("denoiser", &self.optimizer.denoiser), ("quality", &self.optimizer.quality)] {
            let ok = a.lr > 0.0
                && a.lr.is_finite()
                && (0.0..1.0).contains(&a.beta1)
                && (0.0..1.0).contains(&a.beta2)
                && a.eps > 0.0;
            if !ok {
                return Err(Error::Config(format!("invalid {name} optimizer settings {a:?}")));
            }
        }
        if self.schedule.checkpoint_every == 0 {
            return Err(Error::Config("schedule.checkpoint_every must be positive".into()));
        }
        Ok(())
    }

    pub fn protocol_spec(&self) -> Result<ProtocolSpec> {
        let p: ProtocolSpec = self.protocol.parse()?;
        ProtocolSpec::new(p.r, p.s, p.p, self.minibatch_size)
    }

    pub fn context(&self) -> Result<TrainContext> {
        Ok(TrainContext {
            stft: Stft::new(self.stft)?,
            loss: self.loss,
            seg: self.seg_snr,
            minibatch: self.minibatch_size,
            exec: self.exec,
        })
    }
}
