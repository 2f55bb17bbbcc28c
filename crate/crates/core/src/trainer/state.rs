use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::data::BatchStream;
use crate::autodiff::{read_container, write_container, Adam, AdamConfig, ParamStore, TensorRecord};
use crate::error::{Error, Result};
use crate::losses::LossConfig;
use crate::models::{DenoiserNet, NormStats, QualityNet, DENOISER_TOPOLOGY, QUALITY_TOPOLOGY};

/// Update counters; `run` counts completed alternating cycles.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub step: u64,
    pub cycle: u64,
    pub run: u64,
    pub denoiser_updates: u64,
    pub quality_updates: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Streams {
    pub real: BatchStream,
    pub synth: BatchStream,
    pub quality: BatchStream,
}

impl Streams {
    pub fn new(seed: u64) -> Self {
        Streams {
            real: BatchStream::new(seed, "stream/real"),
            synth: BatchStream::new(seed, "stream/synth"),
            quality: BatchStream::new(seed, "stream/quality"),
        }
    }
}

/// Everything needed to continue training bit-exactly.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub denoiser: DenoiserNet<f32>,
    pub denoiser_opt: Adam<f32>,
    pub quality: QualityNet<f32>,
    pub quality_opt: Adam<f32>,
    pub norm: NormStats,
    pub counters: Counters,
    pub streams: Streams,
    pub seed: u64,
}

impl TrainState {
    pub fn new(seed: u64, norm: NormStats, denoiser_opt: AdamConfig, quality_opt: AdamConfig) -> Self {
        let denoiser = DenoiserNet::new(crate::mixer::derive_seed(seed, "init/denoiser"));
        let quality = QualityNet::new(crate::mixer::derive_seed(seed, "init/quality"));
        TrainState {
            denoiser_opt: Adam::new(&denoiser.store, denoiser_opt),
            quality_opt: Adam::new(&quality.store, quality_opt),
            denoiser,
            quality,
            norm,
            counters: Counters::default(),
            streams: Streams::new(seed),
            seed,
        }
    }

    /// Fresh optimizer state for both models, keeping parameters.
    pub fn reset_optimizers(&mut self) {
        self.set_optimizers(self.denoiser_opt.config, self.quality_opt.config);
    }

    /// Fresh optimizer state with new hyperparameters.
    pub fn set_optimizers(&mut self, denoiser: AdamConfig, quality: AdamConfig) {
        self.denoiser_opt = Adam::new(&self.denoiser.store, denoiser);
        self.quality_opt = Adam::new(&self.quality.store, quality);
    }

    pub fn checksums(&self) -> (String, String) {
        (self.denoiser.store.checksum(), self.quality.store.checksum())
    }
}

/// Sidecar metadata of a checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub stage: String,
    pub denoiser_topology: String,
    pub quality_topology: String,
    pub protocol: Option<String>,
    pub alpha: f64,
    pub beta: f64,
    pub seed: u64,
    pub counters: Counters,
    pub streams: Streams,
    pub denoiser_adam: AdamConfig,
    pub denoiser_adam_t: u64,
    pub quality_adam: AdamConfig,
    pub quality_adam_t: u64,
    /// Content hashes (sha256) of the data manifests used, by name.
    pub manifests: BTreeMap<String, String>,
}

/// Describes the run a checkpoint belongs to.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunInfo {
    pub stage: String,
    pub protocol: Option<String>,
    pub loss: LossConfig,
    pub manifests: BTreeMap<String, String>,
}

pub fn sha256_file(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

fn moment_records(prefix: &str, store: &ParamStore<f32>, moments: &[Vec<f32>]) -> Vec<TensorRecord> {
    store
        .iter()
        .zip(moments)
        .map(|((name, t), m)| TensorRecord {
            name: format!("{prefix}{name}"),
            dims: t.shape().to_vec(),
            data: m.clone(),
        })
        .collect()
}

fn load_moments(prefix: &str, store: &ParamStore<f32>, records: &[TensorRecord]) -> Result<Vec<Vec<f32>>> {
    store
        .iter()
        .map(|(name, t)| {
            let full = format!("{prefix}{name}");
            let r = records
                .iter()
                .find(|r| r.name == full)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {full}")))?;
            if r.dims != t.shape() {
                return Err(Error::Checkpoint(format!("tensor {full} has wrong shape {:?}", r.dims)));
            }
            Ok(r.data.clone())
        })
        .collect()
}

/// Path of the metadata file next to a `.wdns` checkpoint.
pub fn meta_path(ckpt: &Path) -> PathBuf {
    ckpt.with_extension("json")
}

/// Writes `<path>` (tensors) and `<path>.json` (metadata).
pub fn save_checkpoint(path: impl AsRef<Path>, state: &TrainState, info: &RunInfo) -> Result<CheckpointMeta> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut records = state.denoiser.store.to_records("denoiser/");
    records.extend(state.quality.store.to_records("quality/"));
    let bins = state.norm.bins();
    records.push(TensorRecord { name: "norm/mean".into(), dims: vec![bins], data: state.norm.mean.clone() });
    records.push(TensorRecord { name: "norm/std".into(), dims: vec![bins], data: state.norm.std.clone() });
    records.extend(moment_records("adam/denoiser/m/", &state.denoiser.store, &state.denoiser_opt.m));
    records.extend(moment_records("adam/denoiser/v/", &state.denoiser.store, &state.denoiser_opt.v));
    records.extend(moment_records("adam/quality/m/", &state.quality.store, &state.quality_opt.m));
    records.extend(moment_records("adam/quality/v/", &state.quality.store, &state.quality_opt.v));
    write_container(path, &records)?;
    let meta = CheckpointMeta {
        stage: info.stage.clone(),
        denoiser_topology: DENOISER_TOPOLOGY.into(),
        quality_topology: QUALITY_TOPOLOGY.into(),
        protocol: info.protocol.clone(),
        alpha: info.loss.alpha,
        beta: info.loss.beta,
        seed: state.seed,
        counters: state.counters,
        streams: state.streams,
        denoiser_adam: state.denoiser_opt.config,
        denoiser_adam_t: state.denoiser_opt.t,
        quality_adam: state.quality_opt.config,
        quality_adam_t: state.quality_opt.t,
        manifests: info.manifests.clone(),
    };
    let mp = meta_path(path);
    std::fs::write(&mp, serde_json::to_string_pretty(&meta)?).map_err(|e| Error::io(&mp, e))?;
    Ok(meta)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(TrainState, CheckpointMeta)> {
    let path = path.as_ref();
    let mp = meta_path(path);
    let text = std::fs::read_to_string(&mp).map_err(|e| Error::io(&mp, e))?;
    let meta: CheckpointMeta =
        serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("{}: {e}", mp.display())))?;
    if meta.denoiser_topology != DENOISER_TOPOLOGY || meta.quality_topology != QUALITY_TOPOLOGY {
        return Err(Error::Checkpoint(format!(
            "topology mismatch: checkpoint has {:?} / {:?}",
            meta.denoiser_topology, meta.quality_topology
        )));
    }
    let records = read_container(path)?;
    let find = |name: &str| {
        records
            .iter()
            .find(|r| r.name == name)
            .map(|r| r.data.clone())
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))
    };
    let norm = NormStats { mean: find("norm/mean")?, std: find("norm/std")? };
    let mut state = TrainState::new(meta.seed, norm, meta.denoiser_adam, meta.quality_adam);
    state.denoiser.store.load_records("denoiser/", &records)?;
    state.quality.store.load_records("quality/", &records)?;
    state.denoiser_opt.m = load_moments("adam/denoiser/m/", &state.denoiser.store, &records)?;
    state.denoiser_opt.v = load_moments("adam/denoiser/v/", &state.denoiser.store, &records)?;
    state.quality_opt.m = load_moments("adam/quality/m/", &state.quality.store, &records)?;
    state.quality_opt.v = load_moments("adam/quality/v/", &state.quality.store, &records)?;
    state.denoiser_opt.t = meta.denoiser_adam_t;
    state.quality_opt.t = meta.quality_adam_t;
    state.counters = meta.counters;
    state.streams = meta.streams;
    Ok((state, meta))
}
