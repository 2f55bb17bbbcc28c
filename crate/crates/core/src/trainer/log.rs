use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LossKind;

pub const STEP_LOG_HEADER: &str = "step,cycle,phase,loss_kind,loss_value,lr,wall_ms";

/// Which model an update belongs to and on which data.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    PretrainDenoiser,
    PretrainQuality,
    Stage1Denoiser,
    Stage1Quality,
    FcrnReal,
    FcrnSynth,
    Pesqnet,
}

impl Phase {
    /// `true` when the update changes the denoiser.
    pub fn updates_denoiser(self) -> bool {
        matches!(
            self,
            Phase::PretrainDenoiser | Phase::Stage1Denoiser | Phase::FcrnReal | Phase::FcrnSynth
        )
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Phase::PretrainDenoiser => "pretrain_denoiser",
            Phase::PretrainQuality => "pretrain_quality",
            Phase::Stage1Denoiser => "stage1_denoiser",
            Phase::Stage1Quality => "stage1_quality",
            Phase::FcrnReal => "fcrn_real",
            Phase::FcrnSynth => "fcrn_synth",
            Phase::Pesqnet => "pesqnet",
        };
        f.write_str(s)
    }
}

/// One parameter update. Checksums are taken after the update.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub cycle: u64,
    pub phase: Phase,
    pub loss_kind: LossKind,
    pub loss_value: f64,
    pub lr: f64,
    pub wall_ms: f64,
    pub denoiser_checksum: String,
    pub quality_checksum: String,
}

impl StepRecord {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{:.3}",
            self.step, self.cycle, self.phase, self.loss_kind, self.loss_value, self.lr, self.wall_ms
        )
    }
}

/// In-memory step history with an optional CSV sink.
#[derive(Debug, Default)]
pub struct StepLog {
    records: Vec<StepRecord>,
    sink: Option<(PathBuf, BufWriter<File>)>,
}

impl StepLog {
    pub fn in_memory() -> Self {
        StepLog::default()
    }

    /// Appends to `path`, writing the header if the file is new or empty.
    pub fn to_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let fresh = std::fs::metadata(&path).map(|m| m.len() == 0).unwrap_or(true);
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        let mut w = BufWriter::new(file);
        if fresh {
            writeln!(w, "{STEP_LOG_HEADER}").map_err(|e| Error::io(&path, e))?;
        }
        Ok(StepLog { records: Vec::new(), sink: Some((path, w)) })
    }

    pub fn push(&mut self, r: StepRecord) -> Result<()> {
        if let Some((path, w)) = &mut self.sink {
            writeln!(w, "{}", r.csv_line()).map_err(|e| Error::io(&*path, e))?;
        }
        log::debug!("{}", r.csv_line());
        self.records.push(r);
        Ok(())
    }

    pub fn records(&self) -> &[StepRecord] {
        &self.records
    }

    pub fn flush(&mut self) -> Result<()> {
        if let Some((path, w)) = &mut self.sink {
            w.flush().map_err(|e| Error::io(&*path, e))?;
        }
        Ok(())
    }
}

impl Drop for StepLog {
    fn drop(&mut self) {
        let _ = self.flush();
    }
}
