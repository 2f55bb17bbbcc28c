//! Segmental SNR, its improvement, and the reference-based quality oracle
//! that supplies regression targets for the quality estimator.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::audio::Waveform;
use crate::error::{Error, Result};

pub const QUALITY_MIN: f64 = 1.04;
pub const QUALITY_MAX: f64 = 4.64;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegSnrConfig {
    pub frame: usize,
    pub hop: usize,
    pub clamp_lo: f64,
    pub clamp_hi: f64,
}

impl Default for SegSnrConfig {
    fn default() -> Self {
        SegSnrConfig {
            frame: 256,
            hop: 256,
            clamp_lo: -10.0,
            clamp_hi: 35.0,
        }
    }
}

impl SegSnrConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frame == 0 || self.hop == 0 {
            return Err(Error::Config("segmental SNR frame and hop must be positive".into()));
        }
        if !(self.clamp_lo < self.clamp_hi) {
            return Err(Error::Config(format!(
                "clamp_lo {} must be below clamp_hi {}",
                self.clamp_lo, self.clamp_hi
            )));
        }
        Ok(())
    }
}

/// Per-frame clamped SNRs; frames whose reference energy is zero are
/// skipped. A trailing partial frame counts as a frame.
pub fn seg_snr_frames(reference: &Waveform, test: &Waveform, cfg: &SegSnrConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    if reference.len() != test.len() {
        return Err(Error::domain(
            "seg_snr",
            format!("length mismatch: {} vs {}", reference.len(), test.len()),
        ));
    }
    let (r, t) = (reference.samples(), test.samples());
    let mut out = Vec::new();
    let mut start = 0;
    while start < r.len() {
        let end = (start + cfg.frame).min(r.len());
        let sig: f64 = r[start..end].iter().map(|x| x * x).sum();
        if sig > 0.0 {
            let err: f64 = r[start..end]
                .iter()
                .zip(&t[start..end])
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            let db = if err == 0.0 {
                f64::INFINITY
            } else {
                10.0 * (sig / err).log10()
            };
            out.push(db.clamp(cfg.clamp_lo, cfg.clamp_hi));
        }
        start += cfg.hop;
    }
    if out.is_empty() {
        return Err(Error::domain("seg_snr", "reference has no non-silent frame"));
    }
    Ok(out)
}

pub fn seg_snr(reference: &Waveform, test: &Waveform, cfg: &SegSnrConfig) -> Result<f64> {
    let frames = seg_snr_frames(reference, test, cfg)?;
    Ok(frames.iter().sum::<f64>() / frames.len() as f64)
}

/// `seg_snr(clean_rev, enhanced) - seg_snr(clean_rev, noisy)`.
pub fn delta_seg_snr(
    clean_rev: &Waveform,
    noisy: &Waveform,
    enhanced: &Waveform,
    cfg: &SegSnrConfig,
) -> Result<f64> {
    Ok(seg_snr(clean_rev, enhanced, cfg)? - seg_snr(clean_rev, noisy, cfg)?)
}

/// Utterance-level quality on the [1.04, 4.64] scale.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct QualityScore(f64);

impl QualityScore {
    pub fn new(value: f64) -> Result<Self> {
        if !(QUALITY_MIN..=QUALITY_MAX).contains(&value) {
            return Err(Error::domain(
                "quality_score",
                format!("{value} outside [{QUALITY_MIN}, {QUALITY_MAX}]"),
            ));
        }
        Ok(QualityScore(value))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Source of ground-truth quality labels. Implementations compare a degraded
/// signal against its clean reference.
pub trait QualityOracle: Send + Sync {
    fn score(&self, reference: &Waveform, degraded: &Waveform) -> Result<QualityScore>;
}

/// Affine map of clamped segmental SNR onto the quality scale:
/// -10 dB maps to 1.04 and 35 dB to 4.64.
#[derive(Clone, Copy, Debug, Default)]
pub struct SegSnrOracle {
    pub cfg: SegSnrConfig,
}

pub fn quality_from_seg_snr(db: f64, cfg: &SegSnrConfig) -> QualityScore {
    let c = db.clamp(cfg.clamp_lo, cfg.clamp_hi);
    let t = (c - cfg.clamp_lo) / (cfg.clamp_hi - cfg.clamp_lo);
    let q = QUALITY_MIN * (1.0 - t) + QUALITY_MAX * t;
    QualityScore(q.clamp(QUALITY_MIN, QUALITY_MAX))
}

impl QualityOracle for SegSnrOracle {
    fn score(&self, reference: &Waveform, degraded: &Waveform) -> Result<QualityScore> {
        Ok(quality_from_seg_snr(seg_snr(reference, degraded, &self.cfg)?, &self.cfg))
    }
}

pub fn quality_oracle(reference: &Waveform, degraded: &Waveform) -> Result<QualityScore> {
    SegSnrOracle::default().score(reference, degraded)
}

/// One row of the evaluation report.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub utterance_id: String,
    pub reverberated: bool,
    pub seg_snr_noisy: f64,
    pub seg_snr_enhanced: f64,
    pub delta_seg_snr: f64,
    pub oracle_q_noisy: f64,
    pub oracle_q_enhanced: f64,
    pub estimated_q_enhanced: Option<f64>,
}

pub const REPORT_HEADER: &str = "utterance_id,seg_snr_noisy,seg_snr_enhanced,delta_seg_snr,oracle_q_noisy,oracle_q_enhanced,estimated_q_enhanced";

fn mean_row(label: &str, rows: &[&EvalRow]) -> EvalRow {
    let n = rows.len() as f64;
    let avg = |f: &dyn Fn(&EvalRow) -> f64| rows.iter().map(|r| f(r)).sum::<f64>() / n;
    let est = if rows.iter().all(|r| r.estimated_q_enhanced.is_some()) {
        Some(avg(&|r| r.estimated_q_enhanced.unwrap()))
    } else {
        None
    };
    EvalRow {
        utterance_id: label.to_string(),
        reverberated: false,
        seg_snr_noisy: avg(&|r| r.seg_snr_noisy),
        seg_snr_enhanced: avg(&|r| r.seg_snr_enhanced),
        delta_seg_snr: avg(&|r| r.delta_seg_snr),
        oracle_q_noisy: avg(&|r| r.oracle_q_noisy),
        oracle_q_enhanced: avg(&|r| r.oracle_q_enhanced),
        estimated_q_enhanced: est,
    }
}

/// Aggregate rows: `mean_all`, plus `mean_dry` and `mean_reverb` when both
/// groups are present.
pub fn aggregate_rows(rows: &[EvalRow]) -> Vec<EvalRow> {
    if rows.is_empty() {
        return Vec::new();
    }
    let all: Vec<&EvalRow> = rows.iter().collect();
    let mut out = vec![mean_row("mean_all", &all)];
    let dry: Vec<&EvalRow> = rows.iter().filter(|r| !r.reverberated).collect();
    let wet: Vec<&EvalRow> = rows.iter().filter(|r| r.reverberated).collect();
    if !dry.is_empty() && !wet.is_empty() {
        out.push(mean_row("mean_dry", &dry));
        out.push(mean_row("mean_reverb", &wet));
    }
    out
}

fn format_row(r: &EvalRow) -> String {
    format!(
        "{},{},{},{},{},{},{}",
        r.utterance_id,
        r.seg_snr_noisy,
        r.seg_snr_enhanced,
        r.delta_seg_snr,
        r.oracle_q_noisy,
        r.oracle_q_enhanced,
        r.estimated_q_enhanced.map(|v| v.to_string()).unwrap_or_default()
    )
}

pub fn write_report(path: impl AsRef<Path>, rows: &[EvalRow]) -> Result<()> {
    let path = path.as_ref();
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    let mut lines = vec![REPORT_HEADER.to_string()];
    lines.extend(rows.iter().map(format_row));
    lines.extend(aggregate_rows(rows).iter().map(format_row));
    for l in lines {
        writeln!(f, "{l}").map_err(|e| Error::io(path, e))?;
    }
    f.flush().map_err(|e| Error::io(path, e))
}
