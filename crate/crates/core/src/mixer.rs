//! Synthetic mixture construction `y = s * h + g * d` and corpus building.

use std::collections::HashSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::audio::{quantized, read_wav, write_wav, Waveform, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::exec::ExecMode;

/// Frame length and hop of the active-level gate (32 ms / 16 ms).
pub const LEVEL_FRAME: usize = 512;
pub const LEVEL_HOP: usize = 256;
/// Frames quieter than this many dB below the loudest frame are inactive.
pub const LEVEL_GATE_DB: f64 = 15.9;

/// Linear convolution of `s` with `h`, truncated to `len(s)`.
pub fn reverberate(s: &Waveform, h: &Waveform) -> Result<Waveform> {
    if h.is_empty() {
        return Err(Error::domain("reverberate", "empty impulse response"));
    }
    if h.len() > s.len() {
        return Err(Error::domain(
            "reverberate",
            format!("impulse response ({}) longer than speech ({})", h.len(), s.len()),
        ));
    }
    let out = if h.len() <= 64 {
        direct_convolution(s.samples(), h.samples())
    } else {
        fft_convolution(s.samples(), h.samples())
    };
    Waveform::new(out)
}

fn direct_convolution(s: &[f64], h: &[f64]) -> Vec<f64> {
    (0..s.len())
        .map(|n| {
            h.iter()
                .enumerate()
                .take(n + 1)
                .map(|(k, hk)| hk * s[n - k])
                .sum()
        })
        .collect()
}

fn fft_convolution(s: &[f64], h: &[f64]) -> Vec<f64> {
    let n = (s.len() + h.len() - 1).next_power_of_two();
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let pad = |x: &[f64]| {
        let mut v: Vec<Complex64> = x.iter().map(|&r| Complex64::new(r, 0.0)).collect();
        v.resize(n, Complex64::new(0.0, 0.0));
        v
    };
    let (mut a, mut b) = (pad(s), pad(h));
    fwd.process(&mut a);
    fwd.process(&mut b);
    for (x, y) in a.iter_mut().zip(&b) {
        *x *= y;
    }
    inv.process(&mut a);
    a[..s.len()].iter().map(|c| c.re / n as f64).collect()
}

fn frame_powers(x: &[f64]) -> Vec<f64> {
    let power = |f: &[f64]| f.iter().map(|v| v * v).sum::<f64>() / f.len() as f64;
    if x.len() <= LEVEL_FRAME {
        return vec![power(x)];
    }
    (0..=(x.len() - LEVEL_FRAME) / LEVEL_HOP)
        .map(|i| power(&x[i * LEVEL_HOP..i * LEVEL_HOP + LEVEL_FRAME]))
        .collect()
}

/// Active speech level: mean power over 32 ms frames (16 ms hop, full frames
/// only) whose RMS is within 15.9 dB of the loudest frame.
pub fn active_level(x: &Waveform) -> Result<f64> {
    if x.is_empty() {
        return Err(Error::domain("active_level", "no active speech"));
    }
    let powers = frame_powers(x.samples());
    let max_rms = powers.iter().copied().fold(0.0, f64::max).sqrt();
    if max_rms == 0.0 {
        return Err(Error::domain("active_level", "no active speech"));
    }
    let threshold = max_rms * 10f64.powf(-LEVEL_GATE_DB / 20.0);
    let active: Vec<f64> = powers.into_iter().filter(|p| p.sqrt() > threshold).collect();
    Ok(active.iter().sum::<f64>() / active.len() as f64)
}

/// Noise gain `g` that puts `d` at `snr_db` below the active level of `speech`.
pub fn noise_gain(speech_level: f64, noise_power: f64, snr_db: f64) -> Result<f64> {
    if !(noise_power > 0.0) {
        return Err(Error::domain("mix_at_snr", "noise has zero power"));
    }
    if !snr_db.is_finite() {
        return Err(Error::domain("mix_at_snr", "non-finite SNR"));
    }
    Ok((speech_level / (noise_power * 10f64.powf(snr_db / 10.0))).sqrt())
}

/// `speech + g * d[..len(speech)]` with `g` from [`noise_gain`].
pub fn mix_at_snr(speech: &Waveform, d: &Waveform, snr_db: f64) -> Result<(Waveform, f64)> {
    if d.len() < speech.len() {
        return Err(Error::domain(
            "mix_at_snr",
            format!("noise ({}) shorter than speech ({})", d.len(), speech.len()),
        ));
    }
    let seg = &d.samples()[..speech.len()];
    let noise_power = seg.iter().map(|v| v * v).sum::<f64>() / seg.len().max(1) as f64;
    let g = noise_gain(active_level(speech)?, noise_power, snr_db)?;
    let y = speech
        .samples()
        .iter()
        .zip(seg)
        .map(|(s, n)| s + g * n)
        .collect();
    Ok((Waveform::new(y)?, g))
}

/// Crops (from a random offset) or tiles (starting at a random offset) the
/// noise to exactly `len` samples.
pub fn fit_noise(noise: &Waveform, len: usize, rng: &mut impl Rng) -> Result<Waveform> {
    if noise.is_empty() {
        return Err(Error::domain("fit_noise", "empty noise"));
    }
    let n = noise.samples();
    let out = if n.len() >= len {
        let off = rng.gen_range(0..=n.len() - len);
        n[off..off + len].to_vec()
    } else {
        let off = rng.gen_range(0..n.len());
        (0..len).map(|i| n[(off + i) % n.len()]).collect()
    };
    Waveform::new(out)
}

/// Direct-to-reverberant energy ratio of generated impulse responses.
pub const DEFAULT_DRR_DB: f64 = 6.0;

/// Exponentially decaying noise tail with a unit direct path at tap 0; the
/// tail is scaled so that direct energy over tail energy equals `drr_db`.
pub fn generate_rir(t60: f64, drr_db: f64, len: usize, seed: u64) -> Result<Waveform> {
    if !(0.05..=3.0).contains(&t60) || len == 0 || !drr_db.is_finite() {
        return Err(Error::domain(
            "generate_rir",
            format!("t60 {t60}, drr {drr_db} dB or length {len} out of range"),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let decay = 3.0 * std::f64::consts::LN_10 / (t60 * f64::from(SAMPLE_RATE));
    let mut h: Vec<f64> = (0..len)
        .map(|n| {
            let g: f64 = rng.sample(StandardNormal);
            g * (-decay * n as f64).exp()
        })
        .collect();
    h[0] = 0.0;
    let tail: f64 = h.iter().map(|v| v * v).sum();
    if tail > 0.0 {
        let gain = (10f64.powf(-drr_db / 10.0) / tail).sqrt();
        h.iter_mut().for_each(|v| *v *= gain);
    }
    h[0] = 1.0;
    Waveform::new(h)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Clean,
    Noise,
    Rir,
    Real,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub id: String,
    pub role: Role,
    pub path: PathBuf,
}

/// Parses `id<TAB>role<TAB>path` lines. Relative paths resolve against the
/// manifest's directory; blank lines and `#` comments are skipped.
pub fn parse_manifest(text: &str, base: &Path) -> Result<Vec<ManifestEntry>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::Manifest(format!(
                "line {}: expected 3 tab-separated fields, found {}",
                lineno + 1,
                fields.len()
            )));
        }
        let role = match fields[1] {
            "clean" => Role::Clean,
            "noise" => Role::Noise,
            "rir" => Role::Rir,
            "real" => Role::Real,
            other => {
                return Err(Error::Manifest(format!("line {}: unknown role {other:?}", lineno + 1)))
            }
        };
        let id = fields[0].to_string();
        if id.is_empty() || id.contains(['/', '\\']) {
            return Err(Error::Manifest(format!("line {}: invalid id {id:?}", lineno + 1)));
        }
        if !seen.insert(id.clone()) {
            return Err(Error::Manifest(format!("duplicate id {id:?}")));
        }
        let p = PathBuf::from(fields[2]);
        let path = if p.is_absolute() { p } else { base.join(p) };
        out.push(ManifestEntry { id, role, path });
    }
    Ok(out)
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text, path.parent().unwrap_or(Path::new(".")))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum SnrDistribution {
    /// Uniform on `[lo, hi]` dB.
    Uniform([f64; 2]),
    /// Uniform over a finite set of dB values.
    Choice(Vec<f64>),
}

impl SnrDistribution {
    pub fn validate(&self) -> Result<()> {
        match self {
            SnrDistribution::Uniform([lo, hi]) if lo.is_finite() && hi.is_finite() && lo <= hi => Ok(()),
            SnrDistribution::Choice(v) if !v.is_empty() && v.iter().all(|x| x.is_finite()) => Ok(()),
            other => Err(Error::Config(format!("invalid SNR distribution {other:?}"))),
        }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        match self {
            SnrDistribution::Uniform([lo, hi]) if lo == hi => *lo,
            SnrDistribution::Uniform([lo, hi]) => rng.gen_range(*lo..=*hi),
            SnrDistribution::Choice(v) => v[rng.gen_range(0..v.len())],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusConfig {
    pub snr: SnrDistribution,
    pub reverb_fraction: f64,
    #[serde(default)]
    pub val_fraction: f64,
    #[serde(default)]
    pub test_fraction: f64,
    /// T60 range of generated impulse responses when the manifest has none.
    #[serde(default = "default_t60")]
    pub t60: [f64; 2],
    /// Direct-to-reverberant ratio of generated impulse responses.
    #[serde(default = "default_drr")]
    pub drr_db: f64,
    pub seed: u64,
}

fn default_t60() -> [f64; 2] {
    [0.2, 1.0]
}

fn default_drr() -> f64 {
    DEFAULT_DRR_DB
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            snr: SnrDistribution::Uniform([0.0, 40.0]),
            reverb_fraction: 0.5,
            val_fraction: 0.1,
            test_fraction: 0.0,
            t60: default_t60(),
            drr_db: DEFAULT_DRR_DB,
            seed: 0,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        self.snr.validate()?;
        let frac = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be in [0, 1], got {v}")))
            }
        };
        frac("reverb_fraction", self.reverb_fraction)?;
        frac("val_fraction", self.val_fraction)?;
        frac("test_fraction", self.test_fraction)?;
        if self.val_fraction + self.test_fraction > 1.0 {
            return Err(Error::Config("val_fraction + test_fraction exceeds 1".into()));
        }
        if !(self.t60[0] >= 0.05 && self.t60[0] <= self.t60[1] && self.t60[1] <= 3.0) {
            return Err(Error::Config(format!("invalid t60 range {:?}", self.t60)));
        }
        if !self.drr_db.is_finite() {
            return Err(Error::Config(format!("invalid drr_db {}", self.drr_db)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Synthetic,
    Real,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Sidecar metadata, one JSON object per utterance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UtteranceMeta {
    pub id: String,
    pub kind: Kind,
    pub split: Split,
    pub snr_db: Option<f64>,
    pub rir_id: Option<String>,
    pub noise_id: Option<String>,
    pub scale: Option<f64>,
    pub reverberated: bool,
}

/// One utterance; synthetic records carry both references, real ones none.
#[derive(Clone, Debug, PartialEq)]
pub struct UtteranceRecord {
    pub meta: UtteranceMeta,
    pub noisy: Waveform,
    pub clean: Option<Waveform>,
    pub clean_rev: Option<Waveform>,
}

impl UtteranceRecord {
    pub fn id(&self) -> &str {
        &self.meta.id
    }

    pub fn kind(&self) -> Kind {
        self.meta.kind
    }

    pub fn is_consistent(&self) -> bool {
        match self.meta.kind {
            Kind::Synthetic => self.clean.is_some() && self.clean_rev.is_some(),
            Kind::Real => self.clean.is_none() && self.clean_rev.is_none(),
        }
    }
}

/// In-memory synthesis result, including the scaled noise actually added.
#[derive(Clone, Debug)]
pub struct Synthesized {
    pub record: UtteranceRecord,
    pub scaled_noise: Waveform,
}

/// Stable 64-bit seed derived from the corpus seed and a label.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(label.as_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().unwrap())
}

/// Builds one synthetic record from `clean` with all randomness derived from
/// `(cfg.seed, id)`.
pub fn synthesize(
    id: &str,
    clean: &Waveform,
    noises: &[(String, Waveform)],
    rir: Option<(&str, &Waveform)>,
    cfg: &CorpusConfig,
    split: Split,
) -> Result<Synthesized> {
    if noises.is_empty() {
        return Err(Error::Manifest("no noise files".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, id));
    let snr_db = cfg.snr.sample(&mut rng);
    let (noise_id, noise) = &noises[rng.gen_range(0..noises.len())];
    let d = fit_noise(noise, clean.len(), &mut rng)?;
    let clean_rev = match rir {
        Some((_, h)) if h.len() > clean.len() => {
            let trimmed = Waveform::new(h.samples()[..clean.len()].to_vec())?;
            reverberate(clean, &trimmed)?
        }
        Some((_, h)) => reverberate(clean, h)?,
        None => clean.clone(),
    };
    let (noisy, scale) = mix_at_snr(&clean_rev, &d, snr_db)?;
    let scaled_noise = Waveform::new(d.samples().iter().map(|v| v * scale).collect())?;
    Ok(Synthesized {
        record: UtteranceRecord {
            meta: UtteranceMeta {
                id: id.to_string(),
                kind: Kind::Synthetic,
                split,
                snr_db: Some(snr_db),
                rir_id: rir.map(|(r, _)| r.to_string()),
                noise_id: Some(noise_id.clone()),
                scale: Some(scale),
                reverberated: rir.is_some(),
            },
            noisy,
            clean: Some(clean.clone()),
            clean_rev: Some(clean_rev),
        },
        scaled_noise,
    })
}

/// Exactly `round(fraction * n)` of `n` items, chosen by a seeded shuffle.
pub fn choose_subset(n: usize, fraction: f64, seed: u64) -> Vec<bool> {
    let k = (fraction * n as f64).round() as usize;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut chosen = vec![false; n];
    for &i in &idx[..k.min(n)] {
        chosen[i] = true;
    }
    chosen
}

fn assign_splits(n: usize, cfg: &CorpusConfig, label: &str) -> Vec<Split> {
    let n_val = (cfg.val_fraction * n as f64).round() as usize;
    let n_test = ((cfg.test_fraction * n as f64).round() as usize).min(n - n_val.min(n));
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, label)));
    let mut splits = vec![Split::Train; n];
    for (rank, &i) in idx.iter().enumerate() {
        if rank < n_val {
            splits[i] = Split::Val;
        } else if rank < n_val + n_test {
            splits[i] = Split::Test;
        }
    }
    splits
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct CorpusSummary {
    pub synthetic: usize,
    pub real: usize,
    pub reverberated: usize,
    /// Counts of SNR draws per 5 dB bin, keyed by the bin's lower edge.
    pub snr_histogram: Vec<(i64, usize)>,
}

impl CorpusSummary {
    fn from_meta(meta: &[UtteranceMeta]) -> Self {
        let mut hist = std::collections::BTreeMap::new();
        for m in meta {
            if let Some(snr) = m.snr_db {
                *hist.entry(((snr / 5.0).floor() * 5.0) as i64).or_insert(0) += 1;
            }
        }
        CorpusSummary {
            synthetic: meta.iter().filter(|m| m.kind == Kind::Synthetic).count(),
            real: meta.iter().filter(|m| m.kind == Kind::Real).count(),
            reverberated: meta.iter().filter(|m| m.reverberated).count(),
            snr_histogram: hist.into_iter().collect(),
        }
    }
}

pub const METADATA_FILE: &str = "metadata.jsonl";

/// Synthesizes every `clean` entry of the manifest against its noises and
/// impulse responses, copies `real` entries, and writes
/// `<out>/{noisy,clean,clean_rev}/<id>.wav` plus `metadata.jsonl`.
pub fn build_corpus(
    manifest: impl AsRef<Path>,
    cfg: &CorpusConfig,
    out: impl AsRef<Path>,
    exec: ExecMode,
) -> Result<CorpusSummary> {
    cfg.validate()?;
    let entries = read_manifest(manifest)?;
    for e in &entries {
        if !e.path.is_file() {
            return Err(Error::MissingFile(e.path.clone()));
        }
    }
    let of_role = |r: Role| entries.iter().filter(move |e| e.role == r);
    let load = |r: Role| -> Result<Vec<(String, Waveform)>> {
        of_role(r).map(|e| Ok((e.id.clone(), read_wav(&e.path)?))).collect()
    };
    let noises = load(Role::Noise)?;
    let mut rirs = load(Role::Rir)?;
    let cleans: Vec<&ManifestEntry> = of_role(Role::Clean).collect();
    let reals: Vec<&ManifestEntry> = of_role(Role::Real).collect();
    if !cleans.is_empty() && noises.is_empty() {
        return Err(Error::Manifest("clean entries need at least one noise entry".into()));
    }
    let reverb = choose_subset(cleans.len(), cfg.reverb_fraction, derive_seed(cfg.seed, "reverb"));
    if rirs.is_empty() && reverb.iter().any(|&r| r) {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "rir"));
        for k in 0..8 {
            let t60 = rng.gen_range(cfg.t60[0]..=cfg.t60[1]);
            let len = ((t60 * f64::from(SAMPLE_RATE)) as usize).max(1);
            rirs.push((format!("gen{k}"), generate_rir(t60, cfg.drr_db, len, rng.gen())?));
        }
    }
    let synth_splits = assign_splits(cleans.len(), cfg, "split/synthetic");
    let real_splits = assign_splits(reals.len(), cfg, "split/real");

    let out = out.as_ref();
    for sub in ["noisy", "clean", "clean_rev"] {
        let d = out.join(sub);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }

    let jobs: Vec<usize> = (0..cleans.len()).collect();
    let metas = exec.try_map(&jobs, |&i| -> Result<UtteranceMeta> {
        let e = cleans[i];
        let clean = read_wav(&e.path)?;
        let rir = if reverb[i] {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &format!("rir/{}", e.id)));
            let (rid, h) = &rirs[rng.gen_range(0..rirs.len())];
            Some((rid.as_str(), h))
        } else {
            None
        };
        let s = synthesize(&e.id, &clean, &noises, rir, cfg, synth_splits[i])?;
        let r = &s.record;
        write_wav(out.join("noisy").join(format!("{}.wav", e.id)), &r.noisy)?;
        write_wav(out.join("clean").join(format!("{}.wav", e.id)), r.clean.as_ref().unwrap())?;
        write_wav(out.join("clean_rev").join(format!("{}.wav", e.id)), r.clean_rev.as_ref().unwrap())?;
        Ok(s.record.meta)
    })?;
    let real_jobs: Vec<usize> = (0..reals.len()).collect();
    let real_metas = exec.try_map(&real_jobs, |&i| -> Result<UtteranceMeta> {
        let e = reals[i];
        let w = read_wav(&e.path)?;
        write_wav(out.join("noisy").join(format!("{}.wav", e.id)), &w)?;
        Ok(UtteranceMeta {
            id: e.id.clone(),
            kind: Kind::Real,
            split: real_splits[i],
            snr_db: None,
            rir_id: None,
            noise_id: None,
            scale: None,
            reverberated: false,
        })
    })?;
    let all: Vec<UtteranceMeta> = metas.into_iter().chain(real_metas).collect();
    let path = out.join(METADATA_FILE);
    let mut f = std::io::BufWriter::new(std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?);
    for m in &all {
        writeln!(f, "{}", serde_json::to_string(m)?).map_err(|e| Error::io(&path, e))?;
    }
    f.flush().map_err(|e| Error::io(&path, e))?;
    Ok(CorpusSummary::from_meta(&all))
}

/// Records of a corpus directory written by [`build_corpus`].
#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub records: Vec<UtteranceRecord>,
}

impl Dataset {
    pub fn load(root: impl AsRef<Path>, exec: ExecMode) -> Result<Self> {
        let root = root.as_ref();
        let path = root.join(METADATA_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let metas = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str::<UtteranceMeta>)
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let records = exec.try_map(&metas, |m| -> Result<UtteranceRecord> {
            let wav = |sub: &str| read_wav(root.join(sub).join(format!("{}.wav", m.id)));
            let (clean, clean_rev) = match m.kind {
                Kind::Synthetic => (Some(wav("clean")?), Some(wav("clean_rev")?)),
                Kind::Real => (None, None),
            };
            Ok(UtteranceRecord {
                meta: m.clone(),
                noisy: wav("noisy")?,
                clean,
                clean_rev,
            })
        })?;
        Ok(Dataset { records })
    }

    pub fn select(&self, kind: Kind, split: Split) -> Vec<&UtteranceRecord> {
        self.records
            .iter()
            .filter(|r| r.meta.kind == kind && r.meta.split == split)
            .collect()
    }
}

/// Quantizes every waveform of a record to the 16-bit grid, as a disk
/// round trip would.
pub fn quantize_record(r: &UtteranceRecord) -> UtteranceRecord {
    UtteranceRecord {
        meta: r.meta.clone(),
        noisy: quantized(&r.noisy),
        clean: r.clean.as_ref().map(quantized),
        clean_rev: r.clean_rev.as_ref().map(quantized),
    }
}
