//! Deterministic synthetic corpus for tests, benches and demos.
//!
//! Clean files are harmonic "syllables" shaped by formant-like resonances
//! with pauses and short fricative bursts; noises cover several spectral
//! colours and modulations; `real` files are mixtures whose references are
//! discarded.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{write_wav, Waveform, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::mixer::{derive_seed, fit_noise, generate_rir, DEFAULT_DRR_DB, mix_at_snr, reverberate};

const FS: f64 = SAMPLE_RATE as f64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixtureConfig {
    pub clean: usize,
    pub real: usize,
    pub noises: usize,
    pub rirs: usize,
    pub seconds: f64,
    pub seed: u64,
}

impl Default for FixtureConfig {
    fn default() -> Self {
        FixtureConfig { clean: 60, real: 12, noises: 6, rirs: 4, seconds: 2.0, seed: 7 }
    }
}

impl FixtureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.clean > 0 && self.noises == 0 {
            return Err(Error::Config("fixture needs at least one noise".into()));
        }
        if !(self.seconds >= 0.25 && self.seconds <= 60.0) {
            return Err(Error::Config(format!("fixture length {} s out of range", self.seconds)));
        }
        Ok(())
    }
}

fn hann_env(n: usize, len: usize) -> f64 {
    (PI * (n as f64 + 0.5) / len as f64).sin().powi(2)
}

/// Speech-like signal of `len` samples with peak amplitude in `[0.3, 0.6]`.
pub fn speech_like(len: usize, rng: &mut impl Rng) -> Vec<f64> {
    let mut out = vec![0.0; len];
    let mut t = (rng.gen_range(0.03..0.12) * FS) as usize;
    while t < len {
        if rng.gen_bool(0.8) {
            let dur = (rng.gen_range(0.12..0.35) * FS) as usize;
            let f0a = rng.gen_range(95.0..230.0);
            let f0b = f0a * rng.gen_range(0.8..1.2);
            let formants = [
                (rng.gen_range(300.0..900.0), rng.gen_range(90.0..160.0)),
                (rng.gen_range(900.0..2400.0), rng.gen_range(120.0..220.0)),
                (rng.gen_range(2400.0..3600.0), rng.gen_range(150.0..260.0)),
            ];
            let mut phase = 0.0;
            for n in 0..dur.min(len - t) {
                let f0 = f0a + (f0b - f0a) * n as f64 / dur as f64;
                phase += 2.0 * PI * f0 / FS;
                let mut v = 0.0;
                let mut k = 1;
                while (k as f64) * f0 < 4000.0 {
                    let f = k as f64 * f0;
                    let amp: f64 = formants
                        .iter()
                        .enumerate()
                        .map(|(i, (fc, bw))| 0.6f64.powi(i as i32) * (-((f - fc) / bw).powi(2)).exp())
                        .sum::<f64>()
                        + 0.05 / (k as f64).sqrt();
                    v += amp * (k as f64 * phase).sin();
                    k += 1;
                }
                out[t + n] += v * hann_env(n, dur);
            }
            t += dur;
        } else {
            let dur = (rng.gen_range(0.05..0.15) * FS) as usize;
            let mut prev = 0.0;
            for n in 0..dur.min(len - t) {
                let w: f64 = rng.gen_range(-1.0..1.0);
                out[t + n] += 0.35 * (w - prev) * hann_env(n, dur);
                prev = w;
            }
            t += dur;
        }
        t += (rng.gen_range(0.03..0.2) * FS) as usize;
    }
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        let g = rng.gen_range(0.3..0.6) / peak;
        out.iter_mut().for_each(|v| *v *= g);
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NoiseKind {
    White,
    Pink,
    Brown,
    Babble,
    Hum,
    Modulated,
}

impl NoiseKind {
    pub const ALL: [NoiseKind; 6] = [
        NoiseKind::White,
        NoiseKind::Pink,
        NoiseKind::Brown,
        NoiseKind::Babble,
        NoiseKind::Hum,
        NoiseKind::Modulated,
    ];
}

/// Noise of the given kind normalized to an RMS of 0.1.
pub fn noise_like(kind: NoiseKind, len: usize, rng: &mut impl Rng) -> Vec<f64> {
    fn white(n: usize, rng: &mut impl Rng) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }
    let mut out = match kind {
        NoiseKind::White => white(len, rng),
        NoiseKind::Pink => {
            let w = white(len, rng);
            let mut b = [0.0f64; 3];
            w.iter()
                .map(|&x| {
                    b[0] = 0.99765 * b[0] + x * 0.0990460;
                    b[1] = 0.96300 * b[1] + x * 0.2965164;
                    b[2] = 0.57000 * b[2] + x * 1.0526913;
                    b[0] + b[1] + b[2] + x * 0.1848
                })
                .collect()
        }
        NoiseKind::Brown => {
            let w = white(len, rng);
            let mut acc = 0.0;
            w.iter()
                .map(|&x| {
                    acc = 0.995 * acc + x;
                    acc
                })
                .collect()
        }
        NoiseKind::Babble => {
            let mut v = vec![0.0; len];
            for _ in 0..5 {
                let s = speech_like(len, rng);
                v.iter_mut().zip(&s).for_each(|(a, b)| *a += b);
            }
            v
        }
        NoiseKind::Hum => {
            let f = if rng.gen_bool(0.5) { 50.0 } else { 60.0 };
            let w = white(len, rng);
            (0..len)
                .map(|n| {
                    let t = n as f64 / FS;
                    (1..=6).map(|k| (2.0 * PI * f * k as f64 * t).sin() / k as f64).sum::<f64>()
                        + 0.2 * w[n]
                })
                .collect()
        }
        NoiseKind::Modulated => {
            let f = rng.gen_range(0.5..4.0);
            let w = white(len, rng);
            (0..len)
                .map(|n| w[n] * (1.0 + 0.8 * (2.0 * PI * f * n as f64 / FS).sin()))
                .collect()
        }
    };
    let rms = (out.iter().map(|v| v * v).sum::<f64>() / len.max(1) as f64).sqrt();
    if rms > 0.0 {
        out.iter_mut().for_each(|v| *v *= 0.1 / rms);
    }
    out
}

/// Writes the fixture under `dir` and returns the manifest path.
pub fn write_fixture(dir: impl AsRef<Path>, cfg: &FixtureConfig) -> Result<PathBuf> {
    cfg.validate()?;
    let dir = dir.as_ref();
    for sub in ["clean", "noise", "rir", "real"] {
        let d = dir.join(sub);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let len = (cfg.seconds * FS).round() as usize;
    let mut manifest = String::new();
    let mut entry = |id: &str, role: &str, rel: &str| {
        writeln!(manifest, "{id}\t{role}\t{rel}").unwrap();
    };

    let mut noises = Vec::new();
    for i in 0..cfg.noises {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &format!("noise{i}")));
        let kind = NoiseKind::ALL[i % NoiseKind::ALL.len()];
        let w = Waveform::new(noise_like(kind, 2 * len, &mut rng))?;
        let rel = format!("noise/n{i:03}.wav");
        write_wav(dir.join(&rel), &w)?;
        entry(&format!("n{i:03}"), "noise", &rel);
        noises.push(w);
    }
    let mut rirs = Vec::new();
    for i in 0..cfg.rirs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &format!("rir{i}")));
        let t60 = rng.gen_range(0.2..1.0);
        let taps = ((t60 * FS) as usize).min(len).max(1);
        let h = generate_rir(t60, DEFAULT_DRR_DB, taps, rng.gen())?;
        let rel = format!("rir/h{i:03}.wav");
        write_wav(dir.join(&rel), &h)?;
        entry(&format!("h{i:03}"), "rir", &rel);
        rirs.push(h);
    }
    for i in 0..cfg.clean {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &format!("clean{i}")));
        let w = Waveform::new(speech_like(len, &mut rng))?;
        let rel = format!("clean/s{i:04}.wav");
        write_wav(dir.join(&rel), &w)?;
        entry(&format!("s{i:04}"), "clean", &rel);
    }
    for i in 0..cfg.real {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &format!("real{i}")));
        let s = Waveform::new(speech_like(len, &mut rng))?;
        let s = if !rirs.is_empty() && rng.gen_bool(0.5) {
            reverberate(&s, &rirs[rng.gen_range(0..rirs.len())])?
        } else {
            s
        };
        let y = if noises.is_empty() {
            s
        } else {
            let d = fit_noise(&noises[rng.gen_range(0..noises.len())], len, &mut rng)?;
            mix_at_snr(&s, &d, rng.gen_range(0.0..15.0))?.0
        };
        let peak = y.samples().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let y = if peak > 0.95 {
            Waveform::new(y.samples().iter().map(|v| v * 0.95 / peak).collect())?
        } else {
            y
        };
        let rel = format!("real/r{i:04}.wav");
        write_wav(dir.join(&rel), &y)?;
        entry(&format!("r{i:04}"), "real", &rel);
    }
    let path = dir.join("manifest.tsv");
    std::fs::write(&path, manifest).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mixer::{active_level, read_manifest, Role};

    #[test]
    fn speech_has_pauses_and_bounded_peak() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = speech_like(32000, &mut rng);
        let peak = s.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!((0.29..=0.61).contains(&peak));
        let silent = s.chunks(256).filter(|c| c.iter().all(|v| v.abs() < 1e-9)).count();
        assert!(silent > 0);
        assert!(active_level(&Waveform::new(s).unwrap()).is_ok());
    }

    #[test]
    fn noises_are_normalized() {
        for kind in NoiseKind::ALL {
            let mut rng = ChaCha8Rng::seed_from_u64(2);
            let n = noise_like(kind, 16000, &mut rng);
            let rms = (n.iter().map(|v| v * v).sum::<f64>() / n.len() as f64).sqrt();
            assert!((rms - 0.1).abs() < 1e-9, "{kind:?}");
        }
    }

    #[test]
    fn fixture_manifest_roles() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = FixtureConfig { clean: 3, real: 2, noises: 2, rirs: 1, seconds: 0.5, seed: 1 };
        let m = read_manifest(write_fixture(dir.path(), &cfg).unwrap()).unwrap();
        let count = |r| m.iter().filter(|e| e.role == r).count();
        assert_eq!((count(Role::Clean), count(Role::Real), count(Role::Noise), count(Role::Rir)), (3, 2, 2, 1));
        assert!(m.iter().all(|e| e.path.is_file()));
    }
}
