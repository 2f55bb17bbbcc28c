//! Spectral, quality and combined training losses, as plain values and as
//! graph nodes.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Real, Var, GATE_HI, GATE_LO};
use crate::dsp::Spectrogram;
use crate::error::{Error, Result};
use crate::mixer::Kind;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { alpha: 0.9, beta: 0.9 }
    }
}

impl LossConfig {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        let cfg = LossConfig { alpha, beta };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must be in [0, 1], got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Joint,
    Noise,
    Synth,
    Pesqnet,
    Real,
    Total,
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            LossKind::Joint => "joint",
            LossKind::Noise => "noise",
            LossKind::Synth => "synth",
            LossKind::Pesqnet => "pesqnet",
            LossKind::Real => "real",
            LossKind::Total => "total",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossValue {
    pub kind: LossKind,
    pub value: f64,
}

/// DFT size the spectral losses are normalized by.
pub const DFT_SIZE: usize = 512;

/// Per-bin weights of the one-sided sum: 1 for DC and Nyquist, 2 for the
/// bins in between, 0 for the redundant padding bins.
pub fn bin_weights(bins: usize, physical_bins: usize) -> Vec<f64> {
    (0..bins)
        .map(|k| match k {
            0 => 1.0,
            k if k + 1 == physical_bins => 1.0,
            k if k < physical_bins => 2.0,
            _ => 0.0,
        })
        .collect()
}

/// `(1/(frames*k)) * sum_l sum_b w_b |d_{l,b}|^2` over a `frames x weights.len()` residual.
pub fn weighted_residual_energy(
    diff: &[num_complex::Complex64],
    weights: &[f64],
    frames: usize,
    k: usize,
) -> f64 {
    let total: f64 = diff
        .chunks(weights.len())
        .flat_map(|row| row.iter().zip(weights).map(|(d, w)| w * d.norm_sqr()))
        .sum();
    total / (frames * k) as f64
}

fn spectral(kind: LossKind, est: &Spectrogram, target: &Spectrogram) -> Result<LossValue> {
    if est.shape() != target.shape() || est.physical_bins() != target.physical_bins() {
        return Err(Error::shape("spectral_loss", &est.shape(), &target.shape()));
    }
    let diff: Vec<_> = est.data().iter().zip(target.data()).map(|(a, b)| a - b).collect();
    let w = bin_weights(est.bins(), est.physical_bins());
    Ok(LossValue {
        kind,
        value: weighted_residual_energy(&diff, &w, est.frames(), DFT_SIZE),
    })
}

/// Joint dereverberation and denoising loss against the dry clean spectrum.
pub fn j_joint(est: &Spectrogram, clean: &Spectrogram) -> Result<LossValue> {
    spectral(LossKind::Joint, est, clean)
}

/// Denoising-only loss against the reverberated clean spectrum.
pub fn j_noise(est: &Spectrogram, clean_rev: &Spectrogram) -> Result<LossValue> {
    spectral(LossKind::Noise, est, clean_rev)
}

pub fn combine_synth(joint: f64, noise: f64, cfg: &LossConfig) -> f64 {
    cfg.beta * joint + (1.0 - cfg.beta) * noise
}

pub fn j_synth(est: &Spectrogram, clean: &Spectrogram, clean_rev: &Spectrogram, cfg: &LossConfig) -> Result<LossValue> {
    let joint = j_joint(est, clean)?.value;
    let noise = j_noise(est, clean_rev)?.value;
    Ok(LossValue { kind: LossKind::Synth, value: combine_synth(joint, noise, cfg) })
}

fn check_oracle(oracle: f64) -> Result<()> {
    if !(GATE_LO..=GATE_HI).contains(&oracle) {
        return Err(Error::domain("j_pesqnet", format!("oracle score {oracle} outside [1.04, 4.64]")));
    }
    Ok(())
}

pub fn j_pesqnet(estimated: f64, oracle: f64) -> Result<LossValue> {
    check_oracle(oracle)?;
    Ok(LossValue { kind: LossKind::Pesqnet, value: (estimated - oracle).powi(2) })
}

pub fn j_real(estimated: f64) -> LossValue {
    LossValue { kind: LossKind::Real, value: (estimated - GATE_HI).powi(2) }
}

/// `j_real` for real data, `alpha * j_synth + (1 - alpha) * j_real` for synthetic data.
pub fn combine_total(kind: Kind, synth: Option<f64>, real: f64, cfg: &LossConfig) -> Result<f64> {
    match (kind, synth) {
        (Kind::Real, _) => Ok(real),
        (Kind::Synthetic, Some(s)) => Ok(cfg.alpha * s + (1.0 - cfg.alpha) * real),
        (Kind::Synthetic, None) => Err(Error::domain("j_total", "synthetic record without spectral loss")),
    }
}

pub fn j_total(kind: Kind, synth: Option<f64>, estimated: f64, cfg: &LossConfig) -> Result<LossValue> {
    Ok(LossValue {
        kind: LossKind::Total,
        value: combine_total(kind, synth, j_real(estimated).value, cfg)?,
    })
}


/// Graph form of the weighted spectral loss for `[1, frames, bins]` estimates.
pub fn spectral_var<T: Real>(g: &mut Graph<T>, est_re: Var, est_im: Var, target: &Spectrogram) -> Result<Var> {
    let shape = vec![1, target.frames(), target.bins()];
    if g.shape(est_re) != shape.as_slice() || g.shape(est_im) != shape.as_slice() {
        return Err(Error::shape("spectral_loss", g.shape(est_re), &shape));
    }
    let w = bin_weights(target.bins(), target.physical_bins());
    let tile: Vec<T> = (0..target.frames()).flat_map(|_| w.iter().map(|&x| T::of(x))).collect();
    let t_re = g.constant(shape.clone(), target.re().into_iter().map(T::of).collect())?;
    let t_im = g.constant(shape.clone(), target.im().into_iter().map(T::of).collect())?;
    let weights = g.constant(shape, tile)?;
    let dr = g.sub(est_re, t_re)?;
    let di = g.sub(est_im, t_im)?;
    let dr2 = g.square(dr);
    let di2 = g.square(di);
    let e = g.add(dr2, di2)?;
    let e = g.mul(e, weights)?;
    let s = g.sum(e);
    Ok(g.scale(s, 1.0 / (target.frames() * DFT_SIZE) as f64))
}

pub fn synth_var<T: Real>(
    g: &mut Graph<T>,
    est_re: Var,
    est_im: Var,
    clean: &Spectrogram,
    clean_rev: &Spectrogram,
    cfg: &LossConfig,
) -> Result<Var> {
    let joint = spectral_var(g, est_re, est_im, clean)?;
    let noise = spectral_var(g, est_re, est_im, clean_rev)?;
    let a = g.scale(joint, cfg.beta);
    let b = g.scale(noise, 1.0 - cfg.beta);
    g.add(a, b)
}

fn score_scalar<T: Real>(g: &mut Graph<T>, q: Var) -> Result<Var> {
    if g.value(q).len() != 1 {
        return Err(Error::shape("quality_loss", g.shape(q), &[1]));
    }
    Ok(g.sum(q))
}

pub fn pesqnet_var<T: Real>(g: &mut Graph<T>, q: Var, oracle: f64) -> Result<Var> {
    check_oracle(oracle)?;
    let q = score_scalar(g, q)?;
    let d = g.add_scalar(q, -oracle);
    Ok(g.square(d))
}

pub fn real_var<T: Real>(g: &mut Graph<T>, q: Var) -> Result<Var> {
    let q = score_scalar(g, q)?;
    let d = g.add_scalar(q, -GATE_HI);
    Ok(g.square(d))
}

/// Graph form of the total loss; `synth` is required for synthetic records.
pub fn total_var<T: Real>(
    g: &mut Graph<T>,
    kind: Kind,
    synth: Option<Var>,
    q: Var,
    cfg: &LossConfig,
) -> Result<Var> {
    let real = real_var(g, q)?;
    match (kind, synth) {
        (Kind::Real, _) => Ok(real),
        (Kind::Synthetic, Some(s)) => {
            let a = g.scale(s, cfg.alpha);
            let b = g.scale(real, 1.0 - cfg.alpha);
            g.add(a, b)
        }
        (Kind::Synthetic, None) => Err(Error::domain("j_total", "synthetic record without spectral loss")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::StftConfig;
    use num_complex::Complex64;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_spec(frames: usize, seed: u64) -> Spectrogram {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = Spectrogram::zeros(frames, &StftConfig::default());
        for z in s.data_mut() {
            *z = Complex64::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
        }
        s.repad();
        s
    }

    fn loop_oracle(a: &Spectrogram, b: &Spectrogram) -> f64 {
        // Full two-sided sum over 512 bins via conjugate symmetry.
        let mut total = 0.0;
        for l in 0..a.frames() {
            for k in 0..512usize {
                let kk = if k <= 256 { k } else { 512 - k };
                let mut d = a.get(l, kk) - b.get(l, kk);
                if k > 256 {
                    d = d.conj();
                }
                total += d.re * d.re + d.im * d.im;
            }
        }
        total / (a.frames() * 512) as f64
    }

    #[test]
    fn residual_example() {
        let v = weighted_residual_energy(&[Complex64::new(3.0, 4.0)], &[1.0], 1, 1);
        assert_eq!(v, 25.0);
    }

    #[test]
    fn matches_loop_oracle() {
        let (a, b) = (rand_spec(7, 1), rand_spec(7, 2));
        let fast = j_joint(&a, &b).unwrap().value;
        let slow = loop_oracle(&a, &b);
        assert!(((fast - slow) / slow).abs() < 1e-6);
        assert_eq!(j_joint(&a, &a).unwrap().value, 0.0);
        assert!(j_joint(&a, &rand_spec(6, 2)).is_err());
    }

    #[test]
    fn combination_examples() {
        let cfg = LossConfig::default();
        assert!((combine_synth(2.0, 10.0, &cfg) - 2.8).abs() < 1e-12);
        assert_eq!(combine_synth(2.0, 10.0, &LossConfig::new(0.9, 1.0).unwrap()), 2.0);
        assert_eq!(combine_synth(2.0, 10.0, &LossConfig::new(0.9, 0.0).unwrap()), 10.0);
        assert!((combine_total(Kind::Synthetic, Some(1.0), 4.0, &cfg).unwrap() - 1.3).abs() < 1e-12);
        assert_eq!(combine_total(Kind::Synthetic, Some(1.0), 4.0, &LossConfig::new(1.0, 0.9).unwrap()).unwrap(), 1.0);
        assert_eq!(j_total(Kind::Real, None, 4.64, &cfg).unwrap().value, 0.0);
        assert!((j_pesqnet(2.0, 3.5).unwrap().value - 2.25).abs() < 1e-12);
        assert!((j_pesqnet(1.04, 4.64).unwrap().value - 12.96).abs() < 1e-12);
        assert!(j_pesqnet(2.0, 4.7).is_err());
        assert!((j_real(2.84).value - 3.24).abs() < 1e-12);
        assert!(LossConfig::new(1.1, 0.5).is_err());
    }

    #[test]
    fn graph_forms_match_scalar() {
        let (est, clean, rev) = (rand_spec(5, 3), rand_spec(5, 4), rand_spec(5, 5));
        let cfg = LossConfig::default();
        let mut g = Graph::<f64>::new();
        let shape = vec![1, 5, 260];
        let re = g.constant(shape.clone(), est.re()).unwrap();
        let im = g.constant(shape, est.im()).unwrap();
        let v = synth_var(&mut g, re, im, &clean, &rev, &cfg).unwrap();
        let scalar = j_synth(&est, &clean, &rev, &cfg).unwrap().value;
        assert!((g.scalar(v) - scalar).abs() < 1e-9 * scalar);
        let q = g.constant(vec![1], vec![2.84]).unwrap();
        let r = real_var(&mut g, q).unwrap();
        assert!((g.scalar(r) - 3.24).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn spectral_losses_scale_quadratically(seed in 0u64..1000, c in 0.1f64..10.0) {
            let (a, b) = (rand_spec(3, seed), rand_spec(3, seed + 1));
            let base = j_joint(&a, &b).unwrap().value;
            let scaled = j_joint(&a.scaled(c), &b.scaled(c)).unwrap().value;
            prop_assert!((scaled - c * c * base).abs() <= 1e-12 * scaled.max(1.0));
        }

        #[test]
        fn synth_monotone_in_joint(j in 0.0f64..100.0, dj in 0.0f64..100.0, n in 0.0f64..100.0, beta in 0.01f64..1.0) {
            let cfg = LossConfig::new(0.9, beta).unwrap();
            prop_assert!(combine_synth(j + dj, n, &cfg) >= combine_synth(j, n, &cfg));
        }

        #[test]
        fn quality_losses_non_negative(q in 1.04f64..4.64, o in 1.04f64..4.64) {
            prop_assert!(j_pesqnet(q, o).unwrap().value >= 0.0);
            prop_assert!(j_real(q).value >= 0.0);
        }
    }
}
