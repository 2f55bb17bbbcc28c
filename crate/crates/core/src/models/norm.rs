use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Real, Var};
use crate::dsp::Spectrogram;
use crate::error::{Error, Result};

/// Lower bound on a per-bin standard deviation.
pub const STD_FLOOR: f64 = 1e-8;

/// Per-bin amplitude statistics of the training set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl NormStats {
    pub fn bins(&self) -> usize {
        self.mean.len()
    }

    /// `(x - mean) / std` applied row-wise to a `frames x bins` buffer.
    pub fn normalize(&self, amplitude: &[f64]) -> Result<Vec<f64>> {
        let b = self.bins();
        if b == 0 || !amplitude.len().is_multiple_of(b) {
            return Err(Error::shape("normalize", &[amplitude.len()], &[b]));
        }
        Ok(amplitude
            .chunks(b)
            .flat_map(|row| {
                row.iter()
                    .zip(self.mean.iter().zip(&self.std))
                    .map(|(x, (m, s))| (x - f64::from(*m)) / f64::from(*s))
            })
            .collect())
    }

    /// Normalizes a `[1, frames, bins]` amplitude node inside a graph.
    pub fn normalize_var<T: Real>(&self, g: &mut Graph<T>, amp: Var) -> Result<Var> {
        let shape = g.shape(amp).to_vec();
        let b = self.bins();
        if shape.len() != 3 || shape[0] != 1 || shape[2] != b {
            return Err(Error::shape("normalize", &shape, &[1, 0, b]));
        }
        let frames = shape[1];
        let tile = |v: &[f32], f: &dyn Fn(f64) -> f64| -> Vec<T> {
            (0..frames).flat_map(|_| v.iter().map(|&x| T::of(f(f64::from(x))))).collect()
        };
        let mean = g.constant(shape.clone(), tile(&self.mean, &|x| x))?;
        let inv = g.constant(shape, tile(&self.std, &|x| 1.0 / x))?;
        let centered = g.sub(amp, mean)?;
        g.mul(centered, inv)
    }
}

/// Per-bin mean and population standard deviation of `|Y|` over every frame
/// of every spectrogram (Welford accumulation in f64).
pub fn fit_norm_stats<'a>(spectra: impl IntoIterator<Item = &'a Spectrogram>) -> Result<NormStats> {
    let mut bins = None;
    let mut count = 0u64;
    let mut mean = Vec::new();
    let mut m2 = Vec::new();
    for s in spectra {
        let b = *bins.get_or_insert_with(|| {
            mean = vec![0.0f64; s.bins()];
            m2 = vec![0.0f64; s.bins()];
            s.bins()
        });
        if s.bins() != b {
            return Err(Error::shape("fit_norm_stats", &[s.bins()], &[b]));
        }
        for l in 0..s.frames() {
            count += 1;
            for (k, z) in s.frame(l).iter().enumerate() {
                let x = z.norm();
                let d = x - mean[k];
                mean[k] += d / count as f64;
                m2[k] += d * (x - mean[k]);
            }
        }
    }
    if count == 0 {
        return Err(Error::domain("fit_norm_stats", "no frames to fit"));
    }
    Ok(NormStats {
        mean: mean.iter().map(|&m| m as f32).collect(),
        std: m2
            .iter()
            .map(|&v| ((v / count as f64).sqrt().max(STD_FLOOR)) as f32)
            .collect(),
    })
}
