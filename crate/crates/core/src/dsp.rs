//! STFT analysis/synthesis: periodic Hann framing, zero-padded DFT, weighted
//! overlap-add, and the padded-bin layout consumed by the models.
//!
//! A spectrogram row holds the `fft_size / 2 + 1` physical one-sided bins
//! followed by copies of the Nyquist bin up to the next multiple of four
//! (257 + 3 = 260 for the default configuration). The copies let two
//! stride-2 stages halve the bin axis exactly; synthesis ignores them.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::audio::Waveform;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StftConfig {
    pub frame_len: usize,
    pub hop: usize,
    pub fft_size: usize,
}

impl Default for StftConfig {
    fn default() -> Self {
        StftConfig {
            frame_len: 384,
            hop: 192,
            fft_size: 512,
        }
    }
}

impl StftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frame_len == 0 || !self.frame_len.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "frame_len must be even and positive, got {}",
                self.frame_len
            )));
        }
        if self.hop * 2 != self.frame_len {
            return Err(Error::Config(format!(
                "hop must be frame_len / 2 (50% overlap), got hop {} for frame_len {}",
                self.hop, self.frame_len
            )));
        }
        if self.fft_size < self.frame_len || !self.fft_size.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "fft_size must be even and >= frame_len, got {}",
                self.fft_size
            )));
        }
        Ok(())
    }

    /// One-sided bin count, `K/2 + 1`.
    pub fn physical_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Stored bin count: physical bins rounded up to a multiple of four.
    pub fn bins(&self) -> usize {
        self.physical_bins().div_ceil(4) * 4
    }

    pub fn num_frames(&self, len: usize) -> usize {
        if len <= self.frame_len {
            1
        } else {
            (len - self.frame_len).div_ceil(self.hop) + 1
        }
    }

    /// Periodic Hann window of length `frame_len`.
    pub fn window(&self) -> Vec<f64> {
        let n = self.frame_len as f64;
        (0..self.frame_len)
            .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n).cos())
            .collect()
    }
}

/// Complex frames x bins array in the padded-bin layout.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrogram {
    frames: usize,
    bins: usize,
    physical_bins: usize,
    data: Vec<Complex64>,
}

impl Spectrogram {
    pub fn zeros(frames: usize, cfg: &StftConfig) -> Self {
        Spectrogram {
            frames,
            bins: cfg.bins(),
            physical_bins: cfg.physical_bins(),
            data: vec![Complex64::new(0.0, 0.0); frames * cfg.bins()],
        }
    }

    pub fn from_parts(
        frames: usize,
        bins: usize,
        physical_bins: usize,
        data: Vec<Complex64>,
    ) -> Result<Self> {
        if frames == 0 {
            return Err(Error::domain("spectrogram", "at least one frame required"));
        }
        if physical_bins > bins || data.len() != frames * bins {
            return Err(Error::shape(
                "spectrogram",
                &[frames, bins, physical_bins],
                &[data.len()],
            ));
        }
        Ok(Spectrogram {
            frames,
            bins,
            physical_bins,
            data,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn physical_bins(&self) -> usize {
        self.physical_bins
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.frames, self.bins]
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn get(&self, frame: usize, bin: usize) -> Complex64 {
        self.data[frame * self.bins + bin]
    }

    pub fn frame(&self, frame: usize) -> &[Complex64] {
        &self.data[frame * self.bins..(frame + 1) * self.bins]
    }

    pub fn re(&self) -> Vec<f64> {
        self.data.iter().map(|c| c.re).collect()
    }

    pub fn im(&self) -> Vec<f64> {
        self.data.iter().map(|c| c.im).collect()
    }

    pub fn magnitude(&self) -> Vec<f64> {
        self.data.iter().map(|c| c.norm()).collect()
    }

    /// Rebuilds the padded bins from the last physical bin.
    pub fn repad(&mut self) {
        let (p, b) = (self.physical_bins, self.bins);
        for row in self.data.chunks_mut(b) {
            let nyq = row[p - 1];
            row[p..].fill(nyq);
        }
    }

    pub fn scaled(&self, c: f64) -> Spectrogram {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|v| *v *= c);
        out
    }
}

/// Complex mask in the same layout as [`Spectrogram`]; |M| <= 1 is expected
/// but enforced by the producing model, not by this container.
#[derive(Clone, Debug, PartialEq)]
pub struct Mask(pub Spectrogram);

impl Mask {
    pub fn identity_like(spec: &Spectrogram) -> Mask {
        let mut s = spec.clone();
        s.data.fill(Complex64::new(1.0, 0.0));
        Mask(s)
    }

    pub fn max_magnitude(&self) -> f64 {
        self.0.data.iter().map(|c| c.norm()).fold(0.0, f64::max)
    }
}

/// Reusable FFT plans and window for one [`StftConfig`].
#[derive(Clone)]
pub struct Stft {
    cfg: StftConfig,
    window: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Stft {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Stft").field("cfg", &self.cfg).finish()
    }
}

impl Stft {
    pub fn new(cfg: StftConfig) -> Result<Self> {
        cfg.validate()?;
        let mut planner = FftPlanner::new();
        Ok(Stft {
            cfg,
            window: cfg.window(),
            forward: planner.plan_fft_forward(cfg.fft_size),
            inverse: planner.plan_fft_inverse(cfg.fft_size),
        })
    }

    pub fn config(&self) -> &StftConfig {
        &self.cfg
    }

    pub fn window(&self) -> &[f64] {
        &self.window
    }

    pub fn analyze(&self, x: &Waveform) -> Result<Spectrogram> {
        if x.is_empty() {
            return Err(Error::domain("stft", "empty waveform"));
        }
        let cfg = &self.cfg;
        let samples = x.samples();
        let frames = cfg.num_frames(samples.len());
        let (bins, phys) = (cfg.bins(), cfg.physical_bins());
        let mut out = Spectrogram::zeros(frames, cfg);
        let mut buf = vec![Complex64::new(0.0, 0.0); cfg.fft_size];
        for l in 0..frames {
            let start = l * cfg.hop;
            buf.fill(Complex64::new(0.0, 0.0));
            for (n, w) in self.window.iter().enumerate() {
                let s = samples.get(start + n).copied().unwrap_or(0.0);
                buf[n] = Complex64::new(s * w, 0.0);
            }
            self.forward.process(&mut buf);
            let row = &mut out.data[l * bins..(l + 1) * bins];
            row[..phys].copy_from_slice(&buf[..phys]);
        }
        out.repad();
        Ok(out)
    }

    pub fn synthesize(&self, spec: &Spectrogram, out_len: usize) -> Result<Waveform> {
        let cfg = &self.cfg;
        if spec.bins != cfg.bins() || spec.physical_bins != cfg.physical_bins() {
            return Err(Error::shape(
                "istft",
                &[spec.frames, spec.bins],
                &[spec.frames, cfg.bins()],
            ));
        }
        let k = cfg.fft_size;
        let phys = cfg.physical_bins();
        let total = (spec.frames - 1) * cfg.hop + cfg.frame_len;
        let mut acc = vec![0.0; total];
        let mut norm = vec![0.0; total];
        let mut buf = vec![Complex64::new(0.0, 0.0); k];
        for l in 0..spec.frames {
            let row = spec.frame(l);
            buf[..phys].copy_from_slice(&row[..phys]);
            // Imaginary parts of DC and Nyquist carry no information for a
            // real signal.
            buf[0].im = 0.0;
            buf[phys - 1].im = 0.0;
            for j in phys..k {
                buf[j] = buf[k - j].conj();
            }
            self.inverse.process(&mut buf);
            let start = l * cfg.hop;
            for (n, w) in self.window.iter().enumerate() {
                acc[start + n] += buf[n].re / k as f64 * w;
                norm[start + n] += w * w;
            }
        }
        let mut samples: Vec<f64> = acc
            .iter()
            .zip(&norm)
            .map(|(a, n)| if *n > 1e-12 { a / n } else { 0.0 })
            .collect();
        samples.resize(out_len, 0.0);
        Waveform::new(samples)
    }
}

pub fn stft(x: &Waveform, cfg: &StftConfig) -> Result<Spectrogram> {
    Stft::new(*cfg)?.analyze(x)
}

pub fn istft(spec: &Spectrogram, cfg: &StftConfig, out_len: usize) -> Result<Waveform> {
    Stft::new(*cfg)?.synthesize(spec, out_len)
}

/// Elementwise complex product `Y * M`.
pub fn apply_mask(y: &Spectrogram, m: &Mask) -> Result<Spectrogram> {
    if y.shape() != m.0.shape() {
        return Err(Error::shape("apply_mask", &y.shape(), &m.0.shape()));
    }
    let mut out = y.clone();
    for (o, w) in out.data.iter_mut().zip(&m.0.data) {
        *o *= w;
    }
    Ok(out)
}
