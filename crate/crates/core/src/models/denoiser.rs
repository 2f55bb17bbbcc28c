use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{bind, const_param, uniform_param, Bind, NormStats};
use crate::autodiff::{Graph, ParamId, ParamStore, Real, Var};
use crate::dsp::{Mask, Spectrogram};
use crate::error::{Error, Result};

pub const DENOISER_TOPOLOGY: &str =
    "denoiser/v1:conv16k3x5s1x2,conv32k3x5s1x2,cgru32k1x3,tconv16k3x5s1x2+skip,tconv16k3x5s1x2,head2k1x1,tanh-ratio";

const C1: usize = 16;
const C2: usize = 32;
const KERNEL: (usize, usize) = (3, 5);
const DOWN: (usize, usize) = (1, 2);

/// Network input for one utterance: `[3, frames, bins]` features
/// (normalized amplitude, real part, imaginary part) plus the raw spectrum.
#[derive(Clone, Debug)]
pub struct DenoiserInput<T> {
    pub frames: usize,
    pub bins: usize,
    pub physical_bins: usize,
    pub features: Vec<T>,
    pub re: Vec<T>,
    pub im: Vec<T>,
}

impl<T: Real> DenoiserInput<T> {
    pub fn from_spectrogram(y: &Spectrogram, norm: &NormStats) -> Result<Self> {
        if y.frames() == 0 {
            return Err(Error::domain("denoiser_forward", "spectrogram has no frames"));
        }
        if !y.bins().is_multiple_of(4) || y.bins() != norm.bins() {
            return Err(Error::shape("denoiser_forward", &[y.bins()], &[norm.bins()]));
        }
        let re: Vec<T> = y.re().into_iter().map(T::of).collect();
        let im: Vec<T> = y.im().into_iter().map(T::of).collect();
        let amp = norm.normalize(&y.magnitude())?;
        let mut features: Vec<T> = amp.into_iter().map(T::of).collect();
        features.extend_from_slice(&re);
        features.extend_from_slice(&im);
        Ok(DenoiserInput {
            frames: y.frames(),
            bins: y.bins(),
            physical_bins: y.physical_bins(),
            features,
            re,
            im,
        })
    }
}

/// Graph nodes of a forward pass, each `[1, frames, bins]`.
#[derive(Clone, Copy, Debug)]
pub struct DenoiserOutput {
    pub mask_re: Var,
    pub mask_im: Var,
    pub est_re: Var,
    pub est_im: Var,
}

#[derive(Clone, Debug)]
struct Ids {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
    wg: ParamId,
    bg: ParamId,
    wt1: ParamId,
    bt1: ParamId,
    wt2: ParamId,
    bt2: ParamId,
    wh: ParamId,
    bh: ParamId,
}

/// Conv-recurrent complex-mask estimator.
#[derive(Clone, Debug)]
pub struct DenoiserNet<T> {
    pub store: ParamStore<T>,
    ids: Ids,
}

impl<T: Real> DenoiserNet<T> {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        let (kh, kw) = KERNEL;
        let relu = 2f64.sqrt();
        let ids = Ids {
            w1: uniform_param(&mut s, "enc1.w", vec![C1, 3, kh, kw], 3 * kh * kw, relu, &mut rng),
            b1: const_param(&mut s, "enc1.b", vec![0.0; C1]),
            w2: uniform_param(&mut s, "enc2.w", vec![C2, C1, kh, kw], C1 * kh * kw, relu, &mut rng),
            b2: const_param(&mut s, "enc2.b", vec![0.0; C2]),
            wg: uniform_param(&mut s, "rnn.w", vec![2 * C2, 2 * C2, 1, 3], 2 * C2 * 3, 1.0, &mut rng),
            bg: const_param(&mut s, "rnn.b", vec![0.0; 2 * C2]),
            wt1: uniform_param(&mut s, "dec1.w", vec![C2, C1, kh, kw], C2 * kh * kw / 2, relu, &mut rng),
            bt1: const_param(&mut s, "dec1.b", vec![0.0; C1]),
            wt2: uniform_param(&mut s, "dec2.w", vec![C1, C1, kh, kw], C1 * kh * kw / 2, relu, &mut rng),
            bt2: const_param(&mut s, "dec2.b", vec![0.0; C1]),
            wh: uniform_param(&mut s, "head.w", vec![2, C1, 1, 1], C1, 0.01, &mut rng),
            bh: const_param(&mut s, "head.b", vec![2.0, 0.0]),
        };
        DenoiserNet { store: s, ids }
    }

    /// Wraps a store whose names and shapes match the topology.
    pub fn from_store(store: ParamStore<T>) -> Result<Self> {
        let template = Self::new(0);
        check_layout(&template.store, &store)?;
        Ok(DenoiserNet { store, ids: template.ids })
    }

    pub fn cast<U: Real>(&self) -> DenoiserNet<U> {
        DenoiserNet { store: self.store.cast(), ids: self.ids.clone() }
    }

    pub fn forward(&self, g: &mut Graph<T>, input: &DenoiserInput<T>, mode: Bind) -> Result<DenoiserOutput> {
        let (l, b) = (input.frames, input.bins);
        if l == 0 {
            return Err(Error::domain("denoiser_forward", "spectrogram has no frames"));
        }
        let p = |g: &mut Graph<T>, id| bind(g, &self.store, id, mode);
        let x = g.constant(vec![3, l, b], input.features.clone())?;

        let (w1, b1) = (p(g, self.ids.w1), p(g, self.ids.b1));
        let e1 = g.conv2d(x, w1, Some(b1), DOWN)?;
        let e1 = g.relu(e1);
        let (w2, b2) = (p(g, self.ids.w2), p(g, self.ids.b2));
        let e2 = g.conv2d(e1, w2, Some(b2), DOWN)?;
        let e2 = g.relu(e2);

        let q = b / 4;
        let (wg, bg) = (p(g, self.ids.wg), p(g, self.ids.bg));
        let mut h = g.constant(vec![C2, 1, q], vec![T::zero(); C2 * q])?;
        let mut states = Vec::with_capacity(l);
        for frame in 0..l {
            let xt = g.slice(e2, 1, frame, frame + 1)?;
            let xh = g.concat(&[xt, h], 0)?;
            let gates = g.conv2d(xh, wg, Some(bg), (1, 1))?;
            let z = g.slice(gates, 0, 0, C2)?;
            let z = g.sigmoid(z);
            let c = g.slice(gates, 0, C2, 2 * C2)?;
            let c = g.tanh(c);
            let delta = g.sub(c, h)?;
            let step = g.mul(z, delta)?;
            h = g.add(h, step)?;
            states.push(h);
        }
        let r = g.concat(&states, 1)?;

        let (wt1, bt1) = (p(g, self.ids.wt1), p(g, self.ids.bt1));
        let d1 = g.conv_transpose2d(r, wt1, Some(bt1), DOWN)?;
        let d1 = g.relu(d1);
        let d1 = g.add(d1, e1)?;
        let (wt2, bt2) = (p(g, self.ids.wt2), p(g, self.ids.bt2));
        let d2 = g.conv_transpose2d(d1, wt2, Some(bt2), DOWN)?;
        let d2 = g.relu(d2);
        let (wh, bh) = (p(g, self.ids.wh), p(g, self.ids.bh));
        let head = g.conv2d(d2, wh, Some(bh), (1, 1))?;

        let z_re = g.slice(head, 0, 0, 1)?;
        let z_im = g.slice(head, 0, 1, 2)?;
        let ratio = g.tanh_ratio(z_re, z_im)?;
        let mask_re = g.mul(z_re, ratio)?;
        let mask_re = repad_var(g, mask_re, input.physical_bins)?;
        let mask_im = g.mul(z_im, ratio)?;
        let mask_im = repad_var(g, mask_im, input.physical_bins)?;

        let y_re = g.constant(vec![1, l, b], input.re.clone())?;
        let y_im = g.constant(vec![1, l, b], input.im.clone())?;
        let rr = g.mul(mask_re, y_re)?;
        let ii = g.mul(mask_im, y_im)?;
        let ri = g.mul(mask_re, y_im)?;
        let ir = g.mul(mask_im, y_re)?;
        let est_re = g.sub(rr, ii)?;
        let est_im = g.add(ri, ir)?;
        Ok(DenoiserOutput { mask_re, mask_im, est_re, est_im })
    }

    /// Inference: mask and enhanced spectrum for a noisy spectrogram.
    pub fn enhance(&self, y: &Spectrogram, norm: &NormStats) -> Result<(Mask, Spectrogram)> {
        let input = DenoiserInput::<T>::from_spectrogram(y, norm)?;
        let mut g = Graph::new();
        let out = self.forward(&mut g, &input, Bind::Frozen)?;
        let to_spec = |re: Var, im: Var| {
            let data = g
                .value(re)
                .iter()
                .zip(g.value(im))
                .map(|(a, b)| Complex64::new(a.f64(), b.f64()))
                .collect();
            Spectrogram::from_parts(y.frames(), y.bins(), y.physical_bins(), data)
        };
        Ok((Mask(to_spec(out.mask_re, out.mask_im)?), to_spec(out.est_re, out.est_im)?))
    }
}

/// Overwrites the bins past `physical` on the last axis with copies of the
/// last physical bin.
pub fn repad_var<T: Real>(g: &mut Graph<T>, x: Var, physical: usize) -> Result<Var> {
    let axis = g.shape(x).len() - 1;
    let bins = g.shape(x)[axis];
    if physical == 0 || physical > bins {
        return Err(Error::shape("repad", &[physical], &[bins]));
    }
    if physical == bins {
        return Ok(x);
    }
    let head = g.slice(x, axis, 0, physical)?;
    let last = g.slice(x, axis, physical - 1, physical)?;
    let mut parts = vec![head];
    parts.extend(std::iter::repeat_n(last, bins - physical));
    g.concat(&parts, axis)
}

pub(super) fn check_layout<T: Real>(template: &ParamStore<T>, store: &ParamStore<T>) -> Result<()> {
    let expected: Vec<(&str, &[usize])> = template.iter().map(|(n, t)| (n, t.shape())).collect();
    let found: Vec<(&str, &[usize])> = store.iter().map(|(n, t)| (n, t.shape())).collect();
    if expected != found {
        return Err(Error::Checkpoint(format!(
            "parameter layout mismatch: expected {expected:?}, found {found:?}"
        )));
    }
    Ok(())
}
