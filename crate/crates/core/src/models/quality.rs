use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::denoiser::check_layout;
use super::{bind, uniform_param, Bind, NormStats};
use crate::autodiff::{Graph, ParamId, ParamStore, Real, Tensor, Var};
use crate::error::{Error, Result};

pub const QUALITY_TOPOLOGY: &str =
    "quality/v1:conv16k3x3s2x2,conv32k3x3s2x2,conv64k3x3s2x2,freq-mean,mean+max-pool,dense64,dense1,gate";

/// Shortest utterance (in frames) the estimator accepts.
pub const MIN_QUALITY_FRAMES: usize = 8;

const CHANNELS: [usize; 3] = [16, 32, 64];
const HIDDEN: usize = 64;

#[derive(Clone, Debug)]
struct Ids {
    convs: Vec<(ParamId, ParamId)>,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

/// Non-intrusive utterance-level quality estimator on amplitude spectra.
#[derive(Clone, Debug)]
pub struct QualityNet<T> {
    pub store: ParamStore<T>,
    ids: Ids,
}

/// Concatenation of the mean and the maximum over frames of a
/// `[channels, frames]` embedding.
pub fn stats_pool<T: Real>(g: &mut Graph<T>, emb: Var) -> Result<Var> {
    let mean = g.mean_axis(emb, 1)?;
    let max = g.reduce_max_over_frames(emb)?;
    g.concat(&[mean, max], 0)
}

impl<T: Real> QualityNet<T> {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        let relu = 2f64.sqrt();
        let mut convs = Vec::new();
        let mut cin = 1;
        for (i, &c) in CHANNELS.iter().enumerate() {
            let w = uniform_param(&mut s, &format!("conv{}.w", i + 1), vec![c, cin, 3, 3], cin * 9, relu, &mut rng);
            let b = s.add(format!("conv{}.b", i + 1), Tensor::zeros(vec![c]));
            convs.push((w, b));
            cin = c;
        }
        let pooled = 2 * cin;
        let w1 = uniform_param(&mut s, "fc1.w", vec![pooled, HIDDEN], pooled, relu, &mut rng);
        let b1 = s.add("fc1.b", Tensor::zeros(vec![1, HIDDEN]));
        let w2 = uniform_param(&mut s, "fc2.w", vec![HIDDEN, 1], HIDDEN, 0.1, &mut rng);
        let b2 = s.add("fc2.b", Tensor::zeros(vec![1, 1]));
        QualityNet { store: s, ids: Ids { convs, w1, b1, w2, b2 } }
    }

    pub fn from_store(store: ParamStore<T>) -> Result<Self> {
        let template = Self::new(0);
        check_layout(&template.store, &store)?;
        Ok(QualityNet { store, ids: template.ids })
    }

    pub fn cast<U: Real>(&self) -> QualityNet<U> {
        QualityNet { store: self.store.cast(), ids: self.ids.clone() }
    }

    /// Score node (shape `[1]`) for an amplitude node of shape `[1, frames, bins]`.
    pub fn forward(&self, g: &mut Graph<T>, amp: Var, norm: &NormStats, mode: Bind) -> Result<Var> {
        let frames = g.shape(amp).get(1).copied().unwrap_or(0);
        if frames < MIN_QUALITY_FRAMES {
            return Err(Error::domain(
                "quality_forward",
                format!("{frames} frames, at least {MIN_QUALITY_FRAMES} required"),
            ));
        }
        let mut x = norm.normalize_var(g, amp)?;
        for &(w, b) in &self.ids.convs {
            let (w, b) = (bind(g, &self.store, w, mode), bind(g, &self.store, b, mode));
            x = g.conv2d(x, w, Some(b), (2, 2))?;
            x = g.relu(x);
        }
        let emb = g.mean_axis(x, 2)?;
        let pooled = stats_pool(g, emb)?;
        let n = g.shape(pooled)[0];
        let row = g.reshape(pooled, vec![1, n])?;
        let p = |g: &mut Graph<T>, id| bind(g, &self.store, id, mode);
        let (w1, b1, w2, b2) = (p(g, self.ids.w1), p(g, self.ids.b1), p(g, self.ids.w2), p(g, self.ids.b2));
        let h = g.matmul(row, w1)?;
        let h = g.add(h, b1)?;
        let h = g.relu(h);
        let o = g.matmul(h, w2)?;
        let o = g.add(o, b2)?;
        let o = g.reshape(o, vec![1])?;
        Ok(g.quality_gate(o))
    }

    /// Inference on a `frames x bins` amplitude buffer.
    pub fn score(&self, amplitude: &[f64], frames: usize, norm: &NormStats) -> Result<f64> {
        let mut g = Graph::new();
        let amp = g.constant(vec![1, frames, norm.bins()], amplitude.iter().map(|&v| T::of(v)).collect())?;
        let q = self.forward(&mut g, amp, norm, Bind::Frozen)?;
        Ok(g.value(q)[0].f64())
    }
}
