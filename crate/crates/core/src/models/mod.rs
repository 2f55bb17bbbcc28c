//! Denoiser and quality-estimator networks plus input normalization.

mod denoiser;
mod norm;
mod quality;

pub use denoiser::{repad_var, DenoiserInput, DenoiserNet, DenoiserOutput, DENOISER_TOPOLOGY};
pub use norm::{fit_norm_stats, NormStats};
pub use quality::{stats_pool, QualityNet, MIN_QUALITY_FRAMES, QUALITY_TOPOLOGY};

use rand::Rng;

use crate::autodiff::{Graph, ParamId, ParamStore, Real, Tensor, Var};

/// Whether a network's parameters enter a graph as trainable leaves or as
/// constants that can never receive a gradient.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Bind {
    Train,
    Frozen,
}

pub(crate) fn bind<T: Real>(g: &mut Graph<T>, store: &ParamStore<T>, id: ParamId, mode: Bind) -> Var {
    match mode {
        Bind::Train => g.param(store, id),
        Bind::Frozen => {
            let t = store.get(id);
            g.constant(t.shape().to_vec(), t.data().to_vec())
                .expect("parameter tensor has a consistent shape")
        }
    }
}

/// Uniform initialization on `[-bound, bound]` with `bound = gain * sqrt(3 / fan_in)`.
pub(crate) fn uniform_param<T: Real>(
    store: &mut ParamStore<T>,
    name: &str,
    shape: Vec<usize>,
    fan_in: usize,
    gain: f64,
    rng: &mut impl Rng,
) -> ParamId {
    let n: usize = shape.iter().product();
    let bound = gain * (3.0 / fan_in as f64).sqrt();
    let data = (0..n).map(|_| T::of(rng.gen_range(-bound..=bound))).collect();
    store.add(name, Tensor::new(shape, data).expect("shape matches data"))
}

pub(crate) fn const_param<T: Real>(store: &mut ParamStore<T>, name: &str, values: Vec<f64>) -> ParamId {
    let n = values.len();
    store.add(
        name,
        Tensor::new(vec![n], values.into_iter().map(T::of).collect()).expect("shape matches data"),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::GATE_LO;
    use crate::dsp::{stft, Spectrogram};
    use crate::{StftConfig, Waveform};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn noisy_spec(len: usize, seed: u64) -> Spectrogram {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = Waveform::new((0..len).map(|_| rng.gen_range(-0.5..0.5)).collect()).unwrap();
        stft(&w, &StftConfig::default()).unwrap()
    }

    #[test]
    fn shapes_and_bounds() {
        let y = noisy_spec(3000, 1);
        let norm = fit_norm_stats([&y]).unwrap();
        let net = DenoiserNet::<f32>::new(3);
        let (mask, est) = net.enhance(&y, &norm).unwrap();
        assert_eq!(mask.0.shape(), y.shape());
        assert_eq!(est.shape(), y.shape());
        assert!(mask.max_magnitude() <= 1.0);
        let q = QualityNet::<f32>::new(4);
        let s = q.score(&est.magnitude(), est.frames(), &norm).unwrap();
        assert!(s > GATE_LO && s < 4.64);
    }

    #[test]
    fn deterministic_forward() {
        let y = noisy_spec(3000, 2);
        let norm = fit_norm_stats([&y]).unwrap();
        let net = DenoiserNet::<f32>::new(5);
        assert_eq!(net.enhance(&y, &norm).unwrap(), net.enhance(&y, &norm).unwrap());
    }

    #[test]
    fn short_input_rejected() {
        let y = noisy_spec(384 + 192 * 5, 3);
        let norm = fit_norm_stats([&y]).unwrap();
        let q = QualityNet::<f32>::new(1);
        assert!(q.score(&y.magnitude(), y.frames(), &norm).is_err());
    }

    #[test]
    fn store_layout_checked() {
        let a = DenoiserNet::<f32>::new(1);
        assert!(DenoiserNet::from_store(a.store.clone()).is_ok());
        assert!(QualityNet::from_store(a.store).is_err());
    }
}
