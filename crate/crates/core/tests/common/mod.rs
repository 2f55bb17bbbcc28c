//! Helpers shared by the integration suites.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use weakdns::autodiff::gradcheck::{check_inputs, check_params, GradCheckReport};
use weakdns::autodiff::{Graph, Var};
use weakdns::dsp::stft;
use weakdns::losses::{pesqnet_var, synth_var, total_var, LossConfig};
use weakdns::mixer::Kind;
use weakdns::models::{fit_norm_stats, Bind, DenoiserInput, DenoiserNet, NormStats, QualityNet};
use weakdns::{Result, Spectrogram, StftConfig, Waveform};

pub const GRAD_EPS: f64 = 1e-3;
pub const GRAD_TOL: f64 = 1e-3;
pub const GRAD_COORDS: usize = 100;

pub fn rand_vec(n: usize, lo: f64, hi: f64, rng: &mut impl Rng) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

pub fn rand_wave(len: usize, amp: f64, seed: u64) -> Waveform {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Waveform::new(rand_vec(len, -amp, amp, &mut rng)).unwrap()
}

pub fn rand_spec(frames: usize, amp: f64, seed: u64) -> Spectrogram {
    stft(&rand_wave(384 + 192 * (frames - 1), amp, seed), &StftConfig::default()).unwrap()
}

/// Contracts `y` with fixed random weights so upstream gradients vary.
pub fn weighted_sum(g: &mut Graph<f64>, y: Var, seed: u64) -> Result<Var> {
    let n = g.value(y).len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = g.constant(g.shape(y).to_vec(), rand_vec(n, -1.0, 1.0, &mut rng))?;
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

type OpBuild = Box<dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var>>;

/// Every differentiable graph operator with representative input shapes.
pub fn operator_cases() -> Vec<(&'static str, Vec<Vec<usize>>, OpBuild)> {
    let e = || vec![vec![10, 12], vec![10, 12]];
    let one = || vec![vec![10, 12]];
    vec![
        ("add", e(), Box::new(|g, v| g.add(v[0], v[1]))),
        ("sub", e(), Box::new(|g, v| g.sub(v[0], v[1]))),
        ("mul", e(), Box::new(|g, v| g.mul(v[0], v[1]))),
        ("maximum", e(), Box::new(|g, v| g.maximum(v[0], v[1]))),
        ("scale", one(), Box::new(|g, v| Ok(g.scale(v[0], -2.5)))),
        ("add_scalar", one(), Box::new(|g, v| Ok(g.add_scalar(v[0], 0.7)))),
        ("sigmoid", one(), Box::new(|g, v| Ok(g.sigmoid(v[0])))),
        ("tanh", one(), Box::new(|g, v| Ok(g.tanh(v[0])))),
        ("relu", one(), Box::new(|g, v| Ok(g.relu(v[0])))),
        ("square", one(), Box::new(|g, v| Ok(g.square(v[0])))),
        ("quality_gate", one(), Box::new(|g, v| Ok(g.quality_gate(v[0])))),
        ("complex_abs", e(), Box::new(|g, v| g.complex_abs(v[0], v[1]))),
        ("tanh_ratio", e(), Box::new(|g, v| g.tanh_ratio(v[0], v[1]))),
        ("sum", vec![vec![12, 10]], Box::new(|g, v| Ok(g.sum(v[0])))),
        ("mean", vec![vec![12, 10]], Box::new(|g, v| g.mean(v[0]))),
        ("reshape", vec![vec![12, 10]], Box::new(|g, v| g.reshape(v[0], vec![10, 12]))),
        ("concat", vec![vec![2, 6, 10], vec![2, 4, 10]], Box::new(|g, v| g.concat(v, 1))),
        ("slice", vec![vec![4, 8, 5]], Box::new(|g, v| g.slice(v[0], 1, 2, 7))),
        ("mean_axis", vec![vec![4, 6, 5]], Box::new(|g, v| g.mean_axis(v[0], 2))),
        ("max_over_frames", vec![vec![4, 8, 5]], Box::new(|g, v| g.reduce_max_over_frames(v[0]))),
        ("matmul", vec![vec![6, 10], vec![10, 4]], Box::new(|g, v| g.matmul(v[0], v[1]))),
        (
            "conv2d",
            vec![vec![3, 6, 12], vec![4, 3, 3, 5], vec![4]],
            Box::new(|g, v| g.conv2d(v[0], v[1], Some(v[2]), (1, 2))),
        ),
        (
            "conv_transpose2d",
            vec![vec![4, 5, 6], vec![4, 3, 3, 5], vec![3]],
            Box::new(|g, v| g.conv_transpose2d(v[0], v[1], Some(v[2]), (1, 2))),
        ),
    ]
}

pub fn operator_gradcheck(name: &str, shapes: &[Vec<usize>], build: &OpBuild, seed: u64) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs: Vec<(Vec<usize>, Vec<f64>)> = shapes
        .iter()
        .map(|s| (s.clone(), rand_vec(s.iter().product(), -1.0, 1.0, &mut rng)))
        .collect();
    check_inputs(
        &inputs,
        |g, v| {
            let y = build(g, v)?;
            weighted_sum(g, y, 99)
        },
        GRAD_EPS,
        GRAD_COORDS,
        seed,
    )
    .unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn small_norm(y: &Spectrogram) -> NormStats {
    fit_norm_stats([y]).unwrap()
}

/// Full denoiser, synthetic loss, all parameters.
pub fn denoiser_gradcheck(seed: u64) -> GradCheckReport {
    let y = rand_spec(6, 0.5, seed);
    let clean = rand_spec(6, 0.3, seed + 1);
    let rev = rand_spec(6, 0.3, seed + 2);
    let norm = small_norm(&y);
    let net = DenoiserNet::<f32>::new(seed).cast::<f64>();
    let input = DenoiserInput::<f64>::from_spectrogram(&y, &norm).unwrap();
    let cfg = LossConfig::default();
    check_params(
        &net.store,
        |g, store| {
            let net = DenoiserNet::from_store(store.clone())?;
            let out = net.forward(g, &input, Bind::Train)?;
            synth_var(g, out.est_re, out.est_im, &clean, &rev, &cfg)
        },
        GRAD_EPS,
        GRAD_COORDS,
        seed,
    )
    .unwrap()
}

/// Denoiser trained through a frozen quality estimator with the total loss.
pub fn weak_path_gradcheck(seed: u64) -> GradCheckReport {
    let y = rand_spec(10, 0.5, seed);
    let clean = rand_spec(10, 0.3, seed + 1);
    let norm = small_norm(&y);
    let net = DenoiserNet::<f32>::new(seed).cast::<f64>();
    let quality = QualityNet::<f32>::new(seed + 7).cast::<f64>();
    let input = DenoiserInput::<f64>::from_spectrogram(&y, &norm).unwrap();
    let cfg = LossConfig::default();
    check_params(
        &net.store,
        |g, store| {
            let net = DenoiserNet::from_store(store.clone())?;
            let out = net.forward(g, &input, Bind::Train)?;
            let synth = synth_var(g, out.est_re, out.est_im, &clean, &clean, &cfg)?;
            let amp = g.complex_abs(out.est_re, out.est_im)?;
            let q = quality.forward(g, amp, &norm, Bind::Frozen)?;
            total_var(g, Kind::Synthetic, Some(synth), q, &cfg)
        },
        GRAD_EPS,
        GRAD_COORDS,
        seed,
    )
    .unwrap()
}

/// Full quality estimator, regression loss, all parameters.
pub fn quality_gradcheck(seed: u64) -> GradCheckReport {
    let y = rand_spec(12, 0.5, seed);
    let norm = small_norm(&y);
    let amp: Vec<f64> = y.magnitude();
    let net = QualityNet::<f32>::new(seed).cast::<f64>();
    check_params(
        &net.store,
        |g, store| {
            let net = QualityNet::from_store(store.clone())?;
            let a = g.constant(vec![1, y.frames(), y.bins()], amp.clone())?;
            let q = net.forward(g, a, &norm, Bind::Train)?;
            pesqnet_var(g, q, 3.3)
        },
        GRAD_EPS,
        GRAD_COORDS,
        seed,
    )
    .unwrap()
}

/// Largest mask magnitude and the extreme quality scores over `draws`
/// random parameter scalings and inputs, in training precision.
pub fn architectural_extremes(draws: usize, seed: u64) -> (f64, f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_mask = 0.0f64;
    let (mut q_lo, mut q_hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for d in 0..draws {
        let frames = rng.gen_range(8..14);
        let amp = 10f64.powf(rng.gen_range(-3.0..1.0));
        let y = rand_spec(frames, amp, rng.gen());
        let norm = small_norm(&y);
        // Scale every parameter by up to 100x to reach saturation.
        let gain = 10f32.powf(rng.gen_range(-1.0..2.0));
        let mut den = DenoiserNet::<f32>::new(d as u64);
        let mut q = QualityNet::<f32>::new(d as u64 + 1);
        scale_store(&mut den.store, gain);
        scale_store(&mut q.store, gain);
        let (mask, est) = den.enhance(&y, &norm).unwrap();
        max_mask = max_mask.max(mask.max_magnitude());
        let s = q.score(&est.magnitude(), est.frames(), &norm).unwrap();
        q_lo = q_lo.min(s);
        q_hi = q_hi.max(s);
    }
    (max_mask, q_lo, q_hi)
}

fn scale_store(store: &mut weakdns::autodiff::ParamStore<f32>, gain: f32) {
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        store.get_mut(id).data_mut().iter_mut().for_each(|v| *v *= gain);
    }
}

/// Fixture corpus prepared for training, kept alive with its directory.
pub struct Corpus {
    pub dir: tempfile::TempDir,
    pub data: weakdns::trainer::TrainData,
}

pub fn corpus(fx: &weakdns::fixture::FixtureConfig, cc: &weakdns::mixer::CorpusConfig) -> Corpus {
    let dir = tempfile::tempdir().unwrap();
    let manifest = weakdns::fixture::write_fixture(dir.path().join("fx"), fx).unwrap();
    let root = dir.path().join("corpus");
    weakdns::mixer::build_corpus(&manifest, cc, &root, weakdns::ExecMode::Parallel).unwrap();
    let ds = weakdns::mixer::Dataset::load(&root, weakdns::ExecMode::Parallel).unwrap();
    let stft = weakdns::dsp::Stft::new(StftConfig::default()).unwrap();
    let data = weakdns::trainer::TrainData::from_dataset(&ds, &stft, weakdns::ExecMode::Parallel).unwrap();
    Corpus { dir, data }
}

/// Small corpus of short utterances for protocol-level tests.
pub fn tiny_corpus(seed: u64) -> Corpus {
    let fx = weakdns::fixture::FixtureConfig { clean: 8, real: 4, noises: 2, rirs: 2, seconds: 0.25, seed };
    let cc = weakdns::mixer::CorpusConfig {
        snr: weakdns::mixer::SnrDistribution::Uniform([0.0, 10.0]),
        reverb_fraction: 0.5,
        val_fraction: 0.25,
        test_fraction: 0.0,
        seed,
        ..Default::default()
    };
    corpus(&fx, &cc)
}

pub fn context() -> weakdns::trainer::TrainContext {
    weakdns::config::RunConfig::default().context().unwrap()
}

pub fn fresh_state(data: &weakdns::trainer::TrainData, seed: u64, lr: f64) -> weakdns::trainer::TrainState {
    let norm = fit_norm_stats(data.synth_train.iter().map(|u| &u.y)).unwrap();
    let adam = weakdns::autodiff::AdamConfig { lr, ..Default::default() };
    weakdns::trainer::TrainState::new(seed, norm, adam, adam)
}
