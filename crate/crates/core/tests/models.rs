mod common;

use common::*;
use weakdns::autodiff::{Graph, GATE_HI, GATE_LO};
use weakdns::models::{fit_norm_stats, Bind, DenoiserInput, DenoiserNet, QualityNet};

#[test]
fn every_operator_matches_finite_differences() {
    for (i, (name, shapes, build)) in operator_cases().iter().enumerate() {
        let r = operator_gradcheck(name, shapes, build, 100 + i as u64);
        assert_eq!(r.checked, GRAD_COORDS, "{name}");
        assert!(r.passes(GRAD_TOL), "{name}: {r:?}");
    }
}

#[test]
fn denoiser_gradients() {
    let r = denoiser_gradcheck(11);
    assert_eq!(r.checked, GRAD_COORDS);
    assert!(r.passes(GRAD_TOL), "{r:?}");
}

#[test]
fn denoiser_gradients_through_frozen_quality_net() {
    let r = weak_path_gradcheck(12);
    assert_eq!(r.checked, GRAD_COORDS);
    assert!(r.passes(GRAD_TOL), "{r:?}");
}

#[test]
fn quality_net_gradients() {
    let r = quality_gradcheck(13);
    assert_eq!(r.checked, GRAD_COORDS);
    assert!(r.passes(GRAD_TOL), "{r:?}");
}

#[test]
fn mask_and_score_bounds_hold_under_saturation() {
    let (max_mask, lo, hi) = architectural_extremes(150, 5);
    assert!(max_mask <= 1.0, "{max_mask}");
    assert!(lo > GATE_LO && hi < GATE_HI, "{lo} {hi}");
}

#[test]
fn norm_stats_match_two_pass_oracle() {
    let specs: Vec<_> = (0..3).map(|i| rand_spec(5 + i, 0.4, i as u64)).collect();
    let stats = fit_norm_stats(&specs).unwrap();
    let bins = specs[0].bins();
    for k in 0..bins {
        let xs: Vec<f64> = specs.iter().flat_map(|s| (0..s.frames()).map(move |l| s.get(l, k).norm())).collect();
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        assert!((f64::from(stats.mean[k]) - mean).abs() <= 1e-6 * mean.abs().max(1.0), "bin {k}");
        assert!((f64::from(stats.std[k]) - var.sqrt()).abs() <= 1e-6 * var.sqrt().max(1.0), "bin {k}");
    }
}

#[test]
fn redundant_mask_bins_copy_nyquist() {
    let y = rand_spec(9, 0.5, 3);
    let norm = fit_norm_stats([&y]).unwrap();
    let (mask, _) = DenoiserNet::<f32>::new(2).enhance(&y, &norm).unwrap();
    let nyq = y.physical_bins() - 1;
    for l in 0..y.frames() {
        for k in y.physical_bins()..y.bins() {
            assert_eq!(mask.0.get(l, k), mask.0.get(l, nyq));
        }
    }
}

#[test]
fn frozen_binding_yields_gradients_for_trained_model_only() {
    let y = rand_spec(10, 0.5, 4);
    let norm = fit_norm_stats([&y]).unwrap();
    let den = DenoiserNet::<f32>::new(1);
    let q = QualityNet::<f32>::new(2);
    let input = DenoiserInput::<f32>::from_spectrogram(&y, &norm).unwrap();
    let mut g = Graph::new();
    let out = den.forward(&mut g, &input, Bind::Train).unwrap();
    let amp = g.complex_abs(out.est_re, out.est_im).unwrap();
    let s = q.forward(&mut g, amp, &norm, Bind::Frozen).unwrap();
    let loss = g.sum(s);
    let grads = g.gradients(loss).unwrap();
    let pg = g.param_grads(&grads);
    // Only the trained model's parameters are leaves of the graph.
    let ids: Vec<_> = pg.iter().map(|(id, _)| id).collect();
    assert_eq!(ids, den.store.ids().collect::<Vec<_>>());
    for (id, grad) in pg.iter() {
        assert_eq!(grad.len(), den.store.get(id).len());
    }
}
