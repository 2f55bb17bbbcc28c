//! Acceptance criteria 1-9. Each prints one PASS/FAIL line; the test fails
//! if any criterion fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use weakdns::autodiff::{AdamConfig, Graph, GATE_HI, GATE_LO};
use weakdns::dsp::Stft;
use weakdns::fixture::{speech_like, FixtureConfig};
use weakdns::losses::{combine_synth, j_pesqnet, j_real, j_total, real_var, total_var, LossConfig};
use weakdns::metrics::QUALITY_MIN;
use weakdns::mixer::{active_level, generate_rir, synthesize, CorpusConfig, Kind, Split, SnrDistribution};
use weakdns::trainer::{
    checkpoint_name, evaluate, load_checkpoint, pretrain_denoiser, pretrain_qualitynet, quality_sample, run_stage2,
    validation_quality_mse, validation_synth_loss, Enhancer, Phase, ProtocolSpec, RunInfo, Stage2Config, StepLog,
};
use weakdns::{StftConfig, Waveform};

type Outcome = (bool, String);

// Written to stderr directly so the verdicts show without --nocapture.
fn report(line: String) {
    use std::io::Write;
    let _ = writeln!(std::io::stderr(), "{line}");
}

fn criterion(n: usize, name: &str, check: impl FnOnce() -> Outcome) -> bool {
    let t = Instant::now();
    let (ok, detail) = match catch_unwind(AssertUnwindSafe(check)) {
        Ok(r) => r,
        Err(e) => {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            (false, format!("panicked: {msg}"))
        }
    };
    let verdict = if ok { "PASS" } else { "FAIL" };
    report(format!("criterion {n} {verdict} {name}: {detail} [{:.1}s]", t.elapsed().as_secs_f64()));
    ok
}

fn stft_round_trip() -> Outcome {
    let t = Instant::now();
    let stft = Stft::new(StftConfig::default()).unwrap();
    let (len, edge) = (16_000, 384);
    let mut worst = 0.0f64;
    for i in 0..100 {
        let x = rand_wave(len, 1.0, 1000 + i);
        let y = stft.synthesize(&stft.analyze(&x).unwrap(), len).unwrap();
        let err = x.samples()[edge..len - edge]
            .iter()
            .zip(&y.samples()[edge..len - edge])
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        worst = worst.max(err);
    }
    let secs = t.elapsed().as_secs_f64();
    (worst < 1e-6 && secs < 10.0, format!("max interior error {worst:.3e} (< 1e-6), {secs:.2}s (< 10s)"))
}

fn autodiff_soundness() -> Outcome {
    let t = Instant::now();
    let mut failures = Vec::new();
    let mut worst = 0.0f64;
    let mut min_coords = usize::MAX;
    let mut skipped = 0;
    let cases = operator_cases();
    for (i, (name, shapes, build)) in cases.iter().enumerate() {
        let r = operator_gradcheck(name, shapes, build, 100 + i as u64);
        worst = worst.max(r.max_rel_err);
        min_coords = min_coords.min(r.checked);
        skipped += r.skipped;
        if r.checked < GRAD_COORDS || !r.passes(GRAD_TOL) {
            failures.push(name.to_string());
        }
    }
    for (name, r) in [
        ("denoiser", denoiser_gradcheck(11)),
        ("denoiser+frozen-quality", weak_path_gradcheck(12)),
        ("quality", quality_gradcheck(13)),
    ] {
        worst = worst.max(r.max_rel_err);
        min_coords = min_coords.min(r.checked);
        skipped += r.skipped;
        if r.checked < GRAD_COORDS || !r.passes(GRAD_TOL) {
            failures.push(name.to_string());
        }
    }
    let secs = t.elapsed().as_secs_f64();
    let ok = failures.is_empty() && secs < 120.0;
    (
        ok,
        format!(
            "{} operators + 3 model paths, >= {min_coords} coords each (eps 1e-3), max rel err {worst:.2e} \
             (<= 1e-3), {skipped} kink-crossing coords redrawn, failures {failures:?}, {secs:.1}s (< 120s)",
            cases.len()
        ),
    )
}

fn loss_algebra() -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;
    let mut expect = |name: &str, got: f64, want: f64, exact: bool| {
        let ulps = (got.to_bits() as i64 - want.to_bits() as i64).unsigned_abs();
        let pass = if exact { got == want } else { ulps <= 4 };
        ok &= pass;
        notes.push(format!("{name}={got:?} ({ulps} ulp)"));
    };
    let at = |alpha: f64, beta: f64| LossConfig::new(alpha, beta).unwrap();
    let (joint, noise) = (2.0, 10.0);
    expect("synth(b=1)", combine_synth(joint, noise, &at(0.9, 1.0)), joint, true);
    expect("synth(b=0)", combine_synth(joint, noise, &at(0.9, 0.0)), noise, true);
    expect("synth(b=0.9)", combine_synth(joint, noise, &at(0.9, 0.9)), 2.8, false);
    let (synth, q) = (1.0, 2.64);
    let real = j_real(q).value;
    expect("total(a=1)", j_total(Kind::Synthetic, Some(synth), q, &at(1.0, 0.9)).unwrap().value, synth, true);
    expect("total(a=0)", j_total(Kind::Synthetic, Some(synth), q, &at(0.0, 0.9)).unwrap().value, real, true);
    let total = weakdns::losses::combine_total(Kind::Synthetic, Some(1.0), 4.0, &at(0.9, 0.9)).unwrap();
    expect("total(a=0.9)", total, 1.3, false);
    let floor = j_real(QUALITY_MIN).value;
    expect("real(1.04)", floor, 12.96, false);
    expect("pesqnet(1.04,4.64)", j_pesqnet(1.04, 4.64).unwrap().value, 12.96, false);
    // The graph path reproduces the scalar path bit for bit.
    let mut g = Graph::<f64>::new();
    let qv = g.constant(vec![1], vec![QUALITY_MIN]).unwrap();
    let rv = real_var(&mut g, qv).unwrap();
    expect("graph real(1.04)", g.scalar(rv), floor, true);
    let sv = g.constant(vec![1], vec![synth]).unwrap();
    let s = g.sum(sv);
    let q2 = g.constant(vec![1], vec![q]).unwrap();
    let tv = total_var(&mut g, Kind::Synthetic, Some(s), q2, &at(0.9, 0.9)).unwrap();
    let scalar = j_total(Kind::Synthetic, Some(synth), q, &at(0.9, 0.9)).unwrap().value;
    expect("graph total", g.scalar(tv), scalar, true);
    (ok, notes.join(", "))
}

fn architectural_bounds() -> Outcome {
    let (max_mask, lo, hi) = architectural_extremes(1000, 77);
    let ok = max_mask <= 1.0 && lo > GATE_LO && hi < GATE_HI;
    (ok, format!("1000 draws: max |M| = {max_mask:?} (<= 1), quality range [{lo:?}, {hi:?}] inside (1.04, 4.64)"))
}

fn protocol_trace() -> Outcome {
    let c = tiny_corpus(21);
    let ctx = context();
    let proto: ProtocolSpec = "⟨1−1−50⟩".parse().unwrap();
    let info = RunInfo { stage: "finetune-stage2".into(), protocol: Some(proto.to_string()), ..Default::default() };
    let mut state = fresh_state(&c.data, 4, 1e-3);
    let mut log = StepLog::in_memory();
    let five = Stage2Config { protocol: proto, runs: 5, checkpoint_every: 39, checkpoint_dir: None };
    run_stage2(&mut state, &ctx, &c.data, &five, &info, &mut log, &mut |_| Ok(())).unwrap();
    let got: Vec<Phase> = log.records().iter().map(|r| r.phase).collect();
    let cycle: Vec<Phase> =
        [vec![Phase::FcrnReal, Phase::FcrnSynth], vec![Phase::Pesqnet; 50]].concat();
    let want: Vec<Phase> = (0..5).flat_map(|_| cycle.clone()).collect();
    let sequence_ok = got == want;
    let mut frozen_ok = true;
    for run in log.records().chunk_by(|a, b| a.phase == b.phase && a.cycle == b.cycle) {
        let d = run[0].phase.updates_denoiser();
        let key = |r: &weakdns::trainer::StepRecord| if d { r.quality_checksum.clone() } else { r.denoiser_checksum.clone() };
        frozen_ok &= run.iter().all(|r| key(r) == key(&run[0]));
    }

    let mut state = fresh_state(&c.data, 4, 1e-3);
    let dir = c.dir.path().join("ckpt");
    let long = Stage2Config { protocol: proto, runs: 78, checkpoint_every: 39, checkpoint_dir: Some(dir.clone()) };
    let written = run_stage2(&mut state, &ctx, &c.data, &long, &info, &mut StepLog::in_memory(), &mut |_| Ok(())).unwrap();
    let mut on_disk: Vec<String> = std::fs::read_dir(&dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.ends_with(".wdns"))
        .collect();
    on_disk.sort();
    let expected = vec![checkpoint_name(39), checkpoint_name(78)];
    let ckpt_ok = on_disk == expected && written == [dir.join(&expected[0]), dir.join(&expected[1])];
    (
        sequence_ok && frozen_ok && ckpt_ok,
        format!(
            "{} steps in [real, synth, pesqnet x50] x5 order: {sequence_ok}; frozen checksums constant: {frozen_ok}; \
             78-run checkpoints {on_disk:?}",
            got.len()
        ),
    )
}

struct DeskRun {
    init_val_synth: f64,
    final_val_synth: f64,
    delta_seg_snr: f64,
    test_utterances: usize,
    quality_post_pretrain: f64,
    quality_midpoint: f64,
    quality_stage2: Vec<f64>,
    elapsed: Duration,
}

const DESK_PRETRAIN_EPOCHS: usize = 10;
const DESK_QUALITY_EPOCHS: usize = 10;
const DESK_CYCLES: u64 = 5;

fn desk_scale_run() -> DeskRun {
    let t = Instant::now();
    let fx = FixtureConfig { clean: 60, real: 12, noises: 6, rirs: 4, seconds: 2.0, seed: 11 };
    let cc = CorpusConfig {
        snr: SnrDistribution::Uniform([0.0, 10.0]),
        reverb_fraction: 0.5,
        val_fraction: 0.2,
        test_fraction: 0.2,
        seed: 5,
        ..Default::default()
    };
    let c = corpus(&fx, &cc);
    let ctx = context();
    let mut state = fresh_state(&c.data, 7, 1e-3);
    let mut log = StepLog::in_memory();
    let den = pretrain_denoiser(&mut state, &ctx, &c.data, DESK_PRETRAIN_EPOCHS, &mut log).unwrap();
    let init_val_synth = den[0].val_loss.unwrap();
    let q = pretrain_qualitynet(&mut state, &ctx, &c.data, DESK_QUALITY_EPOCHS, &mut log).unwrap();
    let quality_post_pretrain = q.last().unwrap().val_loss.unwrap();
    let mid = (GATE_LO + GATE_HI) / 2.0;
    let labels: Vec<f64> =
        c.data.synth_val.iter().map(|u| quality_sample(&state, &ctx, u).unwrap().label).collect();
    let quality_midpoint = labels.iter().map(|l| (mid - l).powi(2)).sum::<f64>() / labels.len() as f64;

    // fine-tuning starts with fresh optimizers at the default learning rate
    state.set_optimizers(AdamConfig::default(), AdamConfig::default());
    let mut quality_stage2 = Vec::new();
    let cfg = Stage2Config {
        protocol: "1-1-50".parse().unwrap(),
        runs: DESK_CYCLES,
        checkpoint_every: DESK_CYCLES,
        checkpoint_dir: None,
    };
    run_stage2(&mut state, &ctx, &c.data, &cfg, &RunInfo::default(), &mut log, &mut |s| {
        quality_stage2.push(validation_quality_mse(s, &ctx, &c.data.synth_val)?.unwrap());
        Ok(())
    })
    .unwrap();
    let final_val_synth = validation_synth_loss(&state, &ctx, &c.data.synth_val).unwrap().unwrap();
    let rows = evaluate(&Enhancer::Denoiser(&state.denoiser), None, &state.norm, &ctx, &c.data.synth_test).unwrap();
    let delta_seg_snr = rows.iter().map(|r| r.delta_seg_snr).sum::<f64>() / rows.len() as f64;
    DeskRun {
        init_val_synth,
        final_val_synth,
        delta_seg_snr,
        test_utterances: rows.len(),
        quality_post_pretrain,
        quality_midpoint,
        quality_stage2,
        elapsed: t.elapsed(),
    }
}

fn end_to_end(run: &DeskRun) -> Outcome {
    let reduction = 1.0 - run.final_val_synth / run.init_val_synth;
    let secs = run.elapsed.as_secs_f64();
    let ok = reduction >= 0.30 && run.delta_seg_snr > 1.0 && secs < 600.0;
    (
        ok,
        format!(
            "val J_synth {:.4} -> {:.4} ({:.1}% reduction, >= 30%), mean delta SNRseg {:.2} dB over {} held-out \
             utterances (> 1 dB), {secs:.0}s (< 600s)",
            run.init_val_synth,
            run.final_val_synth,
            100.0 * reduction,
            run.delta_seg_snr,
            run.test_utterances
        ),
    )
}

fn quality_regression(run: &DeskRun) -> Outcome {
    let worst = run.quality_stage2.iter().copied().fold(0.0, f64::max);
    let ok = run.quality_post_pretrain <= 0.5 * run.quality_midpoint && worst <= 2.0 * run.quality_post_pretrain;
    (
        ok,
        format!(
            "post-pretrain MSE {:.5} vs midpoint {:.5} (<= 50%); stage-2 MSE per cycle {:?}, max {:.5} (<= 2x = {:.5})",
            run.quality_post_pretrain,
            run.quality_midpoint,
            run.quality_stage2.iter().map(|v| format!("{v:.5}")).collect::<Vec<_>>(),
            worst,
            2.0 * run.quality_post_pretrain
        ),
    )
}

fn mixer_exactness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let noises: Vec<(String, Waveform)> =
        (0..4).map(|i| (format!("n{i}"), rand_wave(24_000, 0.2, 50 + i))).collect();
    let mut worst_residual = 0.0f64;
    let mut worst_snr = 0.0f64;
    for i in 0..100 {
        let clean = Waveform::new(speech_like(16_000, &mut rng)).unwrap();
        let rir = if rng.gen_bool(0.5) {
            Some(generate_rir(rng.gen_range(0.2..1.0), rng.gen_range(0.0..10.0), 4000, rng.gen()).unwrap())
        } else {
            None
        };
        let cfg = CorpusConfig { snr: SnrDistribution::Uniform([-5.0, 40.0]), seed: rng.gen(), ..Default::default() };
        let s = synthesize(&format!("u{i}"), &clean, &noises, rir.as_ref().map(|h| ("h", h)), &cfg, Split::Train).unwrap();
        let rec = &s.record;
        let rev = rec.clean_rev.as_ref().unwrap();
        for ((y, n), c) in rec.noisy.samples().iter().zip(s.scaled_noise.samples()).zip(rev.samples()) {
            worst_residual = worst_residual.max((y - n - c).abs());
        }
        let achieved = 10.0 * (active_level(rev).unwrap() / s.scaled_noise.mean_power()).log10();
        worst_snr = worst_snr.max((achieved - rec.meta.snr_db.unwrap()).abs());
    }
    (
        worst_residual < 1e-7 && worst_snr < 0.01,
        format!("100 draws: max |noisy - scaled noise - clean_rev| {worst_residual:.2e} (< 1e-7), max SNR error {worst_snr:.2e} dB (< 0.01)"),
    )
}

fn resume_bit_exact() -> Outcome {
    let c = tiny_corpus(31);
    let ctx = context();
    let proto: ProtocolSpec = "1-1-50".parse().unwrap();
    let info = RunInfo { stage: "finetune-stage2".into(), protocol: Some("1-1-50".into()), ..Default::default() };
    let full_dir = c.dir.path().join("full");
    let mut full = fresh_state(&c.data, 6, 1e-3);
    let mut full_log = StepLog::in_memory();
    let cfg = |runs, dir: &std::path::Path| Stage2Config {
        protocol: proto,
        runs,
        checkpoint_every: 2,
        checkpoint_dir: Some(dir.to_path_buf()),
    };
    run_stage2(&mut full, &ctx, &c.data, &cfg(4, &full_dir), &info, &mut full_log, &mut |_| Ok(())).unwrap();

    let part_dir = c.dir.path().join("part");
    let mut part = fresh_state(&c.data, 6, 1e-3);
    run_stage2(&mut part, &ctx, &c.data, &cfg(2, &part_dir), &info, &mut StepLog::in_memory(), &mut |_| Ok(()))
        .unwrap();
    let (mut resumed, _) = load_checkpoint(part_dir.join(checkpoint_name(2))).unwrap();
    let mut resumed_log = StepLog::in_memory();
    run_stage2(&mut resumed, &ctx, &c.data, &cfg(4, &part_dir), &info, &mut resumed_log, &mut |_| Ok(())).unwrap();

    let same_params = resumed.checksums() == full.checksums();
    let bytes = |d: &std::path::Path| std::fs::read(d.join(checkpoint_name(4))).unwrap();
    let same_file = bytes(&full_dir) == bytes(&part_dir);
    let tail = &full_log.records()[full_log.records().len() - resumed_log.records().len()..];
    let same_losses = resumed_log
        .records()
        .iter()
        .zip(tail)
        .all(|(a, b)| a.loss_value.to_bits() == b.loss_value.to_bits() && a.step == b.step && a.phase == b.phase);
    (
        same_params && same_file && same_losses,
        format!(
            "resume at run 2 of 4: parameters equal {same_params}, checkpoint bytes equal {same_file}, \
             {} logged losses bit-equal {same_losses}",
            resumed_log.records().len()
        ),
    )
}

#[test]
fn acceptance_criteria() {
    let mut all = Vec::new();
    all.push(criterion(1, "STFT round trip", stft_round_trip));
    all.push(criterion(2, "autodiff soundness", autodiff_soundness));
    all.push(criterion(3, "loss algebra", loss_algebra));
    all.push(criterion(4, "architectural bounds", architectural_bounds));
    all.push(criterion(5, "protocol trace", protocol_trace));
    let desk = catch_unwind(desk_scale_run);
    match &desk {
        Ok(run) => {
            all.push(criterion(6, "end-to-end learning at desk scale", || end_to_end(run)));
            all.push(criterion(7, "quality-net regression", || quality_regression(run)));
        }
        Err(_) => {
            all.push(criterion(6, "end-to-end learning at desk scale", || (false, "training run panicked".into())));
            all.push(criterion(7, "quality-net regression", || (false, "training run panicked".into())));
        }
    }
    all.push(criterion(8, "mixer exactness", mixer_exactness));
    all.push(criterion(9, "determinism and resume", resume_bit_exact));
    let passed = all.iter().filter(|&&ok| ok).count();
    report(format!("acceptance: {passed}/{} criteria pass", all.len()));
    assert!(all.iter().all(|&ok| ok));
}
