//! End-to-end integration tests on small synthetic scenes: decomposition
//! quality against ground truth, the decode path on clean trains, the study
//! machinery, and whole-pipeline determinism.

use myodecode_core::config::{BssConfig, DecodeConfig, MuxSelection, MuxSetupConfig, SimConfig};
use myodecode_core::sim::Scene;
use myodecode_core::{bss, decode, eval, sim};

fn small_scene() -> Scene {
    let cfg = SimConfig {
        channels: 16,
        neurons_per_dof: 4,
        ramp_up_s: 5.0,
        ramp_down_s: 5.0,
        rest_s: 1.0,
        trials: 1,
        stagger_s: 0.0,
        ..SimConfig::default()
    };
    sim::simulate_scene(&cfg, 20_240_601).unwrap()
}

fn small_bss() -> BssConfig {
    BssConfig {
        max_sources: 24,
        ..BssConfig::default()
    }
}

fn three_dof_scene() -> Scene {
    // Rest-dominated cues: with column-centered scores the R² ceiling scales
    // with the reference's variance over its squared mean, i.e. low duty.
    let cfg = SimConfig {
        channels: 12,
        neurons_per_dof: 6,
        dof_labels: vec!["EF".into(), "WP".into(), "WF".into()],
        kinematics_gains_deg: vec![90.0, 80.0, 70.0],
        rest_s: 2.5,
        stagger_s: 6.0,
        ..SimConfig::default()
    };
    sim::simulate_scene(&cfg, 11).unwrap()
}

#[test]
fn decomposition_recovers_most_small_scene_neurons() {
    let scene = small_scene();
    let decomposition = bss::decompose(&scene.emg, &small_bss(), 5).unwrap();
    assert!(decomposition.qualified_count() > 0, "nothing qualified");
    // One diagnostic row per extracted ICA candidate.
    let ipts = bss::separate(&scene.emg, &small_bss(), 5).unwrap();
    assert_eq!(decomposition.diagnostics.len(), ipts.source_count());
    // Deflation bound: never more sources than extended rows.
    assert!(
        decomposition.qualified_count() <= scene.emg.channel_count() * 5,
        "qualified beyond the deflation bound"
    );
    let musts = decomposition.spike_trains();
    // Refractory invariant on every qualified source.
    let refractory = (0.010_f64 * musts.sample_rate_hz()).round() as usize;
    for train in musts.trains() {
        for w in train.windows(2) {
            assert!(w[1] - w[0] >= refractory, "refractory violated: {w:?}");
        }
    }
    let report = eval::match_sources(&scene.truth, &musts, 1.0, 20.0, 0.9);
    assert!(
        report.matched_neurons * 2 >= scene.truth.source_count(),
        "matched only {} of {}",
        report.matched_neurons,
        report.truth_neurons
    );
}

#[test]
fn thread_cap_does_not_change_results() {
    let scene = three_dof_scene();
    let cfg = DecodeConfig::default();
    let run = || {
        eval::reduced_set_sweep(
            &scene.truth,
            &scene.reference,
            &[6, 12],
            4,
            55,
            &cfg,
            scene.trial_s,
            scene.trials,
        )
        .unwrap()
    };
    let unrestricted = run();
    std::env::set_var("MYODECODE_THREADS", "1");
    let single = run();
    std::env::remove_var("MYODECODE_THREADS");
    assert_eq!(unrestricted, single);
}

#[test]
fn decomposition_is_bit_deterministic() {
    let scene = small_scene();
    let a = bss::decompose(&scene.emg, &small_bss(), 9).unwrap();
    let b = bss::decompose(&scene.emg, &small_bss(), 9).unwrap();
    assert_eq!(a.spike_trains(), b.spike_trains());
    assert_eq!(a.diagnostics, b.diagnostics);
}

#[test]
fn pure_noise_yields_zero_qualified_sources() {
    let spikes =
        sim::SpikeTrainSet::new(vec![vec![]], vec!["none".into()], 2048.0, 24_576).unwrap();
    let bank = sim::MuapBank::generate(1, 16, 30, 3).unwrap();
    let emg = sim::synthesize_emg(&spikes, &bank, Some(20.0), 17).unwrap();
    let decomposition = bss::decompose(&emg, &small_bss(), 23).unwrap();
    assert_eq!(decomposition.qualified_count(), 0);
}

#[test]
fn ground_truth_trains_decode_to_reference() {
    // Decode quality in isolation from decomposition: feed the true trains.
    let scene = three_dof_scene();
    let cfg = DecodeConfig::default();
    let prepared = eval::prepare_decode(
        &scene.truth,
        &scene.reference,
        &cfg,
        scene.trial_s,
        scene.trials,
    )
    .unwrap();
    let outcome = eval::run_decode(&prepared, None, None, &cfg).unwrap();
    assert!(outcome.r2_train > 0.6, "train R² {}", outcome.r2_train);
    assert!(outcome.r2_test > 0.6, "test R² {}", outcome.r2_test);
    // Three distinct components, one per DoF.
    let comps: std::collections::HashSet<usize> = outcome
        .model
        .assignments()
        .iter()
        .map(|a| a.component)
        .collect();
    assert_eq!(comps.len(), 3);

    // Rotation spreads variance more evenly across retained components.
    let smoothed = decode::smooth(&prepared.binned, cfg.cutoff_hz).unwrap();
    let train = myodecode_core::BinnedActivity::new(
        smoothed
            .values()
            .slice(ndarray::s![..prepared.split.train_bins().end, ..])
            .to_owned(),
        smoothed.bin_ms(),
        smoothed.column_labels().to_vec(),
    )
    .unwrap();
    let unrotated = decode::fit_pca(&train, outcome.model.dims()).unwrap();
    let spread = |scores: &ndarray::Array2<f64>| {
        let t = scores.nrows() as f64;
        let vars: Vec<f64> = scores
            .columns()
            .into_iter()
            .map(|c| {
                let m = c.sum() / t;
                c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (t - 1.0)
            })
            .collect();
        let mean = vars.iter().sum::<f64>() / vars.len() as f64;
        (vars.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vars.len() as f64).sqrt()
    };
    let s_before = spread(&unrotated.transform(&train).unwrap());
    let s_after = spread(&outcome.model.transform(&train).unwrap());
    assert!(
        s_after <= s_before + 1e-9,
        "variance spread grew: {s_before} → {s_after}"
    );
}

#[test]
fn full_size_sweep_equals_plain_pipeline() {
    let scene = three_dof_scene();
    let cfg = DecodeConfig::default();
    let prepared = eval::prepare_decode(
        &scene.truth,
        &scene.reference,
        &cfg,
        scene.trial_s,
        scene.trials,
    )
    .unwrap();
    let direct = eval::run_decode(&prepared, None, None, &cfg).unwrap();

    let channels = scene.truth.source_count();
    let report = eval::reduced_set_sweep(
        &scene.truth,
        &scene.reference,
        &[channels, channels + 50],
        1,
        99,
        &cfg,
        scene.trial_s,
        scene.trials,
    )
    .unwrap();
    // Oversized subset skipped with a warning; full-size equals the plain run.
    assert_eq!(report.entries.len(), 1);
    assert_eq!(report.warnings.len(), 1);
    assert_eq!(report.entries[0].train.values[0], direct.r2_train);
    assert_eq!(report.entries[0].test.values[0], direct.r2_test);
}

#[test]
fn sweep_reports_are_bit_deterministic() {
    let scene = three_dof_scene();
    let cfg = DecodeConfig::default();
    let sizes = [6, 12];
    let a = eval::reduced_set_sweep(
        &scene.truth,
        &scene.reference,
        &sizes,
        4,
        1234,
        &cfg,
        scene.trial_s,
        scene.trials,
    )
    .unwrap();
    let b = eval::reduced_set_sweep(
        &scene.truth,
        &scene.reference,
        &sizes,
        4,
        1234,
        &cfg,
        scene.trial_s,
        scene.trials,
    )
    .unwrap();
    assert_eq!(a, b);
    // Adding runs never perturbs the earlier ones.
    let c = eval::reduced_set_sweep(
        &scene.truth,
        &scene.reference,
        &sizes,
        6,
        1234,
        &cfg,
        scene.trial_s,
        scene.trials,
    )
    .unwrap();
    for (ea, ec) in a.entries.iter().zip(&c.entries) {
        assert_eq!(ea.train.values[..], ec.train.values[..4]);
        assert_eq!(ea.test.values[..], ec.test.values[..4]);
    }
}

#[test]
fn mux_study_reports_setups_and_baselines() {
    let scene = three_dof_scene();
    let cfg = DecodeConfig::default();
    let setups = vec![
        MuxSetupConfig {
            scheduled_channels: 12,
            subset_size: 4,
            block_ms: 100.0,
            switches: 3,
            selection: MuxSelection::Random,
        },
        MuxSetupConfig {
            scheduled_channels: 12,
            subset_size: 4,
            block_ms: 50.0,
            switches: 3,
            selection: MuxSelection::Random,
        },
        MuxSetupConfig {
            scheduled_channels: 999,
            subset_size: 32,
            block_ms: 100.0,
            switches: 32,
            selection: MuxSelection::Random,
        },
    ];
    let report = eval::mux_study(
        &scene.truth,
        &scene.reference,
        &setups,
        3,
        77,
        &cfg,
        scene.trial_s,
        scene.trials,
    )
    .unwrap();
    // Two usable setups + reduced baselines (4 and 12) + full. The
    // infeasible setup lands in warnings.
    assert_eq!(report.warnings.len(), 1);
    assert_eq!(report.entries.len(), 5);

    let direct = {
        let prepared = eval::prepare_decode(
            &scene.truth,
            &scene.reference,
            &cfg,
            scene.trial_s,
            scene.trials,
        )
        .unwrap();
        eval::run_decode(&prepared, None, None, &cfg).unwrap()
    };
    let full = report.entries.last().unwrap();
    assert!(full.label.starts_with("full-"));
    assert_eq!(full.test.values[0], direct.r2_test);

    for entry in &report.entries {
        assert!(entry.test.p25 <= entry.test.median);
        assert!(entry.test.median <= entry.test.p75);
    }
}

#[test]
fn thresholding_comparison_drift_free_control() {
    // Without amplitude drift the two detectors see the same stationary
    // amplitudes and land close together.
    let cfg = DecodeConfig {
        dims: 6,
        train_trials: 1,
        ..DecodeConfig::default()
    };
    let sim_cfg = SimConfig {
        channels: 16,
        neurons_per_dof: 4,
        ramp_up_s: 4.0,
        ramp_down_s: 4.0,
        rest_s: 1.0,
        trials: 2,
        stagger_s: 0.0,
        ..SimConfig::default()
    };
    let scene = sim::simulate_scene(&sim_cfg, 314).unwrap();
    let report = eval::thresholding_comparison(
        &scene.emg,
        &scene.reference,
        Some(&scene.truth),
        &small_bss(),
        &cfg,
        scene.trial_s,
        scene.trials,
        1.0,
        20.0,
        0.9,
        21,
    )
    .unwrap();
    let (Some(a), Some(k)) = (report.adaptive.r2_test, report.kmeans.r2_test) else {
        panic!("both arms should decode: {:?}", report.warnings);
    };
    assert!((a - k).abs() < 0.05, "adaptive {a} vs kmeans {k}");
    assert!(report.adaptive.matching.is_some());
}
