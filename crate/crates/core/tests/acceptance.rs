//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! the process exits non-zero if any fails. Positional arguments select
//! criteria by substring.

use std::path::Path;
use std::process::Command;
use std::sync::OnceLock;
use std::time::Instant;

use nalgebra::Matrix2;
use rand::Rng;
use rand_distr::{Distribution, Exp1};
use uavsense::crlb::{efim, FimWeights};
use uavsense::estimation::{ca_cfar, detection_probability, range_profile, velocity_profile, CfarConfig, RangeVelocityMap};
use uavsense::fusion::{fuse_station, GridMap, GridSpec};
use uavsense::harness::{self, aggregate, default_scene, evaluate_subset, observe_run, run_campaign, CampaignConfig, PipelineConfig};
use uavsense::mds::corpus::{feature_corpus, synthesize_echo, EchoClass};
use uavsense::mds::emd::emd;
use uavsense::mds::features::FEATURE_IMFS;
use uavsense::mds::Classifier;
use uavsense::rng::{derive_seed, seeded};
use uavsense::scene::BsPose;
use uavsense::select::{self, fcm_states, Objective, QParams, RewardConfig, SelectionEnv, StateEncoding};
use uavsense::waveform::{synthesize_if_cube, WaveformConfig};
use uavsense::Vec2;

const CLASSIFIER_SEED: u64 = 7;

fn classifier() -> &'static Classifier {
    static CLF: OnceLock<Classifier> = OnceLock::new();
    CLF.get_or_init(|| PipelineConfig::default().train_classifier(CLASSIFIER_SEED).unwrap())
}

fn report(n: u32, pass: bool, detail: String) {
    println!("criterion {n}: {} | {detail}", if pass { "PASS" } else { "FAIL" });
}

fn single_antenna(wf: &WaveformConfig) -> BsPose {
    BsPose {
        id: 0,
        position: Vec2::new(0.0, 0.0),
        rotation: 0.0,
        antenna_count: 1,
        element_spacing: wf.wavelength() / 2.0,
        tx_power: 1.0,
        tx_gain: 1.0,
        rx_gain: 1.0,
        beamwidth_3db: 1.0,
    }
}

fn criterion_1_cfar_false_alarm_rate() -> bool {
    let start = Instant::now();
    let wf = WaveformConfig::default();
    let cfar = CfarConfig::default();
    let bs = single_antenna(&wf);
    let per_map = wf.samples_per_pulse * wf.pulse_count;
    let maps = 1_000_000usize.div_ceil(per_map);
    let mut hits = 0usize;
    for i in 0..maps {
        let cube = synthesize_if_cube(&[], &wf, &bs, 1.0, derive_seed(11, i as u64)).unwrap();
        let map = velocity_profile(&range_profile(&cube), &wf);
        hits += ca_cfar(&map, &cfar).unwrap().len();
    }
    let cells = maps * per_map;
    let rate = hits as f64 / cells as f64;
    let secs = start.elapsed().as_secs_f64();
    let pass = (5e-4..=2e-3).contains(&rate) && secs < 30.0;
    report(1, pass, format!("false-alarm rate {rate:.3e} over {cells} cells in {secs:.1} s (target [5e-4, 2e-3], < 30 s)"));
    pass
}

/// Detection rate of the CA-CFAR implementation on 11 x 11 maps of unit
/// exponential noise with an exponentially fluctuating cell under test of
/// mean `1 + snr` at the centre.
fn monte_carlo_pd(snr: f64, trials: usize, cfg: &CfarConfig, seed: u64) -> f64 {
    let mut rng = seeded(seed);
    let n = 11;
    let mut detected = 0usize;
    for _ in 0..trials {
        let mut power: Vec<f64> = (0..n * n).map(|_| Exp1.sample(&mut rng)).collect();
        let cut: f64 = Exp1.sample(&mut rng);
        power[5 * n + 5] = cut * (1.0 + snr);
        let map = RangeVelocityMap::from_power(power, n, n);
        if ca_cfar(&map, cfg).unwrap().iter().any(|h| h.l == 5 && h.m == 5) {
            detected += 1;
        }
    }
    detected as f64 / trials as f64
}

fn criterion_2_closed_form_pd() -> bool {
    let cfg = CfarConfig::default();
    let trials = 100_000;
    let anchor = detection_probability(0.0, &cfg);
    let anchor_ok = (anchor - cfg.p_fa).abs() <= 1e-15;
    let mut worst = 0.0f64;
    let mut parts = vec![format!("Pd(0) = {anchor:.6e}")];
    for (i, db) in [0.0f64, 3.0, 10.0].into_iter().enumerate() {
        let snr = 10f64.powf(db / 10.0);
        let closed = detection_probability(snr, &cfg);
        let mc = monte_carlo_pd(snr, trials, &cfg, 200 + i as u64);
        worst = worst.max((mc - closed).abs());
        parts.push(format!("{db} dB: closed {closed:.4} mc {mc:.4}"));
    }
    let pass = anchor_ok && worst <= 0.02;
    report(2, pass, format!("{}; max |diff| {worst:.4} (tol 0.02, {trials} trials each)", parts.join(", ")));
    pass
}

/// Negative log-likelihood of noise-free hybrid range/angle observations
/// taken at `truth`, evaluated at `p`.
fn nll(p: Vec2, truth: Vec2, antennas: &[(Vec2, FimWeights)]) -> f64 {
    let mut s = 0.0;
    for (a, w) in antennas {
        let r_obs = truth.distance(*a);
        let t_obs = (a.y - truth.y).atan2(a.x - truth.x);
        let dr = r_obs - p.distance(*a);
        let mut dt = t_obs - (a.y - p.y).atan2(a.x - p.x);
        dt = (dt + std::f64::consts::PI).rem_euclid(2.0 * std::f64::consts::PI) - std::f64::consts::PI;
        s += 0.5 * (w.lambda_toa * dr * dr + w.lambda_aoa * dt * dt);
    }
    s
}

fn fd_hessian(truth: Vec2, antennas: &[(Vec2, FimWeights)], h: f64) -> Matrix2<f64> {
    let f = |dx: f64, dy: f64| nll(truth + Vec2::new(dx, dy), truth, antennas);
    let f0 = f(0.0, 0.0);
    let hxx = (f(h, 0.0) - 2.0 * f0 + f(-h, 0.0)) / (h * h);
    let hyy = (f(0.0, h) - 2.0 * f0 + f(0.0, -h)) / (h * h);
    let hxy = (f(h, h) - f(h, -h) - f(-h, h) + f(-h, -h)) / (4.0 * h * h);
    Matrix2::new(hxx, hxy, hxy, hyy)
}

fn criterion_3_efim_matches_likelihood_hessian() -> bool {
    let start = Instant::now();
    let wf = WaveformConfig::default();
    let cfg = PipelineConfig::default();
    let all = harness::perimeter_stations(&cfg.scenario, &wf);
    let mut rng = seeded(33);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let count = rng.random_range(1..=all.len());
        let stations: Vec<BsPose> = all.iter().filter(|_| rng.random::<f64>() < 0.6).take(count).cloned().collect();
        let stations = if stations.is_empty() { vec![all[0].clone()] } else { stations };
        let p = Vec2::new(rng.random_range(5.0..85.0), rng.random_range(5.0..85.0));
        let weights: Vec<FimWeights> = stations
            .iter()
            .map(|s| FimWeights::from_snr(10f64.powf(rng.random_range(0.0..4.0)), s, &wf))
            .collect();
        let analytic = efim(&stations, p, &weights).unwrap().matrix;
        let antennas: Vec<(Vec2, FimWeights)> = stations
            .iter()
            .zip(&weights)
            .flat_map(|(s, w)| (0..s.antenna_count).map(move |k| (s.antenna_position(k), *w)))
            .collect();
        let numeric = fd_hessian(p, &antennas, 1e-3);
        worst = worst.max((numeric - analytic).norm() / analytic.norm());
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = worst <= 1e-6 && secs < 10.0;
    report(3, pass, format!("max relative Frobenius error {worst:.3e} over 100 scenes in {secs:.2} s (tol 1e-6, < 10 s)"));
    pass
}

fn criterion_4_multi_station_gain() -> bool {
    let start = Instant::now();
    let cfg = PipelineConfig::default();
    let cc = CampaignConfig { runs: 200, master_seed: 1, bs_counts: vec![1, 8], record_timing: false };
    let out = run_campaign(&cc, &cfg, classifier()).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let summary = aggregate(&out.results);
    let one = summary.iter().find(|s| s.bs_count == 1).unwrap();
    let eight = summary.iter().find(|s| s.bs_count == 8).unwrap();
    let ratio = eight.mean_error_m / one.mean_error_m;
    let band = 1.5 * eight.mean_sqrt_crlb_m + cfg.fusion.cell_size;
    let pass = out.failures.is_empty() && ratio <= 0.6 && eight.mean_error_m <= band && secs < 600.0;
    report(
        4,
        pass,
        format!(
            "mean error n1 {:.4} m (miss {:.3}), n8 {:.4} m (miss {:.3}), ratio {ratio:.3} (<= 0.6); sqrt CRLB n8 {:.4} m, band {band:.4} m; {secs:.0} s (< 600)",
            one.mean_error_m, one.miss_rate, eight.mean_error_m, eight.miss_rate, eight.mean_sqrt_crlb_m
        ),
    );
    pass
}

fn criterion_5_ghost_suppression() -> bool {
    let mut cfg = PipelineConfig::default();
    cfg.scenario.include_unintentional = false;
    cfg.scenario.reflector_count = Some(1);
    let counts: Vec<usize> = (3..=8).collect();
    let cc = CampaignConfig { runs: 200, master_seed: 500, bs_counts: counts, record_timing: false };
    let out = run_campaign(&cc, &cfg, classifier()).unwrap();
    let summary = aggregate(&out.results);
    let worst = summary.iter().map(|s| s.ghost_free_rate).fold(1.0, f64::min);
    let rates: Vec<String> = summary.iter().map(|s| format!("n{} {:.3}", s.bs_count, s.ghost_free_rate)).collect();
    let pass = out.failures.is_empty() && worst >= 0.9;
    report(5, pass, format!("ghost-free rate over 200 runs: {} (min {worst:.3}, need >= 0.9)", rates.join(", ")));
    pass
}

fn criterion_6_recognition() -> bool {
    let cfg = PipelineConfig::default();
    let clf = classifier();
    let len = cfg.waveform.interval_samples();
    let mut correct = 0;
    let (mut rotor_hi, mut static_lo) = (0, 0);
    let per_class = 100;
    for i in 0..per_class {
        let rotor = synthesize_echo(EchoClass::Rotor, len, &cfg.waveform, &cfg.corpus, derive_seed(9_001, i));
        let still = synthesize_echo(EchoClass::Static, len, &cfg.waveform, &cfg.corpus, derive_seed(9_002, i));
        let pr_rotor = clf.recognition_probability(&rotor).unwrap();
        let pr_static = clf.recognition_probability(&still).unwrap();
        correct += usize::from(pr_rotor > 0.5) + usize::from(pr_static <= 0.5);
        rotor_hi += usize::from(pr_rotor >= 0.8);
        static_lo += usize::from(pr_static <= 0.27);
    }
    let n = per_class as f64;
    let acc = correct as f64 / (2.0 * n);
    let (fr, fs) = (rotor_hi as f64 / n, static_lo as f64 / n);
    let pass = acc >= 0.9 && fr >= 0.9 && fs >= 0.9;
    report(
        6,
        pass,
        format!("accuracy {acc:.3} (>= 0.9); Pr >= 0.8 for {fr:.3} of rotor echoes, Pr <= 0.27 for {fs:.3} of static echoes (each >= 0.9)"),
    );
    pass
}

fn total_error(errors: &[harness::UavError], gate: f64) -> f64 {
    errors.iter().map(|e| e.error_m.unwrap_or(gate)).sum()
}

fn mask_stations(mask: u32, n: usize) -> Vec<usize> {
    (0..n).filter(|k| mask >> k & 1 == 1).collect()
}

/// Trains on a frozen environment for the given scene and compares the
/// selected subset with all stations over fresh evaluation runs.
fn selection_gain(targets: usize, objective: Objective, eval_runs: usize) -> (u32, f64, f64) {
    let scene_seed = 1;
    let mut cfg = PipelineConfig::default();
    cfg.scenario.target_count = targets;
    let clf = classifier();
    let scene = default_scene(scene_seed, &cfg.scenario, &cfg.waveform);
    let n = scene.stations.len();
    let train_obs: Vec<_> = (0..10)
        .map(|i| observe_run(scene.clone(), &cfg, clf, derive_seed(scene_seed, 10_000 + i)).unwrap())
        .collect();
    let env = SelectionEnv::from_observations(&train_obs, &cfg).unwrap();
    let rc = RewardConfig { objective, ..Default::default() };
    let policy = select::train(&env, &rc, StateEncoding::Mask { station_count: n }, QParams::default(), 2000, 3).unwrap();
    let chosen = select::select_greedy(&policy, &env).unwrap();
    let (sub, all) = (mask_stations(chosen, n), (0..n).collect::<Vec<_>>());
    let (mut e_sel, mut e_all) = (0.0, 0.0);
    for i in 0..eval_runs {
        let obs = observe_run(scene.clone(), &cfg, clf, derive_seed(scene_seed, 20_000 + i as u64)).unwrap();
        e_sel += total_error(&evaluate_subset(&obs, &sub, &cfg).unwrap().0, cfg.match_gate);
        e_all += total_error(&evaluate_subset(&obs, &all, &cfg).unwrap().0, cfg.match_gate);
    }
    (chosen, e_sel / eval_runs as f64, e_all / eval_runs as f64)
}

fn criterion_7_selection() -> bool {
    let (m1, s1, a1) = selection_gain(1, Objective::P1, 200);
    let (m2, s2, a2) = selection_gain(2, Objective::P2, 200);

    let mut cfg = PipelineConfig::default();
    cfg.scenario.target_count = 2;
    let clf = classifier();
    let mut p3_ok = true;
    let mut rs_list = Vec::new();
    for seed in 1..=10u64 {
        let scene = default_scene(seed, &cfg.scenario, &cfg.waveform);
        let n = scene.stations.len();
        let obs: Vec<_> = (0..3)
            .map(|i| observe_run(scene.clone(), &cfg, clf, derive_seed(seed, 30_000 + i)).unwrap())
            .collect();
        let env = SelectionEnv::from_observations(&obs, &cfg).unwrap();
        let worst = |m: u32| env.mse(m).iter().copied().fold(0.0, f64::max);
        let cap = 1.2 * worst(env.all_on());
        let rc = RewardConfig { objective: Objective::P3, mse_cap: Some(cap), ..Default::default() };
        let samples: Vec<f64> = env.masks().map(|m| env.rmse(m)).collect();
        let model = fcm_states(&samples, 4, 2.0).unwrap();
        let encoding = StateEncoding::ErrorState { station_count: n, model };
        let policy = select::train(&env, &rc, encoding, QParams::default(), 2000, derive_seed(seed, 3)).unwrap();
        let chosen = select::select_p3(&policy, &env, &rc).unwrap();
        let oracle_feasible = env.masks().filter(|&m| worst(m) < cap).map(|m| m.count_ones()).min().unwrap();
        let rs = chosen.count_ones();
        p3_ok &= rs < 8 && worst(chosen) < cap;
        rs_list.push(format!("{rs}/{oracle_feasible}"));
    }

    let pass = s1 <= a1 && s2 <= a2 && p3_ok;
    report(
        7,
        pass,
        format!(
            "P1 subset {m1:08b} total error {s1:.4} vs all {a1:.4}; P2 subset {m2:08b} total error {s2:.4} vs all {a2:.4}; P3 Rs/oracle-min per seed [{}], all under cap: {p3_ok}",
            rs_list.join(" ")
        ),
    );
    pass
}

fn run_cli(args: &[&str]) {
    let status = Command::new(env!("CARGO_BIN_EXE_uavsense")).args(args).status().unwrap();
    assert!(status.success(), "uavsense {args:?} exited with {status}");
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

fn criterion_8_cli_determinism() -> bool {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let config = root.join("config.json");
    std::fs::write(&config, serde_json::to_string_pretty(&uavsense::cli::RootConfig::default()).unwrap()).unwrap();
    let scene_dir = root.join("scene");
    run_cli(&["scene", "--seed", "7", "--output-dir", scene_dir.to_str().unwrap()]);
    let scene_file = scene_dir.join("scene.json");
    let commands: Vec<Vec<&str>> = vec![
        vec!["config"],
        vec!["scene", "--seed", "7"],
        vec!["simulate", "--seed", "7"],
        vec!["detect", "--seed", "7"],
        vec!["fuse", "--seed", "7", "--bs-count", "4"],
        vec!["crlb", "--scene", scene_file.to_str().unwrap(), "--grid-step", "1.0"],
        vec!["train-classifier", "--seed", "7"],
        vec!["train", "--seed", "7", "--runs", "2"],
        vec!["campaign", "--seed", "7", "--runs", "2"],
    ];
    let mut mismatched = Vec::new();
    for cmd in &commands {
        let mut outputs = Vec::new();
        for rep in 0..2 {
            let out = root.join(format!("{}-{rep}", cmd[0]));
            let mut args = cmd.clone();
            args.extend(["--config", config.to_str().unwrap(), "--output-dir", out.to_str().unwrap()]);
            run_cli(&args);
            outputs.push(dir_bytes(&out));
        }
        if outputs[0] != outputs[1] || outputs[0].is_empty() {
            mismatched.push(cmd[0]);
        }
    }
    let pass = mismatched.is_empty();
    report(8, pass, format!("{} commands run twice, byte-identical outputs; mismatched: {mismatched:?}", commands.len()));
    pass
}

fn criterion_9_structural_invariants() -> bool {
    let cfg = PipelineConfig::default();
    let segment_len = cfg.waveform.interval_samples() / cfg.segment_count;
    let corpus_seed = 4_242;
    let mut worst_emd = 0.0f64;
    let mut checked = 0;
    for i in 0..400u64 {
        let class = [EchoClass::Rotor, EchoClass::Static, EchoClass::Noise, EchoClass::LargeRotor][i as usize % 4];
        let echo = synthesize_echo(class, segment_len, &cfg.waveform, &cfg.corpus, derive_seed(corpus_seed, i));
        let mag: Vec<f64> = echo.iter().map(|z| z.norm()).collect();
        let mean = mag.iter().sum::<f64>() / mag.len() as f64;
        let x: Vec<f64> = mag.iter().map(|v| v - mean).collect();
        let imfs = emd(&x, FEATURE_IMFS).unwrap();
        let rec = imfs.reconstruct();
        let num: f64 = x.iter().zip(&rec).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let den: f64 = x.iter().map(|a| a * a).sum::<f64>().sqrt();
        worst_emd = worst_emd.max(num / den.max(f64::MIN_POSITIVE));
        checked += 1;
    }
    // Also the training corpus segments themselves must be valid inputs.
    assert!(!feature_corpus(20, segment_len, &cfg.waveform, &cfg.corpus, corpus_seed).unwrap().is_empty());

    let scene = default_scene(5, &cfg.scenario, &cfg.waveform);
    let obs = observe_run(scene.clone(), &cfg, classifier(), 5).unwrap();
    let spec = GridSpec::covering(&scene.area, cfg.fusion.cell_size).unwrap();
    let fuse = |order: &[usize]| {
        let mut map = GridMap::new(spec);
        for &i in order {
            fuse_station(&mut map, &obs.detections[i], &scene.stations[i], &cfg.waveform, &cfg.fusion);
        }
        map.log_odds
    };
    let base_order: Vec<usize> = (0..scene.stations.len()).collect();
    let base = fuse(&base_order);
    let mut rng = seeded(99);
    let mut worst_fusion = 0.0f64;
    for _ in 0..20 {
        let mut order = base_order.clone();
        for i in (1..order.len()).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        let other = fuse(&order);
        worst_fusion = base.iter().zip(&other).map(|(a, b)| (a - b).abs()).fold(worst_fusion, f64::max);
    }
    let pass = worst_emd <= 1e-10 && worst_fusion <= 1e-12;
    report(
        9,
        pass,
        format!("EMD max relative reconstruction error {worst_emd:.3e} over {checked} segments (tol 1e-10); fusion max |log-odds diff| {worst_fusion:.3e} over 20 permutations (tol 1e-12)"),
    );
    pass
}

fn main() {
    type Check = (&'static str, fn() -> bool);
    let checks: [Check; 9] = [
        ("criterion_1_cfar_false_alarm_rate", criterion_1_cfar_false_alarm_rate),
        ("criterion_2_closed_form_pd", criterion_2_closed_form_pd),
        ("criterion_3_efim_matches_likelihood_hessian", criterion_3_efim_matches_likelihood_hessian),
        ("criterion_4_multi_station_gain", criterion_4_multi_station_gain),
        ("criterion_5_ghost_suppression", criterion_5_ghost_suppression),
        ("criterion_6_recognition", criterion_6_recognition),
        ("criterion_7_selection", criterion_7_selection),
        ("criterion_8_cli_determinism", criterion_8_cli_determinism),
        ("criterion_9_structural_invariants", criterion_9_structural_invariants),
    ];
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, check)) in checks.iter().enumerate() {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let ok = std::panic::catch_unwind(check).unwrap_or_else(|_| {
            report(i as u32 + 1, false, format!("{name} panicked"));
            false
        });
        failed += usize::from(!ok);
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
