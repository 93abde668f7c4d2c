use nalgebra::DMatrix;
use num_complex::Complex64;
use proptest::prelude::*;
use uavsense::cli::RootConfig;
use uavsense::estimation::{ca_cfar, detection_probability, music_angle, CfarConfig, Detection, RangeVelocityMap};
use uavsense::fusion::{fuse_station, normalize_and_threshold, GridMap, GridSpec, Normalization};
use uavsense::geometry::Rect;
use uavsense::harness::{perimeter_stations, ScenarioConfig};
use uavsense::mds::emd;
use uavsense::select::{reward, Objective, RewardConfig};
use uavsense::waveform::WaveformConfig;
use uavsense::Vec2;

fn detection(bs_id: u32, range_m: f64, angle_rad: f64, pd: f64, pr: f64) -> Detection {
    Detection {
        bs_id,
        range_m,
        velocity_mps: 0.0,
        angle_rad,
        pd,
        pr,
        snr_est: 100.0,
        range_bin: 0,
        velocity_bin: 0,
    }
}

fn det_strategy() -> impl Strategy<Value = (f64, f64, f64, f64)> {
    (5.0..80.0f64, -1.2..1.2f64, 0.0..1.0f64, 0.0..1.0f64)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn fusion_is_order_invariant(
        dets in prop::collection::vec(prop::collection::vec(det_strategy(), 0..4), 8),
        rotate in 1usize..8,
    ) {
        let wf = WaveformConfig::default();
        let sc = ScenarioConfig::default();
        let stations = perimeter_stations(&sc, &wf);
        let cfg = uavsense::fusion::FusionConfig::default();
        let spec = GridSpec::covering(&Rect::new(Vec2::new(0.0, 0.0), 90.0, 90.0), 0.5).unwrap();
        let lists: Vec<Vec<Detection>> = dets
            .iter()
            .enumerate()
            .map(|(i, v)| v.iter().map(|&(r, a, pd, pr)| detection(i as u32, r, a, pd, pr)).collect())
            .collect();
        let fuse = |order: &[usize]| {
            let mut map = GridMap::new(spec);
            for &i in order {
                fuse_station(&mut map, &lists[i], &stations[i], &wf, &cfg);
            }
            map.log_odds
        };
        let forward: Vec<usize> = (0..8).collect();
        let mut other: Vec<usize> = forward.iter().rev().copied().collect();
        other.rotate_left(rotate);
        let a = fuse(&forward);
        let b = fuse(&other);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn emd_reconstructs_input(xs in prop::collection::vec(-10.0..10.0f64, 16..400)) {
        let imfs = emd(&xs, 6).unwrap();
        let rec = imfs.reconstruct();
        let scale = xs.iter().map(|v| v.abs()).fold(1.0, f64::max);
        for (a, b) in xs.iter().zip(&rec) {
            prop_assert!((a - b).abs() <= 1e-10 * scale);
        }
    }

    #[test]
    fn pd_is_monotone(s1 in 0.0..1e3f64, s2 in 0.0..1e3f64, p1 in 1e-6..0.5f64, p2 in 1e-6..0.5f64) {
        let (lo, hi) = if s1 <= s2 { (s1, s2) } else { (s2, s1) };
        let cfg = CfarConfig::default();
        prop_assert!(detection_probability(lo, &cfg) <= detection_probability(hi, &cfg) + 1e-15);
        let (plo, phi) = if p1 <= p2 { (p1, p2) } else { (p2, p1) };
        let a = CfarConfig { p_fa: plo, ..CfarConfig::default() };
        let b = CfarConfig { p_fa: phi, ..CfarConfig::default() };
        prop_assert!(detection_probability(s1, &a) <= detection_probability(s1, &b) + 1e-15);
    }

    #[test]
    fn cfar_is_scale_invariant(power in prop::collection::vec(0.01..10.0f64, 24 * 24), k in 1e-3..1e3f64) {
        let cfg = CfarConfig::default();
        let base = ca_cfar(&RangeVelocityMap::from_power(power.clone(), 24, 24), &cfg).unwrap();
        let scaled = ca_cfar(&RangeVelocityMap::from_power(power.iter().map(|p| p * k).collect(), 24, 24), &cfg).unwrap();
        let cells = |h: &[uavsense::estimation::CfarHit]| h.iter().map(|h| (h.l, h.m)).collect::<Vec<_>>();
        // Threshold comparisons may flip for cells sitting exactly on the boundary.
        let a = cells(&base);
        let b = cells(&scaled);
        let diff = a.iter().filter(|c| !b.contains(c)).count() + b.iter().filter(|c| !a.contains(c)).count();
        prop_assert!(diff <= 1);
    }

    #[test]
    fn music_ignores_global_phase(theta in -1.0..1.0f64, phase in 0.0..std::f64::consts::TAU, seed in 0u64..1000) {
        let wf = WaveformConfig::default();
        let bs = &perimeter_stations(&ScenarioConfig::default(), &wf)[0];
        let k = bs.antenna_count;
        let spatial = 2.0 * std::f64::consts::PI / wf.wavelength() * bs.element_spacing;
        let mut rng = uavsense::rng::seeded(seed);
        let snaps = DMatrix::from_fn(k, 32, |row, col| {
            let s = Complex64::from_polar(1.0, 0.37 * col as f64);
            s * Complex64::from_polar(1.0, spatial * theta.sin() * row as f64)
                + uavsense::rng::complex_gaussian(&mut rng, 1e-3)
        });
        let rotated = snaps.map(|z| z * Complex64::from_polar(1.0, phase));
        let a = music_angle(&snaps, bs, wf.wavelength(), 1).unwrap();
        let b = music_angle(&rotated, bs, wf.wavelength(), 1).unwrap();
        prop_assert!((a - b).abs() < 1e-9);
        prop_assert!((a - theta).abs() < 1e-2);
    }

    #[test]
    fn reward_falls_with_error_and_station_count(
        m1 in 0.0..10.0f64, m2 in 0.0..10.0f64, r1 in 1usize..9, r2 in 1usize..9,
    ) {
        for objective in [Objective::P1, Objective::P2] {
            let cfg = RewardConfig { objective, ..RewardConfig::default() };
            let (lo, hi) = if m1 <= m2 { (m1, m2) } else { (m2, m1) };
            prop_assert!(reward(&[hi], 4, &cfg) <= reward(&[lo], 4, &cfg));
            let (rlo, rhi) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
            prop_assert!(reward(&[m1], rhi, &cfg) <= reward(&[m1], rlo, &cfg));
        }
        let cfg = RewardConfig { objective: Objective::P3, mse_cap: Some(5.0), ..RewardConfig::default() };
        let (rlo, rhi) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
        prop_assert!(reward(&[m1], rhi, &cfg) <= reward(&[m1], rlo, &cfg));
        prop_assert!(reward(&[6.0], 1, &cfg) < reward(&[1.0], 8, &cfg));
    }

    #[test]
    fn normalized_field_is_a_distribution(
        vals in prop::collection::vec(-5.0..5.0f64, 100),
        frac in 0.0..1.0f64,
        exp in any::<bool>(),
    ) {
        prop_assume!(vals.iter().any(|v| *v > 0.0));
        let spec = GridSpec::covering(&Rect::new(Vec2::new(0.0, 0.0), 10.0, 10.0), 1.0).unwrap();
        let mut map = GridMap::new(spec);
        map.log_odds.copy_from_slice(&vals);
        let mode = if exp { Normalization::Exponential } else { Normalization::Linear };
        let field = normalize_and_threshold(&map, frac, mode).unwrap();
        let total: f64 = field.prob.iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        prop_assert!(field.prob.iter().all(|p| *p >= 0.0));
        for (p, l) in field.prob.iter().zip(&vals) {
            if *l <= 0.0 {
                prop_assert_eq!(*p, 0.0);
            }
        }
    }

    #[test]
    fn config_round_trip(
        runs in 1usize..1000,
        cell in 0.05..2.0f64,
        seed in any::<u64>(),
        tau_e in 0.0..100.0f64,
        targets in 1usize..4,
    ) {
        let mut cfg = RootConfig::default();
        cfg.campaign.runs = runs;
        cfg.campaign.master_seed = seed;
        cfg.grid.cell_size = cell;
        cfg.reward.tau_e = tau_e;
        cfg.scenario.target_count = targets;
        let once = RootConfig::from_json(&serde_json::to_string(&cfg).unwrap()).unwrap();
        prop_assert_eq!(&once, &cfg);
        let twice = RootConfig::from_json(&serde_json::to_string_pretty(&once).unwrap()).unwrap();
        prop_assert_eq!(once, twice);
    }
}
