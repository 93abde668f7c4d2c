//! Scenario construction, the end-to-end per-run pipeline, Monte Carlo
//! campaigns and metric aggregation.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use num_complex::Complex64;
use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::crlb;
use crate::error::{Error, Result};
use crate::estimation::{detect_station, CfarConfig, Detection};
use crate::fusion::{self, DbscanConfig, FusionConfig, GridMap, GridSpec, LocalizedTarget, ProbabilityField};
use crate::geometry::{Rect, Vec2};
use crate::io::{self, fmt9};
use crate::mds::corpus::{train_default_classifier, CorpusConfig};
use crate::mds::Classifier;
use crate::rng::{self, complex_gaussian, derive_seed};
use crate::scene::{enumerate_paths, sample_reflectors, BsPose, PathKind, PropagationPath, Reflector, RotorConfig, Scene, UavState};
use crate::waveform::{rotor_envelope, EchoCube, synthesize_if_cube_modulated, synthesize_rotor_echo, WaveformConfig};
use crate::SPEED_OF_LIGHT;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub area_size: f64,
    pub station_spacing: f64,
    pub antenna_count: usize,
    pub tx_power: f64,
    pub tx_gain: f64,
    pub rx_gain: f64,
    pub noise_power: f64,
    pub snr_floor_db: f64,
    /// Expected reflector count (Poisson); ignored when `reflector_count` is set.
    pub reflector_intensity: f64,
    pub reflector_count: Option<usize>,
    pub reflector_rcs: f64,
    /// UAVs are placed uniformly at least this far inside the area edges.
    pub uav_margin: f64,
    pub uav_max_speed: f64,
    /// Target quadcopters per scene.
    pub target_count: usize,
    pub target_rcs: f64,
    pub target_rotor: RotorConfig,
    pub include_unintentional: bool,
    pub unintentional_rcs: f64,
    pub unintentional_rotor: RotorConfig,
    /// Rotor return amplitude relative to the body return.
    pub rotor_return_ratio: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            area_size: 90.0,
            station_spacing: 30.0,
            antenna_count: 8,
            tx_power: 1.0,
            tx_gain: 10.0,
            rx_gain: 10.0,
            noise_power: 5e-15,
            snr_floor_db: -10.0,
            reflector_intensity: 3.0,
            reflector_count: None,
            reflector_rcs: 100.0,
            uav_margin: 10.0,
            uav_max_speed: 2.0,
            target_count: 1,
            target_rcs: 0.1,
            target_rotor: RotorConfig {
                rotor_count: 4,
                blade_count: 2,
                blade_length: 0.1,
                rotation_rate: 2.0 * std::f64::consts::PI * 150.0,
                azimuth: 0.0,
                elevation: 0.2,
            },
            include_unintentional: true,
            unintentional_rcs: 1.0,
            unintentional_rotor: RotorConfig {
                rotor_count: 1,
                blade_count: 2,
                blade_length: 1.5,
                rotation_rate: 2.0 * std::f64::consts::PI * 6.0,
                azimuth: 0.0,
                elevation: 0.2,
            },
            rotor_return_ratio: 0.1,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.area_size > 0.0 && self.station_spacing > 0.0) {
            return Err(Error::config("scenario: area_size and station_spacing must be positive"));
        }
        if !(self.noise_power > 0.0) || self.antenna_count < 1 {
            return Err(Error::config("scenario: noise_power must be positive and antenna_count >= 1"));
        }
        if self.target_count == 0 {
            return Err(Error::config("scenario: target_count must be >= 1"));
        }
        if !(2.0 * self.uav_margin < self.area_size) {
            return Err(Error::config("scenario: uav_margin leaves no room for UAVs"));
        }
        if !(self.target_rcs > 0.0 && self.unintentional_rcs > 0.0 && self.reflector_rcs > 0.0) {
            return Err(Error::config("scenario: every rcs must be positive"));
        }
        if !(self.rotor_return_ratio >= 0.0) || !(self.reflector_intensity >= 0.0) {
            return Err(Error::config("scenario: rotor_return_ratio and reflector_intensity must be >= 0"));
        }
        self.target_rotor.validate()?;
        self.unintentional_rotor.validate()
    }
}

/// Stations on the square's perimeter at `spacing`, corners excluded, each
/// facing the interior.
pub fn perimeter_stations(cfg: &ScenarioConfig, wf: &WaveformConfig) -> Vec<BsPose> {
    use std::f64::consts::{FRAC_PI_2, PI};
    let s = cfg.area_size;
    let per_side = ((s / cfg.station_spacing).round() as usize).saturating_sub(1).max(1);
    let offsets: Vec<f64> = (1..=per_side).map(|i| i as f64 * cfg.station_spacing).collect();
    let mut poses: Vec<(Vec2, f64)> = Vec::new();
    poses.extend(offsets.iter().map(|&o| (Vec2::new(o, 0.0), FRAC_PI_2)));
    poses.extend(offsets.iter().map(|&o| (Vec2::new(s, o), PI)));
    poses.extend(offsets.iter().rev().map(|&o| (Vec2::new(o, s), -FRAC_PI_2)));
    poses.extend(offsets.iter().rev().map(|&o| (Vec2::new(0.0, o), 0.0)));
    let k = cfg.antenna_count;
    poses
        .into_iter()
        .enumerate()
        .map(|(i, (position, rotation))| BsPose {
            id: i as u32,
            position,
            rotation,
            antenna_count: k,
            element_spacing: wf.wavelength() / 2.0,
            tx_power: cfg.tx_power,
            tx_gain: cfg.tx_gain,
            rx_gain: cfg.rx_gain,
            // Uniform-array half-power width, 0.886 * lambda / (K d).
            beamwidth_3db: (0.886 * 2.0 / k as f64).min(3.0),
        })
        .collect()
}

fn random_uav(rng: &mut rng::SimRng, cfg: &ScenarioConfig, id: u32, rcs: f64, rotor: RotorConfig, is_target: bool) -> UavState {
    let span = cfg.area_size - 2.0 * cfg.uav_margin;
    let position = Vec2::new(cfg.uav_margin + rng.random::<f64>() * span, cfg.uav_margin + rng.random::<f64>() * span);
    let heading = rng.random::<f64>() * 2.0 * std::f64::consts::PI;
    let speed = rng.random::<f64>() * cfg.uav_max_speed;
    let mut rotor = rotor;
    rotor.azimuth = rng.random::<f64>() * 2.0 * std::f64::consts::PI;
    UavState { id, position, velocity: Vec2::from_bearing(heading) * speed, rcs, rotor, is_target }
}

/// Minimum spacing between UAVs in generated scenes (m).
pub const MIN_UAV_SEPARATION: f64 = 10.0;

/// The evaluation scene: perimeter stations, a target quadcopter, optionally
/// a large slow-rotor aircraft, and Poisson reflectors.
pub fn default_scene(seed: u64, cfg: &ScenarioConfig, wf: &WaveformConfig) -> Scene {
    let area = Rect::new(Vec2::default(), cfg.area_size, cfg.area_size);
    let mut rng = rng::seeded(derive_seed(seed, 1));
    let mut uavs = vec![random_uav(&mut rng, cfg, 0, cfg.target_rcs, cfg.target_rotor, true)];
    let mut place = |uavs: &mut Vec<UavState>, rcs: f64, rotor: RotorConfig, is_target: bool| {
        let id = uavs.len() as u32;
        loop {
            let u = random_uav(&mut rng, cfg, id, rcs, rotor, is_target);
            if uavs.iter().all(|v| u.position.distance(v.position) >= MIN_UAV_SEPARATION) {
                uavs.push(u);
                break;
            }
        }
    };
    for _ in 1..cfg.target_count {
        place(&mut uavs, cfg.target_rcs, cfg.target_rotor, true);
    }
    if cfg.include_unintentional {
        place(&mut uavs, cfg.unintentional_rcs, cfg.unintentional_rotor, false);
    }
    let reflectors = match cfg.reflector_count {
        Some(n) => {
            let mut r = rng::seeded(derive_seed(seed, 2));
            (0..n as u32)
                .map(|id| Reflector {
                    id,
                    position: Vec2::new(r.random::<f64>() * cfg.area_size, r.random::<f64>() * cfg.area_size),
                    rcs: cfg.reflector_rcs,
                })
                .collect()
        }
        None => sample_reflectors(cfg.reflector_intensity, area, cfg.reflector_rcs, derive_seed(seed, 2)),
    };
    Scene { area, stations: perimeter_stations(cfg, wf), uavs, reflectors }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub waveform: WaveformConfig,
    pub cfar: CfarConfig,
    pub fusion: FusionConfig,
    pub dbscan: DbscanConfig,
    pub scenario: ScenarioConfig,
    pub corpus: CorpusConfig,
    pub segment_count: usize,
    /// Positive and negative training segments each.
    pub training_samples: usize,
    /// Truth-to-cluster association radius (m).
    pub match_gate: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            waveform: WaveformConfig::default(),
            cfar: CfarConfig::default(),
            fusion: FusionConfig::default(),
            dbscan: DbscanConfig::default(),
            scenario: ScenarioConfig::default(),
            corpus: CorpusConfig::default(),
            segment_count: crate::mds::DEFAULT_SEGMENTS,
            training_samples: 200,
            match_gate: 5.0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.waveform.validate()?;
        self.cfar.validate()?;
        self.fusion.validate()?;
        self.dbscan.validate()?;
        self.scenario.validate()?;
        if self.segment_count == 0 || self.training_samples == 0 {
            return Err(Error::config("segment_count and training_samples must be >= 1"));
        }
        if !(self.match_gate > 0.0) {
            return Err(Error::config("match_gate must be positive"));
        }
        if (self.fusion.p_fa - self.cfar.p_fa).abs() > 0.0 {
            return Err(Error::config("fusion.p_fa must equal cfar.p_fa"));
        }
        Ok(())
    }

    pub fn train_classifier(&self, seed: u64) -> Result<Classifier> {
        Ok(train_default_classifier(self.training_samples, self.segment_count, &self.waveform, &self.corpus, seed)?.0)
    }
}

/// Paths into one station that survive the receiver's anti-alias filter.
pub fn station_paths(scene: &Scene, bs: &BsPose, cfg: &PipelineConfig) -> Result<Vec<PropagationPath>> {
    let wf = &cfg.waveform;
    let max_range = wf.max_range_m() - 0.5 * wf.range_bin_m();
    let paths = enumerate_paths(scene, bs, wf.wavelength(), cfg.scenario.noise_power, cfg.scenario.snr_floor_db)?;
    Ok(paths.into_iter().filter(|p| p.apparent_range < max_range).collect())
}

/// Rotor envelope of each UAV as seen by `bs`, keyed by UAV id.
fn rotor_envelopes(scene: &Scene, bs: &BsPose, cfg: &PipelineConfig) -> BTreeMap<u32, Vec<Complex64>> {
    let wf = &cfg.waveform;
    scene
        .uavs
        .iter()
        .filter(|u| u.rotor.rotor_count > 0 && cfg.scenario.rotor_return_ratio > 0.0)
        .map(|u| {
            let mut rotor = u.rotor;
            rotor.azimuth -= bs.position.bearing_to(u.position);
            let range = bs.position.distance(u.position);
            let echo = synthesize_rotor_echo(&rotor, range, wf, wf.wavelength());
            (u.id, rotor_envelope(&echo, cfg.scenario.rotor_return_ratio))
        })
        .collect()
}

/// Slow signal of the scatterers in the detection's cell: every path whose
/// body return falls within one bin in range and velocity, with its full
/// rotor envelope and Doppler, plus noise reduced by the fast-time
/// integration gain.
fn gated_echo(
    det: &Detection,
    paths: &[PropagationPath],
    envelopes: &BTreeMap<u32, Vec<Complex64>>,
    cfg: &PipelineConfig,
    seed: u64,
) -> Vec<Complex64> {
    let wf = &cfg.waveform;
    let n = wf.interval_samples();
    let fs = wf.sample_rate();
    let m_n = wf.pulse_count as f64;
    let mut echo = vec![Complex64::new(0.0, 0.0); n];
    for p in paths {
        let l = p.apparent_range / wf.range_bin_m();
        let m = (p.apparent_velocity / wf.velocity_bin_mps()).rem_euclid(m_n);
        let dm = (m - det.velocity_bin as f64).rem_euclid(m_n);
        if (l - det.range_bin as f64).abs() > 1.5 || (dm > 1.5 && dm < m_n - 1.5) {
            continue;
        }
        let tau = 2.0 * p.apparent_range / SPEED_OF_LIGHT;
        let start = Complex64::from_polar(p.power_w.sqrt(), 2.0 * std::f64::consts::PI * (wf.carrier_hz * tau).fract());
        let doppler = 2.0 * std::f64::consts::PI * 2.0 * p.apparent_velocity / wf.wavelength() / fs;
        let env = envelopes.get(&p.uav_id);
        for (t, z) in echo.iter_mut().enumerate() {
            let mut v = start * Complex64::from_polar(1.0, doppler * t as f64);
            if let Some(e) = env {
                v *= e[t];
            }
            *z += v;
        }
    }
    let noise = cfg.scenario.noise_power / wf.samples_per_pulse as f64;
    let mut rng = rng::seeded(seed);
    for z in echo.iter_mut() {
        *z += complex_gaussian(&mut rng, noise);
    }
    echo
}

fn cube_from_paths(
    paths: &[PropagationPath],
    envelopes: &BTreeMap<u32, Vec<Complex64>>,
    bs: &BsPose,
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<EchoCube> {
    let refs: Vec<Option<&[Complex64]>> = paths.iter().map(|p| envelopes.get(&p.uav_id).map(|v| v.as_slice())).collect();
    synthesize_if_cube_modulated(paths, &refs, &cfg.waveform, bs, cfg.scenario.noise_power, derive_seed(seed, 10))
}

/// The IF cube that `observe_station` processes for the same seed.
pub fn station_cube(scene: &Scene, bs: &BsPose, cfg: &PipelineConfig, seed: u64) -> Result<EchoCube> {
    let paths = station_paths(scene, bs, cfg)?;
    cube_from_paths(&paths, &rotor_envelopes(scene, bs, cfg), bs, cfg, seed)
}

/// Synthesizes, detects and recognizes for one station.
pub fn observe_station(
    scene: &Scene,
    bs: &BsPose,
    cfg: &PipelineConfig,
    classifier: &Classifier,
    seed: u64,
) -> Result<Vec<Detection>> {
    let paths = station_paths(scene, bs, cfg)?;
    let envelopes = rotor_envelopes(scene, bs, cfg);
    let cube = cube_from_paths(&paths, &envelopes, bs, cfg, seed)?;
    let mut dets = detect_station(&cube, &cfg.cfar, bs, &cfg.waveform)?;
    for (i, d) in dets.iter_mut().enumerate() {
        let echo = gated_echo(d, &paths, &envelopes, cfg, derive_seed(seed, 1000 + i as u64));
        d.pr = classifier.recognition_probability(&echo)?;
    }
    Ok(dets)
}

/// Positions where ghost paths into the given stations would calibrate.
pub fn ghost_positions(scene: &Scene, stations: &[&BsPose], cfg: &PipelineConfig) -> Result<Vec<Vec2>> {
    let mut out = Vec::new();
    for bs in stations {
        for p in station_paths(scene, bs, cfg)? {
            if p.kind != PathKind::Direct {
                out.push(p.apparent_position(bs));
            }
        }
    }
    Ok(out)
}

/// Fuses the given stations' detections and extracts cluster estimates.
/// An empty evidence field yields no targets.
pub fn fuse_and_localize(
    scene: &Scene,
    observations: &[(&BsPose, &[Detection])],
    cfg: &PipelineConfig,
) -> Result<Vec<LocalizedTarget>> {
    match fused_field(scene, observations, cfg, cfg.fusion.threshold_fraction)? {
        Some(field) => fusion::localize(&field, &cfg.dbscan),
        None => Ok(Vec::new()),
    }
}

/// Normalized field after fusing `observations`, thresholded at
/// `threshold_fraction` of the peak; `None` when no cell has evidence.
pub fn fused_field(
    scene: &Scene,
    observations: &[(&BsPose, &[Detection])],
    cfg: &PipelineConfig,
    threshold_fraction: f64,
) -> Result<Option<ProbabilityField>> {
    let spec = GridSpec::covering(&scene.area, cfg.fusion.cell_size)?;
    let mut map = GridMap::new(spec);
    for (bs, dets) in observations {
        fusion::fuse_station(&mut map, dets, bs, &cfg.waveform, &cfg.fusion);
    }
    match fusion::normalize_and_threshold(&map, threshold_fraction, cfg.fusion.normalization) {
        Ok(field) => Ok(Some(field)),
        Err(Error::EmptyField) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Greedy nearest-first association of truths to clusters within `gate`.
/// Returns, per truth, the matched cluster index and distance.
pub fn match_truths(truths: &[Vec2], clusters: &[LocalizedTarget], gate: f64) -> Vec<Option<(usize, f64)>> {
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (t, p) in truths.iter().enumerate() {
        for (c, cl) in clusters.iter().enumerate() {
            let d = p.distance(cl.position);
            if d <= gate {
                pairs.push((d, t, c));
            }
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut out = vec![None; truths.len()];
    let mut used = vec![false; clusters.len()];
    for (d, t, c) in pairs {
        if out[t].is_none() && !used[c] {
            out[t] = Some((c, d));
            used[c] = true;
        }
    }
    out
}

/// Clusters not associated with any UAV that sit closer to a ghost position
/// than to every UAV, and within `gate` of that ghost position.
pub fn count_ghost_clusters(uavs: &[Vec2], ghosts: &[Vec2], clusters: &[LocalizedTarget], gate: f64) -> usize {
    let mut matched = vec![false; clusters.len()];
    for (c, _) in match_truths(uavs, clusters, gate).into_iter().flatten() {
        matched[c] = true;
    }
    clusters
        .iter()
        .zip(&matched)
        .filter(|(c, &m)| {
            let to_truth = uavs.iter().map(|u| u.distance(c.position)).fold(f64::INFINITY, f64::min);
            let to_ghost = ghosts.iter().map(|g| g.distance(c.position)).fold(f64::INFINITY, f64::min);
            !m && to_ghost < to_truth && to_ghost <= gate
        })
        .count()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UavError {
    pub uav_id: u32,
    /// Distance to the matched cluster; `None` when unmatched.
    pub error_m: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub run_id: usize,
    pub bs_count: usize,
    pub per_uav_error_m: Vec<UavError>,
    pub ghost_cluster_count: usize,
    pub crlb_m2: Option<f64>,
    pub wall_time_s: f64,
}

/// Bound for one UAV from the given stations, using each station's direct
/// path SNR as the per-antenna SNR.
pub fn uav_crlb(scene: &Scene, uav: &UavState, stations: &[&BsPose], cfg: &PipelineConfig) -> Option<f64> {
    let wf = &cfg.waveform;
    let sc = &cfg.scenario;
    let owned: Vec<BsPose> = stations.iter().map(|b| (*b).clone()).collect();
    let snr = |bs: &BsPose| {
        let r = bs.position.distance(uav.position);
        let four_pi = 4.0 * std::f64::consts::PI;
        bs.tx_power * bs.tx_gain * bs.rx_gain * wf.wavelength().powi(2) * uav.rcs / (four_pi.powi(3) * r.powi(4)) / sc.noise_power
    };
    let _ = scene;
    crlb::crlb_at(&owned, uav.position, snr, wf).ok()
}

/// All station observations of one run, computed once and reused for any
/// station subset.
#[derive(Clone, Debug)]
pub struct RunObservations {
    pub scene: Scene,
    pub detections: Vec<Vec<Detection>>,
}

pub fn observe_run(scene: Scene, cfg: &PipelineConfig, classifier: &Classifier, seed: u64) -> Result<RunObservations> {
    let detections = scene
        .stations
        .iter()
        .enumerate()
        .map(|(i, bs)| observe_station(&scene, bs, cfg, classifier, derive_seed(seed, 100 + i as u64)))
        .collect::<Result<Vec<_>>>()?;
    Ok(RunObservations { scene, detections })
}

/// Localizes with the stations whose indices are in `subset` and scores the
/// result against truth.
pub fn evaluate_subset(obs: &RunObservations, subset: &[usize], cfg: &PipelineConfig) -> Result<(Vec<UavError>, usize, Vec<LocalizedTarget>)> {
    let scene = &obs.scene;
    let pairs: Vec<(&BsPose, &[Detection])> = subset.iter().map(|&i| (&scene.stations[i], obs.detections[i].as_slice())).collect();
    let clusters = fuse_and_localize(scene, &pairs, cfg)?;
    let targets: Vec<&UavState> = scene.uavs.iter().filter(|u| u.is_target).collect();
    let truths: Vec<Vec2> = targets.iter().map(|u| u.position).collect();
    let matched = match_truths(&truths, &clusters, cfg.match_gate);
    let errors = targets
        .iter()
        .zip(&matched)
        .map(|(u, m)| UavError { uav_id: u.id, error_m: m.map(|(_, d)| d) })
        .collect();
    let stations: Vec<&BsPose> = subset.iter().map(|&i| &scene.stations[i]).collect();
    let ghosts = ghost_positions(scene, &stations, cfg)?;
    let all_uavs: Vec<Vec2> = scene.uavs.iter().map(|u| u.position).collect();
    let ghost_count = count_ghost_clusters(&all_uavs, &ghosts, &clusters, cfg.match_gate);
    Ok((errors, ghost_count, clusters))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CampaignConfig {
    pub runs: usize,
    pub master_seed: u64,
    pub bs_counts: Vec<usize>,
    /// Record wall-clock time per run (makes outputs non-reproducible).
    pub record_timing: bool,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        Self { runs: 200, master_seed: 1, bs_counts: (1..=8).collect(), record_timing: false }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CampaignOutput {
    pub results: Vec<RunResult>,
    pub failures: Vec<(usize, String)>,
}

/// Runs every Monte Carlo trial. Run `i` uses seed `master_seed + i`; for
/// each station count a random subset of that size is fused.
pub fn run_campaign(cc: &CampaignConfig, cfg: &PipelineConfig, classifier: &Classifier) -> Result<CampaignOutput> {
    cfg.validate()?;
    if cc.runs == 0 {
        return Err(Error::config("campaign: runs must be >= 1"));
    }
    let n_bs = perimeter_stations(&cfg.scenario, &cfg.waveform).len();
    if cc.bs_counts.is_empty() || cc.bs_counts.iter().any(|&c| c == 0 || c > n_bs) {
        return Err(Error::config(format!("campaign: bs_counts must lie in [1, {n_bs}]")));
    }
    let per_run: Vec<std::result::Result<Vec<RunResult>, String>> = (0..cc.runs)
        .into_par_iter()
        .map(|run| {
            let start = Instant::now();
            let seed = cc.master_seed.wrapping_add(run as u64);
            let scene = default_scene(seed, &cfg.scenario, &cfg.waveform);
            let obs = observe_run(scene, cfg, classifier, seed).map_err(|e| e.to_string())?;
            let mut out = Vec::new();
            for &count in &cc.bs_counts {
                let mut rng = rng::seeded(derive_seed(seed, 5000 + count as u64));
                let mut subset = sample(&mut rng, n_bs, count).into_vec();
                subset.sort_unstable();
                let (errors, ghosts, _) = evaluate_subset(&obs, &subset, cfg).map_err(|e| e.to_string())?;
                let stations: Vec<&BsPose> = subset.iter().map(|&i| &obs.scene.stations[i]).collect();
                let bound = obs
                    .scene
                    .uavs
                    .iter()
                    .find(|u| u.is_target)
                    .and_then(|u| uav_crlb(&obs.scene, u, &stations, cfg));
                out.push(RunResult {
                    run_id: run,
                    bs_count: count,
                    per_uav_error_m: errors,
                    ghost_cluster_count: ghosts,
                    crlb_m2: bound,
                    wall_time_s: 0.0,
                });
            }
            if cc.record_timing {
                let t = start.elapsed().as_secs_f64();
                out.iter_mut().for_each(|r| r.wall_time_s = t);
            }
            Ok(out)
        })
        .collect();
    let mut results = Vec::new();
    let mut failures = Vec::new();
    for (run, r) in per_run.into_iter().enumerate() {
        match r {
            Ok(v) => results.extend(v),
            Err(e) => failures.push((run, e)),
        }
    }
    Ok(CampaignOutput { results, failures })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CountSummary {
    pub bs_count: usize,
    pub runs: usize,
    pub matched: usize,
    pub mean_error_m: f64,
    pub median_error_m: f64,
    pub mse_m2: f64,
    pub rmse_m: f64,
    pub miss_rate: f64,
    pub mean_sqrt_crlb_m: f64,
    pub mean_crlb_m2: f64,
    /// Share of runs without any ghost cluster.
    pub ghost_free_rate: f64,
}

/// Per-station-count statistics over matched errors.
pub fn aggregate(results: &[RunResult]) -> Vec<CountSummary> {
    let mut by_count: BTreeMap<usize, Vec<&RunResult>> = BTreeMap::new();
    for r in results {
        by_count.entry(r.bs_count).or_default().push(r);
    }
    by_count
        .into_iter()
        .map(|(bs_count, rs)| {
            let mut errors: Vec<f64> = Vec::new();
            let mut total = 0usize;
            for r in &rs {
                for e in &r.per_uav_error_m {
                    total += 1;
                    if let Some(d) = e.error_m {
                        errors.push(d);
                    }
                }
            }
            errors.sort_by(f64::total_cmp);
            let n = errors.len().max(1) as f64;
            let mean = errors.iter().sum::<f64>() / n;
            let mse = errors.iter().map(|e| e * e).sum::<f64>() / n;
            let median = if errors.is_empty() {
                f64::NAN
            } else if errors.len() % 2 == 1 {
                errors[errors.len() / 2]
            } else {
                0.5 * (errors[errors.len() / 2 - 1] + errors[errors.len() / 2])
            };
            let bounds: Vec<f64> = rs.iter().filter_map(|r| r.crlb_m2).collect();
            let nb = bounds.len().max(1) as f64;
            CountSummary {
                bs_count,
                runs: rs.len(),
                matched: errors.len(),
                mean_error_m: if errors.is_empty() { f64::NAN } else { mean },
                median_error_m: median,
                mse_m2: if errors.is_empty() { f64::NAN } else { mse },
                rmse_m: if errors.is_empty() { f64::NAN } else { mse.sqrt() },
                miss_rate: if total == 0 { 0.0 } else { 1.0 - errors.len() as f64 / total as f64 },
                mean_sqrt_crlb_m: bounds.iter().map(|b| b.sqrt()).sum::<f64>() / nb,
                mean_crlb_m2: bounds.iter().sum::<f64>() / nb,
                ghost_free_rate: rs.iter().filter(|r| r.ghost_cluster_count == 0).count() as f64 / rs.len() as f64,
            }
        })
        .collect()
}

/// Empirical CDF points `(bs_count, error, fraction)` per station count.
pub fn error_cdf(results: &[RunResult]) -> Vec<(usize, f64, f64)> {
    let mut by_count: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for r in results {
        let v = by_count.entry(r.bs_count).or_default();
        v.extend(r.per_uav_error_m.iter().filter_map(|e| e.error_m));
    }
    let mut out = Vec::new();
    for (c, mut v) in by_count {
        v.sort_by(f64::total_cmp);
        let n = v.len() as f64;
        out.extend(v.iter().enumerate().map(|(i, &e)| (c, e, (i + 1) as f64 / n)));
    }
    out
}

pub fn write_campaign_outputs(dir: &Path, out: &CampaignOutput) -> Result<()> {
    let mut rows = Vec::new();
    for r in &out.results {
        for e in &r.per_uav_error_m {
            rows.push(vec![
                r.run_id.to_string(),
                r.bs_count.to_string(),
                e.uav_id.to_string(),
                e.error_m.map_or(String::new(), fmt9),
                u8::from(e.error_m.is_some()).to_string(),
                r.ghost_cluster_count.to_string(),
                r.crlb_m2.map_or(String::new(), fmt9),
                fmt9(r.wall_time_s),
            ]);
        }
    }
    io::write_csv(
        &dir.join("results.csv"),
        &["run_id", "bs_count", "uav_id", "error_m", "matched", "ghost_clusters", "crlb_m2", "wall_time_s"],
        &rows,
    )?;
    let summary: Vec<Vec<String>> = aggregate(&out.results)
        .iter()
        .map(|s| {
            vec![
                s.bs_count.to_string(),
                s.runs.to_string(),
                s.matched.to_string(),
                fmt9(s.mean_error_m),
                fmt9(s.median_error_m),
                fmt9(s.mse_m2),
                fmt9(s.rmse_m),
                fmt9(s.miss_rate),
                fmt9(s.mean_crlb_m2),
                fmt9(s.mean_sqrt_crlb_m),
                fmt9(s.ghost_free_rate),
            ]
        })
        .collect();
    io::write_csv(
        &dir.join("summary.csv"),
        &["bs_count", "runs", "matched", "mean_error_m", "median_error_m", "mse_m2", "rmse_m", "miss_rate", "mean_crlb_m2", "mean_sqrt_crlb_m", "ghost_free_rate"],
        &summary,
    )?;
    let cdf: Vec<Vec<String>> = error_cdf(&out.results)
        .into_iter()
        .map(|(c, e, f)| vec![c.to_string(), fmt9(e), fmt9(f)])
        .collect();
    io::write_csv(&dir.join("error_cdf.csv"), &["bs_count", "error_m", "cdf"], &cdf)?;
    let failures: Vec<Vec<String>> = out.failures.iter().map(|(r, e)| vec![r.to_string(), e.clone()]).collect();
    io::write_csv(&dir.join("failures.csv"), &["run_id", "error"], &failures)
}
