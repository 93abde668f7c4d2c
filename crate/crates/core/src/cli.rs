//! Config files and batch subcommands.
//!
//! Exit status: 0 on success, 1 for bad arguments, configs or input files,
//! 2 when the pipeline itself fails.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::crlb;
use crate::error::{Error, Result};
use crate::estimation::{write_detections_csv, CfarConfig, Detection};
use crate::fusion::{self, DbscanConfig, FusionConfig};
use crate::harness::{self, CampaignConfig, PipelineConfig, ScenarioConfig};
use crate::io;
use crate::mds::corpus::{train_default_classifier, write_corpus_csv, CorpusConfig};
use crate::mds::Classifier;
use crate::rng::derive_seed;
use crate::scene::{BsPose, Scene};
use crate::select::{self, fcm_states, Objective, QParams, RewardConfig, SelectionEnv, StateEncoding};
use crate::waveform::WaveformConfig;
use crate::Vec2;

/// Seed tags for the independent streams a command derives from `--seed`.
pub const CLASSIFIER_TAG: u64 = 0xC1A5;
pub const TRAINING_TAG: u64 = 0x7EA1;
pub const ENV_TAG: u64 = 0xE4F0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelectionConfig {
    /// Monte Carlo runs averaged into the selection environment.
    pub env_runs: usize,
    pub episodes: usize,
    /// FCM error states; P3 only.
    pub error_states: usize,
    pub fuzzifier: f64,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self { env_runs: 10, episodes: 2000, error_states: 4, fuzzifier: 2.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RootConfig {
    pub waveform: WaveformConfig,
    pub cfar: CfarConfig,
    pub grid: FusionConfig,
    pub dbscan: DbscanConfig,
    pub scenario: ScenarioConfig,
    pub corpus: CorpusConfig,
    pub segment_count: usize,
    pub training_samples: usize,
    pub match_gate: f64,
    pub reward: RewardConfig,
    pub qlearning: QParams,
    pub selection: SelectionConfig,
    pub campaign: CampaignConfig,
}

impl Default for RootConfig {
    fn default() -> Self {
        Self::from_pipeline(PipelineConfig::default())
    }
}

impl RootConfig {
    pub fn from_pipeline(p: PipelineConfig) -> Self {
        Self {
            waveform: p.waveform,
            cfar: p.cfar,
            grid: p.fusion,
            dbscan: p.dbscan,
            scenario: p.scenario,
            corpus: p.corpus,
            segment_count: p.segment_count,
            training_samples: p.training_samples,
            match_gate: p.match_gate,
            reward: RewardConfig::default(),
            qlearning: QParams::default(),
            selection: SelectionConfig::default(),
            campaign: CampaignConfig::default(),
        }
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            waveform: self.waveform.clone(),
            cfar: self.cfar.clone(),
            fusion: self.grid.clone(),
            dbscan: self.dbscan.clone(),
            scenario: self.scenario.clone(),
            corpus: self.corpus.clone(),
            segment_count: self.segment_count,
            training_samples: self.training_samples,
            match_gate: self.match_gate,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.pipeline().validate()?;
        self.reward.validate()?;
        self.qlearning.validate()?;
        let s = &self.selection;
        if s.env_runs == 0 || s.error_states == 0 || !(s.fuzzifier > 1.0) {
            return Err(Error::config("selection: env_runs and error_states must be >= 1, fuzzifier > 1"));
        }
        if self.campaign.runs == 0 || self.campaign.bs_counts.is_empty() {
            return Err(Error::config("campaign: runs must be >= 1 and bs_counts non-empty"));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RootConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::input(format!("{}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| Error::input(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Parser)]
#[command(name = "uavsense", version, about = "Multi-station UAV sensing simulator and pipeline")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON config; defaults are used when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    pub output_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct SceneSource {
    /// Scene JSON; generated from `--seed` when omitted.
    #[arg(long)]
    pub scene: Option<PathBuf>,
    /// Use only the first N stations.
    #[arg(long)]
    pub bs_count: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the effective config (defaults merged with `--config`).
    Config {
        #[command(flatten)]
        common: Common,
    },
    /// Generate a random scene.
    Scene {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: u64,
    },
    /// Dump each station's IF echo cube.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        source: SceneSource,
        #[arg(long)]
        seed: u64,
    },
    /// Run detection and recognition at each station.
    Detect {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        source: SceneSource,
        #[arg(long)]
        seed: u64,
        /// Classifier JSON; trained from the seed when omitted.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Fuse detections into a probability grid and localize clusters.
    Fuse {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        source: SceneSource,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Map the position error bound over the scene area.
    Crlb {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        source: SceneSource,
        /// Needed only when no scene file is given.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 1.0)]
        grid_step: f64,
    },
    /// Train a station-selection policy.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        source: SceneSource,
        #[arg(long)]
        seed: u64,
        /// Environment runs; overrides the config.
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Train the rotor classifier.
    TrainClassifier {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: u64,
    },
    /// Monte Carlo localization campaign.
    Campaign {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        runs: Option<usize>,
        /// Evaluate a single station count.
        #[arg(long)]
        bs_count: Option<usize>,
        #[arg(long)]
        model: Option<PathBuf>,
    },
}

/// Failure split by exit status.
#[derive(Debug)]
pub enum CliError {
    Input(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Input(m) => write!(f, "input error: {m}"),
            CliError::Runtime(m) => write!(f, "runtime error: {m}"),
        }
    }
}

fn input(e: Error) -> CliError {
    CliError::Input(e.to_string())
}

fn runtime(e: Error) -> CliError {
    match e {
        Error::Config(_) | Error::Input(_) => CliError::Input(e.to_string()),
        other => CliError::Runtime(other.to_string()),
    }
}

/// Parses `args` (program name first) and runs the command.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> std::result::Result<(), CliError> {
    match cli.command {
        Command::Config { common } => {
            let (cfg, out) = prepare(&common)?;
            io::write_json(&out.join("config.json"), &cfg).map_err(runtime)
        }
        Command::Scene { common, seed } => {
            let (cfg, out) = prepare(&common)?;
            let scene = harness::default_scene(seed, &cfg.scenario, &cfg.waveform);
            io::write_json(&out.join("scene.json"), &scene).map_err(runtime)
        }
        Command::Simulate { common, source, seed } => {
            let (cfg, out) = prepare(&common)?;
            let p = cfg.pipeline();
            let scene = load_scene(&source, Some(seed), &cfg)?;
            io::write_json(&out.join("scene.json"), &scene).map_err(runtime)?;
            for (i, bs) in scene.stations.iter().enumerate() {
                let cube = harness::station_cube(&scene, bs, &p, station_seed(seed, i)).map_err(runtime)?;
                let stem = format!("cube_bs{}", bs.id);
                fs::write(out.join(format!("{stem}.bin")), cube.to_le_bytes()).map_err(|e| runtime(e.into()))?;
                let sidecar = serde_json::json!({
                    "bs_id": bs.id,
                    "antennas": cube.antennas,
                    "pulses": cube.pulses,
                    "samples": cube.samples,
                    "layout": "row-major (antenna, pulse, sample), little-endian f32 interleaved I/Q",
                    "waveform": cube.config,
                });
                io::write_json(&out.join(format!("{stem}.json")), &sidecar).map_err(runtime)?;
            }
            Ok(())
        }
        Command::Detect { common, source, seed, model } => {
            let (cfg, out) = prepare(&common)?;
            let scene = load_scene(&source, Some(seed), &cfg)?;
            let clf = classifier(&cfg, model.as_deref(), seed)?;
            let dets = detect_all(&scene, &cfg.pipeline(), &clf, seed)?;
            io::write_json(&out.join("scene.json"), &scene).map_err(runtime)?;
            write_detections_csv(&out.join("detections.csv"), &dets.concat()).map_err(runtime)
        }
        Command::Fuse { common, source, seed, model } => {
            let (cfg, out) = prepare(&common)?;
            let p = cfg.pipeline();
            let scene = load_scene(&source, Some(seed), &cfg)?;
            let clf = classifier(&cfg, model.as_deref(), seed)?;
            let dets = detect_all(&scene, &p, &clf, seed)?;
            let pairs: Vec<(&BsPose, &[Detection])> = scene.stations.iter().zip(&dets).map(|(b, d)| (b, d.as_slice())).collect();
            io::write_json(&out.join("scene.json"), &scene).map_err(runtime)?;
            write_detections_csv(&out.join("detections.csv"), &dets.concat()).map_err(runtime)?;
            let raw = harness::fused_field(&scene, &pairs, &p, 0.0).map_err(runtime)?;
            let thresholded = harness::fused_field(&scene, &pairs, &p, p.fusion.threshold_fraction).map_err(runtime)?;
            let clusters = match (&raw, &thresholded) {
                (Some(raw), Some(field)) => {
                    raw.write_pgm(&out.join("field.pgm")).map_err(runtime)?;
                    field.write_pgm(&out.join("field_thresholded.pgm")).map_err(runtime)?;
                    fusion::localize(field, &p.dbscan).map_err(runtime)?
                }
                _ => Vec::new(),
            };
            fusion::write_clusters_csv(&out.join("clusters.csv"), &clusters).map_err(runtime)
        }
        Command::Crlb { common, source, seed, grid_step } => {
            let (cfg, out) = prepare(&common)?;
            if !(grid_step > 0.0 && grid_step.is_finite()) {
                return Err(CliError::Input("--grid-step must be positive".into()));
            }
            let scene = load_scene(&source, seed, &cfg)?;
            let rows = crlb_map(&scene, &cfg, grid_step);
            crlb::write_crlb_csv(&out.join("crlb.csv"), &rows).map_err(runtime)
        }
        Command::Train { common, source, seed, runs, model } => {
            let (mut cfg, out) = prepare(&common)?;
            if let Some(r) = runs {
                if r == 0 {
                    return Err(CliError::Input("--runs must be >= 1".into()));
                }
                cfg.selection.env_runs = r;
            }
            let scene = load_scene(&source, Some(seed), &cfg)?;
            let clf = classifier(&cfg, model.as_deref(), seed)?;
            train_selection(&cfg, scene, &clf, seed, &out)
        }
        Command::TrainClassifier { common, seed } => {
            let (cfg, out) = prepare(&common)?;
            let (clf, corpus) = train_default_classifier(
                cfg.training_samples,
                cfg.segment_count,
                &cfg.waveform,
                &cfg.corpus,
                derive_seed(seed, CLASSIFIER_TAG),
            )
            .map_err(runtime)?;
            io::write_json(&out.join("model.json"), &clf).map_err(runtime)?;
            write_corpus_csv(&out.join("corpus.csv"), &corpus).map_err(runtime)
        }
        Command::Campaign { common, seed, runs, bs_count, model } => {
            let (cfg, out) = prepare(&common)?;
            let mut cc = cfg.campaign.clone();
            cc.master_seed = seed;
            if let Some(r) = runs {
                cc.runs = r;
            }
            if let Some(n) = bs_count {
                cc.bs_counts = vec![n];
            }
            let clf = classifier(&cfg, model.as_deref(), seed)?;
            let result = harness::run_campaign(&cc, &cfg.pipeline(), &clf).map_err(runtime)?;
            for (run, msg) in &result.failures {
                eprintln!("run {run} failed: {msg}");
            }
            harness::write_campaign_outputs(&out, &result).map_err(runtime)
        }
    }
}

fn prepare(common: &Common) -> std::result::Result<(RootConfig, PathBuf), CliError> {
    let cfg = match &common.config {
        Some(p) => RootConfig::load(p).map_err(input)?,
        None => RootConfig::default(),
    };
    fs::create_dir_all(&common.output_dir)
        .map_err(|e| CliError::Input(format!("{}: {e}", common.output_dir.display())))?;
    Ok((cfg, common.output_dir.clone()))
}

fn load_scene(source: &SceneSource, seed: Option<u64>, cfg: &RootConfig) -> std::result::Result<Scene, CliError> {
    let mut scene = match (&source.scene, seed) {
        (Some(path), _) => {
            let text = fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
            let scene: Scene =
                serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
            scene.validate().map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
            scene
        }
        (None, Some(seed)) => harness::default_scene(seed, &cfg.scenario, &cfg.waveform),
        (None, None) => return Err(CliError::Input("either --scene or --seed is required".into())),
    };
    if let Some(n) = source.bs_count {
        if n == 0 || n > scene.stations.len() {
            return Err(CliError::Input(format!("--bs-count must lie in [1, {}]", scene.stations.len())));
        }
        scene.stations.truncate(n);
    }
    Ok(scene)
}

fn classifier(cfg: &RootConfig, model: Option<&Path>, seed: u64) -> std::result::Result<Classifier, CliError> {
    match model {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
            serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
        }
        None => cfg.pipeline().train_classifier(derive_seed(seed, CLASSIFIER_TAG)).map_err(runtime),
    }
}

fn station_seed(seed: u64, index: usize) -> u64 {
    derive_seed(seed, 100 + index as u64)
}

fn detect_all(
    scene: &Scene,
    cfg: &PipelineConfig,
    clf: &Classifier,
    seed: u64,
) -> std::result::Result<Vec<Vec<Detection>>, CliError> {
    scene
        .stations
        .iter()
        .enumerate()
        .map(|(i, bs)| harness::observe_station(scene, bs, cfg, clf, station_seed(seed, i)).map_err(runtime))
        .collect()
}

/// Bound at every grid point for a target with the scene's first target RCS.
/// Points where the bound does not exist are written as `inf`.
pub fn crlb_map(scene: &Scene, cfg: &RootConfig, step: f64) -> Vec<(Vec2, Option<f64>)> {
    let p = cfg.pipeline();
    let template = scene.uavs.iter().find(|u| u.is_target).cloned();
    let stations: Vec<&BsPose> = scene.stations.iter().collect();
    let nx = (scene.area.width / step + 1e-9).floor() as usize;
    let ny = (scene.area.height / step + 1e-9).floor() as usize;
    let mut rows = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            let pos = scene.area.origin + Vec2::new(i as f64 * step, j as f64 * step);
            let mut uav = match &template {
                Some(u) => u.clone(),
                None => crate::scene::UavState {
                    id: 0,
                    position: pos,
                    velocity: Vec2::new(0.0, 0.0),
                    rcs: cfg.scenario.target_rcs,
                    rotor: cfg.scenario.target_rotor,
                    is_target: true,
                },
            };
            uav.position = pos;
            rows.push((pos, harness::uav_crlb(scene, &uav, &stations, &p)));
        }
    }
    rows
}

fn train_selection(
    cfg: &RootConfig,
    scene: Scene,
    clf: &Classifier,
    seed: u64,
    out: &Path,
) -> std::result::Result<(), CliError> {
    let p = cfg.pipeline();
    let n = scene.stations.len();
    if n > 16 {
        return Err(CliError::Input("selection supports at most 16 stations".into()));
    }
    let runs: Vec<harness::RunObservations> = (0..cfg.selection.env_runs)
        .map(|i| harness::observe_run(scene.clone(), &p, clf, derive_seed(seed, ENV_TAG + i as u64)))
        .collect::<Result<_>>()
        .map_err(runtime)?;
    let env = SelectionEnv::from_observations(&runs, &p).map_err(runtime)?;
    let encoding = match cfg.reward.objective {
        Objective::P3 => {
            let samples: Vec<f64> = env.masks().map(|m| env.rmse(m)).collect();
            let model = fcm_states(&samples, cfg.selection.error_states, cfg.selection.fuzzifier).map_err(runtime)?;
            StateEncoding::ErrorState { station_count: n, model }
        }
        _ => StateEncoding::Mask { station_count: n },
    };
    let policy = select::train(
        &env,
        &cfg.reward,
        encoding,
        cfg.qlearning.clone(),
        cfg.selection.episodes,
        derive_seed(seed, TRAINING_TAG),
    )
    .map_err(runtime)?;
    policy.write_json(&out.join("policy.json")).map_err(runtime)?;
    policy.write_training_csv(&out.join("training.csv")).map_err(runtime)?;
    let chosen = match cfg.reward.objective {
        Objective::P3 => select::select_p3(&policy, &env, &cfg.reward),
        _ => select::select_greedy(&policy, &env),
    };
    let all = env.all_on();
    let summary = match chosen {
        Ok(mask) => serde_json::json!({
            "feasible": true,
            "mask": mask,
            "stations": (0..n).filter(|k| mask >> k & 1 == 1).collect::<Vec<_>>(),
            "mse_per_uav": env.mse(mask),
            "reward": env.reward(mask, &cfg.reward),
            "all_on_mse_per_uav": env.mse(all),
            "all_on_reward": env.reward(all, &cfg.reward),
        }),
        Err(Error::Infeasible { best_mse, cap }) => serde_json::json!({
            "feasible": false,
            "best_mse": best_mse,
            "cap": cap,
        }),
        Err(e) => return Err(runtime(e)),
    };
    io::write_json(&out.join("selection.json"), &summary).map_err(runtime)
}
