//! Station on/off selection by tabular Q-learning.
//!
//! The environment is a frozen table of per-UAV MSE for every non-empty
//! station subset, averaged over a handful of fusion runs. Actions toggle one
//! station or terminate. A step is paid the change in the objective reward,
//! so an episode's undiscounted return is the reward of the state it stops in
//! minus that of the state it started from.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::{evaluate_subset, PipelineConfig, RunObservations};
use crate::io::fmt9;
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Objective {
    /// Single UAV accuracy against station cost.
    P1,
    /// Summed MSE over all UAVs against station cost.
    P2,
    /// Fewest stations with every UAV under an MSE cap.
    P3,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardConfig {
    pub c0: f64,
    pub tau_e: f64,
    pub tau_r: f64,
    pub objective: Objective,
    /// M_max in m^2; required for P3.
    pub mse_cap: Option<f64>,
    /// Subtracted under P3 when any UAV reaches the cap.
    pub cap_penalty: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self { c0: 10.0, tau_e: 10.0, tau_r: 0.01, objective: Objective::P1, mse_cap: None, cap_penalty: 100.0 }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_e >= 0.0 && self.tau_r >= 0.0) || !self.c0.is_finite() {
            return Err(Error::config("reward: tau_e and tau_r must be >= 0 and c0 finite"));
        }
        if self.objective == Objective::P3 && !self.mse_cap.is_some_and(|c| c > 0.0) {
            return Err(Error::config("reward: P3 needs a positive mse_cap"));
        }
        if !(self.cap_penalty >= 0.0) {
            return Err(Error::config("reward: cap_penalty must be >= 0"));
        }
        Ok(())
    }

    fn cap(&self) -> f64 {
        self.mse_cap.unwrap_or(f64::INFINITY)
    }
}

/// Objective reward for one station state. P1 scores the first UAV only.
pub fn reward(mse_per_uav: &[f64], active_count: usize, cfg: &RewardConfig) -> f64 {
    let rs = active_count as f64;
    match cfg.objective {
        Objective::P1 => cfg.c0 - cfg.tau_e * mse_per_uav.first().copied().unwrap_or(0.0) - cfg.tau_r * rs,
        Objective::P2 => cfg.c0 - cfg.tau_e * mse_per_uav.iter().sum::<f64>() - cfg.tau_r * rs,
        Objective::P3 => {
            let over = mse_per_uav.iter().any(|&m| m >= cfg.cap());
            cfg.c0 - cfg.tau_r * rs - if over { cfg.cap_penalty } else { 0.0 }
        }
    }
}

/// Frozen per-subset MSE table. Index 0 (all stations off) is unused.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionEnv {
    pub station_count: usize,
    pub uav_count: usize,
    table: Vec<Vec<f64>>,
}

impl SelectionEnv {
    /// Builds the table by calling `mse` on every non-empty mask.
    pub fn from_fn(station_count: usize, uav_count: usize, mse: impl Fn(u32) -> Result<Vec<f64>> + Sync) -> Result<Self> {
        if station_count == 0 || station_count > 16 {
            return Err(Error::config("selection: station_count must lie in [1, 16]"));
        }
        if uav_count == 0 {
            return Err(Error::config("selection: uav_count must be >= 1"));
        }
        let masks: Vec<u32> = (1..1u32 << station_count).collect();
        let rows = masks.par_iter().map(|&m| mse(m)).collect::<Result<Vec<_>>>()?;
        let mut table = vec![Vec::new()];
        for row in rows {
            if row.len() != uav_count || row.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::Environment("MSE row has the wrong length or a bad value".into()));
            }
            table.push(row);
        }
        Ok(Self { station_count, uav_count, table })
    }

    /// Per-target MSE of each subset, averaged over `runs`. A target with no
    /// cluster inside the match gate scores the gate radius as its error.
    pub fn from_observations(runs: &[RunObservations], cfg: &PipelineConfig) -> Result<Self> {
        let first = runs.first().ok_or_else(|| Error::config("selection: need at least one run"))?;
        let n = first.scene.stations.len();
        let uavs = first.scene.uavs.iter().filter(|u| u.is_target).count();
        Self::from_fn(n, uavs, |mask| {
            let subset: Vec<usize> = (0..n).filter(|i| mask >> i & 1 == 1).collect();
            let mut acc = vec![0.0; uavs];
            for obs in runs {
                let (errors, _, _) = evaluate_subset(obs, &subset, cfg).map_err(|e| Error::Environment(e.to_string()))?;
                if errors.len() != uavs {
                    return Err(Error::Environment("runs disagree on the target count".into()));
                }
                for (a, e) in acc.iter_mut().zip(&errors) {
                    *a += e.error_m.unwrap_or(cfg.match_gate).powi(2);
                }
            }
            Ok(acc.into_iter().map(|a| a / runs.len() as f64).collect())
        })
    }

    pub fn all_on(&self) -> u32 {
        (1u32 << self.station_count) - 1
    }

    pub fn mse(&self, mask: u32) -> &[f64] {
        &self.table[mask as usize]
    }

    /// Worst-UAV RMSE of a subset.
    pub fn rmse(&self, mask: u32) -> f64 {
        self.mse(mask).iter().copied().fold(0.0, f64::max).sqrt()
    }

    pub fn reward(&self, mask: u32, cfg: &RewardConfig) -> f64 {
        reward(self.mse(mask), mask.count_ones() as usize, cfg)
    }

    /// Every non-empty mask.
    pub fn masks(&self) -> impl Iterator<Item = u32> {
        1..=self.all_on()
    }
}

/// Fuzzy c-means partition of RMSE values into ordered error states.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorStateModel {
    /// Cluster centres; index 0 is S1, the worst (largest RMSE).
    pub centroids: Vec<f64>,
    /// Per-sample membership weights, columns in centroid order.
    pub memberships: Vec<Vec<f64>>,
    pub state_count: usize,
    pub fuzzifier: f64,
}

impl ErrorStateModel {
    /// State with the highest membership, i.e. the nearest centroid.
    pub fn state_of(&self, rmse: f64) -> usize {
        let mut best = 0;
        for (k, c) in self.centroids.iter().enumerate() {
            if (rmse - c).abs() < (rmse - self.centroids[best]).abs() {
                best = k;
            }
        }
        best
    }
}

fn fcm_memberships(x: f64, centroids: &[f64], m: f64) -> Vec<f64> {
    let d: Vec<f64> = centroids.iter().map(|c| (x - c).abs()).collect();
    if let Some(hit) = d.iter().position(|&v| v == 0.0) {
        let mut u = vec![0.0; d.len()];
        u[hit] = 1.0;
        return u;
    }
    let p = 2.0 / (m - 1.0);
    let u: Vec<f64> = d.iter().map(|&di| 1.0 / d.iter().map(|&dj| (di / dj).powf(p)).sum::<f64>()).collect();
    let s: f64 = u.iter().sum();
    u.into_iter().map(|v| v / s).collect()
}

/// Fuzzy c-means on scalar samples, iterated until no centroid moves more
/// than 1e-6.
pub fn fcm_states(rmse_samples: &[f64], state_count: usize, fuzzifier: f64) -> Result<ErrorStateModel> {
    if state_count == 0 || rmse_samples.len() < state_count {
        return Err(Error::input("fcm: need at least state_count samples and state_count >= 1"));
    }
    if !(fuzzifier > 1.0) || rmse_samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::input("fcm: fuzzifier must exceed 1 and samples must be finite"));
    }
    let mut sorted = rmse_samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    if state_count > 1 && sorted[0] == sorted[sorted.len() - 1] {
        return Err(Error::DegenerateCluster("all samples are identical".into()));
    }
    // Quantile start, ascending.
    let mut c: Vec<f64> = (0..state_count)
        .map(|k| sorted[((2 * k + 1) * sorted.len()) / (2 * state_count)])
        .collect();
    for k in 1..state_count {
        if c[k] <= c[k - 1] {
            c[k] = c[k - 1] + 1e-9 * (1.0 + c[k - 1].abs());
        }
    }
    for _ in 0..10_000 {
        let u: Vec<Vec<f64>> = rmse_samples.iter().map(|&x| fcm_memberships(x, &c, fuzzifier)).collect();
        let next: Vec<f64> = (0..state_count)
            .map(|k| {
                let (num, den) = rmse_samples.iter().zip(&u).fold((0.0, 0.0), |(n, d), (&x, ui)| {
                    let w = ui[k].powf(fuzzifier);
                    (n + w * x, d + w)
                });
                num / den
            })
            .collect();
        let shift = next.iter().zip(&c).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        c = next;
        if shift < 1e-6 {
            break;
        }
    }
    // Worst first.
    let mut order: Vec<usize> = (0..state_count).collect();
    order.sort_by(|&a, &b| c[b].total_cmp(&c[a]));
    let centroids: Vec<f64> = order.iter().map(|&k| c[k]).collect();
    let memberships = rmse_samples.iter().map(|&x| fcm_memberships(x, &centroids, fuzzifier)).collect();
    Ok(ErrorStateModel { centroids, memberships, state_count, fuzzifier })
}

/// How a station mask maps to a Q-table row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum StateEncoding {
    /// The activation bitmask itself.
    Mask { station_count: usize },
    /// FCM error state of the subset's worst-UAV RMSE crossed with Rs.
    ErrorState { station_count: usize, model: ErrorStateModel },
}

impl StateEncoding {
    pub fn station_count(&self) -> usize {
        match self {
            StateEncoding::Mask { station_count } | StateEncoding::ErrorState { station_count, .. } => *station_count,
        }
    }

    pub fn state_space(&self) -> usize {
        match self {
            StateEncoding::Mask { station_count } => 1 << station_count,
            StateEncoding::ErrorState { station_count, model } => model.state_count * (station_count + 1),
        }
    }

    pub fn encode(&self, mask: u32, env: &SelectionEnv) -> usize {
        match self {
            StateEncoding::Mask { .. } => mask as usize,
            StateEncoding::ErrorState { station_count, model } => {
                model.state_of(env.rmse(mask)) * (station_count + 1) + mask.count_ones() as usize
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QParams {
    pub learning_rate: f64,
    pub discount: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Step cap per episode and per greedy rollout.
    pub max_steps: usize,
}

impl Default for QParams {
    fn default() -> Self {
        Self { learning_rate: 0.1, discount: 0.9, epsilon_start: 0.3, epsilon_end: 0.01, max_steps: 24 }
    }
}

impl QParams {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !unit(self.learning_rate) || !unit(self.discount) || !unit(self.epsilon_start) || !unit(self.epsilon_end) {
            return Err(Error::config("q-learning: rates and epsilons must lie in [0, 1]"));
        }
        if self.max_steps == 0 {
            return Err(Error::config("q-learning: max_steps must be >= 1"));
        }
        Ok(())
    }

    fn epsilon_at(&self, episode: usize, episodes: usize) -> f64 {
        if episodes <= 1 {
            return self.epsilon_start;
        }
        let f = episode as f64 / (episodes - 1) as f64;
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * f
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    /// Objective reward of the state the episode stopped in.
    pub reward: f64,
    pub epsilon: f64,
    pub rs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QPolicy {
    pub encoding: StateEncoding,
    pub params: QParams,
    pub reward_config: RewardConfig,
    /// Rows are states; columns are "toggle station i" then terminate.
    pub q_values: Vec<Vec<f64>>,
    pub epsilon: f64,
    pub episode_log: Vec<EpisodeRecord>,
}

impl QPolicy {
    pub fn new(encoding: StateEncoding, params: QParams, reward_config: RewardConfig) -> Self {
        let actions = encoding.station_count() + 1;
        let q_values = vec![vec![0.0; actions]; encoding.state_space()];
        let epsilon = params.epsilon_start;
        Self { encoding, params, reward_config, q_values, epsilon, episode_log: Vec::new() }
    }

    pub fn action_count(&self) -> usize {
        self.encoding.station_count() + 1
    }

    pub fn terminate_action(&self) -> usize {
        self.encoding.station_count()
    }

    /// One Q-learning step; `next = None` marks a terminal transition.
    pub fn q_update(&mut self, s: usize, a: usize, r: f64, next: Option<usize>) {
        let future = next.map_or(0.0, |n| self.q_values[n].iter().copied().fold(f64::NEG_INFINITY, f64::max));
        let q = &mut self.q_values[s][a];
        *q += self.params.learning_rate * (r + self.params.discount * future - *q);
    }

    /// Highest-valued allowed action; ties go to the lowest index.
    pub fn greedy_action(&self, s: usize, allowed: &[bool]) -> usize {
        let mut best = self.terminate_action();
        for (a, &ok) in allowed.iter().enumerate() {
            if ok && self.q_values[s][a] > self.q_values[s][best] {
                best = a;
            }
        }
        best
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(&mut f, self)?;
        f.write_all(b"\n")?;
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        Ok(serde_json::from_reader(std::io::BufReader::new(std::fs::File::open(path)?))?)
    }

    /// Training curve as CSV: episode, reward, epsilon, rs.
    pub fn write_training_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["episode", "reward", "epsilon", "rs"])?;
        for e in &self.episode_log {
            w.write_record([e.episode.to_string(), fmt9(e.reward), fmt9(e.epsilon), e.rs.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Toggles that leave at least one station on, plus terminate.
fn allowed_actions(mask: u32, n: usize) -> Vec<bool> {
    let mut v: Vec<bool> = (0..n).map(|i| mask ^ (1 << i) != 0).collect();
    v.push(true);
    v
}

/// Epsilon-greedy Q-learning from uniformly random non-empty start states.
pub fn train(
    env: &SelectionEnv,
    reward_config: &RewardConfig,
    encoding: StateEncoding,
    params: QParams,
    episodes: usize,
    seed: u64,
) -> Result<QPolicy> {
    reward_config.validate()?;
    params.validate()?;
    let n = env.station_count;
    if encoding.station_count() != n {
        return Err(Error::config("selection: encoding and environment disagree on station count"));
    }
    let mut policy = QPolicy::new(encoding, params, reward_config.clone());
    let mut rng = rng::seeded(seed);
    let term = policy.terminate_action();
    for episode in 0..episodes {
        let eps = policy.params.epsilon_at(episode, episodes);
        policy.epsilon = eps;
        let mut mask = rng.random_range(1..=env.all_on());
        for _ in 0..policy.params.max_steps {
            let s = policy.encoding.encode(mask, env);
            let allowed = allowed_actions(mask, n);
            let a = if rng.random::<f64>() < eps {
                let choices: Vec<usize> = (0..allowed.len()).filter(|&a| allowed[a]).collect();
                choices[rng.random_range(0..choices.len())]
            } else {
                policy.greedy_action(s, &allowed)
            };
            if a == term {
                policy.q_update(s, a, 0.0, None);
                break;
            }
            let next = mask ^ (1 << a);
            let r = env.reward(next, reward_config) - env.reward(mask, reward_config);
            let sn = policy.encoding.encode(next, env);
            policy.q_update(s, a, r, Some(sn));
            mask = next;
        }
        policy.episode_log.push(EpisodeRecord {
            episode,
            reward: env.reward(mask, reward_config),
            epsilon: eps,
            rs: mask.count_ones() as usize,
        });
    }
    Ok(policy)
}

/// Greedy walk from `start`; returns every visited mask in order. Stops on
/// terminate, a revisit, or the step cap.
pub fn rollout(policy: &QPolicy, env: &SelectionEnv, start: u32) -> Result<Vec<u32>> {
    let n = env.station_count;
    if policy.encoding.station_count() != n || start == 0 || start > env.all_on() {
        return Err(Error::input("rollout: start mask or policy does not fit the environment"));
    }
    let mut path = vec![start];
    let mut mask = start;
    for _ in 0..policy.params.max_steps {
        let s = policy.encoding.encode(mask, env);
        let a = policy.greedy_action(s, &allowed_actions(mask, n));
        if a == policy.terminate_action() {
            break;
        }
        mask ^= 1 << a;
        if path.contains(&mask) {
            break;
        }
        path.push(mask);
    }
    Ok(path)
}

/// Subset chosen by a P1/P2 policy: the end of a greedy walk from all
/// stations on.
pub fn select_greedy(policy: &QPolicy, env: &SelectionEnv) -> Result<u32> {
    Ok(*rollout(policy, env, env.all_on())?.last().expect("rollout is never empty"))
}

/// Fewest-station subset under the cap found on a greedy walk from all
/// stations on. Ties go to the lower worst-UAV MSE.
pub fn select_p3(policy: &QPolicy, env: &SelectionEnv, cfg: &RewardConfig) -> Result<u32> {
    let cap = cfg.mse_cap.filter(|c| *c > 0.0).ok_or_else(|| Error::config("select_p3: mse_cap must be set"))?;
    let worst = |m: u32| env.mse(m).iter().copied().fold(0.0, f64::max);
    let path = rollout(policy, env, env.all_on())?;
    let best = path
        .iter()
        .copied()
        .filter(|&m| worst(m) < cap)
        .min_by(|&a, &b| a.count_ones().cmp(&b.count_ones()).then(worst(a).total_cmp(&worst(b))).then(a.cmp(&b)));
    best.ok_or_else(|| Error::Infeasible {
        best_mse: path.iter().map(|&m| worst(m)).fold(f64::INFINITY, f64::min),
        cap,
    })
}

/// Exhaustive optimum of the objective over all non-empty subsets; ties go
/// to the lower mask.
pub fn exhaustive_best(env: &SelectionEnv, cfg: &RewardConfig) -> u32 {
    let mut best = 1;
    for m in env.masks() {
        if env.reward(m, cfg) > env.reward(best, cfg) {
            best = m;
        }
    }
    best
}
