//! Grid-based multi-station fusion: detection-region sizing, calibration
//! into world coordinates, log-odds accumulation, normalization, DBSCAN
//! clustering and MMSE position extraction.

use std::collections::{BTreeMap, VecDeque};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::Detection;
use crate::geometry::{Rect, Vec2};
use crate::io;
use crate::scene::BsPose;
use crate::waveform::WaveformConfig;
use crate::SPEED_OF_LIGHT;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub origin: Vec2,
    pub cell_size: f64,
    pub width_cells: usize,
    pub height_cells: usize,
}

impl GridSpec {
    /// Smallest grid of `cell_size` cells covering `area`.
    pub fn covering(area: &Rect, cell_size: f64) -> Result<Self> {
        if !(cell_size > 0.0) {
            return Err(Error::config("grid: cell_size must be positive"));
        }
        let width_cells = (area.width / cell_size - 1e-9).ceil().max(1.0) as usize;
        let height_cells = (area.height / cell_size - 1e-9).ceil().max(1.0) as usize;
        Ok(Self { origin: area.origin, cell_size, width_cells, height_cells })
    }

    pub fn len(&self) -> usize {
        self.width_cells * self.height_cells
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn center(&self, idx: usize) -> Vec2 {
        let (ix, iy) = (idx % self.width_cells, idx / self.width_cells);
        Vec2::new(
            self.origin.x + (ix as f64 + 0.5) * self.cell_size,
            self.origin.y + (iy as f64 + 0.5) * self.cell_size,
        )
    }

    /// Column and row of the cell containing `p`, if inside the grid.
    pub fn cell_of(&self, p: Vec2) -> Option<(usize, usize)> {
        let fx = (p.x - self.origin.x) / self.cell_size;
        let fy = (p.y - self.origin.y) / self.cell_size;
        if !(fx >= 0.0 && fy >= 0.0) {
            return None;
        }
        let (ix, iy) = (fx.floor() as usize, fy.floor() as usize);
        (ix < self.width_cells && iy < self.height_cells).then_some((ix, iy))
    }

    pub fn contains(&self, p: Vec2) -> bool {
        self.cell_of(p).is_some()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FusionConfig {
    pub cell_size: f64,
    pub p_fa: f64,
    /// Occupancy prior inside a detection region.
    pub prior: f64,
    /// Lower clip for the posterior before the log ratio (upper is `1 - p_min`).
    pub p_min: f64,
    /// Floor on the transmission angle used for region sizing (radians).
    pub min_transmission_angle: f64,
    pub threshold_fraction: f64,
    pub normalization: Normalization,
}

/// How accumulated log-odds become a probability field.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Positive log-odds scaled to sum to one.
    Linear,
    /// `exp(l)` over positive cells, scaled to sum to one.
    Exponential,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            cell_size: 0.25,
            p_fa: 1e-3,
            prior: 1.0,
            p_min: 1e-6,
            min_transmission_angle: 15f64.to_radians(),
            threshold_fraction: 0.5,
            normalization: Normalization::Linear,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.cell_size > 0.0) {
            return Err(Error::config("fusion: cell_size must be positive"));
        }
        if !(self.p_fa > 0.0 && self.p_fa < 1.0) || !(self.prior > 0.0 && self.prior <= 1.0) {
            return Err(Error::config("fusion: p_fa and prior must be probabilities"));
        }
        if !(self.p_min > 0.0 && self.p_min < 0.5) {
            return Err(Error::config("fusion: p_min must lie in (0, 0.5)"));
        }
        if !(self.threshold_fraction >= 0.0 && self.threshold_fraction <= 1.0) {
            return Err(Error::config("fusion: threshold_fraction must lie in [0, 1]"));
        }
        if !(self.min_transmission_angle > 0.0 && self.min_transmission_angle <= std::f64::consts::FRAC_PI_2) {
            return Err(Error::config("fusion: min_transmission_angle must lie in (0, pi/2]"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DbscanConfig {
    pub eps: f64,
    pub min_pts: usize,
}

impl Default for DbscanConfig {
    fn default() -> Self {
        Self { eps: 0.5, min_pts: 1 }
    }
}

impl DbscanConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0) || self.min_pts < 1 {
            return Err(Error::config("dbscan: eps must be positive and min_pts >= 1"));
        }
        Ok(())
    }
}

/// Region size from the range resolution and beam footprint at transmission
/// angle `varsigma`. Returns the beam term alone at `pi/2`.
pub fn region_size(range_m: f64, varsigma: f64, bandwidth_hz: f64, beamwidth: f64) -> f64 {
    let h_beam = range_m * beamwidth / varsigma.sin();
    let c = varsigma.cos();
    if c <= 1e-12 {
        return h_beam;
    }
    let h_range = SPEED_OF_LIGHT / (2.0 * bandwidth_hz) / c;
    h_range.min(h_beam)
}

/// Diameter of the region a detection may come from. The transmission angle
/// is the detection's offset from boresight, floored at `min_angle`.
pub fn detection_region_size(bs: &BsPose, det: &Detection, wf: &WaveformConfig, min_angle: f64) -> f64 {
    let varsigma = det.angle_rad.abs().clamp(min_angle, std::f64::consts::FRAC_PI_2);
    region_size(det.range_m, varsigma, wf.bandwidth_hz, bs.beamwidth_3db)
}

/// World position of a detection.
pub fn calibrate(bs: &BsPose, det: &Detection) -> Vec2 {
    bs.position + Vec2::from_bearing(bs.rotation + det.angle_rad) * det.range_m
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridMap {
    pub spec: GridSpec,
    pub log_odds: Vec<f64>,
    /// Number of stations fused so far.
    pub iteration: usize,
}

impl GridMap {
    pub fn new(spec: GridSpec) -> Self {
        Self { log_odds: vec![0.0; spec.len()], spec, iteration: 0 }
    }
}

/// Log-likelihood ratio added for a detection with recognition probability `pr`.
pub fn log_odds_increment(pr: f64, cfg: &FusionConfig) -> f64 {
    let post = (cfg.prior * pr).clamp(cfg.p_min, 1.0 - cfg.p_min);
    (post / cfg.p_fa).ln()
}

/// Per-cell increments contributed by one station. Where regions of the
/// same station overlap the larger increment is kept, so one station never
/// counts a cell twice. Returns the increments and the number of detections
/// that fell outside the grid.
pub fn station_increments(
    spec: &GridSpec,
    detections: &[Detection],
    bs: &BsPose,
    wf: &WaveformConfig,
    cfg: &FusionConfig,
) -> (BTreeMap<usize, f64>, usize) {
    let mut cells: BTreeMap<usize, f64> = BTreeMap::new();
    let mut skipped = 0;
    for det in detections {
        let p = calibrate(bs, det);
        let Some((cx, cy)) = spec.cell_of(p) else {
            skipped += 1;
            continue;
        };
        let inc = log_odds_increment(det.pr, cfg);
        let radius = 0.5 * detection_region_size(bs, det, wf, cfg.min_transmission_angle);
        let reach = (radius / spec.cell_size).ceil() as i64 + 1;
        let mut put = |idx: usize| {
            cells.entry(idx).and_modify(|v| *v = v.max(inc)).or_insert(inc);
        };
        put(cy * spec.width_cells + cx);
        for dy in -reach..=reach {
            let iy = cy as i64 + dy;
            if iy < 0 || iy >= spec.height_cells as i64 {
                continue;
            }
            for dx in -reach..=reach {
                let ix = cx as i64 + dx;
                if ix < 0 || ix >= spec.width_cells as i64 {
                    continue;
                }
                let idx = iy as usize * spec.width_cells + ix as usize;
                if spec.center(idx).distance(p) <= radius {
                    put(idx);
                }
            }
        }
    }
    (cells, skipped)
}

/// Adds one station's evidence to the map. Returns the number of detections
/// skipped because they calibrate outside the grid.
pub fn fuse_station(
    map: &mut GridMap,
    detections: &[Detection],
    bs: &BsPose,
    wf: &WaveformConfig,
    cfg: &FusionConfig,
) -> usize {
    let (cells, skipped) = station_increments(&map.spec, detections, bs, wf, cfg);
    for (idx, inc) in cells {
        map.log_odds[idx] += inc;
    }
    map.iteration += 1;
    skipped
}

/// Normalized occupancy probabilities over the grid.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbabilityField {
    pub spec: GridSpec,
    pub prob: Vec<f64>,
}

impl ProbabilityField {
    pub fn peak(&self) -> f64 {
        self.prob.iter().copied().fold(0.0, f64::max)
    }

    /// Dumps a 16-bit plain PGM (row 0 is the lowest y) and a JSON sidecar.
    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        let peak = self.peak();
        let scaled: Vec<u16> = self
            .prob
            .iter()
            .map(|p| if peak > 0.0 { (p / peak * 65535.0).round() as u16 } else { 0 })
            .collect();
        io::write_pgm16(path, self.spec.width_cells, self.spec.height_cells, &scaled)?;
        let sidecar = serde_json::json!({
            "origin": [self.spec.origin.x, self.spec.origin.y],
            "cell_size": self.spec.cell_size,
            "width": self.spec.width_cells,
            "height": self.spec.height_cells,
            "peak_value": peak,
            "row_order": "increasing_y",
        });
        io::write_json(&path.with_extension("json"), &sidecar)
    }
}

/// Converts log-odds to probabilities (cells without positive evidence get
/// zero), normalizes, zeroes cells below `threshold_fraction` of the peak
/// and renormalizes.
pub fn normalize_and_threshold(map: &GridMap, threshold_fraction: f64, mode: Normalization) -> Result<ProbabilityField> {
    let max = map.log_odds.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(max > 0.0) {
        return Err(Error::EmptyField);
    }
    let mut prob: Vec<f64> = map
        .log_odds
        .iter()
        .map(|&l| match mode {
            _ if l <= 0.0 => 0.0,
            Normalization::Linear => l / max,
            Normalization::Exponential => (l - max).exp(),
        })
        .collect();
    let total: f64 = prob.iter().sum();
    prob.iter_mut().for_each(|p| *p /= total);
    let peak = prob.iter().copied().fold(0.0, f64::max);
    let cut = threshold_fraction * peak;
    prob.iter_mut().for_each(|p| {
        if *p < cut {
            *p = 0.0
        }
    });
    let total: f64 = prob.iter().sum();
    prob.iter_mut().for_each(|p| *p /= total);
    Ok(ProbabilityField { spec: map.spec, prob })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Clustering {
    /// Nonzero cells in row-major order.
    pub cells: Vec<usize>,
    /// Cluster label per cell, `-1` for noise.
    pub labels: Vec<i32>,
    pub cluster_count: usize,
}

impl Clustering {
    pub fn members(&self, cluster: usize) -> Vec<usize> {
        self.cells
            .iter()
            .zip(&self.labels)
            .filter(|(_, &l)| l == cluster as i32)
            .map(|(&c, _)| c)
            .collect()
    }
}

/// Density clustering of the nonzero cells, by Euclidean distance between
/// cell centers. A point's neighbourhood includes the point itself.
pub fn dbscan(field: &ProbabilityField, cfg: &DbscanConfig) -> Result<Clustering> {
    cfg.validate()?;
    let spec = &field.spec;
    let cells: Vec<usize> = (0..field.prob.len()).filter(|&i| field.prob[i] > 0.0).collect();
    let slot: std::collections::HashMap<usize, usize> =
        cells.iter().enumerate().map(|(k, &c)| (c, k)).collect();
    let reach = (cfg.eps / spec.cell_size).floor() as i64;
    let neighbours = |k: usize| -> Vec<usize> {
        let c = cells[k];
        let (cx, cy) = ((c % spec.width_cells) as i64, (c / spec.width_cells) as i64);
        let mut out = Vec::new();
        for dy in -reach..=reach {
            for dx in -reach..=reach {
                let (x, y) = (cx + dx, cy + dy);
                if x < 0 || y < 0 || x >= spec.width_cells as i64 || y >= spec.height_cells as i64 {
                    continue;
                }
                let d = ((dx * dx + dy * dy) as f64).sqrt() * spec.cell_size;
                if d <= cfg.eps * (1.0 + 1e-12) {
                    if let Some(&j) = slot.get(&(y as usize * spec.width_cells + x as usize)) {
                        out.push(j);
                    }
                }
            }
        }
        out.sort_unstable();
        out
    };

    const UNVISITED: i32 = -2;
    let mut labels = vec![UNVISITED; cells.len()];
    let mut cluster = 0i32;
    for k in 0..cells.len() {
        if labels[k] != UNVISITED {
            continue;
        }
        let nb = neighbours(k);
        if nb.len() < cfg.min_pts {
            labels[k] = -1;
            continue;
        }
        labels[k] = cluster;
        let mut queue: VecDeque<usize> = nb.into_iter().filter(|&j| j != k).collect();
        while let Some(j) = queue.pop_front() {
            if labels[j] == -1 {
                labels[j] = cluster;
            }
            if labels[j] != UNVISITED {
                continue;
            }
            labels[j] = cluster;
            let nb = neighbours(j);
            if nb.len() >= cfg.min_pts {
                queue.extend(nb);
            }
        }
        cluster += 1;
    }
    Ok(Clustering { cells, labels, cluster_count: cluster as usize })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalizedTarget {
    pub position: Vec2,
    pub cluster_id: usize,
    pub mass: f64,
    pub member_cells: usize,
}

/// Probability-weighted centroid of the given cells.
pub fn mmse_position(field: &ProbabilityField, members: &[usize], cluster_id: usize) -> Result<LocalizedTarget> {
    let mass: f64 = members.iter().map(|&c| field.prob[c]).sum();
    if members.is_empty() || !(mass > 0.0) {
        return Err(Error::DegenerateCluster(format!("cluster {cluster_id} has no mass")));
    }
    let mut acc = Vec2::default();
    for &c in members {
        acc = acc + field.spec.center(c) * field.prob[c];
    }
    Ok(LocalizedTarget { position: acc * (1.0 / mass), cluster_id, mass, member_cells: members.len() })
}

/// Clusters the field and returns one MMSE estimate per cluster.
pub fn localize(field: &ProbabilityField, cfg: &DbscanConfig) -> Result<Vec<LocalizedTarget>> {
    let clustering = dbscan(field, cfg)?;
    (0..clustering.cluster_count)
        .map(|c| mmse_position(field, &clustering.members(c), c))
        .collect()
}

pub fn write_clusters_csv(path: &Path, targets: &[LocalizedTarget]) -> Result<()> {
    let rows: Vec<Vec<String>> = targets
        .iter()
        .map(|t| {
            vec![
                t.cluster_id.to_string(),
                io::fmt9(t.position.x),
                io::fmt9(t.position.y),
                io::fmt9(t.mass),
                t.member_cells.to_string(),
            ]
        })
        .collect();
    io::write_csv(path, &["cluster_id", "x_m", "y_m", "mass", "member_cells"], &rows)
}
