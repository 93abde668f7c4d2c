//! Per-station measurement chain: range and velocity FFT profiles, CA-CFAR,
//! the closed-form detection probability and MUSIC angle estimation.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::BsPose;
use crate::waveform::{EchoCube, WaveformConfig};

/// Periodic-free (symmetric) Hamming window of length `n`.
pub fn hamming(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    let denom = (n - 1) as f64;
    (0..n)
        .map(|i| 0.54 - 0.46 * (2.0 * std::f64::consts::PI * i as f64 / denom).cos())
        .collect()
}

fn planned(len: usize) -> Arc<dyn Fft<f64>> {
    FftPlanner::new().plan_fft_forward(len)
}

/// Fast-time spectra stored `(antenna, range bin l, pulse m)`.
#[derive(Clone, Debug, PartialEq)]
pub struct RangeProfile {
    pub antennas: usize,
    pub bins: usize,
    pub pulses: usize,
    pub data: Vec<Complex64>,
}

impl RangeProfile {
    #[inline]
    pub fn index(&self, k: usize, l: usize, m: usize) -> usize {
        (k * self.bins + l) * self.pulses + m
    }

    pub fn get(&self, k: usize, l: usize, m: usize) -> Complex64 {
        self.data[self.index(k, l, m)]
    }

    /// `K x M` snapshot matrix at range bin `l`.
    pub fn snapshots(&self, l: usize) -> DMatrix<Complex64> {
        DMatrix::from_fn(self.antennas, self.pulses, |k, m| self.get(k, l, m))
    }

    /// Array snapshots from the Hamming-windowed Doppler spectrum at the
    /// 3x3 range/velocity neighbourhood of `(l, m)`, velocity circular.
    /// Sources in other Doppler cells of the same range bin are rejected.
    pub fn doppler_snapshots(&self, l: usize, m: usize) -> DMatrix<Complex64> {
        let m_n = self.pulses;
        let win = hamming(m_n);
        let rows: Vec<usize> = (l.saturating_sub(1)..=(l + 1).min(self.bins - 1)).collect();
        let cells: Vec<(usize, usize)> = rows
            .iter()
            .flat_map(|&r| [m_n - 1, 0, 1].map(|d| (r, (m + d) % m_n)))
            .collect();
        let step = -2.0 * std::f64::consts::PI / m_n as f64;
        DMatrix::from_fn(self.antennas, cells.len(), |k, c| {
            let (r, v) = cells[c];
            (0..m_n)
                .map(|p| self.get(k, r, p) * win[p] * Complex64::from_polar(1.0, step * (v * p) as f64))
                .sum()
        })
    }
}

/// Hamming-windowed length-L FFT along fast time for every antenna and pulse.
pub fn range_profile(cube: &EchoCube) -> RangeProfile {
    let (k_n, m_n, l_n) = (cube.antennas, cube.pulses, cube.samples);
    let win = hamming(l_n);
    let fft = planned(l_n);
    let mut out = RangeProfile {
        antennas: k_n,
        bins: l_n,
        pulses: m_n,
        data: vec![Complex64::new(0.0, 0.0); cube.data.len()],
    };
    let mut buf = vec![Complex64::new(0.0, 0.0); l_n];
    for k in 0..k_n {
        for m in 0..m_n {
            let base = cube.index(k, m, 0);
            for (l, b) in buf.iter_mut().enumerate() {
                *b = cube.data[base + l] * win[l];
            }
            fft.process(&mut buf);
            for (l, v) in buf.iter().enumerate() {
                let idx = out.index(k, l, m);
                out.data[idx] = *v;
            }
        }
    }
    out
}

/// Antenna-averaged range/velocity power map, stored `l * M + m`.
#[derive(Clone, Debug, PartialEq)]
pub struct RangeVelocityMap {
    pub power: Vec<f64>,
    pub range_bins: usize,
    pub velocity_bins: usize,
    /// Meters per range bin.
    pub range_axis: f64,
    /// Meters/second per velocity bin.
    pub velocity_axis: f64,
}

impl RangeVelocityMap {
    pub fn from_power(power: Vec<f64>, range_bins: usize, velocity_bins: usize) -> Self {
        assert_eq!(power.len(), range_bins * velocity_bins);
        Self { power, range_bins, velocity_bins, range_axis: 1.0, velocity_axis: 1.0 }
    }

    #[inline]
    pub fn at(&self, l: usize, m: usize) -> f64 {
        self.power[l * self.velocity_bins + m]
    }

    pub fn range_at(&self, l: f64) -> f64 {
        l * self.range_axis
    }

    /// Signed velocity: bins at or above M/2 are negative.
    pub fn velocity_at(&self, m: usize) -> f64 {
        let mm = self.velocity_bins as i64;
        let signed = if (m as i64) >= mm / 2 { m as i64 - mm } else { m as i64 };
        signed as f64 * self.velocity_axis
    }
}

/// Hamming-windowed length-M FFT along slow time; power averaged over antennas.
pub fn velocity_profile(profile: &RangeProfile, wf: &WaveformConfig) -> RangeVelocityMap {
    let (k_n, l_n, m_n) = (profile.antennas, profile.bins, profile.pulses);
    let win = hamming(m_n);
    let fft = planned(m_n);
    let mut power = vec![0.0; l_n * m_n];
    let mut buf = vec![Complex64::new(0.0, 0.0); m_n];
    for k in 0..k_n {
        for l in 0..l_n {
            let base = profile.index(k, l, 0);
            for (m, b) in buf.iter_mut().enumerate() {
                *b = profile.data[base + m] * win[m];
            }
            fft.process(&mut buf);
            for (m, v) in buf.iter().enumerate() {
                power[l * m_n + m] += v.norm_sqr();
            }
        }
    }
    let inv_k = 1.0 / k_n.max(1) as f64;
    power.iter_mut().for_each(|p| *p *= inv_k);
    RangeVelocityMap {
        power,
        range_bins: l_n,
        velocity_bins: m_n,
        range_axis: wf.range_bin_m(),
        velocity_axis: wf.velocity_bin_mps(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CfarConfig {
    pub p_fa: f64,
    pub ref_cells_range: usize,
    pub ref_cells_velocity: usize,
    pub guard_cells_range: usize,
    pub guard_cells_velocity: usize,
    /// Peaks this far (dB) below a stronger peak in the same Doppler column
    /// or range row are treated as window sidelobes and dropped.
    pub sidelobe_blanking_db: f64,
    /// Peaks within two range bins of a peak at least this much (dB)
    /// stronger are treated as its micro-Doppler sidebands and dropped.
    pub sideband_blanking_db: f64,
}

impl Default for CfarConfig {
    fn default() -> Self {
        Self {
            p_fa: 1e-3,
            ref_cells_range: 4,
            ref_cells_velocity: 4,
            guard_cells_range: 2,
            guard_cells_velocity: 2,
            sidelobe_blanking_db: 40.0,
            sideband_blanking_db: 20.0,
        }
    }
}

impl CfarConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.p_fa > 0.0 && self.p_fa < 1.0) {
            return Err(Error::config("cfar: p_fa must lie in (0, 1)"));
        }
        if self.ref_cells_range < 1 || self.ref_cells_velocity < 1 {
            return Err(Error::config("cfar: reference cell counts must be >= 1"));
        }
        if !(self.sidelobe_blanking_db >= 0.0 && self.sideband_blanking_db >= 0.0) {
            return Err(Error::config("cfar: blanking levels must be >= 0 dB"));
        }
        Ok(())
    }

    pub fn reference_count(&self) -> usize {
        self.ref_cells_range * self.ref_cells_velocity
    }

    /// Threshold multiplier `N * (P_FA^(-1/N) - 1)` for `n` reference cells.
    pub fn scale_factor(&self, n: usize) -> f64 {
        let n = n as f64;
        n * (self.p_fa.powf(-1.0 / n) - 1.0)
    }
}

/// Signed offsets of the reference cells along one axis. Cells sit on every
/// second bin beyond the guard band so that window leakage between
/// neighbours does not correlate the reference estimate.
fn reference_offsets(count: usize, guard: usize) -> Vec<i64> {
    let left = count / 2;
    let right = count - left;
    let off = |i: usize| (guard + 1 + 2 * i) as i64;
    let mut v: Vec<i64> = (0..left).map(|i| -off(i)).collect();
    v.extend((0..right).map(off));
    v
}

fn reach(count: usize, guard: usize) -> usize {
    guard + 1 + 2 * (count - count / 2).saturating_sub(1)
}

/// A threshold crossing `(l, m, snr_est)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CfarHit {
    pub l: usize,
    pub m: usize,
    pub power: f64,
    pub snr_est: f64,
}

/// Two-dimensional cell-averaging CFAR over the whole map.
///
/// The reference set is the product of the range and velocity offsets.
/// Range offsets falling off the map are dropped (and the threshold factor
/// recomputed for the remaining count); velocity offsets wrap around, since
/// the Doppler axis is circular.
pub fn ca_cfar(map: &RangeVelocityMap, cfg: &CfarConfig) -> Result<Vec<CfarHit>> {
    cfg.validate()?;
    let (l_n, m_n) = (map.range_bins, map.velocity_bins);
    if l_n <= 2 * reach(cfg.ref_cells_range, cfg.guard_cells_range)
        || m_n <= 2 * reach(cfg.ref_cells_velocity, cfg.guard_cells_velocity)
    {
        return Err(Error::config("cfar: map smaller than reference window"));
    }
    let r_off = reference_offsets(cfg.ref_cells_range, cfg.guard_cells_range);
    let v_off = reference_offsets(cfg.ref_cells_velocity, cfg.guard_cells_velocity);
    let factors: Vec<f64> = (0..=cfg.reference_count()).map(|n| cfg.scale_factor(n.max(1))).collect();
    let mm = m_n as i64;
    let wrapped_v: Vec<Vec<usize>> = (0..m_n)
        .map(|m| v_off.iter().map(|&d| (m as i64 + d).rem_euclid(mm) as usize).collect())
        .collect();

    let mut hits = Vec::new();
    let mut rows: Vec<usize> = Vec::with_capacity(r_off.len());
    for l in 0..l_n {
        rows.clear();
        rows.extend(
            r_off
                .iter()
                .map(|&d| l as i64 + d)
                .filter(|&x| x >= 0 && x < l_n as i64)
                .map(|x| x as usize),
        );
        let n = rows.len() * v_off.len();
        if n == 0 {
            continue;
        }
        let factor = factors[n];
        for m in 0..m_n {
            let mut sum = 0.0;
            for &r in &rows {
                let row = &map.power[r * m_n..(r + 1) * m_n];
                for &c in &wrapped_v[m] {
                    sum += row[c];
                }
            }
            let beta = sum / n as f64;
            let e = map.at(l, m);
            if e >= factor * beta && e > 0.0 {
                let snr_est = if beta > 0.0 { (e / beta - 1.0).max(0.0) } else { f64::INFINITY };
                hits.push(CfarHit { l, m, power: e, snr_est });
            }
        }
    }
    Ok(hits)
}

/// Merges 8-connected crossings (velocity axis circular) into their
/// strongest cell. Output is ordered by range bin, then velocity bin.
pub fn group_peaks(hits: &[CfarHit], velocity_bins: usize) -> Vec<CfarHit> {
    let n = hits.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    let pos: std::collections::HashMap<(usize, usize), usize> =
        hits.iter().enumerate().map(|(i, h)| ((h.l, h.m), i)).collect();
    let mm = velocity_bins as i64;
    for (i, h) in hits.iter().enumerate() {
        for dl in -1i64..=1 {
            for dm in -1i64..=1 {
                let l = h.l as i64 + dl;
                if l < 0 {
                    continue;
                }
                let m = (h.m as i64 + dm).rem_euclid(mm) as usize;
                if let Some(&j) = pos.get(&(l as usize, m)) {
                    let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                    if a != b {
                        parent[a.max(b)] = a.min(b);
                    }
                }
            }
        }
    }
    let mut best: std::collections::BTreeMap<usize, usize> = Default::default();
    for i in 0..n {
        let root = find(&mut parent, i);
        let e = best.entry(root).or_insert(i);
        if hits[i].power > hits[*e].power {
            *e = i;
        }
    }
    let mut out: Vec<CfarHit> = best.values().map(|&i| hits[i]).collect();
    out.sort_by_key(|h| (h.l, h.m));
    out
}

/// Drops peaks that sit in the Doppler column or the range row of a peak
/// more than `blanking_db` stronger (window sidelobes of that peak), and
/// peaks within two range bins of one more than `sideband_db` stronger.
pub fn consolidate_peaks(peaks: &[CfarHit], velocity_bins: usize, blanking_db: f64, sideband_db: f64) -> Vec<CfarHit> {
    let ratio = 10f64.powf(-blanking_db / 10.0);
    let near_ratio = 10f64.powf(-sideband_db / 10.0);
    let mm = velocity_bins as i64;
    peaks
        .iter()
        .filter(|h| {
            !peaks.iter().any(|o| {
                let dv = (o.m as i64 - h.m as i64).rem_euclid(mm);
                let same_column = dv <= 1 || dv >= mm - 1;
                let same_row = o.l.abs_diff(h.l) <= 1;
                let sidelobe = (same_column != same_row) && h.power < o.power * ratio;
                let sideband = o.l.abs_diff(h.l) <= 2 && h.power < o.power * near_ratio;
                sidelobe || sideband
            })
        })
        .copied()
        .collect()
}

/// Closed-form CA-CFAR detection probability in exponential noise:
/// `(1 + (P_FA^(-1/N) - 1)/(1 + snr))^(-N)`. Exact when the cell under test
/// is itself exponential with mean `1 + snr` (a fluctuating target).
pub fn detection_probability(snr: f64, cfg: &CfarConfig) -> f64 {
    let n = cfg.reference_count() as f64;
    let t = cfg.p_fa.powf(-1.0 / n) - 1.0;
    (1.0 + t / (1.0 + snr.max(0.0))).powf(-n)
}

/// MUSIC pseudo-spectrum denominator `a^H U_n U_n^H a`.
fn music_denominator(noise: &DMatrix<Complex64>, spatial: f64, theta: f64) -> f64 {
    let k_n = noise.nrows();
    let phase = spatial * theta.sin();
    let a = DVector::from_fn(k_n, |k, _| Complex64::from_polar(1.0, phase * k as f64));
    (noise.adjoint() * a).norm_squared()
}

/// Noise subspace of the sample covariance, or an error when the signal
/// rank is below `source_count`.
fn noise_subspace(snapshots: &DMatrix<Complex64>, source_count: usize) -> Result<DMatrix<Complex64>> {
    let (k_n, n_snap) = snapshots.shape();
    if source_count == 0 || source_count >= k_n {
        return Err(Error::Estimation(format!(
            "source_count {source_count} must lie in [1, {})",
            k_n
        )));
    }
    if n_snap == 0 {
        return Err(Error::Estimation("no snapshots".into()));
    }
    let cov = snapshots * snapshots.adjoint() / Complex64::new(n_snap as f64, 0.0);
    let eig = cov.symmetric_eigen();
    let mut order: Vec<usize> = (0..k_n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let largest = eig.eigenvalues[order[k_n - 1]];
    let tol = largest.abs() * 1e-10 * k_n as f64;
    let rank = eig.eigenvalues.iter().filter(|&&v| v > tol && largest > 0.0).count();
    if source_count > rank {
        return Err(Error::Estimation(format!(
            "covariance rank {rank} below source_count {source_count}"
        )));
    }
    let cols: Vec<_> = order[..k_n - source_count]
        .iter()
        .map(|&i| eig.eigenvectors.column(i).into_owned())
        .collect();
    Ok(DMatrix::from_columns(&cols))
}

const MUSIC_GRID: usize = 2048;

fn music_spectrum(noise: &DMatrix<Complex64>, spatial: f64) -> (Vec<f64>, Vec<f64>) {
    let half = std::f64::consts::FRAC_PI_2;
    let step = std::f64::consts::PI / (MUSIC_GRID - 1) as f64;
    let grid: Vec<f64> = (0..MUSIC_GRID).map(|i| -half + i as f64 * step).collect();
    let den = grid.iter().map(|&t| music_denominator(noise, spatial, t)).collect();
    (grid, den)
}

fn refine(grid: &[f64], den: &[f64], i: usize) -> f64 {
    if i == 0 || i + 1 == grid.len() {
        return grid[i];
    }
    let (a, b, c) = (den[i - 1], den[i], den[i + 1]);
    let curv = a - 2.0 * b + c;
    let step = grid[1] - grid[0];
    if curv > 0.0 {
        grid[i] + 0.5 * (a - c) / curv * step
    } else {
        grid[i]
    }
}

/// MUSIC estimates of `source_count` arrival angles (radians from
/// boresight), ordered by spectrum depth.
pub fn music_angles(
    snapshots: &DMatrix<Complex64>,
    array: &BsPose,
    wavelength: f64,
    source_count: usize,
) -> Result<Vec<f64>> {
    let noise = noise_subspace(snapshots, source_count)?;
    let spatial = 2.0 * std::f64::consts::PI / wavelength * array.element_spacing;
    let (grid, den) = music_spectrum(&noise, spatial);
    let mut minima: Vec<usize> = (0..grid.len())
        .filter(|&i| {
            let left = if i > 0 { den[i - 1] } else { f64::INFINITY };
            let right = if i + 1 < den.len() { den[i + 1] } else { f64::INFINITY };
            den[i] <= left && den[i] < right
        })
        .collect();
    minima.sort_by(|&a, &b| den[a].total_cmp(&den[b]));
    if minima.is_empty() {
        let best = (0..den.len()).min_by(|&a, &b| den[a].total_cmp(&den[b])).unwrap_or(0);
        minima.push(best);
    }
    Ok(minima
        .into_iter()
        .take(source_count)
        .map(|i| refine(&grid, &den, i))
        .collect())
}

/// Single best MUSIC angle.
pub fn music_angle(
    snapshots: &DMatrix<Complex64>,
    array: &BsPose,
    wavelength: f64,
    source_count: usize,
) -> Result<f64> {
    let noise = noise_subspace(snapshots, source_count)?;
    let spatial = 2.0 * std::f64::consts::PI / wavelength * array.element_spacing;
    let (grid, den) = music_spectrum(&noise, spatial);
    let best = (0..den.len()).min_by(|&a, &b| den[a].total_cmp(&den[b])).unwrap_or(0);
    Ok(refine(&grid, &den, best))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bs_id: u32,
    pub range_m: f64,
    pub velocity_mps: f64,
    pub angle_rad: f64,
    pub pd: f64,
    pub pr: f64,
    pub snr_est: f64,
    /// Range/velocity cell that produced the detection.
    pub range_bin: usize,
    pub velocity_bin: usize,
}

impl Detection {
    pub fn snr_db(&self) -> f64 {
        10.0 * self.snr_est.log10()
    }
}

pub fn write_detections_csv(path: &std::path::Path, dets: &[Detection]) -> Result<()> {
    use crate::io::fmt9;
    let rows: Vec<Vec<String>> = dets
        .iter()
        .map(|d| {
            vec![
                d.bs_id.to_string(),
                fmt9(d.range_m),
                fmt9(d.velocity_mps),
                fmt9(d.angle_rad),
                fmt9(d.pd),
                fmt9(d.pr),
                fmt9(d.snr_db()),
            ]
        })
        .collect();
    crate::io::write_csv(path, &["bs_id", "range_m", "velocity_mps", "angle_rad", "pd", "pr", "snr_db"], &rows)
}

/// Runs the full per-station chain on one cube. Only positive-beat range
/// bins `1..L/2` are searched.
pub fn detect_station(
    cube: &EchoCube,
    cfg: &CfarConfig,
    bs: &BsPose,
    wf: &WaveformConfig,
) -> Result<Vec<Detection>> {
    if cube.antennas != bs.antenna_count
        || cube.pulses != wf.pulse_count
        || cube.samples != wf.samples_per_pulse
    {
        return Err(Error::input("cube dimensions disagree with station/waveform"));
    }
    let profile = range_profile(cube);
    let map = velocity_profile(&profile, wf);
    let hits: Vec<CfarHit> = ca_cfar(&map, cfg)?
        .into_iter()
        .filter(|h| h.l >= 1 && h.l < map.range_bins / 2)
        .collect();
    let peaks = consolidate_peaks(
        &group_peaks(&hits, map.velocity_bins),
        map.velocity_bins,
        cfg.sidelobe_blanking_db,
        cfg.sideband_blanking_db,
    );
    let lambda = wf.wavelength();
    let mut out = Vec::with_capacity(peaks.len());
    for h in peaks {
        let snaps = profile.doppler_snapshots(h.l, h.m);
        let angle = if bs.antenna_count > 1 {
            music_angle(&snaps, bs, lambda, 1)?
        } else {
            0.0
        };
        out.push(Detection {
            bs_id: bs.id,
            range_m: map.range_at(h.l as f64),
            velocity_mps: map.velocity_at(h.m),
            angle_rad: angle,
            pd: detection_probability(h.snr_est, cfg),
            pr: 0.5,
            snr_est: h.snr_est,
            range_bin: h.l,
            velocity_bin: h.m,
        });
    }
    Ok(out)
}
