//! Equivalent Fisher information and the position error bound for hybrid
//! time-of-arrival / angle-of-arrival localization by several arrays.

use std::path::Path;

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::io;
use crate::scene::BsPose;
use crate::waveform::WaveformConfig;
use crate::SPEED_OF_LIGHT;

/// Condition number above which the information matrix counts as singular.
pub const SINGULAR_CONDITION: f64 = 1e12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FimWeights {
    /// Inverse range variance (1/m^2).
    pub lambda_toa: f64,
    /// Inverse angle variance (1/rad^2).
    pub lambda_aoa: f64,
}

impl FimWeights {
    /// Weights implied by a per-sample SNR `snr` on a `K`-element array:
    /// `sigma_r = c / (2B sqrt(2 snr))` and the single-source angle bound
    /// `sigma_theta^2 = 6 / (K (K^2 - 1) snr (2 pi d / lambda)^2)`.
    pub fn from_snr(snr: f64, bs: &BsPose, wf: &WaveformConfig) -> Self {
        if !(snr > 0.0) {
            return Self { lambda_toa: 0.0, lambda_aoa: 0.0 };
        }
        let sigma_r = SPEED_OF_LIGHT / (2.0 * wf.bandwidth_hz * (2.0 * snr).sqrt());
        let k = bs.antenna_count as f64;
        let lambda_aoa = if bs.antenna_count >= 2 {
            let spatial = 2.0 * std::f64::consts::PI * bs.element_spacing / wf.wavelength();
            k * (k * k - 1.0) * snr * spatial * spatial / 6.0
        } else {
            0.0
        };
        Self { lambda_toa: 1.0 / (sigma_r * sigma_r), lambda_aoa }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Efim {
    pub matrix: Matrix2<f64>,
    pub contributing_antennas: usize,
}

/// Information one antenna carries about the UAV position:
/// `lambda_toa q q^T + lambda_aoa / r^2 q_perp q_perp^T`, where `q` points
/// from the UAV toward the antenna.
pub fn fim_antenna(p_uav: Vec2, p_antenna: Vec2, w: FimWeights) -> Result<Matrix2<f64>> {
    let r = p_uav.distance(p_antenna);
    if !(r > 0.0) {
        return Err(Error::DegenerateGeometry("antenna coincides with UAV".into()));
    }
    let theta = p_uav.bearing_to(p_antenna);
    let q = Vector2::new(theta.cos(), theta.sin());
    let q_perp = Vector2::new(theta.sin(), -theta.cos());
    Ok(q * q.transpose() * w.lambda_toa + q_perp * q_perp.transpose() * (w.lambda_aoa / (r * r)))
}

/// Sum of per-antenna information over every element of every station.
/// `weights[n]` applies to all antennas of `stations[n]`.
pub fn efim(stations: &[BsPose], p_uav: Vec2, weights: &[FimWeights]) -> Result<Efim> {
    if stations.len() != weights.len() {
        return Err(Error::input("one weight pair per station required"));
    }
    let mut m = Matrix2::zeros();
    let mut count = 0;
    for (bs, w) in stations.iter().zip(weights) {
        if w.lambda_toa <= 0.0 && w.lambda_aoa <= 0.0 {
            continue;
        }
        for k in 0..bs.antenna_count {
            m += fim_antenna(p_uav, bs.antenna_position(k), *w)?;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::input("no contributing antenna"));
    }
    Ok(Efim { matrix: m, contributing_antennas: count })
}

/// Trace of the inverse information matrix (m^2).
pub fn crlb(efim: &Efim) -> Result<f64> {
    let m = efim.matrix;
    let eig = m.symmetric_eigenvalues();
    let (lo, hi) = (eig.min(), eig.max());
    let cond = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if !(cond <= SINGULAR_CONDITION) {
        return Err(Error::Unobservable(cond));
    }
    Ok(1.0 / eig[0] + 1.0 / eig[1])
}

/// Bound at `p_uav` with each station's weights derived from its SNR there.
pub fn crlb_at(
    stations: &[BsPose],
    p_uav: Vec2,
    snr_of: impl Fn(&BsPose) -> f64,
    wf: &WaveformConfig,
) -> Result<f64> {
    let weights: Vec<FimWeights> = stations.iter().map(|s| FimWeights::from_snr(snr_of(s), s, wf)).collect();
    crlb(&efim(stations, p_uav, &weights)?)
}

pub fn write_crlb_csv(path: &Path, rows: &[(Vec2, Option<f64>)]) -> Result<()> {
    let rows: Vec<Vec<String>> = rows
        .iter()
        .map(|(p, v)| vec![io::fmt9(p.x), io::fmt9(p.y), v.map_or("inf".to_string(), io::fmt9)])
        .collect();
    io::write_csv(path, &["x_m", "y_m", "crlb_m2"], &rows)
}
