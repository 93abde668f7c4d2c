use serde::{Deserialize, Serialize};

use super::emd::{zero_crossings, ImfSet};
use crate::error::{Error, Result};

pub const FEATURE_IMFS: usize = 4;
pub const FEATURE_DIM: usize = 4 * FEATURE_IMFS;

/// Four descriptors for each of the first four IMFs, stored IMF-major:
/// `[zc, energy, std, zc_ratio]` repeated. Missing IMFs read as zeros.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector(pub [f64; FEATURE_DIM]);

impl FeatureVector {
    pub fn zero_crossing_count(&self, imf: usize) -> f64 {
        self.0[4 * imf]
    }

    pub fn normalized_energy(&self, imf: usize) -> f64 {
        self.0[4 * imf + 1]
    }

    pub fn std_dev(&self, imf: usize) -> f64 {
        self.0[4 * imf + 2]
    }

    pub fn zero_crossing_ratio(&self, imf: usize) -> f64 {
        self.0[4 * imf + 3]
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn column_names() -> Vec<String> {
        (1..=FEATURE_IMFS)
            .flat_map(|d| {
                [
                    format!("imf{d}_zero_crossings"),
                    format!("imf{d}_energy"),
                    format!("imf{d}_std"),
                    format!("imf{d}_zc_ratio"),
                ]
            })
            .collect()
    }
}

fn energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

/// Descriptors of the first four IMFs relative to the decomposed input.
///
/// Standard deviation is divided by the input RMS so every feature except
/// the raw zero-crossing count is amplitude invariant. The zero-crossing
/// ratio uses `max(zc(input), 1)` as denominator.
pub fn extract_features(imfs: &ImfSet, input: &[f64]) -> Result<FeatureVector> {
    let e_in = energy(input);
    if !(e_in > 0.0) {
        return Err(Error::UndefinedRatio("input has zero energy".into()));
    }
    let n = input.len() as f64;
    let rms_in = (e_in / n).sqrt();
    let zc_in = zero_crossings(input).max(1) as f64;
    let mut f = [0.0; FEATURE_DIM];
    for (d, imf) in imfs.imfs.iter().take(FEATURE_IMFS).enumerate() {
        let zc = zero_crossings(imf) as f64;
        let mean = imf.iter().sum::<f64>() / n;
        let var = imf.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        f[4 * d] = zc;
        f[4 * d + 1] = energy(imf) / e_in;
        f[4 * d + 2] = var.sqrt() / rms_in;
        f[4 * d + 3] = zc / zc_in;
    }
    Ok(FeatureVector(f))
}
