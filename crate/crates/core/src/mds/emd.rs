//! Empirical mode decomposition by cubic-spline sifting.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct ImfSet {
    pub imfs: Vec<Vec<f64>>,
    pub residual: Vec<f64>,
}

impl ImfSet {
    /// Sum of all IMFs and the residual.
    pub fn reconstruct(&self) -> Vec<f64> {
        let mut out = self.residual.clone();
        for imf in &self.imfs {
            for (o, v) in out.iter_mut().zip(imf) {
                *o += v;
            }
        }
        out
    }
}

pub const SD_THRESHOLD: f64 = 0.2;
pub const MAX_SIFTS: usize = 100;

/// Indices of local maxima and minima (interior points only).
pub fn extrema(x: &[f64]) -> (Vec<usize>, Vec<usize>) {
    let mut maxima = Vec::new();
    let mut minima = Vec::new();
    for i in 1..x.len().saturating_sub(1) {
        if x[i] > x[i - 1] && x[i] >= x[i + 1] {
            maxima.push(i);
        } else if x[i] < x[i - 1] && x[i] <= x[i + 1] {
            minima.push(i);
        }
    }
    (maxima, minima)
}

pub fn zero_crossings(x: &[f64]) -> usize {
    x.windows(2).filter(|w| (w[0] < 0.0) != (w[1] < 0.0)).count()
}

/// Natural cubic spline through `(xs, ys)` evaluated at `0..n`.
pub fn natural_spline(xs: &[f64], ys: &[f64], n: usize) -> Vec<f64> {
    let k = xs.len();
    debug_assert!(k >= 2 && k == ys.len());
    if k == 2 {
        let slope = (ys[1] - ys[0]) / (xs[1] - xs[0]);
        return (0..n).map(|t| ys[0] + slope * (t as f64 - xs[0])).collect();
    }
    let h: Vec<f64> = xs.windows(2).map(|w| w[1] - w[0]).collect();
    // Tridiagonal system for interior second derivatives (Thomas algorithm).
    let m = k - 2;
    let mut diag = vec![0.0; m];
    let mut upper = vec![0.0; m];
    let mut rhs = vec![0.0; m];
    for i in 0..m {
        diag[i] = 2.0 * (h[i] + h[i + 1]);
        upper[i] = h[i + 1];
        rhs[i] = 6.0 * ((ys[i + 2] - ys[i + 1]) / h[i + 1] - (ys[i + 1] - ys[i]) / h[i]);
    }
    for i in 1..m {
        let w = h[i] / diag[i - 1];
        diag[i] -= w * upper[i - 1];
        rhs[i] -= w * rhs[i - 1];
    }
    let mut second = vec![0.0; k];
    for i in (0..m).rev() {
        let next = if i + 1 < m { second[i + 2] } else { 0.0 };
        second[i + 1] = (rhs[i] - upper[i] * next) / diag[i];
    }

    let mut out = Vec::with_capacity(n);
    let mut seg = 0;
    for t in 0..n {
        let x = t as f64;
        while seg + 2 < k && x > xs[seg + 1] {
            seg += 1;
        }
        let (x0, x1) = (xs[seg], xs[seg + 1]);
        let hh = x1 - x0;
        let a = (x1 - x) / hh;
        let b = (x - x0) / hh;
        out.push(
            a * ys[seg]
                + b * ys[seg + 1]
                + ((a * a * a - a) * second[seg] + (b * b * b - b) * second[seg + 1]) * hh * hh / 6.0,
        );
    }
    out
}

/// Spline envelope through the given extrema, mirrored about both ends.
fn envelope(x: &[f64], idx: &[usize]) -> Vec<f64> {
    let n = x.len();
    let last = (n - 1) as f64;
    let mirror = idx.len().min(2);
    let mut pts: Vec<(f64, f64)> = Vec::with_capacity(idx.len() + 2 * mirror);
    for &i in idx[..mirror].iter().rev() {
        pts.push((-(i as f64), x[i]));
    }
    pts.extend(idx.iter().map(|&i| (i as f64, x[i])));
    for &i in idx[idx.len() - mirror..].iter().rev() {
        pts.push((2.0 * last - i as f64, x[i]));
    }
    pts.dedup_by(|a, b| a.0 == b.0);
    let (xs, ys): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
    natural_spline(&xs, &ys, n)
}

fn can_sift(x: &[f64]) -> bool {
    let (maxima, minima) = extrema(x);
    !maxima.is_empty() && !minima.is_empty() && maxima.len() + minima.len() >= 3
}

fn imf_shape_ok(h: &[f64]) -> bool {
    let (maxima, minima) = extrema(h);
    let e = maxima.len() + minima.len();
    e.abs_diff(zero_crossings(h)) <= 1
}

fn sift(x: &[f64]) -> Vec<f64> {
    let mut h = x.to_vec();
    for _ in 0..MAX_SIFTS {
        let (maxima, minima) = extrema(&h);
        if maxima.is_empty() || minima.is_empty() || maxima.len() + minima.len() < 3 {
            break;
        }
        let upper = envelope(&h, &maxima);
        let lower = envelope(&h, &minima);
        let mut num = 0.0;
        let mut den = 0.0;
        let mut next = Vec::with_capacity(h.len());
        for i in 0..h.len() {
            let mean = 0.5 * (upper[i] + lower[i]);
            let v = h[i] - mean;
            num += mean * mean;
            den += h[i] * h[i];
            next.push(v);
        }
        h = next;
        let sd = if den > 0.0 { num / den } else { 0.0 };
        if sd < SD_THRESHOLD && imf_shape_ok(&h) {
            break;
        }
    }
    h
}

/// Decomposes `signal` into at most `max_imfs` intrinsic mode functions.
///
/// Extraction stops early once the residual has too few extrema to build
/// envelopes. A constant input yields no IMFs.
pub fn emd(signal: &[f64], max_imfs: usize) -> Result<ImfSet> {
    if signal.len() < 8 {
        return Err(Error::input("emd: signal needs at least 8 samples"));
    }
    if signal.iter().any(|v| !v.is_finite()) {
        return Err(Error::input("emd: non-finite sample"));
    }
    let mut residual = signal.to_vec();
    let mut imfs = Vec::new();
    while imfs.len() < max_imfs && can_sift(&residual) {
        let imf = sift(&residual);
        for (r, v) in residual.iter_mut().zip(&imf) {
            *r -= v;
        }
        imfs.push(imf);
    }
    Ok(ImfSet { imfs, residual })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn sine(freq: f64, fs: f64, n: usize) -> Vec<f64> {
        (0..n).map(|t| (2.0 * PI * freq * t as f64 / fs).sin()).collect()
    }

    fn dominant_freq(x: &[f64], fs: f64) -> f64 {
        zero_crossings(x) as f64 / 2.0 * fs / x.len() as f64
    }

    #[test]
    fn spline_reproduces_cubic_interior_and_linear_data() {
        let xs = [0.0, 2.0, 5.0, 9.0];
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 - 0.5 * x).collect();
        let s = natural_spline(&xs, &ys, 10);
        for (t, v) in s.iter().enumerate() {
            assert!((v - (3.0 - 0.5 * t as f64)).abs() < 1e-12);
        }
        let s = natural_spline(&[0.0, 3.0, 6.0], &[0.0, 1.0, 0.0], 7);
        assert!((s[3] - 1.0).abs() < 1e-12);
        assert!((s[0]).abs() < 1e-12 && (s[6]).abs() < 1e-12);
    }

    #[test]
    fn constant_signal_has_no_imfs() {
        let set = emd(&[2.5; 64], 4).unwrap();
        assert!(set.imfs.is_empty());
        assert_eq!(set.residual, vec![2.5; 64]);
    }

    #[test]
    fn pure_sinusoid_first_imf_correlates() {
        let x = sine(50.0, 1000.0, 512);
        let set = emd(&x, 4).unwrap();
        let imf = &set.imfs[0];
        let dot: f64 = imf.iter().zip(&x).map(|(a, b)| a * b).sum();
        let na: f64 = imf.iter().map(|a| a * a).sum::<f64>().sqrt();
        let nb: f64 = x.iter().map(|a| a * a).sum::<f64>().sqrt();
        assert!(dot / (na * nb) > 0.99);
    }

    #[test]
    fn two_tones_separate_by_frequency() {
        let fs = 1000.0;
        let hi = sine(50.0, fs, 1000);
        let lo = sine(5.0, fs, 1000);
        let x: Vec<f64> = hi.iter().zip(&lo).map(|(a, b)| a + b).collect();
        let set = emd(&x, 4).unwrap();
        assert!(set.imfs.len() >= 2);
        let f1 = dominant_freq(&set.imfs[0], fs);
        let f2 = dominant_freq(&set.imfs[1], fs);
        assert!((f1 - 50.0).abs() < 5.0, "imf1 {f1}");
        assert!((f2 - 5.0).abs() < 2.0, "imf2 {f2}");
    }

    #[test]
    fn reconstruction_is_exact() {
        let x: Vec<f64> = (0..700).map(|t| ((t as f64) * 0.37).sin() * (t as f64 * 0.01).cos() + 0.002 * t as f64).collect();
        let set = emd(&x, 6).unwrap();
        let r = set.reconstruct();
        let err: f64 = r.iter().zip(&x).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let norm: f64 = x.iter().map(|a| a * a).sum::<f64>().sqrt();
        assert!(err / norm < 1e-10);
    }

    #[test]
    fn short_signal_rejected() {
        assert!(emd(&[1.0; 5], 2).is_err());
    }
}
