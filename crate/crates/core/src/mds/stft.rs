use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::estimation::hamming;

/// Magnitude spectrogram stored `frame * bins + bin`.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrogram {
    pub magnitude: Vec<f64>,
    pub bins: usize,
    pub frames: usize,
    pub frame_hop: usize,
    pub window_len: usize,
}

impl Spectrogram {
    pub fn at(&self, bin: usize, frame: usize) -> f64 {
        self.magnitude[frame * self.bins + bin]
    }

    /// Total magnitude per frame.
    pub fn frame_energy(&self) -> Vec<f64> {
        self.magnitude.chunks(self.bins).map(|f| f.iter().map(|v| v * v).sum()).collect()
    }
}

/// Hamming-windowed short-time Fourier transform.
pub fn stft(signal: &[Complex64], window_len: usize, hop: usize) -> Result<Spectrogram> {
    if window_len == 0 || hop == 0 || window_len > signal.len() {
        return Err(Error::input("stft: window must be non-empty and no longer than the signal"));
    }
    let win = hamming(window_len);
    let fft = FftPlanner::new().plan_fft_forward(window_len);
    let frames = (signal.len() - window_len) / hop + 1;
    let mut magnitude = Vec::with_capacity(frames * window_len);
    let mut buf = vec![Complex64::new(0.0, 0.0); window_len];
    for f in 0..frames {
        let start = f * hop;
        for (i, b) in buf.iter_mut().enumerate() {
            *b = signal[start + i] * win[i];
        }
        fft.process(&mut buf);
        magnitude.extend(buf.iter().map(|z| z.norm()));
    }
    Ok(Spectrogram { magnitude, bins: window_len, frames, frame_hop: hop, window_len })
}
