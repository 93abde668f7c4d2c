//! Micro-Doppler recognition: STFT, EMD, features, SVM and the
//! per-detection recognition probability.

pub mod corpus;
pub mod emd;
pub mod features;
pub mod stft;
pub mod svm;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

pub use emd::{emd, ImfSet};
pub use features::{extract_features, FeatureVector};
pub use stft::{stft, Spectrogram};
pub use svm::{train_svm, SvmModel, SvmParams};

use crate::error::{Error, Result};

pub const DEFAULT_SEGMENTS: usize = 15;

/// A trained model together with the segmentation it was trained for.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Classifier {
    pub model: SvmModel,
    pub segment_count: usize,
}

impl Classifier {
    pub fn recognition_probability(&self, echo: &[Complex64]) -> Result<f64> {
        recognition_probability(echo, &self.model, self.segment_count)
    }
}

/// Features of one magnitude segment after removing its mean. Returns
/// `None` when the segment carries no fluctuation at all.
pub fn segment_features(magnitude: &[f64]) -> Result<Option<FeatureVector>> {
    let mean = magnitude.iter().sum::<f64>() / magnitude.len().max(1) as f64;
    let x: Vec<f64> = magnitude.iter().map(|v| v - mean).collect();
    if x.iter().all(|v| *v == 0.0) {
        return Ok(None);
    }
    let imfs = emd(&x, features::FEATURE_IMFS)?;
    extract_features(&imfs, &x).map(Some)
}

/// Fraction of `segment_count` equal windows of `|echo|` that the model
/// labels as rotor returns. Flat segments count as negative.
pub fn recognition_probability(echo: &[Complex64], model: &SvmModel, segment_count: usize) -> Result<f64> {
    if segment_count == 0 {
        return Err(Error::input("segment_count must be >= 1"));
    }
    let len = echo.len() / segment_count;
    if len < 8 {
        return Err(Error::input("echo too short for the requested segmentation"));
    }
    let mag: Vec<f64> = echo.iter().map(|z| z.norm()).collect();
    let mut positive = 0usize;
    for s in 0..segment_count {
        if let Some(f) = segment_features(&mag[s * len..(s + 1) * len])? {
            if model.predict(&f) {
                positive += 1;
            }
        }
    }
    Ok(positive as f64 / segment_count as f64)
}

#[cfg(test)]
mod tests {
    use super::corpus::*;
    use super::*;
    use crate::waveform::WaveformConfig;

    #[test]
    fn probability_is_a_segment_fraction() {
        let wf = WaveformConfig::default();
        let cfg = CorpusConfig::default();
        let (clf, _) = train_default_classifier(60, DEFAULT_SEGMENTS, &wf, &cfg, 3).unwrap();
        for (i, class) in [EchoClass::Rotor, EchoClass::Static, EchoClass::Noise].into_iter().enumerate() {
            let echo = synthesize_echo(class, wf.interval_samples(), &wf, &cfg, 100 + i as u64);
            let p = clf.recognition_probability(&echo).unwrap();
            let k = p * 15.0;
            assert!((k - k.round()).abs() < 1e-12 && (0.0..=1.0).contains(&p));
        }
    }

    #[test]
    fn flat_echo_is_never_a_rotor() {
        let wf = WaveformConfig::default();
        let (clf, _) = train_default_classifier(40, DEFAULT_SEGMENTS, &wf, &CorpusConfig::default(), 5).unwrap();
        let echo = vec![Complex64::new(0.3, 0.4); wf.interval_samples()];
        assert_eq!(clf.recognition_probability(&echo).unwrap(), 0.0);
    }
}
