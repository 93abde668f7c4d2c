//! Synthetic training and evaluation echoes for the rotor classifier.
//!
//! Positives are small-multirotor returns `1 + g*S/rms(S)`; negatives are a
//! constant return, pure noise, or a slow large rotor (helicopter-like). Every echo carries circular Gaussian
//! noise at a random SNR.

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::features::FeatureVector;
use super::{segment_features, Classifier};
use crate::error::Result;
use crate::rng::{self, complex_gaussian, derive_seed, SimRng};
use crate::scene::RotorConfig;
use crate::waveform::{rotor_echo_at, rotor_envelope, WaveformConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    pub snr_db_min: f64,
    pub snr_db_max: f64,
    pub rotor_gain_min: f64,
    pub rotor_gain_max: f64,
    /// Rotation rate range in revolutions per second.
    pub rotor_rps_min: f64,
    pub rotor_rps_max: f64,
    pub blade_length_min: f64,
    pub blade_length_max: f64,
    pub max_elevation: f64,
    /// Share of negatives that are pure noise.
    pub noise_only_fraction: f64,
    /// Share of negatives that are slow large rotors.
    pub large_rotor_fraction: f64,
    pub large_rotor_rps_min: f64,
    pub large_rotor_rps_max: f64,
    pub large_blade_length_min: f64,
    pub large_blade_length_max: f64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            snr_db_min: 15.0,
            snr_db_max: 70.0,
            rotor_gain_min: 0.1,
            rotor_gain_max: 0.3,
            rotor_rps_min: 100.0,
            rotor_rps_max: 200.0,
            blade_length_min: 0.06,
            blade_length_max: 0.15,
            max_elevation: 0.6,
            noise_only_fraction: 0.3,
            large_rotor_fraction: 0.3,
            large_rotor_rps_min: 3.0,
            large_rotor_rps_max: 10.0,
            large_blade_length_min: 1.0,
            large_blade_length_max: 3.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EchoClass {
    Rotor,
    Static,
    Noise,
    LargeRotor,
}

fn uniform(rng: &mut SimRng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

/// Random small-multirotor configuration drawn from `cfg`.
pub fn random_rotor(rng: &mut SimRng, cfg: &CorpusConfig) -> RotorConfig {
    RotorConfig {
        rotor_count: rng.random_range(2..=6),
        blade_count: rng.random_range(2..=3),
        blade_length: uniform(rng, cfg.blade_length_min, cfg.blade_length_max),
        rotation_rate: 2.0 * std::f64::consts::PI * uniform(rng, cfg.rotor_rps_min, cfg.rotor_rps_max),
        azimuth: uniform(rng, -std::f64::consts::PI, std::f64::consts::PI),
        elevation: uniform(rng, 0.0, cfg.max_elevation),
    }
}

/// Random helicopter-like single rotor drawn from `cfg`.
pub fn random_large_rotor(rng: &mut SimRng, cfg: &CorpusConfig) -> RotorConfig {
    RotorConfig {
        rotor_count: 1,
        blade_count: rng.random_range(2..=4),
        blade_length: uniform(rng, cfg.large_blade_length_min, cfg.large_blade_length_max),
        rotation_rate: 2.0 * std::f64::consts::PI * uniform(rng, cfg.large_rotor_rps_min, cfg.large_rotor_rps_max),
        azimuth: uniform(rng, -std::f64::consts::PI, std::f64::consts::PI),
        elevation: uniform(rng, 0.0, cfg.max_elevation),
    }
}

/// One echo of `len` samples at the waveform's IF rate.
pub fn synthesize_echo(
    class: EchoClass,
    len: usize,
    wf: &WaveformConfig,
    cfg: &CorpusConfig,
    seed: u64,
) -> Vec<Complex64> {
    let mut rng = rng::seeded(seed);
    let snr = 10f64.powf(uniform(&mut rng, cfg.snr_db_min, cfg.snr_db_max) / 10.0);
    let phase = uniform(&mut rng, 0.0, 2.0 * std::f64::consts::PI);
    let carrier = Complex64::from_polar(1.0, phase);
    let mut echo: Vec<Complex64> = match class {
        EchoClass::Rotor | EchoClass::LargeRotor => {
            let rotor = if class == EchoClass::Rotor { random_rotor(&mut rng, cfg) } else { random_large_rotor(&mut rng, cfg) };
            let gain = uniform(&mut rng, cfg.rotor_gain_min, cfg.rotor_gain_max);
            let t0 = uniform(&mut rng, 0.0, 1.0);
            let fs = wf.sample_rate();
            let s = rotor_echo_at(&rotor, uniform(&mut rng, 5.0, 95.0), wf.wavelength(), (0..len).map(|i| t0 + i as f64 / fs));
            rotor_envelope(&s, gain).into_iter().map(|z| z * carrier).collect()
        }
        EchoClass::Static => vec![carrier; len],
        EchoClass::Noise => vec![Complex64::new(0.0, 0.0); len],
    };
    let noise_power = 1.0 / snr;
    for z in echo.iter_mut() {
        *z += complex_gaussian(&mut rng, noise_power);
    }
    echo
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledFeatures {
    pub class: EchoClass,
    pub features: FeatureVector,
}

/// Feature corpus of `count` positive and `count` negative segments.
pub fn feature_corpus(
    count: usize,
    segment_len: usize,
    wf: &WaveformConfig,
    cfg: &CorpusConfig,
    seed: u64,
) -> Result<Vec<LabeledFeatures>> {
    let mut out = Vec::with_capacity(2 * count);
    let mut pick = rng::seeded(derive_seed(seed, 0xC0));
    for i in 0..2 * count {
        let class = if i % 2 == 0 {
            EchoClass::Rotor
        } else {
            let u = pick.random::<f64>();
            if u < cfg.noise_only_fraction {
                EchoClass::Noise
            } else if u < cfg.noise_only_fraction + cfg.large_rotor_fraction {
                EchoClass::LargeRotor
            } else {
                EchoClass::Static
            }
        };
        let echo = synthesize_echo(class, segment_len, wf, cfg, derive_seed(seed, i as u64 + 1));
        let mag: Vec<f64> = echo.iter().map(|z| z.norm()).collect();
        if let Some(features) = segment_features(&mag)? {
            out.push(LabeledFeatures { class, features });
        }
    }
    Ok(out)
}

/// Trains the default classifier on a fresh synthetic corpus.
pub fn train_default_classifier(
    count: usize,
    segment_count: usize,
    wf: &WaveformConfig,
    cfg: &CorpusConfig,
    seed: u64,
) -> Result<(Classifier, Vec<LabeledFeatures>)> {
    let segment_len = wf.interval_samples() / segment_count;
    let corpus = feature_corpus(count, segment_len, wf, cfg, seed)?;
    let pos: Vec<FeatureVector> =
        corpus.iter().filter(|c| c.class == EchoClass::Rotor).map(|c| c.features).collect();
    let neg: Vec<FeatureVector> =
        corpus.iter().filter(|c| c.class != EchoClass::Rotor).map(|c| c.features).collect();
    let model = super::svm::train_svm(&pos, &neg, super::svm::SvmParams::default())?;
    Ok((Classifier { model, segment_count }, corpus))
}

/// Audit dump of a labeled corpus: one row per segment.
pub fn write_corpus_csv(path: &std::path::Path, corpus: &[LabeledFeatures]) -> Result<()> {
    let mut header = vec!["class".to_string()];
    header.extend(FeatureVector::column_names());
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows: Vec<Vec<String>> = corpus
        .iter()
        .map(|c| {
            let mut row = vec![format!("{:?}", c.class)];
            row.extend(c.features.0.iter().map(|&v| crate::io::fmt9(v)));
            row
        })
        .collect();
    crate::io::write_csv(path, &header, &rows)
}
