//! LFMCW waveform parameters and baseband echo synthesis.
//!
//! Synthesis happens directly on the de-chirped (IF) signal. A scatterer at
//! delay `tau` becomes `exp(j*2*pi*(mu*tau*t + f0*tau))`, so positive beat
//! frequencies map to range and a receding scatterer advances its slow-time
//! phase, landing in a positive Doppler bin.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::scene::{BsPose, PropagationPath, RotorConfig};
use crate::SPEED_OF_LIGHT;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WaveformConfig {
    pub carrier_hz: f64,
    pub bandwidth_hz: f64,
    pub pulse_duration_s: f64,
    pub samples_per_pulse: usize,
    pub pulse_count: usize,
    pub amplitude: f64,
}

impl Default for WaveformConfig {
    fn default() -> Self {
        Self {
            carrier_hz: 24e9,
            bandwidth_hz: 100e6,
            pulse_duration_s: 1e-3,
            samples_per_pulse: 128,
            pulse_count: 64,
            amplitude: 1.0,
        }
    }
}

impl WaveformConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.carrier_hz > 0.0 && self.bandwidth_hz > 0.0 && self.pulse_duration_s > 0.0) {
            return Err(Error::config("waveform: carrier, bandwidth and pulse duration must be positive"));
        }
        if !self.samples_per_pulse.is_power_of_two() || !self.pulse_count.is_power_of_two() {
            return Err(Error::config("waveform: samples_per_pulse and pulse_count must be powers of two"));
        }
        if self.samples_per_pulse < 8 || self.pulse_count < 8 {
            return Err(Error::config("waveform: need at least 8 samples and 8 pulses"));
        }
        if !(self.amplitude > 0.0) {
            return Err(Error::config("waveform: amplitude must be positive"));
        }
        Ok(())
    }

    /// Chirp slope in Hz/s.
    pub fn slope(&self) -> f64 {
        self.bandwidth_hz / self.pulse_duration_s
    }

    pub fn sample_rate(&self) -> f64 {
        self.samples_per_pulse as f64 / self.pulse_duration_s
    }

    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_hz
    }

    /// Range covered by one fast-time FFT bin.
    pub fn range_bin_m(&self) -> f64 {
        SPEED_OF_LIGHT * self.sample_rate()
            / (2.0 * self.samples_per_pulse as f64 * self.slope())
    }

    /// Velocity covered by one slow-time FFT bin.
    pub fn velocity_bin_mps(&self) -> f64 {
        SPEED_OF_LIGHT / (2.0 * self.carrier_hz * self.pulse_count as f64 * self.pulse_duration_s)
    }

    /// Largest range whose beat frequency stays below Nyquist.
    pub fn max_range_m(&self) -> f64 {
        self.range_bin_m() * self.samples_per_pulse as f64 / 2.0
    }

    pub fn max_velocity_mps(&self) -> f64 {
        self.velocity_bin_mps() * self.pulse_count as f64 / 2.0
    }

    /// Number of complex samples in one coherent interval (M * L).
    pub fn interval_samples(&self) -> usize {
        self.samples_per_pulse * self.pulse_count
    }
}

/// Complex samples indexed `(antenna, pulse, sample)`, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct EchoCube {
    pub antennas: usize,
    pub pulses: usize,
    pub samples: usize,
    pub data: Vec<Complex64>,
    pub config: WaveformConfig,
    pub bs_id: u32,
}

impl EchoCube {
    pub fn zeros(antennas: usize, cfg: &WaveformConfig, bs_id: u32) -> Self {
        let (m, l) = (cfg.pulse_count, cfg.samples_per_pulse);
        Self {
            antennas,
            pulses: m,
            samples: l,
            data: vec![Complex64::new(0.0, 0.0); antennas * m * l],
            config: cfg.clone(),
            bs_id,
        }
    }

    #[inline]
    pub fn index(&self, k: usize, m: usize, l: usize) -> usize {
        (k * self.pulses + m) * self.samples + l
    }

    pub fn get(&self, k: usize, m: usize, l: usize) -> Complex64 {
        self.data[self.index(k, m, l)]
    }

    pub fn energy(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    /// Little-endian f32 interleaved I/Q in `(k, m, l)` order.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.data.len() * 8);
        for z in &self.data {
            out.extend_from_slice(&(z.re as f32).to_le_bytes());
            out.extend_from_slice(&(z.im as f32).to_le_bytes());
        }
        out
    }
}

/// Synthesizes the IF cube for one station: one tone per path plus noise.
pub fn synthesize_if_cube(
    paths: &[PropagationPath],
    cfg: &WaveformConfig,
    bs: &BsPose,
    noise_power: f64,
    seed: u64,
) -> Result<EchoCube> {
    synthesize_if_cube_modulated(paths, &[], cfg, bs, noise_power, seed)
}

/// Like [`synthesize_if_cube`], but path `i` is multiplied sample-by-sample by
/// `envelopes[i]` (length M*L, indexed `m*L + l`) when present.
pub fn synthesize_if_cube_modulated(
    paths: &[PropagationPath],
    envelopes: &[Option<&[Complex64]>],
    cfg: &WaveformConfig,
    bs: &BsPose,
    noise_power: f64,
    seed: u64,
) -> Result<EchoCube> {
    cfg.validate()?;
    if !(noise_power >= 0.0) {
        return Err(Error::input("noise_power must be non-negative"));
    }
    let (k_n, m_n, l_n) = (bs.antenna_count, cfg.pulse_count, cfg.samples_per_pulse);
    let mut cube = EchoCube::zeros(k_n, cfg, bs.id);
    let mu = cfg.slope();
    let nyquist = cfg.sample_rate() / 2.0;
    let dt = 1.0 / cfg.sample_rate();
    let lambda = cfg.wavelength();
    let two_pi = 2.0 * std::f64::consts::PI;

    let mut tone = vec![Complex64::new(0.0, 0.0); m_n * l_n];
    for (i, path) in paths.iter().enumerate() {
        let envelope = envelopes.get(i).copied().flatten();
        if let Some(env) = envelope {
            if env.len() != m_n * l_n {
                return Err(Error::input("envelope length must equal pulse_count * samples_per_pulse"));
            }
        }
        let tau_first = 2.0 * path.apparent_range / SPEED_OF_LIGHT;
        let tau_last = 2.0
            * (path.apparent_range + path.apparent_velocity * (m_n - 1) as f64 * cfg.pulse_duration_s)
            / SPEED_OF_LIGHT;
        let beat = mu * tau_first.max(tau_last);
        if beat >= nyquist || tau_first.min(tau_last) < 0.0 {
            return Err(Error::RangeAmbiguity { beat_hz: beat, nyquist_hz: nyquist });
        }

        let amp = cfg.amplitude * path.power_w.sqrt();
        for m in 0..m_n {
            let range = path.apparent_range + path.apparent_velocity * m as f64 * cfg.pulse_duration_s;
            let tau = 2.0 * range / SPEED_OF_LIGHT;
            // Reduce the carrier phase in cycles before scaling by 2*pi.
            let carrier_cycles = (cfg.carrier_hz * tau).fract();
            let start = Complex64::from_polar(amp, two_pi * carrier_cycles);
            let step = Complex64::from_polar(1.0, two_pi * mu * tau * dt);
            let mut z = start;
            for l in 0..l_n {
                tone[m * l_n + l] = match envelope {
                    Some(env) => z * env[m * l_n + l],
                    None => z,
                };
                z *= step;
            }
        }

        let spatial = two_pi / lambda * bs.element_spacing * path.apparent_angle.sin();
        for k in 0..k_n {
            let steer = Complex64::from_polar(1.0, spatial * k as f64);
            let base = k * m_n * l_n;
            for (dst, src) in cube.data[base..base + m_n * l_n].iter_mut().zip(&tone) {
                *dst += src * steer;
            }
        }
    }

    if noise_power > 0.0 {
        let mut rng = rng::seeded(seed);
        for z in cube.data.iter_mut() {
            *z += rng::complex_gaussian(&mut rng, noise_power);
        }
    }
    Ok(cube)
}

/// Coherent rotor return `S_sigma(t)` sampled at the IF rate over one interval.
///
/// Each blade contributes a sinc-shaped flash whenever it is perpendicular to
/// the line of sight, with phase `Phi = (4*pi/lambda)(L/2) cos(beta) cos(theta_n + Omega*t - alpha)`.
pub fn synthesize_rotor_echo(
    rotor: &RotorConfig,
    range_m: f64,
    cfg: &WaveformConfig,
    wavelength: f64,
) -> Vec<Complex64> {
    let n = cfg.interval_samples();
    let fs = cfg.sample_rate();
    rotor_echo_at(rotor, range_m, wavelength, (0..n).map(|i| i as f64 / fs))
}

/// Evaluates the rotor return at arbitrary times.
pub fn rotor_echo_at(
    rotor: &RotorConfig,
    range_m: f64,
    wavelength: f64,
    times: impl Iterator<Item = f64>,
) -> Vec<Complex64> {
    let pi = std::f64::consts::PI;
    let bulk = Complex64::from_polar(rotor.blade_length, -4.0 * pi * range_m / wavelength);
    let k = 2.0 * pi * rotor.blade_length / wavelength * rotor.elevation.cos();
    let blades = rotor.blade_count.max(1);
    let scale = rotor.rotor_count as f64;
    times
        .map(|t| {
            let mut acc = Complex64::new(0.0, 0.0);
            for b in 0..blades {
                let theta = 2.0 * pi * b as f64 / blades as f64;
                let c = (theta + rotor.rotation_rate * t - rotor.azimuth).cos();
                let x = k * c;
                // Phi equals x: (4*pi/lambda)(L/2) = 2*pi*L/lambda.
                acc += Complex64::from_polar(sinc(x), -x);
            }
            bulk * acc * scale
        })
        .collect()
}

/// Unnormalized sinc, `sin(x)/x`.
pub fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        1.0 - x * x / 6.0
    } else {
        x.sin() / x
    }
}

/// Turns a rotor return into a multiplicative envelope `1 + g*S/rms(S)`.
pub fn rotor_envelope(echo: &[Complex64], gain: f64) -> Vec<Complex64> {
    let rms = (echo.iter().map(|z| z.norm_sqr()).sum::<f64>() / echo.len().max(1) as f64).sqrt();
    let s = if rms > 0.0 { gain / rms } else { 0.0 };
    echo.iter().map(|z| Complex64::new(1.0, 0.0) + z * s).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec2;
    use crate::scene::PathKind;

    fn bs(k: usize) -> BsPose {
        BsPose {
            id: 3,
            position: Vec2::default(),
            rotation: 0.0,
            antenna_count: k,
            element_spacing: WaveformConfig::default().wavelength() / 2.0,
            tx_power: 1.0,
            tx_gain: 10.0,
            rx_gain: 10.0,
            beamwidth_3db: 0.2215,
        }
    }

    pub(crate) fn path(range: f64, angle: f64, velocity: f64, power: f64) -> PropagationPath {
        PropagationPath {
            kind: PathKind::Direct,
            uav_id: 0,
            reflector_id: None,
            total_path_length: 2.0 * range,
            apparent_range: range,
            apparent_angle: angle,
            apparent_velocity: velocity,
            snr: power / 1e-15,
            power_w: power,
        }
    }

    #[test]
    fn table_values_derive_expected_axes() {
        let cfg = WaveformConfig::default();
        assert_eq!(cfg.slope(), 1e11);
        assert_eq!(cfg.sample_rate(), 128e3);
        assert!((cfg.range_bin_m() - 1.49896229).abs() < 1e-8);
        assert!((cfg.velocity_bin_mps() - 0.0975887).abs() < 1e-6);
        assert!((cfg.max_range_m() - 95.9335866).abs() < 1e-6);
    }

    #[test]
    fn zero_input_gives_zero_cube() {
        let cube = synthesize_if_cube(&[], &WaveformConfig::default(), &bs(4), 0.0, 1).unwrap();
        assert!(cube.data.iter().all(|z| z.norm() == 0.0));
        assert_eq!(cube.data.len(), 4 * 64 * 128);
    }

    #[test]
    fn broadside_path_is_identical_across_antennas() {
        let cfg = WaveformConfig::default();
        let cube = synthesize_if_cube(&[path(20.0, 0.0, 0.3, 1.0)], &cfg, &bs(4), 0.0, 1).unwrap();
        for m in 0..cfg.pulse_count {
            for l in 0..cfg.samples_per_pulse {
                let z0 = cube.get(0, m, l);
                for k in 1..4 {
                    assert_eq!(cube.get(k, m, l), z0);
                }
            }
        }
    }

    #[test]
    fn antenna_phase_gradient_follows_steering_vector() {
        let cfg = WaveformConfig::default();
        let b = bs(4);
        let theta = 0.4;
        let cube = synthesize_if_cube(&[path(20.0, theta, 0.0, 1.0)], &cfg, &b, 0.0, 1).unwrap();
        let expected = 2.0 * std::f64::consts::PI / cfg.wavelength() * b.element_spacing * theta.sin();
        let ratio = cube.get(1, 5, 7) / cube.get(0, 5, 7);
        assert!((ratio.arg() - crate::geometry::wrap_angle(expected)).abs() < 1e-9);
    }

    #[test]
    fn beyond_nyquist_is_a_range_ambiguity() {
        let cfg = WaveformConfig::default();
        let err = synthesize_if_cube(&[path(100.0, 0.0, 0.0, 1.0)], &cfg, &bs(1), 0.0, 1);
        assert!(matches!(err, Err(Error::RangeAmbiguity { .. })));
    }

    #[test]
    fn same_seed_same_cube() {
        let cfg = WaveformConfig::default();
        let p = [path(30.0, 0.1, 0.5, 1e-14)];
        let a = synthesize_if_cube(&p, &cfg, &bs(2), 1e-15, 42).unwrap();
        let b = synthesize_if_cube(&p, &cfg, &bs(2), 1e-15, 42).unwrap();
        assert_eq!(a.to_le_bytes(), b.to_le_bytes());
        let c = synthesize_if_cube(&p, &cfg, &bs(2), 1e-15, 43).unwrap();
        assert_ne!(a.data, c.data);
    }

    #[test]
    fn energy_scales_with_amplitude_squared() {
        let cfg = WaveformConfig::default();
        let a = synthesize_if_cube(&[path(30.0, 0.2, 0.1, 1.0), path(12.0, -0.3, 0.0, 0.5)], &cfg, &bs(2), 0.0, 0).unwrap();
        let b = synthesize_if_cube(&[path(30.0, 0.2, 0.1, 9.0), path(12.0, -0.3, 0.0, 4.5)], &cfg, &bs(2), 0.0, 0).unwrap();
        assert!((b.energy() / a.energy() - 9.0).abs() < 1e-9);
    }

    fn quad() -> RotorConfig {
        RotorConfig {
            rotor_count: 1,
            blade_count: 2,
            blade_length: 0.1,
            rotation_rate: 2.0 * std::f64::consts::PI * 150.0,
            azimuth: 0.3,
            elevation: 0.2,
        }
    }

    #[test]
    fn rotor_elevation_ninety_degrees_is_constant() {
        let mut r = quad();
        r.elevation = std::f64::consts::FRAC_PI_2;
        r.rotor_count = 3;
        let cfg = WaveformConfig::default();
        let s = synthesize_rotor_echo(&r, 40.0, &cfg, cfg.wavelength());
        for z in &s {
            assert!((z.norm() - 3.0 * 2.0 * 0.1).abs() < 1e-9);
        }
    }

    #[test]
    fn identical_rotors_add_coherently() {
        let cfg = WaveformConfig::default();
        let one = synthesize_rotor_echo(&quad(), 40.0, &cfg, cfg.wavelength());
        let mut r2 = quad();
        r2.rotor_count = 2;
        let two = synthesize_rotor_echo(&r2, 40.0, &cfg, cfg.wavelength());
        for (a, b) in one.iter().zip(&two) {
            assert!((b - a * 2.0).norm() < 1e-12);
        }
    }

    #[test]
    fn rotor_magnitude_is_periodic_in_rotation() {
        let r = quad();
        let period = 2.0 * std::f64::consts::PI / r.rotation_rate;
        let lambda = WaveformConfig::default().wavelength();
        let times: Vec<f64> = (0..500).map(|i| i as f64 * 1.3e-5).collect();
        let a = rotor_echo_at(&r, 30.0, lambda, times.iter().copied());
        let b = rotor_echo_at(&r, 30.0, lambda, times.iter().map(|t| t + period));
        for (x, y) in a.iter().zip(&b) {
            assert!((x.norm() - y.norm()).abs() <= 1e-9 * x.norm().max(1e-12));
        }
    }

    #[test]
    fn envelope_has_unit_mean_offset() {
        let cfg = WaveformConfig::default();
        let s = synthesize_rotor_echo(&quad(), 40.0, &cfg, cfg.wavelength());
        let env = rotor_envelope(&s, 0.2);
        let dev: f64 = env.iter().map(|z| (z - 1.0).norm_sqr()).sum::<f64>() / env.len() as f64;
        assert!((dev - 0.04).abs() < 1e-9);
    }
}
