//! Scenario geometry and propagation-path enumeration.
//!
//! Every scatterer spawns a direct return plus, for each reflector, the two
//! first-order ghosts and one second-order ghost. Angles stored on a path are
//! local to the receiving array (world bearing minus the station rotation).

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, Rect, Vec2};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BsPose {
    pub id: u32,
    pub position: Vec2,
    /// Boresight direction in world coordinates.
    pub rotation: f64,
    pub antenna_count: usize,
    pub element_spacing: f64,
    pub tx_power: f64,
    pub tx_gain: f64,
    pub rx_gain: f64,
    pub beamwidth_3db: f64,
}

impl BsPose {
    pub fn validate(&self) -> Result<()> {
        if self.antenna_count < 1 {
            return Err(Error::config(format!("station {}: antenna_count must be >= 1", self.id)));
        }
        if !(self.element_spacing > 0.0) || !(self.tx_power > 0.0) {
            return Err(Error::config(format!(
                "station {}: element_spacing and tx_power must be positive",
                self.id
            )));
        }
        if !(self.tx_gain > 0.0 && self.rx_gain > 0.0) {
            return Err(Error::config(format!("station {}: gains must be positive", self.id)));
        }
        if !(self.beamwidth_3db > 0.0 && self.beamwidth_3db < std::f64::consts::PI) {
            return Err(Error::config(format!(
                "station {}: beamwidth_3db must lie in (0, pi)",
                self.id
            )));
        }
        if !self.position.is_finite() || !self.rotation.is_finite() {
            return Err(Error::config(format!("station {}: non-finite pose", self.id)));
        }
        Ok(())
    }

    /// Position of antenna element `k` (element 0 sits at the station origin,
    /// the array axis is perpendicular to boresight).
    pub fn antenna_position(&self, k: usize) -> Vec2 {
        let axis = Vec2::new(-self.rotation.sin(), self.rotation.cos());
        self.position + axis * (k as f64 * self.element_spacing)
    }

    /// Bearing of a world point relative to boresight.
    pub fn local_angle_to(&self, p: Vec2) -> f64 {
        wrap_angle(self.position.bearing_to(p) - self.rotation)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RotorConfig {
    pub rotor_count: u32,
    pub blade_count: u32,
    pub blade_length: f64,
    /// Rad/s.
    pub rotation_rate: f64,
    pub azimuth: f64,
    pub elevation: f64,
}

impl RotorConfig {
    /// A scatterer without rotating parts.
    pub fn none() -> Self {
        Self {
            rotor_count: 0,
            blade_count: 0,
            blade_length: 1.0,
            rotation_rate: 0.0,
            azimuth: 0.0,
            elevation: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rotor_count >= 1 && self.blade_count < 1 {
            return Err(Error::config("rotor with zero blades"));
        }
        if !(self.blade_length > 0.0) {
            return Err(Error::config("blade_length must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UavState {
    pub id: u32,
    pub position: Vec2,
    /// Planar velocity; per-station radial speeds are its projections.
    pub velocity: Vec2,
    pub rcs: f64,
    pub rotor: RotorConfig,
    pub is_target: bool,
}

impl UavState {
    /// Radial velocity seen from `from` (positive when receding).
    pub fn radial_velocity(&self, from: Vec2) -> f64 {
        from.unit_to(self.position).map_or(0.0, |u| u.dot(self.velocity))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Reflector {
    pub id: u32,
    pub position: Vec2,
    pub rcs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scene {
    pub area: Rect,
    pub stations: Vec<BsPose>,
    pub uavs: Vec<UavState>,
    pub reflectors: Vec<Reflector>,
}

impl Scene {
    pub fn validate(&self) -> Result<()> {
        if !(self.area.width > 0.0 && self.area.height > 0.0) {
            return Err(Error::config("scene area must have positive size"));
        }
        for bs in &self.stations {
            bs.validate()?;
        }
        for u in &self.uavs {
            if !(u.rcs > 0.0) {
                return Err(Error::config(format!("uav {}: rcs must be positive", u.id)));
            }
            if !u.position.is_finite() || !u.velocity.is_finite() {
                return Err(Error::config(format!("uav {}: non-finite state", u.id)));
            }
            u.rotor.validate()?;
        }
        for r in &self.reflectors {
            if !(r.rcs > 0.0) || !r.position.is_finite() {
                return Err(Error::config(format!("reflector {}: invalid", r.id)));
            }
        }
        Ok(())
    }

    pub fn station(&self, id: u32) -> Option<&BsPose> {
        self.stations.iter().find(|s| s.id == id)
    }

    pub fn uav(&self, id: u32) -> Option<&UavState> {
        self.uavs.iter().find(|u| u.id == id)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PathKind {
    /// BS -> UAV -> BS.
    Direct,
    /// BS -> reflector -> UAV -> BS.
    Ghost1,
    /// BS -> UAV -> reflector -> BS.
    Ghost2,
    /// BS -> reflector -> UAV -> reflector -> BS.
    Ghost2nd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropagationPath {
    pub kind: PathKind,
    pub uav_id: u32,
    pub reflector_id: Option<u32>,
    pub total_path_length: f64,
    pub apparent_range: f64,
    /// Arrival angle relative to boresight.
    pub apparent_angle: f64,
    /// Half the rate of change of the path length.
    pub apparent_velocity: f64,
    /// Received power over noise power, per sample.
    pub snr: f64,
    /// Received power in watts.
    pub power_w: f64,
}

impl PropagationPath {
    /// World position where this path would be mapped by range/angle calibration.
    pub fn apparent_position(&self, bs: &BsPose) -> Vec2 {
        bs.position + Vec2::from_bearing(bs.rotation + self.apparent_angle) * self.apparent_range
    }
}

/// Enumerates every path from the scene's scatterers into one station.
///
/// Paths whose SNR falls below `snr_floor_db` are dropped.
pub fn enumerate_paths(
    scene: &Scene,
    bs: &BsPose,
    wavelength: f64,
    noise_power: f64,
    snr_floor_db: f64,
) -> Result<Vec<PropagationPath>> {
    if !(noise_power > 0.0) {
        return Err(Error::input("noise_power must be positive"));
    }
    if !bs.position.is_finite() {
        return Err(Error::input("non-finite station position"));
    }
    let floor = 10f64.powf(snr_floor_db / 10.0);
    let four_pi = 4.0 * std::f64::consts::PI;
    let mut paths = Vec::new();

    for uav in &scene.uavs {
        if !uav.position.is_finite() {
            return Err(Error::input(format!("uav {} position not finite", uav.id)));
        }
        let r = bs.position.distance(uav.position);
        if r == 0.0 {
            return Err(Error::DegenerateGeometry(format!(
                "uav {} coincides with station {}",
                uav.id, bs.id
            )));
        }
        let u_bs_uav = (uav.position - bs.position) * (1.0 / r);
        let v_direct = u_bs_uav.dot(uav.velocity);
        let p_direct = bs.tx_power * bs.tx_gain * bs.rx_gain * wavelength * wavelength * uav.rcs
            / (four_pi.powi(3) * r.powi(4));
        let uav_angle = bs.local_angle_to(uav.position);

        let mut push = |kind, reflector_id, length: f64, angle, velocity, power: f64| {
            let snr = power / noise_power;
            if snr >= floor {
                paths.push(PropagationPath {
                    kind,
                    uav_id: uav.id,
                    reflector_id,
                    total_path_length: length,
                    apparent_range: length / 2.0,
                    apparent_angle: angle,
                    apparent_velocity: velocity,
                    snr,
                    power_w: power,
                });
            }
        };

        push(PathKind::Direct, None, 2.0 * r, uav_angle, v_direct, p_direct);

        for refl in &scene.reflectors {
            if !refl.position.is_finite() {
                return Err(Error::input(format!("reflector {} position not finite", refl.id)));
            }
            let r1 = refl.position.distance(uav.position);
            let r2 = refl.position.distance(bs.position);
            if r1 == 0.0 || r2 == 0.0 {
                return Err(Error::DegenerateGeometry(format!(
                    "reflector {} coincides with uav {} or station {}",
                    refl.id, uav.id, bs.id
                )));
            }
            let u_refl_uav = (uav.position - refl.position) * (1.0 / r1);
            let v_refl = u_refl_uav.dot(uav.velocity);
            // One extra bistatic bounce off the reflector.
            let bounce = refl.rcs * r * r / (four_pi * r1 * r1 * r2 * r2);
            let p_ghost = p_direct * bounce;
            let refl_angle = bs.local_angle_to(refl.position);
            let first_len = r + r1 + r2;
            let first_vel = 0.5 * (v_direct + v_refl);
            push(PathKind::Ghost1, Some(refl.id), first_len, uav_angle, first_vel, p_ghost);
            push(PathKind::Ghost2, Some(refl.id), first_len, refl_angle, first_vel, p_ghost);
            push(
                PathKind::Ghost2nd,
                Some(refl.id),
                2.0 * (r1 + r2),
                refl_angle,
                v_refl,
                p_ghost * bounce,
            );
        }
    }
    Ok(paths)
}

/// Draws a Poisson number of reflectors uniformly over `area`.
pub fn sample_reflectors(intensity: f64, area: Rect, rcs: f64, seed: u64) -> Vec<Reflector> {
    if !(intensity > 0.0) {
        return Vec::new();
    }
    let mut rng = rng::seeded(seed);
    let count = Poisson::new(intensity).expect("positive intensity").sample(&mut rng) as u32;
    (0..count)
        .map(|id| {
            let x = area.origin.x + rng.random::<f64>() * area.width;
            let y = area.origin.y + rng.random::<f64>() * area.height;
            Reflector { id, position: Vec2::new(x, y), rcs }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn station_at(x: f64, y: f64) -> BsPose {
        BsPose {
            id: 0,
            position: Vec2::new(x, y),
            rotation: 0.0,
            antenna_count: 8,
            element_spacing: 0.00625,
            tx_power: 1.0,
            tx_gain: 10.0,
            rx_gain: 10.0,
            beamwidth_3db: 0.2215,
        }
    }

    fn uav_at(id: u32, x: f64, y: f64) -> UavState {
        UavState {
            id,
            position: Vec2::new(x, y),
            velocity: Vec2::default(),
            rcs: 0.1,
            rotor: RotorConfig::none(),
            is_target: true,
        }
    }

    fn scene(uavs: Vec<UavState>, reflectors: Vec<Reflector>) -> Scene {
        Scene {
            area: Rect::new(Vec2::new(-50.0, -50.0), 100.0, 100.0),
            stations: vec![station_at(0.0, 0.0)],
            uavs,
            reflectors,
        }
    }

    const LAMBDA: f64 = 0.0125;
    const N0: f64 = 1e-15;

    #[test]
    fn ghost1_geometry_matches_hand_computation() {
        let s = scene(
            vec![uav_at(0, 10.0, 0.0)],
            vec![Reflector { id: 0, position: Vec2::new(0.0, 10.0), rcs: 100.0 }],
        );
        let paths = enumerate_paths(&s, &s.stations[0], LAMBDA, N0, -300.0).unwrap();
        assert_eq!(paths.len(), 4);
        let g1 = paths.iter().find(|p| p.kind == PathKind::Ghost1).unwrap();
        assert!((g1.total_path_length - 34.142135623730951).abs() < 1e-9);
        assert!((g1.apparent_range - 17.071067811865476).abs() < 1e-9);
        assert!(g1.apparent_angle.abs() < 1e-12);
        let g2 = paths.iter().find(|p| p.kind == PathKind::Ghost2).unwrap();
        assert!((g2.apparent_range - g1.apparent_range).abs() < 1e-12);
        assert!((g2.apparent_angle - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
        let g3 = paths.iter().find(|p| p.kind == PathKind::Ghost2nd).unwrap();
        assert!((g3.total_path_length - 2.0 * (200f64.sqrt() + 10.0)).abs() < 1e-9);
    }

    #[test]
    fn direct_snr_follows_radar_equation() {
        let s = scene(vec![uav_at(0, 30.0, 40.0)], vec![]);
        let p = &enumerate_paths(&s, &s.stations[0], LAMBDA, N0, -300.0).unwrap()[0];
        let expected =
            1.0 * 10.0 * 10.0 * LAMBDA * LAMBDA * 0.1 / ((4.0 * std::f64::consts::PI).powi(3) * 50f64.powi(4)) / N0;
        assert!((p.snr / expected - 1.0).abs() < 1e-12);
        assert_eq!(p.kind, PathKind::Direct);
        assert!(p.reflector_id.is_none());
    }

    #[test]
    fn no_reflectors_gives_only_direct_paths() {
        let s = scene(vec![uav_at(0, 5.0, 1.0), uav_at(1, -3.0, 7.0)], vec![]);
        let paths = enumerate_paths(&s, &s.stations[0], LAMBDA, N0, -300.0).unwrap();
        assert_eq!(paths.len(), 2);
        assert!(paths.iter().all(|p| p.kind == PathKind::Direct));
    }

    #[test]
    fn doubling_power_doubles_every_snr() {
        let mut s = scene(
            vec![uav_at(0, 12.0, 3.0)],
            vec![Reflector { id: 0, position: Vec2::new(4.0, 9.0), rcs: 50.0 }],
        );
        let a = enumerate_paths(&s, &s.stations[0], LAMBDA, N0, -300.0).unwrap();
        s.stations[0].tx_power *= 2.0;
        let b = enumerate_paths(&s, &s.stations[0], LAMBDA, N0, -300.0).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((y.snr / x.snr - 2.0).abs() < 1e-12);
            assert_eq!(x.total_path_length, y.total_path_length);
        }
    }

    #[test]
    fn coincident_uav_is_degenerate() {
        let s = scene(vec![uav_at(0, 0.0, 0.0)], vec![]);
        assert!(matches!(
            enumerate_paths(&s, &s.stations[0], LAMBDA, N0, -10.0),
            Err(Error::DegenerateGeometry(_))
        ));
    }

    #[test]
    fn snr_floor_prunes_weak_paths() {
        let s = scene(
            vec![uav_at(0, 10.0, 0.0)],
            vec![Reflector { id: 0, position: Vec2::new(0.0, 10.0), rcs: 1.0 }],
        );
        let all = enumerate_paths(&s, &s.stations[0], LAMBDA, N0, -300.0).unwrap();
        let cut = all.iter().map(|p| p.snr).fold(f64::INFINITY, f64::min);
        let floor_db = 10.0 * (cut * 1.0001).log10();
        let kept = enumerate_paths(&s, &s.stations[0], LAMBDA, N0, floor_db).unwrap();
        assert_eq!(kept.len(), all.len() - 1);
    }

    #[test]
    fn apparent_velocity_is_radial_for_direct_path() {
        let mut u = uav_at(0, 10.0, 0.0);
        u.velocity = Vec2::new(1.5, 3.0);
        let s = scene(vec![u], vec![]);
        let p = &enumerate_paths(&s, &s.stations[0], LAMBDA, N0, -300.0).unwrap()[0];
        assert!((p.apparent_velocity - 1.5).abs() < 1e-12);
    }

    #[test]
    fn reflector_sampling() {
        let area = Rect::new(Vec2::default(), 90.0, 90.0);
        assert!(sample_reflectors(0.0, area, 10.0, 1).is_empty());
        assert_eq!(sample_reflectors(3.0, area, 10.0, 5), sample_reflectors(3.0, area, 10.0, 5));
        let n = 20_000u64;
        let total: usize = (0..n).map(|s| sample_reflectors(3.0, area, 10.0, s).len()).sum();
        let mean = total as f64 / n as f64;
        assert!((mean - 3.0).abs() < 0.05, "mean {mean}");
        for r in sample_reflectors(30.0, area, 10.0, 9) {
            assert!(area.contains(r.position));
        }
    }
}
