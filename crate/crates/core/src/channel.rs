//! Path loss, small-scale fading, array responses and echo link budgets.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::{BandClass, BaseStation, Scenario, StationId, Target};
use crate::units::{db_to_linear, linear_to_db, wavelength, SPEED_OF_LIGHT};

/// Log-distance path loss parameters for one band.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BandPropagation {
    pub alpha_los: f64,
    pub alpha_nlos: f64,
    /// Rician K-factor applied to each echo leg and to communication links.
    /// `None` means a pure line-of-sight amplitude with random phase.
    pub k_factor_db: Option<f64>,
}

impl Default for BandPropagation {
    fn default() -> Self {
        BandPropagation { alpha_los: 2.0, alpha_nlos: 3.5, k_factor_db: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Propagation {
    pub reference_distance: f64,
    pub low_band: BandPropagation,
    pub high_band: BandPropagation,
}

impl Default for Propagation {
    fn default() -> Self {
        Propagation {
            reference_distance: 1.0,
            low_band: BandPropagation { k_factor_db: Some(5.0), ..Default::default() },
            high_band: BandPropagation::default(),
        }
    }
}

impl Propagation {
    pub fn band(&self, class: BandClass) -> &BandPropagation {
        match class {
            BandClass::Low => &self.low_band,
            BandClass::High => &self.high_band,
        }
    }

    pub fn path_loss_params(&self, class: BandClass) -> PathLossParams {
        let b = self.band(class);
        PathLossParams { alpha_los: b.alpha_los, alpha_nlos: b.alpha_nlos, reference_distance: self.reference_distance }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathLossParams {
    pub alpha_los: f64,
    pub alpha_nlos: f64,
    pub reference_distance: f64,
}

impl Default for PathLossParams {
    fn default() -> Self {
        PathLossParams { alpha_los: 2.0, alpha_nlos: 3.5, reference_distance: 1.0 }
    }
}

/// `PL0(f) + 10·α·log10(d/d0)` with `PL0` the free-space loss at `d0`.
pub fn path_loss_db(frequency: f64, distance: f64, los: bool, params: &PathLossParams) -> Result<f64> {
    let d0 = params.reference_distance;
    if !(distance >= d0) {
        return Err(Error::DistanceBelowReference { distance, reference: d0 });
    }
    let pl0 = 20.0 * (4.0 * PI * d0 * frequency / SPEED_OF_LIGHT).log10();
    let alpha = if los { params.alpha_los } else { params.alpha_nlos };
    Ok(pl0 + 10.0 * alpha * (distance / d0).log10())
}

/// Linear power gain `10^(-PL/10)`.
pub fn path_gain(frequency: f64, distance: f64, los: bool, params: &PathLossParams) -> Result<f64> {
    Ok(db_to_linear(-path_loss_db(frequency, distance, los, params)?))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RicianParams {
    k_factor_db: f64,
}

impl RicianParams {
    pub fn new(k_factor_db: f64) -> Result<Self> {
        if !k_factor_db.is_finite() {
            return Err(Error::InvalidParameter(format!("K-factor must be finite, got {k_factor_db} dB")));
        }
        Ok(RicianParams { k_factor_db })
    }

    pub fn k_factor_db(&self) -> f64 {
        self.k_factor_db
    }

    pub fn k_linear(&self) -> f64 {
        db_to_linear(self.k_factor_db)
    }
}

/// Standard circular complex Gaussian, `E|g|² = 1`.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

pub fn unit_phase<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    Complex64::from_polar(1.0, rng.random_range(0.0..2.0 * PI))
}

/// Unit-power Rician coefficient `√(K/(K+1))·e^{jφ} + √(1/(K+1))·g`.
pub fn rician_fade<R: Rng + ?Sized>(rng: &mut R, params: &RicianParams, los_phase: f64) -> Complex64 {
    let k = params.k_linear();
    let los = Complex64::from_polar((k / (k + 1.0)).sqrt(), los_phase);
    los + complex_gaussian(rng) * (1.0 / (k + 1.0)).sqrt()
}

/// Uniform linear array response, element `k = e^{-j2π·k·spacing·sin(angle)·f/c}`.
pub fn steering_vector(antenna_count: usize, antenna_spacing: f64, angle: f64, frequency: f64) -> Vec<Complex64> {
    let step = -2.0 * PI * antenna_spacing * angle.sin() * frequency / SPEED_OF_LIGHT;
    (0..antenna_count).map(|k| Complex64::from_polar(1.0, step * k as f64)).collect()
}

/// Steering vector of a station's own array.
pub fn station_steering(station: &BaseStation, angle: f64) -> Vec<Complex64> {
    steering_vector(station.antenna_count, station.antenna_spacing, angle, station.carrier_frequency)
}

/// `|a(angle)^H w|²`: beamforming power gain of `w` towards `angle`.
pub fn beam_gain(station: &BaseStation, weights: &[Complex64], angle: f64) -> f64 {
    let a = station_steering(station, angle);
    a.iter().zip(weights).map(|(ak, wk)| ak.conj() * wk).sum::<Complex64>().norm_sqr()
}

/// Physical truth of one transmitter → target → receiver echo path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EchoChannel {
    /// Complex two-way amplitude; `|alpha|²` is the received echo power in mW.
    pub alpha: Complex64,
    /// Two-way delay, seconds.
    pub tau: f64,
    /// Doppler shift, Hz.
    pub doppler: f64,
    /// Both legs unobstructed.
    pub los: bool,
    pub tx_station: StationId,
    pub rx_station: StationId,
}

impl EchoChannel {
    /// Half the two-way path length, metres (the monostatic range).
    pub fn range(&self) -> f64 {
        SPEED_OF_LIGHT * self.tau / 2.0
    }
}

fn distance3(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Deterministic part of an echo path: distances, delay, Doppler, LoS flags
/// and the radar-equation power gain per unit `illum_power_gain`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EchoGeometry {
    pub d_tx: f64,
    pub d_rx: f64,
    pub tau: f64,
    pub doppler: f64,
    pub los_tx: bool,
    pub los_rx: bool,
    /// `L_tx · 4πσ/λ² · L_rx`; equals `λ²σ/((4π)³d_tx²d_rx²)` in free space.
    pub radar_gain: f64,
}

pub fn echo_geometry(scenario: &Scenario, tx: &BaseStation, rx: &BaseStation, target: &Target) -> Result<EchoGeometry> {
    let d_tx = distance3(tx.position, target.position);
    let d_rx = distance3(rx.position, target.position);
    if d_tx < 1e-9 {
        return Err(Error::TargetCoincidesWithStation(tx.id));
    }
    if d_rx < 1e-9 {
        return Err(Error::TargetCoincidesWithStation(rx.id));
    }
    if !(target.rcs > 0.0) {
        return Err(Error::InvalidParameter("radar cross section must be positive".into()));
    }
    let tp = target.position_2d();
    let los_tx = scenario.is_los(tx.position_2d(), tp)?;
    let los_rx = scenario.is_los(rx.position_2d(), tp)?;
    let params = scenario.propagation.path_loss_params(tx.band_class());
    let fc = tx.carrier_frequency;
    let lambda = wavelength(fc);
    let g_tx = path_gain(fc, d_tx, los_tx, &params)?;
    let g_rx = path_gain(fc, d_rx, los_rx, &params)?;
    let radar_gain = g_tx * (4.0 * PI * target.rcs / (lambda * lambda)) * g_rx;

    // Doppler from the rate of change of the total path length.
    let unit = |from: [f64; 3], d: f64| {
        [(from[0] - target.position[0]) / d, (from[1] - target.position[1]) / d, (from[2] - target.position[2]) / d]
    };
    let u_tx = unit(tx.position, d_tx);
    let u_rx = unit(rx.position, d_rx);
    let v = target.velocity;
    let closing: f64 = (0..3).map(|i| v[i] * (u_tx[i] + u_rx[i])).sum();
    let doppler = closing * fc / SPEED_OF_LIGHT;

    Ok(EchoGeometry { d_tx, d_rx, tau: (d_tx + d_rx) / SPEED_OF_LIGHT, doppler, los_tx, los_rx, radar_gain })
}

/// One echo channel realization.
///
/// `illum_power_gain` is `Pt·G_tx·G_rx` in mW (transmit power times the
/// transmit and receive beam gains towards the target).
pub fn make_echo_channel<R: Rng + ?Sized>(
    scenario: &Scenario,
    tx: &BaseStation,
    rx: &BaseStation,
    target: &Target,
    illum_power_gain: f64,
    rng: &mut R,
) -> Result<EchoChannel> {
    let geo = echo_geometry(scenario, tx, rx, target)?;
    let mut alpha = unit_phase(rng) * (illum_power_gain * geo.radar_gain).sqrt();
    if let Some(k_db) = scenario.propagation.band(tx.band_class()).k_factor_db {
        let params = RicianParams::new(k_db)?;
        let los_phase = 0.0;
        alpha *= rician_fade(rng, &params, los_phase) * rician_fade(rng, &params, los_phase);
    }
    Ok(EchoChannel {
        alpha,
        tau: geo.tau,
        doppler: geo.doppler,
        los: geo.los_tx && geo.los_rx,
        tx_station: tx.id,
        rx_station: rx.id,
    })
}

/// Downlink channel from one station to a single-antenna user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommChannel {
    /// Per-antenna coefficients; the received amplitude is `h^H w`.
    pub h: Vec<Complex64>,
    pub los: bool,
    pub distance: f64,
}

impl CommChannel {
    pub fn gain(&self) -> f64 {
        self.h.iter().map(|c| c.norm_sqr()).sum()
    }
}

/// Channel towards `user`: steering vector times path gain, with Rician
/// scattering per antenna when the band defines a K-factor.
pub fn make_comm_channel<R: Rng + ?Sized>(
    scenario: &Scenario,
    station: &BaseStation,
    user: [f64; 3],
    rng: &mut R,
) -> Result<CommChannel> {
    let distance = distance3(station.position, user);
    let up = [user[0], user[1]];
    let los = scenario.is_los(station.position_2d(), up)?;
    let params = scenario.propagation.path_loss_params(station.band_class());
    let amp = path_gain(station.carrier_frequency, distance, los, &params)?.sqrt();
    let a = station_steering(station, station.angle_to(up));
    let phase = unit_phase(rng);
    let h = match scenario.propagation.band(station.band_class()).k_factor_db {
        Some(k_db) => {
            let k = RicianParams::new(k_db)?.k_linear();
            let (los_amp, nlos_amp) = ((k / (k + 1.0)).sqrt(), (1.0 / (k + 1.0)).sqrt());
            a.iter().map(|ak| amp * (ak * phase * los_amp + complex_gaussian(rng) * nlos_amp)).collect()
        }
        None => a.iter().map(|ak| ak * phase * amp).collect(),
    };
    Ok(CommChannel { h, los, distance })
}

/// Noise power over `bandwidth` for a given PSD.
pub fn noise_power_dbm(psd_dbm_hz: f64, bandwidth: f64) -> Result<f64> {
    if !(bandwidth > 0.0) {
        return Err(Error::NonPositiveBandwidth(bandwidth));
    }
    Ok(psd_dbm_hz + linear_to_db(bandwidth))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use crate::scenario::{build_scenario, BaseStationConfig, ObstacleField, ScenarioConfig};

    #[test]
    fn free_space_at_reference_distance() {
        let p = PathLossParams::default();
        let los = path_loss_db(28e9, 1.0, true, &p).unwrap();
        assert!((los - 61.39).abs() < 0.01, "{los}");
        assert_eq!(los, path_loss_db(28e9, 1.0, false, &p).unwrap());
        let diff = path_loss_db(28e9, 100.0, false, &p).unwrap() - path_loss_db(28e9, 100.0, true, &p).unwrap();
        assert!((diff - 30.0).abs() < 1e-9);
        assert!(matches!(path_loss_db(28e9, 0.5, true, &p), Err(Error::DistanceBelowReference { .. })));
    }

    #[test]
    fn rician_limits_and_moments() {
        let mut r = rng::stream(1, &[]);
        let strong = RicianParams::new(60.0).unwrap();
        for _ in 0..1000 {
            assert!((rician_fade(&mut r, &strong, 0.3).norm() - 1.0).abs() < 0.01);
        }
        let n = 100_000;
        let k5 = RicianParams::new(5.0).unwrap();
        let power: f64 = (0..n).map(|_| rician_fade(&mut r, &k5, 1.0).norm_sqr()).sum::<f64>() / n as f64;
        assert!((power - 1.0).abs() < 0.02, "{power}");
        // K → 0: Rayleigh, E|h| = √π/2.
        let rayleigh = RicianParams::new(-90.0).unwrap();
        let mean: f64 = (0..n).map(|_| rician_fade(&mut r, &rayleigh, 0.0).norm()).sum::<f64>() / n as f64;
        let expected = PI.sqrt() / 2.0;
        assert!((mean / expected - 1.0).abs() < 0.02, "{mean}");
        assert!(RicianParams::new(f64::INFINITY).is_err());
    }

    #[test]
    fn steering_vector_properties() {
        assert!(steering_vector(8, 0.005, 0.0, 30e9).iter().all(|c| (c - Complex64::new(1.0, 0.0)).norm() < 1e-15));
        let lambda = wavelength(30e9);
        let v = steering_vector(8, lambda / 2.0, PI / 2.0, 30e9);
        for w in v.windows(2) {
            let step = (w[1] / w[0]).arg().abs();
            assert!((step - PI).abs() < 1e-9);
        }
        for angle in [-1.2, -0.3, 0.0, 0.7, 1.5] {
            let v = steering_vector(13, 0.0031, angle, 47e9);
            assert!(v.iter().all(|c| (c.norm() - 1.0).abs() < 1e-12));
            let inner: f64 = v.iter().map(|c| c.norm_sqr()).sum();
            assert!((inner / 13.0 - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn noise_power() {
        assert!((noise_power_dbm(-174.0, 1e6).unwrap() + 114.0).abs() < 1e-9);
        assert!((noise_power_dbm(-174.0, 1e9).unwrap() + 84.0).abs() < 1e-9);
        assert!((noise_power_dbm(-174.0, 1.0).unwrap() + 174.0).abs() < 1e-12);
        assert!(matches!(noise_power_dbm(-174.0, 0.0), Err(Error::NonPositiveBandwidth(_))));
    }

    fn mono_scenario(target_x: f64, velocity: [f64; 3]) -> Scenario {
        let cfg = ScenarioConfig {
            area_width: 500.0,
            area_depth: 500.0,
            base_stations: vec![BaseStationConfig {
                id: 1,
                position: [10.0, 250.0, 0.0],
                carrier_frequency: 0.34e12,
                bandwidth: 1e9,
                antenna_count: Some(16),
                antenna_spacing: None,
                max_power_dbm: 30.0,
                rf_chain_count: None,
                clock_offset: 0.0,
                boresight: 0.0,
            }],
            obstacles: ObstacleField { count: 0, ..Default::default() },
            targets: vec![Target { position: [target_x, 250.0, 0.0], velocity, rcs: 1.0 }],
            propagation: Propagation::default(),
            noise_psd_dbm_hz: -174.0,
            master_seed: 0,
        };
        build_scenario(&cfg).unwrap()
    }

    #[test]
    fn monostatic_echo_delay_doppler_and_d4_law() {
        let s = mono_scenario(85.0, [0.0; 3]);
        let bs = &s.base_stations[0];
        let mut r = rng::stream(2, &[]);
        let ch = make_echo_channel(&s, bs, bs, &s.targets[0], 1.0, &mut r).unwrap();
        assert!((ch.tau - 150.0 / SPEED_OF_LIGHT).abs() < 1e-18);
        assert!((ch.tau * 1e9 - 500.35).abs() < 0.01);
        assert_eq!(ch.doppler, 0.0);

        let far = mono_scenario(160.0, [0.0; 3]);
        let ch2 = make_echo_channel(&far, bs, bs, &far.targets[0], 1.0, &mut r).unwrap();
        let drop = linear_to_db(ch.alpha.norm_sqr() / ch2.alpha.norm_sqr());
        assert!((drop - 12.0412).abs() < 1e-3, "{drop}");

        // Free-space radar equation.
        let lambda = bs.wavelength();
        let expected = lambda * lambda / ((4.0 * PI).powi(3) * 75f64.powi(4));
        assert!((ch.alpha.norm_sqr() / expected - 1.0).abs() < 1e-9);
    }

    #[test]
    fn approaching_target_has_positive_doppler() {
        let s = mono_scenario(85.0, [-10.0, 0.0, 0.0]);
        let bs = &s.base_stations[0];
        let ch = make_echo_channel(&s, bs, bs, &s.targets[0], 1.0, &mut rng::stream(0, &[])).unwrap();
        let expected = 2.0 * 10.0 * bs.carrier_frequency / SPEED_OF_LIGHT;
        assert!((ch.doppler - expected).abs() < 1e-6);
    }

    #[test]
    fn echo_reseeding_reproduces_alpha_and_power_scaling() {
        let s = mono_scenario(85.0, [0.0; 3]);
        let bs = &s.base_stations[0];
        let a = make_echo_channel(&s, bs, bs, &s.targets[0], 2.0, &mut rng::stream(5, &[])).unwrap();
        let b = make_echo_channel(&s, bs, bs, &s.targets[0], 2.0, &mut rng::stream(5, &[])).unwrap();
        assert_eq!(a, b);
        let c = make_echo_channel(&s, bs, bs, &s.targets[0], 8.0, &mut rng::stream(5, &[])).unwrap();
        assert_eq!(a.tau, c.tau);
        assert!((c.alpha.norm() / a.alpha.norm() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn target_on_station_is_rejected() {
        let s = mono_scenario(10.0, [0.0; 3]);
        let bs = &s.base_stations[0];
        assert!(matches!(
            make_echo_channel(&s, bs, bs, &s.targets[0], 1.0, &mut rng::stream(0, &[])),
            Err(Error::TargetCoincidesWithStation(1))
        ));
    }
}
