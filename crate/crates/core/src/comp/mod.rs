//! Cooperative transmission: coherent joint transmission, minimum-power
//! beamforming under communication and sensing constraints, hybrid
//! beamforming and node selection.
//!
//! All stations serve one single-antenna user and illuminate one target.
//! Stacking the per-station weights into `w`, the two constraints are
//!
//! - communication: `|hᴴw|² ≥ γ·σ_c²` (coherent joint transmission), and
//! - sensing: `CRLB = κ·σ_s²/|gᴴw|² ≤ ε`, i.e. `|gᴴw|² ≥ κ·σ_s²/ε`,
//!
//! where `g` maps the weights to the echo amplitude at the sensing receiver
//! and `κ` is the range CRLB of the waveform at unit per-element SNR.

mod approx;
mod hybrid;
mod sdr;
mod selection;

pub use approx::min_power_crlb_approx;
pub use hybrid::{codebook_gain, factorize, hybrid_project, HybridFactorization, HybridSolution};
pub use sdr::{min_power_sdr, SdrOptions};
pub use selection::{select_nodes, NodeSelection, SelectionOptions};

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{echo_geometry, make_comm_channel, station_steering, unit_phase, CommChannel};
use crate::error::{Error, Result};
use crate::ranging::crlb_coefficient;
use crate::scenario::{Scenario, StationId};
use crate::signal::OfdmConfig;
use crate::units::{db_to_linear, dbm_to_mw, linear_to_db, mw_to_dbm};

pub(crate) fn inner(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

pub(crate) fn norm_sqr(a: &[Complex64]) -> f64 {
    a.iter().map(|v| v.norm_sqr()).sum()
}

/// Received SNR `|Σ h_iᴴw_i|²/σ²` (coherent) or `Σ|h_iᴴw_i|²/σ²` as
/// spectral efficiency `log2(1 + ·)`.
///
/// In coherent mode every station applies a phase pre-compensation so that
/// all contributions arrive in phase, giving `(Σ|h_iᴴw_i|)²`.
pub fn jt_spectral_efficiency(
    channels: &[CommChannel],
    weights: &[Vec<Complex64>],
    noise_power_mw: f64,
    coherent: bool,
) -> Result<f64> {
    Ok((1.0 + jt_received_power(channels, weights, coherent)? / noise_power_mw).log2())
}

pub fn jt_received_power(channels: &[CommChannel], weights: &[Vec<Complex64>], coherent: bool) -> Result<f64> {
    if channels.len() != weights.len() {
        return Err(Error::DimensionMismatch(format!("{} channels, {} weight vectors", channels.len(), weights.len())));
    }
    let mut amplitudes = Vec::with_capacity(channels.len());
    for (c, w) in channels.iter().zip(weights) {
        if c.h.len() != w.len() {
            return Err(Error::DimensionMismatch(format!("channel of {} antennas, weights of {}", c.h.len(), w.len())));
        }
        amplitudes.push(inner(&c.h, w).norm());
    }
    Ok(if coherent {
        amplitudes.iter().sum::<f64>().powi(2)
    } else {
        amplitudes.iter().map(|a| a * a).sum()
    })
}

/// Phase pre-compensation factors `e^{jψ_i}` that rotate every station's
/// contribution `h_iᴴw_i` onto the positive real axis.
pub fn precompensation_phases(channels: &[CommChannel], weights: &[Vec<Complex64>]) -> Vec<Complex64> {
    channels
        .iter()
        .zip(weights)
        .map(|(c, w)| {
            let a = inner(&c.h, w);
            Complex64::from_polar(1.0, -a.arg())
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerMinSpec {
    pub sinr_target_db: f64,
    /// Bound on the range CRLB, m²; `+∞` drops the sensing constraint.
    pub crlb_bound: f64,
    pub candidate_stations: Vec<StationId>,
    pub comm_user: [f64; 3],
    pub sense_target: [f64; 3],
    #[serde(default)]
    pub power_caps: bool,
}

impl PowerMinSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.crlb_bound > 0.0) {
            return Err(Error::config("crlb_bound", "must be positive"));
        }
        if self.candidate_stations.is_empty() {
            return Err(Error::config("candidate_stations", "must not be empty"));
        }
        if !self.sinr_target_db.is_finite() {
            return Err(Error::config("sinr_target_db", "must be finite"));
        }
        Ok(())
    }
}

/// A minimum-power beamforming instance in solver form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerProblem {
    pub stations: Vec<StationId>,
    /// Antennas per station; `h` and `g` are stacked in this order.
    pub blocks: Vec<usize>,
    pub h: Vec<Complex64>,
    pub g: Vec<Complex64>,
    /// Communication noise power, mW.
    pub comm_noise: f64,
    pub sinr_target: f64,
    /// Sensing noise power per resource element referred to total transmit
    /// power, mW.
    pub sense_noise: f64,
    pub kappa: f64,
    pub crlb_bound: f64,
    /// Per-station power limits, mW, when enabled.
    pub power_caps: Option<Vec<f64>>,
}

impl PowerProblem {
    pub fn dimension(&self) -> usize {
        self.blocks.iter().sum()
    }

    /// Required `|hᴴw|²`.
    pub fn comm_threshold(&self) -> f64 {
        self.sinr_target * self.comm_noise
    }

    /// Required `|gᴴw|²`; zero when the sensing constraint is inactive.
    pub fn sense_threshold(&self) -> f64 {
        if self.crlb_bound.is_infinite() {
            0.0
        } else {
            self.kappa * self.sense_noise / self.crlb_bound
        }
    }

    pub fn block_ranges(&self) -> Vec<std::ops::Range<usize>> {
        let mut start = 0;
        self.blocks
            .iter()
            .map(|&n| {
                let r = start..start + n;
                start += n;
                r
            })
            .collect()
    }

    pub fn split(&self, w: &[Complex64]) -> Vec<Vec<Complex64>> {
        self.block_ranges().into_iter().map(|r| w[r].to_vec()).collect()
    }

    pub fn restrict(&self, keep: &[StationId]) -> PowerProblem {
        let ranges = self.block_ranges();
        let mut out = PowerProblem { stations: vec![], blocks: vec![], h: vec![], g: vec![], ..self.clone() };
        let mut caps = Vec::new();
        for (i, id) in self.stations.iter().enumerate() {
            if keep.contains(id) {
                out.stations.push(*id);
                out.blocks.push(self.blocks[i]);
                out.h.extend_from_slice(&self.h[ranges[i].clone()]);
                out.g.extend_from_slice(&self.g[ranges[i].clone()]);
                if let Some(c) = &self.power_caps {
                    caps.push(c[i]);
                }
            }
        }
        out.power_caps = self.power_caps.as_ref().map(|_| caps);
        out
    }

    /// SINR and CRLB achieved by stacked weights, recomputed from scratch.
    pub fn achieved(&self, w: &[Complex64]) -> (f64, f64) {
        let sinr = inner(&self.h, w).norm_sqr() / self.comm_noise;
        let echo = inner(&self.g, w).norm_sqr();
        let crlb = if echo > 0.0 { self.kappa * self.sense_noise / echo } else { f64::INFINITY };
        (sinr, crlb)
    }

    /// Smallest factor `s²` such that `s·w` meets both constraints.
    pub(crate) fn feasibility_scale(&self, w: &[Complex64]) -> f64 {
        let hw = inner(&self.h, w).norm_sqr();
        let gw = inner(&self.g, w).norm_sqr();
        let a = self.comm_threshold();
        let b = self.sense_threshold();
        let ra = if a > 0.0 { a / hw } else { 0.0 };
        let rb = if b > 0.0 { b / gw } else { 0.0 };
        ra.max(rb)
    }

    /// Packages stacked weights into a solution with recomputed metrics.
    pub(crate) fn solution(&self, w: Vec<Complex64>, method: Method) -> BeamformingSolution {
        let (sinr, crlb) = self.achieved(&w);
        let per_station = self.split(&w);
        let station_power_dbm: Vec<f64> = per_station.iter().map(|v| mw_to_dbm(norm_sqr(v))).collect();
        let caps_ok = self.power_caps.as_ref().is_none_or(|caps| {
            per_station.iter().zip(caps).all(|(v, c)| norm_sqr(v) <= c * (1.0 + 1e-6))
        });
        let feasible = caps_ok
            && linear_to_db(sinr) >= linear_to_db(self.sinr_target) - 0.01
            && crlb <= self.crlb_bound * (1.0 + 1e-6);
        BeamformingSolution {
            stations: self.stations.clone(),
            total_power_dbm: mw_to_dbm(norm_sqr(&w)),
            weights: per_station,
            station_power_dbm,
            feasible,
            method,
            achieved_sinr_db: linear_to_db(sinr),
            achieved_crlb: crlb,
            relaxation_bound_dbm: None,
            rank_ratio: None,
        }
    }

    /// Builds the instance for `spec` in `scenario`.
    ///
    /// The first candidate is the sensing receiver; every candidate
    /// illuminates the target coherently and the echo is collected with a
    /// matched receive beam. Communication channels include the band's
    /// Rician scattering.
    pub fn from_scenario<R: Rng + ?Sized>(
        scenario: &Scenario,
        spec: &PowerMinSpec,
        waveform: &OfdmConfig,
        rng: &mut R,
    ) -> Result<PowerProblem> {
        spec.validate()?;
        let stations = spec
            .candidate_stations
            .iter()
            .map(|&id| scenario.station(id).ok_or_else(|| Error::config("candidate_stations", format!("no station {id}"))))
            .collect::<Result<Vec<_>>>()?;
        let rx = stations[0];
        let target = crate::scenario::Target { position: spec.sense_target, velocity: [0.0; 3], rcs: 1.0 };
        let psd = dbm_to_mw(scenario.noise_psd_dbm_hz);
        let (mut h, mut g, mut blocks, mut caps) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for bs in &stations {
            let comm = make_comm_channel(scenario, bs, spec.comm_user, rng)?;
            h.extend(comm.h);
            let geo = echo_geometry(scenario, bs, rx, &target)?;
            let scale = (geo.radar_gain * rx.antenna_count as f64).sqrt();
            let phase = unit_phase(rng);
            let a = station_steering(bs, bs.angle_to([spec.sense_target[0], spec.sense_target[1]]));
            g.extend(a.into_iter().map(|ak| ak * phase.conj() * scale));
            blocks.push(bs.antenna_count);
            caps.push(dbm_to_mw(bs.max_power_dbm));
        }
        Ok(PowerProblem {
            stations: spec.candidate_stations.clone(),
            blocks,
            h,
            g,
            comm_noise: psd * rx.bandwidth,
            sinr_target: db_to_linear(spec.sinr_target_db),
            sense_noise: psd * waveform.occupied_bandwidth(),
            kappa: crlb_coefficient(waveform)?,
            crlb_bound: spec.crlb_bound,
            power_caps: spec.power_caps.then_some(caps),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Sdr,
    CrlbApprox,
    Hybrid,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Sdr => "sdr",
            Method::CrlbApprox => "approx",
            Method::Hybrid => "hybrid",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamformingSolution {
    pub stations: Vec<StationId>,
    pub weights: Vec<Vec<Complex64>>,
    pub station_power_dbm: Vec<f64>,
    pub total_power_dbm: f64,
    pub feasible: bool,
    pub method: Method,
    pub achieved_sinr_db: f64,
    pub achieved_crlb: f64,
    /// Optimum of the semidefinite relaxation, a lower bound on any
    /// feasible power (SDR only).
    pub relaxation_bound_dbm: Option<f64>,
    /// `λ₂/λ₁` of the relaxed covariance (SDR only).
    pub rank_ratio: Option<f64>,
}

impl BeamformingSolution {
    pub fn stacked(&self) -> Vec<Complex64> {
        self.weights.concat()
    }

    pub fn total_power_mw(&self) -> f64 {
        dbm_to_mw(self.total_power_dbm)
    }
}

/// Minimum power of a single-antenna, single-station instance.
pub fn scalar_closed_form(problem: &PowerProblem) -> Result<f64> {
    if problem.dimension() != 1 {
        return Err(Error::DimensionMismatch("closed form needs exactly one antenna".into()));
    }
    let a = problem.comm_threshold() / problem.h[0].norm_sqr();
    let b = problem.sense_threshold() / problem.g[0].norm_sqr();
    Ok(a.max(b))
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::complex_gaussian;
    use crate::rng;

    fn comm(h: Vec<Complex64>) -> CommChannel {
        CommChannel { h, los: true, distance: 10.0 }
    }

    #[test]
    fn single_station_se() {
        let c = comm(vec![Complex64::new(2.0, 0.0)]);
        let se = jt_spectral_efficiency(&[c], &[vec![Complex64::new(1.0, 0.0)]], 0.5, true).unwrap();
        assert!((se - (1.0f64 + 8.0).log2()).abs() < 1e-12);
    }

    #[test]
    fn coherent_pair_gains_six_db() {
        let chans = [comm(vec![Complex64::new(1.0, 0.0)]), comm(vec![Complex64::from_polar(1.0, 2.1)])];
        let w = vec![vec![Complex64::new(1.0, 0.0)]; 2];
        let two = jt_received_power(&chans, &w, true).unwrap();
        let one = jt_received_power(&chans[..1], &w[..1], true).unwrap();
        assert!((linear_to_db(two / one) - 20.0 * 2f64.log10()).abs() < 1e-9);
        assert!(jt_received_power(&chans, &w[..1], true).is_err());
    }

    #[test]
    fn coherent_dominates_noncoherent() {
        let mut r = rng::stream(3, &[]);
        for _ in 0..10_000 {
            let chans: Vec<_> = (0..3).map(|_| comm((0..2).map(|_| complex_gaussian(&mut r)).collect())).collect();
            let w: Vec<Vec<_>> = (0..3).map(|_| (0..2).map(|_| complex_gaussian(&mut r)).collect()).collect();
            let c = jt_spectral_efficiency(&chans, &w, 1.0, true).unwrap();
            let n = jt_spectral_efficiency(&chans, &w, 1.0, false).unwrap();
            assert!(c > n + 1e-12 || (c - n).abs() < 1e-12);
            assert!(c > n);
        }
    }

    #[test]
    fn coherent_mode_ignores_common_phase() {
        let mut r = rng::stream(4, &[]);
        let chans: Vec<_> = (0..2).map(|_| comm((0..4).map(|_| complex_gaussian(&mut r)).collect())).collect();
        let w: Vec<Vec<_>> = (0..2).map(|_| (0..4).map(|_| complex_gaussian(&mut r)).collect()).collect();
        let rot = Complex64::from_polar(1.0, 0.77);
        let rotated: Vec<_> = chans.iter().map(|c| comm(c.h.iter().map(|v| v * rot).collect())).collect();
        let a = jt_spectral_efficiency(&chans, &w, 1.0, true).unwrap();
        let b = jt_spectral_efficiency(&rotated, &w, 1.0, true).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn precompensation_aligns_contributions() {
        let mut r = rng::stream(5, &[]);
        let chans: Vec<_> = (0..3).map(|_| comm((0..2).map(|_| complex_gaussian(&mut r)).collect())).collect();
        let w: Vec<Vec<_>> = (0..3).map(|_| (0..2).map(|_| complex_gaussian(&mut r)).collect()).collect();
        let psi = precompensation_phases(&chans, &w);
        let total: Complex64 =
            chans.iter().zip(&w).zip(&psi).map(|((c, w), p)| inner(&c.h, w) * p).sum();
        let coherent = jt_received_power(&chans, &w, true).unwrap();
        assert!((total.norm_sqr() / coherent - 1.0).abs() < 1e-12);
    }
}
