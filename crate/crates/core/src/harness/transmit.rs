//! Cooperative transmission trials: joint-transmission spectral efficiency
//! and minimum-power beamforming.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{trial_stream, Metric};
use crate::channel::make_comm_channel;
use crate::comp::{
    jt_spectral_efficiency, min_power_crlb_approx, min_power_sdr, Method, PowerMinSpec, PowerProblem, SdrOptions,
};
use crate::error::{Error, Result};
use crate::rng::label;
use crate::scenario::{Scenario, StationId};
use crate::signal::OfdmConfig;
use crate::units::{dbm_to_mw, mw_to_dbm};

fn check_region(region: &[[f64; 2]; 2], scenario: &Scenario, path: &str) -> Result<()> {
    let [lo, hi] = *region;
    if !(lo[0] < hi[0] && lo[1] < hi[1]) || lo.iter().chain(&hi).any(|v| *v < 0.0) {
        return Err(Error::config(path, "must be a non-empty box"));
    }
    if hi[0] > scenario.area_width || hi[1] > scenario.area_depth {
        return Err(Error::config(path, "extends outside the area"));
    }
    Ok(())
}

fn draw_point<R: Rng + ?Sized>(region: &[[f64; 2]; 2], rng: &mut R) -> [f64; 3] {
    let [lo, hi] = *region;
    [rng.random_range(lo[0]..hi[0]), rng.random_range(lo[1]..hi[1]), 0.0]
}

fn active_stations(scenario: &Scenario, ids: &[StationId], count: Option<usize>) -> Result<Vec<StationId>> {
    let k = count.unwrap_or(ids.len());
    if k == 0 || k > ids.len() {
        return Err(Error::config("study.station_count", format!("must be in 1..={}", ids.len())));
    }
    for id in &ids[..k] {
        if scenario.station(*id).is_none() {
            return Err(Error::config("study.stations", format!("no station {id}")));
        }
    }
    Ok(ids[..k].to_vec())
}

/// Downlink joint transmission to one user with per-station MRT beams.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JtStudy {
    pub stations: Vec<StationId>,
    #[serde(default)]
    pub station_count: Option<usize>,
    /// Phase-aligned amplitude combining when true, power combining when false.
    pub coherent: bool,
    pub user_region: [[f64; 2]; 2],
    /// Per-station transmit power; each station's maximum when absent.
    #[serde(default)]
    pub tx_power_dbm: Option<f64>,
}

pub(crate) struct JtSetup {
    scenario: Scenario,
    study: JtStudy,
    active: Vec<StationId>,
}

impl JtSetup {
    pub(crate) fn new(scenario: Scenario, study: JtStudy) -> Result<Self> {
        check_region(&study.user_region, &scenario, "study.user_region")?;
        let active = active_stations(&scenario, &study.stations, study.station_count)?;
        let bw = scenario.station(active[0]).map(|s| s.bandwidth);
        if active.iter().any(|id| scenario.station(*id).map(|s| s.bandwidth) != bw) {
            return Err(Error::config("study.stations", "joint transmission needs a common bandwidth"));
        }
        Ok(JtSetup { scenario, study, active })
    }

    pub(crate) fn run_trial(&self, seed: u64, stream_index: usize, trial: usize) -> Result<Vec<(Metric, f64)>> {
        let stream = |labels: &[u64]| trial_stream(seed, stream_index, trial, labels);
        let user = draw_point(&self.study.user_region, &mut stream(&[label::USER]));
        let mut channels = Vec::with_capacity(self.active.len());
        let mut weights = Vec::with_capacity(self.active.len());
        for id in &self.active {
            let bs = self.scenario.station(*id).expect("validated station");
            let ch = make_comm_channel(&self.scenario, bs, user, &mut stream(&[label::CHANNEL, *id as u64]))?;
            let p = dbm_to_mw(self.study.tx_power_dbm.unwrap_or(bs.max_power_dbm));
            let norm = ch.gain().sqrt();
            weights.push(ch.h.iter().map(|c| c * (p.sqrt() / norm)).collect());
            channels.push(ch);
        }
        let bs = self.scenario.station(self.active[0]).expect("validated station");
        let noise = dbm_to_mw(self.scenario.noise_psd_dbm_hz) * bs.bandwidth;
        let se = jt_spectral_efficiency(&channels, &weights, noise, self.study.coherent)?;
        Ok(vec![(Metric::SpectralEfficiency, se)])
    }
}

fn default_crlb_bound() -> f64 {
    0.03
}
fn default_method() -> Method {
    Method::CrlbApprox
}
fn default_subcarriers() -> usize {
    64
}
fn default_symbols() -> usize {
    14
}
fn default_sdr_dimension() -> usize {
    64
}

/// Minimum-power cooperative beamforming under SINR and CRLB constraints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerMinStudy {
    /// Candidates; the first one receives the sensing echo.
    pub stations: Vec<StationId>,
    #[serde(default)]
    pub station_count: Option<usize>,
    pub sinr_target_db: f64,
    /// Range CRLB bound, m².
    #[serde(default = "default_crlb_bound")]
    pub crlb_bound: f64,
    #[serde(default = "default_method")]
    pub method: Method,
    pub user_region: [[f64; 2]; 2],
    pub target_region: [[f64; 2]; 2],
    /// Sensing numerology, over each station's bandwidth.
    #[serde(default = "default_subcarriers")]
    pub n_subcarriers: usize,
    #[serde(default = "default_symbols")]
    pub n_symbols: usize,
    #[serde(default)]
    pub power_caps: bool,
    /// Largest stacked antenna count handed to the relaxation.
    #[serde(default = "default_sdr_dimension")]
    pub sdr_max_dimension: usize,
}

pub(crate) struct PowerMinSetup {
    scenario: Scenario,
    study: PowerMinStudy,
    active: Vec<StationId>,
    waveform: OfdmConfig,
}

impl PowerMinSetup {
    pub(crate) fn new(scenario: Scenario, study: PowerMinStudy) -> Result<Self> {
        check_region(&study.user_region, &scenario, "study.user_region")?;
        check_region(&study.target_region, &scenario, "study.target_region")?;
        let active = active_stations(&scenario, &study.stations, study.station_count)?;
        if !(study.crlb_bound > 0.0) {
            return Err(Error::config("study.crlb_bound", "must be positive"));
        }
        if study.method == Method::Hybrid {
            return Err(Error::config("study.method", "use `sdr` or `crlb_approx`; hybrid is a projection"));
        }
        let rx = scenario.station(active[0]).expect("validated station");
        let waveform = OfdmConfig::new(rx.bandwidth, rx.carrier_frequency, study.n_subcarriers, study.n_symbols)?;
        Ok(PowerMinSetup { scenario, study, active, waveform })
    }

    fn problem(&self, seed: u64, stream_index: usize, trial: usize) -> Result<PowerProblem> {
        let stream = |labels: &[u64]| trial_stream(seed, stream_index, trial, labels);
        let spec = PowerMinSpec {
            sinr_target_db: self.study.sinr_target_db,
            crlb_bound: self.study.crlb_bound,
            candidate_stations: self.active.clone(),
            comm_user: draw_point(&self.study.user_region, &mut stream(&[label::USER])),
            sense_target: draw_point(&self.study.target_region, &mut stream(&[label::TARGET])),
            power_caps: self.study.power_caps,
        };
        PowerProblem::from_scenario(&self.scenario, &spec, &self.waveform, &mut stream(&[label::CHANNEL]))
    }

    pub(crate) fn run_trial(&self, seed: u64, stream_index: usize, trial: usize) -> Result<Vec<(Metric, f64)>> {
        let problem = self.problem(seed, stream_index, trial)?;
        let solution = match self.study.method {
            Method::Sdr => {
                let options = SdrOptions { max_dimension: self.study.sdr_max_dimension, ..SdrOptions::default() };
                min_power_sdr(&problem, &options)?
            }
            _ => min_power_crlb_approx(&problem)?,
        };
        if !solution.feasible {
            return Err(Error::Infeasible { binding: "recovered beamformer".into() });
        }
        Ok(vec![(Metric::MinPowerDbm, mw_to_dbm(solution.total_power_mw()))])
    }
}

/// The beamforming instance a power-minimization sweep point solves in
/// trial `trial`; lets callers compare solvers on identical instances.
pub fn power_problem(point: &super::SweepPoint, seed: u64, trial: usize) -> Result<PowerProblem> {
    let super::Study::PowerMin(study) = &point.study else {
        return Err(Error::config("study.kind", "not a power-minimization study"));
    };
    let scenario = crate::scenario::build_scenario(&point.scenario)?;
    PowerMinSetup::new(scenario, study.clone())?.problem(seed, point.stream_index, trial)
}
