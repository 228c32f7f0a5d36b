//! Multi-node target localization trials.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{trial_stream, Metric};
use crate::channel::{
    complex_gaussian, make_echo_channel, path_gain, station_steering, unit_phase, EchoChannel,
};
use crate::comp::codebook_gain;
use crate::error::{Error, Result};
use crate::fusion::{backend_fuse, local_fix, midend_fuse, FusionLevel, LinkGeometry, RangeObservation};
use crate::ranging::{
    aoa_estimate, coarse_range_with, crlb_range, refine_range, ArrayConfig, CoarseParams, RangeEstimate, RefineParams,
};
use crate::rng::label;
use crate::scenario::{
    sample_obstacles_clear, BandClass, BaseStation, ObstacleField, Scenario, ScenarioConfig, StationId, Target,
};
use crate::signal::{make_tx_grid, synthesize_echo, OfdmConfig};
use crate::units::{db_to_linear, linear_to_db, SPEED_OF_LIGHT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Beamforming {
    /// Full-aperture beams at transmit and receive.
    Digital,
    /// Fixed analog codebook, one beam per RF chain.
    Hybrid,
}

/// OFDM numerology used by every station of one band.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaveformSpec {
    pub band: BandClass,
    pub n_subcarriers: usize,
    pub n_symbols: usize,
}

fn default_rf_chains() -> usize {
    4
}
fn default_half_width() -> f64 {
    6.0
}
fn default_tracking_error() -> f64 {
    2.0
}
fn default_true() -> bool {
    true
}
fn default_threshold() -> f64 {
    15.0
}
fn default_fusion() -> FusionLevel {
    FusionLevel::Mid
}
fn default_snapshots() -> usize {
    4
}
fn default_digital() -> Beamforming {
    Beamforming::Digital
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensingStudy {
    /// Named station sets; `group` picks the active one.
    pub groups: BTreeMap<String, Vec<StationId>>,
    pub group: String,
    /// Use only the first `k` stations of the group.
    #[serde(default)]
    pub station_count: Option<usize>,
    /// Per-element SNR of a line-of-sight monostatic echo at
    /// `reference_distance` with full-aperture beams, dB. Fixes the noise
    /// floor of every station.
    pub snr_db: f64,
    pub reference_distance: f64,
    pub waveforms: Vec<WaveformSpec>,
    #[serde(default = "default_digital")]
    pub beamforming: Beamforming,
    #[serde(default = "default_rf_chains")]
    pub hybrid_rf_chains: usize,
    /// Half-width of the hybrid analog beam fan, degrees. The fan is
    /// centred on the tracked target direction.
    #[serde(default = "default_half_width")]
    pub codebook_half_width_deg: f64,
    /// Standard deviation of the tracked direction the hybrid fan is
    /// centred on, degrees.
    #[serde(default = "default_tracking_error")]
    pub tracking_error_deg: f64,
    /// `[[x_min, y_min], [x_max, y_max]]` of the uniform target draw.
    pub target_region: [[f64; 2]; 2],
    /// Draw a fresh obstacle field for every trial.
    #[serde(default = "default_true")]
    pub redraw_obstacles: bool,
    /// Also use same-band cross links between active stations.
    #[serde(default = "default_true")]
    pub bistatic: bool,
    /// Integrated SNR an echo needs to be reported, dB.
    #[serde(default = "default_threshold")]
    pub detection_threshold_db: f64,
    #[serde(default = "default_fusion")]
    pub fusion: FusionLevel,
    #[serde(default = "default_snapshots")]
    pub aoa_snapshots: usize,
}

struct Station {
    bs: BaseStation,
    config: OfdmConfig,
    noise_psd_dbm_hz: f64,
}

pub(crate) struct SensingSetup {
    scenario: Scenario,
    /// Obstacle settings for per-trial redraws.
    field: ObstacleField,
    study: SensingStudy,
    active: Vec<Station>,
    /// Two-way delay across the area diagonal; the coarse search gate.
    max_delay: f64,
}

/// Outcome of one echo link.
struct Link {
    tx: usize,
    rx: usize,
    coarse: RangeEstimate,
    refined: RangeEstimate,
    detected: bool,
    channel: EchoChannel,
    /// Angle estimate relative to boresight and its variance (monostatic only).
    aoa: Option<(f64, f64)>,
}

impl SensingSetup {
    pub(crate) fn new(scenario: Scenario, config: &ScenarioConfig, study: SensingStudy) -> Result<Self> {
        let group = study
            .groups
            .get(&study.group)
            .ok_or_else(|| Error::config("study.group", format!("no group named `{}`", study.group)))?;
        let count = study.station_count.unwrap_or(group.len());
        if count == 0 || count > group.len() {
            return Err(Error::config("study.station_count", format!("must be in 1..={}", group.len())));
        }
        if !(study.reference_distance > 0.0) {
            return Err(Error::config("study.reference_distance", "must be positive"));
        }
        if !matches!(study.fusion, FusionLevel::Mid | FusionLevel::Back) {
            return Err(Error::config("study.fusion", "sensing sweeps fuse at the mid or back end"));
        }
        let [lo, hi] = study.target_region;
        if !(lo[0] < hi[0] && lo[1] < hi[1]) || lo.iter().chain(&hi).any(|v| *v < 0.0) {
            return Err(Error::config("study.target_region", "must be a non-empty box"));
        }
        if hi[0] > scenario.area_width || hi[1] > scenario.area_depth {
            return Err(Error::config("study.target_region", "extends outside the area"));
        }
        let max_delay = 2.0 * scenario.area_width.hypot(scenario.area_depth) / SPEED_OF_LIGHT;
        let mut active = Vec::with_capacity(count);
        for &id in &group[..count] {
            let bs = scenario
                .station(id)
                .ok_or_else(|| Error::config("study.groups", format!("no station {id}")))?
                .clone();
            let wf = study
                .waveforms
                .iter()
                .find(|w| w.band == bs.band_class())
                .ok_or_else(|| Error::config("study.waveforms", format!("no waveform for the band of station {id}")))?;
            let config = OfdmConfig::new(bs.bandwidth, bs.carrier_frequency, wf.n_subcarriers, wf.n_symbols)?;
            if max_delay >= config.max_unambiguous_delay() {
                return Err(Error::config(
                    "study.waveforms",
                    format!(
                        "unambiguous delay {:.3e} s of station {id} does not cover the area ({max_delay:.3e} s)",
                        config.max_unambiguous_delay()
                    ),
                ));
            }
            let params = scenario.propagation.path_loss_params(bs.band_class());
            let leg = path_gain(bs.carrier_frequency, study.reference_distance, true, &params)?;
            let lambda = bs.wavelength();
            let n = bs.antenna_count as f64;
            let reference_power = leg * leg * 4.0 * PI / (lambda * lambda) * n * n;
            let noise_variance = reference_power / db_to_linear(study.snr_db);
            let noise_psd_dbm_hz = linear_to_db(noise_variance / config.subcarrier_spacing);
            active.push(Station { bs, config, noise_psd_dbm_hz });
        }
        Ok(SensingSetup { scenario, field: config.obstacles.clone(), study, active, max_delay })
    }

    /// Beam gain of the configured architecture. The hybrid fan of analog
    /// beams points at a tracked direction that misses the target by a
    /// random error.
    fn beam_gain<R: Rng + ?Sized>(&self, bs: &BaseStation, rng: &mut R) -> f64 {
        let n = bs.antenna_count;
        match self.study.beamforming {
            Beamforming::Digital => n as f64,
            Beamforming::Hybrid if self.study.hybrid_rf_chains >= n => n as f64,
            Beamforming::Hybrid => {
                let miss = rng.sample::<f64, _>(StandardNormal) * self.study.tracking_error_deg.to_radians();
                let half_width = self.study.codebook_half_width_deg.to_radians();
                codebook_gain(bs, self.study.hybrid_rf_chains, half_width, miss)
            }
        }
    }

    fn trial_scenario(&self, seed: u64, stream_index: usize, trial: usize, target: &Target) -> Scenario {
        let mut scenario = self.scenario.clone();
        if self.study.redraw_obstacles {
            // Keep-out points include every station of the scenario, not
            // only the active ones, so all groups see the same field.
            let mut keep_out: Vec<[f64; 2]> = scenario.base_stations.iter().map(BaseStation::position_2d).collect();
            keep_out.push(target.position_2d());
            let field = &self.field;
            let mut rs = trial_stream(seed, stream_index, trial, &[label::OBSTACLES]);
            let mut obstacles = field.fixed.clone();
            obstacles.extend(sample_obstacles_clear(
                &mut rs,
                field.count,
                [scenario.area_width, scenario.area_depth],
                &field.sizes,
                &keep_out,
                field.clearance,
            ));
            scenario.obstacles = obstacles;
        }
        scenario
    }

    pub(crate) fn run_trial(&self, seed: u64, stream_index: usize, trial: usize) -> Result<Vec<(Metric, f64)>> {
        let stream = |labels: &[u64]| trial_stream(seed, stream_index, trial, labels);
        let [lo, hi] = self.study.target_region;
        let mut rt = stream(&[label::TARGET]);
        let target = Target::at(rt.random_range(lo[0]..hi[0]), rt.random_range(lo[1]..hi[1]));
        let scenario = self.trial_scenario(seed, stream_index, trial, &target);
        let p = target.position_2d();

        let grids: Vec<_> = self
            .active
            .iter()
            .map(|s| make_tx_grid(&s.config, &mut stream(&[label::GRID, s.bs.id as u64])))
            .collect();
        let gate = CoarseParams { delay_gate: Some((0.0, self.max_delay)), ..CoarseParams::default() };

        let mut links = Vec::new();
        for (ri, rx) in self.active.iter().enumerate() {
            for (ti, tx) in self.active.iter().enumerate() {
                if ti != ri && !(self.study.bistatic && tx.bs.same_band(&rx.bs)) {
                    continue;
                }
                let ids = [tx.bs.id as u64, rx.bs.id as u64];
                let mut beam = stream(&[label::BEAM, ids[0], ids[1]]);
                let g_tx = self.beam_gain(&tx.bs, &mut beam);
                let g_rx = self.beam_gain(&rx.bs, &mut beam);
                let channel = make_echo_channel(
                    &scenario,
                    &tx.bs,
                    &rx.bs,
                    &target,
                    g_tx * g_rx,
                    &mut stream(&[label::CHANNEL, ids[0], ids[1]]),
                )?;
                let config = tx.config;
                let frame = synthesize_echo(
                    &grids[ti],
                    std::slice::from_ref(&channel),
                    &config,
                    rx.noise_psd_dbm_hz,
                    &mut stream(&[label::NOISE, ids[0], ids[1]]),
                    0.0,
                )?;
                let params = CoarseParams { doppler_search: config.n_symbols >= 2, ..gate };
                let coarse = coarse_range_with(&frame, &params)?;
                let refined = refine_range(&frame, &coarse, &RefineParams::default())?;
                let integration = linear_to_db((config.n_subcarriers * config.n_symbols) as f64);
                let detected = coarse.snr_db + integration >= self.study.detection_threshold_db;
                let aoa = if ti == ri {
                    {
                    let resource_elements = (config.n_subcarriers * config.n_symbols) as f64;
                    let integrated = channel.alpha.norm_sqr() / frame.noise_variance * resource_elements;
                    let fitted = db_to_linear(coarse.snr_db) * resource_elements;
                    let mut rng = stream(&[label::BEAM, ids[1], u64::MAX]);
                    Some(angle_of_arrival(&rx.bs, integrated, fitted, p, self.study.aoa_snapshots, &mut rng)?)
                }
                } else {
                    None
                };
                links.push(Link { tx: ti, rx: ri, coarse, refined, detected, channel, aoa });
            }
        }

        let refined = self.fuse(&links, |l| &l.refined);
        let coarse = self.fuse(&links, |l| &l.coarse);
        let reference = self.active[0].bs.position_2d();
        let dist = |a: [f64; 2], b: [f64; 2]| (a[0] - b[0]).hypot(a[1] - b[1]);
        let true_range = dist(p, reference);
        let any_los = links.iter().any(|l| l.tx == l.rx && l.channel.los);

        let mut out = vec![
            (Metric::RmseRange, dist(refined, reference) - true_range),
            (Metric::RmseRangeCoarse, dist(coarse, reference) - true_range),
            (Metric::RmsePosition, dist(refined, p)),
            (Metric::LosProbability, if any_los { 1.0 } else { 0.0 }),
        ];
        let reference_link = links.iter().find(|l| l.tx == 0 && l.rx == 0).expect("monostatic link of the reference");
        let rx0 = &self.active[0];
        let noise = rx0.config.noise_variance(rx0.noise_psd_dbm_hz);
        if let Ok(report) = crlb_range(&reference_link.channel, &rx0.config, noise) {
            out.push((Metric::CrlbRange, report.crlb_range));
        }
        Ok(out)
    }

    /// Centre of the target region: the reported position when no link
    /// detects the target.
    fn prior(&self) -> [f64; 2] {
        let [lo, hi] = self.study.target_region;
        [(lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0]
    }

    /// Position from the detected links. Mid-end fusion needs two range
    /// observations; otherwise the back end combines the local fixes, and
    /// with no detection at all the prior is reported.
    fn fuse(&self, links: &[Link], pick: impl Fn(&Link) -> &RangeEstimate) -> [f64; 2] {
        let fixes: Vec<_> = links
            .iter()
            .filter(|l| l.tx == l.rx && l.detected)
            .map(|l| {
                let st = &self.active[l.rx].bs;
                let est = pick(l);
                let (angle, avar) = l.aoa.expect("monostatic links carry an angle");
                local_fix(st.id, st.position_2d(), st.boresight, est.range, est.variance, angle, avar)
            })
            .collect();
        let back = backend_fuse(&fixes).ok().map(|e| e.position);
        if self.study.fusion == FusionLevel::Back {
            return back.unwrap_or_else(|| self.prior());
        }
        let observations: Vec<RangeObservation> = links
            .iter()
            .filter(|l| l.detected)
            .map(|l| {
                let rx = &self.active[l.rx].bs;
                let tx = &self.active[l.tx].bs;
                let bistatic = l.tx != l.rx;
                let geometry = LinkGeometry {
                    rx_position: rx.position_2d(),
                    tx_position: bistatic.then(|| tx.position_2d()),
                };
                RangeObservation::from_estimate(pick(l), geometry, bistatic.then_some(tx.id))
            })
            .collect();
        if observations.len() >= 2 {
            let init = back.unwrap_or_else(|| self.prior());
            if let Ok(est) = midend_fuse(&observations, Some(init)) {
                if est.position.iter().all(|v| v.is_finite()) {
                    return est.position;
                }
            }
        }
        back.unwrap_or_else(|| self.prior())
    }
}

/// Simulated array snapshots of an echo and the matched-filter angle
/// estimate relative to boresight, with its predicted variance.
///
/// `integrated_snr` is the echo energy over the noise level summed over the
/// frame, already including the receive array gain; it is split evenly
/// over the antennas and snapshots. The variance is the deterministic ULA
/// bound at the fitted SNR a receiver would actually know.
pub(crate) fn angle_of_arrival<R: Rng + ?Sized>(
    bs: &BaseStation,
    integrated_snr: f64,
    fitted_integrated_snr: f64,
    target: [f64; 2],
    snapshots: usize,
    rng: &mut R,
) -> Result<(f64, f64)> {
    let n = bs.antenna_count;
    let snapshots = snapshots.max(1);
    let amplitude = (integrated_snr / (n * snapshots) as f64).sqrt();
    let a = station_steering(bs, bs.angle_to(target));
    let data: Vec<Vec<Complex64>> = (0..snapshots)
        .map(|_| {
            let s = unit_phase(rng) * amplitude;
            a.iter().map(|ak| ak * s + complex_gaussian(rng)).collect()
        })
        .collect();
    let array = ArrayConfig { antenna_count: n, antenna_spacing: bs.antenna_spacing, frequency: bs.carrier_frequency };
    let angle = aoa_estimate(&data, &array)?;
    let nf = n as f64;
    let slope = 2.0 * PI * bs.antenna_spacing / bs.wavelength() * angle.cos().abs().max(0.05);
    let variance = 6.0 / (fitted_integrated_snr.max(1e-12) * (nf * nf - 1.0).max(1.0) * slope * slope);
    Ok((angle, variance))
}
