//! Stand-alone studies: the fusion accuracy hierarchy and clock-offset
//! calibration.

use std::f64::consts::PI;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::sensing::angle_of_arrival;
use crate::channel::{unit_phase, EchoChannel};
use crate::error::{Error, Result};
use crate::fusion::{
    apply_clock_offset, backend_fuse, frontend_fuse, frontend_locate, local_fix, midend_fuse, truth_alignment,
    tdoa_calibrate_with, CalibrationParams, LinkGeometry, RangeObservation,
};
use crate::ranging::{coarse_range_with, refine_range, CoarseParams, RefineParams};
use crate::rng::{self, label};
use crate::scenario::{build_scenario, BaseStationConfig, ObstacleField, ScenarioConfig, Target};
use crate::signal::{make_tx_grid, noise_psd_for_snr, synthesize_echo, EchoFrame, OfdmConfig};
use crate::units::{db_to_linear, linear_to_db, SPEED_OF_LIGHT};

/// Fraction of paired bootstrap resamples in which the RMSE of `a` does not
/// exceed the RMSE of `b`.
pub fn bootstrap_fraction(a: &[f64], b: &[f64], resamples: usize, seed: u64) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::DimensionMismatch(format!("paired samples of length {} and {}", a.len(), b.len())));
    }
    let mut r = rng::stream(seed, &[label::BOOTSTRAP]);
    let n = a.len();
    let mut wins = 0;
    for _ in 0..resamples {
        let (mut sa, mut sb) = (0.0, 0.0);
        for _ in 0..n {
            let i = r.random_range(0..n);
            sa += a[i] * a[i];
            sb += b[i] * b[i];
        }
        if sa <= sb {
            wins += 1;
        }
    }
    Ok(wins as f64 / resamples.max(1) as f64)
}

fn rms(xs: &[f64]) -> f64 {
    (xs.iter().map(|x| x * x).sum::<f64>() / xs.len().max(1) as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HierarchyConfig {
    pub stations: usize,
    /// Stations sit on a circle of this radius around `center`, facing it.
    pub radius: f64,
    pub center: [f64; 2],
    pub target: [f64; 2],
    pub carrier_frequency: f64,
    pub bandwidth: f64,
    pub n_subcarriers: usize,
    pub antennas: usize,
    /// Per-element SNR of every link, dB.
    pub snr_db: f64,
    pub trials: usize,
    pub resamples: usize,
    pub seed: u64,
}

impl Default for HierarchyConfig {
    fn default() -> Self {
        HierarchyConfig {
            stations: 4,
            radius: 30.0,
            center: [50.0, 50.0],
            target: [53.0, 46.0],
            carrier_frequency: 0.34e12,
            bandwidth: 1e9,
            n_subcarriers: 1024,
            antennas: 16,
            snr_db: -5.0,
            trials: 500,
            resamples: 1000,
            seed: 7,
        }
    }
}

/// Position errors of one trial, m.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionTrial {
    pub front: f64,
    pub mid: f64,
    pub back: f64,
    /// Coherent SNR of the front-end sum over the mean per-link SNR, dB.
    pub coherent_gain_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionHierarchy {
    pub trials: Vec<FusionTrial>,
    pub rmse_front: f64,
    pub rmse_mid: f64,
    pub rmse_back: f64,
    /// Bootstrap confidence that front-end RMSE ≤ mid-end RMSE.
    pub confidence_front_mid: f64,
    /// Bootstrap confidence that mid-end RMSE ≤ back-end RMSE.
    pub confidence_mid_back: f64,
    pub coherent_gain_db: f64,
    /// `10·log10(K)` for `K` fused links.
    pub expected_gain_db: f64,
    pub links: usize,
}

/// Front-, mid- and back-end fusion of the same echoes: every ordered
/// station pair forms one link, all links see the same per-element SNR.
pub fn fusion_hierarchy(config: &HierarchyConfig) -> Result<FusionHierarchy> {
    if config.stations < 2 || config.trials == 0 {
        return Err(Error::config("stations", "need at least two stations and one trial"));
    }
    let area = 2.0 * (config.center[0].max(config.center[1]) + config.radius);
    let stations: Vec<BaseStationConfig> = (0..config.stations)
        .map(|k| {
            let phi = 2.0 * PI * k as f64 / config.stations as f64;
            BaseStationConfig {
                id: k as u32,
                position: [config.center[0] + config.radius * phi.cos(), config.center[1] + config.radius * phi.sin(), 0.0],
                carrier_frequency: config.carrier_frequency,
                bandwidth: config.bandwidth,
                antenna_count: Some(config.antennas),
                antenna_spacing: None,
                max_power_dbm: 30.0,
                rf_chain_count: None,
                clock_offset: 0.0,
                boresight: phi + PI,
            }
        })
        .collect();
    let scenario = build_scenario(&ScenarioConfig {
        area_width: area,
        area_depth: area,
        base_stations: stations,
        obstacles: ObstacleField { count: 0, ..ObstacleField::default() },
        targets: vec![Target::at(config.target[0], config.target[1])],
        propagation: Default::default(),
        noise_psd_dbm_hz: -174.0,
        master_seed: config.seed,
    })?;
    let ofdm = OfdmConfig::new(config.bandwidth, config.carrier_frequency, config.n_subcarriers, 1)?;
    let psd = noise_psd_for_snr(&ofdm, 1.0, config.snr_db);
    let target = config.target;
    let pairs: Vec<(usize, usize)> =
        (0..config.stations).flat_map(|rx| (0..config.stations).map(move |tx| (tx, rx))).collect();
    let dist = |a: [f64; 2], b: [f64; 2]| (a[0] - b[0]).hypot(a[1] - b[1]);
    let resource_elements = ofdm.n_subcarriers as f64;

    let run = |trial: usize| -> Result<FusionTrial> {
        let stream = |labels: &[u64]| {
            let mut path = vec![trial as u64];
            path.extend_from_slice(labels);
            rng::stream(config.seed, &path)
        };
        let grids: Vec<_> =
            (0..config.stations).map(|k| make_tx_grid(&ofdm, &mut stream(&[label::GRID, k as u64]))).collect();
        let mut frames = Vec::with_capacity(pairs.len());
        let mut geometry = Vec::with_capacity(pairs.len());
        let mut observations = Vec::with_capacity(pairs.len());
        let mut fixes = Vec::new();
        for &(tx, rx) in &pairs {
            let (stx, srx) = (&scenario.base_stations[tx], &scenario.base_stations[rx]);
            let ids = [tx as u64, rx as u64];
            let tau = (dist(stx.position_2d(), target) + dist(srx.position_2d(), target)) / SPEED_OF_LIGHT;
            let alpha = unit_phase(&mut stream(&[label::CHANNEL, ids[0], ids[1]]));
            let channel = EchoChannel { alpha, tau, doppler: 0.0, los: true, tx_station: stx.id, rx_station: srx.id };
            let frame = synthesize_echo(&grids[tx], &[channel], &ofdm, psd, &mut stream(&[label::NOISE, ids[0], ids[1]]), 0.0)?;
            let coarse = coarse_range_with(&frame, &CoarseParams { doppler_search: false, ..CoarseParams::default() })?;
            let refined = refine_range(&frame, &coarse, &RefineParams::default())?;
            let bistatic = tx != rx;
            let link = LinkGeometry { rx_position: srx.position_2d(), tx_position: bistatic.then(|| stx.position_2d()) };
            observations.push(RangeObservation::from_estimate(&refined, link, bistatic.then_some(stx.id)));
            if !bistatic {
                let integrated = alpha.norm_sqr() / frame.noise_variance * resource_elements;
                let fitted = db_to_linear(refined.snr_db) * resource_elements;
                let (angle, avar) =
                    angle_of_arrival(srx, integrated, fitted, target, 4, &mut stream(&[label::BEAM, ids[1]]))?;
                fixes.push(local_fix(srx.id, srx.position_2d(), srx.boresight, refined.range, refined.variance, angle, avar));
            }
            geometry.push(link);
            frames.push(frame);
        }
        let back = backend_fuse(&fixes)?;
        let mid = midend_fuse(&observations, Some(back.position))?;
        let phases: Vec<f64> = frames.iter().map(|f| f.truth[0].alpha.arg()).collect();
        let front = frontend_locate(&frames, &geometry, &phases, mid.position)?;

        // Coherent gain of the front end, all echoes aligned onto the first.
        let reference_delay = frames[0].truth[0].tau;
        let alignments = frames.iter().map(|f| truth_alignment(f, reference_delay)).collect::<Result<Vec<_>>>()?;
        let coherent = frontend_fuse(&frames, &alignments)?;
        let mean_input =
            linear_to_db(coherent.input_snr_db.iter().map(|s| db_to_linear(*s)).sum::<f64>() / frames.len() as f64);
        Ok(FusionTrial {
            front: front.error_to(target),
            mid: mid.error_to(target),
            back: back.error_to(target),
            coherent_gain_db: coherent.combined_snr_db - mean_input,
        })
    };
    let trials = (0..config.trials).into_par_iter().map(run).collect::<Result<Vec<_>>>()?;

    let front: Vec<f64> = trials.iter().map(|t| t.front).collect();
    let mid: Vec<f64> = trials.iter().map(|t| t.mid).collect();
    let back: Vec<f64> = trials.iter().map(|t| t.back).collect();
    let gain = trials.iter().map(|t| t.coherent_gain_db).sum::<f64>() / trials.len() as f64;
    Ok(FusionHierarchy {
        rmse_front: rms(&front),
        rmse_mid: rms(&mid),
        rmse_back: rms(&back),
        confidence_front_mid: bootstrap_fraction(&front, &mid, config.resamples, config.seed)?,
        confidence_mid_back: bootstrap_fraction(&mid, &back, config.resamples, config.seed.wrapping_add(1))?,
        coherent_gain_db: gain,
        expected_gain_db: linear_to_db(pairs.len() as f64),
        links: pairs.len(),
        trials,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyncConfig {
    /// Receiver clock offset injected into every frame, s.
    pub clock_offset: f64,
    /// Per-element SNR of both the reference path and the echo, dB.
    pub snr_db: f64,
    /// Known two-way delay of the reference path (e.g. a surveyed
    /// landmark), s.
    pub reference_delay: f64,
    pub target_range: f64,
    pub bandwidth: f64,
    pub carrier_frequency: f64,
    pub n_subcarriers: usize,
    pub trials: usize,
    pub seed: u64,
}

impl Default for SyncConfig {
    fn default() -> Self {
        SyncConfig {
            clock_offset: 3.336e-9,
            snr_db: 20.0,
            reference_delay: 100e-9,
            target_range: 60.0,
            bandwidth: 1e9,
            carrier_frequency: 0.34e12,
            n_subcarriers: 1024,
            trials: 500,
            seed: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyncOutcome {
    /// Mean range error with the offset left in place, m.
    pub bias_uncalibrated: f64,
    /// Mean range error after reference-path calibration, m.
    pub bias_calibrated: f64,
    pub rmse_calibrated: f64,
    /// `c·offset/2`, the bias the offset predicts.
    pub expected_bias: f64,
    pub mean_estimated_offset: f64,
    pub trials: usize,
}

/// Monostatic ranging with a receiver clock offset, before and after
/// calibration against a reference path of known delay.
pub fn sync_study(config: &SyncConfig) -> Result<SyncOutcome> {
    if config.trials == 0 {
        return Err(Error::config("trials", "must be at least 1"));
    }
    let ofdm = OfdmConfig::new(config.bandwidth, config.carrier_frequency, config.n_subcarriers, 1)?;
    let echo_delay = 2.0 * config.target_range / SPEED_OF_LIGHT;
    let guard = 40e-9;
    if echo_delay < config.reference_delay + guard || echo_delay >= ofdm.max_unambiguous_delay() / 2.0 {
        return Err(Error::config("target_range", "echo must follow the reference path inside the unambiguous range"));
    }
    let psd = noise_psd_for_snr(&ofdm, 1.0, config.snr_db);
    let gate = CoarseParams {
        doppler_search: false,
        delay_gate: Some((config.reference_delay + guard, ofdm.max_unambiguous_delay() / 2.0)),
        ..CoarseParams::default()
    };
    let range_of = |frame: &EchoFrame| -> Result<f64> {
        let coarse = coarse_range_with(frame, &gate)?;
        Ok(refine_range(frame, &coarse, &RefineParams::default())?.range)
    };

    let run = |trial: usize| -> Result<(f64, f64, f64)> {
        let stream = |l: u64| rng::stream(config.seed, &[trial as u64, l]);
        let mut phases = stream(label::CHANNEL);
        let path = |tau: f64, rng: &mut rng::Stream| EchoChannel {
            alpha: unit_phase(rng),
            tau,
            doppler: 0.0,
            los: true,
            tx_station: 0,
            rx_station: 0,
        };
        let channels = [path(config.reference_delay, &mut phases), path(echo_delay, &mut phases)];
        let x = make_tx_grid(&ofdm, &mut stream(label::GRID));
        let clean = synthesize_echo(&x, &channels, &ofdm, psd, &mut stream(label::NOISE), 0.0)?;
        let skewed = apply_clock_offset(&clean, config.clock_offset);
        let raw = range_of(&skewed)? - config.target_range;
        let cal = tdoa_calibrate_with(&skewed, config.reference_delay, &CalibrationParams::default())?;
        let corrected = range_of(&cal.frame)? - config.target_range;
        Ok((raw, corrected, cal.offset))
    };
    let outcomes = (0..config.trials).into_par_iter().map(run).collect::<Result<Vec<_>>>()?;
    let n = outcomes.len() as f64;
    let mean = |f: fn(&(f64, f64, f64)) -> f64| outcomes.iter().map(f).sum::<f64>() / n;
    let corrected: Vec<f64> = outcomes.iter().map(|o| o.1).collect();
    Ok(SyncOutcome {
        bias_uncalibrated: mean(|o| o.0),
        bias_calibrated: mean(|o| o.1),
        rmse_calibrated: rms(&corrected),
        expected_bias: SPEED_OF_LIGHT * config.clock_offset / 2.0,
        mean_estimated_offset: mean(|o| o.2),
        trials: outcomes.len(),
    })
}
