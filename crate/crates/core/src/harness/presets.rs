//! Named experiments reproducing the network-level trends.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, PI};

use serde_json::json;

use super::{Beamforming, ExperimentSpec, JtStudy, Metric, PowerMinStudy, SensingStudy, Study, SweepAxis, WaveformSpec};
use crate::channel::Propagation;
use crate::comp::Method;
use crate::error::{Error, Result};
use crate::fusion::FusionLevel;
use crate::scenario::{BandClass, BaseStationConfig, ObstacleField, ScenarioConfig, SizeRanges};

pub const PRESET_NAMES: [&str; 4] = ["fig5b", "fig5c", "fig5d", "fig6"];

const SEED: u64 = 2024;

fn station(id: u32, x: f64, y: f64, carrier: f64, bandwidth: f64, antennas: usize, boresight: f64) -> BaseStationConfig {
    BaseStationConfig {
        id,
        position: [x, y, 0.0],
        carrier_frequency: carrier,
        bandwidth,
        antenna_count: Some(antennas),
        antenna_spacing: None,
        max_power_dbm: 30.0,
        rf_chain_count: None,
        clock_offset: 0.0,
        boresight,
    }
}

fn scenario(area: f64, stations: Vec<BaseStationConfig>, obstacles: ObstacleField) -> ScenarioConfig {
    ScenarioConfig {
        area_width: area,
        area_depth: area,
        base_stations: stations,
        obstacles,
        targets: Vec::new(),
        propagation: Propagation::default(),
        noise_psd_dbm_hz: -174.0,
        master_seed: SEED,
    }
}

fn paired(path: &str, values: Vec<serde_json::Value>) -> SweepAxis {
    SweepAxis { path: path.into(), values, paired: true }
}

fn groups(entries: &[(&str, &[u32])]) -> BTreeMap<String, Vec<u32>> {
    entries.iter().map(|(k, v)| (k.to_string(), v.to_vec())).collect()
}

/// Two high-band stations on opposite edges of a 500 m urban square with
/// the default obstacle field, and a low-band station co-located with each,
/// so both bands see identical blockage.
fn fig5b() -> ExperimentSpec {
    let (hf, hf_bw) = (0.34e12, 1e9);
    let (lf, lf_bw) = (28e9, 95e6);
    let stations = vec![
        station(0, 5.0, 250.0, hf, hf_bw, 16, 0.0),
        station(1, 495.0, 250.0, hf, hf_bw, 16, PI),
        station(2, 5.0, 250.0, lf, lf_bw, 8, 0.0),
        station(3, 495.0, 250.0, lf, lf_bw, 8, PI),
    ];
    let study = SensingStudy {
        groups: groups(&[
            ("hf_single", &[0]),
            ("hf_coop", &[0, 1]),
            ("lf_single", &[2]),
            ("lf_coop", &[2, 3]),
            ("hf_lf_coop", &[0, 1, 2, 3]),
        ]),
        group: "hf_single".into(),
        station_count: None,
        snr_db: 20.0,
        reference_distance: 100.0,
        waveforms: vec![
            WaveformSpec { band: BandClass::High, n_subcarriers: 8192, n_symbols: 1 },
            WaveformSpec { band: BandClass::Low, n_subcarriers: 512, n_symbols: 1 },
        ],
        beamforming: Beamforming::Digital,
        hybrid_rf_chains: 4,
        codebook_half_width_deg: 6.0,
        tracking_error_deg: 2.0,
        target_region: [[25.0, 25.0], [475.0, 475.0]],
        redraw_obstacles: true,
        bistatic: true,
        detection_threshold_db: 15.0,
        fusion: FusionLevel::Mid,
        aoa_snapshots: 4,
    };
    ExperimentSpec {
        name: "fig5b".into(),
        scenario: scenario(500.0, stations, ObstacleField::default()),
        study: Study::Sensing(study),
        trials: 500,
        seed: SEED,
        sweep: vec![paired(
            "study.group",
            ["hf_single", "hf_coop", "lf_single", "lf_coop", "hf_lf_coop"].iter().map(|g| json!(g)).collect(),
        )],
        outputs: vec![Metric::RmseRange, Metric::LosProbability],
    }
}

/// Up to four 0.34 THz stations around a 100 m square, digital against
/// hybrid beamforming.
fn fig5c() -> ExperimentSpec {
    let (f, bw) = (0.34e12, 1e9);
    let stations = vec![
        station(0, 2.0, 50.0, f, bw, 16, 0.0),
        station(1, 98.0, 50.0, f, bw, 16, PI),
        station(2, 50.0, 2.0, f, bw, 16, FRAC_PI_2),
        station(3, 50.0, 98.0, f, bw, 16, -FRAC_PI_2),
    ];
    let obstacles = ObstacleField {
        count: 4,
        sizes: SizeRanges { width: [3.0, 6.0], depth: [3.0, 6.0], height: [3.0, 10.0] },
        fixed: Vec::new(),
        clearance: 2.0,
    };
    let study = SensingStudy {
        groups: groups(&[("all", &[0, 1, 2, 3])]),
        group: "all".into(),
        station_count: Some(1),
        snr_db: 25.0,
        reference_distance: 50.0,
        waveforms: vec![WaveformSpec { band: BandClass::High, n_subcarriers: 1024, n_symbols: 1 }],
        beamforming: Beamforming::Digital,
        hybrid_rf_chains: 4,
        codebook_half_width_deg: 6.0,
        tracking_error_deg: 2.0,
        target_region: [[30.0, 30.0], [70.0, 70.0]],
        redraw_obstacles: true,
        bistatic: true,
        detection_threshold_db: 15.0,
        fusion: FusionLevel::Mid,
        aoa_snapshots: 4,
    };
    ExperimentSpec {
        name: "fig5c".into(),
        scenario: scenario(100.0, stations, obstacles),
        study: Study::Sensing(study),
        trials: 200,
        seed: SEED,
        sweep: vec![
            paired("study.station_count", (1..=4).map(|k| json!(k)).collect()),
            paired("study.beamforming", vec![json!("digital"), json!("hybrid")]),
        ],
        outputs: vec![Metric::RmseRange, Metric::RmseRangeCoarse],
    }
}

/// Joint transmission from up to four 28 GHz stations at the corners of a
/// 200 m square.
fn fig5d() -> ExperimentSpec {
    let (f, bw) = (28e9, 95e6);
    let c = 20.0;
    let far = 180.0;
    let stations = vec![
        station(0, c, c, f, bw, 8, PI / 4.0),
        station(1, far, far, f, bw, 8, -3.0 * PI / 4.0),
        station(2, far, c, f, bw, 8, 3.0 * PI / 4.0),
        station(3, c, far, f, bw, 8, -PI / 4.0),
    ];
    let obstacles = ObstacleField {
        count: 10,
        sizes: SizeRanges { width: [5.0, 20.0], depth: [5.0, 20.0], height: [5.0, 30.0] },
        fixed: Vec::new(),
        clearance: 2.0,
    };
    let study = JtStudy {
        stations: vec![0, 1, 2, 3],
        station_count: Some(1),
        coherent: true,
        user_region: [[60.0, 60.0], [140.0, 140.0]],
        tx_power_dbm: Some(20.0),
    };
    ExperimentSpec {
        name: "fig5d".into(),
        scenario: scenario(200.0, stations, obstacles),
        study: Study::JointTransmission(study),
        trials: 200,
        seed: SEED,
        sweep: vec![
            paired("study.station_count", (1..=4).map(|k| json!(k)).collect()),
            paired("study.coherent", vec![json!(true), json!(false)]),
        ],
        outputs: vec![Metric::SpectralEfficiency],
    }
}

/// Minimum-power cooperative ISAC beamforming at 6 GHz: a cluster of
/// stations around the sensed area serves a distant user.
fn fig6() -> ExperimentSpec {
    let (f, bw) = (6e9, 1e6);
    let stations = vec![
        station(0, 50.0, 50.0, f, bw, 8, PI / 4.0),
        station(1, 150.0, 150.0, f, bw, 8, -3.0 * PI / 4.0),
        station(2, 150.0, 50.0, f, bw, 8, 3.0 * PI / 4.0),
        station(3, 50.0, 150.0, f, bw, 8, -PI / 4.0),
    ];
    let obstacles = ObstacleField { count: 0, ..ObstacleField::default() };
    let study = PowerMinStudy {
        stations: vec![0, 1, 2, 3],
        station_count: Some(2),
        sinr_target_db: 10.0,
        crlb_bound: 0.03,
        method: Method::Sdr,
        user_region: [[400.0, 400.0], [550.0, 550.0]],
        target_region: [[80.0, 80.0], [120.0, 120.0]],
        n_subcarriers: 1024,
        n_symbols: 140,
        power_caps: false,
        sdr_max_dimension: 64,
    };
    ExperimentSpec {
        name: "fig6".into(),
        scenario: scenario(600.0, stations, obstacles),
        study: Study::PowerMin(study),
        trials: 100,
        seed: SEED,
        sweep: vec![
            paired("study.station_count", (2..=4).map(|k| json!(k)).collect()),
            paired("study.crlb_bound", vec![json!(0.03), json!(0.01)]),
            paired("study.method", vec![json!("sdr"), json!("crlb_approx")]),
            paired("study.sinr_target_db", [0, 5, 10, 15, 20].iter().map(|g| json!(*g as f64)).collect()),
        ],
        outputs: vec![Metric::MinPowerDbm],
    }
}

/// The experiment registered under `name`.
pub fn preset(name: &str) -> Result<ExperimentSpec> {
    match name {
        "fig5b" => Ok(fig5b()),
        "fig5c" => Ok(fig5c()),
        "fig5d" => Ok(fig5d()),
        "fig6" => Ok(fig6()),
        other => Err(Error::UnknownPreset(other.to_string())),
    }
}
