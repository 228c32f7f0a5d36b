//! Spectral efficiency of coherent and non-coherent joint transmission as
//! stations are added, for a user between four 28 GHz stations.

use isaccoop::channel::make_comm_channel;
use isaccoop::comp::jt_spectral_efficiency;
use isaccoop::rng::{self, label};
use isaccoop::scenario::{build_scenario, ScenarioConfig};
use isaccoop::units::dbm_to_mw;
use num_complex::Complex64;

const SCENARIO: &str = r#"{
  "area_width": 200.0, "area_depth": 200.0,
  "base_stations": [
    { "id": 0, "position": [20.0, 20.0, 0.0],   "carrier_frequency": 28e9, "bandwidth": 95e6 },
    { "id": 1, "position": [180.0, 180.0, 0.0], "carrier_frequency": 28e9, "bandwidth": 95e6 },
    { "id": 2, "position": [180.0, 20.0, 0.0],  "carrier_frequency": 28e9, "bandwidth": 95e6 },
    { "id": 3, "position": [20.0, 180.0, 0.0],  "carrier_frequency": 28e9, "bandwidth": 95e6 }
  ],
  "obstacles": { "count": 0 }
}"#;

fn main() -> isaccoop::Result<()> {
    let scenario = build_scenario(&ScenarioConfig::from_json(SCENARIO)?)?;
    let user = [110.0, 95.0, 0.0];
    let noise = dbm_to_mw(scenario.noise_psd_dbm_hz) * 95e6;
    let p = dbm_to_mw(20.0);
    let mut channels = Vec::new();
    let mut weights: Vec<Vec<Complex64>> = Vec::new();
    for bs in &scenario.base_stations {
        let ch = make_comm_channel(&scenario, bs, user, &mut rng::stream(1, &[label::CHANNEL, bs.id as u64]))?;
        // Maximum-ratio beam at full power.
        let norm = ch.gain().sqrt();
        weights.push(ch.h.iter().map(|h| h * (p.sqrt() / norm)).collect());
        channels.push(ch);
        let k = channels.len();
        let coherent = jt_spectral_efficiency(&channels, &weights, noise, true)?;
        let incoherent = jt_spectral_efficiency(&channels, &weights, noise, false)?;
        println!("{k} station(s): coherent {coherent:.3} bit/s/Hz, non-coherent {incoherent:.3} bit/s/Hz");
    }
    Ok(())
}
