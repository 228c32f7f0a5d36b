//! Line-of-sight statistics in a random urban obstacle field: the share of
//! targets seen by one station against the share seen by at least one of
//! two stations on opposite edges.

use isaccoop::rng::{self, label};
use isaccoop::scenario::{build_scenario, BaseStationConfig, ObstacleField, ScenarioConfig};
use rand::Rng;

fn station(id: u32, x: f64, boresight: f64) -> BaseStationConfig {
    BaseStationConfig {
        id,
        position: [x, 250.0, 0.0],
        carrier_frequency: 0.34e12,
        bandwidth: 1e9,
        antenna_count: None,
        antenna_spacing: None,
        max_power_dbm: 30.0,
        rf_chain_count: None,
        clock_offset: 0.0,
        boresight,
    }
}

fn main() -> isaccoop::Result<()> {
    let trials = 2000;
    let (mut single, mut either) = (0usize, 0usize);
    for trial in 0..trials as u64 {
        let config = ScenarioConfig {
            area_width: 500.0,
            area_depth: 500.0,
            base_stations: vec![station(0, 5.0, 0.0), station(1, 495.0, std::f64::consts::PI)],
            obstacles: ObstacleField::default(),
            targets: Vec::new(),
            propagation: Default::default(),
            noise_psd_dbm_hz: -174.0,
            master_seed: trial,
        };
        let scenario = build_scenario(&config)?;
        let mut rng = rng::stream(trial, &[label::TARGET]);
        let target = [rng.random_range(25.0..475.0), rng.random_range(25.0..475.0)];
        let los: Vec<bool> = scenario
            .base_stations
            .iter()
            .map(|bs| scenario.is_los(bs.position_2d(), target))
            .collect::<isaccoop::Result<_>>()?;
        single += los[0] as usize;
        either += los.iter().any(|&l| l) as usize;
    }
    println!("P(LoS) single station: {:.3}", single as f64 / trials as f64);
    println!("P(LoS) either station: {:.3}", either as f64 / trials as f64);
    Ok(())
}
