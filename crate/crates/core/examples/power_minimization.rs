//! Minimum-power cooperative ISAC beamforming: the semidefinite relaxation
//! against the closed-form CRLB approximation, a hybrid projection, and
//! station selection with an activation cost.

use isaccoop::comp::{
    hybrid_project, min_power_crlb_approx, min_power_sdr, select_nodes, PowerMinSpec, PowerProblem, SdrOptions,
    SelectionOptions,
};
use isaccoop::rng::{self, label};
use isaccoop::scenario::{build_scenario, ScenarioConfig};
use isaccoop::signal::OfdmConfig;

const SCENARIO: &str = r#"{
  "area_width": 600.0, "area_depth": 600.0,
  "base_stations": [
    { "id": 0, "position": [50.0, 50.0, 0.0],   "carrier_frequency": 6e9, "bandwidth": 1e6, "boresight": 0.785398 },
    { "id": 1, "position": [150.0, 150.0, 0.0], "carrier_frequency": 6e9, "bandwidth": 1e6, "boresight": -2.356194 },
    { "id": 2, "position": [150.0, 50.0, 0.0],  "carrier_frequency": 6e9, "bandwidth": 1e6, "boresight": 2.356194 }
  ],
  "obstacles": { "count": 0 }
}"#;

fn main() -> isaccoop::Result<()> {
    let scenario = build_scenario(&ScenarioConfig::from_json(SCENARIO)?)?;
    let waveform = OfdmConfig::new(1e6, 6e9, 1024, 140)?;
    for sinr in [0.0, 10.0, 20.0] {
        let spec = PowerMinSpec {
            sinr_target_db: sinr,
            crlb_bound: 0.03,
            candidate_stations: vec![0, 1, 2],
            comm_user: [480.0, 470.0, 0.0],
            sense_target: [100.0, 95.0, 0.0],
            power_caps: false,
        };
        let problem = PowerProblem::from_scenario(&scenario, &spec, &waveform, &mut rng::stream(3, &[label::CHANNEL]))?;
        let options = SdrOptions { max_dimension: problem.dimension(), ..SdrOptions::default() };
        let sdr = min_power_sdr(&problem, &options)?;
        let approx = min_power_crlb_approx(&problem)?;
        let hybrid = hybrid_project(&problem, &approx, 2)?;
        let chosen = select_nodes(&problem, &SelectionOptions { activation_cost_mw: 50.0, sdr: options, ..SelectionOptions::default() })?;
        println!(
            "SINR {sinr:>4} dB: SDR {:.2} dBm (bound {:.2}), approx {:.2} dBm, hybrid-feasible {}, selected {:?}",
            sdr.total_power_dbm,
            sdr.relaxation_bound_dbm.unwrap_or(f64::NAN),
            approx.total_power_dbm,
            hybrid.solution.feasible,
            chosen.active
        );
    }
    Ok(())
}
