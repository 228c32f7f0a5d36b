//! Experiment-harness behaviour on the shipped presets.

use isaccoop::harness::{
    csv_string, find_record, preset, run_experiment, svg_string, ExperimentSpec, Metric, PlotAxes, SweepAxis,
};
use serde_json::json;

fn digital_only(mut spec: ExperimentSpec) -> ExperimentSpec {
    spec.sweep.retain(|a| a.path != "study.beamforming");
    spec
}

#[test]
fn single_trial_runs_are_reproducible() {
    let mut spec = preset("fig5c").unwrap();
    spec.trials = 1;
    let a = run_experiment(&spec).unwrap();
    let b = run_experiment(&spec).unwrap();
    assert_eq!(a, b);
    assert_eq!(csv_string(&a), csv_string(&b));
}

#[test]
fn fig5c_svg_has_one_series_per_beamformer() {
    let mut spec = preset("fig5c").unwrap();
    spec.trials = 3;
    let records = run_experiment(&spec).unwrap();
    let svg = svg_string(&records, &PlotAxes::new(Metric::RmseRange)).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 2);
    assert!(svg.contains("study.beamforming=digital") && svg.contains("study.beamforming=hybrid"));
}

#[test]
fn standard_error_shrinks_as_inverse_root_trials() {
    let mut small = digital_only(preset("fig5c").unwrap());
    small.trials = 100;
    let mut large = small.clone();
    large.trials = 400;
    let a = run_experiment(&small).unwrap();
    let b = run_experiment(&large).unwrap();
    for (ra, rb) in a.iter().zip(&b) {
        assert_eq!((&ra.coordinates, ra.metric), (&rb.coordinates, rb.metric));
        let ratio = ra.stderr / rb.stderr;
        eprintln!("{:?} {}: stderr ratio {ratio:.3}", ra.coordinates, ra.metric.name());
        assert!((ratio / 2.0 - 1.0).abs() <= 0.2, "{:?} {}: ratio {ratio}", ra.coordinates, ra.metric.name());
    }
}

#[test]
fn fig6_power_grows_with_sinr_target() {
    let mut spec = preset("fig6").unwrap();
    spec.trials = 30;
    spec.sweep = vec![
        SweepAxis { path: "study.method".into(), values: vec![json!("crlb_approx")], paired: true },
        SweepAxis { path: "study.sinr_target_db".into(), values: vec![json!(5.0), json!(10.0), json!(15.0)], paired: true },
    ];
    let records = run_experiment(&spec).unwrap();
    let power: Vec<f64> = ["5.0", "10.0", "15.0"]
        .iter()
        .map(|g| find_record(&records, Metric::MinPowerDbm, &[("study.sinr_target_db", g)]).unwrap().value)
        .collect();
    assert!(power.windows(2).all(|w| w[1] >= w[0]), "{power:?}");
}

#[test]
fn failed_trials_are_counted() {
    let mut spec = preset("fig6").unwrap();
    spec.trials = 4;
    spec.sweep.clear();
    // Far beyond any station's power: every trial is infeasible.
    let isaccoop::harness::Study::PowerMin(study) = &mut spec.study else { unreachable!() };
    study.power_caps = true;
    study.sinr_target_db = 200.0;
    let records = run_experiment(&spec).unwrap();
    assert_eq!(records[0].failed, 4);
    assert_eq!(records[0].trials, 0);
    assert!(records[0].value.is_nan());
}
