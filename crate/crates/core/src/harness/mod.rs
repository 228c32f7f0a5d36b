//! Monte-Carlo experiment runner.
//!
//! An [`ExperimentSpec`] names a scenario, a study (what one trial does),
//! a sweep over parameter paths and the metrics to report. Every trial draws
//! from streams derived from `(seed, sweep point, trial)`, so results do not
//! depend on how trials are scheduled across workers. Axes marked `paired`
//! do not enter the stream key: every value along such an axis sees the same
//! targets, obstacles and noise, which turns comparisons along the axis into
//! paired comparisons.

mod output;
mod presets;
mod sensing;
mod studies;
mod transmit;

pub use output::{csv_string, emit_csv, emit_svg, svg_string, PlotAxes};
pub use presets::{preset, PRESET_NAMES};
pub use sensing::{Beamforming, SensingStudy, WaveformSpec};
pub use studies::{
    bootstrap_fraction, fusion_hierarchy, sync_study, FusionHierarchy, FusionTrial, HierarchyConfig, SyncConfig,
    SyncOutcome,
};
pub use transmit::{power_problem, JtStudy, PowerMinStudy};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::rng;
use crate::scenario::{build_scenario, ScenarioConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    /// RMSE of the fused distance from the group's reference station, m.
    RmseRange,
    /// Same as `RmseRange` with coarse (IDFT peak) ranging only.
    RmseRangeCoarse,
    RmsePosition,
    /// Probability that at least one active station sees the target.
    LosProbability,
    SpectralEfficiency,
    MinPowerDbm,
    /// Mean range CRLB of the reference station's monostatic link, m².
    CrlbRange,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::RmseRange => "rmse_range",
            Metric::RmseRangeCoarse => "rmse_range_coarse",
            Metric::RmsePosition => "rmse_position",
            Metric::LosProbability => "los_probability",
            Metric::SpectralEfficiency => "spectral_efficiency",
            Metric::MinPowerDbm => "min_power_dbm",
            Metric::CrlbRange => "crlb_range",
        }
    }

    /// Root-mean-square metrics aggregate per-trial errors; the others are
    /// plain means.
    fn is_rms(self) -> bool {
        matches!(self, Metric::RmseRange | Metric::RmseRangeCoarse | Metric::RmsePosition)
    }
}

/// One swept parameter: a dotted path into `{"scenario": …, "study": …}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxis {
    pub path: String,
    pub values: Vec<Value>,
    /// Share random streams across the values of this axis.
    #[serde(default)]
    pub paired: bool,
}

/// What a single trial does.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Study {
    Sensing(SensingStudy),
    JointTransmission(JtStudy),
    PowerMin(PowerMinStudy),
}

impl Study {
    pub fn metrics(&self) -> &'static [Metric] {
        match self {
            Study::Sensing(_) => &[
                Metric::RmseRange,
                Metric::RmseRangeCoarse,
                Metric::RmsePosition,
                Metric::LosProbability,
                Metric::CrlbRange,
            ],
            Study::JointTransmission(_) => &[Metric::SpectralEfficiency],
            Study::PowerMin(_) => &[Metric::MinPowerDbm],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    pub scenario: ScenarioConfig,
    pub study: Study,
    pub trials: usize,
    pub seed: u64,
    #[serde(default)]
    pub sweep: Vec<SweepAxis>,
    pub outputs: Vec<Metric>,
}

/// One aggregated value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub experiment: String,
    /// `(axis path, value)` in sweep order.
    pub coordinates: Vec<(String, String)>,
    pub metric: Metric,
    /// `NaN` when every trial failed.
    pub value: f64,
    pub stderr: f64,
    /// Trials that produced this metric.
    pub trials: usize,
    pub failed: usize,
}

/// A fully resolved sweep point.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub index: usize,
    /// Index over the unpaired axes only; keys the random streams.
    pub stream_index: usize,
    pub coordinates: Vec<(String, Value)>,
    pub scenario: ScenarioConfig,
    pub study: Study,
}

/// Random stream of one trial for one purpose.
pub fn trial_stream(seed: u64, stream_index: usize, trial: usize, labels: &[u64]) -> rng::Stream {
    let mut path = vec![stream_index as u64, trial as u64];
    path.extend_from_slice(labels);
    rng::stream(seed, &path)
}

fn resolve<'a>(root: &'a mut Value, path: &str) -> Result<&'a mut Value> {
    let mut node = root;
    for seg in path.split('.') {
        node = match node {
            Value::Object(map) => map.get_mut(seg),
            Value::Array(items) => seg.parse::<usize>().ok().and_then(|i| items.get_mut(i)),
            _ => None,
        }
        .ok_or_else(|| Error::config(path, "sweep path does not resolve against the config schema"))?;
    }
    Ok(node)
}

pub(crate) fn value_label(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::config("trials", "must be at least 1"));
        }
        if self.outputs.is_empty() {
            return Err(Error::config("outputs", "at least one metric is required"));
        }
        let available = self.study.metrics();
        if let Some(m) = self.outputs.iter().find(|m| !available.contains(m)) {
            return Err(Error::config("outputs", format!("metric `{}` is not produced by this study", m.name())));
        }
        for (i, axis) in self.sweep.iter().enumerate() {
            if axis.values.is_empty() {
                return Err(Error::config(format!("sweep[{i}].values"), "must not be empty"));
            }
            if self.sweep[..i].iter().any(|a| a.path == axis.path) {
                return Err(Error::config(format!("sweep[{i}].path"), "axis listed twice"));
            }
        }
        Ok(())
    }

    /// Cartesian product of the sweep axes, first axis outermost.
    pub fn sweep_points(&self) -> Result<Vec<SweepPoint>> {
        self.validate()?;
        let base = serde_json::json!({ "scenario": self.scenario, "study": self.study });
        let sizes: Vec<usize> = self.sweep.iter().map(|a| a.values.len()).collect();
        let total: usize = sizes.iter().product();
        let mut points = Vec::with_capacity(total);
        for index in 0..total {
            let mut rem = index;
            let mut digits = vec![0; sizes.len()];
            for (d, &s) in digits.iter_mut().zip(&sizes).rev() {
                *d = rem % s;
                rem /= s;
            }
            let mut doc = base.clone();
            let mut coordinates = Vec::with_capacity(sizes.len());
            let mut stream_index = 0;
            for ((axis, &d), &s) in self.sweep.iter().zip(&digits).zip(&sizes) {
                *resolve(&mut doc, &axis.path)? = axis.values[d].clone();
                coordinates.push((axis.path.clone(), axis.values[d].clone()));
                if !axis.paired {
                    stream_index = stream_index * s + d;
                }
            }
            let scenario: ScenarioConfig = serde_json::from_value(doc["scenario"].take())
                .map_err(|e| Error::config("scenario", format!("after applying sweep: {e}")))?;
            let study: Study = serde_json::from_value(doc["study"].take())
                .map_err(|e| Error::config("study", format!("after applying sweep: {e}")))?;
            points.push(SweepPoint { index, stream_index, coordinates, scenario, study });
        }
        Ok(points)
    }
}

/// A sweep point ready to run trials.
pub(crate) enum Prepared {
    Sensing(sensing::SensingSetup),
    JointTransmission(transmit::JtSetup),
    PowerMin(transmit::PowerMinSetup),
}

impl Prepared {
    pub(crate) fn new(point: &SweepPoint) -> Result<Self> {
        let scenario = build_scenario(&point.scenario)?;
        Ok(match &point.study {
            Study::Sensing(s) => Prepared::Sensing(sensing::SensingSetup::new(scenario, &point.scenario, s.clone())?),
            Study::JointTransmission(s) => Prepared::JointTransmission(transmit::JtSetup::new(scenario, s.clone())?),
            Study::PowerMin(s) => Prepared::PowerMin(transmit::PowerMinSetup::new(scenario, s.clone())?),
        })
    }

    pub(crate) fn run_trial(&self, seed: u64, stream_index: usize, trial: usize) -> Result<Vec<(Metric, f64)>> {
        match self {
            Prepared::Sensing(s) => s.run_trial(seed, stream_index, trial),
            Prepared::JointTransmission(s) => s.run_trial(seed, stream_index, trial),
            Prepared::PowerMin(s) => s.run_trial(seed, stream_index, trial),
        }
    }
}

fn aggregate(metric: Metric, values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, 0.0);
    }
    let nf = n as f64;
    let mean_sd = |xs: &mut dyn Iterator<Item = f64>| {
        let xs: Vec<f64> = xs.collect();
        let mean = xs.iter().sum::<f64>() / nf;
        let var = if n > 1 { xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (nf - 1.0) } else { 0.0 };
        (mean, var.sqrt())
    };
    if metric.is_rms() {
        let (mse, sd) = mean_sd(&mut values.iter().map(|e| e * e));
        let rmse = mse.sqrt();
        // Delta method: se(√m) = se(m) / (2√m).
        let se = if rmse > 0.0 { sd / nf.sqrt() / (2.0 * rmse) } else { 0.0 };
        (rmse, se)
    } else {
        let (mean, sd) = mean_sd(&mut values.iter().copied());
        (mean, sd / nf.sqrt())
    }
}

/// Runs every sweep point on the global thread pool.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<Vec<ResultRecord>> {
    run_on_current_pool(spec)
}

/// Runs on a dedicated pool of `workers` threads. The records are identical
/// for every worker count.
pub fn run_experiment_with_workers(spec: &ExperimentSpec, workers: usize) -> Result<Vec<ResultRecord>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidParameter(format!("cannot start {workers} workers: {e}")))?;
    pool.install(|| run_on_current_pool(spec))
}

fn run_on_current_pool(spec: &ExperimentSpec) -> Result<Vec<ResultRecord>> {
    let points = spec.sweep_points()?;
    let prepared = points.iter().map(Prepared::new).collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(usize, usize)> = (0..points.len()).flat_map(|p| (0..spec.trials).map(move |t| (p, t))).collect();
    let outcomes: Vec<Result<Vec<(Metric, f64)>>> = jobs
        .par_iter()
        .map(|&(p, t)| prepared[p].run_trial(spec.seed, points[p].stream_index, t))
        .collect();
    // Configuration problems abort; anything else is a failed trial.
    if let Some(Err(e)) = outcomes.iter().find(|o| matches!(o, Err(e) if e.exit_code() == 2)) {
        return Err(Error::config("study", e.to_string()));
    }

    let mut records = Vec::new();
    for (p, point) in points.iter().enumerate() {
        let trials = &outcomes[p * spec.trials..(p + 1) * spec.trials];
        for &metric in &spec.outputs {
            let values: Vec<f64> = trials
                .iter()
                .filter_map(|o| o.as_ref().ok())
                .filter_map(|vals| vals.iter().find(|(m, _)| *m == metric).map(|(_, v)| *v))
                .filter(|v| v.is_finite())
                .collect();
            let (value, stderr) = aggregate(metric, &values);
            records.push(ResultRecord {
                experiment: spec.name.clone(),
                coordinates: point.coordinates.iter().map(|(k, v)| (k.clone(), value_label(v))).collect(),
                metric,
                value,
                stderr,
                trials: values.len(),
                failed: spec.trials - values.len(),
            });
        }
    }
    Ok(records)
}

/// Looks up the record for `metric` whose coordinates match every given
/// `(path, value)` pair.
pub fn find_record<'a>(records: &'a [ResultRecord], metric: Metric, coords: &[(&str, &str)]) -> Option<&'a ResultRecord> {
    records.iter().find(|r| {
        r.metric == metric
            && coords.iter().all(|(k, v)| r.coordinates.iter().any(|(rk, rv)| rk == k && rv == v))
    })
}
