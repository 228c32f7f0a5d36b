//! Command line front end: run presets, simulate echo links, evaluate
//! bounds and solve beamforming problems.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use isaccoop::channel::make_echo_channel;
use isaccoop::comp::{
    hybrid_project, min_power_crlb_approx, min_power_sdr, select_nodes, PowerMinSpec, PowerProblem, SdrOptions,
    SelectionOptions,
};
use isaccoop::harness::{self, emit_csv, emit_svg, Metric, PlotAxes};
use isaccoop::ranging::{coarse_range, crlb_from_snr, crlb_range, refine_range, RangeEstimate, RefineParams};
use isaccoop::rng::{self, label};
use isaccoop::scenario::{build_scenario, Scenario, ScenarioConfig, Target};
use isaccoop::signal::{dump_frame, make_tx_grid, synthesize_echo, OfdmConfig};
use isaccoop::{Error, Result};

#[derive(Parser)]
#[command(name = "isaccoop", version, about = "Cooperative multi-node ISAC network simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a named preset or an experiment file and write CSV (and SVG).
    Experiment {
        /// Preset name (fig5b, fig5c, fig5d, fig6); ignored with --spec.
        preset: Option<String>,
        /// Experiment specification as JSON.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads; the output does not depend on it.
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long, default_value = "results.csv")]
        out: PathBuf,
        #[arg(long)]
        svg: Option<PathBuf>,
        /// Metric plotted in the SVG; the first output when absent.
        #[arg(long)]
        metric: Option<String>,
        /// Print the resolved specification as JSON instead of running it.
        #[arg(long)]
        print_spec: bool,
    },
    /// Synthesize one echo frame from a scenario and range it.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Transmitting station id; the first station when absent.
        #[arg(long)]
        tx: Option<u32>,
        /// Receiving station id; the transmitter when absent (monostatic).
        #[arg(long)]
        rx: Option<u32>,
        /// Target index in the scenario.
        #[arg(long, default_value_t = 0)]
        target: usize,
        #[arg(long, default_value_t = 256)]
        subcarriers: usize,
        #[arg(long, default_value_t = 1)]
        symbols: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Write the frame as binary plus a JSON header.
        #[arg(long)]
        dump: Option<PathBuf>,
    },
    /// Range Cramér-Rao bound of an OFDM waveform at a given SNR.
    Crlb {
        #[arg(long)]
        bandwidth: f64,
        #[arg(long)]
        carrier: f64,
        #[arg(long, default_value_t = 256)]
        subcarriers: usize,
        #[arg(long, default_value_t = 1)]
        symbols: usize,
        /// Per-element SNR, dB.
        #[arg(long)]
        snr_db: f64,
    },
    /// Minimum-power cooperative beamforming for one user and one target.
    Optimize {
        #[arg(long)]
        config: PathBuf,
        /// Problem specification (`PowerMinSpec`) as JSON.
        #[arg(long)]
        spec: PathBuf,
        #[arg(long, value_enum, default_value_t = Solver::Approx)]
        method: Solver,
        /// RF chains per station for the hybrid projection.
        #[arg(long, default_value_t = 2)]
        rf_chains: usize,
        /// Select the active subset with this activation cost, mW.
        #[arg(long)]
        select: Option<f64>,
        #[arg(long, default_value_t = 64)]
        subcarriers: usize,
        #[arg(long, default_value_t = 14)]
        symbols: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Solver {
    Sdr,
    Approx,
    Hybrid,
}

fn read_scenario(path: &PathBuf) -> Result<Scenario> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::InvalidConfig { path: path.display().to_string(), reason: e.to_string() })?;
    build_scenario(&ScenarioConfig::from_json(&text)?)
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    use std::io::Write;
    let text = serde_json::to_string_pretty(value)?;
    match writeln!(std::io::stdout().lock(), "{text}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn parse_metric(name: &str) -> Result<Metric> {
    serde_json::from_value(serde_json::Value::String(name.to_string()))
        .map_err(|_| Error::InvalidConfig { path: "--metric".into(), reason: format!("unknown metric `{name}`") })
}

#[allow(clippy::too_many_arguments)]
fn experiment(
    preset: Option<String>,
    spec: Option<PathBuf>,
    trials: Option<usize>,
    seed: Option<u64>,
    workers: Option<usize>,
    out: PathBuf,
    svg: Option<PathBuf>,
    metric: Option<String>,
    print_spec: bool,
) -> Result<()> {
    let mut spec = match (spec, preset) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(&path)
                .map_err(|e| Error::InvalidConfig { path: path.display().to_string(), reason: e.to_string() })?;
            serde_json::from_str(&text)?
        }
        (None, Some(name)) => harness::preset(&name)?,
        (None, None) => {
            return Err(Error::InvalidConfig { path: "preset".into(), reason: "give a preset name or --spec".into() })
        }
    };
    if let Some(t) = trials {
        spec.trials = t;
    }
    if let Some(s) = seed {
        spec.seed = s;
    }
    if print_spec {
        return print_json(&spec);
    }
    let records = match workers {
        Some(w) => harness::run_experiment_with_workers(&spec, w)?,
        None => harness::run_experiment(&spec)?,
    };
    emit_csv(&records, &out)?;
    if let Some(path) = svg {
        let metric = match metric {
            Some(m) => parse_metric(&m)?,
            None => spec.outputs[0],
        };
        emit_svg(&records, &PlotAxes::new(metric), &path)?;
    }
    let failed: usize = records.iter().map(|r| r.failed).sum();
    eprintln!("{}: {} records written to {} ({failed} failed trial-metrics)", spec.name, records.len(), out.display());
    Ok(())
}

#[derive(Serialize)]
struct SimulateReport {
    tx: u32,
    rx: u32,
    true_range: f64,
    los: bool,
    snr_db: f64,
    crlb_range: Option<f64>,
    coarse: RangeEstimate,
    refined: RangeEstimate,
}

#[allow(clippy::too_many_arguments)]
fn simulate(
    config: PathBuf,
    tx: Option<u32>,
    rx: Option<u32>,
    target: usize,
    subcarriers: usize,
    symbols: usize,
    seed: u64,
    dump: Option<PathBuf>,
) -> Result<()> {
    let scenario = read_scenario(&config)?;
    let station = |id: Option<u32>, fallback: u32| {
        let id = id.unwrap_or(fallback);
        scenario.station(id).ok_or_else(|| Error::InvalidConfig { path: "--tx/--rx".into(), reason: format!("no station {id}") })
    };
    let tx = station(tx, scenario.base_stations[0].id)?;
    let rx = station(rx, tx.id)?;
    let target: &Target = scenario
        .targets
        .get(target)
        .ok_or_else(|| Error::InvalidConfig { path: "targets".into(), reason: format!("no target {target}") })?;
    let ofdm = OfdmConfig::new(tx.bandwidth, tx.carrier_frequency, subcarriers, symbols)?;
    let gain = tx.antenna_count as f64 * rx.antenna_count as f64 * isaccoop::units::dbm_to_mw(tx.max_power_dbm);
    let channel = make_echo_channel(&scenario, tx, rx, target, gain, &mut rng::stream(seed, &[label::CHANNEL]))?;
    let x = make_tx_grid(&ofdm, &mut rng::stream(seed, &[label::GRID]));
    let frame =
        synthesize_echo(&x, &[channel], &ofdm, scenario.noise_psd_dbm_hz, &mut rng::stream(seed, &[label::NOISE]), 0.0)?;
    if let Some(path) = dump {
        dump_frame(&frame, &path)?;
    }
    let coarse = coarse_range(&frame)?;
    let refined = refine_range(&frame, &coarse, &RefineParams::default())?;
    print_json(&SimulateReport {
        tx: tx.id,
        rx: rx.id,
        true_range: channel.range(),
        los: channel.los,
        snr_db: isaccoop::signal::frame_snr_db(&frame),
        crlb_range: crlb_range(&channel, &ofdm, frame.noise_variance).ok().map(|r| r.crlb_range),
        coarse,
        refined,
    })
}

#[allow(clippy::too_many_arguments)]
fn optimize(
    config: PathBuf,
    spec: PathBuf,
    method: Solver,
    rf_chains: usize,
    select: Option<f64>,
    subcarriers: usize,
    symbols: usize,
    seed: u64,
) -> Result<()> {
    let scenario = read_scenario(&config)?;
    let text = std::fs::read_to_string(&spec)
        .map_err(|e| Error::InvalidConfig { path: spec.display().to_string(), reason: e.to_string() })?;
    let spec: PowerMinSpec = serde_json::from_str(&text)?;
    let rx = spec
        .candidate_stations
        .first()
        .and_then(|id| scenario.station(*id))
        .ok_or_else(|| Error::InvalidConfig { path: "candidate_stations".into(), reason: "unknown or empty".into() })?;
    let waveform = OfdmConfig::new(rx.bandwidth, rx.carrier_frequency, subcarriers, symbols)?;
    let problem = PowerProblem::from_scenario(&scenario, &spec, &waveform, &mut rng::stream(seed, &[label::CHANNEL]))?;
    let sdr = SdrOptions { max_dimension: problem.dimension().max(SdrOptions::default().max_dimension), ..SdrOptions::default() };
    if let Some(cost) = select {
        let options = SelectionOptions {
            activation_cost_mw: cost,
            method: match method {
                Solver::Sdr => isaccoop::comp::Method::Sdr,
                _ => isaccoop::comp::Method::CrlbApprox,
            },
            sdr,
            ..SelectionOptions::default()
        };
        return print_json(&select_nodes(&problem, &options)?);
    }
    match method {
        Solver::Sdr => print_json(&min_power_sdr(&problem, &sdr)?),
        Solver::Approx => print_json(&min_power_crlb_approx(&problem)?),
        Solver::Hybrid => {
            let digital = min_power_crlb_approx(&problem)?;
            print_json(&hybrid_project(&problem, &digital, rf_chains)?)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Experiment { preset, spec, trials, seed, workers, out, svg, metric, print_spec } => {
            experiment(preset, spec, trials, seed, workers, out, svg, metric, print_spec)
        }
        Command::Simulate { config, tx, rx, target, subcarriers, symbols, seed, dump } => {
            simulate(config, tx, rx, target, subcarriers, symbols, seed, dump)
        }
        Command::Crlb { bandwidth, carrier, subcarriers, symbols, snr_db } => {
            let ofdm = OfdmConfig::new(bandwidth, carrier, subcarriers, symbols)?;
            print_json(&crlb_from_snr(&ofdm, isaccoop::units::db_to_linear(snr_db))?)
        }
        Command::Optimize { config, spec, method, rf_chains, select, subcarriers, symbols, seed } => {
            optimize(config, spec, method, rf_chains, select, subcarriers, symbols, seed)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            // Unreadable or unwritable files count as configuration errors.
            let code = match e {
                Error::Io(_) => 2,
                ref other => other.exit_code(),
            };
            ExitCode::from(code as u8)
        }
    }
}
