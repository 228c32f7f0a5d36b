//! Runs a named experiment preset with a reduced trial count and prints
//! the result table.

use isaccoop::harness::{csv_string, preset, run_experiment};

fn main() -> isaccoop::Result<()> {
    let name = std::env::args().nth(1).unwrap_or_else(|| "fig5d".to_string());
    let mut spec = preset(&name)?;
    spec.trials = spec.trials.min(20);
    print!("{}", csv_string(&run_experiment(&spec)?));
    Ok(())
}
