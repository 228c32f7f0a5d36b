//! Monostatic OFDM echo at 0.34 THz: coarse and refined range estimates
//! compared with the Cramér-Rao bound over repeated noise draws.

use isaccoop::channel::EchoChannel;
use isaccoop::ranging::{coarse_range, crlb_range, refine_range, RefineParams};
use isaccoop::rng::{self, label};
use isaccoop::signal::{make_tx_grid, synthesize_echo, OfdmConfig};
use isaccoop::units::{dbm_to_mw, db_to_linear, SPEED_OF_LIGHT};
use num_complex::Complex64;

fn main() -> isaccoop::Result<()> {
    let ofdm = OfdmConfig::new(1e9, 0.34e12, 1024, 1)?;
    let psd = -174.0;
    let snr_db = 10.0;
    let range = 42.0;
    // Per-element SNR fixes the echo amplitude.
    let amplitude = (db_to_linear(snr_db) * dbm_to_mw(psd) * ofdm.subcarrier_spacing).sqrt();
    let channel = EchoChannel {
        alpha: Complex64::new(amplitude, 0.0),
        tau: 2.0 * range / SPEED_OF_LIGHT,
        doppler: 0.0,
        los: true,
        tx_station: 0,
        rx_station: 0,
    };
    let trials = 200;
    let (mut coarse_se, mut fine_se) = (0.0, 0.0);
    let mut bound = 0.0;
    for trial in 0..trials {
        let x = make_tx_grid(&ofdm, &mut rng::stream(trial, &[label::GRID]));
        let frame = synthesize_echo(&x, &[channel], &ofdm, psd, &mut rng::stream(trial, &[label::NOISE]), 0.0)?;
        let coarse = coarse_range(&frame)?;
        let fine = refine_range(&frame, &coarse, &RefineParams::default())?;
        coarse_se += (coarse.range - range).powi(2);
        fine_se += (fine.range - range).powi(2);
        bound = crlb_range(&channel, &ofdm, frame.noise_variance)?.crlb_range;
    }
    let n = trials as f64;
    println!("coarse RMSE   {:.3e} m", (coarse_se / n).sqrt());
    println!("refined RMSE  {:.3e} m", (fine_se / n).sqrt());
    println!("sqrt(CRLB)    {:.3e} m", bound.sqrt());
    println!("resolution    {:.3e} m", SPEED_OF_LIGHT / (2.0 * ofdm.occupied_bandwidth()));
    Ok(())
}
