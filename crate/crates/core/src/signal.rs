//! Subcarrier-domain OFDM echo synthesis.
//!
//! Frames are simulated after the receiver FFT: each resource element carries
//! the transmitted symbol scaled by the echo's delay phase ramp across
//! subcarriers and Doppler ramp across symbols, plus white noise.

use std::f64::consts::PI;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{complex_gaussian, EchoChannel};
use crate::error::{Error, Result};
use crate::scenario::StationId;
use crate::units::{db_to_linear, dbm_to_mw, linear_to_db};

/// Dense complex matrix, row-major with one row per subcarrier.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

impl Grid {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Grid { rows, cols, data: vec![Complex64::new(0.0, 0.0); rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!("{} values for a {rows}x{cols} grid", data.len())));
        }
        Ok(Grid { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        self.data[row * self.cols + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: Complex64) {
        self.data[row * self.cols + col] = value;
    }

    pub fn row(&self, row: usize) -> &[Complex64] {
        &self.data[row * self.cols..(row + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn scale(&mut self, factor: Complex64) {
        self.data.iter_mut().for_each(|v| *v *= factor);
    }

    /// Elementwise quotient `self / other`.
    pub fn divide(&self, other: &Grid) -> Result<Grid> {
        if (self.rows, self.cols) != (other.rows, other.cols) {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a / b).collect();
        Ok(Grid { rows: self.rows, cols: self.cols, data })
    }

    pub fn energy(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum()
    }
}

/// Fraction of the useful symbol time spent on the cyclic prefix.
pub const DEFAULT_CP_FRACTION: f64 = 0.07;
pub const DEFAULT_SUBCARRIERS: usize = 64;
pub const DEFAULT_SYMBOLS: usize = 14;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OfdmConfig {
    pub n_subcarriers: usize,
    pub n_symbols: usize,
    pub subcarrier_spacing: f64,
    pub symbol_duration: f64,
    pub carrier_frequency: f64,
}

impl OfdmConfig {
    /// `n_subcarriers` spread over `bandwidth`, with the default cyclic prefix.
    pub fn new(bandwidth: f64, carrier_frequency: f64, n_subcarriers: usize, n_symbols: usize) -> Result<Self> {
        if !(bandwidth > 0.0) {
            return Err(Error::NonPositiveBandwidth(bandwidth));
        }
        let subcarrier_spacing = bandwidth / n_subcarriers.max(1) as f64;
        let config = OfdmConfig {
            n_subcarriers,
            n_symbols,
            subcarrier_spacing,
            symbol_duration: (1.0 + DEFAULT_CP_FRACTION) / subcarrier_spacing,
            carrier_frequency,
        };
        config.validate(bandwidth)?;
        Ok(config)
    }

    pub fn for_bandwidth(bandwidth: f64, carrier_frequency: f64) -> Result<Self> {
        Self::new(bandwidth, carrier_frequency, DEFAULT_SUBCARRIERS, DEFAULT_SYMBOLS)
    }

    pub fn validate(&self, bandwidth: f64) -> Result<()> {
        if self.n_subcarriers == 0 || self.n_symbols == 0 {
            return Err(Error::config("ofdm", "n_subcarriers and n_symbols must be at least 1"));
        }
        if !(self.subcarrier_spacing > 0.0) || !(self.carrier_frequency > 0.0) {
            return Err(Error::config("ofdm", "subcarrier spacing and carrier frequency must be positive"));
        }
        if self.n_subcarriers as f64 * self.subcarrier_spacing > bandwidth * (1.0 + 1e-12) {
            return Err(Error::config("ofdm.n_subcarriers", "occupied bandwidth exceeds the station bandwidth"));
        }
        if self.symbol_duration * self.subcarrier_spacing < 1.0 - 1e-12 {
            return Err(Error::config("ofdm.symbol_duration", "shorter than the useful symbol time 1/Δf"));
        }
        Ok(())
    }

    pub fn occupied_bandwidth(&self) -> f64 {
        self.n_subcarriers as f64 * self.subcarrier_spacing
    }

    /// Largest two-way delay that does not alias, `1/Δf`.
    pub fn max_unambiguous_delay(&self) -> f64 {
        1.0 / self.subcarrier_spacing
    }

    /// Noise variance per resource element for a PSD in dBm/Hz.
    pub fn noise_variance(&self, noise_psd_dbm_hz: f64) -> f64 {
        dbm_to_mw(noise_psd_dbm_hz) * self.subcarrier_spacing
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EchoFrame {
    pub y: Grid,
    pub x_ref: Grid,
    pub config: OfdmConfig,
    pub rx_station: StationId,
    pub noise_variance: f64,
    /// Ground-truth paths that produced `y`; empty for frames loaded from disk.
    pub truth: Vec<EchoChannel>,
    /// Ground-truth receiver clock offset, seconds.
    pub clock_offset: f64,
}

impl EchoFrame {
    /// Per-element channel estimate `y / x_ref`.
    pub fn channel_estimate(&self) -> Result<Grid> {
        self.y.divide(&self.x_ref)
    }
}

/// Unit-modulus QPSK symbols on every resource element.
pub fn make_tx_grid<R: Rng + ?Sized>(config: &OfdmConfig, rng: &mut R) -> Grid {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let data = (0..config.n_subcarriers * config.n_symbols)
        .map(|_| {
            let re = if rng.random::<bool>() { s } else { -s };
            let im = if rng.random::<bool>() { s } else { -s };
            Complex64::new(re, im)
        })
        .collect();
    Grid { rows: config.n_subcarriers, cols: config.n_symbols, data }
}

/// Noiseless superposition `Σ α·e^{-j2πnΔf(τ+δ)}·e^{+j2πmT f_D}·x[n,m]`.
pub fn echo_mean(x: &Grid, channels: &[EchoChannel], config: &OfdmConfig, clock_offset: f64) -> Result<Grid> {
    let (n, m) = (config.n_subcarriers, config.n_symbols);
    if (x.rows, x.cols) != (n, m) {
        return Err(Error::DimensionMismatch(format!("grid is {}x{}, config is {n}x{m}", x.rows, x.cols)));
    }
    let mut y = Grid::zeros(n, m);
    let mut freq = vec![Complex64::new(0.0, 0.0); n];
    let mut slow = vec![Complex64::new(0.0, 0.0); m];
    for ch in channels {
        let delay = ch.tau + clock_offset;
        for (k, f) in freq.iter_mut().enumerate() {
            *f = ch.alpha * Complex64::from_polar(1.0, -2.0 * PI * k as f64 * config.subcarrier_spacing * delay);
        }
        for (l, s) in slow.iter_mut().enumerate() {
            *s = Complex64::from_polar(1.0, 2.0 * PI * l as f64 * config.symbol_duration * ch.doppler);
        }
        for ((y_row, x_row), f) in y.data.chunks_mut(m).zip(x.data.chunks(m)).zip(&freq) {
            for ((yv, xv), s) in y_row.iter_mut().zip(x_row).zip(&slow) {
                *yv += f * s * xv;
            }
        }
    }
    Ok(y)
}

/// Synthesizes one received frame with white Gaussian noise of variance
/// `psd·Δf` per resource element.
pub fn synthesize_echo<R: Rng + ?Sized>(
    x: &Grid,
    channels: &[EchoChannel],
    config: &OfdmConfig,
    noise_psd_dbm_hz: f64,
    rng: &mut R,
    clock_offset: f64,
) -> Result<EchoFrame> {
    let mut frame = synthesize_noiseless(x, channels, config, noise_psd_dbm_hz, clock_offset)?;
    let sigma = frame.noise_variance.sqrt();
    frame.y.data.iter_mut().for_each(|v| *v += complex_gaussian(rng) * sigma);
    Ok(frame)
}

/// Same frame as [`synthesize_echo`] with the noise term omitted; the
/// nominal noise variance is still recorded so SNR bookkeeping works.
pub fn synthesize_noiseless(
    x: &Grid,
    channels: &[EchoChannel],
    config: &OfdmConfig,
    noise_psd_dbm_hz: f64,
    clock_offset: f64,
) -> Result<EchoFrame> {
    let y = echo_mean(x, channels, config, clock_offset)?;
    Ok(EchoFrame {
        y,
        x_ref: x.clone(),
        config: *config,
        rx_station: channels.first().map_or(0, |c| c.rx_station),
        noise_variance: config.noise_variance(noise_psd_dbm_hz),
        truth: channels.to_vec(),
        clock_offset,
    })
}

/// Per-element SNR in dB: from the true amplitudes when the frame carries
/// them, otherwise from the received power in excess of the noise floor.
pub fn frame_snr_db(frame: &EchoFrame) -> f64 {
    if frame.truth.is_empty() {
        estimated_snr_db(frame)
    } else {
        let signal: f64 = frame.truth.iter().map(|c| c.alpha.norm_sqr()).sum();
        linear_to_db(signal / frame.noise_variance)
    }
}

/// `(mean|y|² − σ²)/σ²`, clamped to a tiny positive floor.
pub fn estimated_snr_db(frame: &EchoFrame) -> f64 {
    let count = frame.y.data.len().max(1) as f64;
    let power = frame.y.energy() / count;
    let excess = (power - frame.noise_variance).max(frame.noise_variance * 1e-6);
    linear_to_db(excess / frame.noise_variance)
}

/// Scales a noise PSD so that a unit-amplitude echo has the requested
/// per-element SNR; handy for tests and examples.
pub fn noise_psd_for_snr(config: &OfdmConfig, signal_power: f64, snr_db: f64) -> f64 {
    linear_to_db(signal_power / db_to_linear(snr_db) / config.subcarrier_spacing)
}

/// Sidecar header written next to a binary frame dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameHeader {
    pub n_subcarriers: usize,
    pub n_symbols: usize,
    pub subcarrier_spacing: f64,
    pub symbol_duration: f64,
    pub carrier_frequency: f64,
    pub rx_station: StationId,
    pub noise_variance: f64,
    pub layout: String,
}

pub const FRAME_LAYOUT: &str = "row-major complex64 le; y then x_ref";

fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".json");
    PathBuf::from(name)
}

/// Writes `y` followed by `x_ref` as little-endian complex64 to `path` and
/// the header to `path` + `.json`.
pub fn dump_frame(frame: &EchoFrame, path: &Path) -> Result<()> {
    let header = FrameHeader {
        n_subcarriers: frame.config.n_subcarriers,
        n_symbols: frame.config.n_symbols,
        subcarrier_spacing: frame.config.subcarrier_spacing,
        symbol_duration: frame.config.symbol_duration,
        carrier_frequency: frame.config.carrier_frequency,
        rx_station: frame.rx_station,
        noise_variance: frame.noise_variance,
        layout: FRAME_LAYOUT.to_string(),
    };
    let mut bytes = Vec::with_capacity(16 * frame.y.data.len());
    for v in frame.y.data.iter().chain(&frame.x_ref.data) {
        bytes.extend_from_slice(&(v.re as f32).to_le_bytes());
        bytes.extend_from_slice(&(v.im as f32).to_le_bytes());
    }
    fs::File::create(path)?.write_all(&bytes)?;
    fs::write(sidecar_path(path), serde_json::to_string_pretty(&header)?)?;
    Ok(())
}

pub fn load_frame(path: &Path) -> Result<EchoFrame> {
    let header: FrameHeader = serde_json::from_str(&fs::read_to_string(sidecar_path(path))?)?;
    if header.layout != FRAME_LAYOUT {
        return Err(Error::config("layout", format!("unsupported layout `{}`", header.layout)));
    }
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let count = header.n_subcarriers * header.n_symbols;
    if bytes.len() != 16 * count {
        return Err(Error::DimensionMismatch(format!("{} bytes, expected {}", bytes.len(), 16 * count)));
    }
    let values: Vec<Complex64> = bytes
        .chunks_exact(8)
        .map(|c| {
            let re = f32::from_le_bytes(c[0..4].try_into().unwrap());
            let im = f32::from_le_bytes(c[4..8].try_into().unwrap());
            Complex64::new(re as f64, im as f64)
        })
        .collect();
    let (y, x) = values.split_at(count);
    Ok(EchoFrame {
        y: Grid::from_vec(header.n_subcarriers, header.n_symbols, y.to_vec())?,
        x_ref: Grid::from_vec(header.n_subcarriers, header.n_symbols, x.to_vec())?,
        config: OfdmConfig {
            n_subcarriers: header.n_subcarriers,
            n_symbols: header.n_symbols,
            subcarrier_spacing: header.subcarrier_spacing,
            symbol_duration: header.symbol_duration,
            carrier_frequency: header.carrier_frequency,
        },
        rx_station: header.rx_station,
        noise_variance: header.noise_variance,
        truth: Vec::new(),
        clock_offset: 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn config() -> OfdmConfig {
        OfdmConfig::for_bandwidth(1e9, 0.34e12).unwrap()
    }

    fn echo(alpha: Complex64, tau: f64, doppler: f64) -> EchoChannel {
        EchoChannel { alpha, tau, doppler, los: true, tx_station: 0, rx_station: 0 }
    }

    #[test]
    fn tx_grid_is_qpsk_and_deterministic() {
        let cfg = config();
        let a = make_tx_grid(&cfg, &mut rng::stream(3, &[]));
        assert!(a.as_slice().iter().all(|v| (v.norm() - 1.0).abs() < 1e-12));
        assert!(a.as_slice().iter().all(|v| (v.re.abs() - v.im.abs()).abs() < 1e-15));
        assert_eq!(a, make_tx_grid(&cfg, &mut rng::stream(3, &[])));
        let one = OfdmConfig { n_subcarriers: 1, n_symbols: 1, ..cfg };
        assert_eq!(make_tx_grid(&one, &mut rng::stream(0, &[])).as_slice().len(), 1);
    }

    #[test]
    fn identity_channel_reproduces_the_grid() {
        let cfg = config();
        let x = make_tx_grid(&cfg, &mut rng::stream(1, &[]));
        let f = synthesize_noiseless(&x, &[echo(Complex64::new(1.0, 0.0), 0.0, 0.0)], &cfg, -174.0, 0.0).unwrap();
        assert_eq!(f.y, x);
        let g = synthesize_noiseless(&x, &[echo(Complex64::new(0.3, -0.4), 41e-9, 300.0)], &cfg, -174.0, 0.0).unwrap();
        let h = g.channel_estimate().unwrap();
        assert!(h.as_slice().iter().all(|v| (v.norm() - 0.5).abs() < 1e-12));
    }

    #[test]
    fn linearity_and_clock_offset_equivalence() {
        let cfg = config();
        let x = make_tx_grid(&cfg, &mut rng::stream(2, &[]));
        let a = echo(Complex64::new(0.7, 0.1), 12e-9, 50.0);
        let b = echo(Complex64::new(-0.2, 0.5), 31e-9, -80.0);
        let both = synthesize_echo(&x, &[a, b], &cfg, -90.0, &mut rng::stream(9, &[]), 0.0).unwrap();
        let noise_only = synthesize_echo(&x, &[], &cfg, -90.0, &mut rng::stream(9, &[]), 0.0).unwrap();
        let ya = echo_mean(&x, &[a], &cfg, 0.0).unwrap();
        let yb = echo_mean(&x, &[b], &cfg, 0.0).unwrap();
        for i in 0..x.as_slice().len() {
            let expect = ya.as_slice()[i] + yb.as_slice()[i] + noise_only.y.as_slice()[i];
            assert!((both.y.as_slice()[i] - expect).norm() < 1e-12);
        }

        let delta = 3.3e-9;
        let shifted = echo_mean(&x, &[a], &cfg, delta).unwrap();
        let moved = echo_mean(&x, &[EchoChannel { tau: a.tau + delta, ..a }], &cfg, 0.0).unwrap();
        for (p, q) in shifted.as_slice().iter().zip(moved.as_slice()) {
            assert!((p - q).norm() < 1e-12);
        }
    }

    #[test]
    fn noise_energy_matches_psd() {
        let cfg = OfdmConfig::new(1e9, 0.34e12, 1000, 1000).unwrap();
        let x = make_tx_grid(&cfg, &mut rng::stream(4, &[]));
        let f = synthesize_echo(&x, &[], &cfg, -174.0, &mut rng::stream(5, &[]), 0.0).unwrap();
        let expected = dbm_to_mw(-174.0) * cfg.subcarrier_spacing;
        assert_eq!(f.noise_variance, expected);
        let measured = f.y.energy() / 1e6;
        assert!((measured / expected - 1.0).abs() < 0.01, "{measured} vs {expected}");
    }

    #[test]
    fn empirical_snr_matches_budget() {
        let cfg = OfdmConfig::new(1e9, 0.34e12, 400, 250).unwrap();
        let x = make_tx_grid(&cfg, &mut rng::stream(6, &[]));
        let alpha = Complex64::from_polar(1e-6, 0.4);
        let psd = noise_psd_for_snr(&cfg, alpha.norm_sqr(), 7.0);
        let f = synthesize_echo(&x, &[echo(alpha, 20e-9, 0.0)], &cfg, psd, &mut rng::stream(7, &[]), 0.0).unwrap();
        let clean = echo_mean(&x, &f.truth, &cfg, 0.0).unwrap();
        let noise: f64 =
            f.y.as_slice().iter().zip(clean.as_slice()).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>() / 1e5;
        let snr = linear_to_db(alpha.norm_sqr() / noise);
        assert!((snr - 7.0).abs() < 0.2, "{snr}");
        assert!((frame_snr_db(&f) - 7.0).abs() < 1e-9);
    }

    #[test]
    fn snr_scaling_and_estimation() {
        let cfg = config();
        let x = make_tx_grid(&cfg, &mut rng::stream(8, &[]));
        let unit = synthesize_noiseless(&x, &[echo(Complex64::new(1.0, 0.0), 0.0, 0.0)], &cfg, 0.0, 0.0).unwrap();
        let unit = EchoFrame { noise_variance: 1.0, ..unit };
        assert!(frame_snr_db(&unit).abs() < 1e-12);
        let loud = EchoFrame { truth: vec![echo(Complex64::new(10.0, 0.0), 0.0, 0.0)], ..unit.clone() };
        assert!((frame_snr_db(&loud) - 20.0).abs() < 1e-12);

        let psd = noise_psd_for_snr(&cfg, 1.0, 20.0);
        let mut r = rng::stream(10, &[]);
        for _ in 0..100 {
            let mut f = synthesize_echo(&x, &[echo(Complex64::new(1.0, 0.0), 17e-9, 0.0)], &cfg, psd, &mut r, 0.0)
                .unwrap();
            let truth = frame_snr_db(&f);
            f.truth.clear();
            assert!((frame_snr_db(&f) - truth).abs() < 0.5);
        }
    }

    #[test]
    fn dump_and_load_round_trip() {
        let cfg = config();
        let x = make_tx_grid(&cfg, &mut rng::stream(11, &[]));
        let f = synthesize_echo(&x, &[echo(Complex64::new(0.5, 0.5), 9e-9, 0.0)], &cfg, -10.0, &mut rng::stream(12, &[]), 0.0)
            .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("frame.bin");
        dump_frame(&f, &path).unwrap();
        let header: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join("frame.bin.json")).unwrap()).unwrap();
        assert_eq!(header.as_object().unwrap().len(), 8);
        let g = load_frame(&path).unwrap();
        assert_eq!(g.config, f.config);
        assert_eq!(g.noise_variance, f.noise_variance);
        for (a, b) in f.y.as_slice().iter().zip(g.y.as_slice()) {
            assert!((a - b).norm() < 1e-6 * a.norm().max(1e-3));
        }
        assert_eq!(fs::metadata(&path).unwrap().len() as usize, 16 * 64 * 14);
    }

    #[test]
    fn rejects_mismatched_grid() {
        let cfg = config();
        let x = Grid::zeros(3, 3);
        assert!(matches!(synthesize_noiseless(&x, &[], &cfg, 0.0, 0.0), Err(Error::DimensionMismatch(_))));
        assert!(OfdmConfig::new(1e9, 1e9, 0, 1).is_err());
    }
}
