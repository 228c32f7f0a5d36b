//! Range, Doppler and angle estimation from echo frames, plus the
//! Cramér–Rao bound of the echo model.
//!
//! Ranging follows a coarse/fine protocol: a zero-padded IDFT peak gives an
//! initial delay and a search lattice around it; every lattice candidate's
//! echo component is removed from the observation with a least-squares
//! amplitude, the residual is phase-compensated and transformed back to the
//! delay domain, and the candidate leaving the least residual energy wins.

use std::cell::RefCell;
use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, Matrix4};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::channel::{steering_vector, EchoChannel};
use crate::error::{Error, Result};
use crate::scenario::StationId;
use crate::signal::{EchoFrame, OfdmConfig};
use crate::units::{linear_to_db, SPEED_OF_LIGHT};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn inverse_fft(len: usize) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft_inverse(len))
}

fn forward_fft(len: usize) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft_forward(len))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RangeMethod {
    Coarse,
    Refined,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangeEstimate {
    /// Half the two-way path length, metres (the range for monostatic frames).
    pub range: f64,
    /// Predicted error variance, m²: CRLB at the measured SNR plus the
    /// quantization variance of the estimator's grid.
    pub variance: f64,
    pub method: RangeMethod,
    /// Delay-domain magnitude profile of the coarse search, when retained.
    pub profile: Option<Vec<f64>>,
    pub rx_station: StationId,
    /// Per-element SNR implied by the fitted echo amplitude, dB.
    pub snr_db: f64,
}

impl RangeEstimate {
    pub fn delay(&self) -> f64 {
        2.0 * self.range / SPEED_OF_LIGHT
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoarseParams {
    pub pad_factor: usize,
    /// Align symbols by an estimated Doppler before averaging them.
    pub doppler_search: bool,
    /// Restrict the peak search to this two-way delay window, seconds.
    pub delay_gate: Option<(f64, f64)>,
    pub keep_profile: bool,
}

impl Default for CoarseParams {
    fn default() -> Self {
        CoarseParams { pad_factor: 8, doppler_search: true, delay_gate: None, keep_profile: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefineParams {
    /// Candidates per side of the coarse estimate.
    pub half_width: usize,
    /// The lattice step is the coarse padded bin divided by `2^levels`.
    pub levels: u32,
    /// Padding of the coarse search whose bin the lattice subdivides.
    pub pad_factor: usize,
}

impl Default for RefineParams {
    fn default() -> Self {
        RefineParams { half_width: 32, levels: 5, pad_factor: 8 }
    }
}

impl RefineParams {
    /// Lattice step as a two-way delay, seconds.
    pub fn delay_step(&self, config: &OfdmConfig) -> f64 {
        padded_bin_delay(config, self.pad_factor) / f64::from(1u32 << self.levels)
    }
}

fn padded_bin_delay(config: &OfdmConfig, pad: usize) -> f64 {
    1.0 / (config.n_subcarriers as f64 * pad.max(1) as f64 * config.subcarrier_spacing)
}

fn delay_to_range(delay: f64) -> f64 {
    SPEED_OF_LIGHT * delay / 2.0
}

/// Symbol-averaged channel estimate per subcarrier, optionally after
/// removing a Doppler rotation across symbols.
fn averaged_channel(frame: &EchoFrame, doppler: f64) -> Result<Vec<Complex64>> {
    let h = frame.channel_estimate()?;
    let (n, m) = (h.rows(), h.cols());
    let derotate: Vec<Complex64> = (0..m)
        .map(|l| Complex64::from_polar(1.0, -2.0 * PI * l as f64 * frame.config.symbol_duration * doppler))
        .collect();
    Ok((0..n)
        .map(|k| h.row(k).iter().zip(&derotate).map(|(v, d)| v * d).sum::<Complex64>() / m as f64)
        .collect())
}

/// Zero-padded IDFT of a per-subcarrier vector; bin `k` corresponds to
/// delay `k / (N·P·Δf)`.
fn padded_idft(hbar: &[Complex64], pad: usize) -> Vec<Complex64> {
    let len = hbar.len() * pad.max(1);
    let mut buf = vec![Complex64::new(0.0, 0.0); len];
    buf[..hbar.len()].copy_from_slice(hbar);
    inverse_fft(len).process(&mut buf);
    buf
}

/// Complex delay profile of a frame, as used by coarse ranging and
/// symbol-level fusion.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayProfile {
    pub values: Vec<Complex64>,
    /// Two-way delay per bin, seconds.
    pub bin_delay: f64,
    pub rx_station: StationId,
}

impl DelayProfile {
    pub fn magnitudes(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.norm()).collect()
    }

    /// Index of the strongest bin within an optional delay window.
    pub fn peak(&self, gate: Option<(f64, f64)>) -> Option<usize> {
        let (lo, hi) = match gate {
            Some((a, b)) => ((a / self.bin_delay).ceil().max(0.0) as usize, (b / self.bin_delay).floor() as usize),
            None => (0, self.values.len().saturating_sub(1)),
        };
        let hi = hi.min(self.values.len().saturating_sub(1));
        (lo..=hi).filter(|&i| i < self.values.len()).max_by(|&a, &b| {
            self.values[a].norm_sqr().total_cmp(&self.values[b].norm_sqr())
        })
    }
}

/// Delay profile after an optional Doppler alignment.
pub fn delay_profile(frame: &EchoFrame, pad_factor: usize, doppler: f64) -> Result<DelayProfile> {
    if frame.y.as_slice().is_empty() {
        return Err(Error::EmptyFrame);
    }
    let hbar = averaged_channel(frame, doppler)?;
    Ok(DelayProfile {
        values: padded_idft(&hbar, pad_factor),
        bin_delay: padded_bin_delay(&frame.config, pad_factor),
        rx_station: frame.rx_station,
    })
}

/// SNR implied by an amplitude estimate from the symbol-averaged channel.
fn snr_from_amplitude(amplitude: Complex64, frame: &EchoFrame) -> f64 {
    (amplitude.norm_sqr() / frame.noise_variance).max(1e-12)
}

/// Predicted range variance at a per-element SNR, with the CRLB standing in
/// for the estimator's noise floor; falls back to a large value when the
/// bound is undefined for the frame shape.
fn predicted_variance(config: &OfdmConfig, snr: f64, grid_step_range: f64) -> f64 {
    let bound = crlb_from_snr(config, snr).map(|r| r.crlb_range).unwrap_or(f64::INFINITY);
    bound + grid_step_range * grid_step_range / 12.0
}

pub fn coarse_range(frame: &EchoFrame) -> Result<RangeEstimate> {
    coarse_range_with(frame, &CoarseParams::default())
}

/// Stage 1: padded IDFT peak of the (Doppler-aligned) symbol average.
pub fn coarse_range_with(frame: &EchoFrame, params: &CoarseParams) -> Result<RangeEstimate> {
    if frame.y.as_slice().is_empty() {
        return Err(Error::EmptyFrame);
    }
    let doppler = if params.doppler_search && frame.config.n_symbols >= 2 { doppler_estimate(frame)? } else { 0.0 };
    let profile = delay_profile(frame, params.pad_factor, doppler)?;
    let peak = profile.peak(params.delay_gate).ok_or(Error::EmptyFrame)?;
    let delay = peak as f64 * profile.bin_delay;
    let n = frame.config.n_subcarriers as f64;
    let snr = snr_from_amplitude(profile.values[peak] / n, frame);
    let step = delay_to_range(profile.bin_delay);
    Ok(RangeEstimate {
        range: delay_to_range(delay),
        variance: predicted_variance(&frame.config, snr, step),
        method: RangeMethod::Coarse,
        profile: params.keep_profile.then(|| profile.magnitudes()),
        rx_station: frame.rx_station,
        snr_db: linear_to_db(snr),
    })
}

/// Residual energy left after removing the best-fitting echo at each
/// candidate delay. Exposed for tests and diagnostics.
pub fn candidate_residuals(frame: &EchoFrame, delays: &[f64], doppler: f64) -> Result<Vec<(f64, Complex64)>> {
    let hbar = averaged_channel(frame, doppler)?;
    let n = hbar.len();
    let df = frame.config.subcarrier_spacing;
    let ifft = inverse_fft(n);
    let mut residual = vec![Complex64::new(0.0, 0.0); n];
    let mut template = vec![Complex64::new(0.0, 0.0); n];
    Ok(delays
        .iter()
        .map(|&tau| {
            for (k, t) in template.iter_mut().enumerate() {
                *t = Complex64::from_polar(1.0, -2.0 * PI * k as f64 * df * tau);
            }
            // Stage 2: least-squares amplitude, removal, and compensation
            // of the candidate's delay ramp to bring the residual to baseband.
            let amp = template.iter().zip(&hbar).map(|(t, h)| t.conj() * h).sum::<Complex64>() / n as f64;
            for k in 0..n {
                residual[k] = (hbar[k] - amp * template[k]) * template[k].conj();
            }
            // Stage 3: residual energy in the delay domain.
            ifft.process(&mut residual);
            let energy = residual.iter().map(|v| v.norm_sqr()).sum::<f64>() / n as f64;
            (energy, amp)
        })
        .collect())
}

/// Candidate delays `coarse + k·δ` ordered `k = 0, −1, +1, −2, +2, …`,
/// dropping any that would be negative.
pub fn candidate_delays(coarse_delay: f64, step: f64, half_width: usize) -> Vec<f64> {
    let mut out = vec![coarse_delay];
    for k in 1..=half_width as i64 {
        for s in [-k, k] {
            let d = coarse_delay + s as f64 * step;
            if d >= 0.0 {
                out.push(d);
            }
        }
    }
    out
}

/// Stages 2 and 3: lattice search around a coarse estimate.
pub fn refine_range(frame: &EchoFrame, coarse: &RangeEstimate, params: &RefineParams) -> Result<RangeEstimate> {
    if !(coarse.range >= 0.0) || !coarse.range.is_finite() {
        return Err(Error::CandidateSetEmpty);
    }
    let step = params.delay_step(&frame.config);
    let delays = candidate_delays(coarse.delay(), step, params.half_width);
    if delays.is_empty() || !(step > 0.0) {
        return Err(Error::CandidateSetEmpty);
    }
    let doppler = if frame.config.n_symbols >= 2 { doppler_estimate(frame)? } else { 0.0 };
    let scores = candidate_residuals(frame, &delays, doppler)?;
    let mut best = 0;
    for (i, (energy, _)) in scores.iter().enumerate().skip(1) {
        // Strict improvement keeps ties with the candidate nearest to coarse.
        if *energy < scores[best].0 * (1.0 - 1e-12) {
            best = i;
        }
    }
    let snr = snr_from_amplitude(scores[best].1, frame);
    Ok(RangeEstimate {
        range: delay_to_range(delays[best]),
        variance: predicted_variance(&frame.config, snr, delay_to_range(step)),
        method: RangeMethod::Refined,
        profile: coarse.profile.clone(),
        rx_station: frame.rx_station,
        snr_db: linear_to_db(snr),
    })
}

/// Coarse then refined estimate with default parameters.
pub fn estimate_range(frame: &EchoFrame) -> Result<RangeEstimate> {
    let coarse = coarse_range(frame)?;
    refine_range(frame, &coarse, &RefineParams::default())
}

pub const DOPPLER_PAD: usize = 8;

/// Doppler shift, Hz, from a padded DFT across symbols after compressing the
/// subcarriers at the strongest delay, refined by parabolic interpolation.
pub fn doppler_estimate(frame: &EchoFrame) -> Result<f64> {
    let m = frame.config.n_symbols;
    if frame.y.as_slice().is_empty() {
        return Err(Error::EmptyFrame);
    }
    if m < 2 {
        return Err(Error::SingleSymbolFrame);
    }
    let tau0 = noncoherent_peak_delay(frame, 8)?;
    let slow = compressed_symbols(frame, tau0)?;
    let len = m * DOPPLER_PAD;
    let mut buf = vec![Complex64::new(0.0, 0.0); len];
    buf[..m].copy_from_slice(&slow);
    forward_fft(len).process(&mut buf);
    let mag: Vec<f64> = buf.iter().map(|v| v.norm()).collect();
    let peak = (0..len).max_by(|&a, &b| mag[a].total_cmp(&mag[b])).unwrap_or(0);
    let signed = if peak >= len.div_ceil(2) { peak as f64 - len as f64 } else { peak as f64 };
    // Three-point parabolic interpolation on the circular spectrum.
    let (l, c, r) = (mag[(peak + len - 1) % len], mag[peak], mag[(peak + 1) % len]);
    let denom = l - 2.0 * c + r;
    let offset = if denom < 0.0 { (0.5 * (l - r) / denom).clamp(-0.5, 0.5) } else { 0.0 };
    let signed = signed + offset;
    Ok(signed / (len as f64 * frame.config.symbol_duration))
}

/// Delay of the strongest bin of the per-symbol delay profiles summed in
/// power, which is insensitive to phase rotation across symbols.
fn noncoherent_peak_delay(frame: &EchoFrame, pad: usize) -> Result<f64> {
    let h = frame.channel_estimate()?;
    let (n, m) = (h.rows(), h.cols());
    let mut power = vec![0.0; n * pad.max(1)];
    let mut column = vec![Complex64::new(0.0, 0.0); n];
    for l in 0..m {
        for (k, c) in column.iter_mut().enumerate() {
            *c = h.get(k, l);
        }
        for (p, v) in power.iter_mut().zip(padded_idft(&column, pad)) {
            *p += v.norm_sqr();
        }
    }
    let peak = (0..power.len()).max_by(|&a, &b| power[a].total_cmp(&power[b])).unwrap_or(0);
    Ok(peak as f64 * padded_bin_delay(&frame.config, pad))
}

/// Per-symbol matched filter at delay `tau`: `s[m] = Σ_n h[n,m]·e^{+j2πnΔfτ}`.
pub fn compressed_symbols(frame: &EchoFrame, tau: f64) -> Result<Vec<Complex64>> {
    let h = frame.channel_estimate()?;
    let df = frame.config.subcarrier_spacing;
    let ramp: Vec<Complex64> =
        (0..h.rows()).map(|k| Complex64::from_polar(1.0, 2.0 * PI * k as f64 * df * tau)).collect();
    Ok((0..h.cols()).map(|l| (0..h.rows()).map(|k| h.get(k, l) * ramp[k]).sum()).collect())
}

pub fn velocity_from_doppler(doppler: f64, carrier_frequency: f64) -> f64 {
    SPEED_OF_LIGHT * doppler / (2.0 * carrier_frequency)
}

/// Uniform linear array seen by the angle estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrayConfig {
    pub antenna_count: usize,
    pub antenna_spacing: f64,
    pub frequency: f64,
}

pub const AOA_GRID_STEP_DEG: f64 = 0.1;

/// Spatial matched filter over a 0.1° grid spanning ±90° with three-point
/// parabolic interpolation. Each snapshot holds one sample per antenna.
pub fn aoa_estimate(snapshots: &[Vec<Complex64>], array: &ArrayConfig) -> Result<f64> {
    if array.antenna_count < 2 {
        return Err(Error::InsufficientAntennas);
    }
    if snapshots.is_empty() {
        return Err(Error::EmptyFrame);
    }
    if let Some(bad) = snapshots.iter().find(|s| s.len() != array.antenna_count) {
        return Err(Error::DimensionMismatch(format!("snapshot of {} for {} antennas", bad.len(), array.antenna_count)));
    }
    let steps = (180.0 / AOA_GRID_STEP_DEG).round() as usize;
    let angle = |i: usize| (-90.0 + i as f64 * AOA_GRID_STEP_DEG).to_radians();
    let spectrum: Vec<f64> = (0..=steps)
        .map(|i| {
            let a = steering_vector(array.antenna_count, array.antenna_spacing, angle(i), array.frequency);
            snapshots
                .iter()
                .map(|s| a.iter().zip(s).map(|(ak, sk)| ak.conj() * sk).sum::<Complex64>().norm_sqr())
                .sum()
        })
        .collect();
    let peak = (0..spectrum.len()).max_by(|&a, &b| spectrum[a].total_cmp(&spectrum[b])).unwrap_or(0);
    let mut offset = 0.0;
    if peak > 0 && peak < steps {
        let (l, c, r) = (spectrum[peak - 1], spectrum[peak], spectrum[peak + 1]);
        let denom = l - 2.0 * c + r;
        if denom < 0.0 {
            offset = (0.5 * (l - r) / denom).clamp(-0.5, 0.5);
        }
    }
    Ok((-90.0 + (peak as f64 + offset) * AOA_GRID_STEP_DEG).to_radians())
}

/// Array snapshots from per-antenna frames: every antenna's channel is
/// compressed at the delay found on the antenna sum, one snapshot per symbol.
pub fn snapshots_from_frames(frames: &[EchoFrame]) -> Result<Vec<Vec<Complex64>>> {
    let first = frames.first().ok_or(Error::EmptyFrame)?;
    let mut sum = first.clone();
    for f in &frames[1..] {
        if f.config != first.config {
            return Err(Error::ConfigMismatch);
        }
        for (a, b) in sum.y.as_mut_slice().iter_mut().zip(f.y.as_slice()) {
            *a += b;
        }
    }
    let profile = delay_profile(&sum, 8, 0.0)?;
    let tau = profile.peak(None).unwrap_or(0) as f64 * profile.bin_delay;
    let per_antenna: Vec<Vec<Complex64>> =
        frames.iter().map(|f| compressed_symbols(f, tau)).collect::<Result<_>>()?;
    Ok((0..first.config.n_symbols).map(|l| per_antenna.iter().map(|s| s[l]).collect()).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrlbReport {
    /// Two-way delay bound, s².
    pub crlb_tau: f64,
    /// One-way range bound, m².
    pub crlb_range: f64,
    /// Fisher information over `(τ, f_D, Re α, Im α)`, row-major.
    pub fim: [[f64; 4]; 4],
    pub snr_linear: f64,
}

/// Fisher information of `μ[n,m] = α·e^{-j2πnΔfτ}·e^{j2πmT f_D}·x[n,m]`
/// under circular Gaussian noise, with unit-modulus `x`.
pub fn fisher_information(config: &OfdmConfig, alpha: Complex64, noise_variance: f64) -> Matrix4<f64> {
    let mut fim = Matrix4::zeros();
    let inv_alpha = 1.0 / alpha;
    let scale = 2.0 * alpha.norm_sqr() / noise_variance;
    for n in 0..config.n_subcarriers {
        for m in 0..config.n_symbols {
            let c = [
                Complex64::new(0.0, -2.0 * PI * n as f64 * config.subcarrier_spacing),
                Complex64::new(0.0, 2.0 * PI * m as f64 * config.symbol_duration),
                inv_alpha,
                Complex64::new(0.0, 1.0) * inv_alpha,
            ];
            for i in 0..4 {
                for j in 0..4 {
                    fim[(i, j)] += scale * (c[i].conj() * c[j]).re;
                }
            }
        }
    }
    fim
}

/// Inverse of a symmetric positive semidefinite matrix after Jacobi
/// scaling; `None` when it is numerically singular.
fn inverse_psd(fim: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = fim.nrows();
    let d: Vec<f64> = (0..n).map(|i| fim[(i, i)]).collect();
    if d.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
        return None;
    }
    let s = DMatrix::from_fn(n, n, |i, j| fim[(i, j)] / (d[i] * d[j]).sqrt());
    let eig = s.clone().symmetric_eigen();
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(min > 1e-10) {
        return None;
    }
    let inv = s.cholesky()?.inverse();
    Some(DMatrix::from_fn(n, n, |i, j| inv[(i, j)] / (d[i] * d[j]).sqrt()))
}

/// CRLB of the two-way delay and the derived range.
///
/// A single-symbol frame carries no Doppler information; the Doppler shift
/// is then treated as known and dropped from the inversion.
pub fn crlb_for(config: &OfdmConfig, alpha: Complex64, noise_variance: f64) -> Result<CrlbReport> {
    if !(alpha.norm() > 0.0) || !(noise_variance > 0.0) {
        return Err(Error::InvalidParameter("CRLB needs a non-zero amplitude and positive noise variance".into()));
    }
    let fim = fisher_information(config, alpha, noise_variance);
    let keep: Vec<usize> = if config.n_symbols >= 2 { vec![0, 1, 2, 3] } else { vec![0, 2, 3] };
    let sub = DMatrix::from_fn(keep.len(), keep.len(), |i, j| fim[(keep[i], keep[j])]);
    let inv = inverse_psd(&sub).ok_or(Error::SingularFim)?;
    let crlb_tau = inv[(0, 0)];
    let mut out = [[0.0; 4]; 4];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = fim[(i, j)];
        }
    }
    Ok(CrlbReport {
        crlb_tau,
        crlb_range: (SPEED_OF_LIGHT / 2.0).powi(2) * crlb_tau,
        fim: out,
        snr_linear: alpha.norm_sqr() / noise_variance,
    })
}

pub fn crlb_range(channel: &EchoChannel, config: &OfdmConfig, noise_variance: f64) -> Result<CrlbReport> {
    crlb_for(config, channel.alpha, noise_variance)
}

/// CRLB at a per-element SNR, independent of the amplitude's phase.
pub fn crlb_from_snr(config: &OfdmConfig, snr_linear: f64) -> Result<CrlbReport> {
    crlb_for(config, Complex64::new(snr_linear.sqrt(), 0.0), 1.0)
}

/// Range bound at unit per-element SNR, `κ` in `CRLB = κ / SNR`.
pub fn crlb_coefficient(config: &OfdmConfig) -> Result<f64> {
    Ok(crlb_from_snr(config, 1.0)?.crlb_range)
}
