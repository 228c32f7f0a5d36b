//! Multi-node fusion of sensing observations.
//!
//! Three levels are provided: front-end fusion combines the echo signals
//! themselves, mid-end fusion combines per-link range features on a server,
//! and back-end fusion averages complete local position fixes. Symbol-level
//! combining, clock offsets and reference-path calibration live here as well.

use std::f64::consts::PI;

use nalgebra::{Matrix2, Vector2};
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ranging::{self, candidate_residuals, DelayProfile, RangeEstimate, RefineParams};
use crate::scenario::StationId;
use crate::signal::{EchoFrame, Grid};
use crate::units::{linear_to_db, SPEED_OF_LIGHT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionLevel {
    Front,
    Mid,
    Back,
    Symbol,
}

impl FusionLevel {
    pub fn name(self) -> &'static str {
        match self {
            FusionLevel::Front => "front",
            FusionLevel::Mid => "mid",
            FusionLevel::Back => "back",
            FusionLevel::Symbol => "symbol",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionEstimate {
    pub position: [f64; 2],
    pub covariance: [[f64; 2]; 2],
    pub contributing_nodes: Vec<StationId>,
    pub fusion_level: FusionLevel,
}

impl PositionEstimate {
    pub fn error_to(&self, truth: [f64; 2]) -> f64 {
        ((self.position[0] - truth[0]).powi(2) + (self.position[1] - truth[1]).powi(2)).sqrt()
    }

    fn cov_matrix(&self) -> Matrix2<f64> {
        let c = self.covariance;
        Matrix2::new(c[0][0], c[0][1], c[1][0], c[1][1])
    }
}

fn to_array(m: &Matrix2<f64>) -> [[f64; 2]; 2] {
    [[m[(0, 0)], m[(0, 1)]], [m[(1, 0)], m[(1, 1)]]]
}

/// Per-station receiver clock offsets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyncModel {
    pub clock_offsets: Vec<(StationId, f64)>,
    pub offset_prior_std: f64,
}

impl SyncModel {
    /// Offsets drawn uniformly from `±half_width` seconds.
    pub fn uniform<R: Rng + ?Sized>(stations: &[StationId], half_width: f64, rng: &mut R) -> Self {
        let clock_offsets = stations
            .iter()
            .map(|&id| (id, if half_width > 0.0 { rng.random_range(-half_width..=half_width) } else { 0.0 }))
            .collect();
        SyncModel { clock_offsets, offset_prior_std: half_width / 3f64.sqrt() }
    }

    pub fn offset(&self, station: StationId) -> f64 {
        self.clock_offsets.iter().find(|(id, _)| *id == station).map_or(0.0, |(_, o)| *o)
    }
}

/// Delay shift and carrier phase that bring one frame's echo onto a common
/// reference delay with zero phase.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameAlignment {
    /// `τ_frame − τ_reference`, seconds.
    pub delay_shift: f64,
    pub phase: f64,
}

/// Alignment from the frame's ground truth (the strongest true path).
pub fn truth_alignment(frame: &EchoFrame, reference_delay: f64) -> Result<FrameAlignment> {
    let path = frame
        .truth
        .iter()
        .max_by(|a, b| a.alpha.norm_sqr().total_cmp(&b.alpha.norm_sqr()))
        .ok_or_else(|| Error::InvalidParameter("truth-assisted alignment needs ground-truth paths".into()))?;
    // The phase is referred to the shifted delay so that the aligned echo at
    // `reference_delay` starts at phase zero on subcarrier 0.
    Ok(FrameAlignment { delay_shift: path.tau + frame.clock_offset - reference_delay, phase: path.alpha.arg() })
}

/// Channel-domain copy of a frame (`x_ref = 1`) with the alignment applied.
pub fn align_frame(frame: &EchoFrame, alignment: &FrameAlignment) -> Result<EchoFrame> {
    let h = frame.channel_estimate()?;
    let (n, m) = (h.rows(), h.cols());
    let df = frame.config.subcarrier_spacing;
    let mut y = Grid::zeros(n, m);
    for k in 0..n {
        let rot = Complex64::from_polar(1.0, 2.0 * PI * k as f64 * df * alignment.delay_shift - alignment.phase);
        for l in 0..m {
            y.set(k, l, h.get(k, l) * rot);
        }
    }
    let ones = Grid::from_vec(n, m, vec![Complex64::new(1.0, 0.0); n * m])?;
    Ok(EchoFrame {
        y,
        x_ref: ones,
        config: frame.config,
        rx_station: frame.rx_station,
        noise_variance: frame.noise_variance,
        truth: Vec::new(),
        clock_offset: 0.0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontendFusion {
    /// Ranging on the coherent sum, at the common reference delay.
    pub estimate: RangeEstimate,
    pub combined_snr_db: f64,
    pub input_snr_db: Vec<f64>,
    /// The combined SNR exceeds every input's; false flags destructive
    /// combining (misaligned or inverted frames).
    pub constructive: bool,
}

/// Coherent sum of aligned frames, before ranging.
pub fn coherent_sum(frames: &[EchoFrame], alignments: &[FrameAlignment]) -> Result<EchoFrame> {
    let first = frames.first().ok_or(Error::EmptyFrame)?;
    if alignments.len() != frames.len() {
        return Err(Error::DimensionMismatch(format!("{} alignments for {} frames", alignments.len(), frames.len())));
    }
    if frames.iter().any(|f| f.config != first.config) {
        return Err(Error::ConfigMismatch);
    }
    let mut sum = align_frame(first, &alignments[0])?;
    for (f, a) in frames.iter().zip(alignments).skip(1) {
        let aligned = align_frame(f, a)?;
        for (s, v) in sum.y.as_mut_slice().iter_mut().zip(aligned.y.as_slice()) {
            *s += v;
        }
        sum.noise_variance += f.noise_variance;
    }
    Ok(sum)
}

/// Front-end fusion: align, coherently sum and range on the sum.
pub fn frontend_fuse(frames: &[EchoFrame], alignments: &[FrameAlignment]) -> Result<FrontendFusion> {
    let sum = coherent_sum(frames, alignments)?;
    let estimate = ranging::estimate_range(&sum)?;
    let input_snr_db = frames
        .iter()
        .zip(alignments)
        .map(|(f, a)| Ok(ranging::estimate_range(&align_frame(f, a)?)?.snr_db))
        .collect::<Result<Vec<f64>>>()?;
    let combined_snr_db = estimate.snr_db;
    let constructive = frames.len() == 1 || input_snr_db.iter().all(|&s| combined_snr_db > s);
    Ok(FrontendFusion { estimate, combined_snr_db, input_snr_db, constructive })
}

/// Transmitter/receiver geometry of one echo link.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkGeometry {
    pub rx_position: [f64; 2],
    /// `None` for monostatic links.
    pub tx_position: Option<[f64; 2]>,
}

impl LinkGeometry {
    /// Half the path length via `p` and its gradient.
    pub fn half_path(&self, p: Vector2<f64>) -> (f64, Vector2<f64>) {
        let leg = |s: [f64; 2]| {
            let d = p - Vector2::new(s[0], s[1]);
            let n = d.norm().max(1e-12);
            (n, d / n)
        };
        let (dr, ur) = leg(self.rx_position);
        match self.tx_position {
            None => (dr, ur),
            Some(t) => {
                let (dt, ut) = leg(t);
                ((dr + dt) / 2.0, (ur + ut) / 2.0)
            }
        }
    }

    /// Hessian of the half path length.
    fn half_path_hessian(&self, p: Vector2<f64>) -> Matrix2<f64> {
        let leg = |s: [f64; 2]| {
            let d = p - Vector2::new(s[0], s[1]);
            let n = d.norm().max(1e-12);
            let u = d / n;
            (Matrix2::identity() - u * u.transpose()) / n
        };
        match self.tx_position {
            None => leg(self.rx_position),
            Some(t) => (leg(self.rx_position) + leg(t)) / 2.0,
        }
    }
}

/// A range feature delivered to the fusion server.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RangeObservation {
    pub rx_station: StationId,
    pub tx_station: Option<StationId>,
    pub geometry: LinkGeometry,
    /// Half path length, metres (the range for monostatic links).
    pub range: f64,
    pub variance: f64,
}

impl RangeObservation {
    pub fn monostatic(station: StationId, position: [f64; 2], range: f64, variance: f64) -> Self {
        RangeObservation {
            rx_station: station,
            tx_station: None,
            geometry: LinkGeometry { rx_position: position, tx_position: None },
            range,
            variance,
        }
    }

    pub fn from_estimate(estimate: &RangeEstimate, geometry: LinkGeometry, tx_station: Option<StationId>) -> Self {
        RangeObservation {
            rx_station: estimate.rx_station,
            tx_station,
            geometry,
            range: estimate.range,
            variance: estimate.variance,
        }
    }

    fn weight(&self) -> f64 {
        if self.variance.is_finite() && self.variance > 0.0 {
            1.0 / self.variance
        } else {
            0.0
        }
    }
}

pub const MIDEND_MAX_ITERATIONS: usize = 50;
pub const MIDEND_STEP_TOLERANCE: f64 = 1e-6;

fn rank_deficient(m: &Matrix2<f64>) -> bool {
    let eig = m.symmetric_eigen().eigenvalues;
    let (lo, hi) = (eig.min(), eig.max());
    !(hi > 0.0) || lo <= 1e-10 * hi
}

fn unique_nodes(ids: impl IntoIterator<Item = StationId>) -> Vec<StationId> {
    let mut v: Vec<_> = ids.into_iter().collect();
    v.sort_unstable();
    v.dedup();
    v
}

/// Mid-end fusion: weighted Gauss–Newton multilateration from range
/// features. Zero-weight (infinite variance) observations are ignored.
pub fn midend_fuse(observations: &[RangeObservation], init: Option<[f64; 2]>) -> Result<PositionEstimate> {
    let mut used: Vec<&RangeObservation> = observations.iter().filter(|o| o.weight() > 0.0).collect();
    // Canonical order makes the floating-point sums independent of the
    // order observations arrive in.
    used.sort_by(|a, b| {
        let key = |o: &RangeObservation| {
            let g = o.geometry;
            let t = g.tx_position.unwrap_or([f64::NEG_INFINITY; 2]);
            [g.rx_position[0], g.rx_position[1], t[0], t[1], o.range, o.variance]
        };
        let (ka, kb) = (key(a), key(b));
        ka.iter().zip(&kb).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal)
    });
    let needed = if init.is_some() { 2 } else { 3 };
    if used.len() < needed {
        return Err(Error::CollinearGeometry);
    }
    let mut p = match init {
        Some(q) => Vector2::new(q[0], q[1]),
        None => {
            let total: f64 = used.iter().map(|o| o.weight()).sum();
            used.iter().fold(Vector2::zeros(), |acc, o| {
                let g = o.geometry;
                let c = match g.tx_position {
                    None => Vector2::new(g.rx_position[0], g.rx_position[1]),
                    Some(t) => Vector2::new(g.rx_position[0] + t[0], g.rx_position[1] + t[1]) / 2.0,
                };
                acc + c * (o.weight() / total)
            })
        }
    };

    let cost = |p: Vector2<f64>| -> f64 {
        used.iter().map(|o| o.weight() * (o.geometry.half_path(p).0 - o.range).powi(2)).sum()
    };
    let normal = |p: Vector2<f64>| -> (Matrix2<f64>, Vector2<f64>) {
        let mut jtj = Matrix2::zeros();
        let mut jtr = Vector2::zeros();
        for o in &used {
            let (model, grad) = o.geometry.half_path(p);
            let w = o.weight();
            jtj += grad * grad.transpose() * w;
            jtr += grad * (w * (o.range - model));
        }
        (jtj, jtr)
    };

    let mut converged = false;
    for _ in 0..MIDEND_MAX_ITERATIONS {
        let (jtj, jtr) = normal(p);
        if rank_deficient(&jtj) {
            return Err(Error::CollinearGeometry);
        }
        let mut step = jtj.cholesky().ok_or(Error::CollinearGeometry)?.solve(&jtr);
        // Halve the step until the weighted cost does not increase.
        let base = cost(p);
        let mut tries = 0;
        while cost(p + step) > base && tries < 30 {
            step /= 2.0;
            tries += 1;
        }
        p += step;
        if step.norm() < MIDEND_STEP_TOLERANCE {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NoConvergence(format!("mid-end fusion after {MIDEND_MAX_ITERATIONS} iterations")));
    }
    let (jtj, _) = normal(p);
    if rank_deficient(&jtj) {
        return Err(Error::CollinearGeometry);
    }
    let cov = jtj.try_inverse().ok_or(Error::CollinearGeometry)?;
    Ok(PositionEstimate {
        position: [p[0], p[1]],
        covariance: to_array(&((cov + cov.transpose()) / 2.0)),
        contributing_nodes: unique_nodes(used.iter().flat_map(|o| std::iter::once(o.rx_station).chain(o.tx_station))),
        fusion_level: FusionLevel::Mid,
    })
}

/// Closed-form trilateration from monostatic ranges by differencing the
/// squared-range equations; a starting point for [`midend_fuse`].
pub fn linear_trilateration(observations: &[RangeObservation]) -> Option<[f64; 2]> {
    let mono: Vec<_> = observations.iter().filter(|o| o.geometry.tx_position.is_none() && o.weight() > 0.0).collect();
    if mono.len() < 3 {
        return None;
    }
    let r0 = mono[0];
    let s0 = r0.geometry.rx_position;
    let mut ata = Matrix2::zeros();
    let mut atb = Vector2::zeros();
    for o in &mono[1..] {
        let s = o.geometry.rx_position;
        let a = Vector2::new(2.0 * (s[0] - s0[0]), 2.0 * (s[1] - s0[1]));
        let b = r0.range.powi(2) - o.range.powi(2) + s[0].powi(2) - s0[0].powi(2) + s[1].powi(2) - s0[1].powi(2);
        ata += a * a.transpose();
        atb += a * b;
    }
    if rank_deficient(&ata) {
        return None;
    }
    let p = ata.try_inverse()? * atb;
    Some([p[0], p[1]])
}

/// Local position fix from a node's own range and angle of arrival.
/// `angle` is relative to the array broadside `boresight`.
pub fn local_fix(
    station: StationId,
    position: [f64; 2],
    boresight: f64,
    range: f64,
    range_variance: f64,
    angle: f64,
    angle_variance: f64,
) -> PositionEstimate {
    let az = boresight + angle;
    let (s, c) = az.sin_cos();
    let j = Matrix2::new(c, -range * s, s, range * c);
    let cov = j * Matrix2::new(range_variance, 0.0, 0.0, angle_variance) * j.transpose();
    PositionEstimate {
        position: [position[0] + range * c, position[1] + range * s],
        covariance: to_array(&cov),
        contributing_nodes: vec![station],
        fusion_level: FusionLevel::Back,
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// Back-end fusion: median/MAD outlier rejection around the componentwise
/// median, then an inverse-covariance weighted average of the survivors.
pub fn backend_fuse(fixes: &[PositionEstimate]) -> Result<PositionEstimate> {
    let finite: Vec<&PositionEstimate> = fixes.iter().filter(|f| f.position.iter().all(|v| v.is_finite())).collect();
    if finite.is_empty() {
        return Err(Error::AllFixesRejected);
    }
    let center = [
        median(&mut finite.iter().map(|f| f.position[0]).collect::<Vec<_>>()),
        median(&mut finite.iter().map(|f| f.position[1]).collect::<Vec<_>>()),
    ];
    let dist: Vec<f64> = finite.iter().map(|f| f.error_to(center)).collect();
    let med = median(&mut dist.clone());
    let mad = median(&mut dist.iter().map(|d| (d - med).abs()).collect::<Vec<_>>());
    let limit = med + 3.0 * mad;
    let survivors: Vec<&PositionEstimate> =
        finite.iter().zip(&dist).filter(|(_, &d)| d <= limit).map(|(f, _)| *f).collect();
    if survivors.is_empty() {
        return Err(Error::AllFixesRejected);
    }

    let mut info = Matrix2::zeros();
    let mut weighted = Vector2::zeros();
    for f in &survivors {
        let inv = f.cov_matrix().try_inverse().ok_or(Error::SingularFim)?;
        info += inv;
        weighted += inv * Vector2::new(f.position[0], f.position[1]);
    }
    let cov = info.try_inverse().ok_or(Error::SingularFim)?;
    let p = cov * weighted;
    Ok(PositionEstimate {
        position: [p[0], p[1]],
        covariance: to_array(&((cov + cov.transpose()) / 2.0)),
        contributing_nodes: unique_nodes(survivors.iter().flat_map(|f| f.contributing_nodes.iter().copied())),
        fusion_level: FusionLevel::Back,
    })
}

/// Front-end direct localization: maximizes the coherent, phase-aligned
/// matched-filter output of all links jointly over the target position.
///
/// `phases` are the truth-assisted carrier phases of each link's echo;
/// `init` should lie within a fraction of a range bin of the optimum.
pub fn frontend_locate(
    frames: &[EchoFrame],
    links: &[LinkGeometry],
    phases: &[f64],
    init: [f64; 2],
) -> Result<PositionEstimate> {
    if frames.is_empty() {
        return Err(Error::EmptyFrame);
    }
    if links.len() != frames.len() || phases.len() != frames.len() {
        return Err(Error::DimensionMismatch("one geometry and phase per frame required".into()));
    }
    let config = frames[0].config;
    if frames.iter().any(|f| f.config != config) {
        return Err(Error::ConfigMismatch);
    }
    let df = config.subcarrier_spacing;
    // Symbol-averaged channels, phase-aligned.
    let hbar: Vec<Vec<Complex64>> = frames
        .iter()
        .zip(phases)
        .map(|(f, &phi)| {
            let h = f.channel_estimate()?;
            let rot = Complex64::from_polar(1.0 / h.cols() as f64, -phi);
            Ok((0..h.rows()).map(|k| h.row(k).iter().sum::<Complex64>() * rot).collect())
        })
        .collect::<Result<_>>()?;
    // Log-likelihood weights 2·M·|α_i|/σ_i², with |α_i| from the matched
    // filter at the starting point.
    let p0 = Vector2::new(init[0], init[1]);
    let weights: Vec<f64> = frames
        .iter()
        .zip(&hbar)
        .zip(links)
        .map(|((f, h), link)| {
            let tau = 2.0 * link.half_path(p0).0 / SPEED_OF_LIGHT;
            let mf: Complex64 = h
                .iter()
                .enumerate()
                .map(|(k, v)| v * Complex64::from_polar(1.0, 2.0 * PI * k as f64 * df * tau))
                .sum();
            2.0 * f.config.n_symbols as f64 * (mf.norm() / h.len() as f64) / f.noise_variance
        })
        .collect();

    // Objective Re Σ_i w_i Σ_n h̄_i[n]·e^{+jω_n τ_i(p)} with τ_i = 2·halfpath/c,
    // plus its gradient and Hessian in p.
    let evaluate = |p: Vector2<f64>| {
        let (mut f, mut g, mut hess) = (0.0, Vector2::zeros(), Matrix2::zeros());
        for ((h, link), w) in hbar.iter().zip(links).zip(&weights) {
            let (half, grad) = link.half_path(p);
            let tau = 2.0 * half / SPEED_OF_LIGHT;
            let dtau = grad * (2.0 / SPEED_OF_LIGHT);
            let d2tau = link.half_path_hessian(p) * (2.0 / SPEED_OF_LIGHT);
            for (k, v) in h.iter().enumerate() {
                let omega = 2.0 * PI * k as f64 * df;
                let z = v * Complex64::from_polar(1.0, omega * tau) * *w;
                let jz = Complex64::new(0.0, omega) * z;
                f += z.re;
                g += dtau * jz.re;
                hess += dtau * dtau.transpose() * (-omega * omega * z.re) + d2tau * jz.re;
            }
        }
        (f, g, hess)
    };

    let mut p = Vector2::new(init[0], init[1]);
    let mut converged = false;
    for _ in 0..MIDEND_MAX_ITERATIONS {
        let (f0, g, h) = evaluate(p);
        let neg = -h;
        let mut step = match neg.cholesky() {
            Some(ch) => ch.solve(&g),
            None => g * (1e-3 / g.norm().max(1e-300)),
        };
        let mut tries = 0;
        while evaluate(p + step).0 < f0 && tries < 30 {
            step /= 2.0;
            tries += 1;
        }
        p += step;
        if step.norm() < MIDEND_STEP_TOLERANCE * 1e-3 {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NoConvergence("front-end localization".into()));
    }
    // The objective is the log-likelihood up to a constant, so −H at the
    // optimum is the observed Fisher information.
    let (_, _, h) = evaluate(p);
    let cov = (-h).try_inverse().unwrap_or_else(|| Matrix2::identity() * f64::INFINITY);
    Ok(PositionEstimate {
        position: [p[0], p[1]],
        covariance: to_array(&((cov + cov.transpose()) / 2.0)),
        contributing_nodes: unique_nodes(frames.iter().map(|f| f.rx_station)),
        fusion_level: FusionLevel::Front,
    })
}

/// Phase of every profile at the strongest node's peak bin.
pub fn calibrate_reference_phases(profiles: &[DelayProfile]) -> Vec<f64> {
    let strongest = profiles
        .iter()
        .filter_map(|p| p.peak(None).map(|k| (k, p.values[k].norm_sqr())))
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(k, _)| k);
    profiles.iter().map(|p| strongest.map_or(0.0, |k| p.values[k].arg())).collect()
}

/// Symbol-level fusion: rotates each node's delay profile by its reference
/// phase and accumulates coherently.
pub fn symbol_level_fuse(profiles: &[DelayProfile], phases: &[f64]) -> Result<DelayProfile> {
    let first = profiles.first().ok_or(Error::EmptyFrame)?;
    if phases.len() != profiles.len() {
        return Err(Error::DimensionMismatch(format!("{} phases for {} profiles", phases.len(), profiles.len())));
    }
    if profiles.iter().any(|p| p.values.len() != first.values.len() || p.bin_delay != first.bin_delay) {
        return Err(Error::GridMismatch);
    }
    let mut values = vec![Complex64::new(0.0, 0.0); first.values.len()];
    for (p, &phi) in profiles.iter().zip(phases) {
        let rot = Complex64::from_polar(1.0, -phi);
        for (acc, v) in values.iter_mut().zip(&p.values) {
            *acc += v * rot;
        }
    }
    Ok(DelayProfile { values, bin_delay: first.bin_delay, rx_station: first.rx_station })
}

/// Peak delay of a profile with parabolic interpolation on the magnitude.
pub fn profile_peak_delay(profile: &DelayProfile) -> f64 {
    let mag = profile.magnitudes();
    let len = mag.len();
    let Some(k) = profile.peak(None) else { return 0.0 };
    let (l, c, r) = (mag[(k + len - 1) % len], mag[k], mag[(k + 1) % len]);
    let denom = l - 2.0 * c + r;
    let offset = if denom < 0.0 { (0.5 * (l - r) / denom).clamp(-0.5, 0.5) } else { 0.0 };
    ((k as f64 + offset) * profile.bin_delay).max(0.0)
}

/// Delays every echo in the frame by `offset` seconds, as a receiver clock
/// error would.
pub fn apply_clock_offset(frame: &EchoFrame, offset: f64) -> EchoFrame {
    let mut out = frame.clone();
    let df = frame.config.subcarrier_spacing;
    let m = frame.config.n_symbols;
    for (idx, v) in out.y.as_mut_slice().iter_mut().enumerate() {
        let k = idx / m;
        *v *= Complex64::from_polar(1.0, -2.0 * PI * k as f64 * df * offset);
    }
    out.clock_offset += offset;
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationParams {
    /// Half-width of the search window around the geometric reference delay.
    pub window: f64,
    /// Minimum peak-to-median power ratio of the reference path, dB.
    pub detection_threshold_db: f64,
    pub refine: RefineParams,
}

impl Default for CalibrationParams {
    fn default() -> Self {
        CalibrationParams { window: 20e-9, detection_threshold_db: 15.0, refine: RefineParams::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub frame: EchoFrame,
    /// Estimated clock offset that was removed, seconds.
    pub offset: f64,
    /// Measured delay of the reference path before correction.
    pub measured_reference_delay: f64,
}

/// Estimates the clock offset from a direct path of known delay and removes
/// it from the frame.
pub fn tdoa_calibrate(frame: &EchoFrame, reference_path_delay: f64) -> Result<Calibration> {
    tdoa_calibrate_with(frame, reference_path_delay, &CalibrationParams::default())
}

pub fn tdoa_calibrate_with(
    frame: &EchoFrame,
    reference_path_delay: f64,
    params: &CalibrationParams,
) -> Result<Calibration> {
    let pad = params.refine.pad_factor;
    let profile = ranging::delay_profile(frame, pad, 0.0)?;
    let period = frame.config.max_unambiguous_delay();
    let circular = |d: f64| {
        let w = d.rem_euclid(period);
        if w > period / 2.0 {
            w - period
        } else {
            w
        }
    };
    let power: Vec<f64> = profile.values.iter().map(|v| v.norm_sqr()).collect();
    let peak = (0..power.len())
        .filter(|&k| circular(k as f64 * profile.bin_delay - reference_path_delay).abs() <= params.window)
        .max_by(|&a, &b| power[a].total_cmp(&power[b]))
        .ok_or(Error::ReferencePathNotDetected)?;
    let floor = median(&mut power.clone()).max(f64::MIN_POSITIVE);
    if linear_to_db(power[peak] / floor) < params.detection_threshold_db {
        return Err(Error::ReferencePathNotDetected);
    }

    // Lattice refinement of the reference path; delays are circular here so
    // the lattice may extend below zero.
    let coarse = reference_path_delay + circular(peak as f64 * profile.bin_delay - reference_path_delay);
    let step = params.refine.delay_step(&frame.config);
    let mut delays = vec![coarse];
    for k in 1..=params.refine.half_width as i64 {
        delays.push(coarse - k as f64 * step);
        delays.push(coarse + k as f64 * step);
    }
    let scores = candidate_residuals(frame, &delays, 0.0)?;
    let mut best = 0;
    for (i, (e, _)) in scores.iter().enumerate().skip(1) {
        if *e < scores[best].0 * (1.0 - 1e-12) {
            best = i;
        }
    }
    let measured = delays[best];
    let offset = measured - reference_path_delay;
    Ok(Calibration { frame: apply_clock_offset(frame, -offset), offset, measured_reference_delay: measured })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::EchoChannel;
    use crate::ranging::{delay_profile, estimate_range};
    use crate::rng;
    use crate::signal::{make_tx_grid, noise_psd_for_snr, synthesize_echo, synthesize_noiseless, OfdmConfig};
    use proptest::prelude::*;
    use rand::Rng;

    fn cfg(n: usize, m: usize) -> OfdmConfig {
        OfdmConfig::new(1e9, 0.34e12, n, m).unwrap()
    }

    fn echo(tau: f64, alpha: Complex64, rx: StationId) -> EchoChannel {
        EchoChannel { alpha, tau, doppler: 0.0, los: true, tx_station: rx, rx_station: rx }
    }

    fn noisy(config: &OfdmConfig, ch: EchoChannel, snr_db: f64, seed: u64) -> EchoFrame {
        let x = make_tx_grid(config, &mut rng::stream(seed, &[rng::label::GRID]));
        let psd = noise_psd_for_snr(config, ch.alpha.norm_sqr(), snr_db);
        synthesize_echo(&x, &[ch], config, psd, &mut rng::stream(seed, &[rng::label::NOISE]), 0.0).unwrap()
    }

    #[test]
    fn frontend_single_frame_is_direct_ranging() {
        let c = cfg(64, 4);
        let f = noisy(&c, echo(30e-9, Complex64::new(1.0, 0.0), 1), 10.0, 1);
        let fused = frontend_fuse(std::slice::from_ref(&f), &[FrameAlignment { delay_shift: 0.0, phase: 0.0 }]).unwrap();
        assert_eq!(fused.estimate.range, estimate_range(&f).unwrap().range);
        assert!(fused.constructive);
    }

    #[test]
    fn frontend_gain_is_k() {
        let c = cfg(64, 14);
        for k in [2usize, 4] {
            let mut gains = Vec::new();
            for t in 0..200u64 {
                let frames: Vec<_> = (0..k)
                    .map(|i| {
                        let ch = echo((20.0 + 3.0 * i as f64) * 1e-9, Complex64::from_polar(1.0, i as f64), i as u32);
                        noisy(&c, ch, 0.0, t * 10 + i as u64)
                    })
                    .collect();
                let al: Vec<_> = frames.iter().map(|f| truth_alignment(f, 20e-9).unwrap()).collect();
                let fused = frontend_fuse(&frames, &al).unwrap();
                assert!(fused.constructive);
                let mean_in = fused.input_snr_db.iter().sum::<f64>() / k as f64;
                gains.push(fused.combined_snr_db - mean_in);
            }
            let g = gains.iter().sum::<f64>() / gains.len() as f64;
            let expected = linear_to_db(k as f64);
            assert!((g - expected).abs() < 0.5, "K={k}: {g} dB");
        }
    }

    #[test]
    fn frontend_detects_destructive_alignment() {
        let c = cfg(64, 4);
        let a = noisy(&c, echo(20e-9, Complex64::new(1.0, 0.0), 1), 10.0, 3);
        let b = noisy(&c, echo(20e-9, Complex64::new(1.0, 0.0), 2), 10.0, 4);
        let good = FrameAlignment { delay_shift: 0.0, phase: 0.0 };
        let inverted = FrameAlignment { delay_shift: 0.0, phase: PI };
        let fused = frontend_fuse(&[a, b], &[good, inverted]).unwrap();
        assert!(!fused.constructive);
        assert!(fused.input_snr_db.iter().all(|&s| fused.combined_snr_db < s));
    }

    #[test]
    fn frontend_rejects_mixed_configs() {
        let a = noisy(&cfg(64, 4), echo(20e-9, Complex64::new(1.0, 0.0), 1), 10.0, 3);
        let b = noisy(&cfg(32, 4), echo(20e-9, Complex64::new(1.0, 0.0), 1), 10.0, 3);
        let al = [FrameAlignment { delay_shift: 0.0, phase: 0.0 }; 2];
        assert!(matches!(frontend_fuse(&[a, b], &al), Err(Error::ConfigMismatch)));
    }

    fn mono_obs(stations: &[[f64; 2]], truth: [f64; 2], errors: &[f64], variances: &[f64]) -> Vec<RangeObservation> {
        stations
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let r = ((truth[0] - s[0]).powi(2) + (truth[1] - s[1]).powi(2)).sqrt();
                RangeObservation::monostatic(i as u32, *s, r + errors[i], variances[i])
            })
            .collect()
    }

    #[test]
    fn midend_exact_triangle() {
        let st = [[0.0, 0.0], [100.0, 0.0], [30.0, 80.0]];
        let truth = [42.0, 31.0];
        let obs = mono_obs(&st, truth, &[0.0; 3], &[1e-4; 3]);
        let est = midend_fuse(&obs, None).unwrap();
        assert!(est.error_to(truth) < 1e-6);
        assert_eq!(est.contributing_nodes, vec![0, 1, 2]);
        assert_eq!(est.fusion_level, FusionLevel::Mid);
    }

    #[test]
    fn midend_symmetric_geometry_is_isotropic() {
        let st: Vec<[f64; 2]> =
            (0..3).map(|i| (2.0 * PI * i as f64 / 3.0 + 0.5).sin_cos()).map(|(s, c)| [50.0 * c, 50.0 * s]).collect();
        let obs = mono_obs(&st, [0.0, 0.0], &[0.01; 3], &[1e-4; 3]);
        let est = midend_fuse(&obs, None).unwrap();
        assert!(est.error_to([0.0, 0.0]) < 1e-9, "{:?}", est.position);
        let c = est.covariance;
        assert!((c[0][0] / c[1][1] - 1.0).abs() < 1e-9);
        assert!(c[0][1].abs() < 1e-9 * c[0][0]);
    }

    #[test]
    fn midend_covariance_matches_monte_carlo() {
        let st = [[0.0, 0.0], [120.0, 10.0], [40.0, 90.0], [110.0, 100.0]];
        let truth = [60.0, 45.0];
        let var = [0.01, 0.04, 0.02, 0.09];
        let mut r = rng::stream(21, &[]);
        let mut samples = Vec::new();
        let mut predicted = [[0.0; 2]; 2];
        for _ in 0..2000 {
            let e: Vec<f64> = var.iter().map(|v: &f64| v.sqrt() * r.sample::<f64, _>(rand_distr::StandardNormal)).collect();
            let est = midend_fuse(&mono_obs(&st, truth, &e, &var), None).unwrap();
            predicted = est.covariance;
            samples.push([est.position[0] - truth[0], est.position[1] - truth[1]]);
        }
        let n = samples.len() as f64;
        let sxx = samples.iter().map(|s| s[0] * s[0]).sum::<f64>() / n;
        let syy = samples.iter().map(|s| s[1] * s[1]).sum::<f64>() / n;
        assert!((sxx / predicted[0][0] - 1.0).abs() < 0.15, "{sxx} vs {}", predicted[0][0]);
        assert!((syy / predicted[1][1] - 1.0).abs() < 0.15, "{syy} vs {}", predicted[1][1]);
    }

    #[test]
    fn midend_collinear_and_too_few() {
        let st = [[0.0, 0.0], [10.0, 0.0], [20.0, 0.0]];
        // Target on the receivers' line: all gradients parallel.
        let obs = mono_obs(&st, [50.0, 0.0], &[0.0; 3], &[1.0; 3]);
        assert!(matches!(midend_fuse(&obs, Some([50.0, 0.0])), Err(Error::CollinearGeometry)));
        let two = mono_obs(&st[..2], [5.0, 30.0], &[0.0; 2], &[1.0; 2]);
        assert!(matches!(midend_fuse(&two, None), Err(Error::CollinearGeometry)));
        let est = midend_fuse(&two, Some([6.0, 25.0])).unwrap();
        assert!(est.error_to([5.0, 30.0]) < 1e-6);
    }

    #[test]
    fn midend_bistatic_links() {
        let st = [[0.0, 0.0], [100.0, 0.0], [50.0, 100.0]];
        let truth = [40.0, 35.0];
        let d = |a: [f64; 2]| ((truth[0] - a[0]).powi(2) + (truth[1] - a[1]).powi(2)).sqrt();
        let mut obs = Vec::new();
        for i in 0..3 {
            for j in 0..3 {
                let tx = (i != j).then_some(st[j]);
                let range = (d(st[i]) + tx.map_or(d(st[i]), d)) / 2.0;
                obs.push(RangeObservation {
                    rx_station: i as u32,
                    tx_station: (i != j).then_some(j as u32),
                    geometry: LinkGeometry { rx_position: st[i], tx_position: tx },
                    range,
                    variance: 1e-4,
                });
            }
        }
        assert!(midend_fuse(&obs, None).unwrap().error_to(truth) < 1e-6);
    }

    proptest! {
        #[test]
        fn midend_permutation_and_zero_weight(seed in 0u64..1000, rot in 0usize..4) {
            let mut r = rng::stream(seed, &[]);
            let st = [[0.0, 0.0], [100.0, 0.0], [30.0, 80.0], [90.0, 95.0]];
            let truth = [r.random_range(20.0..80.0), r.random_range(20.0..70.0)];
            let e: Vec<f64> = (0..4).map(|_| r.random_range(-0.05..0.05)).collect();
            let obs = mono_obs(&st, truth, &e, &[0.01, 0.02, 0.03, 0.04]);
            let a = midend_fuse(&obs, None).unwrap();
            let mut perm = obs.clone();
            perm.rotate_left(rot);
            let b = midend_fuse(&perm, None).unwrap();
            prop_assert!(a.error_to(b.position) < 1e-9);
            let mut extra = obs.clone();
            extra.push(RangeObservation::monostatic(9, [500.0, -200.0], 3.0, f64::INFINITY));
            let c = midend_fuse(&extra, Some(a.position)).unwrap();
            let d = midend_fuse(&obs, Some(a.position)).unwrap();
            prop_assert!(c.error_to(d.position) < 1e-12);
        }
    }

    #[test]
    fn trilateration_seed_is_exact_without_noise() {
        let st = [[0.0, 0.0], [100.0, 0.0], [30.0, 80.0]];
        let obs = mono_obs(&st, [42.0, 31.0], &[0.0; 3], &[1.0; 3]);
        let p = linear_trilateration(&obs).unwrap();
        assert!((p[0] - 42.0).abs() < 1e-9 && (p[1] - 31.0).abs() < 1e-9);
    }

    fn fix(x: f64, y: f64) -> PositionEstimate {
        PositionEstimate {
            position: [x, y],
            covariance: [[0.04, 0.0], [0.0, 0.04]],
            contributing_nodes: vec![0],
            fusion_level: FusionLevel::Back,
        }
    }

    #[test]
    fn backend_identity_and_outlier() {
        let same = backend_fuse(&[fix(3.0, 4.0), fix(3.0, 4.0), fix(3.0, 4.0)]).unwrap();
        assert!(same.error_to([3.0, 4.0]) < 1e-12);
        let fixes = [fix(10.0, 10.0), fix(10.2, 9.9), fix(9.8, 10.1), fix(10.1, 10.2), fix(110.0, 10.0)];
        let fused = backend_fuse(&fixes).unwrap();
        assert!(fused.error_to([10.025, 10.05]) < 0.3);
        assert!(fused.position[0] < 10.3);
        assert!(matches!(backend_fuse(&[]), Err(Error::AllFixesRejected)));
    }

    #[test]
    fn local_fix_geometry() {
        let f = local_fix(2, [10.0, 0.0], PI / 2.0, 20.0, 1e-4, 0.0, 1e-6);
        assert!(f.error_to([10.0, 20.0]) < 1e-12);
        // Radial variance along y, cross-range r²·σθ² along x.
        assert!((f.covariance[1][1] - 1e-4).abs() < 1e-12);
        assert!((f.covariance[0][0] - 400.0 * 1e-6).abs() < 1e-12);
    }

    #[test]
    fn symbol_level_basics() {
        let c = cfg(32, 1);
        let f = noisy(&c, echo(10e-9, Complex64::from_polar(1.0, 0.4), 1), 10.0, 2);
        let p = delay_profile(&f, 8, 0.0).unwrap();
        let same = symbol_level_fuse(std::slice::from_ref(&p), &[0.0]).unwrap();
        assert_eq!(same, p);

        let x = make_tx_grid(&c, &mut rng::stream(3, &[]));
        let phi = 0.9;
        let profiles: Vec<_> = [phi, -phi]
            .iter()
            .map(|&ph| {
                let ch = echo(10e-9, Complex64::from_polar(1.0, ph), 1);
                delay_profile(&synthesize_noiseless(&x, &[ch], &c, 0.0, 0.0).unwrap(), 8, 0.0).unwrap()
            })
            .collect();
        let phases = calibrate_reference_phases(&profiles);
        let fused = symbol_level_fuse(&profiles, &phases).unwrap();
        let peak = |p: &DelayProfile| p.magnitudes().into_iter().fold(0.0, f64::max);
        assert!(peak(&fused) >= peak(&profiles[0]) && peak(&fused) >= peak(&profiles[1]));
        assert!((peak(&fused) - 2.0 * peak(&profiles[0])).abs() < 1e-9);

        let other = delay_profile(&synthesize_noiseless(&x, &[], &c, 0.0, 0.0).unwrap(), 4, 0.0).unwrap();
        assert!(matches!(symbol_level_fuse(&[p, other], &[0.0, 0.0]), Err(Error::GridMismatch)));
    }

    #[test]
    fn symbol_level_beats_best_single_node() {
        let c = cfg(8, 1);
        let tau = 37.3e-9 * 0.1;
        let range = SPEED_OF_LIGHT * tau / 2.0;
        let (mut single, mut fused) = (vec![Vec::new(); 4], Vec::new());
        let mut r = rng::stream(8, &[]);
        for t in 0..500u64 {
            let profiles: Vec<_> = (0..4)
                .map(|i| {
                    let ch = echo(tau, crate::channel::unit_phase(&mut r), i);
                    delay_profile(&noisy(&c, ch, 5.0, 1000 * t + i as u64), 8, 0.0).unwrap()
                })
                .collect();
            for (i, p) in profiles.iter().enumerate() {
                single[i].push(SPEED_OF_LIGHT * profile_peak_delay(p) / 2.0 - range);
            }
            let f = symbol_level_fuse(&profiles, &calibrate_reference_phases(&profiles)).unwrap();
            fused.push(SPEED_OF_LIGHT * profile_peak_delay(&f) / 2.0 - range);
        }
        let rmse = |e: &[f64]| (e.iter().map(|v| v * v).sum::<f64>() / e.len() as f64).sqrt();
        let best = single.iter().map(|e| rmse(e)).fold(f64::INFINITY, f64::min);
        assert!(rmse(&fused) < best, "fused {} best single {best}", rmse(&fused));
    }

    #[test]
    fn clock_offset_bias_and_calibration() {
        let c = cfg(64, 14);
        let tau = 2.0 * 5.0 / SPEED_OF_LIGHT;
        let f = noisy(&c, echo(tau, Complex64::new(1.0, 0.0), 1), 30.0, 5);
        let shifted = apply_clock_offset(&f, 3.336e-9);
        let bias = estimate_range(&shifted).unwrap().range - estimate_range(&f).unwrap().range;
        assert!((bias - 0.50).abs() < 0.02, "{bias}");

        // Noiseless: a common delay is removed exactly when on the lattice.
        let x = make_tx_grid(&c, &mut rng::stream(6, &[]));
        let reference = 15e-9;
        let direct = echo(reference, Complex64::new(10.0, 0.0), 1);
        let clean = synthesize_noiseless(&x, &[direct, echo(45e-9, Complex64::new(0.1, 0.0), 1)], &c, -100.0, 0.0)
            .unwrap();
        let step = RefineParams::default().delay_step(&c);
        let cal = tdoa_calibrate(&apply_clock_offset(&clean, 40.0 * step), reference).unwrap();
        assert!((cal.offset - 40.0 * step).abs() < 1e-6 * step, "{}", cal.offset / step);
        for (a, b) in cal.frame.y.as_slice().iter().zip(clean.y.as_slice()) {
            assert!((a - b).norm() < 1e-9 * b.norm().max(1.0));
        }
        let identity = tdoa_calibrate(&clean, reference).unwrap();
        assert!(identity.offset.abs() <= step);
    }

    #[test]
    fn calibration_needs_a_reference_path() {
        let c = cfg(64, 4);
        let x = make_tx_grid(&c, &mut rng::stream(6, &[]));
        let noise_only = synthesize_echo(&x, &[], &c, 0.0, &mut rng::stream(1, &[]), 0.0).unwrap();
        assert!(matches!(tdoa_calibrate(&noise_only, 15e-9), Err(Error::ReferencePathNotDetected)));
    }

    #[test]
    fn frontend_locate_recovers_position() {
        let c = cfg(64, 14);
        let st = [[0.0, 0.0], [12.0, 0.0], [0.0, 12.0]];
        let truth = [4.0, 5.0];
        let x = make_tx_grid(&c, &mut rng::stream(6, &[]));
        let links: Vec<_> = st.iter().map(|&s| LinkGeometry { rx_position: s, tx_position: None }).collect();
        let mut frames = Vec::new();
        let mut phases = Vec::new();
        for (i, l) in links.iter().enumerate() {
            let half = l.half_path(Vector2::new(truth[0], truth[1])).0;
            let alpha = Complex64::from_polar(1.0, i as f64);
            phases.push(alpha.arg());
            let ch = echo(2.0 * half / SPEED_OF_LIGHT, alpha, i as u32);
            let f = synthesize_noiseless(&x, &[ch], &c, -60.0, 0.0).unwrap();
            frames.push(f);
        }
        let est = frontend_locate(&frames, &links, &phases, [4.003, 4.998]).unwrap();
        assert!(est.error_to(truth) < 1e-6, "{:?}", est.position);
    }
}
