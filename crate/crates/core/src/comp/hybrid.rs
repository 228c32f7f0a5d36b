//! Hybrid analog/digital beamforming.
//!
//! Each station's digital weight vector `w` (N antennas) is approximated by
//! `F·f` where the analog precoder `F` (N × R) has unit-modulus entries
//! (phase shifters) and `f` (R) is the baseband precoder of the R RF chains.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{norm_sqr, BeamformingSolution, Method, PowerProblem};
use crate::channel::station_steering;
use crate::error::{Error, Result};
use crate::scenario::BaseStation;

pub const MAX_ITERATIONS: usize = 100;
pub const TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HybridFactorization {
    /// Analog precoder, row-major N × R, unit-modulus entries.
    pub analog: Vec<Complex64>,
    pub baseband: Vec<Complex64>,
    pub rf_chains: usize,
    /// Frobenius residual `‖w − F·f‖`.
    pub residual: f64,
    pub iterations: usize,
}

impl HybridFactorization {
    pub fn antennas(&self) -> usize {
        self.analog.len() / self.rf_chains
    }

    /// The effective weight vector `F·f`.
    pub fn weights(&self) -> Vec<Complex64> {
        let r = self.rf_chains;
        (0..self.antennas()).map(|n| (0..r).map(|k| self.analog[n * r + k] * self.baseband[k]).sum()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HybridSolution {
    pub solution: BeamformingSolution,
    pub factorizations: Vec<HybridFactorization>,
    /// Hybrid minus digital total power, dB.
    pub power_penalty_db: f64,
}

/// Least-squares baseband precoder for a fixed analog precoder.
fn baseband(analog: &[Complex64], w: &[Complex64], r: usize) -> Vec<Complex64> {
    let n = w.len();
    let f = DMatrix::from_row_slice(n, r, analog);
    let rhs = DVector::from_column_slice(w);
    let gram = f.adjoint() * &f;
    let b = f.adjoint() * rhs;
    match gram.clone().cholesky() {
        Some(c) => c.solve(&b).iter().copied().collect(),
        // Rank-deficient analog precoder: fall back to the pseudo-inverse.
        None => gram
            .pseudo_inverse(1e-12)
            .map(|p| (p * b).iter().copied().collect())
            .unwrap_or_else(|_| vec![Complex64::new(0.0, 0.0); r]),
    }
}

fn residual(analog: &[Complex64], f: &[Complex64], w: &[Complex64]) -> f64 {
    let r = f.len();
    w.iter()
        .enumerate()
        .map(|(n, wn)| (wn - (0..r).map(|k| analog[n * r + k] * f[k]).sum::<Complex64>()).norm_sqr())
        .sum::<f64>()
        .sqrt()
}

/// Starting analog precoder.
///
/// One chain starts from the phases of `w`. With two or more chains every
/// element is split into two phase shifters of a common gain `c`:
/// `w_n = c·(e^{j(θ+δ)} + e^{j(θ−δ)})` with `cos δ = |w_n|/2c`, which
/// represents a single beam exactly; the remaining chains start idle.
fn initial_analog(w: &[Complex64], r: usize) -> Vec<Complex64> {
    let n = w.len();
    let c = w.iter().map(|x| x.norm()).fold(0.0, f64::max) / 2.0;
    let mut analog = vec![Complex64::new(1.0, 0.0); n * r];
    for (row, wn) in w.iter().enumerate() {
        if r == 1 {
            analog[row] = Complex64::from_polar(1.0, wn.arg());
        } else {
            let delta = (wn.norm() / (2.0 * c)).clamp(0.0, 1.0).acos();
            analog[row * r] = Complex64::from_polar(1.0, wn.arg() + delta);
            analog[row * r + 1] = Complex64::from_polar(1.0, wn.arg() - delta);
        }
    }
    analog
}

/// Alternating minimization of `‖w − F·f‖` over unit-modulus `F` and `f`.
///
/// The analog step updates each phase shifter in turn to its optimal phase
/// given the others; the baseband step is least squares. Iterations stop
/// when the residual falls below `TOLERANCE·‖w‖` or stops decreasing by
/// more than that amount.
pub fn factorize(w: &[Complex64], rf_chains: usize) -> Result<HybridFactorization> {
    let n = w.len();
    if rf_chains == 0 || rf_chains >= n {
        return Err(Error::InvalidParameter(format!("{rf_chains} RF chains for {n} antennas; need 1 ≤ R < N")));
    }
    let scale = norm_sqr(w).sqrt();
    if scale == 0.0 {
        return Ok(HybridFactorization {
            analog: vec![Complex64::new(1.0, 0.0); n * rf_chains],
            baseband: vec![Complex64::new(0.0, 0.0); rf_chains],
            rf_chains,
            residual: 0.0,
            iterations: 0,
        });
    }
    let r = rf_chains;
    let mut analog = initial_analog(w, r);
    let mut f = baseband(&analog, w, r);
    let mut prev = residual(&analog, &f, w);
    for it in 1..=MAX_ITERATIONS {
        for row in 0..n {
            for k in 0..r {
                let others: Complex64 = (0..r).filter(|&j| j != k).map(|j| analog[row * r + j] * f[j]).sum();
                let target = w[row] - others;
                if f[k].norm() > 0.0 && target.norm() > 0.0 {
                    analog[row * r + k] = Complex64::from_polar(1.0, target.arg() - f[k].arg());
                }
            }
        }
        f = baseband(&analog, w, r);
        let res = residual(&analog, &f, w);
        if !res.is_finite() {
            return Err(Error::NoConvergence("hybrid factorization diverged".into()));
        }
        if res < TOLERANCE * scale || (prev - res).abs() < TOLERANCE * scale {
            return Ok(HybridFactorization { analog, baseband: f, rf_chains, residual: res, iterations: it });
        }
        prev = res;
    }
    Err(Error::NoConvergence(format!("hybrid factorization after {MAX_ITERATIONS} iterations")))
}

/// Projects a digital solution onto hybrid precoders with `rf_chains` per
/// station and rescales the result until both constraints hold again.
pub fn hybrid_project(problem: &PowerProblem, digital: &BeamformingSolution, rf_chains: usize) -> Result<HybridSolution> {
    if digital.weights.len() != problem.blocks.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} weight vectors for {} stations",
            digital.weights.len(),
            problem.blocks.len()
        )));
    }
    let factorizations = digital.weights.iter().map(|w| factorize(w, rf_chains)).collect::<Result<Vec<_>>>()?;
    let stacked: Vec<Complex64> = factorizations.iter().flat_map(|f| f.weights()).collect();
    let scale = problem.feasibility_scale(&stacked).sqrt();
    let w: Vec<Complex64> = stacked.iter().map(|x| x * scale).collect();
    let solution = problem.solution(w, Method::Hybrid);
    let power_penalty_db = solution.total_power_dbm - digital.total_power_dbm;
    Ok(HybridSolution { solution, factorizations, power_penalty_db })
}

/// Array gain towards `angle` of a hybrid array whose `rf_chains` analog
/// beams are fixed, evenly spread over `±half_width` radians around
/// broadside, with optimal digital combining across the chains.
///
/// The gain is `‖P_F·a(angle)‖²`, the energy of the steering vector inside
/// the span of the analog beams; a fully digital array reaches `N`.
pub fn codebook_gain(station: &BaseStation, rf_chains: usize, half_width: f64, angle: f64) -> f64 {
    let n = station.antenna_count;
    let r = rf_chains.clamp(1, n);
    let a = DVector::from_vec(station_steering(station, angle));
    if r == n {
        return a.norm_squared();
    }
    let beams: Vec<Complex64> = (0..r)
        .flat_map(|k| {
            let theta = if r == 1 { 0.0 } else { -half_width + 2.0 * half_width * k as f64 / (r - 1) as f64 };
            station_steering(station, theta)
        })
        .collect();
    let f = DMatrix::from_column_slice(n, r, &beams);
    let proj = f.adjoint() * &a;
    let gram = f.adjoint() * &f;
    match gram.cholesky() {
        Some(c) => proj.dotc(&c.solve(&proj)).re,
        None => 0.0,
    }
}
