//! Semidefinite relaxation of the minimum-power problem.
//!
//! Lifting `W = wwᴴ` and dropping the rank constraint gives
//!
//! ```text
//! min tr W  s.t.  hᴴWh ≥ a,  gᴴWg ≥ b,  tr(B_i W) ≤ c_i,  W ⪰ 0
//! ```
//!
//! which is solved through its dual, `max aᵧ₁ + bᵧ₂ − Σ c_i z_i` subject to
//! `S = I − y₁hhᴴ − y₂ggᴴ + Σ z_i B_i ⪰ 0`, by a log-barrier Newton method.
//! The dual has only a handful of variables, so every Newton step is cheap;
//! the primal point on the central path is `W = μS⁻¹`. The reported bound is
//! the dual objective, a certified lower bound on every feasible power.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{norm_sqr, BeamformingSolution, Method, PowerProblem};
use crate::error::{Error, Result};
use crate::units::mw_to_dbm;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SdrOptions {
    /// Largest stacked antenna count accepted.
    pub max_dimension: usize,
    /// Duality gap at which the barrier path stops, relative to the
    /// single-constraint power scale.
    pub tolerance: f64,
    pub max_newton_steps: usize,
}

impl Default for SdrOptions {
    fn default() -> Self {
        SdrOptions { max_dimension: 16, tolerance: 1e-11, max_newton_steps: 2000 }
    }
}

/// Dual constraint term `sign·C_j` with objective weight `q_j`.
struct Term {
    matrix: DMatrix<Complex64>,
    weight: f64,
}

fn outer(u: &[Complex64]) -> DMatrix<Complex64> {
    let v = DVector::from_column_slice(u);
    &v * v.adjoint()
}

struct Dual {
    n: usize,
    terms: Vec<Term>,
}

impl Dual {
    fn slack(&self, v: &[f64]) -> DMatrix<Complex64> {
        let mut s = DMatrix::<Complex64>::identity(self.n, self.n);
        for (t, x) in self.terms.iter().zip(v) {
            s += &t.matrix * Complex64::new(*x, 0.0);
        }
        s
    }

    fn objective(&self, v: &[f64]) -> f64 {
        self.terms.iter().zip(v).map(|(t, x)| t.weight * x).sum()
    }

    /// Barrier value `t·qᵀv + log det S + Σ log v`, or `None` outside the
    /// domain.
    fn barrier(&self, v: &[f64], t: f64) -> Option<f64> {
        if v.iter().any(|x| *x <= 0.0) {
            return None;
        }
        let chol = Cholesky::new(self.slack(v))?;
        let logdet: f64 = chol.l_dirty().diagonal().iter().map(|d| 2.0 * d.re.ln()).sum();
        Some(t * self.objective(v) + logdet + v.iter().map(|x| x.ln()).sum::<f64>())
    }
}

fn trace_product(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> f64 {
    let n = a.nrows();
    let mut acc = Complex64::new(0.0, 0.0);
    for i in 0..n {
        for k in 0..n {
            acc += a[(i, k)] * b[(k, i)];
        }
    }
    acc.re
}

/// Solves the relaxation and recovers a rank-one beamformer.
pub fn min_power_sdr(problem: &PowerProblem, options: &SdrOptions) -> Result<BeamformingSolution> {
    let n = problem.dimension();
    if n > options.max_dimension {
        return Err(Error::InvalidParameter(format!(
            "relaxation limited to {} stacked antennas, instance has {n}",
            options.max_dimension
        )));
    }
    let a = problem.comm_threshold();
    let b = problem.sense_threshold();
    if a > 0.0 && norm_sqr(&problem.h) == 0.0 {
        return Err(Error::Infeasible { binding: "sinr".into() });
    }
    if b > 0.0 && norm_sqr(&problem.g) == 0.0 {
        return Err(Error::Infeasible { binding: "crlb".into() });
    }
    // Normalize powers so the optimum is of order one.
    let unit = [(a, &problem.h), (b, &problem.g)]
        .iter()
        .filter(|(t, _)| *t > 0.0)
        .map(|(t, u)| t / norm_sqr(u))
        .fold(0.0, f64::max);
    if unit == 0.0 {
        let w = vec![Complex64::new(0.0, 0.0); n];
        let mut sol = problem.solution(w, Method::Sdr);
        sol.relaxation_bound_dbm = Some(f64::NEG_INFINITY);
        sol.rank_ratio = Some(0.0);
        return Ok(sol);
    }

    let mut terms = Vec::new();
    let mut start = Vec::new();
    for (threshold, u) in [(a, &problem.h), (b, &problem.g)] {
        if threshold > 0.0 {
            terms.push(Term { matrix: -outer(u), weight: threshold / unit });
            start.push(0.25 / norm_sqr(u));
        }
    }
    if let Some(caps) = &problem.power_caps {
        for (r, c) in problem.block_ranges().into_iter().zip(caps) {
            let mut m = DMatrix::<Complex64>::zeros(n, n);
            r.for_each(|i| m[(i, i)] = Complex64::new(1.0, 0.0));
            terms.push(Term { matrix: m, weight: -c / unit });
            start.push(1.0);
        }
    }
    let dual = Dual { n, terms };
    let k = dual.terms.len();

    let mut v = start;
    let mut t = 1.0;
    let mut newton_steps = 0;
    loop {
        // Centering by damped Newton.
        loop {
            let s = dual.slack(&v);
            let s_inv = Cholesky::new(s)
                .ok_or_else(|| Error::SolverFailure("dual slack lost definiteness".into()))?
                .inverse();
            let x: Vec<DMatrix<Complex64>> = dual.terms.iter().map(|term| &s_inv * &term.matrix).collect();
            let grad = DVector::from_iterator(
                k,
                (0..k).map(|j| t * dual.terms[j].weight + x[j].trace().re + 1.0 / v[j]),
            );
            let mut hess = DMatrix::<f64>::zeros(k, k);
            for j in 0..k {
                for l in j..k {
                    let val = trace_product(&x[j], &x[l]);
                    hess[(j, l)] = val;
                    hess[(l, j)] = val;
                }
                hess[(j, j)] += 1.0 / (v[j] * v[j]);
            }
            let step = Cholesky::new(hess)
                .ok_or_else(|| Error::SolverFailure("barrier Hessian is singular".into()))?
                .solve(&grad);
            let decrement = grad.dot(&step);
            if decrement / 2.0 < 1e-9 {
                break;
            }
            let f0 = dual.barrier(&v, t).ok_or_else(|| Error::SolverFailure("left barrier domain".into()))?;
            let mut alpha = 1.0;
            let accepted = loop {
                let trial: Vec<f64> = v.iter().zip(step.iter()).map(|(x, d)| x + alpha * d).collect();
                if let Some(f) = dual.barrier(&trial, t) {
                    if f >= f0 + 0.25 * alpha * decrement {
                        v = trial;
                        // Gains below the rounding of the barrier value mean
                        // the point is centered as well as double precision allows.
                        break f - f0 > 1e-14 * f0.abs();
                    }
                }
                alpha *= 0.5;
                if alpha < 1e-20 {
                    break false;
                }
            };
            if !accepted {
                if decrement < 1e-11 * f0.abs().max(1.0) {
                    break;
                }
                return Err(Error::SolverFailure("line search stalled".into()));
            }
            newton_steps += 1;
            if newton_steps > options.max_newton_steps {
                return Err(Error::MaxIterations("semidefinite relaxation".into()));
            }
            if dual.objective(&v) > 1e12 {
                return Err(Error::Infeasible { binding: "power caps".into() });
            }
        }
        if (n + k) as f64 / t < options.tolerance {
            break;
        }
        t *= 8.0;
    }

    let s_inv = Cholesky::new(dual.slack(&v))
        .ok_or_else(|| Error::SolverFailure("dual slack lost definiteness".into()))?
        .inverse();
    let w_relaxed = s_inv * Complex64::new(unit / t, 0.0);
    let eig = SymmetricEigen::new(w_relaxed);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let l1 = eig.eigenvalues[order[0]];
    let l2 = if n > 1 { eig.eigenvalues[order[1]].max(0.0) } else { 0.0 };
    let principal: Vec<Complex64> = eig.eigenvectors.column(order[0]).iter().copied().collect();
    let scale = problem.feasibility_scale(&principal).sqrt();
    let w: Vec<Complex64> = principal.iter().map(|x| x * scale).collect();

    let mut sol = problem.solution(w, Method::Sdr);
    sol.relaxation_bound_dbm = Some(mw_to_dbm(dual.objective(&v) * unit));
    sol.rank_ratio = Some(if l1 > 0.0 { l2 / l1 } else { 0.0 });
    Ok(sol)
}
