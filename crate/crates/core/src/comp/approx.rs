//! Minimum power with the sensing constraint in linear form.
//!
//! For a fixed echo phase `φ`, requiring `Re(e^{-jφ}·gᴴw) ≥ √b` instead of
//! `|gᴴw|² ≥ b` (and `Re(hᴴw) ≥ √a`, using the free common phase) turns the
//! problem into a two-constraint least-norm QP with a closed-form solution.
//! The phase of the optimal echo amplitude is unknown, so `φ` is searched on
//! a grid and refined; at the optimal `φ` the QP optimum is exactly the
//! optimum of the original problem.

use num_complex::Complex64;

use super::{norm_sqr, BeamformingSolution, Method, PowerProblem};
use crate::error::{Error, Result};

const PHASE_GRID: usize = 720;
const CAP_ITERATIONS: usize = 500;

/// Real embedding `[Re u; Im u]`, so that `Re(uᴴw) = ũ·w̃`.
fn embed(u: &[Complex64]) -> Vec<f64> {
    u.iter().map(|v| v.re).chain(u.iter().map(|v| v.im)).collect()
}

fn unembed(x: &[f64]) -> Vec<Complex64> {
    let n = x.len() / 2;
    (0..n).map(|k| Complex64::new(x[k], x[n + k])).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `min ‖x‖²` s.t. `u_k·x ≥ c_k` for two half-spaces, by active sets.
fn least_norm_two(u1: &[f64], c1: f64, u2: &[f64], c2: f64) -> Option<Vec<f64>> {
    let (g11, g12, g22) = (dot(u1, u1), dot(u1, u2), dot(u2, u2));
    let single = |u: &[f64], c: f64, g: f64| -> Option<Vec<f64>> {
        if c <= 0.0 {
            Some(vec![0.0; u.len()])
        } else if g > 0.0 {
            Some(u.iter().map(|v| v * c / g).collect())
        } else {
            None
        }
    };
    let ok = |x: &[f64]| dot(u1, x) >= c1 * (1.0 - 1e-12) && dot(u2, x) >= c2 * (1.0 - 1e-12);
    // A zero threshold is vacuous: |uᴴw|² ≥ 0 always holds.
    if c2 <= 0.0 {
        return single(u1, c1, g11);
    }
    if c1 <= 0.0 {
        return single(u2, c2, g22);
    }
    for (u, c, g) in [(u1, c1, g11), (u2, c2, g22)] {
        if let Some(x) = single(u, c, g) {
            if ok(&x) {
                return Some(x);
            }
        }
    }
    let det = g11 * g22 - g12 * g12;
    if det <= 1e-14 * g11 * g22 {
        return None;
    }
    let l1 = (g22 * c1 - g12 * c2) / det;
    let l2 = (g11 * c2 - g12 * c1) / det;
    if l1 < 0.0 || l2 < 0.0 {
        return None;
    }
    Some(u1.iter().zip(u2).map(|(a, b)| l1 * a + l2 * b).collect())
}

/// The linearized problem for weights already scaled by per-coordinate
/// factors `d` (used for power-cap multipliers).
struct Linearized {
    h: Vec<f64>,
    a: f64,
    b: f64,
    /// `g` rotated by each grid phase is built on demand.
    g: Vec<Complex64>,
    d: Vec<f64>,
}

impl Linearized {
    fn new(problem: &PowerProblem, d: Vec<f64>) -> Self {
        let h: Vec<f64> = embed(&problem.h).iter().zip(d.iter().chain(&d)).map(|(v, s)| v / s).collect();
        Linearized {
            h,
            a: problem.comm_threshold().sqrt(),
            b: problem.sense_threshold().sqrt(),
            g: problem.g.clone(),
            d,
        }
    }

    /// Optimal scaled point for echo phase `phi`.
    fn solve(&self, phi: f64) -> Option<Vec<f64>> {
        let rot = Complex64::from_polar(1.0, phi);
        let g: Vec<Complex64> = self.g.iter().map(|v| v * rot).collect();
        let u2: Vec<f64> = embed(&g).iter().zip(self.d.iter().chain(&self.d)).map(|(v, s)| v / s).collect();
        least_norm_two(&self.h, self.a, &u2, self.b)
    }

    fn power(&self, phi: f64) -> f64 {
        self.solve(phi).map_or(f64::INFINITY, |x| dot(&x, &x))
    }

    /// Global phase search: grid, then golden-section refinement around the
    /// best grid point.
    fn best_phase(&self) -> Option<f64> {
        if self.b == 0.0 {
            return Some(0.0);
        }
        let step = 2.0 * std::f64::consts::PI / PHASE_GRID as f64;
        let (i, p) = (0..PHASE_GRID)
            .map(|i| (i, self.power(i as f64 * step)))
            .min_by(|a, b| a.1.total_cmp(&b.1))?;
        if !p.is_finite() {
            return None;
        }
        let (mut lo, mut hi) = ((i as f64 - 1.0) * step, (i as f64 + 1.0) * step);
        let r = (5f64.sqrt() - 1.0) / 2.0;
        let (mut x1, mut x2) = (hi - r * (hi - lo), lo + r * (hi - lo));
        let (mut f1, mut f2) = (self.power(x1), self.power(x2));
        for _ in 0..100 {
            if f1 < f2 {
                hi = x2;
                x2 = x1;
                f2 = f1;
                x1 = hi - r * (hi - lo);
                f1 = self.power(x1);
            } else {
                lo = x1;
                x1 = x2;
                f1 = f2;
                x2 = lo + r * (hi - lo);
                f2 = self.power(x2);
            }
            if hi - lo < 1e-13 {
                break;
            }
        }
        let mid = (lo + hi) / 2.0;
        let best = [(i as f64 * step, p), (mid, self.power(mid))].into_iter().min_by(|a, b| a.1.total_cmp(&b.1))?;
        Some(best.0)
    }

    fn weights(&self, phi: f64) -> Option<Vec<Complex64>> {
        let x = self.solve(phi)?;
        let n = self.d.len();
        let unscaled: Vec<f64> = x.iter().enumerate().map(|(k, v)| v / self.d[k % n]).collect();
        Some(unembed(&unscaled))
    }
}

fn check_degenerate(problem: &PowerProblem) -> Result<()> {
    if problem.comm_threshold() > 0.0 && norm_sqr(&problem.h) == 0.0 {
        return Err(Error::Infeasible { binding: "sinr".into() });
    }
    if problem.sense_threshold() > 0.0 && norm_sqr(&problem.g) == 0.0 {
        return Err(Error::Infeasible { binding: "crlb".into() });
    }
    Ok(())
}

/// Minimum total power under the linearized sensing constraint.
///
/// With per-station caps enabled, the caps are handled by multiplicative
/// updates of per-station power prices until the weighted solution respects
/// them; a cap still violated afterwards is reported as binding.
pub fn min_power_crlb_approx(problem: &PowerProblem) -> Result<BeamformingSolution> {
    check_degenerate(problem)?;
    let n = problem.dimension();
    let ranges = problem.block_ranges();
    let mut prices = vec![1.0f64; problem.blocks.len()];
    let iterations = if problem.power_caps.is_some() { CAP_ITERATIONS } else { 1 };
    let mut last = None;
    for _ in 0..iterations {
        let mut d = vec![1.0f64; n];
        for (r, p) in ranges.iter().zip(&prices) {
            d[r.clone()].iter_mut().for_each(|v| *v = p.sqrt());
        }
        let lin = Linearized::new(problem, d);
        let phi = lin.best_phase().ok_or_else(|| Error::Infeasible { binding: "sinr+crlb".into() })?;
        let w = lin.weights(phi).ok_or_else(|| Error::Infeasible { binding: "sinr+crlb".into() })?;
        let Some(caps) = &problem.power_caps else {
            return Ok(problem.solution(w, Method::CrlbApprox));
        };
        let powers: Vec<f64> = ranges.iter().map(|r| norm_sqr(&w[r.clone()])).collect();
        if powers.iter().zip(caps).all(|(p, c)| *p <= c * (1.0 + 1e-9)) {
            return Ok(problem.solution(w, Method::CrlbApprox));
        }
        for ((price, p), c) in prices.iter_mut().zip(&powers).zip(caps) {
            *price = (*price * (p / c).max(1e-3).sqrt()).max(1.0);
        }
        last = Some(powers);
    }
    let powers = last.unwrap_or_default();
    let caps = problem.power_caps.as_deref().unwrap_or_default();
    let worst = (0..powers.len()).max_by(|&a, &b| (powers[a] / caps[a]).total_cmp(&(powers[b] / caps[b]))).unwrap_or(0);
    Err(Error::Infeasible { binding: format!("power cap of station {}", problem.stations[worst]) })
}
