//! Choosing which stations take part in cooperative transmission.
//!
//! The objective is total transmit power plus an optional fixed activation
//! cost per active station. Without that cost adding a station never raises
//! the minimum power, so the full set would always win; the cost models the
//! overhead of waking a node and makes the selection non-trivial.

use serde::{Deserialize, Serialize};

use super::{min_power_crlb_approx, min_power_sdr, norm_sqr, BeamformingSolution, Method, PowerProblem, SdrOptions};
use crate::error::{Error, Result};
use crate::scenario::StationId;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionOptions {
    /// Fixed cost of each active station, mW.
    pub activation_cost_mw: f64,
    /// Largest candidate count searched exhaustively; greedy beyond.
    pub exhaustive_limit: usize,
    pub method: Method,
    pub sdr: SdrOptions,
}

impl Default for SelectionOptions {
    fn default() -> Self {
        SelectionOptions { activation_cost_mw: 0.0, exhaustive_limit: 6, method: Method::CrlbApprox, sdr: SdrOptions::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSelection {
    pub active: Vec<StationId>,
    /// On/off decision for every candidate, in candidate order.
    pub decisions: Vec<(StationId, bool)>,
    pub solution: BeamformingSolution,
    /// Power plus activation cost, mW.
    pub objective_mw: f64,
    pub exhaustive: bool,
    pub subsets_evaluated: usize,
}

struct Evaluator<'a> {
    problem: &'a PowerProblem,
    options: &'a SelectionOptions,
    count: usize,
}

impl Evaluator<'_> {
    /// Objective and solution of a subset, `None` when it is infeasible.
    fn eval(&mut self, subset: &[StationId]) -> Result<Option<(f64, BeamformingSolution)>> {
        self.count += 1;
        let sub = self.problem.restrict(subset);
        let solved = match self.options.method {
            Method::Sdr => min_power_sdr(&sub, &self.options.sdr),
            _ => min_power_crlb_approx(&sub),
        };
        match solved {
            Ok(sol) if sol.feasible => {
                let objective = sol.total_power_mw() + self.options.activation_cost_mw * subset.len() as f64;
                Ok(Some((objective, sol)))
            }
            Ok(_) | Err(Error::Infeasible { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    }

    /// How close an infeasible subset is to serving both constraints.
    fn proxy(&self, subset: &[StationId]) -> f64 {
        let sub = self.problem.restrict(subset);
        let ratio = |t: f64, u: &[num_complex::Complex64]| if t > 0.0 { norm_sqr(u) / t } else { f64::INFINITY };
        ratio(sub.comm_threshold(), &sub.h).min(ratio(sub.sense_threshold(), &sub.g))
    }
}

fn better(candidate: &(f64, usize), incumbent: &Option<(f64, usize)>) -> bool {
    match incumbent {
        None => true,
        Some((obj, size)) => {
            let tol = 1e-12 * obj.abs();
            candidate.0 < obj - tol || ((candidate.0 - obj).abs() <= tol && candidate.1 < *size)
        }
    }
}

/// Selects the station subset minimizing power plus activation cost.
pub fn select_nodes(problem: &PowerProblem, options: &SelectionOptions) -> Result<NodeSelection> {
    let candidates = problem.stations.clone();
    if candidates.is_empty() {
        return Err(Error::config("candidate_stations", "must not be empty"));
    }
    let mut ev = Evaluator { problem, options, count: 0 };
    let exhaustive = candidates.len() <= options.exhaustive_limit;
    let mut best: Option<(f64, Vec<StationId>, BeamformingSolution)> = None;
    let keep = |obj: f64, subset: Vec<StationId>, sol: BeamformingSolution, best: &mut Option<(f64, Vec<StationId>, BeamformingSolution)>| {
        let key = best.as_ref().map(|(o, s, _)| (*o, s.len()));
        if better(&(obj, subset.len()), &key) {
            *best = Some((obj, subset, sol));
        }
    };

    if exhaustive {
        for mask in 1u32..(1 << candidates.len()) {
            let subset: Vec<StationId> =
                candidates.iter().enumerate().filter(|(i, _)| mask & (1 << i) != 0).map(|(_, id)| *id).collect();
            if let Some((obj, sol)) = ev.eval(&subset)? {
                keep(obj, subset, sol, &mut best);
            }
        }
    } else {
        // Greedy forward selection through every size; the best prefix wins.
        let mut chosen: Vec<StationId> = Vec::new();
        while chosen.len() < candidates.len() {
            let mut step: Option<(bool, f64, StationId, Option<BeamformingSolution>)> = None;
            for id in candidates.iter().filter(|id| !chosen.contains(id)) {
                let mut trial = chosen.clone();
                trial.push(*id);
                // Feasible subsets rank by objective; infeasible ones by the proxy.
                let (feasible, score, sol) = match ev.eval(&trial)? {
                    Some((obj, sol)) => (true, obj, Some(sol)),
                    None => (false, -ev.proxy(&trial), None),
                };
                let improves = match &step {
                    None => true,
                    Some((f, s, _, _)) => (feasible && !*f) || (feasible == *f && score < *s),
                };
                if improves {
                    step = Some((feasible, score, *id, sol));
                }
            }
            let Some((_, score, id, sol)) = step else { break };
            chosen.push(id);
            if let Some(sol) = sol {
                keep(score, chosen.clone(), sol, &mut best);
            }
        }
    }

    let (objective_mw, mut active, solution) = best.ok_or(Error::NoFeasibleSubset)?;
    active.sort_by_key(|id| candidates.iter().position(|c| c == id));
    let decisions = candidates.iter().map(|id| (*id, active.contains(id))).collect();
    Ok(NodeSelection { active, decisions, solution, objective_mw, exhaustive, subsets_evaluated: ev.count })
}
