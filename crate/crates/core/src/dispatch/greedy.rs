use std::cmp::Ordering;

use super::{enforce_comfort, DispatchProblem, DispatchResult, MpcConfig, Schedule};
use crate::error::Result;
use crate::thermal::BuildingState;

/// Priority-list dispatch, one step at a time through the forecast.
///
/// At each step units whose band would be broken by one choice are forced to
/// the other (see [`enforce_comfort`]). The remaining free units fill the
/// reference left after the forced-ON load, rounded to whole units; the
/// warmest free units (largest headroom above `comfort_min`) run first, lower
/// index first on ties. Predicted states then advance one step.
pub fn solve_priority_heuristic(problem: &DispatchProblem, config: &MpcConfig) -> Result<DispatchResult> {
    problem.validate(config)?;
    let n_steps = problem.horizon(config);
    let n_units = problem.n_units();
    let mut schedule = Schedule::zeros(n_units, n_steps);
    let mut temps: Vec<f64> = problem.init_states.iter().map(|s| s.temp).collect();
    let mut infeasible = false;

    for k in 0..n_steps {
        let v = problem.disturbance_forecast.at(k);
        let mut forced_kw = 0.0;
        let mut free = Vec::with_capacity(n_units);
        for (j, model) in problem.models.iter().enumerate() {
            let state = BuildingState::off(temps[j]);
            let off = enforce_comfort(model, state, v, 0, config);
            let on = enforce_comfort(model, state, v, 1, config);
            if off.u == on.u {
                // forced either way
                infeasible |= off.infeasible;
                if off.u == 1 {
                    schedule.set(j, k, 1);
                    forced_kw += model.p_rate;
                }
            } else {
                free.push(j);
            }
        }

        let target = unit_target(problem.reference[k] - forced_kw, &free, problem);
        free.sort_by(|&a, &b| match temps[b].total_cmp(&temps[a]) {
            Ordering::Equal => a.cmp(&b),
            other => other,
        });
        for &j in free.iter().take(target) {
            schedule.set(j, k, 1);
        }

        for (j, model) in problem.models.iter().enumerate() {
            temps[j] = model.next_temp(temps[j], schedule.get(j, k) == 1, v);
        }
    }

    DispatchResult::evaluate(problem, config, schedule, infeasible)
}

/// `round(remaining / mean free rating)` clipped to `[0, #free]`.
fn unit_target(remaining_kw: f64, free: &[usize], problem: &DispatchProblem) -> usize {
    if free.is_empty() {
        return 0;
    }
    let mean_rate = free.iter().map(|&j| problem.models[j].p_rate).sum::<f64>() / free.len() as f64;
    let raw = (remaining_kw / mean_rate).round();
    if raw <= 0.0 {
        0
    } else {
        (raw as usize).min(free.len())
    }
}
