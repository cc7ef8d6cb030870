use super::{enforce_comfort, solve_exact, solve_priority_heuristic, DispatchProblem, MpcConfig, SolverChoice};
use crate::error::{Error, Result};
use crate::thermal::{step, BuildingState, DiscreteThermalModel, DisturbanceTrace};

/// Per-step record of a closed-loop simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopRun {
    /// Reference before clamping, kW.
    pub raw_reference_kw: Vec<f64>,
    /// Reference clamped to `[0, capacity_kw]`; this is what the solver tracks.
    pub reference_kw: Vec<f64>,
    pub aggregate_kw: Vec<f64>,
    /// `aggregate_kw - reference_kw`.
    pub residual_kw: Vec<f64>,
    pub n_on: Vec<usize>,
    /// Buildings outside the band after the step.
    pub violations: Vec<usize>,
    pub clamped: Vec<bool>,
    /// Reference inside `[forced-ON load, forced-ON load + free capacity]`.
    pub in_envelope: Vec<bool>,
    /// Units whose solver decision was overridden by the comfort guard.
    pub overrides: Vec<usize>,
    /// Some unit faced both comfort overrides at once.
    pub infeasible: Vec<bool>,
    /// Per building, `steps + 1` realised temperatures.
    pub temps: Vec<Vec<f64>>,
    pub capacity_kw: f64,
}

impl ClosedLoopRun {
    pub fn len(&self) -> usize {
        self.reference_kw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reference_kw.is_empty()
    }
}

/// Runs MPC over the whole `reference`: solve over the next `horizon_np`
/// steps, apply the first column through the comfort guard, advance the true
/// states, repeat. The horizon shrinks near the end of the trace.
pub fn receding_horizon_run(
    models: &[DiscreteThermalModel],
    init_states: &[BuildingState],
    disturbances: &DisturbanceTrace,
    reference: &[f64],
    config: &MpcConfig,
    solver: SolverChoice,
) -> Result<ClosedLoopRun> {
    config.validate()?;
    if models.is_empty() || models.len() != init_states.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} models and {} initial states",
            models.len(),
            init_states.len()
        )));
    }
    let steps = reference.len();
    if steps == 0 {
        return Err(Error::InvalidParameter("reference trace is empty".into()));
    }
    if disturbances.len() < steps {
        return Err(Error::DimensionMismatch(format!(
            "disturbance trace has {} steps but the reference needs {steps}",
            disturbances.len()
        )));
    }

    let capacity_kw: f64 = models.iter().map(|m| m.p_rate).sum();
    let clamped_ref: Vec<f64> = reference.iter().map(|r| r.clamp(0.0, capacity_kw)).collect();
    let mut run = ClosedLoopRun {
        raw_reference_kw: reference.to_vec(),
        clamped: reference.iter().zip(&clamped_ref).map(|(r, c)| r != c).collect(),
        reference_kw: clamped_ref,
        aggregate_kw: Vec::with_capacity(steps),
        residual_kw: Vec::with_capacity(steps),
        n_on: Vec::with_capacity(steps),
        violations: Vec::with_capacity(steps),
        in_envelope: Vec::with_capacity(steps),
        overrides: Vec::with_capacity(steps),
        infeasible: Vec::with_capacity(steps),
        temps: init_states.iter().map(|s| vec![s.temp]).collect(),
        capacity_kw,
    };

    let mut states = init_states.to_vec();
    for t in 0..steps {
        let window = config.horizon_np.min(steps - t);
        let problem = DispatchProblem {
            models: models.to_vec(),
            init_states: states.clone(),
            disturbance_forecast: disturbances.window(t, window),
            reference: run.reference_kw[t..t + window].to_vec(),
        };
        let result = match solver {
            SolverChoice::Exact => solve_exact(&problem, config)?,
            SolverChoice::Greedy => solve_priority_heuristic(&problem, config)?,
        };

        let v = disturbances.at(t);
        let reference = run.reference_kw[t];
        let (mut forced_kw, mut free_kw) = (0.0, 0.0);
        let (mut aggregate, mut n_on, mut overrides, mut violations) = (0.0, 0, 0, 0);
        let mut infeasible = false;
        for (j, model) in models.iter().enumerate() {
            let if_off = enforce_comfort(model, states[j], v, 0, config);
            let if_on = enforce_comfort(model, states[j], v, 1, config);
            if if_off.u == if_on.u {
                if if_off.u == 1 {
                    forced_kw += model.p_rate;
                }
            } else {
                free_kw += model.p_rate;
            }

            let decision = enforce_comfort(model, states[j], v, result.schedule.get(j, 0), config);
            overrides += decision.overridden as usize;
            infeasible |= decision.infeasible;
            states[j] = step(model, states[j], decision.u, v)?;
            if decision.u == 1 {
                aggregate += model.p_rate;
                n_on += 1;
            }
            if !config.in_band(states[j].temp) {
                violations += 1;
            }
            run.temps[j].push(states[j].temp);
        }

        run.aggregate_kw.push(aggregate);
        run.residual_kw.push(aggregate - reference);
        run.n_on.push(n_on);
        run.violations.push(violations);
        run.in_envelope
            .push(forced_kw <= reference && reference <= forced_kw + free_kw);
        run.overrides.push(overrides);
        run.infeasible.push(infeasible);
    }
    Ok(run)
}
