//! Receding-horizon dispatch of binary HVAC units against a power reference.
//!
//! The per-horizon problem minimises
//! `J = sum_k { Q (z(k) - ref(k))^2 + R sum_i (x_i(k+1) - X_r)^2 }`
//! with `z(k) = sum_j u_j(k) p_rate_j` and the comfort band enforced as a hard
//! constraint on predicted temperatures. Two solvers are provided:
//! [`solve_exact`] (branch-and-bound, small instances) and
//! [`solve_priority_heuristic`] (greedy, any size).

mod closed_loop;
mod exact;
mod greedy;

pub use closed_loop::{receding_horizon_run, ClosedLoopRun};
pub use exact::{solve_exact, EXACT_MAX_BINARIES};
pub use greedy::solve_priority_heuristic;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::thermal::{BuildingState, DiscreteThermalModel, Disturbance, DisturbanceTrace};

/// Temperatures within this distance outside the band still count as inside.
pub const COMFORT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MpcConfig {
    pub horizon_np: usize,
    pub weight_q: f64,
    pub weight_r: f64,
    pub setpoint: f64,
    pub comfort_min: f64,
    pub comfort_max: f64,
}

impl Default for MpcConfig {
    fn default() -> Self {
        MpcConfig {
            horizon_np: 6,
            weight_q: 1.0,
            weight_r: 10.0,
            setpoint: 23.0,
            comfort_min: 22.5,
            comfort_max: 23.5,
        }
    }
}

impl MpcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon_np == 0 {
            return Err(Error::InvalidParameter("prediction horizon must be at least 1".into()));
        }
        if !(self.weight_q >= 0.0 && self.weight_q.is_finite()) || !(self.weight_r >= 0.0 && self.weight_r.is_finite())
        {
            return Err(Error::InvalidParameter("weights must be finite and nonnegative".into()));
        }
        let ordered =
            self.comfort_min.is_finite() && self.comfort_max.is_finite() && self.comfort_min < self.comfort_max;
        if !ordered {
            return Err(Error::InvalidParameter(format!(
                "comfort band [{}, {}] is empty",
                self.comfort_min, self.comfort_max
            )));
        }
        if !(self.comfort_min..=self.comfort_max).contains(&self.setpoint) {
            return Err(Error::InvalidParameter(format!(
                "setpoint {} lies outside the comfort band",
                self.setpoint
            )));
        }
        Ok(())
    }

    /// Distance of `temp` outside the comfort band, zero inside.
    pub fn overshoot(&self, temp: f64) -> f64 {
        if temp > self.comfort_max {
            temp - self.comfort_max
        } else if temp < self.comfort_min {
            self.comfort_min - temp
        } else {
            0.0
        }
    }

    pub fn in_band(&self, temp: f64) -> bool {
        self.overshoot(temp) <= COMFORT_TOLERANCE
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverChoice {
    Exact,
    Greedy,
}

impl fmt::Display for SolverChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SolverChoice::Exact => "exact",
            SolverChoice::Greedy => "greedy",
        })
    }
}

impl FromStr for SolverChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(SolverChoice::Exact),
            "greedy" => Ok(SolverChoice::Greedy),
            other => Err(Error::Config(format!(
                "unknown solver `{other}` (expected exact or greedy)"
            ))),
        }
    }
}

/// Binary ON/OFF decisions, one row per unit and one column per step.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Schedule {
    n_units: usize,
    n_steps: usize,
    // row-major
    u: Vec<u8>,
}

impl Schedule {
    pub fn zeros(n_units: usize, n_steps: usize) -> Self {
        Schedule {
            n_units,
            n_steps,
            u: vec![0; n_units * n_steps],
        }
    }

    pub fn from_rows(rows: &[Vec<u8>]) -> Result<Self> {
        let n_steps = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_steps) {
            return Err(Error::DimensionMismatch("schedule rows have different lengths".into()));
        }
        if rows.iter().flatten().any(|&u| u > 1) {
            return Err(Error::InvalidParameter("schedule entries must be 0 or 1".into()));
        }
        Ok(Schedule {
            n_units: rows.len(),
            n_steps,
            u: rows.concat(),
        })
    }

    pub fn n_units(&self) -> usize {
        self.n_units
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn get(&self, unit: usize, step: usize) -> u8 {
        self.u[unit * self.n_steps + step]
    }

    pub fn set(&mut self, unit: usize, step: usize, on: u8) {
        assert!(on <= 1, "schedule entries are binary");
        self.u[unit * self.n_steps + step] = on;
    }

    pub fn row(&self, unit: usize) -> &[u8] {
        &self.u[unit * self.n_steps..(unit + 1) * self.n_steps]
    }

    pub fn column(&self, step: usize) -> Vec<u8> {
        (0..self.n_units).map(|j| self.get(j, step)).collect()
    }

    /// Entries in row-major order; lexicographic order on this slice is the
    /// solvers' tie-break order.
    pub fn flattened(&self) -> &[u8] {
        &self.u
    }
}

/// One receding-horizon optimisation instance.
#[derive(Debug, Clone, PartialEq)]
pub struct DispatchProblem {
    pub models: Vec<DiscreteThermalModel>,
    pub init_states: Vec<BuildingState>,
    pub disturbance_forecast: DisturbanceTrace,
    /// Power reference, kW.
    pub reference: Vec<f64>,
}

impl DispatchProblem {
    pub fn n_units(&self) -> usize {
        self.models.len()
    }

    /// Number of schedule columns: the prediction horizon truncated to the
    /// available reference.
    pub fn horizon(&self, config: &MpcConfig) -> usize {
        config.horizon_np.min(self.reference.len())
    }

    pub fn validate(&self, config: &MpcConfig) -> Result<()> {
        config.validate()?;
        if self.models.is_empty() {
            return Err(Error::InvalidParameter(
                "dispatch problem needs at least one unit".into(),
            ));
        }
        if self.models.len() != self.init_states.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} models but {} initial states",
                self.models.len(),
                self.init_states.len()
            )));
        }
        let n = self.horizon(config);
        if n == 0 {
            return Err(Error::DimensionMismatch("reference is empty".into()));
        }
        if self.disturbance_forecast.len() < n {
            return Err(Error::DimensionMismatch(format!(
                "forecast covers {} steps, horizon needs {n}",
                self.disturbance_forecast.len()
            )));
        }
        Ok(())
    }

    fn check_schedule(&self, schedule: &Schedule, config: &MpcConfig) -> Result<()> {
        self.validate(config)?;
        let n = self.horizon(config);
        if schedule.n_units() != self.n_units() || schedule.n_steps() != n {
            return Err(Error::DimensionMismatch(format!(
                "schedule is {}x{} but problem is {}x{n}",
                schedule.n_units(),
                schedule.n_steps(),
                self.n_units()
            )));
        }
        Ok(())
    }

    /// Predicted temperatures `x_i(k+1)` for `k` in `0..n_steps` under `schedule`.
    fn predict(&self, schedule: &Schedule) -> Vec<Vec<f64>> {
        self.models
            .iter()
            .zip(&self.init_states)
            .enumerate()
            .map(|(i, (model, state))| {
                let mut temp = state.temp;
                (0..schedule.n_steps())
                    .map(|k| {
                        temp = model.next_temp(temp, schedule.get(i, k) == 1, self.disturbance_forecast.at(k));
                        temp
                    })
                    .collect()
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Violation {
    pub building: usize,
    pub step: usize,
    /// Degrees outside the comfort band.
    pub overshoot: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DispatchResult {
    pub schedule: Schedule,
    pub aggregate_kw: Vec<f64>,
    pub cost: f64,
    /// `x_i(k+1) - X_r`, one row per building.
    pub per_building_error: Vec<Vec<f64>>,
    pub predicted_temps: Vec<Vec<f64>>,
    pub violations: Vec<Violation>,
    /// Set when the solver could not keep every predicted temperature in band.
    pub infeasible: bool,
}

impl DispatchResult {
    pub(crate) fn evaluate(
        problem: &DispatchProblem,
        config: &MpcConfig,
        schedule: Schedule,
        infeasible: bool,
    ) -> Result<Self> {
        let cost = cost(problem, &schedule, config)?;
        let predicted_temps = problem.predict(&schedule);
        let p_rates: Vec<f64> = problem.models.iter().map(|m| m.p_rate).collect();
        let aggregate_kw = (0..schedule.n_steps())
            .map(|k| aggregate_power(&schedule, k, &p_rates))
            .collect::<Result<Vec<_>>>()?;
        let per_building_error = predicted_temps
            .iter()
            .map(|row| row.iter().map(|x| x - config.setpoint).collect())
            .collect();
        let mut violations = Vec::new();
        for (building, row) in predicted_temps.iter().enumerate() {
            for (step, &x) in row.iter().enumerate() {
                if !config.in_band(x) {
                    violations.push(Violation {
                        building,
                        step,
                        overshoot: config.overshoot(x),
                    });
                }
            }
        }
        Ok(DispatchResult {
            schedule,
            aggregate_kw,
            cost,
            per_building_error,
            predicted_temps,
            infeasible: infeasible || !violations.is_empty(),
            violations,
        })
    }
}

/// `z(k) = sum_j u_j(k) p_rate_j`.
pub fn aggregate_power(schedule: &Schedule, k: usize, p_rates: &[f64]) -> Result<f64> {
    if k >= schedule.n_steps() {
        return Err(Error::InvalidParameter(format!(
            "step {k} out of range for a {}-step schedule",
            schedule.n_steps()
        )));
    }
    if p_rates.len() != schedule.n_units() {
        return Err(Error::DimensionMismatch(format!(
            "{} ratings for {} units",
            p_rates.len(),
            schedule.n_units()
        )));
    }
    Ok(p_rates
        .iter()
        .enumerate()
        .map(|(j, p)| schedule.get(j, k) as f64 * p)
        .sum())
}

/// Horizon objective `J` of `schedule`.
pub fn cost(problem: &DispatchProblem, schedule: &Schedule, config: &MpcConfig) -> Result<f64> {
    problem.check_schedule(schedule, config)?;
    let temps = problem.predict(schedule);
    let mut total = 0.0;
    for k in 0..schedule.n_steps() {
        let z: f64 = problem
            .models
            .iter()
            .enumerate()
            .map(|(j, m)| schedule.get(j, k) as f64 * m.p_rate)
            .sum();
        let track = z - problem.reference[k];
        let comfort: f64 = temps
            .iter()
            .map(|row| {
                let e = row[k] - config.setpoint;
                e * e
            })
            .sum();
        total += config.weight_q * track * track + config.weight_r * comfort;
    }
    Ok(total)
}

/// Outcome of [`enforce_comfort`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ComfortDecision {
    pub u: u8,
    pub overridden: bool,
    /// Both overrides applied at once: the band is narrower than one step's swing.
    pub infeasible: bool,
}

/// Forces ON when staying OFF would overheat past `comfort_max` and OFF when
/// running would undercool past `comfort_min`.
pub fn enforce_comfort(
    model: &DiscreteThermalModel,
    state: BuildingState,
    disturbance: Disturbance,
    candidate_u: u8,
    config: &MpcConfig,
) -> ComfortDecision {
    let off_temp = model.next_temp(state.temp, false, disturbance);
    let on_temp = model.next_temp(state.temp, true, disturbance);
    let must_on = off_temp > config.comfort_max;
    let must_off = on_temp < config.comfort_min;
    let u = match (must_on, must_off) {
        (true, true) => {
            let off_gap = (off_temp - config.setpoint).abs();
            let on_gap = (on_temp - config.setpoint).abs();
            if on_gap < off_gap {
                1
            } else if off_gap < on_gap {
                0
            } else {
                candidate_u
            }
        }
        (true, false) => 1,
        (false, true) => 0,
        (false, false) => candidate_u,
    };
    ComfortDecision {
        u,
        overridden: u != candidate_u,
        infeasible: must_on && must_off,
    }
}
