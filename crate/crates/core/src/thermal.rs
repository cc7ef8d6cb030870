//! First-order building thermal dynamics with an on/off HVAC input.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dispatch::Schedule;
use crate::error::{Error, Result};

pub const DEFAULT_STEP_SECONDS: u32 = 600;

/// Continuous-time model `dq/dt = a q + b u + g_temp T_out + g_solar Q_solar`,
/// rates per hour.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContinuousThermalModel {
    pub a: f64,
    pub b: f64,
    pub g_temp: f64,
    pub g_solar: f64,
    /// Electric draw when ON, kW.
    pub p_rate: f64,
}

impl Default for ContinuousThermalModel {
    fn default() -> Self {
        ContinuousThermalModel {
            a: -0.5,
            b: -6.0,
            g_temp: 0.5,
            g_solar: 0.5,
            p_rate: 5.0,
        }
    }
}

impl ContinuousThermalModel {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.a, self.b, self.g_temp, self.g_solar, self.p_rate]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidParameter(
                "thermal model has non-finite coefficients".into(),
            ));
        }
        if self.a >= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "state coefficient a must be negative, got {}",
                self.a
            )));
        }
        if self.b >= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "cooling input gain b must be negative, got {}",
                self.b
            )));
        }
        if self.p_rate <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "p_rate must be positive, got {}",
                self.p_rate
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscreteThermalModel {
    pub a_d: f64,
    pub b_d: f64,
    pub g_d_temp: f64,
    pub g_d_solar: f64,
    pub dt_seconds: u32,
    pub p_rate: f64,
}

/// Outdoor conditions for one step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Disturbance {
    pub t_out: f64,
    pub q_solar: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BuildingState {
    pub temp: f64,
    pub mode: u8,
}

impl BuildingState {
    pub fn off(temp: f64) -> Self {
        BuildingState { temp, mode: 0 }
    }
}

/// Zero-order-hold discretization of the scalar model over `dt_seconds`.
pub fn discretize(model: &ContinuousThermalModel, dt_seconds: u32) -> Result<DiscreteThermalModel> {
    if dt_seconds == 0 {
        return Err(Error::InvalidParameter("dt_seconds must be positive".into()));
    }
    let dt_h = dt_seconds as f64 / 3600.0;
    let x = model.a * dt_h;
    let a_d = x.exp();
    // integral of e^(a s) over [0, dt]; expm1 keeps precision for small a dt
    let input_gain = if model.a == 0.0 { dt_h } else { x.exp_m1() / model.a };
    Ok(DiscreteThermalModel {
        a_d,
        b_d: input_gain * model.b,
        g_d_temp: input_gain * model.g_temp,
        g_d_solar: input_gain * model.g_solar,
        dt_seconds,
        p_rate: model.p_rate,
    })
}

impl DiscreteThermalModel {
    /// Next temperature, no input validation. Used by the solvers' inner loops.
    #[inline]
    pub fn next_temp(&self, temp: f64, on: bool, v: Disturbance) -> f64 {
        let u = if on { 1.0 } else { 0.0 };
        self.a_d * temp + self.b_d * u + self.g_d_temp * v.t_out + self.g_d_solar * v.q_solar
    }
}

fn check_binary(u: u8) -> Result<()> {
    if u > 1 {
        return Err(Error::InvalidParameter(format!(
            "control input must be 0 or 1, got {u}"
        )));
    }
    Ok(())
}

pub fn step(model: &DiscreteThermalModel, state: BuildingState, u: u8, v: Disturbance) -> Result<BuildingState> {
    check_binary(u)?;
    Ok(BuildingState {
        temp: model.next_temp(state.temp, u == 1, v),
        mode: u,
    })
}

/// Fixed point of `step` under constant input and disturbance.
pub fn steady_state_temp(model: &DiscreteThermalModel, u: u8, v: Disturbance) -> Result<f64> {
    check_binary(u)?;
    if model.a_d.abs() >= 1.0 {
        return Err(Error::InvalidParameter(format!(
            "no steady state for |a_d| = {} >= 1",
            model.a_d.abs()
        )));
    }
    let forcing = model.b_d * u as f64 + model.g_d_temp * v.t_out + model.g_d_solar * v.q_solar;
    Ok(forcing / (1.0 - model.a_d))
}

/// Outdoor temperature and solar irradiance forecast/record.
#[derive(Debug, Clone, PartialEq)]
pub struct DisturbanceTrace {
    pub t_out: Vec<f64>,
    pub q_solar: Vec<f64>,
    pub step_seconds: u32,
}

impl DisturbanceTrace {
    pub fn new(t_out: Vec<f64>, q_solar: Vec<f64>, step_seconds: u32) -> Result<Self> {
        if t_out.len() != q_solar.len() {
            return Err(Error::DimensionMismatch(format!(
                "t_out has {} steps but q_solar has {}",
                t_out.len(),
                q_solar.len()
            )));
        }
        if step_seconds == 0 {
            return Err(Error::InvalidParameter("step_seconds must be positive".into()));
        }
        Ok(DisturbanceTrace {
            t_out,
            q_solar,
            step_seconds,
        })
    }

    pub fn len(&self) -> usize {
        self.t_out.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t_out.is_empty()
    }

    pub fn at(&self, k: usize) -> Disturbance {
        Disturbance {
            t_out: self.t_out[k],
            q_solar: self.q_solar[k],
        }
    }

    /// Steps `start..start + len`, truncated at the end of the trace.
    pub fn window(&self, start: usize, len: usize) -> DisturbanceTrace {
        let end = (start + len).min(self.len());
        DisturbanceTrace {
            t_out: self.t_out[start..end].to_vec(),
            q_solar: self.q_solar[start..end].to_vec(),
            step_seconds: self.step_seconds,
        }
    }

    /// Reads the `step,t_out_c,q_solar_kw_m2` CSV.
    pub fn load_csv(path: &Path, step_seconds: u32) -> Result<Self> {
        let rows = crate::scenario::read_numeric_csv(path, &["step", "t_out_c", "q_solar_kw_m2"])?;
        let (t_out, q_solar) = rows.into_iter().map(|r| (r[1], r[2])).unzip();
        DisturbanceTrace::new(t_out, q_solar, step_seconds)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "step,t_out_c,q_solar_kw_m2")?;
        for k in 0..self.len() {
            writeln!(
                out,
                "{k},{},{}",
                crate::fmt_f64(self.t_out[k]),
                crate::fmt_f64(self.q_solar[k])
            )?;
        }
        Ok(())
    }
}

/// Result of driving an ensemble through a fixed schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleTrajectory {
    /// Per building, `n_steps + 1` temperatures starting with the initial one.
    pub temps: Vec<Vec<f64>>,
    /// `sum_j u_j(k) p_rate_j` per step, kW.
    pub aggregate_kw: Vec<f64>,
}

pub fn simulate_ensemble(
    models: &[DiscreteThermalModel],
    states: &[BuildingState],
    schedule: &Schedule,
    disturbances: &DisturbanceTrace,
) -> Result<EnsembleTrajectory> {
    if models.len() != states.len() || models.len() != schedule.n_units() {
        return Err(Error::DimensionMismatch(format!(
            "{} models, {} states, {} schedule rows",
            models.len(),
            states.len(),
            schedule.n_units()
        )));
    }
    let n_steps = schedule.n_steps();
    if disturbances.len() < n_steps {
        return Err(Error::DimensionMismatch(format!(
            "schedule spans {n_steps} steps but disturbances cover {}",
            disturbances.len()
        )));
    }
    let mut temps = Vec::with_capacity(models.len());
    let mut aggregate_kw = vec![0.0; n_steps];
    for (j, (model, state)) in models.iter().zip(states).enumerate() {
        let mut traj = Vec::with_capacity(n_steps + 1);
        let mut s = *state;
        traj.push(s.temp);
        for (k, agg) in aggregate_kw.iter_mut().enumerate() {
            let u = schedule.get(j, k);
            s = step(model, s, u, disturbances.at(k))?;
            *agg += u as f64 * model.p_rate;
            traj.push(s.temp);
        }
        temps.push(traj);
    }
    Ok(EnsembleTrajectory { temps, aggregate_kw })
}
