use super::{cost, DispatchProblem, DispatchResult, MpcConfig, Schedule};
use crate::error::{Error, Result};
use crate::thermal::Disturbance;

/// Largest `N_s * N_p` the branch-and-bound accepts.
pub const EXACT_MAX_BINARIES: usize = 24;

/// Slack when comparing a row's band violation to the best achievable one.
const VIOLATION_SLACK: f64 = 1e-9;

/// Globally optimal schedule by depth-first branch-and-bound.
///
/// Variables are visited in row-major order trying OFF before ON, and an
/// incumbent is only replaced by a strictly cheaper schedule, so the
/// lexicographically smallest optimum wins ties. Each unit's row is restricted
/// to the rows with the least total band violation achievable for that unit
/// (zero whenever the unit can stay in band); the units' dynamics are
/// independent so this is the feasible set when one exists.
pub fn solve_exact(problem: &DispatchProblem, config: &MpcConfig) -> Result<DispatchResult> {
    problem.validate(config)?;
    let n_steps = problem.horizon(config);
    let binaries = problem.n_units() * n_steps;
    if binaries > EXACT_MAX_BINARIES {
        return Err(Error::SolverGuard {
            binaries,
            limit: EXACT_MAX_BINARIES,
        });
    }

    let forecast: Vec<Disturbance> = (0..n_steps).map(|k| problem.disturbance_forecast.at(k)).collect();
    let rows: Vec<RowBounds> = (0..problem.n_units())
        .map(|i| RowBounds::search(problem, config, i, &forecast))
        .collect();

    let mut search = Search {
        problem,
        config,
        forecast: &forecast,
        n_steps,
        rows: &rows,
        schedule: Schedule::zeros(problem.n_units(), n_steps),
        partial_z: vec![0.0; n_steps],
        best: None,
    };
    search.branch(0, 0, problem.init_states[0].temp, 0.0, 0.0, 0.0)?;
    let (_, schedule) = search.best.expect("every unit has at least one admissible row");
    let infeasible = rows.iter().any(|r| r.min_violation > VIOLATION_SLACK);
    DispatchResult::evaluate(problem, config, schedule, infeasible)
}

/// Per-unit facts derived from enumerating that unit's rows alone.
struct RowBounds {
    min_violation: f64,
    /// Least comfort cost among admissible rows; lower bound for unassigned units.
    min_comfort: f64,
}

impl RowBounds {
    fn search(problem: &DispatchProblem, config: &MpcConfig, unit: usize, forecast: &[Disturbance]) -> Self {
        let walk = RowWalk {
            problem,
            config,
            unit,
            forecast,
        };
        let start = problem.init_states[unit].temp;
        let mut min_violation = f64::INFINITY;
        walk.min_violation(0, start, 0.0, &mut min_violation);
        let mut min_comfort = f64::INFINITY;
        walk.min_comfort(0, start, 0.0, 0.0, min_violation + VIOLATION_SLACK, &mut min_comfort);
        RowBounds {
            min_violation,
            min_comfort,
        }
    }

    fn admits(&self, violation: f64) -> bool {
        violation <= self.min_violation + VIOLATION_SLACK
    }
}

/// Enumeration of one unit's rows in isolation.
struct RowWalk<'a> {
    problem: &'a DispatchProblem,
    config: &'a MpcConfig,
    unit: usize,
    forecast: &'a [Disturbance],
}

impl RowWalk<'_> {
    fn next(&self, temp: f64, on: bool, k: usize) -> f64 {
        self.problem.models[self.unit].next_temp(temp, on, self.forecast[k])
    }

    fn min_violation(&self, k: usize, temp: f64, violation: f64, best: &mut f64) {
        if violation >= *best {
            return;
        }
        if k == self.forecast.len() {
            *best = violation;
            return;
        }
        for on in [false, true] {
            let next = self.next(temp, on, k);
            self.min_violation(k + 1, next, violation + self.config.overshoot(next), best);
        }
    }

    fn min_comfort(&self, k: usize, temp: f64, violation: f64, comfort: f64, violation_cap: f64, best: &mut f64) {
        if violation > violation_cap || comfort >= *best {
            return;
        }
        if k == self.forecast.len() {
            *best = comfort;
            return;
        }
        for on in [false, true] {
            let next = self.next(temp, on, k);
            let e = next - self.config.setpoint;
            self.min_comfort(
                k + 1,
                next,
                violation + self.config.overshoot(next),
                comfort + self.config.weight_r * e * e,
                violation_cap,
                best,
            );
        }
    }
}

struct Search<'a> {
    problem: &'a DispatchProblem,
    config: &'a MpcConfig,
    forecast: &'a [Disturbance],
    n_steps: usize,
    rows: &'a [RowBounds],
    schedule: Schedule,
    partial_z: Vec<f64>,
    best: Option<(f64, Schedule)>,
}

impl Search<'_> {
    /// Optimistic cost of completing the current partial schedule, where
    /// `unit`'s first `k` entries (and all earlier units) are fixed.
    fn lower_bound(&self, unit: usize, k: usize, fixed_comfort: f64) -> f64 {
        let n_units = self.problem.n_units();
        let later_capacity: f64 = self.problem.models[unit + 1..].iter().map(|m| m.p_rate).sum();
        let own = self.problem.models[unit].p_rate;
        let mut bound = fixed_comfort;
        for col in 0..self.n_steps {
            let capacity = if col >= k { later_capacity + own } else { later_capacity };
            let gap = self.problem.reference[col] - self.partial_z[col];
            let miss = if gap < 0.0 {
                -gap
            } else if gap > capacity {
                gap - capacity
            } else {
                0.0
            };
            bound += self.config.weight_q * miss * miss;
        }
        bound + self.rows[unit + 1..n_units].iter().map(|r| r.min_comfort).sum::<f64>()
    }

    fn pruned(&self, bound: f64) -> bool {
        match &self.best {
            Some((best, _)) => bound > best + 1e-9 * (1.0 + best.abs()),
            None => false,
        }
    }

    /// `done_comfort` covers units before `unit`; `row_comfort` and
    /// `row_violation` cover `unit`'s entries before `k`.
    fn branch(
        &mut self,
        unit: usize,
        k: usize,
        temp: f64,
        done_comfort: f64,
        row_comfort: f64,
        row_violation: f64,
    ) -> Result<()> {
        if k == self.n_steps {
            if !self.rows[unit].admits(row_violation) {
                return Ok(());
            }
            let done_comfort = done_comfort + row_comfort;
            if unit + 1 == self.problem.n_units() {
                let value = cost(self.problem, &self.schedule, self.config)?;
                if self.best.as_ref().is_none_or(|(best, _)| value < *best) {
                    self.best = Some((value, self.schedule.clone()));
                }
                return Ok(());
            }
            let next_temp = self.problem.init_states[unit + 1].temp;
            return self.branch(unit + 1, 0, next_temp, done_comfort, 0.0, 0.0);
        }
        if !self.rows[unit].admits(row_violation) {
            return Ok(());
        }
        if self.pruned(self.lower_bound(unit, k, done_comfort + row_comfort)) {
            return Ok(());
        }
        let model = self.problem.models[unit];
        for on in [false, true] {
            let next = model.next_temp(temp, on, self.forecast[k]);
            let e = next - self.config.setpoint;
            self.schedule.set(unit, k, on as u8);
            let saved_z = self.partial_z[k];
            if on {
                self.partial_z[k] += model.p_rate;
            }
            let result = self.branch(
                unit,
                k + 1,
                next,
                done_comfort,
                row_comfort + self.config.weight_r * e * e,
                row_violation + self.config.overshoot(next),
            );
            self.partial_z[k] = saved_z;
            self.schedule.set(unit, k, 0);
            result?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::super::test_support::*;
    use super::*;
    use crate::thermal::{BuildingState, DiscreteThermalModel, DisturbanceTrace};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Exhaustive enumeration over all `2^(N_s N_p)` schedules in
    /// lexicographic order. Rows are admissible when their total band
    /// violation is within slack of the unit's own minimum.
    fn brute_force(problem: &DispatchProblem, config: &MpcConfig) -> (f64, Schedule) {
        let n_units = problem.n_units();
        let n_steps = problem.horizon(config);
        let bits = n_units * n_steps;
        let row_violation = |unit: usize, row: &[u8]| {
            let model = &problem.models[unit];
            let mut temp = problem.init_states[unit].temp;
            let mut total = 0.0;
            for (k, &u) in row.iter().enumerate() {
                let v = problem.disturbance_forecast.at(k);
                temp = model.a_d * temp + model.b_d * u as f64 + model.g_d_temp * v.t_out + model.g_d_solar * v.q_solar;
                total += if temp > config.comfort_max {
                    temp - config.comfort_max
                } else if temp < config.comfort_min {
                    config.comfort_min - temp
                } else {
                    0.0
                };
            }
            total
        };
        let decode = |code: u64| {
            let mut s = Schedule::zeros(n_units, n_steps);
            for idx in 0..bits {
                let bit = (code >> (bits - 1 - idx)) & 1;
                s.set(idx / n_steps, idx % n_steps, bit as u8);
            }
            s
        };
        let mut min_violation = vec![f64::INFINITY; n_units];
        for row_code in 0..(1u64 << n_steps) {
            let row: Vec<u8> = (0..n_steps)
                .map(|k| ((row_code >> (n_steps - 1 - k)) & 1) as u8)
                .collect();
            for (unit, best) in min_violation.iter_mut().enumerate() {
                *best = best.min(row_violation(unit, &row));
            }
        }
        let mut best: Option<(f64, Schedule)> = None;
        for code in 0..(1u64 << bits) {
            let s = decode(code);
            let admissible = (0..n_units).all(|i| row_violation(i, s.row(i)) <= min_violation[i] + 1e-9);
            if !admissible {
                continue;
            }
            let c = cost(problem, &s, config).unwrap();
            if best.as_ref().is_none_or(|(b, _)| c < *b) {
                best = Some((c, s));
            }
        }
        best.unwrap()
    }

    fn random_instance(rng: &mut ChaCha8Rng) -> (DispatchProblem, MpcConfig) {
        let n_units = rng.gen_range(1..=4);
        let n_steps = rng.gen_range(1..=(12 / n_units).min(4));
        let models = (0..n_units)
            .map(|_| DiscreteThermalModel {
                a_d: rng.gen_range(0.85..0.97),
                b_d: -rng.gen_range(0.5..1.2),
                g_d_temp: rng.gen_range(0.03..0.15),
                g_d_solar: rng.gen_range(0.0..0.1),
                dt_seconds: 600,
                p_rate: rng.gen_range(1..=6) as f64,
            })
            .collect();
        let init_states = (0..n_units)
            .map(|_| BuildingState::off(rng.gen_range(22.3..23.7)))
            .collect();
        let t_out = (0..n_steps).map(|_| rng.gen_range(24.0..34.0)).collect();
        let q_solar = (0..n_steps).map(|_| rng.gen_range(0.0..1.0)).collect();
        let reference = (0..n_steps).map(|_| rng.gen_range(-2.0..20.0)).collect();
        let problem = DispatchProblem {
            models,
            init_states,
            disturbance_forecast: DisturbanceTrace::new(t_out, q_solar, 600).unwrap(),
            reference,
        };
        let config = MpcConfig {
            horizon_np: n_steps,
            weight_q: rng.gen_range(0.0..3.0),
            weight_r: rng.gen_range(0.0..20.0),
            ..Default::default()
        };
        (problem, config)
    }

    #[test]
    fn single_unit_idle_when_off_stays_in_band() {
        // t_out equal to the setpoint keeps an idle unit at 23.0
        let p = problem(&[23.0], vec![0.0], 23.0);
        let config = MpcConfig {
            horizon_np: 1,
            ..Default::default()
        };
        let r = solve_exact(&p, &config).unwrap();
        assert_eq!(r.schedule.get(0, 0), 0);
        assert!(r.cost.abs() < 1e-12);
    }

    #[test]
    fn hotter_unit_is_the_one_switched_on() {
        // weak cooling so either unit may run without leaving the band
        let model = DiscreteThermalModel {
            a_d: 0.92,
            b_d: -0.3,
            g_d_temp: 0.08,
            g_d_solar: 0.0,
            dt_seconds: 600,
            p_rate: 5.0,
        };
        let mut p = problem(&[23.1, 23.2], vec![5.0], 26.0);
        p.models = vec![model; 2];
        let config = MpcConfig {
            horizon_np: 1,
            ..Default::default()
        };
        let r = solve_exact(&p, &config).unwrap();
        assert_eq!(r.schedule.column(0), vec![0, 1]);
        assert!(!r.infeasible);
        assert_eq!(brute_force(&p, &config).1, r.schedule);
    }

    #[test]
    fn guard_refuses_large_instances() {
        let p = problem(&[23.0; 5], vec![0.0; 5], 30.0);
        let config = MpcConfig {
            horizon_np: 5,
            ..Default::default()
        };
        match solve_exact(&p, &config) {
            Err(Error::SolverGuard {
                binaries: 25,
                limit: 24,
            }) => {}
            other => panic!("expected guard refusal, got {other:?}"),
        }
        let config = MpcConfig {
            horizon_np: 4,
            ..Default::default()
        };
        assert!(solve_exact(&problem(&[23.0; 6], vec![0.0; 4], 30.0), &config).is_ok());
    }

    #[test]
    fn infeasible_unit_gets_least_violation_row() {
        // outdoor air far below the band: every row undercools, OFF least
        let p = problem(&[22.6], vec![5.0, 5.0], 0.0);
        let config = MpcConfig {
            horizon_np: 2,
            ..Default::default()
        };
        let r = solve_exact(&p, &config).unwrap();
        assert!(r.infeasible);
        assert!(!r.violations.is_empty());
        assert_eq!(r.schedule.row(0), &[0, 0]);
        assert_eq!(brute_force(&p, &config).1, r.schedule);
    }

    #[test]
    fn matches_enumeration_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..150 {
            let (p, config) = random_instance(&mut rng);
            let r = solve_exact(&p, &config).unwrap();
            let (best_cost, best_schedule) = brute_force(&p, &config);
            assert_eq!(r.cost, best_cost);
            assert_eq!(r.schedule, best_schedule);
        }
    }

    #[test]
    fn uniform_weight_scaling_keeps_argmin() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..40 {
            let (p, config) = random_instance(&mut rng);
            let scaled = MpcConfig {
                weight_q: config.weight_q * 3.0,
                weight_r: config.weight_r * 3.0,
                ..config
            };
            let a = solve_exact(&p, &config).unwrap();
            let b = solve_exact(&p, &scaled).unwrap();
            assert!((b.cost - 3.0 * a.cost).abs() <= 1e-9 * (1.0 + a.cost.abs()));
            assert!((cost(&p, &a.schedule, &scaled).unwrap() - b.cost).abs() <= 1e-9 * (1.0 + b.cost.abs()));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn deterministic(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (p, config) = random_instance(&mut rng);
            prop_assert_eq!(solve_exact(&p, &config).unwrap(), solve_exact(&p, &config).unwrap());
        }
    }
}
