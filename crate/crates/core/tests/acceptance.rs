//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each,
//! and exits non-zero if any failed.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Duration, Instant};

use dppv::cli::{run_simulate, RunArgs};
use dppv::dispatch::{solve_exact, DispatchProblem, MpcConfig, Schedule, SolverChoice};
use dppv::metrics::{envelope_residual, mirrored_asymmetry, noise_histogram, HISTOGRAM_BINS};
use dppv::privacy::{
    density_ratio_bound_check, generate_noise_trace, mechanism_expected_squared_error, noise_rng, sample_laplace,
    DpParams,
};
use dppv::scenario::ScenarioConfig;
use dppv::thermal::{
    discretize, steady_state_temp, step, BuildingState, ContinuousThermalModel, DiscreteThermalModel, Disturbance,
    DisturbanceTrace,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(cond: bool, detail: String) -> Check {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn budget_params(seed: u64) -> DpParams {
    DpParams::new(0.1, 0.0, 1.0, seed).unwrap()
}

fn laplace_calibration() -> Check {
    let start = Instant::now();
    let scale = budget_params(0).scale();
    let mut rng = noise_rng(2024);
    let n = 1_000_000;
    let samples: Vec<f64> = (0..n).map(|_| sample_laplace(scale, &mut rng)).collect();
    let mean = samples.iter().sum::<f64>() / n as f64;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let rel = (var - 200.0).abs() / 200.0;
    let elapsed = start.elapsed();
    ensure(
        mean.abs() <= 0.5 && rel <= 0.05 && elapsed < Duration::from_secs(10),
        format!(
            "mean {mean:.4}, variance {var:.3} ({:.3}% off 200), {elapsed:.2?}",
            rel * 100.0
        ),
    )
}

fn expected_squared_error() -> Check {
    let params = budget_params(0);
    let identity = mechanism_expected_squared_error(&params, 432).unwrap();
    if identity != 86400.0 {
        return Err(format!("identity returned {identity}, expected 86400"));
    }
    let traces = 10_000u64;
    let mut total = 0.0;
    for seed in 0..traces {
        let noise = generate_noise_trace(&budget_params(seed), 432, 600).unwrap();
        total += noise.values.iter().map(|x| x * x).sum::<f64>();
    }
    let per_step = total / (traces as f64 * 432.0);
    let rel = (per_step - 200.0).abs() / 200.0;
    ensure(
        rel <= 0.05,
        format!(
            "identity 86400; empirical mean square {per_step:.3} per step ({:.3}% off 200)",
            rel * 100.0
        ),
    )
}

fn ratio_property() -> Check {
    let params = budget_params(0);
    let mut failures = 0;
    let mut checked = 0;
    for x in -50..=50 {
        for shift in [1.0, -1.0, 0.5, -0.5] {
            checked += 1;
            if !density_ratio_bound_check(&params, x as f64, shift).unwrap() {
                failures += 1;
            }
        }
    }
    ensure(
        failures == 0,
        format!("{failures} failures out of {checked} grid points"),
    )
}

/// Same update and cost arithmetic as the solver, written out independently.
struct Oracle<'a> {
    problem: &'a DispatchProblem,
    config: &'a MpcConfig,
    n_steps: usize,
}

impl Oracle<'_> {
    fn row_temps(&self, unit: usize, row: &[u8]) -> Vec<f64> {
        let m = &self.problem.models[unit];
        let mut temp = self.problem.init_states[unit].temp;
        row.iter()
            .enumerate()
            .map(|(k, &u)| {
                let v = self.problem.disturbance_forecast.at(k);
                temp = m.a_d * temp + m.b_d * u as f64 + m.g_d_temp * v.t_out + m.g_d_solar * v.q_solar;
                temp
            })
            .collect()
    }

    fn row_violation(&self, unit: usize, row: &[u8]) -> f64 {
        self.row_temps(unit, row)
            .iter()
            .map(|&t| {
                if t > self.config.comfort_max {
                    t - self.config.comfort_max
                } else if t < self.config.comfort_min {
                    self.config.comfort_min - t
                } else {
                    0.0
                }
            })
            .sum()
    }

    fn cost(&self, rows: &[Vec<u8>]) -> f64 {
        let temps: Vec<Vec<f64>> = rows.iter().enumerate().map(|(i, r)| self.row_temps(i, r)).collect();
        let mut total = 0.0;
        for k in 0..self.n_steps {
            let mut z = 0.0;
            for (j, m) in self.problem.models.iter().enumerate() {
                z += rows[j][k] as f64 * m.p_rate;
            }
            let track = z - self.problem.reference[k];
            let mut comfort = 0.0;
            for row in &temps {
                let e = row[k] - self.config.setpoint;
                comfort += e * e;
            }
            total += self.config.weight_q * track * track + self.config.weight_r * comfort;
        }
        total
    }

    /// Minimum over all schedules whose rows each reach that unit's least
    /// achievable band violation; first minimum in lexicographic order.
    fn solve(&self) -> (f64, Vec<Vec<u8>>) {
        let n_units = self.problem.models.len();
        let n = self.n_steps;
        let bits = n_units * n;
        let row_of = |code: u64| -> Vec<u8> { (0..n).map(|k| ((code >> (n - 1 - k)) & 1) as u8).collect() };
        let min_violation: Vec<f64> = (0..n_units)
            .map(|i| {
                (0..1u64 << n)
                    .map(|c| self.row_violation(i, &row_of(c)))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let mut best: Option<(f64, Vec<Vec<u8>>)> = None;
        for code in 0..1u64 << bits {
            let rows: Vec<Vec<u8>> = (0..n_units)
                .map(|i| row_of((code >> ((n_units - 1 - i) * n)) & ((1 << n) - 1)))
                .collect();
            if (0..n_units).any(|i| self.row_violation(i, &rows[i]) > min_violation[i] + 1e-9) {
                continue;
            }
            let c = self.cost(&rows);
            if best.as_ref().is_none_or(|(b, _)| c < *b) {
                best = Some((c, rows));
            }
        }
        best.unwrap()
    }
}

fn random_instance(rng: &mut ChaCha8Rng) -> (DispatchProblem, MpcConfig) {
    let n_units = rng.gen_range(1..=6);
    let n_steps = rng.gen_range(1..=12 / n_units);
    let models = (0..n_units)
        .map(|_| {
            let continuous = ContinuousThermalModel {
                a: -rng.gen_range(0.2..1.0),
                b: -rng.gen_range(3.0..8.0),
                g_temp: rng.gen_range(0.2..0.8),
                g_solar: rng.gen_range(0.0..1.0),
                p_rate: rng.gen_range(1..=8) as f64,
            };
            discretize(&continuous, 600).unwrap()
        })
        .collect::<Vec<DiscreteThermalModel>>();
    let init_states = (0..n_units)
        .map(|_| BuildingState::off(rng.gen_range(22.3..23.7)))
        .collect();
    let t_out = (0..n_steps).map(|_| rng.gen_range(22.0..36.0)).collect();
    let q_solar = (0..n_steps).map(|_| rng.gen_range(0.0..1.0)).collect();
    let reference = (0..n_steps).map(|_| rng.gen_range(-5.0..30.0)).collect();
    let problem = DispatchProblem {
        models,
        init_states,
        disturbance_forecast: DisturbanceTrace::new(t_out, q_solar, 600).unwrap(),
        reference,
    };
    let config = MpcConfig {
        horizon_np: n_steps,
        weight_q: rng.gen_range(0.1..5.0),
        weight_r: rng.gen_range(0.0..30.0),
        ..Default::default()
    };
    (problem, config)
}

fn exact_matches_enumeration() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut largest = 0;
    for case in 0..200 {
        let (problem, config) = random_instance(&mut rng);
        let n_steps = config.horizon_np;
        largest = largest.max(problem.models.len() * n_steps);
        let oracle = Oracle {
            problem: &problem,
            config: &config,
            n_steps,
        };
        let (expected_cost, rows) = oracle.solve();
        let expected = Schedule::from_rows(&rows).unwrap();
        let result = solve_exact(&problem, &config).unwrap();
        if result.cost != expected_cost || result.schedule != expected {
            return Err(format!(
                "case {case}: solver cost {} vs enumeration {expected_cost}, schedules equal: {}",
                result.cost,
                result.schedule == expected
            ));
        }
    }
    let elapsed = start.elapsed();
    ensure(
        elapsed < Duration::from_secs(60),
        format!("200 instances identical in cost and schedule (largest N_s*N_p = {largest}), {elapsed:.2?}"),
    )
}

fn desk_replication() -> Check {
    let start = Instant::now();
    let config = ScenarioConfig::default();
    assert_eq!(
        (config.n_buildings, config.horizon_steps, config.step_seconds),
        (100, 432, 600)
    );
    assert_eq!(config.solver, SolverChoice::Greedy);
    assert_eq!(config.buildings.jitter, 0.0);
    let report = dppv::simulate(&config).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();

    let band = config.mpc.comfort_min..=config.mpc.comfort_max;
    let tol = 1e-9;
    let violations: usize = report
        .temps
        .iter()
        .flat_map(|row| row.iter().skip(1))
        .filter(|&&t| t < band.start() - tol || t > band.end() + tol)
        .count();
    // z is measured against the reference the controller was given: net PV
    // clamped to [0, capacity]; at unclamped steps that is net PV itself
    let limit = config.buildings.p_rate / 2.0;
    let (mut steps, mut clamped, mut worst) = (0usize, 0usize, 0.0f64);
    for k in 0..report.len() {
        if !report.in_envelope[k] {
            continue;
        }
        steps += 1;
        if report.clamped[k] {
            clamped += 1;
        } else {
            assert_eq!(report.reference_kw[k], report.net_pv_kw[k]);
        }
        worst = worst.max((report.aggregate_kw[k] - report.reference_kw[k]).abs());
    }
    let (metric_steps, metric_max) = envelope_residual(&report);
    ensure(
        violations == 0
            && worst <= limit
            && (metric_steps, metric_max) == (steps, worst)
            && elapsed < Duration::from_secs(60),
        format!(
            "{violations} comfort violations; {steps} in-envelope steps ({clamped} at a clamped reference) \
             with max |z - ref| {worst:.4} kW (limit {limit}); {elapsed:.2?}"
        ),
    )
}

fn read_tree(dir: &Path, prefix: &str, out: &mut BTreeMap<String, Vec<u8>>) {
    for entry in std::fs::read_dir(dir).unwrap() {
        let entry = entry.unwrap();
        let name = format!("{prefix}{}", entry.file_name().to_string_lossy());
        if entry.file_type().unwrap().is_dir() {
            read_tree(&entry.path(), &format!("{name}/"), out);
        } else {
            out.insert(name, std::fs::read(entry.path()).unwrap());
        }
    }
}

fn determinism() -> Check {
    let root = tempfile::tempdir().unwrap();
    let mut trees = Vec::new();
    for name in ["a", "b"] {
        let args = RunArgs::new(root.path().join(name));
        run_simulate(&args).map_err(|e| e.to_string())?;
        let mut tree = BTreeMap::new();
        read_tree(&args.out, "", &mut tree);
        trees.push(tree);
    }
    let differing: Vec<&String> = trees[0]
        .iter()
        .filter(|(name, bytes)| trees[1].get(*name) != Some(bytes))
        .map(|(name, _)| name)
        .collect();
    ensure(
        trees[0].len() == trees[1].len() && differing.is_empty() && trees[0].contains_key("manifest.toml"),
        format!("{} files compared, differing: {differing:?}", trees[0].len()),
    )
}

fn exp_series(x: f64) -> f64 {
    let (mut term, mut sum) = (1.0, 1.0);
    for n in 1..60 {
        term *= x / n as f64;
        sum += term;
    }
    sum
}

fn phi_series(x: f64) -> f64 {
    let (mut term, mut sum) = (1.0, 1.0);
    for n in 2..60 {
        term *= x / n as f64;
        sum += term;
    }
    sum
}

fn thermal_checks() -> Check {
    let rel = |got: f64, want: f64| (got - want).abs() / want.abs();
    let mut worst = 0.0f64;
    for a in [-6.0, -3.0, -1.0, -0.5, -0.25, -0.1, -0.01, -1e-4] {
        for dt in [60u32, 300, 600, 900, 1800, 3600] {
            let dt_h = dt as f64 / 3600.0;
            let x = a * dt_h;
            if x.abs() > 1.0 {
                continue;
            }
            let m = ContinuousThermalModel {
                a,
                b: -6.0,
                g_temp: 0.5,
                g_solar: 0.5,
                p_rate: 5.0,
            };
            let d = discretize(&m, dt).unwrap();
            let gain = dt_h * phi_series(x);
            for (got, want) in [
                (d.a_d, exp_series(x)),
                (d.b_d, gain * m.b),
                (d.g_d_temp, gain * m.g_temp),
                (d.g_d_solar, gain * m.g_solar),
            ] {
                worst = worst.max(rel(got, want));
            }
        }
    }
    if worst > 1e-10 {
        return Err(format!("discretisation relative error {worst:e} exceeds 1e-10"));
    }

    let model = discretize(&ContinuousThermalModel::default(), 600).unwrap();
    let v = Disturbance {
        t_out: 30.0,
        q_solar: 0.4,
    };
    let mut worst_slope = 0.0f64;
    for u in [0u8, 1] {
        let target = steady_state_temp(&model, u, v).unwrap();
        let mut state = BuildingState::off(target + 8.0);
        let mut points = Vec::new();
        for k in 0..200 {
            let e = (state.temp - target).abs();
            if e < 1e-9 {
                break;
            }
            points.push((k as f64, e.ln()));
            state = step(&model, state, u, v).unwrap();
        }
        let n = points.len() as f64;
        let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
        let my = points.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
        let slope = sxy / sxx;
        worst_slope = worst_slope.max(rel(slope, model.a_d.ln()));
    }
    ensure(
        worst_slope <= 0.02,
        format!(
            "max discretisation error {worst:.2e}; log-error slope within {:.4}% of ln a_d",
            worst_slope * 100.0
        ),
    )
}

fn histogram_view() -> Check {
    let config = ScenarioConfig::default();
    let noise = generate_noise_trace(&config.dp_params().unwrap(), config.horizon_steps, config.step_seconds).unwrap();
    let hist = noise_histogram(&noise, HISTOGRAM_BINS).unwrap();
    if hist.total() != 432 {
        return Err(format!("histogram of the default trace holds {} samples", hist.total()));
    }
    let big = generate_noise_trace(&budget_params(8), 1_000_000, 600).unwrap();
    let asym = mirrored_asymmetry(&big.values, HISTOGRAM_BINS / 2).unwrap();
    ensure(
        asym < 0.01,
        format!("432 samples binned; asymmetry {:.4}% over 10^6 samples", asym * 100.0),
    )
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("laplace calibration", laplace_calibration),
        ("expected squared error", expected_squared_error),
        ("density ratio bound", ratio_property),
        ("exact solver vs enumeration", exact_matches_enumeration),
        ("desk-scale closed loop", desk_replication),
        ("determinism", determinism),
        ("thermal model", thermal_checks),
        ("noise histogram", histogram_view),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("PASS {}. {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {}. {name}: {detail}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
