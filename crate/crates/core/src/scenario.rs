//! Input traces, synthetic generators, and run configuration.

use std::f64::consts::PI;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::dispatch::{MpcConfig, SolverChoice};
use crate::error::{Error, Result};
use crate::privacy::DpParams;
use crate::thermal::{discretize, BuildingState, ContinuousThermalModel, DiscreteThermalModel, DisturbanceTrace};

const SECONDS_PER_DAY: u32 = 86_400;

/// RNG streams carved from the master seed. Stream 0 is the noise stream and
/// coincides with [`crate::privacy::noise_rng`] of the same seed.
#[derive(Debug, Clone, Copy)]
enum Stream {
    Pv = 1,
    Weather = 2,
    InitialTemps = 3,
    Jitter = 4,
}

fn stream_rng(seed: u64, stream: Stream) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Unit {
    Kw,
    Celsius,
    KwPerM2,
}

impl Unit {
    /// Column-name suffix used in trace CSV headers.
    pub fn suffix(self) -> &'static str {
        match self {
            Unit::Kw => "_kw",
            Unit::Celsius => "_c",
            Unit::KwPerM2 => "_kw_m2",
        }
    }

    fn from_column(name: &str) -> Option<Unit> {
        [Unit::KwPerM2, Unit::Kw, Unit::Celsius]
            .into_iter()
            .find(|u| name.ends_with(u.suffix()))
    }
}

impl fmt::Display for Unit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Unit::Kw => "kW",
            Unit::Celsius => "°C",
            Unit::KwPerM2 => "kW/m²",
        })
    }
}

/// Uniformly sampled time series.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub values: Vec<f64>,
    pub unit: Unit,
    pub step_seconds: u32,
    pub start_label: String,
}

impl Trace {
    pub fn new(values: Vec<f64>, unit: Unit, step_seconds: u32, start_label: impl Into<String>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidParameter("trace must not be empty".into()));
        }
        if step_seconds == 0 {
            return Err(Error::InvalidParameter("step_seconds must be positive".into()));
        }
        Ok(Trace {
            values,
            unit,
            step_seconds,
            start_label: start_label.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn truncated(mut self, len: usize) -> Self {
        self.values.truncate(len);
        self
    }

    /// Writes `step,time_s,<quantity><unit suffix>` with a `# start:` line.
    pub fn write_csv<W: Write>(&self, mut out: W, quantity: &str) -> std::io::Result<()> {
        writeln!(out, "# start: {}", self.start_label)?;
        writeln!(out, "step,time_s,{quantity}{}", self.unit.suffix())?;
        for (k, v) in self.values.iter().enumerate() {
            writeln!(
                out,
                "{k},{},{}",
                k as u64 * self.step_seconds as u64,
                crate::fmt_f64(*v)
            )?;
        }
        Ok(())
    }
}

fn open(path: &Path) -> Result<std::fs::File> {
    std::fs::File::open(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path.to_path_buf())
        } else {
            Error::io(format!("opening {}", path.display()), e)
        }
    })
}

fn parse_err(path: &Path, row: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        row,
        message: message.into(),
    }
}

/// Reads a numeric CSV with the given header. `#` lines are comments. The
/// first column must count `0, 1, 2, ...`; a skipped index is reported as a
/// gap. Row numbers in errors count data rows from 1.
pub fn read_numeric_csv(path: &Path, header: &[&str]) -> Result<Vec<Vec<f64>>> {
    let (found, rows) = read_csv_any(path)?;
    if found != header {
        return Err(Error::TraceFormat {
            path: path.to_path_buf(),
            message: format!("expected header `{}`, found `{}`", header.join(","), found.join(",")),
        });
    }
    Ok(rows)
}

/// Like [`read_numeric_csv`] but returns whatever header the file has.
pub fn read_csv_any(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .has_headers(true)
        .from_reader(open(path)?);
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| parse_err(path, 0, e.to_string()))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if header.iter().all(|h| h.is_empty()) {
        return Err(Error::TraceFormat {
            path: path.to_path_buf(),
            message: "file is empty".into(),
        });
    }
    let mut rows = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let row = idx + 1;
        let record = record.map_err(|e| parse_err(path, row, e.to_string()))?;
        if record.len() != header.len() {
            return Err(parse_err(
                path,
                row,
                format!("expected {} fields, found {}", header.len(), record.len()),
            ));
        }
        let values = record
            .iter()
            .zip(&header)
            .map(|(field, name)| {
                let v: f64 = field
                    .trim()
                    .parse()
                    .map_err(|_| parse_err(path, row, format!("`{name}` is not a number: `{field}`")))?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(parse_err(path, row, format!("`{name}` is not finite: `{field}`")))
                }
            })
            .collect::<Result<Vec<f64>>>()?;
        let expected_step = rows.len() as f64;
        if values[0] != expected_step {
            return Err(parse_err(
                path,
                row,
                format!("gap in step index: expected {expected_step}, found {}", values[0]),
            ));
        }
        rows.push(values);
    }
    if rows.is_empty() {
        return Err(Error::TraceFormat {
            path: path.to_path_buf(),
            message: "no data rows".into(),
        });
    }
    Ok((header, rows))
}

fn start_label_of(path: &Path) -> Result<String> {
    let mut first = String::new();
    BufReader::new(open(path)?)
        .read_line(&mut first)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    Ok(first
        .trim()
        .strip_prefix("# start:")
        .map(|s| s.trim().to_string())
        .unwrap_or_default())
}

/// Loads a `step,time_s,<quantity><suffix>` trace, checking the unit suffix,
/// the step spacing, and that every value is finite.
pub fn load_trace(path: &Path, expected_unit: Unit, expected_step: u32) -> Result<Trace> {
    let (header, rows) = read_csv_any(path)?;
    let format_err = |message: String| Error::TraceFormat {
        path: path.to_path_buf(),
        message,
    };
    if header.len() != 3 || header[0] != "step" || header[1] != "time_s" {
        return Err(format_err(format!(
            "expected header `step,time_s,<quantity>`, found `{}`",
            header.join(",")
        )));
    }
    match Unit::from_column(&header[2]) {
        Some(u) if u == expected_unit => {}
        Some(u) => {
            return Err(format_err(format!(
                "column `{}` is in {u}, expected {expected_unit}",
                header[2]
            )))
        }
        None => {
            return Err(format_err(format!(
                "column `{}` has no recognised unit suffix",
                header[2]
            )))
        }
    }
    for (idx, row) in rows.iter().enumerate() {
        let expected_time = idx as f64 * expected_step as f64;
        if row[1] != expected_time {
            return Err(parse_err(
                path,
                idx + 1,
                format!(
                    "time_s is {} but a {expected_step} s step puts it at {expected_time}",
                    row[1]
                ),
            ));
        }
    }
    let values = rows.into_iter().map(|r| r[2]).collect();
    Trace::new(values, expected_unit, expected_step, start_label_of(path)?)
}

fn steps_for(days: u32, step_seconds: u32) -> Result<usize> {
    if days == 0 {
        return Err(Error::InvalidParameter("days must be at least 1".into()));
    }
    if step_seconds == 0 || !SECONDS_PER_DAY.is_multiple_of(step_seconds) {
        return Err(Error::InvalidParameter(format!(
            "step of {step_seconds} s does not divide a day"
        )));
    }
    Ok((days * (SECONDS_PER_DAY / step_seconds)) as usize)
}

fn hour_of_day(k: usize, step_seconds: u32) -> f64 {
    ((k as u64 * step_seconds as u64) % SECONDS_PER_DAY as u64) as f64 / 3600.0
}

/// Clear-sky shape: half sine between 06:00 and 18:00, zero at night.
pub fn clear_sky(hour: f64) -> f64 {
    if (6.0..18.0).contains(&hour) {
        (PI * (hour - 6.0) / 12.0).sin()
    } else {
        0.0
    }
}

/// Synthetic PV power: clear-sky half sine scaled by `peak_kw` and multiplied
/// by `1 - cloud_intensity * c(k)`, where `c` is a seeded random walk on [0, 1].
pub fn synth_pv(days: u32, step_seconds: u32, peak_kw: f64, cloud_intensity: f64, seed: u64) -> Result<Trace> {
    let n = steps_for(days, step_seconds)?;
    if !(peak_kw >= 0.0 && peak_kw.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "peak_kw must be nonnegative, got {peak_kw}"
        )));
    }
    if !(0.0..=1.0).contains(&cloud_intensity) {
        return Err(Error::InvalidParameter(format!(
            "cloud_intensity must lie in [0, 1], got {cloud_intensity}"
        )));
    }
    let mut rng = stream_rng(seed, Stream::Pv);
    let mut cover: f64 = rng.gen_range(0.0..=1.0);
    let values = (0..n)
        .map(|k| {
            cover = (cover + rng.gen_range(-0.2..=0.2)).clamp(0.0, 1.0);
            peak_kw * clear_sky(hour_of_day(k, step_seconds)) * (1.0 - cloud_intensity * cover)
        })
        .collect();
    Trace::new(values, Unit::Kw, step_seconds, "day 0 00:00")
}

/// Synthetic outdoor temperature peaking at 15:00: `mean_c + swing_c cos(...)`
/// plus a smoothed seeded perturbation bounded by `perturbation_c`.
pub fn synth_weather(
    days: u32,
    step_seconds: u32,
    mean_c: f64,
    swing_c: f64,
    perturbation_c: f64,
    seed: u64,
) -> Result<Trace> {
    let n = steps_for(days, step_seconds)?;
    if ![mean_c, swing_c, perturbation_c].iter().all(|v| v.is_finite()) || swing_c < 0.0 || perturbation_c < 0.0 {
        return Err(Error::InvalidParameter(
            "weather parameters must be finite, swing and perturbation nonnegative".into(),
        ));
    }
    let mut rng = stream_rng(seed, Stream::Weather);
    let mut wander = 0.0;
    let values = (0..n)
        .map(|k| {
            let phase = 2.0 * PI * (hour_of_day(k, step_seconds) - 15.0) / 24.0;
            wander = 0.9 * wander + 0.1 * rng.gen_range(-1.0..=1.0);
            mean_c + swing_c * phase.cos() + perturbation_c * wander
        })
        .collect();
    Trace::new(values, Unit::Celsius, step_seconds, "day 0 00:00")
}

/// Irradiance proportional to PV output, `peak_irradiance` at the trace maximum.
pub fn irradiance_from_pv(pv: &Trace, peak_irradiance: f64) -> Trace {
    let max = pv.values.iter().cloned().fold(0.0, f64::max);
    let values = pv
        .values
        .iter()
        .map(|p| {
            if max > 0.0 {
                p.max(0.0) / max * peak_irradiance
            } else {
                0.0
            }
        })
        .collect();
    Trace {
        values,
        unit: Unit::KwPerM2,
        ..pv.clone()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DpConfig {
    pub epsilon: f64,
    pub delta: f64,
    pub sensitivity: f64,
}

impl Default for DpConfig {
    fn default() -> Self {
        let p = DpParams::default();
        DpConfig {
            epsilon: p.epsilon,
            delta: p.delta,
            sensitivity: p.sensitivity,
        }
    }
}

/// Per-building replacement of any default thermal parameter.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BuildingOverride {
    pub index: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub g_temp: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub g_solar: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BuildingsConfig {
    pub a: f64,
    pub b: f64,
    pub g_temp: f64,
    pub g_solar: f64,
    pub p_rate: f64,
    /// Relative spread applied to a, b, g_temp and g_solar; 0 keeps units identical.
    pub jitter: f64,
    pub overrides: Vec<BuildingOverride>,
}

impl Default for BuildingsConfig {
    fn default() -> Self {
        let m = ContinuousThermalModel::default();
        BuildingsConfig {
            a: m.a,
            b: m.b,
            g_temp: m.g_temp,
            g_solar: m.g_solar,
            p_rate: m.p_rate,
            jitter: 0.0,
            overrides: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PvConfig {
    /// `step,time_s,pv_kw` file; synthetic when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub csv: Option<PathBuf>,
    pub peak_kw: f64,
    pub cloud_intensity: f64,
}

impl Default for PvConfig {
    fn default() -> Self {
        PvConfig {
            csv: None,
            peak_kw: 400.0,
            cloud_intensity: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeatherConfig {
    /// `step,t_out_c,q_solar_kw_m2` file; synthetic when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub csv: Option<PathBuf>,
    pub mean_c: f64,
    pub swing_c: f64,
    pub perturbation_c: f64,
    /// Irradiance at the PV trace maximum, kW/m².
    pub peak_irradiance: f64,
}

impl Default for WeatherConfig {
    fn default() -> Self {
        WeatherConfig {
            csv: None,
            mean_c: 29.0,
            swing_c: 3.5,
            perturbation_c: 0.5,
            peak_irradiance: 0.9,
        }
    }
}

/// Everything needed to reproduce one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub n_buildings: usize,
    pub horizon_steps: usize,
    pub step_seconds: u32,
    pub seed: u64,
    pub solver: SolverChoice,
    pub dp: DpConfig,
    pub mpc: MpcConfig,
    pub buildings: BuildingsConfig,
    pub pv: PvConfig,
    pub weather: WeatherConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            n_buildings: 100,
            horizon_steps: 432,
            step_seconds: 600,
            seed: 42,
            solver: SolverChoice::Greedy,
            dp: DpConfig::default(),
            mpc: MpcConfig::default(),
            buildings: BuildingsConfig::default(),
            pv: PvConfig::default(),
            weather: WeatherConfig::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: ScenarioConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Reads a TOML file. Relative trace paths are resolved against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::MissingFile(path.to_path_buf())
            } else {
                Error::io(format!("reading {}", path.display()), e)
            }
        })?;
        let mut config = Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for csv in [&mut config.pv.csv, &mut config.weather.csv].into_iter().flatten() {
            if csv.is_relative() {
                *csv = base.join(&*csv);
            }
        }
        Ok(config)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario config is always representable as TOML")
    }

    pub fn dp_params(&self) -> Result<DpParams> {
        DpParams::new(self.dp.epsilon, self.dp.delta, self.dp.sensitivity, self.seed)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_buildings == 0 {
            return Err(Error::Config("n_buildings must be at least 1".into()));
        }
        if self.horizon_steps == 0 {
            return Err(Error::Config("horizon_steps must be at least 1".into()));
        }
        if self.step_seconds == 0 || !SECONDS_PER_DAY.is_multiple_of(self.step_seconds) {
            return Err(Error::Config(format!(
                "step_seconds = {} must be positive and divide a day",
                self.step_seconds
            )));
        }
        self.dp_params()?;
        self.mpc.validate()?;
        if !(0.0..1.0).contains(&self.buildings.jitter) {
            return Err(Error::Config(format!(
                "jitter must lie in [0, 1), got {}",
                self.buildings.jitter
            )));
        }
        for o in &self.buildings.overrides {
            if o.index >= self.n_buildings {
                return Err(Error::Config(format!(
                    "override for building {} but only {} buildings",
                    o.index, self.n_buildings
                )));
            }
        }
        self.default_model().validate()?;
        Ok(())
    }

    fn default_model(&self) -> ContinuousThermalModel {
        let b = &self.buildings;
        ContinuousThermalModel {
            a: b.a,
            b: b.b,
            g_temp: b.g_temp,
            g_solar: b.g_solar,
            p_rate: b.p_rate,
        }
    }

    fn days(&self) -> u32 {
        let seconds = self.horizon_steps as u64 * self.step_seconds as u64;
        seconds.div_ceil(SECONDS_PER_DAY as u64) as u32
    }
}

/// Assembled inputs for one closed-loop run.
#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub continuous_models: Vec<ContinuousThermalModel>,
    pub models: Vec<DiscreteThermalModel>,
    pub init_states: Vec<BuildingState>,
    pub disturbances: DisturbanceTrace,
    pub pv: Trace,
}

fn check_length(what: &str, found: usize, expected: usize) -> Result<()> {
    if found != expected {
        return Err(Error::Config(format!(
            "{what} has {found} steps but horizon_steps is {expected}"
        )));
    }
    Ok(())
}

/// Loads or synthesises traces, discretises every building, and draws
/// initial temperatures uniformly inside the comfort band.
pub fn build_simulation(config: &ScenarioConfig) -> Result<Simulation> {
    config.validate()?;
    let steps = config.horizon_steps;
    let step = config.step_seconds;

    let pv = match &config.pv.csv {
        Some(path) => {
            let t = load_trace(path, Unit::Kw, step)?;
            check_length(&path.display().to_string(), t.len(), steps)?;
            t
        }
        None => synth_pv(
            config.days(),
            step,
            config.pv.peak_kw,
            config.pv.cloud_intensity,
            config.seed,
        )?
        .truncated(steps),
    };

    let disturbances = match &config.weather.csv {
        Some(path) => {
            let d = DisturbanceTrace::load_csv(path, step)?;
            check_length(&path.display().to_string(), d.len(), steps)?;
            d
        }
        None => {
            let w = config.weather.clone();
            let t_out = synth_weather(config.days(), step, w.mean_c, w.swing_c, w.perturbation_c, config.seed)?
                .truncated(steps);
            let q_solar = irradiance_from_pv(&pv, w.peak_irradiance);
            DisturbanceTrace::new(t_out.values, q_solar.values, step)?
        }
    };

    let base = config.default_model();
    let jitter = config.buildings.jitter;
    let mut jitter_rng = stream_rng(config.seed, Stream::Jitter);
    let mut continuous_models: Vec<ContinuousThermalModel> = (0..config.n_buildings)
        .map(|_| {
            if jitter == 0.0 {
                return base;
            }
            let mut spread = || 1.0 + jitter * jitter_rng.gen_range(-1.0..=1.0);
            ContinuousThermalModel {
                a: base.a * spread(),
                b: base.b * spread(),
                g_temp: base.g_temp * spread(),
                g_solar: base.g_solar * spread(),
                p_rate: base.p_rate,
            }
        })
        .collect();
    for o in &config.buildings.overrides {
        let m = &mut continuous_models[o.index];
        m.a = o.a.unwrap_or(m.a);
        m.b = o.b.unwrap_or(m.b);
        m.g_temp = o.g_temp.unwrap_or(m.g_temp);
        m.g_solar = o.g_solar.unwrap_or(m.g_solar);
        m.p_rate = o.p_rate.unwrap_or(m.p_rate);
    }
    let models = continuous_models
        .iter()
        .enumerate()
        .map(|(i, m)| {
            m.validate().map_err(|e| Error::Config(format!("building {i}: {e}")))?;
            discretize(m, step)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut temp_rng = stream_rng(config.seed, Stream::InitialTemps);
    let (lo, hi) = (config.mpc.comfort_min, config.mpc.comfort_max);
    let init_states = (0..config.n_buildings)
        .map(|_| BuildingState::off(temp_rng.gen_range(lo..=hi)))
        .collect();

    Ok(Simulation {
        continuous_models,
        models,
        init_states,
        disturbances,
        pv,
    })
}
