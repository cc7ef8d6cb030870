//! Run reports, summary statistics and plot-data export.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::dispatch::{ClosedLoopRun, COMFORT_TOLERANCE};
use crate::error::{Error, Result};
use crate::fmt_f64;
use crate::privacy::{DpParams, NoiseTrace};
use crate::scenario::{read_csv_any, read_numeric_csv, Trace};

pub const DETAIL_CSV: &str = "detail.csv";
pub const SIGNALS_CSV: &str = "signals.csv";
pub const TEMPERATURES_CSV: &str = "temperatures.csv";
pub const NOISE_CSV: &str = "noise.csv";
pub const SUMMARY_CSV: &str = "summary.csv";
pub const PLOTS_DIR: &str = "plots";
pub const HISTOGRAM_BINS: usize = 40;

/// Everything recorded by one closed-loop run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub step_seconds: u32,
    pub pv_kw: Vec<f64>,
    pub noise_kw: Vec<f64>,
    /// `pv - noise` before clamping.
    pub net_pv_kw: Vec<f64>,
    /// Clamped reference the loads tracked.
    pub reference_kw: Vec<f64>,
    pub aggregate_kw: Vec<f64>,
    pub residual_kw: Vec<f64>,
    pub n_on: Vec<usize>,
    pub violations: Vec<usize>,
    pub clamped: Vec<bool>,
    pub in_envelope: Vec<bool>,
    pub overrides: Vec<usize>,
    pub infeasible: Vec<bool>,
    /// Per building, `n_steps + 1` temperatures.
    pub temps: Vec<Vec<f64>>,
}

impl RunReport {
    pub fn assemble(pv: &Trace, noise: &NoiseTrace, net: &Trace, run: ClosedLoopRun) -> Result<Self> {
        let n = run.len();
        if pv.len() != n || noise.len() != n || net.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "run has {n} steps; pv {}, noise {}, net {}",
                pv.len(),
                noise.len(),
                net.len()
            )));
        }
        Ok(RunReport {
            step_seconds: pv.step_seconds,
            pv_kw: pv.values.clone(),
            noise_kw: noise.values.clone(),
            net_pv_kw: net.values.clone(),
            reference_kw: run.reference_kw,
            aggregate_kw: run.aggregate_kw,
            residual_kw: run.residual_kw,
            n_on: run.n_on,
            violations: run.violations,
            clamped: run.clamped,
            in_envelope: run.in_envelope,
            overrides: run.overrides,
            infeasible: run.infeasible,
            temps: run.temps,
        })
    }

    pub fn len(&self) -> usize {
        self.reference_kw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reference_kw.is_empty()
    }

    pub fn noise_trace(&self) -> NoiseTrace {
        NoiseTrace {
            values: self.noise_kw.clone(),
            step_seconds: self.step_seconds,
        }
    }

    /// Writes detail, signal, temperature and noise CSVs into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        write_file(&dir.join(DETAIL_CSV), |out| {
            writeln!(out, "step,ref_kw,agg_kw,residual_kw,n_on,violations")?;
            for k in 0..self.len() {
                writeln!(
                    out,
                    "{k},{},{},{},{},{}",
                    fmt_f64(self.reference_kw[k]),
                    fmt_f64(self.aggregate_kw[k]),
                    fmt_f64(self.residual_kw[k]),
                    self.n_on[k],
                    self.violations[k]
                )?;
            }
            Ok(())
        })?;
        write_file(&dir.join(SIGNALS_CSV), |out| {
            writeln!(
                out,
                "step,pv_kw,noise_kw,net_pv_kw,clamped,in_envelope,overrides,infeasible"
            )?;
            for k in 0..self.len() {
                writeln!(
                    out,
                    "{k},{},{},{},{},{},{},{}",
                    fmt_f64(self.pv_kw[k]),
                    fmt_f64(self.noise_kw[k]),
                    fmt_f64(self.net_pv_kw[k]),
                    self.clamped[k] as u8,
                    self.in_envelope[k] as u8,
                    self.overrides[k],
                    self.infeasible[k] as u8
                )?;
            }
            Ok(())
        })?;
        write_file(&dir.join(TEMPERATURES_CSV), |out| write_wide(out, "step", &self.temps))?;
        self.noise_trace().save_csv(&dir.join(NOISE_CSV))
    }

    /// Rebuilds a report from the files written by [`RunReport::save`].
    pub fn load(dir: &Path, step_seconds: u32) -> Result<Self> {
        for name in [DETAIL_CSV, SIGNALS_CSV, TEMPERATURES_CSV] {
            let path = dir.join(name);
            if !path.is_file() {
                return Err(Error::MissingFile(path));
            }
        }
        let detail = read_numeric_csv(
            &dir.join(DETAIL_CSV),
            &["step", "ref_kw", "agg_kw", "residual_kw", "n_on", "violations"],
        )?;
        let signals = read_numeric_csv(
            &dir.join(SIGNALS_CSV),
            &[
                "step",
                "pv_kw",
                "noise_kw",
                "net_pv_kw",
                "clamped",
                "in_envelope",
                "overrides",
                "infeasible",
            ],
        )?;
        let (header, temp_rows) = read_csv_any(&dir.join(TEMPERATURES_CSV))?;
        if detail.len() != signals.len() || temp_rows.len() != detail.len() + 1 {
            return Err(Error::DimensionMismatch(format!(
                "{} detail rows, {} signal rows, {} temperature rows",
                detail.len(),
                signals.len(),
                temp_rows.len()
            )));
        }
        let col = |rows: &[Vec<f64>], c: usize| rows.iter().map(|r| r[c]).collect::<Vec<f64>>();
        let count = |rows: &[Vec<f64>], c: usize| rows.iter().map(|r| r[c] as usize).collect::<Vec<usize>>();
        let flag = |rows: &[Vec<f64>], c: usize| rows.iter().map(|r| r[c] != 0.0).collect::<Vec<bool>>();
        let temps = (1..header.len()).map(|c| col(&temp_rows, c)).collect();
        Ok(RunReport {
            step_seconds,
            pv_kw: col(&signals, 1),
            noise_kw: col(&signals, 2),
            net_pv_kw: col(&signals, 3),
            reference_kw: col(&detail, 1),
            aggregate_kw: col(&detail, 2),
            residual_kw: col(&detail, 3),
            n_on: count(&detail, 4),
            violations: count(&detail, 5),
            clamped: flag(&signals, 4),
            in_envelope: flag(&signals, 5),
            overrides: count(&signals, 6),
            infeasible: flag(&signals, 7),
            temps,
        })
    }
}

fn write_file(path: &Path, body: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    let mut out = BufWriter::new(file);
    body(&mut out)
        .and_then(|_| out.flush())
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// One row per sample index, one column per series (`b0`, `b1`, ...).
fn write_wide<W: Write>(out: &mut W, index: &str, series: &[Vec<f64>]) -> std::io::Result<()> {
    write!(out, "{index}")?;
    for j in 0..series.len() {
        write!(out, ",b{j}")?;
    }
    writeln!(out)?;
    let rows = series.first().map_or(0, Vec::len);
    for k in 0..rows {
        write!(out, "{k}")?;
        for s in series {
            write!(out, ",{}", fmt_f64(s[k]))?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Root-mean-square tracking residual, kW.
pub fn tracking_rmse(report: &RunReport) -> f64 {
    rms(&report.residual_kw)
}

fn rms(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    (values.iter().map(|r| r * r).sum::<f64>() / values.len() as f64).sqrt()
}

pub fn max_abs_residual(report: &RunReport) -> f64 {
    report.residual_kw.iter().fold(0.0, |m, r| m.max(r.abs()))
}

/// Largest |residual| over steps whose reference sat inside the free-unit
/// envelope, with the number of such steps.
pub fn envelope_residual(report: &RunReport) -> (usize, f64) {
    report
        .residual_kw
        .iter()
        .zip(&report.in_envelope)
        .filter(|(_, inside)| **inside)
        .fold((0, 0.0), |(n, m), (r, _)| (n + 1, f64::max(m, r.abs())))
}

/// `(building, sample)` pairs more than `1e-9` °C outside `[band.0, band.1]`,
/// initial temperatures included.
pub fn comfort_violation_count(report: &RunReport, band: (f64, f64)) -> usize {
    report
        .temps
        .iter()
        .flatten()
        .filter(|&&t| t > band.1 + COMFORT_TOLERANCE || t < band.0 - COMFORT_TOLERANCE)
        .count()
}

/// Equal-width histogram over `[min, max]` of the samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    /// `n_bins + 1` bin edges.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn centers(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }
}

pub fn noise_histogram(noise: &NoiseTrace, n_bins: usize) -> Result<Histogram> {
    histogram(&noise.values, n_bins)
}

pub fn histogram(values: &[f64], n_bins: usize) -> Result<Histogram> {
    if n_bins == 0 {
        return Err(Error::InvalidParameter("histogram needs at least one bin".into()));
    }
    if values.is_empty() {
        return Ok(Histogram {
            edges: vec![0.0; n_bins + 1],
            counts: vec![0; n_bins],
        });
    }
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo) / n_bins as f64;
    let edges = (0..=n_bins)
        .map(|i| if i == n_bins { hi } else { lo + i as f64 * width })
        .collect();
    let mut counts = vec![0; n_bins];
    for &x in values {
        let bin = if width > 0.0 {
            (((x - lo) / width) as usize).min(n_bins - 1)
        } else {
            0
        };
        counts[bin] += 1;
    }
    Ok(Histogram { edges, counts })
}

/// Histogram asymmetry about zero: samples are binned by `|x|` into
/// `bins_per_side` equal bins on each side and the bin-wise count differences
/// are summed, `sum_b |pos_b - neg_b| / n`. Zeros count on neither side.
pub fn mirrored_asymmetry(values: &[f64], bins_per_side: usize) -> Result<f64> {
    if bins_per_side == 0 {
        return Err(Error::InvalidParameter("need at least one bin per side".into()));
    }
    if values.is_empty() {
        return Ok(0.0);
    }
    let reach = values.iter().fold(0.0, |m: f64, x| m.max(x.abs()));
    if reach == 0.0 {
        return Ok(0.0);
    }
    let width = reach / bins_per_side as f64;
    let mut pos = vec![0i64; bins_per_side];
    let mut neg = vec![0i64; bins_per_side];
    for &x in values {
        let bin = ((x.abs() / width) as usize).min(bins_per_side - 1);
        if x > 0.0 {
            pos[bin] += 1;
        } else if x < 0.0 {
            neg[bin] += 1;
        }
    }
    let diff: i64 = pos.iter().zip(&neg).map(|(p, n)| (p - n).abs()).sum();
    Ok(diff as f64 / values.len() as f64)
}

/// Sample moments of a noise trace next to the Laplace target `2 lambda^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentCheck {
    pub n: usize,
    pub mean: f64,
    /// Unbiased sample variance; `None` with fewer than two samples.
    pub variance: Option<f64>,
    pub expected_variance: f64,
}

impl MomentCheck {
    pub fn variance_relative_error(&self) -> Option<f64> {
        self.variance
            .map(|v| (v - self.expected_variance).abs() / self.expected_variance)
    }
}

pub fn noise_moment_check(noise: &NoiseTrace, params: &DpParams) -> MomentCheck {
    let n = noise.len();
    let mean = if n == 0 {
        0.0
    } else {
        noise.values.iter().sum::<f64>() / n as f64
    };
    let variance = (n >= 2).then(|| noise.values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64);
    let scale = params.scale();
    MomentCheck {
        n,
        mean,
        variance,
        expected_variance: 2.0 * scale * scale,
    }
}

/// How far the realised consumption is from carrying exactly the intended noise.
#[derive(Debug, Clone, PartialEq)]
pub struct Divergence {
    /// `(pv(k) - aggregate(k)) - noise(k)`.
    pub per_step: Vec<f64>,
    pub max_abs: f64,
    pub mean_abs: f64,
}

/// Per-step `(pv - aggregate) - noise`. Equals `(net - reference) - residual`:
/// the clamp magnitude minus the tracking residual.
pub fn residual_vs_intended_noise(report: &RunReport) -> Divergence {
    let per_step: Vec<f64> = (0..report.len())
        .map(|k| (report.pv_kw[k] - report.aggregate_kw[k]) - report.noise_kw[k])
        .collect();
    let max_abs = per_step.iter().fold(0.0, |m: f64, d| m.max(d.abs()));
    let mean_abs = if per_step.is_empty() {
        0.0
    } else {
        per_step.iter().map(|d| d.abs()).sum::<f64>() / per_step.len() as f64
    };
    Divergence {
        per_step,
        max_abs,
        mean_abs,
    }
}

/// Scalar summary exported as one CSV row.
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub n_buildings: usize,
    pub n_steps: usize,
    pub rmse_kw: f64,
    pub max_abs_residual_kw: f64,
    pub envelope_steps: usize,
    pub envelope_max_abs_residual_kw: f64,
    pub comfort_violations: usize,
    pub clamped_steps: usize,
    pub negative_net_steps: usize,
    pub overrides: usize,
    pub infeasible_steps: usize,
    pub noise: MomentCheck,
    pub divergence_max_abs_kw: f64,
    pub divergence_mean_abs_kw: f64,
}

const SUMMARY_HEADER: &str = "n_buildings,n_steps,rmse_kw,max_abs_residual_kw,envelope_steps,\
envelope_max_abs_residual_kw,comfort_violations,clamped_steps,negative_net_steps,overrides,\
infeasible_steps,noise_mean_kw,noise_variance_kw2,noise_expected_variance_kw2,\
divergence_max_abs_kw,divergence_mean_abs_kw";

impl Summary {
    pub fn from_report(report: &RunReport, params: &DpParams, band: (f64, f64)) -> Self {
        let (envelope_steps, envelope_max) = envelope_residual(report);
        let divergence = residual_vs_intended_noise(report);
        Summary {
            n_buildings: report.temps.len(),
            n_steps: report.len(),
            rmse_kw: tracking_rmse(report),
            max_abs_residual_kw: max_abs_residual(report),
            envelope_steps,
            envelope_max_abs_residual_kw: envelope_max,
            comfort_violations: comfort_violation_count(report, band),
            clamped_steps: report.clamped.iter().filter(|&&c| c).count(),
            negative_net_steps: report.net_pv_kw.iter().filter(|&&v| v < 0.0).count(),
            overrides: report.overrides.iter().sum(),
            infeasible_steps: report.infeasible.iter().filter(|&&f| f).count(),
            noise: noise_moment_check(&report.noise_trace(), params),
            divergence_max_abs_kw: divergence.max_abs,
            divergence_mean_abs_kw: divergence.mean_abs,
        }
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{SUMMARY_HEADER}")?;
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.n_buildings,
            self.n_steps,
            fmt_f64(self.rmse_kw),
            fmt_f64(self.max_abs_residual_kw),
            self.envelope_steps,
            fmt_f64(self.envelope_max_abs_residual_kw),
            self.comfort_violations,
            self.clamped_steps,
            self.negative_net_steps,
            self.overrides,
            self.infeasible_steps,
            fmt_f64(self.noise.mean),
            self.noise.variance.map(fmt_f64).unwrap_or_default(),
            fmt_f64(self.noise.expected_variance),
            fmt_f64(self.divergence_max_abs_kw),
            fmt_f64(self.divergence_mean_abs_kw),
        )
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, |out| self.write_csv(out))
    }
}

impl std::fmt::Display for Summary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "buildings            {}", self.n_buildings)?;
        writeln!(f, "steps                {}", self.n_steps)?;
        writeln!(f, "tracking rmse        {:.4} kW", self.rmse_kw)?;
        writeln!(f, "max |residual|       {:.4} kW", self.max_abs_residual_kw)?;
        writeln!(
            f,
            "in-envelope steps    {} (max |residual| {:.4} kW)",
            self.envelope_steps, self.envelope_max_abs_residual_kw
        )?;
        writeln!(f, "comfort violations   {}", self.comfort_violations)?;
        writeln!(f, "clamped steps        {}", self.clamped_steps)?;
        writeln!(f, "negative net steps   {}", self.negative_net_steps)?;
        writeln!(f, "comfort overrides    {}", self.overrides)?;
        writeln!(f, "infeasible steps     {}", self.infeasible_steps)?;
        match self.noise.variance {
            Some(v) => writeln!(
                f,
                "noise mean/var       {:.4} kW / {:.4} kW² (target {:.4})",
                self.noise.mean, v, self.noise.expected_variance
            ),
            None => writeln!(f, "noise mean/var       {:.4} kW / undefined", self.noise.mean),
        }
    }
}

/// Writes the x,y plot-data files under `dir/plots`.
pub fn write_plot_data(report: &RunReport, dir: &Path) -> Result<()> {
    let plots = dir.join(PLOTS_DIR);
    std::fs::create_dir_all(&plots).map_err(|e| Error::io(format!("creating {}", plots.display()), e))?;
    let series = |name: &str, ys: &[f64]| {
        write_file(&plots.join(name), |out| {
            writeln!(out, "x,y")?;
            for (k, y) in ys.iter().enumerate() {
                writeln!(out, "{k},{}", fmt_f64(*y))?;
            }
            Ok(())
        })
    };
    series("noise.csv", &report.noise_kw)?;
    series("net_pv.csv", &report.net_pv_kw)?;
    let hist = histogram(&report.noise_kw, HISTOGRAM_BINS)?;
    write_histogram(&hist, &plots.join("histogram.csv"))?;
    write_file(&plots.join("temperatures.csv"), |out| {
        write_wide(out, "x", &report.temps)
    })?;
    write_file(&plots.join("tracking.csv"), |out| {
        writeln!(out, "x,reference_kw,aggregate_kw")?;
        for k in 0..report.len() {
            writeln!(
                out,
                "{k},{},{}",
                fmt_f64(report.reference_kw[k]),
                fmt_f64(report.aggregate_kw[k])
            )?;
        }
        Ok(())
    })
}

/// `x,y` rows of bin centre and count.
pub fn write_histogram(hist: &Histogram, path: &Path) -> Result<()> {
    write_file(path, |out| {
        writeln!(out, "x,y")?;
        for (c, n) in hist.centers().iter().zip(&hist.counts) {
            writeln!(out, "{},{n}", fmt_f64(*c))?;
        }
        Ok(())
    })
}
