//! Laplace-mechanism noise for the PV aggregate.
//!
//! The noise signal is carved out of the PV generation trace: the loads are
//! asked to follow `pv - noise` so that the metered aggregate carries the
//! noise. All sampling goes through [`NoiseRng`] so a seed fully determines
//! the output.

use std::io::Write;
use std::path::Path;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::Trace;

/// Uniform source for all noise sampling: ChaCha20 seeded from a `u64`
/// through `SeedableRng::seed_from_u64`. Fixed for the project so traces are
/// reproducible across platforms.
pub type NoiseRng = ChaCha20Rng;

/// Relative slack used when comparing a density ratio to `e^epsilon`.
const RATIO_TOLERANCE: f64 = 1e-12;

pub fn noise_rng(seed: u64) -> NoiseRng {
    NoiseRng::seed_from_u64(seed)
}

/// Privacy parameters of the Laplace mechanism.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DpParams {
    pub epsilon: f64,
    pub delta: f64,
    /// Global L1 sensitivity of the PV query, kW.
    pub sensitivity: f64,
    pub seed: u64,
}

impl DpParams {
    pub fn new(epsilon: f64, delta: f64, sensitivity: f64, seed: u64) -> Result<Self> {
        let params = DpParams {
            epsilon,
            delta,
            sensitivity,
            seed,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "epsilon must be positive and finite, got {}",
                self.epsilon
            )));
        }
        if !(self.sensitivity.is_finite() && self.sensitivity > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "sensitivity must be positive and finite, got {}",
                self.sensitivity
            )));
        }
        if !(0.0..1.0).contains(&self.delta) {
            return Err(Error::InvalidParameter(format!(
                "delta must lie in [0, 1), got {}",
                self.delta
            )));
        }
        let scale = self.sensitivity / self.epsilon;
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "laplace scale {scale} is not finite and positive"
            )));
        }
        Ok(())
    }

    /// `lambda = sensitivity / epsilon`.
    pub fn scale(&self) -> f64 {
        laplace_scale(self)
    }

    /// The Laplace mechanism is pure epsilon-DP, so any `delta > 0` is unused slack.
    pub fn delta_is_slack(&self) -> bool {
        self.delta > 0.0
    }
}

impl Default for DpParams {
    fn default() -> Self {
        DpParams {
            epsilon: 0.1,
            delta: 0.0,
            sensitivity: 1.0,
            seed: 0,
        }
    }
}

pub fn laplace_scale(params: &DpParams) -> f64 {
    params.sensitivity / params.epsilon
}

/// Density of the zero-mean Laplace distribution with the given scale.
pub fn laplace_pdf(x: f64, scale: f64) -> Result<f64> {
    check_scale(scale)?;
    Ok((-x.abs() / scale).exp() / (2.0 * scale))
}

fn check_scale(scale: f64) -> Result<()> {
    if scale.is_finite() && scale > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "laplace scale must be positive and finite, got {scale}"
        )))
    }
}

/// Inverse CDF of Laplace(0, scale) evaluated at `p` in (0, 1).
pub fn laplace_from_uniform(p: f64, scale: f64) -> f64 {
    let centered = p - 0.5;
    if centered == 0.0 {
        return 0.0;
    }
    -scale * centered.signum() * (1.0 - 2.0 * centered.abs()).ln()
}

/// Uniform draw strictly inside (0, 1) built from the top 52 bits of one
/// `u64`: `(k + 0.5) / 2^52` is exact in an `f64` and never hits either
/// endpoint.
pub fn uniform_open01<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    let k = rng.next_u64() >> 12;
    (k as f64 + 0.5) * (1.0 / (1u64 << 52) as f64)
}

/// One Laplace(0, scale) draw. Consumes exactly one `u64` from `rng`.
pub fn sample_laplace<R: RngCore + ?Sized>(scale: f64, rng: &mut R) -> f64 {
    laplace_from_uniform(uniform_open01(rng), scale)
}

/// Per-step privacy noise `P_DPPV(k)` in kW.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseTrace {
    pub values: Vec<f64>,
    pub step_seconds: u32,
}

impl NoiseTrace {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Writes the `step,noise_kw` CSV.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "step,noise_kw")?;
        for (k, v) in self.values.iter().enumerate() {
            writeln!(out, "{k},{}", crate::fmt_f64(*v))?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
        self.write_csv(std::io::BufWriter::new(file))
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    /// Reads a `step,noise_kw` CSV. The step size is not stored in the file.
    pub fn load_csv(path: &Path, step_seconds: u32) -> Result<Self> {
        let rows = crate::scenario::read_numeric_csv(path, &["step", "noise_kw"])?;
        let values = rows.into_iter().map(|r| r[1]).collect();
        Ok(NoiseTrace { values, step_seconds })
    }
}

/// `length` i.i.d. Laplace(sensitivity / epsilon) draws seeded by `params.seed`.
pub fn generate_noise_trace(params: &DpParams, length: usize, step_seconds: u32) -> Result<NoiseTrace> {
    params.validate()?;
    if length == 0 {
        return Err(Error::InvalidParameter("noise trace length must be at least 1".into()));
    }
    if step_seconds == 0 {
        return Err(Error::InvalidParameter("step_seconds must be positive".into()));
    }
    let scale = params.scale();
    let mut rng = noise_rng(params.seed);
    let values = (0..length).map(|_| sample_laplace(scale, &mut rng)).collect();
    Ok(NoiseTrace { values, step_seconds })
}

/// `P_NetPV(k) = P_PV(k) - P_DPPV(k)`. Negative values are kept.
pub fn compute_net_pv(pv: &Trace, noise: &NoiseTrace) -> Result<Trace> {
    if pv.len() != noise.len() {
        return Err(Error::DimensionMismatch(format!(
            "pv trace has {} steps but noise trace has {}",
            pv.len(),
            noise.len()
        )));
    }
    if pv.step_seconds != noise.step_seconds {
        return Err(Error::DimensionMismatch(format!(
            "pv step is {} s but noise step is {} s",
            pv.step_seconds, noise.step_seconds
        )));
    }
    let values = pv.values.iter().zip(&noise.values).map(|(p, n)| p - n).collect();
    Ok(Trace { values, ..pv.clone() })
}

/// Checks `pdf(x) / pdf(x - shift) <= e^epsilon` for a neighbouring output
/// shifted by at most the sensitivity. The ratio is compared in log space.
pub fn density_ratio_bound_check(params: &DpParams, x: f64, shift: f64) -> Result<bool> {
    params.validate()?;
    if !shift.is_finite() || shift.abs() > params.sensitivity {
        return Err(Error::InvalidParameter(format!(
            "|shift| = {} exceeds the sensitivity {}",
            shift.abs(),
            params.sensitivity
        )));
    }
    let scale = params.scale();
    let log_ratio = ((x - shift).abs() - x.abs()) / scale;
    Ok(log_ratio <= params.epsilon * (1.0 + RATIO_TOLERANCE))
}

/// Expected total squared error over `m` independent queries, `2 m dQ^2 / eps^2`.
pub fn mechanism_expected_squared_error(params: &DpParams, m: usize) -> Result<f64> {
    params.validate()?;
    if m == 0 {
        return Err(Error::InvalidParameter("query count m must be at least 1".into()));
    }
    let s = params.sensitivity / params.epsilon;
    Ok(2.0 * m as f64 * s * s)
}
