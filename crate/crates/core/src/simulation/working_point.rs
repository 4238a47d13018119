use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{fmt_vec, gaussian, gaussian_vec, Vec3};
use crate::error::{Error, Result};
use crate::estimator::{orthogonality, working_point_estimate};
use crate::geometry::FieldVector;
use crate::rng::stream_rng;

/// How the working-point field applied during the Rb reading is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum WpPolicy {
    /// The same field for every measurement.
    Fixed { field: Vec3 },
    /// Parallel to the measurement's own `b_nv + b_0_hat`, with the given
    /// magnitude.
    AlongReading { magnitude: f64 },
    /// Parallel to the measurement's own `b_nv`, with the given magnitude.
    AlongNv { magnitude: f64 },
}

impl WpPolicy {
    fn field(&self, b_nv: Vec3, b_0_hat: Vec3) -> Vec3 {
        match *self {
            WpPolicy::Fixed { field } => field,
            WpPolicy::AlongReading { magnitude } => (b_nv + b_0_hat).normalized().unwrap_or_default() * magnitude,
            WpPolicy::AlongNv { magnitude } => b_nv.normalized().unwrap_or_default() * magnitude,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorkingPointConfig {
    pub delta_b: Vec3,
    pub b_0: Vec3,
    pub policy: WpPolicy,
    pub sigma_nv: f64,
    pub sigma_rb: f64,
    pub n_samples: usize,
    pub seed: u64,
}

impl Default for WorkingPointConfig {
    fn default() -> Self {
        Self {
            delta_b: FieldVector::new(-0.3, 0.3, 0.0),
            b_0: FieldVector::new(0.5, 0.0, 0.0),
            policy: WpPolicy::AlongReading { magnitude: 2.0 },
            sigma_nv: 0.26,
            sigma_rb: 790e-6,
            n_samples: 100_000,
            seed: 0,
        }
    }
}

impl WorkingPointConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.delta_b.is_finite() || !self.b_0.is_finite() {
            return Err(Error::invalid("delta_b", "fields must be finite"));
        }
        if !(self.sigma_nv >= 0.0 && self.sigma_nv.is_finite()) {
            return Err(Error::invalid("sigma_nv", "must be finite and >= 0"));
        }
        if !(self.sigma_rb >= 0.0 && self.sigma_rb.is_finite()) {
            return Err(Error::invalid("sigma_rb", "must be finite and >= 0"));
        }
        if self.n_samples < 2 {
            return Err(Error::invalid("n_samples", "must be at least 2"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkingPointReport {
    /// Noise-free orthogonality without the working point.
    pub orthogonality: Option<f64>,
    pub var_without: f64,
    pub var_with: f64,
    pub mse_without: f64,
    pub mse_with: f64,
    pub var_nv: f64,
}

impl WorkingPointReport {
    pub fn summary(&self, cfg: &WorkingPointConfig) -> Vec<(String, String)> {
        vec![
            ("delta_b".into(), fmt_vec(cfg.delta_b)),
            ("b_0".into(), fmt_vec(cfg.b_0)),
            ("policy".into(), format!("{:?}", cfg.policy)),
            ("n_samples".into(), cfg.n_samples.to_string()),
            ("orthogonality".into(), super::fmt_opt(self.orthogonality)),
            ("var_without".into(), self.var_without.to_string()),
            ("var_with".into(), self.var_with.to_string()),
            ("mse_without".into(), self.mse_without.to_string()),
            ("mse_with".into(), self.mse_with.to_string()),
        ]
    }
}

const CHUNK: usize = 4096;

/// Monte-Carlo spread of `|b_hat|` with and without a working-point field.
/// Both arms share every noise draw, so the comparison isolates the effect
/// of the working point.
pub fn working_point_study(cfg: &WorkingPointConfig) -> Result<WorkingPointReport> {
    cfg.validate()?;
    let truth = cfg.delta_b.magnitude();
    let chunks = cfg.n_samples.div_ceil(CHUNK);
    let sums = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = stream_rng(cfg.seed, c as u64);
            let n = CHUNK.min(cfg.n_samples - c * CHUNK);
            let mut m = Vec::with_capacity(n);
            for _ in 0..n {
                let b_nv = cfg.delta_b + gaussian_vec(&mut rng, cfg.sigma_nv);
                let e_rb = gaussian(&mut rng, cfg.sigma_rb);
                let plain = working_point_estimate(b_nv, cfg.b_0, ((cfg.delta_b + cfg.b_0).magnitude() + e_rb).max(0.0), FieldVector::zeros())?;
                let wp = cfg.policy.field(b_nv, cfg.b_0);
                let rb = ((cfg.delta_b + cfg.b_0 + wp).magnitude() + e_rb).max(0.0);
                let with = working_point_estimate(b_nv, cfg.b_0, rb, wp)?;
                m.push((b_nv.magnitude(), plain.b_hat.magnitude(), with.b_hat.magnitude()));
            }
            Ok(m)
        })
        .collect::<Result<Vec<_>>>()?;
    let all: Vec<(f64, f64, f64)> = sums.into_iter().flatten().collect();
    let pick = |f: fn(&(f64, f64, f64)) -> f64| all.iter().map(f).collect::<Vec<f64>>();
    let (nv, plain, with) = (pick(|t| t.0), pick(|t| t.1), pick(|t| t.2));
    let mse = |v: &[f64]| v.iter().map(|x| (x - truth).powi(2)).sum::<f64>() / v.len() as f64;
    Ok(WorkingPointReport {
        orthogonality: orthogonality(cfg.delta_b, cfg.b_0),
        var_without: crate::stats::variance(&plain),
        var_with: crate::stats::variance(&with),
        mse_without: mse(&plain),
        mse_with: mse(&with),
        var_nv: crate::stats::variance(&nv),
    })
}
