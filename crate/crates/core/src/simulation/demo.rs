use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{fmt_vec, gaussian, gaussian_vec, linspace, Vec3};
use crate::error::{Error, Result};
use crate::estimator::combined_estimate;
use crate::geometry::FieldVector;
use crate::rng::stream_rng;

/// Compares the combined magnitude with the naive scalar approach of
/// subtracting `|B0|` from the Rb reading, for the background and its
/// reverse.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScalarDemoConfig {
    pub b_0: Vec3,
    /// Direction of the applied field.
    pub direction: Vec3,
    pub field_min: f64,
    pub field_max: f64,
    pub n_points: usize,
    pub sigma_nv: f64,
    pub sigma_rb: f64,
    /// Repetitions averaged per point.
    pub n_reps: usize,
    pub seed: u64,
}

impl Default for ScalarDemoConfig {
    fn default() -> Self {
        Self {
            b_0: FieldVector::new(0.004, -0.7454, 0.6451),
            direction: FieldVector::new(0.0, 1.0, 0.0),
            field_min: 0.0,
            field_max: 1.6,
            n_points: 33,
            sigma_nv: 0.26,
            sigma_rb: 790e-6,
            n_reps: 50,
            seed: 0,
        }
    }
}

impl ScalarDemoConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.b_0.is_finite() {
            return Err(Error::invalid("b_0", "must be finite"));
        }
        if self.direction.normalized().is_none() || !self.direction.is_finite() {
            return Err(Error::invalid("direction", "must be a finite non-zero vector"));
        }
        if !(self.field_min.is_finite() && self.field_max.is_finite() && self.field_min < self.field_max) {
            return Err(Error::invalid("field_min", "field_min must be below field_max"));
        }
        if self.n_points < 2 {
            return Err(Error::invalid("n_points", "must be at least 2"));
        }
        if !(self.sigma_nv >= 0.0 && self.sigma_nv.is_finite()) {
            return Err(Error::invalid("sigma_nv", "must be finite and >= 0"));
        }
        if !(self.sigma_rb >= 0.0 && self.sigma_rb.is_finite()) {
            return Err(Error::invalid("sigma_rb", "must be finite and >= 0"));
        }
        if self.n_reps == 0 {
            return Err(Error::invalid("n_reps", "must be at least 1"));
        }
        Ok(())
    }
}

/// Mean magnitudes over the repetitions at one applied field.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalarDemoRow {
    pub field: f64,
    pub true_magnitude: f64,
    pub combined: f64,
    pub combined_reversed: f64,
    /// `b_rb − |B0|`.
    pub naive: f64,
    pub naive_reversed: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalarDemoReport {
    pub rows: Vec<ScalarDemoRow>,
}

impl ScalarDemoReport {
    /// CSV header `field,true_magnitude,combined,combined_reversed,naive,naive_reversed`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["field", "true_magnitude", "combined", "combined_reversed", "naive", "naive_reversed"])?;
        for r in &self.rows {
            out.serialize((r.field, r.true_magnitude, r.combined, r.combined_reversed, r.naive, r.naive_reversed))?;
        }
        out.flush()?;
        Ok(())
    }

    /// Largest gap between the curves for B0 and −B0.
    pub fn max_reversal_shift(&self) -> (f64, f64) {
        self.rows.iter().fold((0.0f64, 0.0f64), |(c, n), r| {
            (c.max((r.combined - r.combined_reversed).abs()), n.max((r.naive - r.naive_reversed).abs()))
        })
    }

    pub fn summary(&self, cfg: &ScalarDemoConfig) -> Vec<(String, String)> {
        let (c, n) = self.max_reversal_shift();
        vec![
            ("b_0".into(), fmt_vec(cfg.b_0)),
            ("direction".into(), fmt_vec(cfg.direction)),
            ("field_min".into(), cfg.field_min.to_string()),
            ("field_max".into(), cfg.field_max.to_string()),
            ("n_points".into(), cfg.n_points.to_string()),
            ("sigma_nv".into(), cfg.sigma_nv.to_string()),
            ("sigma_rb".into(), cfg.sigma_rb.to_string()),
            ("n_reps".into(), cfg.n_reps.to_string()),
            ("seed".into(), cfg.seed.to_string()),
            ("max_combined_reversal_shift".into(), c.to_string()),
            ("max_naive_reversal_shift".into(), n.to_string()),
        ]
    }
}

/// Magnitude curves for the naive scalar subtraction and the combined
/// estimator, each with B0 and with −B0. Both backgrounds see the same noise
/// draws.
pub fn scalar_vs_vector_demo(cfg: &ScalarDemoConfig) -> Result<ScalarDemoReport> {
    cfg.validate()?;
    let u = cfg.direction.normalized().expect("validated");
    let b0_norm = cfg.b_0.magnitude();
    let rows = linspace(cfg.field_min, cfg.field_max, cfg.n_points)
        .into_par_iter()
        .enumerate()
        .map(|(i, t)| {
            let d = u * t;
            let mut rng = stream_rng(cfg.seed, i as u64);
            let mut row = ScalarDemoRow {
                field: t,
                true_magnitude: d.magnitude(),
                combined: 0.0,
                combined_reversed: 0.0,
                naive: 0.0,
                naive_reversed: 0.0,
            };
            for _ in 0..cfg.n_reps {
                let e_nv = gaussian_vec(&mut rng, cfg.sigma_nv);
                let e_rb = gaussian(&mut rng, cfg.sigma_rb);
                for (b0, combined, naive) in [
                    (cfg.b_0, &mut row.combined, &mut row.naive),
                    (-cfg.b_0, &mut row.combined_reversed, &mut row.naive_reversed),
                ] {
                    let b_rb = ((d + b0).magnitude() + e_rb).max(0.0);
                    *naive += b_rb - b0_norm;
                    *combined += combined_estimate(d + e_nv, b0, b_rb)?.b_hat.magnitude();
                }
            }
            let n = cfg.n_reps as f64;
            row.combined /= n;
            row.combined_reversed /= n;
            row.naive /= n;
            row.naive_reversed /= n;
            Ok(row)
        })
        .collect::<Result<_>>()?;
    Ok(ScalarDemoReport { rows })
}
