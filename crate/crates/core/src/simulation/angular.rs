use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{fmt_opt, linspace};
use crate::error::{Error, Result};
use crate::estimator::{angular_uncertainty, AngularMethod, AngularUncertainty};
use crate::geometry::FieldVector;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AngularMapConfig {
    pub grid_min: f64,
    pub grid_max: f64,
    pub grid_points: usize,
    /// Isotropic per-axis field noise, G.
    pub sigma: f64,
    pub method: AngularMethod,
}

impl Default for AngularMapConfig {
    fn default() -> Self {
        Self {
            grid_min: -1.5,
            grid_max: 1.5,
            grid_points: 61,
            sigma: 0.1,
            method: AngularMethod::Linearized,
        }
    }
}

impl AngularMapConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.grid_min.is_finite() && self.grid_max.is_finite() && self.grid_min < self.grid_max) {
            return Err(Error::invalid("grid_min", "grid_min must be below grid_max"));
        }
        if self.grid_points < 2 {
            return Err(Error::invalid("grid_points", "must be at least 2"));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::invalid("sigma", "must be finite and >= 0"));
        }
        if let AngularMethod::MonteCarlo { samples, .. } = self.method {
            if samples < 2 {
                return Err(Error::invalid("samples", "need at least two Monte-Carlo samples"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AngularCell {
    pub bx: f64,
    pub by: f64,
    /// `None` at the origin, where the direction is undefined.
    pub uncertainty: Option<AngularUncertainty<f64>>,
}

impl AngularCell {
    /// `sqrt(dθ² + sin²θ dφ²)`, rad. In the x-y plane θ = π/2.
    pub fn total(&self) -> Option<f64> {
        self.uncertainty.map(|u| u.total(std::f64::consts::FRAC_PI_2))
    }

    /// `20·log10` of [`Self::total`] in radians.
    pub fn total_db(&self) -> Option<f64> {
        self.total().map(|t| 20.0 * t.log10())
    }
}

/// Direction uncertainty of an NV-only reading over the `(bx, by, 0)` grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AngularMap {
    pub axis: Vec<f64>,
    pub cells: Vec<AngularCell>,
}

impl AngularMap {
    pub fn get(&self, ix: usize, iy: usize) -> &AngularCell {
        &self.cells[iy * self.axis.len() + ix]
    }

    /// CSV header `bx,by,d_theta,d_phi,total,total_db`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["bx", "by", "d_theta", "d_phi", "total", "total_db"])?;
        for c in &self.cells {
            out.write_record([
                c.bx.to_string(),
                c.by.to_string(),
                fmt_opt(c.uncertainty.map(|u| u.d_theta)),
                fmt_opt(c.uncertainty.map(|u| u.d_phi)),
                fmt_opt(c.total()),
                fmt_opt(c.total_db()),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn summary(&self, cfg: &AngularMapConfig) -> Vec<(String, String)> {
        let db: Vec<f64> = self.cells.iter().filter_map(|c| c.total_db()).collect();
        vec![
            ("grid_min".into(), cfg.grid_min.to_string()),
            ("grid_max".into(), cfg.grid_max.to_string()),
            ("grid_points".into(), cfg.grid_points.to_string()),
            ("sigma".into(), cfg.sigma.to_string()),
            ("method".into(), format!("{:?}", cfg.method)),
            ("total_db_min".into(), fmt_opt(db.iter().cloned().reduce(f64::min))),
            ("total_db_max".into(), fmt_opt(db.iter().cloned().reduce(f64::max))),
        ]
    }
}

pub fn angular_error_map(cfg: &AngularMapConfig) -> Result<AngularMap> {
    cfg.validate()?;
    let axis = linspace(cfg.grid_min, cfg.grid_max, cfg.grid_points);
    let n = axis.len();
    let sigma = FieldVector::splat(cfg.sigma);
    let cells = (0..n * n)
        .into_par_iter()
        .map(|idx| {
            let (bx, by) = (axis[idx % n], axis[idx / n]);
            let b = FieldVector::new(bx, by, 0.0);
            // Each cell gets its own Monte-Carlo stream.
            let method = match cfg.method {
                AngularMethod::MonteCarlo { samples, seed } => AngularMethod::MonteCarlo {
                    samples,
                    seed: seed.wrapping_add(idx as u64),
                },
                m => m,
            };
            let uncertainty = if b.norm_squared() > 0.0 {
                Some(angular_uncertainty(b, sigma, method)?)
            } else {
                None
            };
            Ok(AngularCell { bx, by, uncertainty })
        })
        .collect::<Result<_>>()?;
    Ok(AngularMap { axis, cells })
}
