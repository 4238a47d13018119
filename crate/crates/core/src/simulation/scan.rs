use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{fmt_vec, gaussian, gaussian_vec, linspace, ratio_db, Vec3};
use crate::error::{Error, Result};
use crate::estimator::{calibrate_background, combined_estimate, CalibrationSet};
use crate::geometry::FieldVector;
use crate::rng::stream_rng;
use crate::stats::{polyfit, polyval};

/// A sensor moved in a straight line away from a small magnet, both sensors
/// reading at each stop.
///
/// The magnet is a point dipole at the origin. The stage line starts at
/// `standoff_mm` along the moment direction, shifted sideways by
/// `lateral_offset_mm`, and runs `stage_range_mm` further along the moment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpatialScanConfig {
    pub n_positions: usize,
    pub stage_range_mm: f64,
    pub standoff_mm: f64,
    pub lateral_offset_mm: f64,
    /// Largest field magnitude along the scan, G; fixes the dipole strength.
    pub peak_field: f64,
    /// Dipole moment direction; defaults to the background direction (or x̂
    /// without background).
    pub moment_direction: Option<Vec3>,
    pub poly_degree: usize,
    pub sigma_nv: f64,
    pub sigma_rb: f64,
    pub b_0: Vec3,
    /// Magnitude of the ±x, ±y, ±z calibration fields, G.
    pub calibration_field: f64,
    /// NV averages per calibration reading; the NV calibration noise is
    /// `sigma_nv / sqrt(calibration_averages)`.
    pub calibration_averages: u32,
    /// Independent repetitions of the whole scan (each with its own
    /// calibration), pooled into the reported RMSEs.
    pub n_scans: usize,
    pub seed: u64,
}

impl Default for SpatialScanConfig {
    fn default() -> Self {
        Self {
            n_positions: 50,
            stage_range_mm: 30.0,
            standoff_mm: 90.0,
            lateral_offset_mm: 0.0,
            peak_field: 3.0,
            moment_direction: None,
            poly_degree: 2,
            sigma_nv: 0.26,
            sigma_rb: 790e-6,
            b_0: FieldVector::new(0.004, -0.7454, 0.6451),
            calibration_field: 1.0,
            calibration_averages: 150,
            n_scans: 50,
            seed: 0,
        }
    }
}

impl SpatialScanConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_positions < 3 {
            return Err(Error::invalid("n_positions", "must be at least 3"));
        }
        if self.poly_degree < 1 {
            return Err(Error::invalid("poly_degree", "must be at least 1"));
        }
        if self.poly_degree + 1 > self.n_positions {
            return Err(Error::invalid("poly_degree", "needs more positions than coefficients"));
        }
        if !(self.stage_range_mm > 0.0 && self.stage_range_mm.is_finite()) {
            return Err(Error::invalid("stage_range_mm", "must be > 0"));
        }
        if !(self.standoff_mm > 0.0 && self.standoff_mm.is_finite()) {
            return Err(Error::invalid("standoff_mm", "must be > 0"));
        }
        if !self.lateral_offset_mm.is_finite() {
            return Err(Error::invalid("lateral_offset_mm", "must be finite"));
        }
        if !(self.peak_field > 0.0 && self.peak_field.is_finite()) {
            return Err(Error::invalid("peak_field", "must be > 0"));
        }
        if let Some(m) = self.moment_direction {
            if m.normalized().is_none() || !m.is_finite() {
                return Err(Error::invalid("moment_direction", "must be a finite non-zero vector"));
            }
        }
        if !(self.sigma_nv >= 0.0 && self.sigma_nv.is_finite()) {
            return Err(Error::invalid("sigma_nv", "must be finite and >= 0"));
        }
        if !(self.sigma_rb >= 0.0 && self.sigma_rb.is_finite()) {
            return Err(Error::invalid("sigma_rb", "must be finite and >= 0"));
        }
        if !self.b_0.is_finite() {
            return Err(Error::invalid("b_0", "must be finite"));
        }
        if !(self.calibration_field > 0.0 && self.calibration_field.is_finite()) {
            return Err(Error::invalid("calibration_field", "must be > 0"));
        }
        if self.calibration_averages == 0 {
            return Err(Error::invalid("calibration_averages", "must be at least 1"));
        }
        if self.n_scans == 0 {
            return Err(Error::invalid("n_scans", "must be at least 1"));
        }
        Ok(())
    }

    pub fn moment(&self) -> Vec3 {
        self.moment_direction
            .or_else(|| self.b_0.normalized())
            .and_then(|m| m.normalized())
            .unwrap_or(FieldVector::new(1.0, 0.0, 0.0))
    }

    /// Stage positions (mm from the start) and the field at each.
    pub fn field_profile(&self) -> (Vec<f64>, Vec<Vec3>) {
        let m = self.moment();
        let helper = if m.bz.abs() < 0.9 { FieldVector::new(0.0, 0.0, 1.0) } else { FieldVector::new(1.0, 0.0, 0.0) };
        let side = m.cross(helper).normalized().expect("helper not parallel to moment");
        let start = m * self.standoff_mm + side * self.lateral_offset_mm;
        let stops = linspace(0.0, self.stage_range_mm, self.n_positions);
        let raw: Vec<Vec3> = stops
            .iter()
            .map(|s| {
                let p = start + m * *s;
                let r = p.magnitude();
                let u = p * (1.0 / r);
                (u * (3.0 * m.dot(u)) - m) * (1.0 / r.powi(3))
            })
            .collect();
        let peak = raw.iter().map(|b| b.magnitude()).fold(0.0, f64::max);
        let scale = self.peak_field / peak;
        (stops, raw.into_iter().map(|b| b * scale).collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanPosition {
    pub position_mm: f64,
    pub true_magnitude: f64,
    /// Rb reading `|δB + B0|`.
    pub rb: f64,
    pub nv: f64,
    pub combined: f64,
    pub nv_fit: f64,
    pub rb_fit: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpatialScanReport {
    /// Readings of the first scan.
    pub positions: Vec<ScanPosition>,
    pub nv_fit_coeffs: Vec<f64>,
    pub rb_fit_coeffs: Vec<f64>,
    /// Pooled RMSE of the NV magnitudes about each scan's NV polynomial fit.
    pub rmse_nv: f64,
    /// Pooled RMSE of the combined magnitudes about the same NV fit.
    pub rmse_combined: f64,
    /// Pooled RMSE of the Rb readings about their own fit.
    pub rmse_rb: f64,
    /// Combined-vs-NV MSE gain, dB.
    pub gain_db: f64,
    /// Per-scan gains, dB.
    pub scan_gains_db: Vec<f64>,
    /// Calibrated background of the first scan.
    pub b_0_hat: Vec3,
}

impl SpatialScanReport {
    pub fn rmse_ratio(&self) -> f64 {
        self.rmse_nv / self.rmse_combined
    }

    /// CSV header `position_mm,true_magnitude,rb,nv,combined,nv_fit,rb_fit`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["position_mm", "true_magnitude", "rb", "nv", "combined", "nv_fit", "rb_fit"])?;
        for p in &self.positions {
            out.serialize((p.position_mm, p.true_magnitude, p.rb, p.nv, p.combined, p.nv_fit, p.rb_fit))?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn summary(&self, cfg: &SpatialScanConfig) -> Vec<(String, String)> {
        vec![
            ("n_positions".into(), cfg.n_positions.to_string()),
            ("stage_range_mm".into(), cfg.stage_range_mm.to_string()),
            ("standoff_mm".into(), cfg.standoff_mm.to_string()),
            ("peak_field".into(), cfg.peak_field.to_string()),
            ("moment_direction".into(), fmt_vec(cfg.moment())),
            ("poly_degree".into(), cfg.poly_degree.to_string()),
            ("sigma_nv".into(), cfg.sigma_nv.to_string()),
            ("sigma_rb".into(), cfg.sigma_rb.to_string()),
            ("b_0".into(), fmt_vec(cfg.b_0)),
            ("n_scans".into(), cfg.n_scans.to_string()),
            ("seed".into(), cfg.seed.to_string()),
            ("b_0_hat".into(), fmt_vec(self.b_0_hat)),
            ("rmse_nv".into(), self.rmse_nv.to_string()),
            ("rmse_combined".into(), self.rmse_combined.to_string()),
            ("rmse_rb".into(), self.rmse_rb.to_string()),
            ("rmse_ratio".into(), self.rmse_ratio().to_string()),
            ("gain_db".into(), self.gain_db.to_string()),
        ]
    }
}

struct ScanOutcome {
    positions: Vec<ScanPosition>,
    nv_coeffs: Vec<f64>,
    rb_coeffs: Vec<f64>,
    sse_nv: f64,
    sse_combined: f64,
    sse_rb: f64,
    b_0_hat: Vec3,
}

fn one_scan(cfg: &SpatialScanConfig, stops: &[f64], fields: &[Vec3], stream: u64) -> Result<ScanOutcome> {
    let mut rng = stream_rng(cfg.seed, stream);
    let sigma_cal = cfg.sigma_nv / (cfg.calibration_averages as f64).sqrt();
    let h = cfg.calibration_field;
    let applied = [
        FieldVector::new(h, 0.0, 0.0),
        FieldVector::new(0.0, h, 0.0),
        FieldVector::new(0.0, 0.0, h),
        FieldVector::new(-h, 0.0, 0.0),
        FieldVector::new(0.0, -h, 0.0),
        FieldVector::new(0.0, 0.0, -h),
    ];
    let pairs = applied
        .iter()
        .map(|v| {
            let nv = *v + gaussian_vec(&mut rng, sigma_cal);
            let rb = ((*v + cfg.b_0).magnitude() + gaussian(&mut rng, cfg.sigma_rb)).max(0.0);
            (nv, rb)
        })
        .collect();
    let b_0_hat = calibrate_background(&CalibrationSet::new(pairs, cfg.calibration_averages)?)?.b_0;

    let mut nv = Vec::with_capacity(fields.len());
    let mut rb = Vec::with_capacity(fields.len());
    let mut combined = Vec::with_capacity(fields.len());
    for d in fields {
        let b_nv = *d + gaussian_vec(&mut rng, cfg.sigma_nv);
        let b_rb = ((*d + cfg.b_0).magnitude() + gaussian(&mut rng, cfg.sigma_rb)).max(0.0);
        let est = combined_estimate(b_nv, b_0_hat, b_rb)?;
        nv.push(b_nv.magnitude());
        rb.push(b_rb);
        combined.push(est.b_hat.magnitude());
    }
    let nv_coeffs = polyfit(stops, &nv, cfg.poly_degree)?;
    let rb_coeffs = polyfit(stops, &rb, cfg.poly_degree)?;
    let mut out = ScanOutcome {
        positions: Vec::with_capacity(fields.len()),
        nv_coeffs,
        rb_coeffs,
        sse_nv: 0.0,
        sse_combined: 0.0,
        sse_rb: 0.0,
        b_0_hat,
    };
    for i in 0..fields.len() {
        let nv_fit = polyval(&out.nv_coeffs, stops[i]);
        let rb_fit = polyval(&out.rb_coeffs, stops[i]);
        out.sse_nv += (nv[i] - nv_fit).powi(2);
        out.sse_combined += (combined[i] - nv_fit).powi(2);
        out.sse_rb += (rb[i] - rb_fit).powi(2);
        out.positions.push(ScanPosition {
            position_mm: stops[i],
            true_magnitude: fields[i].magnitude(),
            rb: rb[i],
            nv: nv[i],
            combined: combined[i],
            nv_fit,
            rb_fit,
        });
    }
    Ok(out)
}

/// Simulated field-distribution scan. Both the NV-only and the combined
/// magnitudes are scored against the polynomial fit of the NV curve, the
/// smooth profile an experimenter would draw through the NV data.
pub fn spatial_scan_sim(cfg: &SpatialScanConfig) -> Result<SpatialScanReport> {
    cfg.validate()?;
    let (stops, fields) = cfg.field_profile();
    let scans: Vec<ScanOutcome> = (0..cfg.n_scans)
        .into_par_iter()
        .map(|k| one_scan(cfg, &stops, &fields, k as u64))
        .collect::<Result<_>>()?;
    let total = (cfg.n_scans * cfg.n_positions) as f64;
    let sse_nv: f64 = scans.iter().map(|s| s.sse_nv).sum();
    let sse_c: f64 = scans.iter().map(|s| s.sse_combined).sum();
    let sse_rb: f64 = scans.iter().map(|s| s.sse_rb).sum();
    let scan_gains_db = scans.iter().map(|s| ratio_db(s.sse_nv, s.sse_combined)).collect();
    let first = scans.into_iter().next().expect("n_scans >= 1");
    Ok(SpatialScanReport {
        positions: first.positions,
        nv_fit_coeffs: first.nv_coeffs,
        rb_fit_coeffs: first.rb_coeffs,
        rmse_nv: (sse_nv / total).sqrt(),
        rmse_combined: (sse_c / total).sqrt(),
        rmse_rb: (sse_rb / total).sqrt(),
        gain_db: ratio_db(sse_nv, sse_c),
        scan_gains_db,
        b_0_hat: first.b_0_hat,
    })
}
