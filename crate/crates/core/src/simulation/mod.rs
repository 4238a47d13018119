//! Monte-Carlo studies of the combined estimator.
//!
//! Every study is a pure function of its config (including the seed). Grid
//! cells and repetitions draw from per-index random streams, so results do
//! not depend on how rayon schedules the work.

mod angular;
mod demo;
mod grid;
mod scan;
mod working_point;

use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::geometry::FieldVector;

pub use angular::{angular_error_map, AngularCell, AngularMap, AngularMapConfig};
pub use demo::{scalar_vs_vector_demo, ScalarDemoConfig, ScalarDemoReport, ScalarDemoRow};
pub use grid::{
    marginal_improvement, orthogonality_map, run_grid_simulation, GridCell, ImprovementMap, MarginalConfig, MarginalPoint,
    MarginalProfile, NoiseModel, OrthogonalityMap, SimConfig, SpectralSensors,
};
pub use scan::{spatial_scan_sim, ScanPosition, SpatialScanConfig, SpatialScanReport};
pub use working_point::{working_point_study, WorkingPointConfig, WorkingPointReport, WpPolicy};

type Vec3 = FieldVector<f64>;

/// `10·log10(reference / improved)`; 0 dB when both are equal (including
/// both zero).
pub fn ratio_db(reference: f64, improved: f64) -> f64 {
    if reference == improved {
        0.0
    } else {
        10.0 * (reference / improved).log10()
    }
}

pub(crate) fn gaussian_vec<R: Rng>(rng: &mut R, sigma: f64) -> Vec3 {
    if sigma == 0.0 {
        return FieldVector::zeros();
    }
    let mut n = || rng.sample::<f64, _>(StandardNormal) * sigma;
    FieldVector::new(n(), n(), n())
}

pub(crate) fn gaussian<R: Rng>(rng: &mut R, sigma: f64) -> f64 {
    if sigma == 0.0 {
        0.0
    } else {
        rng.sample::<f64, _>(StandardNormal) * sigma
    }
}

pub(crate) fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let step = (hi - lo) / (n - 1) as f64;
    (0..n).map(|i| if i + 1 == n { hi } else { lo + step * i as f64 }).collect()
}

/// Writes `key = value` lines.
pub fn write_summary<W: Write>(mut w: W, pairs: &[(String, String)]) -> std::io::Result<()> {
    for (k, v) in pairs {
        writeln!(w, "{k} = {v}")?;
    }
    Ok(())
}

pub(crate) fn fmt_vec(v: Vec3) -> String {
    format!("[{}, {}, {}]", v.bx, v.by, v.bz)
}

pub(crate) fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratio_db_conventions() {
        assert_eq!(ratio_db(0.0, 0.0), 0.0);
        assert!((ratio_db(1000.0, 1.0) - 30.0).abs() < 1e-12);
        assert!((ratio_db(1.0, 10.0) + 10.0).abs() < 1e-12);
    }

    #[test]
    fn linspace_endpoints() {
        let v = linspace(-1.5, 1.5, 61);
        assert_eq!(v.len(), 61);
        assert_eq!(v[0], -1.5);
        assert_eq!(v[60], 1.5);
        assert!(v[30].abs() < 1e-15);
        assert_eq!(linspace(2.0, 3.0, 1), vec![2.0]);
    }
}
