//! Combined NV + Rb field estimator.
//!
//! The NV sensor reports the vector `b_nv` of the applied field δB (the
//! background cancels in its differential scan); the Rb sensor reports the
//! scalar `|δB + B0|`. The estimate moves `b_nv` by the shortest correction
//! that puts `b_nv + b_0` on the sphere of radius `b_rb`, which keeps the NV
//! direction information and inherits the Rb magnitude precision.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::FieldVector;
use crate::linalg::{levenberg_marquardt, LmOptions, Mat3};
use crate::scalar::Real;

/// Output of [`combined_estimate`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CombinedEstimate<T> {
    /// Estimate of δB, `b_nv − correction`.
    pub b_hat: FieldVector<T>,
    pub correction: FieldVector<T>,
    /// Signed component of the correction along the reference direction
    /// (stretch).
    pub radial: T,
    /// Magnitude of the correction orthogonal to the reference (rotation).
    pub tangential: T,
    /// `|cos|` of the angle between the correction line (`b_nv + b_0`) and the
    /// reference. 1 is a pure stretch, 0 a pure rotation. `None` when the
    /// reference vanishes.
    pub orthogonality: Option<T>,
}

/// Closed-form minimal-norm `c` with `|b_nv + b_0 − c| = b_rb`.
///
/// `c` lies on the line through the origin and `b_nv + b_0`; it is
/// anti-parallel to that vector when `b_rb` exceeds `|b_nv + b_0|`.
pub fn correction_vector<T: Real>(b_nv: FieldVector<T>, b_0: FieldVector<T>, b_rb: T) -> Result<FieldVector<T>> {
    if !(b_rb >= T::zero()) || !b_rb.is_finite() {
        return Err(Error::invalid("b_rb", "scalar reading must be finite and non-negative"));
    }
    if !b_nv.is_finite() || !b_0.is_finite() {
        return Err(Error::invalid("b_nv", "field components must be finite"));
    }
    let center = b_nv + b_0;
    let norm = center.magnitude();
    if !(norm > T::zero()) {
        return Err(Error::DegenerateDirection);
    }
    Ok(center * ((norm - b_rb) / norm))
}

/// Combined estimate, decomposed relative to `b_nv`.
pub fn combined_estimate<T: Real>(b_nv: FieldVector<T>, b_0: FieldVector<T>, b_rb: T) -> Result<CombinedEstimate<T>> {
    combined_estimate_with_reference(b_nv, b_0, b_rb, b_nv)
}

/// Combined estimate with the stretch/rotation decomposition taken relative to
/// `reference` (typically the true δB in simulations).
pub fn combined_estimate_with_reference<T: Real>(
    b_nv: FieldVector<T>,
    b_0: FieldVector<T>,
    b_rb: T,
    reference: FieldVector<T>,
) -> Result<CombinedEstimate<T>> {
    let correction = correction_vector(b_nv, b_0, b_rb)?;
    Ok(assemble(b_nv, correction, b_nv + b_0, reference))
}

/// Combined estimate with a known working-point field applied during the Rb
/// reading only: solves `|b_nv + b_0 + b_wp − c| = b_rb_with_wp`.
pub fn working_point_estimate<T: Real>(
    b_nv: FieldVector<T>,
    b_0: FieldVector<T>,
    b_rb_with_wp: T,
    b_wp: FieldVector<T>,
) -> Result<CombinedEstimate<T>> {
    let shifted = b_0 + b_wp;
    let correction = correction_vector(b_nv, shifted, b_rb_with_wp)?;
    Ok(assemble(b_nv, correction, b_nv + shifted, b_nv))
}

fn assemble<T: Real>(
    b_nv: FieldVector<T>,
    correction: FieldVector<T>,
    line: FieldVector<T>,
    reference: FieldVector<T>,
) -> CombinedEstimate<T> {
    let (radial, tangential, orthogonality) = match reference.normalized() {
        Some(u) => {
            let radial = correction.dot(u);
            let tangential = (correction - u * radial).magnitude();
            let cos = line.normalized().map(|l| l.dot(u).abs().min(T::one()));
            (radial, tangential, cos)
        }
        None => (T::zero(), correction.magnitude(), None),
    };
    CombinedEstimate {
        b_hat: b_nv - correction,
        correction,
        radial,
        tangential,
        orthogonality,
    }
}

/// Noiseless `|cos|` between `δB + B0` and δB, the direction the combined
/// estimator corrects along versus the field it is estimating.
pub fn orthogonality<T: Real>(delta_b: FieldVector<T>, b_0: FieldVector<T>) -> Option<T> {
    let u = delta_b.normalized()?;
    let l = (delta_b + b_0).normalized()?;
    Some(l.dot(u).abs().min(T::one()))
}

/// Calibration readings: applied fields measured by the NV sensor together
/// with the Rb scalar reading of `|B0 + b_nv_cal|`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSet<T> {
    pub pairs: Vec<(FieldVector<T>, T)>,
    /// NV averages per calibration reading (the longer integration period).
    pub calibration_averages: u32,
}

impl<T: Real> CalibrationSet<T> {
    pub fn new(pairs: Vec<(FieldVector<T>, T)>, calibration_averages: u32) -> Result<Self> {
        let set = Self {
            pairs,
            calibration_averages,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        if self.pairs.len() < 3 {
            return Err(Error::invalid("pairs", "at least three calibration pairs are required"));
        }
        if self.calibration_averages == 0 {
            return Err(Error::invalid("calibration_averages", "must be at least 1"));
        }
        for (v, m) in &self.pairs {
            if !v.is_finite() || !m.is_finite() || *m < T::zero() {
                return Err(Error::invalid("pairs", "readings must be finite with b_rb >= 0"));
            }
        }
        Ok(())
    }

    /// Noiseless set generated from a known background.
    pub fn synthetic(b_0: FieldVector<T>, applied: &[FieldVector<T>], calibration_averages: u32) -> Result<Self> {
        Self::new(
            applied.iter().map(|v| (*v, (*v + b_0).magnitude())).collect(),
            calibration_averages,
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackgroundCalibration<T> {
    pub b_0: FieldVector<T>,
    /// Euclidean norm of the residual vector at `b_0`.
    pub residual_norm: T,
    pub iterations: usize,
}

/// Solves `|B0 + b_nv_cal,i| = b_rb_cal,i` for B0 by damped Gauss-Newton.
///
/// Starts at the origin; if that run does not converge, restarts from
/// Starts at the origin, then restarts from `−b_rb_cal,i · b̂_nv_cal,i` for
/// each pair, keeping the converged solution with the smallest residual.
/// Stops early once the readings are matched to rounding error.
pub fn calibrate_background<T: Real>(cal: &CalibrationSet<T>) -> Result<BackgroundCalibration<T>> {
    cal.validate()?;
    let opts = LmOptions::default();
    let mut starts = vec![FieldVector::zeros()];
    starts.extend(
        cal.pairs
            .iter()
            .filter_map(|(v, m)| v.normalized().map(|u| -u * *m)),
    );

    let scale = cal.pairs.iter().fold(T::one(), |acc, (v, m)| acc + v.magnitude() + *m);
    let exact = scale * T::epsilon().sqrt() * T::epsilon().sqrt().sqrt();
    let mut best: Option<BackgroundCalibration<T>> = None;
    let mut last_iterations = 0;
    for start in starts {
        let out = levenberg_marquardt(start.to_array().to_vec(), |p| calibration_residuals(cal, p), &opts);
        last_iterations = out.iterations;
        if !out.converged {
            continue;
        }
        let candidate = BackgroundCalibration {
            b_0: FieldVector::new(out.params[0], out.params[1], out.params[2]),
            residual_norm: out.residual_norm(),
            iterations: out.iterations,
        };
        if best.is_none_or(|b| candidate.residual_norm < b.residual_norm) {
            best = Some(candidate);
        }
        if candidate.residual_norm <= exact {
            break;
        }
    }
    let best = best.ok_or(Error::NonConvergence {
        iterations: last_iterations,
    })?;
    let jtj = calibration_normal_matrix(cal, best.b_0);
    let eig = jtj.symmetric_eigenvalues();
    if !(eig[0] > eig[2] * T::lit(1e-12)) {
        return Err(Error::SingularGeometry);
    }
    Ok(best)
}

fn calibration_residuals<T: Real>(cal: &CalibrationSet<T>, p: &[T]) -> (Vec<T>, Vec<Vec<T>>) {
    let b0 = FieldVector::new(p[0], p[1], p[2]);
    cal.pairs
        .iter()
        .map(|(v, m)| {
            let s = b0 + *v;
            let n = s.magnitude();
            let row = s.normalized().unwrap_or_default().to_array().to_vec();
            (n - *m, row)
        })
        .unzip()
}

fn calibration_normal_matrix<T: Real>(cal: &CalibrationSet<T>, b_0: FieldVector<T>) -> Mat3<T> {
    cal.pairs.iter().fold(Mat3::zeros(), |acc, (v, _)| {
        let u = (b_0 + *v).normalized().unwrap_or_default();
        acc + Mat3::outer(u, u)
    })
}

/// First-order covariance of the calibrated B0 for isotropic NV noise
/// `sigma_nv` per lab axis on each calibration reading and Rb noise
/// `sigma_rb`.
pub fn calibration_covariance<T: Real>(cal: &CalibrationSet<T>, b_0: FieldVector<T>, sigma_nv: T, sigma_rb: T) -> Result<Mat3<T>> {
    // Each residual sees u·e_nv + e_rb, i.e. variance σ_nv² + σ_rb².
    let var = sigma_nv * sigma_nv + sigma_rb * sigma_rb;
    let info = calibration_normal_matrix(cal, b_0) * (T::one() / var);
    info.inverse().ok_or(Error::SingularGeometry)
}

/// Angular standard deviations of a field direction, radians. θ is the polar
/// angle from +z, φ the azimuth in the x-y plane.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AngularUncertainty<T> {
    pub d_theta: T,
    pub d_phi: T,
}

impl<T: Real> AngularUncertainty<T> {
    /// Combined direction error `sqrt(dθ² + sin²θ dφ²)` at polar angle `theta`.
    pub fn total(&self, theta: T) -> T {
        (self.d_theta.powi(2) + (theta.sin() * self.d_phi).powi(2)).sqrt()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum AngularMethod {
    Linearized,
    MonteCarlo { samples: usize, seed: u64 },
}

/// Polar and azimuthal angles of `b`.
pub fn field_angles<T: Real>(b: FieldVector<T>) -> (T, T) {
    (b.bx.hypot(b.by).atan2(b.bz), b.by.atan2(b.bx))
}

/// Propagates per-axis Cartesian noise `sigma` into polar/azimuth angle noise.
pub fn angular_uncertainty<T>(b: FieldVector<T>, sigma: FieldVector<T>, method: AngularMethod) -> Result<AngularUncertainty<T>>
where
    T: Real,
    StandardNormal: Distribution<T>,
{
    if !sigma.is_finite() || sigma.bx < T::zero() || sigma.by < T::zero() || sigma.bz < T::zero() {
        return Err(Error::invalid("sigma", "must be finite and non-negative"));
    }
    match method {
        AngularMethod::Linearized => linearized_angles(b, sigma),
        AngularMethod::MonteCarlo { samples, seed } => {
            if samples < 2 {
                return Err(Error::invalid("samples", "need at least two Monte-Carlo samples"));
            }
            Ok(monte_carlo_angles(b, sigma, samples, seed))
        }
    }
}

fn linearized_angles<T: Real>(b: FieldVector<T>, sigma: FieldVector<T>) -> Result<AngularUncertainty<T>> {
    let r2 = b.norm_squared();
    if !(r2 > T::zero()) {
        return Err(Error::ZeroField);
    }
    let pi = T::PI();
    let rho = b.bx.hypot(b.by);
    let (dtheta, dphi) = if rho > T::zero() {
        let dth = FieldVector::new(b.bx * b.bz / (rho * r2), b.by * b.bz / (rho * r2), -rho / r2);
        let dph = FieldVector::new(-b.by / (rho * rho), b.bx / (rho * rho), T::zero());
        let prop = |g: FieldVector<T>| {
            ((g.bx * sigma.bx).powi(2) + (g.by * sigma.by).powi(2) + (g.bz * sigma.bz).powi(2)).sqrt()
        };
        (prop(dth), prop(dph))
    } else {
        // On the z axis θ is a Rayleigh-like modulus; use the azimuth-averaged
        // gradient. φ is undefined there.
        let s = ((sigma.bx.powi(2) + sigma.by.powi(2)) / T::lit(2.0)).sqrt();
        (s / r2.sqrt(), pi)
    };
    Ok(AngularUncertainty {
        d_theta: dtheta.min(pi),
        d_phi: dphi.min(pi),
    })
}

fn monte_carlo_angles<T>(b: FieldVector<T>, sigma: FieldVector<T>, samples: usize, seed: u64) -> AngularUncertainty<T>
where
    T: Real,
    StandardNormal: Distribution<T>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (theta0, phi0) = field_angles(b);
    let (mut st, mut sp) = (T::zero(), T::zero());
    for _ in 0..samples {
        let n = |rng: &mut ChaCha8Rng, s: T| -> T { StandardNormal.sample(rng) * s };
        let e = FieldVector::new(n(&mut rng, sigma.bx), n(&mut rng, sigma.by), n(&mut rng, sigma.bz));
        let (t, p) = field_angles(b + e);
        st += wrap_angle(t - theta0).powi(2);
        sp += wrap_angle(p - phi0).powi(2);
    }
    let count = T::lit(samples as f64);
    AngularUncertainty {
        d_theta: (st / count).sqrt(),
        d_phi: (sp / count).sqrt(),
    }
}

/// Maps an angle difference into `(−π, π]`.
pub fn wrap_angle<T: Real>(a: T) -> T {
    let two_pi = T::PI() + T::PI();
    let mut w = a % two_pi;
    if w > T::PI() {
        w -= two_pi;
    } else if w <= -T::PI() {
        w += two_pi;
    }
    w
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: f64, y: f64, z: f64) -> FieldVector<f64> {
        FieldVector::new(x, y, z)
    }

    #[test]
    fn correction_vanishes_on_sphere() {
        let c = correction_vector(v(1.0, 0.0, 0.0), v(0.0, 0.5, 0.0), 1.25f64.sqrt()).unwrap();
        assert!(c.magnitude() < 1e-15);
    }

    #[test]
    fn collinear_correction() {
        let c = correction_vector(v(1.0, 0.0, 0.0), FieldVector::zeros(), 0.9).unwrap();
        assert!(c.max_abs_diff(v(0.1, 0.0, 0.0)) < 1e-15);
    }

    #[test]
    fn correction_anti_parallel_when_rb_exceeds() {
        let c = correction_vector(v(1.0, 0.0, 0.0), FieldVector::zeros(), 1.5).unwrap();
        assert!(c.max_abs_diff(v(-0.5, 0.0, 0.0)) < 1e-15);
    }

    #[test]
    fn zero_rb_moves_to_origin() {
        let bnv = v(0.3, -0.2, 0.9);
        let b0 = v(0.1, 0.1, 0.1);
        let c = correction_vector(bnv, b0, 0.0).unwrap();
        assert!(c.max_abs_diff(bnv + b0) < 1e-15);
    }

    #[test]
    fn degenerate_direction() {
        let e = correction_vector(v(0.5, 0.0, 0.0), v(-0.5, 0.0, 0.0), 1.0);
        assert_eq!(e, Err(Error::DegenerateDirection));
    }

    #[test]
    fn negative_rb_rejected() {
        assert!(correction_vector(v(1.0, 0.0, 0.0), FieldVector::zeros(), -0.1).is_err());
    }

    #[test]
    fn shielded_collinear_estimate() {
        let e = combined_estimate(v(1.1, 0.0, 0.0), FieldVector::zeros(), 1.0).unwrap();
        assert!(e.b_hat.max_abs_diff(v(1.0, 0.0, 0.0)) < 1e-15);
        assert!((e.radial - 0.1).abs() < 1e-15);
        assert!(e.tangential < 1e-15);
        assert_eq!(e.orthogonality, Some(1.0));
    }

    #[test]
    fn constraint_already_satisfied_returns_nv() {
        let bnv = v(1.0, 0.0, 0.0);
        let e = combined_estimate(bnv, v(0.0, 0.5, 0.0), 1.25f64.sqrt()).unwrap();
        assert!(e.correction.magnitude() < 1e-15);
        assert!(e.b_hat.max_abs_diff(bnv) < 1e-15);
    }

    #[test]
    fn decomposition_relative_to_reference() {
        let bnv = v(1.0, 0.2, 0.0);
        let b0 = v(0.0, 0.6, 0.0);
        let e = combined_estimate_with_reference(bnv, b0, 0.8, v(1.0, 0.0, 0.0)).unwrap();
        let c = e.correction;
        assert!((e.radial - c.bx).abs() < 1e-15);
        assert!((e.tangential - c.by.hypot(c.bz)).abs() < 1e-15);
        let expect = (bnv + b0).normalized().unwrap().bx.abs();
        assert!((e.orthogonality.unwrap() - expect).abs() < 1e-15);
    }

    #[test]
    fn working_point_without_field_matches_plain() {
        let bnv = v(0.4, -0.3, 0.2);
        let b0 = v(0.004, -0.7454, 0.6451);
        let plain = combined_estimate(bnv, b0, 1.2).unwrap();
        let wp = working_point_estimate(bnv, b0, 1.2, FieldVector::zeros()).unwrap();
        assert_eq!(plain, wp);
    }

    #[test]
    fn working_point_sphere_constraint() {
        let bnv = v(0.4, -0.3, 0.2);
        let b0 = v(0.5, 0.0, 0.0);
        let wp = v(0.0, 0.0, 2.0);
        let e = working_point_estimate(bnv, b0, 2.3, wp).unwrap();
        assert!(((e.b_hat + b0 + wp).magnitude() - 2.3).abs() < 1e-12);
    }

    #[test]
    fn large_working_point_along_nv_removes_rotation() {
        // The correction line b_nv + b_0 + b_wp turns towards b_nv as the
        // working point along b_nv grows, so the rotation share vanishes.
        let bnv = v(0.3, 0.4, 0.0);
        let b0 = v(0.5, 0.0, 0.0);
        let dir = bnv.normalized().unwrap();
        let mut last = f64::INFINITY;
        for k in [0.0, 2.0, 20.0, 200.0] {
            let wp = dir * k;
            let rb = (bnv + b0 + wp).magnitude() - 0.01;
            let e = working_point_estimate(bnv, b0, rb, wp).unwrap();
            let share = e.tangential / e.correction.magnitude();
            assert!(share < last);
            last = share;
        }
        assert!(last < 0.01);
    }

    #[test]
    fn orthogonality_helper() {
        assert_eq!(orthogonality(v(1.0, 0.0, 0.0), FieldVector::zeros()), Some(1.0));
        assert_eq!(orthogonality(FieldVector::zeros(), v(1.0, 0.0, 0.0)), None);
        assert_eq!(orthogonality(v(-1.0, 0.0, 0.0), v(1.0, 0.0, 0.0)), None);
        let o = orthogonality(v(0.0, 1e-6, 0.0), v(0.5, 0.0, 0.0)).unwrap();
        assert!(o < 1e-5);
    }

    #[test]
    fn calibration_recovers_reference_background() {
        let b0 = v(0.004, -0.7454, 0.6451);
        let applied = [v(1.0, 0.0, 0.0), v(0.0, 1.0, 0.0), v(0.0, 0.0, 1.0)];
        let cal = CalibrationSet::synthetic(b0, &applied, 150).unwrap();
        let out = calibrate_background(&cal).unwrap();
        assert!(out.b_0.max_abs_diff(b0) < 1e-8, "{:?}", out);
        assert!(out.residual_norm < 1e-9);
    }

    #[test]
    fn calibration_of_zero_background() {
        let applied = [v(1.0, 0.2, 0.0), v(0.0, 1.0, 0.3), v(0.1, 0.0, 1.0)];
        let cal = CalibrationSet::synthetic(FieldVector::zeros(), &applied, 1).unwrap();
        let out = calibrate_background(&cal).unwrap();
        assert!(out.b_0.magnitude() < 1e-10);
    }

    #[test]
    fn calibration_needs_three_pairs() {
        let e = CalibrationSet::new(vec![(v(1.0, 0.0, 0.0), 1.0), (v(0.0, 1.0, 0.0), 1.0)], 1);
        assert!(matches!(e, Err(Error::InvalidParameter { name: "pairs", .. })));
    }

    #[test]
    fn collinear_calibration_is_singular() {
        let b0 = v(0.1, 0.2, 0.3);
        let applied = [v(1.0, 0.0, 0.0), v(2.0, 0.0, 0.0), v(3.0, 0.0, 0.0)];
        let cal = CalibrationSet::synthetic(b0, &applied, 1).unwrap();
        assert!(matches!(
            calibrate_background(&cal),
            Err(Error::SingularGeometry) | Err(Error::NonConvergence { .. })
        ));
    }

    #[test]
    fn angular_zero_noise() {
        let a = angular_uncertainty(v(1.0, 0.0, 0.0), FieldVector::zeros(), AngularMethod::Linearized).unwrap();
        assert_eq!((a.d_theta, a.d_phi), (0.0, 0.0));
    }

    #[test]
    fn angular_zero_field_is_error() {
        let e = angular_uncertainty(FieldVector::<f64>::zeros(), FieldVector::splat(0.1), AngularMethod::Linearized);
        assert_eq!(e, Err(Error::ZeroField));
    }

    #[test]
    fn angular_scales_inversely_with_field() {
        let s = FieldVector::splat(0.01);
        let small = angular_uncertainty(v(0.3, 0.4, 0.0), s, AngularMethod::Linearized).unwrap();
        let big = angular_uncertainty(v(3.0, 4.0, 0.0), s, AngularMethod::Linearized).unwrap();
        assert!((small.d_phi / big.d_phi - 10.0).abs() < 1e-12);
        assert!((small.d_theta / big.d_theta - 10.0).abs() < 1e-12);
    }

    #[test]
    fn angular_on_z_axis_caps_phi() {
        let a = angular_uncertainty(v(0.0, 0.0, 1.0), FieldVector::splat(0.1), AngularMethod::Linearized).unwrap();
        assert!((a.d_phi - std::f64::consts::PI).abs() < 1e-15);
        assert!((a.d_theta - 0.1).abs() < 1e-12);
    }

    #[test]
    fn wrap_angle_range() {
        use std::f64::consts::PI;
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
        assert!((wrap_angle(-3.0 * PI / 2.0) - PI / 2.0).abs() < 1e-12);
        assert_eq!(wrap_angle(PI), PI);
        assert_eq!(wrap_angle(0.25), 0.25);
    }

    #[test]
    fn f32_estimate() {
        let e = combined_estimate(FieldVector::new(1.1f32, 0.0, 0.0), FieldVector::zeros(), 1.0).unwrap();
        assert!((e.b_hat.bx - 1.0).abs() < 1e-6);
    }
}
