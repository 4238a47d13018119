//! Synthetic sensor traces and their fits.
//!
//! NV side: a CW-ODMR scan with one Lorentzian dip per crystal axis, fitted
//! jointly; two scans (with and without δB) are differenced so that the bias
//! and background fields cancel. Rb side: the lock-in X/Y response of a
//! Bell–Bloom resonance swept in modulation frequency; the field follows from
//! the zero crossing of Y.
//!
//! Gyromagnetic ratios are kept in ordinary-frequency units (MHz/G for NV,
//! kHz/G for Rb), so a Larmor shift is simply `γ · B` with no factor of 2π.

use std::io::Write;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Axis, AxisProjection, AxisSet, FieldVector, OrientationBasis, Propagation};
use crate::linalg::{invert_dense, levenberg_marquardt, LmOptions};
use crate::rng::stream_rng;

type Vec3 = FieldVector<f64>;

/// Largest slope of a Lorentzian of unit depth and unit FWHM,
/// `9 / (4√3)`, attained at `±1/(2√3)` FWHM from the centre.
pub const LORENTZIAN_MAX_SLOPE: f64 = 1.299_038_105_676_658;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GyromagneticRatio(f64);

impl GyromagneticRatio {
    /// NV ground-state ratio in MHz/G.
    pub const NV: Self = Self(2.857);
    /// ⁸⁷Rb ground-state (F = 2) ratio in kHz/G.
    pub const RB87: Self = Self(699.58);

    pub fn new(value: f64) -> Result<Self> {
        if value > 0.0 && value.is_finite() {
            Ok(Self(value))
        } else {
            Err(Error::invalid("gamma", "gyromagnetic ratio must be finite and > 0"))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Frequency shift of a field projection: `γ · b`, in the units of `γ`.
pub fn larmor_shift(b_axis: f64, gamma: GyromagneticRatio) -> f64 {
    gamma.0 * b_axis
}

// ---------------------------------------------------------------------------
// ODMR
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OdmrParams {
    /// Zero-field line centre, MHz.
    pub center_frequency: f64,
    /// Fractional dip depth per axis.
    pub contrast: f64,
    /// Lorentzian FWHM, MHz.
    pub linewidth: f64,
    pub n_freqs: usize,
    /// Full scan width, MHz, centred on `center_frequency`.
    pub scan_span: f64,
    /// Exposure per frequency point, ms. Bookkeeping only: `pl_noise` is the
    /// single-exposure noise at this exposure.
    pub exposure_time: f64,
    /// Standard deviation of one normalized PL exposure.
    pub pl_noise: f64,
    /// Repeated sweeps averaged per spectrum.
    pub n_averages: u32,
}

impl Default for OdmrParams {
    /// 60 points over 200 MHz; contrast chosen so the per-dip maximum slope is
    /// 1.4e-3 /MHz at an 8 MHz linewidth, and a single-exposure noise that
    /// averages down to 0.6e-3 over 15 sweeps.
    fn default() -> Self {
        let linewidth = 8.0;
        Self {
            center_frequency: 2870.0,
            contrast: 1.4e-3 * linewidth / LORENTZIAN_MAX_SLOPE,
            linewidth,
            n_freqs: 60,
            scan_span: 200.0,
            exposure_time: 0.5,
            pl_noise: 0.6e-3 * 15f64.sqrt(),
            n_averages: 15,
        }
    }
}

impl OdmrParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.contrast > 0.0 && self.contrast < 1.0) {
            return Err(Error::invalid("contrast", "must lie in (0, 1)"));
        }
        if !(self.linewidth > 0.0 && self.linewidth.is_finite()) {
            return Err(Error::invalid("linewidth", "must be > 0"));
        }
        if self.n_freqs < 3 {
            return Err(Error::invalid("n_freqs", "must be at least 3"));
        }
        if !(self.scan_span > 0.0 && self.scan_span.is_finite()) {
            return Err(Error::invalid("scan_span", "must be > 0"));
        }
        if !(self.pl_noise >= 0.0 && self.pl_noise.is_finite()) {
            return Err(Error::invalid("pl_noise", "must be finite and >= 0"));
        }
        if !(self.exposure_time > 0.0) {
            return Err(Error::invalid("exposure_time", "must be > 0"));
        }
        if self.n_averages == 0 {
            return Err(Error::invalid("n_averages", "must be at least 1"));
        }
        if !self.center_frequency.is_finite() {
            return Err(Error::invalid("center_frequency", "must be finite"));
        }
        Ok(())
    }

    /// Per-point noise of an averaged spectrum.
    pub fn effective_noise(&self) -> f64 {
        self.pl_noise / (self.n_averages as f64).sqrt()
    }

    /// Total acquisition time of one spectrum, ms.
    pub fn acquisition_time(&self) -> f64 {
        self.exposure_time * self.n_freqs as f64 * self.n_averages as f64
    }

    pub fn frequencies(&self) -> Vec<f64> {
        let lo = self.center_frequency - 0.5 * self.scan_span;
        let step = self.scan_span / (self.n_freqs - 1) as f64;
        (0..self.n_freqs).map(|i| lo + step * i as f64).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OdmrSpectrum {
    pub freqs: Vec<f64>,
    pub pl: Vec<f64>,
    pub pl_sigma: Vec<f64>,
}

fn lorentzian(f: f64, f0: f64, fwhm: f64) -> f64 {
    let x = 2.0 * (f - f0) / fwhm;
    1.0 / (1.0 + x * x)
}

fn dip_frequencies(b_total: Vec3, basis: &OrientationBasis<f64>, params: &OdmrParams, gamma: GyromagneticRatio) -> [f64; 4] {
    basis
        .project_field(b_total)
        .to_array()
        .map(|b| params.center_frequency + larmor_shift(b, gamma))
}

impl OdmrSpectrum {
    /// Noise-free expectation, carrying the noise level in `pl_sigma`.
    pub fn expected(b_total: Vec3, basis: &OrientationBasis<f64>, params: &OdmrParams, gamma: GyromagneticRatio) -> Result<Self> {
        params.validate()?;
        let dips = dip_frequencies(b_total, basis, params, gamma);
        let freqs = params.frequencies();
        let pl = freqs
            .iter()
            .map(|f| 1.0 - dips.iter().map(|d| params.contrast * lorentzian(*f, *d, params.linewidth)).sum::<f64>())
            .collect();
        let sigma = params.effective_noise();
        Ok(Self {
            pl_sigma: vec![sigma; freqs.len()],
            freqs,
            pl,
        })
    }

    pub fn len(&self) -> usize {
        self.freqs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.freqs.is_empty()
    }

    fn validate(&self) -> Result<()> {
        if self.pl.len() != self.freqs.len() || self.pl_sigma.len() != self.freqs.len() {
            return Err(Error::invalid("spectrum", "array lengths differ"));
        }
        if self.pl_sigma.iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::invalid("pl_sigma", "must be >= 0"));
        }
        Ok(())
    }

    /// CSV with header `freq_mhz,pl,pl_sigma`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["freq_mhz", "pl", "pl_sigma"])?;
        for i in 0..self.len() {
            out.serialize((self.freqs[i], self.pl[i], self.pl_sigma[i]))?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Synthetic ODMR spectrum of `b_total` (bias + background + signal).
/// Deterministic in `rng_seed`.
pub fn synth_odmr(
    b_total: Vec3,
    basis: &OrientationBasis<f64>,
    params: &OdmrParams,
    gamma: GyromagneticRatio,
    rng_seed: u64,
) -> Result<OdmrSpectrum> {
    let mut s = OdmrSpectrum::expected(b_total, basis, params, gamma)?;
    let sigma = params.effective_noise();
    if sigma > 0.0 {
        let mut rng = stream_rng(rng_seed, 0);
        let noise = Normal::new(0.0, sigma).expect("finite sigma");
        for p in &mut s.pl {
            *p += noise.sample(&mut rng);
        }
    }
    Ok(s)
}

/// Fitted dips, ordered by increasing frequency.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OdmrFit {
    pub peak_freqs: Vec<f64>,
    pub contrasts: Vec<f64>,
    pub linewidths: Vec<f64>,
    /// Low-frequency flank position of maximum slope, MHz.
    pub f_max: Vec<f64>,
    /// Maximum absolute slope of each fitted dip, 1/MHz.
    pub m_nv: Vec<f64>,
    /// Single-point sensitivity `ΔPL / (γ m_NV)`, G.
    pub sigma_b_axis: Vec<f64>,
    /// Least-squares standard error of each centre, MHz.
    pub center_stderr: Vec<f64>,
    pub iterations: usize,
}

impl OdmrFit {
    /// Standard error of each centre converted to field, G.
    pub fn stderr_b_axis(&self, gamma: GyromagneticRatio) -> Vec<f64> {
        self.center_stderr.iter().map(|s| s / gamma.0).collect()
    }
}

/// Fits the four-dip spectrum of a single NV ensemble.
pub fn fit_odmr(spectrum: &OdmrSpectrum, params: &OdmrParams, gamma: GyromagneticRatio) -> Result<OdmrFit> {
    fit_odmr_dips(spectrum, params, gamma, 4)
}

/// Fits `n_dips` Lorentzian dips on a unit baseline.
pub fn fit_odmr_dips(spectrum: &OdmrSpectrum, params: &OdmrParams, gamma: GyromagneticRatio, n_dips: usize) -> Result<OdmrFit> {
    spectrum.validate()?;
    params.validate()?;
    let guesses = find_dips(spectrum, params.linewidth);
    if guesses.len() < n_dips {
        return Err(Error::UnresolvedPeaks {
            found: guesses.len(),
            needed: n_dips,
        });
    }
    let mut starts: Vec<(f64, f64)> = guesses.into_iter().take(n_dips).collect();
    starts.sort_by(|a, b| a.0.total_cmp(&b.0));

    let weighted = spectrum.pl_sigma.iter().all(|s| *s > 0.0);
    let weights: Vec<f64> = if weighted {
        spectrum.pl_sigma.iter().map(|s| 1.0 / s).collect()
    } else {
        vec![1.0; spectrum.len()]
    };

    let mut p0 = Vec::with_capacity(3 * n_dips);
    for (f, depth) in &starts {
        p0.extend([*f, depth.max(1e-6), params.linewidth]);
    }
    let opts = LmOptions {
        scaled_damping: true,
        step_tol: 0.0,
        rel_step_tol: 1e-13,
        ..LmOptions::default()
    };
    let freqs = &spectrum.freqs;
    let pl = &spectrum.pl;
    let out = levenberg_marquardt(
        p0,
        |p: &[f64]| {
            let mut r = Vec::with_capacity(freqs.len());
            let mut jac = Vec::with_capacity(freqs.len());
            for (i, f) in freqs.iter().enumerate() {
                let mut model = 1.0;
                let mut row = vec![0.0; p.len()];
                for k in 0..n_dips {
                    let (f0, c, g) = (p[3 * k], p[3 * k + 1], p[3 * k + 2]);
                    let x = 2.0 * (f - f0) / g;
                    let l = 1.0 / (1.0 + x * x);
                    model -= c * l;
                    row[3 * k] = -4.0 * c * x * l * l / g * weights[i];
                    row[3 * k + 1] = -l * weights[i];
                    row[3 * k + 2] = -2.0 * c * x * x * l * l / g * weights[i];
                }
                r.push((model - pl[i]) * weights[i]);
                jac.push(row);
            }
            (r, jac)
        },
        &opts,
    );
    if !out.converged || out.params.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonConvergence {
            iterations: out.iterations,
        });
    }

    let cov = invert_dense(&out.jtj).ok_or(Error::RankDeficient)?;
    let dof = spectrum.len().saturating_sub(3 * n_dips).max(1) as f64;
    let scale = if weighted {
        1.0
    } else {
        out.residuals.iter().map(|r| r * r).sum::<f64>() / dof
    };

    let mut dips: Vec<(f64, f64, f64, f64)> = (0..n_dips)
        .map(|k| {
            let var = cov[3 * k][3 * k] * scale;
            (out.params[3 * k], out.params[3 * k + 1], out.params[3 * k + 2].abs(), var.max(0.0).sqrt())
        })
        .collect();
    dips.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut fit = OdmrFit {
        peak_freqs: Vec::with_capacity(n_dips),
        contrasts: Vec::with_capacity(n_dips),
        linewidths: Vec::with_capacity(n_dips),
        f_max: Vec::with_capacity(n_dips),
        m_nv: Vec::with_capacity(n_dips),
        sigma_b_axis: Vec::with_capacity(n_dips),
        center_stderr: Vec::with_capacity(n_dips),
        iterations: out.iterations,
    };
    for (f0, c, g, se) in dips {
        let f_max = f0 - g / (2.0 * 3f64.sqrt());
        let m = LORENTZIAN_MAX_SLOPE * c.abs() / g;
        let delta_pl = spectrum.pl_sigma[nearest_index(freqs, f_max)];
        fit.peak_freqs.push(f0);
        fit.contrasts.push(c);
        fit.linewidths.push(g);
        fit.f_max.push(f_max);
        fit.m_nv.push(m);
        fit.sigma_b_axis.push(delta_pl / (gamma.0 * m));
        fit.center_stderr.push(se);
    }
    Ok(fit)
}

fn nearest_index(xs: &[f64], x: f64) -> usize {
    xs.iter()
        .enumerate()
        .min_by(|a, b| (a.1 - x).abs().total_cmp(&(b.1 - x).abs()))
        .map(|(i, _)| i)
        .unwrap_or(0)
}

/// Candidate dips as `(frequency, depth)`, deepest first. Local depth maxima
/// closer than one linewidth are merged.
fn find_dips(s: &OdmrSpectrum, linewidth: f64) -> Vec<(f64, f64)> {
    let n = s.len();
    let depth: Vec<f64> = s.pl.iter().map(|p| 1.0 - p).collect();
    let max_depth = depth.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(max_depth > 0.0) {
        return Vec::new();
    }
    let noise = crate::stats::median(&s.pl_sigma);
    let threshold = (0.25 * max_depth).max(4.0 * noise);
    let mut cands: Vec<(f64, f64)> = (0..n)
        .filter(|&i| {
            let left = if i > 0 { depth[i - 1] } else { f64::NEG_INFINITY };
            let right = if i + 1 < n { depth[i + 1] } else { f64::NEG_INFINITY };
            depth[i] > threshold && depth[i] >= left && depth[i] > right
        })
        .map(|i| (s.freqs[i], depth[i]))
        .collect();
    cands.sort_by(|a, b| b.1.total_cmp(&a.1));
    let mut kept: Vec<(f64, f64)> = Vec::new();
    for c in cands {
        if kept.iter().all(|k| (k.0 - c.0).abs() > linewidth) {
            kept.push(c);
        }
    }
    kept
}

/// Which NV axes feed the vector reconstruction.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AxisSelection {
    /// Least squares over all four axes.
    #[default]
    All,
    /// The three axes with the smallest per-axis uncertainty.
    BestThree,
    Fixed(AxisSet),
}

/// NV sensor model: ODMR settings, bias field and reconstruction options.
#[derive(Clone, Debug, PartialEq)]
pub struct NvSensor {
    pub basis: OrientationBasis<f64>,
    pub params: OdmrParams,
    pub gamma: GyromagneticRatio,
    /// Static field separating the four dips. It also fixes the
    /// dip-to-axis assignment, so it should dominate δB + B0.
    pub b_bias: Vec3,
    pub selection: AxisSelection,
    pub propagation: Propagation,
}

impl Default for NvSensor {
    fn default() -> Self {
        Self {
            basis: OrientationBasis::tetrahedral(),
            params: OdmrParams::default(),
            gamma: GyromagneticRatio::NV,
            b_bias: FieldVector::new(20.0, 8.0, 3.0),
            selection: AxisSelection::All,
            propagation: Propagation::Quadrature,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NvReading {
    /// Reconstructed δB, G.
    pub b_nv: Vec3,
    /// Per-lab-axis uncertainty propagated from the differential per-axis
    /// sensitivities.
    pub sigma_nv: Vec3,
    /// Differential per-NV-axis sensitivity (two scans in quadrature), G.
    pub sigma_axis: [f64; 4],
    /// Differential per-NV-axis least-squares standard error, G.
    pub stderr_axis: [f64; 4],
    pub axes_used: AxisSet,
}

impl NvSensor {
    /// Two scans, with and without δB, differenced axis by axis. B0 and the
    /// bias appear in both scans and cancel.
    pub fn measure(&self, delta_b: Vec3, b_0: Vec3, rng_seed: u64) -> Result<NvReading> {
        let on = synth_odmr(self.b_bias + delta_b + b_0, &self.basis, &self.params, self.gamma, rng_seed)?;
        let off = synth_odmr(self.b_bias + b_0, &self.basis, &self.params, self.gamma, rng_seed ^ 0x9e37_79b9_7f4a_7c15)?;
        let fit_on = fit_odmr(&on, &self.params, self.gamma)?;
        let fit_off = fit_odmr(&off, &self.params, self.gamma)?;
        self.combine(&fit_on, &fit_off)
    }

    /// Axis index for each dip in frequency order, from the bias projections.
    pub fn dip_axes(&self) -> [Axis; 4] {
        let proj = self.basis.project_field(self.b_bias).to_array();
        let mut order = Axis::ALL;
        let sign = self.gamma.0.signum();
        order.sort_by(|a, b| (sign * proj[a.index()]).total_cmp(&(sign * proj[b.index()])));
        order
    }

    /// Differences two fits into a δB reading.
    pub fn combine(&self, fit_on: &OdmrFit, fit_off: &OdmrFit) -> Result<NvReading> {
        let order = self.dip_axes();
        let mut shift = [0.0; 4];
        let mut sigma = [0.0; 4];
        let mut stderr = [0.0; 4];
        let se_on = fit_on.stderr_b_axis(self.gamma);
        let se_off = fit_off.stderr_b_axis(self.gamma);
        for (k, axis) in order.iter().enumerate() {
            let i = axis.index();
            shift[i] = (fit_on.peak_freqs[k] - fit_off.peak_freqs[k]) / self.gamma.0;
            sigma[i] = fit_on.sigma_b_axis[k].hypot(fit_off.sigma_b_axis[k]);
            stderr[i] = se_on[k].hypot(se_off[k]);
        }
        let axes_used = match self.selection {
            AxisSelection::All => AxisSet::ALL,
            AxisSelection::BestThree => AxisSet::best_three(sigma),
            AxisSelection::Fixed(s) => s,
        };
        let b_nv = self.basis.recover_field(AxisProjection::from_array(shift), axes_used)?;
        let sigma_nv = self.basis.propagate_axis_uncertainty(sigma, axes_used, self.propagation)?;
        Ok(NvReading {
            b_nv,
            sigma_nv,
            sigma_axis: sigma,
            stderr_axis: stderr,
            axes_used,
        })
    }
}

/// Differential NV measurement of δB with all four axes and quadrature
/// propagation. See [`NvSensor`] for other reconstruction options.
#[allow(clippy::too_many_arguments)]
pub fn nv_measure(
    delta_b: Vec3,
    b_bias: Vec3,
    b_0: Vec3,
    basis: &OrientationBasis<f64>,
    params: &OdmrParams,
    gamma: GyromagneticRatio,
    rng_seed: u64,
) -> Result<(Vec3, Vec3)> {
    let sensor = NvSensor {
        basis: basis.clone(),
        params: *params,
        gamma,
        b_bias,
        ..NvSensor::default()
    };
    let r = sensor.measure(delta_b, b_0, rng_seed)?;
    Ok((r.b_nv, r.sigma_nv))
}

// ---------------------------------------------------------------------------
// Lock-in (Rb)
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LiaParams {
    /// Modulation chirp start, kHz.
    pub chirp_start: f64,
    /// Modulation chirp end, kHz.
    pub chirp_end: f64,
    pub n_points: usize,
    /// Resonance FWHM, kHz.
    pub linewidth: f64,
    /// Peak in-phase amplitude, V.
    pub amplitude: f64,
    /// Noise on each quadrature, V.
    pub y_noise: f64,
}

impl Default for LiaParams {
    /// Gives a Y slope of 1e-6 V/kHz at resonance.
    fn default() -> Self {
        Self {
            chirp_start: 300.0,
            chirp_end: 1500.0,
            n_points: 4000,
            linewidth: 200.0,
            amplitude: 1e-4,
            y_noise: 5.5e-6,
        }
    }
}

impl LiaParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.chirp_start.is_finite() && self.chirp_end.is_finite() && self.chirp_start < self.chirp_end) {
            return Err(Error::invalid("chirp_span", "start must be below end"));
        }
        if self.n_points < 8 {
            return Err(Error::invalid("n_points", "must be at least 8"));
        }
        if !(self.linewidth > 0.0 && self.linewidth.is_finite()) {
            return Err(Error::invalid("linewidth", "must be > 0"));
        }
        if !(self.amplitude > 0.0 && self.amplitude.is_finite()) {
            return Err(Error::invalid("amplitude", "must be > 0"));
        }
        if !(self.y_noise >= 0.0 && self.y_noise.is_finite()) {
            return Err(Error::invalid("y_noise", "must be finite and >= 0"));
        }
        Ok(())
    }

    /// Slope of the noiseless Y quadrature at resonance, V/kHz.
    pub fn center_slope(&self) -> f64 {
        2.0 * self.amplitude / self.linewidth
    }

    pub fn frequencies(&self) -> Vec<f64> {
        let step = (self.chirp_end - self.chirp_start) / (self.n_points - 1) as f64;
        (0..self.n_points).map(|i| self.chirp_start + step * i as f64).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LiaSignal {
    pub mod_freqs: Vec<f64>,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub r: Vec<f64>,
}

impl LiaSignal {
    pub fn len(&self) -> usize {
        self.mod_freqs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mod_freqs.is_empty()
    }

    /// CSV with header `freq_khz,x,y,r`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["freq_khz", "x", "y", "r"])?;
        for i in 0..self.len() {
            out.serialize((self.mod_freqs[i], self.x[i], self.y[i], self.r[i]))?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Synthetic lock-in trace for a field of magnitude `b_scalar`.
pub fn synth_lia(b_scalar: f64, gamma_rb: GyromagneticRatio, params: &LiaParams, rng_seed: u64) -> Result<LiaSignal> {
    params.validate()?;
    let f_res = larmor_shift(b_scalar, gamma_rb);
    if !(f_res >= params.chirp_start && f_res <= params.chirp_end) {
        return Err(Error::ResonanceOutOfRange {
            f_res_khz: f_res,
            start_khz: params.chirp_start,
            end_khz: params.chirp_end,
        });
    }
    let mod_freqs = params.frequencies();
    let mut rng = stream_rng(rng_seed, 1);
    let noise = (params.y_noise > 0.0).then(|| Normal::new(0.0, params.y_noise).expect("finite sigma"));
    let n = mod_freqs.len();
    let (mut x, mut y, mut r) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for f in &mod_freqs {
        let u = 2.0 * (f - f_res) / params.linewidth;
        let d = 1.0 + u * u;
        let (mut xi, mut yi) = (params.amplitude / d, params.amplitude * u / d);
        if let Some(noise) = &noise {
            xi += noise.sample(&mut rng);
            yi += noise.sample(&mut rng);
        }
        x.push(xi);
        y.push(yi);
        r.push(xi.hypot(yi));
    }
    Ok(LiaSignal { mod_freqs, x, y, r })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LiaFit {
    /// Field magnitude from the refined zero crossing, G.
    pub b_rb: f64,
    /// Sensitivity `ΔY / (γ m_Rb)`, G.
    pub sigma_rb: f64,
    /// Standard error of the zero crossing converted to field, G.
    pub stderr_b: f64,
    /// Fitted Y slope over the half-maximum window, V/kHz.
    pub slope: f64,
    /// RMSE of that fit, V.
    pub delta_y: f64,
    /// Zero crossing, kHz.
    pub f_res: f64,
    pub window_khz: (f64, f64),
    pub window_points: usize,
}

/// Locates the Y zero crossing and converts it to a field.
///
/// A straight line is fitted to Y over the contiguous region around the
/// crossing where |Y| stays below half its peak; its slope and RMSE give the
/// sensitivity. The crossing itself is refined by a tent-weighted line fit
/// centred on the current estimate, which cancels the cubic term of the
/// dispersive shape when the window lands asymmetrically on the sample grid.
pub fn fit_lia(signal: &LiaSignal, gamma_rb: GyromagneticRatio) -> Result<LiaFit> {
    let n = signal.len();
    if n < 8 || signal.y.len() != n {
        return Err(Error::invalid("signal", "need at least 8 equal-length samples"));
    }
    let f = &signal.mod_freqs;
    let y = &signal.y;
    let ys = moving_average(y, (n / 200).max(1));

    let (i_min, i_max) = extremes(&ys);
    if !(ys[i_min] < 0.0 && ys[i_max] > 0.0) {
        return Err(Error::NoResonance);
    }
    let (lo, hi) = (i_min.min(i_max), i_min.max(i_max));
    let mid = 0.5 * (lo + hi) as f64;
    let crossing = (lo..hi)
        .filter(|&i| ys[i].signum() != ys[i + 1].signum())
        .min_by(|a, b| (*a as f64 - mid).abs().total_cmp(&(*b as f64 - mid).abs()))
        .ok_or(Error::NoResonance)?;

    let half = 0.25 * (ys[i_max] - ys[i_min]);
    let mut a = crossing;
    while a > lo && ys[a - 1].abs() <= half {
        a -= 1;
    }
    let mut b = crossing + 1;
    while b < hi && ys[b + 1].abs() <= half {
        b += 1;
    }
    let window = a..=b;
    let fw = &f[window.clone()];
    let yw = &y[window.clone()];
    let coarse = crate::stats::line_fit(fw, yw).ok_or(Error::NoResonance)?;
    if !(coarse.slope != 0.0 && coarse.slope.is_finite()) {
        return Err(Error::NoResonance);
    }

    let half_width = 0.5 * (f[b] - f[a]).max(f[1] - f[0]);
    let mut f_res = coarse.root();
    let mut weights = vec![0.0; n];
    let mut refined = coarse;
    for _ in 0..4 {
        for (w, fi) in weights.iter_mut().zip(f) {
            *w = (1.0 - (fi - f_res).abs() / half_width).max(0.0);
        }
        match crate::stats::weighted_line_fit(f, y, &weights) {
            Some(fit) if fit.slope != 0.0 && fit.root().is_finite() => {
                refined = fit;
                f_res = fit.root();
            }
            _ => break,
        }
    }

    // Sandwich variance of the weighted fit's value at the root, assuming
    // white noise of size ΔY.
    let sw: f64 = weights.iter().sum();
    let sw2: f64 = weights.iter().map(|w| w * w).sum();
    let xm = weights.iter().zip(f).map(|(w, x)| w * x).sum::<f64>() / sw;
    let sxx: f64 = weights.iter().zip(f).map(|(w, x)| w * (x - xm).powi(2)).sum();
    let sxx2: f64 = weights.iter().zip(f).map(|(w, x)| (w * (x - xm)).powi(2)).sum();
    let var_y0 = coarse.rmse.powi(2) * (sw2 / (sw * sw) + (f_res - xm).powi(2) * sxx2 / (sxx * sxx));
    let stderr_f = var_y0.sqrt() / refined.slope.abs();

    let g = gamma_rb.0;
    Ok(LiaFit {
        b_rb: f_res / g,
        sigma_rb: coarse.rmse / (g * coarse.slope.abs()),
        stderr_b: stderr_f / g,
        slope: coarse.slope,
        delta_y: coarse.rmse,
        f_res,
        window_khz: (f[a], f[b]),
        window_points: b - a + 1,
    })
}

fn moving_average(y: &[f64], half: usize) -> Vec<f64> {
    let mut prefix = Vec::with_capacity(y.len() + 1);
    prefix.push(0.0);
    for v in y {
        prefix.push(prefix.last().unwrap() + v);
    }
    (0..y.len())
        .map(|i| {
            let a = i.saturating_sub(half);
            let b = (i + half + 1).min(y.len());
            (prefix[b] - prefix[a]) / (b - a) as f64
        })
        .collect()
}

fn extremes(y: &[f64]) -> (usize, usize) {
    let mut i_min = 0;
    let mut i_max = 0;
    for (i, v) in y.iter().enumerate() {
        if *v < y[i_min] {
            i_min = i;
        }
        if *v > y[i_max] {
            i_max = i;
        }
    }
    (i_min, i_max)
}

/// Rb sensor model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RbSensor {
    pub params: LiaParams,
    pub gamma: GyromagneticRatio,
}

impl Default for RbSensor {
    fn default() -> Self {
        Self {
            params: LiaParams::default(),
            gamma: GyromagneticRatio::RB87,
        }
    }
}

impl RbSensor {
    pub fn measure(&self, delta_b: Vec3, b_0: Vec3, rng_seed: u64) -> Result<LiaFit> {
        let signal = synth_lia((delta_b + b_0).magnitude(), self.gamma, &self.params, rng_seed)?;
        fit_lia(&signal, self.gamma)
    }
}

/// Scalar reading of `|δB + B0|` and its sensitivity.
pub fn rb_measure(delta_b: Vec3, b_0: Vec3, gamma_rb: GyromagneticRatio, params: &LiaParams, rng_seed: u64) -> Result<(f64, f64)> {
    let fit = RbSensor {
        params: *params,
        gamma: gamma_rb,
    }
    .measure(delta_b, b_0, rng_seed)?;
    Ok((fit.b_rb, fit.sigma_rb))
}

/// One simultaneous reading of both sensors.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasurementPair {
    pub b_nv: Vec3,
    pub sigma_nv: Vec3,
    pub b_rb: f64,
    pub sigma_rb: f64,
}

impl MeasurementPair {
    pub fn new(b_nv: Vec3, sigma_nv: Vec3, b_rb: f64, sigma_rb: f64) -> Result<Self> {
        if !b_nv.is_finite() || !sigma_nv.is_finite() {
            return Err(Error::invalid("b_nv", "must be finite"));
        }
        if !(sigma_nv.bx > 0.0 && sigma_nv.by > 0.0 && sigma_nv.bz > 0.0) {
            return Err(Error::invalid("sigma_nv", "must be > 0"));
        }
        if !(b_rb >= 0.0 && b_rb.is_finite()) {
            return Err(Error::invalid("b_rb", "must be finite and >= 0"));
        }
        if !(sigma_rb > 0.0 && sigma_rb.is_finite()) {
            return Err(Error::invalid("sigma_rb", "must be > 0"));
        }
        Ok(Self {
            b_nv,
            sigma_nv,
            b_rb,
            sigma_rb,
        })
    }

    /// Full spectral-level acquisition of both sensors.
    pub fn acquire(nv: &NvSensor, rb: &RbSensor, delta_b: Vec3, b_0: Vec3, rng_seed: u64) -> Result<Self> {
        let n = nv.measure(delta_b, b_0, rng_seed)?;
        let r = rb.measure(delta_b, b_0, rng_seed.wrapping_add(0x5851_f42d_4c95_7f2d))?;
        Self::new(n.b_nv, n.sigma_nv, r.b_rb.max(0.0), r.sigma_rb)
    }
}
