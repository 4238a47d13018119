//! Small descriptive-statistics helpers shared by the simulations.

use crate::error::{Error, Result};
use crate::linalg::solve_dense;

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

pub fn std_dev(xs: &[f64]) -> f64 {
    variance(xs).sqrt()
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v: Vec<f64> = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Average ranks (1-based), ties sharing their mean rank.
pub fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut out = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for k in &idx[i..=j] {
            out[*k] = r;
        }
        i = j + 1;
    }
    out
}

pub fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let (mx, my) = (mean(xs), mean(ys));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx).powi(2);
        syy += (y - my).powi(2);
    }
    sxy / (sxx * syy).sqrt()
}

pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    pearson(&ranks(xs), &ranks(ys))
}

/// Least-squares polynomial coefficients, lowest order first.
pub fn polyfit(xs: &[f64], ys: &[f64], degree: usize) -> Result<Vec<f64>> {
    let n = degree + 1;
    if xs.len() != ys.len() || xs.len() < n {
        return Err(Error::invalid("polyfit", "need at least degree + 1 points"));
    }
    // Centre and scale x for conditioning, then expand back.
    let xm = mean(xs);
    let xs_scale = xs.iter().map(|x| (x - xm).abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let mut ata = vec![vec![0.0; n]; n];
    let mut aty = vec![0.0; n];
    for (x, y) in xs.iter().zip(ys) {
        let t = (x - xm) / xs_scale;
        let pows: Vec<f64> = (0..n).map(|k| t.powi(k as i32)).collect();
        for i in 0..n {
            aty[i] += pows[i] * y;
            for j in 0..n {
                ata[i][j] += pows[i] * pows[j];
            }
        }
    }
    let c = solve_dense(ata, aty).ok_or(Error::RankDeficient)?;
    // p(x) = Σ c_k ((x − xm)/s)^k; expand binomially.
    let mut out = vec![0.0; n];
    for (k, ck) in c.iter().enumerate() {
        let scale = ck / xs_scale.powi(k as i32);
        for j in 0..=k {
            out[j] += scale * binomial(k, j) * (-xm).powi((k - j) as i32);
        }
    }
    Ok(out)
}

pub fn polyval(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c)
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Weighted straight-line fit `y = a + b x`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LineFit {
    pub intercept: f64,
    pub slope: f64,
    /// `sqrt(SSR / (n − 2))` over the points with non-zero weight.
    pub rmse: f64,
    pub n: usize,
}

impl LineFit {
    /// x where the line crosses zero.
    pub fn root(&self) -> f64 {
        -self.intercept / self.slope
    }
}

pub fn weighted_line_fit(xs: &[f64], ys: &[f64], ws: &[f64]) -> Option<LineFit> {
    let (mut sw, mut sx, mut sy) = (0.0, 0.0, 0.0);
    let mut n = 0;
    for ((x, y), w) in xs.iter().zip(ys).zip(ws) {
        if *w > 0.0 {
            sw += w;
            sx += w * x;
            sy += w * y;
            n += 1;
        }
    }
    if n < 3 || sw <= 0.0 {
        return None;
    }
    let (mx, my) = (sx / sw, sy / sw);
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for ((x, y), w) in xs.iter().zip(ys).zip(ws) {
        sxx += w * (x - mx).powi(2);
        sxy += w * (x - mx) * (y - my);
    }
    if sxx <= 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ssr: f64 = xs
        .iter()
        .zip(ys)
        .zip(ws)
        .filter(|(_, w)| **w > 0.0)
        .map(|((x, y), _)| (y - intercept - slope * x).powi(2))
        .sum();
    Some(LineFit {
        intercept,
        slope,
        rmse: (ssr / (n as f64 - 2.0)).sqrt(),
        n,
    })
}

pub fn line_fit(xs: &[f64], ys: &[f64]) -> Option<LineFit> {
    weighted_line_fit(xs, ys, &vec![1.0; xs.len()])
}
