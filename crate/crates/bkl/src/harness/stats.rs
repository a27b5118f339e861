//! Estimator bookkeeping shared by every Monte Carlo routine: mean/standard
//! error pairs with cap accounting, a Kolmogorov-Smirnov distance, and a
//! weighted straight-line fit for log-tail slopes.

use crate::error::{BklError, Result};

/// A Monte Carlo estimate. `capped_fraction` is the fraction of replicas
/// whose trajectory hit a time or size cap instead of resolving; estimates
/// with a large value carry bias the standard error does not see.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub se: f64,
    pub n: u64,
    pub capped_fraction: f64,
}

impl McEstimate {
    pub fn from_sums(sum: f64, sumsq: f64, n: u64, n_capped: u64) -> Result<Self> {
        if n == 0 {
            return Err(BklError::insufficient("estimate over zero replicas"));
        }
        let nf = n as f64;
        let mean = sum / nf;
        let se = if n > 1 {
            let var = ((sumsq / nf - mean * mean) * nf / (nf - 1.0)).max(0.0);
            (var / nf).sqrt()
        } else {
            0.0
        };
        Ok(McEstimate { mean, se, n, capped_fraction: n_capped as f64 / nf })
    }

    /// The estimate of `factor · quantity`.
    pub fn scaled(&self, factor: f64) -> McEstimate {
        McEstimate {
            mean: self.mean * factor,
            se: self.se * factor.abs(),
            n: self.n,
            capped_fraction: self.capped_fraction,
        }
    }

    /// The estimate of `self + offset` for a deterministic offset.
    pub fn shifted(&self, offset: f64) -> McEstimate {
        McEstimate { mean: self.mean + offset, ..*self }
    }

    /// Whether two estimates agree within `k` combined standard errors.
    pub fn compatible(&self, other: &McEstimate, k: f64) -> bool {
        let combined = (self.se * self.se + other.se * other.se).sqrt();
        (self.mean - other.mean).abs() <= k * combined
    }

    /// Whether the estimate sits within `k` standard errors of a constant.
    pub fn covers(&self, value: f64, k: f64) -> bool {
        (self.mean - value).abs() <= k * self.se
    }
}

/// Kolmogorov-Smirnov distance between an empirical sample and a reference
/// distribution function.
pub fn ks_statistic(sample: &[f64], cdf: impl Fn(f64) -> f64) -> Result<f64> {
    if sample.is_empty() {
        return Err(BklError::insufficient("ks_statistic needs a nonempty sample"));
    }
    if sample.iter().any(|v| !v.is_finite()) {
        return Err(BklError::domain("ks_statistic sample must be finite"));
    }
    let mut sorted = sample.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len() as f64;
    let mut d: f64 = 0.0;
    for (i, x) in sorted.iter().enumerate() {
        let f = cdf(*x);
        if !(0.0..=1.0).contains(&f) {
            return Err(BklError::domain("reference cdf left [0,1]"));
        }
        d = d.max(f - i as f64 / n).max((i + 1) as f64 / n - f);
    }
    Ok(d)
}

/// Two-sample Kolmogorov-Smirnov distance, the sup gap between the two
/// empirical distribution functions.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(BklError::insufficient("ks_two_sample needs two nonempty samples"));
    }
    if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
        return Err(BklError::domain("ks_two_sample samples must be finite"));
    }
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_by(|p, q| p.partial_cmp(q).unwrap());
    sb.sort_by(|p, q| p.partial_cmp(q).unwrap());
    let (na, nb) = (sa.len() as f64, sb.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < sa.len() && j < sb.len() {
        // Step through every copy of the smaller value before measuring, so
        // ties never produce a spurious gap.
        let v = sa[i].min(sb[j]);
        while i < sa.len() && sa[i] == v {
            i += 1;
        }
        while j < sb.len() && sb[j] == v {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(d)
}

#[derive(Debug, Clone, Copy)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_se: f64,
    /// Weighted root-mean-square residual of the fit.
    pub residual: f64,
}

/// Weighted least-squares line v = slope·y + intercept through (y, v, se)
/// triples. Weights are 1/se² when every se is positive, uniform otherwise.
/// Needs at least three points so the residual is informative.
pub fn tail_slope_fit(points: &[(f64, f64, f64)]) -> Result<SlopeFit> {
    if points.len() < 3 {
        return Err(BklError::insufficient("slope fit needs at least three points"));
    }
    for (y, v, se) in points {
        if !(y.is_finite() && v.is_finite() && se.is_finite() && *se >= 0.0) {
            return Err(BklError::domain("slope fit points must be finite with se >= 0"));
        }
    }
    let weighted = points.iter().all(|(_, _, se)| *se > 0.0);
    let w_of = |se: f64| if weighted { 1.0 / (se * se) } else { 1.0 };
    let (mut sw, mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (y, v, se) in points {
        let w = w_of(*se);
        sw += w;
        sx += w * y;
        sy += w * v;
        sxx += w * y * y;
        sxy += w * y * v;
    }
    let det = sw * sxx - sx * sx;
    if det <= 0.0 || !det.is_finite() {
        return Err(BklError::numerical("slope fit is degenerate (collinear abscissae)"));
    }
    let slope = (sw * sxy - sx * sy) / det;
    let intercept = (sy - slope * sx) / sw;
    let mut rss = 0.0;
    for (y, v, se) in points {
        let r = v - (slope * y + intercept);
        rss += w_of(*se) * r * r;
    }
    let residual = (rss / sw).sqrt();
    let slope_se = if weighted {
        (sw / det).sqrt()
    } else {
        let dof = (points.len() - 2) as f64;
        ((rss / dof) * sw / det).sqrt()
    };
    Ok(SlopeFit { slope, intercept, slope_se, residual })
}
