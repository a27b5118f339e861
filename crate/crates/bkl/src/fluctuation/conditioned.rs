//! Conditioned-limit diagnostics for a single killed path: the zero-mean
//! Rayleigh profile, the negative-mean tilted estimate against its limit
//! form, and the time-reversal duality identity.

use crate::error::{BklError, Result};
use crate::fluctuation::passage::{first_passage, killed_functional, renewal_r, PathConfig};
use crate::harness::mc::{mc_mean_vec, replica_rng};
use crate::harness::stats::{ks_statistic, McEstimate};
use crate::levy_models::LevyModel;
use std::f64::consts::PI;

// Renewal tabulation runs on coarse substeps: undershoot draws are exact at
// any step, so only the horizon cap matters.
const RENEWAL_STEP_FLOOR: f64 = 0.1;

/// Zero-mean conditioned profile of a killed path at one time.
#[derive(Debug, Clone)]
pub struct RayleighReport {
    pub a_grid: Vec<f64>,
    /// √t·P_x(ξ_t ≤ a√t, alive at t) per grid point.
    pub scaled_estimates: Vec<McEstimate>,
    /// Limit values 2R(x)/√(2πσ²)·(1 − e^{−(a/σ)²/2}) per grid point.
    pub limit_values: Vec<f64>,
    /// KS distance between ξ_t/(σ√t) given survival and the unit Rayleigh law.
    pub ks: f64,
    pub n_survivors: u64,
    /// Renewal estimate feeding the limit prefactor.
    pub renewal: McEstimate,
}

/// Compare the killed path at a single large time against its zero-mean
/// conditioned limit: scaled sub-level probabilities on `a_grid` (∞ entries
/// reduce to the survival asymptotic) and the conditional position profile.
/// Uses salts `salt` (paths) and `salt + 1` (renewal prefactor).
pub fn conditioned_rayleigh_check(
    model: &LevyModel,
    x: f64,
    t: f64,
    a_grid: &[f64],
    n: u64,
    step: f64,
    seed: u64,
    salt: u32,
) -> Result<RayleighReport> {
    if model.mean().abs() > 1e-6 {
        return Err(BklError::precondition(
            "conditioned profile needs a zero-mean model; tilt first",
        ));
    }
    if !model.is_non_lattice() {
        return Err(BklError::precondition("model must have a non-lattice component"));
    }
    if !(x > 0.0 && t > 0.0) {
        return Err(BklError::precondition("need x > 0 and t > 0"));
    }
    if a_grid.is_empty() || a_grid.iter().any(|a| !(*a > 0.0)) {
        return Err(BklError::precondition("a-grid entries must be positive"));
    }
    let sigma = model.variance().sqrt();
    let sqrt_t = t.sqrt();
    let cfg = PathConfig::new(step, t)?;
    let scaled_estimates = mc_mean_vec(n, seed, salt, a_grid.len(), |rng, out| {
        let rec = first_passage(model, x, 0.0, None, &cfg, rng).expect("validated arguments");
        if rec.capped {
            // Alive at t; a = ∞ entries always count.
            for (k, a) in a_grid.iter().enumerate() {
                if rec.position_at_passage <= a * sqrt_t {
                    out[k] = sqrt_t;
                }
            }
        }
        false
    })?;

    // Same salt, same replicas: the profile sample is the paths just scored.
    let mut survivors = Vec::new();
    for i in 0..n {
        let mut rng = replica_rng(seed, salt, i);
        let rec = first_passage(model, x, 0.0, None, &cfg, &mut rng).expect("validated");
        if rec.capped {
            survivors.push(rec.position_at_passage / (sigma * sqrt_t));
        }
    }
    if survivors.is_empty() {
        return Err(BklError::insufficient(format!(
            "no path of {n} survived to t = {t}; increase n or decrease t"
        )));
    }
    let ks = ks_statistic(&survivors, |z| 1.0 - (-0.5 * z * z).exp())?;

    let ren_cfg = PathConfig::new(step.max(RENEWAL_STEP_FLOOR), 200.0 * x.max(1.0))?;
    let n_ren = (n / 4).clamp(5_000, 50_000);
    let renewal = renewal_r(model, x, &ren_cfg, n_ren, seed, salt + 1)?;
    let pref = 2.0 * renewal.mean / (2.0 * PI * sigma * sigma).sqrt();
    let limit_values = a_grid
        .iter()
        .map(|a| {
            let u = a / sigma;
            pref * (1.0 - (-0.5 * u * u).exp())
        })
        .collect();

    Ok(RayleighReport {
        a_grid: a_grid.to_vec(),
        scaled_estimates,
        limit_values,
        ks,
        n_survivors: survivors.len() as u64,
        renewal,
    })
}

/// Negative-mean conditioned estimate against its limit form.
#[derive(Debug, Clone)]
pub struct NegDriftReport {
    /// t^{3/2}·e^{λ*x}·(tilted mean of e^{−λ*ξ_t} over paths alive and above
    /// y), the finite-t left side after exact cancellation of e^{Ψ(λ*)t}.
    pub scaled_estimate: McEstimate,
    /// Limit value assembled from the renewal tabulation.
    pub rhs: f64,
    pub rhs_se: f64,
    pub lambda_star: f64,
    pub psi_at_tilt: f64,
    pub r_star_x: McEstimate,
    pub n_survivors: u64,
}

/// Estimate t^{3/2}e^{−Ψ(λ*)t}E_x(ξ_t > y, alive at t) by importance
/// sampling under the λ*-tilted (zero-mean) model, each surviving path above
/// y weighted by e^{−λ*ξ_t}; the exponential prefactors cancel analytically
/// against the change of measure, leaving t^{3/2}e^{λ*x} times the tilted
/// mean. Compared against the limit
///
///   2R*(x)e^{λ*x}/√(2πΨ″(λ*)³) · ∫_y^∞ e^{−λ*z} R̂*(z) dz,
///
/// with R* and R̂* tabulated by renewal runs on the tilted model and its
/// dual, the integral by trapezoid plus a linear-extrapolation tail. Uses
/// salts `salt` (paths), `salt + 1` (R*), `salt + 2` (R̂* tabulation).
pub fn conditioned_negdrift_check(
    model: &LevyModel,
    x: f64,
    t: f64,
    y: f64,
    n: u64,
    step: f64,
    seed: u64,
    salt: u32,
) -> Result<NegDriftReport> {
    if !(x > 0.0 && t > 0.0 && y >= 0.0) {
        return Err(BklError::precondition("need x > 0, t > 0, y >= 0"));
    }
    let lambda_star = model.lambda_star()?;
    let psi_at_tilt = model.psi(lambda_star)?;
    let tilted = model.esscher(lambda_star)?;
    let psi_dd = model.psi_d2(lambda_star)?;
    let cfg = PathConfig::new(step, t)?;

    let est = mc_mean_vec(n, seed, salt, 2, |rng, out| {
        let rec = first_passage(&tilted, x, 0.0, None, &cfg, rng).expect("validated");
        if rec.capped && rec.position_at_passage > y {
            out[0] = (-lambda_star * rec.position_at_passage).exp();
            out[1] = 1.0;
        }
        false
    })?;
    let n_survivors = (est[1].mean * n as f64).round() as u64;
    if n_survivors == 0 {
        return Err(BklError::insufficient(format!(
            "no tilted path of {n} was alive above y = {y} at t = {t}; \
             increase n or decrease t"
        )));
    }
    let scaled_estimate = est[0].scaled(t.powf(1.5) * (lambda_star * x).exp());

    let ren_cfg = PathConfig::new(step.max(RENEWAL_STEP_FLOOR), 300.0)?;
    let r_star_x = renewal_r(&tilted, x, &ren_cfg, 20_000, seed, salt + 1)?;
    let dual_tilted = tilted.dual();
    let z_lo = y.max(1e-6);
    let z_hi = y + 12.0 / lambda_star;
    let nodes = 97;
    let h = (z_hi - z_lo) / (nodes - 1) as f64;
    let mut zs = Vec::with_capacity(nodes);
    let mut rhat = Vec::with_capacity(nodes);
    let mut rhat_se = Vec::with_capacity(nodes);
    for k in 0..nodes {
        let z = z_lo + h * k as f64;
        let r = renewal_r(&dual_tilted, z, &ren_cfg, 2_000, seed, salt + 2)?;
        zs.push(z);
        rhat.push(r.mean);
        rhat_se.push(r.se);
    }
    let mut integral = 0.0;
    let mut var_int = 0.0;
    for k in 0..nodes {
        let w = if k == 0 || k == nodes - 1 { 0.5 * h } else { h };
        let e = (-lambda_star * zs[k]).exp();
        integral += w * e * rhat[k];
        var_int += (w * e * rhat_se[k]).powi(2);
    }
    // Tail beyond z_hi: R̂*(z) ≈ z + c from the last two nodes, integrated
    // against the exponential weight in closed form.
    let c = rhat[nodes - 1] - zs[nodes - 1];
    let tail = (-lambda_star * z_hi).exp()
        * ((z_hi + c) / lambda_star + 1.0 / (lambda_star * lambda_star));
    integral += tail;

    let pref = 2.0 * (lambda_star * x).exp() / (2.0 * PI * psi_dd.powi(3)).sqrt();
    let rhs = pref * r_star_x.mean * integral;
    let rhs_se = ((pref * r_star_x.se * integral).powi(2)
        + (pref * r_star_x.mean).powi(2) * var_int)
        .sqrt();

    Ok(NegDriftReport {
        scaled_estimate,
        rhs,
        rhs_se,
        lambda_star,
        psi_at_tilt,
        r_star_x,
        n_survivors,
    })
}

/// Two sides of the time-reversal duality identity.
#[derive(Debug, Clone)]
pub struct DualityReport {
    pub lhs: f64,
    pub lhs_se: f64,
    pub rhs: f64,
    pub rhs_se: f64,
    pub difference: f64,
    pub combined_se: f64,
}

// ∫_{outer} E_x[1_{ξ_t ∈ inner}, alive at t] dx by trapezoid over the outer
// interval, one MC batch per node (salts salt..salt+nodes).
fn duality_side(
    model: &LevyModel,
    t: f64,
    n_per_node: u64,
    outer: (f64, f64),
    inner: (f64, f64),
    step: f64,
    seed: u64,
    salt: u32,
) -> Result<(f64, f64)> {
    let nodes = 33usize;
    let h = (outer.1 - outer.0) / (nodes - 1) as f64;
    let mut total = 0.0;
    let mut var = 0.0;
    for k in 0..nodes {
        let xk = outer.0 + h * k as f64;
        let est = killed_functional(
            model,
            xk,
            t,
            step,
            n_per_node,
            seed,
            salt + k as u32,
            move |p| (inner.0 <= p && p <= inner.1) as u64 as f64,
        )?;
        let w = if k == 0 || k == nodes - 1 { 0.5 * h } else { h };
        total += w * est.mean;
        var += (w * est.se).powi(2);
    }
    Ok((total, var.sqrt()))
}

/// Duality identity on caller-chosen intervals: ∫h(x)E_x(g(ξ_t)1_alive)dx
/// against the same integral for the dual model with h and g swapped. Both
/// intervals must sit in (0, ∞). Uses salts salt..salt+66.
pub fn duality_check_intervals(
    model: &LevyModel,
    t: f64,
    n: u64,
    h_int: (f64, f64),
    g_int: (f64, f64),
    step: f64,
    seed: u64,
    salt: u32,
) -> Result<DualityReport> {
    for (lo, hi) in [h_int, g_int] {
        if !(0.0 < lo && lo < hi && hi.is_finite()) {
            return Err(BklError::precondition(
                "duality intervals must be bounded and inside (0, inf)",
            ));
        }
    }
    if t == 0.0 {
        // No motion: both sides are the overlap length, exactly.
        let overlap = (h_int.1.min(g_int.1) - h_int.0.max(g_int.0)).max(0.0);
        return Ok(DualityReport {
            lhs: overlap,
            lhs_se: 0.0,
            rhs: overlap,
            rhs_se: 0.0,
            difference: 0.0,
            combined_se: 0.0,
        });
    }
    let n_per_node = (n / 33).max(500);
    let (lhs, lhs_se) =
        duality_side(model, t, n_per_node, h_int, g_int, step, seed, salt)?;
    let dual = model.dual();
    let (rhs, rhs_se) =
        duality_side(&dual, t, n_per_node, g_int, h_int, step, seed, salt + 33)?;
    Ok(DualityReport {
        lhs,
        lhs_se,
        rhs,
        rhs_se,
        difference: lhs - rhs,
        combined_se: (lhs_se * lhs_se + rhs_se * rhs_se).sqrt(),
    })
}

/// Duality identity on the default intervals h = 1_{[0.5,1.5]}, g = 1_{[1,2]}.
pub fn duality_check(
    model: &LevyModel,
    t: f64,
    n: u64,
    step: f64,
    seed: u64,
    salt: u32,
) -> Result<DualityReport> {
    duality_check_intervals(model, t, n, (0.5, 1.5), (1.0, 2.0), step, seed, salt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::levy_models::{JumpComponent, JumpLaw};

    fn bm(drift: f64) -> LevyModel {
        LevyModel::brownian(drift, 1.0).unwrap()
    }

    #[test]
    fn rayleigh_profile_standard_bm() {
        // √t·P_1(ξ_t ≤ a√t, alive) at t=25 sits within MC error plus a small
        // finite-t allowance of 2/√(2π)·(1 − e^{−a²/2}); the conditional
        // profile is already near Rayleigh.
        let report = conditioned_rayleigh_check(
            &bm(0.0),
            1.0,
            25.0,
            &[0.8, 1.6, f64::INFINITY],
            30_000,
            0.25,
            101,
            1,
        )
        .unwrap();
        assert_eq!(report.renewal.mean, 1.0);
        assert_eq!(report.renewal.se, 0.0);
        for (est, limit) in report.scaled_estimates.iter().zip(&report.limit_values) {
            assert!(
                (est.mean - limit).abs() < 4.0 * est.se + 0.02,
                "{} vs {limit} (se {})",
                est.mean,
                est.se
            );
        }
        assert!(report.ks < 0.04, "ks = {}", report.ks);
        assert!(report.n_survivors > 3_000);
        // The ∞ column dominates the finite ones.
        assert!(report.scaled_estimates[2].mean >= report.scaled_estimates[1].mean);
    }

    #[test]
    fn rayleigh_check_rejects_drift() {
        let err = conditioned_rayleigh_check(
            &bm(0.3),
            1.0,
            10.0,
            &[1.0],
            1_000,
            0.25,
            1,
            1,
        );
        assert!(err.is_err());
    }

    #[test]
    fn negdrift_estimate_matches_limit_form() {
        // BM drift −1: every limit ingredient is closed-form (tilt is the
        // standard BM, both renewal functions are the identity), so the
        // report's rhs is deterministic. The finite-t ratio expands as
        // 1 − 3.5/t + O(1/t²) ≈ 0.89 at t = 30; n keeps the MC noise at
        // roughly a third of the window margin.
        let report =
            conditioned_negdrift_check(&bm(-1.0), 1.0, 30.0, 0.0, 240_000, 0.25, 7, 1).unwrap();
        assert!((report.lambda_star - 1.0).abs() < 1e-9);
        assert!((report.psi_at_tilt + 0.5).abs() < 1e-12);
        assert_eq!(report.r_star_x.se, 0.0);
        let exact_rhs = 2.0 * 1.0f64.exp() / (2.0 * PI).sqrt();
        // Trapezoid at h = 0.125 carries an O(h²/12) deficit on ∫ze^{−z}.
        assert!(
            (report.rhs - exact_rhs).abs() < 5e-3 * exact_rhs,
            "rhs {} vs {exact_rhs}",
            report.rhs
        );
        let ratio = report.scaled_estimate.mean / report.rhs;
        assert!(
            (0.85..=1.15).contains(&ratio),
            "ratio {ratio} (se {})",
            report.scaled_estimate.se
        );
        assert!(report.n_survivors > 2_000);
    }

    #[test]
    fn negdrift_scaling_is_time_stable() {
        let a =
            conditioned_negdrift_check(&bm(-1.0), 1.0, 12.0, 0.0, 60_000, 0.25, 8, 1).unwrap();
        let b =
            conditioned_negdrift_check(&bm(-1.0), 1.0, 24.0, 0.0, 60_000, 0.25, 8, 4).unwrap();
        let combined =
            (a.scaled_estimate.se.powi(2) + b.scaled_estimate.se.powi(2)).sqrt();
        assert!(
            (a.scaled_estimate.mean - b.scaled_estimate.mean).abs() < 3.5 * combined,
            "{} vs {} (combined {combined})",
            a.scaled_estimate.mean,
            b.scaled_estimate.mean
        );
    }

    #[test]
    fn negdrift_weights_stay_in_range() {
        // Importance weights are e^{−λ*ξ_t} with ξ_t > y = 0, so each lies in
        // (0, 1]; the scaled estimate is therefore positive and finite.
        let report =
            conditioned_negdrift_check(&bm(-1.0), 1.0, 10.0, 0.0, 20_000, 0.25, 9, 1).unwrap();
        assert!(report.scaled_estimate.mean > 0.0);
        assert!(report.scaled_estimate.mean.is_finite());
        let bound = 10.0f64.powf(1.5) * 1.0f64.exp();
        assert!(report.scaled_estimate.mean <= bound);
    }

    #[test]
    fn negdrift_requires_negative_mean() {
        assert!(
            conditioned_negdrift_check(&bm(0.0), 1.0, 10.0, 0.0, 100, 0.25, 1, 1).is_err()
        );
    }

    #[test]
    fn negdrift_reports_insufficient_survivors() {
        // t far beyond what 50 paths can survive.
        let err = conditioned_negdrift_check(&bm(-1.0), 0.2, 400.0, 0.0, 50, 0.5, 1, 1);
        match err {
            Err(BklError::InsufficientSample(msg)) => {
                assert!(msg.contains("increase n"), "{msg}");
            }
            other => panic!("expected insufficient-sample error, got {other:?}"),
        }
    }

    #[test]
    fn duality_symmetric_case_balances() {
        // Standard BM is self-dual; with h = g the two sides estimate the
        // same number.
        let report = duality_check_intervals(
            &bm(0.0),
            1.0,
            66_000,
            (0.5, 1.5),
            (0.5, 1.5),
            0.25,
            11,
            1,
        )
        .unwrap();
        assert!(
            report.difference.abs() < 3.5 * report.combined_se,
            "diff {} (combined {})",
            report.difference,
            report.combined_se
        );
    }

    #[test]
    fn duality_generic_model_and_intervals() {
        let model = LevyModel::new(
            -0.3,
            1.0,
            vec![JumpComponent { rate: 0.5, law: JumpLaw::NegExp { mu: 1.5 } }],
        )
        .unwrap();
        let report = duality_check(&model, 1.0, 66_000, 0.25, 12, 70).unwrap();
        assert!(
            report.difference.abs() < 3.5 * report.combined_se,
            "diff {} (combined {})",
            report.difference,
            report.combined_se
        );
    }

    #[test]
    fn duality_degenerate_time_is_exact_overlap() {
        let report = duality_check(&bm(0.0), 0.0, 100, 0.25, 1, 1).unwrap();
        assert_eq!(report.lhs, 0.5);
        assert_eq!(report.rhs, 0.5);
        assert_eq!(report.difference, 0.0);
        assert_eq!(report.combined_se, 0.0);
    }

    #[test]
    fn duality_rejects_bad_intervals() {
        assert!(duality_check_intervals(
            &bm(0.0), 1.0, 1000, (-0.5, 1.0), (1.0, 2.0), 0.25, 1, 1
        )
        .is_err());
        assert!(duality_check_intervals(
            &bm(0.0), 1.0, 1000, (1.0, 0.5), (1.0, 2.0), 0.25, 1, 1
        )
        .is_err());
    }
}
