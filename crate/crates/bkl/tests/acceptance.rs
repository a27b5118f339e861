//! Acceptance suite: one test per acceptance criterion, each printing a
//! single pass/fail line with the measured numbers. Run with
//! `cargo test --test acceptance -- --nocapture` to see the lines; the
//! per-test ok/FAILED status carries the same verdict either way.

use std::time::Instant;

use bkl::asymptotics::{
    alltime_limit, default_z_grid, estimate_c0, estimate_c1, yaglom_limit_cdf, Constant,
    LimitBudget, MeanRegime,
};
use bkl::branching_law::OffspringLaw;
use bkl::fluctuation::{
    conditioned_negdrift_check, conditioned_rayleigh_check, exit_up_mc, killed_functional,
    renewal_r, scale_w_bm, PathConfig, ScaleFunction,
};
use bkl::harness::mc::mc_mean;
use bkl::harness::{ks_statistic, ks_two_sample, tail_slope_fit};
use bkl::levy_models::{JumpComponent, JumpLaw, LevyModel};
use bkl::particle_sim::{
    estimate_alltime_tail_profile, estimate_mt_tail, estimate_survival, feynman_kac_rhs,
    yaglom_samples, SimConfig,
};

const SQRT_2PI: f64 = 2.5066282746310002;

fn conclude(id: u32, ok: bool, detail: &str) {
    println!("criterion {id:02}: {} - {detail}", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "criterion {id:02} failed: {detail}");
}

fn bm(drift: f64) -> LevyModel {
    LevyModel::brownian(drift, 1.0).unwrap()
}

fn binary_law(beta: f64) -> OffspringLaw {
    OffspringLaw::new(vec![0.6, 0.0, 0.4], beta).unwrap()
}

fn sparse_law(beta: f64) -> OffspringLaw {
    OffspringLaw::new(vec![0.9, 0.0, 0.1], beta).unwrap()
}

/// Standard normal upper tail via the positive-mean limit CDF at the
/// reflected point.
fn phi_bar(u: f64) -> f64 {
    yaglom_limit_cdf(MeanRegime::PositiveMean, 1.0, -u).unwrap()
}

#[test]
fn criterion_01_branching_closed_forms() {
    let law = binary_law(1.0);
    let mut grid_err: f64 = 0.0;
    for i in 1..=100 {
        let u = i as f64 / 100.0;
        let exact = 0.2 * u + 0.4 * u * u;
        grid_err = grid_err.max((law.big_phi(u).unwrap() - exact).abs());
    }
    let g1 = law.survival_g(1.0, 1e-3).unwrap();
    let g1_exact = 0.2 / (0.6 * 0.2f64.exp() - 0.4);
    let g1_err = (g1 - g1_exact).abs();
    let c = law.c_sub(1e-10).unwrap();
    let c_err = (c - 1.0 / 3.0).abs();
    let g40 = law.survival_g(40.0, 1e-3).unwrap();
    let tail_err = ((0.2f64 * 40.0).exp() * g40 - c).abs();
    let ok = grid_err < 1e-12 && g1_err < 1e-8 && c_err < 1e-6 && tail_err < 1e-5;
    conclude(
        1,
        ok,
        &format!(
            "branching oracle: grid err {grid_err:.2e} (<1e-12), g(1) err {g1_err:.2e} \
             (<1e-8), c_sub err {c_err:.2e} (<1e-6), scaled g(40) err {tail_err:.2e} (<1e-5)"
        ),
    );
}

#[test]
fn criterion_02_scale_function_numerics() {
    // Inversion-based scale function against the Brownian closed form.
    let mut inv_err: f64 = 0.0;
    for &q in &[0.0, 0.2] {
        let sf = ScaleFunction::with_inversion(bm(-0.5), q, 48).unwrap();
        for i in 0..50 {
            let x = 0.1 + 4.9 * i as f64 / 49.0;
            let exact = scale_w_bm(0.5, q, x);
            inv_err = inv_err.max((sf.w(x).unwrap() - exact).abs() / exact);
        }
    }

    // Transform identity for a jump model: the Laplace transform of W^(q)
    // equals 1/(Psi(r) - q) for r above the tilt rate.
    let jumpy = LevyModel::new(
        1.5,
        1.0,
        vec![JumpComponent { rate: 0.5, law: JumpLaw::NegExp { mu: 1.0 } }],
    )
    .unwrap();
    let q = 0.2;
    let sf = ScaleFunction::new(jumpy.clone(), q).unwrap();
    let r = sf.tilt_rate() + 1.0;
    let h = 0.01;
    let steps = 4000;
    let mut integral = 0.0;
    for i in 0..=steps {
        let x = i as f64 * h;
        let v = (-r * x).exp() * sf.w(x).unwrap();
        let w = if i == 0 || i == steps {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        integral += w * v;
    }
    integral *= h / 3.0;
    let transform_exact = 1.0 / (jumpy.psi(r).unwrap() - q);
    let laplace_err = (integral - transform_exact).abs() / transform_exact;

    // Tilt relation on closed forms: W^(q) of the base model equals
    // e^{psi(q) x} times the q=0 scale function of the tilted model.
    let base = bm(-0.5);
    let psi_q = base.right_inverse(q).unwrap();
    let tilted = base.esscher(psi_q).unwrap();
    let sf_base = ScaleFunction::new(base, q).unwrap();
    let sf_tilt = ScaleFunction::new(tilted, 0.0).unwrap();
    let mut tilt_err: f64 = 0.0;
    for &x in &[0.5, 1.0, 2.0, 3.0] {
        let lhs = sf_base.w(x).unwrap();
        let rhs = (psi_q * x).exp() * sf_tilt.w(x).unwrap();
        tilt_err = tilt_err.max((lhs - rhs).abs() / lhs);
    }

    let ok = inv_err < 1e-5 && laplace_err < 1e-3 && tilt_err < 1e-4;
    conclude(
        2,
        ok,
        &format!(
            "scale numerics: inversion rel err {inv_err:.2e} (<1e-5), transform identity \
             rel err {laplace_err:.2e} (<1e-3), tilt relation rel err {tilt_err:.2e} (<1e-4)"
        ),
    );
}

#[test]
fn criterion_03_exit_identity_monte_carlo() {
    let jumpy = LevyModel::new(
        0.3,
        1.0,
        vec![JumpComponent { rate: 0.4, law: JumpLaw::NegExp { mu: 2.0 } }],
    )
    .unwrap();
    let cfg = PathConfig::new(1e-3, 1000.0).unwrap();
    let (x, y, q) = (1.0, 2.0, 0.2);
    let mut detail = String::from("discounted exit vs scale ratio:");
    let mut ok = true;
    for (name, model, salt) in [("bm", bm(0.0), 0x7003u32), ("bm+jumps", jumpy, 0x7013u32)] {
        let predicted = ScaleFunction::new(model.clone(), q).unwrap().exit_up(x, y).unwrap();
        let est = exit_up_mc(&model, x, y, q, &cfg, 100_000, 3, salt).unwrap();
        let dev = (est.mean - predicted).abs();
        ok &= dev <= 3.5 * est.se;
        detail.push_str(&format!(
            " {name} {:.5} vs {predicted:.5} ({:.1} se);",
            est.mean,
            dev / est.se
        ));
    }
    conclude(3, ok, &detail);
}

#[test]
fn criterion_04_esscher_tilt_centering() {
    let model = LevyModel::new(
        -1.0,
        1.0,
        vec![JumpComponent { rate: 0.3, law: JumpLaw::NegExp { mu: 2.0 } }],
    )
    .unwrap();
    let lam = model.lambda_star().unwrap();
    let tilted = model.esscher(lam).unwrap();
    let analytic = tilted.psi_d1(0.0).unwrap().abs();
    let est = mc_mean(1_000_000, 4, 0x7004, |rng| {
        (tilted.sample_increment(1.0, rng).unwrap(), false)
    })
    .unwrap();
    let ok = analytic < 1e-10 && est.mean.abs() <= 4.0 * est.se;
    conclude(
        4,
        ok,
        &format!(
            "tilt centering: analytic slope {analytic:.2e} (<1e-10), sample mean \
             {:.2e} ({:.1} se at n=1e6)",
            est.mean,
            est.mean.abs() / est.se
        ),
    );
}

#[test]
fn criterion_05_renewal_identity_and_martingale() {
    let model = bm(0.0);
    let cfg = PathConfig::new(1e-3, 100.0).unwrap();
    let mut ok = true;
    let mut detail = String::from("renewal R(x)=x:");
    for (i, &x) in [0.5, 1.0, 2.0].iter().enumerate() {
        let r = renewal_r(&model, x, &cfg, 2_000, 5, 0x7005 + i as u32).unwrap();
        let tol = (3.5 * r.se).max(0.02);
        ok &= (r.mean - x).abs() < tol;
        detail.push_str(&format!(" R({x})={:.6};", r.mean));
    }
    // Harmonicity of the identity under killing: E_x[xi_s; alive] = x.
    let mart = killed_functional(&model, 1.0, 2.0, 0.05, 400_000, 5, 0x7015, |z| z).unwrap();
    let mart_dev = (mart.mean - 1.0).abs();
    ok &= mart_dev <= 4.0 * mart.se;
    detail.push_str(&format!(
        " martingale mean {:.4} ({:.1} se at n=4e5)",
        mart.mean,
        mart_dev / mart.se
    ));
    conclude(5, ok, &detail);
}

#[test]
fn criterion_06_conditioned_rayleigh_profile() {
    let a_grid = [0.5, 1.0, 1.5, 2.0, 2.5];
    let rep =
        conditioned_rayleigh_check(&bm(0.0), 1.0, 100.0, &a_grid, 200_000, 0.05, 6, 0x7006)
            .unwrap();
    let mut ok = rep.ks < 0.02;
    let mut worst: f64 = 0.0;
    for (est, lim) in rep.scaled_estimates.iter().zip(&rep.limit_values) {
        worst = worst.max((est.mean - lim).abs() / lim);
    }
    ok &= worst < 0.10;
    conclude(
        6,
        ok,
        &format!(
            "conditioned profile: KS {:.4} (<0.02), worst scaled-tail dev {:.1}% (<10%), \
             {} survivors",
            rep.ks,
            100.0 * worst,
            rep.n_survivors
        ),
    );
}

#[test]
fn criterion_07_survival_zero_mean_trend() {
    let started = Instant::now();
    let law = binary_law(0.25);
    let alpha = law.alpha();
    let limit = 2.0 * law.c_sub(1e-10).unwrap() / SQRT_2PI;
    let mut vs = Vec::new();
    let mut ses = Vec::new();
    for (t, n) in [(16.0, 1_000_000u64), (36.0, 4_000_000), (64.0, 16_000_000)] {
        let cfg = SimConfig::new(bm(0.0), law.clone(), 0.25, t, 20).unwrap();
        let est = estimate_survival(&cfg, 1.0, t, n).unwrap();
        let scale = t.sqrt() * (alpha * t).exp();
        vs.push(est.mean * scale);
        ses.push(est.se * scale);
    }
    let dev = (vs[2] - limit).abs();
    let tol = (0.15 * limit).max(3.5 * ses[2]);
    let gap1 = (vs[1] - vs[0]).abs();
    let gap2 = (vs[2] - vs[1]).abs();
    let ok = dev < tol && gap2 < gap1;
    conclude(
        7,
        ok,
        &format!(
            "zero-mean survival: scaled {:.4}/{:.4}/{:.4} at t=16/36/64, limit {limit:.4}, \
             t=64 dev {:.1}% (tol 15%), gaps {gap1:.4} -> {gap2:.4} shrink, {:.0}s",
            vs[0],
            vs[1],
            vs[2],
            100.0 * dev / limit,
            started.elapsed().as_secs_f64()
        ),
    );
}

#[test]
fn criterion_08_survival_positive_mean_level() {
    let law = binary_law(1.0);
    let alpha = law.alpha();
    let q_x = 1.0 - (-2.0 * 0.5 * 1.0 / 1.0f64).exp();
    let target = q_x * law.c_sub(1e-10).unwrap();
    let mut vs = Vec::new();
    let mut last_se = 0.0;
    for (t, n) in [(4.0, 200_000u64), (8.0, 200_000), (16.0, 400_000)] {
        let cfg = SimConfig::new(bm(0.5), law.clone(), 0.25, t, 8).unwrap();
        let est = estimate_survival(&cfg, 1.0, t, n).unwrap();
        vs.push(est.mean * (alpha * t).exp());
        last_se = est.se * (alpha * t).exp();
    }
    let dev = (vs[2] - target).abs();
    let ok = dev < (0.10 * target).max(3.5 * last_se);
    conclude(
        8,
        ok,
        &format!(
            "positive-mean survival: scaled {:.4}/{:.4}/{:.4} at t=4/8/16, target {target:.4}, \
             t=16 dev {:.1}% (tol 10%)",
            vs[0],
            vs[1],
            vs[2],
            100.0 * dev / target
        ),
    );
}

#[test]
fn criterion_09_window_shape_factors() {
    // Zero-mean case at the largest time of the zero-mean survival grid: the
    // scaled tail across the window grid must reproduce the squared-
    // exponential factor relative to the first grid point.
    let law = binary_law(0.25);
    let cfg = SimConfig::new(bm(0.0), law, 0.25, 64.0, 9).unwrap();
    let ys = [0.3, 0.6, 0.9];
    let mut ests = Vec::new();
    for &y in &ys {
        ests.push(estimate_mt_tail(&cfg, 1.0, 64.0, y * 8.0, 4_000_000).unwrap());
    }
    let mut ok = true;
    let mut detail = String::from("window factors, zero mean t=64:");
    for i in 1..3 {
        let ratio = ests[i].mean / ests[0].mean;
        let factor = (-(ys[i] * ys[i] - ys[0] * ys[0]) / 2.0).exp();
        let dev = (ratio / factor - 1.0).abs();
        ok &= dev < 0.15;
        detail.push_str(&format!(
            " y={} ratio {ratio:.3} vs {factor:.3} ({:+.1}%);",
            ys[i],
            100.0 * (ratio / factor - 1.0)
        ));
    }

    // Positive-mean case at the largest time of its survival grid: ratios
    // across the moving window reproduce the Gaussian tail factor.
    let law = binary_law(1.0);
    let cfg = SimConfig::new(bm(0.5), law, 0.25, 16.0, 9).unwrap();
    let ws = [-0.25, 0.0, 0.25];
    let mut ests = Vec::new();
    for &w in &ws {
        let threshold = 0.5 * 16.0 + w * 4.0;
        ests.push(estimate_mt_tail(&cfg, 1.0, 16.0, threshold, 1_600_000).unwrap());
    }
    detail.push_str(" positive mean t=16:");
    for (i, w) in [(0usize, -0.25f64), (2, 0.25)] {
        let ratio = ests[i].mean / ests[1].mean;
        let factor = phi_bar(w) / phi_bar(0.0);
        let dev = (ratio / factor - 1.0).abs();
        ok &= dev < 0.15;
        detail.push_str(&format!(
            " y={w} ratio {ratio:.3} vs {factor:.3} ({:+.1}%);",
            100.0 * (ratio / factor - 1.0)
        ));
    }
    conclude(9, ok, &detail);
}

#[test]
fn criterion_10_yaglom_limits() {
    // Zero mean: maximum over sqrt(t) given survival vs the Rayleigh CDF.
    let cfg = SimConfig::new(bm(0.0), sparse_law(0.05), 0.25, 64.0, 10).unwrap();
    let mut scaled: Vec<f64> =
        yaglom_samples(&cfg, 1.0, 64.0, 2000).unwrap().iter().map(|m| m / 8.0).collect();
    scaled.sort_by(f64::total_cmp);
    let ks1 = ks_statistic(&scaled, |p| {
        yaglom_limit_cdf(MeanRegime::ZeroMean, 1.0, p).unwrap()
    })
    .unwrap();

    // Positive mean: centered and scaled maximum vs the Gaussian CDF. The
    // window forms slowly, so the branch rate is dropped to keep survival
    // affordable at a time large enough for the O(1/sqrt t) shift to fade.
    let cfg = SimConfig::new(bm(0.5), sparse_law(0.005), 0.25, 900.0, 10).unwrap();
    let mut scaled: Vec<f64> = yaglom_samples(&cfg, 1.0, 900.0, 2000)
        .unwrap()
        .iter()
        .map(|m| (m - 0.5 * 900.0) / 30.0)
        .collect();
    scaled.sort_by(f64::total_cmp);
    let ks2 = ks_statistic(&scaled, |p| {
        yaglom_limit_cdf(MeanRegime::PositiveMean, 1.0, p).unwrap()
    })
    .unwrap();

    // Negative mean: no normalization; the conditional law must be stable
    // between t=20 and t=30.
    let cfg = SimConfig::new(bm(-0.5), sparse_law(0.005), 0.25, 30.0, 10).unwrap();
    let a = yaglom_samples(&cfg, 2.0, 20.0, 5000).unwrap();
    let b = yaglom_samples(&cfg, 2.0, 30.0, 5000).unwrap();
    let ks3 = ks_two_sample(&a, &b).unwrap();

    let ok = ks1 < 0.05 && ks2 < 0.05 && ks3 < 0.07;
    conclude(
        10,
        ok,
        &format!(
            "conditional limits: Rayleigh KS {ks1:.4} (<0.05), Gaussian KS {ks2:.4} (<0.05), \
             stability KS {ks3:.4} (<0.07)"
        ),
    );
}

#[test]
fn criterion_11_negative_drift_machinery() {
    let model = bm(-1.0);
    // Importance-sampled scaled survival of the killed path against the
    // renewal-assembled limit form.
    let rep = conditioned_negdrift_check(&model, 1.0, 30.0, 0.0, 800_000, 0.25, 7, 0x7011)
        .unwrap();
    let ratio = rep.scaled_estimate.mean / rep.rhs;
    let mut ok = (0.85..=1.15).contains(&ratio);

    // Tail constant at threshold zero: sandwich bounds hold and the two
    // entry points agree exactly on the same inputs.
    let law = binary_law(1.0);
    let zg = default_z_grid(&model, 33).unwrap();
    let c0 = estimate_c0(&model, &law, 8.0, &zg, 2_000, 0.25, 11).unwrap();
    let c1 = estimate_c1(&model, &law, 0.0, 8.0, &zg, 2_000, 0.25, 11).unwrap();
    ok &= c0.sandwich_holds(3.5);
    ok &= c0.estimate.mean == c1.estimate.mean && c0.estimate.se == c1.estimate.se;
    conclude(
        11,
        ok,
        &format!(
            "negative drift: path-scaling ratio {ratio:.3} (in [0.85,1.15]), tail constant \
             {:.4} in [{:.4}, {:.4}] sandwich, threshold-zero entry points identical",
            c0.estimate.mean, c0.lower_bound.mean, c0.upper_bound.mean
        ),
    );
}

#[test]
fn criterion_12_alltime_tail_slope() {
    let started = Instant::now();
    let law = binary_law(1.0);
    let model = bm(0.0);
    let cfg = SimConfig::new(model.clone(), law.clone(), 0.25, 50.0, 47).unwrap();
    let ys = [2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0];
    let profile = estimate_alltime_tail_profile(&cfg, 1.0, &ys, 1_000_000).unwrap();
    // The scaled tail still drifts over the near thresholds at reachable
    // sample sizes, so the decay rate is read off the four largest ones.
    let pts: Vec<(f64, f64, f64)> = ys
        .iter()
        .zip(&profile)
        .skip(3)
        .map(|(y, e)| (*y, e.mean.ln(), 0.0))
        .collect();
    let fit = tail_slope_fit(&pts).unwrap();
    let rate = 0.4f64.sqrt();
    let slope_dev = (fit.slope + rate).abs() / rate;
    let mut ok = slope_dev < 0.07;

    let pred = alltime_limit(&model, &law, 1.0, &LimitBudget::new(47)).unwrap();
    let Constant::Interval { lower, upper } = pred.constant else {
        panic!("expected an interval constant for the all-time tail");
    };
    let prefactor = fit.intercept.exp();
    ok &= (lower..=upper).contains(&prefactor);
    conclude(
        12,
        ok,
        &format!(
            "all-time tail: slope {:.4} vs -{rate:.4} ({:.1}% dev, tol 7%), prefactor \
             {prefactor:.3} in [{lower:.3}, {upper:.3}], {:.0}s",
            fit.slope,
            100.0 * slope_dev,
            started.elapsed().as_secs_f64()
        ),
    );
}

#[test]
fn criterion_13_single_path_representation() {
    // Pure-death law: the weight term vanishes, so the representation must
    // reproduce the killed-path Gaussian closed form.
    let law = OffspringLaw::new(vec![1.0], 0.5).unwrap();
    let cfg = SimConfig::new(bm(0.0), law, 0.25, 4.0, 13).unwrap();
    let xs: Vec<f64> = (1..=12).map(|i| 0.25 * i as f64).collect();
    let ts: Vec<f64> = (0..=8).map(|j| 0.25 * j as f64).collect();
    let y = 0.5;
    let table = feynman_kac_rhs(&cfg, &xs, &ts, y, 3000).unwrap();
    let mut ok = true;
    let mut detail = String::from("path representation, exact case:");
    for (x, t) in [(1.0, 1.0), (2.0, 2.0), (0.5, 1.5)] {
        let (v, se) = table.cell(x, t).unwrap();
        let rt = t.sqrt();
        let exact =
            (-0.5 * t).exp() * (phi_bar((y - x) / rt) - phi_bar((y + x) / rt));
        ok &= (v - exact).abs() <= 3.5 * se;
        detail.push_str(&format!(" ({x},{t}) {:.1}se;", (v - exact).abs() / se));
    }

    // Branching law on a 10x10 grid: spot cells against direct tree
    // simulation.
    let cfg = SimConfig::new(bm(0.0), binary_law(1.0), 0.25, 2.25, 13).unwrap();
    let xs: Vec<f64> = (1..=10).map(|i| 0.5 * i as f64).collect();
    let ts: Vec<f64> = (0..=9).map(|j| 0.25 * j as f64).collect();
    let y = 0.25;
    let table = feynman_kac_rhs(&cfg, &xs, &ts, y, 3000).unwrap();
    detail.push_str(" branching spots:");
    for (x, t) in [(1.0, 1.0), (1.5, 1.5), (2.0, 2.0)] {
        let (v, se) = table.cell(x, t).unwrap();
        let tree = estimate_mt_tail(&cfg, x, t, y, 40_000).unwrap();
        let comb = (se * se + tree.se * tree.se).sqrt();
        ok &= (v - tree.mean).abs() <= 3.5 * comb;
        detail.push_str(&format!(" ({x},{t}) {:.1}se;", (v - tree.mean).abs() / comb));
    }
    conclude(13, ok, &detail);
}

#[test]
fn criterion_14_worker_count_invariance() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("spec.json");
    std::fs::write(
        &config,
        r#"{"schema_version":1,"kind":"survival",
           "model":{"drift":0.5,"gaussian_var":1.0},
           "law":{"p":[0.6,0,0.4],"beta":1.0},
           "x":1.0,"t_grid":[1,2],"n":500,"seed":31415}"#,
    )
    .unwrap();
    let mut outputs = Vec::new();
    for workers in ["1", "4"] {
        let out = dir.path().join(format!("out{workers}"));
        let status = std::process::Command::new(env!("CARGO_BIN_EXE_bkl"))
            .args(["run", "--config"])
            .arg(&config)
            .arg("--out")
            .arg(&out)
            .args(["--workers", workers])
            .status()
            .unwrap();
        assert!(status.success(), "run with {workers} workers failed");
        outputs.push(std::fs::read(out.join("survival.csv")).unwrap());
    }
    let ok = outputs[0] == outputs[1];
    conclude(
        14,
        ok,
        &format!(
            "determinism: workers 1 vs 4 emit {} CSV bytes, byte-identical: {ok}",
            outputs[0].len()
        ),
    );
}
