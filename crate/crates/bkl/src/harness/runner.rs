//! Experiment dispatch. `run` builds the owning module's inputs from an
//! [`ExperimentSpec`], executes it, and writes `<kind>.csv` plus
//! `<kind>_summary.json` into the output directory. Monte Carlo tables share
//! the header (x, t, y, estimate, se, n, capped_fraction, ...) and every row
//! ends with the seed and the spec hash; probabilities are emitted alongside
//! their theorem-scaled versions so convergence can be read off directly.
//!
//! Per-kind defaults when the spec omits them: `step` is 0.25 for tree kinds
//! (sim, survival, mt_tail, alltime, yaglom, fk; snapshot draws are
//! bridge-exact, so only passage timestamps feel the step), 1e-3 for path
//! kinds (exit, renewal) and 0.05 for cond; `horizon` is the largest grid
//! time where one exists, 10/alpha for alltime, and 1e4 for exit/renewal.
//!
//! Threshold conventions: mt_tail reads `y_grid` in the regime's own window
//! (y√t around 0 for zero mean, mean·t + y√t for positive, fixed height for
//! negative) and reports the absolute threshold per row. Yaglom rows are
//! conditioned samples, not estimates: `estimate` holds the raw sample, `n`
//! its 1-based index, `scaled_estimate` the normalized sample and
//! `predicted` the limit CDF there when the regime has one. Sim rows are
//! per-replica records in (replica, quantity, arg, value) long form.

use crate::asymptotics::{
    alltime_limit, mean_regime, mt_tail_limit, survival_limit, yaglom_limit_cdf, LimitBudget,
    LimitPrediction, MeanRegime,
};
use crate::branching_law::OffspringLaw;
use crate::error::{BklError, Result};
use crate::fluctuation::{
    conditioned_negdrift_check, conditioned_rayleigh_check, exit_up_mc, renewal_r, PathConfig,
    ScaleFunction,
};
use crate::harness::config::{ExperimentKind, ExperimentSpec, SCHEMA_VERSION};
use crate::harness::mc::replica_rng;
use crate::harness::stats::{ks_statistic, McEstimate};
use crate::levy_models::LevyModel;
use crate::particle_sim::{
    estimate_alltime_tail_profile, estimate_mt_tail, estimate_survival, feynman_kac_rhs,
    simulate, yaglom_samples, SimConfig,
};
use serde_json::json;
use std::path::{Path, PathBuf};

const DEFAULT_TREE_STEP: f64 = 0.25;
const DEFAULT_PATH_STEP: f64 = 1e-3;
const DEFAULT_COND_STEP: f64 = 0.05;
const DEFAULT_PATH_HORIZON: f64 = 1e4;
const DEFAULT_ODE_STEP: f64 = 1e-3;
const C_SUB_TOL: f64 = 1e-10;
const CAPPED_WARN: f64 = 0.01;
// Top-edge cells of a backward table always clamp some lookups, so the fk
// threshold is far looser than the path-capping one.
const FK_CLAMP_WARN: f64 = 0.25;

// Runner-owned salt block, disjoint from the module-internal families.
const SALT_EXIT: u32 = 0x3000;
const SALT_RENEWAL: u32 = 0x3100;
const SALT_COND: u32 = 0x3200;
const SALT_SIM: u32 = 0x3300;

/// Where one run wrote its outputs and what it wants surfaced.
#[derive(Debug)]
pub struct RunReport {
    pub kind: ExperimentKind,
    pub spec_hash: String,
    pub csv_path: PathBuf,
    pub summary_path: PathBuf,
    pub n_rows: usize,
    pub warnings: Vec<String>,
    /// CSV text echoed to stdout for table-sized outputs.
    pub echo: Option<String>,
}

const ECHO_ROW_LIMIT: usize = 500;

struct Table {
    header: Vec<&'static str>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn new(header: Vec<&'static str>) -> Self {
        Table { header, rows: Vec::new() }
    }

    fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    fn bytes(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)
            .and_then(|_| self.rows.iter().try_for_each(|r| w.write_record(r)))
            .map_err(|e| BklError::config(format!("csv encoding failed: {e}")))?;
        w.into_inner().map_err(|e| BklError::config(format!("csv encoding failed: {e}")))
    }
}

fn f(v: f64) -> String {
    format!("{v}")
}

fn opt(v: Option<f64>) -> String {
    v.map(f).unwrap_or_default()
}

fn mc_header() -> Vec<&'static str> {
    vec![
        "x",
        "t",
        "y",
        "estimate",
        "se",
        "n",
        "capped_fraction",
        "scaled_estimate",
        "scaled_se",
        "predicted",
        "seed",
        "spec_hash",
    ]
}

#[allow(clippy::too_many_arguments)]
fn mc_row(
    x: Option<f64>,
    t: Option<f64>,
    y: Option<f64>,
    est: &McEstimate,
    scale_factor: Option<f64>,
    predicted: Option<f64>,
    seed: u64,
    hash: &str,
) -> Vec<String> {
    vec![
        opt(x),
        opt(t),
        opt(y),
        f(est.mean),
        f(est.se),
        est.n.to_string(),
        f(est.capped_fraction),
        opt(scale_factor.map(|c| c * est.mean)),
        opt(scale_factor.map(|c| c * est.se)),
        opt(predicted),
        seed.to_string(),
        hash.to_string(),
    ]
}

struct Ctx<'a> {
    spec: &'a ExperimentSpec,
    hash: String,
    warnings: Vec<String>,
}

impl<'a> Ctx<'a> {
    fn need<T>(&self, v: &'a Option<T>, what: &str) -> Result<&'a T> {
        v.as_ref().ok_or_else(|| {
            BklError::config(format!("{} spec needs \"{what}\"", self.spec.kind))
        })
    }

    fn model(&self) -> Result<LevyModel> {
        self.need(&self.spec.model, "model")?.build()
    }

    fn law(&self) -> Result<OffspringLaw> {
        self.need(&self.spec.law, "law")?.build()
    }

    fn step(&self, default: f64) -> f64 {
        self.spec.step.unwrap_or(default)
    }

    fn warn(&mut self, msg: impl Into<String>) {
        self.warnings.push(msg.into());
    }

    fn warn_capped(&mut self, label: &str, est: &McEstimate) {
        if est.capped_fraction > CAPPED_WARN {
            self.warn(format!(
                "{label}: {:.1}% of replicas hit the time cap; the estimate is \
                 truncation-biased",
                100.0 * est.capped_fraction
            ));
        }
    }
}

/// Time normalization under which the survival/threshold probability
/// converges to its constant.
fn scaling_factor(regime: MeanRegime, alpha: f64, alpha_minus_psi_star: f64, t: f64) -> f64 {
    match regime {
        MeanRegime::ZeroMean => t.sqrt() * (alpha * t).exp(),
        MeanRegime::PositiveMean => (alpha * t).exp(),
        MeanRegime::NegativeMean => t.powf(1.5) * (alpha_minus_psi_star * t).exp(),
    }
}

/// Absolute threshold for the regime's window coordinate y at time t.
fn absolute_threshold(regime: MeanRegime, mean: f64, t: f64, y: f64) -> f64 {
    match regime {
        MeanRegime::ZeroMean => y * t.sqrt(),
        MeanRegime::PositiveMean => mean * t + y * t.sqrt(),
        MeanRegime::NegativeMean => y,
    }
}

fn prediction_rows(
    name: &str,
    p: &LimitPrediction,
    seed: u64,
    hash: &str,
    table: &mut Table,
) {
    let mut push = |quantity: &str, value: String| {
        table.push(vec![
            name.to_string(),
            quantity.to_string(),
            String::new(),
            value,
            seed.to_string(),
            hash.to_string(),
        ]);
    };
    push("regime", p.regime.as_str().to_string());
    push("scaling", p.scaling.clone());
    match p.constant {
        crate::asymptotics::Constant::Exact(v) => push("constant", f(v)),
        crate::asymptotics::Constant::Estimate { value, se } => {
            push("constant", f(value));
            push("constant_se", f(se));
        }
        crate::asymptotics::Constant::Interval { lower, upper } => {
            push("constant_lower", f(lower));
            push("constant_upper", f(upper));
        }
    }
    for (key, v) in &p.ingredients {
        push(key, f(*v));
    }
}

/// Execute one experiment and write its CSV and JSON summary into `out_dir`
/// (created if absent). The CSV bytes depend only on the spec, never on the
/// worker count.
pub fn run(spec: &ExperimentSpec, out_dir: &Path) -> Result<RunReport> {
    spec.validate()?;
    let mut ctx = Ctx { spec, hash: spec.hash(), warnings: Vec::new() };
    let (table, extras) = match spec.kind {
        ExperimentKind::Law => run_law(&mut ctx)?,
        ExperimentKind::Model => run_model(&mut ctx)?,
        ExperimentKind::Scale => run_scale(&mut ctx)?,
        ExperimentKind::Exit => run_exit(&mut ctx)?,
        ExperimentKind::Renewal => run_renewal(&mut ctx)?,
        ExperimentKind::Cond => run_cond(&mut ctx)?,
        ExperimentKind::Sim => run_sim(&mut ctx)?,
        ExperimentKind::Survival => run_survival(&mut ctx)?,
        ExperimentKind::MtTail => run_mt_tail(&mut ctx)?,
        ExperimentKind::Alltime => run_alltime(&mut ctx)?,
        ExperimentKind::Yaglom => run_yaglom(&mut ctx)?,
        ExperimentKind::Fk => run_fk(&mut ctx)?,
        ExperimentKind::Constants => run_constants(&mut ctx)?,
        ExperimentKind::Predict => run_predict(&mut ctx)?,
    };

    std::fs::create_dir_all(out_dir)?;
    let csv_path = out_dir.join(format!("{}.csv", spec.kind));
    let summary_path = out_dir.join(format!("{}_summary.json", spec.kind));
    let csv_bytes = table.bytes()?;
    std::fs::write(&csv_path, &csv_bytes)?;

    let summary = json!({
        "schema_version": SCHEMA_VERSION,
        "kind": spec.kind.as_str(),
        "spec_hash": ctx.hash,
        "seed": spec.seed,
        "csv": csv_path.file_name().and_then(|s| s.to_str()),
        "n_rows": table.rows.len(),
        "warnings": ctx.warnings,
        "results": extras,
    });
    std::fs::write(&summary_path, serde_json::to_string_pretty(&summary)?)?;

    let echo = (table.rows.len() <= ECHO_ROW_LIMIT)
        .then(|| String::from_utf8_lossy(&csv_bytes).into_owned());
    Ok(RunReport {
        kind: spec.kind,
        spec_hash: ctx.hash,
        csv_path,
        summary_path,
        n_rows: table.rows.len(),
        warnings: ctx.warnings,
        echo,
    })
}

fn quantity_header() -> Vec<&'static str> {
    vec!["quantity", "arg", "value", "seed", "spec_hash"]
}

fn run_law(ctx: &mut Ctx) -> Result<(Table, serde_json::Value)> {
    let law = ctx.law()?;
    let spec = ctx.spec;
    let u_grid: Vec<f64> = match &spec.z_grid {
        Some(g) => {
            if g.iter().any(|u| !(0.0 < *u && *u <= 1.0)) {
                return Err(BklError::config(
                    "law z_grid holds generating-function arguments and must lie in (0, 1]",
                ));
            }
            g.clone()
        }
        None => (1..=100).map(|i| i as f64 / 100.0).collect(),
    };
    let t_grid = spec.t_grid.clone().unwrap_or_else(|| vec![1.0, 2.0, 4.0, 8.0, 16.0, 32.0]);
    let ode_step = ctx.step(DEFAULT_ODE_STEP);
    let alpha = law.alpha();
    let c_sub = law.c_sub(C_SUB_TOL)?;

    let mut table = Table::new(quantity_header());
    let seed = spec.seed.to_string();
    let mut push = |quantity: &str, arg: String, value: f64| {
        table.push(vec![quantity.to_string(), arg, f(value), seed.clone(), ctx.hash.clone()]);
    };
    push("m", String::new(), law.mean());
    push("alpha", String::new(), alpha);
    push("c_sub", String::new(), c_sub);
    for u in &u_grid {
        push("big_phi", f(*u), law.big_phi(*u)?);
        push("small_phi", f(*u), law.small_phi(*u)?);
    }
    for t in &t_grid {
        let g = law.survival_g(*t, ode_step)?;
        push("g", f(*t), g);
        push("scaled_g", f(*t), (alpha * t).exp() * g);
    }
    let extras = json!({"m": law.mean(), "alpha": alpha, "c_sub": c_sub});
    Ok((table, extras))
}

fn run_model(ctx: &mut Ctx) -> Result<(Table, serde_json::Value)> {
    let model = ctx.model()?;
    let spec = ctx.spec;
    let lambda_grid: Vec<f64> = match &spec.z_grid {
        Some(g) => g.clone(),
        None => {
            let (lo, hi) = model.strip();
            let (lo, hi) = (lo.max(-3.0), hi.min(3.0));
            (0..25).map(|i| lo + (i as f64 + 0.5) * (hi - lo) / 25.0).collect()
        }
    };
    let q_grid = spec.y_grid.clone().unwrap_or_else(|| vec![0.0, 0.1, 0.2, 0.5, 1.0]);

    let mut table = Table::new(quantity_header());
    let seed = spec.seed.to_string();
    let hash = ctx.hash.clone();
    let mut push = |quantity: &str, arg: String, value: f64| {
        table.push(vec![quantity.to_string(), arg, f(value), seed.clone(), hash.clone()]);
    };
    push("mean", String::new(), model.mean());
    push("variance", String::new(), model.variance());
    push("spectrally_negative", String::new(), model.spectrally_negative() as u8 as f64);
    let lambda_star = if model.mean() < 0.0 { model.lambda_star().ok() } else { None };
    if let Some(ls) = lambda_star {
        push("lambda_star", String::new(), ls);
        push("psi_lambda_star", String::new(), model.psi(ls)?);
    }
    for l in &lambda_grid {
        push("psi", f(*l), model.psi(*l)?);
        push("psi_d1", f(*l), model.psi_d1(*l)?);
        push("psi_d2", f(*l), model.psi_d2(*l)?);
    }
    for q in &q_grid {
        match model.right_inverse(*q) {
            Ok(v) => push("right_inverse", f(*q), v),
            Err(e) => ctx.warn(format!("right_inverse({q}): {e}")),
        }
    }
    let extras = json!({
        "mean": model.mean(),
        "variance": model.variance(),
        "spectrally_negative": model.spectrally_negative(),
        "lambda_star": lambda_star,
    });
    Ok((table, extras))
}

fn run_scale(ctx: &mut Ctx) -> Result<(Table, serde_json::Value)> {
    let model = ctx.model()?;
    let spec = ctx.spec;
    let q = *ctx.need(&spec.q, "q")?;
    let x_grid = ctx.need(&spec.x_grid, "x_grid")?;
    let sf = ScaleFunction::new(model, q)?;
    let prefactor = sf.asymptote_prefactor();

    let mut table = Table::new(quantity_header());
    let seed = spec.seed.to_string();
    let hash = ctx.hash.clone();
    let mut push = |quantity: &str, arg: String, value: f64| {
        table.push(vec![quantity.to_string(), arg, f(value), seed.clone(), hash.clone()]);
    };
    push("psi_q", String::new(), sf.tilt_rate());
    for x in x_grid {
        let w = sf.w(*x)?;
        push("w", f(*x), w);
        if prefactor.is_finite() && *x > 0.0 {
            push("asymptote_ratio", f(*x), w * (-sf.tilt_rate() * x).exp() / prefactor);
        }
    }
    let extras = json!({"q": q, "psi_q": sf.tilt_rate()});
    Ok((table, extras))
}

fn run_exit(ctx: &mut Ctx) -> Result<(Table, serde_json::Value)> {
    let model = ctx.model()?;
    let spec = ctx.spec;
    let x = *ctx.need(&spec.x, "x")?;
    let y = *ctx.need(&spec.y, "y")?;
    let q = *ctx.need(&spec.q, "q")?;
    let n = *ctx.need(&spec.n, "n")?;
    let cfg = PathConfig::new(
        ctx.step(DEFAULT_PATH_STEP),
        spec.horizon.unwrap_or(DEFAULT_PATH_HORIZON),
    )?;
    let est = exit_up_mc(&model, x, y, q, &cfg, n, spec.seed, SALT_EXIT)?;
    ctx.warn_capped("exit", &est);
    let predicted = ScaleFunction::new(model, q)?.exit_up(x, y)?;

    let mut table = Table::new(mc_header());
    table.push(mc_row(
        Some(x),
        None,
        Some(y),
        &est,
        Some(1.0 / predicted),
        Some(predicted),
        spec.seed,
        &ctx.hash,
    ));
    let extras = json!({"predicted": predicted, "estimate": est.mean, "se": est.se});
    Ok((table, extras))
}

fn run_renewal(ctx: &mut Ctx) -> Result<(Table, serde_json::Value)> {
    let model = ctx.model()?;
    let spec = ctx.spec;
    let x_grid = ctx.need(&spec.x_grid, "x_grid")?;
    let n = *ctx.need(&spec.n, "n")?;
    let cfg = PathConfig::new(
        ctx.step(DEFAULT_PATH_STEP),
        spec.horizon.unwrap_or(DEFAULT_PATH_HORIZON),
    )?;
    // R(x) = x exactly for a driftless Brownian motion; other zero-mean
    // models get the MC value with no closed-form column.
    let bm_exact = model.jumps.is_empty() && model.drift == 0.0;

    let mut table = Table::new(mc_header());
    for (i, x) in x_grid.iter().enumerate() {
        let est = renewal_r(&model, *x, &cfg, n, spec.seed, SALT_RENEWAL + i as u32)?;
        ctx.warn_capped(&format!("renewal at x={x}"), &est);
        table.push(mc_row(
            Some(*x),
            None,
            None,
            &est,
            Some(1.0 / x),
            bm_exact.then_some(*x),
            spec.seed,
            &ctx.hash,
        ));
    }
    let extras = json!({"bm_exact": bm_exact});
    Ok((table, extras))
}

fn run_cond(ctx: &mut Ctx) -> Result<(Table, serde_json::Value)> {
    let model = ctx.model()?;
    let spec = ctx.spec;
    let x = *ctx.need(&spec.x, "x")?;
    let t = *ctx.need(&spec.t, "t")?;
    let n = *ctx.need(&spec.n, "n")?;
    let step = ctx.step(DEFAULT_COND_STEP);

    let mut table = Table::new(mc_header());
    let extras = match mean_regime(&model) {
        MeanRegime::ZeroMean => {
            let a_grid =
                spec.y_grid.clone().unwrap_or_else(|| vec![0.5, 1.0, 1.5, 2.0, 2.5]);
            let report = conditioned_rayleigh_check(
                &model, x, t, &a_grid, n, step, spec.seed, SALT_COND,
            )?;
            for (i, a) in report.a_grid.iter().enumerate() {
                let est = &report.scaled_estimates[i];
                ctx.warn_capped(&format!("cond at a={a}"), est);
                table.push(mc_row(
                    Some(x),
                    Some(t),
                    Some(*a),
                    est,
                    None,
                    Some(report.limit_values[i]),
                    spec.seed,
                    &ctx.hash,
                ));
            }
            json!({
                "regime": "zero_mean",
                "ks": report.ks,
                "n_survivors": report.n_survivors,
                "renewal_x": {"mean": report.renewal.mean, "se": report.renewal.se},
            })
        }
        MeanRegime::NegativeMean => {
            let y = spec.y.unwrap_or(0.0);
            let report =
                conditioned_negdrift_check(&model, x, t, y, n, step, spec.seed, SALT_COND)?;
            table.push(mc_row(
                Some(x),
                Some(t),
                Some(y),
                &report.scaled_estimate,
                None,
                Some(report.rhs),
                spec.seed,
                &ctx.hash,
            ));
            json!({
                "regime": "negative_mean",
                "rhs": report.rhs,
                "rhs_se": report.rhs_se,
                "lambda_star": report.lambda_star,
                "n_survivors": report.n_survivors,
                "r_star_x": {"mean": report.r_star_x.mean, "se": report.r_star_x.se},
            })
        }
        MeanRegime::PositiveMean => {
            return Err(BklError::precondition(
                "cond checks the zero- and negative-mean conditioned limits; a \
                 positive-mean path survives with positive probability (see survival)",
            ))
        }
    };
    Ok((table, extras))
}

fn run_sim(ctx: &mut Ctx) -> Result<(Table, serde_json::Value)> {
    let model = ctx.model()?;
    let law = ctx.law()?;
    let spec = ctx.spec;
    let x = *ctx.need(&spec.x, "x")?;
    let n = *ctx.need(&spec.n, "n")?;
    let horizon = *ctx.need(&spec.horizon, "horizon")?;
    let checkpoints = spec.t_grid.clone().unwrap_or_default();
    let cfg = SimConfig::new(model, law, ctx.step(DEFAULT_TREE_STEP), horizon, spec.seed)?
        .with_checkpoints(checkpoints.clone())?;

    let mut table =
        Table::new(vec!["replica", "quantity", "arg", "value", "seed", "spec_hash"]);
    let seed = spec.seed.to_string();
    let mut n_capped = 0u64;
    let mut n_extinct = 0u64;
    for i in 0..n {
        let mut rng = replica_rng(spec.seed, SALT_SIM, i);
        let out = simulate(&cfg, x, &mut rng)?;
        n_capped += out.capped as u64;
        n_extinct += out.extinction_time.is_some() as u64;
        let mut push = |quantity: &str, arg: String, value: String| {
            table.push(vec![
                i.to_string(),
                quantity.to_string(),
                arg,
                value,
                seed.clone(),
                ctx.hash.clone(),
            ]);
        };
        push("extinction_time", String::new(), opt(out.extinction_time));
        push("alltime_max", String::new(), f(out.alltime_max));
        push("capped", String::new(), (out.capped as u8).to_string());
        for (j, tc) in checkpoints.iter().enumerate() {
            push("alive_count", f(*tc), out.alive_counts[j].to_string());
            push("running_max", f(*tc), f(out.running_max[j]));
        }
    }
    let extras = json!({"n_trees": n, "n_capped": n_capped, "n_extinct": n_extinct});
    Ok((table, extras))
}

/// The survival/mt-tail normalization ingredients for the model's regime.
fn regime_scaling(model: &LevyModel, law: &OffspringLaw) -> Result<(MeanRegime, f64, f64)> {
    let regime = mean_regime(model);
    let alpha = law.alpha();
    let alpha_minus_psi_star = match regime {
        MeanRegime::NegativeMean => alpha - model.psi(model.lambda_star()?)?,
        _ => alpha,
    };
    Ok((regime, alpha, alpha_minus_psi_star))
}

fn run_survival(ctx: &mut Ctx) -> Result<(Table, serde_json::Value)> {
    let model = ctx.model()?;
    let law = ctx.law()?;
    let spec = ctx.spec;
    let x = *ctx.need(&spec.x, "x")?;
    let t_grid = ctx.need(&spec.t_grid, "t_grid")?;
    let n = *ctx.need(&spec.n, "n")?;
    let horizon = spec.horizon.unwrap_or_else(|| *t_grid.last().expect("validated non-empty"));
    let cfg =
        SimConfig::new(model.clone(), law.clone(), ctx.step(DEFAULT_TREE_STEP), horizon, spec.seed)?;
    let (regime, alpha, amps) = regime_scaling(&model, &law)?;

    let prediction = match survival_limit(&model, &law, x, &LimitBudget::new(spec.seed)) {
        Ok(p) => Some(p),
        Err(e) => {
            ctx.warn(format!("no survival prediction: {e}"));
            None
        }
    };
    let predicted = prediction.as_ref().map(|p| p.constant.value());

    let mut table = Table::new(mc_header());
    for t in t_grid {
        let est = estimate_survival(&cfg, x, *t, n)?;
        ctx.warn_capped(&format!("survival at t={t}"), &est);
        table.push(mc_row(
            Some(x),
            Some(*t),
            None,
            &est,
            Some(scaling_factor(regime, alpha, amps, *t)),
            predicted,
            spec.seed,
            &ctx.hash,
        ));
    }
    let extras = json!({"prediction": prediction});
    Ok((table, extras))
}

fn run_mt_tail(ctx: &mut Ctx) -> Result<(Table, serde_json::Value)> {
    let model = ctx.model()?;
    let law = ctx.law()?;
    let spec = ctx.spec;
    let x = *ctx.need(&spec.x, "x")?;
    let t_grid = ctx.need(&spec.t_grid, "t_grid")?;
    let y_grid = ctx.need(&spec.y_grid, "y_grid")?;
    let n = *ctx.need(&spec.n, "n")?;
    let horizon = spec.horizon.unwrap_or_else(|| *t_grid.last().expect("validated non-empty"));
    let cfg =
        SimConfig::new(model.clone(), law.clone(), ctx.step(DEFAULT_TREE_STEP), horizon, spec.seed)?;
    let (regime, alpha, amps) = regime_scaling(&model, &law)?;
    let mean = model.mean();

    // One limit prediction per window coordinate; it does not depend on t.
    let budget = LimitBudget::new(spec.seed);
    let mut predictions = Vec::with_capacity(y_grid.len());
    for y in y_grid {
        match mt_tail_limit(&model, &law, x, *y, &budget) {
            Ok(p) => predictions.push(Some(p)),
            Err(e) => {
                ctx.warn(format!("no threshold prediction at y={y}: {e}"));
                predictions.push(None);
            }
        }
    }

    let mut table = Table::new(mc_header());
    for t in t_grid {
        let factor = scaling_factor(regime, alpha, amps, *t);
        for (j, y) in y_grid.iter().enumerate() {
            let est = estimate_mt_tail(&cfg, x, *t, absolute_threshold(regime, mean, *t, *y), n)?;
            ctx.warn_capped(&format!("mt_tail at t={t}, y={y}"), &est);
            table.push(mc_row(
                Some(x),
                Some(*t),
                Some(*y),
                &est,
                Some(factor),
                predictions[j].as_ref().map(|p| p.constant.value()),
                spec.seed,
                &ctx.hash,
            ));
        }
    }
    let extras = json!({
        "predictions": y_grid
            .iter()
            .zip(&predictions)
            .map(|(y, p)| json!({"y": y, "prediction": p}))
            .collect::<Vec<_>>(),
    });
    Ok((table, extras))
}

fn run_alltime(ctx: &mut Ctx) -> Result<(Table, serde_json::Value)> {
    let model = ctx.model()?;
    let law = ctx.law()?;
    let spec = ctx.spec;
    let x = *ctx.need(&spec.x, "x")?;
    let y_grid = ctx.need(&spec.y_grid, "y_grid")?;
    let n = *ctx.need(&spec.n, "n")?;
    let horizon = spec.horizon.unwrap_or(10.0 / law.alpha());
    let cfg =
        SimConfig::new(model.clone(), law.clone(), ctx.step(DEFAULT_TREE_STEP), horizon, spec.seed)?;

    let prediction = match alltime_limit(&model, &law, x, &LimitBudget::new(spec.seed)) {
        Ok(p) => Some(p),
        Err(e) => {
            ctx.warn(format!("no all-time prediction: {e}"));
            None
        }
    };
    let psi_alpha = model.right_inverse(law.alpha()).ok();
    let (lower, upper) = match prediction.as_ref().map(|p| &p.constant) {
        Some(crate::asymptotics::Constant::Interval { lower, upper }) => {
            (Some(*lower), Some(*upper))
        }
        Some(c) => (Some(c.value()), Some(c.value())),
        None => (None, None),
    };

    let profile = estimate_alltime_tail_profile(&cfg, x, y_grid, n)?;
    let mut table = Table::new(vec![
        "x",
        "t",
        "y",
        "estimate",
        "se",
        "n",
        "capped_fraction",
        "scaled_estimate",
        "scaled_se",
        "predicted_lower",
        "predicted_upper",
        "seed",
        "spec_hash",
    ]);
    for (y, est) in y_grid.iter().zip(&profile) {
        ctx.warn_capped(&format!("alltime at y={y}"), est);
        let factor = psi_alpha.map(|pa| (pa * y).exp());
        table.push(vec![
            f(x),
            String::new(),
            f(*y),
            f(est.mean),
            f(est.se),
            est.n.to_string(),
            f(est.capped_fraction),
            opt(factor.map(|c| c * est.mean)),
            opt(factor.map(|c| c * est.se)),
            opt(lower),
            opt(upper),
            spec.seed.to_string(),
            ctx.hash.clone(),
        ]);
    }
    let extras = json!({"prediction": prediction, "psi_alpha": psi_alpha});
    Ok((table, extras))
}

fn run_yaglom(ctx: &mut Ctx) -> Result<(Table, serde_json::Value)> {
    let model = ctx.model()?;
    let law = ctx.law()?;
    let spec = ctx.spec;
    let x = *ctx.need(&spec.x, "x")?;
    let t = *ctx.need(&spec.t, "t")?;
    let n_conditioned = *ctx.need(&spec.n_conditioned, "n_conditioned")?;
    let horizon = spec.horizon.unwrap_or(t);
    let cfg =
        SimConfig::new(model.clone(), law.clone(), ctx.step(DEFAULT_TREE_STEP), horizon, spec.seed)?;

    let regime = mean_regime(&model);
    let sigma = model.variance().sqrt();
    let mean = model.mean();
    let normalize = |m: f64| match regime {
        MeanRegime::ZeroMean => m / t.sqrt(),
        MeanRegime::PositiveMean => (m - mean * t) / t.sqrt(),
        MeanRegime::NegativeMean => m,
    };
    let limit_cdf = |p: f64| yaglom_limit_cdf(regime, sigma, p).ok();

    let samples = yaglom_samples(&cfg, x, t, n_conditioned)?;
    let mut table = Table::new(mc_header());
    for (i, m) in samples.iter().enumerate() {
        let scaled = normalize(*m);
        table.push(vec![
            f(x),
            f(t),
            String::new(),
            f(*m),
            String::new(),
            (i + 1).to_string(),
            String::new(),
            f(scaled),
            String::new(),
            opt(limit_cdf(scaled)),
            spec.seed.to_string(),
            ctx.hash.clone(),
        ]);
    }

    let ks = if matches!(regime, MeanRegime::NegativeMean) {
        None
    } else {
        let mut scaled: Vec<f64> = samples.iter().map(|m| normalize(*m)).collect();
        scaled.sort_by(|a, b| a.partial_cmp(b).expect("finite samples"));
        Some(ks_statistic(&scaled, |p| {
            yaglom_limit_cdf(regime, sigma, p).expect("closed-form regime")
        })?)
    };
    let extras = json!({
        "regime": regime.as_str(),
        "sigma": sigma,
        "n_samples": samples.len(),
        "ks_against_limit": ks,
    });
    Ok((table, extras))
}

fn run_fk(ctx: &mut Ctx) -> Result<(Table, serde_json::Value)> {
    let model = ctx.model()?;
    let law = ctx.law()?;
    let spec = ctx.spec;
    let x_grid = ctx.need(&spec.x_grid, "x_grid")?;
    let t_grid = ctx.need(&spec.t_grid, "t_grid")?;
    let y = *ctx.need(&spec.y, "y")?;
    let n = *ctx.need(&spec.n, "n")?;
    let horizon = spec.horizon.unwrap_or_else(|| *t_grid.last().expect("validated non-empty"));
    let cfg =
        SimConfig::new(model, law, ctx.step(DEFAULT_TREE_STEP), horizon, spec.seed)?;

    let fk = feynman_kac_rhs(&cfg, x_grid, t_grid, y, n)?;
    if fk.clamped_fraction > FK_CLAMP_WARN {
        ctx.warn(format!(
            "fk: {:.1}% of path lookups clamped to the x-grid edge; widen x_grid",
            100.0 * fk.clamped_fraction
        ));
    }
    let mut table = Table::new(mc_header());
    for (j, t) in fk.ts.iter().enumerate() {
        for (i, x) in fk.xs.iter().enumerate() {
            table.push(vec![
                f(*x),
                f(*t),
                f(y),
                f(fk.values[j][i]),
                f(fk.ses[j][i]),
                fk.n_per_cell.to_string(),
                f(fk.clamped_fraction),
                String::new(),
                String::new(),
                String::new(),
                spec.seed.to_string(),
                ctx.hash.clone(),
            ]);
        }
    }
    let extras = json!({"clamped_fraction": fk.clamped_fraction, "y": y});
    Ok((table, extras))
}

fn run_constants(ctx: &mut Ctx) -> Result<(Table, serde_json::Value)> {
    let model = ctx.model()?;
    let law = ctx.law()?;
    let spec = ctx.spec;
    let x = *ctx.need(&spec.x, "x")?;
    let prediction = alltime_limit(&model, &law, x, &LimitBudget::new(spec.seed))?;

    let mut table =
        Table::new(vec!["prediction", "quantity", "arg", "value", "seed", "spec_hash"]);
    prediction_rows("alltime", &prediction, spec.seed, &ctx.hash, &mut table);
    let extras = json!({"alltime": prediction});
    Ok((table, extras))
}

fn run_predict(ctx: &mut Ctx) -> Result<(Table, serde_json::Value)> {
    let model = ctx.model()?;
    let law = ctx.law()?;
    let spec = ctx.spec;
    let x = *ctx.need(&spec.x, "x")?;
    let budget = LimitBudget::new(spec.seed);

    let mut table =
        Table::new(vec!["prediction", "quantity", "arg", "value", "seed", "spec_hash"]);
    let survival = survival_limit(&model, &law, x, &budget)?;
    prediction_rows("survival", &survival, spec.seed, &ctx.hash, &mut table);

    let mt_tail = match spec.y {
        Some(y) => {
            let p = mt_tail_limit(&model, &law, x, y, &budget)?;
            prediction_rows("mt_tail", &p, spec.seed, &ctx.hash, &mut table);
            Some(p)
        }
        None => None,
    };
    let alltime = match alltime_limit(&model, &law, x, &budget) {
        Ok(p) => {
            prediction_rows("alltime", &p, spec.seed, &ctx.hash, &mut table);
            Some(p)
        }
        Err(e) => {
            ctx.warn(format!("no all-time prediction: {e}"));
            None
        }
    };
    let extras = json!({"survival": survival, "mt_tail": mt_tail, "alltime": alltime});
    Ok((table, extras))
}
