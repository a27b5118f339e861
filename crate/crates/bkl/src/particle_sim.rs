//! Tree simulation for the branching killed process. Whole trees are walked
//! particle by particle with exact exponential branch clocks chained through
//! the killed-path stepper, so survival indicators, checkpoint snapshots, and
//! maxima are exact in law at any substep size. On top of the walker sit tail
//! estimators for the running and all-time maxima, conditional sampling of
//! the maximum given survival, and the nonlinear expectation table.

use crate::branching_law::OffspringLaw;
use crate::error::{BklError, Result};
use crate::fluctuation::passage::{advance_to, PathState, SegmentEnd};
use crate::harness::mc::{mc_mean, mc_mean_vec, replica_rng};
use crate::harness::stats::McEstimate;
use crate::levy_models::LevyModel;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;

/// Salt for the shared tree walks behind the survival and running-max
/// estimators; sharing it makes the two estimators agree exactly at
/// threshold 0 and makes the running-max tail monotone in the threshold
/// replicate by replicate.
const SALT_TREES: u32 = 0x0101;
const SALT_ALLTIME: u32 = 0x0202;
const SALT_YAGLOM: u32 = 0x0303;
/// Base salt for the expectation table; each cell of the table offsets it by
/// the cell index, so the block [SALT_FK, SALT_FK + cells) is reserved.
const SALT_FK: u32 = 0x0400;

const DEFAULT_MAX_LIVE: usize = 1 << 20;
const DEFAULT_MAX_EVENTS: u64 = 1 << 26;

const YAGLOM_BATCH: u64 = 8192;
const YAGLOM_MIN_SCAN: u64 = 100_000;
const YAGLOM_MIN_RATE: f64 = 1e-6;
const YAGLOM_MAX_SCAN: u64 = 200_000_000;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

// Randomness is keyed by genealogy, not by processing order: each particle
// owns a stream derived from the tree key and its position in the family
// tree. Trees started from different points with a common caller stream then
// share every clock, increment, and offspring draw particle for particle,
// which makes survival monotone in the start replicate by replicate.
fn particle_rng(tree_key: u64, particle_key: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(tree_key ^ particle_key))
}

fn child_key(parent_key: u64, index: usize) -> u64 {
    splitmix64(parent_key.wrapping_add((index as u64 + 1).wrapping_mul(GOLDEN)))
}

/// Static description of a tree run: the spatial motion, the offspring law,
/// the Gaussian substep size, the time horizon, the checkpoint times at which
/// population snapshots are recorded, runaway caps, and the base seed used by
/// the estimators built on top.
#[derive(Debug, Clone)]
pub struct SimConfig {
    pub model: LevyModel,
    pub law: OffspringLaw,
    pub step: f64,
    pub horizon: f64,
    pub checkpoints: Vec<f64>,
    pub max_live: usize,
    pub max_events: u64,
    pub seed: u64,
}

impl SimConfig {
    pub fn new(
        model: LevyModel,
        law: OffspringLaw,
        step: f64,
        horizon: f64,
        seed: u64,
    ) -> Result<Self> {
        if !(step > 0.0 && step.is_finite()) {
            return Err(BklError::domain(format!(
                "substep must be positive and finite, got {step}"
            )));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(BklError::domain(format!(
                "horizon must be positive and finite, got {horizon}"
            )));
        }
        Ok(SimConfig {
            model,
            law,
            step,
            horizon,
            checkpoints: Vec::new(),
            max_live: DEFAULT_MAX_LIVE,
            max_events: DEFAULT_MAX_EVENTS,
            seed,
        })
    }

    pub fn with_checkpoints(mut self, checkpoints: Vec<f64>) -> Result<Self> {
        let sorted = checkpoints.windows(2).all(|w| w[0] <= w[1]);
        let in_range = checkpoints
            .iter()
            .all(|c| c.is_finite() && (0.0..=self.horizon).contains(c));
        if !(sorted && in_range) {
            return Err(BklError::precondition(
                "checkpoints must be sorted and lie within [0, horizon]",
            ));
        }
        self.checkpoints = checkpoints;
        Ok(self)
    }

    pub fn with_caps(mut self, max_live: usize, max_events: u64) -> Result<Self> {
        if max_live == 0 || max_events == 0 {
            return Err(BklError::precondition("caps must be positive"));
        }
        self.max_live = max_live;
        self.max_events = max_events;
        Ok(self)
    }
}

/// What one tree did: the extinction time when the whole tree died inside the
/// horizon, per-checkpoint maxima over particles alive at that instant (minus
/// infinity when none), per-checkpoint alive counts, the supremum over every
/// particle path walked, and whether a runaway cap cut the run short.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryOutcome {
    pub extinction_time: Option<f64>,
    pub running_max: Vec<f64>,
    pub alive_counts: Vec<u64>,
    pub alltime_max: f64,
    pub capped: bool,
}

/// Walk one tree started from a single particle at `x`. Each particle draws
/// an exponential death clock, moves along the killed path to the earlier of
/// that clock and the horizon while recording the checkpoints it spans, and
/// on a clock firing is replaced by its offspring at the death position.
/// The caller stream contributes one tree key; everything else comes from
/// genealogy-keyed particle streams. Exceeding a cap flags the outcome
/// instead of failing.
pub fn simulate<R: Rng + ?Sized>(
    config: &SimConfig,
    x: f64,
    rng: &mut R,
) -> Result<TrajectoryOutcome> {
    if !(x > 0.0 && x.is_finite()) {
        return Err(BklError::precondition(format!(
            "simulate needs a finite start above the barrier, got {x}"
        )));
    }
    let tree_key: u64 = rng.gen();
    let cps = &config.checkpoints;
    let ncp = cps.len();
    let mut running_max = vec![f64::NEG_INFINITY; ncp];
    let mut alive_counts = vec![0u64; ncp];
    let mut alltime_max = x;
    let mut last_death = 0.0f64;
    let mut alive_at_horizon = false;
    let mut capped = false;
    let mut events: u64 = 0;
    let beta = config.law.branch_rate;
    for (k, cp) in cps.iter().enumerate() {
        if *cp == 0.0 {
            alive_counts[k] = 1;
            running_max[k] = x;
        }
    }
    let mut stack: Vec<(f64, f64, u64)> = Vec::with_capacity(8);
    stack.push((0.0, x, GOLDEN));
    while let Some((birth_t, birth_pos, key)) = stack.pop() {
        let prng = &mut particle_rng(tree_key, key);
        let mut state = PathState {
            t: birth_t,
            pos: birth_pos,
            sup: birth_pos,
        };
        let e: f64 = Exp1.sample(prng);
        let branch_t = birth_t + e / beta;
        let target = branch_t.min(config.horizon);
        let mut k = cps.partition_point(|c| *c <= birth_t);
        let mut killed = false;
        loop {
            let seg = if k < ncp { cps[k].min(target) } else { target };
            match advance_to(&config.model, &mut state, seg, None, config.step, prng) {
                SegmentEnd::Reached => {
                    if k < ncp && seg == cps[k] {
                        alive_counts[k] += 1;
                        if state.pos > running_max[k] {
                            running_max[k] = state.pos;
                        }
                        k += 1;
                    }
                    if state.t >= target {
                        break;
                    }
                }
                SegmentEnd::Killed { time, .. } => {
                    killed = true;
                    if time > last_death {
                        last_death = time;
                    }
                    break;
                }
                SegmentEnd::CrossedUpper { .. } => unreachable!("tree walks have no upper barrier"),
            }
        }
        if state.sup > alltime_max {
            alltime_max = state.sup;
        }
        if killed {
            continue;
        }
        if branch_t > config.horizon {
            alive_at_horizon = true;
            continue;
        }
        events += 1;
        if events > config.max_events {
            capped = true;
            break;
        }
        let offspring = config.law.sample_offspring(prng);
        if offspring == 0 {
            if branch_t > last_death {
                last_death = branch_t;
            }
        } else if stack.len() + offspring > config.max_live {
            capped = true;
            break;
        } else {
            for j in 0..offspring {
                stack.push((branch_t, state.pos, child_key(key, j)));
            }
        }
    }
    let extinction_time = if capped || alive_at_horizon {
        None
    } else {
        Some(last_death)
    };
    Ok(TrajectoryOutcome {
        extinction_time,
        running_max,
        alive_counts,
        alltime_max,
        capped,
    })
}

// Shared tree walk for the survival and running-max estimators: horizon and
// single checkpoint at t, everything else inherited.
fn snapshot_config(config: &SimConfig, t: f64) -> SimConfig {
    let mut cfg = config.clone();
    cfg.horizon = t;
    cfg.checkpoints = vec![t];
    cfg
}

fn tree_tail_estimate(
    config: &SimConfig,
    x: f64,
    t: f64,
    y: f64,
    n: u64,
    survival: bool,
) -> Result<McEstimate> {
    if !(x > 0.0 && x.is_finite()) {
        return Err(BklError::precondition(format!(
            "estimator needs a start above the barrier, got {x}"
        )));
    }
    if !(t >= 0.0 && t <= config.horizon) {
        return Err(BklError::precondition(format!(
            "time {t} must lie in [0, {}]",
            config.horizon
        )));
    }
    if !y.is_finite() {
        return Err(BklError::precondition(format!("threshold must be finite, got {y}")));
    }
    if t == 0.0 {
        let v = if survival || x > y { 1.0 } else { 0.0 };
        return McEstimate::from_sums(v * n as f64, v * n as f64, n, 0);
    }
    let cfg = snapshot_config(config, t);
    mc_mean(n, config.seed, SALT_TREES, move |rng| {
        let out = simulate(&cfg, x, rng).expect("validated start");
        let hit = if survival {
            out.alive_counts[0] > 0
        } else {
            out.running_max[0] > y
        };
        (hit as u8 as f64, out.capped)
    })
}

/// P_x(tree still has a live particle at t), by tree Monte Carlo. At t = 0
/// the estimate is exactly one.
pub fn estimate_survival(config: &SimConfig, x: f64, t: f64, n: u64) -> Result<McEstimate> {
    tree_tail_estimate(config, x, t, 0.0, n, true)
}

/// P_x(max over particles alive at t exceeds y), by tree Monte Carlo on the
/// same replicates as `estimate_survival`, which it equals at y = 0.
pub fn estimate_mt_tail(
    config: &SimConfig,
    x: f64,
    t: f64,
    y: f64,
    n: u64,
) -> Result<McEstimate> {
    tree_tail_estimate(config, x, t, y, n, false)
}

/// P_x(all-time maximum over the whole tree exceeds y) for y > x. Trees run
/// until extinction or the configured horizon; a tree still alive at the
/// horizon counts toward the capped fraction. No upper barrier is used, so
/// replicates are identical across thresholds and the estimate is monotone
/// in y exactly.
pub fn estimate_alltime_max_tail(
    config: &SimConfig,
    x: f64,
    y: f64,
    n: u64,
) -> Result<McEstimate> {
    if !(x > 0.0 && x.is_finite() && y.is_finite() && y > x) {
        return Err(BklError::precondition(format!(
            "all-time tail needs 0 < x < y, got x={x}, y={y}"
        )));
    }
    let mut cfg = config.clone();
    cfg.checkpoints = Vec::new();
    mc_mean(n, config.seed, SALT_ALLTIME, move |rng| {
        let out = simulate(&cfg, x, rng).expect("validated start");
        let truncated = out.capped || out.extinction_time.is_none();
        ((out.alltime_max > y) as u8 as f64, truncated)
    })
}

/// All-time-maximum tail across several thresholds on one shared set of
/// trees: one walk per replicate, every threshold read off the same maxima,
/// so the profile is exactly monotone and each column equals the
/// single-threshold estimator bit for bit.
pub fn estimate_alltime_tail_profile(
    config: &SimConfig,
    x: f64,
    ys: &[f64],
    n: u64,
) -> Result<Vec<McEstimate>> {
    if !(x > 0.0 && x.is_finite()) {
        return Err(BklError::precondition(format!(
            "all-time tail needs a start above the barrier, got {x}"
        )));
    }
    if ys.is_empty() || ys.iter().any(|y| !(y.is_finite() && *y > x)) {
        return Err(BklError::precondition(
            "thresholds must be finite and exceed the start",
        ));
    }
    let mut cfg = config.clone();
    cfg.checkpoints = Vec::new();
    let ys = ys.to_vec();
    mc_mean_vec(n, config.seed, SALT_ALLTIME, ys.len(), move |rng, out| {
        let o = simulate(&cfg, x, rng).expect("validated start");
        for (k, y) in ys.iter().enumerate() {
            out[k] = (o.alltime_max > *y) as u8 as f64;
        }
        o.capped || o.extinction_time.is_none()
    })
}

/// Raw samples of the running maximum at t conditioned on the tree being
/// alive at t, collected by rejection over a deterministic replica schedule.
/// Aborts when the acceptance rate falls below 1e-6.
pub fn yaglom_samples(
    config: &SimConfig,
    x: f64,
    t: f64,
    n_conditioned: usize,
) -> Result<Vec<f64>> {
    if !(x > 0.0 && x.is_finite()) {
        return Err(BklError::precondition(format!(
            "conditional sampling needs a start above the barrier, got {x}"
        )));
    }
    if !(t > 0.0 && t <= config.horizon) {
        return Err(BklError::precondition(format!(
            "time {t} must lie in (0, {}]",
            config.horizon
        )));
    }
    if n_conditioned == 0 {
        return Ok(Vec::new());
    }
    let cfg = snapshot_config(config, t);
    let mut out: Vec<f64> = Vec::with_capacity(n_conditioned);
    let mut scanned: u64 = 0;
    loop {
        let lo = scanned;
        let batch: Vec<Option<f64>> = (lo..lo + YAGLOM_BATCH)
            .into_par_iter()
            .map(|replica| {
                let mut rng = replica_rng(cfg.seed, SALT_YAGLOM, replica);
                let o = simulate(&cfg, x, &mut rng).expect("validated start");
                if !o.capped && o.alive_counts[0] > 0 {
                    Some(o.running_max[0])
                } else {
                    None
                }
            })
            .collect();
        scanned += YAGLOM_BATCH;
        for v in batch.into_iter().flatten() {
            out.push(v);
            if out.len() == n_conditioned {
                return Ok(out);
            }
        }
        let rate = out.len() as f64 / scanned as f64;
        if scanned >= YAGLOM_MIN_SCAN && rate < YAGLOM_MIN_RATE {
            return Err(BklError::insufficient(format!(
                "acceptance rate {rate:.2e} over {scanned} trees is below {YAGLOM_MIN_RATE:.0e}; rerun with a smaller t"
            )));
        }
        if scanned >= YAGLOM_MAX_SCAN {
            return Err(BklError::insufficient(format!(
                "collected {} of {n_conditioned} conditioned samples after {scanned} trees; rerun with a smaller t or fewer samples",
                out.len()
            )));
        }
    }
}

/// Tabulated solution of the nonlinear expectation recursion on a space-time
/// grid, with cellwise Monte Carlo standard errors and the fraction of paths
/// whose table lookups were clamped to the x-grid edge.
#[derive(Debug, Clone)]
pub struct FkTable {
    pub xs: Vec<f64>,
    pub ts: Vec<f64>,
    pub y: f64,
    /// values[j][i] estimates the tail at (xs[i], ts[j]).
    pub values: Vec<Vec<f64>>,
    pub ses: Vec<Vec<f64>>,
    pub n_per_cell: u64,
    pub clamped_fraction: f64,
}

impl FkTable {
    /// Nearest-node lookup used by spot checks; grids are exact-match in
    /// practice.
    pub fn cell(&self, x: f64, t: f64) -> Option<(f64, f64)> {
        let i = self.xs.iter().position(|v| *v == x)?;
        let j = self.ts.iter().position(|v| *v == t)?;
        Some((self.values[j][i], self.ses[j][i]))
    }
}

// Linear interpolation along the x-grid with clamp-and-flag outside it.
fn interp_x(xs: &[f64], row: &[f64], xq: f64) -> (f64, bool) {
    let nx = xs.len();
    if xq <= xs[0] {
        return (row[0], xq < xs[0]);
    }
    if xq >= xs[nx - 1] {
        return (row[nx - 1], xq > xs[nx - 1]);
    }
    let i1 = xs.partition_point(|v| *v < xq);
    let i0 = i1 - 1;
    let w = (xq - xs[i0]) / (xs[i1] - xs[i0]);
    (row[i0] * (1.0 - w) + row[i1] * w, false)
}

// Bilinear lookup in the partially built table. Queries beyond the newest
// built layer are clamped to it; queries at or before time zero use the exact
// indicator, and nonpositive positions are already dead.
fn interp_q(
    xs: &[f64],
    ts_built: &[f64],
    built: &[Vec<f64>],
    y: f64,
    xq: f64,
    tq: f64,
) -> (f64, bool) {
    if xq <= 0.0 {
        return (0.0, false);
    }
    if tq <= 0.0 {
        return ((xq > y) as u8 as f64, false);
    }
    let jt = built.len() - 1;
    let tq = tq.min(ts_built[jt]);
    let j1 = ts_built[..=jt].partition_point(|v| *v < tq).min(jt);
    let (v1, c1) = interp_x(xs, &built[j1], xq);
    if j1 == 0 || ts_built[j1] == tq {
        return (v1, c1);
    }
    let j0 = j1 - 1;
    let (v0, c0) = interp_x(xs, &built[j0], xq);
    let w = (tq - ts_built[j0]) / (ts_built[j1] - ts_built[j0]);
    (v0 * (1.0 - w) + v1 * w, c0 || c1)
}

fn phi_of(law: &OffspringLaw, q: f64) -> f64 {
    law.small_phi(q.clamp(0.0, 1.0)).expect("clamped argument")
}

// One path functional for the expectation table: walk the killed path to t,
// accumulating the trapezoid quadrature of the branching correction along the
// way, and weigh the terminal indicator by its exponential.
fn fk_path<R: Rng + ?Sized>(
    config: &SimConfig,
    xs: &[f64],
    ts_built: &[f64],
    built: &[Vec<f64>],
    y: f64,
    x: f64,
    t: f64,
    rng: &mut R,
) -> (f64, bool) {
    let mut state = PathState::new(x);
    let (q0, mut clamped) = interp_q(xs, ts_built, built, y, x, t);
    let mut prev = phi_of(&config.law, q0);
    let mut integral = 0.0;
    loop {
        let s_next = (state.t + config.step).min(t);
        let ds = s_next - state.t;
        match advance_to(&config.model, &mut state, s_next, None, config.step, rng) {
            SegmentEnd::Reached => {
                let (q, c) = interp_q(xs, ts_built, built, y, state.pos, t - state.t);
                clamped |= c;
                let f = phi_of(&config.law, q);
                integral += 0.5 * (prev + f) * ds;
                prev = f;
                if state.t >= t {
                    let v = if state.pos > y { (-integral).exp() } else { 0.0 };
                    return (v, clamped);
                }
            }
            SegmentEnd::Killed { .. } => return (0.0, clamped),
            SegmentEnd::CrossedUpper { .. } => unreachable!("no upper barrier"),
        }
    }
}

/// Build the expectation table layer by layer in time. Each cell runs `n`
/// single-path functionals against the layers already built, so the grids
/// must start at time zero and stay inside the configured horizon.
pub fn feynman_kac_rhs(
    config: &SimConfig,
    xs: &[f64],
    ts: &[f64],
    y: f64,
    n: u64,
) -> Result<FkTable> {
    let xs_ok = !xs.is_empty()
        && xs.windows(2).all(|w| w[0] < w[1])
        && xs.iter().all(|v| v.is_finite() && *v > 0.0);
    if !xs_ok {
        return Err(BklError::precondition(
            "x-grid must be strictly increasing and positive",
        ));
    }
    let ts_ok = !ts.is_empty()
        && ts[0] == 0.0
        && ts.windows(2).all(|w| w[0] < w[1])
        && ts.iter().all(|v| v.is_finite() && *v <= config.horizon);
    if !ts_ok {
        return Err(BklError::precondition(
            "t-grid must start at 0, increase strictly, and stay within the horizon",
        ));
    }
    if !y.is_finite() {
        return Err(BklError::precondition(format!("threshold must be finite, got {y}")));
    }
    let alpha = config.law.alpha();
    let nx = xs.len();
    let mut values: Vec<Vec<f64>> = Vec::with_capacity(ts.len());
    let mut ses: Vec<Vec<f64>> = Vec::with_capacity(ts.len());
    values.push(xs.iter().map(|&v| (v > y) as u8 as f64).collect());
    ses.push(vec![0.0; nx]);
    let mut clamped_weight = 0.0;
    for j in 1..ts.len() {
        let t = ts[j];
        let damp = (-alpha * t).exp();
        let mut row_v = vec![0.0; nx];
        let mut row_s = vec![0.0; nx];
        for i in 0..nx {
            let salt = SALT_FK + ((j - 1) * nx + i) as u32;
            let built = &values[..j];
            let est = mc_mean(n, config.seed, salt, |rng| {
                fk_path(config, xs, &ts[..j], built, y, xs[i], t, rng)
            })?;
            row_v[i] = damp * est.mean;
            row_s[i] = damp * est.se;
            clamped_weight += est.capped_fraction;
        }
        values.push(row_v);
        ses.push(row_s);
    }
    let cells = ((ts.len() - 1) * nx) as f64;
    Ok(FkTable {
        xs: xs.to_vec(),
        ts: ts.to_vec(),
        y,
        values,
        ses,
        n_per_cell: n,
        clamped_fraction: if cells > 0.0 { clamped_weight / cells } else { 0.0 },
    })
}
