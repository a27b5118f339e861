//! Offspring law and the branching functionals of the associated
//! Galton-Watson structure.
//!
//! A particle branches at exponential rate `branch_rate` (written β below)
//! into k offspring with probability p_k. Everything here concerns the
//! subcritical regime m = Σ k·p_k < 1, where the free (unkilled) tree dies
//! out and its survival probability g(t) decays like e^{−αt}, α = β(1−m).
//!
//! Central objects:
//!   f(s)  = Σ p_k s^k                    (generating function)
//!   Φ(u)  = β(f(1−u) − (1−u))            on [0,1]
//!   φ(u)  = Φ(u)/u − α, φ(0) = 0         (so Φ(u) = (α + φ(u))·u)
//!   g(t)  solves g' = −Φ(g), g(0) = 1    (free-tree survival probability)
//!   C_sub = exp(−∫₀^∞ φ(g(s)) ds)        (limit of e^{αt} g(t))

use crate::error::{BklError, Result};
use rand::Rng;

#[derive(Debug, Clone)]
pub struct OffspringLaw {
    pub probabilities: Vec<f64>,
    pub branch_rate: f64,
    cumulative: Vec<f64>,
}

/// Default RK4 step for the g(t) solver.
pub const DEFAULT_ODE_STEP: f64 = 1e-3;
/// Default truncation tolerance for `c_sub`.
pub const DEFAULT_CSUB_TOL: f64 = 1e-8;

impl OffspringLaw {
    /// `probabilities[k]` is the probability of k offspring at a branch
    /// event. Requires a normalized subcritical law and a positive rate.
    pub fn new(probabilities: Vec<f64>, branch_rate: f64) -> Result<Self> {
        if probabilities.is_empty() {
            return Err(BklError::domain("offspring law must have at least p_0"));
        }
        if probabilities.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(BklError::domain("offspring probabilities must be finite and >= 0"));
        }
        let total: f64 = probabilities.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(BklError::domain(format!(
                "offspring probabilities sum to {total}, expected 1 within 1e-12"
            )));
        }
        if !(branch_rate > 0.0 && branch_rate.is_finite()) {
            return Err(BklError::domain("branch rate must be positive and finite"));
        }
        let mut cumulative = Vec::with_capacity(probabilities.len());
        let mut acc = 0.0;
        for p in &probabilities {
            acc += p;
            cumulative.push(acc);
        }
        let law = OffspringLaw { probabilities, branch_rate, cumulative };
        if law.mean() >= 1.0 {
            return Err(BklError::domain(format!(
                "offspring mean {} is not subcritical (need m < 1)",
                law.mean()
            )));
        }
        Ok(law)
    }

    /// Mean offspring count m = Σ k·p_k.
    pub fn mean(&self) -> f64 {
        self.probabilities
            .iter()
            .enumerate()
            .map(|(k, p)| k as f64 * p)
            .sum()
    }

    /// Net decay rate α = β(1−m) of the free tree's survival probability.
    pub fn alpha(&self) -> f64 {
        self.branch_rate * (1.0 - self.mean())
    }

    /// Generating function f(s) = Σ p_k s^k (Horner evaluation).
    pub fn pgf(&self, s: f64) -> f64 {
        self.probabilities.iter().rev().fold(0.0, |acc, p| acc * s + p)
    }

    /// Σ k·log(k)·p_k, finite automatically for finite-support laws. The
    /// limit theorems downstream assume this is finite (it always is here);
    /// exposed so experiment summaries can report it.
    pub fn llogl(&self) -> f64 {
        self.probabilities
            .iter()
            .enumerate()
            .skip(2)
            .map(|(k, p)| (k as f64) * (k as f64).ln() * p)
            .sum()
    }

    /// Φ(u) = β(f(1−u) − (1−u)) for u in [0,1].
    pub fn big_phi(&self, u: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&u) {
            return Err(BklError::domain(format!("big_phi needs u in [0,1], got {u}")));
        }
        Ok(self.big_phi_raw(u))
    }

    fn big_phi_raw(&self, u: f64) -> f64 {
        let s = 1.0 - u;
        self.branch_rate * (self.pgf(s) - s)
    }

    /// φ(u) = Φ(u)/u − α with φ(0) = 0; non-decreasing on [0,1].
    pub fn small_phi(&self, u: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&u) {
            return Err(BklError::domain(format!("small_phi needs u in [0,1], got {u}")));
        }
        Ok(self.small_phi_raw(u))
    }

    fn small_phi_raw(&self, u: f64) -> f64 {
        if u == 0.0 {
            return 0.0;
        }
        self.big_phi_raw(u) / u - self.alpha()
    }

    /// Survival probability g(t) of the free tree: g' = −Φ(g), g(0)=1,
    /// integrated with classical RK4 at fixed step (the step is shortened to
    /// divide t exactly).
    pub fn survival_g(&self, t: f64, step: f64) -> Result<f64> {
        if !(t >= 0.0) || !t.is_finite() {
            return Err(BklError::domain(format!("survival_g needs finite t >= 0, got {t}")));
        }
        if !(step > 0.0) {
            return Err(BklError::domain("survival_g needs step > 0"));
        }
        if t == 0.0 {
            return Ok(1.0);
        }
        let n = (t / step).ceil().max(1.0) as u64;
        let h = t / n as f64;
        let mut g = 1.0f64;
        for _ in 0..n {
            g = self.rk4_g(g, h);
        }
        Ok(g)
    }

    fn rk4_g(&self, g: f64, h: f64) -> f64 {
        let f = |v: f64| -self.big_phi_raw(v);
        let k1 = f(g);
        let k2 = f(g + 0.5 * h * k1);
        let k3 = f(g + 0.5 * h * k2);
        let k4 = f(g + h * k3);
        g + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    }

    /// C_sub = exp(−∫₀^∞ φ(g(s)) ds) = lim e^{αt} g(t), in (0, 1].
    ///
    /// The ODE for (g, ∫φ(g)) is integrated jointly until φ(g(T)) < tol·α,
    /// which caps the dropped tail by tol (φ(v)/v is non-decreasing, so
    /// ∫_T^∞ φ(g) ≤ φ(g(T))/α). The tail is then estimated anyway from the
    /// bound g(s) ≤ g(T)e^{−α(s−T)} via a geometric grid and added back.
    pub fn c_sub(&self, tol: f64) -> Result<f64> {
        if !(tol > 0.0 && tol < 1.0) {
            return Err(BklError::domain("c_sub needs tol in (0,1)"));
        }
        let alpha = self.alpha();
        let h = DEFAULT_ODE_STEP;
        let mut g = 1.0f64;
        let mut integral = 0.0f64;
        let mut t = 0.0f64;
        let t_max = 200.0 / alpha;
        while self.small_phi_raw(g) >= tol * alpha {
            let (g2, i2) = self.rk4_pair(g, integral, h);
            g = g2;
            integral = i2;
            t += h;
            if t > t_max {
                return Err(BklError::numerical(format!(
                    "c_sub integration did not reach its truncation point by t={t_max}"
                )));
            }
        }
        integral += self.csub_tail(g) / alpha;
        Ok((-integral).exp())
    }

    // One RK4 step of (g, I) with g' = −Φ(g), I' = φ(g).
    fn rk4_pair(&self, g: f64, i: f64, h: f64) -> (f64, f64) {
        let fg = |v: f64| -self.big_phi_raw(v);
        let fi = |v: f64| self.small_phi_raw(v);
        let k1g = fg(g);
        let k1i = fi(g);
        let g2 = g + 0.5 * h * k1g;
        let k2g = fg(g2);
        let k2i = fi(g2);
        let g3 = g + 0.5 * h * k2g;
        let k3g = fg(g3);
        let k3i = fi(g3);
        let g4 = g + h * k3g;
        let k4g = fg(g4);
        let k4i = fi(g4);
        (
            g + h / 6.0 * (k1g + 2.0 * k2g + 2.0 * k3g + k4g),
            i + h / 6.0 * (k1i + 2.0 * k2i + 2.0 * k3i + k4i),
        )
    }

    // ∫_0^{v0} φ(v)/v dv by trapezoid on a geometric grid (uniform in ln v).
    fn csub_tail(&self, v0: f64) -> f64 {
        if v0 <= 0.0 {
            return 0.0;
        }
        let ratio = 0.75f64;
        let h = -ratio.ln();
        let mut v = v0;
        let mut prev = self.small_phi_raw(v);
        let mut acc = 0.0;
        while prev > 1e-22 && v > 1e-280 {
            v *= ratio;
            let cur = self.small_phi_raw(v);
            acc += 0.5 * (prev + cur) * h;
            prev = cur;
        }
        acc
    }

    /// Draw an offspring count at a branch event.
    pub fn sample_offspring<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.gen();
        match self.cumulative.iter().position(|c| u < *c) {
            Some(k) => k,
            None => self.probabilities.len() - 1,
        }
    }
}
