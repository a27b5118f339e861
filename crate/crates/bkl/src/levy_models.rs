//! Finite-activity Lévy models for the spatial motion, described entirely by
//! their Laplace exponent
//!
//!   Ψ(λ) = log E₀ e^{λξ₁} = drift·λ + ½η²λ² + Σ rate·(E e^{λJ} − 1),
//!
//! finite on the open strip (Λ₁, Λ₂) determined by the exponential jump
//! components. Ψ is the single source of truth for signs: the drift field is
//! the coefficient of λ, whatever the path-level parameterization elsewhere.
//!
//! Exponential tilting (Esscher transform) at c maps the model to one with
//! exponent Ψ_c(λ) = Ψ(λ+c) − Ψ(c): the Gaussian part is unchanged, the
//! drift gains η²c, and each jump component's law is reweighted by e^{cx}
//! (closed under the component families used here). At c = λ*, the root of
//! Ψ′, the tilted model has zero mean — the change of measure behind every
//! negative-mean limit theorem downstream.

use crate::error::{BklError, Result};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Exp, Normal, Poisson};

#[derive(Debug, Clone, PartialEq)]
pub enum JumpLaw {
    /// J = −Exp(mu): negative jumps with density mu·e^{mu x} on x < 0.
    NegExp { mu: f64 },
    /// J = +Exp(mu): positive jumps with density mu·e^{−mu x} on x > 0.
    PosExp { mu: f64 },
    /// J = a with probability p_a, else b.
    TwoPoint { a: f64, b: f64, p_a: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct JumpComponent {
    pub rate: f64,
    pub law: JumpLaw,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevyModel {
    pub drift: f64,
    pub gaussian_var: f64,
    pub jumps: Vec<JumpComponent>,
}

/// Convergence tolerance for the root finders (`lambda_star`,
/// `right_inverse`), applied to the residual of the defining equation.
const ROOT_TOL: f64 = 1e-12;

impl JumpLaw {
    fn validate(&self) -> Result<()> {
        match self {
            JumpLaw::NegExp { mu } | JumpLaw::PosExp { mu } => {
                if !(mu.is_finite() && *mu > 0.0) {
                    return Err(BklError::domain("exponential jump needs mu > 0"));
                }
            }
            JumpLaw::TwoPoint { a, b, p_a } => {
                if !a.is_finite() || !b.is_finite() {
                    return Err(BklError::domain("two-point jump values must be finite"));
                }
                if !(0.0..=1.0).contains(p_a) {
                    return Err(BklError::domain("two-point jump needs p_a in [0,1]"));
                }
            }
        }
        Ok(())
    }

    /// E e^{λJ} − 1 (the centered mgf used by Ψ). Caller checks the strip.
    fn mgf_m1(&self, l: f64) -> f64 {
        match self {
            JumpLaw::NegExp { mu } => -l / (mu + l),
            JumpLaw::PosExp { mu } => l / (mu - l),
            JumpLaw::TwoPoint { a, b, p_a } => {
                p_a * (l * a).exp_m1() + (1.0 - p_a) * (l * b).exp_m1()
            }
        }
    }

    fn mgf_m1_c(&self, l: Complex64) -> Complex64 {
        match self {
            JumpLaw::NegExp { mu } => -l / (mu + l),
            JumpLaw::PosExp { mu } => l / (mu - l),
            JumpLaw::TwoPoint { a, b, p_a } => {
                p_a * ((l * *a).exp() - 1.0) + (1.0 - p_a) * ((l * *b).exp() - 1.0)
            }
        }
    }

    fn mgf_d1(&self, l: f64) -> f64 {
        match self {
            JumpLaw::NegExp { mu } => -mu / ((mu + l) * (mu + l)),
            JumpLaw::PosExp { mu } => mu / ((mu - l) * (mu - l)),
            JumpLaw::TwoPoint { a, b, p_a } => {
                p_a * a * (l * a).exp() + (1.0 - p_a) * b * (l * b).exp()
            }
        }
    }

    fn mgf_d2(&self, l: f64) -> f64 {
        match self {
            JumpLaw::NegExp { mu } => 2.0 * mu / (mu + l).powi(3),
            JumpLaw::PosExp { mu } => 2.0 * mu / (mu - l).powi(3),
            JumpLaw::TwoPoint { a, b, p_a } => {
                p_a * a * a * (l * a).exp() + (1.0 - p_a) * b * b * (l * b).exp()
            }
        }
    }

    // Open strip on which E e^{λJ} is finite.
    fn strip(&self) -> (f64, f64) {
        match self {
            JumpLaw::NegExp { mu } => (-mu, f64::INFINITY),
            JumpLaw::PosExp { mu } => (f64::NEG_INFINITY, *mu),
            JumpLaw::TwoPoint { .. } => (f64::NEG_INFINITY, f64::INFINITY),
        }
    }

    fn supported_negative(&self) -> bool {
        match self {
            JumpLaw::NegExp { .. } => true,
            JumpLaw::PosExp { .. } => false,
            JumpLaw::TwoPoint { a, b, .. } => *a < 0.0 && *b < 0.0,
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            JumpLaw::NegExp { mu } => -Exp::new(*mu).unwrap().sample(rng),
            JumpLaw::PosExp { mu } => Exp::new(*mu).unwrap().sample(rng),
            JumpLaw::TwoPoint { a, b, p_a } => {
                if rng.gen::<f64>() < *p_a {
                    *a
                } else {
                    *b
                }
            }
        }
    }

    // Tilted component under the e^{cx} reweighting: (rate multiplier, law).
    fn tilt(&self, c: f64) -> Result<(f64, JumpLaw)> {
        match self {
            JumpLaw::NegExp { mu } => {
                if c <= -mu {
                    return Err(BklError::domain(format!(
                        "tilt c={c} leaves the strip of NegExp(mu={mu})"
                    )));
                }
                Ok((mu / (mu + c), JumpLaw::NegExp { mu: mu + c }))
            }
            JumpLaw::PosExp { mu } => {
                if c >= *mu {
                    return Err(BklError::domain(format!(
                        "tilt c={c} leaves the strip of PosExp(mu={mu})"
                    )));
                }
                Ok((mu / (mu - c), JumpLaw::PosExp { mu: mu - c }))
            }
            JumpLaw::TwoPoint { a, b, p_a } => {
                let wa = p_a * (c * a).exp();
                let wb = (1.0 - p_a) * (c * b).exp();
                let total = wa + wb;
                Ok((
                    total,
                    JumpLaw::TwoPoint { a: *a, b: *b, p_a: wa / total },
                ))
            }
        }
    }

    fn reflect(&self) -> JumpLaw {
        match self {
            JumpLaw::NegExp { mu } => JumpLaw::PosExp { mu: *mu },
            JumpLaw::PosExp { mu } => JumpLaw::NegExp { mu: *mu },
            JumpLaw::TwoPoint { a, b, p_a } => JumpLaw::TwoPoint { a: -a, b: -b, p_a: *p_a },
        }
    }
}

impl LevyModel {
    pub fn new(drift: f64, gaussian_var: f64, jumps: Vec<JumpComponent>) -> Result<Self> {
        if !drift.is_finite() {
            return Err(BklError::domain("drift must be finite"));
        }
        if !(gaussian_var.is_finite() && gaussian_var >= 0.0) {
            return Err(BklError::domain("gaussian_var must be finite and >= 0"));
        }
        for j in &jumps {
            if !(j.rate.is_finite() && j.rate > 0.0) {
                return Err(BklError::domain("jump component rate must be positive"));
            }
            j.law.validate()?;
        }
        Ok(LevyModel { drift, gaussian_var, jumps })
    }

    /// Brownian motion with the given drift and variance (no jumps).
    pub fn brownian(drift: f64, gaussian_var: f64) -> Result<Self> {
        if !(gaussian_var > 0.0) {
            return Err(BklError::domain("brownian model needs gaussian_var > 0"));
        }
        LevyModel::new(drift, gaussian_var, Vec::new())
    }

    /// Open strip (Λ₁, Λ₂) on which Ψ is finite.
    pub fn strip(&self) -> (f64, f64) {
        let mut lo = f64::NEG_INFINITY;
        let mut hi = f64::INFINITY;
        for j in &self.jumps {
            let (a, b) = j.law.strip();
            lo = lo.max(a);
            hi = hi.min(b);
        }
        (lo, hi)
    }

    fn check_strip(&self, l: f64) -> Result<()> {
        let (lo, hi) = self.strip();
        if l <= lo || l >= hi {
            return Err(BklError::domain(format!(
                "lambda={l} outside the open strip ({lo}, {hi})"
            )));
        }
        Ok(())
    }

    /// Laplace exponent Ψ(λ) on the open strip.
    pub fn psi(&self, l: f64) -> Result<f64> {
        self.check_strip(l)?;
        Ok(self.psi_raw(l))
    }

    fn psi_raw(&self, l: f64) -> f64 {
        let mut v = self.drift * l + 0.5 * self.gaussian_var * l * l;
        for j in &self.jumps {
            v += j.rate * j.law.mgf_m1(l);
        }
        v
    }

    /// Ψ extended to complex arguments by the same formula (the meromorphic
    /// continuation used by the Laplace-inversion contour).
    pub fn psi_complex(&self, l: Complex64) -> Complex64 {
        let mut v = self.drift * l + 0.5 * self.gaussian_var * l * l;
        for j in &self.jumps {
            v += j.rate * j.law.mgf_m1_c(l);
        }
        v
    }

    /// Ψ′(λ).
    pub fn psi_d1(&self, l: f64) -> Result<f64> {
        self.check_strip(l)?;
        Ok(self.psi_d1_raw(l))
    }

    fn psi_d1_raw(&self, l: f64) -> f64 {
        let mut v = self.drift + self.gaussian_var * l;
        for j in &self.jumps {
            v += j.rate * j.law.mgf_d1(l);
        }
        v
    }

    /// Ψ″(λ); strictly positive for non-deterministic models, so Ψ is
    /// strictly convex on the strip.
    pub fn psi_d2(&self, l: f64) -> Result<f64> {
        self.check_strip(l)?;
        Ok(self.psi_d2_raw(l))
    }

    fn psi_d2_raw(&self, l: f64) -> f64 {
        let mut v = self.gaussian_var;
        for j in &self.jumps {
            v += j.rate * j.law.mgf_d2(l);
        }
        v
    }

    /// Mean displacement per unit time, Ψ′(0).
    pub fn mean(&self) -> f64 {
        self.psi_d1_raw(0.0)
    }

    /// Variance per unit time, Ψ″(0).
    pub fn variance(&self) -> f64 {
        self.psi_d2_raw(0.0)
    }

    /// True when all jumps land in (−∞, 0) (no jumps counts as true): upward
    /// passage then happens by creeping, which the scale-function identities
    /// require.
    pub fn spectrally_negative(&self) -> bool {
        self.jumps.iter().all(|j| j.law.supported_negative())
    }

    /// Gate for the non-lattice hypothesis of the limit theorems: a Gaussian
    /// part or any exponential jump component makes the law of ξ_t diffuse.
    /// Pure two-point-jump (or deterministic) models are flagged lattice.
    pub fn is_non_lattice(&self) -> bool {
        self.gaussian_var > 0.0
            || self
                .jumps
                .iter()
                .any(|j| matches!(j.law, JumpLaw::NegExp { .. } | JumpLaw::PosExp { .. }))
    }

    /// λ* = the root of Ψ′ in (0, Λ₂): exists iff the mean is negative and Ψ′
    /// turns positive inside the strip. Bisection-safeguarded Newton.
    pub fn lambda_star(&self) -> Result<f64> {
        if self.mean() >= 0.0 {
            return Err(BklError::precondition(format!(
                "lambda_star needs a negative mean, got mean {}",
                self.mean()
            )));
        }
        let (_, hi_strip) = self.strip();
        let hi = self.expand_until(0.0, hi_strip, |l| self.psi_d1_raw(l) > 0.0)?;
        let root = self.newton_bisect(0.0, hi, |l| (self.psi_d1_raw(l), self.psi_d2_raw(l)));
        let scale = self.mean().abs().max(1.0);
        if self.psi_d1_raw(root).abs() > ROOT_TOL * scale * 1e3 {
            return Err(BklError::numerical("lambda_star residual above tolerance"));
        }
        Ok(root)
    }

    /// ψ(q) = largest root of Ψ(λ) = q on [0, Λ₂), for q ≥ 0. Equals 0 for
    /// q = 0 when the mean is non-negative; Newton from the convex branch
    /// beyond λ* otherwise.
    pub fn right_inverse(&self, q: f64) -> Result<f64> {
        if !(q >= 0.0) {
            return Err(BklError::precondition(format!("right_inverse needs q >= 0, got {q}")));
        }
        let mean = self.mean();
        if q == 0.0 && mean >= 0.0 {
            return Ok(0.0);
        }
        let lo = if mean < 0.0 { self.lambda_star()? } else { 0.0 };
        let (_, hi_strip) = self.strip();
        let hi = self.expand_until(lo, hi_strip, |l| self.psi_raw(l) > q)?;
        let root = self.newton_bisect(lo, hi, |l| (self.psi_raw(l) - q, self.psi_d1_raw(l)));
        if (self.psi_raw(root) - q).abs() > 1e-10 * q.max(1.0) {
            return Err(BklError::numerical("right_inverse residual above tolerance"));
        }
        Ok(root)
    }

    // Smallest probe point above `from` where `pred` holds, approaching
    // `limit` geometrically (doubling when the strip is unbounded).
    fn expand_until(
        &self,
        from: f64,
        limit: f64,
        pred: impl Fn(f64) -> bool,
    ) -> Result<f64> {
        let mut probe = if limit.is_finite() {
            from + 0.5 * (limit - from)
        } else {
            (from + 1.0).max(2.0 * from)
        };
        for _ in 0..300 {
            if pred(probe) {
                return Ok(probe);
            }
            probe = if limit.is_finite() {
                probe + 0.5 * (limit - probe)
            } else {
                probe * 2.0
            };
        }
        Err(BklError::precondition(
            "no sign change inside the strip (hypothesis on Psi fails for this model)",
        ))
    }

    // Newton iteration for f(root)=0 on a bracket [lo,hi] with f(lo) <= 0 <
    // f(hi), falling back to bisection whenever the step leaves the bracket.
    fn newton_bisect(&self, lo: f64, hi: f64, f: impl Fn(f64) -> (f64, f64)) -> f64 {
        let (mut lo, mut hi) = (lo, hi);
        let mut x = 0.5 * (lo + hi);
        for _ in 0..200 {
            let (fx, dfx) = f(x);
            if fx == 0.0 {
                return x;
            }
            if fx < 0.0 {
                lo = x;
            } else {
                hi = x;
            }
            let newton = x - fx / dfx;
            x = if dfx.is_finite() && newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
            if (hi - lo) <= f64::EPSILON * x.abs().max(1.0) {
                break;
            }
        }
        x
    }

    /// Esscher transform at c: the model with exponent Ψ_c(λ) = Ψ(λ+c) − Ψ(c).
    pub fn esscher(&self, c: f64) -> Result<LevyModel> {
        self.check_strip(c)?;
        let mut jumps = Vec::with_capacity(self.jumps.len());
        for j in &self.jumps {
            let (rate_mult, law) = j.law.tilt(c)?;
            jumps.push(JumpComponent { rate: j.rate * rate_mult, law });
        }
        LevyModel::new(self.drift + self.gaussian_var * c, self.gaussian_var, jumps)
    }

    /// The dual process ξ̂ = −ξ: drift negated, jump laws reflected.
    pub fn dual(&self) -> LevyModel {
        LevyModel {
            drift: -self.drift,
            gaussian_var: self.gaussian_var,
            jumps: self
                .jumps
                .iter()
                .map(|j| JumpComponent { rate: j.rate, law: j.law.reflect() })
                .collect(),
        }
    }

    /// Total jump intensity Σ rate.
    pub fn total_jump_rate(&self) -> f64 {
        self.jumps.iter().map(|j| j.rate).sum()
    }

    /// One increment ξ_{t+dt} − ξ_t: Gaussian part plus a Poisson number of
    /// jumps from each component.
    pub fn sample_increment<R: Rng + ?Sized>(&self, dt: f64, rng: &mut R) -> Result<f64> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(BklError::domain("sample_increment needs dt > 0"));
        }
        let mut x = self.drift * dt;
        if self.gaussian_var > 0.0 {
            let n = Normal::new(0.0, (self.gaussian_var * dt).sqrt()).unwrap();
            x += n.sample(rng);
        }
        for j in &self.jumps {
            let count = Poisson::new(j.rate * dt).unwrap().sample(rng) as u64;
            for _ in 0..count {
                x += j.law.sample(rng);
            }
        }
        Ok(x)
    }

    /// Draw a jump component index proportionally to rate, then a jump from
    /// its law. Used by the event-driven path stepper.
    pub fn sample_jump<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        debug_assert!(!self.jumps.is_empty());
        let total = self.total_jump_rate();
        let mut u = rng.gen::<f64>() * total;
        for j in &self.jumps {
            if u < j.rate {
                return j.law.sample(rng);
            }
            u -= j.rate;
        }
        self.jumps.last().unwrap().law.sample(rng)
    }
}
