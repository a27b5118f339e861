//! Scale functions W^(q) for spectrally negative models, the kernel of every
//! two-sided exit computation here:
//!
//!   ∫₀^∞ e^{−λx} W^(q)(x) dx = 1/(Ψ(λ) − q)   for λ > ψ(q),
//!
//! with W^(q) ≥ 0 increasing and E_x[e^{−qτ_y⁺}; τ_y⁺ < τ_0⁻] = W^(q)(x)/W^(q)(y).
//!
//! Brownian models get the closed form. Everything else goes through a
//! numerical transform inversion, stabilized by tilting: with c = ψ(q) the
//! function e^{−cx}W^(q)(x) is the zero-index scale function of the c-tilted
//! model, whose transform 1/Ψ_c has every singularity in Re ≤ 0 and a simple
//! pole at 0 when Ψ′(ψ(q)) > 0. That makes a fixed-contour inversion accurate
//! and gives the x → ∞ shape W^(q)(x) ≈ e^{ψ(q)x}/Ψ′(ψ(q)) for free.

use crate::error::{BklError, Result};
use crate::levy_models::LevyModel;
use num_complex::Complex64;
use std::f64::consts::PI;

/// Node count for the fixed-contour inversion; 48 nodes leave roughly six
/// significant digits after cancellation in double precision.
pub const DEFAULT_TALBOT_NODES: usize = 48;

/// Node offset used by the internal accuracy check: the same inversion with
/// `nodes - GUARD_OFFSET` nodes must agree or the value is suspect.
const GUARD_OFFSET: usize = 8;

/// Largest node-sensitivity residual `w` tolerates before refusing to return
/// a value.
const W_RESIDUAL_TOL: f64 = 1e-5;

/// Closed-form scale function of a unit-variance Brownian motion with drift
/// −b: W^(q)(x) = 2 e^{bx} sinh(δx)/δ with δ = √(b² + 2q), and 0 for x < 0.
pub fn scale_w_bm(b: f64, q: f64, x: f64) -> f64 {
    if x < 0.0 {
        return 0.0;
    }
    let delta = (b * b + 2.0 * q).sqrt();
    let u = delta * x;
    if u < 1e-6 {
        // sinh(u)/δ → x as δ → 0; one series term keeps full precision.
        2.0 * x * (b * x).exp() * (1.0 + u * u / 6.0)
    } else {
        2.0 * (b * x).exp() * u.sinh() / delta
    }
}

/// Fixed-Talbot inversion of a Laplace transform at argument x > 0. The
/// transform must be analytic to the right of its singularities, all of which
/// must satisfy Re s ≤ 0; `nodes` controls the contour resolution.
pub fn fixed_talbot(transform: impl Fn(Complex64) -> Complex64, x: f64, nodes: usize) -> f64 {
    debug_assert!(x > 0.0 && nodes >= 8);
    let m = nodes as f64;
    let r = 0.4 * m / x;
    let mut acc = 0.5 * (r * x).exp() * transform(Complex64::new(r, 0.0)).re;
    for k in 1..nodes {
        let theta = k as f64 * PI / m;
        let cot = theta.cos() / theta.sin();
        let s = Complex64::new(r * theta * cot, r * theta);
        let sigma = theta + (theta * cot - 1.0) * cot;
        let term = (s * x).exp() * transform(s) * Complex64::new(1.0, sigma);
        acc += term.re;
    }
    acc * r / m
}

#[derive(Debug, Clone)]
enum Backend {
    ClosedFormBm,
    Talbot { tilted: LevyModel, nodes: usize },
}

/// Evaluator for W^(q) of one (model, q) pair. Construction precomputes the
/// tilt rate ψ(q) and the tilted model.
#[derive(Debug, Clone)]
pub struct ScaleFunction {
    model: LevyModel,
    q: f64,
    tilt_rate: f64,
    backend: Backend,
}

impl ScaleFunction {
    /// Evaluator with the automatic backend: closed form for pure Brownian
    /// models, transform inversion otherwise.
    pub fn new(model: LevyModel, q: f64) -> Result<Self> {
        Self::build(model, q, None)
    }

    /// Evaluator forced onto the transform-inversion backend (works for
    /// Brownian models too, which is how the inversion gets cross-checked).
    pub fn with_inversion(model: LevyModel, q: f64, nodes: usize) -> Result<Self> {
        if nodes < 2 * GUARD_OFFSET {
            return Err(BklError::precondition("inversion needs at least 16 nodes"));
        }
        Self::build(model, q, Some(nodes))
    }

    fn build(model: LevyModel, q: f64, force_nodes: Option<usize>) -> Result<Self> {
        if !model.spectrally_negative() {
            return Err(BklError::precondition(
                "scale functions need a spectrally negative model",
            ));
        }
        if !(q.is_finite() && q >= 0.0) {
            return Err(BklError::precondition("scale function index q must be >= 0"));
        }
        if model.gaussian_var == 0.0 && model.drift <= 0.0 {
            return Err(BklError::precondition(
                "spectrally negative model with no gaussian part needs positive drift",
            ));
        }
        let tilt_rate = model.right_inverse(q)?;
        let backend = if model.jumps.is_empty() && force_nodes.is_none() {
            Backend::ClosedFormBm
        } else {
            let tilted = model.esscher(tilt_rate)?;
            Backend::Talbot { tilted, nodes: force_nodes.unwrap_or(DEFAULT_TALBOT_NODES) }
        };
        Ok(ScaleFunction { model, q, tilt_rate, backend })
    }

    pub fn model(&self) -> &LevyModel {
        &self.model
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    /// ψ(q), the exponential growth rate of W^(q).
    pub fn tilt_rate(&self) -> f64 {
        self.tilt_rate
    }

    /// Prefactor of the large-x shape: W^(q)(x) e^{−ψ(q)x} → 1/Ψ′(ψ(q)).
    /// Infinite in the q = 0 zero-mean case, where W grows linearly instead.
    pub fn asymptote_prefactor(&self) -> f64 {
        let d = self.model.psi_d1(self.tilt_rate).unwrap_or(0.0);
        if d > 0.0 {
            1.0 / d
        } else {
            f64::INFINITY
        }
    }

    /// W^(q)(x); zero for x < 0. Inversion-backed values are cross-checked
    /// against a coarser contour and refused when the residual is large.
    pub fn w(&self, x: f64) -> Result<f64> {
        let (v, resid) = self.w_checked(x)?;
        if resid > W_RESIDUAL_TOL {
            return Err(BklError::numerical(format!(
                "inversion residual {resid:.2e} at x={x}; retry with a larger node \
                 count via with_inversion (current default {DEFAULT_TALBOT_NODES})"
            )));
        }
        Ok(v)
    }

    /// W^(q)(x) together with an accuracy residual: the relative gap against
    /// a coarser inversion (0 for the closed form). Does not reject large
    /// residuals; `w` does.
    pub fn w_checked(&self, x: f64) -> Result<(f64, f64)> {
        if !x.is_finite() {
            return Err(BklError::domain("scale function argument must be finite"));
        }
        if x < 0.0 {
            return Ok((0.0, 0.0));
        }
        if x == 0.0 {
            return Ok((self.value_at_zero(), 0.0));
        }
        match &self.backend {
            Backend::ClosedFormBm => Ok((self.closed_form_bm(x), 0.0)),
            Backend::Talbot { tilted, nodes } => {
                let v = self.talbot_value(tilted, x, *nodes);
                let coarse = self.talbot_value(tilted, x, nodes - GUARD_OFFSET);
                let resid = (v - coarse).abs() / v.abs().max(1e-300);
                Ok((v, resid))
            }
        }
    }

    /// P_x(reach level y before entering (−∞,0)), discounted at rate q:
    /// W^(q)(x)/W^(q)(y) for 0 < x ≤ y.
    pub fn exit_up(&self, x: f64, y: f64) -> Result<f64> {
        if !(0.0 < x && x <= y) {
            return Err(BklError::domain("exit_up needs 0 < x <= y"));
        }
        Ok(self.w(x)? / self.w(y)?)
    }

    // W^(q)(0+): zero with a gaussian part, 1/drift for bounded variation.
    fn value_at_zero(&self) -> f64 {
        if self.model.gaussian_var > 0.0 {
            0.0
        } else {
            1.0 / self.model.drift
        }
    }

    // Two-root formula (1/Δ)(e^{λ₊x} − e^{λ₋x}) with λ± = (−d ± Δ)/η²,
    // Δ = √(d² + 2qη²); series form when Δx/η² underflows the difference.
    fn closed_form_bm(&self, x: f64) -> f64 {
        let d = self.model.drift;
        let v = self.model.gaussian_var;
        let delta = (d * d + 2.0 * self.q * v).sqrt();
        let u = delta * x / v;
        if u < 1e-6 {
            (2.0 * x / v) * (-d * x / v).exp() * (1.0 + u * u / 6.0)
        } else {
            (((delta - d) * x / v).exp() - ((-delta - d) * x / v).exp()) / delta
        }
    }

    fn talbot_value(&self, tilted: &LevyModel, x: f64, nodes: usize) -> f64 {
        let inv = fixed_talbot(|s| (tilted.psi_complex(s)).inv(), x, nodes);
        (self.tilt_rate * x).exp() * inv
    }
}
