//! Feedback controls and the HJB Hamiltonian.
//!
//! The optimal controls are linear in wealth:
//! `a = x R(s, t)` (spread position) and `c = x / u(s, t)` (consumption).
//! Perturbed kinds rescale either control and exist so that simulated
//! objectives of sub-optimal policies can be compared with `z`.

use std::fmt;

use crate::error::{domain, Error, Result};
use crate::fd;
use crate::model::Model;
use crate::value::{ratio_from_point, ValueFunction, ValuePoint};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PolicyKind {
    Optimal,
    /// Optimal controls multiplied componentwise.
    Scaled { a_mult: f64, c_mult: f64 },
    /// Consume optimally, never hold the spread.
    ZeroPosition,
    /// Trade optimally, never consume.
    NoConsumption,
}

impl PolicyKind {
    pub fn scaled(a_mult: f64, c_mult: f64) -> Result<Self> {
        if !a_mult.is_finite() {
            return Err(Error::Config(format!("position multiplier must be finite, got {a_mult}")));
        }
        if !(c_mult >= 0.0 && c_mult.is_finite()) {
            return Err(Error::Config(format!(
                "consumption multiplier must be finite and non-negative, got {c_mult}"
            )));
        }
        Ok(PolicyKind::Scaled { a_mult, c_mult })
    }

    /// `(position multiplier, consumption multiplier)` relative to the optimum.
    pub fn multipliers(&self) -> (f64, f64) {
        match *self {
            PolicyKind::Optimal => (1.0, 1.0),
            PolicyKind::Scaled { a_mult, c_mult } => (a_mult, c_mult),
            PolicyKind::ZeroPosition => (0.0, 1.0),
            PolicyKind::NoConsumption => (1.0, 0.0),
        }
    }

    pub fn is_optimal(&self) -> bool {
        self.multipliers() == (1.0, 1.0)
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PolicyKind::Optimal => write!(f, "optimal"),
            PolicyKind::Scaled { a_mult, c_mult } => write!(f, "scaled(a={a_mult} c={c_mult})"),
            PolicyKind::ZeroPosition => write!(f, "zero-position"),
            PolicyKind::NoConsumption => write!(f, "no-consumption"),
        }
    }
}

/// Spread position and consumption rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Control {
    pub position: f64,
    pub consumption: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct FeedbackPolicy<'a> {
    pub kind: PolicyKind,
    value: &'a ValueFunction,
}

impl<'a> FeedbackPolicy<'a> {
    pub fn new(kind: PolicyKind, value: &'a ValueFunction) -> Self {
        Self { kind, value }
    }

    pub fn optimal(value: &'a ValueFunction) -> Self {
        Self::new(PolicyKind::Optimal, value)
    }

    pub fn value_function(&self) -> &'a ValueFunction {
        self.value
    }

    pub fn control(&self, x: f64, s: f64, t: f64) -> Result<Control> {
        if !(x >= 0.0) {
            return Err(domain(format!("wealth must be non-negative, got {x}")));
        }
        if x == 0.0 {
            return Ok(Control {
                position: 0.0,
                consumption: 0.0,
            });
        }
        let p = self.value.eval(s, t)?;
        Ok(self.control_at(self.value.model(), x, s, p))
    }

    /// Control from a precomputed `(u, u_s)`.
    pub fn control_at(&self, model: &Model, x: f64, s: f64, p: ValuePoint) -> Control {
        if x == 0.0 {
            return Control {
                position: 0.0,
                consumption: 0.0,
            };
        }
        let (a_mult, c_mult) = self.kind.multipliers();
        Control {
            position: a_mult * x * ratio_from_point(model, s, p),
            consumption: c_mult * x / p.u,
        }
    }

    /// Drift of `log X` under this policy:
    /// `r - kappa1 s a R - sigma^2 a^2 R^2 / 2 - c / u` with the multipliers `a`, `c`.
    pub fn log_wealth_drift(&self, s: f64, t: f64) -> Result<f64> {
        if t >= self.value.model().horizon() {
            return Err(domain("log-wealth drift is defined on [0, T)"));
        }
        let p = self.value.eval(s, t)?;
        Ok(log_drift(self.value.model(), self.kind.multipliers(), s, p))
    }
}

pub(crate) fn log_drift(model: &Model, (a_mult, c_mult): (f64, f64), s: f64, p: ValuePoint) -> f64 {
    let ratio = a_mult * ratio_from_point(model, s, p);
    let sigma = model.params.sigma;
    model.params.r - model.derived.kappa1 * s * ratio - 0.5 * sigma * sigma * ratio * ratio - c_mult / p.u
}

/// `F(s, t) = r - kappa1 s R - sigma^2 R^2 / 2 - 1/u`, the log-wealth drift
/// under the optimal policy.
pub fn wealth_drift_f(value: &ValueFunction, s: f64, t: f64) -> Result<f64> {
    FeedbackPolicy::optimal(value).log_wealth_drift(s, t)
}

/// `H(x, s, t, a, c)` for a fixed value surface,
///
/// ```text
/// z_t + (r x - kappa1 a s - c) z_x - kappa s z_s + sigma^2 z_ss / 2
///     + a sigma^2 z_xs + a^2 sigma^2 z_xx / 2 + c^gamma
/// ```
#[derive(Debug, Clone, Copy)]
pub struct Hamiltonian {
    model: Model,
    pub x: f64,
    pub s: f64,
    pub partials: fd::Partials,
}

impl Hamiltonian {
    pub fn new(model: Model, x: f64, s: f64, partials: fd::Partials) -> Self {
        Self {
            model,
            x,
            s,
            partials,
        }
    }

    /// Hamiltonian of the closed-form `z`: wealth partials analytic,
    /// `z_t`, `z_s`, `z_ss` by central differences.
    pub fn of_value(value: &ValueFunction, x: f64, s: f64, t: f64) -> Result<Self> {
        let wealth = value.wealth_partials(x, s, t)?;
        let z = |x: f64, s: f64, t: f64| value.z(x, s, t);
        let fd = fd::partials(z, x, s, t, 0.0, None)?;
        Ok(Self::new(
            *value.model(),
            x,
            s,
            fd::Partials {
                z: wealth.z,
                z_x: wealth.z_x,
                z_xx: wealth.z_xx,
                z_xs: wealth.z_xs,
                ..fd
            },
        ))
    }

    /// Coefficient of `a` in `H`: `sigma^2 z_xs - kappa1 s z_x`.
    fn position_slope(&self) -> f64 {
        let sigma2 = self.model.params.sigma * self.model.params.sigma;
        sigma2 * self.partials.z_xs - self.model.derived.kappa1 * self.s * self.partials.z_x
    }

    pub fn value(&self, a: f64, c: f64) -> f64 {
        let p = &self.partials;
        let m = &self.model;
        let sigma2 = m.params.sigma * m.params.sigma;
        p.z_t + m.params.r * self.x * p.z_x - m.params.kappa * self.s * p.z_s
            + 0.5 * sigma2 * p.z_ss
            + self.control_part(a, c)
    }

    fn control_part(&self, a: f64, c: f64) -> f64 {
        let sigma2 = self.model.params.sigma * self.model.params.sigma;
        a * self.position_slope() + 0.5 * a * a * sigma2 * self.partials.z_xx - c * self.partials.z_x
            + c.powf(self.model.params.gamma)
    }

    /// `H(a1, c1) - H(a2, c2)`, arranged so the control-free terms cancel
    /// exactly and the quadratic in `a` is factored.
    pub fn gain(&self, (a1, c1): (f64, f64), (a2, c2): (f64, f64)) -> f64 {
        let sigma2 = self.model.params.sigma * self.model.params.sigma;
        let gamma = self.model.params.gamma;
        let position =
            (a1 - a2) * (self.position_slope() + 0.5 * sigma2 * self.partials.z_xx * (a1 + a2));
        let consumption = c1.powf(gamma) - c2.powf(gamma) - (c1 - c2) * self.partials.z_x;
        position + consumption
    }

    /// Maximiser of `H` read off the partials: `a = (kappa1 s z_x - sigma^2 z_xs) / (sigma^2 z_xx)`,
    /// `c = (z_x / gamma)^(1/(gamma-1))`.
    pub fn maximiser(&self) -> (f64, f64) {
        let sigma2 = self.model.params.sigma * self.model.params.sigma;
        let gamma = self.model.params.gamma;
        (
            -self.position_slope() / (sigma2 * self.partials.z_xx),
            (self.partials.z_x / gamma).powf(1.0 / (gamma - 1.0)),
        )
    }
}
