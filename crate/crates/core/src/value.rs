//! The value function `z(x, s, t) = x^gamma u(s, t)^(1-gamma)`.
//!
//! `u` is a superposition of the Gaussian factors `h^theta`:
//!
//! ```text
//! u(s, t) = beta^(1/(gamma-1)) int_t^T h^theta(s, t) dtheta + h^T(s, t)
//! ```
//!
//! Since `h^theta(s, t)` depends on `theta` only through the lag
//! `theta - t`, a [`TimeSlice`] freezes the quadrature nodes of the lag
//! integral for one `t` and evaluates `u` and `u_s` for any spread in one
//! pass. Slices are what the simulator holds on to between steps.

use crate::error::{domain, Error, Result};
use crate::model::Model;
use crate::quadrature::GaussLegendre;
use crate::riccati::RiccatiFamily;

pub const DEFAULT_OUTER_TOL: f64 = 1e-9;
pub const DEFAULT_NODES: usize = 64;
const MAX_PANELS: usize = 1 << 12;
/// Cap on `s^2 q / (2 sigma^2)` at the domain edge, well inside f64 range.
const MAX_GAUSSIAN_EXPONENT: f64 = 600.0;

/// `u` and `u_s` at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValuePoint {
    pub u: f64,
    pub u_s: f64,
}

/// Analytic wealth partials of `z`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WealthPartials {
    pub z: f64,
    pub z_x: f64,
    pub z_xx: f64,
    pub z_xs: f64,
}

#[derive(Debug, Clone)]
pub struct ValueFunction {
    riccati: RiccatiFamily,
    rule: GaussLegendre,
    outer_tol: f64,
    s_max: f64,
}

impl ValueFunction {
    pub fn new(riccati: RiccatiFamily) -> Self {
        let s_max = default_s_max(riccati.model());
        Self {
            riccati,
            rule: GaussLegendre::new(DEFAULT_NODES),
            outer_tol: DEFAULT_OUTER_TOL,
            s_max,
        }
    }

    /// Builds the Riccati family with default tolerances and wraps it.
    pub fn from_model(model: Model) -> Result<Self> {
        Ok(Self::new(RiccatiFamily::new(model)?))
    }

    pub fn with_outer_tol(mut self, tol: f64) -> Result<Self> {
        if !(tol > 0.0 && tol < 1.0) {
            return Err(Error::Config(format!("outer quadrature tol must lie in (0, 1), got {tol}")));
        }
        self.outer_tol = tol;
        Ok(self)
    }

    pub fn with_nodes(mut self, nodes: usize) -> Result<Self> {
        if nodes < 2 {
            return Err(Error::Config(format!("need at least 2 quadrature nodes, got {nodes}")));
        }
        self.rule = GaussLegendre::new(nodes);
        Ok(self)
    }

    pub fn with_s_max(mut self, s_max: f64) -> Result<Self> {
        if !(s_max > 0.0 && s_max.is_finite()) {
            return Err(Error::Config(format!("s_max must be positive and finite, got {s_max}")));
        }
        self.s_max = s_max;
        Ok(self)
    }

    pub fn riccati(&self) -> &RiccatiFamily {
        &self.riccati
    }

    pub fn model(&self) -> &Model {
        self.riccati.model()
    }

    pub fn s_max(&self) -> f64 {
        self.s_max
    }

    /// Freezes the lag quadrature for time `t`.
    ///
    /// The panel count is doubled until `u` agrees at `s = 0` and at
    /// `s = s_max`, the flattest and the sharpest integrand in the domain;
    /// the coarser of the two agreeing rules is kept.
    pub fn slice(&self, t: f64) -> Result<TimeSlice> {
        let horizon = self.model().horizon();
        if !(t >= 0.0 && t <= horizon) {
            return Err(domain(format!("t must lie in [0, {horizon}], got {t}")));
        }
        let lag = horizon - t;
        let terminal = self.node(lag, 1.0);
        let mut panels = 1;
        let mut slice = self.build_slice(t, lag, panels, terminal);
        loop {
            let finer = self.build_slice(t, lag, 2 * panels, terminal);
            let converged = [0.0, self.s_max].iter().all(|&s| {
                let a = slice.sum(s).u;
                let b = finer.sum(s).u;
                (a - b).abs() <= self.outer_tol * b.abs()
            });
            if converged {
                break;
            }
            panels *= 2;
            if panels > MAX_PANELS {
                return Err(Error::Numerical(format!(
                    "outer quadrature failed to converge at t = {t} with {MAX_PANELS} panels"
                )));
            }
            slice = finer;
        }
        let edge = slice.sum(self.s_max).u;
        if !edge.is_finite() {
            return Err(Error::Numerical(format!(
                "u overflows at the domain edge s_max = {}; shrink s_max",
                self.s_max
            )));
        }
        Ok(slice)
    }

    fn node(&self, lag: f64, weight: f64) -> Node {
        let sigma = self.model().params.sigma;
        Node {
            // beta^(1/(gamma-1)) cancels the beta^(1/(1-gamma)) inside f
            log_weight: weight.ln() + self.riccati.f_exponent_lag(lag),
            half_g: 0.5 * self.riccati.q_lag(lag) / (sigma * sigma),
        }
    }

    fn build_slice(&self, t: f64, lag: f64, panels: usize, terminal: Node) -> TimeSlice {
        let mut nodes = Vec::with_capacity(panels * self.rule.len());
        if lag > 0.0 {
            self.rule.for_each_node(0.0, lag, panels, |tau, w| nodes.push(self.node(tau, w)));
        }
        TimeSlice {
            t,
            s_max: self.s_max,
            terminal_scale: self.model().terminal_u(),
            nodes,
            terminal,
        }
    }

    pub fn eval(&self, s: f64, t: f64) -> Result<ValuePoint> {
        self.slice(t)?.eval(s)
    }

    pub fn u(&self, s: f64, t: f64) -> Result<f64> {
        Ok(self.eval(s, t)?.u)
    }

    pub fn u_s(&self, s: f64, t: f64) -> Result<f64> {
        Ok(self.eval(s, t)?.u_s)
    }

    /// `z(x, s, t) = x^gamma u^(1-gamma)`.
    pub fn z(&self, x: f64, s: f64, t: f64) -> Result<f64> {
        let u = self.u(s, t)?;
        z_from_u(self.model().params.gamma, x, u)
    }

    /// Position per unit of wealth, `R = u_s/u - s kappa_gamma / sigma^2`.
    pub fn ratio_r(&self, s: f64, t: f64) -> Result<f64> {
        let p = self.eval(s, t)?;
        Ok(ratio_from_point(self.model(), s, p))
    }

    pub fn wealth_partials(&self, x: f64, s: f64, t: f64) -> Result<WealthPartials> {
        if !(x > 0.0) {
            return Err(domain(format!("wealth partials need x > 0, got {x}")));
        }
        let p = self.eval(s, t)?;
        let gamma = self.model().params.gamma;
        let z = z_from_u(gamma, x, p.u)?;
        Ok(WealthPartials {
            z,
            z_x: gamma * z / x,
            z_xx: gamma * (gamma - 1.0) * z / (x * x),
            z_xs: gamma * (1.0 - gamma) * z / x * p.u_s / p.u,
        })
    }

    /// Constant `C` in `u(s, t) <= C exp(s^2 gamma kappa_gamma / (2 sigma^2))`,
    /// assembled from the bound on `f` and the length of the lag integral.
    pub fn u_bound_constant(&self) -> f64 {
        let m = self.model();
        let inv_terminal = 1.0 / m.terminal_u();
        self.riccati.f_upper_bound() * (inv_terminal * m.horizon() + 1.0)
    }

    /// Right-hand side of the upper bound on `u` at spread `s`.
    pub fn u_upper_bound(&self, s: f64) -> f64 {
        let m = self.model();
        let sigma = m.params.sigma;
        let exponent = s * s * m.params.gamma * m.derived.kappa_gamma / (2.0 * sigma * sigma);
        self.u_bound_constant() * exponent.exp()
    }
}

/// Default domain half-width: 36 stationary standard deviations, capped so
/// the Gaussian factor stays far from overflow.
pub fn default_s_max(model: &Model) -> f64 {
    let by_spread = 36.0 * model.stationary_sd();
    let sigma = model.params.sigma;
    let by_overflow = sigma * (2.0 * MAX_GAUSSIAN_EXPONENT / model.derived.lambda2).sqrt();
    by_spread.min(by_overflow)
}

pub(crate) fn z_from_u(gamma: f64, x: f64, u: f64) -> Result<f64> {
    if !(x >= 0.0) {
        return Err(domain(format!("wealth must be non-negative, got {x}")));
    }
    Ok(x.powf(gamma) * u.powf(1.0 - gamma))
}

pub(crate) fn ratio_from_point(model: &Model, s: f64, p: ValuePoint) -> f64 {
    let sigma = model.params.sigma;
    p.u_s / p.u - s * model.derived.kappa_gamma / (sigma * sigma)
}

#[derive(Debug, Clone, Copy)]
struct Node {
    log_weight: f64,
    half_g: f64,
}

/// Quadrature of `u` frozen at a single time.
#[derive(Debug, Clone)]
pub struct TimeSlice {
    t: f64,
    s_max: f64,
    terminal_scale: f64,
    nodes: Vec<Node>,
    terminal: Node,
}

impl TimeSlice {
    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn eval(&self, s: f64) -> Result<ValuePoint> {
        if !(s.abs() <= self.s_max) {
            return Err(domain(format!(
                "spread {s} outside the evaluation domain |s| <= {}",
                self.s_max
            )));
        }
        let p = self.sum(s);
        if !(p.u.is_finite() && p.u_s.is_finite()) {
            return Err(Error::Numerical(format!("u is not finite at s = {s}, t = {}", self.t)));
        }
        Ok(p)
    }

    fn sum(&self, s: f64) -> ValuePoint {
        let s2 = s * s;
        let mut u = 0.0;
        let mut slope = 0.0;
        for n in &self.nodes {
            let h = (n.log_weight + s2 * n.half_g).exp();
            u += h;
            slope += n.half_g * h;
        }
        let h_t = self.terminal_scale * (self.terminal.log_weight + s2 * self.terminal.half_g).exp();
        u += h_t;
        slope += self.terminal.half_g * h_t;
        ValuePoint {
            u,
            u_s: 2.0 * s * slope,
        }
    }
}
