//! Closed-form Riccati and linear factors of the value function.
//!
//! For a sub-horizon `theta` the Gaussian exponent `q = sigma^2 g` solves
//!
//! ```text
//! q' + q^2 - 2 b q + gamma kappa_gamma^2 = 0,    q(theta) = 0
//! ```
//!
//! and the amplitude `f` solves `f' + (q/2) f + r gamma/(1-gamma) f = 0`
//! with `f(theta) = beta^(1/(1-gamma))`. Both depend on `(t, theta)` only
//! through the lag `theta - t`, which is how everything is computed here.

use crate::error::{domain, Error, Result};
use crate::model::Model;
use crate::quadrature::simpson_doubling;

pub const DEFAULT_QUADRATURE_TOL: f64 = 1e-10;
const SIMPSON_MAX_PANELS: usize = 1 << 20;

#[derive(Debug, Clone)]
pub struct RiccatiFamily {
    model: Model,
    quadrature_tol: f64,
}

impl RiccatiFamily {
    /// Builds the family and runs the closed-form vs. quadrature self-test.
    pub fn new(model: Model) -> Result<Self> {
        Self::with_tolerance(model, DEFAULT_QUADRATURE_TOL)
    }

    pub fn with_tolerance(model: Model, quadrature_tol: f64) -> Result<Self> {
        if !(quadrature_tol > 0.0 && quadrature_tol < 1.0) {
            return Err(Error::Config(format!(
                "quadrature_tol must lie in (0, 1), got {quadrature_tol}"
            )));
        }
        let family = Self {
            model,
            quadrature_tol,
        };
        family.self_test()?;
        Ok(family)
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn quadrature_tol(&self) -> f64 {
        self.quadrature_tol
    }

    fn lag(&self, t: f64, theta: f64) -> Result<f64> {
        let horizon = self.model.horizon();
        if !(t >= 0.0 && t <= theta && theta <= horizon) {
            return Err(domain(format!(
                "need 0 <= t <= theta <= T, got t = {t}, theta = {theta}, T = {horizon}"
            )));
        }
        Ok(theta - t)
    }

    pub fn q_theta(&self, t: f64, theta: f64) -> Result<f64> {
        Ok(self.q_lag(self.lag(t, theta)?))
    }

    pub fn g_theta(&self, t: f64, theta: f64) -> Result<f64> {
        Ok(self.g_lag(self.lag(t, theta)?))
    }

    pub fn f_theta(&self, t: f64, theta: f64) -> Result<f64> {
        Ok(self.log_f_lag(self.lag(t, theta)?).exp())
    }

    /// `h^theta(s, t) = f^theta(t) exp(s^2 g^theta(t) / 2)`.
    pub fn h_theta(&self, s: f64, t: f64, theta: f64) -> Result<f64> {
        if !s.is_finite() {
            return Err(domain(format!("spread must be finite, got {s}")));
        }
        let lag = self.lag(t, theta)?;
        let h = (self.log_f_lag(lag) + 0.5 * s * s * self.g_lag(lag)).exp();
        if !h.is_finite() {
            return Err(domain(format!("h overflows at s = {s}, t = {t}, theta = {theta}")));
        }
        Ok(h)
    }

    /// `q` as a function of the lag `tau = theta - t`.
    ///
    /// Written as `lambda1 lambda2 (1 - e) / (lambda1 - lambda2 e)` with
    /// `e = exp(-A tau)` so nothing overflows for long lags.
    pub fn q_lag(&self, tau: f64) -> f64 {
        q_of_lag(&self.model, tau)
    }

    pub fn g_lag(&self, tau: f64) -> f64 {
        self.q_lag(tau) / (self.model.params.sigma * self.model.params.sigma)
    }

    /// `int_0^tau q(v) dv = lambda2 tau - ln((lambda1 - lambda2 e^{-A tau}) / A)`.
    pub fn q_integral_lag(&self, tau: f64) -> f64 {
        let d = &self.model.derived;
        let one_minus_e = -(-d.root_gap * tau).exp_m1();
        d.lambda2 * tau - (d.lambda2 * one_minus_e / d.root_gap).ln_1p()
    }

    /// Exponent of `f` relative to its terminal value.
    pub fn f_exponent_lag(&self, tau: f64) -> f64 {
        0.5 * self.q_integral_lag(tau) + self.model.rate_term() * tau
    }

    pub fn log_f_lag(&self, tau: f64) -> f64 {
        self.model.terminal_u().ln() + self.f_exponent_lag(tau)
    }

    /// `f^theta(t)` with its exponent integrated numerically by composite
    /// Simpson instead of the closed-form antiderivative.
    pub fn f_theta_quadrature(&self, t: f64, theta: f64) -> Result<f64> {
        let lag = self.lag(t, theta)?;
        let exponent = self.f_exponent_quadrature(lag)?;
        Ok(self.model.terminal_u() * exponent.exp())
    }

    fn f_exponent_quadrature(&self, tau: f64) -> Result<f64> {
        let rate = self.model.rate_term();
        let res = simpson_doubling(0.0, tau, self.quadrature_tol, SIMPSON_MAX_PANELS, |v| {
            0.5 * self.q_lag(v) + rate
        });
        if !res.converged {
            return Err(Error::Numerical(format!(
                "Simpson quadrature of the f exponent did not converge over lag {tau} ({} panels)",
                res.panels
            )));
        }
        Ok(res.value)
    }

    /// Compares the closed-form `f` with the quadrature route over a few lags.
    pub fn self_test(&self) -> Result<()> {
        let horizon = self.model.horizon();
        for frac in [0.1, 0.5, 1.0] {
            let tau = frac * horizon;
            let closed = self.f_exponent_lag(tau).exp();
            let numeric = self.f_exponent_quadrature(tau)?.exp();
            let rel = (closed - numeric).abs() / closed;
            if !(rel <= self.quadrature_tol) {
                return Err(Error::SelfTest(format!(
                    "f closed form {closed} vs quadrature {numeric} at lag {tau}: \
                     relative gap {rel:e} exceeds {:e}",
                    self.quadrature_tol
                )));
            }
        }
        Ok(())
    }

    /// Upper bound on every `f^theta(t)`, `beta^(1/(1-gamma)) exp((lambda2/2 + r gamma/(1-gamma)) T)`.
    pub fn f_upper_bound(&self) -> f64 {
        let exponent =
            (0.5 * self.model.derived.lambda2 + self.model.rate_term()) * self.model.horizon();
        self.model.terminal_u() * exponent.exp()
    }
}

pub(crate) fn q_of_lag(model: &Model, tau: f64) -> f64 {
    let d = &model.derived;
    let one_minus_e = -(-d.root_gap * tau).exp_m1();
    d.root_product * one_minus_e / (d.root_gap + d.lambda2 * one_minus_e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelParams;
    use proptest::prelude::*;

    fn family() -> RiccatiFamily {
        RiccatiFamily::new(Model::reference()).unwrap()
    }

    fn printed_form(m: &Model, tau: f64) -> f64 {
        let d = &m.derived;
        d.lambda2 - d.lambda2 * (d.lambda1 - d.lambda2) / (d.lambda1 * ((d.lambda1 - d.lambda2) * tau).exp() - d.lambda2)
    }

    fn riccati_rhs(m: &Model, q: f64) -> f64 {
        // dq/dt = -q^2 + 2 b q - gamma kappa_gamma^2
        -q * q + 2.0 * m.derived.drift * q - m.derived.root_product
    }

    #[test]
    fn terminal_conditions() {
        let fam = family();
        assert_eq!(fam.q_theta(0.4, 0.4).unwrap(), 0.0);
        assert_eq!(fam.g_theta(1.0, 1.0).unwrap(), 0.0);
        assert_eq!(fam.f_theta(0.3, 0.3).unwrap(), 1.0);
        assert_eq!(fam.h_theta(2.5, 0.3, 0.3).unwrap(), 1.0);

        let beta4 = Model::new(ModelParams { beta: 4.0, ..ModelParams::REFERENCE }).unwrap();
        let fam4 = RiccatiFamily::new(beta4).unwrap();
        assert!((fam4.f_theta(0.5, 0.5).unwrap() - 16.0).abs() < 1e-13);
        assert!((fam4.h_theta(-1.3, 0.2, 0.2).unwrap() - 16.0).abs() < 1e-13);
    }

    #[test]
    fn matches_printed_closed_form() {
        let fam = family();
        let m = Model::reference();
        for tau in [1e-6, 0.01, 0.3, 1.0] {
            let q = fam.q_lag(tau);
            assert!((q - printed_form(&m, tau)).abs() < 1e-13, "tau {tau}");
        }
    }

    #[test]
    fn long_lag_tends_to_lambda2() {
        let fam = family();
        let l2 = fam.model().derived.lambda2;
        let mut prev = 0.0;
        for tau in [1.0, 2.0, 5.0, 10.0, 50.0, 1e4] {
            let q = fam.q_lag(tau);
            assert!(q >= prev && q <= l2);
            prev = q;
        }
        assert!((prev - l2).abs() < 1e-15);
    }

    #[test]
    fn g_is_q_over_sigma_squared() {
        let fam = family();
        let s2 = 0.3f64 * 0.3;
        for (t, th) in [(0.0, 1.0), (0.2, 0.7), (0.5, 0.5)] {
            assert_eq!(fam.g_theta(t, th).unwrap(), fam.q_theta(t, th).unwrap() / s2);
        }
        let kg = fam.model().derived.kappa_gamma;
        let g_t0 = fam.g_theta(0.0, 1.0).unwrap();
        assert!(g_t0 <= 0.5 * kg / s2);
        assert!(0.5 * 2.04 / 0.09 == 0.5 * kg / s2);
    }

    #[test]
    fn q_agrees_with_rk4_backward_integration() {
        let fam = family();
        let m = Model::reference();
        let steps = 10_000;
        let h = 1.0 / steps as f64;
        // integrate from t = 1 back to t = 0
        let mut q = 0.0;
        for _ in 0..steps {
            let k1 = riccati_rhs(&m, q);
            let k2 = riccati_rhs(&m, q - 0.5 * h * k1);
            let k3 = riccati_rhs(&m, q - 0.5 * h * k2);
            let k4 = riccati_rhs(&m, q - h * k3);
            q -= h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        assert!((q - fam.q_theta(0.0, 1.0).unwrap()).abs() < 1e-8);
    }

    #[test]
    fn closed_form_antiderivative_matches_simpson() {
        let fam = family();
        for (t, th) in [(0.0, 1.0), (0.25, 0.9), (0.999, 1.0)] {
            let a = fam.f_theta(t, th).unwrap();
            let b = fam.f_theta_quadrature(t, th).unwrap();
            assert!(((a - b) / a).abs() < 1e-10, "({t}, {th}): {a} vs {b}");
        }
    }

    #[test]
    fn f_within_bounds() {
        let fam = family();
        let lower = fam.model().terminal_u();
        let upper = fam.f_upper_bound();
        for i in 0..=20 {
            let t = i as f64 / 20.0;
            let f = fam.f_theta(t, 1.0).unwrap();
            assert!(f >= lower && f <= upper);
        }
    }

    #[test]
    fn h_at_zero_spread_is_f() {
        let fam = family();
        assert_eq!(fam.h_theta(0.0, 0.1, 0.8).unwrap(), fam.f_theta(0.1, 0.8).unwrap());
    }

    #[test]
    fn domain_errors() {
        let fam = family();
        assert!(fam.q_theta(0.6, 0.5).is_err());
        assert!(fam.q_theta(-0.1, 0.5).is_err());
        assert!(fam.f_theta(0.0, 1.5).is_err());
        assert!(fam.h_theta(f64::NAN, 0.0, 1.0).is_err());
    }

    #[test]
    fn riccati_residual_on_grid() {
        let fam = family();
        let m = Model::reference();
        let h = 1e-5;
        for i in 1..40 {
            let theta = i as f64 / 40.0;
            for j in 1..20 {
                let t = theta * j as f64 / 20.0;
                if t - h < 0.0 || t + h > theta {
                    continue;
                }
                let q = fam.q_theta(t, theta).unwrap();
                let dq = (fam.q_theta(t + h, theta).unwrap() - fam.q_theta(t - h, theta).unwrap()) / (2.0 * h);
                let residual = dq - riccati_rhs(&m, q);
                assert!(residual.abs() <= 1e-6 * (1.0 + q.abs()), "({t}, {theta}): {residual}");
            }
        }
    }

    #[test]
    fn f_equation_residual_on_grid() {
        let fam = family();
        let rate = fam.model().rate_term();
        let h = 1e-5;
        for i in 2..10 {
            let theta = i as f64 / 10.0;
            for j in 1..10 {
                let t = theta * j as f64 / 10.0;
                let f = fam.f_theta(t, theta).unwrap();
                let df = (fam.f_theta(t + h, theta).unwrap() - fam.f_theta(t - h, theta).unwrap()) / (2.0 * h);
                let q = fam.q_theta(t, theta).unwrap();
                let residual = df + 0.5 * q * f + rate * f;
                assert!(residual.abs() <= 1e-7 * f, "({t}, {theta}): {residual}");
            }
        }
    }

    #[test]
    fn grid_max_is_full_horizon_start() {
        let fam = family();
        let peak = fam.q_theta(0.0, 1.0).unwrap();
        let mut best = f64::NEG_INFINITY;
        for i in 0..=50 {
            let theta = i as f64 / 50.0;
            for j in 0..=i {
                let t = j as f64 / 50.0;
                best = best.max(fam.q_theta(t, theta).unwrap());
            }
        }
        assert_eq!(best, peak);
    }

    proptest! {
        #[test]
        fn q_bounded_and_monotone(
            kappa in 0.5f64..2.0,
            r_frac in 0.0f64..=1.0,
            sigma in 0.1f64..1.0,
            gamma in 0.2f64..0.8,
            theta in 0.0f64..=1.0,
            a in 0.0f64..=1.0,
            b in 0.0f64..=1.0,
        ) {
            let m = Model::new(ModelParams {
                r: kappa * r_frac, kappa, sigma, gamma, beta: 1.0, horizon: 1.0,
            }).unwrap();
            let fam = RiccatiFamily::new(m).unwrap();
            let (t1, t2) = (theta * a.min(b), theta * a.max(b));
            let q1 = fam.q_theta(t1, theta).unwrap();
            let q2 = fam.q_theta(t2, theta).unwrap();
            prop_assert!(q1 >= 0.0 && q1 <= m.derived.lambda2);
            prop_assert!(q1 >= q2, "t -> q must be nonincreasing");
            prop_assert!(fam.g_theta(0.0, 1.0).unwrap() <= gamma * m.derived.kappa_gamma / (sigma * sigma));
        }
    }
}
