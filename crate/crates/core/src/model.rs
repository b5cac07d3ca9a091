//! Market and preference parameters of the spread-trading problem.
//!
//! Wealth and spread evolve on `[t, T]` as
//!
//! ```text
//! dX = (r X - kappa1 a S - c) dv + a sigma dW
//! dS = -kappa S dv + sigma dW
//! ```
//!
//! and the investor maximises `E[ int c^gamma dv + beta X_T^gamma ]`.
//! Everything downstream consumes a validated [`Model`].

use crate::error::{ParamError, Result};

/// The six raw constants of the problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    /// Interest rate.
    pub r: f64,
    /// Mean-reversion speed of the spread.
    pub kappa: f64,
    /// Spread volatility.
    pub sigma: f64,
    /// Utility exponent, in (0, 1).
    pub gamma: f64,
    /// Weight of terminal utility.
    pub beta: f64,
    /// Horizon.
    pub horizon: f64,
}

impl ModelParams {
    /// Parameter set used throughout the tests and as the CLI example config.
    pub const REFERENCE: ModelParams = ModelParams {
        r: 0.02,
        kappa: 1.0,
        sigma: 0.3,
        gamma: 0.5,
        beta: 1.0,
        horizon: 1.0,
    };

    fn validate(&self) -> std::result::Result<(), ParamError> {
        for (name, value) in [
            ("r", self.r),
            ("kappa", self.kappa),
            ("sigma", self.sigma),
            ("gamma", self.gamma),
            ("beta", self.beta),
            ("T", self.horizon),
        ] {
            if !value.is_finite() {
                return Err(ParamError::NonFinite { name, value });
            }
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(ParamError::GammaOutOfRange(self.gamma));
        }
        for (name, value) in [
            ("sigma", self.sigma),
            ("kappa", self.kappa),
            ("beta", self.beta),
            ("T", self.horizon),
        ] {
            if value <= 0.0 {
                return Err(ParamError::NonPositive { name, value });
            }
        }
        if self.r < 0.0 {
            return Err(ParamError::NegativeRate(self.r));
        }
        if self.kappa < self.r {
            return Err(ParamError::KappaBelowRate {
                kappa: self.kappa,
                r: self.r,
            });
        }
        Ok(())
    }
}

/// Constants derived from [`ModelParams`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivedConstants {
    /// `kappa1 = r + kappa`.
    pub kappa1: f64,
    /// `kappa_gamma = kappa1 / (1 - gamma)`.
    pub kappa_gamma: f64,
    /// `D = (kappa^2 - r^2 gamma) / (1 - gamma)`.
    pub discriminant: f64,
    /// Larger root of `l^2 - 2 b l + gamma kappa_gamma^2`.
    pub lambda1: f64,
    /// Smaller (positive) root.
    pub lambda2: f64,
    /// `lambda1 - lambda2 = 2 sqrt(D)`.
    pub root_gap: f64,
    /// `b = gamma kappa_gamma + kappa`, the drift coefficient of the linear operator.
    pub drift: f64,
    /// `gamma kappa_gamma^2`, the product of the roots.
    pub root_product: f64,
}

/// Validated parameters together with their derived constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Model {
    pub params: ModelParams,
    pub derived: DerivedConstants,
}

/// Validates `params` and computes the derived constants.
pub fn build_model(params: ModelParams) -> Result<Model> {
    params.validate()?;
    let ModelParams {
        r, kappa, gamma, ..
    } = params;

    let kappa1 = r + kappa;
    let kappa_gamma = kappa1 / (1.0 - gamma);
    let discriminant = (kappa * kappa - r * r * gamma) / (1.0 - gamma);
    if !(discriminant > 0.0) {
        return Err(ParamError::NonPositiveDiscriminant(discriminant).into());
    }
    let drift = gamma * kappa_gamma + kappa;
    let root_product = gamma * kappa_gamma * kappa_gamma;
    let sqrt_d = discriminant.sqrt();
    let lambda1 = drift + sqrt_d;
    // drift - sqrt(D) cancels badly when the roots are far apart.
    let lambda2 = root_product / lambda1;

    Ok(Model {
        params,
        derived: DerivedConstants {
            kappa1,
            kappa_gamma,
            discriminant,
            lambda1,
            lambda2,
            root_gap: 2.0 * sqrt_d,
            drift,
            root_product,
        },
    })
}

impl Model {
    pub fn new(params: ModelParams) -> Result<Self> {
        build_model(params)
    }

    pub fn reference() -> Self {
        build_model(ModelParams::REFERENCE).expect("reference parameters are valid")
    }

    /// `beta^(1/(1-gamma))`, the terminal value of `u`.
    pub fn terminal_u(&self) -> f64 {
        self.params.beta.powf(1.0 / (1.0 - self.params.gamma))
    }

    /// `r gamma / (1 - gamma)`, the constant part of the potential.
    pub fn rate_term(&self) -> f64 {
        self.params.r * self.params.gamma / (1.0 - self.params.gamma)
    }

    /// Standard deviation of the stationary spread law, `sigma / sqrt(2 kappa)`.
    pub fn stationary_sd(&self) -> f64 {
        self.params.sigma / (2.0 * self.params.kappa).sqrt()
    }

    pub fn horizon(&self) -> f64 {
        self.params.horizon
    }
}
