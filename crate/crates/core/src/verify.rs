//! Self-checks of the closed form against independent numerical routes.
//!
//! Each check returns a [`CheckResult`] carrying the measured quantity, the
//! tolerance it is held to and a one-line diagnostic. [`verify_all`] runs the
//! whole battery with the settings of [`VerifyConfig::for_model`].
//!
//! Spread ranges are given for the reference parameters and multiplied by
//! [`grid_scale`] for other parameter sets, so that the cell Péclet number,
//! the Gaussian factor of `u` and the potential at the domain edge never
//! exceed their reference values.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::model::{Model, ModelParams};
use crate::montecarlo::{self, OptimalityReport, SimConfig};
use crate::pde_oracle::{self, BoundaryKind, ConvergenceReport, GridSpec};
use crate::policy::{FeedbackPolicy, Hamiltonian, PolicyKind};
use crate::riccati::{q_of_lag, RiccatiFamily};
use crate::value::ValueFunction;

pub const RICCATI_TOL: f64 = 1e-8;
pub const BOUND_SLACK: f64 = 1e-12;
pub const PDE_TOL: f64 = 1e-3;
pub const CONVERGENCE_FACTOR: (f64, f64) = (3.0, 5.0);
pub const HJB_TOL: f64 = 1e-3;
pub const HJB_CONTROL_MIN: f64 = 1e-2;
pub const MAXIMIZER_MARGIN: f64 = -1e-8;
pub const FOC_TOL: f64 = 1e-6;
pub const MC_BIAS_ALLOWANCE: f64 = 2e-3;
pub const HOMOGENEITY_TOL: f64 = 1e-12;
pub const PERTURBATION_MULTIPLIERS: [f64; 5] = [0.0, 0.5, 0.8, 1.2, 2.0];

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub measured: f64,
    pub tolerance: f64,
    pub detail: String,
    pub seconds: f64,
}

impl CheckResult {
    fn new(name: &str, passed: bool, measured: f64, tolerance: f64, detail: String) -> Self {
        Self {
            name: name.to_string(),
            passed,
            measured,
            tolerance,
            detail,
            seconds: 0.0,
        }
    }
}

fn timed(f: impl FnOnce() -> Result<CheckResult>) -> Result<CheckResult> {
    let start = Instant::now();
    let mut out = f()?;
    out.seconds = start.elapsed().as_secs_f64();
    Ok(out)
}

/// Multiplier for spread ranges; exactly 1 for the reference parameters.
pub fn grid_scale(model: &Model) -> f64 {
    let reference = Model::reference();
    let ratio = |m: &Model| {
        let sigma2 = m.params.sigma * m.params.sigma;
        (
            m.derived.drift / sigma2,
            q_of_lag(m, m.horizon()) / sigma2,
            m.derived.root_product / sigma2,
        )
    };
    let (b0, q0, c0) = ratio(&reference);
    let (b, q, c) = ratio(model);
    (b0 / b).min(q0 / q).min(c0 / c).sqrt()
}

/// Draws a valid parameter set with `T = 1`, `kappa` in [0.5, 2], `r` in
/// [0, kappa], `sigma` in [0.1, 1], `gamma` in [0.2, 0.8], `beta` in [0.5, 2].
pub fn random_params<R: Rng + ?Sized>(rng: &mut R) -> ModelParams {
    loop {
        let kappa = rng.random_range(0.5..=2.0);
        let params = ModelParams {
            r: rng.random_range(0.0..=kappa),
            kappa,
            sigma: rng.random_range(0.1..=1.0),
            gamma: rng.random_range(0.2..=0.8),
            beta: rng.random_range(0.5..=2.0),
            horizon: 1.0,
        };
        if Model::new(params).is_ok() {
            return params;
        }
    }
}

/// Settings of the full battery.
#[derive(Debug, Clone, PartialEq)]
pub struct VerifyConfig {
    pub scale: f64,
    /// Points per axis of the `(t, theta)` grid.
    pub riccati_points: usize,
    pub bound_extent: f64,
    pub bound_points: (usize, usize),
    pub pde: GridSpec,
    pub pde_interior: f64,
    pub pde_boundary: BoundaryKind,
    pub hjb_extent: f64,
    pub hjb_points: (usize, usize),
    /// Last time of the HJB grid, short of the horizon.
    pub hjb_t_gap: f64,
    pub maximizer_extent: f64,
    pub maximizer_points: (usize, usize),
    pub perturbations: usize,
    pub seed: u64,
    pub sim: SimConfig,
    pub bias_allowance: f64,
}

impl VerifyConfig {
    pub fn for_model(model: &Model) -> Self {
        let scale = grid_scale(model);
        Self {
            scale,
            riccati_points: 100,
            bound_extent: 3.0 * scale,
            bound_points: (61, 21),
            pde: GridSpec::symmetric(4.0 * scale, 801, 800),
            pde_interior: 2.0 * scale,
            pde_boundary: BoundaryKind::ClosedForm,
            hjb_extent: 3.0 * scale,
            hjb_points: (31, 21),
            hjb_t_gap: 1e-3,
            maximizer_extent: 2.0 * scale,
            maximizer_points: (11, 11),
            perturbations: 200,
            seed: 20_240_601,
            sim: SimConfig {
                s0: 0.5 * scale,
                ..SimConfig::new(100_000, 500, 20_240_601)
            },
            bias_allowance: MC_BIAS_ALLOWANCE,
        }
    }
}

fn axis(lo: f64, hi: f64, n: usize) -> impl Iterator<Item = f64> {
    let step = if n > 1 { (hi - lo) / (n - 1) as f64 } else { 0.0 };
    (0..n).map(move |i| if i + 1 == n { hi } else { lo + i as f64 * step })
}

/// Classical RK4 for `dq/dtau = q^2 - 2 b q + gamma kappa_gamma^2`, `q(0) = 0`,
/// the Riccati equation read backwards from the horizon.
pub fn rk4_riccati(model: &Model, lag: f64, steps: usize) -> f64 {
    let b = model.derived.drift;
    let c = model.derived.root_product;
    let rhs = |q: f64| q * q - 2.0 * b * q + c;
    let h = lag / steps as f64;
    let mut q = 0.0;
    for _ in 0..steps {
        let k1 = rhs(q);
        let k2 = rhs(q + 0.5 * h * k1);
        let k3 = rhs(q + 0.5 * h * k2);
        let k4 = rhs(q + h * k3);
        q += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    q
}

/// Closed-form `q^theta(t)` against RK4 over an `n x n` grid of `(t, theta)`.
pub fn riccati_check(family: &RiccatiFamily, n: usize) -> Result<CheckResult> {
    timed(|| {
        let model = family.model();
        let horizon = model.horizon();
        let mut worst = 0.0f64;
        let mut pairs = 0;
        for theta in axis(0.0, horizon, n) {
            for t in axis(0.0, horizon, n) {
                if t > theta {
                    continue;
                }
                let lag = theta - t;
                let steps = ((lag / horizon) * 2000.0).ceil().max(1.0) as usize;
                let dev = (family.q_theta(t, theta)? - rk4_riccati(model, lag, steps)).abs();
                worst = worst.max(dev);
                pairs += 1;
            }
        }
        Ok(CheckResult::new(
            "riccati-vs-rk4",
            worst <= RICCATI_TOL,
            worst,
            RICCATI_TOL,
            format!("max |q - q_rk4| = {worst:.3e} over {pairs} pairs"),
        ))
    })
}

/// Bounds on `q`, `g^T(0)` and `u`, and the symmetry of `u`.
pub fn bound_check(value: &ValueFunction, extent: f64, (n_s, n_t): (usize, usize), n_riccati: usize) -> Result<CheckResult> {
    timed(|| {
        let family = value.riccati();
        let model = value.model();
        let horizon = model.horizon();
        let lambda2 = model.derived.lambda2;
        let mut violations = Vec::new();
        let mut worst = 0.0f64;

        let mut grid_max = f64::NEG_INFINITY;
        for theta in axis(0.0, horizon, n_riccati) {
            for t in axis(0.0, horizon, n_riccati) {
                if t > theta {
                    continue;
                }
                let q = family.q_theta(t, theta)?;
                grid_max = grid_max.max(q);
                let excess = (-q).max(q - lambda2);
                if excess > BOUND_SLACK {
                    violations.push(format!("q({t}, {theta}) = {q} outside [0, {lambda2}]"));
                }
                worst = worst.max(excess);
            }
        }
        let q_top = family.q_theta(0.0, horizon)?;
        if (grid_max - q_top).abs() > BOUND_SLACK {
            violations.push(format!("grid max of q is {grid_max}, q^T(0) = {q_top}"));
        }
        worst = worst.max((grid_max - q_top).abs());

        let sigma2 = model.params.sigma * model.params.sigma;
        let g_top = family.g_theta(0.0, horizon)?;
        let g_cap = model.params.gamma * model.derived.kappa_gamma / sigma2;
        if g_top > g_cap + BOUND_SLACK {
            violations.push(format!("g^T(0) = {g_top} above {g_cap}"));
        }
        worst = worst.max(g_top - g_cap);

        let floor = model.terminal_u();
        for t in axis(0.0, horizon, n_t) {
            let slice = value.slice(t)?;
            for s in axis(-extent, extent, n_s) {
                let u = slice.eval(s)?.u;
                let lower = (floor - u) / floor;
                let upper = (u - value.u_upper_bound(s)) / u;
                let mirror = (u - slice.eval(-s)?.u).abs() / u;
                for (what, excess) in [("lower bound", lower), ("upper bound", upper), ("symmetry", mirror)] {
                    if excess > BOUND_SLACK {
                        violations.push(format!("{what} fails at (s, t) = ({s}, {t})"));
                    }
                    worst = worst.max(excess);
                }
            }
        }
        let detail = match violations.first() {
            None => format!("worst excess {worst:.3e}"),
            Some(first) => format!("{} violations, first: {first}", violations.len()),
        };
        Ok(CheckResult::new("bounds", violations.is_empty(), worst, BOUND_SLACK, detail))
    })
}

/// Crank–Nicolson solution vs the closed form, plus the refinement factor.
pub fn pde_check(value: &ValueFunction, spec: &GridSpec, interior: f64, kind: BoundaryKind) -> Result<(CheckResult, ConvergenceReport)> {
    let start = Instant::now();
    let report = pde_oracle::convergence_study(value, spec, kind, interior)?;
    let dev = report.coarse.max_relative;
    let (lo, hi) = CONVERGENCE_FACTOR;
    let order_ok = report.factor >= lo && report.factor <= hi;
    let mut out = CheckResult::new(
        "pde-oracle",
        dev <= PDE_TOL && order_ok,
        dev,
        PDE_TOL,
        format!(
            "{}x{} on |s| <= {:.3}: max rel {dev:.3e} at {:?}, median {:.3e}; refined max {:.3e}, factor {:.3}",
            spec.n_s,
            spec.n_t,
            spec.s_max,
            report.coarse.worst.unwrap_or((f64::NAN, f64::NAN)),
            report.coarse.median_relative,
            report.fine.max_relative,
            report.factor
        ),
    );
    out.seconds = start.elapsed().as_secs_f64();
    Ok((out, report))
}

/// One point of the HJB residual grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HjbPoint {
    pub s: f64,
    pub t: f64,
    pub z: f64,
    pub residual: f64,
    pub inflated_residual: f64,
}

/// Residual of the nonlinear HJB equation for `z` and for the surface with
/// `u` inflated by 10% at `x = 1`.
pub fn hjb_field(value: &ValueFunction, extent: f64, (n_s, n_t): (usize, usize), t_gap: f64) -> Result<Vec<HjbPoint>> {
    let model = value.model();
    let gamma = model.params.gamma;
    let inflate = 1.1f64.powf(1.0 - gamma);
    let z = |x: f64, s: f64, t: f64| value.z(x, s, t);
    let z_bad = |x: f64, s: f64, t: f64| Ok(inflate * value.z(x, s, t)?);
    let mut out = Vec::with_capacity(n_s * n_t);
    for t in axis(0.0, model.horizon() - t_gap, n_t) {
        for s in axis(-extent, extent, n_s) {
            out.push(HjbPoint {
                s,
                t,
                z: value.z(1.0, s, t)?,
                residual: pde_oracle::hjb_residual(z, model, 1.0, s, t, None)?,
                inflated_residual: pde_oracle::hjb_residual(z_bad, model, 1.0, s, t, None)?,
            });
        }
    }
    Ok(out)
}

/// Largest possible `|residual| / |z|` of the 10%-inflated surface: the
/// inflation leaves the linear terms balanced and shifts the consumption
/// term by `(1/1.1 - 1)(1 - gamma) / u` relative to `z`, and `u` never drops
/// below `beta^{1/(1-gamma)}`.
pub fn inflated_ceiling(model: &Model) -> f64 {
    (1.0 - 1.0 / 1.1) * (1.0 - model.params.gamma) / model.terminal_u()
}

pub fn hjb_check(value: &ValueFunction, extent: f64, points: (usize, usize), t_gap: f64) -> Result<CheckResult> {
    timed(|| {
        let field = hjb_field(value, extent, points, t_gap)?;
        let worst = field
            .iter()
            .map(|p| p.residual.abs() / (1.0 + p.z.abs()))
            .fold(0.0, f64::max);
        let control = field
            .iter()
            .map(|p| p.inflated_residual.abs() / (p.z.abs() * 1.1f64.powf(1.0 - value.model().params.gamma)))
            .fold(0.0, f64::max);
        Ok(CheckResult::new(
            "hjb-residual",
            worst <= HJB_TOL && control > HJB_CONTROL_MIN,
            worst,
            HJB_TOL,
            format!(
                "max |res|/(1+|z|) = {worst:.3e} on {} points; inflated-u control max |res|/|z| = {control:.3e} (needs > {HJB_CONTROL_MIN:e}, analytic ceiling {:.3e})",
                field.len(),
                inflated_ceiling(value.model())
            ),
        ))
    })
}

/// The feedback controls against random competitors in the Hamiltonian,
/// plus the first-order conditions.
pub fn maximizer_check(
    value: &ValueFunction,
    extent: f64,
    (n_s, n_t): (usize, usize),
    perturbations: usize,
    seed: u64,
) -> Result<CheckResult> {
    timed(|| {
        let model = value.model();
        let gamma = model.params.gamma;
        let sigma2 = model.params.sigma * model.params.sigma;
        let policy = FeedbackPolicy::optimal(value);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut margin = f64::INFINITY;
        let mut foc = 0.0f64;
        let mut at = (0.0, 0.0);
        // stay one FD step clear of the horizon so z_t is defined
        let t_end = model.horizon() * (1.0 - 1e-2);
        for t in axis(0.0, t_end, n_t) {
            for s in axis(-extent, extent, n_s) {
                let h = Hamiltonian::of_value(value, 1.0, s, t)?;
                let ctrl = policy.control(1.0, s, t)?;
                let best = (ctrl.position, ctrl.consumption);
                for _ in 0..perturbations {
                    let spread: f64 = 10f64.powf(rng.random_range(-3.0..0.5));
                    let za: f64 = rng.sample(StandardNormal);
                    let zc: f64 = rng.sample(StandardNormal);
                    let a = best.0 + spread * (1.0 + best.0.abs()) * za;
                    let c = if rng.random_bool(0.05) { 0.0 } else { best.1 * (spread * zc).exp() };
                    let g = h.gain(best, (a, c));
                    if g < margin {
                        margin = g;
                        at = (s, t);
                    }
                }
                let p = &h.partials;
                let d_a = h.gain((best.0 + 1e-4, best.1), (best.0 - 1e-4, best.1)) / 2e-4;
                let d_a = d_a.abs() / (sigma2 * p.z_xx.abs() * (1.0 + best.0.abs()));
                let d_c = (gamma * best.1.powf(gamma - 1.0) - p.z_x).abs() / p.z_x;
                foc = foc.max(d_a).max(d_c);
            }
        }
        Ok(CheckResult::new(
            "maximizer",
            margin >= MAXIMIZER_MARGIN && foc <= FOC_TOL,
            margin,
            MAXIMIZER_MARGIN,
            format!(
                "min H(opt) - H(perturbed) = {margin:.3e} at (s, t) = ({:.3}, {:.3}); max normalised FOC {foc:.3e}",
                at.0, at.1
            ),
        ))
    })
}

/// `z(2, s, t) = 2^gamma z(1, s, t)` on a grid, and the same scaling for
/// simulated objectives path by path.
pub fn homogeneity_check(value: &ValueFunction, extent: f64, sim: &SimConfig) -> Result<CheckResult> {
    timed(|| {
        let model = value.model();
        let factor = 2f64.powf(model.params.gamma);
        let mut worst = 0.0f64;
        for t in axis(0.0, model.horizon(), 11) {
            for s in axis(-extent, extent, 21) {
                let one = value.z(1.0, s, t)?;
                let two = value.z(2.0, s, t)?;
                worst = worst.max((two / (factor * one) - 1.0).abs());
            }
        }
        let grid = worst;
        let base = SimConfig {
            record_paths: true,
            x0: 1.0,
            ..*sim
        };
        let one = montecarlo::simulate_wealth(value, PolicyKind::Optimal, &base)?;
        let two = montecarlo::simulate_wealth(value, PolicyKind::Optimal, &SimConfig { x0: 2.0, ..base })?;
        for (a, b) in one.paths.iter().zip(&two.paths) {
            worst = worst.max((b.objective / (factor * a.objective) - 1.0).abs());
        }
        Ok(CheckResult::new(
            "homogeneity",
            worst <= HOMOGENEITY_TOL,
            worst,
            HOMOGENEITY_TOL,
            format!(
                "grid max rel {grid:.3e}; pathwise max rel {worst:.3e} over {} paths",
                one.paths.len()
            ),
        ))
    })
}

pub fn optimality_check(value: &ValueFunction, sim: &SimConfig, bias_allowance: f64) -> Result<(CheckResult, OptimalityReport)> {
    let start = Instant::now();
    let set = montecarlo::perturbation_set(&PERTURBATION_MULTIPLIERS)?;
    let report = montecarlo::optimality_test(value, sim, &set, bias_allowance)?;
    let opt = &report.rows[0];
    let failures: Vec<String> = report
        .rows
        .iter()
        .filter(|r| !r.passed)
        .map(|r| r.kind.to_string())
        .collect();
    let worst_excess = report.rows[1..]
        .iter()
        .map(|r| (r.estimate.mean - report.z) / r.estimate.std_error.max(f64::MIN_POSITIVE))
        .fold(f64::NEG_INFINITY, f64::max);
    let mut out = CheckResult::new(
        "monte-carlo",
        failures.is_empty(),
        (opt.estimate.mean - report.z).abs(),
        3.0 * opt.estimate.std_error + bias_allowance,
        format!(
            "z = {:.6}, optimal {:.6} +- {:.2e}; largest perturbed excess {worst_excess:.2} se{}",
            report.z,
            opt.estimate.mean,
            opt.estimate.std_error,
            if failures.is_empty() {
                String::new()
            } else {
                format!("; failing: {}", failures.join(", "))
            }
        ),
    );
    out.seconds = start.elapsed().as_secs_f64();
    Ok((out, report))
}

/// Runs every check, skipping none; errors abort the battery.
pub fn verify_all(value: &ValueFunction, cfg: &VerifyConfig) -> Result<Vec<CheckResult>> {
    if cfg.pde.s_max > value.s_max() {
        return Err(Error::Config(format!(
            "PDE domain {} exceeds the evaluation domain {}",
            cfg.pde.s_max,
            value.s_max()
        )));
    }
    Ok(vec![
        riccati_check(value.riccati(), cfg.riccati_points)?,
        bound_check(value, cfg.bound_extent, cfg.bound_points, cfg.riccati_points)?,
        pde_check(value, &cfg.pde, cfg.pde_interior, cfg.pde_boundary)?.0,
        hjb_check(value, cfg.hjb_extent, cfg.hjb_points, cfg.hjb_t_gap)?,
        maximizer_check(value, cfg.maximizer_extent, cfg.maximizer_points, cfg.perturbations, cfg.seed)?,
        optimality_check(value, &cfg.sim, cfg.bias_allowance)?.0,
        homogeneity_check(value, cfg.bound_extent, &SimConfig {
            n_paths: 2_000,
            ..cfg.sim
        })?,
    ])
}
