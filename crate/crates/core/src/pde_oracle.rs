//! Finite-difference oracles for the closed form.
//!
//! [`solve_linear_pde`] marches the linear problem
//!
//! ```text
//! u_t + (sigma^2/2) u_ss - b s u_s + (gamma kappa_gamma^2 s^2 / (2 sigma^2) + r gamma/(1-gamma)) u + 1 = 0
//! u(s, T) = beta^(1/(1-gamma))
//! ```
//!
//! backward in time on a truncated spread interval, using only the model
//! constants. The closed form enters only through the optional Dirichlet
//! boundary data. [`hjb_residual`] evaluates the nonlinear HJB equation for
//! any candidate value surface by central differences.

use crate::error::{Error, Result};
use crate::fd;
use crate::model::{Model, ModelParams};
use crate::value::ValueFunction;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    CrankNicolson,
    Implicit,
}

impl Scheme {
    fn implicitness(self) -> f64 {
        match self {
            Scheme::CrankNicolson => 0.5,
            Scheme::Implicit => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub s_min: f64,
    pub s_max: f64,
    /// Spatial points, boundaries included.
    pub n_s: usize,
    /// Time steps; the grid holds `n_t + 1` layers.
    pub n_t: usize,
    pub scheme: Scheme,
}

impl GridSpec {
    /// Symmetric Crank–Nicolson grid on `[-extent, extent]`.
    pub fn symmetric(extent: f64, n_s: usize, n_t: usize) -> Self {
        Self {
            s_min: -extent,
            s_max: extent,
            n_s,
            n_t,
            scheme: Scheme::CrankNicolson,
        }
    }

    /// Same interval with both steps halved.
    pub fn refined(&self) -> Self {
        Self {
            n_s: 2 * self.n_s - 1,
            n_t: 2 * self.n_t,
            ..*self
        }
    }

    /// Time steps keeping `V dt` moderate where the potential `V` is largest:
    /// `50 s_max^2 max(1, gamma kappa_gamma^2 / (2 sigma^2)) T`.
    pub fn suggested_time_steps(model: &Model, extent: f64) -> usize {
        let sigma = model.params.sigma;
        let potential = model.derived.root_product / (2.0 * sigma * sigma);
        let n = 50.0 * extent * extent * potential.max(1.0) * model.horizon();
        (n.ceil() as usize).max(50)
    }

    fn validate(&self) -> Result<()> {
        if !(self.s_min < 0.0 && self.s_max > 0.0 && self.s_min.is_finite() && self.s_max.is_finite()) {
            return Err(Error::Config(format!(
                "PDE grid needs s_min < 0 < s_max, got [{}, {}]",
                self.s_min, self.s_max
            )));
        }
        if self.n_s < 51 {
            return Err(Error::Config(format!("PDE grid needs n_s >= 51, got {}", self.n_s)));
        }
        if self.n_t < 50 {
            return Err(Error::Config(format!("PDE grid needs n_t >= 50, got {}", self.n_t)));
        }
        Ok(())
    }
}

/// Boundary treatment at the truncation points.
pub enum Boundary<'a> {
    /// Prescribed values `u(s, t)` at `s_min` and `s_max`.
    Dirichlet(&'a dyn Fn(f64, f64) -> Result<f64>),
    /// `u_ss = 0` at both ends; uses nothing but the model constants.
    ZeroCurvature,
}

/// Solution of the linear PDE on a uniform `(s, t)` grid.
#[derive(Debug, Clone)]
pub struct PdeGrid {
    pub s_min: f64,
    pub s_max: f64,
    pub n_s: usize,
    pub n_t: usize,
    pub horizon: f64,
    pub scheme: Scheme,
    /// Layer `j` (time `j T / n_t`) occupies `u_grid[j * n_s .. (j + 1) * n_s]`.
    pub u_grid: Vec<f64>,
}

impl PdeGrid {
    pub fn ds(&self) -> f64 {
        (self.s_max - self.s_min) / (self.n_s - 1) as f64
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.n_t as f64
    }

    pub fn s(&self, i: usize) -> f64 {
        self.s_min + i as f64 * self.ds()
    }

    pub fn t(&self, j: usize) -> f64 {
        j as f64 * self.dt()
    }

    pub fn layer(&self, j: usize) -> &[f64] {
        &self.u_grid[j * self.n_s..(j + 1) * self.n_s]
    }

    pub fn value(&self, j: usize, i: usize) -> f64 {
        self.u_grid[j * self.n_s + i]
    }
}

/// Backward time-marching of the linear PDE with a theta-scheme in time and
/// central differences in space.
pub fn solve_linear_pde(model: &Model, spec: &GridSpec, boundary: Boundary<'_>) -> Result<PdeGrid> {
    spec.validate()?;
    let n = spec.n_s;
    let horizon = model.horizon();
    let ds = (spec.s_max - spec.s_min) / (n - 1) as f64;
    let dt = horizon / spec.n_t as f64;
    let theta = spec.scheme.implicitness();

    let sigma2 = model.params.sigma * model.params.sigma;
    let b = model.derived.drift;
    let c = model.derived.root_product;
    let rate = model.rate_term();

    let s_at = |i: usize| spec.s_min + i as f64 * ds;
    let diffusion = 0.5 * sigma2 / (ds * ds);
    // operator row i: lower * u[i-1] + diag * u[i] + upper * u[i+1]
    let mut lower = vec![0.0; n];
    let mut diag = vec![0.0; n];
    let mut upper = vec![0.0; n];
    for i in 1..n - 1 {
        let s = s_at(i);
        let advection = b * s / (2.0 * ds);
        lower[i] = diffusion + advection;
        upper[i] = diffusion - advection;
        diag[i] = -2.0 * diffusion + c * s * s / (2.0 * sigma2) + rate;
    }

    let mut grid = vec![0.0; n * (spec.n_t + 1)];
    let terminal = model.terminal_u();
    grid[spec.n_t * n..].iter_mut().for_each(|v| *v = terminal);

    let interior = n - 2;
    let mut sub = vec![0.0; interior];
    let mut main = vec![0.0; interior];
    let mut sup = vec![0.0; interior];
    let mut rhs = vec![0.0; interior];
    let mut scratch = vec![0.0; interior];

    for j in (0..spec.n_t).rev() {
        let t_new = j as f64 * dt;
        let (head, tail) = grid.split_at_mut((j + 1) * n);
        let old = &tail[..n];
        let new = &mut head[j * n..];

        for k in 0..interior {
            let i = k + 1;
            let l_old = lower[i] * old[i - 1] + diag[i] * old[i] + upper[i] * old[i + 1];
            rhs[k] = old[i] + (1.0 - theta) * dt * l_old + dt;
            sub[k] = -theta * dt * lower[i];
            main[k] = 1.0 - theta * dt * diag[i];
            sup[k] = -theta * dt * upper[i];
        }

        match boundary {
            Boundary::Dirichlet(f) => {
                let left = f(spec.s_min, t_new)?;
                let right = f(spec.s_max, t_new)?;
                rhs[0] -= sub[0] * left;
                rhs[interior - 1] -= sup[interior - 1] * right;
                new[0] = left;
                new[n - 1] = right;
            }
            Boundary::ZeroCurvature => {
                // u[0] = 2 u[1] - u[2] folded into the first row, mirrored at the end
                main[0] += 2.0 * sub[0];
                sup[0] -= sub[0];
                let last = interior - 1;
                main[last] += 2.0 * sup[last];
                sub[last] -= sup[last];
            }
        }
        sub[0] = 0.0;
        sup[interior - 1] = 0.0;

        solve_tridiagonal(&sub, &main, &sup, &mut rhs, &mut scratch)
            .map_err(|e| Error::Numerical(format!("layer t = {t_new}: {e}")))?;
        new[1..n - 1].copy_from_slice(&rhs);
        if let Boundary::ZeroCurvature = boundary {
            new[0] = 2.0 * new[1] - new[2];
            new[n - 1] = 2.0 * new[n - 2] - new[n - 3];
        }
        if let Some(i) = new[..n].iter().position(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::Numerical(format!(
                "PDE layer t = {t_new} lost positivity at s = {} (value {})",
                s_at(i),
                new[i]
            )));
        }
    }

    Ok(PdeGrid {
        s_min: spec.s_min,
        s_max: spec.s_max,
        n_s: n,
        n_t: spec.n_t,
        horizon,
        scheme: spec.scheme,
        u_grid: grid,
    })
}

/// Thomas algorithm; `rhs` is overwritten with the solution.
pub fn solve_tridiagonal(
    sub: &[f64],
    main: &[f64],
    sup: &[f64],
    rhs: &mut [f64],
    scratch: &mut [f64],
) -> std::result::Result<(), String> {
    let n = rhs.len();
    let mut pivot = main[0];
    if !(pivot.abs() > f64::MIN_POSITIVE) {
        return Err("singular tridiagonal system at row 0".into());
    }
    rhs[0] /= pivot;
    for i in 1..n {
        scratch[i] = sup[i - 1] / pivot;
        pivot = main[i] - sub[i] * scratch[i];
        if !(pivot.abs() > f64::MIN_POSITIVE) {
            return Err(format!("singular tridiagonal system at row {i}"));
        }
        rhs[i] = (rhs[i] - sub[i] * rhs[i - 1]) / pivot;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= scratch[i + 1] * rhs[i + 1];
    }
    Ok(())
}

/// One point of the PDE-vs-closed-form comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Deviation {
    pub s: f64,
    pub t: f64,
    pub pde: f64,
    pub closed_form: f64,
    pub relative: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeviationSummary {
    pub max_relative: f64,
    pub median_relative: f64,
    pub worst: Option<(f64, f64)>,
    pub points: usize,
}

/// Relative deviation of the grid from the closed form at every grid point
/// with `|s| <= interior`.
pub fn deviation_field(grid: &PdeGrid, value: &ValueFunction, interior: f64) -> Result<Vec<Deviation>> {
    let mut out = Vec::new();
    for j in 0..=grid.n_t {
        let t = grid.t(j);
        let slice = value.slice(t)?;
        for i in 0..grid.n_s {
            let s = grid.s(i);
            if s.abs() > interior * (1.0 + 1e-12) {
                continue;
            }
            let closed = slice.eval(s)?.u;
            let pde = grid.value(j, i);
            out.push(Deviation {
                s,
                t,
                pde,
                closed_form: closed,
                relative: (pde - closed).abs() / closed,
            });
        }
    }
    Ok(out)
}

pub fn summarize(field: &[Deviation]) -> DeviationSummary {
    let mut rel: Vec<f64> = field.iter().map(|d| d.relative).collect();
    rel.sort_by(f64::total_cmp);
    let worst = field
        .iter()
        .max_by(|a, b| a.relative.total_cmp(&b.relative))
        .map(|d| (d.s, d.t));
    DeviationSummary {
        max_relative: rel.last().copied().unwrap_or(0.0),
        median_relative: if rel.is_empty() { 0.0 } else { rel[rel.len() / 2] },
        worst,
        points: rel.len(),
    }
}

/// Which boundary data a comparison run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryKind {
    /// Dirichlet values from the closed form.
    ClosedForm,
    ZeroCurvature,
}

/// Solves on `spec` with boundary data of the given kind.
pub fn solve_with(value: &ValueFunction, spec: &GridSpec, kind: BoundaryKind) -> Result<PdeGrid> {
    let closed = |s: f64, t: f64| value.u(s, t);
    let boundary = match kind {
        BoundaryKind::ClosedForm => Boundary::Dirichlet(&closed),
        BoundaryKind::ZeroCurvature => Boundary::ZeroCurvature,
    };
    solve_linear_pde(value.model(), spec, boundary)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceReport {
    pub coarse: DeviationSummary,
    pub fine: DeviationSummary,
    /// Ratio of the coarse to the fine maximum deviation.
    pub factor: f64,
}

/// Solves on `spec` and on the grid with both steps halved and compares the
/// maximum deviations on `|s| <= interior`.
pub fn convergence_study(
    value: &ValueFunction,
    spec: &GridSpec,
    kind: BoundaryKind,
    interior: f64,
) -> Result<ConvergenceReport> {
    let coarse = summarize(&deviation_field(&solve_with(value, spec, kind)?, value, interior)?);
    let fine = summarize(&deviation_field(&solve_with(value, &spec.refined(), kind)?, value, interior)?);
    Ok(ConvergenceReport {
        coarse,
        fine,
        factor: coarse.max_relative / fine.max_relative,
    })
}

/// Left-hand side of the nonlinear HJB equation for the surface `z`,
///
/// ```text
/// z_t + (sigma^2/2) z_ss - (sigma^2 z_xs - kappa1 s z_x)^2 / (2 sigma^2 z_xx)
///     + r x z_x - kappa s z_s + (1-gamma) (z_x/gamma)^(gamma/(gamma-1))
/// ```
///
/// with every partial taken by central differences (step `1e-4 (1 + |coord|)`
/// unless `step` is given).
pub fn hjb_residual<F>(z: F, model: &Model, x: f64, s: f64, t: f64, step: Option<f64>) -> Result<f64>
where
    F: Fn(f64, f64, f64) -> Result<f64>,
{
    let p = fd::partials(z, x, s, t, 0.0, step)?;
    hjb_from_partials(model, x, s, &p)
}

pub fn hjb_from_partials(model: &Model, x: f64, s: f64, p: &fd::Partials) -> Result<f64> {
    if !(p.z_xx.abs() >= 1e-12) {
        return Err(Error::Numerical(format!(
            "HJB residual ill-conditioned at (x, s) = ({x}, {s}): |z_xx| = {:e}",
            p.z_xx.abs()
        )));
    }
    if !(p.z_x > 0.0) {
        return Err(Error::Numerical(format!(
            "HJB consumption maximiser needs z_x > 0 at (x, s) = ({x}, {s}), got {}",
            p.z_x
        )));
    }
    let ModelParams { r, kappa, sigma, gamma, .. } = model.params;
    let sigma2 = sigma * sigma;
    let kappa1 = model.derived.kappa1;
    let cross = sigma2 * p.z_xs - kappa1 * s * p.z_x;
    Ok(p.z_t + 0.5 * sigma2 * p.z_ss - cross * cross / (2.0 * sigma2 * p.z_xx) + r * x * p.z_x
        - kappa * s * p.z_s
        + (1.0 - gamma) * (p.z_x / gamma).powf(gamma / (gamma - 1.0)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thomas_solves_known_system() {
        // [2 -1 0; -1 2 -1; 0 -1 2] x = [1 0 1] -> x = [1 1 1]
        let sub = [0.0, -1.0, -1.0];
        let main = [2.0, 2.0, 2.0];
        let sup = [-1.0, -1.0, 0.0];
        let mut rhs = [1.0, 0.0, 1.0];
        let mut scratch = [0.0; 3];
        solve_tridiagonal(&sub, &main, &sup, &mut rhs, &mut scratch).unwrap();
        for v in rhs {
            assert!((v - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn thomas_reports_singularity() {
        let mut rhs = [1.0, 1.0];
        let mut scratch = [0.0; 2];
        assert!(solve_tridiagonal(&[0.0, 1.0], &[0.0, 1.0], &[1.0, 0.0], &mut rhs, &mut scratch).is_err());
    }

    #[test]
    fn grid_validation() {
        let m = Model::reference();
        let dummy = |_: f64, _: f64| Ok(1.0);
        for spec in [
            GridSpec::symmetric(4.0, 41, 100),
            GridSpec::symmetric(4.0, 101, 20),
            GridSpec { s_min: 0.5, ..GridSpec::symmetric(4.0, 101, 100) },
        ] {
            assert!(solve_linear_pde(&m, &spec, Boundary::Dirichlet(&dummy)).is_err());
        }
    }

    #[test]
    fn terminal_layer_is_exact() {
        let m = Model::reference();
        let g = solve_linear_pde(&m, &GridSpec::symmetric(2.0, 201, 50), Boundary::ZeroCurvature).unwrap();
        assert!(g.layer(50).iter().all(|&v| v == 1.0));
        assert!(g.u_grid.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn crank_nicolson_converges_at_second_order() {
        let m = Model::reference();
        let v = ValueFunction::from_model(m).unwrap();
        let bc = |s: f64, t: f64| v.u(s, t);
        let spec = GridSpec::symmetric(3.0, 481, 200);
        let coarse = solve_linear_pde(&m, &spec, Boundary::Dirichlet(&bc)).unwrap();
        assert_eq!(coarse.value(0, 0), v.u(-3.0, 0.0).unwrap());
        let fine = solve_linear_pde(&m, &spec.refined(), Boundary::Dirichlet(&bc)).unwrap();
        let c = summarize(&deviation_field(&coarse, &v, 1.5).unwrap());
        let f = summarize(&deviation_field(&fine, &v, 1.5).unwrap());
        let factor = c.max_relative / f.max_relative;
        assert!(factor > 3.0 && factor < 5.0, "factor {factor}");
        assert!(f.median_relative < 1e-3, "{f:?}");
    }

    #[test]
    fn implicit_scheme_is_first_order_in_time() {
        let m = Model::reference();
        let v = ValueFunction::from_model(m).unwrap();
        let bc = |s: f64, t: f64| v.u(s, t);
        let mut spec = GridSpec::symmetric(3.0, 481, 100);
        spec.scheme = Scheme::Implicit;
        let coarse = summarize(&deviation_field(&solve_linear_pde(&m, &spec, Boundary::Dirichlet(&bc)).unwrap(), &v, 1.5).unwrap());
        spec.n_t = 200;
        let fine = summarize(&deviation_field(&solve_linear_pde(&m, &spec, Boundary::Dirichlet(&bc)).unwrap(), &v, 1.5).unwrap());
        let factor = coarse.max_relative / fine.max_relative;
        assert!(factor > 1.6 && factor < 2.4, "factor {factor}");
    }

    #[test]
    fn hjb_residual_of_closed_form_is_small() {
        let m = Model::reference();
        let v = ValueFunction::from_model(m).unwrap();
        let z = |x: f64, s: f64, t: f64| v.z(x, s, t);
        let res = hjb_residual(z, &m, 1.0, 0.0, 1.0 - 1e-3, None).unwrap();
        assert!(res.abs() < 1e-4, "{res}");
        let res = hjb_residual(z, &m, 1.0, 1.2, 0.3, None).unwrap();
        let zv = v.z(1.0, 1.2, 0.3).unwrap();
        assert!(res.abs() <= 1e-3 * (1.0 + zv), "{res}");
    }

    #[test]
    fn hjb_residual_detects_wrong_value() {
        let m = Model::reference();
        let v = ValueFunction::from_model(m).unwrap();
        let gamma = m.params.gamma;
        let z = |x: f64, s: f64, t: f64| Ok(x.powf(gamma) * (1.1 * v.u(s, t)?).powf(1.0 - gamma));
        let res = hjb_residual(z, &m, 1.0, 0.0, 0.5, None).unwrap();
        let zv = z(1.0, 0.0, 0.5).unwrap();
        assert!(res.abs() >= 1e-2 * zv, "{res} vs z {zv}");
    }

    #[test]
    fn hjb_rejects_flat_surface() {
        let m = Model::reference();
        let linear = |x: f64, _: f64, _: f64| Ok(x);
        assert!(hjb_residual(linear, &m, 1.0, 0.0, 0.5, None).is_err());
    }
}
