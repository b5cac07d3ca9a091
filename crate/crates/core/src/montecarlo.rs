//! Monte Carlo estimation of the objective `E[int c^gamma dv + beta X_T^gamma]`.
//!
//! The spread is advanced with its exact Gaussian transition, sampled
//! jointly with the Brownian increment over the same step so the wealth
//! equation sees the very same noise. Wealth is advanced in log space,
//! `d log X = F dv + sigma a R dW` for position/consumption multipliers
//! `a` and `c` (`a = c = 1` is the optimum), or optionally by Euler in
//! levels with absorption at zero.
//!
//! Every requested policy rides the same spread paths (common random
//! numbers), so `u` and `u_s` are evaluated once per path and step.
//!
//! Paths are split into a fixed number of chunks, each drawing from its own
//! ChaCha stream `(seed, chunk)`; chunk results are merged in chunk order,
//! which makes estimates bit-reproducible whatever the thread count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::Model;
use crate::policy::{log_drift, PolicyKind};
use crate::value::{ratio_from_point, z_from_u, TimeSlice, ValueFunction, ValuePoint};

pub const DEFAULT_CHUNKS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WealthScheme {
    /// Euler on `log X`; positivity is structural.
    LogExponential,
    /// Euler on `X` itself, floored at zero (absorbing).
    LevelEuler,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub n_paths: usize,
    pub n_steps: usize,
    pub seed: u64,
    pub x0: f64,
    pub s0: f64,
    pub t0: f64,
    /// Number of independent random streams; fixes the work partition.
    pub chunks: usize,
    pub scheme: WealthScheme,
    /// Keep per-path objectives and terminal wealth.
    pub record_paths: bool,
}

impl SimConfig {
    pub fn new(n_paths: usize, n_steps: usize, seed: u64) -> Self {
        Self {
            n_paths,
            n_steps,
            seed,
            x0: 1.0,
            s0: 0.0,
            t0: 0.0,
            chunks: DEFAULT_CHUNKS,
            scheme: WealthScheme::LogExponential,
            record_paths: false,
        }
    }

    pub fn validate(&self, model: &Model) -> Result<()> {
        if self.n_paths < 1 {
            return Err(Error::Config("n_paths must be at least 1".into()));
        }
        if self.n_steps < 1 {
            return Err(Error::Config("n_steps must be at least 1".into()));
        }
        if self.chunks < 1 {
            return Err(Error::Config("chunks must be at least 1".into()));
        }
        if !(self.x0 > 0.0 && self.x0.is_finite()) {
            return Err(Error::Config(format!("x0 must be positive, got {}", self.x0)));
        }
        if !self.s0.is_finite() {
            return Err(Error::Config(format!("s0 must be finite, got {}", self.s0)));
        }
        let horizon = model.horizon();
        if !(self.t0 >= 0.0 && self.t0 < horizon) {
            return Err(Error::Config(format!("t0 must lie in [0, {horizon}), got {}", self.t0)));
        }
        Ok(())
    }

    pub fn dt(&self, model: &Model) -> f64 {
        (model.horizon() - self.t0) / self.n_steps as f64
    }
}

/// Mean and standard error of the per-path objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n_paths: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathRecord {
    pub path: usize,
    pub objective: f64,
    pub terminal_wealth: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyRun {
    pub kind: PolicyKind,
    pub estimate: ObjectiveEstimate,
    /// Empty unless `record_paths` was set.
    pub paths: Vec<PathRecord>,
}

/// Exact one-step law of `(S, W)` for the OU spread.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OuTransition {
    /// `exp(-kappa dt)`.
    pub decay: f64,
    /// Standard deviation of the spread noise, `sigma sqrt((1 - e^{-2 kappa dt}) / (2 kappa))`.
    pub noise_sd: f64,
    pub dt: f64,
    /// Regression coefficient of the spread noise on `dW`.
    loading: f64,
    /// Residual standard deviation of the spread noise given `dW`.
    residual_sd: f64,
}

impl OuTransition {
    pub fn new(model: &Model, dt: f64) -> Self {
        let kappa = model.params.kappa;
        let sigma = model.params.sigma;
        let var = -(-2.0 * kappa * dt).exp_m1() / (2.0 * kappa);
        let cov = -(-kappa * dt).exp_m1() / kappa;
        let loading = sigma * cov / dt;
        let residual = sigma * sigma * (var - cov * cov / dt);
        Self {
            decay: (-kappa * dt).exp(),
            noise_sd: sigma * var.sqrt(),
            dt,
            loading,
            residual_sd: residual.max(0.0).sqrt(),
        }
    }

    /// Returns `(S_next, dW)` from two independent standard normals.
    #[inline]
    pub fn step(&self, s: f64, z1: f64, z2: f64) -> (f64, f64) {
        let dw = self.dt.sqrt() * z1;
        (self.decay * s + self.loading * dw + self.residual_sd * z2, dw)
    }

    pub fn mean(&self, s: f64) -> f64 {
        self.decay * s
    }

    pub fn variance(&self) -> f64 {
        self.noise_sd * self.noise_sd
    }
}

/// Samples `n_steps` exact OU transitions from `s0`; the returned path has
/// `n_steps + 1` points.
pub fn sample_ou_path<R: Rng + ?Sized>(model: &Model, s0: f64, dt: f64, n_steps: usize, rng: &mut R) -> Vec<f64> {
    let step = OuTransition::new(model, dt);
    let mut path = Vec::with_capacity(n_steps + 1);
    let mut s = s0;
    path.push(s);
    for _ in 0..n_steps {
        let z1: f64 = rng.sample(StandardNormal);
        let z2: f64 = rng.sample(StandardNormal);
        s = step.step(s, z1, z2).0;
        path.push(s);
    }
    path
}

/// Streaming mean/variance, merged pairwise.
#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    n: usize,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    fn merge(&mut self, other: &Moments) {
        if other.n == 0 {
            return;
        }
        let n = self.n + other.n;
        let delta = other.mean - self.mean;
        self.mean += delta * other.n as f64 / n as f64;
        self.m2 += other.m2 + delta * delta * (self.n as f64 * other.n as f64) / n as f64;
        self.n = n;
    }

    fn estimate(&self) -> ObjectiveEstimate {
        let var = if self.n > 1 {
            self.m2 / (self.n - 1) as f64
        } else {
            0.0
        };
        ObjectiveEstimate {
            mean: self.mean,
            std_error: (var / self.n as f64).sqrt(),
            n_paths: self.n,
        }
    }
}

/// Shared, read-only state of one simulation.
struct Driver<'a> {
    model: &'a Model,
    cfg: &'a SimConfig,
    slices: Vec<TimeSlice>,
    step: OuTransition,
}

impl<'a> Driver<'a> {
    fn new(value: &'a ValueFunction, cfg: &'a SimConfig) -> Result<Self> {
        let model = value.model();
        cfg.validate(model)?;
        let dt = cfg.dt(model);
        let slices = (0..cfg.n_steps)
            .map(|j| value.slice(cfg.t0 + j as f64 * dt))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            model,
            cfg,
            slices,
            step: OuTransition::new(model, dt),
        })
    }

    fn chunk_range(&self, chunk: usize) -> std::ops::Range<usize> {
        let chunks = self.cfg.chunks.min(self.cfg.n_paths);
        let base = self.cfg.n_paths / chunks;
        let extra = self.cfg.n_paths % chunks;
        let start = chunk * base + chunk.min(extra);
        start..start + base + usize::from(chunk < extra)
    }

    fn chunk_count(&self) -> usize {
        self.cfg.chunks.min(self.cfg.n_paths)
    }

    fn rng(&self, chunk: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(chunk as u64);
        rng
    }

    /// Walks one spread path, handing `(step, s, u/u_s, dW)` to `on_step`
    /// for each of the `n_steps` steps; returns the terminal spread.
    fn walk<R: Rng>(
        &self,
        rng: &mut R,
        path: usize,
        mut on_step: impl FnMut(usize, f64, ValuePoint, f64) -> Result<()>,
    ) -> Result<f64> {
        let mut s = self.cfg.s0;
        for (j, slice) in self.slices.iter().enumerate() {
            let point = slice.eval(s).map_err(|e| Error::Simulation {
                path,
                step: j,
                detail: e.to_string(),
            })?;
            let z1: f64 = rng.sample(StandardNormal);
            let z2: f64 = rng.sample(StandardNormal);
            let (next, dw) = self.step.step(s, z1, z2);
            on_step(j, s, point, dw)?;
            s = next;
        }
        Ok(s)
    }
}

struct Lane {
    a_mult: f64,
    c_mult: f64,
    c_mult_pow: f64,
}

struct ChunkOutput {
    moments: Vec<Moments>,
    records: Vec<Vec<PathRecord>>,
}

/// Simulates every policy in `kinds` on common spread paths.
pub fn simulate_policies(value: &ValueFunction, kinds: &[PolicyKind], cfg: &SimConfig) -> Result<Vec<PolicyRun>> {
    if kinds.is_empty() {
        return Err(Error::Config("no policies to simulate".into()));
    }
    let driver = Driver::new(value, cfg)?;
    let model = driver.model;
    let gamma = model.params.gamma;
    let lanes: Vec<Lane> = kinds
        .iter()
        .map(|k| {
            let (a_mult, c_mult) = k.multipliers();
            Lane {
                a_mult,
                c_mult,
                c_mult_pow: c_mult.powf(gamma),
            }
        })
        .collect();

    let outputs = (0..driver.chunk_count())
        .into_par_iter()
        .map(|chunk| simulate_chunk(&driver, &lanes, chunk))
        .collect::<Result<Vec<_>>>()?;

    let mut runs: Vec<PolicyRun> = kinds
        .iter()
        .map(|&kind| PolicyRun {
            kind,
            estimate: ObjectiveEstimate {
                mean: 0.0,
                std_error: 0.0,
                n_paths: 0,
            },
            paths: Vec::new(),
        })
        .collect();
    let mut totals = vec![Moments::default(); kinds.len()];
    for out in outputs {
        for (p, (m, rec)) in out.moments.iter().zip(out.records).enumerate() {
            totals[p].merge(m);
            runs[p].paths.extend(rec);
        }
    }
    for (run, m) in runs.iter_mut().zip(&totals) {
        run.estimate = m.estimate();
    }
    Ok(runs)
}

fn simulate_chunk(driver: &Driver<'_>, lanes: &[Lane], chunk: usize) -> Result<ChunkOutput> {
    let model = driver.model;
    let cfg = driver.cfg;
    let m = &model.params;
    let sigma = m.sigma;
    let dt = driver.step.dt;
    let kappa1 = model.derived.kappa1;
    let terminal_u = model.terminal_u();

    let mut rng = driver.rng(chunk);
    let mut moments = vec![Moments::default(); lanes.len()];
    let mut records: Vec<Vec<PathRecord>> = vec![Vec::new(); lanes.len()];
    // log wealth or wealth level, depending on the scheme
    let mut state = vec![0.0; lanes.len()];
    let mut utility = vec![0.0; lanes.len()];
    let start = match cfg.scheme {
        WealthScheme::LogExponential => cfg.x0.ln(),
        WealthScheme::LevelEuler => cfg.x0,
    };

    for path in driver.chunk_range(chunk) {
        state.iter_mut().for_each(|v| *v = start);
        utility.iter_mut().for_each(|v| *v = 0.0);

        let s_end = driver.walk(&mut rng, path, |j, s, point, dw| {
            let ratio = ratio_from_point(model, s, point);
            let inv_u = 1.0 / point.u;
            let u_pow = point.u.powf(-m.gamma);
            let weight = if j == 0 { 0.5 } else { 1.0 };
            for (lane, (x, acc)) in lanes.iter().zip(state.iter_mut().zip(utility.iter_mut())) {
                match cfg.scheme {
                    WealthScheme::LogExponential => {
                        let x_pow = (m.gamma * *x).exp();
                        *acc += weight * lane.c_mult_pow * u_pow * x_pow;
                        let drift = log_drift(model, (lane.a_mult, lane.c_mult), s, point);
                        *x += drift * dt + sigma * lane.a_mult * ratio * dw;
                    }
                    WealthScheme::LevelEuler => {
                        if *x > 0.0 {
                            *acc += weight * lane.c_mult_pow * u_pow * x.powf(m.gamma);
                            let a = lane.a_mult * ratio;
                            let growth = (m.r - kappa1 * a * s - lane.c_mult * inv_u) * dt + a * sigma * dw;
                            *x = (*x * (1.0 + growth)).max(0.0);
                        }
                    }
                }
                if !x.is_finite() {
                    return Err(Error::Simulation {
                        path,
                        step: j,
                        detail: format!("wealth state became {x}"),
                    });
                }
            }
            Ok(())
        })?;
        if !s_end.is_finite() {
            return Err(Error::Simulation {
                path,
                step: cfg.n_steps,
                detail: format!("spread became {s_end}"),
            });
        }

        let u_pow_end = terminal_u.powf(-m.gamma);
        for (p, lane) in lanes.iter().enumerate() {
            let (x_end, x_pow) = match cfg.scheme {
                WealthScheme::LogExponential => (state[p].exp(), (m.gamma * state[p]).exp()),
                WealthScheme::LevelEuler => (state[p], state[p].powf(m.gamma)),
            };
            let running = (utility[p] + 0.5 * lane.c_mult_pow * u_pow_end * x_pow) * dt;
            let objective = running + m.beta * x_pow;
            if !objective.is_finite() {
                return Err(Error::Simulation {
                    path,
                    step: cfg.n_steps,
                    detail: format!("objective became {objective}"),
                });
            }
            moments[p].push(objective);
            if cfg.record_paths {
                records[p].push(PathRecord {
                    path,
                    objective,
                    terminal_wealth: x_end,
                });
            }
        }
    }
    Ok(ChunkOutput { moments, records })
}

/// Simulates a single policy.
pub fn simulate_wealth(value: &ValueFunction, kind: PolicyKind, cfg: &SimConfig) -> Result<PolicyRun> {
    Ok(simulate_policies(value, &[kind], cfg)?.remove(0))
}

/// One row of an [`OptimalityReport`].
#[derive(Debug, Clone, PartialEq)]
pub struct OptimalityRow {
    pub kind: PolicyKind,
    pub estimate: ObjectiveEstimate,
    /// `z - mean`.
    pub gap: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimalityReport {
    pub z: f64,
    pub bias_allowance: f64,
    pub rows: Vec<OptimalityRow>,
}

impl OptimalityReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.passed)
    }
}

/// Scaled policies for each multiplier, applied to one control at a time.
pub fn perturbation_set(multipliers: &[f64]) -> Result<Vec<PolicyKind>> {
    let mut kinds = Vec::new();
    for &m in multipliers {
        if m == 1.0 {
            continue;
        }
        if m == 0.0 {
            kinds.push(PolicyKind::ZeroPosition);
            kinds.push(PolicyKind::NoConsumption);
        } else {
            kinds.push(PolicyKind::scaled(m, 1.0)?);
            kinds.push(PolicyKind::scaled(1.0, m)?);
        }
    }
    Ok(kinds)
}

/// Compares simulated objectives with `z(x0, s0, t0)`.
///
/// The optimum passes if it lies within `3 std_error + bias_allowance` of
/// `z`; every perturbed policy passes if it does not exceed `z + 3 std_error`.
pub fn optimality_test(
    value: &ValueFunction,
    cfg: &SimConfig,
    perturbations: &[PolicyKind],
    bias_allowance: f64,
) -> Result<OptimalityReport> {
    if perturbations.is_empty() {
        return Err(Error::Config("perturbation set must not be empty".into()));
    }
    let mut kinds = vec![PolicyKind::Optimal];
    kinds.extend(perturbations.iter().copied());
    let z = value.z(cfg.x0, cfg.s0, cfg.t0)?;
    let runs = simulate_policies(value, &kinds, cfg)?;
    let rows = runs
        .into_iter()
        .enumerate()
        .map(|(i, run)| {
            let est = run.estimate;
            let passed = if i == 0 {
                (est.mean - z).abs() <= 3.0 * est.std_error + bias_allowance
            } else {
                est.mean <= z + 3.0 * est.std_error
            };
            OptimalityRow {
                kind: run.kind,
                estimate: est,
                gap: z - est.mean,
                passed,
            }
        })
        .collect();
    Ok(OptimalityReport {
        z,
        bias_allowance,
        rows,
    })
}

/// Drift of `M_v = z(X_v, S_v, v) + int_{t0}^v c^gamma` under the optimal policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MartingaleReport {
    /// Mean over paths of the least-squares slope of `M` against time.
    pub mean_slope: f64,
    pub slope_std_error: f64,
    pub t_stat: f64,
    pub n_paths: usize,
}

/// Fits `M` against time on every optimal-policy path and tests whether the
/// average slope differs from zero.
pub fn martingale_check(value: &ValueFunction, cfg: &SimConfig) -> Result<MartingaleReport> {
    let driver = Driver::new(value, cfg)?;
    let outputs = (0..driver.chunk_count())
        .into_par_iter()
        .map(|chunk| martingale_chunk(&driver, chunk))
        .collect::<Result<Vec<_>>>()?;
    let mut total = Moments::default();
    for m in &outputs {
        total.merge(m);
    }
    let est = total.estimate();
    Ok(MartingaleReport {
        mean_slope: est.mean,
        slope_std_error: est.std_error,
        t_stat: if est.std_error > 0.0 { est.mean / est.std_error } else { 0.0 },
        n_paths: est.n_paths,
    })
}

fn martingale_chunk(driver: &Driver<'_>, chunk: usize) -> Result<Moments> {
    let model = driver.model;
    let cfg = driver.cfg;
    let m = &model.params;
    let dt = driver.step.dt;
    let n = cfg.n_steps;
    // times are t0 + j dt for j = 0..=n; centre them for the regression
    let t_mean = 0.5 * n as f64 * dt;
    let t_ss: f64 = (0..=n).map(|j| (j as f64 * dt - t_mean).powi(2)).sum();

    let mut rng = driver.rng(chunk);
    let mut out = Moments::default();
    for path in driver.chunk_range(chunk) {
        let mut log_x = cfg.x0.ln();
        let mut consumed = 0.0;
        let mut prev_rate = 0.0;
        let mut cross = 0.0;
        let s_end = driver.walk(&mut rng, path, |j, s, point, dw| {
            let x = log_x.exp();
            let rate = (x / point.u).powf(m.gamma);
            if j > 0 {
                consumed += 0.5 * (prev_rate + rate) * dt;
            }
            prev_rate = rate;
            let level = z_from_u(m.gamma, x, point.u)? + consumed;
            cross += (j as f64 * dt - t_mean) * level;
            let ratio = ratio_from_point(model, s, point);
            log_x += log_drift(model, (1.0, 1.0), s, point) * dt + m.sigma * ratio * dw;
            Ok(())
        })?;
        let _ = s_end;
        let x = log_x.exp();
        let u_end = model.terminal_u();
        let rate = (x / u_end).powf(m.gamma);
        consumed += 0.5 * (prev_rate + rate) * dt;
        let level = z_from_u(m.gamma, x, u_end)? + consumed;
        cross += (n as f64 * dt - t_mean) * level;
        let slope = cross / t_ss;
        if !slope.is_finite() {
            return Err(Error::Simulation {
                path,
                step: n,
                detail: "martingale slope is not finite".into(),
            });
        }
        out.push(slope);
    }
    Ok(out)
}
