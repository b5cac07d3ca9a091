use std::io::Write;
use std::path::PathBuf;

use serde::Serialize;

use pairtrade_core::montecarlo::{self, SimConfig, WealthScheme};
use pairtrade_core::pde_oracle::{self, BoundaryKind, GridSpec, Scheme};
use pairtrade_core::policy::{self, FeedbackPolicy, PolicyKind};
use pairtrade_core::verify::{self, VerifyConfig};
use pairtrade_core::{Model, ModelParams, ValueFunction};

use crate::config::{Config, MODEL_KEYS};
use crate::output::{self, io_failure, row, Sink};
use crate::{
    BoundaryArg, Cli, Command, Failure, HjbArgs, OptimalityArgs, PdeArgs, PolicyArg, SchemeArg, SimArgs, SimulateArgs,
    SurfaceArgs, VerifyAllArgs,
};

struct Context {
    config: Config,
    value: ValueFunction,
    out_dir: Option<PathBuf>,
    scale: f64,
}

impl Context {
    fn model(&self) -> &Model {
        self.value.model()
    }

    fn sink(&self, name: &str) -> Result<Sink, Failure> {
        Sink::new(self.out_dir.as_deref(), name)
    }

    fn horizon(&self) -> f64 {
        self.model().horizon()
    }
}

fn model_params(cli: &Cli, config: Option<&Config>) -> Result<ModelParams, Failure> {
    let flags = [cli.r, cli.kappa, cli.sigma, cli.gamma, cli.beta, cli.horizon];
    let reference = ModelParams::REFERENCE;
    let defaults = [
        reference.r,
        reference.kappa,
        reference.sigma,
        reference.gamma,
        reference.beta,
        reference.horizon,
    ];
    let mut v = [0.0; 6];
    for (i, key) in MODEL_KEYS.iter().enumerate() {
        v[i] = match (flags[i], config) {
            (Some(x), _) => x,
            (None, Some(c)) => c.require(key)?,
            (None, None) => defaults[i],
        };
    }
    Ok(ModelParams {
        r: v[0],
        kappa: v[1],
        sigma: v[2],
        gamma: v[3],
        beta: v[4],
        horizon: v[5],
    })
}

fn context(cli: &Cli) -> Result<Context, Failure> {
    let file = cli.config.as_deref().map(Config::load).transpose()?;
    let params = model_params(cli, file.as_ref())?;
    let config = file.unwrap_or_default();
    let model = Model::new(params)?;
    let mut value = ValueFunction::from_model(model)?;
    if let Some(tol) = config.get("outer_tol")? {
        value = value.with_outer_tol(tol)?;
    }
    if let Some(nodes) = config.get("nodes")? {
        value = value.with_nodes(nodes)?;
    }
    if let Some(s_max) = config.get("s_max")? {
        value = value.with_s_max(s_max)?;
    }
    let out_dir = cli.out_dir.clone().or_else(|| config.raw("out_dir").map(PathBuf::from));
    Ok(Context {
        scale: verify::grid_scale(&model),
        config,
        value,
        out_dir,
    })
}

pub fn run(cli: Cli) -> Result<(), Failure> {
    let ctx = context(&cli)?;
    match &cli.command {
        Command::RiccatiTable { points } => riccati_table(&ctx, *points),
        Command::ValueSurface(args) => value_surface(&ctx, args),
        Command::PolicyTable(args) => policy_table(&ctx, args),
        Command::Simulate(args) => simulate(&ctx, args),
        Command::OptimalityTest(args) => optimality(&ctx, args),
        Command::VerifyPde(args) => verify_pde(&ctx, args),
        Command::VerifyHjb(args) => verify_hjb(&ctx, args),
        Command::VerifyAll(args) => verify_all(&ctx, args),
    }
}

fn grid(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>, Failure> {
    if n < 2 {
        return Err(Failure::Usage(format!("grids need at least 2 points, got {n}")));
    }
    let step = (hi - lo) / (n - 1) as f64;
    Ok((0..n).map(|i| if i + 1 == n { hi } else { lo + i as f64 * step }).collect())
}

fn finish(mut out: Box<dyn Write>) -> Result<(), Failure> {
    out.flush().map_err(io_failure)
}

fn riccati_table(ctx: &Context, points: usize) -> Result<(), Failure> {
    let family = ctx.value.riccati();
    let times = grid(0.0, ctx.horizon(), points)?;
    let mut out = ctx.sink("riccati-table.csv")?.open()?;
    writeln!(out, "t,theta,q,g,f").map_err(io_failure)?;
    for &theta in &times {
        for &t in times.iter().filter(|&&t| t <= theta) {
            let fields = [
                t,
                theta,
                family.q_theta(t, theta)?,
                family.g_theta(t, theta)?,
                family.f_theta(t, theta)?,
            ];
            row(&mut out, &fields).map_err(io_failure)?;
        }
    }
    finish(out)
}

fn surface_grid(ctx: &Context, args: &SurfaceArgs) -> Result<Vec<f64>, Failure> {
    let extent = args.extent.unwrap_or(3.0 * ctx.scale);
    if !(extent > 0.0) {
        return Err(Failure::Usage(format!("--extent must be positive, got {extent}")));
    }
    grid(-extent, extent, args.s_points)
}

fn value_surface(ctx: &Context, args: &SurfaceArgs) -> Result<(), Failure> {
    let spreads = surface_grid(ctx, args)?;
    let times = grid(0.0, ctx.horizon(), args.t_points)?;
    let mut out = ctx.sink("value-surface.csv")?.open()?;
    writeln!(out, "s,t,u,u_s,z_at_x1,R").map_err(io_failure)?;
    for &t in &times {
        let slice = ctx.value.slice(t)?;
        for &s in &spreads {
            let p = slice.eval(s)?;
            let fields = [s, t, p.u, p.u_s, ctx.value.z(1.0, s, t)?, ctx.value.ratio_r(s, t)?];
            row(&mut out, &fields).map_err(io_failure)?;
        }
    }
    finish(out)
}

fn policy_table(ctx: &Context, args: &SurfaceArgs) -> Result<(), Failure> {
    let spreads = surface_grid(ctx, args)?;
    if args.t_points < 1 {
        return Err(Failure::Usage("--t-points must be at least 1".into()));
    }
    // the drift is undefined at the horizon itself
    let dt = ctx.horizon() / args.t_points as f64;
    let optimal = FeedbackPolicy::optimal(&ctx.value);
    let mut out = ctx.sink("policy-table.csv")?.open()?;
    writeln!(out, "s,t,R,a_at_x1,c_at_x1,F").map_err(io_failure)?;
    for j in 0..args.t_points {
        let t = j as f64 * dt;
        for &s in &spreads {
            let control = optimal.control(1.0, s, t)?;
            let fields = [
                s,
                t,
                ctx.value.ratio_r(s, t)?,
                control.position,
                control.consumption,
                policy::wealth_drift_f(&ctx.value, s, t)?,
            ];
            row(&mut out, &fields).map_err(io_failure)?;
        }
    }
    finish(out)
}

fn sim_config(ctx: &Context, args: &SimArgs) -> Result<SimConfig, Failure> {
    let c = &ctx.config;
    let defaults = SimConfig::new(100_000, 500, 1);
    let cfg = SimConfig {
        n_paths: args.paths.map_or_else(|| c.get("paths"), |v| Ok(Some(v)))?.unwrap_or(defaults.n_paths),
        n_steps: args.steps.map_or_else(|| c.get("steps"), |v| Ok(Some(v)))?.unwrap_or(defaults.n_steps),
        seed: args.seed.map_or_else(|| c.get("seed"), |v| Ok(Some(v)))?.unwrap_or(defaults.seed),
        x0: args.x0.map_or_else(|| c.get("x0"), |v| Ok(Some(v)))?.unwrap_or(1.0),
        s0: args.s0.map_or_else(|| c.get("s0"), |v| Ok(Some(v)))?.unwrap_or(0.5),
        t0: args.t0.map_or_else(|| c.get("t0"), |v| Ok(Some(v)))?.unwrap_or(0.0),
        chunks: args.chunks.map_or_else(|| c.get("chunks"), |v| Ok(Some(v)))?.unwrap_or(defaults.chunks),
        scheme: match args.scheme {
            SchemeArg::Log => WealthScheme::LogExponential,
            SchemeArg::Level => WealthScheme::LevelEuler,
        },
        record_paths: false,
    };
    cfg.validate(ctx.model())?;
    Ok(cfg)
}

fn scheme_name(scheme: WealthScheme) -> &'static str {
    match scheme {
        WealthScheme::LogExponential => "log",
        WealthScheme::LevelEuler => "level",
    }
}

#[derive(Serialize)]
struct SimSummary {
    policy: String,
    a_mult: f64,
    c_mult: f64,
    paths: usize,
    steps: usize,
    seed: u64,
    chunks: usize,
    scheme: &'static str,
    x0: f64,
    s0: f64,
    t0: f64,
    mean: f64,
    std_error: f64,
    z: f64,
}

fn policy_kind(args: &SimulateArgs) -> Result<PolicyKind, Failure> {
    let scaled = args.a_mult.is_some() || args.c_mult.is_some();
    match (args.policy, scaled) {
        (PolicyArg::Optimal | PolicyArg::Scaled, true) => {
            Ok(PolicyKind::scaled(args.a_mult.unwrap_or(1.0), args.c_mult.unwrap_or(1.0))?)
        }
        (PolicyArg::Scaled, false) => Err(Failure::Usage("--policy scaled needs --a-mult and/or --c-mult".into())),
        (PolicyArg::Optimal, false) => Ok(PolicyKind::Optimal),
        (PolicyArg::ZeroPosition, false) => Ok(PolicyKind::ZeroPosition),
        (PolicyArg::NoConsumption, false) => Ok(PolicyKind::NoConsumption),
        (_, true) => Err(Failure::Usage("--a-mult/--c-mult only apply to scaled policies".into())),
    }
}

fn simulate(ctx: &Context, args: &SimulateArgs) -> Result<(), Failure> {
    let kind = policy_kind(args)?;
    let mut cfg = sim_config(ctx, &args.sim)?;
    cfg.record_paths = args.paths_csv.is_some();
    let sink = ctx.sink("simulate.jsonl")?;
    // open every output before the run so a bad path fails fast
    let mut out = sink.open()?;
    let paths_out = args.paths_csv.as_deref().map(output::create).transpose()?;
    let z = ctx.value.z(cfg.x0, cfg.s0, cfg.t0)?;
    let run = montecarlo::simulate_wealth(&ctx.value, kind, &cfg)?;
    let (a_mult, c_mult) = kind.multipliers();
    let summary = SimSummary {
        policy: kind.to_string(),
        a_mult,
        c_mult,
        paths: cfg.n_paths,
        steps: cfg.n_steps,
        seed: cfg.seed,
        chunks: cfg.chunks,
        scheme: scheme_name(cfg.scheme),
        x0: cfg.x0,
        s0: cfg.s0,
        t0: cfg.t0,
        mean: run.estimate.mean,
        std_error: run.estimate.std_error,
        z,
    };
    let line = serde_json::to_string(&summary).map_err(|e| Failure::Runtime(e.to_string()))?;
    writeln!(out, "{line}").map_err(io_failure)?;
    finish(out)?;
    if let Some(mut p) = paths_out {
        writeln!(p, "path,objective,terminal_wealth").map_err(io_failure)?;
        for rec in &run.paths {
            writeln!(
                p,
                "{},{},{}",
                rec.path,
                output::float(rec.objective),
                output::float(rec.terminal_wealth)
            )
            .map_err(io_failure)?;
        }
        finish(p)?;
    }
    Ok(())
}

fn optimality(ctx: &Context, args: &OptimalityArgs) -> Result<(), Failure> {
    let cfg = sim_config(ctx, &args.sim)?;
    let sink = ctx.sink("optimality-test.csv")?;
    let mut out = sink.open()?;
    let set = montecarlo::perturbation_set(&verify::PERTURBATION_MULTIPLIERS)?;
    let report = montecarlo::optimality_test(&ctx.value, &cfg, &set, args.bias)?;
    writeln!(out, "policy,a_mult,c_mult,mean,std_error,z_minus_mean,passed").map_err(io_failure)?;
    for r in &report.rows {
        let (a, c) = r.kind.multipliers();
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.kind,
            output::float(a),
            output::float(c),
            output::float(r.estimate.mean),
            output::float(r.estimate.std_error),
            output::float(r.gap),
            r.passed
        )
        .map_err(io_failure)?;
    }
    finish(out)?;
    eprintln!("z({}, {}, {}) = {:.10}", cfg.x0, cfg.s0, cfg.t0, report.z);
    if report.passed() {
        Ok(())
    } else {
        let failing: Vec<String> = report.rows.iter().filter(|r| !r.passed).map(|r| r.kind.to_string()).collect();
        Err(Failure::Check(format!("optimality test failed for {}", failing.join(", "))))
    }
}

fn pde_spec(ctx: &Context, args: &PdeArgs) -> Result<(GridSpec, f64), Failure> {
    let c = &ctx.config;
    let extent = args.extent.map_or_else(|| c.get("extent"), |v| Ok(Some(v)))?.unwrap_or(4.0 * ctx.scale);
    let n_s = args.n_s.map_or_else(|| c.get("n_s"), |v| Ok(Some(v)))?.unwrap_or(801);
    let n_t = args.n_t.map_or_else(|| c.get("n_t"), |v| Ok(Some(v)))?.unwrap_or(800);
    let interior = args
        .interior
        .map_or_else(|| c.get("interior"), |v| Ok(Some(v)))?
        .unwrap_or(0.5 * extent);
    if !(interior > 0.0 && interior <= extent) {
        return Err(Failure::Usage(format!("interior {interior} must lie in (0, {extent}]")));
    }
    Ok((
        GridSpec {
            scheme: Scheme::CrankNicolson,
            ..GridSpec::symmetric(extent, n_s, n_t)
        },
        interior,
    ))
}

fn write_report(ctx: &Context, name: &str, lines: &[String]) -> Result<(), Failure> {
    let mut out = ctx.sink(name)?.open()?;
    for l in lines {
        writeln!(out, "{l}").map_err(io_failure)?;
    }
    finish(out)
}

fn verify_pde(ctx: &Context, args: &PdeArgs) -> Result<(), Failure> {
    let (spec, interior) = pde_spec(ctx, args)?;
    let kind = match args.boundary {
        BoundaryArg::ClosedForm => BoundaryKind::ClosedForm,
        BoundaryArg::ZeroCurvature => BoundaryKind::ZeroCurvature,
    };
    let csv = args.deviation_csv.as_deref().map(output::create).transpose()?;
    let coarse_grid = pde_oracle::solve_with(&ctx.value, &spec, kind)?;
    let field = pde_oracle::deviation_field(&coarse_grid, &ctx.value, interior)?;
    drop(coarse_grid);
    let coarse = pde_oracle::summarize(&field);
    let fine_grid = pde_oracle::solve_with(&ctx.value, &spec.refined(), kind)?;
    let fine = pde_oracle::summarize(&pde_oracle::deviation_field(&fine_grid, &ctx.value, interior)?);
    let factor = coarse.max_relative / fine.max_relative;
    let (lo, hi) = verify::CONVERGENCE_FACTOR;
    let dev_ok = coarse.max_relative <= verify::PDE_TOL;
    let order_ok = factor >= lo && factor <= hi;
    let verdict = |ok: bool| if ok { "PASS" } else { "FAIL" };
    let worst = coarse.worst.unwrap_or((f64::NAN, f64::NAN));
    let lines = vec![
        format!("grid {}x{} on |s| <= {}, compared on |s| <= {interior}", spec.n_s, spec.n_t, spec.s_max),
        format!("max relative deviation    {:.6e} at (s, t) = ({:.4}, {:.4})", coarse.max_relative, worst.0, worst.1),
        format!("median relative deviation {:.6e}", coarse.median_relative),
        format!(
            "refined {}x{}: max {:.6e}, median {:.6e}",
            2 * spec.n_s - 1,
            2 * spec.n_t,
            fine.max_relative,
            fine.median_relative
        ),
        format!("convergence factor        {factor:.4}"),
        format!("[{}] max deviation <= {:e}", verdict(dev_ok), verify::PDE_TOL),
        format!("[{}] factor in [{lo}, {hi}]", verdict(order_ok)),
    ];
    write_report(ctx, "verify-pde.txt", &lines)?;
    if let Some(mut out) = csv {
        writeln!(out, "s,t,pde,closed_form,relative").map_err(io_failure)?;
        for d in &field {
            row(&mut out, &[d.s, d.t, d.pde, d.closed_form, d.relative]).map_err(io_failure)?;
        }
        finish(out)?;
    }
    if dev_ok && order_ok {
        Ok(())
    } else {
        Err(Failure::Check("PDE oracle tolerance breached".into()))
    }
}

fn verify_hjb(ctx: &Context, args: &HjbArgs) -> Result<(), Failure> {
    let extent = args.extent.unwrap_or(3.0 * ctx.scale);
    let points = (args.s_points, args.t_points);
    if args.s_points < 2 || args.t_points < 2 {
        return Err(Failure::Usage("grids need at least 2 points".into()));
    }
    let csv = args.csv.as_deref().map(output::create).transpose()?;
    let check = verify::hjb_check(&ctx.value, extent, points, 1e-3)?;
    let lines = vec![format!(
        "[{}] {}: {}",
        if check.passed { "PASS" } else { "FAIL" },
        check.name,
        check.detail
    )];
    write_report(ctx, "verify-hjb.txt", &lines)?;
    if let Some(mut out) = csv {
        writeln!(out, "s,t,z,residual,inflated_residual").map_err(io_failure)?;
        for p in verify::hjb_field(&ctx.value, extent, points, 1e-3)? {
            row(&mut out, &[p.s, p.t, p.z, p.residual, p.inflated_residual]).map_err(io_failure)?;
        }
        finish(out)?;
    }
    if check.passed {
        Ok(())
    } else {
        Err(Failure::Check("HJB residual tolerance breached".into()))
    }
}

fn verify_all(ctx: &Context, args: &VerifyAllArgs) -> Result<(), Failure> {
    let mut cfg = VerifyConfig::for_model(ctx.model());
    let c = &ctx.config;
    if let Some(n) = args.paths.map_or_else(|| c.get("paths"), |v| Ok(Some(v)))? {
        cfg.sim.n_paths = n;
    }
    if let Some(n) = args.steps.map_or_else(|| c.get("steps"), |v| Ok(Some(v)))? {
        cfg.sim.n_steps = n;
    }
    if let Some(seed) = args.seed.map_or_else(|| c.get("seed"), |v| Ok(Some(v)))? {
        cfg.sim.seed = seed;
    }
    cfg.sim.validate(ctx.model())?;
    let results = verify::verify_all(&ctx.value, &cfg)?;
    let mut lines: Vec<String> = results
        .iter()
        .map(|r| {
            format!(
                "[{}] {:<15} {} ({:.1} s)",
                if r.passed { "PASS" } else { "FAIL" },
                r.name,
                r.detail,
                r.seconds
            )
        })
        .collect();
    let failed = results.iter().filter(|r| !r.passed).count();
    lines.push(format!("{} of {} checks passed", results.len() - failed, results.len()));
    write_report(ctx, "verify-all.txt", &lines)?;
    if failed == 0 {
        Ok(())
    } else {
        Err(Failure::Check(format!("{failed} checks failed")))
    }
}
