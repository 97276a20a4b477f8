use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rand_distr::{Distribution, StandardNormal};
use serde_json::json;

use kunary::crn::lattice_class;
use kunary::dynamics::{
    default_step, full_drift, full_equilibrium, integrate_full_ode, integrate_slow_ode,
    single_species_limit, slow_drift, DriftConvention, OdePath,
};
use kunary::entropy::{log_uniform_point, Entropy};
use kunary::equilibrium::{
    bounds_m_big_m, eliminate_in_order, fast_equilibrium_map, neumann_series, reduce_to_slow,
    slow_fixed_point, solve_invariant, DEFAULT_SAFETY,
};
use kunary::experiment::run_verification_to_dir;
use kunary::io::{alpha_state, read_network, ExperimentConfig, InitialPolicy};
use kunary::simulate::{
    occupation_measure, replica_rng, run, scale_trajectory, GridRecorder, TrajectoryRecorder,
    DEFAULT_EVENT_BUDGET,
};
use kunary::stationary::{compare_marginals, generator_balance_residual, EmpiricalMarginals};
use kunary::{CrnError, CrnSpec, RateMatrix, Result, State};

/// Simulation and limit analysis of k-unary reaction networks.
#[derive(Debug, Parser)]
#[command(name = "kunary", version)]
struct Cli {
    /// Experiment config; supplies defaults for the network, N, T, seed and x0.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    replicas: Option<usize>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
struct NetworkArgs {
    /// Network document (JSON).
    #[arg(long)]
    network: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
struct InitialArgs {
    /// Explicit initial counts, comma separated.
    #[arg(long, value_delimiter = ',', conflicts_with = "alpha")]
    x0: Option<Vec<u64>>,
    /// Scaled initial point; counts are `α_i N^(1/k_i)` rounded down to a multiple of `k_i`.
    #[arg(long, value_delimiter = ',')]
    alpha: Option<Vec<f64>>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate the jump process and write trajectories.
    Simulate {
        #[command(flatten)]
        net: NetworkArgs,
        #[command(flatten)]
        init: InitialArgs,
        #[arg(long = "n")]
        big_n: Option<u64>,
        #[arg(long = "t")]
        t_end: Option<f64>,
        /// Write every event instead of grid snapshots.
        #[arg(long)]
        events: bool,
        /// Grid spacing of the snapshot CSV (default T/1000).
        #[arg(long)]
        grid: Option<f64>,
        /// Also write the occupation measure as JSONL.
        #[arg(long)]
        occupation: bool,
        #[arg(long, default_value_t = DEFAULT_EVENT_BUDGET)]
        budget: u64,
    },
    /// Equilibrium, reduced slow network and fast map.
    Equilibrium {
        #[command(flatten)]
        net: NetworkArgs,
        /// Slow coordinates at which to evaluate the fast map (default: slow fixed point).
        #[arg(long, value_delimiter = ',')]
        y: Option<Vec<f64>>,
        /// Point around which the containment bounds are built (default: ℓ).
        #[arg(long, value_delimiter = ',')]
        alpha: Option<Vec<f64>>,
        #[arg(long, default_value_t = DEFAULT_SAFETY)]
        safety: f64,
    },
    /// Integrate a limit ODE.
    Ode {
        #[command(flatten)]
        net: NetworkArgs,
        #[arg(long, value_enum, default_value_t = OdeMode::Slow)]
        mode: OdeMode,
        /// Initial point over all species (only slow ones are used in slow mode).
        #[arg(long, value_delimiter = ',')]
        alpha: Option<Vec<f64>>,
        #[arg(long = "t")]
        t_end: Option<f64>,
        #[arg(long)]
        h: Option<f64>,
        /// Scaling for `full` mode.
        #[arg(long = "n")]
        big_n: Option<u64>,
        #[arg(long, value_enum, default_value_t = Convention::ScaledByArity)]
        convention: Convention,
    },
    /// Relative entropy, its gradient and Hessian form at a point.
    Entropy {
        #[command(flatten)]
        net: NetworkArgs,
        /// Evaluation point (default: random point in the bounds box).
        #[arg(long, value_delimiter = ',')]
        z: Option<Vec<f64>>,
        #[arg(long, default_value_t = 1000)]
        directions: usize,
    },
    /// Compare long-run empirical marginals with the product-form measure.
    Stationary {
        #[command(flatten)]
        net: NetworkArgs,
        #[command(flatten)]
        init: InitialArgs,
        #[arg(long = "n")]
        big_n: Option<u64>,
        #[arg(long = "t")]
        t_end: Option<f64>,
        /// Minimum accumulated time after burn-in.
        #[arg(long, default_value_t = 0.0)]
        min_time: f64,
        /// Exit with status 2 if any marginal TV reaches this value.
        #[arg(long)]
        max_tv: Option<f64>,
        /// Also report the generator-balance residual on the box `x ≤ upper`.
        #[arg(long, value_delimiter = ',')]
        balance_box: Option<Vec<u64>>,
    },
    /// Run the replicated convergence experiment of a config file.
    Verify,
    /// Eliminate fast species and print the reduced rate matrix.
    Reduce {
        #[command(flatten)]
        net: NetworkArgs,
        /// Elimination order (default: increasing label).
        #[arg(long, value_delimiter = ',')]
        order: Option<Vec<usize>>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum OdeMode {
    Slow,
    Full,
    Single,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Convention {
    ScaledByArity,
    Unscaled,
}

impl From<Convention> for DriftConvention {
    fn from(c: Convention) -> Self {
        match c {
            Convention::ScaledByArity => DriftConvention::ScaledByArity,
            Convention::Unscaled => DriftConvention::Unscaled,
        }
    }
}

enum Outcome {
    Passed,
    Failed,
}

struct Context {
    config: Option<(ExperimentConfig, CrnSpec)>,
    seed: Option<u64>,
    out: Option<PathBuf>,
    replicas: Option<usize>,
    workers: Option<usize>,
}

impl Context {
    fn network(&self, args: &NetworkArgs) -> Result<CrnSpec> {
        match (&args.network, &self.config) {
            (Some(p), _) => read_network(p),
            (None, Some((_, spec))) => Ok(spec.clone()),
            (None, None) => Err(CrnError::InvalidArgument(
                "a network is required (--network or --config)".into(),
            )),
        }
    }

    fn cfg(&self) -> Option<&ExperimentConfig> {
        self.config.as_ref().map(|(c, _)| c)
    }

    fn seed(&self) -> u64 {
        self.seed.or(self.cfg().map(|c| c.seed)).unwrap_or(0)
    }

    fn big_n(&self, flag: Option<u64>) -> Result<u64> {
        flag.or_else(|| self.cfg().and_then(|c| c.n_ladder.last().copied()))
            .ok_or_else(|| CrnError::InvalidArgument("--n is required".into()))
    }

    fn t_end(&self, flag: Option<f64>, default: Option<f64>) -> Result<f64> {
        flag.or_else(|| self.cfg().map(|c| c.t_end))
            .or(default)
            .ok_or_else(|| CrnError::InvalidArgument("--t is required".into()))
    }

    fn initial(&self, spec: &CrnSpec, big_n: u64, init: &InitialArgs) -> Result<State> {
        if let Some(x) = &init.x0 {
            return InitialPolicy::State(x.clone()).initial_state(spec, big_n);
        }
        if let Some(a) = &init.alpha {
            return alpha_state(spec, big_n, a);
        }
        if let Some(c) = self.cfg() {
            return c.x0.initial_state(spec, big_n);
        }
        alpha_state(spec, big_n, &solve_invariant(spec)?.ell)
    }

    fn out_dir(&self) -> Option<&Path> {
        self.out.as_deref()
    }
}

fn print_json(v: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("json"));
}

fn write_json(dir: Option<&Path>, name: &str, v: &serde_json::Value) -> Result<()> {
    if let Some(d) = dir {
        std::fs::create_dir_all(d)?;
        std::fs::write(d.join(name), serde_json::to_string_pretty(v).expect("json") + "\n")?;
    }
    Ok(())
}

fn matrix_json(k: &RateMatrix) -> serde_json::Value {
    json!({ "labels": k.labels(), "rates": k.rows() })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(Outcome::Passed) => ExitCode::SUCCESS,
        Ok(Outcome::Failed) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn execute(cli: Cli) -> Result<Outcome> {
    let config = cli
        .config
        .as_deref()
        .map(ExperimentConfig::read)
        .transpose()?;
    let ctx = Context {
        config,
        seed: cli.seed,
        out: cli.out,
        replicas: cli.replicas,
        workers: cli.workers,
    };
    match cli.command {
        Command::Simulate {
            net,
            init,
            big_n,
            t_end,
            events,
            grid,
            occupation,
            budget,
        } => cmd_simulate(&ctx, &net, &init, big_n, t_end, events, grid, occupation, budget),
        Command::Equilibrium {
            net,
            y,
            alpha,
            safety,
        } => cmd_equilibrium(&ctx, &net, y, alpha, safety),
        Command::Ode {
            net,
            mode,
            alpha,
            t_end,
            h,
            big_n,
            convention,
        } => cmd_ode(&ctx, &net, mode, alpha, t_end, h, big_n, convention.into()),
        Command::Entropy { net, z, directions } => cmd_entropy(&ctx, &net, z, directions),
        Command::Stationary {
            net,
            init,
            big_n,
            t_end,
            min_time,
            max_tv,
            balance_box,
        } => cmd_stationary(&ctx, &net, &init, big_n, t_end, min_time, max_tv, balance_box),
        Command::Verify => cmd_verify(&ctx),
        Command::Reduce { net, order } => cmd_reduce(&ctx, &net, order),
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_simulate(
    ctx: &Context,
    net: &NetworkArgs,
    init: &InitialArgs,
    big_n: Option<u64>,
    t_end: Option<f64>,
    events: bool,
    grid: Option<f64>,
    occupation: bool,
    budget: u64,
) -> Result<Outcome> {
    let spec = ctx.network(net)?;
    let big_n = ctx.big_n(big_n)?;
    let t_end = ctx.t_end(t_end, None)?;
    let x0 = ctx.initial(&spec, big_n, init)?;
    let seed = ctx.seed();
    let replicas = ctx.replicas.unwrap_or(1);
    let out = ctx.out_dir().unwrap_or(Path::new("out")).to_path_buf();
    std::fs::create_dir_all(&out)?;
    let dt = grid.unwrap_or(t_end / 1000.0);
    if !(dt > 0.0) {
        return Err(CrnError::InvalidArgument(format!("grid spacing must be positive, got {dt}")));
    }
    let mut runs = Vec::with_capacity(replicas);
    for r in 0..replicas {
        let mut rng = replica_rng(seed, r as u64);
        let mut rec = TrajectoryRecorder::new(big_n, &x0);
        let mut snap = GridRecorder::new(dt);
        let summary = if events || occupation {
            run(&spec, big_n, &x0, t_end, &mut rng, budget, &mut (&mut rec, &mut snap))?
        } else {
            run(&spec, big_n, &x0, t_end, &mut rng, budget, &mut snap)?
        };
        let traj = rec.into_trajectory();
        let csv = out.join(format!("trajectory_r{r}.csv"));
        let w = BufWriter::new(File::create(&csv)?);
        if events {
            traj.write_events_csv(w)?;
        } else {
            snap.write_csv(w)?;
        }
        if occupation {
            let occ = occupation_measure(&scale_trajectory(&traj, &spec));
            let mut w = BufWriter::new(File::create(out.join(format!("occupation_r{r}.jsonl")))?);
            occ.write_jsonl(&mut w)?;
            w.flush()?;
        }
        runs.push(json!({
            "replica": r,
            "events": summary.events,
            "final_state": summary.final_state.0,
            "csv": csv,
        }));
    }
    let report = json!({
        "N": big_n, "T": t_end, "seed": seed, "x0": x0.0, "replicas": runs,
    });
    write_json(Some(&out), "simulate.json", &report)?;
    print_json(&report);
    Ok(Outcome::Passed)
}

fn cmd_equilibrium(
    ctx: &Context,
    net: &NetworkArgs,
    y: Option<Vec<f64>>,
    alpha: Option<Vec<f64>>,
    safety: f64,
) -> Result<Outcome> {
    let spec = ctx.network(net)?;
    let sol = solve_invariant(&spec)?;
    let neumann = neumann_series(&spec, 1e-12, 10_000_000)?;
    let neumann_gap = neumann
        .iter()
        .zip(&sol.z)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let mut report = json!({
        "species": spec.names(),
        "k": spec.arities(),
        "z": sol.z,
        "ell": sol.ell,
        "residual": sol.residual,
        "neumann_gap": neumann_gap,
    });
    let has_slow = !spec.slow_species().is_empty();
    let has_fast = !spec.fast_species().is_empty();
    let mut fixed = None;
    if has_slow && has_fast {
        let reduced = reduce_to_slow(&spec)?;
        let fp = slow_fixed_point(&reduced)?;
        report["reduced"] = matrix_json(&reduced);
        report["slow_fixed_point"] = json!(fp);
        fixed = Some(fp);
    }
    if has_fast {
        let y = match y {
            Some(y) => y,
            None if has_slow => fixed.clone().unwrap_or_default(),
            None => Vec::new(),
        };
        let l = fast_equilibrium_map(&spec, &y)?;
        report["fast_map"] = json!({ "y": y, "species": l.species, "w": l.w, "ell": l.ell });
    }
    let alpha = alpha.unwrap_or_else(|| sol.ell.clone());
    let b = bounds_m_big_m(&spec, &alpha, safety)?;
    report["bounds"] = json!({ "alpha": alpha, "safety": safety, "m": b.m, "M": b.upper });
    write_json(ctx.out_dir(), "equilibrium.json", &report)?;
    print_json(&report);
    Ok(Outcome::Passed)
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

#[allow(clippy::too_many_arguments)]
fn cmd_ode(
    ctx: &Context,
    net: &NetworkArgs,
    mode: OdeMode,
    alpha: Option<Vec<f64>>,
    t_end: Option<f64>,
    h: Option<f64>,
    big_n: Option<u64>,
    convention: DriftConvention,
) -> Result<Outcome> {
    let spec = ctx.network(net)?;
    let t_end = ctx.t_end(t_end, Some(1.0))?;
    let h = h.or(ctx.cfg().map(|c| c.ode_step())).unwrap_or(default_step(t_end));
    let alpha = match (alpha, ctx.cfg()) {
        (Some(a), _) => a,
        (None, Some(c)) => c.x0.alpha(&spec, ctx.big_n(big_n).unwrap_or(1)),
        (None, None) => vec![1.0; spec.n()],
    };
    if alpha.len() != spec.n() {
        return Err(CrnError::DimensionMismatch {
            expected: spec.n(),
            got: alpha.len(),
        });
    }
    let (path, labels, summary): (OdePath, Vec<usize>, serde_json::Value) = match mode {
        OdeMode::Slow => {
            let slow = spec.slow_species();
            let a1: Vec<f64> = slow.iter().map(|&i| alpha[i - 1]).collect();
            let path = integrate_slow_ode(&spec, &a1, t_end, h)?;
            let mut drift = vec![0.0; slow.len()];
            slow_drift(&spec, path.endpoint(), &mut drift)?;
            let mut s = json!({ "drift_at_endpoint": max_abs(&drift) });
            if !spec.fast_species().is_empty() {
                let fp = slow_fixed_point(&reduce_to_slow(&spec)?)?;
                slow_drift(&spec, &fp, &mut drift)?;
                s["fixed_point"] = json!(fp);
                s["equilibrium_residual"] = json!(max_abs(&drift));
            } else {
                let z = solve_invariant(&spec)?.z;
                slow_drift(&spec, &z, &mut drift)?;
                s["fixed_point"] = json!(z);
                s["equilibrium_residual"] = json!(max_abs(&drift));
            }
            (path, slow, s)
        }
        OdeMode::Full => {
            let big_n = ctx.big_n(big_n)?;
            let nf = big_n as f64;
            let u0: Vec<f64> = (1..=spec.n())
                .map(|i| alpha[i - 1] * spec.scale_factor(big_n, i))
                .collect();
            let path = integrate_full_ode(&spec, nf, &u0, t_end, h)?;
            let eq = full_equilibrium(&spec, nf, &solve_invariant(&spec)?.ell);
            let mut du = vec![0.0; spec.n()];
            full_drift(&spec, nf, &eq, &mut du);
            let s = json!({
                "N": big_n,
                "fixed_point": eq,
                "equilibrium_residual": max_abs(&du),
            });
            (path, (1..=spec.n()).collect(), s)
        }
        OdeMode::Single => {
            if spec.n() != 1 {
                return Err(CrnError::InvalidArgument(
                    "single mode needs a one-species network".into(),
                ));
            }
            let (lambda, mu, k) = (spec.rate(0, 1), spec.rate(1, 0), spec.arity(1));
            let lim = single_species_limit(lambda, mu, k, alpha[0], t_end, h, convention)?;
            let c = convention.factor(k);
            let res = (c * (lambda - mu * lim.ell_inf.powi(k as i32))).abs();
            let s = json!({
                "convention": convention,
                "fixed_point": [lim.ell_inf],
                "equilibrium_residual": res,
            });
            (lim.path, vec![1], s)
        }
    };
    let mut summary = summary;
    summary["t_end"] = json!(t_end);
    summary["step"] = json!(path.step);
    summary["species"] = json!(labels);
    summary["endpoint"] = json!(path.endpoint());
    if let Some(d) = ctx.out_dir() {
        std::fs::create_dir_all(d)?;
        let mut w = BufWriter::new(File::create(d.join("ode.csv"))?);
        path.write_csv(&mut w, &labels)?;
        w.flush()?;
        write_json(Some(d), "ode.json", &summary)?;
    }
    print_json(&summary);
    Ok(Outcome::Passed)
}

fn cmd_entropy(
    ctx: &Context,
    net: &NetworkArgs,
    z: Option<Vec<f64>>,
    directions: usize,
) -> Result<Outcome> {
    let spec = ctx.network(net)?;
    let ent = Entropy::new(spec.kappa())?;
    let mut rng = replica_rng(ctx.seed(), 0);
    let z = match z {
        Some(z) => z,
        None => {
            let eq = solve_invariant(&spec)?;
            let b = bounds_m_big_m(&spec, &eq.ell, DEFAULT_SAFETY)?;
            log_uniform_point(&mut rng, &b.m, &b.upper)
        }
    };
    let eval = ent.evaluate(&z)?;
    let grad_norm = eval.gradient.iter().map(|g| g * g).sum::<f64>().sqrt();
    let mut min_q = f64::INFINITY;
    let mut u = vec![0.0; z.len()];
    for _ in 0..directions {
        for v in u.iter_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
        let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
        u.iter_mut().for_each(|v| *v /= norm);
        min_q = min_q.min(ent.hessian_quadratic_form(&z, &u)?);
    }
    let report = json!({
        "z": z,
        "equilibrium": ent.equilibrium(),
        "F": eval.value,
        "gradient": eval.gradient,
        "gradient_norm": grad_norm,
        "directions": directions,
        "min_hessian_form": if directions > 0 { json!(min_q) } else { json!(null) },
    });
    write_json(ctx.out_dir(), "entropy.json", &report)?;
    print_json(&report);
    Ok(Outcome::Passed)
}

#[allow(clippy::too_many_arguments)]
fn cmd_stationary(
    ctx: &Context,
    net: &NetworkArgs,
    init: &InitialArgs,
    big_n: Option<u64>,
    t_end: Option<f64>,
    min_time: f64,
    max_tv: Option<f64>,
    balance_box: Option<Vec<u64>>,
) -> Result<Outcome> {
    let spec = ctx.network(net)?;
    let big_n = ctx.big_n(big_n)?;
    let t_end = ctx.t_end(t_end, None)?;
    let x0 = ctx.initial(&spec, big_n, init)?;
    let class = lattice_class(&x0, &spec);
    let t_start = 0.5 * t_end;
    let mut acc = EmpiricalMarginals::new(spec.n(), t_start);
    let mut rng = replica_rng(ctx.seed(), 0);
    run(&spec, big_n, &x0, t_end, &mut rng, DEFAULT_EVENT_BUDGET, &mut acc)?;
    let rep = compare_marginals(&spec, big_n, &class, &acc, (t_start, t_end), min_time)?;
    let mut report = serde_json::to_value(&rep).expect("json");
    report["class"] = json!(class.0);
    report["seed"] = json!(ctx.seed());
    if let Some(upper) = balance_box {
        report["balance_residual"] = json!(generator_balance_residual(&spec, big_n, &class, &upper)?);
    }
    let passed = max_tv.is_none_or(|m| rep.max_tv < m);
    report["passed"] = json!(passed);
    write_json(ctx.out_dir(), "stationary.json", &report)?;
    print_json(&report);
    Ok(if passed { Outcome::Passed } else { Outcome::Failed })
}

fn cmd_verify(ctx: &Context) -> Result<Outcome> {
    let Some((cfg, spec)) = &ctx.config else {
        return Err(CrnError::InvalidArgument("verify needs --config".into()));
    };
    let mut cfg = cfg.clone();
    if let Some(s) = ctx.seed {
        cfg.seed = s;
    }
    if let Some(r) = ctx.replicas {
        cfg.replicas = r;
    }
    let out = ctx.out.clone().unwrap_or_else(|| cfg.outputs.clone());
    let report = run_verification_to_dir(&cfg, spec, ctx.workers, &out)?;
    for c in &report.checks {
        eprintln!("{} {}  {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    print_json(&json!({ "passed": report.passed, "outputs": out }));
    Ok(if report.passed { Outcome::Passed } else { Outcome::Failed })
}

fn cmd_reduce(ctx: &Context, net: &NetworkArgs, order: Option<Vec<usize>>) -> Result<Outcome> {
    let spec = ctx.network(net)?;
    let reduced = match order {
        Some(o) => eliminate_in_order(spec.kappa(), &o)?,
        None => reduce_to_slow(&spec)?,
    };
    let fp = slow_fixed_point(&reduced)?;
    let report = json!({ "reduced": matrix_json(&reduced), "fixed_point": fp });
    write_json(ctx.out_dir(), "reduce.json", &report)?;
    print_json(&report);
    Ok(Outcome::Passed)
}
