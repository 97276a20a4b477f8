//! Replicated convergence experiments along a ladder of scalings `N`.
//!
//! For every `N` the driver runs independent replicas and records
//!
//! * `slow_sup`: sup-norm distance of the scaled slow species to the slow ODE,
//! * `fast_average`: windowed time-average deviation of each fast species
//!   from the fast map evaluated along the ODE path,
//! * `exit_fraction`: share of replicas that leave the containment box,
//! * `functional_residual`: mean `|∫ integrand ds|` per arity level `p ≥ 2`,
//!   tested against a product bump centred at the equilibrium.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::crn::CrnSpec;
use crate::dynamics::integrate_slow_ode;
use crate::entropy::{functional_equation_residual, Bump, BumpFactor};
use crate::equilibrium::{bounds_m_big_m, fast_equilibrium_map, solve_invariant, BoundVectors};
use crate::error::{CrnError, Result};
use crate::io::{ExperimentConfig, NetworkDoc};
use crate::numeric::{NeumaierSum, OdePath};
use crate::simulate::{
    exit_time_diagnostics, replica_rng, scale_trajectory, simulate_with_rng, ScaledTrajectory,
    DEFAULT_EVENT_BUDGET,
};

pub const DEFAULT_BUMP_RADIUS: f64 = 0.5;

/// Metrics of a single replica.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicaMetrics {
    pub events: usize,
    pub slow_sup: Vec<f64>,
    pub fast_average: Vec<f64>,
    pub exited: bool,
    pub functional: Vec<f64>,
}

/// Replica means at one `N`. Species-indexed vectors follow
/// [`CrnSpec::slow_species`] / [`CrnSpec::fast_species`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LadderRow {
    pub big_n: u64,
    pub replicas: usize,
    pub seed: u64,
    pub mean_events: f64,
    pub slow_sup: Option<f64>,
    pub slow_sup_by_species: Vec<f64>,
    pub fast_average: Option<f64>,
    pub fast_average_by_species: Vec<f64>,
    pub exit_fraction: f64,
    pub functional_residual: Option<f64>,
    pub functional_by_level: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationReport {
    pub network: NetworkDoc,
    pub n_ladder: Vec<u64>,
    pub t_end: f64,
    pub eta: f64,
    pub replicas: usize,
    pub seed: u64,
    pub slow_species: Vec<usize>,
    pub fast_species: Vec<usize>,
    pub levels: Vec<u32>,
    pub bounds: Option<BoundVectors>,
    pub rows: Vec<LadderRow>,
    pub checks: Vec<Check>,
    pub passed: bool,
}

/// Everything that does not depend on `N` or the replica.
struct Setup<'a> {
    spec: &'a CrnSpec,
    cfg: &'a ExperimentConfig,
    slow: Vec<usize>,
    fast: Vec<usize>,
    levels: Vec<(u32, Bump)>,
    bounds: Option<BoundVectors>,
}

/// Deterministic pieces at one `N`: the slow ODE path and the fast map along it.
struct Reference {
    path: Option<OdePath>,
    /// `∫_η^T L_i(x(s)) ds / (T − η)` per fast species.
    fast_target: Vec<f64>,
}

/// `∫_a^b` of the piecewise-linear interpolant of `(grid, v)`.
fn integrate_linear(grid: &[f64], v: &[f64], a: f64, b: f64) -> f64 {
    let mut s = NeumaierSum::default();
    for w in 0..grid.len().saturating_sub(1) {
        let (t0, t1) = (grid[w], grid[w + 1]);
        let lo = t0.max(a);
        let hi = t1.min(b);
        if hi <= lo {
            continue;
        }
        let at = |t: f64| v[w] + (v[w + 1] - v[w]) * (t - t0) / (t1 - t0);
        s.add(0.5 * (at(lo) + at(hi)) * (hi - lo));
    }
    s.total()
}

impl Setup<'_> {
    fn reference(&self, big_n: u64) -> Result<Reference> {
        let spec = self.spec;
        let t_end = self.cfg.t_end;
        let eta = self.cfg.eta();
        let alpha = self.cfg.x0.alpha(spec, big_n);
        let path = if self.slow.is_empty() {
            None
        } else {
            let a1: Vec<f64> = self.slow.iter().map(|&i| alpha[i - 1]).collect();
            Some(integrate_slow_ode(spec, &a1, t_end, self.cfg.ode_step())?)
        };
        let fast_target = if self.fast.is_empty() {
            Vec::new()
        } else if let Some(path) = &path {
            let mut series = vec![Vec::with_capacity(path.grid.len()); self.fast.len()];
            for x in &path.values {
                let l = fast_equilibrium_map(spec, x)?;
                for (s, v) in series.iter_mut().zip(l.ell) {
                    s.push(v);
                }
            }
            series
                .iter()
                .map(|s| integrate_linear(&path.grid, s, eta, t_end) / (t_end - eta))
                .collect()
        } else {
            fast_equilibrium_map(spec, &[])?.ell
        };
        Ok(Reference { path, fast_target })
    }

    fn replica(&self, big_n: u64, rung: usize, r: usize, reference: &Reference) -> Result<ReplicaMetrics> {
        let spec = self.spec;
        let cfg = self.cfg;
        let x0 = cfg.x0.initial_state(spec, big_n)?;
        let mut rng = replica_rng(cfg.seed, ((rung as u64) << 32) | r as u64);
        let budget = cfg.event_budget.unwrap_or(DEFAULT_EVENT_BUDGET);
        let traj = simulate_with_rng(spec, big_n, &x0, cfg.t_end, &mut rng, budget)?;
        let scaled = scale_trajectory(&traj, spec);

        let slow_sup = match &reference.path {
            Some(path) => sup_distance(&scaled, path, &self.slow),
            None => Vec::new(),
        };
        let eta = cfg.eta();
        let fast_average = self
            .fast
            .iter()
            .zip(&reference.fast_target)
            .map(|(&i, &target)| {
                let avg = scaled.integrate(eta, cfg.t_end, |x| x[i - 1]) / (cfg.t_end - eta);
                (avg - target).abs()
            })
            .collect();
        let exited = match &self.bounds {
            Some(b) => exit_time_diagnostics(&traj, spec, &b.m, &b.upper)?
                .first()
                .is_some(),
            None => false,
        };
        let one = std::slice::from_ref(&scaled);
        let functional = self
            .levels
            .iter()
            .map(|(p, f)| functional_equation_residual(spec, one, *p, f))
            .collect::<Result<_>>()?;
        Ok(ReplicaMetrics {
            events: traj.len(),
            slow_sup,
            fast_average,
            exited,
            functional,
        })
    }
}

/// Per slow species, `sup_t |X̄_i(t) − x_i(t)|` over event times and ODE grid
/// points.
pub fn sup_distance(scaled: &ScaledTrajectory, path: &OdePath, slow: &[usize]) -> Vec<f64> {
    let mut sup = vec![0.0f64; slow.len()];
    let h = path.step;
    let last = path.grid.len() - 1;
    let mut update = |c: &[f64], x: &[f64]| {
        for (s, (&i, &xv)) in sup.iter_mut().zip(slow.iter().zip(x)) {
            *s = s.max((c[i - 1] - xv).abs());
        }
    };
    for p in 0..scaled.pieces() {
        let (lo, hi) = scaled.interval(p);
        let c = scaled.piece(p);
        update(c, &path.interpolate(lo));
        update(c, &path.interpolate(hi));
        let g0 = ((lo / h).ceil() as usize).min(last + 1);
        let g1 = ((hi / h).floor() as usize).min(last);
        for g in g0..=g1 {
            if path.grid[g] > lo && path.grid[g] < hi {
                update(c, &path.values[g]);
            }
        }
    }
    sup
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let mut n = 0usize;
    let s: NeumaierSum = v.inspect(|_| n += 1).collect();
    if n == 0 {
        0.0
    } else {
        s.total() / n as f64
    }
}

fn column_means(reps: &[ReplicaMetrics], get: impl Fn(&ReplicaMetrics) -> &[f64]) -> Vec<f64> {
    let width = reps.first().map_or(0, |r| get(r).len());
    (0..width)
        .map(|c| mean(reps.iter().map(|r| get(r)[c])))
        .collect()
}

fn summarize(big_n: u64, cfg: &ExperimentConfig, reps: &[ReplicaMetrics]) -> LadderRow {
    let max_of = |v: &[f64]| v.iter().copied().reduce(f64::max);
    let slow_by = column_means(reps, |r| &r.slow_sup);
    let fast_by = column_means(reps, |r| &r.fast_average);
    let func_by = column_means(reps, |r| &r.functional);
    // Replica mean of the per-replica maximum over species.
    let slow_sup = (!slow_by.is_empty())
        .then(|| mean(reps.iter().map(|r| max_of(&r.slow_sup).unwrap_or(0.0))));
    LadderRow {
        big_n,
        replicas: reps.len(),
        seed: cfg.seed,
        mean_events: mean(reps.iter().map(|r| r.events as f64)),
        slow_sup,
        slow_sup_by_species: slow_by,
        fast_average: max_of(&fast_by),
        fast_average_by_species: fast_by,
        exit_fraction: reps.iter().filter(|r| r.exited).count() as f64 / reps.len() as f64,
        functional_residual: max_of(&func_by),
        functional_by_level: func_by,
    }
}

fn write_rows<W: Write>(w: &mut W, row: &LadderRow, setup: &Setup<'_>) -> std::io::Result<()> {
    let mut line = |metric: &str, species: String, v: f64| {
        writeln!(
            w,
            "{},{},{},{metric},{species},{v}",
            row.big_n, row.replicas, row.seed
        )
    };
    for (&i, &v) in setup.slow.iter().zip(&row.slow_sup_by_species) {
        line("slow_sup", i.to_string(), v)?;
    }
    if let Some(v) = row.slow_sup {
        line("slow_sup", "max".into(), v)?;
    }
    for (&i, &v) in setup.fast.iter().zip(&row.fast_average_by_species) {
        line("fast_average", i.to_string(), v)?;
    }
    line("exit_fraction", "all".into(), row.exit_fraction)?;
    for ((p, _), &v) in setup.levels.iter().zip(&row.functional_by_level) {
        line("functional_residual", format!("level{p}"), v)?;
    }
    line("mean_events", "all".into(), row.mean_events)
}

pub const CSV_HEADER: &str = "N,replicas,seed,metric,species,value";

fn trend(name: &str, values: &[(u64, f64)]) -> Check {
    let passed = values.windows(2).all(|w| w[1].1 < w[0].1);
    let detail = values
        .iter()
        .map(|(n, v)| format!("N={n}: {v:.6e}"))
        .collect::<Vec<_>>()
        .join(", ");
    Check {
        name: format!("{name} decreases in N"),
        passed,
        detail,
    }
}

fn checks(cfg: &ExperimentConfig, rows: &[LadderRow]) -> Vec<Check> {
    type Getter = fn(&LadderRow) -> Option<f64>;
    let metrics: [(&str, Getter, bool, Option<f64>); 4] = [
        ("slow_sup", |r| r.slow_sup, cfg.trends.slow_sup, cfg.thresholds.slow_sup),
        ("fast_average", |r| r.fast_average, cfg.trends.fast_average, cfg.thresholds.fast_average),
        ("exit_fraction", |r| Some(r.exit_fraction), cfg.trends.exit_fraction, cfg.thresholds.exit_fraction),
        (
            "functional_residual",
            |r| r.functional_residual,
            cfg.trends.functional_residual,
            cfg.thresholds.functional_residual,
        ),
    ];
    let mut out = Vec::new();
    for (name, get, want_trend, threshold) in metrics {
        let values: Vec<(u64, f64)> = rows
            .iter()
            .filter_map(|r| get(r).map(|v| (r.big_n, v)))
            .collect();
        if values.is_empty() {
            continue;
        }
        out.push(Check {
            name: format!("{name} is finite"),
            passed: values.iter().all(|(_, v)| v.is_finite()),
            detail: String::new(),
        });
        if want_trend && values.len() > 1 {
            out.push(trend(name, &values));
        }
        if let (Some(limit), Some(&(n, v))) = (threshold, values.last()) {
            out.push(Check {
                name: format!("{name} below {limit} at N={n}"),
                passed: v < limit,
                detail: format!("{v:.6e}"),
            });
        }
    }
    out
}

/// Runs the experiment; `workers = None` uses rayon's default pool size.
pub fn run_verification(
    cfg: &ExperimentConfig,
    spec: &CrnSpec,
    workers: Option<usize>,
) -> Result<VerificationReport> {
    run_verification_with(cfg, spec, workers, |_| Ok(()))
}

/// Like [`run_verification`], calling `on_row` as soon as each rung finishes.
pub fn run_verification_with(
    cfg: &ExperimentConfig,
    spec: &CrnSpec,
    workers: Option<usize>,
    mut on_row: impl FnMut(&LadderRow) -> Result<()>,
) -> Result<VerificationReport> {
    cfg.validate()?;
    let setup = build_setup(cfg, spec)?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = workers {
        builder = builder.num_threads(w.max(1));
    }
    let pool = builder
        .build()
        .map_err(|e| CrnError::InvalidArgument(format!("thread pool: {e}")))?;
    let mut rows = Vec::with_capacity(cfg.n_ladder.len());
    for (rung, &big_n) in cfg.n_ladder.iter().enumerate() {
        let reference = setup.reference(big_n)?;
        let reps: Vec<ReplicaMetrics> = pool.install(|| {
            (0..cfg.replicas)
                .into_par_iter()
                .map(|r| setup.replica(big_n, rung, r, &reference))
                .collect::<Result<_>>()
        })?;
        let row = summarize(big_n, cfg, &reps);
        on_row(&row)?;
        rows.push(row);
    }
    let checks = checks(cfg, &rows);
    Ok(VerificationReport {
        network: NetworkDoc::from_spec(spec),
        n_ladder: cfg.n_ladder.clone(),
        t_end: cfg.t_end,
        eta: cfg.eta(),
        replicas: cfg.replicas,
        seed: cfg.seed,
        slow_species: setup.slow.clone(),
        fast_species: setup.fast.clone(),
        levels: setup.levels.iter().map(|(p, _)| *p).collect(),
        bounds: setup.bounds.clone(),
        passed: checks.iter().all(|c| c.passed),
        rows,
        checks,
    })
}

fn build_setup<'a>(cfg: &'a ExperimentConfig, spec: &'a CrnSpec) -> Result<Setup<'a>> {
    let eq = solve_invariant(spec)?;
    let alpha = cfg.bounds_alpha.clone().unwrap_or_else(|| eq.ell.clone());
    let bounds = Some(bounds_m_big_m(spec, &alpha, cfg.safety)?);
    let radius = cfg.bump_radius.unwrap_or(DEFAULT_BUMP_RADIUS);
    let mut arities: Vec<u32> = spec.arities().iter().copied().filter(|&k| k >= 2).collect();
    arities.sort_unstable();
    arities.dedup();
    let levels = arities
        .into_iter()
        .map(|p| {
            let factors = spec
                .species_with_arity(p)
                .into_iter()
                .map(|i| BumpFactor {
                    coordinate: i - 1,
                    centre: eq.ell[i - 1],
                    radius: radius * eq.ell[i - 1],
                })
                .collect();
            Bump::new(factors).map(|b| (p, b))
        })
        .collect::<Result<_>>()?;
    Ok(Setup {
        spec,
        cfg,
        slow: spec.slow_species(),
        fast: spec.fast_species(),
        levels,
        bounds,
    })
}

/// Runs the experiment and writes `metrics.csv`, `summary.json` and
/// `metadata.json` into `out_dir`. CSV rows are flushed per rung, so a
/// failure part-way leaves the completed rungs on disk.
pub fn run_verification_to_dir(
    cfg: &ExperimentConfig,
    spec: &CrnSpec,
    workers: Option<usize>,
    out_dir: &Path,
) -> Result<VerificationReport> {
    std::fs::create_dir_all(out_dir)?;
    let mut csv = BufWriter::new(File::create(out_dir.join("metrics.csv"))?);
    writeln!(csv, "{CSV_HEADER}")?;
    csv.flush()?;
    let setup = build_setup(cfg, spec)?;
    let report = run_verification_with(cfg, spec, workers, |row| {
        write_rows(&mut csv, row, &setup)?;
        csv.flush()?;
        Ok(())
    })?;
    let summary = serde_json::to_string_pretty(&report).expect("report serializes");
    std::fs::write(out_dir.join("summary.json"), summary + "\n")?;
    write_metadata(out_dir, workers)?;
    Ok(report)
}

/// Run metadata that may legitimately differ between identical runs.
pub fn write_metadata(out_dir: &Path, workers: Option<usize>) -> Result<()> {
    let stamp = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let meta = serde_json::json!({
        "unix_time": stamp,
        "version": env!("CARGO_PKG_VERSION"),
        "workers": workers.unwrap_or_else(rayon::current_num_threads),
    });
    std::fs::write(
        out_dir.join("metadata.json"),
        serde_json::to_string_pretty(&meta).expect("json") + "\n",
    )?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::{InitialPolicy, NetworkSource, Thresholds, TrendChecks};
    use crate::networks::four_species_unit;

    fn config(ladder: Vec<u64>) -> ExperimentConfig {
        ExperimentConfig {
            network: NetworkSource::Inline(NetworkDoc::from_spec(&four_species_unit())),
            n_ladder: ladder,
            t_end: 1.0,
            eta: None,
            replicas: 4,
            seed: 7,
            x0: InitialPolicy::Alpha(vec![1.0; 4]),
            outputs: "out".into(),
            ode_step: None,
            bounds_alpha: None,
            safety: 2.0,
            bump_radius: None,
            thresholds: Thresholds::default(),
            trends: TrendChecks::default(),
            event_budget: None,
        }
    }

    #[test]
    fn linear_integral_is_exact_for_lines() {
        let grid = [0.0, 0.5, 1.0];
        let v = [1.0, 2.0, 3.0];
        assert!((integrate_linear(&grid, &v, 0.25, 1.0) - (0.75 * (1.5 + 3.0) / 2.0)).abs() < 1e-15);
    }

    #[test]
    fn sup_distance_of_exact_path_is_small() {
        let path = OdePath {
            grid: vec![0.0, 0.5, 1.0],
            values: vec![vec![1.0], vec![1.0], vec![1.0]],
            step: 0.5,
        };
        let s = ScaledTrajectory::from_pieces(1, 1.0, vec![0.0, 0.3], vec![1.0, 1.5]).unwrap();
        assert_eq!(sup_distance(&s, &path, &[1]), vec![0.5]);
    }

    #[test]
    fn rows_are_finite_and_deterministic() {
        let spec = four_species_unit();
        let cfg = config(vec![30, 300]);
        let a = run_verification(&cfg, &spec, Some(2)).unwrap();
        let b = run_verification(&cfg, &spec, Some(1)).unwrap();
        assert_eq!(a, b);
        for r in &a.rows {
            assert!(r.slow_sup.unwrap().is_finite());
            assert!(r.fast_average.unwrap().is_finite());
            assert_eq!(r.functional_by_level.len(), 2);
            assert!((0.0..=1.0).contains(&r.exit_fraction));
        }
        assert_eq!(a.levels, vec![2, 3]);
    }

    #[test]
    fn output_files_are_byte_identical() {
        let spec = four_species_unit();
        let cfg = config(vec![50]);
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        run_verification_to_dir(&cfg, &spec, Some(3), d1.path()).unwrap();
        run_verification_to_dir(&cfg, &spec, Some(1), d2.path()).unwrap();
        for f in ["metrics.csv", "summary.json"] {
            let a = std::fs::read(d1.path().join(f)).unwrap();
            let b = std::fs::read(d2.path().join(f)).unwrap();
            assert_eq!(a, b, "{f} differs");
        }
        let csv = std::fs::read_to_string(d1.path().join("metrics.csv")).unwrap();
        assert!(csv.starts_with(CSV_HEADER));
        assert!(csv.contains("50,4,7,slow_sup,4,"));
    }
}
