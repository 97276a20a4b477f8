//! Product-form invariant measure: independent Poisson coordinates
//! conditioned on the lattice class, exact sampling, and comparison with
//! long-run simulation.

use std::collections::BTreeMap;

use rand::Rng;
use serde::Serialize;
use statrs::function::factorial::ln_factorial;

use crate::crn::{falling_factorial_f64, lattice_class, CrnSpec, LatticeClass, State};
use crate::equilibrium::solve_invariant;
use crate::error::{CrnError, Result};
use crate::numeric::{kth_root, NeumaierSum};
use crate::simulate::{replica_rng, Observer, Trajectory};

/// Poisson means of the product-form measure: `γ_i = N^{1/k_i} ℓ_i`.
pub fn poisson_means(spec: &CrnSpec, big_n: u64, ell: &[f64]) -> Vec<f64> {
    (1..=spec.n())
        .map(|i| kth_root(big_n as f64, spec.arity(i)) * ell[i - 1])
        .collect()
}

/// Unnormalized log-weight `Σ_i (x_i ln γ_i − ln x_i!)`.
pub fn product_form_logweight(spec: &CrnSpec, big_n: u64, x: &State) -> Result<f64> {
    let sol = solve_invariant(spec)?;
    let gamma = poisson_means(spec, big_n, &sol.ell);
    Ok(logweight_with(&gamma, x.as_slice()))
}

fn logweight_with(gamma: &[f64], x: &[u64]) -> f64 {
    gamma
        .iter()
        .zip(x)
        .map(|(&g, &v)| v as f64 * g.ln() - ln_factorial(v))
        .collect::<NeumaierSum>()
        .total()
}

/// Poisson(γ) conditioned on `x ≡ a (mod k)`, on a truncated support.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionedPoisson {
    pub gamma: f64,
    pub k: u32,
    pub a: u32,
    /// `pmf[m]` is the probability of `a + m k`.
    pub pmf: Vec<f64>,
    cdf: Vec<f64>,
    tail: f64,
    log_norm: f64,
}

impl ConditionedPoisson {
    pub fn new(gamma: f64, k: u32, a: u32) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite()) || k == 0 || a >= k {
            return Err(CrnError::InvalidArgument(format!(
                "need gamma > 0 and 0 <= a < k, got gamma = {gamma}, k = {k}, a = {a}"
            )));
        }
        let cutoff = gamma + 12.0 * gamma.sqrt() + 12.0 * k as f64;
        let lg = gamma.ln();
        let logw = |x: u64| x as f64 * lg - ln_factorial(x);
        let mut xs = Vec::new();
        let mut x = a as u64;
        while (x as f64) <= cutoff || xs.is_empty() {
            xs.push(x);
            x += k as u64;
        }
        let lw: Vec<f64> = xs.iter().map(|&x| logw(x)).collect();
        let peak = lw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = lw.iter().map(|l| (l - peak).exp()).collect();
        let total: f64 = w.iter().copied().collect::<NeumaierSum>().total();
        let pmf: Vec<f64> = w.iter().map(|v| v / total).collect();

        // Geometric bound on the neglected tail: successive weight ratios
        // `γ^k / ((x+1)⋯(x+k))` only decrease beyond the cutoff.
        let next = x;
        let ratio = (k as f64 * lg - (ln_factorial(next + k as u64) - ln_factorial(next))).exp();
        let tail = if ratio < 1.0 {
            (logw(next) - peak).exp() / total / (1.0 - ratio)
        } else {
            f64::INFINITY
        };

        let mut cdf = Vec::with_capacity(pmf.len());
        let mut acc = NeumaierSum::default();
        for &p in &pmf {
            acc.add(p);
            cdf.push(acc.total());
        }
        Ok(Self {
            gamma,
            k,
            a,
            pmf,
            cdf,
            tail,
            log_norm: peak + total.ln(),
        })
    }

    /// Largest support point kept.
    pub fn support_max(&self) -> u64 {
        self.a as u64 + (self.pmf.len() as u64 - 1) * self.k as u64
    }

    pub fn support(&self) -> impl Iterator<Item = u64> + '_ {
        (0..self.pmf.len() as u64).map(move |m| self.a as u64 + m * self.k as u64)
    }

    /// Upper bound on the probability mass beyond [`support_max`](Self::support_max).
    pub fn tail_bound(&self) -> f64 {
        self.tail
    }

    pub fn pmf_at(&self, x: u64) -> f64 {
        if x < self.a as u64 || (x - self.a as u64) % self.k as u64 != 0 {
            return 0.0;
        }
        let m = ((x - self.a as u64) / self.k as u64) as usize;
        self.pmf.get(m).copied().unwrap_or(0.0)
    }

    /// Log-probability from the closed form, valid beyond the truncated
    /// support; `-inf` off the residue class.
    pub fn log_pmf_exact(&self, x: u64) -> f64 {
        if x < self.a as u64 || (x - self.a as u64) % self.k as u64 != 0 {
            return f64::NEG_INFINITY;
        }
        x as f64 * self.gamma.ln() - ln_factorial(x) - self.log_norm
    }

    pub fn mean(&self) -> f64 {
        self.support()
            .zip(&self.pmf)
            .map(|(x, p)| x as f64 * p)
            .collect::<NeumaierSum>()
            .total()
    }

    pub fn variance(&self) -> f64 {
        let mu = self.mean();
        self.support()
            .zip(&self.pmf)
            .map(|(x, p)| (x as f64 - mu).powi(2) * p)
            .collect::<NeumaierSum>()
            .total()
    }

    /// Inverse-CDF draw.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        let u: f64 = rng.random();
        let m = self.cdf.partition_point(|&c| c <= u).min(self.pmf.len() - 1);
        self.a as u64 + m as u64 * self.k as u64
    }

    /// Total variation to an empirical distribution given as weights
    /// (normalized internally).
    pub fn total_variation(&self, empirical: &BTreeMap<u64, f64>) -> f64 {
        let mass: f64 = empirical.values().sum();
        let mut s = NeumaierSum::default();
        for (x, &p) in self.support().zip(&self.pmf) {
            let e = empirical.get(&x).copied().unwrap_or(0.0) / mass;
            s.add((e - p).abs());
        }
        for (&x, &w) in empirical {
            if self.pmf_at(x) == 0.0 {
                s.add(w / mass);
            }
        }
        0.5 * s.total()
    }
}

/// Product-form measure of a network on one lattice class.
#[derive(Debug, Clone, Serialize)]
pub struct ProductForm {
    pub big_n: u64,
    pub marginals: Vec<ConditionedPoisson>,
}

impl ProductForm {
    pub fn new(spec: &CrnSpec, big_n: u64, class: &LatticeClass) -> Result<Self> {
        let sol = solve_invariant(spec)?;
        let gamma = poisson_means(spec, big_n, &sol.ell);
        let marginals = (1..=spec.n())
            .map(|i| ConditionedPoisson::new(gamma[i - 1], spec.arity(i), class.0[i - 1]))
            .collect::<Result<_>>()?;
        Ok(Self { big_n, marginals })
    }

    /// Normalized log-probability; `-inf` off the class or the support.
    pub fn log_pmf(&self, x: &[u64]) -> f64 {
        self.marginals
            .iter()
            .zip(x)
            .map(|(m, &v)| m.pmf_at(v).ln())
            .sum()
    }

    /// Normalized probability from the closed form (valid beyond the
    /// truncated support).
    pub fn pmf_exact(&self, x: &[u64]) -> f64 {
        self.marginals
            .iter()
            .zip(x)
            .map(|(m, &v)| m.log_pmf_exact(v))
            .sum::<f64>()
            .exp()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> State {
        State(self.marginals.iter().map(|m| m.sample(rng)).collect())
    }
}

/// One draw from the product-form measure on class `a`, using replica
/// stream 0 of `seed`.
pub fn sample_stationary(spec: &CrnSpec, big_n: u64, a: &LatticeClass, seed: u64) -> Result<State> {
    let pf = ProductForm::new(spec, big_n, a)?;
    Ok(pf.sample(&mut replica_rng(seed, 0)))
}

/// Time-weighted marginal histograms of the path after `t_start`.
#[derive(Debug, Clone)]
pub struct EmpiricalMarginals {
    t_start: f64,
    last_time: f64,
    last_state: Vec<u64>,
    pub histograms: Vec<BTreeMap<u64, f64>>,
    pub time: f64,
}

impl EmpiricalMarginals {
    pub fn new(n: usize, t_start: f64) -> Self {
        Self {
            t_start,
            last_time: 0.0,
            last_state: vec![0; n],
            histograms: vec![BTreeMap::new(); n],
            time: 0.0,
        }
    }

    fn close_interval(&mut self, until: f64) {
        let len = until - self.last_time.max(self.t_start);
        if len > 0.0 {
            for (h, &x) in self.histograms.iter_mut().zip(&self.last_state) {
                *h.entry(x).or_insert(0.0) += len;
            }
            self.time += len;
        }
    }
}

impl Observer for EmpiricalMarginals {
    fn start(&mut self, x0: &[u64]) {
        self.last_state.copy_from_slice(x0);
        self.last_time = 0.0;
    }
    fn event(&mut self, time: f64, _from: usize, _to: usize, state: &[u64]) {
        self.close_interval(time);
        self.last_time = time;
        self.last_state.copy_from_slice(state);
    }
    fn finish(&mut self, t_end: f64, _state: &[u64]) {
        self.close_interval(t_end);
        self.last_time = t_end;
    }
}

/// Per-species comparison of empirical and exact marginals.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoordinateReport {
    pub species: usize,
    pub tv: f64,
    pub empirical_mean: f64,
    pub empirical_variance: f64,
    pub exact_mean: f64,
    pub exact_variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StationaryReport {
    pub big_n: u64,
    pub window: (f64, f64),
    pub coordinates: Vec<CoordinateReport>,
    pub max_tv: f64,
}

/// Compares accumulated marginals with the product-form measure on `class`.
pub fn compare_marginals(
    spec: &CrnSpec,
    big_n: u64,
    class: &LatticeClass,
    marginals: &EmpiricalMarginals,
    window: (f64, f64),
    min_time: f64,
) -> Result<StationaryReport> {
    if !(marginals.time >= min_time) || marginals.time <= 0.0 {
        return Err(CrnError::InsufficientData(format!(
            "effective sample time {} is below the minimum {min_time}",
            marginals.time
        )));
    }
    let pf = ProductForm::new(spec, big_n, class)?;
    let coordinates: Vec<CoordinateReport> = marginals
        .histograms
        .iter()
        .zip(&pf.marginals)
        .enumerate()
        .map(|(a, (h, m))| {
            let mass: f64 = h.values().sum();
            let mean = h.iter().map(|(&x, &w)| x as f64 * w).sum::<f64>() / mass;
            let var = h
                .iter()
                .map(|(&x, &w)| (x as f64 - mean).powi(2) * w)
                .sum::<f64>()
                / mass;
            CoordinateReport {
                species: a + 1,
                tv: m.total_variation(h),
                empirical_mean: mean,
                empirical_variance: var,
                exact_mean: m.mean(),
                exact_variance: m.variance(),
            }
        })
        .collect();
    let max_tv = coordinates.iter().map(|c| c.tv).fold(0.0, f64::max);
    Ok(StationaryReport {
        big_n,
        window,
        coordinates,
        max_tv,
    })
}

/// Drops the first half of the trajectory as burn-in and compares the
/// time-weighted marginals of the rest with the product-form marginals.
pub fn compare_empirical_stationary(
    traj: &Trajectory,
    spec: &CrnSpec,
    min_time: f64,
) -> Result<StationaryReport> {
    let t_start = 0.5 * traj.t_end();
    let mut acc = EmpiricalMarginals::new(traj.n(), t_start);
    acc.start(traj.x0().as_slice());
    for ev in traj.events() {
        acc.event(ev.time, ev.from, ev.to, ev.state);
    }
    acc.finish(traj.t_end(), traj.final_state());
    let class = lattice_class(traj.x0(), spec);
    compare_marginals(
        spec,
        traj.big_n(),
        &class,
        &acc,
        (t_start, traj.t_end()),
        min_time,
    )
}

/// Largest balance violation `|Σ_y ν(y) Q(y, x) − ν(x) q(x)|` of the
/// product-form measure over states `x` of the class with `x ≤ upper`.
/// `ν` is evaluated from its closed form, so states outside the box
/// contribute exactly.
pub fn generator_balance_residual(
    spec: &CrnSpec,
    big_n: u64,
    class: &LatticeClass,
    upper: &[u64],
) -> Result<f64> {
    let n = spec.n();
    if upper.len() != n {
        return Err(CrnError::DimensionMismatch {
            expected: n,
            got: upper.len(),
        });
    }
    let pf = ProductForm::new(spec, big_n, class)?;
    let axes: Vec<Vec<u64>> = (0..n)
        .map(|a| {
            let k = spec.arity(a + 1) as u64;
            (class.0[a] as u64..=upper[a]).step_by(k as usize).collect()
        })
        .collect();
    let count: usize = axes.iter().map(Vec::len).product();
    if count == 0 || count > 10_000_000 {
        return Err(CrnError::InvalidArgument(format!(
            "balance box has {count} states"
        )));
    }
    let reactions = spec.reactions();
    let rate = |x: &[u64], i: usize, j: usize| -> f64 {
        if i == 0 {
            big_n as f64 * spec.rate(0, j)
        } else {
            spec.rate(i, j) * falling_factorial_f64(x[i - 1], spec.arity(i))
        }
    };
    let mut worst: f64 = 0.0;
    let mut idx = vec![0usize; n];
    let mut x = vec![0u64; n];
    let mut y = vec![0u64; n];
    loop {
        for a in 0..n {
            x[a] = axes[a][idx[a]];
        }
        let nu_x = pf.pmf_exact(&x);
        let mut bal = NeumaierSum::default();
        for &(i, j) in &reactions {
            bal.add(-nu_x * rate(&x, i, j));
            // predecessor y with y + k_j e_j − k_i e_i = x
            y.copy_from_slice(&x);
            let mut ok = true;
            if j != 0 {
                let kj = spec.arity(j) as u64;
                if y[j - 1] < kj {
                    ok = false;
                } else {
                    y[j - 1] -= kj;
                }
            }
            if ok {
                if i != 0 {
                    y[i - 1] += spec.arity(i) as u64;
                }
                bal.add(pf.pmf_exact(&y) * rate(&y, i, j));
            }
        }
        worst = worst.max(bal.total().abs());

        let mut a = 0;
        loop {
            if a == n {
                return Ok(worst);
            }
            idx[a] += 1;
            if idx[a] < axes[a].len() {
                break;
            }
            idx[a] = 0;
            a += 1;
        }
    }
}
