//! Deterministic limit flows: the slow-species ODE with the fast species
//! slaved to their equilibrium, the full scaled mass-action system, the
//! linear ODE of a reduced network and the single-species limit.

use serde::Serialize;

use crate::crn::{CrnSpec, RateMatrix};
use crate::equilibrium::fast_equilibrium_map;
use crate::error::{CrnError, Result};
use crate::numeric::{kth_root, rk4};

pub use crate::numeric::OdePath;

/// Replacement for zero initial coordinates; the fast map and the entropy
/// need strictly positive values.
pub const ZERO_NUDGE: f64 = 1e-9;

fn nudge(x: &[f64]) -> Result<Vec<f64>> {
    x.iter()
        .enumerate()
        .map(|(a, &v)| {
            if v == 0.0 {
                Ok(ZERO_NUDGE)
            } else if v > 0.0 && v.is_finite() {
                Ok(v)
            } else {
                Err(CrnError::NonPositivePoint { index: a, value: v })
            }
        })
        .collect()
}

/// Default step: `10⁻³ T`.
pub fn default_step(t_end: f64) -> f64 {
    1e-3 * t_end
}

/// Right-hand side of the slow ODE at `x` (ordered like
/// [`CrnSpec::slow_species`]):
/// `ẋ_i = κ_0i + Σ_{slow j} x_j κ_ji + Σ_{fast j} L_j(x)^{k_j} κ_ji − x_i κ_i⁺`.
pub fn slow_drift(spec: &CrnSpec, x: &[f64], dx: &mut [f64]) -> Result<()> {
    let slow = spec.slow_species();
    let fast_w = if spec.fast_species().is_empty() {
        Vec::new()
    } else {
        let f = fast_equilibrium_map(spec, x)?;
        f.species.into_iter().zip(f.w).collect()
    };
    for (a, &i) in slow.iter().enumerate() {
        let mut v = spec.rate(0, i) - x[a] * spec.kappa_plus(i);
        for (b, &j) in slow.iter().enumerate() {
            if j != i {
                v += x[b] * spec.rate(j, i);
            }
        }
        for &(j, w) in &fast_w {
            v += w * spec.rate(j, i);
        }
        dx[a] = v;
    }
    Ok(())
}

/// Slow-species limit ODE from `alpha1` on `[0, T]` by RK4 with step `h`;
/// the fast map is re-solved at every stage.
pub fn integrate_slow_ode(spec: &CrnSpec, alpha1: &[f64], t_end: f64, h: f64) -> Result<OdePath> {
    let slow = spec.slow_species();
    if slow.is_empty() {
        return Err(CrnError::NoSlowSpecies);
    }
    if alpha1.len() != slow.len() {
        return Err(CrnError::DimensionMismatch {
            expected: slow.len(),
            got: alpha1.len(),
        });
    }
    let x0 = nudge(alpha1)?;
    rk4(|_, x, dx| slow_drift(spec, x, dx), &x0, t_end, h)
}

/// Right-hand side of the full scaled system:
/// `u̇_i = k_i (N κ_0i + Σ_j u_j^{k_j} κ_ji − u_i^{k_i} κ_i⁺)`.
pub fn full_drift(spec: &CrnSpec, big_n: f64, u: &[f64], du: &mut [f64]) {
    let n = spec.n();
    let pow: Vec<f64> = (1..=n).map(|i| u[i - 1].powi(spec.arity(i) as i32)).collect();
    for i in 1..=n {
        let mut v = big_n * spec.rate(0, i) - pow[i - 1] * spec.kappa_plus(i);
        for j in 1..=n {
            if j != i {
                v += pow[j - 1] * spec.rate(j, i);
            }
        }
        du[i - 1] = spec.arity(i) as f64 * v;
    }
}

/// Full scaled mass-action system from `u0`.
pub fn integrate_full_ode(
    spec: &CrnSpec,
    big_n: f64,
    u0: &[f64],
    t_end: f64,
    h: f64,
) -> Result<OdePath> {
    if u0.len() != spec.n() {
        return Err(CrnError::DimensionMismatch {
            expected: spec.n(),
            got: u0.len(),
        });
    }
    let x0 = nudge(u0)?;
    rk4(
        |_, u, du| {
            full_drift(spec, big_n, u, du);
            Ok(())
        },
        &x0,
        t_end,
        h,
    )
}

/// Equilibrium of the full system: `γ_i = N^{1/k_i} ℓ_i`.
pub fn full_equilibrium(spec: &CrnSpec, big_n: f64, ell: &[f64]) -> Vec<f64> {
    (1..=spec.n())
        .map(|i| kth_root(big_n, spec.arity(i)) * ell[i - 1])
        .collect()
}

/// Right-hand side of the linear ODE of a reduced network:
/// `ẋ_i = κ̄_0i + Σ_j x_j κ̄_ji − x_i κ̄_i⁺` over the non-source positions.
pub fn linear_drift(kappa: &RateMatrix, x: &[f64], dx: &mut [f64]) {
    let m = kappa.dim();
    for p in 1..m {
        let mut v = kappa.rate(0, p) - x[p - 1] * kappa.outflow(p);
        for q in 1..m {
            if q != p {
                v += x[q - 1] * kappa.rate(q, p);
            }
        }
        dx[p - 1] = v;
    }
}

/// Linear ODE of a (reduced) rate matrix, e.g. the slow network.
pub fn integrate_linear_network(
    kappa: &RateMatrix,
    x0: &[f64],
    t_end: f64,
    h: f64,
) -> Result<OdePath> {
    if x0.len() + 1 != kappa.dim() {
        return Err(CrnError::DimensionMismatch {
            expected: kappa.dim() - 1,
            got: x0.len(),
        });
    }
    let x0 = nudge(x0)?;
    rk4(
        |_, x, dx| {
            linear_drift(kappa, x, dx);
            Ok(())
        },
        &x0,
        t_end,
        h,
    )
}

/// Time-scaling convention for the single-species limit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DriftConvention {
    /// `ẋ = k (λ − μ x^k)`: each reaction moves `k` molecules.
    #[default]
    ScaledByArity,
    /// `ẋ = λ − μ x^k`.
    Unscaled,
}

impl DriftConvention {
    pub fn factor(self, k: u32) -> f64 {
        match self {
            DriftConvention::ScaledByArity => k as f64,
            DriftConvention::Unscaled => 1.0,
        }
    }
}

/// Single-species limit path and its fixed point `ℓ∞ = (λ/μ)^{1/k}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SingleSpeciesLimit {
    pub path: OdePath,
    pub ell_inf: f64,
}

#[allow(clippy::too_many_arguments)]
pub fn single_species_limit(
    lambda: f64,
    mu: f64,
    k: u32,
    alpha: f64,
    t_end: f64,
    h: f64,
    convention: DriftConvention,
) -> Result<SingleSpeciesLimit> {
    if !(lambda > 0.0 && mu > 0.0) || k == 0 {
        return Err(CrnError::InvalidArgument(format!(
            "need lambda, mu > 0 and k >= 1, got {lambda}, {mu}, {k}"
        )));
    }
    let c = convention.factor(k);
    let x0 = nudge(&[alpha])?;
    let path = rk4(
        |_, x, dx| {
            dx[0] = c * (lambda - mu * x[0].powi(k as i32));
            Ok(())
        },
        &x0,
        t_end,
        h,
    )?;
    Ok(SingleSpeciesLimit {
        path,
        ell_inf: kth_root(lambda / mu, k),
    })
}
