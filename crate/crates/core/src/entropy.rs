//! Relative-entropy functional of a rate matrix, its derivatives, the
//! fast-block entropy `H`, and the functional-equation residual of the
//! occupation measure.

use rand::Rng;
use serde::Serialize;

use crate::crn::{CrnSpec, RateMatrix};
use crate::equilibrium::solve_invariant_matrix;
use crate::error::{CrnError, Result};
use crate::numeric::NeumaierSum;
use crate::simulate::ScaledTrajectory;

fn check_point(z: &[f64], expected: usize) -> Result<()> {
    if z.len() != expected {
        return Err(CrnError::DimensionMismatch {
            expected,
            got: z.len(),
        });
    }
    match z.iter().position(|&v| !(v > 0.0 && v.is_finite())) {
        Some(a) => Err(CrnError::NonPositivePoint {
            index: a,
            value: z[a],
        }),
        None => Ok(()),
    }
}

/// Entropy functional `F` of a rate matrix with its equilibrium cached.
///
/// `F(z) = Σ_i A_i(z) ln(z_i / z*_i)` where
/// `A_i(z) = κ_i⁺ z_i − κ_0i − Σ_{j≠i} κ_ji z_j` and `z*` is the invariant
/// vector. Points are indexed by matrix position minus one.
#[derive(Debug, Clone)]
pub struct Entropy {
    kappa: RateMatrix,
    zstar: Vec<f64>,
    outflow: Vec<f64>,
}

/// Value and gradient of [`Entropy`] at a point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EntropyEvaluation {
    pub value: f64,
    pub gradient: Vec<f64>,
    pub at: Vec<f64>,
}

impl Entropy {
    pub fn new(kappa: &RateMatrix) -> Result<Self> {
        let zstar = solve_invariant_matrix(kappa)?.z;
        let outflow = (1..kappa.dim()).map(|p| kappa.outflow(p)).collect();
        Ok(Self {
            kappa: kappa.clone(),
            zstar,
            outflow,
        })
    }

    pub fn dim(&self) -> usize {
        self.zstar.len()
    }

    pub fn equilibrium(&self) -> &[f64] {
        &self.zstar
    }

    /// `A_i(z)` for every non-source position.
    pub fn imbalance(&self, z: &[f64]) -> Vec<f64> {
        let d = self.dim();
        (0..d)
            .map(|a| {
                let p = a + 1;
                let mut s = NeumaierSum::default();
                s.add(self.outflow[a] * z[a]);
                s.add(-self.kappa.rate(0, p));
                for b in 0..d {
                    if b != a {
                        s.add(-self.kappa.rate(b + 1, p) * z[b]);
                    }
                }
                s.total()
            })
            .collect()
    }

    fn log_ratio(&self, z: &[f64]) -> Vec<f64> {
        z.iter().zip(&self.zstar).map(|(v, s)| (v / s).ln()).collect()
    }

    pub fn value(&self, z: &[f64]) -> Result<f64> {
        check_point(z, self.dim())?;
        let a = self.imbalance(z);
        Ok(a.iter()
            .zip(self.log_ratio(z))
            .map(|(a, l)| a * l)
            .collect::<NeumaierSum>()
            .total())
    }

    /// `∂F/∂z_m = κ_m⁺ ln(z_m/z*_m) + A_m/z_m − Σ_{i≠m} κ_mi ln(z_i/z*_i)`.
    pub fn gradient(&self, z: &[f64]) -> Result<Vec<f64>> {
        check_point(z, self.dim())?;
        let d = self.dim();
        let a = self.imbalance(z);
        let l = self.log_ratio(z);
        Ok((0..d)
            .map(|m| {
                let mut s = NeumaierSum::default();
                s.add(self.outflow[m] * l[m]);
                s.add(a[m] / z[m]);
                for i in 0..d {
                    if i != m {
                        s.add(-self.kappa.rate(m + 1, i + 1) * l[i]);
                    }
                }
                s.total()
            })
            .collect())
    }

    pub fn evaluate(&self, z: &[f64]) -> Result<EntropyEvaluation> {
        Ok(EntropyEvaluation {
            value: self.value(z)?,
            gradient: self.gradient(z)?,
            at: z.to_vec(),
        })
    }

    /// `uᵀ ∇²F(z) u = Σ_i (κ_i0 z_i + κ_0i) u_i²/z_i²
    ///   + ½ Σ_{i≠j} γ_ij (u_i/z_i − u_j/z_j)²`, `γ_ij = κ_ij z_i + κ_ji z_j`.
    pub fn hessian_quadratic_form(&self, z: &[f64], u: &[f64]) -> Result<f64> {
        check_point(z, self.dim())?;
        if u.len() != self.dim() {
            return Err(CrnError::DimensionMismatch {
                expected: self.dim(),
                got: u.len(),
            });
        }
        let d = self.dim();
        let r: Vec<f64> = u.iter().zip(z).map(|(u, z)| u / z).collect();
        let mut s = NeumaierSum::default();
        for i in 0..d {
            let p = i + 1;
            s.add((self.kappa.rate(p, 0) * z[i] + self.kappa.rate(0, p)) * r[i] * r[i]);
            for j in 0..d {
                if j != i {
                    let q = j + 1;
                    let gamma = self.kappa.rate(p, q) * z[i] + self.kappa.rate(q, p) * z[j];
                    let diff = r[i] - r[j];
                    s.add(0.5 * gamma * diff * diff);
                }
            }
        }
        Ok(s.total())
    }
}

/// One-shot [`Entropy::value`].
pub fn entropy_f(kappa: &RateMatrix, z: &[f64]) -> Result<f64> {
    Entropy::new(kappa)?.value(z)
}

/// One-shot [`Entropy::gradient`].
pub fn entropy_gradient(kappa: &RateMatrix, z: &[f64]) -> Result<Vec<f64>> {
    Entropy::new(kappa)?.gradient(z)
}

/// One-shot [`Entropy::hessian_quadratic_form`].
pub fn hessian_quadratic_form(kappa: &RateMatrix, z: &[f64], u: &[f64]) -> Result<f64> {
    Entropy::new(kappa)?.hessian_quadratic_form(z, u)
}

/// `H(z) = Σ_i (z_i ln(z_i / L_i^p) − z_i)`.
pub fn entropy_h(l_at_y: &[f64], z: &[f64], p: u32) -> Result<f64> {
    check_point(z, l_at_y.len())?;
    check_point(l_at_y, z.len())?;
    Ok(z.iter()
        .zip(l_at_y)
        .map(|(&z, &l)| z * (z.ln() - p as f64 * l.ln()) - z)
        .collect::<NeumaierSum>()
        .total())
}

/// `∂H/∂z_i = ln(z_i / L_i^p)`.
pub fn entropy_h_gradient(l_at_y: &[f64], z: &[f64], p: u32) -> Result<Vec<f64>> {
    check_point(z, l_at_y.len())?;
    check_point(l_at_y, z.len())?;
    Ok(z.iter()
        .zip(l_at_y)
        .map(|(&z, &l)| z.ln() - p as f64 * l.ln())
        .collect())
}

/// Point drawn log-uniformly in the box `lo < z < hi`.
pub fn log_uniform_point<R: Rng + ?Sized>(rng: &mut R, lo: &[f64], hi: &[f64]) -> Vec<f64> {
    lo.iter()
        .zip(hi)
        .map(|(&a, &b)| (a.ln() + (b.ln() - a.ln()) * rng.random::<f64>()).exp())
        .collect()
}

/// Smooth test function on the scaled state space (coordinates 0-based).
pub trait TestFunction: Sync {
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64], g: &mut [f64]);
}

/// Constant test function; all partials vanish.
#[derive(Debug, Clone, Copy)]
pub struct Constant(pub f64);

impl TestFunction for Constant {
    fn value(&self, _x: &[f64]) -> f64 {
        self.0
    }
    fn gradient(&self, _x: &[f64], g: &mut [f64]) {
        g.fill(0.0);
    }
}

/// Affine test function `c + Σ a_i x_i`.
#[derive(Debug, Clone)]
pub struct Affine {
    pub constant: f64,
    pub slope: Vec<f64>,
}

impl TestFunction for Affine {
    fn value(&self, x: &[f64]) -> f64 {
        self.constant + self.slope.iter().zip(x).map(|(a, x)| a * x).sum::<f64>()
    }
    fn gradient(&self, _x: &[f64], g: &mut [f64]) {
        g.copy_from_slice(&self.slope);
    }
}

/// Product of one-dimensional C² bumps `φ(t) = (1 − t²)³` for `|t| < 1`,
/// `t = (x_c − centre) / radius`, over the listed coordinates.
#[derive(Debug, Clone)]
pub struct Bump {
    pub factors: Vec<BumpFactor>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BumpFactor {
    pub coordinate: usize,
    pub centre: f64,
    pub radius: f64,
}

impl Bump {
    pub fn new(factors: Vec<BumpFactor>) -> Result<Self> {
        if let Some(f) = factors.iter().find(|f| !(f.radius > 0.0)) {
            return Err(CrnError::InvalidArgument(format!(
                "bump radius must be positive, got {}",
                f.radius
            )));
        }
        Ok(Self { factors })
    }

    /// Single-coordinate bump.
    pub fn single(coordinate: usize, centre: f64, radius: f64) -> Result<Self> {
        Self::new(vec![BumpFactor {
            coordinate,
            centre,
            radius,
        }])
    }

    fn phi(f: &BumpFactor, x: f64) -> (f64, f64) {
        let t = (x - f.centre) / f.radius;
        if t.abs() >= 1.0 {
            return (0.0, 0.0);
        }
        let s = 1.0 - t * t;
        (s * s * s, -6.0 * t * s * s / f.radius)
    }
}

impl TestFunction for Bump {
    fn value(&self, x: &[f64]) -> f64 {
        self.factors
            .iter()
            .map(|f| Self::phi(f, x[f.coordinate]).0)
            .product()
    }

    fn gradient(&self, x: &[f64], g: &mut [f64]) {
        g.fill(0.0);
        let parts: Vec<(f64, f64)> = self
            .factors
            .iter()
            .map(|f| Self::phi(f, x[f.coordinate]))
            .collect();
        for (a, f) in self.factors.iter().enumerate() {
            let others: f64 = parts
                .iter()
                .enumerate()
                .filter(|&(b, _)| b != a)
                .map(|(_, p)| p.0)
                .product();
            g[f.coordinate] += parts[a].1 * others;
        }
    }
}

/// Integrand of the functional equation at scaled state `x`:
/// `Σ_{i: k_i = p} (κ_0i + Σ_j κ_ji x_j^{k_j} − κ_i⁺ x_i^p) ∂f/∂x_i`.
pub fn functional_integrand(
    spec: &CrnSpec,
    level: &[usize],
    f: &dyn TestFunction,
    x: &[f64],
    grad: &mut [f64],
) -> f64 {
    f.gradient(x, grad);
    let n = spec.n();
    let mut s = NeumaierSum::default();
    for &i in level {
        let g = grad[i - 1];
        if g == 0.0 {
            continue;
        }
        let mut drift = spec.rate(0, i) - spec.kappa_plus(i) * x[i - 1].powi(spec.arity(i) as i32);
        for j in 1..=n {
            if j != i {
                drift += spec.rate(j, i) * x[j - 1].powi(spec.arity(j) as i32);
            }
        }
        s.add(drift * g);
    }
    s.total()
}

/// Mean over trajectories of `|∫_0^T integrand(X̄(s)) ds|` for the species
/// of arity `p`, by exact piecewise-constant quadrature.
pub fn functional_equation_residual(
    spec: &CrnSpec,
    trajectories: &[ScaledTrajectory],
    p: u32,
    f: &dyn TestFunction,
) -> Result<f64> {
    if p < 2 {
        return Err(CrnError::InvalidArgument(format!(
            "arity level must be at least 2, got {p}"
        )));
    }
    let level = spec.species_with_arity(p);
    if level.is_empty() {
        return Err(CrnError::InvalidArgument(format!("no species of arity {p}")));
    }
    if trajectories.is_empty() {
        return Err(CrnError::InsufficientData("no trajectories".into()));
    }
    let mut grad = vec![0.0; spec.n()];
    let total: NeumaierSum = trajectories
        .iter()
        .map(|tr| {
            tr.integrate(0.0, tr.t_end(), |x| {
                functional_integrand(spec, &level, f, x, &mut grad)
            })
            .abs()
        })
        .collect();
    Ok(total.total() / trajectories.len() as f64)
}
