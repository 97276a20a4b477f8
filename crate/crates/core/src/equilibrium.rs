//! Linear-algebraic limit objects: the invariant vector of a rate matrix,
//! its Neumann-series oracle, the fast-equilibrium map, the constructive
//! bound vectors used for containment, and species elimination.

use serde::Serialize;

use crate::crn::{CrnSpec, RateMatrix};
use crate::error::{CrnError, Result};
use crate::numeric::{kth_root, lu_solve};

/// Invariant vector of a rate matrix, normalized so the source weight is 1.
///
/// `z[a]` belongs to position `a + 1` of the matrix (the source is implicit).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InvariantVector {
    pub labels: Vec<usize>,
    pub z: Vec<f64>,
    pub residual: f64,
}

/// Invariant vector of a network together with its `k_i`-th roots.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquilibriumSolution {
    pub z: Vec<f64>,
    pub ell: Vec<f64>,
    pub residual: f64,
}

/// Box `m < z < M` used for the containment stopping times.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundVectors {
    pub m: Vec<f64>,
    #[serde(rename = "M")]
    pub upper: Vec<f64>,
}

/// A rate matrix on a subset `J ∋ 0` of the original indices; the surviving
/// labels are carried by the matrix itself.
pub type ReducedKappa = RateMatrix;

/// Max-norm of `(1, z) · R` over all columns, `R` having diagonal `-outflow`.
pub fn invariant_residual(kappa: &RateMatrix, z: &[f64]) -> f64 {
    let m = kappa.dim();
    let weight = |a: usize| if a == 0 { 1.0 } else { z[a - 1] };
    (0..m)
        .map(|b| {
            let inflow: f64 = (0..m)
                .filter(|&a| a != b)
                .map(|a| weight(a) * kappa.rate(a, b))
                .sum();
            (inflow - weight(b) * kappa.outflow(b)).abs()
        })
        .fold(0.0, f64::max)
}

/// Solves `z · R = 0`, `z_0 = 1` by dense LU on the balance equations of the
/// non-source indices: `z_b κ_b⁺ − Σ_{a≠b} z_a κ_ab = κ_0b`.
pub fn solve_invariant_matrix(kappa: &RateMatrix) -> Result<InvariantVector> {
    let m = kappa.dim();
    let d = m - 1;
    let mut a = vec![0.0; d * d];
    let mut b = vec![0.0; d];
    for row in 0..d {
        let p = row + 1;
        b[row] = kappa.rate(0, p);
        for col in 0..d {
            let q = col + 1;
            a[row * d + col] = if p == q {
                kappa.outflow(p)
            } else {
                -kappa.rate(q, p)
            };
        }
    }
    let z = lu_solve(d, &a, &b)?;
    if let Some(i) = z.iter().position(|&v| !(v > 0.0)) {
        return Err(CrnError::NonIrreducible(format!(
            "invariant weight of index {} is not positive",
            kappa.labels()[i + 1]
        )));
    }
    let residual = invariant_residual(kappa, &z);
    Ok(InvariantVector {
        labels: kappa.labels()[1..].to_vec(),
        z,
        residual,
    })
}

/// Invariant vector of the network and its roots `ℓ_i = z_i^(1/k_i)`.
pub fn solve_invariant(spec: &CrnSpec) -> Result<EquilibriumSolution> {
    let inv = solve_invariant_matrix(spec.kappa())?;
    let ell = inv
        .z
        .iter()
        .enumerate()
        .map(|(a, &w)| kth_root(w, spec.arity(a + 1)))
        .collect();
    Ok(EquilibriumSolution {
        z: inv.z,
        ell,
        residual: inv.residual,
    })
}

/// Neumann-series oracle for the invariant vector of the network.
///
/// Iterates `z ← s + R* z` with `s_i = κ_0i / κ_i⁺` and
/// `(R* z)_i = Σ_j z_j κ_ji / κ_i⁺`, stopping once the max-norm change,
/// relative to `max(1, |z|_∞)`, drops below `tol` and a geometric estimate of the remaining tail does too.
/// The contraction rate is estimated from the maxima of two consecutive
/// windows of changes, since the iteration matrix can have negative or
/// complex leading eigenvalues and one-step ratios then oscillate.
pub fn neumann_series(spec: &CrnSpec, tol: f64, max_iter: usize) -> Result<Vec<f64>> {
    neumann_series_matrix(spec.kappa(), tol, max_iter).map(|(z, _)| z)
}

const TAIL_WINDOW: usize = 32;

/// As [`neumann_series`] on a bare matrix; also returns the iteration count.
pub fn neumann_series_matrix(
    kappa: &RateMatrix,
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, usize)> {
    let d = kappa.dim() - 1;
    let out: Vec<f64> = (1..=d).map(|p| kappa.outflow(p)).collect();
    let seed: Vec<f64> = (1..=d).map(|p| kappa.rate(0, p) / out[p - 1]).collect();
    let mut z = seed.clone();
    let mut change = f64::INFINITY;
    let mut history: Vec<f64> = Vec::new();
    for it in 1..=max_iter {
        let next: Vec<f64> = (1..=d)
            .map(|p| {
                let inflow: f64 = (1..=d)
                    .filter(|&q| q != p)
                    .map(|q| z[q - 1] * kappa.rate(q, p))
                    .sum();
                seed[p - 1] + inflow / out[p - 1]
            })
            .collect();
        let scale = next.iter().cloned().fold(1.0, f64::max);
        change = next
            .iter()
            .zip(&z)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
            / scale;
        z = next;
        history.push(change);
        if change == 0.0 {
            return Ok((z, it));
        }
        if change < tol && history.len() >= 2 * TAIL_WINDOW {
            let h = &history[history.len() - 2 * TAIL_WINDOW..];
            let window_max = |w: &[f64]| w.iter().cloned().fold(0.0, f64::max);
            let recent = window_max(&h[TAIL_WINDOW..]);
            let older = window_max(&h[..TAIL_WINDOW]);
            let rate = (recent / older).powf(1.0 / TAIL_WINDOW as f64);
            let at_noise_floor = recent <= 4.0 * f64::EPSILON;
            if at_noise_floor || (rate < 1.0 && recent * rate / (1.0 - rate) < tol) {
                return Ok((z, it));
            }
        }
    }
    Err(CrnError::NoConvergence {
        iterations: max_iter,
        change,
    })
}

/// Value of the fast-equilibrium map at a slow state.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FastEquilibrium {
    /// Fast species, in increasing label order.
    pub species: Vec<usize>,
    /// `w_i = L_i^{k_i}`.
    pub w: Vec<f64>,
    pub ell: Vec<f64>,
}

/// Rate matrix seen by the fast species when the slow ones are frozen at `y`:
/// slow species act as extra inflow from and outflow to the source.
pub fn fast_block_matrix(spec: &CrnSpec, y: &[f64]) -> Result<RateMatrix> {
    let slow = spec.slow_species();
    let fast = spec.fast_species();
    if fast.is_empty() {
        return Err(CrnError::EmptyFastSet);
    }
    if y.len() != slow.len() {
        return Err(CrnError::DimensionMismatch {
            expected: slow.len(),
            got: y.len(),
        });
    }
    if let Some(a) = y.iter().position(|&v| !(v > 0.0)) {
        return Err(CrnError::NonPositivePoint {
            index: slow[a],
            value: y[a],
        });
    }
    let mut labels = vec![0];
    labels.extend(&fast);
    let m = labels.len();
    let mut rates = vec![0.0; m * m];
    for (a, &i) in labels.iter().enumerate() {
        for (b, &j) in labels.iter().enumerate() {
            if a != b {
                rates[a * m + b] = spec.rate(i, j);
            }
        }
    }
    for (b, &i) in fast.iter().enumerate() {
        let b = b + 1;
        for (&j, &yj) in slow.iter().zip(y) {
            rates[b] += yj * spec.rate(j, i);
            rates[b * m] += spec.rate(i, j);
        }
    }
    RateMatrix::new(labels, rates)
}

/// Solves the fast balance system for `w = L^k` given slow coordinates `y`
/// (ordered like [`CrnSpec::slow_species`]).
pub fn fast_equilibrium_map(spec: &CrnSpec, y: &[f64]) -> Result<FastEquilibrium> {
    let block = fast_block_matrix(spec, y)?;
    let inv = solve_invariant_matrix(&block)?;
    let ell = inv
        .labels
        .iter()
        .zip(&inv.z)
        .map(|(&i, &w)| kth_root(w, spec.arity(i)))
        .collect();
    Ok(FastEquilibrium {
        species: inv.labels,
        w: inv.z,
        ell,
    })
}

/// Default multiplicative margin for [`bounds_m_big_m`].
pub const DEFAULT_SAFETY: f64 = 2.0;

/// Constructs the lower and upper bound vectors around `α^k`.
///
/// The upper vector is `ρ z'` where `z'` solves the balance equations with
/// every source rate replaced by one, so `M_i κ_i⁺ − Σ_j M_j κ_ji = ρ`, and
/// `ρ = safety · max(α_i^{k_i} / z'_i, κ_0i)`. The lower vector is built in
/// increasing distance from the source. All inequalities are re-checked.
pub fn bounds_m_big_m(spec: &CrnSpec, alpha: &[f64], safety: f64) -> Result<BoundVectors> {
    let n = spec.n();
    if alpha.len() != n {
        return Err(CrnError::DimensionMismatch {
            expected: n,
            got: alpha.len(),
        });
    }
    if let Some(a) = alpha.iter().position(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(CrnError::NonPositivePoint {
            index: a + 1,
            value: alpha[a],
        });
    }
    if !(safety > 1.0 && safety.is_finite()) {
        return Err(CrnError::InvalidArgument(format!(
            "safety factor must exceed 1, got {safety}"
        )));
    }
    let target: Vec<f64> = (1..=n).map(|i| alpha[i - 1].powi(spec.arity(i) as i32)).collect();

    let unit = spec.kappa().map_source_rates(|_, _| 1.0)?;
    let zu = solve_invariant_matrix(&unit)?.z;
    let rho = safety
        * (1..=n)
            .map(|i| (target[i - 1] / zu[i - 1]).max(spec.rate(0, i)))
            .fold(0.0, f64::max);
    let upper: Vec<f64> = zu.iter().map(|z| rho * z).collect();

    let d = spec.distance_from_source();
    let mut order: Vec<usize> = (1..=n).collect();
    order.sort_by_key(|&i| d[i]);
    let mut m = vec![0.0; n];
    for &i in &order {
        m[i - 1] = lower_inflow(spec, &m, &d, i) / spec.kappa_plus(i);
        m[i - 1] = m[i - 1].min(target[i - 1]) / safety;
    }

    let bounds = BoundVectors { m, upper };
    verify_bounds(spec, &target, &bounds)?;
    Ok(bounds)
}

/// `κ_0i + Σ_{d(j) < d(i)} m_j κ_ji`.
fn lower_inflow(spec: &CrnSpec, m: &[f64], d: &[usize], i: usize) -> f64 {
    spec.rate(0, i)
        + (1..=spec.n())
            .filter(|&j| j != i && d[j] < d[i])
            .map(|j| m[j - 1] * spec.rate(j, i))
            .sum::<f64>()
}

/// Checks `0 < m < α^k < M` and the two flux inequalities.
pub fn verify_bounds(spec: &CrnSpec, target: &[f64], b: &BoundVectors) -> Result<()> {
    let n = spec.n();
    let d = spec.distance_from_source();
    for i in 1..=n {
        let (lo, t, hi) = (b.m[i - 1], target[i - 1], b.upper[i - 1]);
        if !(0.0 < lo && lo < t && t < hi) {
            return Err(CrnError::VerificationFailed(format!(
                "species {i}: need 0 < m < alpha^k < M, got {lo}, {t}, {hi}"
            )));
        }
        let kp = spec.kappa_plus(i);
        let rhs_upper = spec.rate(0, i)
            + (1..=n)
                .filter(|&j| j != i)
                .map(|j| b.upper[j - 1] * spec.rate(j, i))
                .sum::<f64>();
        if !(hi * kp > rhs_upper) {
            return Err(CrnError::VerificationFailed(format!(
                "species {i}: upper flux inequality fails ({} <= {rhs_upper})",
                hi * kp
            )));
        }
        let rhs_lower = lower_inflow(spec, &b.m, &d, i);
        if !(lo * kp < rhs_lower) {
            return Err(CrnError::VerificationFailed(format!(
                "species {i}: lower flux inequality fails ({} >= {rhs_lower})",
                lo * kp
            )));
        }
    }
    Ok(())
}

/// Removes index `label` from the matrix, rerouting its flow:
/// `κ̄_ab = κ_ab + κ_{a,i0} κ_{i0,b} / κ_{i0}⁺`.
pub fn eliminate_species(kappa: &RateMatrix, label: usize) -> Result<ReducedKappa> {
    if label == 0 {
        return Err(CrnError::CannotEliminateSource);
    }
    let p = kappa.position(label).ok_or(CrnError::UnknownIndex(label))?;
    let out = kappa.outflow(p);
    let keep: Vec<usize> = (0..kappa.dim()).filter(|&a| a != p).collect();
    let m = keep.len();
    let mut rates = vec![0.0; m * m];
    for (ra, &a) in keep.iter().enumerate() {
        for (rb, &b) in keep.iter().enumerate() {
            if a != b {
                let via = if out > 0.0 {
                    kappa.rate(a, p) * kappa.rate(p, b) / out
                } else {
                    0.0
                };
                rates[ra * m + rb] = kappa.rate(a, b) + via;
            }
        }
    }
    let labels = keep.iter().map(|&a| kappa.labels()[a]).collect();
    let reduced = RateMatrix::new(labels, rates)?;
    reduced.check_irreducible()?;
    Ok(reduced)
}

/// Eliminates the given labels one after the other.
pub fn eliminate_in_order(kappa: &RateMatrix, order: &[usize]) -> Result<ReducedKappa> {
    order
        .iter()
        .try_fold(kappa.clone(), |acc, &l| eliminate_species(&acc, l))
}

/// Network on `{0} ∪ slow species` obtained by eliminating every fast species
/// in increasing label order.
pub fn reduce_to_slow(spec: &CrnSpec) -> Result<ReducedKappa> {
    if spec.slow_species().is_empty() {
        return Err(CrnError::NoSlowSpecies);
    }
    eliminate_in_order(spec.kappa(), &spec.fast_species())
}

/// Fixed point of the linear ODE of a reduced network, i.e. its invariant
/// vector.
pub fn slow_fixed_point(reduced: &ReducedKappa) -> Result<Vec<f64>> {
    solve_invariant_matrix(reduced).map(|inv| inv.z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::networks::{dimer_chain, four_species_unit, random_irreducible};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn single_species_invariant() {
        let spec = CrnSpec::single_species(3.0, 2.0, 2).unwrap();
        let sol = solve_invariant(&spec).unwrap();
        assert!((sol.z[0] - 1.5).abs() < 1e-15);
        assert!((sol.ell[0] - 1.5f64.sqrt()).abs() < 1e-15);
        let (z, iters) = neumann_series_matrix(spec.kappa(), 1e-12, 10).unwrap();
        assert_eq!(iters, 1);
        assert!((z[0] - 1.5).abs() < 1e-15);
    }

    #[test]
    fn four_species_invariant() {
        let spec = four_species_unit();
        let sol = solve_invariant(&spec).unwrap();
        assert!(close(&sol.z, &[0.5, 0.25, 1.0, 1.25], 1e-14), "{:?}", sol.z);
        let ell = [0.5f64.cbrt(), 0.25f64.cbrt(), 1.0, 1.25];
        assert!(close(&sol.ell, &ell, 1e-14));
        assert!((sol.ell[0] - 0.7937).abs() < 1e-4 && (sol.ell[1] - 0.6300).abs() < 1e-4);
        assert!(sol.residual <= 1e-10);
        let z = neumann_series(&spec, 1e-12, 10_000).unwrap();
        assert!(close(&z, &sol.z, 1e-10));
    }

    #[test]
    fn chain_invariant() {
        let spec = dimer_chain();
        let sol = solve_invariant(&spec).unwrap();
        assert!(close(&sol.z, &[1.0, 1.0], 1e-14));
        assert!(close(&sol.ell, &[1.0, 1.0], 1e-14));
        let z = neumann_series(&spec, 1e-12, 10_000).unwrap();
        assert!(close(&z, &sol.z, 1e-10));
    }

    #[test]
    fn neumann_reports_non_convergence() {
        let spec = four_species_unit();
        assert!(matches!(
            neumann_series(&spec, 1e-300, 5),
            Err(CrnError::NoConvergence { iterations: 5, .. })
        ));
    }

    #[test]
    fn chain_fast_map_is_constant() {
        let spec = dimer_chain();
        for y in [1e-9, 0.3, 1.0, 7.0] {
            let f = fast_equilibrium_map(&spec, &[y]).unwrap();
            assert_eq!(f.species, vec![1]);
            assert!((f.ell[0] - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn four_species_fast_map_at_slow_equilibrium() {
        let spec = four_species_unit();
        let f = fast_equilibrium_map(&spec, &[1.25]).unwrap();
        let sol = solve_invariant(&spec).unwrap();
        assert_eq!(f.species, vec![1, 2, 3]);
        assert!(close(&f.ell, &sol.ell[..3], 1e-12));
    }

    #[test]
    fn fast_map_is_linear_in_inflows() {
        let spec = four_species_unit();
        let c = 3.7;
        let base = fast_equilibrium_map(&spec, &[0.8]).unwrap();
        let scaled_kappa = spec.kappa().map_source_rates(|_, r| c * r).unwrap();
        let scaled = CrnSpec::new(spec.names().to_vec(), spec.arities().to_vec(), scaled_kappa)
            .unwrap();
        let f = fast_equilibrium_map(&scaled, &[0.8 * c]).unwrap();
        for (a, b) in f.w.iter().zip(&base.w) {
            assert!((a - c * b).abs() < 1e-12 * a.abs().max(1.0));
        }
    }

    #[test]
    fn fast_map_errors() {
        let slow_only = CrnSpec::single_species(1.0, 1.0, 1).unwrap();
        assert_eq!(
            fast_equilibrium_map(&slow_only, &[1.0]),
            Err(CrnError::EmptyFastSet)
        );
        assert!(matches!(
            fast_equilibrium_map(&four_species_unit(), &[0.0]),
            Err(CrnError::NonPositivePoint { index: 4, .. })
        ));
    }

    #[test]
    fn single_species_bounds() {
        let spec = CrnSpec::single_species(1.0, 1.0, 2).unwrap();
        let b = bounds_m_big_m(&spec, &[1.0], 2.0).unwrap();
        assert!((b.m[0] - 0.5).abs() < 1e-15);
        assert!((b.upper[0] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn four_species_bounds_bracket_equilibrium() {
        let spec = four_species_unit();
        let sol = solve_invariant(&spec).unwrap();
        let b = bounds_m_big_m(&spec, &sol.ell, 2.0).unwrap();
        for i in 0..4 {
            assert!(b.m[i] < sol.z[i] && sol.z[i] < b.upper[i]);
        }
    }

    #[test]
    fn bounds_reject_bad_input() {
        let spec = four_species_unit();
        assert!(bounds_m_big_m(&spec, &[1.0; 4], 1.0).is_err());
        assert!(bounds_m_big_m(&spec, &[1.0, 0.0, 1.0, 1.0], 2.0).is_err());
        assert!(bounds_m_big_m(&spec, &[1.0; 3], 2.0).is_err());
    }

    #[test]
    fn eliminate_middle_of_cycle() {
        let k = RateMatrix::from_edges(3, &[(0, 1, 1.0), (1, 2, 1.0), (2, 0, 1.0)]).unwrap();
        let r = eliminate_species(&k, 1).unwrap();
        assert_eq!(r.labels(), &[0, 2]);
        assert_eq!(r.rate_by_label(0, 2), 1.0);
        assert_eq!(r.rate_by_label(2, 0), 1.0);
        assert_eq!(eliminate_species(&k, 0), Err(CrnError::CannotEliminateSource));
        assert_eq!(eliminate_species(&k, 9), Err(CrnError::UnknownIndex(9)));
    }

    #[test]
    fn eliminating_unfed_index_only_drops_it() {
        // 2 is only fed by 0, so nothing else gains rate from eliminating it
        // except 0 itself.
        let k = RateMatrix::from_edges(
            4,
            &[(0, 1, 2.0), (1, 0, 1.0), (0, 2, 1.0), (2, 3, 1.0), (3, 0, 4.0), (1, 3, 0.5)],
        )
        .unwrap();
        let r = eliminate_species(&k, 2).unwrap();
        assert_eq!(r.rate_by_label(1, 0), 1.0);
        assert_eq!(r.rate_by_label(1, 3), 0.5);
        assert_eq!(r.rate_by_label(3, 0), 4.0);
        assert_eq!(r.rate_by_label(0, 1), 2.0);
        assert_eq!(r.rate_by_label(0, 3), 1.0);
    }

    #[test]
    fn four_species_reduction_closed_form() {
        let spec = four_species_unit();
        let r = reduce_to_slow(&spec).unwrap();
        assert_eq!(r.labels(), &[0, 4]);
        assert!((r.rate_by_label(0, 4) - 0.625).abs() < 1e-15);
        assert!((r.rate_by_label(4, 0) - 0.5).abs() < 1e-15);
        let rev = eliminate_in_order(spec.kappa(), &[3, 2, 1]).unwrap();
        assert!(close(r.rates(), rev.rates(), 1e-12));
        let x = slow_fixed_point(&r).unwrap();
        assert!((x[0] - 1.25).abs() < 1e-14);
    }

    #[test]
    fn reduce_without_fast_species_is_identity() {
        let spec = CrnSpec::single_species(2.0, 1.0, 1).unwrap();
        assert_eq!(&reduce_to_slow(&spec).unwrap(), spec.kappa());
        let fast_only = CrnSpec::single_species(2.0, 1.0, 2).unwrap();
        assert_eq!(reduce_to_slow(&fast_only), Err(CrnError::NoSlowSpecies));
    }

    #[test]
    fn slow_fixed_point_composed_with_fast_map_gives_equilibrium() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut checked = 0;
        while checked < 50 {
            let spec = random_irreducible(&mut rng, 5, 3, 0.3, 0.1, 10.0);
            if spec.slow_species().is_empty() || spec.fast_species().is_empty() {
                continue;
            }
            let sol = solve_invariant(&spec).unwrap();
            let y = slow_fixed_point(&reduce_to_slow(&spec).unwrap()).unwrap();
            let f = fast_equilibrium_map(&spec, &y).unwrap();
            for (a, &i) in spec.slow_species().iter().enumerate() {
                assert!((y[a] - sol.z[i - 1]).abs() < 1e-10 * sol.z[i - 1].max(1.0));
            }
            for (a, &i) in f.species.iter().enumerate() {
                assert!((f.ell[a] - sol.ell[i - 1]).abs() < 1e-10 * sol.ell[i - 1].max(1.0));
            }
            checked += 1;
        }
    }

    fn arb_spec(lo: f64, hi: f64) -> impl Strategy<Value = CrnSpec> {
        (any::<u64>(), 1usize..=6)
            .prop_map(move |(seed, n)| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                random_irreducible(&mut rng, n, 4, 0.35, lo, hi)
            })
    }

    proptest! {
        #![proptest_config(crate::proptest_config(256))]

        #[test]
        fn neumann_matches_lu(spec in arb_spec(0.1, 10.0)) {
            let tol = 1e-12;
            let lu = solve_invariant(&spec).unwrap();
            let z = neumann_series(&spec, tol, 1_000_000).unwrap();
            let scale = lu.z.iter().cloned().fold(1.0, f64::max);
            for (a, b) in z.iter().zip(&lu.z) {
                prop_assert!((a - b).abs() <= 10.0 * tol * scale, "{a} vs {b}");
            }
        }

        #[test]
        fn invariant_residual_is_tiny(spec in arb_spec(1e-3, 1e3)) {
            let sol = solve_invariant(&spec).unwrap();
            let scale = spec.kappa().rates().iter().cloned().fold(0.0, f64::max);
            prop_assert!(sol.z.iter().all(|&v| v > 0.0));
            let zmax = sol.z.iter().cloned().fold(1.0, f64::max);
            prop_assert!(sol.residual <= 1e-10 * scale * zmax, "residual {}", sol.residual);
        }

        #[test]
        fn elimination_preserves_equilibrium(spec in arb_spec(0.1, 10.0), pick in any::<usize>()) {
            let n = spec.n();
            let label = 1 + pick % n;
            let full = solve_invariant_matrix(spec.kappa()).unwrap();
            if n == 1 {
                return Ok(());
            }
            let r = eliminate_species(spec.kappa(), label).unwrap();
            let red = solve_invariant_matrix(&r).unwrap();
            for (&l, &z) in red.labels.iter().zip(&red.z) {
                let zf = full.z[l - 1];
                prop_assert!((z - zf).abs() <= 1e-10 * zf.max(1.0));
            }
        }

        #[test]
        fn elimination_order_is_irrelevant(spec in arb_spec(0.1, 10.0), seed in any::<u64>()) {
            let mut order: Vec<usize> = spec.fast_species();
            if spec.slow_species().is_empty() || order.len() < 2 {
                return Ok(());
            }
            let a = eliminate_in_order(spec.kappa(), &order).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            use rand::seq::SliceRandom;
            order.shuffle(&mut rng);
            let b = eliminate_in_order(spec.kappa(), &order).unwrap();
            for (x, y) in a.rates().iter().zip(b.rates()) {
                prop_assert!((x - y).abs() <= 1e-10 * x.abs().max(1.0));
            }
        }

        #[test]
        fn bounds_always_verify(spec in arb_spec(0.1, 10.0), seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            use rand::Rng;
            let alpha: Vec<f64> = (0..spec.n()).map(|_| rng.random_range(0.05..5.0)).collect();
            prop_assert!(bounds_m_big_m(&spec, &alpha, DEFAULT_SAFETY).is_ok());
        }
    }
}
