//! k-unary reaction networks: the rate matrix on `{0, …, n}`, arities,
//! lattice classes and the elementary combinatorics of mass-action rates.
//!
//! Index `0` always denotes the source/sink `∅`; species are numbered
//! `1..=n`. Molecule-count vectors ([`State`]) are stored 0-based, so
//! species `i` lives at `state[i - 1]`.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{CrnError, Result};

/// Dense square rate matrix of a jump process on a labelled index set.
///
/// `labels[0]` is always `0` (the source/sink). Reduced matrices produced by
/// species elimination keep the original labels of the surviving indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateMatrix {
    labels: Vec<usize>,
    rates: Vec<f64>,
}

impl RateMatrix {
    /// Builds a matrix from row-major rates. Diagonal entries must be zero.
    pub fn new(labels: Vec<usize>, rates: Vec<f64>) -> Result<Self> {
        let m = labels.len();
        if m == 0 || labels[0] != 0 {
            return Err(CrnError::Malformed(
                "index set must start with the source 0".into(),
            ));
        }
        if rates.len() != m * m {
            return Err(CrnError::DimensionMismatch {
                expected: m * m,
                got: rates.len(),
            });
        }
        let mut sorted = labels.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != m {
            return Err(CrnError::Malformed("duplicate index labels".into()));
        }
        for a in 0..m {
            for b in 0..m {
                let v = rates[a * m + b];
                if !(v.is_finite() && v >= 0.0) {
                    return Err(CrnError::NegativeRate {
                        location: format!("kappa[{}][{}]", labels[a], labels[b]),
                        value: v,
                    });
                }
                if a == b && v != 0.0 {
                    return Err(CrnError::Malformed(format!(
                        "diagonal entry kappa[{0}][{0}] must be zero",
                        labels[a]
                    )));
                }
            }
        }
        Ok(Self { labels, rates })
    }

    /// Matrix on `{0, …, m-1}` from nested rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let m = rows.len();
        let mut rates = Vec::with_capacity(m * m);
        for (a, row) in rows.iter().enumerate() {
            if row.len() != m {
                return Err(CrnError::Malformed(format!(
                    "row {a} has {} entries, expected {m}",
                    row.len()
                )));
            }
            rates.extend_from_slice(row);
        }
        Self::new((0..m).collect(), rates)
    }

    /// Matrix on `{0, …, m-1}` from a list of `(from, to, rate)` edges.
    pub fn from_edges(m: usize, edges: &[(usize, usize, f64)]) -> Result<Self> {
        let mut rates = vec![0.0; m * m];
        for &(a, b, r) in edges {
            if a >= m || b >= m {
                return Err(CrnError::UnknownIndex(a.max(b)));
            }
            rates[a * m + b] += r;
        }
        Self::new((0..m).collect(), rates)
    }

    pub fn dim(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Position of an original index label, if it is still present.
    pub fn position(&self, label: usize) -> Option<usize> {
        self.labels.iter().position(|&l| l == label)
    }

    /// Rate between positions `a` and `b`.
    #[inline]
    pub fn rate(&self, a: usize, b: usize) -> f64 {
        self.rates[a * self.dim() + b]
    }

    /// Rate between original labels; zero if either label is absent.
    pub fn rate_by_label(&self, from: usize, to: usize) -> f64 {
        match (self.position(from), self.position(to)) {
            (Some(a), Some(b)) => self.rate(a, b),
            _ => 0.0,
        }
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    /// Total outflow rate of position `a`.
    pub fn outflow(&self, a: usize) -> f64 {
        (0..self.dim())
            .filter(|&b| b != a)
            .map(|b| self.rate(a, b))
            .sum()
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        let m = self.dim();
        (0..m).map(|a| self.rates[a * m..(a + 1) * m].to_vec()).collect()
    }

    fn reachable(&self, forward: bool) -> Vec<bool> {
        let m = self.dim();
        let mut seen = vec![false; m];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(a) = queue.pop_front() {
            for b in 0..m {
                let r = if forward { self.rate(a, b) } else { self.rate(b, a) };
                if r > 0.0 && !seen[b] {
                    seen[b] = true;
                    queue.push_back(b);
                }
            }
        }
        seen
    }

    /// Strong connectivity of the positive-rate graph: every index is
    /// reachable from 0 and reaches 0.
    pub fn is_irreducible(&self) -> bool {
        self.check_irreducible().is_ok()
    }

    pub fn check_irreducible(&self) -> Result<()> {
        let fwd = self.reachable(true);
        if let Some(a) = fwd.iter().position(|&s| !s) {
            return Err(CrnError::NonIrreducible(format!(
                "index {} is not reachable from the source",
                self.labels[a]
            )));
        }
        let bwd = self.reachable(false);
        if let Some(a) = bwd.iter().position(|&s| !s) {
            return Err(CrnError::NonIrreducible(format!(
                "the source is not reachable from index {}",
                self.labels[a]
            )));
        }
        Ok(())
    }

    /// Shortest-path length from position 0 to every position (BFS).
    /// Unreachable positions get `usize::MAX`.
    pub fn distances_from_source(&self) -> Vec<usize> {
        let m = self.dim();
        let mut d = vec![usize::MAX; m];
        d[0] = 0;
        let mut queue = VecDeque::from([0usize]);
        while let Some(a) = queue.pop_front() {
            for b in 0..m {
                if self.rate(a, b) > 0.0 && d[b] == usize::MAX {
                    d[b] = d[a] + 1;
                    queue.push_back(b);
                }
            }
        }
        d
    }

    /// Same matrix with every source rate `kappa[0][j]` replaced by `f(j, rate)`.
    pub fn map_source_rates(&self, mut f: impl FnMut(usize, f64) -> f64) -> Result<Self> {
        let mut rates = self.rates.clone();
        for b in 1..self.dim() {
            rates[b] = f(b, rates[b]);
        }
        Self::new(self.labels.clone(), rates)
    }
}

/// Upper bounds enforced at validation time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpecLimits {
    pub max_species: usize,
    pub max_arity: u32,
}

impl Default for SpecLimits {
    fn default() -> Self {
        Self {
            max_species: 64,
            max_arity: 12,
        }
    }
}

/// A validated k-unary network: complexes `k_i S_i` and rates `kappa`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrnSpec {
    names: Vec<String>,
    arity: Vec<u32>,
    kappa: RateMatrix,
}

impl CrnSpec {
    pub fn new(names: Vec<String>, arity: Vec<u32>, kappa: RateMatrix) -> Result<Self> {
        Self::with_limits(names, arity, kappa, SpecLimits::default())
    }

    pub fn with_limits(
        names: Vec<String>,
        arity: Vec<u32>,
        kappa: RateMatrix,
        limits: SpecLimits,
    ) -> Result<Self> {
        let n = arity.len();
        if n == 0 {
            return Err(CrnError::Malformed("at least one species is required".into()));
        }
        if n > limits.max_species {
            return Err(CrnError::TooManySpecies {
                count: n,
                max: limits.max_species,
            });
        }
        if names.len() != n {
            return Err(CrnError::DimensionMismatch {
                expected: n,
                got: names.len(),
            });
        }
        if kappa.dim() != n + 1 || kappa.labels().iter().enumerate().any(|(a, &l)| a != l) {
            return Err(CrnError::Malformed(format!(
                "rate matrix must be indexed by 0..={n}"
            )));
        }
        for (i, &k) in arity.iter().enumerate() {
            if k < 1 || k > limits.max_arity {
                return Err(CrnError::BadArity {
                    species: i + 1,
                    arity: k,
                    max: limits.max_arity,
                });
            }
        }
        kappa.check_irreducible()?;
        Ok(Self { names, arity, kappa })
    }

    /// `∅ ⇌ k S` with input `lambda·N` and output rate `mu`.
    pub fn single_species(lambda: f64, mu: f64, k: u32) -> Result<Self> {
        let kappa = RateMatrix::from_rows(&[vec![0.0, lambda], vec![mu, 0.0]])?;
        Self::new(vec!["S1".into()], vec![k], kappa)
    }

    /// Number of species `n`.
    pub fn n(&self) -> usize {
        self.arity.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Arities `k_1, …, k_n` (0-based slice).
    pub fn arities(&self) -> &[u32] {
        &self.arity
    }

    /// Arity of species `i ∈ 1..=n`; `k_0 = 0` by convention.
    pub fn arity(&self, i: usize) -> u32 {
        if i == 0 {
            0
        } else {
            self.arity[i - 1]
        }
    }

    pub fn kappa(&self) -> &RateMatrix {
        &self.kappa
    }

    #[inline]
    pub fn rate(&self, i: usize, j: usize) -> f64 {
        self.kappa.rate(i, j)
    }

    /// `κ_i⁺ = κ_i0 + Σ_{j ≠ i} κ_ij`, the total outflow of species `i`.
    pub fn kappa_plus(&self, i: usize) -> f64 {
        self.kappa.outflow(i)
    }

    /// Graph distance from the source; `d[0] = 0` and `d[i] ≥ 1` for species.
    pub fn distance_from_source(&self) -> Vec<usize> {
        self.kappa.distances_from_source()
    }

    /// Species with `k_i = 1` (slow), as 1-based indices.
    pub fn slow_species(&self) -> Vec<usize> {
        (1..=self.n()).filter(|&i| self.arity(i) == 1).collect()
    }

    /// Species with `k_i ≥ 2` (fast), as 1-based indices.
    pub fn fast_species(&self) -> Vec<usize> {
        (1..=self.n()).filter(|&i| self.arity(i) >= 2).collect()
    }

    /// Species with `k_i = p`.
    pub fn species_with_arity(&self, p: u32) -> Vec<usize> {
        (1..=self.n()).filter(|&i| self.arity(i) == p).collect()
    }

    /// `N^(1/k_i)`, computed as `exp(ln N / k_i)`.
    pub fn scale_factor(&self, big_n: u64, i: usize) -> f64 {
        ((big_n as f64).ln() / self.arity(i) as f64).exp()
    }

    /// Every `(i, j)` with `κ_ij > 0`, in row-major order.
    pub fn reactions(&self) -> Vec<(usize, usize)> {
        let m = self.n() + 1;
        (0..m)
            .flat_map(|i| (0..m).map(move |j| (i, j)))
            .filter(|&(i, j)| i != j && self.rate(i, j) > 0.0)
            .collect()
    }
}

/// Molecule counts `(x_1, …, x_n)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct State(pub Vec<u64>);

impl State {
    pub fn zeros(n: usize) -> Self {
        State(vec![0; n])
    }

    /// Count of species `i ∈ 1..=n`.
    pub fn count(&self, i: usize) -> u64 {
        self.0[i - 1]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[u64] {
        &self.0
    }
}

/// Residues `a_i ∈ {0, …, k_i − 1}` identifying the lattice `S_a`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LatticeClass(pub Vec<u32>);

impl LatticeClass {
    pub fn new(residues: Vec<u32>, spec: &CrnSpec) -> Result<Self> {
        if residues.len() != spec.n() {
            return Err(CrnError::DimensionMismatch {
                expected: spec.n(),
                got: residues.len(),
            });
        }
        for (i, (&a, &k)) in residues.iter().zip(spec.arities()).enumerate() {
            if a >= k {
                return Err(CrnError::InvalidArgument(format!(
                    "residue {a} of species {} is not below its arity {k}",
                    i + 1
                )));
            }
        }
        Ok(Self(residues))
    }

    /// Whether `x` lies on this class.
    pub fn contains(&self, x: &State, spec: &CrnSpec) -> bool {
        x.0.iter()
            .zip(&self.0)
            .zip(spec.arities())
            .all(|((&xi, &a), &k)| xi % k as u64 == a as u64)
    }
}

/// `a_i = x0_i mod k_i`.
pub fn lattice_class(x0: &State, spec: &CrnSpec) -> LatticeClass {
    LatticeClass(
        x0.0.iter()
            .zip(spec.arities())
            .map(|(&x, &k)| (x % k as u64) as u32)
            .collect(),
    )
}

/// `y^(k) = y (y−1) ⋯ (y−k+1)`, zero when `y < k`.
pub fn falling_factorial(y: u64, k: u32) -> Result<u64> {
    if y < k as u64 {
        return Ok(0);
    }
    let mut acc: u64 = 1;
    for t in 0..k as u64 {
        acc = acc
            .checked_mul(y - t)
            .ok_or(CrnError::Overflow { y, k })?;
    }
    Ok(acc)
}

/// Floating-point falling factorial, for rate evaluation on the hot path.
#[inline]
pub(crate) fn falling_factorial_f64(y: u64, k: u32) -> f64 {
    if y < k as u64 {
        return 0.0;
    }
    let mut acc = 1.0;
    for t in 0..k as u64 {
        acc *= (y - t) as f64;
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::networks::four_species_unit as figure1;
    use proptest::prelude::*;

    #[test]
    fn validates_smallest_network() {
        let spec = CrnSpec::single_species(1.0, 1.0, 2).unwrap();
        assert_eq!(spec.n(), 1);
        assert_eq!(spec.arity(1), 2);
    }

    #[test]
    fn validates_figure1() {
        let spec = figure1();
        assert_eq!(spec.arities(), &[3, 3, 2, 1]);
        assert_eq!(spec.reactions().len(), 8);
    }

    #[test]
    fn rejects_unreachable_species() {
        let kappa = RateMatrix::from_edges(3, &[(0, 1, 1.0), (1, 0, 1.0)]).unwrap();
        let err = CrnSpec::new(vec!["A".into(), "B".into()], vec![1, 1], kappa).unwrap_err();
        assert!(matches!(err, CrnError::NonIrreducible(_)));
    }

    #[test]
    fn rejects_sink_unreachable() {
        // 0 -> 1 -> 2, no way back
        let kappa = RateMatrix::from_edges(3, &[(0, 1, 1.0), (1, 2, 1.0)]).unwrap();
        let err = CrnSpec::new(vec!["A".into(), "B".into()], vec![1, 1], kappa).unwrap_err();
        assert!(matches!(err, CrnError::NonIrreducible(_)));
    }

    #[test]
    fn rejects_bad_arity_and_negative_rate() {
        let kappa = RateMatrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let err = CrnSpec::new(vec!["A".into()], vec![0], kappa.clone()).unwrap_err();
        assert!(matches!(err, CrnError::BadArity { arity: 0, .. }));
        let err = CrnSpec::new(vec!["A".into()], vec![13], kappa).unwrap_err();
        assert!(matches!(err, CrnError::BadArity { arity: 13, .. }));

        let err = RateMatrix::from_rows(&[vec![0.0, -1.0], vec![1.0, 0.0]]).unwrap_err();
        assert!(matches!(err, CrnError::NegativeRate { .. }));
    }

    #[test]
    fn species_limit_is_enforced() {
        let n = 3;
        let mut edges = vec![(0, 1, 1.0), (n, 0, 1.0)];
        edges.extend((1..n).map(|i| (i, i + 1, 1.0)));
        let kappa = RateMatrix::from_edges(n + 1, &edges).unwrap();
        let limits = SpecLimits {
            max_species: 2,
            max_arity: 12,
        };
        let names = (1..=n).map(|i| format!("S{i}")).collect();
        let err = CrnSpec::with_limits(names, vec![1; n], kappa, limits).unwrap_err();
        assert!(matches!(err, CrnError::TooManySpecies { count: 3, max: 2 }));
    }

    #[test]
    fn falling_factorial_examples() {
        assert_eq!(falling_factorial(5, 2).unwrap(), 20);
        assert_eq!(falling_factorial(1, 2).unwrap(), 0);
        assert_eq!(falling_factorial(4, 4).unwrap(), 24);
        assert_eq!(falling_factorial(7, 1).unwrap(), 7);
        assert_eq!(falling_factorial(0, 1).unwrap(), 0);
    }

    #[test]
    fn falling_factorial_overflow_is_signalled() {
        let err = falling_factorial(u64::MAX / 2, 3).unwrap_err();
        assert!(matches!(err, CrnError::Overflow { .. }));
        // 2^32 squared is exactly 2^64: one past the end.
        assert!(falling_factorial(1 << 32, 2).is_ok());
        assert!(falling_factorial((1 << 32) + 1, 2).is_err());
    }

    #[test]
    fn kappa_plus_examples() {
        let spec = figure1();
        assert_eq!(spec.kappa_plus(1), 2.0);
        assert_eq!(spec.kappa_plus(3), 2.0);
        assert_eq!(spec.kappa_plus(4), 1.0);
        let single = CrnSpec::single_species(1.0, 3.0, 1).unwrap();
        assert_eq!(single.kappa_plus(1), 3.0);
    }

    #[test]
    fn distance_examples() {
        assert_eq!(&figure1().distance_from_source()[1..], &[1, 2, 2, 3]);
        let single = CrnSpec::single_species(2.0, 1.0, 1).unwrap();
        assert_eq!(single.distance_from_source(), vec![0, 1]);
        let chain = RateMatrix::from_edges(3, &[(0, 1, 1.0), (1, 2, 1.0), (2, 0, 1.0)]).unwrap();
        assert_eq!(chain.distances_from_source(), vec![0, 1, 2]);
    }

    #[test]
    fn lattice_class_examples() {
        let kappa = RateMatrix::from_edges(3, &[(0, 1, 1.0), (1, 2, 1.0), (2, 0, 1.0)]).unwrap();
        let spec = CrnSpec::new(vec!["A".into(), "B".into()], vec![3, 2], kappa).unwrap();
        assert_eq!(lattice_class(&State(vec![7, 5]), &spec).0, vec![1, 1]);
        assert_eq!(lattice_class(&State(vec![0, 0]), &spec).0, vec![0, 0]);
        let single = CrnSpec::single_species(1.0, 1.0, 2).unwrap();
        assert_eq!(lattice_class(&State(vec![4]), &single).0, vec![0]);
    }

    #[test]
    fn map_source_rates_keeps_other_entries() {
        let spec = figure1();
        let m = spec.kappa().map_source_rates(|_, _| 1.0).unwrap();
        assert_eq!(m.rate(0, 4), 1.0);
        assert_eq!(m.rate(4, 3), 1.0);
        assert_eq!(m.rate(1, 2), 1.0);
    }

    proptest! {
        #[test]
        fn falling_factorial_zero_iff_below_arity(y in 0u64..40, k in 1u32..=12) {
            let v = falling_factorial(y, k).unwrap();
            prop_assert_eq!(v == 0, y < k as u64);
            prop_assert_eq!(falling_factorial(y, 1).unwrap(), y);
        }

        #[test]
        fn lattice_class_ignores_multiples_of_arity(
            x in proptest::collection::vec(0u64..1000, 4),
            shifts in proptest::collection::vec(0u64..50, 4),
        ) {
            let spec = figure1();
            let moved = State(
                x.iter().zip(&shifts).zip(spec.arities())
                    .map(|((&xi, &s), &k)| xi + s * k as u64)
                    .collect(),
            );
            prop_assert_eq!(lattice_class(&State(x), &spec), lattice_class(&moved, &spec));
        }

        #[test]
        fn every_species_is_at_distance_at_least_one(seed in any::<u64>(), n in 1usize..=6) {
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let spec = crate::networks::random_irreducible(&mut rng, n, 3, 0.3, 0.1, 10.0);
            let d = spec.distance_from_source();
            prop_assert!(d[1..].iter().all(|&di| di >= 1 && di != usize::MAX));
            let entry = (1..=n).find(|&j| d[j] == 1 && spec.rate(0, j) > 0.0);
            prop_assert!(entry.is_some());
        }
    }
}
