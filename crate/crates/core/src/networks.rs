//! Reference networks used by the CLI, the tests and the verification runs.

use rand::Rng;

use crate::crn::{CrnSpec, RateMatrix};
use crate::error::Result;

/// Four species with arities `(3, 3, 2, 1)`:
///
/// ```text
/// ∅ → 3S1,  3S1 → 3S2,  3S1 → 2S3,  3S2 → 2S3,
/// 2S3 → ∅,  3S2 → S4,   2S3 → S4,   S4 → 2S3
/// ```
///
/// `rates` lists `κ01, κ12, κ13, κ23, κ30, κ24, κ34, κ43` in that order.
pub fn four_species(rates: [f64; 8]) -> Result<CrnSpec> {
    let [k01, k12, k13, k23, k30, k24, k34, k43] = rates;
    let kappa = RateMatrix::from_edges(
        5,
        &[
            (0, 1, k01),
            (1, 2, k12),
            (1, 3, k13),
            (2, 3, k23),
            (3, 0, k30),
            (2, 4, k24),
            (3, 4, k34),
            (4, 3, k43),
        ],
    )?;
    CrnSpec::new(
        vec!["S1".into(), "S2".into(), "S3".into(), "S4".into()],
        vec![3, 3, 2, 1],
        kappa,
    )
}

/// [`four_species`] with every rate equal to one.
pub fn four_species_unit() -> CrnSpec {
    four_species([1.0; 8]).expect("unit four-species network is valid")
}

/// `∅ → 2S1 → S2 → ∅` with unit rates.
pub fn dimer_chain() -> CrnSpec {
    let kappa = RateMatrix::from_edges(3, &[(0, 1, 1.0), (1, 2, 1.0), (2, 0, 1.0)])
        .expect("chain rate matrix is valid");
    CrnSpec::new(vec!["S1".into(), "S2".into()], vec![2, 1], kappa)
        .expect("dimer chain is valid")
}

/// Random irreducible network with `n` species.
///
/// A random Hamiltonian cycle through `0` guarantees strong connectivity;
/// every other ordered pair is switched on with probability `density`.
/// Rates are log-uniform in `[rate_lo, rate_hi]`, arities uniform in
/// `1..=max_arity`.
pub fn random_irreducible<R: Rng + ?Sized>(
    rng: &mut R,
    n: usize,
    max_arity: u32,
    density: f64,
    rate_lo: f64,
    rate_hi: f64,
) -> CrnSpec {
    let m = n + 1;
    let mut order: Vec<usize> = (1..m).collect();
    for a in (1..order.len()).rev() {
        let b = rng.random_range(0..=a);
        order.swap(a, b);
    }
    let (ln_lo, ln_hi) = (rate_lo.ln(), rate_hi.ln());
    let draw = |rng: &mut R| (ln_lo + (ln_hi - ln_lo) * rng.random::<f64>()).exp();
    let mut rates = vec![0.0; m * m];
    let mut cycle = vec![0];
    cycle.extend(&order);
    cycle.push(0);
    for w in cycle.windows(2) {
        rates[w[0] * m + w[1]] = draw(rng);
    }
    for a in 0..m {
        for b in 0..m {
            if a != b && rates[a * m + b] == 0.0 && rng.random::<f64>() < density {
                rates[a * m + b] = draw(rng);
            }
        }
    }
    let kappa = RateMatrix::new((0..m).collect(), rates).expect("generated rates are valid");
    let arity = (0..n).map(|_| rng.random_range(1..=max_arity)).collect();
    let names = (1..=n).map(|i| format!("S{i}")).collect();
    CrnSpec::new(names, arity, kappa).expect("generated network is irreducible")
}
