//! Small numerical building blocks shared by the solvers.

use nalgebra::{DMatrix, DVector};

use crate::error::{CrnError, Result};

/// Neumaier (improved Kahan) compensated summation.
#[derive(Debug, Clone, Copy, Default)]
pub struct NeumaierSum {
    sum: f64,
    comp: f64,
}

impl NeumaierSum {
    #[inline]
    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn total(&self) -> f64 {
        self.sum + self.comp
    }
}

impl FromIterator<f64> for NeumaierSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = Self::default();
        for v in iter {
            s.add(v);
        }
        s
    }
}

/// Solves `A x = b` by LU with partial pivoting. `a` is row-major `m × m`.
pub fn lu_solve(m: usize, a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    if a.len() != m * m || b.len() != m {
        return Err(CrnError::DimensionMismatch {
            expected: m * m,
            got: a.len(),
        });
    }
    if m == 0 {
        return Ok(Vec::new());
    }
    let mat = DMatrix::from_row_slice(m, m, a);
    let rhs = DVector::from_column_slice(b);
    let x = mat.lu().solve(&rhs).ok_or(CrnError::SingularSystem)?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(CrnError::SingularSystem);
    }
    Ok(x.iter().copied().collect())
}

/// `w^(1/k)` as `exp(ln w / k)`.
#[inline]
pub fn kth_root(w: f64, k: u32) -> f64 {
    if k == 1 {
        w
    } else {
        (w.ln() / k as f64).exp()
    }
}

/// Solution of an ODE on a uniform grid.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct OdePath {
    pub grid: Vec<f64>,
    pub values: Vec<Vec<f64>>,
    pub step: f64,
}

impl OdePath {
    pub fn endpoint(&self) -> &[f64] {
        self.values.last().expect("path has at least one point")
    }

    /// Linear interpolation between grid points (clamped to the ends).
    pub fn interpolate(&self, t: f64) -> Vec<f64> {
        let last = self.grid.len() - 1;
        if t <= self.grid[0] {
            return self.values[0].clone();
        }
        if t >= self.grid[last] {
            return self.values[last].clone();
        }
        let p = (self.grid.partition_point(|&g| g <= t) - 1).min(last - 1);
        let (t0, t1) = (self.grid[p], self.grid[p + 1]);
        let w = (t - t0) / (t1 - t0);
        self.values[p]
            .iter()
            .zip(&self.values[p + 1])
            .map(|(a, b)| a + w * (b - a))
            .collect()
    }

    /// CSV with header `t,x_<label>…`.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W, labels: &[usize]) -> std::io::Result<()> {
        write!(w, "t")?;
        for l in labels {
            write!(w, ",x_{l}")?;
        }
        writeln!(w)?;
        for (t, v) in self.grid.iter().zip(&self.values) {
            write!(w, "{t}")?;
            for x in v {
                write!(w, ",{x}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Classic fixed-step fourth-order Runge–Kutta on `[0, t_end]`.
///
/// The step is shrunk to `t_end / ceil(t_end / h)` so the grid ends exactly at
/// `t_end`. Every stage state must stay componentwise positive; the first
/// violation is reported as [`CrnError::NonPositiveState`].
pub fn rk4<F>(mut rhs: F, x0: &[f64], t_end: f64, h: f64) -> Result<OdePath>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
{
    if !(h > 0.0 && t_end >= 0.0 && h.is_finite() && t_end.is_finite()) {
        return Err(CrnError::InvalidArgument(format!(
            "need h > 0 and t_end >= 0, got h = {h}, t_end = {t_end}"
        )));
    }
    check_positive(x0, 0.0)?;
    let steps = ((t_end / h).ceil() as usize).max(1);
    let h = t_end / steps as f64;
    let d = x0.len();
    let mut grid = Vec::with_capacity(steps + 1);
    let mut values = Vec::with_capacity(steps + 1);
    grid.push(0.0);
    values.push(x0.to_vec());
    let mut x = x0.to_vec();
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d]);
    let mut tmp = vec![0.0; d];
    for s in 0..steps {
        let t = s as f64 * h;
        rhs(t, &x, &mut k1)?;
        for a in 0..d {
            tmp[a] = x[a] + 0.5 * h * k1[a];
        }
        check_positive(&tmp, t + 0.5 * h)?;
        rhs(t + 0.5 * h, &tmp, &mut k2)?;
        for a in 0..d {
            tmp[a] = x[a] + 0.5 * h * k2[a];
        }
        check_positive(&tmp, t + 0.5 * h)?;
        rhs(t + 0.5 * h, &tmp, &mut k3)?;
        for a in 0..d {
            tmp[a] = x[a] + h * k3[a];
        }
        check_positive(&tmp, t + h)?;
        rhs(t + h, &tmp, &mut k4)?;
        for a in 0..d {
            x[a] += h / 6.0 * (k1[a] + 2.0 * k2[a] + 2.0 * k3[a] + k4[a]);
        }
        let t_next = if s + 1 == steps { t_end } else { (s + 1) as f64 * h };
        check_positive(&x, t_next)?;
        grid.push(t_next);
        values.push(x.clone());
    }
    Ok(OdePath {
        grid,
        values,
        step: h,
    })
}

fn check_positive(x: &[f64], time: f64) -> Result<()> {
    match x.iter().position(|&v| !(v > 0.0)) {
        Some(index) => Err(CrnError::NonPositiveState {
            index,
            value: x[index],
            time,
        }),
        None => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let mut s = NeumaierSum::default();
        s.add(1.0);
        for _ in 0..10_000 {
            s.add(1e-16);
        }
        s.add(-1.0);
        assert!((s.total() - 1e-12).abs() < 1e-20);
    }

    #[test]
    fn lu_solves_and_detects_singularity() {
        let x = lu_solve(2, &[2.0, 1.0, 1.0, 3.0], &[3.0, 5.0]).unwrap();
        assert!((x[0] - 0.8).abs() < 1e-14 && (x[1] - 1.4).abs() < 1e-14);
        assert_eq!(
            lu_solve(2, &[1.0, 2.0, 2.0, 4.0], &[1.0, 1.0]),
            Err(CrnError::SingularSystem)
        );
    }

    #[test]
    fn rk4_has_fourth_order_on_exponential_decay() {
        let exact = (-1.0f64).exp();
        let err = |h: f64| {
            let p = rk4(
                |_, x, dx| {
                    dx[0] = -x[0];
                    Ok(())
                },
                &[1.0],
                1.0,
                h,
            )
            .unwrap();
            (p.endpoint()[0] - exact).abs()
        };
        let order = (err(0.1) / err(0.05)).log2();
        assert!(order > 3.8, "observed order {order}");
    }

    #[test]
    fn rk4_reports_positivity_loss() {
        let err = rk4(
            |_, _, dx| {
                dx[0] = -10.0;
                Ok(())
            },
            &[1.0],
            1.0,
            0.5,
        )
        .unwrap_err();
        assert!(matches!(err, CrnError::NonPositiveState { index: 0, .. }));
    }

    #[test]
    fn interpolation_is_linear_between_knots() {
        let p = OdePath {
            grid: vec![0.0, 1.0, 2.0],
            values: vec![vec![0.0], vec![2.0], vec![4.0]],
            step: 1.0,
        };
        assert_eq!(p.interpolate(0.5), vec![1.0]);
        assert_eq!(p.interpolate(1.5), vec![3.0]);
        assert_eq!(p.interpolate(3.0), vec![4.0]);
    }
}
