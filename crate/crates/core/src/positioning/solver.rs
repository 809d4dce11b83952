//! Damped Gauss-Newton on fixed-size parameter vectors.

use nalgebra::{DMatrix, DVector, SMatrix, SVector};

/// Cost and normal equations at a point; `cost = Σ r²`, `jtj = JᵀJ`, `jtr = Jᵀr`.
pub(crate) struct Normal<const N: usize> {
    pub cost: f64,
    pub jtj: SMatrix<f64, N, N>,
    pub jtr: SVector<f64, N>,
}

impl<const N: usize> Normal<N> {
    pub fn zero() -> Self {
        Self {
            cost: 0.0,
            jtj: SMatrix::zeros(),
            jtr: SVector::zeros(),
        }
    }

    #[inline]
    pub fn add(&mut self, r: f64, j: &SVector<f64, N>) {
        self.cost += r * r;
        self.jtj.ger(1.0, j, j, 1.0);
        self.jtr.axpy(r, j, 1.0);
    }
}

pub(crate) struct GnOutcome<const N: usize> {
    pub x: SVector<f64, N>,
    pub normal: Normal<N>,
    pub iterations: usize,
    pub converged: bool,
}

const MAX_HALVINGS: usize = 40;

fn solve<const N: usize>(
    jtj: &SMatrix<f64, N, N>,
    rhs: &SVector<f64, N>,
) -> Option<SVector<f64, N>> {
    if let Some(ch) = jtj.cholesky() {
        let d = ch.solve(rhs);
        if d.iter().all(|v| v.is_finite()) {
            return Some(d);
        }
    }
    // Rank-deficient systems (inactive hinge terms) take the minimum-norm step.
    let m = DMatrix::from_column_slice(N, N, jtj.as_slice());
    let b = DVector::from_column_slice(rhs.as_slice());
    let svd = m.svd(true, true);
    let tol = svd.singular_values.max() * 1e-12;
    let d = svd.solve(&b, tol.max(f64::MIN_POSITIVE)).ok()?;
    Some(SVector::from_column_slice(d.as_slice()))
}

/// Minimizes `Σ r²` from `x0`. The step is halved until the cost does not
/// increase; iteration stops when the accepted step is shorter than `tol` or
/// no descent is possible.
pub(crate) fn gauss_newton<const N: usize, F>(
    x0: SVector<f64, N>,
    max_iter: usize,
    tol: f64,
    mut eval: F,
) -> GnOutcome<N>
where
    F: FnMut(&SVector<f64, N>) -> Normal<N>,
{
    let mut x = x0;
    let mut normal = eval(&x);
    for it in 1..=max_iter {
        if normal.cost == 0.0 {
            return GnOutcome {
                x,
                normal,
                iterations: it - 1,
                converged: true,
            };
        }
        let Some(delta) = solve(&normal.jtj, &(-normal.jtr)) else {
            return GnOutcome {
                x,
                normal,
                iterations: it,
                converged: false,
            };
        };
        let mut lambda = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let trial = x + delta * lambda;
            let n = eval(&trial);
            if n.cost.is_finite() && n.cost <= normal.cost {
                accepted = Some((trial, n));
                break;
            }
            lambda *= 0.5;
        }
        let Some((next, n)) = accepted else {
            // No descent along the Gauss-Newton direction: a stationary point.
            return GnOutcome {
                x,
                normal,
                iterations: it,
                converged: true,
            };
        };
        let step = (delta * lambda).norm();
        x = next;
        normal = n;
        if step < tol {
            return GnOutcome {
                x,
                normal,
                iterations: it,
                converged: true,
            };
        }
    }
    GnOutcome {
        x,
        normal,
        iterations: max_iter,
        converged: false,
    }
}
