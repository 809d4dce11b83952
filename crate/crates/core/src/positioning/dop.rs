use nalgebra::{DMatrix, Matrix4};

use super::{PositioningError, MAX_CONDITION};

/// Square roots of the diagonal of `Q = (GᵀG)⁻¹` plus the scalar `sqrt(Tr Q)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dop {
    pub east: f64,
    pub north: f64,
    pub up: f64,
    pub time: f64,
    pub scalar: f64,
}

/// Condition number of a symmetric positive semi-definite matrix.
pub(crate) fn spd_condition(m: &Matrix4<f64>) -> f64 {
    let eig = m.symmetric_eigenvalues();
    let max = eig.max();
    let min = eig.min();
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

pub(crate) fn dop_from_normal(gtg: &Matrix4<f64>) -> Result<Dop, PositioningError> {
    if !(spd_condition(gtg) <= MAX_CONDITION) {
        return Err(PositioningError::SingularGeometry);
    }
    let q = gtg
        .try_inverse()
        .ok_or(PositioningError::SingularGeometry)?;
    Ok(Dop {
        east: q[(0, 0)].sqrt(),
        north: q[(1, 1)].sqrt(),
        up: q[(2, 2)].sqrt(),
        time: q[(3, 3)].sqrt(),
        scalar: q.trace().sqrt(),
    })
}

/// DOP for a geometry matrix whose rows are `(eᵀ, 1)` with `e` the unit
/// line-of-sight vector in the local frame.
pub fn compute_dop(g: &DMatrix<f64>) -> Result<Dop, PositioningError> {
    if g.ncols() != 4 {
        return Err(PositioningError::InvalidInput(format!(
            "geometry matrix has {} columns, expected 4",
            g.ncols()
        )));
    }
    if g.nrows() < 4 {
        return Err(PositioningError::InsufficientAnchors {
            needed: 4,
            got: g.nrows(),
        });
    }
    let gtg: Matrix4<f64> = (g.transpose() * g).fixed_view::<4, 4>(0, 0).into_owned();
    dop_from_normal(&gtg)
}
