//! Box-constrained local polynomial regression.

use nalgebra::{DMatrix, DVector, Vector3};

use super::DetectorError;

/// Which side of the box was binding on an axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActiveBound {
    Lower,
    Upper,
}

/// One window sample: age in epochs (0 = current) and position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryPoint {
    pub age: f64,
    pub position: Vector3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegressionParams {
    pub window: usize,
    pub kernel_coeff: f64,
    pub order: usize,
    pub eps: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmoothedFit {
    /// Fitted value at age 0.
    pub position: Vector3<f64>,
    /// Polynomial coefficients per axis in rescaled time (lowest order first).
    pub coefficients: [DVector<f64>; 3],
    /// Fitted minus observed, per history point.
    pub residuals: Vec<Vector3<f64>>,
    pub active: [Option<ActiveBound>; 3],
}

impl SmoothedFit {
    /// Per-axis RMS of the residuals.
    pub fn residual_rms(&self) -> Vector3<f64> {
        let n = self.residuals.len().max(1) as f64;
        self.residuals
            .iter()
            .fold(Vector3::zeros(), |acc, r| acc + r.component_mul(r))
            .map(|s| (s / n).sqrt())
    }
}

/// Local-regression weight `exp(−κ (age/w)²)`.
pub fn regression_kernel(age: f64, window: usize, kernel_coeff: f64) -> f64 {
    let x = age / window as f64;
    (-kernel_coeff * x * x).exp()
}

/// Rescaled time: the oldest admissible sample maps to 0, the current epoch to 1.
fn rescaled(age: f64, window: usize) -> f64 {
    1.0 - age / window as f64
}

fn basis(tau: f64, order: usize) -> DVector<f64> {
    DVector::from_iterator(order + 1, (0..=order).map(|k| tau.powi(k as i32)))
}

/// Kernel-weighted polynomial fit of the window, evaluated at the current
/// epoch, with the evaluation held inside `center ± eps` per axis.
///
/// Each axis is an independent convex QP with one two-sided linear
/// constraint. When the unconstrained optimum violates it, the binding side is
/// imposed as an equality and the KKT system is solved in closed form.
pub fn smooth_position(
    history: &[HistoryPoint],
    center: &Vector3<f64>,
    params: &RegressionParams,
) -> Result<SmoothedFit, DetectorError> {
    let k = params.order + 1;
    let points: Vec<&HistoryPoint> = history
        .iter()
        .filter(|h| h.age >= 0.0 && h.age <= params.window as f64)
        .collect();
    let distinct = {
        let mut ages: Vec<f64> = points.iter().map(|h| h.age).collect();
        ages.sort_by(f64::total_cmp);
        ages.dedup();
        ages.len()
    };
    if distinct < k {
        return Err(DetectorError::InsufficientHistory {
            needed: k,
            got: distinct,
        });
    }

    let mut hessian = DMatrix::<f64>::zeros(k, k);
    let mut rhs = [
        DVector::<f64>::zeros(k),
        DVector::zeros(k),
        DVector::zeros(k),
    ];
    let mut design = Vec::with_capacity(points.len());
    for h in &points {
        let phi = basis(rescaled(h.age, params.window), params.order);
        let wgt = regression_kernel(h.age, params.window, params.kernel_coeff);
        hessian.ger(wgt, &phi, &phi, 1.0);
        for (axis, r) in rhs.iter_mut().enumerate() {
            r.axpy(wgt * h.position[axis], &phi, 1.0);
        }
        design.push(phi);
    }
    let chol = hessian
        .clone()
        .cholesky()
        .ok_or(DetectorError::InsufficientHistory {
            needed: k,
            got: distinct,
        })?;
    let a = basis(1.0, params.order);
    let h_inv_a = chol.solve(&a);
    let a_h_inv_a = a.dot(&h_inv_a);

    let mut coefficients: [DVector<f64>; 3] = Default::default();
    let mut active = [None; 3];
    let mut position = Vector3::zeros();
    for axis in 0..3 {
        let mut c = chol.solve(&rhs[axis]);
        let value = a.dot(&c);
        let (lo, hi) = (
            center[axis] - params.eps[axis],
            center[axis] + params.eps[axis],
        );
        let bound = if value > hi {
            Some((ActiveBound::Upper, hi))
        } else if value < lo {
            Some((ActiveBound::Lower, lo))
        } else {
            None
        };
        if let Some((side, b)) = bound {
            // c = c* + H⁻¹a (b − aᵀc*) / (aᵀH⁻¹a)
            c.axpy((b - value) / a_h_inv_a, &h_inv_a, 1.0);
            active[axis] = Some(side);
            position[axis] = b;
        } else {
            position[axis] = value;
        }
        coefficients[axis] = c;
    }
    let residuals = points
        .iter()
        .zip(&design)
        .map(|(h, phi)| Vector3::from_fn(|axis, _| phi.dot(&coefficients[axis]) - h.position[axis]))
        .collect();
    Ok(SmoothedFit {
        position,
        coefficients,
        residuals,
        active,
    })
}
