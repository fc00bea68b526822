//! Joint multi-output least squares through one shared Cholesky factor.

use ndarray::{Array2, ArrayView2, Axis};

use crate::error::{DteError, Result};

/// Pivots below `max_diag * SINGULAR_TOL` mark the system as singular.
const SINGULAR_TOL: f64 = 1e-12;

/// Prepends a column of ones.
pub(crate) fn with_intercept(x: ArrayView2<'_, f64>) -> Array2<f64> {
    let (m, d) = x.dim();
    let mut design = Array2::ones((m, d + 1));
    design.slice_mut(ndarray::s![.., 1..]).assign(&x);
    design
}

/// Solves `(D^T D + ridge I') B = D^T Y` for every column of `Y` at once,
/// where `I'` is the identity with the intercept entry zeroed.
/// `design` must already contain the intercept column first.
pub(crate) fn solve_normal_equations(
    design: ArrayView2<'_, f64>,
    targets: ArrayView2<'_, f64>,
    ridge: f64,
) -> Result<Array2<f64>> {
    if design.nrows() != targets.nrows() {
        return Err(DteError::ShapeMismatch(format!(
            "design has {} rows, targets {}",
            design.nrows(),
            targets.nrows()
        )));
    }
    let mut gram = design.t().dot(&design);
    for k in 1..gram.nrows() {
        gram[[k, k]] += ridge;
    }
    let rhs = design.t().dot(&targets);
    let factor = cholesky(gram)?;
    Ok(cholesky_solve(&factor, rhs))
}

/// Lower-triangular `L` with `A = L L^T`.
pub(crate) fn cholesky(mut a: Array2<f64>) -> Result<Array2<f64>> {
    let p = a.nrows();
    let max_diag = a
        .diag()
        .iter()
        .fold(0.0f64, |acc, &v| acc.max(v.abs()))
        .max(f64::MIN_POSITIVE);
    for j in 0..p {
        let mut pivot = a[[j, j]];
        for k in 0..j {
            pivot -= a[[j, k]] * a[[j, k]];
        }
        if !(pivot > max_diag * SINGULAR_TOL) {
            return Err(DteError::SingularDesign { column: j, pivot });
        }
        let root = pivot.sqrt();
        a[[j, j]] = root;
        for i in (j + 1)..p {
            let mut v = a[[i, j]];
            for k in 0..j {
                v -= a[[i, k]] * a[[j, k]];
            }
            a[[i, j]] = v / root;
        }
        for i in 0..j {
            a[[i, j]] = 0.0;
        }
    }
    Ok(a)
}

/// Solves `L L^T X = B` column by column.
pub(crate) fn cholesky_solve(factor: &Array2<f64>, mut rhs: Array2<f64>) -> Array2<f64> {
    let p = factor.nrows();
    for mut col in rhs.axis_iter_mut(Axis(1)) {
        for i in 0..p {
            let mut v = col[i];
            for k in 0..i {
                v -= factor[[i, k]] * col[k];
            }
            col[i] = v / factor[[i, i]];
        }
        for i in (0..p).rev() {
            let mut v = col[i];
            for k in (i + 1)..p {
                v -= factor[[k, i]] * col[k];
            }
            col[i] = v / factor[[i, i]];
        }
    }
    rhs
}
