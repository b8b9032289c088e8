use nalgebra::{DMatrix, DVector};

use crate::C64;

/// Solves `A x = b` for Hermitian positive-definite `A` through its Cholesky
/// factor. Returns `None` when `A` is not positive definite.
pub(crate) fn solve_hpd(a: DMatrix<C64>, b: &DVector<C64>) -> Option<DVector<C64>> {
    let chol = a.cholesky()?;
    // Complex square roots never fail, so a negative pivot shows up as a
    // mostly imaginary diagonal entry. Rounding leaves small imaginary parts
    // on well-posed but badly scaled systems.
    let l = chol.l_dirty();
    let ok = (0..l.nrows()).all(|i| {
        let d = l[(i, i)];
        d.re > 0.0 && d.im.abs() < d.re
    });
    ok.then(|| chol.solve(b))
}

/// Minimum-norm least-squares fallback for singular Hermitian systems.
pub(crate) fn solve_pinv(a: DMatrix<C64>, b: &DVector<C64>) -> Option<DVector<C64>> {
    let scale = a.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if scale == 0.0 {
        return None;
    }
    a.svd(true, true).solve(b, scale * 1e-12).ok()
}
