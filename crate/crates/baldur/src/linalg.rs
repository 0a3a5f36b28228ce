//! Dense linear-algebra helpers: stable logistic primitives, SPD inversion with
//! a jitter ladder, and a square-allocation tracker backing the wide-data
//! complexity contract (dual views must never build a D×D matrix).

use std::cell::Cell;

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{BaldurError, Result};

pub const LN_2PI: f64 = 1.8378770664093453;
pub const LN_2PI_E: f64 = 2.8378770664093453;

thread_local! {
    static MAX_SQUARE: Cell<usize> = const { Cell::new(0) };
}

/// Record that an n×n matrix was materialized. Every square matrix built by
/// the inference engine goes through this module, so the running maximum is a
/// faithful witness of the largest square allocation of a fit.
pub fn note_square(n: usize) {
    MAX_SQUARE.with(|m| {
        if n > m.get() {
            m.set(n);
        }
    });
}

pub fn reset_square_tracker() {
    MAX_SQUARE.with(|m| m.set(0));
}

pub fn max_square_seen() -> usize {
    MAX_SQUARE.with(|m| m.get())
}

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// ln σ(x) = −ln(1 + e^{−x}), stable for large |x|.
pub fn ln_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// λ(a) = (σ(a) − 1/2) / (2a), with the removable singularity at 0 filled by
/// its limit 1/8. Even in a.
pub fn jaakkola_lambda(a: f64) -> f64 {
    let a = a.abs();
    if a < 1e-6 {
        // Taylor expansion around 0: 1/8 − a²/192 + O(a⁴)
        0.125 - a * a / 192.0
    } else {
        (sigmoid(a) - 0.5) / (2.0 * a)
    }
}

/// Inverse and log-determinant of a symmetric positive-definite matrix.
pub struct SpdInverse {
    pub inverse: DMatrix<f64>,
    /// ln|M| of the input matrix.
    pub ln_det: f64,
}

fn chol_ln_det(chol: &Cholesky<f64, nalgebra::Dyn>) -> f64 {
    let l = chol.l_dirty();
    let mut ln_det = 0.0;
    for i in 0..l.nrows() {
        ln_det += l[(i, i)].ln();
    }
    2.0 * ln_det
}

/// Cholesky with jitter escalation. Starts at 1e-8 × mean(diag), escalates
/// ×10 up to 1e-2 × mean(diag), then reports NumericalBreakdown.
fn chol_with_jitter(m: &DMatrix<f64>, what: &str) -> Result<Cholesky<f64, nalgebra::Dyn>> {
    if let Some(chol) = Cholesky::new(m.clone()) {
        return Ok(chol);
    }
    let n = m.nrows();
    let mean_diag = (m.diagonal().iter().map(|d| d.abs()).sum::<f64>() / n as f64).max(f64::MIN_POSITIVE);
    let mut rel = 1e-8;
    while rel <= 1e-2 {
        let mut jittered = m.clone();
        for i in 0..n {
            jittered[(i, i)] += rel * mean_diag;
        }
        if let Some(chol) = Cholesky::new(jittered) {
            return Ok(chol);
        }
        rel *= 10.0;
    }
    Err(BaldurError::NumericalBreakdown(format!(
        "Cholesky of {what} ({n}×{n}) failed after jitter escalation"
    )))
}

/// Invert an SPD matrix (typically a precision matrix), returning the inverse
/// and ln|M| of the input. The n×n result is tracked.
pub fn invert_spd(m: &DMatrix<f64>, what: &str) -> Result<SpdInverse> {
    note_square(m.nrows());
    let chol = chol_with_jitter(m, what)?;
    let ln_det = chol_ln_det(&chol);
    Ok(SpdInverse {
        inverse: chol.inverse(),
        ln_det,
    })
}

/// ln|M| of an SPD matrix via Cholesky (with the same jitter ladder).
pub fn ln_det_spd(m: &DMatrix<f64>, what: &str) -> Result<f64> {
    let chol = chol_with_jitter(m, what)?;
    Ok(chol_ln_det(&chol))
}

/// aᵀ·a (ncols × ncols), tracked.
pub fn gram_tt(a: &DMatrix<f64>) -> DMatrix<f64> {
    note_square(a.ncols());
    a.transpose() * a
}

/// a·aᵀ (nrows × nrows), tracked.
pub fn gram(a: &DMatrix<f64>) -> DMatrix<f64> {
    note_square(a.nrows());
    a * a.transpose()
}

/// a·diag(w)·aᵀ without materializing anything wider than a itself.
pub fn weighted_gram(a: &DMatrix<f64>, w: &DVector<f64>) -> DMatrix<f64> {
    debug_assert_eq!(a.ncols(), w.len());
    note_square(a.nrows());
    let mut scaled = a.clone();
    for (j, wj) in w.iter().enumerate() {
        scaled.column_mut(j).scale_mut(*wj);
    }
    scaled * a.transpose()
}

/// Tracked identity matrix.
pub fn identity(n: usize) -> DMatrix<f64> {
    note_square(n);
    DMatrix::identity(n, n)
}

/// Tracked square product a·b where the result is square.
pub fn mul_square(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    debug_assert_eq!(a.nrows(), b.ncols());
    note_square(a.nrows());
    a * b
}

pub fn all_finite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|v| v.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn sigmoid_matches_definition() {
        assert_relative_eq!(sigmoid(0.0), 0.5);
        assert_relative_eq!(sigmoid(2.0), 0.8807970779778823, epsilon = 1e-15);
        assert_relative_eq!(sigmoid(-30.0), (-30.0f64).exp() / (1.0 + (-30.0f64).exp()));
        assert!(ln_sigmoid(-700.0).is_finite());
        assert_relative_eq!(ln_sigmoid(3.0), sigmoid(3.0).ln(), epsilon = 1e-12);
    }

    #[test]
    fn lambda_limit_and_symmetry() {
        assert_relative_eq!(jaakkola_lambda(1.0), 0.11552928931500245, epsilon = 1e-14);
        for a in [0.5, 2.0, 7.0] {
            assert_eq!(jaakkola_lambda(a), jaakkola_lambda(-a));
        }
        for a in [1e-3, 1e-4, 1e-8, 0.0] {
            assert!((jaakkola_lambda(a) - 0.125).abs() <= 1e-6);
        }
    }

    #[test]
    fn spd_inverse_round_trips() {
        let m = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let inv = invert_spd(&m, "test").unwrap();
        let id = &m * &inv.inverse;
        assert_relative_eq!(id[(0, 0)], 1.0, epsilon = 1e-12);
        assert_relative_eq!(id[(0, 1)], 0.0, epsilon = 1e-12);
        assert_relative_eq!(inv.ln_det, (4.0f64 * 3.0 - 1.0).ln(), epsilon = 1e-12);
    }

    #[test]
    fn jitter_rescues_semidefinite() {
        // rank-1: plain Cholesky fails, jitter ladder fixes it
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let inv = invert_spd(&m, "rank1");
        assert!(inv.is_ok());
    }

    #[test]
    fn square_tracker_records_max() {
        reset_square_tracker();
        let _ = identity(3);
        let a = DMatrix::<f64>::zeros(5, 2);
        let _ = gram(&a);
        assert_eq!(max_square_seen(), 5);
        reset_square_tracker();
        assert_eq!(max_square_seen(), 0);
    }
}
