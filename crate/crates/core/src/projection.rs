//! Sparse projection direction from a constrained l1 minimization.
//!
//! `omega_tilde = argmin ||omega||_1  s.t.  ||S omega - xi||_inf <= lambda'`
//! is solved as a linear program in `(omega+, omega-) >= 0`, then normalized
//! to `omega_hat = omega_tilde / (omega_tilde' S omega_tilde)`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::lp::{solve_lp, ConstraintSense, LpStandardProblem, LpStatus};

/// Quadratic forms at or below this are treated as a zero direction.
pub const MIN_QUAD_FORM: f64 = 1e-10;
/// Slack allowed on the sup-norm constraint when checking a solution.
pub const CONSTRAINT_SLACK: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionDirection {
    pub omega_tilde: DVector<f64>,
    pub omega_hat: DVector<f64>,
    /// `omega_tilde' S omega_tilde`.
    pub quad_form: f64,
    pub lambda_prime: f64,
}

/// The `2p`-variable linear program for `omega_tilde`.
pub fn direction_lp(s: &DMatrix<f64>, xi: &DVector<f64>, lambda_prime: f64) -> Result<LpStandardProblem> {
    let p = xi.len();
    if s.shape() != (p, p) {
        return Err(Error::Dimension(format!("S is {:?}, xi has length {p}", s.shape())));
    }
    let mut a = DMatrix::zeros(2 * p, 2 * p);
    a.view_mut((0, 0), (p, p)).copy_from(s);
    a.view_mut((0, p), (p, p)).copy_from(&(-s));
    a.view_mut((p, 0), (p, p)).copy_from(s);
    a.view_mut((p, p), (p, p)).copy_from(&(-s));
    let mut b = Vec::with_capacity(2 * p);
    b.extend(xi.iter().map(|x| x + lambda_prime));
    b.extend(xi.iter().map(|x| x - lambda_prime));
    let mut senses = vec![ConstraintSense::Le; p];
    senses.extend(vec![ConstraintSense::Ge; p]);
    LpStandardProblem::new(vec![1.0; 2 * p], a, b, senses)
}

/// Solves for `omega_tilde` and normalizes it.
///
/// A zero (or numerically zero) direction is an error because the
/// normalization is undefined there; it means `lambda'` is too large.
pub fn estimate_direction(
    s: &DMatrix<f64>,
    xi: &DVector<f64>,
    lambda_prime: f64,
) -> Result<ProjectionDirection> {
    if !(lambda_prime > 0.0 && lambda_prime.is_finite()) {
        return Err(Error::InvalidArgument(format!("lambda' must be positive, got {lambda_prime}")));
    }
    if xi.iter().all(|v| *v == 0.0) {
        return Err(Error::InvalidArgument("loading vector xi must be nonzero".into()));
    }
    let p = xi.len();
    let lp = direction_lp(s, xi, lambda_prime)?;
    let sol = solve_lp(&lp)?;
    match sol.status {
        LpStatus::Optimal => {}
        LpStatus::Infeasible => {
            return Err(Error::Lp(format!("direction program infeasible at lambda' = {lambda_prime}")))
        }
        LpStatus::Unbounded => return Err(Error::Lp("direction program unbounded".into())),
    }
    let omega_tilde = DVector::from_fn(p, |j, _| sol.x[j] - sol.x[p + j]);
    let gap = (s * &omega_tilde - xi).amax();
    if gap > lambda_prime + CONSTRAINT_SLACK {
        return Err(Error::Lp(format!(
            "direction violates the sup-norm constraint: {gap} > {lambda_prime}"
        )));
    }
    let quad_form = omega_tilde.dot(&(s * &omega_tilde));
    if !(quad_form > MIN_QUAD_FORM) {
        return Err(Error::DegenerateDirection { quad_form, lambda_prime });
    }
    let omega_hat = &omega_tilde / quad_form;
    Ok(ProjectionDirection {
        omega_tilde,
        omega_hat,
        quad_form,
        lambda_prime,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_soft_threshold() {
        let s = DMatrix::identity(2, 2);
        let xi = DVector::from_vec(vec![1.0, 0.0]);
        let d = estimate_direction(&s, &xi, 0.2).unwrap();
        assert!((d.omega_tilde[0] - 0.8).abs() < 1e-12 && d.omega_tilde[1] == 0.0);
        assert!((d.omega_hat[0] - 1.25).abs() < 1e-12);
        assert!((d.quad_form - 0.64).abs() < 1e-12);
    }

    #[test]
    fn diagonal_example() {
        let s = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 1.0]));
        let xi = DVector::from_vec(vec![1.0, 0.0]);
        let d = estimate_direction(&s, &xi, 0.1).unwrap();
        assert!((d.omega_tilde[0] - 0.45).abs() < 1e-12);
        assert_eq!(d.omega_tilde[1], 0.0);
    }

    #[test]
    fn large_lambda_is_degenerate() {
        let s = DMatrix::identity(3, 3);
        let xi = DVector::from_vec(vec![0.5, -0.3, 0.1]);
        for lp in [0.5, 0.7, 2.0] {
            assert!(matches!(
                estimate_direction(&s, &xi, lp),
                Err(Error::DegenerateDirection { .. })
            ));
        }
    }

    #[test]
    fn argument_guards() {
        let s = DMatrix::identity(2, 2);
        assert!(estimate_direction(&s, &DVector::zeros(2), 0.1).is_err());
        assert!(estimate_direction(&s, &DVector::from_vec(vec![1.0, 0.0]), 0.0).is_err());
        assert!(estimate_direction(&s, &DVector::from_vec(vec![1.0, 0.0, 0.0]), 0.1).is_err());
    }
}
