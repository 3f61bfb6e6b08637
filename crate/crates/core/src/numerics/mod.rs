//! Dense linear algebra, matrix exponential, ZOH discretization and a small
//! convex QP solver shared by the model and controller modules.

mod qp;

pub use qp::{solve_qp, QpProblem, QpSolution, QpStatus};

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Dense, dynamically sized `f64` matrix.
pub type Matrix = DMatrix<f64>;
/// Dense, dynamically sized `f64` vector.
pub type Vector = DVector<f64>;

#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("non-finite entry encountered in {0}")]
    NonFinite(&'static str),
    #[error("matrix is not symmetric: max asymmetry {0:.3e}")]
    NotSymmetric(f64),
    #[error("cost matrix is not positive semidefinite: min eigenvalue {0:.3e}")]
    NotPsd(f64),
    #[error("time step must be positive, got {0}")]
    NonPositiveDt(f64),
    #[error("problem is unbounded below")]
    Unbounded,
    #[error("QP backend error: {0}")]
    Backend(String),
}

fn check_finite(m: &Matrix, what: &'static str) -> Result<(), NumericsError> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(NumericsError::NonFinite(what))
    }
}

/// Matrix exponential by scaling-and-squaring with a diagonal Padé(6)
/// approximant. Accurate to machine precision for the small (≤ 6x6) systems
/// handled here.
pub fn expm(a: &Matrix) -> Matrix {
    assert_eq!(a.nrows(), a.ncols(), "expm requires a square matrix");
    let n = a.nrows();

    // Padé(6,6) coefficients c_k = c_{k-1} * (7-k) / (k * (13-k)).
    const C: [f64; 7] = [
        1.0,
        0.5,
        5.0 / 44.0,
        1.0 / 66.0,
        1.0 / 792.0,
        1.0 / 15_840.0,
        1.0 / 665_280.0,
    ];

    let norm = a.abs().row_sum().max();
    let s = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as i32
    } else {
        0
    };
    let scaled = a * 2f64.powi(-s);

    let mut num = Matrix::identity(n, n) * C[0];
    let mut den = Matrix::identity(n, n) * C[0];
    let mut power = Matrix::identity(n, n);
    for (k, &c) in C.iter().enumerate().skip(1) {
        power = &power * &scaled;
        num += &power * c;
        if k % 2 == 0 {
            den += &power * c;
        } else {
            den -= &power * c;
        }
    }

    let mut result = den
        .full_piv_lu()
        .solve(&num)
        .expect("Padé denominator is singular; matrix norm out of range");
    for _ in 0..s {
        result = &result * &result;
    }
    result
}

/// Exact zero-order-hold discretization of `dx/dt = Ac x + Bc u + Ec d`
/// for piecewise-constant `u` and `d` over intervals of `dt` seconds.
///
/// Returns `(Ad, Bd, Ed)` computed through the exponential of the augmented
/// block matrix `[[Ac, [Bc Ec]], [0, 0]]`, so the discrete model reproduces
/// the continuous trajectory exactly at the sample instants.
pub fn zoh_discretize(
    ac: &Matrix,
    bc: &Matrix,
    ec: &Matrix,
    dt: f64,
) -> Result<(Matrix, Matrix, Matrix), NumericsError> {
    let n = ac.nrows();
    if ac.ncols() != n {
        return Err(NumericsError::NotSquare {
            rows: ac.nrows(),
            cols: ac.ncols(),
        });
    }
    if bc.nrows() != n || ec.nrows() != n {
        return Err(NumericsError::DimensionMismatch(format!(
            "input maps must have {n} rows, got {} and {}",
            bc.nrows(),
            ec.nrows()
        )));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(NumericsError::NonPositiveDt(dt));
    }
    check_finite(ac, "Ac")?;
    check_finite(bc, "Bc")?;
    check_finite(ec, "Ec")?;

    let nb = bc.ncols();
    let ne = ec.ncols();
    let m = n + nb + ne;
    let mut aug = Matrix::zeros(m, m);
    aug.view_mut((0, 0), (n, n)).copy_from(ac);
    aug.view_mut((0, n), (n, nb)).copy_from(bc);
    aug.view_mut((0, n + nb), (n, ne)).copy_from(ec);
    let e = expm(&(aug * dt));

    let ad = e.view((0, 0), (n, n)).into_owned();
    let bd = e.view((0, n), (n, nb)).into_owned();
    let ed = e.view((0, n + nb), (n, ne)).into_owned();
    Ok((ad, bd, ed))
}

/// One fixed-size RK4 step of `dx/dt = f(x)`.
pub fn rk4_step<F>(x: &Vector, dt: f64, f: F) -> Vector
where
    F: Fn(&Vector) -> Vector,
{
    let k1 = f(x);
    let k2 = f(&(x + &k1 * (dt / 2.0)));
    let k3 = f(&(x + &k2 * (dt / 2.0)));
    let k4 = f(&(x + &k3 * dt));
    x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn expm_zero_matrix_is_identity() {
        let a = Matrix::zeros(3, 3);
        let e = expm(&a);
        assert_relative_eq!(e, Matrix::identity(3, 3), epsilon = 1e-15);
    }

    #[test]
    fn expm_nilpotent_matches_taylor_exactly() {
        // A nilpotent matrix has a finite Taylor series: exp(A) = I + A.
        let a = Matrix::from_row_slice(2, 2, &[0.0, 3.5, 0.0, 0.0]);
        let e = expm(&a);
        let taylor = Matrix::identity(2, 2) + &a;
        assert!((e - taylor).abs().max() < 1e-14);
    }

    #[test]
    fn expm_scalar() {
        let a = Matrix::from_element(1, 1, -1.0);
        assert_relative_eq!(expm(&a)[(0, 0)], (-1f64).exp(), epsilon = 1e-14);
    }

    #[test]
    fn expm_agrees_with_nalgebra_on_random_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let a = Matrix::from_fn(3, 3, |_, _| rng.random_range(-2.0..2.0));
            let mine = expm(&a);
            let theirs = a.exp();
            assert!((mine - theirs).abs().max() < 1e-11);
        }
    }

    #[test]
    fn zoh_zero_dynamics() {
        // Ac = 0 gives Ad = I and Bd = dt * Bc.
        let ac = Matrix::zeros(2, 2);
        let bc = Matrix::from_row_slice(2, 1, &[1.0, 2.0]);
        let ec = Matrix::zeros(2, 1);
        let (ad, bd, _) = zoh_discretize(&ac, &bc, &ec, 3600.0).unwrap();
        assert_relative_eq!(ad, Matrix::identity(2, 2), epsilon = 1e-12);
        assert_relative_eq!(bd[(0, 0)], 3600.0, epsilon = 1e-9);
        assert_relative_eq!(bd[(1, 0)], 7200.0, epsilon = 1e-9);
    }

    #[test]
    fn zoh_scalar_closed_form() {
        // a = -1, b = 1, dt = 1: Ad = e^-1, Bd = 1 - e^-1.
        let ac = Matrix::from_element(1, 1, -1.0);
        let bc = Matrix::from_element(1, 1, 1.0);
        let ec = Matrix::zeros(1, 1);
        let (ad, bd, _) = zoh_discretize(&ac, &bc, &ec, 1.0).unwrap();
        assert_relative_eq!(ad[(0, 0)], 0.367879441171442, epsilon = 1e-12);
        assert_relative_eq!(bd[(0, 0)], 0.632120558828558, epsilon = 1e-12);
    }

    #[test]
    fn zoh_rejects_bad_inputs() {
        let ac = Matrix::zeros(2, 3);
        let b = Matrix::zeros(2, 1);
        assert!(matches!(
            zoh_discretize(&ac, &b, &b, 1.0),
            Err(NumericsError::NotSquare { .. })
        ));
        let ac = Matrix::zeros(2, 2);
        assert!(matches!(
            zoh_discretize(&ac, &b, &b, 0.0),
            Err(NumericsError::NonPositiveDt(_))
        ));
        let nan = Matrix::from_element(2, 2, f64::NAN);
        assert!(matches!(
            zoh_discretize(&nan, &b, &b, 1.0),
            Err(NumericsError::NonFinite(_))
        ));
    }

    /// Integrate `dx/dt = A x + B u + E d` with step-halving RK4 until the
    /// endpoint stabilizes. Independent of the ZOH path.
    fn integrate_oracle(
        a: &Matrix,
        b: &Matrix,
        e: &Matrix,
        x0: &Vector,
        u: &Vector,
        d: &Vector,
        dt: f64,
    ) -> Vector {
        let f = |x: &Vector| a * x + b * u + e * d;
        let mut steps = 16;
        let mut prev: Option<Vector> = None;
        loop {
            let h = dt / steps as f64;
            let mut x = x0.clone();
            for _ in 0..steps {
                x = rk4_step(&x, h, f);
            }
            if let Some(p) = &prev {
                if (&x - p).abs().max() < 1e-12 * (1.0 + x.abs().max()) {
                    return x;
                }
            }
            prev = Some(x);
            steps *= 2;
            assert!(steps <= 1 << 20, "RK4 oracle failed to converge");
        }
    }

    #[test]
    fn zoh_matches_rk4_for_random_stable_systems() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..100 {
            // Random stable 2x2: negative-definite symmetric part keeps
            // eigenvalues in the left half plane.
            let m = Matrix::from_fn(2, 2, |_, _| rng.random_range(-1.0..1.0));
            let a = -(&m * m.transpose()) - Matrix::identity(2, 2) * rng.random_range(0.1..1.0);
            let b = Matrix::from_fn(2, 1, |_, _| rng.random_range(-1.0..1.0));
            let e = Matrix::from_fn(2, 2, |_, _| rng.random_range(-1.0..1.0));
            let x0 = Vector::from_fn(2, |_, _| rng.random_range(-1.0..1.0));
            let u = Vector::from_element(1, rng.random_range(-1.0..1.0));
            let d = Vector::from_fn(2, |_, _| rng.random_range(-1.0..1.0));
            let dt = rng.random_range(0.5..5.0);

            let (ad, bd, ed) = zoh_discretize(&a, &b, &e, dt).unwrap();
            let x_zoh = &ad * &x0 + &bd * &u + &ed * &d;
            let x_ref = integrate_oracle(&a, &b, &e, &x0, &u, &d, dt);
            let err = (&x_zoh - &x_ref).abs().max();
            let scale = x_ref.abs().max().max(1e-3);
            assert!(
                err / scale < 1e-8,
                "relative error {:.3e} too large",
                err / scale
            );
        }
    }
}
