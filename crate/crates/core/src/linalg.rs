//! Small dense real linear algebra.
//!
//! Everything here works on [`Mat`] (a dynamically sized `nalgebra` matrix) and
//! targets the dimensions the rest of the crate needs: tens of parameters, at most
//! a hundred once a momentum model is lifted to phase space. Decompositions
//! (LU, Schur, symmetric eigen, Padé exponential) come from `nalgebra`; the
//! Lyapunov solver and the adaptive quadrature are implemented here.

use nalgebra::{Complex, DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Real parts at or above `-HURWITZ_MARGIN` count as unstable.
pub const HURWITZ_MARGIN: f64 = 1e-12;

const SCHUR_MAX_ITER: usize = 100_000;

/// Eigenvalues of a real square matrix, with multiplicity.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub values: Vec<Complex<f64>>,
}

impl Spectrum {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn max_real(&self) -> f64 {
        self.values.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_real(&self) -> f64 {
        self.values.iter().map(|z| z.re).fold(f64::INFINITY, f64::min)
    }

    /// Real parts sorted ascending.
    pub fn sorted_real(&self) -> Vec<f64> {
        let mut re: Vec<f64> = self.values.iter().map(|z| z.re).collect();
        re.sort_by(f64::total_cmp);
        re
    }

    pub fn is_real(&self, tol: f64) -> bool {
        self.values.iter().all(|z| z.im.abs() <= tol * (1.0 + z.re.abs()))
    }
}

fn require_square(m: &Mat, what: &str) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::dim(format!(
            "{what} must be square, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

fn require_finite(m: &Mat, what: &str) -> Result<()> {
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical {
            message: format!("{what} has non-finite entries"),
            residual: f64::NAN,
        });
    }
    Ok(())
}

/// `(M + Mᵀ) / 2`.
pub fn sym(m: &Mat) -> Result<Mat> {
    require_square(m, "sym input")?;
    let n = m.nrows();
    Ok(Mat::from_fn(n, n, |i, j| 0.5 * (m[(i, j)] + m[(j, i)])))
}

pub fn is_symmetric(m: &Mat, tol: f64) -> bool {
    m.is_square()
        && (0..m.nrows()).all(|i| (0..i).all(|j| (m[(i, j)] - m[(j, i)]).abs() <= tol))
}

pub fn frobenius(m: &Mat) -> f64 {
    m.norm()
}

/// `‖a − b‖_F / ‖b‖_F`.
pub fn rel_frobenius(a: &Mat, b: &Mat) -> f64 {
    (a - b).norm() / b.norm()
}

/// Largest singular value.
pub fn spectral_norm(m: &Mat) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().max()
}

/// All eigenvalues via Hessenberg reduction and shifted QR (real Schur form).
pub fn eigenvalues(m: &Mat) -> Result<Spectrum> {
    require_square(m, "eigenvalue input")?;
    require_finite(m, "eigenvalue input")?;
    if m.nrows() == 0 {
        return Ok(Spectrum { values: vec![] });
    }
    // Near-scalar inputs can stall at machine epsilon; a slightly looser
    // deflation threshold still resolves eigenvalues to ~1e-13 relative.
    let schur = nalgebra::linalg::Schur::try_new(m.clone(), f64::EPSILON, SCHUR_MAX_ITER)
        .or_else(|| nalgebra::linalg::Schur::try_new(m.clone(), 64.0 * f64::EPSILON, SCHUR_MAX_ITER))
        .ok_or_else(|| {
            // Report how far from triangular the input is, as a scale for the failure.
            let sub: f64 = (1..m.nrows()).map(|i| m[(i, i - 1)].abs()).sum();
            Error::Numerical {
                message: format!("shifted QR did not converge in {SCHUR_MAX_ITER} sweeps"),
                residual: sub,
            }
        })?;
    let values = schur.complex_eigenvalues().iter().copied().collect();
    Ok(Spectrum { values })
}

/// True iff every eigenvalue has real part below `-HURWITZ_MARGIN`.
pub fn is_hurwitz(m: &Mat) -> Result<bool> {
    Ok(eigenvalues(m)?.max_real() < -HURWITZ_MARGIN)
}

/// Matrix exponential by scaling and squaring with Padé approximants (up to degree 13).
pub fn expm(m: &Mat) -> Result<Mat> {
    require_square(m, "expm input")?;
    require_finite(m, "expm input")?;
    if m.nrows() == 0 {
        return Ok(m.clone());
    }
    Ok(m.exp())
}

/// Solves `A X = B` with partial-pivoting LU.
pub fn solve(a: &Mat, b: &Mat) -> Result<Mat> {
    require_square(a, "system matrix")?;
    if a.nrows() != b.nrows() {
        return Err(Error::dim(format!(
            "system is {}x{} but right-hand side has {} rows",
            a.nrows(),
            a.ncols(),
            b.nrows()
        )));
    }
    let lu = a.clone().lu();
    lu.solve(b).ok_or_else(|| Error::Numerical {
        message: "singular linear system".into(),
        residual: f64::INFINITY,
    })
}

pub fn solve_vec(a: &Mat, b: &Vector) -> Result<Vector> {
    require_square(a, "system matrix")?;
    if a.nrows() != b.len() {
        return Err(Error::dim("right-hand side length"));
    }
    a.clone().lu().solve(b).ok_or_else(|| Error::Numerical {
        message: "singular linear system".into(),
        residual: f64::INFINITY,
    })
}

/// Explicit inverse. Only used where a preconditioner matrix has to be materialised.
pub fn inverse(a: &Mat) -> Result<Mat> {
    solve(a, &Mat::identity(a.nrows(), a.nrows()))
}

/// Symmetric positive semi-definite square root; slightly negative eigenvalues are clipped.
pub fn psd_sqrt(m: &Mat) -> Result<Mat> {
    require_square(m, "psd_sqrt input")?;
    require_finite(m, "psd_sqrt input")?;
    let s = sym(m)?;
    let scale = s.amax().max(f64::MIN_POSITIVE);
    let eig = SymmetricEigen::new(s);
    let min = eig.eigenvalues.min();
    if min < -1e-9 * scale {
        return Err(Error::Numerical {
            message: "matrix is not positive semi-definite".into(),
            residual: min,
        });
    }
    let root = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let v = &eig.eigenvectors;
    Ok(v * Mat::from_diagonal(&root) * v.transpose())
}

/// Eigenvalues of the symmetric part, ascending.
pub fn symmetric_eigenvalues(m: &Mat) -> Result<Vec<f64>> {
    let s = sym(m)?;
    let mut ev: Vec<f64> = s.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    Ok(ev)
}

/// `‖½BQ + ½QBᵀ − A‖_F`.
pub fn lyapunov_residual(b: &Mat, a: &Mat, q: &Mat) -> f64 {
    (0.5 * (b * q) + 0.5 * (q * b.transpose()) - a).norm()
}

/// Solves `½BQ + ½QBᵀ = A` for symmetric `Q`.
///
/// Requires `-B` Hurwitz. The system is vectorised as `½(I⊗B + B⊗I) vec Q = vec A`
/// and solved densely, which is `O(d⁶)` and meant for `d` up to a few dozen.
pub fn solve_lyapunov(b: &Mat, a: &Mat) -> Result<Mat> {
    require_square(b, "drift")?;
    require_square(a, "diffusion")?;
    if a.nrows() != b.nrows() {
        return Err(Error::dim(format!(
            "drift is {}x{} but diffusion is {}x{}",
            b.nrows(),
            b.ncols(),
            a.nrows(),
            a.ncols()
        )));
    }
    require_finite(a, "diffusion")?;
    let neg_b = -b;
    if !is_hurwitz(&neg_b)? {
        let re = eigenvalues(b)?.min_real();
        return Err(Error::NotHurwitz(format!(
            "-B is not Hurwitz (smallest eigenvalue real part of B is {re:.3e})"
        )));
    }
    let a = if is_symmetric(a, 1e-12 * (1.0 + a.amax())) {
        a.clone()
    } else {
        log::warn!("diffusion matrix is not symmetric; using its symmetric part");
        sym(a)?
    };

    let d = b.nrows();
    let dd = d * d;
    // Column-major vec: vec(BQ) = (I⊗B) vec Q, vec(QBᵀ) = (B⊗I) vec Q.
    let mut k = Mat::zeros(dd, dd);
    for j in 0..d {
        for i in 0..d {
            let row = i + j * d;
            for l in 0..d {
                k[(row, l + j * d)] += 0.5 * b[(i, l)];
                k[(row, i + l * d)] += 0.5 * b[(j, l)];
            }
        }
    }
    let rhs = Vector::from_iterator(dd, a.iter().copied());
    let vq = k.lu().solve(&rhs).ok_or_else(|| Error::Numerical {
        message: "singular Lyapunov operator".into(),
        residual: f64::INFINITY,
    })?;
    let q = sym(&Mat::from_column_slice(d, d, vq.as_slice()))?;

    let res = lyapunov_residual(b, &a, &q);
    if res > 1e-6 * (1.0 + a.norm()) {
        return Err(Error::Numerical {
            message: "Lyapunov solve residual too large".into(),
            residual: res,
        });
    }
    Ok(q)
}

/// Adaptive Simpson quadrature of a matrix-valued function.
///
/// The target is an entrywise absolute error of `tol`. Fails with
/// [`Error::Quadrature`] (carrying the best estimate) once the evaluation
/// budget is spent.
pub fn integrate_matrix<F>(f: F, t0: f64, t1: f64, tol: f64) -> Result<Mat>
where
    F: Fn(f64) -> Mat,
{
    integrate_matrix_with_budget(f, t0, t1, tol, 2_000_000)
}

pub fn integrate_matrix_with_budget<F>(
    f: F,
    t0: f64,
    t1: f64,
    tol: f64,
    max_evals: usize,
) -> Result<Mat>
where
    F: Fn(f64) -> Mat,
{
    if !(t0 <= t1) || !t0.is_finite() || !t1.is_finite() {
        return Err(Error::config(format!("bad integration range [{t0}, {t1}]")));
    }
    if !(tol > 0.0) {
        return Err(Error::config("quadrature tolerance must be positive"));
    }
    let fa = f(t0);
    if t0 == t1 {
        return Ok(Mat::zeros(fa.nrows(), fa.ncols()));
    }
    let fb = f(t1);
    let mid = 0.5 * (t0 + t1);
    let fm = f(mid);
    let whole = simpson(t0, t1, &fa, &fm, &fb);

    let mut q = Quad {
        f: &f,
        evals: 3,
        max_evals,
        bound: 0.0,
        exhausted: false,
    };
    let est = q.recurse(t0, t1, fa, fm, fb, whole, tol, 0);
    if est.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical {
            message: "integrand produced non-finite values".into(),
            residual: f64::NAN,
        });
    }
    if q.exhausted {
        return Err(Error::Quadrature {
            estimate: Box::new(est),
            bound: q.bound,
            evaluations: q.evals,
        });
    }
    Ok(est)
}

fn simpson(a: f64, b: f64, fa: &Mat, fm: &Mat, fb: &Mat) -> Mat {
    (fa + fm * 4.0 + fb) * ((b - a) / 6.0)
}

struct Quad<'a, F> {
    f: &'a F,
    evals: usize,
    max_evals: usize,
    bound: f64,
    exhausted: bool,
}

impl<F: Fn(f64) -> Mat> Quad<'_, F> {
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        &mut self,
        a: f64,
        b: f64,
        fa: Mat,
        fm: Mat,
        fb: Mat,
        whole: Mat,
        tol: f64,
        depth: usize,
    ) -> Mat {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = (self.f)(lm);
        let frm = (self.f)(rm);
        self.evals += 2;
        let left = simpson(a, m, &fa, &flm, &fm);
        let right = simpson(m, b, &fm, &frm, &fb);
        let both = &left + &right;
        let diff = (&both - &whole).amax();
        if diff <= 15.0 * tol || depth >= 60 || self.evals >= self.max_evals {
            if diff > 15.0 * tol {
                self.exhausted = true;
                self.bound += diff / 15.0;
            }
            // Richardson correction.
            return &both + (&both - &whole) / 15.0;
        }
        let l = self.recurse(a, m, fa, flm, fm.clone(), left, 0.5 * tol, depth + 1);
        let r = self.recurse(m, b, fm, frm, fb, right, 0.5 * tol, depth + 1);
        l + r
    }
}

/// Serde adapter writing a [`Mat`] as a list of rows.
pub mod mat_rows {
    use super::*;

    pub fn serialize<S: Serializer>(m: &Mat, s: S) -> std::result::Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Mat, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        from_rows(&rows).map_err(serde::de::Error::custom)
    }

    /// `Option<Mat>` variant.
    pub mod opt {
        use super::*;

        pub fn serialize<S: Serializer>(m: &Option<Mat>, s: S) -> std::result::Result<S::Ok, S::Error> {
            match m {
                Some(m) => super::serialize(m, s),
                None => s.serialize_none(),
            }
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(
            d: D,
        ) -> std::result::Result<Option<Mat>, D::Error> {
            let rows = Option::<Vec<Vec<f64>>>::deserialize(d)?;
            rows.map(|r| from_rows(&r).map_err(serde::de::Error::custom)).transpose()
        }
    }
}

/// Builds a matrix from equal-length rows.
pub fn from_rows(rows: &[Vec<f64>]) -> Result<Mat> {
    let nr = rows.len();
    let nc = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != nc) {
        return Err(Error::dim("matrix rows have unequal lengths"));
    }
    Ok(Mat::from_fn(nr, nc, |i, j| rows[i][j]))
}

pub fn to_rows(m: &Mat) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}
