//! Dense complex helpers: counted products and Hermitian factorizations.
//!
//! Products go through [`mm`] so that callers with an enabled
//! [`FlopCounter`](crate::FlopCounter) get multiply-accumulate counts. Every
//! inverse in the crate is a Hermitian solve via [`solve_hermitian`], which
//! retries once with a small relative ridge before giving up.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::telemetry::Telemetry;
use crate::{Error, Result};

pub type C64 = Complex64;
pub type CMat = DMatrix<C64>;
pub type RMat = DMatrix<f64>;

/// Relative diagonal loading used when a Cholesky factorization fails.
pub const RIDGE: f64 = 1e-12;

#[inline]
pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// `a * b`, counting `rows(a) * cols(a) * cols(b)` complex MACs.
pub fn mm(a: &CMat, b: &CMat, tel: &mut Telemetry, module: &'static str, op: &'static str) -> CMat {
    tel.flops
        .add(module, op, (a.nrows() * a.ncols() * b.ncols()) as u64);
    a * b
}

/// `(m + mᴴ) / 2`.
pub fn hermitian_part(m: &CMat) -> CMat {
    let mut out = m + m.adjoint();
    out.iter_mut().for_each(|z| *z *= 0.5);
    out
}

pub fn trace(m: &CMat) -> C64 {
    m.diagonal().iter().sum()
}

/// `Σ |m_ij|²`.
pub fn frob_sq(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum()
}

pub fn frob(m: &CMat) -> f64 {
    frob_sq(m).sqrt()
}

/// `‖a − b‖_F / ‖b‖_F`, or the absolute difference when `b` vanishes.
pub fn rel_err(a: &CMat, b: &CMat) -> f64 {
    let diff = frob(&(a - b));
    let scale = frob(b);
    if scale > 0.0 {
        diff / scale
    } else {
        diff
    }
}

pub fn identity(n: usize) -> CMat {
    CMat::identity(n, n)
}

pub fn zeros(r: usize, c: usize) -> CMat {
    CMat::zeros(r, c)
}

/// Largest absolute deviation from Hermitian symmetry, relative to the
/// largest entry.
pub fn hermitian_defect(m: &CMat) -> f64 {
    let scale = m.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let defect = (m - m.adjoint())
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max);
    if scale > 0.0 {
        defect / scale
    } else {
        defect
    }
}

/// Lower Cholesky factor `L` with `A = L Lᴴ`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    l: CMat,
}

impl Cholesky {
    /// Factor the Hermitian part of `a` (only the lower triangle is read).
    /// Returns `None` if a pivot is not strictly positive and finite.
    pub fn factor(a: &CMat, tel: &mut Telemetry, module: &'static str) -> Option<Self> {
        let n = a.nrows();
        debug_assert_eq!(n, a.ncols());
        let mut l = CMat::zeros(n, n);
        let mut macs = 0u64;
        for j in 0..n {
            let mut d = a[(j, j)].re;
            for k in 0..j {
                d -= l[(j, k)].norm_sqr();
            }
            macs += j as u64;
            if !(d > 0.0) || !d.is_finite() {
                tel.flops.add(module, "cholesky", macs);
                return None;
            }
            let ljj = d.sqrt();
            l[(j, j)] = c(ljj, 0.0);
            for i in (j + 1)..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)].conj();
                }
                l[(i, j)] = s / ljj;
            }
            macs += ((n - j - 1) * j) as u64;
        }
        tel.flops.add(module, "cholesky", macs);
        Some(Self { l })
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    /// Solve `A X = B`.
    pub fn solve(&self, b: &CMat, tel: &mut Telemetry, module: &'static str) -> CMat {
        let n = self.dim();
        let mut x = b.clone();
        for col in 0..x.ncols() {
            // forward: L y = b
            for i in 0..n {
                let mut s = x[(i, col)];
                for k in 0..i {
                    s -= self.l[(i, k)] * x[(k, col)];
                }
                x[(i, col)] = s / self.l[(i, i)].re;
            }
            // backward: Lᴴ x = y
            for i in (0..n).rev() {
                let mut s = x[(i, col)];
                for k in (i + 1)..n {
                    s -= self.l[(k, i)].conj() * x[(k, col)];
                }
                x[(i, col)] = s / self.l[(i, i)].re;
            }
        }
        tel.flops
            .add(module, "triangular_solve", (n * n * b.ncols()) as u64);
        x
    }

    /// Natural log-determinant of `A`.
    pub fn ln_det(&self) -> f64 {
        2.0 * self.l.diagonal().iter().map(|d| d.re.ln()).sum::<f64>()
    }
}

/// Factor a Hermitian positive definite matrix, falling back to a ridge of
/// `RIDGE * mean|diag|` once. The fallback is counted in `tel`.
pub fn factor_hermitian(
    a: &CMat,
    tel: &mut Telemetry,
    module: &'static str,
    what: &str,
) -> Result<Cholesky> {
    if a.nrows() != a.ncols() {
        return Err(Error::Shape(format!(
            "{what}: {}x{} is not square",
            a.nrows(),
            a.ncols()
        )));
    }
    if let Some(ch) = Cholesky::factor(a, tel, module) {
        return Ok(ch);
    }
    let n = a.nrows();
    let scale = a.diagonal().iter().map(|z| z.re.abs()).sum::<f64>() / n.max(1) as f64;
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::Degenerate(format!(
            "{what}: zero or non-finite diagonal"
        )));
    }
    let mut loaded = a.clone();
    for i in 0..n {
        loaded[(i, i)] += c(RIDGE * scale, 0.0);
    }
    tel.ridge_activations += 1;
    Cholesky::factor(&loaded, tel, module)
        .ok_or_else(|| Error::NotPositiveDefinite(what.to_string()))
}

/// Solve `A X = B` for Hermitian positive definite `A`.
pub fn solve_hermitian(
    a: &CMat,
    b: &CMat,
    tel: &mut Telemetry,
    module: &'static str,
    what: &str,
) -> Result<CMat> {
    if b.nrows() != a.nrows() {
        return Err(Error::Shape(format!(
            "{what}: rhs has {} rows, matrix is {}x{}",
            b.nrows(),
            a.nrows(),
            a.ncols()
        )));
    }
    let ch = factor_hermitian(a, tel, module, what)?;
    Ok(ch.solve(b, tel, module))
}

/// Inverse of a Hermitian positive definite matrix.
pub fn inv_hermitian(
    a: &CMat,
    tel: &mut Telemetry,
    module: &'static str,
    what: &str,
) -> Result<CMat> {
    let id = identity(a.nrows());
    let x = solve_hermitian(a, &id, tel, module, what)?;
    Ok(hermitian_part(&x))
}
