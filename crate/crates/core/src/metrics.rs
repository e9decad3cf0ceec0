//! Phase-invariant evaluation: cosine similarity `|<x, xh>| / (|x| |xh|)`,
//! global-phase alignment and intensity scale recovery.

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;
use crate::sensing::{forward, ComplexImage, SensingOperator};

/// Norm floor below which a vector is treated as zero.
pub const NORM_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityScore<T> {
    pub value: T,
    /// Set when either input had a norm below [`NORM_EPS`]; `value` is then 0.
    pub degenerate: bool,
}

/// `<x, y> = sum conj(x_k) y_k`.
pub fn inner<T: Scalar>(x: &[Complex<T>], y: &[Complex<T>]) -> Complex<T> {
    let mut re = T::zero();
    let mut im = T::zero();
    for (a, b) in x.iter().zip(y) {
        re += a.re * b.re + a.im * b.im;
        im += a.re * b.im - a.im * b.re;
    }
    Complex::new(re, im)
}

fn norm<T: Scalar>(x: &[Complex<T>]) -> T {
    x.iter().map(|v| v.norm_sqr()).sum::<T>().sqrt()
}

/// Slice-level similarity; returns a flagged zero on degenerate input.
pub fn cosine_similarity_slice<T: Scalar>(x: &[Complex<T>], xh: &[Complex<T>]) -> SimilarityScore<T> {
    let (nx, nh) = (norm(x), norm(xh));
    let eps = T::lit(NORM_EPS);
    if nx < eps || nh < eps {
        return SimilarityScore { value: T::zero(), degenerate: true };
    }
    let v = inner(x, xh).norm() / (nx * nh);
    // rounding can push |<x,x>| / |x|^2 a hair above 1
    SimilarityScore { value: v.min(T::one()), degenerate: false }
}

pub fn cosine_similarity<T: Scalar>(x: &ComplexImage<T>, xh: &ComplexImage<T>) -> Result<SimilarityScore<T>> {
    if x.len() != xh.len() {
        return Err(shape_err(x.len(), xh.len()));
    }
    Ok(cosine_similarity_slice(x.values(), xh.values()))
}

/// Evaluation-mode similarity: degenerate inputs are an error instead of a flagged zero.
pub fn cosine_similarity_strict<T: Scalar>(x: &ComplexImage<T>, xh: &ComplexImage<T>) -> Result<T> {
    let s = cosine_similarity(x, xh)?;
    if s.degenerate {
        return Err(Error::Degenerate("cosine similarity of a (near-)zero vector".into()));
    }
    Ok(s.value)
}

/// Similarity together with its gradients with respect to both arguments.
///
/// Gradients are zero for degenerate inputs, and the `|<x,xh>|` term
/// contributes nothing where the inner product vanishes.
#[derive(Clone, Debug)]
pub struct SimilarityGrad<T> {
    pub score: SimilarityScore<T>,
    pub grad_x: Vec<Complex<T>>,
    pub grad_xh: Vec<Complex<T>>,
}

pub fn cosine_similarity_grad<T: Scalar>(x: &[Complex<T>], xh: &[Complex<T>]) -> SimilarityGrad<T> {
    let zero = Complex::new(T::zero(), T::zero());
    let (nx, nh) = (norm(x), norm(xh));
    let eps = T::lit(NORM_EPS);
    if nx < eps || nh < eps {
        return SimilarityGrad {
            score: SimilarityScore { value: T::zero(), degenerate: true },
            grad_x: vec![zero; x.len()],
            grad_xh: vec![zero; xh.len()],
        };
    }
    let c = inner(x, xh);
    let cabs = c.norm();
    let denom = nx * nh;
    let cs = cabs / denom;
    // d|c|/dxh = c x / |c|,  d|c|/dx = conj(c) xh / |c|
    let unit = if cabs > T::zero() { c / cabs } else { zero };
    let inv_denom = T::one() / denom;
    let kx = cs / (nx * nx);
    let kh = cs / (nh * nh);
    let grad_xh = x
        .iter()
        .zip(xh)
        .map(|(xk, hk)| unit * xk * inv_denom - hk * kh)
        .collect();
    let grad_x = x
        .iter()
        .zip(xh)
        .map(|(xk, hk)| unit.conj() * hk * inv_denom - xk * kx)
        .collect();
    SimilarityGrad { score: SimilarityScore { value: cs, degenerate: false }, grad_x, grad_xh }
}

/// Rotates `xh` by `exp(-i arg<reference, xh>)` so that it lines up with `reference`.
///
/// Returns `(aligned, ok)`; when the inner product is zero the angle is
/// undefined and `xh` comes back unchanged with `ok == false`.
pub fn align_global_phase<T: Scalar>(
    reference: &ComplexImage<T>,
    xh: &ComplexImage<T>,
) -> Result<(ComplexImage<T>, bool)> {
    if reference.len() != xh.len() {
        return Err(shape_err(reference.len(), xh.len()));
    }
    let c = inner(reference.values(), xh.values());
    let mag = c.norm();
    if mag == T::zero() || !mag.is_finite() {
        return Ok((xh.clone(), false));
    }
    Ok((xh.scaled(c.conj() / mag), true))
}

/// Least-squares `r` with `|A xh|^2 ≈ r^2 y`: `r = sqrt(<yh, y> / <y, y>)`.
pub fn recover_scale<T: Scalar>(y: &[T], xh: &ComplexImage<T>, op: &SensingOperator<T>) -> Result<T> {
    op.check_measurement(y.len())?;
    let yh = forward(op, xh)?;
    let yy: T = y.iter().map(|v| *v * *v).sum();
    let yhy: T = yh.iter().zip(y).map(|(a, b)| *a * *b).sum();
    if yy == T::zero() || yhy <= T::zero() {
        return Err(Error::Degenerate("scale recovery needs nonzero measurements and predictions".into()));
    }
    Ok((yhy / yy).sqrt())
}
