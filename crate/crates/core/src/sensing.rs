//! Random complex Gaussian sensing operator, the intensity forward model
//! `y = |Ax|^2`, and synthesis of phase-encoded images `x = exp(i x0)`.

use num_complex::Complex;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Result};
use crate::scalar::Scalar;

/// Complex signal of `height * width` pixels stored row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComplexImage<T> {
    values: Vec<Complex<T>>,
    height: usize,
    width: usize,
}

impl<T: Scalar> ComplexImage<T> {
    pub fn new(values: Vec<Complex<T>>, height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(invalid(format!("image shape {height}x{width} must be positive")));
        }
        if values.len() != height * width {
            return Err(shape_err(format!("{} values for {height}x{width}", height * width), values.len()));
        }
        if values.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(invalid("image contains non-finite values"));
        }
        Ok(Self { values, height, width })
    }

    /// Skips the finiteness scan; used on hot paths where values come from
    /// arithmetic on already-validated inputs.
    pub(crate) fn from_raw(values: Vec<Complex<T>>, height: usize, width: usize) -> Self {
        debug_assert_eq!(values.len(), height * width);
        Self { values, height, width }
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::from_raw(vec![Complex::new(T::zero(), T::zero()); height * width], height, width)
    }

    pub fn values(&self) -> &[Complex<T>] {
        &self.values
    }

    pub fn into_values(self) -> Vec<Complex<T>> {
        self.values
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn norm_sqr(&self) -> T {
        self.values.iter().map(|v| v.norm_sqr()).sum()
    }

    pub fn norm(&self) -> T {
        self.norm_sqr().sqrt()
    }

    /// Multiplies every pixel by the same complex factor.
    pub fn scaled(&self, factor: Complex<T>) -> Self {
        Self::from_raw(self.values.iter().map(|v| v * factor).collect(), self.height, self.width)
    }

    pub fn phases(&self) -> Vec<T> {
        self.values.iter().map(|v| v.arg()).collect()
    }

    pub fn cast<U: Scalar>(&self) -> ComplexImage<U> {
        ComplexImage::from_raw(
            self.values
                .iter()
                .map(|v| Complex::new(U::lit(v.re.to_f64_lossy()), U::lit(v.im.to_f64_lossy())))
                .collect(),
            self.height,
            self.width,
        )
    }
}

/// Real-valued grayscale image, e.g. an MNIST digit scaled to `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RealImage<T> {
    values: Vec<T>,
    height: usize,
    width: usize,
}

impl<T: Scalar> RealImage<T> {
    pub fn new(values: Vec<T>, height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(invalid(format!("image shape {height}x{width} must be positive")));
        }
        if values.len() != height * width {
            return Err(shape_err(format!("{} values for {height}x{width}", height * width), values.len()));
        }
        Ok(Self { values, height, width })
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }
}

/// Dense complex `m x n` matrix `A`, the linear part of the forward model.
///
/// The operator also carries the 2D image shape so that `A^H v` can be
/// reshaped back into an image.
#[derive(Clone, Debug, PartialEq)]
pub struct SensingOperator<T> {
    matrix: Vec<Complex<T>>,
    m: usize,
    n: usize,
    height: usize,
    width: usize,
    seed: u64,
}

/// Draws a Gaussian operator for flat `n`-pixel signals (image shape `1 x n`).
pub fn make_operator<T: Scalar>(m: usize, n: usize, seed: u64) -> Result<SensingOperator<T>> {
    SensingOperator::gaussian(m, 1, n, seed)
}

impl<T: Scalar> SensingOperator<T> {
    /// Entries `a_kl ~ N(0, 1/2m) + i N(0, 1/2m)`, drawn from a ChaCha8 stream
    /// seeded with `seed` (row-major, real part then imaginary part).
    ///
    /// Draws happen in `f64` and are then rounded to `T`, so the `f32` and
    /// `f64` operators built from one seed agree to `f32` precision.
    pub fn gaussian(m: usize, height: usize, width: usize, seed: u64) -> Result<Self> {
        let n = height * width;
        if m == 0 || n == 0 {
            return Err(invalid(format!("operator dimensions must be positive (m={m}, n={n})")));
        }
        let std = (0.5 / m as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let matrix = (0..m * n)
            .map(|_| {
                let re: f64 = StandardNormal.sample(&mut rng);
                let im: f64 = StandardNormal.sample(&mut rng);
                Complex::new(T::lit(re * std), T::lit(im * std))
            })
            .collect();
        Ok(Self { matrix, m, n, height, width, seed })
    }

    /// Wraps an explicit row-major `m x (height*width)` matrix.
    pub fn from_matrix(matrix: Vec<Complex<T>>, m: usize, height: usize, width: usize) -> Result<Self> {
        let n = height * width;
        if m == 0 || n == 0 {
            return Err(invalid(format!("operator dimensions must be positive (m={m}, n={n})")));
        }
        if matrix.len() != m * n {
            return Err(shape_err(format!("{m}x{n} matrix"), format!("{} entries", matrix.len())));
        }
        Ok(Self { matrix, m, n, height, width, seed: 0 })
    }

    /// Reinterprets the image shape; `height * width` must equal `n`.
    pub fn with_shape(mut self, height: usize, width: usize) -> Result<Self> {
        if height * width != self.n {
            return Err(shape_err(format!("shape with {} pixels", self.n), format!("{height}x{width}")));
        }
        self.height = height;
        self.width = width;
        Ok(self)
    }

    pub(crate) fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn matrix(&self) -> &[Complex<T>] {
        &self.matrix
    }

    /// Sampling ratio `m / n`.
    pub fn alpha(&self) -> f64 {
        self.m as f64 / self.n as f64
    }

    pub(crate) fn check_image(&self, x: &ComplexImage<T>) -> Result<()> {
        if x.len() != self.n {
            return Err(shape_err(format!("image with {} pixels", self.n), x.len()));
        }
        Ok(())
    }

    pub(crate) fn check_measurement(&self, len: usize) -> Result<()> {
        if len != self.m {
            return Err(shape_err(format!("measurement of length {}", self.m), len));
        }
        Ok(())
    }

    /// `z = A x` on a raw slice of length `n`.
    pub fn apply_slice(&self, x: &[Complex<T>]) -> Vec<Complex<T>> {
        debug_assert_eq!(x.len(), self.n);
        self.matrix
            .chunks_exact(self.n)
            .map(|row| {
                let mut re = T::zero();
                let mut im = T::zero();
                for (a, v) in row.iter().zip(x) {
                    re += a.re * v.re - a.im * v.im;
                    im += a.re * v.im + a.im * v.re;
                }
                Complex::new(re, im)
            })
            .collect()
    }

    /// `A^H v` on a raw slice of length `m`.
    pub fn adjoint_slice(&self, v: &[Complex<T>]) -> Vec<Complex<T>> {
        debug_assert_eq!(v.len(), self.m);
        let mut out = vec![Complex::new(T::zero(), T::zero()); self.n];
        for (row, vj) in self.matrix.chunks_exact(self.n).zip(v) {
            for (o, a) in out.iter_mut().zip(row) {
                // conj(a) * vj
                o.re += a.re * vj.re + a.im * vj.im;
                o.im += a.re * vj.im - a.im * vj.re;
            }
        }
        out
    }

    /// `A^H v` for a real vector `v`.
    pub fn adjoint_real_slice(&self, v: &[T]) -> Vec<Complex<T>> {
        debug_assert_eq!(v.len(), self.m);
        let mut out = vec![Complex::new(T::zero(), T::zero()); self.n];
        for (row, &vj) in self.matrix.chunks_exact(self.n).zip(v) {
            for (o, a) in out.iter_mut().zip(row) {
                o.re += a.re * vj;
                o.im -= a.im * vj;
            }
        }
        out
    }

    /// `Re(A g)`: the vector-Jacobian product of `v -> A^H v` restricted to real `v`.
    pub(crate) fn adjoint_real_vjp(&self, g: &[Complex<T>]) -> Vec<T> {
        self.matrix
            .chunks_exact(self.n)
            .map(|row| row.iter().zip(g).map(|(a, gl)| a.re * gl.re - a.im * gl.im).sum())
            .collect()
    }

    /// Linear measurement `A x`.
    pub fn apply(&self, x: &ComplexImage<T>) -> Result<Vec<Complex<T>>> {
        self.check_image(x)?;
        Ok(self.apply_slice(x.values()))
    }
}

/// `y_j = |a_j^T x|^2`.
pub fn forward<T: Scalar>(op: &SensingOperator<T>, x: &ComplexImage<T>) -> Result<Vec<T>> {
    Ok(op.apply(x)?.iter().map(|z| z.norm_sqr()).collect())
}

/// Gradient of `sum_j gy_j |(Ax)_j|^2` with respect to `x`, given `z = A x`.
///
/// Complex gradients throughout the crate follow the convention
/// `g = dL/dRe(x) + i dL/dIm(x)`, so `dL = Re(conj(g) dx)`.
pub fn intensity_vjp<T: Scalar>(op: &SensingOperator<T>, z: &[Complex<T>], gy: &[T]) -> Vec<Complex<T>> {
    let two = T::lit(2.0);
    let weighted: Vec<Complex<T>> = z.iter().zip(gy).map(|(zj, &g)| zj * (two * g)).collect();
    op.adjoint_slice(&weighted)
}

/// `A^H v` reshaped to the operator's image shape.
pub fn adjoint<T: Scalar>(op: &SensingOperator<T>, v: &[Complex<T>]) -> Result<ComplexImage<T>> {
    op.check_measurement(v.len())?;
    Ok(ComplexImage::from_raw(op.adjoint_slice(v), op.height, op.width))
}

/// Phase encoding `x = exp(i x0)`; every output pixel has unit modulus.
pub fn synthesize_phase_image<T: Scalar>(x0: &RealImage<T>) -> Result<ComplexImage<T>> {
    if x0.values.iter().any(|v| !v.is_finite()) {
        return Err(invalid("phase image contains non-finite values"));
    }
    let values = x0.values.iter().map(|&p| Complex::new(p.cos(), p.sin())).collect();
    ComplexImage::new(values, x0.height, x0.width)
}

/// Intensity measurements, optionally paired with their ground-truth signals.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementBatch<T> {
    measurements: Vec<Vec<T>>,
    truths: Option<Vec<ComplexImage<T>>>,
}

impl<T: Scalar> MeasurementBatch<T> {
    pub fn new(measurements: Vec<Vec<T>>, truths: Option<Vec<ComplexImage<T>>>) -> Result<Self> {
        if let Some(first) = measurements.first() {
            if measurements.iter().any(|y| y.len() != first.len()) {
                return Err(invalid("measurement vectors have differing lengths"));
            }
        }
        for y in &measurements {
            if y.iter().any(|v| !(*v >= T::zero()) || !v.is_finite()) {
                return Err(invalid("measurements must be finite and nonnegative"));
            }
        }
        if let Some(t) = &truths {
            if t.len() != measurements.len() {
                return Err(shape_err(format!("{} truths", measurements.len()), t.len()));
            }
        }
        Ok(Self { measurements, truths })
    }

    pub fn measurements(&self) -> &[Vec<T>] {
        &self.measurements
    }

    pub fn truths(&self) -> Option<&[ComplexImage<T>]> {
        self.truths.as_deref()
    }

    pub fn len(&self) -> usize {
        self.measurements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.measurements.is_empty()
    }

    pub fn has_truths(&self) -> bool {
        self.truths.is_some()
    }

    /// The same measurements with ground truth dropped.
    pub fn without_truths(&self) -> Self {
        Self { measurements: self.measurements.clone(), truths: None }
    }

    /// Sub-batch in the given index order.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            measurements: indices.iter().map(|&i| self.measurements[i].clone()).collect(),
            truths: self.truths.as_ref().map(|t| indices.iter().map(|&i| t[i].clone()).collect()),
        }
    }

    pub fn into_parts(self) -> (Vec<Vec<T>>, Option<Vec<ComplexImage<T>>>) {
        (self.measurements, self.truths)
    }
}

/// Phase-encodes every image and measures it with `op`.
pub fn make_dataset<T: Scalar>(
    images: &[RealImage<T>],
    op: &SensingOperator<T>,
    keep_truth: bool,
) -> Result<MeasurementBatch<T>> {
    if images.is_empty() {
        return Err(invalid("cannot build a dataset from an empty corpus"));
    }
    let mut measurements = Vec::with_capacity(images.len());
    let mut truths = Vec::with_capacity(if keep_truth { images.len() } else { 0 });
    for img in images {
        if img.height != op.height || img.width != op.width {
            return Err(shape_err(
                format!("{}x{} image", op.height, op.width),
                format!("{}x{}", img.height, img.width),
            ));
        }
        let x = synthesize_phase_image(img)?;
        measurements.push(forward(op, &x)?);
        if keep_truth {
            truths.push(x);
        }
    }
    MeasurementBatch::new(measurements, keep_truth.then_some(truths))
}
