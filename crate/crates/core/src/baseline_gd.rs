//! Per-sample reconstruction by fixed-step gradient descent on the
//! measurement residual, with best-of restarts.

use num_complex::Complex;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::losses::{mc_residual, McVariant};
use crate::reconstructor::backproject;
use crate::scalar::Scalar;
use crate::sensing::{intensity_vjp, ComplexImage, SensingOperator};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GdInit {
    /// First restart from `A^H sqrt(y)`, the rest random.
    #[default]
    Backprojection,
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GdConfig {
    pub steps: usize,
    pub step_size: f64,
    pub init: GdInit,
    pub restarts: usize,
    pub seed: u64,
    #[serde(default)]
    pub objective: McVariant,
}

impl Default for GdConfig {
    /// Calibrated on oversampled (m = 4n) complex Gaussian problems.
    fn default() -> Self {
        Self { steps: 2000, step_size: 0.3, init: GdInit::Backprojection, restarts: 5, seed: 0, objective: McVariant::Amplitude }
    }
}

impl GdConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.restarts == 0 {
            return Err(invalid("gradient descent needs at least one step and one restart"));
        }
        if !(self.step_size > 0.0) || !self.step_size.is_finite() {
            return Err(invalid("step size must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GdSolution<T> {
    pub image: ComplexImage<T>,
    pub objective: T,
    pub initial_objective: T,
    /// Index of the winning restart.
    pub restart: usize,
}

/// Residual objective at `x`.
pub fn objective<T: Scalar>(variant: McVariant, y: &[T], op: &SensingOperator<T>, x: &[Complex<T>]) -> T {
    let yh: Vec<T> = op.apply_slice(x).iter().map(|z| z.norm_sqr()).collect();
    mc_residual(variant, y, &yh)
}

/// Objective and its gradient at `x`.
pub fn objective_grad<T: Scalar>(
    variant: McVariant,
    y: &[T],
    op: &SensingOperator<T>,
    x: &[Complex<T>],
) -> (T, Vec<Complex<T>>) {
    let z = op.apply_slice(x);
    let two = T::lit(2.0);
    let mut value = T::zero();
    let gyh: Vec<T> = y
        .iter()
        .zip(&z)
        .map(|(&yj, zj)| match variant {
            McVariant::Intensity => {
                let d = zj.norm_sqr() - yj;
                value += d * d;
                two * d
            }
            McVariant::Amplitude => {
                let r = zj.norm();
                let d = r - yj.max(T::zero()).sqrt();
                value += d * d;
                if r > T::zero() {
                    d / r
                } else {
                    T::zero()
                }
            }
        })
        .collect();
    (value, intensity_vjp(op, &z, &gyh))
}

/// Descends from `init` for `steps` iterations; returns the best iterate seen
/// and its objective along with the starting objective.
pub fn descend<T: Scalar>(
    y: &[T],
    op: &SensingOperator<T>,
    init: &ComplexImage<T>,
    steps: usize,
    step_size: f64,
    variant: McVariant,
) -> Result<(ComplexImage<T>, T, T)> {
    op.check_measurement(y.len())?;
    op.check_image(init)?;
    // intensity gradients scale with the signal energy; normalize by mean(y)
    let step = match variant {
        McVariant::Amplitude => T::lit(step_size),
        McVariant::Intensity => {
            let mean = y.iter().copied().sum::<T>() / T::lit(y.len() as f64);
            if mean > T::zero() {
                T::lit(step_size) / (T::lit(2.0) * mean)
            } else {
                T::lit(step_size)
            }
        }
    };
    let mut x = init.values().to_vec();
    let mut best = x.clone();
    let (mut value, mut grad) = objective_grad(variant, y, op, &x);
    let initial = value;
    let mut best_value = value;
    for _ in 0..steps {
        for (xi, gi) in x.iter_mut().zip(&grad) {
            *xi = *xi - gi * step;
        }
        (value, grad) = objective_grad(variant, y, op, &x);
        if !value.is_finite() {
            break;
        }
        if value < best_value {
            best_value = value;
            best.copy_from_slice(&x);
        }
    }
    Ok((ComplexImage::from_raw(best, op.height(), op.width()), best_value, initial))
}

fn random_init<T: Scalar>(y: &[T], op: &SensingOperator<T>, rng: &mut ChaCha8Rng) -> ComplexImage<T> {
    // E sum(y) = ||x||^2 for the Gaussian operator
    let energy: f64 = y.iter().map(|v| v.to_f64_lossy()).sum();
    let raw: Vec<(f64, f64)> = (0..op.n())
        .map(|_| (StandardNormal.sample(&mut *rng), StandardNormal.sample(&mut *rng)))
        .collect();
    let norm = raw.iter().map(|(a, b)| a * a + b * b).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    let k = energy.max(0.0).sqrt() / norm;
    ComplexImage::from_raw(
        raw.iter().map(|(a, b)| Complex::new(T::lit(a * k), T::lit(b * k))).collect(),
        op.height(),
        op.width(),
    )
}

/// Best-of-`restarts` gradient descent on the residual objective.
pub fn solve<T: Scalar>(y: &[T], op: &SensingOperator<T>, cfg: &GdConfig) -> Result<GdSolution<T>> {
    cfg.validate()?;
    op.check_measurement(y.len())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<GdSolution<T>> = None;
    for r in 0..cfg.restarts {
        let init = match (r, cfg.init) {
            (0, GdInit::Backprojection) => backproject(y, op)?,
            _ => random_init(y, op, &mut rng),
        };
        let (image, objective, initial_objective) = descend(y, op, &init, cfg.steps, cfg.step_size, cfg.objective)?;
        if best.as_ref().is_none_or(|b| objective < b.objective) {
            best = Some(GdSolution { image, objective, initial_objective, restart: r });
        }
    }
    Ok(best.expect("at least one restart"))
}
