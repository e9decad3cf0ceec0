//! Training objectives and their parameter gradients.
//!
//! Every loss is reduced with a mean over samples (and over sampled shifts
//! for the equivariance term). A sample's consistency residual is the mean
//! square over its `m` measurement components, which keeps it on the same
//! order as the similarity term for any sampling ratio.

use num_complex::Complex;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::group_actions::{sample_shifts, ShiftTransform};
use crate::metrics::{cosine_similarity_grad, cosine_similarity_slice};
use crate::reconstructor::Reconstructor;
use crate::scalar::Scalar;
use crate::sensing::{intensity_vjp, MeasurementBatch, SensingOperator};

/// Measurement-consistency residual: on intensities `y` or amplitudes `sqrt(y)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum McVariant {
    Intensity,
    #[default]
    Amplitude,
}

impl std::str::FromStr for McVariant {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "intensity" => Ok(McVariant::Intensity),
            "amplitude" => Ok(McVariant::Amplitude),
            _ => Err(invalid(format!("unknown residual '{s}' (expected intensity or amplitude)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossValue<T> {
    pub total: T,
    pub mc: Option<T>,
    pub ei: Option<T>,
    /// Similarity terms that hit the zero-norm guard and contributed 0.
    pub degenerate_terms: usize,
}

/// What to optimize.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Objective {
    Mc(McVariant),
    Ei { shifts_per_image: usize },
    /// `mc + lambda * ei`.
    Total { variant: McVariant, lambda: f64, shifts_per_image: usize },
    /// `-mean CS(x_i, f(y_i))`; needs ground truth.
    Supervised,
}

/// `||y - yh||^2` or `||sqrt(y) - sqrt(yh)||^2`.
pub fn mc_residual<T: Scalar>(variant: McVariant, y: &[T], yh: &[T]) -> T {
    match variant {
        McVariant::Intensity => y.iter().zip(yh).map(|(&a, &b)| (a - b) * (a - b)).sum(),
        McVariant::Amplitude => y
            .iter()
            .zip(yh)
            .map(|(&a, &b)| {
                let d = a.max(T::zero()).sqrt() - b.max(T::zero()).sqrt();
                d * d
            })
            .sum(),
    }
}

/// Gradient of [`mc_residual`] w.r.t. the complex image, given `z = A x`.
fn mc_image_grad<T: Scalar>(variant: McVariant, op: &SensingOperator<T>, y: &[T], z: &[Complex<T>], scale: T) -> Vec<Complex<T>> {
    let two = T::lit(2.0);
    // d residual / d yh_j, then chained through yh = |z|^2
    let gyh: Vec<T> = match variant {
        McVariant::Intensity => y.iter().zip(z).map(|(&a, zj)| two * (zj.norm_sqr() - a) * scale).collect(),
        McVariant::Amplitude => y
            .iter()
            .zip(z)
            .map(|(&a, zj)| {
                let r = zj.norm();
                if r > T::zero() {
                    (r - a.max(T::zero()).sqrt()) / r * scale
                } else {
                    T::zero()
                }
            })
            .collect(),
    };
    intensity_vjp(op, z, &gyh)
}

fn check_batch<T: Scalar>(batch: &MeasurementBatch<T>, op: &SensingOperator<T>) -> Result<()> {
    if batch.is_empty() {
        return Err(invalid("loss needs a nonempty batch"));
    }
    for y in batch.measurements() {
        op.check_measurement(y.len())?;
        if y.iter().any(|v| *v < T::zero()) {
            return Err(invalid("negative measurement entry"));
        }
    }
    Ok(())
}

/// Evaluates `objective` on `batch`; with `want_grad` also returns `dL/dθ`.
///
/// Shifts for the equivariance term are drawn from `rng` in sample order,
/// `shifts_per_image` at a time, so two calls with equally seeded generators
/// see the same transforms.
pub fn evaluate_objective<T, R, G>(
    objective: Objective,
    batch: &MeasurementBatch<T>,
    f: &R,
    op: &SensingOperator<T>,
    rng: &mut G,
    want_grad: bool,
) -> Result<(LossValue<T>, Option<Vec<T>>)>
where
    T: Scalar,
    R: Reconstructor<T> + ?Sized,
    G: Rng + ?Sized,
{
    check_batch(batch, op)?;
    let (mc_variant, ei_shifts, lambda) = match objective {
        Objective::Mc(v) => (Some(v), None, T::zero()),
        Objective::Ei { shifts_per_image } => (None, Some(shifts_per_image), T::one()),
        Objective::Total { variant, lambda, shifts_per_image } => {
            if !(lambda >= 0.0) || !lambda.is_finite() {
                return Err(invalid(format!("lambda must be finite and nonnegative, got {lambda}")));
            }
            (Some(variant), Some(shifts_per_image), T::lit(lambda))
        }
        Objective::Supervised => return supervised(batch, f, op, want_grad),
    };
    if ei_shifts == Some(0) {
        return Err(invalid("shifts_per_image must be at least 1"));
    }

    let b = batch.len();
    let inv_b = T::one() / T::lit(b as f64);
    let ys: Vec<&[T]> = batch.measurements().iter().map(Vec::as_slice).collect();
    let (xhat, tape0) = f.forward_batch(&ys, op)?;
    let zero = Complex::new(T::zero(), T::zero());
    let mut gx: Vec<Vec<Complex<T>>> = xhat.iter().map(|x| vec![zero; x.len()]).collect();
    let mut value = LossValue { total: T::zero(), mc: None, ei: None, degenerate_terms: 0 };

    if let Some(variant) = mc_variant {
        let inv_m = T::one() / T::lit(op.m() as f64);
        let mut acc = T::zero();
        for ((y, x), g) in ys.iter().zip(&xhat).zip(gx.iter_mut()) {
            let z = op.apply_slice(x.values());
            let yh: Vec<T> = z.iter().map(|v| v.norm_sqr()).collect();
            acc += mc_residual(variant, y, &yh);
            if want_grad {
                *g = mc_image_grad(variant, op, y, &z, inv_b * inv_m);
            }
        }
        value.mc = Some(acc * inv_b * inv_m);
    }

    let mut grads = want_grad.then(|| vec![T::zero(); f.num_params()]);

    if let Some(s) = ei_shifts {
        let (h, w) = (op.height(), op.width());
        let mut pairs: Vec<(usize, ShiftTransform)> = Vec::with_capacity(b * s);
        for i in 0..b {
            for g in sample_shifts(s, h, w, rng)? {
                pairs.push((i, g));
            }
        }
        let x1: Vec<Vec<Complex<T>>> = pairs.iter().map(|(i, g)| g.apply_slice(xhat[*i].values())).collect();
        let z1: Vec<Vec<Complex<T>>> = x1.iter().map(|x| op.apply_slice(x)).collect();
        let y2: Vec<Vec<T>> = z1.iter().map(|z| z.iter().map(|v| v.norm_sqr()).collect()).collect();
        let y2s: Vec<&[T]> = y2.iter().map(Vec::as_slice).collect();
        let (x2, tape2) = f.forward_batch(&y2s, op)?;

        let weight = T::one() / T::lit((b * s) as f64);
        let mut acc = T::zero();
        let mut g_x1 = Vec::with_capacity(pairs.len());
        let mut g_x2 = Vec::with_capacity(pairs.len());
        for (a, bb) in x1.iter().zip(&x2) {
            if want_grad {
                let sg = cosine_similarity_grad(a, bb.values());
                if sg.score.degenerate {
                    value.degenerate_terms += 1;
                }
                acc += sg.score.value;
                let k = -lambda * weight;
                g_x1.push(sg.grad_x.iter().map(|v| v * k).collect::<Vec<_>>());
                g_x2.push(sg.grad_xh.iter().map(|v| v * k).collect::<Vec<_>>());
            } else {
                let sc = cosine_similarity_slice(a, bb.values());
                if sc.degenerate {
                    value.degenerate_terms += 1;
                }
                acc += sc.value;
            }
        }
        value.ei = Some(-acc * weight);

        if let Some(grads) = grads.as_mut() {
            let gy2 = f
                .backward_batch(tape2, &g_x2, op, grads, true)
                .expect("input gradient was requested");
            for (p, ((i, g), gxa)) in pairs.iter().zip(g_x1.iter_mut()).enumerate() {
                // the remeasured branch feeds back into x1 = T_g xhat
                for (dst, v) in gxa.iter_mut().zip(intensity_vjp(op, &z1[p], &gy2[p])) {
                    *dst += v;
                }
                for (dst, v) in gx[*i].iter_mut().zip(g.inverse().apply_slice(gxa)) {
                    *dst += v;
                }
            }
        }
    }

    if let Some(grads) = grads.as_mut() {
        f.backward_batch(tape0, &gx, op, grads, false);
    }
    value.total = value.mc.unwrap_or(T::zero()) + lambda * value.ei.unwrap_or(T::zero());
    if matches!(objective, Objective::Ei { .. }) {
        value.total = value.ei.unwrap_or(T::zero());
    }
    Ok((value, grads))
}

fn supervised<T, R>(
    batch: &MeasurementBatch<T>,
    f: &R,
    op: &SensingOperator<T>,
    want_grad: bool,
) -> Result<(LossValue<T>, Option<Vec<T>>)>
where
    T: Scalar,
    R: Reconstructor<T> + ?Sized,
{
    let truths = batch
        .truths()
        .ok_or_else(|| invalid("supervised loss needs ground-truth images"))?;
    let ys: Vec<&[T]> = batch.measurements().iter().map(Vec::as_slice).collect();
    let (xhat, tape) = f.forward_batch(&ys, op)?;
    let inv_b = T::one() / T::lit(batch.len() as f64);
    let mut acc = T::zero();
    let mut degenerate = 0;
    let mut gx = Vec::with_capacity(xhat.len());
    for (t, x) in truths.iter().zip(&xhat) {
        let sg = cosine_similarity_grad(t.values(), x.values());
        degenerate += sg.score.degenerate as usize;
        acc += sg.score.value;
        gx.push(sg.grad_xh.iter().map(|v| v * -inv_b).collect::<Vec<_>>());
    }
    let grads = want_grad.then(|| {
        let mut g = vec![T::zero(); f.num_params()];
        f.backward_batch(tape, &gx, op, &mut g, false);
        g
    });
    let total = -acc * inv_b;
    Ok((LossValue { total, mc: None, ei: None, degenerate_terms: degenerate }, grads))
}

// consistency-only objectives never draw shifts
fn unused_rng() -> rand_chacha::ChaCha8Rng {
    rand::SeedableRng::seed_from_u64(0)
}

/// `mean_i ||y_i - |A f(y_i)|^2||^2 / m`.
pub fn loss_mc_intensity<T: Scalar, R: Reconstructor<T> + ?Sized>(
    batch: &MeasurementBatch<T>,
    f: &R,
    op: &SensingOperator<T>,
) -> Result<LossValue<T>> {
    let mut rng = unused_rng();
    Ok(evaluate_objective(Objective::Mc(McVariant::Intensity), batch, f, op, &mut rng, false)?.0)
}

/// `mean_i ||sqrt(y_i) - |A f(y_i)|||^2 / m`.
pub fn loss_mc_amplitude<T: Scalar, R: Reconstructor<T> + ?Sized>(
    batch: &MeasurementBatch<T>,
    f: &R,
    op: &SensingOperator<T>,
) -> Result<LossValue<T>> {
    let mut rng = unused_rng();
    Ok(evaluate_objective(Objective::Mc(McVariant::Amplitude), batch, f, op, &mut rng, false)?.0)
}

/// `-mean_{i,g} CS(T_g f(y_i), f(|A T_g f(y_i)|^2))` over freshly drawn shifts.
pub fn loss_ei<T: Scalar, R: Reconstructor<T> + ?Sized, G: Rng + ?Sized>(
    batch: &MeasurementBatch<T>,
    f: &R,
    op: &SensingOperator<T>,
    shifts_per_image: usize,
    rng: &mut G,
) -> Result<LossValue<T>> {
    Ok(evaluate_objective(Objective::Ei { shifts_per_image }, batch, f, op, rng, false)?.0)
}

/// `mc + lambda * ei`.
pub fn loss_total<T: Scalar, R: Reconstructor<T> + ?Sized, G: Rng + ?Sized>(
    batch: &MeasurementBatch<T>,
    f: &R,
    op: &SensingOperator<T>,
    lambda: f64,
    variant: McVariant,
    shifts_per_image: usize,
    rng: &mut G,
) -> Result<LossValue<T>> {
    let obj = Objective::Total { variant, lambda, shifts_per_image };
    Ok(evaluate_objective(obj, batch, f, op, rng, false)?.0)
}

/// `-mean_i CS(x_i, f(y_i))`.
pub fn loss_supervised<T: Scalar, R: Reconstructor<T> + ?Sized>(
    batch: &MeasurementBatch<T>,
    f: &R,
    op: &SensingOperator<T>,
) -> Result<LossValue<T>> {
    Ok(supervised(batch, f, op, false)?.0)
}
