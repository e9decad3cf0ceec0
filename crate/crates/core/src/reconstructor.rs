//! The learned inverse map `f: y -> x`.
//!
//! Measurements enter image space through the fixed backprojection
//! `A^H sqrt(y)`; its real and imaginary parts are the two input planes of a
//! U-Net whose two output planes are recombined into a complex image.

use std::fs;
use std::io::Write;
use std::path::Path;

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::nn::{crop_planes, pad_planes, Act, UNet, UNetTape};
use crate::scalar::Scalar;
use crate::sensing::{ComplexImage, SensingOperator};

pub use crate::nn::ReconstructorConfig;

/// A differentiable batched map from measurement vectors to complex images.
///
/// `backward_batch` takes the gradients `dL/dx` of each output (complex
/// convention `dL/dRe + i dL/dIm`), accumulates `dL/dθ` into
/// `param_grads`, and when `need_input` is set returns `dL/dy` per sample.
pub trait Reconstructor<T: Scalar> {
    type Tape;

    fn num_params(&self) -> usize;

    fn forward_batch(&self, ys: &[&[T]], op: &SensingOperator<T>) -> Result<(Vec<ComplexImage<T>>, Self::Tape)>;

    fn backward_batch(
        &self,
        tape: Self::Tape,
        grads: &[Vec<Complex<T>>],
        op: &SensingOperator<T>,
        param_grads: &mut [T],
        need_input: bool,
    ) -> Option<Vec<Vec<T>>>;

    fn reconstruct(&self, y: &[T], op: &SensingOperator<T>) -> Result<ComplexImage<T>> {
        let (mut out, _) = self.forward_batch(&[y], op)?;
        Ok(out.pop().expect("one output per input"))
    }
}

impl<T: Scalar, R: Reconstructor<T> + ?Sized> Reconstructor<T> for &R {
    type Tape = R::Tape;

    fn num_params(&self) -> usize {
        (**self).num_params()
    }

    fn forward_batch(&self, ys: &[&[T]], op: &SensingOperator<T>) -> Result<(Vec<ComplexImage<T>>, Self::Tape)> {
        (**self).forward_batch(ys, op)
    }

    fn backward_batch(
        &self,
        tape: Self::Tape,
        grads: &[Vec<Complex<T>>],
        op: &SensingOperator<T>,
        param_grads: &mut [T],
        need_input: bool,
    ) -> Option<Vec<Vec<T>>> {
        (**self).backward_batch(tape, grads, op, param_grads, need_input)
    }
}

fn amplitudes<T: Scalar>(y: &[T]) -> Vec<T> {
    y.iter().map(|v| v.max(T::zero()).sqrt()).collect()
}

/// `dL/dy` from `dL/d(A^H sqrt(y))`; zero where `y` vanishes.
fn backproject_vjp<T: Scalar>(op: &SensingOperator<T>, amp: &[T], g: &[Complex<T>]) -> Vec<T> {
    let ds = op.adjoint_real_vjp(g);
    let half = T::lit(0.5);
    ds.iter()
        .zip(amp)
        .map(|(&d, &s)| if s > T::zero() { d * half / s } else { T::zero() })
        .collect()
}

/// `A^H sqrt(y)` shaped as an image.
pub fn backproject<T: Scalar>(y: &[T], op: &SensingOperator<T>) -> Result<ComplexImage<T>> {
    op.check_measurement(y.len())?;
    Ok(ComplexImage::from_raw(op.adjoint_real_slice(&amplitudes(y)), op.height(), op.width()))
}

/// Parameter-free reconstructor returning the backprojection itself.
///
/// With `A = I` it inverts the forward model on nonnegative real signals,
/// which makes it a convenient exact oracle.
#[derive(Clone, Copy, Debug, Default)]
pub struct Backprojection;

impl<T: Scalar> Reconstructor<T> for Backprojection {
    type Tape = Vec<Vec<T>>;

    fn num_params(&self) -> usize {
        0
    }

    fn forward_batch(&self, ys: &[&[T]], op: &SensingOperator<T>) -> Result<(Vec<ComplexImage<T>>, Self::Tape)> {
        let mut out = Vec::with_capacity(ys.len());
        let mut amps = Vec::with_capacity(ys.len());
        for y in ys {
            op.check_measurement(y.len())?;
            let a = amplitudes(y);
            out.push(ComplexImage::from_raw(op.adjoint_real_slice(&a), op.height(), op.width()));
            amps.push(a);
        }
        Ok((out, amps))
    }

    fn backward_batch(
        &self,
        tape: Self::Tape,
        grads: &[Vec<Complex<T>>],
        op: &SensingOperator<T>,
        _param_grads: &mut [T],
        need_input: bool,
    ) -> Option<Vec<Vec<T>>> {
        need_input.then(|| tape.iter().zip(grads).map(|(a, g)| backproject_vjp(op, a, g)).collect())
    }
}

/// Wraps a reconstructor and multiplies every output by `exp(i phase)`.
#[derive(Clone, Debug)]
pub struct PhaseRotated<R> {
    pub inner: R,
    pub phase: f64,
}

impl<T: Scalar, R: Reconstructor<T>> Reconstructor<T> for PhaseRotated<R> {
    type Tape = R::Tape;

    fn num_params(&self) -> usize {
        self.inner.num_params()
    }

    fn forward_batch(&self, ys: &[&[T]], op: &SensingOperator<T>) -> Result<(Vec<ComplexImage<T>>, Self::Tape)> {
        let rot = Complex::from_polar(T::one(), T::lit(self.phase));
        let (out, tape) = self.inner.forward_batch(ys, op)?;
        Ok((out.iter().map(|x| x.scaled(rot)).collect(), tape))
    }

    fn backward_batch(
        &self,
        tape: Self::Tape,
        grads: &[Vec<Complex<T>>],
        op: &SensingOperator<T>,
        param_grads: &mut [T],
        need_input: bool,
    ) -> Option<Vec<Vec<T>>> {
        let unrot = Complex::from_polar(T::one(), T::lit(-self.phase));
        let inner: Vec<Vec<Complex<T>>> = grads.iter().map(|g| g.iter().map(|v| v * unrot).collect()).collect();
        self.inner.backward_batch(tape, &inner, op, param_grads, need_input)
    }
}

pub struct UNetReconstructorTape<T> {
    net: UNetTape<T>,
    amps: Vec<Vec<T>>,
}

/// Backprojection front-end followed by a U-Net.
#[derive(Clone, Debug)]
pub struct UNetReconstructor<T> {
    net: UNet<T>,
}

impl<T: Scalar> UNetReconstructor<T> {
    pub fn new(cfg: ReconstructorConfig, seed: u64) -> Result<Self> {
        Ok(Self { net: UNet::init(cfg, seed)? })
    }

    pub fn from_params(cfg: ReconstructorConfig, params: Vec<T>) -> Result<Self> {
        Ok(Self { net: UNet::from_params(cfg, params)? })
    }

    pub fn config(&self) -> &ReconstructorConfig {
        self.net.config()
    }

    pub fn params(&self) -> &[T] {
        self.net.params()
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        self.net.params_mut()
    }

    fn check_operator(&self, op: &SensingOperator<T>) -> Result<()> {
        let cfg = self.net.config();
        if (op.height(), op.width()) != (cfg.image_height, cfg.image_width) {
            return Err(invalid(format!(
                "operator image shape {}x{} does not match model {}x{}",
                op.height(),
                op.width(),
                cfg.image_height,
                cfg.image_width
            )));
        }
        Ok(())
    }
}

impl<T: Scalar> Reconstructor<T> for UNetReconstructor<T> {
    type Tape = UNetReconstructorTape<T>;

    fn num_params(&self) -> usize {
        self.net.num_params()
    }

    fn forward_batch(&self, ys: &[&[T]], op: &SensingOperator<T>) -> Result<(Vec<ComplexImage<T>>, Self::Tape)> {
        self.check_operator(op)?;
        let cfg = self.net.config();
        let (h, w) = (cfg.image_height, cfg.image_width);
        let (hp, wp) = cfg.padded_shape();
        let (top, left) = cfg.padding();
        let b = ys.len();
        let n = h * w;
        let mut planes = Act::zeros(2, b, h, w);
        let mut amps = Vec::with_capacity(b);
        let mut bps = Vec::with_capacity(b);
        for (i, y) in ys.iter().enumerate() {
            op.check_measurement(y.len())?;
            let a = amplitudes(y);
            let bp = op.adjoint_real_slice(&a);
            for (k, v) in bp.iter().enumerate() {
                planes.data[i * n + k] = v.re;
                planes.data[(b + i) * n + k] = v.im;
            }
            amps.push(a);
            bps.push(bp);
        }
        let (out, tape) = self.net.forward(pad_planes(&planes, hp, wp, top, left));
        let out = crop_planes(&out, h, w, top, left);
        let images = bps
            .into_iter()
            .enumerate()
            .map(|(i, bp)| {
                let values = (0..n)
                    .map(|k| {
                        let v = Complex::new(out.data[i * n + k], out.data[(b + i) * n + k]);
                        if cfg.residual {
                            v + bp[k]
                        } else {
                            v
                        }
                    })
                    .collect();
                ComplexImage::from_raw(values, h, w)
            })
            .collect();
        Ok((images, UNetReconstructorTape { net: tape, amps }))
    }

    fn backward_batch(
        &self,
        tape: Self::Tape,
        grads: &[Vec<Complex<T>>],
        op: &SensingOperator<T>,
        param_grads: &mut [T],
        need_input: bool,
    ) -> Option<Vec<Vec<T>>> {
        let cfg = self.net.config();
        let (h, w) = (cfg.image_height, cfg.image_width);
        let (hp, wp) = cfg.padded_shape();
        let (top, left) = cfg.padding();
        let b = grads.len();
        let n = h * w;
        let mut g = Act::zeros(2, b, h, w);
        for (i, gi) in grads.iter().enumerate() {
            for (k, v) in gi.iter().enumerate() {
                g.data[i * n + k] = v.re;
                g.data[(b + i) * n + k] = v.im;
            }
        }
        let gin = self.net.backward(tape.net, &pad_planes(&g, hp, wp, top, left), param_grads, need_input)?;
        let gin = crop_planes(&gin, h, w, top, left);
        Some(
            (0..b)
                .map(|i| {
                    let gbp: Vec<Complex<T>> = (0..n)
                        .map(|k| {
                            let v = Complex::new(gin.data[i * n + k], gin.data[(b + i) * n + k]);
                            if cfg.residual {
                                v + grads[i][k]
                            } else {
                                v
                            }
                        })
                        .collect();
                    backproject_vjp(op, &tape.amps[i], &gbp)
                })
                .collect(),
        )
    }
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"EIPHCKPT";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    format: String,
    version: u32,
    dtype: String,
    config: ReconstructorConfig,
    manifest_digest: String,
    epoch: usize,
    num_params: usize,
}

/// Trained weights plus everything needed to rebuild and audit the model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelCheckpoint<T> {
    pub config: ReconstructorConfig,
    pub params: Vec<T>,
    /// Digest of the training configuration that produced the weights.
    pub manifest_digest: String,
    pub epoch: usize,
}

impl<T: Scalar> ModelCheckpoint<T> {
    pub fn from_model(model: &UNetReconstructor<T>, manifest_digest: &str, epoch: usize) -> Self {
        Self {
            config: model.config().clone(),
            params: model.params().to_vec(),
            manifest_digest: manifest_digest.to_string(),
            epoch,
        }
    }

    pub fn model(&self) -> Result<UNetReconstructor<T>> {
        UNetReconstructor::from_params(self.config.clone(), self.params.clone())
    }

    /// `magic | u32 version | u64 header length | JSON header | little-endian weights`.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&CheckpointHeader {
            format: "eiphase-checkpoint".into(),
            version: CHECKPOINT_VERSION,
            dtype: T::DTYPE.into(),
            config: self.config.clone(),
            manifest_digest: self.manifest_digest.clone(),
            epoch: self.epoch,
            num_params: self.params.len(),
        })?;
        let mut out = Vec::with_capacity(20 + header.len() + self.params.len() * std::mem::size_of::<T>());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&T::to_le_bytes_vec(&self.params));
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 20 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let body = bytes.get(20..20 + hlen).ok_or_else(|| Error::Format("truncated header".into()))?;
        let header: CheckpointHeader = serde_json::from_slice(body)?;
        if header.dtype != T::DTYPE {
            return Err(Error::Format(format!("checkpoint holds {} weights, expected {}", header.dtype, T::DTYPE)));
        }
        let width = std::mem::size_of::<T>();
        let payload = &bytes[20 + hlen..];
        if payload.len() != header.num_params * width {
            return Err(Error::Format("weight payload length mismatch".into()));
        }
        let params = payload.chunks_exact(width).map(T::from_le_chunk).collect();
        Ok(Self { config: header.config, params, manifest_digest: header.manifest_digest, epoch: header.epoch })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), &self.to_bytes()?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

/// Writes through a sibling temp file and renames it into place.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let tmp = path.with_extension(format!(
        "{}tmp{}",
        path.extension().map(|e| format!("{}.", e.to_string_lossy())).unwrap_or_default(),
        std::process::id()
    ));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sensing::{forward, make_operator};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn identity(n: usize, h: usize, w: usize) -> SensingOperator<f64> {
        let mut m = vec![Complex::new(0.0, 0.0); n * n];
        for i in 0..n {
            m[i * n + i] = Complex::new(1.0, 0.0);
        }
        SensingOperator::from_matrix(m, n, h, w).unwrap()
    }

    fn tiny() -> ReconstructorConfig {
        ReconstructorConfig { scales: 2, base_channels: 2, image_height: 3, image_width: 5, ..Default::default() }
    }

    #[test]
    fn backprojection_inverts_identity_on_positive_signals() {
        let op = identity(4, 2, 2);
        let x = ComplexImage::new([0.5, 1.0, 2.0, 3.0].iter().map(|&v| Complex::new(v, 0.0)).collect(), 2, 2).unwrap();
        let y = forward(&op, &x).unwrap();
        let bp = backproject(&y, &op).unwrap();
        assert_eq!((bp.height(), bp.width()), (2, 2));
        for (a, b) in bp.values().iter().zip(x.values()) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn backprojection_shape_and_homogeneity() {
        let op = SensingOperator::<f64>::gaussian(7, 3, 4, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let y: Vec<f64> = (0..7).map(|_| rng.random()).collect();
        let bp = backproject(&y, &op).unwrap();
        assert_eq!((bp.height(), bp.width()), (3, 4));
        let y4: Vec<f64> = y.iter().map(|v| 4.0 * v).collect();
        let bp4 = backproject(&y4, &op).unwrap();
        for (a, b) in bp4.values().iter().zip(bp.values()) {
            assert!((a - b * 2.0).norm() < 1e-12);
        }
        assert!(backproject(&y[..6], &op).is_err());
    }

    #[test]
    fn unet_output_shape_and_determinism() {
        let op = SensingOperator::<f32>::gaussian(50, 28, 28, 0).unwrap();
        let cfg = ReconstructorConfig { base_channels: 4, ..Default::default() };
        let model = UNetReconstructor::<f32>::new(cfg, 0).unwrap();
        let y: Vec<f32> = (0..50).map(|i| (i % 7) as f32 * 0.1).collect();
        let a = model.reconstruct(&y, &op).unwrap();
        let b = model.reconstruct(&y, &op).unwrap();
        assert_eq!((a.height(), a.width()), (28, 28));
        assert_eq!(a, b);
    }

    #[test]
    fn operator_mismatch_is_invalid_argument() {
        let model = UNetReconstructor::<f64>::new(tiny(), 0).unwrap();
        let op = make_operator::<f64>(5, 15, 0).unwrap();
        assert!(matches!(model.reconstruct(&[0.0; 5], &op), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn end_to_end_input_gradient() {
        let op = SensingOperator::<f64>::gaussian(9, 3, 5, 2).unwrap();
        let model = UNetReconstructor::<f64>::new(tiny(), 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let y: Vec<f64> = (0..9).map(|_| 0.2 + rng.random::<f64>()).collect();
        let probe: Vec<Complex<f64>> = (0..15).map(|_| Complex::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)).collect();
        let score = |y: &[f64]| -> f64 {
            let x = model.reconstruct(y, &op).unwrap();
            x.values().iter().zip(&probe).map(|(a, p)| a.re * p.re + a.im * p.im).sum()
        };
        let (_, tape) = model.forward_batch(&[&y], &op).unwrap();
        let mut pg = vec![0.0; model.num_params()];
        let gy = model.backward_batch(tape, &[probe.clone()], &op, &mut pg, true).unwrap();
        assert!(pg.iter().all(|g| g.is_finite()));
        let h = 1e-6;
        for j in 0..9 {
            let mut yp = y.clone();
            yp[j] += h;
            let up = score(&yp);
            yp[j] -= 2.0 * h;
            let dn = score(&yp);
            let fd = (up - dn) / (2.0 * h);
            assert!((fd - gy[0][j]).abs() <= 1e-3 * fd.abs().max(1e-3), "{j}: {fd} vs {}", gy[0][j]);
        }
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let op = SensingOperator::<f32>::gaussian(20, 3, 5, 2).unwrap();
        let cfg = ReconstructorConfig { scales: 2, base_channels: 2, image_height: 3, image_width: 5, ..Default::default() };
        let model = UNetReconstructor::<f32>::new(cfg, 9).unwrap();
        let ckpt = ModelCheckpoint::from_model(&model, "abc", 3);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        ckpt.save(&path).unwrap();
        let back = ModelCheckpoint::<f32>::load(&path).unwrap();
        assert_eq!(back, ckpt);
        let y: Vec<f32> = (0..20).map(|i| i as f32 * 0.05).collect();
        let a = model.reconstruct(&y, &op).unwrap();
        let b = back.model().unwrap().reconstruct(&y, &op).unwrap();
        assert_eq!(a, b);
        assert!(ModelCheckpoint::<f64>::load(&path).is_err());
        assert!(ModelCheckpoint::<f32>::from_bytes(b"garbage").is_err());
    }
}
