//! Minimal real-valued convolutional building blocks with explicit backward
//! passes, and the U-Net assembled from them.
//!
//! Activations are stored channel-major (`[C][B][H][W]`) so that every
//! convolution over a whole batch is a single matrix product against an
//! im2col buffer, and channel concatenation is a plain append.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::scalar::{gemm, MatRef, Scalar};

#[derive(Clone, Debug, PartialEq)]
pub struct Act<T> {
    pub data: Vec<T>,
    pub c: usize,
    pub b: usize,
    pub h: usize,
    pub w: usize,
}

impl<T: Scalar> Act<T> {
    pub fn zeros(c: usize, b: usize, h: usize, w: usize) -> Self {
        Self { data: vec![T::zero(); c * b * h * w], c, b, h, w }
    }

    /// Pixels per channel across the batch.
    fn plane(&self) -> usize {
        self.b * self.h * self.w
    }

    fn same_grid(&self, c: usize) -> Self {
        Self::zeros(c, self.b, self.h, self.w)
    }
}

#[derive(Clone, Copy, Debug)]
struct Conv {
    cin: usize,
    cout: usize,
    k: usize,
    w_off: usize,
    b_off: usize,
}

impl Conv {
    fn weights(&self) -> usize {
        self.cout * self.cin * self.k * self.k
    }

    fn fan_in(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn im2col<T: Scalar>(&self, x: &Act<T>) -> Vec<T> {
        let (b, h, w) = (x.b, x.h, x.w);
        let k = self.k;
        let pad = k / 2;
        let plane = b * h * w;
        let mut col = vec![T::zero(); self.cin * k * k * plane];
        for ci in 0..self.cin {
            let src = &x.data[ci * plane..(ci + 1) * plane];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let dst = &mut col[row * plane..(row + 1) * plane];
                    let dx = kx as isize - pad as isize;
                    let x_lo = (-dx).max(0) as usize;
                    let x_hi = (w as isize - dx).min(w as isize) as usize;
                    for bi in 0..b {
                        for yy in 0..h {
                            let sy = yy as isize + ky as isize - pad as isize;
                            if sy < 0 || sy >= h as isize || x_lo >= x_hi {
                                continue;
                            }
                            let d0 = (bi * h + yy) * w;
                            let s0 = (bi * h + sy as usize) * w;
                            let sx0 = (x_lo as isize + dx) as usize;
                            dst[d0 + x_lo..d0 + x_hi].copy_from_slice(&src[s0 + sx0..s0 + sx0 + (x_hi - x_lo)]);
                        }
                    }
                }
            }
        }
        col
    }

    fn col2im<T: Scalar>(&self, col: &[T], b: usize, h: usize, w: usize) -> Act<T> {
        let k = self.k;
        let pad = k / 2;
        let plane = b * h * w;
        let mut out = Act::zeros(self.cin, b, h, w);
        for ci in 0..self.cin {
            let dst = &mut out.data[ci * plane..(ci + 1) * plane];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let src = &col[row * plane..(row + 1) * plane];
                    let dx = kx as isize - pad as isize;
                    let x_lo = (-dx).max(0) as usize;
                    let x_hi = (w as isize - dx).min(w as isize) as usize;
                    for bi in 0..b {
                        for yy in 0..h {
                            let sy = yy as isize + ky as isize - pad as isize;
                            if sy < 0 || sy >= h as isize || x_lo >= x_hi {
                                continue;
                            }
                            let c0 = (bi * h + yy) * w;
                            let s0 = (bi * h + sy as usize) * w;
                            let sx0 = (x_lo as isize + dx) as usize;
                            for (d, s) in dst[s0 + sx0..s0 + sx0 + (x_hi - x_lo)]
                                .iter_mut()
                                .zip(&src[c0 + x_lo..c0 + x_hi])
                            {
                                *d += *s;
                            }
                        }
                    }
                }
            }
        }
        out
    }

    fn forward<T: Scalar>(&self, params: &[T], x: &Act<T>) -> Act<T> {
        debug_assert_eq!(x.c, self.cin);
        let plane = x.plane();
        let mut out = x.same_grid(self.cout);
        let bias = &params[self.b_off..self.b_off + self.cout];
        for (co, chunk) in out.data.chunks_exact_mut(plane).enumerate() {
            chunk.iter_mut().for_each(|v| *v = bias[co]);
        }
        let w = MatRef::new(&params[self.w_off..self.w_off + self.weights()], self.cout, self.fan_in());
        if self.k == 1 {
            gemm(w, MatRef::new(&x.data, self.cin, plane), T::one(), &mut out.data);
        } else {
            let col = self.im2col(x);
            gemm(w, MatRef::new(&col, self.fan_in(), plane), T::one(), &mut out.data);
        }
        out
    }

    /// Accumulates parameter gradients; returns the input gradient when asked.
    fn backward<T: Scalar>(
        &self,
        params: &[T],
        x: &Act<T>,
        grad_out: &Act<T>,
        grads: &mut [T],
        need_input: bool,
    ) -> Option<Act<T>> {
        let plane = x.plane();
        let fan = self.fan_in();
        for (co, chunk) in grad_out.data.chunks_exact(plane).enumerate() {
            grads[self.b_off + co] += chunk.iter().copied().sum::<T>();
        }
        let col_storage;
        let col: &[T] = if self.k == 1 {
            &x.data
        } else {
            col_storage = self.im2col(x);
            &col_storage
        };
        let g = MatRef::new(&grad_out.data, self.cout, plane);
        gemm(
            g,
            MatRef::new(col, fan, plane).t(),
            T::one(),
            &mut grads[self.w_off..self.w_off + self.weights()],
        );
        if !need_input {
            return None;
        }
        let w = MatRef::new(&params[self.w_off..self.w_off + self.weights()], self.cout, fan);
        let mut dcol = vec![T::zero(); fan * plane];
        gemm(w.t(), g, T::zero(), &mut dcol);
        if self.k == 1 {
            Some(Act { data: dcol, c: self.cin, b: x.b, h: x.h, w: x.w })
        } else {
            Some(self.col2im(&dcol, x.b, x.h, x.w))
        }
    }
}

/// 2x2 stride-2 transposed convolution.
#[derive(Clone, Copy, Debug)]
struct UpConv {
    cin: usize,
    cout: usize,
    w_off: usize,
    b_off: usize,
}

impl UpConv {
    fn weights(&self) -> usize {
        self.cout * 4 * self.cin
    }

    fn forward<T: Scalar>(&self, params: &[T], x: &Act<T>) -> Act<T> {
        let plane = x.plane();
        let mut tmp = vec![T::zero(); self.cout * 4 * plane];
        let w = MatRef::new(&params[self.w_off..self.w_off + self.weights()], self.cout * 4, self.cin);
        gemm(w, MatRef::new(&x.data, self.cin, plane), T::zero(), &mut tmp);
        let (b, h, wd) = (x.b, x.h, x.w);
        let mut out = Act::zeros(self.cout, b, 2 * h, 2 * wd);
        let oplane = out.plane();
        for co in 0..self.cout {
            let bias = params[self.b_off + co];
            for q in 0..4 {
                let (dy, dx) = (q / 2, q % 2);
                let src = &tmp[(co * 4 + q) * plane..(co * 4 + q + 1) * plane];
                let dst = &mut out.data[co * oplane..(co + 1) * oplane];
                for bi in 0..b {
                    for yy in 0..h {
                        let s0 = (bi * h + yy) * wd;
                        let d0 = (bi * 2 * h + 2 * yy + dy) * 2 * wd + dx;
                        for xx in 0..wd {
                            dst[d0 + 2 * xx] = src[s0 + xx] + bias;
                        }
                    }
                }
            }
        }
        out
    }

    fn backward<T: Scalar>(&self, params: &[T], x: &Act<T>, grad_out: &Act<T>, grads: &mut [T]) -> Act<T> {
        let plane = x.plane();
        let (b, h, wd) = (x.b, x.h, x.w);
        let oplane = grad_out.plane();
        let mut gtmp = vec![T::zero(); self.cout * 4 * plane];
        for co in 0..self.cout {
            let src = &grad_out.data[co * oplane..(co + 1) * oplane];
            grads[self.b_off + co] += src.iter().copied().sum::<T>();
            for q in 0..4 {
                let (dy, dx) = (q / 2, q % 2);
                let dst = &mut gtmp[(co * 4 + q) * plane..(co * 4 + q + 1) * plane];
                for bi in 0..b {
                    for yy in 0..h {
                        let d0 = (bi * h + yy) * wd;
                        let s0 = (bi * 2 * h + 2 * yy + dy) * 2 * wd + dx;
                        for xx in 0..wd {
                            dst[d0 + xx] = src[s0 + 2 * xx];
                        }
                    }
                }
            }
        }
        let g = MatRef::new(&gtmp, self.cout * 4, plane);
        gemm(
            g,
            MatRef::new(&x.data, self.cin, plane).t(),
            T::one(),
            &mut grads[self.w_off..self.w_off + self.weights()],
        );
        let w = MatRef::new(&params[self.w_off..self.w_off + self.weights()], self.cout * 4, self.cin);
        let mut dx = x.same_grid(self.cin);
        gemm(w.t(), g, T::zero(), &mut dx.data);
        dx
    }
}

fn relu_inplace<T: Scalar>(a: &mut Act<T>) {
    a.data.iter_mut().for_each(|v| {
        if !(*v > T::zero()) {
            *v = T::zero();
        }
    });
}

/// Masks `grad` by the positive support of a post-ReLU activation.
fn relu_backward<T: Scalar>(out: &Act<T>, grad: &mut Act<T>) {
    for (g, o) in grad.data.iter_mut().zip(&out.data) {
        if !(*o > T::zero()) {
            *g = T::zero();
        }
    }
}

fn maxpool2<T: Scalar>(x: &Act<T>) -> (Act<T>, Vec<u32>) {
    let (h2, w2) = (x.h / 2, x.w / 2);
    let mut out = Act::zeros(x.c, x.b, h2, w2);
    let mut arg = vec![0u32; out.data.len()];
    let mut o = 0;
    for cb in 0..x.c * x.b {
        let base = cb * x.h * x.w;
        for yy in 0..h2 {
            for xx in 0..w2 {
                let i0 = base + 2 * yy * x.w + 2 * xx;
                let mut best = i0;
                for cand in [i0 + 1, i0 + x.w, i0 + x.w + 1] {
                    if x.data[cand] > x.data[best] {
                        best = cand;
                    }
                }
                out.data[o] = x.data[best];
                arg[o] = best as u32;
                o += 1;
            }
        }
    }
    (out, arg)
}

fn maxpool2_backward<T: Scalar>(arg: &[u32], grad: &Act<T>, into: &mut Act<T>) {
    for (g, &i) in grad.data.iter().zip(arg) {
        into.data[i as usize] += *g;
    }
}

/// U-Net hyperparameters. Input and output are two real planes (real and
/// imaginary parts of the image).
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ReconstructorConfig {
    /// Number of 2x downsamplings (and matching upsamplings).
    pub scales: usize,
    pub base_channels: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub image_height: usize,
    pub image_width: usize,
    /// Adds the network input to its output.
    pub residual: bool,
}

impl Default for ReconstructorConfig {
    fn default() -> Self {
        Self {
            scales: 4,
            base_channels: 32,
            in_channels: 2,
            out_channels: 2,
            image_height: 28,
            image_width: 28,
            residual: true,
        }
    }
}

impl ReconstructorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels != 2 || self.out_channels != 2 {
            return Err(invalid("complex images need exactly 2 input and 2 output channels"));
        }
        if self.base_channels == 0 || self.image_height == 0 || self.image_width == 0 {
            return Err(invalid("channel count and image size must be positive"));
        }
        if self.scales > 10 {
            return Err(invalid(format!("{} scales is unreasonably deep", self.scales)));
        }
        Ok(())
    }

    /// Image size after zero-padding each side up to a multiple of `2^scales`.
    pub fn padded_shape(&self) -> (usize, usize) {
        let q = 1usize << self.scales;
        (self.image_height.div_ceil(q) * q, self.image_width.div_ceil(q) * q)
    }

    pub(crate) fn padding(&self) -> (usize, usize) {
        let (hp, wp) = self.padded_shape();
        ((hp - self.image_height) / 2, (wp - self.image_width) / 2)
    }

    fn channels(&self, level: usize) -> usize {
        self.base_channels << level
    }
}

#[derive(Clone, Debug)]
struct Layout {
    enc: Vec<(Conv, Conv)>,
    bottleneck: (Conv, Conv),
    dec: Vec<(UpConv, Conv, Conv)>,
    head: Conv,
    total: usize,
}

impl Layout {
    fn new(cfg: &ReconstructorConfig) -> Self {
        let mut off = 0usize;
        let conv = |off: &mut usize, cin: usize, cout: usize, k: usize| {
            let c = Conv { cin, cout, k, w_off: *off, b_off: *off + cout * cin * k * k };
            *off = c.b_off + cout;
            c
        };
        let mut enc = Vec::with_capacity(cfg.scales);
        let mut cin = cfg.in_channels;
        for l in 0..cfg.scales {
            let c = cfg.channels(l);
            enc.push((conv(&mut off, cin, c, 3), conv(&mut off, c, c, 3)));
            cin = c;
        }
        let cb = cfg.channels(cfg.scales);
        let bottleneck = (conv(&mut off, cin, cb, 3), conv(&mut off, cb, cb, 3));
        let mut dec = Vec::with_capacity(cfg.scales);
        for l in (0..cfg.scales).rev() {
            let (lo, c) = (cfg.channels(l + 1), cfg.channels(l));
            let up = UpConv { cin: lo, cout: c, w_off: off, b_off: off + c * 4 * lo };
            off = up.b_off + c;
            let c1 = conv(&mut off, 2 * c, c, 3);
            let c2 = conv(&mut off, c, c, 3);
            dec.push((up, c1, c2));
        }
        let head = conv(&mut off, cfg.channels(0), cfg.out_channels, 1);
        Self { enc, bottleneck, dec, head, total: off }
    }
}

struct Block<T> {
    input: Act<T>,
    h1: Act<T>,
    h2: Act<T>,
}

struct DecBlock<T> {
    low: Act<T>,
    block: Block<T>,
}

/// Everything the backward pass needs from one batched forward pass.
pub struct UNetTape<T> {
    enc: Vec<(Block<T>, Vec<u32>)>,
    bottleneck: Block<T>,
    dec: Vec<DecBlock<T>>,
    batch: usize,
}

/// U-Net over `[2][B][H][W]` planes with flat parameter storage.
#[derive(Clone, Debug)]
pub struct UNet<T> {
    cfg: ReconstructorConfig,
    layout: Layout,
    params: Vec<T>,
}

impl<T: Scalar> UNet<T> {
    /// He-uniform weights for ReLU layers, variance-`1/fan_in` for the head, zero biases.
    pub fn init(cfg: ReconstructorConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let layout = Layout::new(&cfg);
        let mut params = vec![T::zero(); layout.total];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fill = |off: usize, len: usize, fan: usize, gain: f64, params: &mut [T]| {
            let bound = (3.0 * gain / fan as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
            for p in &mut params[off..off + len] {
                *p = T::lit(dist.sample(&mut rng));
            }
        };
        let convs: Vec<Conv> = layout
            .enc
            .iter()
            .flat_map(|(a, b)| [*a, *b])
            .chain([layout.bottleneck.0, layout.bottleneck.1])
            .chain(layout.dec.iter().flat_map(|(_, a, b)| [*a, *b]))
            .collect();
        for c in convs {
            fill(c.w_off, c.weights(), c.fan_in(), 2.0, &mut params);
        }
        for (u, _, _) in &layout.dec {
            fill(u.w_off, u.weights(), u.cin, 2.0, &mut params);
        }
        let h = layout.head;
        fill(h.w_off, h.weights(), h.fan_in(), 1.0, &mut params);
        Ok(Self { cfg, layout, params })
    }

    pub fn from_params(cfg: ReconstructorConfig, params: Vec<T>) -> Result<Self> {
        cfg.validate()?;
        let layout = Layout::new(&cfg);
        if params.len() != layout.total {
            return Err(invalid(format!(
                "parameter blob has {} values, configuration needs {}",
                params.len(),
                layout.total
            )));
        }
        Ok(Self { cfg, layout, params })
    }

    pub fn config(&self) -> &ReconstructorConfig {
        &self.cfg
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.layout.total
    }

    fn block_forward(&self, (c1, c2): (Conv, Conv), input: Act<T>) -> Block<T> {
        let mut h1 = c1.forward(&self.params, &input);
        relu_inplace(&mut h1);
        let mut h2 = c2.forward(&self.params, &h1);
        relu_inplace(&mut h2);
        Block { input, h1, h2 }
    }

    /// Gradient w.r.t. the block input (`None` if not requested).
    fn block_backward(
        &self,
        (c1, c2): (Conv, Conv),
        blk: &Block<T>,
        mut g: Act<T>,
        grads: &mut [T],
        need_input: bool,
    ) -> Option<Act<T>> {
        relu_backward(&blk.h2, &mut g);
        let mut g1 = c2.backward(&self.params, &blk.h1, &g, grads, true).expect("requested");
        relu_backward(&blk.h1, &mut g1);
        c1.backward(&self.params, &blk.input, &g1, grads, need_input)
    }

    /// Runs the network on padded planes `[in_channels][B][Hp][Wp]`.
    pub fn forward(&self, x: Act<T>) -> (Act<T>, UNetTape<T>) {
        let batch = x.b;
        let mut enc = Vec::with_capacity(self.cfg.scales);
        let mut cur = x;
        for &convs in &self.layout.enc {
            let blk = self.block_forward(convs, cur);
            let (pooled, arg) = maxpool2(&blk.h2);
            enc.push((blk, arg));
            cur = pooled;
        }
        let bottleneck = self.block_forward(self.layout.bottleneck, cur);
        let mut low = bottleneck.h2.clone();
        let mut dec = Vec::with_capacity(self.cfg.scales);
        for (i, &(up, c1, c2)) in self.layout.dec.iter().enumerate() {
            let skip = &enc[self.cfg.scales - 1 - i].0.h2;
            let mut cat = up.forward(&self.params, &low);
            cat.data.extend_from_slice(&skip.data);
            cat.c += skip.c;
            let block = self.block_forward((c1, c2), cat);
            let next = block.h2.clone();
            dec.push(DecBlock { low: std::mem::replace(&mut low, next), block });
        }
        let out = self.layout.head.forward(&self.params, &low);
        (out, UNetTape { enc, bottleneck, dec, batch })
    }

    /// Backpropagates `grad_out` (same shape as the forward output); returns
    /// the gradient with respect to the network input when requested.
    pub fn backward(&self, tape: UNetTape<T>, grad_out: &Act<T>, grads: &mut [T], need_input: bool) -> Option<Act<T>> {
        assert_eq!(grads.len(), self.layout.total);
        assert_eq!(grad_out.b, tape.batch);
        let scales = self.cfg.scales;
        let head_in = match tape.dec.last() {
            Some(d) => &d.block.h2,
            None => &tape.bottleneck.h2,
        };
        let mut g = self.layout.head.backward(&self.params, head_in, grad_out, grads, true).expect("requested");
        let mut skip_grads: Vec<Option<Act<T>>> = (0..scales).map(|_| None).collect();
        for (i, (d, &(up, c1, c2))) in tape.dec.iter().zip(&self.layout.dec).enumerate().rev() {
            let gcat = self.block_backward((c1, c2), &d.block, g, grads, true).expect("requested");
            let split = up.cout * gcat.plane();
            let gup = Act { data: gcat.data[..split].to_vec(), c: up.cout, b: gcat.b, h: gcat.h, w: gcat.w };
            let gskip = Act { data: gcat.data[split..].to_vec(), c: gcat.c - up.cout, b: gcat.b, h: gcat.h, w: gcat.w };
            skip_grads[scales - 1 - i] = Some(gskip);
            g = up.backward(&self.params, &d.low, &gup, grads);
        }
        let mut g = self.block_backward(self.layout.bottleneck, &tape.bottleneck, g, grads, scales > 0 || need_input)?;
        for (l, ((blk, arg), &convs)) in tape.enc.iter().zip(&self.layout.enc).enumerate().rev() {
            let mut gh2 = skip_grads[l].take().expect("decoder visited every level");
            maxpool2_backward(arg, &g, &mut gh2);
            let need = l > 0 || need_input;
            g = self.block_backward(convs, blk, gh2, grads, need)?;
        }
        need_input.then_some(g)
    }
}

/// Zero-pads `[C][B][H][W]` planes to `[C][B][Hp][Wp]` at offset `(top, left)`.
pub fn pad_planes<T: Scalar>(x: &Act<T>, hp: usize, wp: usize, top: usize, left: usize) -> Act<T> {
    let mut out = Act::zeros(x.c, x.b, hp, wp);
    for cb in 0..x.c * x.b {
        for yy in 0..x.h {
            let s = (cb * x.h + yy) * x.w;
            let d = (cb * hp + yy + top) * wp + left;
            out.data[d..d + x.w].copy_from_slice(&x.data[s..s + x.w]);
        }
    }
    out
}

/// Inverse of [`pad_planes`] (and its adjoint).
pub fn crop_planes<T: Scalar>(x: &Act<T>, h: usize, w: usize, top: usize, left: usize) -> Act<T> {
    let mut out = Act::zeros(x.c, x.b, h, w);
    for cb in 0..x.c * x.b {
        for yy in 0..h {
            let d = (cb * h + yy) * w;
            let s = (cb * x.h + yy + top) * x.w + left;
            out.data[d..d + w].copy_from_slice(&x.data[s..s + w]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn tiny_cfg(scales: usize) -> ReconstructorConfig {
        ReconstructorConfig {
            scales,
            base_channels: 2,
            image_height: 4,
            image_width: 4,
            residual: false,
            ..Default::default()
        }
    }

    fn random_act(rng: &mut impl Rng, c: usize, b: usize, h: usize, w: usize) -> Act<f64> {
        Act { data: (0..c * b * h * w).map(|_| rng.random::<f64>() - 0.5).collect(), c, b, h, w }
    }

    fn loss(net: &UNet<f64>, x: &Act<f64>, probe: &Act<f64>) -> f64 {
        let (out, _) = net.forward(x.clone());
        out.data.iter().zip(&probe.data).map(|(a, b)| a * b).sum()
    }

    #[test]
    fn parameter_count_of_default_config() {
        let layout = Layout::new(&ReconstructorConfig::default());
        // independently tallied: encoder, bottleneck, decoder (up + two convs) and 1x1 head
        let conv = |ci: usize, co: usize, k: usize| co * ci * k * k + co;
        let mut n = 0;
        let mut cin = 2;
        for l in 0..4 {
            let c = 32 << l;
            n += conv(cin, c, 3) + conv(c, c, 3);
            cin = c;
        }
        n += conv(256, 512, 3) + conv(512, 512, 3);
        for l in (0..4).rev() {
            let c = 32 << l;
            n += (2 * c) * 4 * c + c + conv(2 * c, c, 3) + conv(c, c, 3);
        }
        n += conv(32, 2, 1);
        assert_eq!(layout.total, n);
        assert_eq!(layout.total, 7_759_842);
    }

    #[test]
    fn padding_policy() {
        let cfg = ReconstructorConfig::default();
        assert_eq!(cfg.padded_shape(), (32, 32));
        assert_eq!(cfg.padding(), (2, 2));
        let x = Act { data: (0..2 * 3 * 3).map(|v| v as f64).collect(), c: 2, b: 1, h: 3, w: 3 };
        let p = pad_planes(&x, 4, 4, 0, 1);
        assert_eq!(crop_planes(&p, 3, 3, 0, 1), x);
    }

    #[test]
    fn im2col_and_col2im_are_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let conv = Conv { cin: 2, cout: 1, k: 3, w_off: 0, b_off: 18 };
        let x = random_act(&mut rng, 2, 2, 5, 4);
        let col = conv.im2col(&x);
        let v: Vec<f64> = (0..col.len()).map(|_| rng.random::<f64>()).collect();
        let lhs: f64 = col.iter().zip(&v).map(|(a, b)| a * b).sum();
        let back = conv.col2im(&v, 2, 5, 4);
        let rhs: f64 = back.data.iter().zip(&x.data).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn conv_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let conv = Conv { cin: 2, cout: 3, k: 3, w_off: 0, b_off: 54 };
        let params: Vec<f64> = (0..57).map(|_| rng.random::<f64>() - 0.5).collect();
        let x = random_act(&mut rng, 2, 1, 4, 5);
        let out = conv.forward(&params, &x);
        for co in 0..3 {
            for yy in 0..4 {
                for xx in 0..5 {
                    let mut s = params[54 + co];
                    for ci in 0..2 {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let (sy, sx) = (yy as isize + ky as isize - 1, xx as isize + kx as isize - 1);
                                if sy < 0 || sy >= 4 || sx < 0 || sx >= 5 {
                                    continue;
                                }
                                s += params[((co * 2 + ci) * 3 + ky) * 3 + kx] * x.data[(ci * 4 + sy as usize) * 5 + sx as usize];
                            }
                        }
                    }
                    assert!((out.data[(co * 4 + yy) * 5 + xx] - s).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn unet_gradients_match_finite_differences() {
        for (scales, h, w) in [(0, 4, 4), (1, 4, 4), (2, 4, 4), (1, 4, 8), (2, 8, 4)] {
            let mut rng = ChaCha8Rng::seed_from_u64(10 + scales as u64);
            let cfg = ReconstructorConfig { image_height: h, image_width: w, ..tiny_cfg(scales) };
            let net = UNet::<f64>::init(cfg, 1).unwrap();
            let x = random_act(&mut rng, 2, 2, h, w);
            let (out, tape) = net.forward(x.clone());
            let probe = random_act(&mut rng, out.c, out.b, out.h, out.w);
            let mut grads = vec![0.0; net.num_params()];
            let gx = net.backward(tape, &probe, &mut grads, true).unwrap();

            let eps = 1e-6;
            for idx in (0..net.num_params()).step_by(7) {
                let mut p = net.clone();
                p.params[idx] += eps;
                let up = loss(&p, &x, &probe);
                p.params[idx] -= 2.0 * eps;
                let dn = loss(&p, &x, &probe);
                let fd = (up - dn) / (2.0 * eps);
                assert!((fd - grads[idx]).abs() <= 1e-6 * (1.0 + fd.abs()), "scales {scales} param {idx}: {fd} vs {}", grads[idx]);
            }
            for idx in 0..x.data.len() {
                let mut xp = x.clone();
                xp.data[idx] += eps;
                let up = loss(&net, &xp, &probe);
                xp.data[idx] -= 2.0 * eps;
                let dn = loss(&net, &xp, &probe);
                let fd = (up - dn) / (2.0 * eps);
                assert!((fd - gx.data[idx]).abs() <= 1e-6 * (1.0 + fd.abs()), "input {idx}");
            }
        }
    }

    #[test]
    fn batch_entries_are_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let net = UNet::<f64>::init(tiny_cfg(2), 2).unwrap();
        let x = random_act(&mut rng, 2, 3, 4, 4);
        let (full, _) = net.forward(x.clone());
        // pull out sample 1 on its own
        let single = Act {
            data: (0..2).flat_map(|c| x.data[(c * 3 + 1) * 16..(c * 3 + 2) * 16].to_vec()).collect(),
            c: 2,
            b: 1,
            h: 4,
            w: 4,
        };
        let (one, _) = net.forward(single);
        for c in 0..2 {
            for k in 0..16 {
                assert!((full.data[(c * 3 + 1) * 16 + k] - one.data[c * 16 + k]).abs() < 1e-12);
            }
        }
    }
}
