//! Multi-head dueling Q-network with hand-written forward and backward passes.
//!
//! Layout: images are NHWC (`batch x R x R x 3`), convolutions go through
//! im2col and a GEMM, and every parameter lives in one flat vector addressed
//! through named views.

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub, SubAssign};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vehicle::{NUM_HEADINGS, NUM_SPEEDS};

pub const IMAGE_CHANNELS: usize = 3;
pub const WIND_FEATURES: usize = 2;
pub const WIND_EMBED: usize = 16;
pub const HIDDEN: usize = 128;
/// Smallest resolution for which conv3 still has a 1x1 output.
pub const MIN_RESOLUTION: usize = 17;

/// Floating-point element usable by the network (f32 for training, f64 for
/// gradient checks).
pub trait Real:
    Copy
    + Default
    + Debug
    + PartialOrd
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + Send
    + Sync
    + 'static
{
    const ZERO: Self;
    const ONE: Self;
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn sqrt(self) -> Self;
    fn is_finite(self) -> bool;

    /// `c = a . b + beta * c` with explicit row/column strides.
    #[allow(clippy::too_many_arguments)]
    fn gemm(m: usize, k: usize, n: usize, a: &[Self], rsa: usize, csa: usize, b: &[Self], rsb: usize, csb: usize, beta: Self, c: &mut [Self], rsc: usize, csc: usize);
}

fn check_extent(len: usize, rows: usize, cols: usize, rs: usize, cs: usize) {
    if rows > 0 && cols > 0 {
        assert!((rows - 1) * rs + (cols - 1) * cs < len, "gemm operand out of bounds");
    }
}

impl Real for f32 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn sqrt(self) -> Self {
        f32::sqrt(self)
    }
    fn is_finite(self) -> bool {
        f32::is_finite(self)
    }
    fn gemm(m: usize, k: usize, n: usize, a: &[f32], rsa: usize, csa: usize, b: &[f32], rsb: usize, csb: usize, beta: f32, c: &mut [f32], rsc: usize, csc: usize) {
        check_extent(a.len(), m, k, rsa, csa);
        check_extent(b.len(), k, n, rsb, csb);
        check_extent(c.len(), m, n, rsc, csc);
        // SAFETY: extents checked above; c does not alias a or b (distinct borrows).
        unsafe {
            matrixmultiply::sgemm(
                m, k, n, 1.0, a.as_ptr(), rsa as isize, csa as isize, b.as_ptr(), rsb as isize, csb as isize, beta,
                c.as_mut_ptr(), rsc as isize, csc as isize,
            )
        }
    }
}

impl Real for f64 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
    fn gemm(m: usize, k: usize, n: usize, a: &[f64], rsa: usize, csa: usize, b: &[f64], rsb: usize, csb: usize, beta: f64, c: &mut [f64], rsc: usize, csc: usize) {
        check_extent(a.len(), m, k, rsa, csa);
        check_extent(b.len(), k, n, rsb, csb);
        check_extent(c.len(), m, n, rsc, csc);
        // SAFETY: extents checked above; c does not alias a or b (distinct borrows).
        unsafe {
            matrixmultiply::dgemm(
                m, k, n, 1.0, a.as_ptr(), rsa as isize, csa as isize, b.as_ptr(), rsb as isize, csb as isize, beta,
                c.as_mut_ptr(), rsc as isize, csc as isize,
            )
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct ConvShape {
    cin: usize,
    cout: usize,
    k: usize,
    stride: usize,
    in_hw: usize,
    out_hw: usize,
}

impl ConvShape {
    fn new(cin: usize, cout: usize, k: usize, stride: usize, in_hw: usize) -> Self {
        Self { cin, cout, k, stride, in_hw, out_hw: (in_hw - k) / stride + 1 }
    }

    fn patch(&self) -> usize {
        self.k * self.k * self.cin
    }

    fn positions(&self) -> usize {
        self.out_hw * self.out_hw
    }
}

/// A contiguous slice of the flat parameter vector.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamView {
    pub name: String,
    pub offset: usize,
    pub shape: Vec<usize>,
}

impl ParamView {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Shapes of every layer for one input resolution.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Architecture {
    resolution: usize,
    convs: [ConvShape; 3],
    views: Vec<ParamView>,
    num_params: usize,
}

// indices into `views`; conv layer l uses 2l and 2l + 1
#[cfg(test)]
const C1W: usize = 0;
#[cfg(test)]
const C1B: usize = 1;
const WW: usize = 6;
const WB: usize = 7;
const F1W: usize = 8;
const F1B: usize = 9;
const F2W: usize = 10;
const F2B: usize = 11;
const VW: usize = 12;
const VB: usize = 13;
const DW: usize = 14;
const DB: usize = 15;
const SW: usize = 16;
const SB: usize = 17;

impl Architecture {
    pub fn new(resolution: usize) -> Result<Self> {
        if resolution < MIN_RESOLUTION {
            return Err(Error::invalid(format!("state resolution {resolution} below minimum {MIN_RESOLUTION}")));
        }
        let c1 = ConvShape::new(IMAGE_CHANNELS, 8, 5, 2, resolution);
        let c2 = ConvShape::new(8, 16, 3, 2, c1.out_hw);
        let c3 = ConvShape::new(16, 32, 3, 2, c2.out_hw);
        let flat = c3.positions() * c3.cout;
        let specs: [(&str, Vec<usize>); 18] = [
            ("conv1.weight", vec![c1.patch(), c1.cout]),
            ("conv1.bias", vec![c1.cout]),
            ("conv2.weight", vec![c2.patch(), c2.cout]),
            ("conv2.bias", vec![c2.cout]),
            ("conv3.weight", vec![c3.patch(), c3.cout]),
            ("conv3.bias", vec![c3.cout]),
            ("wind.weight", vec![WIND_FEATURES, WIND_EMBED]),
            ("wind.bias", vec![WIND_EMBED]),
            ("fc1.weight", vec![flat + WIND_EMBED, HIDDEN]),
            ("fc1.bias", vec![HIDDEN]),
            ("fc2.weight", vec![HIDDEN, HIDDEN]),
            ("fc2.bias", vec![HIDDEN]),
            ("value.weight", vec![HIDDEN, 1]),
            ("value.bias", vec![1]),
            ("dir.weight", vec![HIDDEN, NUM_HEADINGS]),
            ("dir.bias", vec![NUM_HEADINGS]),
            ("spd.weight", vec![HIDDEN, NUM_SPEEDS]),
            ("spd.bias", vec![NUM_SPEEDS]),
        ];
        let mut offset = 0;
        let views = specs
            .into_iter()
            .map(|(name, shape)| {
                let v = ParamView { name: name.to_string(), offset, shape };
                offset += v.len();
                v
            })
            .collect();
        Ok(Self { resolution, convs: [c1, c2, c3], views, num_params: offset })
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn num_params(&self) -> usize {
        self.num_params
    }

    pub fn views(&self) -> &[ParamView] {
        &self.views
    }

    pub fn view(&self, name: &str) -> Option<&ParamView> {
        self.views.iter().find(|v| v.name == name)
    }

    pub fn image_len(&self) -> usize {
        self.resolution * self.resolution * IMAGE_CHANNELS
    }

    fn flat(&self) -> usize {
        self.convs[2].positions() * self.convs[2].cout
    }

    /// Identifies the layer layout; checkpoints refuse to load across
    /// differing fingerprints.
    pub fn fingerprint(&self) -> String {
        let layers: Vec<String> = self.views.iter().map(|v| format!("{}{:?}", v.name, v.shape)).collect();
        format!("dueling-qnet/r{}/{}", self.resolution, layers.join(","))
    }

    /// Uniform in `±sqrt(6 / (fan_in + fan_out))` for weights, zero biases.
    pub fn init_params<T: Real, R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<T> {
        let mut p = vec![T::ZERO; self.num_params];
        for v in &self.views {
            if v.shape.len() == 2 {
                let bound = (6.0 / (v.shape[0] + v.shape[1]) as f64).sqrt();
                for x in &mut p[v.range()] {
                    *x = T::from_f64(rng.random_range(-bound..bound));
                }
            }
        }
        p
    }
}

/// Network outputs for a batch, row-major per sample.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct QOutput<T> {
    pub q_dir: Vec<T>,
    pub q_spd: Vec<T>,
    pub value: Vec<T>,
}

/// Activations kept from the last forward pass for backpropagation.
#[derive(Clone, Debug, Default)]
pub struct Workspace<T> {
    batch: usize,
    cols: [Vec<T>; 3],
    acts: [Vec<T>; 3],
    wind_in: Vec<T>,
    wind_act: Vec<T>,
    z: Vec<T>,
    h1: Vec<T>,
    h2: Vec<T>,
    adv_dir: Vec<T>,
    adv_spd: Vec<T>,
    // backward scratch
    d_big: Vec<T>,
    d_col: Vec<T>,
    d_act: Vec<T>,
}

impl<T: Real> Workspace<T> {
    pub fn new() -> Self {
        Self::default()
    }
}

fn relu_in_place<T: Real>(x: &mut [T]) {
    for v in x {
        if !(*v > T::ZERO) {
            *v = T::ZERO;
        }
    }
}

fn add_bias<T: Real>(out: &mut [T], bias: &[T]) {
    for row in out.chunks_exact_mut(bias.len()) {
        for (o, b) in row.iter_mut().zip(bias) {
            *o += *b;
        }
    }
}

/// Rows are (sample, out_y, out_x); columns are (ky, kx, cin).
fn im2col<T: Real>(input: &[T], batch: usize, s: &ConvShape, col: &mut Vec<T>) {
    let patch = s.patch();
    col.clear();
    col.resize(batch * s.positions() * patch, T::ZERO);
    let row_len = s.k * s.cin;
    let mut r = 0;
    for b in 0..batch {
        let img = &input[b * s.in_hw * s.in_hw * s.cin..(b + 1) * s.in_hw * s.in_hw * s.cin];
        for oy in 0..s.out_hw {
            for ox in 0..s.out_hw {
                let dst = &mut col[r * patch..(r + 1) * patch];
                for ky in 0..s.k {
                    let src = ((oy * s.stride + ky) * s.in_hw + ox * s.stride) * s.cin;
                    dst[ky * row_len..(ky + 1) * row_len].copy_from_slice(&img[src..src + row_len]);
                }
                r += 1;
            }
        }
    }
}

fn col2im<T: Real>(col: &[T], batch: usize, s: &ConvShape, out: &mut Vec<T>) {
    let patch = s.patch();
    out.clear();
    out.resize(batch * s.in_hw * s.in_hw * s.cin, T::ZERO);
    let row_len = s.k * s.cin;
    let mut r = 0;
    for b in 0..batch {
        let img = &mut out[b * s.in_hw * s.in_hw * s.cin..(b + 1) * s.in_hw * s.in_hw * s.cin];
        for oy in 0..s.out_hw {
            for ox in 0..s.out_hw {
                let src = &col[r * patch..(r + 1) * patch];
                for ky in 0..s.k {
                    let dst = ((oy * s.stride + ky) * s.in_hw + ox * s.stride) * s.cin;
                    for (d, v) in img[dst..dst + row_len].iter_mut().zip(&src[ky * row_len..(ky + 1) * row_len]) {
                        *d += *v;
                    }
                }
                r += 1;
            }
        }
    }
}

/// `out[rows x n] = x[rows x k] . w[k x n] + bias`.
fn dense<T: Real>(x: &[T], rows: usize, k: usize, w: &[T], bias: &[T], out: &mut Vec<T>) {
    let n = bias.len();
    out.clear();
    out.resize(rows * n, T::ZERO);
    // computed as out^T = w^T x^T: matrixmultiply is much faster with the
    // narrow dimension first
    T::gemm(n, k, rows, w, 1, n, x, 1, k, T::ZERO, out, 1, n);
    add_bias(out, bias);
}

/// Accumulates `dW += x^T dy`, `db += sum(dy)`, and writes `dx = dy W^T`
/// when requested.
#[allow(clippy::too_many_arguments)]
fn dense_backward<T: Real>(
    x: &[T],
    rows: usize,
    k: usize,
    w: &[T],
    dy: &[T],
    n: usize,
    dw: &mut [T],
    db: &mut [T],
    dx: Option<&mut Vec<T>>,
) {
    T::gemm(k, rows, n, x, 1, k, dy, n, 1, T::ONE, dw, n, 1);
    for row in dy.chunks_exact(n) {
        for (g, v) in db.iter_mut().zip(row) {
            *g += *v;
        }
    }
    if let Some(dx) = dx {
        dx.clear();
        dx.resize(rows * k, T::ZERO);
        // dx^T = w dy^T
        T::gemm(k, n, rows, w, n, 1, dy, 1, n, T::ZERO, dx, 1, k);
    }
}

fn mask_relu<T: Real>(grad: &mut [T], act: &[T]) {
    for (g, a) in grad.iter_mut().zip(act) {
        if !(*a > T::ZERO) {
            *g = T::ZERO;
        }
    }
}

impl Architecture {
    fn p<'a, T>(&self, params: &'a [T], idx: usize) -> &'a [T] {
        &params[self.views[idx].range()]
    }

    /// Forward pass over `batch` samples; keeps activations in `ws`.
    pub fn forward<T: Real>(&self, params: &[T], images: &[T], winds: &[T], batch: usize, ws: &mut Workspace<T>) -> QOutput<T> {
        assert_eq!(params.len(), self.num_params, "parameter vector length");
        assert_eq!(images.len(), batch * self.image_len(), "image batch length");
        assert_eq!(winds.len(), batch * WIND_FEATURES, "wind batch length");
        ws.batch = batch;
        for (l, s) in self.convs.iter().enumerate() {
            let (w, b) = (self.p(params, 2 * l), self.p(params, 2 * l + 1));
            if l == 0 {
                im2col(images, batch, s, &mut ws.cols[0]);
            } else {
                im2col(&ws.acts[l - 1], batch, s, &mut ws.cols[l]);
            }
            let rows = batch * s.positions();
            dense(&ws.cols[l], rows, s.patch(), w, b, &mut ws.acts[l]);
            relu_in_place(&mut ws.acts[l]);
        }
        ws.wind_in.clear();
        ws.wind_in.extend_from_slice(winds);
        dense(winds, batch, WIND_FEATURES, self.p(params, WW), self.p(params, WB), &mut ws.wind_act);
        relu_in_place(&mut ws.wind_act);

        let flat = self.flat();
        let zdim = flat + WIND_EMBED;
        ws.z.clear();
        ws.z.reserve(batch * zdim);
        for b in 0..batch {
            ws.z.extend_from_slice(&ws.acts[2][b * flat..(b + 1) * flat]);
            ws.z.extend_from_slice(&ws.wind_act[b * WIND_EMBED..(b + 1) * WIND_EMBED]);
        }
        dense(&ws.z, batch, zdim, self.p(params, F1W), self.p(params, F1B), &mut ws.h1);
        relu_in_place(&mut ws.h1);
        dense(&ws.h1, batch, HIDDEN, self.p(params, F2W), self.p(params, F2B), &mut ws.h2);
        relu_in_place(&mut ws.h2);

        let mut value = Vec::new();
        dense(&ws.h2, batch, HIDDEN, self.p(params, VW), self.p(params, VB), &mut value);
        dense(&ws.h2, batch, HIDDEN, self.p(params, DW), self.p(params, DB), &mut ws.adv_dir);
        dense(&ws.h2, batch, HIDDEN, self.p(params, SW), self.p(params, SB), &mut ws.adv_spd);
        QOutput {
            q_dir: dueling(&value, &ws.adv_dir, NUM_HEADINGS),
            q_spd: dueling(&value, &ws.adv_spd, NUM_SPEEDS),
            value,
        }
    }

    /// Backpropagates `dL/dq_dir` and `dL/dq_spd` through the last forward
    /// pass, accumulating into `grad`.
    pub fn backward<T: Real>(&self, params: &[T], ws: &mut Workspace<T>, d_q_dir: &[T], d_q_spd: &[T], grad: &mut [T]) {
        let batch = ws.batch;
        assert_eq!(d_q_dir.len(), batch * NUM_HEADINGS);
        assert_eq!(d_q_spd.len(), batch * NUM_SPEEDS);
        assert_eq!(grad.len(), self.num_params);
        let mut d_value = vec![T::ZERO; batch];
        let d_adv_dir = centered_grad(d_q_dir, NUM_HEADINGS, &mut d_value);
        let d_adv_spd = centered_grad(d_q_spd, NUM_SPEEDS, &mut d_value);

        let mut d_h2 = vec![T::ZERO; batch * HIDDEN];
        let mut tmp = Vec::new();
        for (wi, bi, dy, n) in [(VW, VB, &d_value, 1), (DW, DB, &d_adv_dir, NUM_HEADINGS), (SW, SB, &d_adv_spd, NUM_SPEEDS)] {
            let (gw, gb) = split_grad(self, grad, wi, bi);
            dense_backward(&ws.h2, batch, HIDDEN, self.p(params, wi), dy, n, gw, gb, Some(&mut tmp));
            for (a, b) in d_h2.iter_mut().zip(&tmp) {
                *a += *b;
            }
        }
        mask_relu(&mut d_h2, &ws.h2);
        let mut d_h1 = Vec::new();
        let (gw, gb) = split_grad(self, grad, F2W, F2B);
        dense_backward(&ws.h1, batch, HIDDEN, self.p(params, F2W), &d_h2, HIDDEN, gw, gb, Some(&mut d_h1));
        mask_relu(&mut d_h1, &ws.h1);
        let flat = self.flat();
        let zdim = flat + WIND_EMBED;
        let mut d_z = Vec::new();
        let (gw, gb) = split_grad(self, grad, F1W, F1B);
        dense_backward(&ws.z, batch, zdim, self.p(params, F1W), &d_h1, HIDDEN, gw, gb, Some(&mut d_z));

        let mut d_wind = Vec::with_capacity(batch * WIND_EMBED);
        ws.d_act.clear();
        for b in 0..batch {
            ws.d_act.extend_from_slice(&d_z[b * zdim..b * zdim + flat]);
            d_wind.extend_from_slice(&d_z[b * zdim + flat..(b + 1) * zdim]);
        }
        mask_relu(&mut d_wind, &ws.wind_act);
        let (gw, gb) = split_grad(self, grad, WW, WB);
        dense_backward(&ws.wind_in, batch, WIND_FEATURES, self.p(params, WW), &d_wind, WIND_EMBED, gw, gb, None);

        for l in (0..3).rev() {
            let s = self.convs[l];
            mask_relu(&mut ws.d_act, &ws.acts[l]);
            let rows = batch * s.positions();
            let (gw, gb) = split_grad(self, grad, 2 * l, 2 * l + 1);
            let want_input = l > 0;
            dense_backward(
                &ws.cols[l],
                rows,
                s.patch(),
                self.p(params, 2 * l),
                &ws.d_act,
                s.cout,
                gw,
                gb,
                want_input.then_some(&mut ws.d_col),
            );
            if want_input {
                col2im(&ws.d_col, batch, &s, &mut ws.d_big);
                std::mem::swap(&mut ws.d_act, &mut ws.d_big);
            }
        }
    }
}

fn split_grad<'a, T>(arch: &Architecture, grad: &'a mut [T], w: usize, b: usize) -> (&'a mut [T], &'a mut [T]) {
    let (wv, bv) = (&arch.views[w], &arch.views[b]);
    debug_assert_eq!(wv.offset + wv.len(), bv.offset);
    let (head, tail) = grad[wv.offset..bv.offset + bv.len()].split_at_mut(wv.len());
    (head, tail)
}

fn dueling<T: Real>(value: &[T], adv: &[T], n: usize) -> Vec<T> {
    let inv = T::from_f64(1.0 / n as f64);
    let mut q = Vec::with_capacity(adv.len());
    for (row, &v) in adv.chunks_exact(n).zip(value) {
        let mut mean = T::ZERO;
        for &a in row {
            mean += a;
        }
        mean = mean * inv;
        q.extend(row.iter().map(|&a| v + a - mean));
    }
    q
}

/// Gradient through `q = V + A - mean(A)`: adds row sums to `d_value` and
/// returns the centered advantage gradient.
fn centered_grad<T: Real>(d_q: &[T], n: usize, d_value: &mut [T]) -> Vec<T> {
    let inv = T::from_f64(1.0 / n as f64);
    let mut out = Vec::with_capacity(d_q.len());
    for (row, dv) in d_q.chunks_exact(n).zip(d_value.iter_mut()) {
        let mut sum = T::ZERO;
        for &g in row {
            sum += g;
        }
        *dv += sum;
        let mean = sum * inv;
        out.extend(row.iter().map(|&g| g - mean));
    }
    out
}
