//! Convolutional encoder-decoder used to purify attacked images.
//!
//! ```text
//! 1×28×28 ─conv1─▶ 16×14×14 ─conv2─▶ 32×7×7 ─flatten─▶ 1568 ─fc─▶ 20 (z)
//! 20 ─fc─▶ 1568 ─reshape─▶ 32×7×7 ─deconv1─▶ 16×14×14 ─deconv2─▶ 1×28×28 ─sigmoid
//! ```
//!
//! Every conv is 3×3, stride 2, padding 1; the transposed convs add
//! output padding 1 so each doubles the side length. ReLU follows every
//! layer except the last.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::ImageSet;
use crate::error::{Error, Result};
use crate::numerics::{
    fc_backward, fc_forward, mse, relu, relu_backward, sigmoid, sigmoid_backward, AdamState, Tensor,
};
use crate::rng::{derive_seed, prng};

/// Geometry of one (transposed) convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    /// Transposed convolutions only.
    pub output_padding: usize,
}

impl ConvSpec {
    pub fn down(in_channels: usize, out_channels: usize) -> Self {
        ConvSpec {
            in_channels,
            out_channels,
            kernel: 3,
            stride: 2,
            padding: 1,
            output_padding: 0,
        }
    }

    pub fn up(in_channels: usize, out_channels: usize) -> Self {
        ConvSpec {
            output_padding: 1,
            ..Self::down(in_channels, out_channels)
        }
    }

    pub fn conv_out(&self, side: usize) -> usize {
        (side + 2 * self.padding - self.kernel) / self.stride + 1
    }

    pub fn transpose_out(&self, side: usize) -> usize {
        (side - 1) * self.stride + self.kernel + self.output_padding - 2 * self.padding
    }
}

fn dims3(t: &Tensor, what: &str) -> Result<(usize, usize, usize)> {
    match *t.shape() {
        [c, h, w] => Ok((c, h, w)),
        ref s => Err(Error::ShapeMismatch(format!("{what} must be [C, H, W], got {s:?}"))),
    }
}

fn check_weights(spec: &ConvSpec, w: &Tensor, b: Option<&Tensor>, transposed: bool) -> Result<()> {
    let (first, second) = if transposed {
        (spec.in_channels, spec.out_channels)
    } else {
        (spec.out_channels, spec.in_channels)
    };
    let want = [first, second, spec.kernel, spec.kernel];
    if w.shape() != want {
        return Err(Error::ShapeMismatch(format!("weights {:?}, expected {want:?}", w.shape())));
    }
    if let Some(b) = b {
        if b.shape() != [spec.out_channels] {
            return Err(Error::ShapeMismatch(format!(
                "bias {:?}, expected [{}]",
                b.shape(),
                spec.out_channels
            )));
        }
    }
    if spec.stride == 0 || spec.kernel == 0 {
        return Err(Error::ShapeMismatch("kernel and stride must be positive".into()));
    }
    Ok(())
}

/// Input coordinate touched by output `o` and kernel tap `k`, if inside.
#[inline]
fn tap(o: usize, k: usize, spec: &ConvSpec, limit: usize) -> Option<usize> {
    (o * spec.stride + k).checked_sub(spec.padding).filter(|&i| i < limit)
}

/// Zero-padded cross-correlation. `w[C_out, C_in, k, k]`, `b[C_out]`.
pub fn conv2d(x: &Tensor, w: &Tensor, b: &Tensor, spec: &ConvSpec) -> Result<Tensor> {
    let (c_in, h, wd) = dims3(x, "conv input")?;
    check_weights(spec, w, Some(b), false)?;
    if c_in != spec.in_channels || h + 2 * spec.padding < spec.kernel || wd + 2 * spec.padding < spec.kernel {
        return Err(Error::ShapeMismatch(format!("conv input {:?} vs {spec:?}", x.shape())));
    }
    let (oh, ow, k) = (spec.conv_out(h), spec.conv_out(wd), spec.kernel);
    let (xd, wdt) = (x.data(), w.data());
    let mut out = vec![0.0; spec.out_channels * oh * ow];
    for co in 0..spec.out_channels {
        for y in 0..oh {
            for xo in 0..ow {
                let mut acc = b.data()[co];
                for ci in 0..c_in {
                    for kh in 0..k {
                        let Some(iy) = tap(y, kh, spec, h) else { continue };
                        for kw in 0..k {
                            let Some(ix) = tap(xo, kw, spec, wd) else { continue };
                            acc += xd[(ci * h + iy) * wd + ix] * wdt[((co * c_in + ci) * k + kh) * k + kw];
                        }
                    }
                }
                out[(co * oh + y) * ow + xo] = acc;
            }
        }
    }
    Tensor::new(vec![spec.out_channels, oh, ow], out)
}

/// Same result as [`conv2d`] computed as an unrolled-patch matrix product.
pub fn conv2d_im2col(x: &Tensor, w: &Tensor, b: &Tensor, spec: &ConvSpec) -> Result<Tensor> {
    let (c_in, h, wd) = dims3(x, "conv input")?;
    check_weights(spec, w, Some(b), false)?;
    if c_in != spec.in_channels {
        return Err(Error::ShapeMismatch(format!("conv input {:?} vs {spec:?}", x.shape())));
    }
    let (oh, ow, k) = (spec.conv_out(h), spec.conv_out(wd), spec.kernel);
    let patch = c_in * k * k;
    let cols = oh * ow;
    // columns[p][pos]: patch element p at output position pos.
    let mut columns = vec![0.0; patch * cols];
    for ci in 0..c_in {
        for kh in 0..k {
            for kw in 0..k {
                let row = (ci * k + kh) * k + kw;
                for y in 0..oh {
                    let Some(iy) = tap(y, kh, spec, h) else { continue };
                    for xo in 0..ow {
                        let Some(ix) = tap(xo, kw, spec, wd) else { continue };
                        columns[row * cols + y * ow + xo] = x.data()[(ci * h + iy) * wd + ix];
                    }
                }
            }
        }
    }
    let mut out = vec![0.0; spec.out_channels * cols];
    for co in 0..spec.out_channels {
        let wrow = &w.data()[co * patch..(co + 1) * patch];
        let orow = &mut out[co * cols..(co + 1) * cols];
        orow.fill(b.data()[co]);
        for (p, &wv) in wrow.iter().enumerate() {
            for (o, c) in orow.iter_mut().zip(&columns[p * cols..(p + 1) * cols]) {
                *o += wv * c;
            }
        }
    }
    Tensor::new(vec![spec.out_channels, oh, ow], out)
}

/// Gradients of [`conv2d`]: `(dx, dw, db)`.
pub fn conv2d_backward(x: &Tensor, w: &Tensor, dy: &Tensor, spec: &ConvSpec) -> Result<(Tensor, Tensor, Tensor)> {
    let (c_in, h, wd) = dims3(x, "conv input")?;
    check_weights(spec, w, None, false)?;
    let (oh, ow, k) = (spec.conv_out(h), spec.conv_out(wd), spec.kernel);
    if dy.shape() != [spec.out_channels, oh, ow] {
        return Err(Error::ShapeMismatch(format!("conv upstream {:?}", dy.shape())));
    }
    let (xd, wdt, g) = (x.data(), w.data(), dy.data());
    let mut dx = vec![0.0; x.len()];
    let mut dw = vec![0.0; w.len()];
    let mut db = vec![0.0; spec.out_channels];
    for co in 0..spec.out_channels {
        for y in 0..oh {
            for xo in 0..ow {
                let gv = g[(co * oh + y) * ow + xo];
                db[co] += gv;
                for ci in 0..c_in {
                    for kh in 0..k {
                        let Some(iy) = tap(y, kh, spec, h) else { continue };
                        for kw in 0..k {
                            let Some(ix) = tap(xo, kw, spec, wd) else { continue };
                            let wi = ((co * c_in + ci) * k + kh) * k + kw;
                            let xi = (ci * h + iy) * wd + ix;
                            dx[xi] += gv * wdt[wi];
                            dw[wi] += gv * xd[xi];
                        }
                    }
                }
            }
        }
    }
    Ok((
        Tensor::new(x.shape().to_vec(), dx)?,
        Tensor::new(w.shape().to_vec(), dw)?,
        Tensor::new(vec![spec.out_channels], db)?,
    ))
}

/// Transposed convolution: each input pixel stamps `x·w[ci, co]` into the
/// output at stride spacing. `w[C_in, C_out, k, k]`, `b[C_out]`.
pub fn conv_transpose2d(x: &Tensor, w: &Tensor, b: &Tensor, spec: &ConvSpec) -> Result<Tensor> {
    let (c_in, h, wd) = dims3(x, "transposed conv input")?;
    check_weights(spec, w, Some(b), true)?;
    if c_in != spec.in_channels || h == 0 || wd == 0 {
        return Err(Error::ShapeMismatch(format!("transposed conv input {:?} vs {spec:?}", x.shape())));
    }
    let (oh, ow, k, c_out) = (spec.transpose_out(h), spec.transpose_out(wd), spec.kernel, spec.out_channels);
    let mut out = vec![0.0; c_out * oh * ow];
    for (co, plane) in out.chunks_mut(oh * ow).enumerate() {
        plane.fill(b.data()[co]);
    }
    let (xd, wdt) = (x.data(), w.data());
    for ci in 0..c_in {
        for iy in 0..h {
            for ix in 0..wd {
                let v = xd[(ci * h + iy) * wd + ix];
                if v == 0.0 {
                    continue;
                }
                for co in 0..c_out {
                    for kh in 0..k {
                        let Some(y) = tap(iy, kh, spec, oh) else { continue };
                        for kw in 0..k {
                            let Some(xo) = tap(ix, kw, spec, ow) else { continue };
                            out[(co * oh + y) * ow + xo] += v * wdt[((ci * c_out + co) * k + kh) * k + kw];
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![c_out, oh, ow], out)
}

/// Gradients of [`conv_transpose2d`]: `(dx, dw, db)`.
pub fn conv_transpose2d_backward(
    x: &Tensor,
    w: &Tensor,
    dy: &Tensor,
    spec: &ConvSpec,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (c_in, h, wd) = dims3(x, "transposed conv input")?;
    check_weights(spec, w, None, true)?;
    let (oh, ow, k, c_out) = (spec.transpose_out(h), spec.transpose_out(wd), spec.kernel, spec.out_channels);
    if dy.shape() != [c_out, oh, ow] {
        return Err(Error::ShapeMismatch(format!("transposed conv upstream {:?}", dy.shape())));
    }
    let (xd, wdt, g) = (x.data(), w.data(), dy.data());
    let mut dx = vec![0.0; x.len()];
    let mut dw = vec![0.0; w.len()];
    let db: Vec<f64> = g.chunks(oh * ow).map(|p| p.iter().sum()).collect();
    for ci in 0..c_in {
        for iy in 0..h {
            for ix in 0..wd {
                let xi = (ci * h + iy) * wd + ix;
                let v = xd[xi];
                let mut acc = 0.0;
                for co in 0..c_out {
                    for kh in 0..k {
                        let Some(y) = tap(iy, kh, spec, oh) else { continue };
                        for kw in 0..k {
                            let Some(xo) = tap(ix, kw, spec, ow) else { continue };
                            let wi = ((ci * c_out + co) * k + kh) * k + kw;
                            let gv = g[(co * oh + y) * ow + xo];
                            acc += gv * wdt[wi];
                            dw[wi] += gv * v;
                        }
                    }
                }
                dx[xi] = acc;
            }
        }
    }
    Ok((
        Tensor::new(x.shape().to_vec(), dx)?,
        Tensor::new(w.shape().to_vec(), dw)?,
        Tensor::new(vec![c_out], db)?,
    ))
}

/// Layer widths. [`AeArch::standard`] is the 28×28 network; smaller sides
/// exist for gradient checks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AeArch {
    pub side: usize,
    pub channels1: usize,
    pub channels2: usize,
    pub latent: usize,
}

impl AeArch {
    pub const fn standard() -> Self {
        AeArch {
            side: 28,
            channels1: 16,
            channels2: 32,
            latent: 20,
        }
    }

    pub fn conv1(&self) -> ConvSpec {
        ConvSpec::down(1, self.channels1)
    }
    pub fn conv2(&self) -> ConvSpec {
        ConvSpec::down(self.channels1, self.channels2)
    }
    pub fn deconv1(&self) -> ConvSpec {
        ConvSpec::up(self.channels2, self.channels1)
    }
    pub fn deconv2(&self) -> ConvSpec {
        ConvSpec::up(self.channels1, 1)
    }

    /// Side length of the innermost feature map.
    pub fn inner_side(&self) -> usize {
        self.conv2().conv_out(self.conv1().conv_out(self.side))
    }

    pub fn flat(&self) -> usize {
        self.channels2 * self.inner_side() * self.inner_side()
    }

    fn validate(&self) -> Result<()> {
        let mid = self.conv1().conv_out(self.side);
        let back = self.deconv2().transpose_out(self.deconv1().transpose_out(self.inner_side()));
        if back != self.side || self.deconv1().transpose_out(self.inner_side()) != mid {
            return Err(Error::ShapeMismatch(format!(
                "side {} does not round-trip through the encoder-decoder (gets {back})",
                self.side
            )));
        }
        Ok(())
    }
}

impl Default for AeArch {
    fn default() -> Self {
        Self::standard()
    }
}

pub const PARAM_NAMES: [&str; 12] = [
    "conv1.w", "conv1.b", "conv2.w", "conv2.b", "fc_enc.w", "fc_enc.b", "fc_dec.w", "fc_dec.b",
    "deconv1.w", "deconv1.b", "deconv2.w", "deconv2.b",
];

/// Weights and biases of every layer, in [`PARAM_NAMES`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct AeParams {
    arch: AeArch,
    tensors: Vec<Tensor>,
}

/// Indices into [`AeParams`] tensors.
mod idx {
    pub const C1W: usize = 0;
    pub const C1B: usize = 1;
    pub const C2W: usize = 2;
    pub const C2B: usize = 3;
    pub const FEW: usize = 4;
    pub const FEB: usize = 5;
    pub const FDW: usize = 6;
    pub const FDB: usize = 7;
    pub const D1W: usize = 8;
    pub const D1B: usize = 9;
    pub const D2W: usize = 10;
    pub const D2B: usize = 11;
}

impl AeParams {
    pub fn shapes(arch: &AeArch) -> [Vec<usize>; 12] {
        let (c1, c2, l, f) = (arch.channels1, arch.channels2, arch.latent, arch.flat());
        [
            vec![c1, 1, 3, 3],
            vec![c1],
            vec![c2, c1, 3, 3],
            vec![c2],
            vec![l, f],
            vec![l],
            vec![f, l],
            vec![f],
            vec![c2, c1, 3, 3],
            vec![c1],
            vec![c1, 1, 3, 3],
            vec![1],
        ]
    }

    pub fn zeros(arch: AeArch) -> Result<Self> {
        arch.validate()?;
        let tensors = Self::shapes(&arch).iter().map(|s| Tensor::zeros(s)).collect();
        Ok(AeParams { arch, tensors })
    }

    /// He-normal weights (`std = √(2/fan_in)`), zero biases.
    pub fn init_he(arch: AeArch, seed: u64) -> Result<Self> {
        let mut p = Self::zeros(arch)?;
        let mut rng = prng(derive_seed(seed, "ae-init", 0));
        for (i, t) in p.tensors.iter_mut().enumerate() {
            if i % 2 == 1 {
                continue;
            }
            let shape = t.shape();
            // Input channels·k² for both conv kinds (transposed weights are
            // stored [C_in, C_out, k, k]); inputs for fully connected layers.
            let fan_in = match i {
                idx::C1W | idx::C2W => shape[1] * shape[2] * shape[3],
                idx::D1W | idx::D2W => shape[0] * shape[2] * shape[3],
                _ => shape[1],
            };
            let std = (2.0 / fan_in as f64).sqrt();
            for v in t.data_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v = z * std;
            }
        }
        Ok(p)
    }

    pub fn from_tensors(arch: AeArch, tensors: Vec<Tensor>) -> Result<Self> {
        arch.validate()?;
        let shapes = Self::shapes(&arch);
        if tensors.len() != shapes.len() {
            return Err(Error::ShapeMismatch(format!("{} tensors, expected 12", tensors.len())));
        }
        for ((t, s), name) in tensors.iter().zip(&shapes).zip(PARAM_NAMES) {
            if t.shape() != s.as_slice() {
                return Err(Error::ShapeMismatch(format!("{name}: {:?}, expected {s:?}", t.shape())));
            }
            if t.data().iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} has non-finite entries")));
            }
        }
        Ok(AeParams { arch, tensors })
    }

    pub fn arch(&self) -> &AeArch {
        &self.arch
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn n_params(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    fn t(&self, i: usize) -> &Tensor {
        &self.tensors[i]
    }
}

/// Intermediate activations of one forward pass.
#[derive(Clone, Debug)]
pub struct AeCache {
    input: Tensor,
    a1: Tensor,
    h1: Tensor,
    a2: Tensor,
    flat: Tensor,
    zpre: Tensor,
    z: Tensor,
    dpre: Tensor,
    grid: Tensor,
    u1pre: Tensor,
    u1: Tensor,
    output: Tensor,
}

impl AeCache {
    pub fn output(&self) -> &Tensor {
        &self.output
    }

    pub fn latent(&self) -> &[f64] {
        self.z.data()
    }
}

fn as_image(pixels: &[f64], side: usize) -> Result<Tensor> {
    Tensor::new(vec![1, side, side], pixels.to_vec())
}

/// Full encode-decode pass keeping what the backward pass needs.
pub fn forward(params: &AeParams, image: &Tensor) -> Result<AeCache> {
    let arch = params.arch;
    if image.shape() != [1, arch.side, arch.side] {
        return Err(Error::ShapeMismatch(format!(
            "autoencoder input {:?}, expected [1, {s}, {s}]",
            image.shape(),
            s = arch.side
        )));
    }
    use idx::*;
    let a1 = conv2d(image, params.t(C1W), params.t(C1B), &arch.conv1())?;
    let h1 = relu(&a1);
    let a2 = conv2d(&h1, params.t(C2W), params.t(C2B), &arch.conv2())?;
    let flat = relu(&a2).reshape(&[1, arch.flat()])?;
    let zpre = fc_forward(&flat, params.t(FEW), params.t(FEB))?;
    let z = relu(&zpre);
    let dpre = fc_forward(&z, params.t(FDW), params.t(FDB))?;
    let inner = arch.inner_side();
    let grid = relu(&dpre).reshape(&[arch.channels2, inner, inner])?;
    let u1pre = conv_transpose2d(&grid, params.t(D1W), params.t(D1B), &arch.deconv1())?;
    let u1 = relu(&u1pre);
    let u2pre = conv_transpose2d(&u1, params.t(D2W), params.t(D2B), &arch.deconv2())?;
    let output = sigmoid(&u2pre);
    Ok(AeCache {
        input: image.clone(),
        a1,
        h1,
        a2,
        flat,
        zpre,
        z,
        dpre,
        grid,
        u1pre,
        u1,
        output,
    })
}

/// The 20-dimensional latent code of an image.
pub fn encode(params: &AeParams, image: &Tensor) -> Result<Vec<f64>> {
    let arch = params.arch;
    use idx::*;
    let h1 = relu(&conv2d(image, params.t(C1W), params.t(C1B), &arch.conv1())?);
    let flat = relu(&conv2d(&h1, params.t(C2W), params.t(C2B), &arch.conv2())?).reshape(&[1, arch.flat()])?;
    Ok(relu(&fc_forward(&flat, params.t(FEW), params.t(FEB))?).into_data())
}

/// Image reconstructed from a latent code; every pixel lies in `(0, 1)`.
pub fn decode(params: &AeParams, z: &[f64]) -> Result<Tensor> {
    let arch = params.arch;
    if z.len() != arch.latent {
        return Err(Error::ShapeMismatch(format!("latent of length {}, expected {}", z.len(), arch.latent)));
    }
    use idx::*;
    let z = Tensor::new(vec![1, arch.latent], z.to_vec())?;
    let inner = arch.inner_side();
    let grid = relu(&fc_forward(&z, params.t(FDW), params.t(FDB))?).reshape(&[arch.channels2, inner, inner])?;
    let u1 = relu(&conv_transpose2d(&grid, params.t(D1W), params.t(D1B), &arch.deconv1())?);
    Ok(sigmoid(&conv_transpose2d(&u1, params.t(D2W), params.t(D2B), &arch.deconv2())?))
}

/// Gradients of a scalar loss given `d_output = ∂L/∂output`. Returns one
/// gradient tensor per parameter (in [`PARAM_NAMES`] order) and `∂L/∂input`.
pub fn ae_backward(params: &AeParams, cache: &AeCache, d_output: &Tensor) -> Result<(Vec<Tensor>, Tensor)> {
    if d_output.shape() != cache.output.shape() {
        return Err(Error::CacheMismatch(format!(
            "upstream gradient {:?} for output {:?}",
            d_output.shape(),
            cache.output.shape()
        )));
    }
    let arch = params.arch;
    use idx::*;
    let mut grads: Vec<Tensor> = Vec::with_capacity(12);
    grads.resize(12, Tensor::zeros(&[0]));

    let d_u2pre = sigmoid_backward(&cache.output, d_output)?;
    let (d_u1, dw, db) = conv_transpose2d_backward(&cache.u1, params.t(D2W), &d_u2pre, &arch.deconv2())?;
    grads[D2W] = dw;
    grads[D2B] = db;
    let d_u1pre = relu_backward(&cache.u1pre, &d_u1)?;
    let (d_grid, dw, db) = conv_transpose2d_backward(&cache.grid, params.t(D1W), &d_u1pre, &arch.deconv1())?;
    grads[D1W] = dw;
    grads[D1B] = db;
    let d_dpre = relu_backward(&cache.dpre, &d_grid.reshape(&[1, arch.flat()])?)?;
    let (d_z, dw, db) = fc_backward(&cache.z, params.t(FDW), params.t(FDB), &d_dpre)?;
    grads[FDW] = dw;
    grads[FDB] = db;
    let d_zpre = relu_backward(&cache.zpre, &d_z)?;
    let (d_flat, dw, db) = fc_backward(&cache.flat, params.t(FEW), params.t(FEB), &d_zpre)?;
    grads[FEW] = dw;
    grads[FEB] = db;
    let inner = arch.inner_side();
    let d_a2 = relu_backward(&cache.a2, &d_flat.reshape(&[arch.channels2, inner, inner])?)?;
    let (d_h1, dw, db) = conv2d_backward(&cache.h1, params.t(C2W), &d_a2, &arch.conv2())?;
    grads[C2W] = dw;
    grads[C2B] = db;
    let d_a1 = relu_backward(&cache.a1, &d_h1)?;
    let (d_input, dw, db) = conv2d_backward(&cache.input, params.t(C1W), &d_a1, &arch.conv1())?;
    grads[C1W] = dw;
    grads[C1B] = db;
    Ok((grads, d_input))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AeTrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for AeTrainConfig {
    fn default() -> Self {
        AeTrainConfig {
            learning_rate: 0.001,
            epochs: 20,
            batch_size: 32,
            seed: 0,
        }
    }
}

/// Mean per-image MSE of the reconstructions against `targets`.
pub fn evaluate_loss(params: &AeParams, inputs: &ImageSet, targets: &ImageSet) -> Result<f64> {
    check_pairs(params, inputs, targets)?;
    let side = params.arch.side;
    let losses = (0..inputs.len())
        .into_par_iter()
        .map(|i| {
            let cache = forward(params, &as_image(inputs.image(i), side)?)?;
            Ok(mse(cache.output(), &as_image(targets.image(i), side)?)?.0)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(losses.iter().sum::<f64>() / inputs.len().max(1) as f64)
}

fn check_pairs(params: &AeParams, inputs: &ImageSet, targets: &ImageSet) -> Result<()> {
    let side = params.arch.side;
    if inputs.len() != targets.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} inputs but {} targets",
            inputs.len(),
            targets.len()
        )));
    }
    for set in [inputs, targets] {
        if (set.rows(), set.cols()) != (side, side) {
            return Err(Error::ShapeMismatch(format!(
                "{}×{} images for a {side}×{side} autoencoder",
                set.rows(),
                set.cols()
            )));
        }
    }
    Ok(())
}

/// Adam on per-image MSE(reconstruct(input), target), averaged per batch.
/// Returns the mean pre-update training loss of every epoch.
pub fn train_autoencoder(
    initial: AeParams,
    inputs: &ImageSet,
    targets: &ImageSet,
    config: &AeTrainConfig,
) -> Result<(AeParams, Vec<f64>)> {
    check_pairs(&initial, inputs, targets)?;
    if config.epochs == 0 || config.batch_size == 0 || !(config.learning_rate > 0.0) {
        return Err(Error::InvalidConfig(format!("bad autoencoder training config {config:?}")));
    }
    if inputs.is_empty() {
        return Err(Error::InvalidConfig("no training pairs".into()));
    }
    let side = initial.arch.side;
    let mut params = initial;
    let mut adam: Vec<AdamState> = params.tensors.iter().map(|t| AdamState::new(t.len())).collect();
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut loss_sum = 0.0;
        for batch in crate::dataio::epoch_batches(inputs.len(), config.batch_size, config.seed, epoch as u64)? {
            let per_sample = batch
                .par_iter()
                .map(|&i| {
                    let cache = forward(&params, &as_image(inputs.image(i), side)?)?;
                    let (loss, d_out) = mse(cache.output(), &as_image(targets.image(i), side)?)?;
                    let (grads, _) = ae_backward(&params, &cache, &d_out)?;
                    Ok((loss, grads))
                })
                .collect::<Result<Vec<_>>>()?;
            let scale = 1.0 / batch.len() as f64;
            let mut total: Vec<Tensor> = params.tensors.iter().map(|t| Tensor::zeros(t.shape())).collect();
            for (loss, grads) in &per_sample {
                loss_sum += loss;
                for (acc, g) in total.iter_mut().zip(grads) {
                    for (a, v) in acc.data_mut().iter_mut().zip(g.data()) {
                        *a += v * scale;
                    }
                }
            }
            for ((p, g), state) in params.tensors.iter_mut().zip(&total).zip(&mut adam) {
                state.step(p.data_mut(), g.data(), config.learning_rate)?;
            }
        }
        let mean = loss_sum / inputs.len() as f64;
        log::info!("autoencoder epoch {epoch}: mse {mean:.5}");
        history.push(mean);
    }
    Ok((params, history))
}

/// Encode-decode every image.
pub fn reconstruct_batch(params: &AeParams, images: &ImageSet) -> Result<ImageSet> {
    let side = params.arch.side;
    if images.is_empty() {
        return Ok(ImageSet::empty(images.rows(), images.cols()));
    }
    if (images.rows(), images.cols()) != (side, side) {
        return Err(Error::ShapeMismatch(format!(
            "{}×{} images for a {side}×{side} autoencoder",
            images.rows(),
            images.cols()
        )));
    }
    let out = (0..images.len())
        .into_par_iter()
        .map(|i| Ok(forward(params, &as_image(images.image(i), side)?)?.output.into_data()))
        .collect::<Result<Vec<_>>>()?;
    ImageSet::from_images(&out, side, side)
}
