//! Layer stacks with a cached forward pass and exact reverse-mode gradients.

use super::tensor::Tensor;
use super::GenError;
use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::io::{Read, Write};

const MAGIC: &[u8; 4] = b"RSMP";
pub const LAYOUT_VERSION: u8 = 1;
pub const LEAKY_SLOPE: f64 = 0.2;

/// One layer. Convolutions are 3×3 with one pixel of zero padding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    Conv {
        cin: usize,
        cout: usize,
        stride: usize,
    },
    LeakyRelu,
    Sigmoid,
    Upsample2x,
    GlobalMeanPool,
    Dense {
        inputs: usize,
        outputs: usize,
    },
    /// Appends the network input's channels to the current activation.
    /// Spatial sizes must agree.
    ConcatInput,
}

impl LayerSpec {
    fn tag(&self) -> u8 {
        match self {
            LayerSpec::Conv { .. } => 0,
            LayerSpec::LeakyRelu => 1,
            LayerSpec::Sigmoid => 2,
            LayerSpec::Upsample2x => 3,
            LayerSpec::GlobalMeanPool => 4,
            LayerSpec::Dense { .. } => 5,
            LayerSpec::ConcatInput => 6,
        }
    }

    pub fn param_count(&self) -> usize {
        match *self {
            LayerSpec::Conv { cin, cout, .. } => cout * cin * 9 + cout,
            LayerSpec::Dense { inputs, outputs } => outputs * inputs + outputs,
            _ => 0,
        }
    }

    /// Fan-in of the layer's weights, for initialization.
    fn fan_in(&self) -> usize {
        match *self {
            LayerSpec::Conv { cin, .. } => cin * 9,
            LayerSpec::Dense { inputs, .. } => inputs,
            _ => 0,
        }
    }

    fn weight_count(&self) -> usize {
        match *self {
            LayerSpec::Conv { cin, cout, .. } => cout * cin * 9,
            LayerSpec::Dense { inputs, outputs } => outputs * inputs,
            _ => 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NetRole {
    Generator = 0,
    Discriminator = 1,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub role: NetRole,
    pub layers: Vec<LayerSpec>,
}

impl Layout {
    /// Encoder–decoder: two stride-2 convolutions down, a bottleneck
    /// convolution, two nearest-neighbour upsamplings each followed by a
    /// convolution, sigmoid output. The last convolution also sees the raw
    /// input channels, so full-resolution detail such as building edges
    /// reaches the output.
    pub fn generator(in_channels: usize) -> Self {
        use LayerSpec::*;
        Layout {
            role: NetRole::Generator,
            layers: vec![
                Conv { cin: in_channels, cout: 16, stride: 2 },
                LeakyRelu,
                Conv { cin: 16, cout: 32, stride: 2 },
                LeakyRelu,
                Conv { cin: 32, cout: 32, stride: 1 },
                LeakyRelu,
                Upsample2x,
                Conv { cin: 32, cout: 16, stride: 1 },
                LeakyRelu,
                Upsample2x,
                ConcatInput,
                Conv { cin: 16 + in_channels, cout: 1, stride: 1 },
                Sigmoid,
            ],
        }
    }

    /// Two stride-2 convolutions, global mean, affine, sigmoid.
    pub fn discriminator(in_channels: usize) -> Self {
        use LayerSpec::*;
        Layout {
            role: NetRole::Discriminator,
            layers: vec![
                Conv { cin: in_channels, cout: 16, stride: 2 },
                LeakyRelu,
                Conv { cin: 16, cout: 32, stride: 2 },
                LeakyRelu,
                GlobalMeanPool,
                Dense { inputs: 32, outputs: 1 },
                Sigmoid,
            ],
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LayerSpec::param_count).sum()
    }

    pub fn input_channels(&self) -> usize {
        match self.layers.first() {
            Some(LayerSpec::Conv { cin, .. }) => *cin,
            Some(LayerSpec::Dense { inputs, .. }) => *inputs,
            _ => 0,
        }
    }

    /// Start offset of each layer's parameters in the flat vector.
    fn offsets(&self) -> Vec<usize> {
        let mut off = 0;
        self.layers
            .iter()
            .map(|l| {
                let o = off;
                off += l.param_count();
                o
            })
            .collect()
    }
}

/// Flat parameter vector plus the layout that gives it meaning.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    layout: Layout,
    values: Vec<f64>,
}

impl ModelParams {
    pub fn new(layout: Layout, values: Vec<f64>) -> Result<Self, GenError> {
        if values.len() != layout.param_count() {
            return Err(GenError::ShapeMismatch {
                expected: format!("{} parameters", layout.param_count()),
                actual: format!("{}", values.len()),
            });
        }
        Ok(ModelParams { layout, values })
    }

    pub fn zeros(layout: Layout) -> Self {
        let n = layout.param_count();
        ModelParams { layout, values: vec![0.0; n] }
    }

    /// Uniform He initialization of weights, zero biases.
    pub fn init(layout: Layout, rng: &mut ChaCha8Rng) -> Self {
        let mut values = Vec::with_capacity(layout.param_count());
        for l in &layout.layers {
            let wc = l.weight_count();
            if wc == 0 {
                continue;
            }
            let bound = (6.0 / l.fan_in() as f64).sqrt();
            let dist = Uniform::new(-bound, bound).expect("finite positive bound");
            values.extend((0..wc).map(|_| dist.sample(rng)));
            values.extend(std::iter::repeat_n(0.0, l.param_count() - wc));
        }
        ModelParams { layout, values }
    }

    pub fn init_seeded(layout: Layout, seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self::init(layout, &mut rng)
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), GenError> {
        let mut head = Vec::new();
        head.extend_from_slice(MAGIC);
        head.push(LAYOUT_VERSION);
        head.push(self.layout.role as u8);
        head.push(
            u8::try_from(self.layout.layers.len()).map_err(|_| GenError::CorruptModel("too many layers"))?,
        );
        for l in &self.layout.layers {
            head.push(l.tag());
            let (a, b, s) = match *l {
                LayerSpec::Conv { cin, cout, stride } => (cin, cout, stride),
                LayerSpec::Dense { inputs, outputs } => (inputs, outputs, 0),
                _ => continue,
            };
            for v in [a, b] {
                head.extend_from_slice(
                    &u16::try_from(v)
                        .map_err(|_| GenError::CorruptModel("layer width exceeds u16"))?
                        .to_le_bytes(),
                );
            }
            if let LayerSpec::Conv { .. } = l {
                head.push(s as u8);
            }
        }
        head.extend_from_slice(&(self.values.len() as u64).to_le_bytes());
        w.write_all(&head)?;
        let mut body = Vec::with_capacity(8 * self.values.len());
        for v in &self.values {
            body.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&body)?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to a Vec cannot fail for valid layouts");
        out
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, GenError> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, GenError> {
        let mut pos = 0usize;
        let mut take = |n: usize| -> Result<&[u8], GenError> {
            let s = bytes.get(pos..pos + n).ok_or(GenError::CorruptModel("file is truncated"))?;
            pos += n;
            Ok(s)
        };
        if take(4)? != MAGIC {
            return Err(GenError::CorruptModel("missing RSMP header"));
        }
        if take(1)?[0] != LAYOUT_VERSION {
            return Err(GenError::CorruptModel("unsupported layout version"));
        }
        let role = match take(1)?[0] {
            0 => NetRole::Generator,
            1 => NetRole::Discriminator,
            _ => return Err(GenError::CorruptModel("unknown network role")),
        };
        let n_layers = take(1)?[0] as usize;
        let mut layers = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            let tag = take(1)?[0];
            let mut pair = || -> Result<(usize, usize), GenError> {
                let b = take(4)?;
                Ok((u16::from_le_bytes([b[0], b[1]]) as usize, u16::from_le_bytes([b[2], b[3]]) as usize))
            };
            layers.push(match tag {
                0 => {
                    let (cin, cout) = pair()?;
                    let stride = take(1)?[0] as usize;
                    if !(1..=2).contains(&stride) {
                        return Err(GenError::CorruptModel("convolution stride must be 1 or 2"));
                    }
                    LayerSpec::Conv { cin, cout, stride }
                }
                1 => LayerSpec::LeakyRelu,
                2 => LayerSpec::Sigmoid,
                3 => LayerSpec::Upsample2x,
                4 => LayerSpec::GlobalMeanPool,
                6 => LayerSpec::ConcatInput,
                5 => {
                    let (inputs, outputs) = pair()?;
                    LayerSpec::Dense { inputs, outputs }
                }
                _ => return Err(GenError::CorruptModel("unknown layer tag")),
            });
        }
        let b = take(8)?;
        let count = u64::from_le_bytes(b.try_into().expect("8 bytes")) as usize;
        let layout = Layout { role, layers };
        if count != layout.param_count() {
            return Err(GenError::CorruptModel("parameter count does not match layout"));
        }
        let body = take(count.checked_mul(8).ok_or(GenError::CorruptModel("parameter count overflows"))?)?;
        let values =
            body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        if pos != bytes.len() {
            return Err(GenError::CorruptModel("trailing bytes after parameters"));
        }
        ModelParams::new(layout, values)
    }
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    /// `acts[i]` is the input of layer `i`; the last entry is the output.
    acts: Vec<Tensor>,
    /// im2col matrices of the convolution layers.
    cols: Vec<Option<Vec<f64>>>,
}

impl Trace {
    pub fn output(&self) -> &Tensor {
        self.acts.last().expect("trace holds at least the input")
    }

    pub fn input(&self) -> &Tensor {
        &self.acts[0]
    }
}

fn conv_out(n: usize, stride: usize) -> usize {
    (n - 1) / stride + 1
}

fn im2col(x: &[f64], c: usize, h: usize, w: usize, stride: usize) -> (Vec<f64>, usize, usize) {
    let (ho, wo) = (conv_out(h, stride), conv_out(w, stride));
    let n = ho * wo;
    let mut cols = vec![0.0; c * 9 * n];
    for ci in 0..c {
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut cols[((ci * 3 + ky) * 3 + kx) * n..][..n];
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - 1;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = &x[(ci * h + iy as usize) * w..][..w];
                    for ox in 0..wo {
                        let ix = (ox * stride + kx) as isize - 1;
                        if ix >= 0 && ix < w as isize {
                            row[oy * wo + ox] = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    (cols, ho, wo)
}

#[allow(clippy::too_many_arguments)]
fn col2im(dcols: &[f64], c: usize, h: usize, w: usize, stride: usize, ho: usize, wo: usize, dx: &mut [f64]) {
    let n = ho * wo;
    for ci in 0..c {
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &dcols[((ci * 3 + ky) * 3 + kx) * n..][..n];
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - 1;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut dx[(ci * h + iy as usize) * w..][..w];
                    for ox in 0..wo {
                        let ix = (ox * stride + kx) as isize - 1;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] += row[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// `c = a·b + beta·c` for row-major matrices given by (rows, cols, row
/// stride, col stride).
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    assert!(a.len() >= (m.max(1) - 1) * rsa + (k.max(1) - 1) * csa + 1 || m * k == 0);
    assert!(b.len() >= (k.max(1) - 1) * rsb + (n.max(1) - 1) * csb + 1 || k * n == 0);
    assert!(c.len() >= m * n);
    // SAFETY: the asserts above bound every index the kernel touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn shape_err(expected: String, actual: &[usize]) -> GenError {
    GenError::ShapeMismatch { expected, actual: format!("{actual:?}") }
}

/// Runs the network and keeps what the backward pass needs.
pub fn forward(params: &ModelParams, input: Tensor) -> Result<Trace, GenError> {
    let layout = &params.layout;
    let offsets = layout.offsets();
    let mut acts = Vec::with_capacity(layout.layers.len() + 1);
    let mut cols = Vec::with_capacity(layout.layers.len());
    acts.push(input);
    for (l, &off) in layout.layers.iter().zip(&offsets) {
        let x = acts.last().expect("non-empty");
        let p = &params.values[off..off + l.param_count()];
        let (y, col) = match *l {
            LayerSpec::Conv { cin, cout, stride } => {
                let (c, h, w) = x.chw()?;
                if c != cin {
                    return Err(shape_err(format!("{cin} input channels"), x.shape()));
                }
                let (col, ho, wo) = im2col(x.data(), c, h, w, stride);
                let n = ho * wo;
                let k = cin * 9;
                let (wts, bias) = p.split_at(cout * k);
                let mut out = vec![0.0; cout * n];
                for (co, b) in bias.iter().enumerate() {
                    out[co * n..(co + 1) * n].fill(*b);
                }
                gemm(cout, k, n, wts, (k, 1), &col, (n, 1), 1.0, &mut out);
                (Tensor::new(vec![cout, ho, wo], out)?, Some(col))
            }
            LayerSpec::LeakyRelu => {
                let data = x.data().iter().map(|&v| if v > 0.0 { v } else { LEAKY_SLOPE * v }).collect();
                (Tensor::new(x.shape().to_vec(), data)?, None)
            }
            LayerSpec::Sigmoid => {
                let data = x.data().iter().map(|&v| sigmoid(v)).collect();
                (Tensor::new(x.shape().to_vec(), data)?, None)
            }
            LayerSpec::Upsample2x => {
                let (c, h, w) = x.chw()?;
                let (h2, w2) = (2 * h, 2 * w);
                let mut out = vec![0.0; c * h2 * w2];
                for ci in 0..c {
                    for y in 0..h2 {
                        let src = &x.data()[(ci * h + y / 2) * w..][..w];
                        let dst = &mut out[(ci * h2 + y) * w2..][..w2];
                        for (xx, d) in dst.iter_mut().enumerate() {
                            *d = src[xx / 2];
                        }
                    }
                }
                (Tensor::new(vec![c, h2, w2], out)?, None)
            }
            LayerSpec::ConcatInput => {
                let (c, h, w) = x.chw()?;
                let input = &acts[0];
                let (ci, hi, wi) = input.chw()?;
                if (hi, wi) != (h, w) {
                    return Err(shape_err(
                        format!("[_, {h}, {w}] network input for the skip"),
                        input.shape(),
                    ));
                }
                let mut data = Vec::with_capacity((c + ci) * h * w);
                data.extend_from_slice(x.data());
                data.extend_from_slice(input.data());
                (Tensor::new(vec![c + ci, h, w], data)?, None)
            }
            LayerSpec::GlobalMeanPool => {
                let (c, h, w) = x.chw()?;
                let hw = (h * w) as f64;
                let out = x.data().chunks(h * w).map(|ch| ch.iter().sum::<f64>() / hw).collect();
                (Tensor::new(vec![c], out)?, None)
            }
            LayerSpec::Dense { inputs, outputs } => {
                if x.len() != inputs {
                    return Err(shape_err(format!("{inputs} dense inputs"), x.shape()));
                }
                let (wts, bias) = p.split_at(outputs * inputs);
                let out = (0..outputs)
                    .map(|o| {
                        bias[o]
                            + wts[o * inputs..(o + 1) * inputs]
                                .iter()
                                .zip(x.data())
                                .map(|(a, b)| a * b)
                                .sum::<f64>()
                    })
                    .collect();
                (Tensor::new(vec![outputs], out)?, None)
            }
        };
        if !y.all_finite() {
            return Err(GenError::NumericOverflow("non-finite activation in forward pass"));
        }
        acts.push(y);
        cols.push(col);
    }
    Ok(Trace { acts, cols })
}

/// Backpropagates `d_out` (gradient of a scalar loss with respect to the
/// network output). Parameter gradients are added into `grad`; the gradient
/// with respect to the input is returned.
pub fn backward(
    params: &ModelParams,
    trace: &Trace,
    d_out: Tensor,
    grad: &mut [f64],
) -> Result<Tensor, GenError> {
    let layout = &params.layout;
    if grad.len() != params.values.len() {
        return Err(shape_err(format!("{} gradient entries", params.values.len()), &[grad.len()]));
    }
    if d_out.shape() != trace.output().shape() {
        return Err(shape_err(format!("{:?}", trace.output().shape()), d_out.shape()));
    }
    let offsets = layout.offsets();
    let mut d = d_out;
    // Gradient reaching the input through skip connections.
    let mut d_skip = vec![0.0; trace.acts[0].len()];
    for (i, l) in layout.layers.iter().enumerate().rev() {
        let x = &trace.acts[i];
        let y = &trace.acts[i + 1];
        let off = offsets[i];
        let p = &params.values[off..off + l.param_count()];
        let g = &mut grad[off..off + l.param_count()];
        d = match *l {
            LayerSpec::Conv { cin, cout, stride } => {
                let (c, h, w) = x.chw()?;
                let (_, ho, wo) = y.chw()?;
                let n = ho * wo;
                let k = cin * 9;
                let col = trace.cols[i].as_ref().expect("conv layers cache im2col");
                let (gw, gb) = g.split_at_mut(cout * k);
                let dy = d.data();
                gemm(cout, n, k, dy, (n, 1), col, (1, n), 1.0, gw);
                for (co, b) in gb.iter_mut().enumerate() {
                    *b += dy[co * n..(co + 1) * n].iter().sum::<f64>();
                }
                let mut dcols = vec![0.0; k * n];
                gemm(k, cout, n, &p[..cout * k], (1, k), dy, (n, 1), 0.0, &mut dcols);
                let mut dx = vec![0.0; c * h * w];
                col2im(&dcols, c, h, w, stride, ho, wo, &mut dx);
                Tensor::new(x.shape().to_vec(), dx)?
            }
            LayerSpec::LeakyRelu => {
                let data = d
                    .data()
                    .iter()
                    .zip(x.data())
                    .map(|(&g, &v)| if v > 0.0 { g } else { LEAKY_SLOPE * g })
                    .collect();
                Tensor::new(x.shape().to_vec(), data)?
            }
            LayerSpec::Sigmoid => {
                let data = d.data().iter().zip(y.data()).map(|(&g, &s)| g * s * (1.0 - s)).collect();
                Tensor::new(x.shape().to_vec(), data)?
            }
            LayerSpec::Upsample2x => {
                let (c, h, w) = x.chw()?;
                let (h2, w2) = (2 * h, 2 * w);
                let mut dx = vec![0.0; c * h * w];
                for ci in 0..c {
                    for yy in 0..h2 {
                        let src = &d.data()[(ci * h2 + yy) * w2..][..w2];
                        let dst = &mut dx[(ci * h + yy / 2) * w..][..w];
                        for (xx, v) in src.iter().enumerate() {
                            dst[xx / 2] += v;
                        }
                    }
                }
                Tensor::new(x.shape().to_vec(), dx)?
            }
            LayerSpec::ConcatInput => {
                let (head, tail) = d.data().split_at(x.len());
                for (a, b) in d_skip.iter_mut().zip(tail) {
                    *a += b;
                }
                Tensor::new(x.shape().to_vec(), head.to_vec())?
            }
            LayerSpec::GlobalMeanPool => {
                let (c, h, w) = x.chw()?;
                let hw = h * w;
                let mut dx = vec![0.0; c * hw];
                for (ci, chunk) in dx.chunks_mut(hw).enumerate() {
                    chunk.fill(d.data()[ci] / hw as f64);
                }
                Tensor::new(x.shape().to_vec(), dx)?
            }
            LayerSpec::Dense { inputs, outputs } => {
                let (gw, gb) = g.split_at_mut(outputs * inputs);
                let mut dx = vec![0.0; inputs];
                for o in 0..outputs {
                    let go = d.data()[o];
                    gb[o] += go;
                    for j in 0..inputs {
                        gw[o * inputs + j] += go * x.data()[j];
                        dx[j] += go * p[o * inputs + j];
                    }
                }
                Tensor::new(x.shape().to_vec(), dx)?
            }
        };
        if !d.all_finite() {
            return Err(GenError::NumericOverflow("non-finite gradient in backward pass"));
        }
    }
    for (a, b) in d.data_mut().iter_mut().zip(&d_skip) {
        *a += b;
    }
    Ok(d)
}
