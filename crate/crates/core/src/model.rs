//! Two-headed 1-D convolutional wall estimator with exact reverse-mode
//! gradients.
//!
//! Trunk: a kernel-7 stride-2 stem (32 -> 64 channels, 1024 -> 512 frames),
//! then four stages of one identity residual unit followed by a kernel-3
//! stride-2 downsampling conv (512 -> 256 -> 128 -> 64 -> 32 frames). The wall
//! head is a 1x1 conv to 32 channels averaged over time and reshaped to 8x4;
//! the presence head is a 1x1 conv to 8 channels, averaged, then a sigmoid.
//! The final estimate scales each wall row by its presence probability.
//!
//! Everything is computed in f64; checkpoints store f32.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::geometry::MAX_WALLS;
use crate::ism::{NUM_MICS, RIR_TAPS};

pub const CHANNELS: usize = 64;
pub const STAGES: usize = 4;
pub const WALL_PARAMS: usize = 4;
/// Frames left after the stem and four downsampling convs.
pub const HEAD_FRAMES: usize = RIR_TAPS >> (STAGES + 1);
pub const PARAM_COUNT: usize = 165_224;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"RGIW";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("input has {found} values, expected {expected}")]
    ShapeMismatch { found: usize, expected: usize },
    #[error("activation cache does not belong to these parameters")]
    CacheMismatch,
    #[error("I/O failure: {0}")]
    Io(#[from] io::Error),
    #[error("not a checkpoint file (bad magic {0:?})")]
    BadMagic([u8; 4]),
    #[error("checkpoint format version {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("checkpoint does not match the network architecture: {0}")]
    ArchitectureMismatch(String),
    #[error("checkpoint file is truncated")]
    Truncated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct ConvSpec {
    cin: usize,
    cout: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
}

impl ConvSpec {
    fn out_len(&self, len: usize) -> usize {
        (len + 2 * self.pad - self.kernel) / self.stride + 1
    }

    fn fan_in(&self) -> usize {
        self.cin * self.kernel
    }
}

const STEM: ConvSpec = ConvSpec {
    cin: NUM_MICS,
    cout: CHANNELS,
    kernel: 7,
    stride: 2,
    pad: 3,
};
const RES: ConvSpec = ConvSpec {
    cin: CHANNELS,
    cout: CHANNELS,
    kernel: 3,
    stride: 1,
    pad: 1,
};
const DOWN: ConvSpec = ConvSpec {
    cin: CHANNELS,
    cout: CHANNELS,
    kernel: 3,
    stride: 2,
    pad: 1,
};
const WPE: ConvSpec = ConvSpec {
    cin: CHANNELS,
    cout: MAX_WALLS * WALL_PARAMS,
    kernel: 1,
    stride: 1,
    pad: 0,
};
const EVAL: ConvSpec = ConvSpec {
    cin: CHANNELS,
    cout: MAX_WALLS,
    kernel: 1,
    stride: 1,
    pad: 0,
};

// tensor layout: (weight, bias) pairs in this order
const STEM_IDX: usize = 0;
const fn res_a_idx(stage: usize) -> usize {
    2 + 6 * stage
}
const fn res_b_idx(stage: usize) -> usize {
    4 + 6 * stage
}
const fn down_idx(stage: usize) -> usize {
    6 + 6 * stage
}
const WPE_IDX: usize = 2 + 6 * STAGES;
const EVAL_IDX: usize = WPE_IDX + 2;

fn layer_specs() -> Vec<(String, ConvSpec)> {
    let mut layers = vec![("stem".to_owned(), STEM)];
    for s in 0..STAGES {
        layers.push((format!("stage{s}.res_a"), RES));
        layers.push((format!("stage{s}.res_b"), RES));
        layers.push((format!("stage{s}.down"), DOWN));
    }
    layers.push(("wpe".to_owned(), WPE));
    layers.push(("eval".to_owned(), EVAL));
    layers
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

/// All trainable tensors, in a fixed order. Also used to hold gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub tensors: Vec<Tensor>,
}

impl NetworkParams {
    pub fn zeros() -> Self {
        let mut tensors = Vec::new();
        for (name, spec) in layer_specs() {
            let w = vec![spec.cout, spec.cin, spec.kernel];
            tensors.push(Tensor {
                name: format!("{name}.weight"),
                data: vec![0.0; w.iter().product()],
                dims: w,
            });
            tensors.push(Tensor {
                name: format!("{name}.bias"),
                dims: vec![spec.cout],
                data: vec![0.0; spec.cout],
            });
        }
        Self { tensors }
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.tensors.iter_mut().for_each(|t| t.data.fill(0.0));
        z
    }

    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.tensors.iter().flat_map(|t| t.data.iter())
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.tensors.iter_mut().flat_map(|t| t.data.iter_mut())
    }

    /// Mutable access to the `i`-th scalar in flattened order.
    pub fn scalar_mut(&mut self, mut i: usize) -> &mut f64 {
        for t in &mut self.tensors {
            if i < t.data.len() {
                return &mut t.data[i];
            }
            i -= t.data.len();
        }
        panic!("parameter index out of range");
    }

    pub fn scalar(&self, i: usize) -> f64 {
        self.values()
            .nth(i)
            .copied()
            .expect("parameter index out of range")
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &Self, scale: f64) {
        for (a, b) in self.values_mut().zip(other.values()) {
            *a += scale * b;
        }
    }

    fn fingerprint(&self) -> u64 {
        self.values().fold(0xcbf2_9ce4_8422_2325, |h, v| {
            (h ^ v.to_bits()).wrapping_mul(0x0100_0000_01b3)
        })
    }
}

/// Uniform fan-in initialization, `U[-s, s]` with `s = sqrt(6 / fan_in)`,
/// zero biases.
pub fn init_params(seed: u64) -> NetworkParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = NetworkParams::zeros();
    for (i, (_, spec)) in layer_specs().into_iter().enumerate() {
        let bound = (6.0 / spec.fan_in() as f64).sqrt();
        for w in &mut params.tensors[2 * i].data {
            *w = rng.random_range(-bound..=bound);
        }
    }
    params
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkOutput {
    pub a_tilde: [[f64; WALL_PARAMS]; MAX_WALLS],
    pub p_hat: [f64; MAX_WALLS],
    pub a_hat: [[f64; WALL_PARAMS]; MAX_WALLS],
}

/// Activations saved by [`forward`] for [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    fingerprint: u64,
    input: Vec<f64>,
    stem: Vec<f64>,
    /// Per stage: post-ReLU residual branch, post-ReLU residual sum, downsampled output.
    stages: Vec<[Vec<f64>; 3]>,
    a_tilde: [[f64; WALL_PARAMS]; MAX_WALLS],
    p_hat: [f64; MAX_WALLS],
}

fn im2col(x: &[f64], len: usize, spec: &ConvSpec) -> (Vec<f64>, usize) {
    let out_len = spec.out_len(len);
    let mut col = vec![0.0; spec.cin * spec.kernel * out_len];
    for c in 0..spec.cin {
        let row_in = &x[c * len..(c + 1) * len];
        for k in 0..spec.kernel {
            let row = &mut col[(c * spec.kernel + k) * out_len..][..out_len];
            for (t, v) in row.iter_mut().enumerate() {
                let src = (t * spec.stride + k) as isize - spec.pad as isize;
                if src >= 0 && (src as usize) < len {
                    *v = row_in[src as usize];
                }
            }
        }
    }
    (col, out_len)
}

fn col2im(col: &[f64], len: usize, out_len: usize, spec: &ConvSpec) -> Vec<f64> {
    let mut x = vec![0.0; spec.cin * len];
    for c in 0..spec.cin {
        let row_out = &mut x[c * len..(c + 1) * len];
        for k in 0..spec.kernel {
            let row = &col[(c * spec.kernel + k) * out_len..][..out_len];
            for (t, v) in row.iter().enumerate() {
                let dst = (t * spec.stride + k) as isize - spec.pad as isize;
                if dst >= 0 && (dst as usize) < len {
                    row_out[dst as usize] += v;
                }
            }
        }
    }
    x
}

/// `c = alpha * a(m x k) b(k x n) + beta * c`, all row-major unless strides say otherwise.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: slice lengths cover the strided extents asserted above and `c`
    // does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn conv_forward(x: &[f64], len: usize, w: &[f64], b: &[f64], spec: &ConvSpec) -> (Vec<f64>, usize) {
    let (col, out_len) = im2col(x, len, spec);
    let mut out = vec![0.0; spec.cout * out_len];
    for (row, bias) in out.chunks_exact_mut(out_len).zip(b) {
        row.fill(*bias);
    }
    let inner = spec.cin * spec.kernel;
    gemm(
        spec.cout,
        inner,
        out_len,
        w,
        (inner as isize, 1),
        &col,
        (out_len as isize, 1),
        1.0,
        &mut out,
    );
    (out, out_len)
}

/// Accumulates weight and bias gradients and returns the input gradient.
#[allow(clippy::too_many_arguments)]
fn conv_backward(
    x: &[f64],
    len: usize,
    w: &[f64],
    d_out: &[f64],
    spec: &ConvSpec,
    d_w: &mut [f64],
    d_b: &mut [f64],
    need_input_grad: bool,
) -> Vec<f64> {
    let (col, out_len) = im2col(x, len, spec);
    let inner = spec.cin * spec.kernel;
    gemm(
        spec.cout,
        out_len,
        inner,
        d_out,
        (out_len as isize, 1),
        &col,
        (1, out_len as isize),
        1.0,
        d_w,
    );
    for (db, row) in d_b.iter_mut().zip(d_out.chunks_exact(out_len)) {
        *db += row.iter().sum::<f64>();
    }
    if !need_input_grad {
        return Vec::new();
    }
    let mut d_col = vec![0.0; inner * out_len];
    gemm(
        inner,
        spec.cout,
        out_len,
        w,
        (1, inner as isize),
        d_out,
        (out_len as isize, 1),
        0.0,
        &mut d_col,
    );
    col2im(&d_col, len, out_len, spec)
}

fn relu_in_place(v: &mut [f64]) {
    v.iter_mut().for_each(|x| *x = x.max(0.0));
}

/// Zeroes gradient entries where the post-ReLU activation is not positive.
fn relu_mask(grad: &mut [f64], activation: &[f64]) {
    for (g, a) in grad.iter_mut().zip(activation) {
        if *a <= 0.0 {
            *g = 0.0;
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn mean_rows(v: &[f64], len: usize) -> Vec<f64> {
    v.chunks_exact(len)
        .map(|r| r.iter().sum::<f64>() / len as f64)
        .collect()
}

pub fn forward(
    params: &NetworkParams,
    x: &[f32],
) -> Result<(NetworkOutput, ForwardCache), ModelError> {
    forward_gated(params, x, None)
}

/// On/off state of every ReLU unit in the trunk, in evaluation order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GatePattern(Vec<Vec<bool>>);

impl GatePattern {
    pub fn differing_units(&self, other: &GatePattern) -> usize {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| a.iter().zip(b).filter(|(x, y)| x != y).count())
            .sum()
    }
}

struct Activation<'g> {
    frozen: Option<&'g GatePattern>,
    site: usize,
}

impl Activation<'_> {
    /// ReLU, or a fixed pass/block pattern when gates are frozen.
    fn apply(&mut self, v: &mut [f64]) {
        match self.frozen {
            None => relu_in_place(v),
            Some(GatePattern(masks)) => {
                for (x, &open) in v.iter_mut().zip(&masks[self.site]) {
                    if !open {
                        *x = 0.0;
                    }
                }
            }
        }
        self.site += 1;
    }
}

/// Forward pass; with `gates` the ReLU on/off pattern is taken from a previous
/// pass instead of the sign of the pre-activations, which makes the network
/// linear in each layer's weights around that pattern.
pub fn forward_gated(
    params: &NetworkParams,
    x: &[f32],
    gates: Option<&GatePattern>,
) -> Result<(NetworkOutput, ForwardCache), ModelError> {
    let expected = NUM_MICS * RIR_TAPS;
    if x.len() != expected {
        return Err(ModelError::ShapeMismatch {
            found: x.len(),
            expected,
        });
    }
    let t = &params.tensors;
    let mut act = Activation {
        frozen: gates,
        site: 0,
    };
    let input: Vec<f64> = x.iter().map(|&v| f64::from(v)).collect();

    let (mut stem, mut len) = conv_forward(
        &input,
        RIR_TAPS,
        &t[STEM_IDX].data,
        &t[STEM_IDX + 1].data,
        &STEM,
    );
    act.apply(&mut stem);

    let mut stages = Vec::with_capacity(STAGES);
    for s in 0..STAGES {
        let h = stages.last().map_or(&stem, |st: &[Vec<f64>; 3]| &st[2]);
        let (ia, ib, id) = (res_a_idx(s), res_b_idx(s), down_idx(s));
        let (mut a, _) = conv_forward(h, len, &t[ia].data, &t[ia + 1].data, &RES);
        act.apply(&mut a);
        let (mut r, _) = conv_forward(&a, len, &t[ib].data, &t[ib + 1].data, &RES);
        r.iter_mut().zip(h).for_each(|(rv, hv)| *rv += hv);
        act.apply(&mut r);
        let (mut down, out_len) = conv_forward(&r, len, &t[id].data, &t[id + 1].data, &DOWN);
        act.apply(&mut down);
        stages.push([a, r, down]);
        len = out_len;
    }
    debug_assert_eq!(len, HEAD_FRAMES);
    let features = &stages[STAGES - 1][2];

    let (wpe, _) = conv_forward(features, len, &t[WPE_IDX].data, &t[WPE_IDX + 1].data, &WPE);
    let pooled = mean_rows(&wpe, len);
    let (logits, _) = conv_forward(
        features,
        len,
        &t[EVAL_IDX].data,
        &t[EVAL_IDX + 1].data,
        &EVAL,
    );
    let logits = mean_rows(&logits, len);

    let mut a_tilde = [[0.0; WALL_PARAMS]; MAX_WALLS];
    let mut p_hat = [0.0; MAX_WALLS];
    let mut a_hat = [[0.0; WALL_PARAMS]; MAX_WALLS];
    for w in 0..MAX_WALLS {
        p_hat[w] = sigmoid(logits[w]);
        for j in 0..WALL_PARAMS {
            a_tilde[w][j] = pooled[w * WALL_PARAMS + j];
            a_hat[w][j] = p_hat[w] * a_tilde[w][j];
        }
    }
    let cache = ForwardCache {
        fingerprint: params.fingerprint(),
        input,
        stem,
        stages,
        a_tilde,
        p_hat,
    };
    Ok((
        NetworkOutput {
            a_tilde,
            p_hat,
            a_hat,
        },
        cache,
    ))
}

impl ForwardCache {
    /// The ReLU pattern of this pass (units with positive output are open).
    pub fn gate_pattern(&self) -> GatePattern {
        let open = |v: &Vec<f64>| v.iter().map(|&x| x > 0.0).collect();
        let mut masks = vec![open(&self.stem)];
        for stage in &self.stages {
            masks.extend(stage.iter().map(open));
        }
        GatePattern(masks)
    }
}

/// Upstream gradients of a scalar loss with respect to the network outputs.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct OutputGrad {
    pub d_a_hat: [[f64; WALL_PARAMS]; MAX_WALLS],
    /// Direct dependence on the probabilities, not counting the path via `a_hat`.
    pub d_p_hat: [f64; MAX_WALLS],
}

pub fn backward(
    params: &NetworkParams,
    cache: &ForwardCache,
    d_out: &OutputGrad,
) -> Result<NetworkParams, ModelError> {
    if cache.fingerprint != params.fingerprint() {
        return Err(ModelError::CacheMismatch);
    }
    let t = &params.tensors;
    let mut grads = params.zeros_like();
    let len = HEAD_FRAMES;

    // a_hat = diag(p) a_tilde, p = sigmoid(mean(eval conv))
    let mut d_pooled = vec![0.0; MAX_WALLS * WALL_PARAMS];
    let mut d_logit = vec![0.0; MAX_WALLS];
    for w in 0..MAX_WALLS {
        let p = cache.p_hat[w];
        let mut dp = d_out.d_p_hat[w];
        for j in 0..WALL_PARAMS {
            d_pooled[w * WALL_PARAMS + j] = p * d_out.d_a_hat[w][j];
            dp += d_out.d_a_hat[w][j] * cache.a_tilde[w][j];
        }
        d_logit[w] = dp * p * (1.0 - p);
    }
    let spread = |d: &[f64]| -> Vec<f64> {
        d.iter()
            .flat_map(|&v| std::iter::repeat_n(v / len as f64, len))
            .collect()
    };

    let features = &cache.stages[STAGES - 1][2];
    let mut d_features = {
        let (w, rest) = grads.tensors.split_at_mut(WPE_IDX + 1);
        conv_backward(
            features,
            len,
            &t[WPE_IDX].data,
            &spread(&d_pooled),
            &WPE,
            &mut w[WPE_IDX].data,
            &mut rest[0].data,
            true,
        )
    };
    {
        let (w, rest) = grads.tensors.split_at_mut(EVAL_IDX + 1);
        let d = conv_backward(
            features,
            len,
            &t[EVAL_IDX].data,
            &spread(&d_logit),
            &EVAL,
            &mut w[EVAL_IDX].data,
            &mut rest[0].data,
            true,
        );
        d_features.iter_mut().zip(d).for_each(|(a, b)| *a += b);
    }

    let mut d_down = d_features;
    let mut len = len;
    for s in (0..STAGES).rev() {
        let [a, r, down] = &cache.stages[s];
        let h = if s == 0 {
            &cache.stem
        } else {
            &cache.stages[s - 1][2]
        };
        let in_len = len * 2;
        let (ia, ib, id) = (res_a_idx(s), res_b_idx(s), down_idx(s));

        relu_mask(&mut d_down, down);
        let mut d_r = {
            let (w, rest) = grads.tensors.split_at_mut(id + 1);
            conv_backward(
                r,
                in_len,
                &t[id].data,
                &d_down,
                &DOWN,
                &mut w[id].data,
                &mut rest[0].data,
                true,
            )
        };
        relu_mask(&mut d_r, r);
        let mut d_a = {
            let (w, rest) = grads.tensors.split_at_mut(ib + 1);
            conv_backward(
                a,
                in_len,
                &t[ib].data,
                &d_r,
                &RES,
                &mut w[ib].data,
                &mut rest[0].data,
                true,
            )
        };
        relu_mask(&mut d_a, a);
        let d_h_branch = {
            let (w, rest) = grads.tensors.split_at_mut(ia + 1);
            conv_backward(
                h,
                in_len,
                &t[ia].data,
                &d_a,
                &RES,
                &mut w[ia].data,
                &mut rest[0].data,
                true,
            )
        };
        // skip connection
        d_down = d_r.iter().zip(d_h_branch).map(|(a, b)| a + b).collect();
        len = in_len;
    }

    relu_mask(&mut d_down, &cache.stem);
    let (w, rest) = grads.tensors.split_at_mut(STEM_IDX + 1);
    conv_backward(
        &cache.input,
        RIR_TAPS,
        &t[STEM_IDX].data,
        &d_down,
        &STEM,
        &mut w[STEM_IDX].data,
        &mut rest[0].data,
        false,
    );
    Ok(grads)
}

pub fn save_checkpoint(path: &Path, params: &NetworkParams) -> Result<(), ModelError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(&mut w, params)?;
    w.flush()?;
    Ok(())
}

pub fn write_checkpoint(w: &mut impl Write, params: &NetworkParams) -> io::Result<()> {
    w.write_all(&CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(params.tensors.len() as u32).to_le_bytes())?;
    for t in &params.tensors {
        w.write_all(&(t.name.len() as u16).to_le_bytes())?;
        w.write_all(t.name.as_bytes())?;
        w.write_all(&[t.dims.len() as u8])?;
        for &d in &t.dims {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        let bytes: Vec<u8> = t
            .data
            .iter()
            .flat_map(|&v| (v as f32).to_le_bytes())
            .collect();
        w.write_all(&bytes)?;
    }
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<NetworkParams, ModelError> {
    read_checkpoint(&mut BufReader::new(File::open(path)?))
}

pub fn read_checkpoint(r: &mut impl Read) -> Result<NetworkParams, ModelError> {
    fn take<const N: usize>(r: &mut impl Read) -> Result<[u8; N], ModelError> {
        let mut buf = [0u8; N];
        r.read_exact(&mut buf).map_err(|e| match e.kind() {
            io::ErrorKind::UnexpectedEof => ModelError::Truncated,
            _ => ModelError::Io(e),
        })?;
        Ok(buf)
    }
    let magic = take::<4>(r)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(ModelError::BadMagic(magic));
    }
    let version = u32::from_le_bytes(take(r)?);
    if version != CHECKPOINT_VERSION {
        return Err(ModelError::VersionMismatch {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let mut params = NetworkParams::zeros();
    let count = u32::from_le_bytes(take(r)?) as usize;
    if count != params.tensors.len() {
        return Err(ModelError::ArchitectureMismatch(format!(
            "{count} tensors, expected {}",
            params.tensors.len()
        )));
    }
    for t in &mut params.tensors {
        let name_len = u16::from_le_bytes(take(r)?) as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name).map_err(|_| ModelError::Truncated)?;
        let rank = take::<1>(r)?[0] as usize;
        let dims = (0..rank)
            .map(|_| Ok(u32::from_le_bytes(take(r)?) as usize))
            .collect::<Result<Vec<_>, ModelError>>()?;
        if name != t.name.as_bytes() || dims != t.dims {
            return Err(ModelError::ArchitectureMismatch(format!(
                "found tensor `{}` {:?}, expected `{}` {:?}",
                String::from_utf8_lossy(&name),
                dims,
                t.name,
                t.dims
            )));
        }
        let mut bytes = vec![0u8; t.data.len() * 4];
        r.read_exact(&mut bytes)
            .map_err(|_| ModelError::Truncated)?;
        for (v, c) in t.data.iter_mut().zip(bytes.chunks_exact(4)) {
            *v = f64::from(f32::from_le_bytes(c.try_into().unwrap()));
        }
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_input(seed: u64) -> Vec<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..NUM_MICS * RIR_TAPS)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect()
    }

    #[test]
    fn parameter_count() {
        let p = NetworkParams::zeros();
        assert_eq!(p.param_count(), PARAM_COUNT);
        assert_eq!(p.tensors.len(), 30);
        assert_eq!(p.tensors[0].dims, vec![64, 32, 7]);
        assert_eq!(p.tensors[WPE_IDX].dims, vec![32, 64, 1]);
        assert_eq!(p.tensors[EVAL_IDX].dims, vec![8, 64, 1]);
    }

    #[test]
    fn init_bounds_and_determinism() {
        let p = init_params(3);
        assert_eq!(p, init_params(3));
        assert_ne!(p, init_params(4));
        let bound = (6.0f64 / (32.0 * 7.0)).sqrt();
        assert!((bound - 0.1637).abs() < 1e-4);
        assert!(p.tensors[0].data.iter().all(|w| w.abs() <= bound));
        assert!(p.tensors[1].data.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn zero_params_give_half_probabilities() {
        let (out, _) = forward(&NetworkParams::zeros(), &random_input(0)).unwrap();
        assert_eq!(out.a_tilde, [[0.0; 4]; 8]);
        assert_eq!(out.p_hat, [0.5; 8]);
        assert_eq!(out.a_hat, [[0.0; 4]; 8]);
    }

    #[test]
    fn weighted_output_is_exact() {
        let params = init_params(1);
        let (out, _) = forward(&params, &random_input(1)).unwrap();
        for w in 0..8 {
            assert!(out.p_hat[w] > 0.0 && out.p_hat[w] < 1.0);
            for j in 0..4 {
                assert_eq!(out.a_hat[w][j], out.p_hat[w] * out.a_tilde[w][j]);
            }
        }
    }

    #[test]
    fn wrong_input_shape() {
        assert!(matches!(
            forward(&NetworkParams::zeros(), &[0.0; 10]),
            Err(ModelError::ShapeMismatch { found: 10, .. })
        ));
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let params = init_params(2);
        let (_, cache) = forward(&params, &random_input(2)).unwrap();
        let grads = backward(&params, &cache, &OutputGrad::default()).unwrap();
        assert!(grads.values().all(|&g| g == 0.0));
    }

    #[test]
    fn stale_cache_is_rejected() {
        let params = init_params(2);
        let (_, cache) = forward(&params, &random_input(2)).unwrap();
        let other = init_params(5);
        assert!(matches!(
            backward(&other, &cache, &OutputGrad::default()),
            Err(ModelError::CacheMismatch)
        ));
    }

    #[test]
    fn checkpoint_round_trip_is_f32_exact() {
        let params = init_params(9);
        let mut bytes = Vec::new();
        write_checkpoint(&mut bytes, &params).unwrap();
        let loaded = read_checkpoint(&mut bytes.as_slice()).unwrap();
        for (a, b) in params.values().zip(loaded.values()) {
            assert_eq!(*a as f32, *b as f32);
        }
        let mut again = Vec::new();
        write_checkpoint(&mut again, &loaded).unwrap();
        assert_eq!(bytes, again);
    }

    #[test]
    fn checkpoint_errors() {
        let mut bytes = Vec::new();
        write_checkpoint(&mut bytes, &init_params(0)).unwrap();
        let mut stale = bytes.clone();
        stale[4] = 7;
        assert!(matches!(
            read_checkpoint(&mut stale.as_slice()),
            Err(ModelError::VersionMismatch { found: 7, .. })
        ));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            read_checkpoint(&mut bad.as_slice()),
            Err(ModelError::BadMagic(_))
        ));
        assert!(matches!(
            read_checkpoint(&mut &bytes[..bytes.len() - 3]),
            Err(ModelError::Truncated)
        ));
    }
}
