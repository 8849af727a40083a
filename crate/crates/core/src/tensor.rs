//! Tensor arithmetic with reverse-mode automatic differentiation.
//!
//! A [`Tape`] owns every tensor created during one forward pass as an arena of
//! nodes in topological order. [`Tape::backward`] walks the arena in reverse
//! and accumulates gradients into the leaves that asked for them. One tape per
//! forward pass; drop it after the step.
//!
//! Storage is 32-bit floats, row-major, NCHW for images. Every reduction
//! (matmul, convolution, norms, losses) accumulates in 64-bit before rounding
//! the result back to 32-bit, so finite-difference checks stay meaningful.
//! No op broadcasts except the documented bias adds.

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Handle to a tensor node in its tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorId(u32);

impl TensorId {
    fn idx(self) -> usize {
        self.0 as usize
    }
}

/// One node in the tape arena: a value plus its gradient slot.
#[derive(Debug)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
    /// Leaf flag: this tensor wants its gradient filled by `backward`.
    pub requires_grad: bool,
    /// Set once `backward` has reached this node.
    pub grad: Option<Vec<f32>>,
    /// True when this node or any ancestor requires a gradient.
    needs_grad: bool,
}

impl Tensor {
    pub fn numel(&self) -> usize {
        self.data.len()
    }
}

/// Recorded operation with enough context to replay its backward rule.
#[derive(Debug)]
enum Op {
    Leaf,
    /// out[i] = x[map[i]]; covers every static permutation (patch extraction,
    /// window partition/reverse, cyclic shift, transposes, element picks).
    Gather { x: TensorId, map: Vec<u32> },
    Concat { parts: Vec<TensorId>, axis: usize },
    Reshape { x: TensorId },
    /// `[M,K]`·`[K,N]`
    MatMul { a: TensorId, b: TensorId },
    /// `[N,M,K]`·`[N,K,P]` batched
    BatchMatMul { a: TensorId, b: TensorId },
    /// x[B,in]·w[out,in]ᵀ + bias[out]
    Linear { x: TensorId, w: TensorId, b: TensorId },
    Add { a: TensorId, b: TensorId },
    Mul { a: TensorId, b: TensorId },
    /// x[..,C] + bias[C] over the last axis (documented broadcast).
    AddBias { x: TensorId, b: TensorId },
    ScalarMul { x: TensorId, c: f32 },
    Relu { x: TensorId },
    Gelu { x: TensorId },
    /// Last-axis softmax, max-shifted.
    Softmax { x: TensorId },
    LayerNorm { x: TensorId, gamma: TensorId, beta: TensorId, eps: f32 },
    Conv2d { x: TensorId, w: TensorId, b: TensorId, stride: usize, pad: usize },
    /// 2x2/stride-2 max pool; argmax holds the flat input index per output
    /// element, or u32::MAX where a zero pad cell won.
    MaxPool2d { x: TensorId, argmax: Vec<u32> },
    /// `[B,C,H,W]` -> `[B,C]` spatial mean.
    GlobalAvgPool { x: TensorId },
    /// `[B,T,C]` -> `[B,C]` mean over tokens.
    TokenMean { x: TensorId },
    SumAll { x: TensorId },
    /// Mean softmax cross-entropy against class indices.
    CrossEntropy { logits: TensorId, labels: Vec<usize> },
    /// Mean sigmoid BCE against per-class targets in `[0,1]`.
    BceWithLogits { logits: TensorId, targets: Vec<f32> },
}

/// Arena of tensors recorded during one forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Tensor>,
    ops: Vec<Op>,
    consumed: bool,
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return Err(Error::InvalidShape("empty shape".into()));
    }
    let mut numel: usize = 1;
    for &e in shape {
        if e == 0 {
            return Err(Error::InvalidShape(format!("zero extent in {shape:?}")));
        }
        numel = numel
            .checked_mul(e)
            .ok_or_else(|| Error::InvalidShape(format!("shape {shape:?} overflows")))?;
    }
    Ok(numel)
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<f32>, op: Op, needs_grad: bool) -> TensorId {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        debug_assert!(
            data.iter().all(|v| v.is_finite()),
            "non-finite value produced by {op:?}"
        );
        let id = TensorId(self.nodes.len() as u32);
        self.nodes.push(Tensor {
            shape,
            data,
            requires_grad: false,
            grad: None,
            needs_grad,
        });
        self.ops.push(op);
        id
    }

    fn node(&self, id: TensorId) -> &Tensor {
        &self.nodes[id.idx()]
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        &self.node(id).shape
    }

    pub fn data(&self, id: TensorId) -> &[f32] {
        &self.node(id).data
    }

    pub fn grad(&self, id: TensorId) -> Option<&[f32]> {
        self.node(id).grad.as_deref()
    }

    fn needs(&self, id: TensorId) -> bool {
        self.node(id).needs_grad
    }

    // ── Creation ─────────────────────────────────────────────────────────

    pub fn zeros(&mut self, shape: &[usize]) -> Result<TensorId> {
        let n = check_shape(shape)?;
        Ok(self.push(shape.to_vec(), vec![0.0; n], Op::Leaf, false))
    }

    pub fn constant(&mut self, shape: &[usize], c: f32) -> Result<TensorId> {
        let n = check_shape(shape)?;
        Ok(self.push(shape.to_vec(), vec![c; n], Op::Leaf, false))
    }

    /// Normal init; draws consume `rng` in row-major element order.
    pub fn normal(&mut self, shape: &[usize], mean: f32, std: f32, rng: &mut Rng) -> Result<TensorId> {
        let n = check_shape(shape)?;
        let data: Vec<f32> = (0..n).map(|_| rng.normal(mean, std)).collect();
        Ok(self.push(shape.to_vec(), data, Op::Leaf, false))
    }

    /// Insert external data as a leaf. Set `requires_grad` to have `backward`
    /// fill its gradient.
    pub fn leaf(&mut self, shape: &[usize], data: Vec<f32>, requires_grad: bool) -> Result<TensorId> {
        let n = check_shape(shape)?;
        if n != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "leaf data has {} elements, shape {shape:?} wants {n}",
                data.len()
            )));
        }
        let id = self.push(shape.to_vec(), data, Op::Leaf, requires_grad);
        self.nodes[id.idx()].requires_grad = requires_grad;
        Ok(id)
    }

    // ── Data movement ────────────────────────────────────────────────────

    /// `out[i] = x[map[i]]`. The backward rule scatter-adds, so maps may repeat
    /// indices; the model only uses permutations and single-element picks.
    pub fn gather(&mut self, x: TensorId, map: Vec<u32>, out_shape: &[usize]) -> Result<TensorId> {
        let n = check_shape(out_shape)?;
        if n != map.len() {
            return Err(Error::ShapeMismatch(format!(
                "gather map has {} entries, shape {out_shape:?} wants {n}",
                map.len()
            )));
        }
        let src = &self.node(x).data;
        let limit = src.len() as u32;
        if map.iter().any(|&i| i >= limit) {
            return Err(Error::ShapeMismatch("gather index out of range".into()));
        }
        let data: Vec<f32> = map.iter().map(|&i| src[i as usize]).collect();
        let needs = self.needs(x);
        Ok(self.push(out_shape.to_vec(), data, Op::Gather { x, map }, needs))
    }

    pub fn concat(&mut self, parts: &[TensorId], axis: usize) -> Result<TensorId> {
        if parts.is_empty() {
            return Err(Error::Contract("concat of zero tensors".into()));
        }
        let first = self.shape(parts[0]).to_vec();
        if axis >= first.len() {
            return Err(Error::ShapeMismatch(format!(
                "concat axis {axis} out of range for rank {}",
                first.len()
            )));
        }
        let mut axis_total = 0usize;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != first.len()
                || s.iter().zip(&first).enumerate().any(|(i, (a, b))| i != axis && a != b)
            {
                return Err(Error::ShapeMismatch(format!(
                    "concat shapes {:?} and {:?} differ off-axis",
                    first,
                    s
                )));
            }
            axis_total += s[axis];
        }
        let mut out_shape = first.clone();
        out_shape[axis] = axis_total;
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut data = vec![0.0f32; outer * axis_total * inner];
        let mut offset = 0usize;
        for &p in parts {
            let s_axis = self.shape(p)[axis];
            let block = s_axis * inner;
            let src = &self.node(p).data;
            for o in 0..outer {
                let dst_at = o * axis_total * inner + offset * inner;
                data[dst_at..dst_at + block].copy_from_slice(&src[o * block..(o + 1) * block]);
            }
            offset += s_axis;
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(out_shape, data, Op::Concat { parts: parts.to_vec(), axis }, needs))
    }

    pub fn reshape(&mut self, x: TensorId, shape: &[usize]) -> Result<TensorId> {
        let n = check_shape(shape)?;
        if n != self.node(x).numel() {
            return Err(Error::ShapeMismatch(format!(
                "reshape {:?} -> {shape:?} changes element count",
                self.shape(x)
            )));
        }
        let data = self.node(x).data.clone();
        let needs = self.needs(x);
        Ok(self.push(shape.to_vec(), data, Op::Reshape { x }, needs))
    }

    // ── Linear algebra ───────────────────────────────────────────────────

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 {
            return Err(Error::ShapeMismatch(format!("matmul wants 2-D, got {sa:?} x {sb:?}")));
        }
        let (m, k, k2, n) = (sa[0], sa[1], sb[0], sb[1]);
        if k != k2 {
            return Err(Error::ShapeMismatch(format!("matmul inner extents {k} vs {k2}")));
        }
        let mut out = vec![0.0f32; m * n];
        mm_nn(&self.node(a).data, &self.node(b).data, m, k, n, &mut out);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(vec![m, n], out, Op::MatMul { a, b }, needs))
    }

    pub fn bmm(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return Err(Error::ShapeMismatch(format!("bmm shapes {sa:?} x {sb:?}")));
        }
        let (nb, m, k, p) = (sa[0], sa[1], sa[2], sb[2]);
        let mut out = vec![0.0f32; nb * m * p];
        for i in 0..nb {
            mm_nn(
                &self.node(a).data[i * m * k..(i + 1) * m * k],
                &self.node(b).data[i * k * p..(i + 1) * k * p],
                m,
                k,
                p,
                &mut out[i * m * p..(i + 1) * m * p],
            );
        }
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(vec![nb, m, p], out, Op::BatchMatMul { a, b }, needs))
    }

    /// Dense layer: `x[B,in] · w[out,in]ᵀ + bias[out]`.
    pub fn linear(&mut self, x: TensorId, w: TensorId, b: TensorId) -> Result<TensorId> {
        let (sx, sw, sb) = (self.shape(x), self.shape(w), self.shape(b));
        if sx.len() != 2 || sw.len() != 2 || sb.len() != 1 || sx[1] != sw[1] || sw[0] != sb[0] {
            return Err(Error::ShapeMismatch(format!(
                "linear shapes x{sx:?} w{sw:?} b{sb:?}"
            )));
        }
        let (batch, in_dim, out_dim) = (sx[0], sx[1], sw[0]);
        let mut out = vec![0.0f32; batch * out_dim];
        // x·wᵀ: rows of x against rows of w.
        mm_nt(&self.node(x).data, &self.node(w).data, batch, in_dim, out_dim, &mut out);
        let bias = &self.node(b).data;
        for r in 0..batch {
            for c in 0..out_dim {
                out[r * out_dim + c] += bias[c];
            }
        }
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(vec![batch, out_dim], out, Op::Linear { x, w, b }, needs))
    }

    // ── Elementwise ──────────────────────────────────────────────────────

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::ShapeMismatch(format!(
                "add shapes {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let data: Vec<f32> = self
            .node(a)
            .data
            .iter()
            .zip(&self.node(b).data)
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.shape(a).to_vec();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(shape, data, Op::Add { a, b }, needs))
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::ShapeMismatch(format!(
                "mul shapes {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let data: Vec<f32> = self
            .node(a)
            .data
            .iter()
            .zip(&self.node(b).data)
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.shape(a).to_vec();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(shape, data, Op::Mul { a, b }, needs))
    }

    /// The one sanctioned broadcast: `bias[C]` added over the last axis.
    pub fn add_bias(&mut self, x: TensorId, b: TensorId) -> Result<TensorId> {
        let (sx, sb) = (self.shape(x), self.shape(b));
        if sb.len() != 1 || sx.last() != Some(&sb[0]) {
            return Err(Error::ShapeMismatch(format!("add_bias x{sx:?} b{sb:?}")));
        }
        let c = sb[0];
        let bias = self.node(b).data.clone();
        let data: Vec<f32> = self
            .node(x)
            .data
            .iter()
            .enumerate()
            .map(|(i, v)| v + bias[i % c])
            .collect();
        let shape = sx.to_vec();
        let needs = self.needs(x) || self.needs(b);
        Ok(self.push(shape, data, Op::AddBias { x, b }, needs))
    }

    pub fn scalar_mul(&mut self, x: TensorId, c: f32) -> Result<TensorId> {
        let data: Vec<f32> = self.node(x).data.iter().map(|v| v * c).collect();
        let shape = self.shape(x).to_vec();
        let needs = self.needs(x);
        Ok(self.push(shape, data, Op::ScalarMul { x, c }, needs))
    }

    pub fn relu(&mut self, x: TensorId) -> Result<TensorId> {
        let data: Vec<f32> = self.node(x).data.iter().map(|v| v.max(0.0)).collect();
        let shape = self.shape(x).to_vec();
        let needs = self.needs(x);
        Ok(self.push(shape, data, Op::Relu { x }, needs))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: TensorId) -> Result<TensorId> {
        let data: Vec<f32> = self
            .node(x)
            .data
            .iter()
            .map(|&v| {
                let x = v as f64;
                let inner = SQRT_2_OVER_PI * (x + 0.044715 * x * x * x);
                (0.5 * x * (1.0 + inner.tanh())) as f32
            })
            .collect();
        let shape = self.shape(x).to_vec();
        let needs = self.needs(x);
        Ok(self.push(shape, data, Op::Gelu { x }, needs))
    }

    // ── Normalization and reductions ─────────────────────────────────────

    /// Softmax along the last axis, stabilized by max subtraction.
    pub fn softmax(&mut self, x: TensorId) -> Result<TensorId> {
        let shape = self.shape(x).to_vec();
        let c = *shape.last().expect("rank >= 1");
        let src = &self.node(x).data;
        let mut data = vec![0.0f32; src.len()];
        for (slice_in, slice_out) in src.chunks_exact(c).zip(data.chunks_exact_mut(c)) {
            let max = slice_in.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64));
            let mut sum = 0.0f64;
            let mut exps = vec![0.0f64; c];
            for (e, &v) in exps.iter_mut().zip(slice_in) {
                *e = (v as f64 - max).exp();
                sum += *e;
            }
            for (o, e) in slice_out.iter_mut().zip(&exps) {
                *o = (e / sum) as f32;
            }
        }
        let needs = self.needs(x);
        Ok(self.push(shape, data, Op::Softmax { x }, needs))
    }

    /// Layer norm over the last axis, then affine gamma/beta.
    pub fn layer_norm(&mut self, x: TensorId, gamma: TensorId, beta: TensorId, eps: f32) -> Result<TensorId> {
        let shape = self.shape(x).to_vec();
        let c = *shape.last().expect("rank >= 1");
        let (sg, sb) = (self.shape(gamma), self.shape(beta));
        if sg != [c] || sb != [c] {
            return Err(Error::ShapeMismatch(format!(
                "layer_norm gamma {sg:?} / beta {sb:?} vs feature dim {c}"
            )));
        }
        if eps <= 0.0 {
            return Err(Error::Contract("layer_norm eps must be positive".into()));
        }
        let src = &self.node(x).data;
        let g = &self.node(gamma).data;
        let b = &self.node(beta).data;
        let mut data = vec![0.0f32; src.len()];
        for (slice_in, slice_out) in src.chunks_exact(c).zip(data.chunks_exact_mut(c)) {
            let mean = slice_in.iter().map(|&v| v as f64).sum::<f64>() / c as f64;
            let var = slice_in
                .iter()
                .map(|&v| {
                    let d = v as f64 - mean;
                    d * d
                })
                .sum::<f64>()
                / c as f64;
            let inv_std = 1.0 / (var + eps as f64).sqrt();
            for i in 0..c {
                let xhat = (slice_in[i] as f64 - mean) * inv_std;
                slice_out[i] = (xhat * g[i] as f64 + b[i] as f64) as f32;
            }
        }
        let needs = self.needs(x) || self.needs(gamma) || self.needs(beta);
        Ok(self.push(shape, data, Op::LayerNorm { x, gamma, beta, eps }, needs))
    }

    // ── Spatial ops ──────────────────────────────────────────────────────

    /// Cross-correlation (no kernel flip) plus per-channel bias.
    /// `x[B,C,H,W]`, `w[outC,C,kH,kW]`, `b[outC]`.
    pub fn conv2d(&mut self, x: TensorId, w: TensorId, b: TensorId, stride: usize, pad: usize) -> Result<TensorId> {
        let (sx, sw, sb) = (self.shape(x), self.shape(w), self.shape(b));
        if sx.len() != 4 || sw.len() != 4 || sb.len() != 1 {
            return Err(Error::ShapeMismatch(format!("conv2d ranks x{sx:?} w{sw:?} b{sb:?}")));
        }
        if stride == 0 {
            return Err(Error::Contract("conv2d stride must be >= 1".into()));
        }
        let (batch, in_c, h, wd) = (sx[0], sx[1], sx[2], sx[3]);
        let (out_c, wc, kh, kw) = (sw[0], sw[1], sw[2], sw[3]);
        if wc != in_c {
            return Err(Error::ShapeMismatch(format!(
                "conv2d input has {in_c} channels, kernel expects {wc}"
            )));
        }
        if sb[0] != out_c {
            return Err(Error::ShapeMismatch(format!(
                "conv2d bias {} vs out channels {out_c}",
                sb[0]
            )));
        }
        if h + 2 * pad < kh || wd + 2 * pad < kw {
            return Err(Error::ShapeMismatch("conv2d kernel larger than padded input".into()));
        }
        if (h + 2 * pad - kh) % stride != 0 || (wd + 2 * pad - kw) % stride != 0 {
            return Err(Error::ShapeMismatch(format!(
                "conv2d output extent not integral for input {h}x{wd}, k{kh}x{kw}, stride {stride}, pad {pad}"
            )));
        }
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (wd + 2 * pad - kw) / stride + 1;

        let xs = &self.node(x).data;
        let ws = &self.node(w).data;
        let bs = &self.node(b).data;
        let mut out = vec![0.0f32; batch * out_c * oh * ow];
        let mut acc = vec![0.0f64; oh * ow];
        for bi in 0..batch {
            for oc in 0..out_c {
                acc.iter_mut().for_each(|v| *v = bs[oc] as f64);
                for ic in 0..in_c {
                    let x_plane = &xs[(bi * in_c + ic) * h * wd..(bi * in_c + ic + 1) * h * wd];
                    for ki in 0..kh {
                        for kj in 0..kw {
                            let wv = ws[((oc * in_c + ic) * kh + ki) * kw + kj] as f64;
                            for oi in 0..oh {
                                let ih = (oi * stride + ki) as isize - pad as isize;
                                if ih < 0 || ih >= h as isize {
                                    continue;
                                }
                                let row = &x_plane[ih as usize * wd..(ih as usize + 1) * wd];
                                let arow = &mut acc[oi * ow..(oi + 1) * ow];
                                for oj in 0..ow {
                                    let iw = (oj * stride + kj) as isize - pad as isize;
                                    if iw < 0 || iw >= wd as isize {
                                        continue;
                                    }
                                    arow[oj] += wv * row[iw as usize] as f64;
                                }
                            }
                        }
                    }
                }
                let dst = &mut out[(bi * out_c + oc) * oh * ow..(bi * out_c + oc + 1) * oh * ow];
                for (d, a) in dst.iter_mut().zip(&acc) {
                    *d = *a as f32;
                }
            }
        }
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(vec![batch, out_c, oh, ow], out, Op::Conv2d { x, w, b, stride, pad }, needs))
    }

    /// 2x2 max pool, stride 2. Odd extents are zero-padded on the right and
    /// bottom. Gradients route to the first-occurring maximum in row-major
    /// window order; a winning pad cell routes nowhere.
    pub fn maxpool2d(&mut self, x: TensorId) -> Result<TensorId> {
        let sx = self.shape(x);
        if sx.len() != 4 {
            return Err(Error::ShapeMismatch(format!("maxpool2d wants 4-D, got {sx:?}")));
        }
        let (batch, chans, h, w) = (sx[0], sx[1], sx[2], sx[3]);
        let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
        let src = &self.node(x).data;
        let mut out = vec![0.0f32; batch * chans * oh * ow];
        let mut argmax = vec![u32::MAX; out.len()];
        for bc in 0..batch * chans {
            let plane = &src[bc * h * w..(bc + 1) * h * w];
            for oi in 0..oh {
                for oj in 0..ow {
                    let mut best = f32::NEG_INFINITY;
                    let mut best_idx = u32::MAX;
                    for di in 0..2 {
                        for dj in 0..2 {
                            let (ii, jj) = (oi * 2 + di, oj * 2 + dj);
                            let v = if ii < h && jj < w { plane[ii * w + jj] } else { 0.0 };
                            if v > best {
                                best = v;
                                best_idx = if ii < h && jj < w {
                                    (bc * h * w + ii * w + jj) as u32
                                } else {
                                    u32::MAX
                                };
                            }
                        }
                    }
                    let at = bc * oh * ow + oi * ow + oj;
                    out[at] = best;
                    argmax[at] = best_idx;
                }
            }
        }
        let needs = self.needs(x);
        Ok(self.push(vec![batch, chans, oh, ow], out, Op::MaxPool2d { x, argmax }, needs))
    }

    /// Spatial mean per channel: `[B,C,H,W]` -> `[B,C]`.
    pub fn global_avg_pool(&mut self, x: TensorId) -> Result<TensorId> {
        let sx = self.shape(x);
        if sx.len() != 4 {
            return Err(Error::ShapeMismatch(format!("global_avg_pool wants 4-D, got {sx:?}")));
        }
        let (batch, chans, h, w) = (sx[0], sx[1], sx[2], sx[3]);
        let hw = h * w;
        let src = &self.node(x).data;
        let mut out = vec![0.0f32; batch * chans];
        for bc in 0..batch * chans {
            let sum: f64 = src[bc * hw..(bc + 1) * hw].iter().map(|&v| v as f64).sum();
            out[bc] = (sum / hw as f64) as f32;
        }
        let needs = self.needs(x);
        Ok(self.push(vec![batch, chans], out, Op::GlobalAvgPool { x }, needs))
    }

    /// Mean over the token axis: `[B,T,C]` -> `[B,C]`.
    pub fn token_mean(&mut self, x: TensorId) -> Result<TensorId> {
        let sx = self.shape(x);
        if sx.len() != 3 {
            return Err(Error::ShapeMismatch(format!("token_mean wants 3-D, got {sx:?}")));
        }
        let (batch, toks, chans) = (sx[0], sx[1], sx[2]);
        let src = &self.node(x).data;
        let mut out = vec![0.0f32; batch * chans];
        for bi in 0..batch {
            let mut acc = vec![0.0f64; chans];
            for t in 0..toks {
                let row = &src[(bi * toks + t) * chans..(bi * toks + t + 1) * chans];
                for (a, &v) in acc.iter_mut().zip(row) {
                    *a += v as f64;
                }
            }
            for (o, a) in out[bi * chans..(bi + 1) * chans].iter_mut().zip(&acc) {
                *o = (*a / toks as f64) as f32;
            }
        }
        let needs = self.needs(x);
        Ok(self.push(vec![batch, chans], out, Op::TokenMean { x }, needs))
    }

    /// Sum of all elements -> shape `[1]`.
    pub fn sum_all(&mut self, x: TensorId) -> Result<TensorId> {
        let sum: f64 = self.node(x).data.iter().map(|&v| v as f64).sum();
        let needs = self.needs(x);
        Ok(self.push(vec![1], vec![sum as f32], Op::SumAll { x }, needs))
    }

    // ── Losses ───────────────────────────────────────────────────────────

    /// Mean over the batch of -log softmax(logits)`[label]`.
    pub fn cross_entropy(&mut self, logits: TensorId, labels: &[usize]) -> Result<TensorId> {
        let sl = self.shape(logits);
        if sl.len() != 2 {
            return Err(Error::ShapeMismatch(format!("cross_entropy wants [B,K], got {sl:?}")));
        }
        let (batch, k) = (sl[0], sl[1]);
        if labels.len() != batch {
            return Err(Error::ShapeMismatch(format!(
                "{} labels for batch {batch}",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::Data(format!("label {bad} out of range for {k} classes")));
        }
        let src = &self.node(logits).data;
        let mut total = 0.0f64;
        for (row, &label) in src.chunks_exact(k).zip(labels) {
            let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64));
            let lse = max
                + row
                    .iter()
                    .map(|&v| (v as f64 - max).exp())
                    .sum::<f64>()
                    .ln();
            total += lse - row[label] as f64;
        }
        let loss = (total / batch as f64) as f32;
        let needs = self.needs(logits);
        Ok(self.push(
            vec![1],
            vec![loss],
            Op::CrossEntropy { logits, labels: labels.to_vec() },
            needs,
        ))
    }

    /// Mean over batch x classes of the stable sigmoid binary cross-entropy;
    /// the multi-label alternative to `cross_entropy`. `targets` is row-major
    /// `[B,K]` in `[0,1]`.
    pub fn bce_with_logits(&mut self, logits: TensorId, targets: &[f32]) -> Result<TensorId> {
        let sl = self.shape(logits);
        if sl.len() != 2 {
            return Err(Error::ShapeMismatch(format!("bce_with_logits wants [B,K], got {sl:?}")));
        }
        let n = sl[0] * sl[1];
        if targets.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "{} targets for {n} logits",
                targets.len()
            )));
        }
        if targets.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(Error::Data("bce target outside [0,1]".into()));
        }
        let src = &self.node(logits).data;
        let mut total = 0.0f64;
        for (&x, &t) in src.iter().zip(targets) {
            let (x, t) = (x as f64, t as f64);
            total += x.max(0.0) - x * t + (-x.abs()).exp().ln_1p();
        }
        let loss = (total / n as f64) as f32;
        let needs = self.needs(logits);
        Ok(self.push(
            vec![1],
            vec![loss],
            Op::BceWithLogits { logits, targets: targets.to_vec() },
            needs,
        ))
    }

    // ── Backward ─────────────────────────────────────────────────────────

    /// Reverse pass from a scalar loss. Fills `grad` on every leaf created
    /// with `requires_grad`, zeros included for leaves the loss never touched.
    /// A tape can run backward once.
    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        if self.consumed {
            return Err(Error::Contract("tape already ran backward".into()));
        }
        if self.node(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.consumed = true;
        self.nodes[loss.idx()].grad = Some(vec![1.0]);

        for i in (0..self.nodes.len()).rev() {
            if !self.nodes[i].needs_grad || self.nodes[i].grad.is_none() {
                continue;
            }
            let g = self.nodes[i].grad.take().expect("checked above");
            self.step_backward(i, &g);
            // Leaves keep their gradient; interior grads are dropped as we go.
            if matches!(self.ops[i], Op::Leaf) {
                self.nodes[i].grad = Some(g);
            }
        }

        for node in &mut self.nodes {
            if node.requires_grad && node.grad.is_none() {
                node.grad = Some(vec![0.0; node.data.len()]);
            }
        }
        Ok(())
    }

    fn accumulate(&mut self, id: TensorId, contribution: &[f32]) {
        if !self.needs(id) {
            return;
        }
        let node = &mut self.nodes[id.idx()];
        match &mut node.grad {
            Some(g) => {
                for (a, b) in g.iter_mut().zip(contribution) {
                    *a += b;
                }
            }
            None => node.grad = Some(contribution.to_vec()),
        }
    }

    fn accumulate_owned(&mut self, id: TensorId, contribution: Vec<f32>) {
        if !self.needs(id) {
            return;
        }
        let node = &mut self.nodes[id.idx()];
        match &mut node.grad {
            Some(g) => {
                for (a, b) in g.iter_mut().zip(&contribution) {
                    *a += b;
                }
            }
            None => node.grad = Some(contribution),
        }
    }

    fn step_backward(&mut self, i: usize, g: &[f32]) {
        // The ops vec is never mutated during backward; take the op out to
        // appease the borrow checker, then put it back.
        let op = std::mem::replace(&mut self.ops[i], Op::Leaf);
        match &op {
            Op::Leaf => {}

            Op::Gather { x, map } => {
                if self.needs(*x) {
                    let mut dx = vec![0.0f32; self.node(*x).numel()];
                    for (gi, &m) in g.iter().zip(map) {
                        dx[m as usize] += gi;
                    }
                    self.accumulate_owned(*x, dx);
                }
            }

            Op::Concat { parts, axis } => {
                let out_shape = self.nodes[i].shape.clone();
                let outer: usize = out_shape[..*axis].iter().product();
                let inner: usize = out_shape[*axis + 1..].iter().product();
                let axis_total = out_shape[*axis];
                let mut offset = 0usize;
                for &p in parts {
                    let s_axis = self.shape(p)[*axis];
                    let block = s_axis * inner;
                    if self.needs(p) {
                        let mut dp = vec![0.0f32; self.node(p).numel()];
                        for o in 0..outer {
                            let src_at = o * axis_total * inner + offset * inner;
                            dp[o * block..(o + 1) * block]
                                .copy_from_slice(&g[src_at..src_at + block]);
                        }
                        self.accumulate_owned(p, dp);
                    }
                    offset += s_axis;
                }
            }

            Op::Reshape { x } => self.accumulate(*x, g),

            Op::MatMul { a, b } => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                if self.needs(*a) {
                    // dA = dC · Bᵀ
                    let mut da = vec![0.0f32; m * k];
                    mm_nt(g, &self.node(*b).data, m, n, k, &mut da);
                    self.accumulate_owned(*a, da);
                }
                if self.needs(*b) {
                    // dB = Aᵀ · dC
                    let mut db = vec![0.0f32; k * n];
                    mm_tn(&self.node(*a).data, g, k, m, n, &mut db);
                    self.accumulate_owned(*b, db);
                }
            }

            Op::BatchMatMul { a, b } => {
                let (nb, m, k) = (self.shape(*a)[0], self.shape(*a)[1], self.shape(*a)[2]);
                let p = self.shape(*b)[2];
                if self.needs(*a) {
                    let mut da = vec![0.0f32; nb * m * k];
                    for bi in 0..nb {
                        mm_nt(
                            &g[bi * m * p..(bi + 1) * m * p],
                            &self.node(*b).data[bi * k * p..(bi + 1) * k * p],
                            m,
                            p,
                            k,
                            &mut da[bi * m * k..(bi + 1) * m * k],
                        );
                    }
                    self.accumulate_owned(*a, da);
                }
                if self.needs(*b) {
                    let mut db = vec![0.0f32; nb * k * p];
                    for bi in 0..nb {
                        mm_tn(
                            &self.node(*a).data[bi * m * k..(bi + 1) * m * k],
                            &g[bi * m * p..(bi + 1) * m * p],
                            k,
                            m,
                            p,
                            &mut db[bi * k * p..(bi + 1) * k * p],
                        );
                    }
                    self.accumulate_owned(*b, db);
                }
            }

            Op::Linear { x, w, b } => {
                let (batch, in_dim) = (self.shape(*x)[0], self.shape(*x)[1]);
                let out_dim = self.shape(*w)[0];
                if self.needs(*x) {
                    // dX = dY · W
                    let mut dx = vec![0.0f32; batch * in_dim];
                    mm_nn(g, &self.node(*w).data, batch, out_dim, in_dim, &mut dx);
                    self.accumulate_owned(*x, dx);
                }
                if self.needs(*w) {
                    // dW = dYᵀ · X
                    let mut dw = vec![0.0f32; out_dim * in_dim];
                    mm_tn(g, &self.node(*x).data, out_dim, batch, in_dim, &mut dw);
                    self.accumulate_owned(*w, dw);
                }
                if self.needs(*b) {
                    let mut db = vec![0.0f64; out_dim];
                    for row in g.chunks_exact(out_dim) {
                        for (a, &v) in db.iter_mut().zip(row) {
                            *a += v as f64;
                        }
                    }
                    let db: Vec<f32> = db.into_iter().map(|v| v as f32).collect();
                    self.accumulate_owned(*b, db);
                }
            }

            Op::Add { a, b } => {
                self.accumulate(*a, g);
                self.accumulate(*b, g);
            }

            Op::Mul { a, b } => {
                if self.needs(*a) {
                    let da: Vec<f32> =
                        g.iter().zip(&self.node(*b).data).map(|(gi, y)| gi * y).collect();
                    self.accumulate_owned(*a, da);
                }
                if self.needs(*b) {
                    let db: Vec<f32> =
                        g.iter().zip(&self.node(*a).data).map(|(gi, x)| gi * x).collect();
                    self.accumulate_owned(*b, db);
                }
            }

            Op::AddBias { x, b } => {
                self.accumulate(*x, g);
                if self.needs(*b) {
                    let c = self.shape(*b)[0];
                    let mut db = vec![0.0f64; c];
                    for (idx, &v) in g.iter().enumerate() {
                        db[idx % c] += v as f64;
                    }
                    let db: Vec<f32> = db.into_iter().map(|v| v as f32).collect();
                    self.accumulate_owned(*b, db);
                }
            }

            Op::ScalarMul { x, c } => {
                if self.needs(*x) {
                    let dx: Vec<f32> = g.iter().map(|gi| gi * c).collect();
                    self.accumulate_owned(*x, dx);
                }
            }

            Op::Relu { x } => {
                if self.needs(*x) {
                    let dx: Vec<f32> = g
                        .iter()
                        .zip(&self.node(*x).data)
                        .map(|(gi, &v)| if v > 0.0 { *gi } else { 0.0 })
                        .collect();
                    self.accumulate_owned(*x, dx);
                }
            }

            Op::Gelu { x } => {
                if self.needs(*x) {
                    let dx: Vec<f32> = g
                        .iter()
                        .zip(&self.node(*x).data)
                        .map(|(gi, &v)| {
                            let x = v as f64;
                            let inner = SQRT_2_OVER_PI * (x + 0.044715 * x * x * x);
                            let t = inner.tanh();
                            let d_inner = SQRT_2_OVER_PI * (1.0 + 3.0 * 0.044715 * x * x);
                            let d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * d_inner;
                            (*gi as f64 * d) as f32
                        })
                        .collect();
                    self.accumulate_owned(*x, dx);
                }
            }

            Op::Softmax { x } => {
                if self.needs(*x) {
                    let c = *self.nodes[i].shape.last().expect("rank >= 1");
                    let out = &self.nodes[i].data;
                    let mut dx = vec![0.0f32; out.len()];
                    for ((s, gs), dxs) in out
                        .chunks_exact(c)
                        .zip(g.chunks_exact(c))
                        .zip(dx.chunks_exact_mut(c))
                    {
                        let dot: f64 =
                            s.iter().zip(gs).map(|(&si, &gi)| si as f64 * gi as f64).sum();
                        for j in 0..c {
                            dxs[j] = (s[j] as f64 * (gs[j] as f64 - dot)) as f32;
                        }
                    }
                    self.accumulate_owned(*x, dx);
                }
            }

            Op::LayerNorm { x, gamma, beta, eps } => {
                let c = *self.nodes[i].shape.last().expect("rank >= 1");
                let src = &self.node(*x).data;
                let gvals = &self.node(*gamma).data;
                let slices = src.len() / c;
                let mut dx = vec![0.0f32; src.len()];
                let mut dgamma = vec![0.0f64; c];
                let mut dbeta = vec![0.0f64; c];
                for s in 0..slices {
                    let xin = &src[s * c..(s + 1) * c];
                    let gs = &g[s * c..(s + 1) * c];
                    let mean = xin.iter().map(|&v| v as f64).sum::<f64>() / c as f64;
                    let var = xin
                        .iter()
                        .map(|&v| {
                            let d = v as f64 - mean;
                            d * d
                        })
                        .sum::<f64>()
                        / c as f64;
                    let inv_std = 1.0 / (var + *eps as f64).sqrt();
                    let xhat: Vec<f64> =
                        xin.iter().map(|&v| (v as f64 - mean) * inv_std).collect();
                    let dxhat: Vec<f64> = gs
                        .iter()
                        .zip(gvals)
                        .map(|(&gi, &ga)| gi as f64 * ga as f64)
                        .collect();
                    for j in 0..c {
                        dgamma[j] += gs[j] as f64 * xhat[j];
                        dbeta[j] += gs[j] as f64;
                    }
                    let sum_dxhat: f64 = dxhat.iter().sum();
                    let sum_dxhat_xhat: f64 =
                        dxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum();
                    let cf = c as f64;
                    for j in 0..c {
                        dx[s * c + j] = (inv_std / cf
                            * (cf * dxhat[j] - sum_dxhat - xhat[j] * sum_dxhat_xhat))
                            as f32;
                    }
                }
                self.accumulate_owned(*x, dx);
                if self.needs(*gamma) {
                    let dg: Vec<f32> = dgamma.into_iter().map(|v| v as f32).collect();
                    self.accumulate_owned(*gamma, dg);
                }
                if self.needs(*beta) {
                    let db: Vec<f32> = dbeta.into_iter().map(|v| v as f32).collect();
                    self.accumulate_owned(*beta, db);
                }
            }

            Op::Conv2d { x, w, b, stride, pad } => {
                self.conv2d_backward(i, g, *x, *w, *b, *stride, *pad);
            }

            Op::MaxPool2d { x, argmax } => {
                if self.needs(*x) {
                    let mut dx = vec![0.0f32; self.node(*x).numel()];
                    for (gi, &m) in g.iter().zip(argmax) {
                        if m != u32::MAX {
                            dx[m as usize] += gi;
                        }
                    }
                    self.accumulate_owned(*x, dx);
                }
            }

            Op::GlobalAvgPool { x } => {
                if self.needs(*x) {
                    let sx = self.shape(*x);
                    let hw = sx[2] * sx[3];
                    let scale = 1.0 / hw as f32;
                    let mut dx = vec![0.0f32; self.node(*x).numel()];
                    for (bc, &gi) in g.iter().enumerate() {
                        let v = gi * scale;
                        for d in &mut dx[bc * hw..(bc + 1) * hw] {
                            *d = v;
                        }
                    }
                    self.accumulate_owned(*x, dx);
                }
            }

            Op::TokenMean { x } => {
                if self.needs(*x) {
                    let sx = self.shape(*x);
                    let (batch, toks, chans) = (sx[0], sx[1], sx[2]);
                    let scale = 1.0 / toks as f32;
                    let mut dx = vec![0.0f32; self.node(*x).numel()];
                    for bi in 0..batch {
                        let grow = &g[bi * chans..(bi + 1) * chans];
                        for t in 0..toks {
                            let drow = &mut dx[(bi * toks + t) * chans..(bi * toks + t + 1) * chans];
                            for (d, &gi) in drow.iter_mut().zip(grow) {
                                *d = gi * scale;
                            }
                        }
                    }
                    self.accumulate_owned(*x, dx);
                }
            }

            Op::SumAll { x } => {
                if self.needs(*x) {
                    let dx = vec![g[0]; self.node(*x).numel()];
                    self.accumulate_owned(*x, dx);
                }
            }

            Op::CrossEntropy { logits, labels } => {
                if self.needs(*logits) {
                    let k = self.shape(*logits)[1];
                    let batch = labels.len();
                    let src = &self.node(*logits).data;
                    let mut dl = vec![0.0f32; src.len()];
                    let scale = g[0] as f64 / batch as f64;
                    for (bi, (row, &label)) in src.chunks_exact(k).zip(labels).enumerate() {
                        let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64));
                        let exps: Vec<f64> = row.iter().map(|&v| (v as f64 - max).exp()).collect();
                        let sum: f64 = exps.iter().sum();
                        for j in 0..k {
                            let p = exps[j] / sum;
                            let y = if j == label { 1.0 } else { 0.0 };
                            dl[bi * k + j] = (scale * (p - y)) as f32;
                        }
                    }
                    self.accumulate_owned(*logits, dl);
                }
            }

            Op::BceWithLogits { logits, targets } => {
                if self.needs(*logits) {
                    let src = &self.node(*logits).data;
                    let scale = g[0] as f64 / src.len() as f64;
                    let dl: Vec<f32> = src
                        .iter()
                        .zip(targets)
                        .map(|(&x, &t)| {
                            let sig = 1.0 / (1.0 + (-(x as f64)).exp());
                            (scale * (sig - t as f64)) as f32
                        })
                        .collect();
                    self.accumulate_owned(*logits, dl);
                }
            }
        }
        self.ops[i] = op;
    }

    #[allow(clippy::too_many_arguments)]
    fn conv2d_backward(
        &mut self,
        i: usize,
        g: &[f32],
        x: TensorId,
        w: TensorId,
        b: TensorId,
        stride: usize,
        pad: usize,
    ) {
        let sx = self.shape(x).to_vec();
        let sw = self.shape(w).to_vec();
        let so = self.nodes[i].shape.clone();
        let (batch, in_c, h, wd) = (sx[0], sx[1], sx[2], sx[3]);
        let (out_c, _, kh, kw) = (sw[0], sw[1], sw[2], sw[3]);
        let (oh, ow) = (so[2], so[3]);

        if self.needs(b) {
            let mut db = vec![0.0f64; out_c];
            for bi in 0..batch {
                for oc in 0..out_c {
                    let plane = &g[(bi * out_c + oc) * oh * ow..(bi * out_c + oc + 1) * oh * ow];
                    db[oc] += plane.iter().map(|&v| v as f64).sum::<f64>();
                }
            }
            let db: Vec<f32> = db.into_iter().map(|v| v as f32).collect();
            self.accumulate_owned(b, db);
        }

        if self.needs(w) {
            let xs = &self.node(x).data;
            let mut dw = vec![0.0f64; out_c * in_c * kh * kw];
            for bi in 0..batch {
                for oc in 0..out_c {
                    let gplane = &g[(bi * out_c + oc) * oh * ow..(bi * out_c + oc + 1) * oh * ow];
                    for ic in 0..in_c {
                        let x_plane = &xs[(bi * in_c + ic) * h * wd..(bi * in_c + ic + 1) * h * wd];
                        for ki in 0..kh {
                            for kj in 0..kw {
                                let mut acc = 0.0f64;
                                for oi in 0..oh {
                                    let ih = (oi * stride + ki) as isize - pad as isize;
                                    if ih < 0 || ih >= h as isize {
                                        continue;
                                    }
                                    let xrow = &x_plane[ih as usize * wd..(ih as usize + 1) * wd];
                                    let grow = &gplane[oi * ow..(oi + 1) * ow];
                                    for oj in 0..ow {
                                        let iw = (oj * stride + kj) as isize - pad as isize;
                                        if iw < 0 || iw >= wd as isize {
                                            continue;
                                        }
                                        acc += grow[oj] as f64 * xrow[iw as usize] as f64;
                                    }
                                }
                                dw[((oc * in_c + ic) * kh + ki) * kw + kj] += acc;
                            }
                        }
                    }
                }
            }
            let dw: Vec<f32> = dw.into_iter().map(|v| v as f32).collect();
            self.accumulate_owned(w, dw);
        }

        if self.needs(x) {
            let ws = &self.node(w).data;
            let mut dx = vec![0.0f32; batch * in_c * h * wd];
            let mut plane = vec![0.0f64; h * wd];
            for bi in 0..batch {
                for ic in 0..in_c {
                    plane.iter_mut().for_each(|v| *v = 0.0);
                    for oc in 0..out_c {
                        let gplane =
                            &g[(bi * out_c + oc) * oh * ow..(bi * out_c + oc + 1) * oh * ow];
                        for ki in 0..kh {
                            for kj in 0..kw {
                                let wv = ws[((oc * in_c + ic) * kh + ki) * kw + kj] as f64;
                                for oi in 0..oh {
                                    let ih = (oi * stride + ki) as isize - pad as isize;
                                    if ih < 0 || ih >= h as isize {
                                        continue;
                                    }
                                    let prow =
                                        &mut plane[ih as usize * wd..(ih as usize + 1) * wd];
                                    let grow = &gplane[oi * ow..(oi + 1) * ow];
                                    for oj in 0..ow {
                                        let iw = (oj * stride + kj) as isize - pad as isize;
                                        if iw < 0 || iw >= wd as isize {
                                            continue;
                                        }
                                        prow[iw as usize] += wv * grow[oj] as f64;
                                    }
                                }
                            }
                        }
                    }
                    let dst = &mut dx[(bi * in_c + ic) * h * wd..(bi * in_c + ic + 1) * h * wd];
                    for (d, p) in dst.iter_mut().zip(&plane) {
                        *d = *p as f32;
                    }
                }
            }
            self.accumulate_owned(x, dx);
        }
    }
}

const SQRT_2_OVER_PI: f64 = 0.7978845608028654;

// ── Matmul cores (f64 accumulation) ──────────────────────────────────────

/// out[m,n] = a[m,k] · b[k,n]
fn mm_nn(a: &[f32], b: &[f32], m: usize, k: usize, n: usize, out: &mut [f32]) {
    let mut row = vec![0.0f64; n];
    for i in 0..m {
        row.iter_mut().for_each(|v| *v = 0.0);
        for p in 0..k {
            let av = a[i * k + p] as f64;
            let brow = &b[p * n..(p + 1) * n];
            for (r, &bv) in row.iter_mut().zip(brow) {
                *r += av * bv as f64;
            }
        }
        for (o, &r) in out[i * n..(i + 1) * n].iter_mut().zip(row.iter()) {
            *o = r as f32;
        }
    }
}

/// out[m,n] = a[m,k] · b[n,k]ᵀ
fn mm_nt(a: &[f32], b: &[f32], m: usize, k: usize, n: usize, out: &mut [f32]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut acc = 0.0f64;
            for (&av, &bv) in arow.iter().zip(brow) {
                acc += av as f64 * bv as f64;
            }
            out[i * n + j] = acc as f32;
        }
    }
}

/// out[m,n] = a[k,m]ᵀ · b[k,n]
fn mm_tn(a: &[f32], b: &[f32], m: usize, k: usize, n: usize, out: &mut [f32]) {
    let mut row = vec![0.0f64; n];
    for i in 0..m {
        row.iter_mut().for_each(|v| *v = 0.0);
        for p in 0..k {
            let av = a[p * m + i] as f64;
            let brow = &b[p * n..(p + 1) * n];
            for (r, &bv) in row.iter_mut().zip(brow) {
                *r += av * bv as f64;
            }
        }
        for (o, &r) in out[i * n..(i + 1) * n].iter_mut().zip(row.iter()) {
            *o = r as f32;
        }
    }
}
