//! Reverse-mode automatic differentiation on a flat tape.
//!
//! Ops execute eagerly as they are recorded; `backward` walks the tape in
//! reverse and accumulates gradients. Node inputs always precede the node,
//! so reverse index order is a valid reverse topological order.

use super::kernels;
use super::tensor::Tensor;
use crate::error::{ProcanError, Result};
use rand::Rng;
use rayon::prelude::*;

pub const BN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    /// C = A[m,k] * B[k,n]
    Matmul { a: NodeId, b: NodeId },
    /// Y[b] = W[m,k] * X[b][k,n], shared weight across the batch
    LinearMap { w: NodeId, x: NodeId },
    /// Y[b] = A[b][m,k] * B[b][k,n]
    Bmm { a: NodeId, b: NodeId },
    /// Swap the last two axes (rank 2 or 3)
    TransposeLast { x: NodeId },
    Conv2d {
        x: NodeId,
        kernel: NodeId,
        stride: usize,
        padding: usize,
        rank3: bool,
    },
    BatchNorm {
        x: NodeId,
        scale: NodeId,
        shift: NodeId,
        mode: Mode,
        mean: Vec<f64>,
        invstd: Vec<f64>,
    },
    Relu { x: NodeId },
    Sigmoid { x: NodeId },
    /// Softmax over the last axis, stabilized by max subtraction
    SoftmaxRows { x: NodeId },
    Add { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    /// Y[b,c,n] = X[b,c,n] * G[b,c]
    MulChannel { x: NodeId, gate: NodeId },
    /// Y[r,c] = X[r,c] + bias[c]
    AddBias { x: NodeId, bias: NodeId },
    /// [B,C,H,W] -> [B,C] spatial mean
    GlobalAvgPool { x: NodeId },
    Dropout { x: NodeId, mask: Vec<f64>, scale: f64 },
    Reshape { x: NodeId },
    /// p * grown + (1-p) * base
    BlendScalar { base: NodeId, grown: NodeId, p: f64 },
    /// Per-pixel select: mask 1 routes grown, mask 0 routes base
    BlendMask { base: NodeId, grown: NodeId, mask: Vec<f64> },
    /// Mean over the batch of the stable binary cross entropy on logits
    BceWithLogits { logits: NodeId, labels: Vec<f64> },
    Sum { x: NodeId },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Tape of recorded operations plus (after `backward`) their gradients.
pub struct Graph {
    nodes: Vec<Node>,
    grads: Option<Vec<Tensor>>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            grads: None,
        }
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Gradient of the last `backward` loss w.r.t. this node.
    pub fn grad(&self, id: NodeId) -> &Tensor {
        let grads = self
            .grads
            .as_ref()
            .expect("Graph::grad called before backward");
        &grads[id.0]
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(ProcanError::dimension(format!(
                "matmul needs [M,K]x[K,N], got {sa:?} x {sb:?}"
            )));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = Tensor::zeros(&[m, n]);
        kernels::matmul(
            self.value(a).data(),
            self.value(b).data(),
            m,
            k,
            n,
            out.data_mut(),
        );
        Ok(self.push(out, Op::Matmul { a, b }))
    }

    pub fn linear_map(&mut self, w: NodeId, x: NodeId) -> Result<NodeId> {
        let (sw, sx) = (self.value(w).shape(), self.value(x).shape());
        if sw.len() != 2 || sx.len() != 3 || sw[1] != sx[1] {
            return Err(ProcanError::dimension(format!(
                "linear_map needs [M,K]x[B,K,N], got {sw:?} x {sx:?}"
            )));
        }
        let (batch, m, k, n) = (sx[0], sw[0], sw[1], sx[2]);
        let mut out = Tensor::zeros(&[batch, m, n]);
        kernels::linear_map(
            self.value(w).data(),
            self.value(x).data(),
            batch,
            m,
            k,
            n,
            out.data_mut(),
        );
        Ok(self.push(out, Op::LinearMap { w, x }))
    }

    pub fn bmm(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return Err(ProcanError::dimension(format!(
                "bmm needs [B,M,K]x[B,K,N], got {sa:?} x {sb:?}"
            )));
        }
        let (batch, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
        let mut out = Tensor::zeros(&[batch, m, n]);
        kernels::bmm(
            self.value(a).data(),
            self.value(b).data(),
            batch,
            m,
            k,
            n,
            out.data_mut(),
        );
        Ok(self.push(out, Op::Bmm { a, b }))
    }

    pub fn transpose_last(&mut self, x: NodeId) -> Result<NodeId> {
        let sx = self.value(x).shape().to_vec();
        let out = match sx.len() {
            2 => {
                let (m, n) = (sx[0], sx[1]);
                let src = self.value(x).data();
                Tensor::from_fn(&[n, m], |i| src[(i % m) * n + i / m])
            }
            3 => {
                let (b, m, n) = (sx[0], sx[1], sx[2]);
                let src = self.value(x).data();
                Tensor::from_fn(&[b, n, m], |i| {
                    let bi = i / (m * n);
                    let r = i % (m * n);
                    src[bi * m * n + (r % m) * n + r / m]
                })
            }
            _ => {
                return Err(ProcanError::dimension(format!(
                    "transpose_last needs rank 2 or 3, got {sx:?}"
                )))
            }
        };
        Ok(self.push(out, Op::TransposeLast { x }))
    }

    pub fn conv2d(
        &mut self,
        x: NodeId,
        kernel: NodeId,
        stride: usize,
        padding: usize,
    ) -> Result<NodeId> {
        let sx = self.value(x).shape().to_vec();
        let sk = self.value(kernel).shape().to_vec();
        let rank3 = sx.len() == 3;
        let (b, c_in, h, w) = match sx.len() {
            3 => (1, sx[0], sx[1], sx[2]),
            4 => (sx[0], sx[1], sx[2], sx[3]),
            _ => {
                return Err(ProcanError::dimension(format!(
                    "conv2d input must be [C,H,W] or [B,C,H,W], got {sx:?}"
                )))
            }
        };
        if sk.len() != 4 || sk[1] != c_in {
            return Err(ProcanError::dimension(format!(
                "conv2d kernel must be [C_out,{c_in},k,k], got {sk:?}"
            )));
        }
        let (c_out, kh, kw) = (sk[0], sk[2], sk[3]);
        if kh != kw || !(kh == 1 || kh == 3) {
            return Err(ProcanError::dimension(format!(
                "conv2d kernel size must be 1 or 3, got {kh}x{kw}"
            )));
        }
        if stride == 0 {
            return Err(ProcanError::config("conv2d stride must be positive".to_string()));
        }
        let h_num = h + 2 * padding;
        let w_num = w + 2 * padding;
        if h_num < kh || w_num < kw {
            return Err(ProcanError::dimension(format!(
                "conv2d output would be empty for input {h}x{w}, kernel {kh}, padding {padding}"
            )));
        }
        let h_out = (h_num - kh) / stride + 1;
        let w_out = (w_num - kw) / stride + 1;
        let mut out = Tensor::zeros(&[b, c_out, h_out, w_out]);
        kernels::conv2d_forward(
            self.value(x).data(),
            self.value(kernel).data(),
            b,
            c_in,
            h,
            w,
            c_out,
            kh,
            kw,
            stride,
            padding,
            h_out,
            w_out,
            out.data_mut(),
        );
        let out = if rank3 {
            out.reshaped(&[c_out, h_out, w_out])?
        } else {
            out
        };
        Ok(self.push(
            out,
            Op::Conv2d {
                x,
                kernel,
                stride,
                padding,
                rank3,
            },
        ))
    }

    /// Batch normalization over [B,C,H,W] with per-channel scale and shift.
    /// In train mode the batch statistics are returned so the caller can
    /// update its running estimates (momentum lives with the caller).
    pub fn batchnorm2d(
        &mut self,
        x: NodeId,
        scale: NodeId,
        shift: NodeId,
        running_mean: &[f64],
        running_var: &[f64],
        mode: Mode,
    ) -> Result<(NodeId, Option<(Vec<f64>, Vec<f64>)>)> {
        let sx = self.value(x).shape().to_vec();
        if sx.len() != 4 {
            return Err(ProcanError::dimension(format!(
                "batchnorm2d input must be [B,C,H,W], got {sx:?}"
            )));
        }
        let (b, c, h, w) = (sx[0], sx[1], sx[2], sx[3]);
        if self.value(scale).shape() != [c] || self.value(shift).shape() != [c] {
            return Err(ProcanError::dimension(format!(
                "batchnorm2d scale/shift must have shape [{c}]"
            )));
        }
        if mode == Mode::Train && b < 2 {
            return Err(ProcanError::config(format!(
                "batchnorm2d train mode needs batch size >= 2, got {b}"
            )));
        }
        let n = b * h * w;
        let plane = h * w;
        let (mean, var_biased) = match mode {
            Mode::Train => {
                let data = self.value(x).data();
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                for ci in 0..c {
                    let mut acc = 0.0;
                    for bi in 0..b {
                        let base = (bi * c + ci) * plane;
                        for v in &data[base..base + plane] {
                            acc += v;
                        }
                    }
                    let mu = acc / n as f64;
                    let mut acc2 = 0.0;
                    for bi in 0..b {
                        let base = (bi * c + ci) * plane;
                        for v in &data[base..base + plane] {
                            let d = v - mu;
                            acc2 += d * d;
                        }
                    }
                    mean[ci] = mu;
                    var[ci] = acc2 / n as f64;
                }
                (mean, var)
            }
            Mode::Eval => {
                if running_mean.len() != c || running_var.len() != c {
                    return Err(ProcanError::dimension(
                        "batchnorm2d running stats length mismatch".to_string(),
                    ));
                }
                (running_mean.to_vec(), running_var.to_vec())
            }
        };
        let invstd: Vec<f64> = var_biased.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let gamma = self.value(scale).data().to_vec();
        let beta = self.value(shift).data().to_vec();
        let src = self.value(x).data();
        let mut out = Tensor::zeros(&sx);
        {
            let dst = out.data_mut();
            for bi in 0..b {
                for ci in 0..c {
                    let base = (bi * c + ci) * plane;
                    let (mu, is, g, be) = (mean[ci], invstd[ci], gamma[ci], beta[ci]);
                    for (d, s) in dst[base..base + plane].iter_mut().zip(&src[base..base + plane])
                    {
                        *d = (s - mu) * is * g + be;
                    }
                }
            }
        }
        // Unbiased variance for the running update, matching common defaults.
        let batch_stats = if mode == Mode::Train {
            let denom = (n as f64 - 1.0).max(1.0);
            let var_unbiased: Vec<f64> =
                var_biased.iter().map(|v| v * n as f64 / denom).collect();
            Some((mean.clone(), var_unbiased))
        } else {
            None
        };
        let node = self.push(
            out,
            Op::BatchNorm {
                x,
                scale,
                shift,
                mode,
                mean,
                invstd,
            },
        );
        Ok((node, batch_stats))
    }

    pub fn activation(&mut self, x: NodeId, kind: Activation) -> NodeId {
        match kind {
            Activation::Relu => self.relu(x),
            Activation::Sigmoid => self.sigmoid(x),
        }
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let out = self.value(x).map(|v| if v > 0.0 { v } else { 0.0 });
        self.push(out, Op::Relu { x })
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let out = self.value(x).map(stable_sigmoid);
        self.push(out, Op::Sigmoid { x })
    }

    /// Softmax over the last axis (each "row"); rows sum to one. Rows are
    /// independent, so they run in parallel with identical results.
    pub fn softmax_rows(&mut self, x: NodeId) -> Result<NodeId> {
        let sx = self.value(x).shape().to_vec();
        if sx.is_empty() {
            return Err(ProcanError::dimension("softmax_rows needs rank >= 1".to_string()));
        }
        let n = *sx.last().unwrap();
        let mut out = self.value(x).clone();
        out.data_mut()
            .par_chunks_exact_mut(n)
            .for_each(softmax_row_in_place);
        Ok(self.push(out, Op::SoftmaxRows { x }))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(ProcanError::dimension(format!(
                "add shape mismatch: {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let mut out = self.value(a).clone();
        for (o, &v) in out.data_mut().iter_mut().zip(self.nodes[b.0].value.data()) {
            *o += v;
        }
        Ok(self.push(out, Op::Add { a, b }))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(ProcanError::dimension(format!(
                "mul shape mismatch: {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let mut out = self.value(a).clone();
        for (o, &v) in out.data_mut().iter_mut().zip(self.nodes[b.0].value.data()) {
            *o *= v;
        }
        Ok(self.push(out, Op::Mul { a, b }))
    }

    /// Scale each channel row of [B,C,N] by the matching entry of [B,C].
    pub fn mul_channel(&mut self, x: NodeId, gate: NodeId) -> Result<NodeId> {
        let sx = self.value(x).shape().to_vec();
        let sg = self.value(gate).shape().to_vec();
        if sx.len() != 3 || sg.len() != 2 || sx[0] != sg[0] || sx[1] != sg[1] {
            return Err(ProcanError::dimension(format!(
                "mul_channel needs [B,C,N] and [B,C], got {sx:?} and {sg:?}"
            )));
        }
        let n = sx[2];
        let gates = self.value(gate).data().to_vec();
        let mut out = self.value(x).clone();
        for (row, &g) in out.data_mut().chunks_exact_mut(n).zip(&gates) {
            for o in row {
                *o *= g;
            }
        }
        Ok(self.push(out, Op::MulChannel { x, gate }))
    }

    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let sx = self.value(x).shape().to_vec();
        let sb = self.value(bias).shape().to_vec();
        if sx.len() != 2 || sb.len() != 1 || sb[0] != sx[1] {
            return Err(ProcanError::dimension(format!(
                "add_bias needs [R,C] and [C], got {sx:?} and {sb:?}"
            )));
        }
        let b = self.value(bias).data().to_vec();
        let mut out = self.value(x).clone();
        for row in out.data_mut().chunks_exact_mut(sx[1]) {
            for (o, &bv) in row.iter_mut().zip(&b) {
                *o += bv;
            }
        }
        Ok(self.push(out, Op::AddBias { x, bias }))
    }

    pub fn global_avg_pool(&mut self, x: NodeId) -> Result<NodeId> {
        let sx = self.value(x).shape().to_vec();
        if sx.len() != 4 {
            return Err(ProcanError::dimension(format!(
                "global_avg_pool input must be [B,C,H,W], got {sx:?}"
            )));
        }
        let (b, c, plane) = (sx[0], sx[1], sx[2] * sx[3]);
        let src = self.value(x).data();
        let out = Tensor::from_fn(&[b, c], |i| {
            let base = i * plane;
            let mut acc = 0.0;
            for v in &src[base..base + plane] {
                acc += v;
            }
            acc / plane as f64
        });
        Ok(self.push(out, Op::GlobalAvgPool { x }))
    }

    /// Inverted dropout: zero with probability p, scale survivors by
    /// 1/(1-p). Identity in eval mode and at p = 0.
    pub fn dropout(
        &mut self,
        x: NodeId,
        p: f64,
        mode: Mode,
        rng: &mut impl Rng,
    ) -> Result<NodeId> {
        if !(0.0..1.0).contains(&p) {
            return Err(ProcanError::config(format!(
                "dropout probability must satisfy 0 <= p < 1, got {p}"
            )));
        }
        if mode == Mode::Eval || p == 0.0 {
            return Ok(x);
        }
        let scale = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..self.value(x).numel())
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { 1.0 })
            .collect();
        let mut out = self.value(x).clone();
        for (o, &m) in out.data_mut().iter_mut().zip(&mask) {
            *o *= m * scale;
        }
        Ok(self.push(out, Op::Dropout { x, mask, scale }))
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        let out = self.value(x).reshaped(shape)?;
        Ok(self.push(out, Op::Reshape { x }))
    }

    /// Convex blend p*grown + (1-p)*base.
    pub fn blend_scalar(&mut self, base: NodeId, grown: NodeId, p: f64) -> Result<NodeId> {
        if self.value(base).shape() != self.value(grown).shape() {
            return Err(ProcanError::dimension(format!(
                "blend shape mismatch: {:?} vs {:?}",
                self.value(base).shape(),
                self.value(grown).shape()
            )));
        }
        if !(0.0..=1.0).contains(&p) {
            return Err(ProcanError::config(format!("blend p must be in [0,1], got {p}")));
        }
        let mut out = self.value(grown).clone();
        for (o, &bv) in out.data_mut().iter_mut().zip(self.nodes[base.0].value.data()) {
            *o = p * *o + (1.0 - p) * bv;
        }
        Ok(self.push(out, Op::BlendScalar { base, grown, p }))
    }

    /// Per-pixel routing by a {0,1} mask over [H,W], broadcast across batch
    /// and channels. Output elements are copied, never recombined, so each
    /// equals one of the two inputs bit for bit.
    pub fn blend_mask(&mut self, base: NodeId, grown: NodeId, mask: &Tensor) -> Result<NodeId> {
        let sb = self.value(base).shape().to_vec();
        if self.value(grown).shape() != sb {
            return Err(ProcanError::dimension(format!(
                "blend shape mismatch: {:?} vs {:?}",
                sb,
                self.value(grown).shape()
            )));
        }
        if sb.len() != 4 || mask.shape() != [sb[2], sb[3]] {
            return Err(ProcanError::dimension(format!(
                "blend mask must be [{},{}], got {:?}",
                sb[2],
                sb[3],
                mask.shape()
            )));
        }
        if mask.data().iter().any(|&m| m != 0.0 && m != 1.0) {
            return Err(ProcanError::config("blend mask entries must be 0 or 1".to_string()));
        }
        let plane = sb[2] * sb[3];
        let mut out = self.value(grown).clone();
        {
            let dst = out.data_mut();
            let base_data = self.nodes[base.0].value.data();
            for (d_row, b_row) in dst
                .chunks_exact_mut(plane)
                .zip(base_data.chunks_exact(plane))
            {
                for ((d, &bv), &m) in d_row.iter_mut().zip(b_row).zip(mask.data()) {
                    if m == 0.0 {
                        *d = bv;
                    }
                }
            }
        }
        Ok(self.push(
            out,
            Op::BlendMask {
                base,
                grown,
                mask: mask.data().to_vec(),
            },
        ))
    }

    /// Mean binary cross entropy on raw logits, in the log-sum-exp stable
    /// form max(z,0) - z*y + ln(1 + exp(-|z|)).
    pub fn bce_with_logits(&mut self, logits: NodeId, labels: &[f64]) -> Result<NodeId> {
        let sl = self.value(logits).shape().to_vec();
        if sl.len() != 1 || sl[0] != labels.len() {
            return Err(ProcanError::dimension(format!(
                "bce needs logits [B] matching {} labels, got {sl:?}",
                labels.len()
            )));
        }
        if labels.iter().any(|&y| y != 0.0 && y != 1.0) {
            return Err(ProcanError::data("bce labels must be 0 or 1".to_string()));
        }
        let z = self.value(logits).data();
        let mut acc = 0.0;
        for (&zi, &yi) in z.iter().zip(labels) {
            acc += zi.max(0.0) - zi * yi + (-zi.abs()).exp().ln_1p();
        }
        let loss = Tensor::scalar(acc / labels.len() as f64);
        Ok(self.push(
            loss,
            Op::BceWithLogits {
                logits,
                labels: labels.to_vec(),
            },
        ))
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let total: f64 = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(total), Op::Sum { x })
    }

    /// Reverse accumulation from a scalar loss. Nodes the loss does not
    /// reach keep zero gradients.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(ProcanError::usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Tensor> = self
            .nodes
            .iter()
            .map(|n| Tensor::zeros(n.value.shape()))
            .collect();
        grads[loss.0].data_mut()[0] = 1.0;
        for i in (0..=loss.0).rev() {
            let (before, rest) = grads.split_at_mut(i);
            let gout = &rest[0];
            if gout.data().iter().all(|&g| g == 0.0) {
                continue;
            }
            self.accumulate(i, gout, before);
        }
        self.grads = Some(grads);
        Ok(())
    }

    fn accumulate(&self, i: usize, gout: &Tensor, grads: &mut [Tensor]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::Matmul { a, b } => {
                let (sa, sb) = (self.value(*a).shape(), self.value(*b).shape());
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                // dA += dC * B^T ; dB += A^T * dC
                let mut da = vec![0.0; m * k];
                kernels::matmul_nt(gout.data(), self.value(*b).data(), m, n, k, &mut da);
                add_into(grads[a.0].data_mut(), &da);
                let mut db = vec![0.0; k * n];
                kernels::matmul_tn(self.value(*a).data(), gout.data(), k, m, n, &mut db);
                add_into(grads[b.0].data_mut(), &db);
            }
            Op::LinearMap { w, x } => {
                let (sw, sx) = (self.value(*w).shape(), self.value(*x).shape());
                let (batch, m, k, n) = (sx[0], sw[0], sw[1], sx[2]);
                let xv = self.value(*x).data();
                let wv = self.value(*w).data();
                // dW += sum_b dY[b] * X[b]^T, in batch order.
                {
                    let gw = grads[w.0].data_mut();
                    for bi in 0..batch {
                        let gy = &gout.data()[bi * m * n..(bi + 1) * m * n];
                        let xb = &xv[bi * k * n..(bi + 1) * k * n];
                        let mut tmp = vec![0.0; m * k];
                        kernels::matmul_nt(gy, xb, m, n, k, &mut tmp);
                        add_into(gw, &tmp);
                    }
                }
                // dX[b] = W^T * dY[b]
                {
                    let gx = grads[x.0].data_mut();
                    gx.par_chunks_exact_mut(k * n)
                        .enumerate()
                        .for_each(|(bi, gx_b)| {
                            let gy = &gout.data()[bi * m * n..(bi + 1) * m * n];
                            let mut tmp = vec![0.0; k * n];
                            kernels::matmul_tn(wv, gy, k, m, n, &mut tmp);
                            add_into(gx_b, &tmp);
                        });
                }
            }
            Op::Bmm { a, b } => {
                let (sa, sb) = (self.value(*a).shape(), self.value(*b).shape());
                let (m, k, n) = (sa[1], sa[2], sb[2]);
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                {
                    let ga = grads[a.0].data_mut();
                    ga.par_chunks_exact_mut(m * k)
                        .enumerate()
                        .for_each(|(bi, ga_b)| {
                            let gy = &gout.data()[bi * m * n..(bi + 1) * m * n];
                            let bb = &bv[bi * k * n..(bi + 1) * k * n];
                            let mut tmp = vec![0.0; m * k];
                            kernels::matmul_nt(gy, bb, m, n, k, &mut tmp);
                            add_into(ga_b, &tmp);
                        });
                }
                {
                    let gb = grads[b.0].data_mut();
                    gb.par_chunks_exact_mut(k * n)
                        .enumerate()
                        .for_each(|(bi, gb_b)| {
                            let gy = &gout.data()[bi * m * n..(bi + 1) * m * n];
                            let ab = &av[bi * m * k..(bi + 1) * m * k];
                            let mut tmp = vec![0.0; k * n];
                            kernels::matmul_tn(ab, gy, k, m, n, &mut tmp);
                            add_into(gb_b, &tmp);
                        });
                }
            }
            Op::TransposeLast { x } => {
                let sx = self.value(*x).shape();
                match sx.len() {
                    2 => {
                        let (m, n) = (sx[0], sx[1]);
                        let g = gout.data();
                        let gx = grads[x.0].data_mut();
                        for r in 0..m {
                            for c in 0..n {
                                gx[r * n + c] += g[c * m + r];
                            }
                        }
                    }
                    _ => {
                        let (b, m, n) = (sx[0], sx[1], sx[2]);
                        let g = gout.data();
                        let gx = grads[x.0].data_mut();
                        for bi in 0..b {
                            let gb = &g[bi * m * n..(bi + 1) * m * n];
                            let gxb = &mut gx[bi * m * n..(bi + 1) * m * n];
                            for r in 0..m {
                                for c in 0..n {
                                    gxb[r * n + c] += gb[c * m + r];
                                }
                            }
                        }
                    }
                }
            }
            Op::Conv2d {
                x,
                kernel,
                stride,
                padding,
                rank3,
            } => {
                let sx = self.value(*x).shape().to_vec();
                let sk = self.value(*kernel).shape().to_vec();
                let (b, c_in, h, w) = if *rank3 {
                    (1, sx[0], sx[1], sx[2])
                } else {
                    (sx[0], sx[1], sx[2], sx[3])
                };
                let (c_out, kh, kw) = (sk[0], sk[2], sk[3]);
                let so = node.value.shape();
                let (h_out, w_out) = if *rank3 {
                    (so[1], so[2])
                } else {
                    (so[2], so[3])
                };
                let mut gx = vec![0.0; b * c_in * h * w];
                kernels::conv2d_backward_input(
                    gout.data(),
                    self.value(*kernel).data(),
                    b,
                    c_in,
                    h,
                    w,
                    c_out,
                    kh,
                    kw,
                    *stride,
                    *padding,
                    h_out,
                    w_out,
                    &mut gx,
                );
                add_into(grads[x.0].data_mut(), &gx);
                let mut gk = vec![0.0; c_out * c_in * kh * kw];
                kernels::conv2d_backward_kernel(
                    gout.data(),
                    self.value(*x).data(),
                    b,
                    c_in,
                    h,
                    w,
                    c_out,
                    kh,
                    kw,
                    *stride,
                    *padding,
                    h_out,
                    w_out,
                    &mut gk,
                );
                add_into(grads[kernel.0].data_mut(), &gk);
            }
            Op::BatchNorm {
                x,
                scale,
                shift,
                mode,
                mean,
                invstd,
            } => {
                let sx = self.value(*x).shape();
                let (b, c, plane) = (sx[0], sx[1], sx[2] * sx[3]);
                let n = (b * plane) as f64;
                let xv = self.value(*x).data();
                let gamma = self.value(*scale).data();
                let g = gout.data();
                // Per-channel reductions in fixed (batch, pixel) order.
                let mut sum_dy = vec![0.0; c];
                let mut sum_dy_xhat = vec![0.0; c];
                for bi in 0..b {
                    for ci in 0..c {
                        let base = (bi * c + ci) * plane;
                        let (mu, is) = (mean[ci], invstd[ci]);
                        let mut s1 = 0.0;
                        let mut s2 = 0.0;
                        for idx in base..base + plane {
                            let xhat = (xv[idx] - mu) * is;
                            s1 += g[idx];
                            s2 += g[idx] * xhat;
                        }
                        sum_dy[ci] += s1;
                        sum_dy_xhat[ci] += s2;
                    }
                }
                {
                    let gs = grads[scale.0].data_mut();
                    add_into(gs, &sum_dy_xhat);
                }
                {
                    let gb = grads[shift.0].data_mut();
                    add_into(gb, &sum_dy);
                }
                let gx = grads[x.0].data_mut();
                match mode {
                    Mode::Train => {
                        for bi in 0..b {
                            for ci in 0..c {
                                let base = (bi * c + ci) * plane;
                                let (mu, is, ga) = (mean[ci], invstd[ci], gamma[ci]);
                                let m_dy = sum_dy[ci] / n;
                                let m_dyx = sum_dy_xhat[ci] / n;
                                for idx in base..base + plane {
                                    let xhat = (xv[idx] - mu) * is;
                                    gx[idx] += ga * is * (g[idx] - m_dy - xhat * m_dyx);
                                }
                            }
                        }
                    }
                    Mode::Eval => {
                        for bi in 0..b {
                            for ci in 0..c {
                                let base = (bi * c + ci) * plane;
                                let k = gamma[ci] * invstd[ci];
                                for idx in base..base + plane {
                                    gx[idx] += k * g[idx];
                                }
                            }
                        }
                    }
                }
            }
            Op::Relu { x } => {
                let xv = self.value(*x).data();
                let gx = grads[x.0].data_mut();
                for ((gxi, &xi), &gi) in gx.iter_mut().zip(xv).zip(gout.data()) {
                    if xi > 0.0 {
                        *gxi += gi;
                    }
                }
            }
            Op::Sigmoid { x } => {
                let yv = node.value.data();
                let gx = grads[x.0].data_mut();
                for ((gxi, &yi), &gi) in gx.iter_mut().zip(yv).zip(gout.data()) {
                    *gxi += gi * yi * (1.0 - yi);
                }
            }
            Op::SoftmaxRows { x } => {
                let n = *node.value.shape().last().unwrap();
                let yv = node.value.data();
                let gv = gout.data();
                let gx = grads[x.0].data_mut();
                gx.par_chunks_exact_mut(n)
                    .enumerate()
                    .for_each(|(row, gx_row)| {
                        let y_row = &yv[row * n..(row + 1) * n];
                        let g_row = &gv[row * n..(row + 1) * n];
                        let mut dot = 0.0;
                        for (&y, &g) in y_row.iter().zip(g_row) {
                            dot += y * g;
                        }
                        for ((gxi, &y), &g) in gx_row.iter_mut().zip(y_row).zip(g_row) {
                            *gxi += y * (g - dot);
                        }
                    });
            }
            Op::Add { a, b } => {
                add_into(grads[a.0].data_mut(), gout.data());
                add_into(grads[b.0].data_mut(), gout.data());
            }
            Op::Mul { a, b } => {
                let av = self.value(*a).data().to_vec();
                let bv = self.value(*b).data().to_vec();
                {
                    let ga = grads[a.0].data_mut();
                    for ((gai, &g), &bvi) in ga.iter_mut().zip(gout.data()).zip(&bv) {
                        *gai += g * bvi;
                    }
                }
                {
                    let gb = grads[b.0].data_mut();
                    for ((gbi, &g), &avi) in gb.iter_mut().zip(gout.data()).zip(&av) {
                        *gbi += g * avi;
                    }
                }
            }
            Op::MulChannel { x, gate } => {
                let sx = self.value(*x).shape();
                let n = sx[2];
                let xv = self.value(*x).data();
                let gv = self.value(*gate).data().to_vec();
                {
                    let gx = grads[x.0].data_mut();
                    for ((row, g_row), &gate_v) in
                        gx.chunks_exact_mut(n).zip(gout.data().chunks_exact(n)).zip(&gv)
                    {
                        for (o, &g) in row.iter_mut().zip(g_row) {
                            *o += g * gate_v;
                        }
                    }
                }
                {
                    let gg = grads[gate.0].data_mut();
                    for ((ggi, x_row), g_row) in gg
                        .iter_mut()
                        .zip(xv.chunks_exact(n))
                        .zip(gout.data().chunks_exact(n))
                    {
                        let mut acc = 0.0;
                        for (&xi, &gi) in x_row.iter().zip(g_row) {
                            acc += xi * gi;
                        }
                        *ggi += acc;
                    }
                }
            }
            Op::AddBias { x, bias } => {
                add_into(grads[x.0].data_mut(), gout.data());
                let c = self.value(*bias).numel();
                let gb = grads[bias.0].data_mut();
                for row in gout.data().chunks_exact(c) {
                    for (gbi, &g) in gb.iter_mut().zip(row) {
                        *gbi += g;
                    }
                }
            }
            Op::GlobalAvgPool { x } => {
                let sx = self.value(*x).shape();
                let plane = sx[2] * sx[3];
                let gx = grads[x.0].data_mut();
                for (row, &g) in gx.chunks_exact_mut(plane).zip(gout.data()) {
                    let share = g / plane as f64;
                    for o in row {
                        *o += share;
                    }
                }
            }
            Op::Dropout { x, mask, scale } => {
                let gx = grads[x.0].data_mut();
                for ((gxi, &g), &m) in gx.iter_mut().zip(gout.data()).zip(mask) {
                    *gxi += g * m * scale;
                }
            }
            Op::Reshape { x } => {
                add_into(grads[x.0].data_mut(), gout.data());
            }
            Op::BlendScalar { base, grown, p } => {
                {
                    let gb = grads[base.0].data_mut();
                    for (gbi, &g) in gb.iter_mut().zip(gout.data()) {
                        *gbi += (1.0 - p) * g;
                    }
                }
                {
                    let gg = grads[grown.0].data_mut();
                    for (ggi, &g) in gg.iter_mut().zip(gout.data()) {
                        *ggi += p * g;
                    }
                }
            }
            Op::BlendMask { base, grown, mask } => {
                let plane = mask.len();
                {
                    let gb = grads[base.0].data_mut();
                    for (row, g_row) in gb.chunks_exact_mut(plane).zip(gout.data().chunks_exact(plane))
                    {
                        for ((o, &g), &m) in row.iter_mut().zip(g_row).zip(mask.iter()) {
                            if m == 0.0 {
                                *o += g;
                            }
                        }
                    }
                }
                {
                    let gg = grads[grown.0].data_mut();
                    for (row, g_row) in gg.chunks_exact_mut(plane).zip(gout.data().chunks_exact(plane))
                    {
                        for ((o, &g), &m) in row.iter_mut().zip(g_row).zip(mask.iter()) {
                            if m == 1.0 {
                                *o += g;
                            }
                        }
                    }
                }
            }
            Op::BceWithLogits { logits, labels } => {
                let z = self.value(*logits).data();
                let g = gout.item();
                let inv_b = 1.0 / labels.len() as f64;
                let gl = grads[logits.0].data_mut();
                for ((gli, &zi), &yi) in gl.iter_mut().zip(z).zip(labels) {
                    *gli += g * (stable_sigmoid(zi) - yi) * inv_b;
                }
            }
            Op::Sum { x } => {
                let g = gout.item();
                for gxi in grads[x.0].data_mut() {
                    *gxi += g;
                }
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Records which graph leaves hold which named parameters during one
/// forward pass, so the optimizer can route gradients back by name.
#[derive(Default)]
pub struct ParamBinder {
    entries: Vec<(String, NodeId)>,
}

impl ParamBinder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bind(&mut self, graph: &mut Graph, name: impl Into<String>, value: &Tensor) -> NodeId {
        let id = graph.leaf(value.clone());
        self.entries.push((name.into(), id));
        id
    }

    pub fn entries(&self) -> &[(String, NodeId)] {
        &self.entries
    }
}

pub fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// In-place stabilized softmax of one row.
pub fn softmax_row_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut denom = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        denom += *v;
    }
    for v in row.iter_mut() {
        *v /= denom;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn matmul_identity_and_hand_example() {
        let mut g = Graph::new();
        let i3 = g.leaf(Tensor::eye(3));
        let b = g.leaf(Tensor::from_fn(&[3, 2], |i| i as f64 + 1.0));
        let prod = g.matmul(i3, b).unwrap();
        assert!(g.value(prod).bit_eq(g.value(b)));

        let a = g.leaf(Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let ones = g.leaf(Tensor::new(vec![2, 1], vec![1.0, 1.0]).unwrap());
        let p = g.matmul(a, ones).unwrap();
        assert_eq!(g.value(p).data(), &[3.0, 7.0]);

        let bad = g.matmul(a, i3);
        assert!(matches!(bad, Err(crate::error::ProcanError::Dimension(_))));
    }

    #[test]
    fn conv2d_overlap_counting() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::filled(&[1, 3, 3], 1.0));
        let k = g.leaf(Tensor::filled(&[1, 1, 3, 3], 1.0));
        let y = g.conv2d(x, k, 1, 1).unwrap();
        assert_eq!(
            g.value(y).data(),
            &[4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0]
        );
    }

    #[test]
    fn conv2d_one_by_one_scalar_kernel() {
        let mut g = Graph::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = g.leaf(Tensor::uniform(&[1, 4, 4], -1.0, 1.0, &mut rng));
        let k = g.leaf(Tensor::filled(&[1, 1, 1, 1], 2.5));
        let y = g.conv2d(x, k, 1, 0).unwrap();
        for (a, b) in g.value(y).data().iter().zip(g.value(x).data()) {
            assert_eq!(*a, b * 2.5);
        }
    }

    #[test]
    fn conv2d_identity_kernel_is_bit_exact() {
        let mut g = Graph::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = g.leaf(Tensor::uniform(&[3, 5, 5], -2.0, 2.0, &mut rng));
        let mut k = Tensor::zeros(&[3, 3, 1, 1]);
        for c in 0..3 {
            k.data_mut()[c * 3 + c] = 1.0;
        }
        let kn = g.leaf(k);
        let y = g.conv2d(x, kn, 1, 0).unwrap();
        assert!(g.value(y).bit_eq(g.value(x)));
    }

    #[test]
    fn conv2d_stride2_downsamples_to_half() {
        let mut g = Graph::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = g.leaf(Tensor::uniform(&[4, 16, 16], -1.0, 1.0, &mut rng));
        let k = g.leaf(Tensor::uniform(&[64, 4, 3, 3], -0.1, 0.1, &mut rng));
        let y = g.conv2d(x, k, 2, 1).unwrap();
        assert_eq!(g.value(y).shape(), &[64, 8, 8]);
    }

    #[test]
    fn softmax_rows_basics() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::new(vec![2, 3], vec![0.0, 0.0, 0.0, 1000.0, 0.0, 0.0]).unwrap());
        let y = g.softmax_rows(x).unwrap();
        let d = g.value(y).data();
        for v in &d[0..3] {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        assert!((d[3] - 1.0).abs() < 1e-12);
        assert!(d[4].abs() < 1e-12 && d[5].abs() < 1e-12);
        assert!(g.value(y).all_finite());
    }

    #[test]
    fn activations_basics() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::new(vec![3], vec![-2.0, 0.0, 3.0]).unwrap());
        let r = g.relu(x);
        assert_eq!(g.value(r).data(), &[0.0, 0.0, 3.0]);
        let z = g.leaf(Tensor::scalar(0.0));
        let s = g.sigmoid(z);
        assert_eq!(g.value(s).item(), 0.5);
    }

    #[test]
    fn batchnorm_normalizes_and_handles_constant_channel() {
        let mut g = Graph::new();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut x = Tensor::uniform(&[4, 2, 3, 3], -3.0, 3.0, &mut rng);
        // Make channel 1 constant.
        for b in 0..4 {
            for i in 0..9 {
                x.data_mut()[(b * 2 + 1) * 9 + i] = 7.0;
            }
        }
        let xn = g.leaf(x);
        let scale = g.leaf(Tensor::filled(&[2], 1.0));
        let shift = g.leaf(Tensor::zeros(&[2]));
        let (y, stats) = g
            .batchnorm2d(xn, scale, shift, &[0.0, 0.0], &[1.0, 1.0], Mode::Train)
            .unwrap();
        let (mean, _var) = stats.unwrap();
        assert!((mean[1] - 7.0).abs() < 1e-12);
        let d = g.value(y).data();
        // Channel 0: zero mean, unit variance (within the eps bias).
        let n = 4.0 * 9.0;
        let mut mu = 0.0;
        let mut var = 0.0;
        for b in 0..4 {
            for i in 0..9 {
                mu += d[(b * 2) * 9 + i];
            }
        }
        mu /= n;
        for b in 0..4 {
            for i in 0..9 {
                let v = d[(b * 2) * 9 + i] - mu;
                var += v * v;
            }
        }
        var /= n;
        assert!(mu.abs() < 1e-10);
        assert!((var - 1.0).abs() < 1e-4);
        // Constant channel maps to exactly zero.
        for b in 0..4 {
            for i in 0..9 {
                assert_eq!(d[(b * 2 + 1) * 9 + i], 0.0);
            }
        }
    }

    #[test]
    fn batchnorm_rejects_small_train_batch() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::zeros(&[1, 2, 3, 3]));
        let scale = g.leaf(Tensor::filled(&[2], 1.0));
        let shift = g.leaf(Tensor::zeros(&[2]));
        let r = g.batchnorm2d(x, scale, shift, &[0.0, 0.0], &[1.0, 1.0], Mode::Train);
        assert!(matches!(r, Err(crate::error::ProcanError::Config(_))));
    }

    #[test]
    fn global_avg_pool_examples() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::filled(&[1, 3, 4, 4], 1.0));
        let y = g.global_avg_pool(x).unwrap();
        assert_eq!(g.value(y).data(), &[1.0, 1.0, 1.0]);
        let x2 = g.leaf(Tensor::new(vec![1, 1, 2, 2], vec![1.0, 3.0, 5.0, 7.0]).unwrap());
        let y2 = g.global_avg_pool(x2).unwrap();
        assert_eq!(g.value(y2).data(), &[4.0]);
    }

    #[test]
    fn dropout_contract() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut g = Graph::new();
        let x = g.leaf(Tensor::filled(&[100_000], 1.0));
        // p = 0 and eval mode are identity (same node).
        assert_eq!(g.dropout(x, 0.0, Mode::Train, &mut rng).unwrap(), x);
        assert_eq!(g.dropout(x, 0.7, Mode::Eval, &mut rng).unwrap(), x);
        assert!(g.dropout(x, 1.0, Mode::Train, &mut rng).is_err());
        let y = g.dropout(x, 0.5, Mode::Train, &mut rng).unwrap();
        let surviving = g.value(y).data().iter().filter(|&&v| v != 0.0).count();
        let frac = surviving as f64 / 100_000.0;
        assert!((0.49..=0.51).contains(&frac), "surviving fraction {frac}");
        // Survivors are scaled by 1/(1-p).
        for &v in g.value(y).data() {
            assert!(v == 0.0 || v == 2.0);
        }
    }

    #[test]
    fn dropout_masks_are_seed_deterministic() {
        let draw = || {
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            let mut g = Graph::new();
            let x = g.leaf(Tensor::filled(&[512], 1.0));
            let y = g.dropout(x, 0.5, Mode::Train, &mut rng).unwrap();
            g.value(y).clone()
        };
        assert!(draw().bit_eq(&draw()));
    }

    #[test]
    fn bce_examples() {
        let mut g = Graph::new();
        let z = g.leaf(Tensor::new(vec![1], vec![0.0]).unwrap());
        let l = g.bce_with_logits(z, &[1.0]).unwrap();
        assert!((g.value(l).item() - std::f64::consts::LN_2).abs() < 1e-12);

        let z2 = g.leaf(Tensor::new(vec![1], vec![40.0]).unwrap());
        let l2 = g.bce_with_logits(z2, &[1.0]).unwrap();
        let v = g.value(l2).item();
        assert!(v.is_finite() && v < 1e-10);

        let z3 = g.leaf(Tensor::new(vec![2], vec![0.0, 0.0]).unwrap());
        assert!(g.bce_with_logits(z3, &[0.5, 1.0]).is_err());
    }

    #[test]
    fn backward_square_and_constant() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::scalar(3.0));
        let sq = g.mul(x, x).unwrap();
        let loss = g.sum(sq);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).item(), 6.0);

        let mut g2 = Graph::new();
        let x2 = g2.leaf(Tensor::scalar(3.0));
        let c = g2.leaf(Tensor::scalar(5.0));
        let loss2 = g2.sum(c);
        g2.backward(loss2).unwrap();
        assert_eq!(g2.grad(x2).item(), 0.0);
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::zeros(&[3]));
        let y = g.relu(x);
        assert!(matches!(
            g.backward(y),
            Err(crate::error::ProcanError::Usage(_))
        ));
    }

    #[test]
    fn bce_gradient_is_sigmoid_minus_label() {
        let mut g = Graph::new();
        let z = g.leaf(Tensor::new(vec![2], vec![0.7, -1.3]).unwrap());
        let l = g.bce_with_logits(z, &[1.0, 0.0]).unwrap();
        g.backward(l).unwrap();
        let grad = g.grad(z).data();
        let want0 = (stable_sigmoid(0.7) - 1.0) / 2.0;
        let want1 = (stable_sigmoid(-1.3) - 0.0) / 2.0;
        assert!((grad[0] - want0).abs() < 1e-15);
        assert!((grad[1] - want1).abs() < 1e-15);
    }

    #[test]
    fn blend_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let f0 = Tensor::uniform(&[2, 3, 4, 4], -1.0, 1.0, &mut rng);
        let th = Tensor::uniform(&[2, 3, 4, 4], -1.0, 1.0, &mut rng);
        let mut g = Graph::new();
        let a = g.leaf(f0.clone());
        let b = g.leaf(th.clone());
        let zeros = Tensor::zeros(&[4, 4]);
        let ones = Tensor::filled(&[4, 4], 1.0);
        let y0 = g.blend_mask(a, b, &zeros).unwrap();
        assert!(g.value(y0).bit_eq(&f0));
        let y1 = g.blend_mask(a, b, &ones).unwrap();
        assert!(g.value(y1).bit_eq(&th));
        let h = g.blend_scalar(a, b, 0.5).unwrap();
        for ((&o, &x), &t) in g.value(h).data().iter().zip(f0.data()).zip(th.data()) {
            assert_eq!(o, 0.5 * t + 0.5 * x);
        }
    }
}
