//! The channel-attentive non-local (CAN) block and its ablation variants.
//!
//! A CAN block computes spatial attention over all positions (the non-local
//! part), derives a per-channel sigmoid gate from the same input, applies
//! the gate to the attended features, adds the residual, and finishes with
//! a 3x3 convolution, batch norm, and relu. The variants swap out or remove
//! the channel gate: plain non-local (no gate), non-local with a
//! squeeze-excite gate, and dual attention with an independent channel
//! attention map.

use crate::error::{ProcanError, Result};
use crate::numerics::{
    exact_sum, stable_sigmoid, Graph, Mode, NodeId, ParamBinder, Tensor,
};
use rand::Rng;
use serde::{Deserialize, Serialize};

const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CanVariant {
    Can,
    NonLocal,
    NonLocalSe,
    DualAttention,
}

impl CanVariant {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "can" => Ok(CanVariant::Can),
            "nonlocal" => Ok(CanVariant::NonLocal),
            "nonlocal-se" => Ok(CanVariant::NonLocalSe),
            "dual-attention" => Ok(CanVariant::DualAttention),
            other => Err(ProcanError::config(format!(
                "unknown attention variant '{other}' (expected can, nonlocal, nonlocal-se, dual-attention)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            CanVariant::Can => "can",
            CanVariant::NonLocal => "nonlocal",
            CanVariant::NonLocalSe => "nonlocal-se",
            CanVariant::DualAttention => "dual-attention",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CanBlockConfig {
    pub c_in: usize,
    pub c_out: usize,
    /// Intermediate channel count of the Q/K projections.
    pub c_bar: usize,
    /// Stride of the closing 3x3 convolution.
    pub stride: usize,
    pub variant: CanVariant,
}

impl CanBlockConfig {
    pub fn new(c_in: usize, c_out: usize, c_bar: usize, stride: usize, variant: CanVariant) -> Result<Self> {
        let cfg = CanBlockConfig {
            c_in,
            c_out,
            c_bar,
            stride,
            variant,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.c_bar < 1 || self.c_bar > self.c_in {
            return Err(ProcanError::config(format!(
                "c_bar must satisfy 1 <= c_bar <= c_in, got c_bar={} c_in={}",
                self.c_bar, self.c_in
            )));
        }
        if self.stride != 1 && self.stride != 2 {
            return Err(ProcanError::config(format!(
                "block stride must be 1 or 2, got {}",
                self.stride
            )));
        }
        if self.c_in == 0 || self.c_out == 0 {
            return Err(ProcanError::config("channel counts must be positive".to_string()));
        }
        Ok(())
    }

    fn se_hidden(&self) -> usize {
        (self.c_in / 4).max(1)
    }
}

/// Batch-norm state for one block: learnable scale/shift plus running
/// statistics (the latter are not learnable).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BnState {
    pub scale: Tensor,
    pub shift: Tensor,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

impl BnState {
    fn new(channels: usize) -> Self {
        BnState {
            scale: Tensor::filled(&[channels], 1.0),
            shift: Tensor::zeros(&[channels]),
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
        }
    }
}

/// Squeeze-excite gate parameters (only present on the NonLocalSe variant).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SeParams {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

/// Learnable state of one block. `me` exists only for the Can variant and
/// `se` only for NonLocalSe.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CanBlockParams {
    pub mq: Tensor,
    pub mk: Tensor,
    pub mv: Tensor,
    pub me: Option<Tensor>,
    pub se: Option<SeParams>,
    pub mo: Tensor,
    pub bn: BnState,
}

impl CanBlockParams {
    /// Exact learnable scalar count (running stats excluded).
    pub fn learnable_count(&self) -> usize {
        let mut n = self.mq.numel() + self.mk.numel() + self.mv.numel() + self.mo.numel();
        if let Some(me) = &self.me {
            n += me.numel();
        }
        if let Some(se) = &self.se {
            n += se.w1.numel() + se.b1.numel() + se.w2.numel() + se.b2.numel();
        }
        n + self.bn.scale.numel() + self.bn.shift.numel()
    }
}

/// Kaiming-uniform draw: U(-sqrt(6/fan_in), sqrt(6/fan_in)).
pub fn kaiming_uniform(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor {
    let bound = (6.0 / fan_in as f64).sqrt();
    Tensor::uniform(shape, -bound, bound, rng)
}

/// How the channel gate behaves during a forward pass. `ClampOne` is a
/// test hook that removes the gate so the block reduces to plain
/// non-local attention.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GateMode {
    Learned,
    ClampOne,
}

/// Graph handles produced by one block forward.
pub struct BlockForward {
    /// Pre-convolution features (attention output plus residual), [B,C,H,W].
    pub psi: NodeId,
    /// Block output after conv, batch norm, and relu.
    pub out: NodeId,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CanBlock {
    pub config: CanBlockConfig,
    pub params: CanBlockParams,
}

impl CanBlock {
    /// Fresh block with Kaiming-uniform projections, a zero gate vector
    /// (so the initial gate is the neutral 0.5), and identity batch norm.
    pub fn init(config: CanBlockConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let (c_in, c_out, c_bar) = (config.c_in, config.c_out, config.c_bar);
        let mq = kaiming_uniform(&[c_bar, c_in], c_in, rng);
        let mk = kaiming_uniform(&[c_bar, c_in], c_in, rng);
        let mv = kaiming_uniform(&[c_in, c_in], c_in, rng);
        let me = match config.variant {
            CanVariant::Can => Some(Tensor::zeros(&[c_in])),
            _ => None,
        };
        let se = match config.variant {
            CanVariant::NonLocalSe => {
                let hidden = config.se_hidden();
                Some(SeParams {
                    w1: kaiming_uniform(&[hidden, c_in], c_in, rng),
                    b1: Tensor::zeros(&[hidden]),
                    w2: kaiming_uniform(&[c_in, hidden], hidden, rng),
                    b2: Tensor::zeros(&[c_in]),
                })
            }
            _ => None,
        };
        let mo = kaiming_uniform(&[c_out, c_in, 3, 3], c_in * 9, rng);
        Ok(CanBlock {
            params: CanBlockParams {
                mq,
                mk,
                mv,
                me,
                se,
                mo,
                bn: BnState::new(c_out),
            },
            config,
        })
    }

    /// Record the block's forward onto `graph`. `prefix` namespaces the
    /// bound parameters. Train mode updates the running batch-norm stats.
    pub fn forward_on(
        &mut self,
        graph: &mut Graph,
        x: NodeId,
        mode: Mode,
        binder: &mut ParamBinder,
        prefix: &str,
        gate_mode: GateMode,
    ) -> Result<BlockForward> {
        let sx = graph.value(x).shape().to_vec();
        if sx.len() != 4 || sx[1] != self.config.c_in {
            return Err(ProcanError::dimension(format!(
                "block '{prefix}' expects [B,{},H,W], got {sx:?}",
                self.config.c_in
            )));
        }
        let (b, c_in, h, w) = (sx[0], sx[1], sx[2], sx[3]);
        let n = h * w;
        let xr = graph.reshape(x, &[b, c_in, n])?;

        let mq = binder.bind(graph, format!("{prefix}.mq"), &self.params.mq);
        let mk = binder.bind(graph, format!("{prefix}.mk"), &self.params.mk);
        let mv = binder.bind(graph, format!("{prefix}.mv"), &self.params.mv);

        let q = graph.linear_map(mq, xr)?;
        let k = graph.linear_map(mk, xr)?;
        let v = graph.linear_map(mv, xr)?;
        let qt = graph.transpose_last(q)?;
        let s = graph.bmm(qt, k)?;
        let b_attn = graph.softmax_rows(s)?;
        let a = graph.bmm(v, b_attn)?;

        let psi_flat = match self.config.variant {
            CanVariant::Can => {
                let gated = match gate_mode {
                    GateMode::ClampOne => a,
                    GateMode::Learned => {
                        let me = self.params.me.as_ref().expect("Can variant carries me");
                        let me_node = binder.bind(graph, format!("{prefix}.me"), me);
                        let me_row = graph.reshape(me_node, &[1, c_in])?;
                        let e = graph.linear_map(me_row, xr)?;
                        let et = graph.transpose_last(e)?;
                        let xe = graph.bmm(xr, et)?;
                        let xe = graph.reshape(xe, &[b, c_in])?;
                        let gate = graph.sigmoid(xe);
                        graph.mul_channel(a, gate)?
                    }
                };
                graph.add(gated, xr)?
            }
            CanVariant::NonLocal => graph.add(a, xr)?,
            CanVariant::NonLocalSe => {
                let se = self.params.se.as_ref().expect("NonLocalSe variant carries se");
                let w1 = binder.bind(graph, format!("{prefix}.se_w1"), &se.w1);
                let b1 = binder.bind(graph, format!("{prefix}.se_b1"), &se.b1);
                let w2 = binder.bind(graph, format!("{prefix}.se_w2"), &se.w2);
                let b2 = binder.bind(graph, format!("{prefix}.se_b2"), &se.b2);
                let a4 = graph.reshape(a, &[b, c_in, n, 1])?;
                let squeezed = graph.global_avg_pool(a4)?;
                let w1t = graph.transpose_last(w1)?;
                let z1 = graph.matmul(squeezed, w1t)?;
                let z1 = graph.add_bias(z1, b1)?;
                let z1 = graph.relu(z1);
                let w2t = graph.transpose_last(w2)?;
                let z2 = graph.matmul(z1, w2t)?;
                let z2 = graph.add_bias(z2, b2)?;
                let gate = graph.sigmoid(z2);
                let gated = graph.mul_channel(a, gate)?;
                graph.add(gated, xr)?
            }
            CanVariant::DualAttention => {
                let spatial = graph.add(a, xr)?;
                let xt = graph.transpose_last(xr)?;
                let s_c = graph.bmm(xr, xt)?;
                let b_c = graph.softmax_rows(s_c)?;
                let attended = graph.bmm(b_c, xr)?;
                let channel = graph.add(attended, xr)?;
                graph.add(spatial, channel)?
            }
        };

        let psi = graph.reshape(psi_flat, &[b, c_in, h, w])?;
        let mo = binder.bind(graph, format!("{prefix}.mo"), &self.params.mo);
        let conv = graph.conv2d(psi, mo, self.config.stride, 1)?;
        let scale = binder.bind(graph, format!("{prefix}.bn_scale"), &self.params.bn.scale);
        let shift = binder.bind(graph, format!("{prefix}.bn_shift"), &self.params.bn.shift);
        let (bn, stats) = graph.batchnorm2d(
            conv,
            scale,
            shift,
            &self.params.bn.running_mean,
            &self.params.bn.running_var,
            mode,
        )?;
        if let Some((mean, var)) = stats {
            for c in 0..self.config.c_out {
                self.params.bn.running_mean[c] =
                    (1.0 - BN_MOMENTUM) * self.params.bn.running_mean[c] + BN_MOMENTUM * mean[c];
                self.params.bn.running_var[c] =
                    (1.0 - BN_MOMENTUM) * self.params.bn.running_var[c] + BN_MOMENTUM * var[c];
            }
        }
        let out = graph.relu(bn);
        Ok(BlockForward { psi, out })
    }

    /// One-off forward on a plain tensor: builds a scratch graph.
    pub fn forward_tensor(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let mut graph = Graph::new();
        let mut binder = ParamBinder::new();
        let xn = graph.leaf(x.clone());
        let fwd = self.forward_on(&mut graph, xn, mode, &mut binder, "block", GateMode::Learned)?;
        Ok(graph.value(fwd.out).clone())
    }

    /// Apply `f` to every learnable tensor, in a fixed order, with
    /// `prefix`-qualified names matching `forward_on`'s bindings.
    pub fn visit_params_mut(
        &mut self,
        prefix: &str,
        f: &mut dyn FnMut(String, &mut Tensor),
    ) {
        f(format!("{prefix}.mq"), &mut self.params.mq);
        f(format!("{prefix}.mk"), &mut self.params.mk);
        f(format!("{prefix}.mv"), &mut self.params.mv);
        if let Some(me) = self.params.me.as_mut() {
            f(format!("{prefix}.me"), me);
        }
        if let Some(se) = self.params.se.as_mut() {
            f(format!("{prefix}.se_w1"), &mut se.w1);
            f(format!("{prefix}.se_b1"), &mut se.b1);
            f(format!("{prefix}.se_w2"), &mut se.w2);
            f(format!("{prefix}.se_b2"), &mut se.b2);
        }
        f(format!("{prefix}.mo"), &mut self.params.mo);
        f(format!("{prefix}.bn_scale"), &mut self.params.bn.scale);
        f(format!("{prefix}.bn_shift"), &mut self.params.bn.shift);
    }
}

/// Spatial attention only (the non-local core): projections, row-softmax
/// attention, and the attended features. No gate, residual, or conv.
///
/// Row-softmax denominators and the final contraction use correctly
/// rounded sums, so permuting the input columns permutes the output
/// columns bit-exactly.
pub fn nonlocal_core(x: &Tensor, params: &CanBlockParams) -> Result<Tensor> {
    let (c_bar, c_in) = (params.mq.dim(0), params.mq.dim(1));
    if x.rank() != 2 || x.dim(0) != c_in {
        return Err(ProcanError::dimension(format!(
            "nonlocal_core expects [{c_in},N], got {:?}",
            x.shape()
        )));
    }
    let n = x.dim(1);
    let xd = x.data();
    let project = |m: &Tensor, rows: usize| -> Vec<f64> {
        let md = m.data();
        let mut out = vec![0.0; rows * n];
        for r in 0..rows {
            for j in 0..n {
                let mut acc = 0.0;
                for c in 0..c_in {
                    acc += md[r * c_in + c] * xd[c * n + j];
                }
                out[r * n + j] = acc;
            }
        }
        out
    };
    let q = project(&params.mq, c_bar);
    let k = project(&params.mk, c_bar);
    let v = project(&params.mv, c_in);

    // S[i,j] = sum_z Q[z,i] K[z,j]; rows softmaxed with exact denominators.
    let mut b_attn = vec![0.0; n * n];
    for i in 0..n {
        let row = &mut b_attn[i * n..(i + 1) * n];
        for (j, slot) in row.iter_mut().enumerate() {
            let mut acc = 0.0;
            for z in 0..c_bar {
                acc += q[z * n + i] * k[z * n + j];
            }
            *slot = acc;
        }
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for slot in row.iter_mut() {
            *slot = (*slot - max).exp();
        }
        let denom = exact_sum(row.iter().copied());
        for slot in row.iter_mut() {
            *slot /= denom;
        }
    }

    let mut a = Tensor::zeros(&[c_in, n]);
    for c in 0..c_in {
        for j in 0..n {
            a.data_mut()[c * n + j] =
                exact_sum((0..n).map(|i| v[c * n + i] * b_attn[i * n + j]));
        }
    }
    Ok(a)
}

/// The channel gate: e = me^T X, then g_c = sigmoid(sum_j X[c,j] e_j).
/// Every component lies strictly inside (0,1).
pub fn channel_gate(x: &Tensor, me: &Tensor) -> Result<Tensor> {
    if x.rank() != 2 || me.rank() != 1 || me.dim(0) != x.dim(0) {
        return Err(ProcanError::dimension(format!(
            "channel_gate expects x [C,N] and me [C], got {:?} and {:?}",
            x.shape(),
            me.shape()
        )));
    }
    let (c_in, n) = (x.dim(0), x.dim(1));
    let xd = x.data();
    let med = me.data();
    let mut e = vec![0.0; n];
    for (j, ej) in e.iter_mut().enumerate() {
        let mut acc = 0.0;
        for c in 0..c_in {
            acc += med[c] * xd[c * n + j];
        }
        *ej = acc;
    }
    let mut g = Tensor::zeros(&[c_in]);
    for c in 0..c_in {
        let mut acc = 0.0;
        for (j, &ej) in e.iter().enumerate() {
            acc += xd[c * n + j] * ej;
        }
        // The sigmoid saturates to exactly 0.0 or 1.0 in f64 once |acc|
        // passes ~745; keep the contract's open interval.
        let v = stable_sigmoid(acc);
        g.data_mut()[c] = v
            .max(f64::MIN_POSITIVE)
            .min(f64::from_bits(1f64.to_bits() - 1));
    }
    Ok(g)
}

/// Attention bookkeeping for one block configuration at spatial size N:
/// the attention-map shapes, the number of attention matrix-multiply
/// chains, and the exact learnable parameter count.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttentionShapeSummary {
    pub spatial_attention_shape: Option<(usize, usize)>,
    pub channel_attention_shape: Option<(usize, usize)>,
    pub matrix_multiply_count: usize,
    pub parameter_count: usize,
}

pub fn shape_summary(config: &CanBlockConfig, n: usize) -> AttentionShapeSummary {
    let (c_in, c_out, c_bar) = (config.c_in, config.c_out, config.c_bar);
    let shared = 2 * c_bar * c_in + c_in * c_in + c_out * c_in * 9 + 2 * c_out;
    match config.variant {
        CanVariant::Can => AttentionShapeSummary {
            spatial_attention_shape: Some((n, n)),
            channel_attention_shape: Some((c_in, 1)),
            matrix_multiply_count: 2,
            parameter_count: shared + c_in,
        },
        CanVariant::NonLocal => AttentionShapeSummary {
            spatial_attention_shape: Some((n, n)),
            channel_attention_shape: None,
            matrix_multiply_count: 1,
            parameter_count: shared,
        },
        CanVariant::NonLocalSe => {
            let hidden = config.se_hidden();
            AttentionShapeSummary {
                spatial_attention_shape: Some((n, n)),
                channel_attention_shape: Some((c_in, 1)),
                matrix_multiply_count: 1,
                parameter_count: shared + hidden * c_in + hidden + c_in * hidden + c_in,
            }
        }
        CanVariant::DualAttention => AttentionShapeSummary {
            spatial_attention_shape: Some((n, n)),
            channel_attention_shape: Some((c_in, c_in)),
            matrix_multiply_count: 2,
            parameter_count: shared,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn block(variant: CanVariant, c_in: usize, c_out: usize, seed: u64) -> CanBlock {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let config = CanBlockConfig::new(c_in, c_out, 1, 1, variant).unwrap();
        CanBlock::init(config, &mut rng).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(CanBlockConfig::new(4, 4, 5, 1, CanVariant::Can).is_err());
        assert!(CanBlockConfig::new(4, 4, 0, 1, CanVariant::Can).is_err());
        assert!(CanBlockConfig::new(4, 4, 1, 3, CanVariant::Can).is_err());
        assert!(CanBlockConfig::new(4, 8, 4, 2, CanVariant::Can).is_ok());
    }

    #[test]
    fn zero_input_singleton_runs_through_the_block() {
        // C_in = 1, H = W = 1, zero input, zero conv kernel: every
        // intermediate collapses (softmax of one element is 1, gate 0.5)
        // and the output is zero.
        let mut blk = block(CanVariant::Can, 1, 1, 0);
        blk.params.mo = Tensor::zeros(&[1, 1, 3, 3]);
        let x2 = Tensor::zeros(&[1, 1]);
        let a = nonlocal_core(&x2, &blk.params).unwrap();
        assert_eq!(a.data(), &[0.0]);
        let g = channel_gate(&x2, blk.params.me.as_ref().unwrap()).unwrap();
        assert_eq!(g.data(), &[0.5]);
        let out = blk
            .forward_tensor(&Tensor::zeros(&[1, 1, 1, 1]), Mode::Eval)
            .unwrap();
        assert_eq!(out.data(), &[0.0]);
    }

    #[test]
    fn zero_value_projection_leaves_residual_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut blk = block(CanVariant::Can, 3, 3, 1);
        blk.params.mv = Tensor::zeros(&[3, 3]);
        let x = Tensor::uniform(&[2, 3, 4, 4], -1.0, 1.0, &mut rng);
        let mut graph = Graph::new();
        let mut binder = ParamBinder::new();
        let xn = graph.leaf(x.clone());
        let fwd = blk
            .forward_on(&mut graph, xn, Mode::Eval, &mut binder, "b", GateMode::Learned)
            .unwrap();
        // A = V * B = 0, so psi is exactly the input.
        assert!(graph.value(fwd.psi).bit_eq(&x));
    }

    #[test]
    fn nonlocal_core_singleton_returns_value_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let blk = block(CanVariant::Can, 3, 3, 2);
        let x = Tensor::uniform(&[3, 1], -1.0, 1.0, &mut rng);
        let a = nonlocal_core(&x, &blk.params).unwrap();
        // N = 1: B = [1], so A = V.
        let mv = blk.params.mv.data();
        for c in 0..3 {
            let mut want = 0.0;
            for z in 0..3 {
                want += mv[c * 3 + z] * x.data()[z];
            }
            assert!((a.data()[c] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn nonlocal_core_is_permutation_equivariant_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let blk = block(CanVariant::Can, 4, 4, 3);
        let n = 12;
        let x = Tensor::uniform(&[4, n], -2.0, 2.0, &mut rng);
        let a = nonlocal_core(&x, &blk.params).unwrap();
        for trial in 0..10 {
            let mut perm: Vec<usize> = (0..n).collect();
            for i in (1..n).rev() {
                let j = (rng.random::<u64>() as usize) % (i + 1);
                perm.swap(i, j);
            }
            let xp = Tensor::from_fn(&[4, n], |i| {
                let (c, j) = (i / n, i % n);
                x.data()[c * n + perm[j]]
            });
            let ap = nonlocal_core(&xp, &blk.params).unwrap();
            for c in 0..4 {
                for j in 0..n {
                    let lhs = ap.data()[c * n + j];
                    let rhs = a.data()[c * n + perm[j]];
                    assert_eq!(
                        lhs.to_bits(),
                        rhs.to_bits(),
                        "trial {trial}: equivariance broke at ({c},{j})"
                    );
                }
            }
        }
    }

    #[test]
    fn channel_gate_degenerate_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Tensor::zeros(&[3, 7]);
        let me = Tensor::uniform(&[3], -1.0, 1.0, &mut rng);
        for &v in channel_gate(&x, &me).unwrap().data() {
            assert_eq!(v, 0.5);
        }
        let x2 = Tensor::uniform(&[3, 7], -1.0, 1.0, &mut rng);
        let me0 = Tensor::zeros(&[3]);
        for &v in channel_gate(&x2, &me0).unwrap().data() {
            assert_eq!(v, 0.5);
        }
        // Strictly inside (0,1) on wild inputs.
        let x3 = Tensor::uniform(&[3, 7], -100.0, 100.0, &mut rng);
        let me3 = Tensor::uniform(&[3], -10.0, 10.0, &mut rng);
        for &v in channel_gate(&x3, &me3).unwrap().data() {
            assert!(v > 0.0 && v < 1.0);
        }
    }

    #[test]
    fn clamped_gate_matches_nonlocal_variant_psi() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let can = block(CanVariant::Can, 4, 4, 5);
        let mut nl = block(CanVariant::NonLocal, 4, 4, 99);
        // Share the attention projections.
        nl.params.mq = can.params.mq.clone();
        nl.params.mk = can.params.mk.clone();
        nl.params.mv = can.params.mv.clone();
        nl.params.mo = can.params.mo.clone();
        let mut can = can;
        let x = Tensor::uniform(&[2, 4, 3, 3], -1.0, 1.0, &mut rng);

        let mut g1 = Graph::new();
        let mut b1 = ParamBinder::new();
        let x1 = g1.leaf(x.clone());
        let f1 = can
            .forward_on(&mut g1, x1, Mode::Eval, &mut b1, "b", GateMode::ClampOne)
            .unwrap();
        let mut g2 = Graph::new();
        let mut b2 = ParamBinder::new();
        let x2 = g2.leaf(x.clone());
        let f2 = nl
            .forward_on(&mut g2, x2, Mode::Eval, &mut b2, "b", GateMode::Learned)
            .unwrap();
        assert!(g1.value(f1.psi).bit_eq(g2.value(f2.psi)));
    }

    #[test]
    fn se_gate_with_zero_weights_halves_the_attention_term() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut blk = block(CanVariant::NonLocalSe, 4, 4, 6);
        let se = blk.params.se.as_mut().unwrap();
        se.w1 = Tensor::zeros(se.w1.shape());
        se.w2 = Tensor::zeros(se.w2.shape());
        let x = Tensor::uniform(&[1, 4, 3, 3], -1.0, 1.0, &mut rng);
        let mut graph = Graph::new();
        let mut binder = ParamBinder::new();
        let xn = graph.leaf(x.clone());
        let fwd = blk
            .forward_on(&mut graph, xn, Mode::Eval, &mut binder, "b", GateMode::Learned)
            .unwrap();
        // gate = sigmoid(0) = 0.5, so psi = 0.5*A + X.
        let x2 = x.reshaped(&[4, 9]).unwrap();
        let a = nonlocal_core(&x2, &blk.params).unwrap();
        let psi = graph.value(fwd.psi).reshaped(&[4, 9]).unwrap();
        for i in 0..36 {
            let want = 0.5 * a.data()[i] + x2.data()[i];
            assert!((psi.data()[i] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn shape_summary_table() {
        let can = CanBlockConfig::new(4, 4, 1, 1, CanVariant::Can).unwrap();
        let s = shape_summary(&can, 25);
        assert_eq!(s.spatial_attention_shape, Some((25, 25)));
        assert_eq!(s.channel_attention_shape, Some((4, 1)));
        assert_eq!(s.matrix_multiply_count, 2);

        let nl = CanBlockConfig::new(4, 4, 1, 1, CanVariant::NonLocal).unwrap();
        assert_eq!(shape_summary(&nl, 25).channel_attention_shape, None);

        let da = CanBlockConfig::new(4, 4, 1, 1, CanVariant::DualAttention).unwrap();
        assert_eq!(shape_summary(&da, 25).channel_attention_shape, Some((4, 4)));
    }

    #[test]
    fn parameter_count_matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for variant in [
            CanVariant::Can,
            CanVariant::NonLocal,
            CanVariant::NonLocalSe,
            CanVariant::DualAttention,
        ] {
            for (c_in, c_out, c_bar) in [(4, 4, 1), (4, 8, 2), (8, 8, 8), (3, 5, 1)] {
                let config = CanBlockConfig::new(c_in, c_out, c_bar, 1, variant).unwrap();
                let blk = CanBlock::init(config.clone(), &mut rng).unwrap();
                assert_eq!(
                    shape_summary(&config, 9).parameter_count,
                    blk.params.learnable_count(),
                    "count mismatch for {variant:?} c_in={c_in} c_out={c_out} c_bar={c_bar}"
                );
            }
        }
    }

    #[test]
    fn parameter_count_grows_with_c_bar() {
        let mut last = 0;
        for c_bar in 1..=8 {
            let config = CanBlockConfig::new(8, 8, c_bar, 1, CanVariant::Can).unwrap();
            let count = shape_summary(&config, 16).parameter_count;
            assert!(count > last);
            last = count;
        }
    }

    #[test]
    fn attention_rows_sum_to_one_through_the_graph() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut graph = Graph::new();
        let s = graph.leaf(Tensor::uniform(&[3, 6, 6], -30.0, 30.0, &mut rng));
        let b = graph.softmax_rows(s).unwrap();
        for row in graph.value(b).data().chunks_exact(6) {
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&v| v >= 0.0));
        }
    }
}
