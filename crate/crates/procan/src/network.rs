//! Block stacks: base feature extractor, grown extended blocks, global
//! average pooling, dropout, and the fully-connected head that emits one
//! raw logit per sample.

use crate::attention::{CanBlock, CanBlockConfig, CanVariant, GateMode};
use crate::error::{ProcanError, Result};
use crate::numerics::{stable_sigmoid, Graph, Mode, NodeId, ParamBinder, Tensor};
use crate::progrow::{blend, BlendStrategy, GrowthState, Phase};
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

/// How the intermediate attention channel count is derived from a block's
/// input channels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CBarRule {
    One,
    InOver8,
    In,
}

impl CBarRule {
    pub fn apply(&self, c_in: usize) -> usize {
        match self {
            CBarRule::One => 1,
            CBarRule::InOver8 => (c_in / 8).max(1),
            CBarRule::In => c_in,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "1" | "one" => Ok(CBarRule::One),
            "in/8" | "in-over-8" => Ok(CBarRule::InOver8),
            "in" => Ok(CBarRule::In),
            other => Err(ProcanError::config(format!(
                "unknown c_bar rule '{other}' (expected one, in/8, in)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            CBarRule::One => "one",
            CBarRule::InOver8 => "in/8",
            CBarRule::In => "in",
        }
    }
}

/// Static architecture: the base block chain, the template grown blocks
/// follow, and the classifier head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_channels: usize,
    pub input_hw: usize,
    pub blocks: Vec<CanBlockConfig>,
    pub extended_template: CanBlockConfig,
    pub extended_budget: usize,
    pub dropout_p: f64,
}

impl NetworkSpec {
    /// Build a spec from a per-block (c_out, stride) plan. Consecutive
    /// blocks chain channels automatically.
    pub fn new(
        input_channels: usize,
        input_hw: usize,
        plan: &[(usize, usize)],
        c_bar_rule: CBarRule,
        variant: CanVariant,
        extended_budget: usize,
        dropout_p: f64,
    ) -> Result<Self> {
        if plan.is_empty() {
            return Err(ProcanError::config("network needs at least one block".to_string()));
        }
        if !(0.0..1.0).contains(&dropout_p) {
            return Err(ProcanError::config(format!(
                "dropout probability must satisfy 0 <= p < 1, got {dropout_p}"
            )));
        }
        let mut blocks = Vec::with_capacity(plan.len());
        let mut c_in = input_channels;
        for &(c_out, stride) in plan {
            blocks.push(CanBlockConfig::new(
                c_in,
                c_out,
                c_bar_rule.apply(c_in),
                stride,
                variant,
            )?);
            c_in = c_out;
        }
        let last = blocks.last().unwrap().c_out;
        let extended_template =
            CanBlockConfig::new(last, last, c_bar_rule.apply(last), 1, variant)?;
        let spec = NetworkSpec {
            input_channels,
            input_hw,
            blocks,
            extended_template,
            extended_budget,
            dropout_p,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// The published architecture: four base blocks 32-32-64-128-256 with
    /// strides 1,2,2,1 on a 32-channel 32x32 input, growing up to three
    /// shape-preserving extended blocks.
    pub fn full_scale() -> Self {
        NetworkSpec::new(
            32,
            32,
            &[(32, 1), (64, 2), (128, 2), (256, 1)],
            CBarRule::One,
            CanVariant::Can,
            3,
            0.5,
        )
        .expect("full-scale spec is valid")
    }

    /// Reduced configuration sized so end-to-end runs finish in minutes on
    /// a CPU: channels 8/16/32/32 on a 16-channel 16x16 input.
    pub fn desk_scale() -> Self {
        NetworkSpec::new(
            16,
            16,
            &[(8, 1), (16, 2), (32, 2), (32, 1)],
            CBarRule::One,
            CanVariant::Can,
            2,
            0.5,
        )
        .expect("desk-scale spec is valid")
    }

    pub fn validate(&self) -> Result<()> {
        let mut c_in = self.input_channels;
        for (i, b) in self.blocks.iter().enumerate() {
            b.validate()?;
            if b.c_in != c_in {
                return Err(ProcanError::config(format!(
                    "block {i} expects {} input channels but the chain provides {c_in}",
                    b.c_in
                )));
            }
            c_in = b.c_out;
        }
        let t = &self.extended_template;
        t.validate()?;
        if t.c_in != c_in || t.c_out != c_in || t.stride != 1 {
            return Err(ProcanError::config(
                "extended blocks must preserve the final shape (c_in = c_out, stride 1)"
                    .to_string(),
            ));
        }
        // The spatial chain must stay positive through every stride.
        let mut hw = self.input_hw;
        for (i, b) in self.blocks.iter().enumerate() {
            hw = conv_out(hw, b.stride);
            if hw == 0 {
                return Err(ProcanError::config(format!(
                    "spatial size collapses to zero at block {i}"
                )));
            }
        }
        Ok(())
    }

    pub fn fc_in(&self) -> usize {
        self.blocks.last().unwrap().c_out
    }

    /// Spatial side of the feature maps after the base chain (where
    /// extended blocks and their masks live).
    pub fn feature_hw(&self) -> usize {
        self.blocks
            .iter()
            .fold(self.input_hw, |hw, b| conv_out(hw, b.stride))
    }

    /// Per-layer (name, output shape) chain computed from the configs,
    /// including `extended` grown-block rows.
    pub fn shape_plan(&self, extended: usize) -> Vec<(String, Vec<usize>)> {
        let mut rows = Vec::new();
        let mut hw = self.input_hw;
        for (i, b) in self.blocks.iter().enumerate() {
            hw = conv_out(hw, b.stride);
            rows.push((format!("base{}", i + 1), vec![b.c_out, hw, hw]));
        }
        let c = self.fc_in();
        for i in 0..extended {
            rows.push((format!("ext{}", i + 1), vec![c, hw, hw]));
        }
        rows.push(("gap".to_string(), vec![c, 1, 1]));
        rows.push(("fc".to_string(), vec![1]));
        rows
    }
}

fn conv_out(hw: usize, stride: usize) -> usize {
    // 3x3 kernel, padding 1.
    (hw + 2 - 3) / stride + 1
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExtendedBlock {
    pub block: CanBlock,
    pub growth: GrowthState,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Network {
    pub spec: NetworkSpec,
    pub base: Vec<CanBlock>,
    pub extended: Vec<ExtendedBlock>,
    /// Classifier weight, [1, C].
    pub fc_weight: Tensor,
    pub fc_bias: Tensor,
}

/// Builds the base network with zero extended blocks.
pub fn build(spec: NetworkSpec, rng: &mut impl Rng) -> Result<Network> {
    spec.validate()?;
    let mut base = Vec::with_capacity(spec.blocks.len());
    for cfg in &spec.blocks {
        base.push(CanBlock::init(cfg.clone(), rng)?);
    }
    let c = spec.fc_in();
    let fc_weight = crate::attention::kaiming_uniform(&[1, c], c, rng);
    let fc_bias = Tensor::zeros(&[1]);
    Ok(Network {
        spec,
        base,
        extended: Vec::new(),
        fc_weight,
        fc_bias,
    })
}

impl Network {
    /// Record the whole network forward: base blocks, extended blocks with
    /// their blending rules, global average pooling, dropout (train only),
    /// and the fully-connected head. Returns raw logits, shape [B].
    #[allow(clippy::too_many_arguments)]
    pub fn forward_full(
        &mut self,
        graph: &mut Graph,
        x: NodeId,
        mode: Mode,
        binder: &mut ParamBinder,
        dropout_rng: &mut impl Rng,
        mask_rng: &mut impl Rng,
        mut trace: Option<&mut Vec<(String, Vec<usize>)>>,
    ) -> Result<NodeId> {
        let sx = graph.value(x).shape().to_vec();
        if sx.len() != 4 || sx[1] != self.spec.input_channels {
            return Err(ProcanError::dimension(format!(
                "network expects [B,{},H,W], got {sx:?}",
                self.spec.input_channels
            )));
        }
        let batch = sx[0];
        let mut feat = x;
        for (i, blk) in self.base.iter_mut().enumerate() {
            let name = format!("base{}", i + 1);
            feat = blk
                .forward_on(graph, feat, mode, binder, &name, GateMode::Learned)?
                .out;
            if let Some(t) = trace.as_deref_mut() {
                t.push((name, graph.value(feat).shape().to_vec()));
            }
        }
        for (i, ext) in self.extended.iter_mut().enumerate() {
            if ext.growth.phase == Phase::Start {
                continue;
            }
            let shape = graph.value(feat).shape().to_vec();
            if mode == Mode::Train {
                ext.growth.resample_mask(shape[2], shape[3], mask_rng)?;
            }
            let name = format!("ext{}", i + 1);
            let theta = ext
                .block
                .forward_on(graph, feat, mode, binder, &name, GateMode::Learned)?
                .out;
            feat = blend(graph, feat, theta, &ext.growth)?;
            if let Some(t) = trace.as_deref_mut() {
                t.push((name, graph.value(feat).shape().to_vec()));
            }
        }
        let pooled = graph.global_avg_pool(feat)?;
        if let Some(t) = trace.as_deref_mut() {
            t.push(("gap".to_string(), graph.value(pooled).shape().to_vec()));
        }
        let dropped = graph.dropout(pooled, self.spec.dropout_p, mode, dropout_rng)?;
        let w = binder.bind(graph, "fc.weight", &self.fc_weight);
        let b = binder.bind(graph, "fc.bias", &self.fc_bias);
        let wt = graph.transpose_last(w)?;
        let scores = graph.matmul(dropped, wt)?;
        let scores = graph.add_bias(scores, b)?;
        let logits = graph.reshape(scores, &[batch])?;
        if let Some(t) = trace.as_deref_mut() {
            t.push(("fc".to_string(), graph.value(logits).shape().to_vec()));
        }
        Ok(logits)
    }

    pub fn forward_on(
        &mut self,
        graph: &mut Graph,
        x: NodeId,
        mode: Mode,
        binder: &mut ParamBinder,
        dropout_rng: &mut impl Rng,
        mask_rng: &mut impl Rng,
    ) -> Result<NodeId> {
        self.forward_full(graph, x, mode, binder, dropout_rng, mask_rng, None)
    }

    /// Deterministic eval-mode logits for a batch.
    pub fn eval_logits(&mut self, batch: &Tensor) -> Result<Tensor> {
        // Eval mode draws nothing from either stream.
        let mut unused = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut unused2 = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut graph = Graph::new();
        let mut binder = ParamBinder::new();
        let x = graph.leaf(batch.clone());
        let logits = self.forward_on(
            &mut graph,
            x,
            Mode::Eval,
            &mut binder,
            &mut unused,
            &mut unused2,
        )?;
        Ok(graph.value(logits).clone())
    }

    /// Sigmoid of the eval-mode logits, each strictly inside (0,1) up to
    /// f64 saturation.
    pub fn predict_proba(&mut self, batch: &Tensor) -> Result<Tensor> {
        Ok(self.eval_logits(batch)?.map(stable_sigmoid))
    }

    /// Exact count of learnable scalars (running stats excluded).
    pub fn param_count(&self) -> usize {
        let blocks: usize = self
            .base
            .iter()
            .map(|b| b.params.learnable_count())
            .chain(self.extended.iter().map(|e| e.block.params.learnable_count()))
            .sum();
        blocks + self.fc_weight.numel() + self.fc_bias.numel()
    }

    /// Visit every learnable tensor with its binding name, in the fixed
    /// order base blocks, extended blocks, classifier head.
    pub fn visit_params_mut(&mut self, f: &mut dyn FnMut(String, &mut Tensor)) {
        for (i, blk) in self.base.iter_mut().enumerate() {
            blk.visit_params_mut(&format!("base{}", i + 1), f);
        }
        for (i, ext) in self.extended.iter_mut().enumerate() {
            ext.block.visit_params_mut(&format!("ext{}", i + 1), f);
        }
        f("fc.weight".to_string(), &mut self.fc_weight);
        f("fc.bias".to_string(), &mut self.fc_bias);
    }

    /// Append a new extended block in its start state. Errors once the
    /// configured budget is reached.
    pub fn grow_block(&mut self, strategy: BlendStrategy, rng: &mut impl Rng) -> Result<usize> {
        if self.extended.len() >= self.spec.extended_budget {
            return Err(ProcanError::state(format!(
                "extended-block budget exhausted ({} of {})",
                self.extended.len(),
                self.spec.extended_budget
            )));
        }
        let block = CanBlock::init(self.spec.extended_template.clone(), rng)?;
        self.extended.push(ExtendedBlock {
            block,
            growth: GrowthState::new(strategy),
        });
        Ok(self.extended.len() - 1)
    }
}
