//! Progressive growing of extended blocks: growth states, Bernoulli mask
//! sampling, and the three blending strategies used while a new block
//! transitions into the network.
//!
//! A freshly grown block starts fully blocked (p = 0), walks the schedule
//! p = 0.25, 0.5, 0.75, 1 one epoch at a time, and is then a permanent
//! part of the stack. Bernoulli blending routes each spatial position
//! wholly through the old or new path so feature values are never scaled.

use crate::error::{ProcanError, Result};
use crate::network::Network;
use crate::numerics::{Graph, NodeId, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BlendStrategy {
    None,
    Scalar,
    Bernoulli,
}

impl BlendStrategy {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(BlendStrategy::None),
            "scalar" => Ok(BlendStrategy::Scalar),
            "bernoulli" => Ok(BlendStrategy::Bernoulli),
            other => Err(ProcanError::config(format!(
                "unknown blending strategy '{other}' (expected none, scalar, bernoulli)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            BlendStrategy::None => "none",
            BlendStrategy::Scalar => "scalar",
            BlendStrategy::Bernoulli => "bernoulli",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Start,
    Transition,
    Final,
}

/// Where one extended block stands in its growth schedule.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GrowthState {
    pub phase: Phase,
    pub p: f64,
    pub omega: Option<Tensor>,
    pub strategy: BlendStrategy,
    /// p values not yet visited.
    pub schedule: Vec<f64>,
}

impl GrowthState {
    /// Start state: the block exists but passes nothing through.
    pub fn new(strategy: BlendStrategy) -> Self {
        let schedule = match strategy {
            // No blending: the block switches on abruptly at the first
            // advance.
            BlendStrategy::None => vec![1.0],
            _ => vec![0.25, 0.5, 0.75, 1.0],
        };
        GrowthState {
            phase: Phase::Start,
            p: 0.0,
            omega: None,
            strategy,
            schedule,
        }
    }

    /// Step to the next p in the schedule (one advance per epoch).
    /// Reaching p = 1 enters the final phase and retires the mask.
    pub fn advance(&mut self, h: usize, w: usize, rng: &mut impl Rng) -> Result<()> {
        if self.phase == Phase::Final {
            return Err(ProcanError::state(
                "cannot advance a growth state already in its final phase".to_string(),
            ));
        }
        let next = self.schedule.remove(0);
        self.p = next;
        if (next - 1.0).abs() < f64::EPSILON {
            self.phase = Phase::Final;
            self.omega = None;
        } else {
            self.phase = Phase::Transition;
            if self.strategy == BlendStrategy::Bernoulli {
                self.omega = Some(sample_mask(self.p, h, w, rng)?);
            }
        }
        Ok(())
    }

    /// Draw a fresh mask at the current p. Called once per training
    /// forward pass while a Bernoulli-blended block is in transition.
    pub fn resample_mask(&mut self, h: usize, w: usize, rng: &mut impl Rng) -> Result<()> {
        if self.strategy == BlendStrategy::Bernoulli && self.phase == Phase::Transition {
            self.omega = Some(sample_mask(self.p, h, w, rng)?);
        }
        Ok(())
    }

    /// Jump straight to the final phase (used when the epoch budget runs
    /// out mid-transition).
    pub fn force_final(&mut self) {
        self.phase = Phase::Final;
        self.p = 1.0;
        self.omega = None;
        self.schedule.clear();
    }
}

/// An H x W matrix of i.i.d. {0,1} draws with P(1) = p.
pub fn sample_mask(p: f64, h: usize, w: usize, rng: &mut impl Rng) -> Result<Tensor> {
    if !(0.0..=1.0).contains(&p) {
        return Err(ProcanError::config(format!(
            "mask probability must be in [0,1], got {p}"
        )));
    }
    Ok(Tensor::from_fn(&[h, w], |_| {
        if rng.random::<f64>() < p {
            1.0
        } else {
            0.0
        }
    }))
}

/// Combine the old path `f0` and the new block's output `theta` according
/// to the growth state, on the graph. The p = 0 and p = 1 ends reuse the
/// input nodes directly so they are identities bit for bit.
pub fn blend(
    graph: &mut Graph,
    f0: NodeId,
    theta: NodeId,
    state: &GrowthState,
) -> Result<NodeId> {
    match state.strategy {
        BlendStrategy::None => Ok(theta),
        BlendStrategy::Scalar => {
            if state.p == 0.0 {
                Ok(f0)
            } else if state.p == 1.0 {
                Ok(theta)
            } else {
                graph.blend_scalar(f0, theta, state.p)
            }
        }
        BlendStrategy::Bernoulli => match state.phase {
            Phase::Start => Ok(f0),
            Phase::Final => Ok(theta),
            Phase::Transition => {
                let omega = state.omega.as_ref().ok_or_else(|| {
                    ProcanError::state(
                        "bernoulli blend in transition requires a sampled mask".to_string(),
                    )
                })?;
                graph.blend_mask(f0, theta, omega)
            }
        },
    }
}

/// Tensor-level convenience wrapper around `blend` for tests and direct use.
pub fn blend_tensors(f0: &Tensor, theta: &Tensor, state: &GrowthState) -> Result<Tensor> {
    let mut graph = Graph::new();
    let a = graph.leaf(f0.clone());
    let b = graph.leaf(theta.clone());
    let out = blend(&mut graph, a, b, state)?;
    Ok(graph.value(out).clone())
}

/// Append a freshly initialized shape-preserving block in its start state.
/// Evaluation outputs are unchanged until the first advance.
pub fn grow(net: &mut Network, strategy: BlendStrategy, rng: &mut ChaCha8Rng) -> Result<usize> {
    net.grow_block(strategy, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn degenerate_masks() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let zeros = sample_mask(0.0, 8, 8, &mut rng).unwrap();
        assert!(zeros.data().iter().all(|&v| v == 0.0));
        let ones = sample_mask(1.0, 8, 8, &mut rng).unwrap();
        assert!(ones.data().iter().all(|&v| v == 1.0));
        assert!(sample_mask(1.5, 4, 4, &mut rng).is_err());
    }

    #[test]
    fn mask_frequency_concentrates() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut ones = 0usize;
        for _ in 0..100 {
            let m = sample_mask(0.5, 100, 100, &mut rng).unwrap();
            ones += m.data().iter().filter(|&&v| v == 1.0).count();
        }
        let frac = ones as f64 / 1_000_000.0;
        assert!((0.49..=0.51).contains(&frac), "ones fraction {frac}");
    }

    #[test]
    fn schedule_walks_start_transition_final() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut st = GrowthState::new(BlendStrategy::Bernoulli);
        assert_eq!(st.phase, Phase::Start);
        assert_eq!(st.p, 0.0);
        st.advance(4, 4, &mut rng).unwrap();
        assert_eq!(st.phase, Phase::Transition);
        assert_eq!(st.p, 0.25);
        assert!(st.omega.is_some());
        st.advance(4, 4, &mut rng).unwrap();
        assert_eq!(st.p, 0.5);
        st.advance(4, 4, &mut rng).unwrap();
        assert_eq!(st.p, 0.75);
        st.advance(4, 4, &mut rng).unwrap();
        assert_eq!(st.phase, Phase::Final);
        assert_eq!(st.p, 1.0);
        assert!(st.omega.is_none());
        assert!(st.advance(4, 4, &mut rng).is_err());
    }

    #[test]
    fn none_strategy_switches_on_at_first_advance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut st = GrowthState::new(BlendStrategy::None);
        st.advance(4, 4, &mut rng).unwrap();
        assert_eq!(st.phase, Phase::Final);
        assert_eq!(st.p, 1.0);
    }

    #[test]
    fn blend_endpoints_are_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let f0 = Tensor::uniform(&[2, 3, 4, 4], -1.0, 1.0, &mut rng);
        let th = Tensor::uniform(&[2, 3, 4, 4], -1.0, 1.0, &mut rng);

        let mut start = GrowthState::new(BlendStrategy::Bernoulli);
        assert!(blend_tensors(&f0, &th, &start).unwrap().bit_eq(&f0));
        for _ in 0..4 {
            start.advance(4, 4, &mut rng).unwrap();
        }
        assert!(blend_tensors(&f0, &th, &start).unwrap().bit_eq(&th));

        let scalar_start = GrowthState::new(BlendStrategy::Scalar);
        assert!(blend_tensors(&f0, &th, &scalar_start).unwrap().bit_eq(&f0));

        let none = GrowthState::new(BlendStrategy::None);
        assert!(blend_tensors(&f0, &th, &none).unwrap().bit_eq(&th));
    }

    #[test]
    fn bernoulli_blend_never_mixes_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let f0 = Tensor::uniform(&[2, 3, 5, 5], -1.0, 1.0, &mut rng);
            let th = Tensor::uniform(&[2, 3, 5, 5], -1.0, 1.0, &mut rng);
            let mut st = GrowthState::new(BlendStrategy::Bernoulli);
            st.advance(5, 5, &mut rng).unwrap();
            st.advance(5, 5, &mut rng).unwrap();
            let out = blend_tensors(&f0, &th, &st).unwrap();
            for ((&o, &a), &b) in out.data().iter().zip(f0.data()).zip(th.data()) {
                assert!(
                    o.to_bits() == a.to_bits() || o.to_bits() == b.to_bits(),
                    "blend produced a mixed value"
                );
            }
        }
    }

    #[test]
    fn scalar_blend_mixes_values_generically() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let f0 = Tensor::uniform(&[1, 2, 4, 4], 1.0, 2.0, &mut rng);
        let th = Tensor::uniform(&[1, 2, 4, 4], 3.0, 4.0, &mut rng);
        let mut st = GrowthState::new(BlendStrategy::Scalar);
        st.advance(4, 4, &mut rng).unwrap();
        st.advance(4, 4, &mut rng).unwrap();
        assert_eq!(st.p, 0.5);
        let out = blend_tensors(&f0, &th, &st).unwrap();
        for ((&o, &a), &b) in out.data().iter().zip(f0.data()).zip(th.data()) {
            assert_eq!(o, 0.5 * a + 0.5 * b);
            assert!(o != a && o != b);
        }
    }

    #[test]
    fn bernoulli_expectation_matches_scalar_blend() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let f0 = Tensor::uniform(&[1, 2, 6, 6], 1.0, 2.0, &mut rng);
        let th = Tensor::uniform(&[1, 2, 6, 6], 3.0, 4.0, &mut rng);
        let p = 0.5;
        let draws = 20_000;
        let mut mean = vec![0.0; f0.numel()];
        for _ in 0..draws {
            let mask = sample_mask(p, 6, 6, &mut rng).unwrap();
            let mut st = GrowthState::new(BlendStrategy::Bernoulli);
            st.phase = Phase::Transition;
            st.p = p;
            st.omega = Some(mask);
            let out = blend_tensors(&f0, &th, &st).unwrap();
            for (m, &o) in mean.iter_mut().zip(out.data()) {
                *m += o;
            }
        }
        for m in &mut mean {
            *m /= draws as f64;
        }
        for ((&m, &a), &b) in mean.iter().zip(f0.data()).zip(th.data()) {
            let scalar = p * b + (1.0 - p) * a;
            assert!(
                (m - scalar).abs() <= 0.01 * scalar.abs(),
                "empirical mean {m} vs scalar blend {scalar}"
            );
        }
    }
}
