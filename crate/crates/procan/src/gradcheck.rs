//! Finite-difference validation of every differentiable op plus a full
//! two-block network. Each check perturbs one input coordinate at a time
//! and compares the central difference against the tape's gradient.

use crate::error::Result;
use crate::network::{build, CBarRule, Network, NetworkSpec};
use crate::numerics::{finite_diff_grad, rel_err, Graph, Mode, NodeId, ParamBinder, Tensor};
use crate::progrow::BlendStrategy;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;

pub const GRAD_TOLERANCE: f64 = 1e-5;
const FD_EPS: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct GradCheckResult {
    pub name: String,
    pub max_rel_err: f64,
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub results: Vec<GradCheckResult>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.results
            .iter()
            .map(|r| r.max_rel_err)
            .fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_err() < GRAD_TOLERANCE
    }
}

/// Compare tape gradients of `sum(build(inputs) .* W)` against central
/// differences, for every input tensor, over several seeds.
fn check_op(
    name: &str,
    seeds: u64,
    make_inputs: &dyn Fn(&mut ChaCha8Rng) -> Vec<Tensor>,
    build_op: &dyn Fn(&mut Graph, &[NodeId]) -> Result<NodeId>,
) -> Result<GradCheckResult> {
    let mut worst = 0.0f64;
    for seed in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(0x6AD0 + seed);
        let inputs = make_inputs(&mut rng);
        // Discover the output shape, then fix a random weighting so every
        // output coordinate contributes with a distinct coefficient.
        let out_shape = {
            let mut g = Graph::new();
            let ids: Vec<NodeId> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
            let out = build_op(&mut g, &ids)?;
            g.value(out).shape().to_vec()
        };
        let weights = Tensor::uniform(&out_shape, -1.0, 1.0, &mut rng);

        let loss_of = |tensors: &[Tensor]| -> Result<(f64, Vec<Tensor>, Graph, Vec<NodeId>)> {
            let mut g = Graph::new();
            let ids: Vec<NodeId> = tensors.iter().map(|t| g.leaf(t.clone())).collect();
            let out = build_op(&mut g, &ids)?;
            let w = g.leaf(weights.clone());
            let weighted = g.mul(out, w)?;
            let loss = g.sum(weighted);
            let value = g.value(loss).item();
            g.backward(loss)?;
            let grads = ids.iter().map(|&id| g.grad(id).clone()).collect();
            Ok((value, grads, g, ids))
        };
        let (_, analytic, _, _) = loss_of(&inputs)?;

        for (i, input) in inputs.iter().enumerate() {
            let mut f = |probe: &Tensor| {
                let mut probe_inputs = inputs.clone();
                probe_inputs[i] = probe.clone();
                loss_of(&probe_inputs).expect("op under check must accept probes").0
            };
            let numeric = finite_diff_grad(&mut f, input, FD_EPS);
            for (a, b) in analytic[i].data().iter().zip(numeric.data()) {
                worst = worst.max(rel_err(*a, *b));
            }
        }
    }
    Ok(GradCheckResult {
        name: name.to_string(),
        max_rel_err: worst,
    })
}

fn uniform_away_from_zero(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    // Magnitudes in [0.2, 1.5] with random sign keep relu kinks far
    // outside the probe radius.
    Tensor::from_fn(shape, |_| {
        let mag = 0.2 + 1.3 * rng.random::<f64>();
        if rng.random::<f64>() < 0.5 {
            mag
        } else {
            -mag
        }
    })
}

/// Train-mode loss of a network on one batch, with all randomness pinned
/// to the given seeds so repeated evaluations are identical.
fn network_loss(
    net: &Network,
    x: &Tensor,
    labels: &[f64],
    want_grads: bool,
) -> Result<(f64, Option<HashMap<String, Tensor>>)> {
    let mut scratch = net.clone();
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(0xD201);
    let mut mask_rng = ChaCha8Rng::seed_from_u64(0x3A5C);
    let mut graph = Graph::new();
    let mut binder = ParamBinder::new();
    let xn = graph.leaf(x.clone());
    let logits = scratch.forward_on(
        &mut graph,
        xn,
        Mode::Train,
        &mut binder,
        &mut dropout_rng,
        &mut mask_rng,
    )?;
    let loss = graph.bce_with_logits(logits, labels)?;
    let value = graph.value(loss).item();
    if !want_grads {
        return Ok((value, None));
    }
    graph.backward(loss)?;
    let map = binder
        .entries()
        .iter()
        .map(|(n, id)| (n.clone(), graph.grad(*id).clone()))
        .collect();
    Ok((value, Some(map)))
}

/// Every-parameter finite-difference check of a two-block network with one
/// extended block mid-transition, trained-mode batch norm, dropout, and
/// the BCE loss on top.
pub fn check_network(seeds: u64) -> Result<GradCheckResult> {
    let mut worst = 0.0f64;
    for seed in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(0xBE7 + seed);
        let spec = NetworkSpec::new(
            3,
            6,
            &[(4, 1), (4, 2)],
            CBarRule::One,
            crate::attention::CanVariant::Can,
            1,
            0.5,
        )?;
        let mut net = build(spec, &mut rng)?;
        net.grow_block(BlendStrategy::Bernoulli, &mut rng)?;
        // Walk the new block into its p = 0.5 transition step.
        net.extended[0].growth.advance(3, 3, &mut rng)?;
        net.extended[0].growth.advance(3, 3, &mut rng)?;
        let x = uniform_away_from_zero(&[2, 3, 6, 6], &mut rng);
        let labels = [1.0, 0.0];

        let (_, grads) = network_loss(&net, &x, &labels, true)?;
        let grads = grads.unwrap();

        let mut names = Vec::new();
        let mut current = HashMap::new();
        {
            let mut probe_net = net.clone();
            probe_net.visit_params_mut(&mut |name, t| {
                names.push(name.clone());
                current.insert(name, t.clone());
            });
        }
        for name in &names {
            let analytic = match grads.get(name) {
                Some(g) => g,
                // Parameters of skipped (start-phase) blocks are not bound.
                None => continue,
            };
            let value = &current[name];
            let mut f = |probe: &Tensor| {
                let mut net2 = net.clone();
                net2.visit_params_mut(&mut |n, t| {
                    if &n == name {
                        *t = probe.clone();
                    }
                });
                network_loss(&net2, &x, &labels, false).expect("probe eval").0
            };
            let numeric = finite_diff_grad(&mut f, value, FD_EPS);
            for (a, b) in analytic.data().iter().zip(numeric.data()) {
                worst = worst.max(rel_err(*a, *b));
            }
        }
    }
    Ok(GradCheckResult {
        name: "network_2block".to_string(),
        max_rel_err: worst,
    })
}

/// The full suite: every differentiable op, then the two-block network.
pub fn run_suite(seeds: u64) -> Result<GradCheckReport> {
    let mut report = GradCheckReport::default();

    report.results.push(check_op(
        "matmul",
        seeds,
        &|rng| {
            vec![
                Tensor::uniform(&[4, 5], -1.0, 1.0, rng),
                Tensor::uniform(&[5, 6], -1.0, 1.0, rng),
            ]
        },
        &|g, ids| g.matmul(ids[0], ids[1]),
    )?);

    report.results.push(check_op(
        "linear_map",
        seeds,
        &|rng| {
            vec![
                Tensor::uniform(&[3, 4], -1.0, 1.0, rng),
                Tensor::uniform(&[2, 4, 5], -1.0, 1.0, rng),
            ]
        },
        &|g, ids| g.linear_map(ids[0], ids[1]),
    )?);

    report.results.push(check_op(
        "bmm",
        seeds,
        &|rng| {
            vec![
                Tensor::uniform(&[2, 3, 4], -1.0, 1.0, rng),
                Tensor::uniform(&[2, 4, 5], -1.0, 1.0, rng),
            ]
        },
        &|g, ids| g.bmm(ids[0], ids[1]),
    )?);

    report.results.push(check_op(
        "transpose_last",
        seeds,
        &|rng| vec![Tensor::uniform(&[2, 3, 4], -1.0, 1.0, rng)],
        &|g, ids| g.transpose_last(ids[0]),
    )?);

    report.results.push(check_op(
        "conv2d_3x3_s1",
        seeds,
        &|rng| {
            vec![
                Tensor::uniform(&[2, 3, 5, 5], -1.0, 1.0, rng),
                Tensor::uniform(&[4, 3, 3, 3], -1.0, 1.0, rng),
            ]
        },
        &|g, ids| g.conv2d(ids[0], ids[1], 1, 1),
    )?);

    report.results.push(check_op(
        "conv2d_3x3_s2",
        seeds,
        &|rng| {
            vec![
                Tensor::uniform(&[1, 2, 6, 6], -1.0, 1.0, rng),
                Tensor::uniform(&[3, 2, 3, 3], -1.0, 1.0, rng),
            ]
        },
        &|g, ids| g.conv2d(ids[0], ids[1], 2, 1),
    )?);

    report.results.push(check_op(
        "conv2d_1x1",
        seeds,
        &|rng| {
            vec![
                Tensor::uniform(&[2, 3, 4, 4], -1.0, 1.0, rng),
                Tensor::uniform(&[2, 3, 1, 1], -1.0, 1.0, rng),
            ]
        },
        &|g, ids| g.conv2d(ids[0], ids[1], 1, 0),
    )?);

    report.results.push(check_op(
        "softmax_rows",
        seeds,
        &|rng| vec![Tensor::uniform(&[5, 5], -2.0, 2.0, rng)],
        &|g, ids| g.softmax_rows(ids[0]),
    )?);

    report.results.push(check_op(
        "relu",
        seeds,
        &|rng| vec![uniform_away_from_zero(&[3, 7], rng)],
        &|g, ids| Ok(g.relu(ids[0])),
    )?);

    report.results.push(check_op(
        "sigmoid",
        seeds,
        &|rng| vec![Tensor::uniform(&[3, 7], -3.0, 3.0, rng)],
        &|g, ids| Ok(g.sigmoid(ids[0])),
    )?);

    report.results.push(check_op(
        "batchnorm_train",
        seeds,
        &|rng| {
            vec![
                Tensor::uniform(&[4, 2, 3, 3], -2.0, 2.0, rng),
                Tensor::uniform(&[2], 0.5, 1.5, rng),
                Tensor::uniform(&[2], -0.5, 0.5, rng),
            ]
        },
        &|g, ids| {
            let (node, _) =
                g.batchnorm2d(ids[0], ids[1], ids[2], &[0.0, 0.0], &[1.0, 1.0], Mode::Train)?;
            Ok(node)
        },
    )?);

    report.results.push(check_op(
        "batchnorm_eval",
        seeds,
        &|rng| {
            vec![
                Tensor::uniform(&[2, 2, 3, 3], -2.0, 2.0, rng),
                Tensor::uniform(&[2], 0.5, 1.5, rng),
                Tensor::uniform(&[2], -0.5, 0.5, rng),
            ]
        },
        &|g, ids| {
            let (node, _) =
                g.batchnorm2d(ids[0], ids[1], ids[2], &[0.1, -0.2], &[0.9, 1.4], Mode::Eval)?;
            Ok(node)
        },
    )?);

    report.results.push(check_op(
        "global_avg_pool",
        seeds,
        &|rng| vec![Tensor::uniform(&[2, 3, 4, 4], -1.0, 1.0, rng)],
        &|g, ids| g.global_avg_pool(ids[0]),
    )?);

    report.results.push(check_op(
        "mul_channel",
        seeds,
        &|rng| {
            vec![
                Tensor::uniform(&[2, 3, 10], -1.0, 1.0, rng),
                Tensor::uniform(&[2, 3], -1.0, 1.0, rng),
            ]
        },
        &|g, ids| g.mul_channel(ids[0], ids[1]),
    )?);

    report.results.push(check_op(
        "add_bias",
        seeds,
        &|rng| {
            vec![
                Tensor::uniform(&[4, 3], -1.0, 1.0, rng),
                Tensor::uniform(&[3], -1.0, 1.0, rng),
            ]
        },
        &|g, ids| g.add_bias(ids[0], ids[1]),
    )?);

    report.results.push(check_op(
        "add",
        seeds,
        &|rng| {
            vec![
                Tensor::uniform(&[3, 4], -1.0, 1.0, rng),
                Tensor::uniform(&[3, 4], -1.0, 1.0, rng),
            ]
        },
        &|g, ids| g.add(ids[0], ids[1]),
    )?);

    report.results.push(check_op(
        "mul",
        seeds,
        &|rng| {
            vec![
                Tensor::uniform(&[3, 4], -1.0, 1.0, rng),
                Tensor::uniform(&[3, 4], -1.0, 1.0, rng),
            ]
        },
        &|g, ids| g.mul(ids[0], ids[1]),
    )?);

    report.results.push(check_op(
        "dropout_fixed_mask",
        seeds,
        &|rng| vec![Tensor::uniform(&[50], -1.0, 1.0, rng)],
        &|g, ids| {
            let mut mask_rng = ChaCha8Rng::seed_from_u64(0xD0);
            g.dropout(ids[0], 0.3, Mode::Train, &mut mask_rng)
        },
    )?);

    report.results.push(check_op(
        "blend_scalar",
        seeds,
        &|rng| {
            vec![
                Tensor::uniform(&[2, 2, 4, 4], -1.0, 1.0, rng),
                Tensor::uniform(&[2, 2, 4, 4], -1.0, 1.0, rng),
            ]
        },
        &|g, ids| g.blend_scalar(ids[0], ids[1], 0.35),
    )?);

    report.results.push(check_op(
        "blend_mask",
        seeds,
        &|rng| {
            vec![
                Tensor::uniform(&[2, 2, 4, 4], -1.0, 1.0, rng),
                Tensor::uniform(&[2, 2, 4, 4], -1.0, 1.0, rng),
            ]
        },
        &|g, ids| {
            let mut mask_rng = ChaCha8Rng::seed_from_u64(0xA5);
            let mask = crate::progrow::sample_mask(0.5, 4, 4, &mut mask_rng)?;
            g.blend_mask(ids[0], ids[1], &mask)
        },
    )?);

    report.results.push(check_op(
        "bce_with_logits",
        seeds,
        &|rng| {
            // Labels ride along as a second "input" that the op reads as
            // constants; gradients flow only through the logits.
            vec![Tensor::uniform(&[6], -2.0, 2.0, rng)]
        },
        &|g, ids| g.bce_with_logits(ids[0], &[1.0, 0.0, 1.0, 1.0, 0.0, 0.0]),
    )?);

    report.results.push(check_network(2)?);

    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_op_spot_checks_meet_tight_tolerances() {
        let matmul = check_op(
            "matmul",
            20,
            &|rng| {
                vec![
                    Tensor::uniform(&[4, 5], -1.0, 1.0, rng),
                    Tensor::uniform(&[5, 6], -1.0, 1.0, rng),
                ]
            },
            &|g, ids| g.matmul(ids[0], ids[1]),
        )
        .unwrap();
        assert!(matmul.max_rel_err < 1e-6, "matmul err {}", matmul.max_rel_err);

        let softmax = check_op(
            "softmax_rows",
            20,
            &|rng| vec![Tensor::uniform(&[5, 5], -2.0, 2.0, rng)],
            &|g, ids| g.softmax_rows(ids[0]),
        )
        .unwrap();
        assert!(softmax.max_rel_err < 1e-6, "softmax err {}", softmax.max_rel_err);
    }

    #[test]
    fn two_block_network_gradients_match_finite_differences() {
        let r = check_network(1).unwrap();
        assert!(
            r.max_rel_err < GRAD_TOLERANCE,
            "network gradient err {}",
            r.max_rel_err
        );
    }
}
