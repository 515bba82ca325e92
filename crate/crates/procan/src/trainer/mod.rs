//! The training procedure: curriculum phases on easy-then-all data,
//! progressive growth of extended blocks with blending transitions, the
//! learning-rate and refinement schedules, and evaluation, cross
//! validation, and ensembling on top.
//!
//! Every phase draws from one global epoch budget. Training on a subset
//! continues until the early-stop rule fires or the budget runs out; a
//! block still in transition at exhaustion is finalized at p = 1.

pub mod config;
pub mod log;

pub use config::{RngStreams, TrainConfig};
pub use log::{LogRow, TrainLog, CURVES_HEADER, TRAIN_LOG_HEADER};

use crate::curriculum::{should_stop, AccuracyHistory, Difficulty};
use crate::datapipe::{augmented_view, Sample, AUGMENT_COUNT};
use crate::error::{ProcanError, Result};
use crate::metrics::{
    auc, classification_metrics, confusion, ClassificationMetrics, ConfusionCounts, ScoredSet,
    DEFAULT_THRESHOLD,
};
use crate::network::{build, Network};
use crate::numerics::{AdamState, Graph, Mode, ParamBinder, Tensor};
use crate::progrow::Phase;
use rand::seq::SliceRandom;
use std::collections::HashMap;

pub const METRICS_HEADER: &str = "phase,epoch,split,accuracy,sensitivity,precision,f1,auc";

/// Shuffle indices with the data stream and carve off the validation
/// fraction (at least one sample each side). Returned sets are sorted,
/// disjoint, and together cover 0..n.
pub fn split_validation(
    n: usize,
    fraction: f64,
    rng: &mut impl rand::Rng,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 2 {
        return Err(ProcanError::usage(format!(
            "cannot split validation from {n} samples"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let val_count = ((n as f64 * fraction).round() as usize).clamp(1, n - 1);
    let mut val: Vec<usize> = idx[..val_count].to_vec();
    let mut train: Vec<usize> = idx[val_count..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    Ok((train, val))
}

/// Mean stable BCE and thresholded accuracy of eval-mode logits.
fn eval_loss_and_accuracy(
    net: &mut Network,
    samples: &[Sample],
    idx: &[usize],
    batch_size: usize,
) -> Result<(f64, f64)> {
    let mut loss_sum = 0.0;
    let mut correct = 0usize;
    for chunk in idx.chunks(batch_size) {
        let (batch, labels) = assemble_batch(samples, chunk, None);
        let logits = net.eval_logits(&batch)?;
        for (&z, &y) in logits.data().iter().zip(&labels) {
            loss_sum += z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
            let predicted = if z >= 0.0 { 1.0 } else { 0.0 };
            if predicted == y {
                correct += 1;
            }
        }
    }
    let n = idx.len() as f64;
    Ok((loss_sum / n, correct as f64 / n))
}

/// Stack cubes (optionally augmented views) into a [B,S,S,S] batch.
fn assemble_batch(
    samples: &[Sample],
    items: &[usize],
    views: Option<&[u8]>,
) -> (Tensor, Vec<f64>) {
    let side = samples[items[0]].cube.dim(0);
    let volume = side * side * side;
    let mut data = Vec::with_capacity(items.len() * volume);
    let mut labels = Vec::with_capacity(items.len());
    for (slot, &idx) in items.iter().enumerate() {
        let s = &samples[idx];
        match views.map(|v| v[slot]) {
            None | Some(0) => data.extend_from_slice(s.cube.data()),
            Some(k) => {
                let view = augmented_view(&s.cube, s.air_value, k as usize);
                data.extend_from_slice(view.data());
            }
        }
        labels.push(s.label as f64);
    }
    let batch = Tensor::new(vec![items.len(), side, side, side], data)
        .expect("batch assembly shapes are consistent");
    (batch, labels)
}

/// One full training epoch over `train_idx`, then a validation pass.
/// Returns the validation accuracy pushed into the caller's history.
#[allow(clippy::too_many_arguments)]
fn run_epoch(
    net: &mut Network,
    adam: &mut AdamState,
    samples: &[Sample],
    train_idx: &[usize],
    val_idx: &[usize],
    config: &TrainConfig,
    streams: &mut RngStreams,
    epoch: usize,
    phase: &str,
    p: Option<f64>,
    train_log: &mut TrainLog,
) -> Result<f64> {
    let augmented = config.augmented_at(epoch);
    let lr = config.lr_at(epoch);
    // The work list: every (sample, view) pair once when augmenting,
    // plain samples otherwise. Shuffled by the data stream.
    let mut items: Vec<(usize, u8)> = if augmented {
        train_idx
            .iter()
            .flat_map(|&i| (0..AUGMENT_COUNT as u8).map(move |k| (i, k)))
            .collect()
    } else {
        train_idx.iter().map(|&i| (i, 0)).collect()
    };
    items.shuffle(&mut streams.data);

    let mut loss_sum = 0.0;
    let mut seen = 0usize;
    for chunk in items.chunks(config.batch_size) {
        if chunk.len() < 2 {
            // Batch norm cannot train on a single sample.
            continue;
        }
        let idx: Vec<usize> = chunk.iter().map(|&(i, _)| i).collect();
        let views: Vec<u8> = chunk.iter().map(|&(_, k)| k).collect();
        let (batch, labels) = assemble_batch(samples, &idx, Some(&views));
        let mut graph = Graph::new();
        let mut binder = ParamBinder::new();
        let x = graph.leaf(batch);
        let logits = net.forward_on(
            &mut graph,
            x,
            Mode::Train,
            &mut binder,
            &mut streams.dropout,
            &mut streams.mask,
        )?;
        let loss = graph.bce_with_logits(logits, &labels)?;
        loss_sum += graph.value(loss).item() * chunk.len() as f64;
        seen += chunk.len();
        graph.backward(loss)?;
        let grads: HashMap<String, Tensor> = binder
            .entries()
            .iter()
            .map(|(name, id)| (name.clone(), graph.grad(*id).clone()))
            .collect();
        drop(graph);
        let mut update_err = None;
        net.visit_params_mut(&mut |name, param| {
            if update_err.is_some() {
                return;
            }
            if let Some(grad) = grads.get(&name) {
                let decay = if name == "fc.weight" {
                    config.fc_weight_decay
                } else {
                    0.0
                };
                if let Err(e) = adam.update(&name, param, grad, lr, decay) {
                    update_err = Some(e);
                }
            }
        });
        if let Some(e) = update_err {
            return Err(e);
        }
    }
    let train_loss = if seen > 0 { loss_sum / seen as f64 } else { f64::NAN };
    let (val_loss, val_acc) =
        eval_loss_and_accuracy(net, samples, val_idx, config.batch_size)?;
    train_log.push_epoch(epoch, phase, p, train_loss, val_loss, val_acc, lr, augmented);
    Ok(val_acc)
}

/// Run the whole training procedure on preprocessed samples. Splits off
/// the validation set, trains the base network on easy data then all
/// data (each until the stop rule), grows and blends in extended blocks,
/// and spends any remaining budget on further training. The learning
/// rate drops at the configured global epoch and augmentation switches
/// off at the refinement epoch, regardless of phase boundaries.
pub fn train_procan(
    samples: &[Sample],
    config: &TrainConfig,
    streams: &mut RngStreams,
) -> Result<(Network, TrainLog, AdamState)> {
    config.validate()?;
    if samples.is_empty() {
        return Err(ProcanError::usage("training set is empty".to_string()));
    }
    let (train_idx, val_idx) = split_validation(
        samples.len(),
        config.validation_fraction,
        &mut streams.data,
    )?;
    let easy_idx: Vec<usize> = train_idx
        .iter()
        .copied()
        .filter(|&i| samples[i].difficulty == Difficulty::Easy)
        .collect();
    if easy_idx.is_empty() {
        return Err(ProcanError::config(format!(
            "the '{}' criterion labels no training sample easy; switch to a different \
             curriculum criterion",
            config.curriculum.name()
        )));
    }

    let mut net = build(config.network_spec()?, &mut streams.model)?;
    let mut adam = AdamState::new();
    let mut train_log = TrainLog::new();
    let mut epoch = 0usize;
    let total = config.total_epochs;
    let feature_hw = net.spec.feature_hw();

    // Easy-only curriculum phase.
    let mut history = AccuracyHistory::new();
    while epoch < total {
        epoch += 1;
        let acc = run_epoch(
            &mut net, &mut adam, samples, &easy_idx, &val_idx, config, streams, epoch, "easy",
            None, &mut train_log,
        )?;
        history.push(acc)?;
        if should_stop(&history) {
            break;
        }
    }

    // Easy and hard together.
    let mut history = AccuracyHistory::new();
    while epoch < total {
        epoch += 1;
        let acc = run_epoch(
            &mut net, &mut adam, samples, &train_idx, &val_idx, config, streams, epoch, "full",
            None, &mut train_log,
        )?;
        history.push(acc)?;
        if should_stop(&history) {
            break;
        }
    }

    // Progressive growth.
    'growth: for _ in 0..config.extended_budget {
        if epoch >= total {
            break;
        }
        let idx = net.grow_block(config.blending, &mut streams.model)?;
        train_log.push_growth(epoch, idx + 1, 0.0, config.blending.name());

        while net.extended[idx].growth.phase != Phase::Final {
            if epoch >= total {
                // Budget ran out mid-transition: switch the block fully
                // on and stop.
                net.extended[idx].growth.force_final();
                train_log.push_growth(epoch, idx + 1, 1.0, config.blending.name());
                break 'growth;
            }
            epoch += 1;
            net.extended[idx]
                .growth
                .advance(feature_hw, feature_hw, &mut streams.mask)?;
            let p = net.extended[idx].growth.p;
            train_log.push_growth(epoch, idx + 1, p, config.blending.name());
            run_epoch(
                &mut net,
                &mut adam,
                samples,
                &train_idx,
                &val_idx,
                config,
                streams,
                epoch,
                "transition",
                Some(p),
                &mut train_log,
            )?;
        }

        let mut history = AccuracyHistory::new();
        while epoch < total {
            epoch += 1;
            let acc = run_epoch(
                &mut net, &mut adam, samples, &train_idx, &val_idx, config, streams, epoch,
                "settle", None, &mut train_log,
            )?;
            history.push(acc)?;
            if should_stop(&history) {
                break;
            }
        }
    }

    // Spend whatever budget remains.
    while epoch < total {
        epoch += 1;
        run_epoch(
            &mut net, &mut adam, samples, &train_idx, &val_idx, config, streams, epoch,
            "remainder", None, &mut train_log,
        )?;
    }

    Ok((net, train_log, adam))
}

/// Eval-mode scores and metrics on a test set, no augmentation.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub scored: ScoredSet,
    pub counts: ConfusionCounts,
    pub metrics: ClassificationMetrics,
    pub auc: Option<f64>,
}

pub fn evaluate(net: &mut Network, samples: &[Sample], batch_size: usize) -> Result<Evaluation> {
    if samples.is_empty() {
        return Err(ProcanError::usage("evaluation set is empty".to_string()));
    }
    let idx: Vec<usize> = (0..samples.len()).collect();
    let mut scores = Vec::with_capacity(samples.len());
    let mut labels = Vec::with_capacity(samples.len());
    for chunk in idx.chunks(batch_size) {
        let (batch, batch_labels) = assemble_batch(samples, chunk, None);
        let proba = net.predict_proba(&batch)?;
        scores.extend_from_slice(proba.data());
        labels.extend(batch_labels.iter().map(|&y| y as u8));
    }
    let scored = ScoredSet::new(scores, labels)?;
    let counts = confusion(&scored, DEFAULT_THRESHOLD);
    let metrics = classification_metrics(&counts);
    let auc_value = auc(&scored).ok();
    Ok(Evaluation {
        scored,
        counts,
        metrics,
        auc: auc_value,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_else(|| "NA".to_string())
}

/// One metrics CSV row (see `METRICS_HEADER`).
pub fn metrics_row(phase: &str, epoch: usize, split: &str, eval: &Evaluation) -> String {
    format!(
        "{phase},{epoch},{split},{},{},{},{},{}",
        fmt_opt(eval.metrics.accuracy),
        fmt_opt(eval.metrics.sensitivity),
        fmt_opt(eval.metrics.precision),
        fmt_opt(eval.metrics.f1),
        fmt_opt(eval.auc),
    )
}

#[derive(Debug)]
pub struct FoldResult {
    pub fold: usize,
    pub evaluation: Evaluation,
}

#[derive(Debug)]
pub struct CvOutcome {
    pub folds: Vec<FoldResult>,
    /// mean±std summary per metric, over folds where defined.
    pub summary: String,
    pub warnings: Vec<String>,
}

/// Stratified k-fold cross validation: fold membership is dealt
/// round-robin from label-wise shuffles of the data seed, each fold is
/// tested exactly once, and per-fold runs get their own derived seeds.
pub fn cross_validate(
    samples: &[Sample],
    config: &TrainConfig,
    folds: usize,
) -> Result<CvOutcome> {
    if folds < 2 {
        return Err(ProcanError::usage("cross validation needs at least 2 folds".to_string()));
    }
    if samples.len() < folds {
        return Err(ProcanError::usage(format!(
            "dataset of {} samples cannot fill {folds} folds",
            samples.len()
        )));
    }
    let mut assign_rng = rand_chacha::ChaCha8Rng::seed_from_u64(config.seed_data);
    let mut positives: Vec<usize> = (0..samples.len()).filter(|&i| samples[i].label == 1).collect();
    let mut negatives: Vec<usize> = (0..samples.len()).filter(|&i| samples[i].label == 0).collect();
    positives.shuffle(&mut assign_rng);
    negatives.shuffle(&mut assign_rng);
    let mut fold_of = vec![0usize; samples.len()];
    for (j, &i) in positives.iter().chain(negatives.iter()).enumerate() {
        fold_of[i] = j % folds;
    }

    let mut outcomes = Vec::with_capacity(folds);
    let mut warnings = Vec::new();
    for fold in 0..folds {
        let train: Vec<Sample> = samples
            .iter()
            .enumerate()
            .filter(|(i, _)| fold_of[*i] != fold)
            .map(|(_, s)| s.clone())
            .collect();
        let test: Vec<Sample> = samples
            .iter()
            .enumerate()
            .filter(|(i, _)| fold_of[*i] == fold)
            .map(|(_, s)| s.clone())
            .collect();
        let offset = 1000 * (fold as u64 + 1);
        let mut fold_config = config.clone();
        fold_config.seed_model = config.seed_model.wrapping_add(offset);
        fold_config.seed_data = config.seed_data.wrapping_add(offset);
        fold_config.seed_mask = config.seed_mask.wrapping_add(offset);
        fold_config.seed_dropout = config.seed_dropout.wrapping_add(offset);
        let mut streams = RngStreams::from_config(&fold_config);
        let (mut net, _, _) = train_procan(&train, &fold_config, &mut streams)?;
        let evaluation = evaluate(&mut net, &test, config.batch_size)?;
        if evaluation.auc.is_none() {
            warnings.push(format!(
                "fold {fold}: test fold holds a single class, AUC undefined"
            ));
        }
        outcomes.push(FoldResult { fold, evaluation });
    }

    let summary = cv_summary(&outcomes);
    Ok(CvOutcome {
        folds: outcomes,
        summary,
        warnings,
    })
}

fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
            / (values.len() - 1) as f64)
            .sqrt()
    } else {
        0.0
    };
    Some((mean, std))
}

fn cv_summary(folds: &[FoldResult]) -> String {
    let collect = |f: &dyn Fn(&Evaluation) -> Option<f64>| -> Vec<f64> {
        folds.iter().filter_map(|r| f(&r.evaluation)).collect()
    };
    let fmt = |values: Vec<f64>| -> String {
        match mean_std(&values) {
            Some((m, s)) => format!("{m:.4}\u{b1}{s:.4}"),
            None => "NA".to_string(),
        }
    };
    format!(
        "summary,,cv,{},{},{},{},{}",
        fmt(collect(&|e| e.metrics.accuracy)),
        fmt(collect(&|e| e.metrics.sensitivity)),
        fmt(collect(&|e| e.metrics.precision)),
        fmt(collect(&|e| e.metrics.f1)),
        fmt(collect(&|e| e.auc)),
    )
}

/// Mean of the members' predicted probabilities.
pub fn ensemble_predict(members: &mut [Network], batch: &Tensor) -> Result<Tensor> {
    if members.len() < 2 {
        return Err(ProcanError::config(
            "an ensemble needs at least 2 members".to_string(),
        ));
    }
    let first = (
        members[0].spec.input_channels,
        members[0].spec.input_hw,
    );
    for m in members.iter() {
        if (m.spec.input_channels, m.spec.input_hw) != first {
            return Err(ProcanError::config(
                "ensemble members disagree on the input shape".to_string(),
            ));
        }
    }
    let mut mean: Option<Tensor> = None;
    for member in members.iter_mut() {
        let p = member.predict_proba(batch)?;
        mean = Some(match mean {
            None => p,
            Some(mut acc) => {
                for (a, &b) in acc.data_mut().iter_mut().zip(p.data()) {
                    *a += b;
                }
                acc
            }
        });
    }
    let mut mean = mean.expect("at least two members");
    let k = members.len() as f64;
    for v in mean.data_mut() {
        *v /= k;
    }
    Ok(mean)
}

use rand::SeedableRng;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datapipe::{gen_synthetic, preprocess_all};
    use rand_chacha::ChaCha8Rng;

    fn tiny_config() -> TrainConfig {
        let mut c = TrainConfig::desk_scale().with_master_seed(3);
        c.total_epochs = 5;
        c.refine_start_epoch = 5;
        c.batch_size = 8;
        c.extended_budget = 0;
        c.augment = false;
        c.synthetic_n = 24;
        c.curriculum = crate::curriculum::DifficultyCriterion::None;
        c
    }

    fn tiny_samples(n: usize, seed: u64) -> Vec<Sample> {
        let records = gen_synthetic(n, seed, 16).unwrap();
        preprocess_all(&records, 16, crate::curriculum::DifficultyCriterion::None).unwrap()
    }

    #[test]
    fn validation_split_is_a_partition() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (train, val) = split_validation(50, 0.1, &mut rng).unwrap();
        assert_eq!(val.len(), 5);
        assert_eq!(train.len(), 45);
        let mut all: Vec<usize> = train.iter().chain(val.iter()).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..50).collect::<Vec<_>>());
        // Deterministic under the same stream.
        let mut rng2 = ChaCha8Rng::seed_from_u64(1);
        let again = split_validation(50, 0.1, &mut rng2).unwrap();
        assert_eq!(again.0, train);
        assert_eq!(again.1, val);
    }

    #[test]
    fn degenerate_run_without_growth_or_curriculum() {
        let config = tiny_config();
        let samples = tiny_samples(24, 3);
        let mut streams = RngStreams::from_config(&config);
        let (net, train_log, _) = train_procan(&samples, &config, &mut streams).unwrap();
        assert_eq!(net.extended.len(), 0);
        assert_eq!(train_log.epoch_count(), config.total_epochs);
        // Every epoch belongs to the easy or full phase (no growth).
        for phase in train_log.phase_sequence() {
            assert!(phase == "easy" || phase == "full" || phase == "remainder");
        }
    }

    #[test]
    fn all_hard_training_set_is_a_configuration_error() {
        let mut config = tiny_config();
        config.curriculum = crate::curriculum::DifficultyCriterion::Diameter;
        let mut samples = tiny_samples(24, 4);
        for s in &mut samples {
            s.difficulty = Difficulty::Hard;
        }
        let mut streams = RngStreams::from_config(&config);
        let err = train_procan(&samples, &config, &mut streams).unwrap_err();
        assert!(matches!(err, ProcanError::Config(_)), "got {err}");
        assert!(err.to_string().contains("criterion"));
    }

    #[test]
    fn evaluate_is_deterministic_and_rejects_empty_sets() {
        let config = tiny_config();
        let samples = tiny_samples(24, 5);
        let mut streams = RngStreams::from_config(&config);
        let (mut net, _, _) = train_procan(&samples, &config, &mut streams).unwrap();
        let a = evaluate(&mut net, &samples, 8).unwrap();
        let b = evaluate(&mut net, &samples, 8).unwrap();
        assert_eq!(a.scored.scores, b.scored.scores);
        assert_eq!(metrics_row("final", 5, "test", &a), metrics_row("final", 5, "test", &b));
        assert!(evaluate(&mut net, &[], 8).is_err());
    }

    #[test]
    fn ensemble_mean_of_constant_heads() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let spec = crate::network::NetworkSpec::desk_scale();
        let mut a = build(spec.clone(), &mut rng).unwrap();
        let mut b = build(spec, &mut rng).unwrap();
        // Zero the feature weights so each member emits a constant
        // probability through its bias.
        let logit = |p: f64| (p / (1.0 - p)).ln();
        a.fc_weight = Tensor::zeros(&[1, 32]);
        a.fc_bias = Tensor::new(vec![1], vec![logit(0.2)]).unwrap();
        b.fc_weight = Tensor::zeros(&[1, 32]);
        b.fc_bias = Tensor::new(vec![1], vec![logit(0.8)]).unwrap();
        let x = Tensor::uniform(&[2, 16, 16, 16], -1.0, 1.0, &mut rng);
        let mut members = vec![a, b];
        let mean = ensemble_predict(&mut members, &x).unwrap();
        for &v in mean.data() {
            assert!((v - 0.5).abs() < 1e-12);
        }
        // Identical members reproduce the single-member output.
        let mut twins = vec![members[0].clone(), members[0].clone()];
        let single = twins[0].predict_proba(&x).unwrap();
        let combined = ensemble_predict(&mut twins, &x).unwrap();
        assert!(combined.max_abs_diff(&single) < 1e-15);
        // A lone member is rejected.
        assert!(ensemble_predict(&mut members[..1], &x).is_err());
    }
}
