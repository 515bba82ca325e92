//! The `procan` command line: train, eval, cross-validate, ablate,
//! gradcheck, and synthetic-data generation. Every run writes its
//! resolved config and CSV outputs into a run directory and is fully
//! determined by its seeds.

use crate::checkpoint::{self, Checkpoint};
use crate::curriculum::DifficultyCriterion;
use crate::datapipe::{gen_synthetic, io as dataio, preprocess_all, Sample};
use crate::error::{ProcanError, Result};
use crate::gradcheck;
use crate::network::{CBarRule, Network};
use crate::progrow::BlendStrategy;
use crate::trainer::{
    cross_validate, ensemble_predict, evaluate, metrics_row, split_validation, train_procan,
    Evaluation, RngStreams, TrainConfig, METRICS_HEADER,
};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "procan", version, about = "Progressively grown channel-attentive non-local network training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct DataArgs {
    /// Dataset directory holding index.csv and .vol files.
    #[arg(long, conflicts_with = "synthetic")]
    dataset: Option<PathBuf>,
    /// Generate the seeded synthetic dataset instead of reading one.
    #[arg(long)]
    synthetic: bool,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Config file (key = value lines layered onto the desk-scale preset).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed: sets the model/data/mask/dropout seeds to N..N+3.
    #[arg(long)]
    seed: Option<u64>,
    /// Run directory for config.resolved, CSVs, and the checkpoint.
    #[arg(long, default_value = "procan-run")]
    out: PathBuf,
    /// Use the desk-scale preset (implied by --synthetic without --config).
    #[arg(long)]
    desk_scale: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full training procedure and evaluate on a held-out split.
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Evaluate a checkpoint on a dataset.
    Eval {
        /// Checkpoint file written by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        /// Output directory for metrics.csv.
        #[arg(long, default_value = "procan-eval")]
        out: PathBuf,
    },
    /// Stratified k-fold cross validation.
    Cv {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        run: RunArgs,
        /// Number of folds.
        #[arg(long, default_value_t = 10)]
        folds: usize,
    },
    /// Sweep one design axis, sharing seeds across arms.
    Ablate {
        /// Axis to sweep: blending | curriculum | variant | c-bar | blocks.
        axis: String,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Run the finite-difference gradient suite.
    Gradcheck {
        /// Random seeds per op check.
        #[arg(long, default_value_t = 20)]
        seeds: u64,
    },
    /// Write a synthetic dataset to disk.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 500)]
        n: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 16)]
        size: usize,
    },
}

/// Entry point used by both the binary and the integration tests.
/// Returns the process exit code.
pub fn run_cli<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return 2;
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn dispatch(command: Command) -> Result<i32> {
    match command {
        Command::Train { data, run } => cmd_train(&data, &run),
        Command::Eval {
            checkpoint,
            data,
            out,
        } => cmd_eval(&checkpoint, &data, &out),
        Command::Cv { data, run, folds } => cmd_cv(&data, &run, folds),
        Command::Ablate { axis, data, run } => cmd_ablate(&axis, &data, &run),
        Command::Gradcheck { seeds } => cmd_gradcheck(seeds),
        Command::GenData { out, n, seed, size } => cmd_gen_data(&out, n, seed, size),
    }
}

/// Precedence: --config file, then --desk-scale, then synthetic implies
/// desk scale, then the full-scale preset. --seed overrides all seeds.
fn resolve_config(run: &RunArgs, data: &DataArgs) -> Result<TrainConfig> {
    let mut config = match &run.config {
        Some(path) => TrainConfig::from_file(path)?,
        None if run.desk_scale || data.synthetic => TrainConfig::desk_scale(),
        None => TrainConfig::full_scale(),
    };
    if let Some(seed) = run.seed {
        config = config.with_master_seed(seed);
    }
    config.validate()?;
    Ok(config)
}

fn load_samples(data: &DataArgs, config: &TrainConfig) -> Result<Vec<Sample>> {
    let records = if data.synthetic {
        gen_synthetic(config.synthetic_n, config.seed_data, config.cube_side)?
    } else {
        let dir = data.dataset.as_ref().ok_or_else(|| {
            ProcanError::usage("pass either --dataset DIR or --synthetic".to_string())
        })?;
        let report = dataio::load_dataset(&dir.join("index.csv"), dir)?;
        println!(
            "loaded {} records ({} excluded for median rating 3)",
            report.records.len(),
            report.excluded_rating3
        );
        report.records
    };
    preprocess_all(&records, config.cube_side, config.curriculum)
}

/// Deterministic held-out split for final evaluation, independent of the
/// training streams.
fn carve_test_split(samples: Vec<Sample>, config: &TrainConfig) -> (Vec<Sample>, Vec<Sample>) {
    if config.test_fraction == 0.0 || samples.len() < 4 {
        return (samples, Vec::new());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed_data);
    rng.set_stream(u64::MAX);
    let (train_idx, test_idx) =
        split_validation(samples.len(), config.test_fraction, &mut rng)
            .expect("test split sizes validated");
    let train = train_idx.iter().map(|&i| samples[i].clone()).collect();
    let test = test_idx.iter().map(|&i| samples[i].clone()).collect();
    (train, test)
}

struct TrainRunOutput {
    evaluation: Option<Evaluation>,
    final_epoch: usize,
    network: Network,
    test: Vec<Sample>,
}

/// The shared train-run plumbing: split, train, evaluate, write outputs.
fn run_training(out_dir: &Path, config: &TrainConfig, samples: Vec<Sample>) -> Result<TrainRunOutput> {
    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join("config.resolved"), config.resolved_string())?;
    let (train_samples, test_samples) = carve_test_split(samples, config);
    let mut streams = RngStreams::from_config(config);
    let (mut net, train_log, adam) = train_procan(&train_samples, config, &mut streams)?;
    let final_epoch = train_log.epoch_count();
    fs::write(out_dir.join("train_log.csv"), train_log.to_csv())?;
    fs::write(out_dir.join("curves.csv"), train_log.curves_csv())?;

    let mut metrics = String::from(METRICS_HEADER);
    metrics.push('\n');
    let evaluation = if test_samples.is_empty() {
        None
    } else {
        let eval = evaluate(&mut net, &test_samples, config.batch_size)?;
        metrics.push_str(&metrics_row("final", final_epoch, "test", &eval));
        metrics.push('\n');
        Some(eval)
    };
    fs::write(out_dir.join("metrics.csv"), metrics)?;

    checkpoint::save(
        &out_dir.join("checkpoint.json"),
        &Checkpoint {
            config: config.clone(),
            network: net.clone(),
            adam,
            streams,
            epoch: final_epoch,
        },
    )?;
    Ok(TrainRunOutput {
        evaluation,
        final_epoch,
        network: net,
        test: test_samples,
    })
}

fn cmd_train(data: &DataArgs, run: &RunArgs) -> Result<i32> {
    let config = resolve_config(run, data)?;
    let samples = load_samples(data, &config)?;
    let outcome = run_training(&run.out, &config, samples)?;
    println!(
        "trained {} epochs; outputs in {}",
        outcome.final_epoch,
        run.out.display()
    );
    if let Some(eval) = &outcome.evaluation {
        println!("{METRICS_HEADER}");
        println!("{}", metrics_row("final", outcome.final_epoch, "test", eval));
    }
    Ok(0)
}

fn cmd_eval(checkpoint_path: &Path, data: &DataArgs, out: &Path) -> Result<i32> {
    let mut ckpt = checkpoint::load(checkpoint_path)?;
    let samples = load_samples(data, &ckpt.config)?;
    let eval = evaluate(&mut ckpt.network, &samples, ckpt.config.batch_size)?;
    fs::create_dir_all(out)?;
    let row = metrics_row("eval", ckpt.epoch, "test", &eval);
    fs::write(out.join("metrics.csv"), format!("{METRICS_HEADER}\n{row}\n"))?;
    println!("{METRICS_HEADER}");
    println!("{row}");
    Ok(0)
}

fn cmd_cv(data: &DataArgs, run: &RunArgs, folds: usize) -> Result<i32> {
    let config = resolve_config(run, data)?;
    let samples = load_samples(data, &config)?;
    let outcome = cross_validate(&samples, &config, folds)?;
    fs::create_dir_all(&run.out)?;
    fs::write(run.out.join("config.resolved"), config.resolved_string())?;
    let mut csv = String::from(METRICS_HEADER);
    csv.push('\n');
    for fold in &outcome.folds {
        csv.push_str(&metrics_row(
            "cv",
            fold.fold,
            &format!("fold{}", fold.fold),
            &fold.evaluation,
        ));
        csv.push('\n');
    }
    csv.push_str(&outcome.summary);
    csv.push('\n');
    fs::write(run.out.join("metrics.csv"), &csv)?;
    for w in &outcome.warnings {
        eprintln!("warning: {w}");
    }
    print!("{csv}");
    Ok(0)
}

fn ablation_arms(axis: &str) -> Result<Vec<(String, Box<dyn Fn(&mut TrainConfig)>)>> {
    type Arm = (String, Box<dyn Fn(&mut TrainConfig)>);
    let arm = |name: &str, f: Box<dyn Fn(&mut TrainConfig)>| -> Arm { (name.to_string(), f) };
    Ok(match axis {
        "blending" => vec![
            arm("none", Box::new(|c| c.blending = BlendStrategy::None)),
            arm("scalar", Box::new(|c| c.blending = BlendStrategy::Scalar)),
            arm("bernoulli", Box::new(|c| c.blending = BlendStrategy::Bernoulli)),
        ],
        "curriculum" => vec![
            arm("none", Box::new(|c| c.curriculum = DifficultyCriterion::None)),
            arm("rating", Box::new(|c| c.curriculum = DifficultyCriterion::Rating)),
            arm("diameter", Box::new(|c| c.curriculum = DifficultyCriterion::Diameter)),
        ],
        "variant" => vec![
            arm("can", Box::new(|c| c.variant = crate::attention::CanVariant::Can)),
            arm("nonlocal", Box::new(|c| c.variant = crate::attention::CanVariant::NonLocal)),
            arm(
                "nonlocal-se",
                Box::new(|c| c.variant = crate::attention::CanVariant::NonLocalSe),
            ),
            arm(
                "dual-attention",
                Box::new(|c| c.variant = crate::attention::CanVariant::DualAttention),
            ),
        ],
        "c-bar" => vec![
            arm("one", Box::new(|c| c.c_bar = CBarRule::One)),
            arm("in-over-8", Box::new(|c| c.c_bar = CBarRule::InOver8)),
            arm("in", Box::new(|c| c.c_bar = CBarRule::In)),
        ],
        "blocks" => vec![
            arm("t1", Box::new(|c| c.extended_budget = 1)),
            arm("t2", Box::new(|c| c.extended_budget = 2)),
            arm("t3", Box::new(|c| c.extended_budget = 3)),
        ],
        other => {
            return Err(ProcanError::usage(format!(
                "unknown ablation axis '{other}' (expected blending, curriculum, variant, c-bar, blocks)"
            )))
        }
    })
}

fn cmd_ablate(axis: &str, data: &DataArgs, run: &RunArgs) -> Result<i32> {
    let base = resolve_config(run, data)?;
    let arms = ablation_arms(axis)?;
    fs::create_dir_all(&run.out)?;
    let mut summary = format!("arm,{METRICS_HEADER}\n");
    let mut trained: Vec<(String, TrainRunOutput)> = Vec::new();
    for (name, mutate) in &arms {
        let mut config = base.clone();
        mutate(&mut config);
        config.validate()?;
        let samples = load_samples(data, &config)?;
        let arm_dir = run.out.join(name);
        let outcome = run_training(&arm_dir, &config, samples)?;
        if let Some(eval) = &outcome.evaluation {
            summary.push_str(&format!(
                "{name},{}\n",
                metrics_row(axis, outcome.final_epoch, "test", eval)
            ));
        }
        println!("arm '{name}' done ({} epochs)", outcome.final_epoch);
        trained.push((name.clone(), outcome));
    }
    // For the block-count sweep, also report the ensemble of all arms.
    if axis == "blocks" && trained.len() >= 2 && !trained[0].1.test.is_empty() {
        let test = trained[0].1.test.clone();
        let mut members: Vec<Network> = trained.iter().map(|(_, o)| o.network.clone()).collect();
        let labels: Vec<u8> = test.iter().map(|s| s.label).collect();
        let mut scores = Vec::with_capacity(test.len());
        for chunk in test.chunks(base.batch_size) {
            let idx: Vec<usize> = (0..chunk.len()).collect();
            let (batch, _) = assemble_for_ensemble(chunk, &idx);
            let p = ensemble_predict(&mut members, &batch)?;
            scores.extend_from_slice(p.data());
        }
        let scored = crate::metrics::ScoredSet::new(scores, labels)?;
        let counts = crate::metrics::confusion(&scored, crate::metrics::DEFAULT_THRESHOLD);
        let eval = Evaluation {
            metrics: crate::metrics::classification_metrics(&counts),
            auc: crate::metrics::auc(&scored).ok(),
            counts,
            scored,
        };
        summary.push_str(&format!("ensemble,{}\n", metrics_row(axis, 0, "test", &eval)));
    }
    fs::write(run.out.join("ablation.csv"), &summary)?;
    print!("{summary}");
    Ok(0)
}

fn assemble_for_ensemble(samples: &[Sample], idx: &[usize]) -> (crate::numerics::Tensor, Vec<f64>) {
    let side = samples[0].cube.dim(0);
    let mut data = Vec::with_capacity(idx.len() * side * side * side);
    let mut labels = Vec::with_capacity(idx.len());
    for &i in idx {
        data.extend_from_slice(samples[i].cube.data());
        labels.push(samples[i].label as f64);
    }
    (
        crate::numerics::Tensor::new(vec![idx.len(), side, side, side], data)
            .expect("ensemble batch shape"),
        labels,
    )
}

fn cmd_gradcheck(seeds: u64) -> Result<i32> {
    let report = gradcheck::run_suite(seeds)?;
    for r in &report.results {
        println!(
            "{:<24} max rel err {:.3e}  {}",
            r.name,
            r.max_rel_err,
            if r.max_rel_err < gradcheck::GRAD_TOLERANCE {
                "ok"
            } else {
                "FAIL"
            }
        );
    }
    println!(
        "overall max rel err {:.3e} (tolerance {:.0e})",
        report.max_rel_err(),
        gradcheck::GRAD_TOLERANCE
    );
    Ok(if report.passed() { 0 } else { 1 })
}

fn cmd_gen_data(out: &Path, n: usize, seed: u64, size: usize) -> Result<i32> {
    let records = gen_synthetic(n, seed, size)?;
    dataio::write_dataset(out, &records)?;
    println!("wrote {} records to {}", records.len(), out.display());
    Ok(0)
}
