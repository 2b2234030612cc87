//! `cxrank`: generate synthetic data, build manifests, train and evaluate
//! counterexample rankers, and emit reports.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use cxrank::data::SyntheticSpec;
use cxrank::eval::{table2_cells, table3_masks, ExperimentCell, ModelKind};
use cxrank::neuralcx::{AblationMask, Checkpoint};
use cxrank::oracle::OracleMode;
use cxrank::pipeline::{self, DatasetFiles, RunConfig};

#[derive(Parser)]
#[command(
    name = "cxrank",
    version,
    about = "Counterexample ranking for visual question answering"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with planted ground truth
    Generate(GenerateArgs),
    /// Filter raw examples into a manifest
    Build(BuildArgs),
    /// Train a NeuralCX ranker
    Train(TrainArgs),
    /// Evaluate models on the test split
    Eval(EvalArgs),
    /// Retrain NeuralCX under a set of feature ablations
    Ablate(AblateArgs),
    /// Merge results files into one report
    Report(ReportArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Output directory
    #[arg(long)]
    out: PathBuf,
    /// Number of raw examples (default: 10000)
    #[arg(long)]
    n: Option<usize>,
    /// Generator seed (default: 0)
    #[arg(long)]
    seed: Option<u64>,
    /// Target probability that the counterexample is among the 5 nearest neighbors (default: 0.44)
    #[arg(long)]
    rank_skew: Option<f64>,
    /// JSON file of generator settings; flags take precedence
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct BuildArgs {
    /// Output directory; the manifest is written there as manifest.jsonl
    #[arg(long)]
    out: PathBuf,
    /// Raw examples (default: <out>/raw.jsonl)
    #[arg(long)]
    raw: Option<PathBuf>,
    /// Nearest-neighbor lists (default: <out>/knn.jsonl)
    #[arg(long)]
    knn: Option<PathBuf>,
}

#[derive(Args)]
struct DataArgs {
    /// Built manifest
    #[arg(long)]
    manifest: PathBuf,
    /// Feature store
    #[arg(long)]
    features: PathBuf,
    /// Generator truth for the planted oracle (default: truth.txt beside the feature store, if present)
    #[arg(long)]
    truth: Option<PathBuf>,
    /// JSON file of run settings; flags take precedence
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed for training, random scoring, and ablation noise (default: 0)
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Oracle mode: untrained, pretrained, trainable, or table (default: pretrained)
    #[arg(long)]
    oracle: Option<String>,
    /// Features to replace with noise, e.g. "V+VM" or "all" (default: none)
    #[arg(long)]
    mask: Option<String>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Model: random, distance, hnm, embedding, two_headed, or neuralcx (default: distance)
    #[arg(long, conflicts_with = "preset")]
    model: Option<String>,
    /// Oracle mode for oracle-based models (default: pretrained)
    #[arg(long)]
    oracle: Option<String>,
    /// Embedding-model weight λ in [0, 1] (default: 1.0)
    #[arg(long)]
    lambda: Option<f64>,
    /// Evaluate a saved NeuralCX checkpoint instead of training one
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Named grid: table2 (full model grid) or lambda (embedding λ sweep)
    #[arg(long)]
    preset: Option<String>,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Named mask set: table3 (default: table3 unless --mask is given)
    #[arg(long)]
    preset: Option<String>,
    /// A mask to run; repeat for several
    #[arg(long, conflicts_with = "preset")]
    mask: Vec<String>,
    /// Oracle mode (default: pretrained)
    #[arg(long)]
    oracle: Option<String>,
}

#[derive(Args)]
struct ReportArgs {
    /// Results CSV to include; repeat for several
    #[arg(long, required = true)]
    results: Vec<PathBuf>,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

const LAMBDAS: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

fn run_config(data: &DataArgs) -> Result<RunConfig> {
    let mut config: RunConfig = match &data.config {
        Some(p) => pipeline::read_config(p).with_context(|| format!("reading {}", p.display()))?,
        None => RunConfig::default(),
    };
    if let Some(seed) = data.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn load(data: &DataArgs) -> Result<(RunConfig, cxrank::eval::ExperimentContext)> {
    let config = run_config(data)?;
    let files = DatasetFiles {
        manifest: data.manifest.clone(),
        features: data.features.clone(),
        truth: data.truth.clone(),
    };
    let ctx = pipeline::load_context(&files, &config)?;
    Ok((config, ctx))
}

fn mode(s: &Option<String>) -> Result<OracleMode> {
    Ok(s.as_deref().unwrap_or("pretrained").parse()?)
}

fn print_results(results: &[cxrank::eval::EvalResult]) {
    for r in results {
        println!(
            "{:<12} {:<10} {:<22} recall@1 {:6.2}  recall@5 {:6.2}  n {}",
            r.model, r.oracle_mode, r.mask, r.recall_at_1, r.recall_at_5, r.n
        );
    }
}

fn generate(args: &GenerateArgs) -> Result<()> {
    let mut spec: SyntheticSpec = match &args.config {
        Some(p) => pipeline::read_config(p).with_context(|| format!("reading {}", p.display()))?,
        None => SyntheticSpec::default(),
    };
    if let Some(n) = args.n {
        spec.n_examples = n;
    }
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    if let Some(skew) = args.rank_skew {
        spec.rank_skew = skew;
    }
    let s = pipeline::generate(&spec, &args.out)?;
    println!(
        "generated {} raw examples, {} images, {} questions in {}",
        s.raw_examples,
        s.images,
        s.questions,
        args.out.display()
    );
    Ok(())
}

fn build(args: &BuildArgs) -> Result<()> {
    let raw = args
        .raw
        .clone()
        .unwrap_or_else(|| args.out.join(pipeline::RAW_FILE));
    let knn = args
        .knn
        .clone()
        .unwrap_or_else(|| args.out.join(pipeline::KNN_FILE));
    let manifest = args.out.join(pipeline::MANIFEST_FILE);
    let c = pipeline::build(&raw, &knn, &manifest)?;
    println!(
        "total {} kept {} dropped_no_complement {} dropped_knn_asymmetry {}",
        c.total, c.kept, c.dropped_no_complement, c.dropped_knn_asymmetry
    );
    Ok(())
}

fn train(args: &TrainArgs) -> Result<()> {
    let (config, ctx) = load(&args.data)?;
    let mask: AblationMask = args.mask.as_deref().unwrap_or("none").parse()?;
    let model = pipeline::train(&ctx, &config, mode(&args.oracle)?, &mask, &args.data.out)?;
    let best = model
        .log
        .iter()
        .find(|r| r.epoch == model.best_epoch)
        .context("best epoch missing from log")?;
    println!(
        "best epoch {} val recall@1 {:.2} recall@5 {:.2}",
        model.best_epoch, best.val_recall_at_1, best.val_recall_at_5
    );
    Ok(())
}

fn eval(args: &EvalArgs) -> Result<()> {
    let (config, ctx) = load(&args.data)?;
    let out = &args.data.out;
    let oracle = mode(&args.oracle)?;
    if let Some(preset) = args.preset.as_deref() {
        match preset {
            "table2" => print_results(&pipeline::eval(
                &ctx,
                &config,
                &table2_cells(config.seed, true),
                out,
            )?),
            "lambda" => {
                for (l, r) in pipeline::sweep_lambda(&ctx, &config, &LAMBDAS, oracle, out)? {
                    println!(
                        "lambda {l:.2} recall@1 {:6.2}  recall@5 {:6.2}",
                        r.recall_at_1, r.recall_at_5
                    );
                }
            }
            other => bail!("unknown eval preset `{other}` (expected table2 or lambda)"),
        }
        return Ok(());
    }
    let mut model: ModelKind = args.model.as_deref().unwrap_or("distance").parse()?;
    if let Some(l) = args.lambda {
        match &mut model {
            ModelKind::Embedding { lambda } => *lambda = l,
            _ => bail!("--lambda applies only to the embedding model"),
        }
    }
    if let Some(path) = &args.checkpoint {
        if model != ModelKind::NeuralCx {
            bail!("--checkpoint applies only to the neuralcx model");
        }
        let ck = Checkpoint::read(path).with_context(|| format!("reading {}", path.display()))?;
        let result = pipeline::eval_checkpoint(&ctx, &ck, oracle)?;
        cxrank::eval::emit_report(std::slice::from_ref(&result), out)?;
        pipeline::write_config(out, &config)?;
        print_results(&[result]);
        return Ok(());
    }
    let cell = ExperimentCell::new(model, model.uses_oracle().then_some(oracle), config.seed);
    print_results(&pipeline::eval(&ctx, &config, &[cell], out)?);
    Ok(())
}

fn ablate(args: &AblateArgs) -> Result<()> {
    let (config, ctx) = load(&args.data)?;
    let masks: Vec<AblationMask> = match (args.preset.as_deref(), args.mask.is_empty()) {
        (Some("table3"), _) | (None, true) => table3_masks(),
        (Some(other), _) => bail!("unknown ablation preset `{other}` (expected table3)"),
        (None, false) => args
            .mask
            .iter()
            .map(|m| m.parse())
            .collect::<Result<_, _>>()?,
    };
    print_results(&pipeline::ablate(
        &ctx,
        &config,
        &masks,
        mode(&args.oracle)?,
        &args.data.out,
    )?);
    Ok(())
}

fn report(args: &ReportArgs) -> Result<()> {
    let results = pipeline::report(&args.results, &args.out)?;
    print!(
        "{}",
        std::fs::read_to_string(args.out.join("report.txt")).unwrap_or_default()
    );
    eprintln!(
        "{} rows written to {}",
        results.len(),
        Path::new(&args.out).display()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Generate(a) => generate(a),
        Command::Build(a) => build(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Ablate(a) => ablate(a),
        Command::Report(a) => report(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
