//! File-level pipeline steps behind the command-line driver. Every step
//! reads and writes named files in a run directory and echoes its effective
//! configuration there as `config.json`.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{de::Error as _, Deserialize, Deserializer, Serialize};

use crate::data::manifest::{read_raw, write_raw};
use crate::data::{
    build_dataset, generate_synthetic, split_three, DatasetCounts, DatasetManifest, FeatureStore,
    GeneratorTruth, KnnLists, SyntheticSpec,
};
use crate::error::{CxError, Result};
use crate::eval::experiment::cell_mask;
use crate::eval::report::{emit_report, lambda_csv, parse_results_csv};
use crate::eval::{
    lambda_sweep, run_ablation, run_experiment, EvalResult, ExperimentCell, ExperimentContext,
    ModelKind,
};
use crate::io::{read_string, write_atomic};
use crate::neuralcx::{self, log_to_csv, AblationMask, Checkpoint, NeuralCxConfig, TrainedModel};
use crate::oracle::{OracleFactory, OracleMode, DEFAULT_SHARPNESS, PRETRAINED_ACCURACY};
use crate::scorers::TwoHeadedTrainConfig;

pub const RAW_FILE: &str = "raw.jsonl";
pub const KNN_FILE: &str = "knn.jsonl";
pub const FEATURES_FILE: &str = "features.cxfs";
pub const TRUTH_FILE: &str = "truth.txt";
pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const CHECKPOINT_FILE: &str = "checkpoint.cxck";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const CONFIG_FILE: &str = "config.json";
pub const LAMBDA_FILE: &str = "lambda_sweep.csv";

/// Seeded (train, val, test) partition of a manifest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    pub val_fraction: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            val_fraction: 0.1,
            test_fraction: 0.3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleConfig {
    pub z_dim: usize,
    pub seed: u64,
    pub accuracy: f64,
    pub sharpness: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            z_dim: 16,
            seed: 0,
            accuracy: PRETRAINED_ACCURACY,
            sharpness: DEFAULT_SHARPNESS,
        }
    }
}

/// Settings shared by every step that loads a built dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub split: SplitConfig,
    pub oracle: OracleConfig,
    /// Fields given here override the desk-scale NeuralCX settings.
    #[serde(deserialize_with = "desk_overlay")]
    pub neuralcx: NeuralCxConfig,
    pub two_headed: TwoHeadedTrainConfig,
    pub record_wallclock: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            split: SplitConfig::default(),
            oracle: OracleConfig::default(),
            neuralcx: NeuralCxConfig::desk(),
            two_headed: TwoHeadedTrainConfig::default(),
            record_wallclock: false,
        }
    }
}

fn merge(base: &mut serde_json::Value, patch: serde_json::Value) {
    match (base, patch) {
        (serde_json::Value::Object(b), serde_json::Value::Object(p)) => {
            for (k, v) in p {
                merge(b.entry(k).or_insert(serde_json::Value::Null), v);
            }
        }
        (b, p) => *b = p,
    }
}

fn desk_overlay<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<NeuralCxConfig, D::Error> {
    let patch = serde_json::Value::deserialize(d)?;
    let mut base = serde_json::to_value(NeuralCxConfig::desk()).map_err(D::Error::custom)?;
    merge(&mut base, patch);
    serde_json::from_value(base).map_err(D::Error::custom)
}

/// Read a JSON config, filling absent fields with defaults.
pub fn read_config<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&read_string(path)?)?)
}

/// Write `config` as pretty JSON to `dir/config.json`.
pub fn write_config<T: Serialize>(dir: &Path, config: &T) -> Result<PathBuf> {
    ensure_dir(dir)?;
    let path = dir.join(CONFIG_FILE);
    let mut text = serde_json::to_string_pretty(config)?;
    text.push('\n');
    write_atomic(&path, text.as_bytes())?;
    Ok(path)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CxError::io(dir, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GenerateSummary {
    pub raw_examples: usize,
    pub images: usize,
    pub questions: usize,
}

/// Generate a synthetic dataset into `dir`: raw examples, neighbor lists,
/// feature store, and the generator-truth sidecar.
pub fn generate(spec: &SyntheticSpec, dir: &Path) -> Result<GenerateSummary> {
    let data = generate_synthetic(spec)?;
    ensure_dir(dir)?;
    write_raw(&dir.join(RAW_FILE), &data.raw)?;
    data.knn.write(&dir.join(KNN_FILE))?;
    data.store.write(&dir.join(FEATURES_FILE))?;
    data.truth.write(&dir.join(TRUTH_FILE))?;
    write_config(dir, spec)?;
    Ok(GenerateSummary {
        raw_examples: data.raw.len(),
        images: data.store.n_images(),
        questions: data.store.n_questions(),
    })
}

/// Filter raw examples against their neighbor lists into a manifest.
pub fn build(raw: &Path, knn: &Path, manifest: &Path) -> Result<DatasetCounts> {
    let raw = read_raw(raw)?;
    let knn = KnnLists::read(knn)?;
    let built = build_dataset(&raw, &knn)?;
    if let Some(dir) = manifest.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(dir)?;
    }
    built.write(manifest)?;
    Ok(built.counts)
}

/// Inputs of a step that works on a built dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetFiles {
    pub manifest: PathBuf,
    pub features: PathBuf,
    /// Generator truth for the planted oracle; defaults to `truth.txt`
    /// beside the feature store when that file exists.
    pub truth: Option<PathBuf>,
}

impl DatasetFiles {
    fn truth_path(&self) -> Option<PathBuf> {
        self.truth.clone().or_else(|| {
            let p = self
                .features
                .parent()
                .unwrap_or(Path::new("."))
                .join(TRUTH_FILE);
            p.exists().then_some(p)
        })
    }
}

/// Load manifest, store, and truth, and split the manifest.
pub fn load_context(files: &DatasetFiles, config: &RunConfig) -> Result<ExperimentContext> {
    let manifest = DatasetManifest::read(&files.manifest)?;
    if manifest.is_empty() {
        return Err(CxError::Empty(format!(
            "manifest {}",
            files.manifest.display()
        )));
    }
    let store = FeatureStore::read(&files.features)?;
    store.validate_against(&manifest)?;
    let truth = files
        .truth_path()
        .map(|p| GeneratorTruth::read(&p))
        .transpose()?
        .map(Arc::new);
    let (train, val, test) = split_three(
        &manifest,
        config.split.val_fraction,
        config.split.test_fraction,
        config.split.seed,
    )?;
    for (name, part) in [("training", &train), ("validation", &val), ("test", &test)] {
        if part.is_empty() {
            return Err(CxError::Empty(format!(
                "{name} split of {} examples",
                manifest.len()
            )));
        }
    }
    let table = store.answer_table()?.clone();
    let store = Arc::new(store);
    let oracles = OracleFactory {
        accuracy: config.oracle.accuracy,
        sharpness: config.oracle.sharpness,
        ..OracleFactory::new(
            store.clone(),
            truth,
            config.oracle.z_dim,
            config.oracle.seed,
        )
    };
    Ok(ExperimentContext {
        store,
        table,
        oracles,
        train: train.examples,
        val: val.examples,
        test: test.examples,
        neuralcx: config.neuralcx.clone(),
        two_headed: config.two_headed.clone(),
        record_wallclock: config.record_wallclock,
    })
}

#[derive(Serialize)]
struct TrainEcho<'a> {
    run: &'a RunConfig,
    oracle_mode: &'static str,
    mask: String,
}

/// Train NeuralCX; writes the checkpoint, the training log, and the config.
pub fn train(
    ctx: &ExperimentContext,
    config: &RunConfig,
    mode: OracleMode,
    mask: &AblationMask,
    dir: &Path,
) -> Result<TrainedModel> {
    let mut oracle = ctx.oracles.build(mode)?;
    let nx = NeuralCxConfig {
        seed: config.seed,
        ..ctx.neuralcx.clone()
    };
    let mask = cell_mask(mask, config.seed);
    let model = neuralcx::train(
        &nx,
        &ctx.train,
        &ctx.val,
        &ctx.store,
        &mut oracle,
        &ctx.table,
        &mask,
    )?;
    ensure_dir(dir)?;
    Checkpoint::from_model(&model, true).write(&dir.join(CHECKPOINT_FILE))?;
    write_atomic(&dir.join(TRAIN_LOG_FILE), log_to_csv(&model.log).as_bytes())?;
    write_config(
        dir,
        &TrainEcho {
            run: config,
            oracle_mode: mode.label(),
            mask: mask.label(),
        },
    )?;
    Ok(model)
}

/// Test-split result of a saved NeuralCX checkpoint.
pub fn eval_checkpoint(
    ctx: &ExperimentContext,
    checkpoint: &Checkpoint,
    mode: OracleMode,
) -> Result<EvalResult> {
    let mut oracle = ctx.oracles.build(mode)?;
    if let Some(saved) = &checkpoint.oracle_params {
        let params = oracle.params_mut().ok_or_else(|| {
            CxError::NotTrainable(
                "checkpoint carries oracle weights but the oracle has none".into(),
            )
        })?;
        if params.sizes() != saved.sizes() {
            return Err(CxError::InvalidArgument(
                "checkpoint oracle weights do not fit this oracle".into(),
            ));
        }
        *params = saved.clone();
    }
    oracle.set_trainable(false)?;
    let src = neuralcx::FeatureSources {
        store: &ctx.store,
        oracle: &oracle,
        table: &ctx.table,
    };
    let positions = neuralcx::truth_positions(
        &checkpoint.params,
        &ctx.test,
        src,
        &checkpoint.config.feature_dims,
        &checkpoint.mask,
    )?;
    let cell = ExperimentCell {
        model: ModelKind::NeuralCx,
        oracle_mode: Some(mode),
        mask: checkpoint.mask,
        seed: checkpoint.config.seed,
    };
    let k = ctx.test[0].k();
    EvalResult::from_positions(&cell, &positions, k, 0.0)
}

#[derive(Serialize)]
struct GridEcho<'a> {
    run: &'a RunConfig,
    cells: Vec<String>,
}

/// Run `cells` on the test split and write `results.csv` and `report.txt`.
pub fn eval(
    ctx: &ExperimentContext,
    config: &RunConfig,
    cells: &[ExperimentCell],
    dir: &Path,
) -> Result<Vec<EvalResult>> {
    let results = run_experiment(ctx, cells)?;
    emit_report(&results, dir)?;
    write_config(
        dir,
        &GridEcho {
            run: config,
            cells: cells.iter().map(ExperimentCell::label).collect(),
        },
    )?;
    Ok(results)
}

/// Retrain per mask; results sorted by recall@5 ascending.
pub fn ablate(
    ctx: &ExperimentContext,
    config: &RunConfig,
    masks: &[AblationMask],
    mode: OracleMode,
    dir: &Path,
) -> Result<Vec<EvalResult>> {
    let results = run_ablation(ctx, masks, mode, config.seed)?;
    emit_report(&results, dir)?;
    let cells = masks
        .iter()
        .map(|m| {
            ExperimentCell {
                model: ModelKind::NeuralCx,
                oracle_mode: Some(mode),
                mask: *m,
                seed: config.seed,
            }
            .label()
        })
        .collect();
    write_config(dir, &GridEcho { run: config, cells })?;
    Ok(results)
}

/// Embedding-model recall across `lambdas`, written to `lambda_sweep.csv`.
pub fn sweep_lambda(
    ctx: &ExperimentContext,
    config: &RunConfig,
    lambdas: &[f64],
    mode: OracleMode,
    dir: &Path,
) -> Result<Vec<(f64, EvalResult)>> {
    let sweep = lambda_sweep(ctx, lambdas, mode, config.seed)?;
    ensure_dir(dir)?;
    write_atomic(&dir.join(LAMBDA_FILE), lambda_csv(&sweep).as_bytes())?;
    Ok(sweep)
}

/// Merge results CSVs (in argument order) into one report under `dir`.
pub fn report(inputs: &[PathBuf], dir: &Path) -> Result<Vec<EvalResult>> {
    if inputs.is_empty() {
        return Err(CxError::Empty("no results files given".into()));
    }
    let mut all = Vec::new();
    for path in inputs {
        let rows = parse_results_csv(&read_string(path)?).map_err(|e| match e {
            CxError::InvalidArgument(m) => {
                CxError::InvalidArgument(format!("{}: {m}", path.display()))
            }
            other => other,
        })?;
        all.extend(rows);
    }
    emit_report(&all, dir)?;
    Ok(all)
}
