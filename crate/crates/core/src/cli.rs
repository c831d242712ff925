//! Configuration and the commands behind the `ova-inn` binary.
//!
//! Every setting can come from a flat `key = value` config file (`--config`)
//! and be overridden by the matching `--key=value` flag. Reports and
//! predictions go to stdout as CSV or JSON; progress goes to stderr.
//!
//! Exit codes: 0 success, 1 configuration error, 2 data error, 3 I/O error.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use crate::continual::{
    self, evaluate_curve, Classifier, EvalMode, EvalReport, ExpertRegistry, PrototypeModel,
    TaskPartition,
};
use crate::dataio::{self, LabeledVectors, Normalization};
use crate::error::Error;
use crate::flowcore::Activation;
use crate::numkit::{Rng, Vector};
use crate::optim::{self, TrainConfig};
use crate::ClassId;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitCode {
    Success = 0,
    Config = 1,
    Data = 2,
    Io = 3,
}

/// An error tagged with the exit code it maps to.
#[derive(Debug, thiserror::Error)]
#[error("{source}")]
pub struct CliError {
    pub code: ExitCode,
    #[source]
    pub source: Error,
}

impl CliError {
    fn config(source: Error) -> Self {
        Self { code: ExitCode::Config, source }
    }

    fn data(source: Error) -> Self {
        Self { code: ExitCode::Data, source }
    }

    /// I/O failures keep code 3; anything else found while writing outputs
    /// (for example an unrepresentable net) is a configuration problem.
    fn output(source: Error) -> Self {
        let code = match source {
            Error::Io { .. } => ExitCode::Io,
            _ => ExitCode::Config,
        };
        Self { code, source }
    }

    /// Reading a model: missing/unreadable file is I/O, a malformed one is data.
    fn model(source: Error) -> Self {
        let code = match source {
            Error::Io { .. } => ExitCode::Io,
            _ => ExitCode::Data,
        };
        Self { code, source }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn cfg_err(msg: impl Into<String>) -> CliError {
    CliError::config(Error::Config(msg.into()))
}

macro_rules! override_flags {
    ($( $(#[doc = $doc:literal])* $field:ident => $key:literal, )*) => {
        /// Flags shared by every subcommand. Each one mirrors a config-file key.
        #[derive(Debug, Clone, Default, Args)]
        pub struct Overrides {
            $(
                $(#[doc = $doc])*
                #[arg(long = $key, value_name = "VALUE", num_args = 0..=1, default_missing_value = "true")]
                pub $field: Option<String>,
            )*
        }

        impl Overrides {
            pub const KEYS: &'static [&'static str] = &[$($key),*];

            fn pairs(&self) -> Vec<(&'static str, String)> {
                let mut out = Vec::new();
                $( if let Some(v) = &self.$field { out.push(($key, v.clone())); } )*
                out
            }
        }
    };
}

override_flags! {
    /// Flat key = value config file; flags override its entries
    config => "config",
    /// Hyperparameter preset: mnist (default) or cifar100
    preset => "preset",
    mnist_images => "mnist-images",
    mnist_labels => "mnist-labels",
    /// OVAFEAT1 feature file
    features => "features",
    test_mnist_images => "test-mnist-images",
    test_mnist_labels => "test-mnist-labels",
    test_features => "test-features",
    /// none | scale_255 | affine:SHIFT,SCALE
    normalize => "normalize",
    /// Add U[0,1) noise to raw inputs before normalizing (training only)
    dequantize => "dequantize",
    /// Append a zero coordinate to odd-dimensional data
    pad_to_even => "pad-to-even",
    /// Class presentation order, e.g. 0-9 or 3,1,2
    class_order => "class-order",
    /// Use at most this many training samples per class
    max_per_class => "max-per-class",
    lr => "lr",
    epochs => "epochs",
    weight_decay => "weight-decay",
    decoupled_weight_decay => "decoupled-weight-decay",
    patience => "patience",
    batch_size => "batch-size",
    rank => "rank",
    blocks => "blocks",
    /// relu | leaky_relu | tanh | identity
    activation => "activation",
    seed => "seed",
    min_lr => "min-lr",
    init_bound => "init-bound",
    swap_halves => "swap-halves",
    /// Registry file
    model => "model",
    /// Report path; writes <path>.json and <path>.csv
    report => "report",
    /// single | multi
    mode => "mode",
    /// Task partition for multi-head evaluation, e.g. 0-4;5-9
    tasks => "tasks",
    /// Worker threads for evaluation (0 = all cores)
    threads => "threads",
    parallel_classes => "parallel-classes",
    eval_every_class => "eval-every-class",
    /// CSV of input rows for predict ("-" for stdin)
    input => "input",
}

#[derive(Debug, Parser)]
#[command(name = "ova-inn", version, about = "One-versus-all invertible networks for class-incremental learning")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one network per class, class by class, checkpointing after each
    Train(Overrides),
    /// Evaluate a registry on a labeled test set
    Eval(Overrides),
    /// Score input rows against every registered class
    Predict(Overrides),
    /// Nearest-prototype baseline on the same protocol
    Baseline(Overrides),
    /// Print the registry header and parameter counts
    Inspect(Overrides),
}

/// Where labeled vectors come from.
#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSpec {
    Mnist { images: PathBuf, labels: PathBuf },
    Features(PathBuf),
}

impl DatasetSpec {
    fn default_normalization(&self) -> Normalization {
        match self {
            DatasetSpec::Mnist { .. } => Normalization::Scale255,
            DatasetSpec::Features(_) => Normalization::None,
        }
    }

    fn load_raw(&self) -> crate::Result<LabeledVectors> {
        match self {
            DatasetSpec::Mnist { images, labels } => dataio::load_mnist_idx(images, labels),
            DatasetSpec::Features(path) => dataio::load_feature_file(path),
        }
    }
}

/// Fully resolved settings for one invocation.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dataset: Option<DatasetSpec>,
    pub test_dataset: Option<DatasetSpec>,
    pub normalize: Option<Normalization>,
    pub dequantize: bool,
    pub pad_to_even: bool,
    pub class_order: Option<Vec<ClassId>>,
    pub max_per_class: Option<usize>,
    pub train: TrainConfig,
    pub model: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub mode: EvalMode,
    pub tasks: Option<TaskPartition>,
    pub threads: usize,
    pub parallel_classes: bool,
    pub eval_every_class: bool,
    pub input: Option<PathBuf>,
}

fn normalize_key(key: &str) -> String {
    key.trim().trim_start_matches("--").to_ascii_lowercase().replace('_', "-")
}

/// Parses `key = value` lines. `#` and `;` start comments; `[section]`
/// headers are ignored.
pub fn parse_config_text(text: &str) -> crate::Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with(';') || line.starts_with('[') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("config line {}: expected key = value", i + 1)))?;
        let key = normalize_key(k);
        if !Overrides::KEYS.contains(&key.as_str()) || key == "config" {
            return Err(Error::Config(format!("config line {}: unknown key '{key}'", i + 1)));
        }
        out.insert(key, v.trim().to_string());
    }
    Ok(out)
}

fn parse_bool(key: &str, v: &str) -> crate::Result<bool> {
    match v.trim().to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected a boolean, got '{v}'"))),
    }
}

fn parse_num<T: FromStr>(key: &str, v: &str) -> crate::Result<T> {
    v.trim()
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse '{v}'")))
}

impl RunConfig {
    /// Builds a config from merged key/value settings.
    pub fn from_settings(settings: &BTreeMap<String, String>) -> crate::Result<Self> {
        let get = |k: &str| settings.get(k).map(String::as_str);
        let path = |k: &str| get(k).map(PathBuf::from);

        let mut train = match get("preset").unwrap_or("mnist") {
            "mnist" => TrainConfig::mnist(),
            "cifar100" | "cifar-100" => TrainConfig::cifar100(),
            other => return Err(Error::Config(format!("unknown preset '{other}'"))),
        };
        macro_rules! set {
            ($key:literal, $field:expr, num) => {
                if let Some(v) = get($key) {
                    $field = parse_num($key, v)?;
                }
            };
            ($key:literal, $field:expr, bool) => {
                if let Some(v) = get($key) {
                    $field = parse_bool($key, v)?;
                }
            };
        }
        set!("lr", train.learning_rate, num);
        set!("epochs", train.epochs, num);
        set!("weight-decay", train.weight_decay, num);
        set!("decoupled-weight-decay", train.decoupled_weight_decay, bool);
        set!("patience", train.patience, num);
        set!("batch-size", train.batch_size, num);
        set!("rank", train.rank, num);
        set!("blocks", train.blocks, num);
        set!("seed", train.seed, num);
        set!("min-lr", train.min_lr, num);
        set!("init-bound", train.init_bound, num);
        set!("swap-halves", train.swap_halves_between_blocks, bool);
        if let Some(v) = get("activation") {
            train.activation = v.parse::<Activation>()?;
        }
        train.validate()?;

        let dataset = dataset_spec(path("mnist-images"), path("mnist-labels"), path("features"), "")?;
        let test_dataset = dataset_spec(
            path("test-mnist-images"),
            path("test-mnist-labels"),
            path("test-features"),
            "test-",
        )?;

        let mut cfg = RunConfig {
            dataset,
            test_dataset,
            normalize: get("normalize").map(str::parse).transpose()?,
            dequantize: false,
            pad_to_even: false,
            class_order: get("class-order").map(continual::parse_class_list).transpose()?,
            max_per_class: get("max-per-class").map(|v| parse_num("max-per-class", v)).transpose()?,
            train,
            model: path("model"),
            report: path("report"),
            mode: get("mode").map(str::parse).transpose()?.unwrap_or(EvalMode::SingleHead),
            tasks: get("tasks").map(str::parse).transpose()?,
            threads: 0,
            parallel_classes: false,
            eval_every_class: true,
            input: path("input"),
        };
        set!("dequantize", cfg.dequantize, bool);
        set!("pad-to-even", cfg.pad_to_even, bool);
        set!("threads", cfg.threads, num);
        set!("parallel-classes", cfg.parallel_classes, bool);
        set!("eval-every-class", cfg.eval_every_class, bool);

        if cfg.max_per_class == Some(0) {
            return Err(Error::Config("max-per-class must be >= 1".into()));
        }
        match (cfg.mode, &cfg.tasks) {
            (EvalMode::MultiHead, None) => {
                return Err(Error::Config("--mode=multi requires --tasks".into()))
            }
            (EvalMode::SingleHead, Some(_)) => {
                return Err(Error::Config("--tasks only applies to --mode=multi".into()))
            }
            _ => {}
        }
        Ok(cfg)
    }

    /// Merges the config file named by `--config` (if any) with the flags;
    /// flags win.
    pub fn from_overrides(flags: &Overrides) -> crate::Result<Self> {
        let mut settings = match &flags.config {
            Some(path) => {
                let path = Path::new(path);
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
                parse_config_text(&text)?
            }
            None => BTreeMap::new(),
        };
        for (k, v) in flags.pairs() {
            if k != "config" {
                settings.insert(k.to_string(), v);
            }
        }
        Self::from_settings(&settings)
    }
}

fn dataset_spec(
    images: Option<PathBuf>,
    labels: Option<PathBuf>,
    features: Option<PathBuf>,
    prefix: &str,
) -> crate::Result<Option<DatasetSpec>> {
    match (images, labels, features) {
        (None, None, None) => Ok(None),
        (Some(images), Some(labels), None) => Ok(Some(DatasetSpec::Mnist { images, labels })),
        (None, None, Some(f)) => Ok(Some(DatasetSpec::Features(f))),
        (Some(_), None, None) | (None, Some(_), None) => Err(Error::Config(format!(
            "--{prefix}mnist-images and --{prefix}mnist-labels must be given together"
        ))),
        _ => Err(Error::Config(format!(
            "give either --{prefix}mnist-images/--{prefix}mnist-labels or --{prefix}features, not both"
        ))),
    }
}

impl RunConfig {
    fn normalization_for(&self, spec: &DatasetSpec) -> Normalization {
        self.normalize.unwrap_or_else(|| spec.default_normalization())
    }

    fn prepare(&self, spec: &DatasetSpec, for_training: bool) -> CliResult<LabeledVectors> {
        let mut ds = spec.load_raw().map_err(CliError::data)?;
        if for_training && self.dequantize {
            ds = dataio::dequantize(ds, &mut Rng::new(self.train.seed));
        }
        ds = dataio::normalize(ds, self.normalization_for(spec)).map_err(CliError::config)?;
        if !ds.dim().is_multiple_of(2) {
            if !self.pad_to_even {
                return Err(cfg_err(format!(
                    "data dimension {} is odd; pass --pad-to-even to append a zero coordinate",
                    ds.dim()
                )));
            }
            ds = dataio::pad_to_even(ds);
        }
        Ok(ds)
    }

    fn train_data(&self) -> CliResult<LabeledVectors> {
        let spec = self
            .dataset
            .as_ref()
            .ok_or_else(|| cfg_err("no training data: pass --mnist-images/--mnist-labels or --features"))?;
        let ds = self.prepare(spec, true)?;
        Ok(match self.max_per_class {
            Some(n) => ds.take_per_class(n),
            None => ds,
        })
    }

    fn model_path(&self) -> CliResult<&Path> {
        self.model.as_deref().ok_or_else(|| cfg_err("--model is required"))
    }

    fn class_order_for(&self, ds: &LabeledVectors) -> Vec<ClassId> {
        self.class_order.clone().unwrap_or_else(|| ds.classes())
    }

    fn with_pool<T: Send>(&self, f: impl FnOnce() -> T + Send) -> CliResult<T> {
        if self.threads == 0 {
            return Ok(f());
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.threads)
            .build()
            .map_err(|e| cfg_err(format!("cannot start {} threads: {e}", self.threads)))?;
        Ok(pool.install(f))
    }
}

fn write_report(report: &EvalReport, path: Option<&Path>) -> CliResult<()> {
    if let Some(p) = path {
        report.write(p).map_err(CliError::output)?;
        log::info!(
            "wrote {} and {}",
            p.with_extension("json").display(),
            p.with_extension("csv").display()
        );
    }
    Ok(())
}

fn eval_error(e: Error) -> CliError {
    match e {
        Error::Config(_) => CliError::config(e),
        _ => CliError::data(e),
    }
}

/// Trains every class of the stream that the registry at `--model` does not
/// already hold, checkpointing after each class.
pub fn cmd_train(cfg: &RunConfig, out: &mut dyn Write) -> CliResult<()> {
    let model_path = cfg.model_path()?.to_path_buf();
    let data = cfg.train_data()?;
    let order = cfg.class_order_for(&data);
    let stream = dataio::make_class_stream(&data, &order).map_err(CliError::config)?;
    let test = match (&cfg.test_dataset, cfg.eval_every_class) {
        (Some(spec), true) => Some(cfg.prepare(spec, false)?.filter_classes(&order)),
        _ => None,
    };

    let mut registry = if model_path.exists() {
        let reg = continual::load_registry(&model_path).map_err(CliError::model)?;
        if let Some(d) = reg.dim() {
            if d != data.dim() {
                return Err(CliError::data(Error::dim("resume", d, data.dim())));
            }
        }
        log::info!("resuming from {} ({} classes)", model_path.display(), reg.len());
        reg
    } else {
        ExpertRegistry::new()
    };

    let pending: Vec<&(ClassId, LabeledVectors)> = stream
        .batches
        .iter()
        .filter(|(c, _)| !registry.contains(*c))
        .collect();

    let train_one = |(c, batch): &(ClassId, LabeledVectors)| {
        let started = Instant::now();
        let mut rng = Rng::new(cfg.train.class_seed(*c));
        let trained = optim::train_class(batch.vectors(), &cfg.train, &mut rng);
        if let Ok(t) = &trained {
            log::info!(
                "class {c}: {} samples, loss {:.4} -> {:.4} in {:.1}s",
                batch.len(),
                t.initial_loss,
                t.final_loss,
                started.elapsed().as_secs_f64()
            );
        }
        trained
    };

    let results: Vec<_> = if cfg.parallel_classes {
        cfg.with_pool(|| pending.par_iter().map(|b| train_one(b)).collect())?
    } else {
        pending.iter().map(|b| train_one(b)).collect()
    };

    writeln!(out, "class_id,samples,initial_loss,final_loss").map_err(stdout_err)?;
    for ((c, batch), trained) in pending.iter().map(|b| (b.0, &b.1)).zip(results) {
        let trained = trained.map_err(|e| match e {
            Error::Config(_) => CliError::config(e),
            _ => CliError::data(e),
        })?;
        writeln!(
            out,
            "{c},{},{},{}",
            batch.len(),
            trained.initial_loss,
            trained.final_loss
        )
        .map_err(stdout_err)?;
        registry.add_class(c, trained.net).map_err(CliError::data)?;
        continual::save_registry(&registry, &model_path).map_err(CliError::output)?;

        if let Some(test) = &test {
            let seen = registry.class_ids();
            let subset = test.filter_classes(&seen);
            if !subset.is_empty() {
                let mut report = cfg
                    .with_pool(|| evaluate_curve(&registry, &subset, cfg.mode, cfg.tasks.as_ref()))?
                    .map_err(eval_error)?;
                report.model = "ova_inn".into();
                log::info!(
                    "after {} classes: accuracy {:.4}",
                    seen.len(),
                    report.final_accuracy().unwrap_or(f64::NAN)
                );
                write_report(&report, cfg.report.as_deref())?;
            }
        }
    }
    log::info!(
        "registry {} holds {} classes, {} parameters",
        model_path.display(),
        registry.len(),
        registry.param_count()
    );
    Ok(())
}

fn run_eval<C: Classifier>(
    cfg: &RunConfig,
    clf: &C,
    test: &LabeledVectors,
    model_tag: &str,
    out: &mut dyn Write,
) -> CliResult<EvalReport> {
    let mut report = cfg
        .with_pool(|| evaluate_curve(clf, test, cfg.mode, cfg.tasks.as_ref()))?
        .map_err(eval_error)?;
    report.model = model_tag.into();
    write_report(&report, cfg.report.as_deref())?;
    out.write_all(report.to_csv().as_bytes()).map_err(stdout_err)?;
    if let Some(acc) = report.final_accuracy() {
        log::info!("final {model_tag} accuracy: {acc:.4} on {} samples", report.test_count);
    }
    Ok(report)
}

/// Evaluates the registry at `--model` on the dataset flags' data.
pub fn cmd_eval(cfg: &RunConfig, out: &mut dyn Write) -> CliResult<EvalReport> {
    let registry = continual::load_registry(cfg.model_path()?).map_err(CliError::model)?;
    let spec = cfg
        .dataset
        .as_ref()
        .or(cfg.test_dataset.as_ref())
        .ok_or_else(|| cfg_err("no test data: pass --mnist-images/--mnist-labels or --features"))?;
    let test = cfg.prepare(spec, false)?;
    run_eval(cfg, &registry, &test, "ova_inn", out)
}

/// Fits class prototypes on the training stream and evaluates them like
/// `eval` does.
pub fn cmd_baseline(cfg: &RunConfig, out: &mut dyn Write) -> CliResult<EvalReport> {
    let data = cfg.train_data()?;
    let order = cfg.class_order_for(&data);
    let stream = dataio::make_class_stream(&data, &order).map_err(CliError::config)?;
    let model = PrototypeModel::from_stream(&stream).map_err(CliError::data)?;
    let spec = cfg
        .test_dataset
        .as_ref()
        .ok_or_else(|| cfg_err("no test data: pass --test-mnist-images/--test-mnist-labels or --test-features"))?;
    let test = cfg.prepare(spec, false)?.filter_classes(&order);
    run_eval(cfg, &model, &test, "prototype", out)
}

fn stdout_err(e: std::io::Error) -> CliError {
    CliError {
        code: ExitCode::Io,
        source: Error::io("<stdout>", e),
    }
}

fn read_csv_rows(reader: impl BufRead, context: &str) -> crate::Result<Vec<Vector>> {
    let mut rows = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(context, e))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row = line
            .split(',')
            .map(|t| t.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| Error::format(context, i as u64, format!("line {}: not a row of numbers", i + 1)))?;
        rows.push(row.into());
    }
    Ok(rows)
}

/// Prints `row,class_id,score_<c>...` for each input row.
pub fn cmd_predict(cfg: &RunConfig, input: Option<&mut dyn BufRead>, out: &mut dyn Write) -> CliResult<()> {
    let registry = continual::load_registry(cfg.model_path()?).map_err(CliError::model)?;
    let dim = registry
        .dim()
        .ok_or_else(|| CliError::data(Error::State("the expert registry is empty")))?;

    let rows: Vec<Vector> = match (&cfg.input, input) {
        (_, Some(reader)) => read_csv_rows(reader, "<stdin>").map_err(CliError::data)?,
        (Some(p), None) if p.as_os_str() == "-" => {
            read_csv_rows(std::io::stdin().lock(), "<stdin>").map_err(CliError::data)?
        }
        (Some(p), None) => {
            let file = std::fs::File::open(p).map_err(|e| CliError::data(Error::io(p, e)))?;
            read_csv_rows(std::io::BufReader::new(file), &p.display().to_string()).map_err(CliError::data)?
        }
        (None, None) => {
            let spec = cfg
                .dataset
                .as_ref()
                .ok_or_else(|| cfg_err("nothing to predict: pass --input or a dataset"))?;
            cfg.prepare(spec, false)?.vectors().to_vec()
        }
    };
    let scheme = if cfg.input.is_some() {
        cfg.normalize.unwrap_or(Normalization::None)
    } else {
        Normalization::None
    };
    let classes = registry.class_ids();

    let mut header = String::from("row,class_id");
    for c in &classes {
        header.push_str(&format!(",score_{c}"));
    }
    writeln!(out, "{header}").map_err(stdout_err)?;

    let preds = cfg.with_pool(|| {
        rows.par_iter()
            .map(|row| {
                let mut x = row.clone();
                scheme.apply_in_place(&mut x);
                if cfg.pad_to_even && x.len() + 1 == dim {
                    x = x.into_inner().into_iter().chain([0.0]).collect::<Vec<_>>().into();
                }
                continual::predict(&registry, &x)
            })
            .collect::<crate::Result<Vec<_>>>()
    })?;
    let preds = preds.map_err(CliError::data)?;
    for (i, p) in preds.iter().enumerate() {
        let mut line = format!("{i},{}", p.class_id);
        for (_, s) in &p.per_class_scores {
            line.push_str(&format!(",{s}"));
        }
        writeln!(out, "{line}").map_err(stdout_err)?;
    }
    Ok(())
}

#[derive(Debug, serde::Serialize)]
struct NetSummary {
    class_id: ClassId,
    blocks: usize,
    rank: usize,
    activation: Activation,
    params: usize,
}

#[derive(Debug, serde::Serialize)]
struct RegistrySummary {
    magic: &'static str,
    version: u16,
    net_count: usize,
    dim: usize,
    total_params: usize,
    nets: Vec<NetSummary>,
}

/// Prints the registry header and per-class parameter counts as JSON.
pub fn cmd_inspect(cfg: &RunConfig, out: &mut dyn Write) -> CliResult<usize> {
    let registry = continual::load_registry(cfg.model_path()?).map_err(CliError::model)?;
    let summary = RegistrySummary {
        magic: std::str::from_utf8(continual::REGISTRY_MAGIC).expect("ascii magic"),
        version: continual::REGISTRY_VERSION,
        net_count: registry.len(),
        dim: registry.dim().unwrap_or(0),
        total_params: registry.param_count(),
        nets: registry
            .iter()
            .map(|(c, n)| NetSummary {
                class_id: c,
                blocks: n.blocks().len(),
                rank: n.rank(),
                activation: n.activation(),
                params: n.param_count(),
            })
            .collect(),
    };
    let text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    writeln!(out, "{text}").map_err(stdout_err)?;
    Ok(summary.total_params)
}

/// Parses and runs one command, writing results to `out`.
pub fn run(cli: &Cli, out: &mut dyn Write) -> CliResult<()> {
    let flags = match &cli.command {
        Command::Train(f)
        | Command::Eval(f)
        | Command::Predict(f)
        | Command::Baseline(f)
        | Command::Inspect(f) => f,
    };
    let cfg = RunConfig::from_overrides(flags).map_err(CliError::config)?;
    match &cli.command {
        Command::Train(_) => cmd_train(&cfg, out),
        Command::Eval(_) => cmd_eval(&cfg, out).map(|_| ()),
        Command::Predict(_) => cmd_predict(&cfg, None, out),
        Command::Baseline(_) => cmd_baseline(&cfg, out).map(|_| ()),
        Command::Inspect(_) => cmd_inspect(&cfg, out).map(|_| ()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn settings(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn config_text_parsing() {
        let text = "# experiment\n[train]\nlr = 0.001\nbatch_size=64\n; note\nclass-order = 0-4\n";
        let map = parse_config_text(text).unwrap();
        assert_eq!(map["lr"], "0.001");
        assert_eq!(map["batch-size"], "64");
        assert_eq!(map["class-order"], "0-4");
        assert!(parse_config_text("bogus = 1").is_err());
        assert!(parse_config_text("lr 0.1").is_err());
    }

    #[test]
    fn defaults_follow_mnist_preset() {
        let cfg = RunConfig::from_settings(&BTreeMap::new()).unwrap();
        assert_eq!(cfg.train, TrainConfig::mnist());
        assert_eq!(cfg.mode, EvalMode::SingleHead);
        assert!(cfg.eval_every_class);
        let cifar = RunConfig::from_settings(&settings(&[("preset", "cifar100")])).unwrap();
        assert_eq!(cifar.train, TrainConfig::cifar100());
    }

    #[test]
    fn settings_are_typed() {
        let cfg = RunConfig::from_settings(&settings(&[
            ("lr", "0.01"),
            ("epochs", "3"),
            ("activation", "tanh"),
            ("parallel-classes", "true"),
            ("mode", "multi"),
            ("tasks", "0-4;5-9"),
            ("features", "f.bin"),
            ("normalize", "affine:1,2"),
        ]))
        .unwrap();
        assert_eq!(cfg.train.learning_rate, 0.01);
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.train.activation, Activation::Tanh);
        assert!(cfg.parallel_classes);
        assert_eq!(cfg.mode, EvalMode::MultiHead);
        assert_eq!(cfg.dataset, Some(DatasetSpec::Features("f.bin".into())));
        assert_eq!(cfg.normalize, Some(Normalization::Affine { shift: 1.0, scale: 2.0 }));
    }

    #[test]
    fn invalid_settings() {
        for bad in [
            vec![("epochs", "0")],
            vec![("lr", "abc")],
            vec![("mode", "multi")],
            vec![("tasks", "0;1")],
            vec![("mnist-images", "a")],
            vec![("features", "f"), ("mnist-images", "a"), ("mnist-labels", "b")],
            vec![("normalize", "affine:0,0")],
            vec![("activation", "swish")],
            vec![("parallel-classes", "maybe")],
        ] {
            assert!(
                matches!(RunConfig::from_settings(&settings(&bad)), Err(Error::Config(_))),
                "{bad:?}"
            );
        }
    }

    #[test]
    fn flags_override_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(&path, "lr = 0.1\nepochs = 7\n").unwrap();
        let cli = Cli::try_parse_from([
            "ova-inn",
            "train",
            "--config",
            path.to_str().unwrap(),
            "--lr=0.5",
            "--parallel-classes",
        ])
        .unwrap();
        let Command::Train(flags) = &cli.command else { panic!() };
        let cfg = RunConfig::from_overrides(flags).unwrap();
        assert_eq!(cfg.train.learning_rate, 0.5);
        assert_eq!(cfg.train.epochs, 7);
        assert!(cfg.parallel_classes);
    }

    #[test]
    fn csv_rows() {
        let rows = read_csv_rows("1,2\n\n# c\n3, 4\n".as_bytes(), "t").unwrap();
        assert_eq!(rows, vec![Vector::from([1.0, 2.0]), Vector::from([3.0, 4.0])]);
        assert!(read_csv_rows("1,x\n".as_bytes(), "t").is_err());
    }
}
