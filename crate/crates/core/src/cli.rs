//! Command-line front end: TOML run configs, per-task defaults, dispatch and
//! deterministic key=value reports.

use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::discovery::{run_discovery, CandidateScope, DiscoveryConfig};
use crate::error::{Error, Result};
use crate::knowledge::{load_knowledge, KnowledgeBase};
use crate::layers::UpdateMode;
use crate::model::{BfregModel, ModelConfig, Variant};
use crate::numerics::{Activation, Matrix};
use crate::rng::BfRng;
use crate::synth::{gen_expression_static, gen_knowledge, gen_labels, gen_timeseries, SynthSpec};
use crate::tasks::{
    init_recurrent, train_classification, train_forecast_recurrent, train_forecast_simultaneous, train_imputation,
    ExpressionDataset, FrameSet, Split, TrainConfig,
};
use crate::trajectory::{
    simulate, simulation_report, structures_from_kb, train_cnf, CnfField, CnfTrainConfig, FieldConfig,
};

/// Environment variable capping the worker thread count.
pub const THREADS_ENV: &str = "BFREG_THREADS";

#[derive(Parser, Debug)]
#[command(name = "bfreg", version, about = "Knowledge-structured neural networks for gene expression")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train and evaluate missing-value imputation.
    Impute(RunArgs),
    /// Train and evaluate cell classification.
    Classify(RunArgs),
    /// Train and evaluate future-expression forecasting.
    Forecast(RunArgs),
    /// Fit a population flow and simulate held-out timestamps.
    Trajectory(RunArgs),
    /// Ablate a node's edges and rank recovered candidates.
    Discover(RunArgs),
    /// Write a synthetic knowledge base and dataset.
    Synth(RunArgs),
    /// Load a knowledge manifest and summarize it.
    Validate(RunArgs),
}

#[derive(Args, Debug, Clone)]
pub struct RunArgs {
    /// Run configuration (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory; overrides the configured one.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl Command {
    pub fn task(&self) -> Task {
        match self {
            Command::Impute(_) => Task::Impute,
            Command::Classify(_) => Task::Classify,
            Command::Forecast(_) => Task::Forecast,
            Command::Trajectory(_) => Task::Trajectory,
            Command::Discover(_) => Task::Discover,
            Command::Synth(_) => Task::Synth,
            Command::Validate(_) => Task::Validate,
        }
    }

    pub fn args(&self) -> &RunArgs {
        match self {
            Command::Impute(a)
            | Command::Classify(a)
            | Command::Forecast(a)
            | Command::Trajectory(a)
            | Command::Discover(a)
            | Command::Synth(a)
            | Command::Validate(a) => a,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Impute,
    Classify,
    Forecast,
    Trajectory,
    Discover,
    Synth,
    Validate,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Impute => "impute",
            Task::Classify => "classify",
            Task::Forecast => "forecast",
            Task::Trajectory => "trajectory",
            Task::Discover => "discover",
            Task::Synth => "synth",
            Task::Validate => "validate",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backbone {
    #[default]
    Simultaneous,
    Recurrent,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthKind {
    #[default]
    Static,
    Timeseries,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub variant: Option<Variant>,
    pub d: Option<usize>,
    pub hops: Option<usize>,
    pub alpha: Option<Vec<f64>>,
    pub update_mode: Option<UpdateMode>,
    pub activation: Option<Activation>,
    pub head_hidden: Option<Vec<usize>>,
    pub levels: Option<Vec<String>>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub lr: Option<f64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub mask_prob: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForecastSection {
    pub backbone: Option<Backbone>,
    /// Steps predicted from each start frame; defaults to every later frame.
    pub horizon: Option<usize>,
    pub rnn_hidden: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectorySection {
    /// Leading timestamps used for training; the rest are simulated.
    pub known: Option<usize>,
    pub channels: Option<usize>,
    pub time_features: Option<usize>,
    pub hyper_hidden: Option<usize>,
    pub activation: Option<Activation>,
    pub lr: Option<f64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub steps: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscoverSection {
    pub level: Option<String>,
    pub node: Option<String>,
    pub runs: Option<usize>,
    pub k: Option<usize>,
    pub scope: Option<CandidateScope>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSection {
    pub kind: Option<SynthKind>,
    /// Static samples.
    pub samples: Option<usize>,
    /// Pathway-activity classes added as labels; 0 for none.
    pub classes: Option<usize>,
    /// Time-series trajectories and frames per trajectory.
    pub series: Option<usize>,
    pub steps: Option<usize>,
    pub spec: Option<SynthSpec>,
}

/// A run configuration. Relative paths resolve against the config file's directory.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub task: Option<Task>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub knowledge: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub mask: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "is_default")]
    pub model: ModelSection,
    #[serde(default, skip_serializing_if = "is_default")]
    pub train: TrainSection,
    #[serde(default, skip_serializing_if = "is_default")]
    pub forecast: ForecastSection,
    #[serde(default, skip_serializing_if = "is_default")]
    pub trajectory: TrajectorySection,
    #[serde(default, skip_serializing_if = "is_default")]
    pub discover: DiscoverSection,
    #[serde(default, skip_serializing_if = "is_default")]
    pub synth: SynthSection,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn is_default<T: Default + PartialEq>(v: &T) -> bool {
    *v == T::default()
}

/// Parses a config file; unknown keys are rejected by name.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut cfg = parse_config(&text).map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
        other => other,
    })?;
    cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(cfg)
}

pub fn parse_config(text: &str) -> Result<RunConfig> {
    toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))
}

/// Learning rate, epochs, embedding size and head width for a task.
pub fn task_defaults(task: Task) -> (f64, usize, usize, usize) {
    match task {
        Task::Classify => (5e-4, 200, 4, 256),
        Task::Forecast => (1e-4, 2000, 16, 512),
        _ => (1e-3, 200, 4, 1024),
    }
}

fn require<'a>(value: &'a Option<PathBuf>, key: &str, task: Task) -> Result<&'a PathBuf> {
    value
        .as_ref()
        .ok_or_else(|| Error::Config(format!("task `{}` needs `{key}`", task.name())))
}

impl RunConfig {
    /// Fills every default for `task` and checks the required fields.
    pub fn resolve(mut self, task: Task) -> Result<RunConfig> {
        if let Some(t) = self.task {
            if t != task {
                return Err(Error::Config(format!(
                    "config is for task `{}` but `{}` was requested",
                    t.name(),
                    task.name()
                )));
            }
        }
        self.task = Some(task);
        self.seed.get_or_insert(0);
        match task {
            Task::Impute | Task::Classify | Task::Discover | Task::Forecast => {
                require(&self.knowledge, "knowledge", task)?;
                require(&self.data, "data", task)?;
            }
            Task::Trajectory => {
                require(&self.data, "data", task)?;
            }
            Task::Validate => {
                require(&self.knowledge, "knowledge", task)?;
            }
            Task::Synth => {
                if self.synth.spec.is_none() {
                    return Err(Error::Config("task `synth` needs a [synth.spec] table".into()));
                }
            }
        }
        if matches!(task, Task::Impute | Task::Classify | Task::Forecast | Task::Discover) {
            let (lr, epochs, d, head) = task_defaults(task);
            let m = &mut self.model;
            let variant = *m.variant.get_or_insert(if task == Task::Discover { Variant::Enhanced } else { Variant::Basic });
            if task == Task::Discover && variant != Variant::Enhanced {
                return Err(Error::Config("task `discover` needs the enhanced variant".into()));
            }
            m.d.get_or_insert(d);
            m.hops.get_or_insert(1);
            m.update_mode.get_or_insert(UpdateMode::Sum);
            m.activation.get_or_insert(Activation::Tanh);
            m.head_hidden.get_or_insert_with(|| vec![head]);
            m.levels.get_or_insert_with(Vec::new);
            m.alpha.get_or_insert_with(Vec::new);
            let t = &mut self.train;
            t.lr.get_or_insert(lr);
            t.epochs.get_or_insert(epochs);
            t.batch_size.get_or_insert(32);
            t.mask_prob.get_or_insert(0.6);
        }
        match task {
            Task::Forecast => {
                let f = &mut self.forecast;
                f.backbone.get_or_insert_default();
                if f.backbone == Some(Backbone::Recurrent) {
                    f.rnn_hidden.get_or_insert(64);
                }
            }
            Task::Trajectory => {
                let fd = FieldConfig::default();
                let td = CnfTrainConfig::default();
                let t = &mut self.trajectory;
                t.known.get_or_insert(2);
                t.channels.get_or_insert(fd.channels);
                t.time_features.get_or_insert(fd.time_features);
                t.hyper_hidden.get_or_insert(fd.hyper_hidden);
                t.activation.get_or_insert(fd.activation);
                t.lr.get_or_insert(td.lr);
                t.epochs.get_or_insert(td.epochs);
                t.batch_size.get_or_insert(td.batch_size);
                t.steps.get_or_insert(td.steps);
            }
            Task::Discover => {
                let d = &mut self.discover;
                if d.node.is_none() {
                    return Err(Error::Config("task `discover` needs `discover.node`".into()));
                }
                d.level.get_or_insert_with(|| "gene".to_string());
                d.runs.get_or_insert(10);
                d.k.get_or_insert(20);
                d.scope.get_or_insert_default();
            }
            Task::Synth => {
                let s = &mut self.synth;
                let kind = *s.kind.get_or_insert_default();
                match kind {
                    SynthKind::Static => {
                        s.samples.get_or_insert(2000);
                        s.classes.get_or_insert(0);
                    }
                    SynthKind::Timeseries => {
                        s.series.get_or_insert(100);
                        s.steps.get_or_insert(5);
                    }
                }
                let seed = self.seed.unwrap_or(0);
                if let Some(spec) = s.spec.as_mut() {
                    spec.seed = seed;
                }
            }
            _ => {}
        }
        Ok(self)
    }

    pub fn path(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Resolved config as TOML, without the output directory, so reports
    /// from different output locations hash alike.
    pub fn canonical_toml(&self) -> Result<String> {
        let mut c = self.clone();
        c.out = None;
        toml::to_string(&c).map_err(|e| Error::Serde(e.to_string()))
    }

    fn model_config(&self, head_output: usize) -> ModelConfig {
        let m = &self.model;
        ModelConfig {
            variant: m.variant.unwrap_or_default(),
            d: m.d.unwrap_or(4),
            hops: m.hops.unwrap_or(1),
            alpha: m.alpha.clone().unwrap_or_default(),
            update_mode: m.update_mode.unwrap_or_default(),
            activation: m.activation.unwrap_or(Activation::Tanh),
            head_hidden: m.head_hidden.clone().unwrap_or_default(),
            head_output,
            levels: m.levels.clone().unwrap_or_default(),
        }
    }

    /// The enhanced variant gets a default α of 1e-3 per included level.
    fn model_for(&self, kb: &KnowledgeBase, head_output: usize) -> Result<ModelConfig> {
        let mut cfg = self.model_config(head_output);
        if cfg.variant == Variant::Enhanced && cfg.alpha.is_empty() {
            cfg.alpha = vec![1e-3; cfg.resolve_levels(kb)?.len()];
        }
        Ok(cfg)
    }

    fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            lr: t.lr.unwrap_or(1e-3),
            epochs: t.epochs.unwrap_or(200),
            batch_size: t.batch_size.unwrap_or(32),
            mask_prob: t.mask_prob.unwrap_or(0.6),
            seed: self.seed.unwrap_or(0),
        }
    }
}

/// Ordered key=value lines.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Report {
    pub entries: Vec<(String, String)>,
}

impl Report {
    pub fn push(&mut self, key: impl Into<String>, value: impl Display) {
        self.entries.push((key.into(), value.to_string()));
    }

    pub fn push_opt(&mut self, key: impl Into<String>, value: Option<impl Display>) {
        match value {
            Some(v) => self.push(key, v),
            None => self.push(key, "none"),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn render(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn hash_matrices<'a>(ms: impl IntoIterator<Item = &'a Matrix>, extra: &[f64]) -> String {
    let mut h = Sha256::new();
    for v in extra {
        h.update(v.to_le_bytes());
    }
    for m in ms {
        h.update((m.rows() as u64).to_le_bytes());
        h.update((m.cols() as u64).to_le_bytes());
        for v in m.data() {
            h.update(v.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

fn hash_files(paths: &[&Path]) -> Result<String> {
    let mut h = Sha256::new();
    for p in paths {
        let bytes = fs::read(p).map_err(|e| Error::io(p, e))?;
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(hex::encode(h.finalize()))
}

fn write_file(path: &Path, body: &str) -> Result<()> {
    fs::write(path, body).map_err(|e| Error::io(path, e))
}

/// Parses arguments, applies the thread cap, runs the task and writes its
/// outputs. Returns the report that was written.
pub fn run<I, T>(args: I) -> Result<Report>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| Error::Config(e.to_string()))?;
    run_cli(&cli)
}

/// Runs already-parsed arguments.
pub fn run_cli(cli: &Cli) -> Result<Report> {
    configure_threads();
    let task = cli.command.task();
    let a = cli.command.args();
    let mut cfg = load_config(&a.config)?;
    if let Some(s) = a.seed {
        cfg.seed = Some(s);
    }
    let cfg = cfg.resolve(task)?;
    let out = a
        .out
        .clone()
        .or_else(|| cfg.out.as_ref().map(|o| cfg.path(o)))
        .unwrap_or_else(|| PathBuf::from("bfreg-out"));
    dispatch(&cfg, &out)
}

fn configure_threads() {
    if let Some(n) = std::env::var(THREADS_ENV).ok().and_then(|v| v.parse::<usize>().ok()) {
        if n > 0 {
            // Fails only if a pool already exists, which keeps its size.
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
}

/// Runs a resolved config, writing the report, resolved config and
/// task artifacts under `out`.
pub fn dispatch(cfg: &RunConfig, out: &Path) -> Result<Report> {
    let task = cfg.task.ok_or_else(|| Error::Config("config has no task".into()))?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let canonical = cfg.canonical_toml()?;
    let mut resolved = cfg.clone();
    resolved.out = Some(out.to_path_buf());
    write_file(
        &out.join("resolved_config.toml"),
        &toml::to_string(&resolved).map_err(|e| Error::Serde(e.to_string()))?,
    )?;
    let mut report = Report::default();
    report.push("task", task.name());
    report.push("seed", cfg.seed.unwrap_or(0));
    report.push("config_hash", sha256_hex(canonical.as_bytes()));
    match task {
        Task::Impute => run_impute(cfg, out, &mut report)?,
        Task::Classify => run_classify(cfg, out, &mut report)?,
        Task::Forecast => run_forecast(cfg, out, &mut report)?,
        Task::Trajectory => run_trajectory(cfg, out, &mut report)?,
        Task::Discover => run_discover(cfg, out, &mut report)?,
        Task::Synth => run_synth(cfg, out, &mut report)?,
        Task::Validate => run_validate(cfg, &mut report)?,
    }
    write_file(&out.join("report.txt"), &report.render())?;
    Ok(report)
}

fn knowledge(cfg: &RunConfig, report: &mut Report) -> Result<Arc<KnowledgeBase>> {
    let path = cfg.path(require(&cfg.knowledge, "knowledge", cfg.task.unwrap_or(Task::Validate))?);
    let kb = load_knowledge(&path)?;
    report.push("knowledge_hash", kb.fingerprint());
    Ok(Arc::new(kb))
}

fn expression(cfg: &RunConfig, kb: &KnowledgeBase, report: &mut Report) -> Result<ExpressionDataset> {
    let data = cfg.path(require(&cfg.data, "data", cfg.task.unwrap_or(Task::Impute))?);
    let mask = cfg.mask.as_ref().map(|m| cfg.path(m));
    let mut files = vec![data.as_path()];
    if let Some(m) = &mask {
        files.push(m.as_path());
    }
    report.push("data_hash", hash_files(&files)?);
    let ds = ExpressionDataset::read(&data, mask.as_deref())?;
    report.push("samples", ds.samples());
    ds.align_to(kb.genes())
}

fn frames(cfg: &RunConfig, genes: Option<&[String]>, report: &mut Report) -> Result<FrameSet> {
    let path = cfg.path(require(&cfg.data, "data", cfg.task.unwrap_or(Task::Forecast))?);
    let fs = FrameSet::read(&path)?;
    report.push("data_hash", hash_matrices(&fs.frames, &fs.times));
    report.push("timestamps", fs.len());
    match genes {
        Some(g) => align_frames(&fs, g),
        None => Ok(fs),
    }
}

fn align_frames(fs: &FrameSet, genes: &[String]) -> Result<FrameSet> {
    let idx = genes
        .iter()
        .map(|g| {
            fs.genes
                .iter()
                .position(|x| x == g)
                .ok_or_else(|| Error::invalid(format!("gene `{g}` missing from the time-series data")))
        })
        .collect::<Result<Vec<_>>>()?;
    FrameSet::new(genes.to_vec(), fs.times.clone(), fs.frames.iter().map(|f| f.select_cols(&idx)).collect())
}

fn push_losses(report: &mut Report, train: &crate::tasks::TrainReport) {
    report.push("epochs_run", train.train_losses.len());
    report.push_opt("final_train_loss", train.train_losses.last());
    report.push_opt("best_epoch", train.best_epoch);
}

fn run_impute(cfg: &RunConfig, out: &Path, report: &mut Report) -> Result<()> {
    let kb = knowledge(cfg, report)?;
    let data = expression(cfg, &kb, report)?;
    let seed = cfg.seed.unwrap_or(0);
    let mut model = BfregModel::new(cfg.model_for(&kb, kb.gene_count())?, Arc::clone(&kb), &mut BfRng::new(seed))?;
    let split = Split::random(data.samples(), seed);
    let r = train_imputation(&mut model, &data, &split, &cfg.train_config())?;
    push_losses(report, &r.train);
    report.push_opt("val_mse", r.val_mse);
    report.push_opt("test_mse", r.test_mse);
    model.save(&out.join("model.json"))
}

fn run_classify(cfg: &RunConfig, out: &Path, report: &mut Report) -> Result<()> {
    let kb = knowledge(cfg, report)?;
    let data = expression(cfg, &kb, report)?;
    let seed = cfg.seed.unwrap_or(0);
    let classes = data.class_count();
    report.push("classes", classes);
    let mut model = BfregModel::new(cfg.model_for(&kb, classes)?, Arc::clone(&kb), &mut BfRng::new(seed))?;
    let split = Split::random(data.samples(), seed);
    let r = train_classification(&mut model, &data, &split, &cfg.train_config())?;
    push_losses(report, &r.train);
    report.push("train_auc", r.train_auc);
    report.push_opt("test_auc", r.test_auc);
    model.save(&out.join("model.json"))
}

fn run_forecast(cfg: &RunConfig, out: &Path, report: &mut Report) -> Result<()> {
    let kb = knowledge(cfg, report)?;
    let fs = frames(cfg, Some(kb.genes()), report)?;
    let seed = cfg.seed.unwrap_or(0);
    let series = fs
        .series_count()
        .ok_or_else(|| Error::invalid("forecasting needs the same series in every frame"))?;
    let horizon = cfg.forecast.horizon.unwrap_or(fs.len().saturating_sub(1));
    if horizon == 0 || horizon >= fs.len() {
        return Err(Error::Config(format!("horizon must lie in 1..{}", fs.len())));
    }
    report.push("horizon", horizon);
    let split = Split::random(series, seed);
    let n = kb.gene_count();
    let mut rng = BfRng::new(seed);
    let backbone = cfg.forecast.backbone.unwrap_or_default();
    let r = match backbone {
        Backbone::Simultaneous => {
            let mut model = BfregModel::new(cfg.model_for(&kb, n * horizon)?, Arc::clone(&kb), &mut rng)?;
            let r = train_forecast_simultaneous(&mut model, &fs, &split, horizon, &cfg.train_config())?;
            model.save(&out.join("model.json"))?;
            r
        }
        Backbone::Recurrent => {
            let mut model = BfregModel::new(cfg.model_for(&kb, n)?, Arc::clone(&kb), &mut rng)?;
            init_recurrent(&mut model, cfg.forecast.rnn_hidden.unwrap_or(64), &mut rng)?;
            let r = train_forecast_recurrent(&mut model, &fs, &split, horizon, &cfg.train_config())?;
            model.save(&out.join("model.json"))?;
            r
        }
    };
    report.push("backbone", format!("{backbone:?}").to_lowercase());
    push_losses(report, &r.train);
    report.push("test_mse", r.mse);
    report.push_opt("test_pcc", r.pcc);
    report.push("baseline_mse", r.baseline_mse);
    Ok(())
}

fn run_trajectory(cfg: &RunConfig, out: &Path, report: &mut Report) -> Result<()> {
    let t = &cfg.trajectory;
    let kb = match &cfg.knowledge {
        Some(_) => Some(knowledge(cfg, report)?),
        None => None,
    };
    let fs = frames(cfg, kb.as_ref().map(|k| k.genes()), report)?;
    let known = t.known.unwrap_or(2);
    if known < 2 || known > fs.len() {
        return Err(Error::Config(format!("known timestamps must lie in 2..={}", fs.len())));
    }
    let structures = match &kb {
        Some(k) => structures_from_kb(k)?,
        None => vec![Matrix::identity(fs.genes.len())],
    };
    let seed = cfg.seed.unwrap_or(0);
    let field_cfg = FieldConfig {
        channels: t.channels.unwrap_or(8),
        time_features: t.time_features.unwrap_or(4),
        hyper_hidden: t.hyper_hidden.unwrap_or(16),
        activation: t.activation.unwrap_or(Activation::Tanh),
    };
    let train_cfg = CnfTrainConfig {
        lr: t.lr.unwrap_or(1e-2),
        epochs: t.epochs.unwrap_or(100),
        batch_size: t.batch_size.unwrap_or(128),
        steps: t.steps.unwrap_or(40),
        seed,
    };
    let mut field = CnfField::new(field_cfg, structures, &mut BfRng::new(seed))?;
    let train = FrameSet::new(fs.genes.clone(), fs.times[..known].to_vec(), fs.frames[..known].to_vec())?;
    let r = train_cnf(&mut field, &train, &train_cfg)?;
    report.push("pieces", field.structures().len());
    report.push("epochs_run", r.losses.len());
    report.push_opt("final_train_loss", r.epoch_totals().last());
    let horizon = &fs.times[known..];
    let preds = simulate(&field, &fs.frames[known - 1], fs.times[known - 1], horizon, train_cfg.steps)?;
    let sim = simulation_report(horizon, &preds, &fs.frames[known..], seed)?;
    for (t, d) in sim.times.iter().zip(&sim.distances) {
        report.push(format!("wasserstein@{t}"), d);
    }
    report.push_opt("mean_wasserstein", sim.mean());
    field.save(&out.join("field.json"))
}

fn run_discover(cfg: &RunConfig, out: &Path, report: &mut Report) -> Result<()> {
    let kb = knowledge(cfg, report)?;
    let data = expression(cfg, &kb, report)?;
    let d = &cfg.discover;
    let dc = DiscoveryConfig {
        level: d.level.clone().unwrap_or_else(|| "gene".into()),
        node: d.node.clone().unwrap_or_default(),
        runs: d.runs.unwrap_or(10),
        k: d.k.unwrap_or(20),
        scope: d.scope.unwrap_or_default(),
        seed: cfg.seed.unwrap_or(0),
    };
    let ablated = kb.remove_node_edges(&dc.level, &dc.node)?;
    let model_cfg = cfg.model_for(&ablated, kb.gene_count())?;
    let r = run_discovery(&kb, &data, &model_cfg, &cfg.train_config(), &dc)?;
    report.push("node", &r.node);
    report.push("runs", r.runs);
    report.push("failed_runs", r.failed_runs);
    report.push("k", r.k);
    report.push("candidates", r.candidates);
    report.push("removed_edges", r.removed.len());
    report.push("recall", r.recall);
    report.push("random_recall", r.random_recall());
    let mut tsv = String::from("source\ttarget\tfrequency\tremoved\n");
    for ((s, t), f) in &r.frequencies {
        let removed = r.removed.contains(&(s.clone(), t.clone()));
        tsv.push_str(&format!("{s}\t{t}\t{f}\t{removed}\n"));
    }
    write_file(&out.join("frequencies.tsv"), &tsv)
}

fn run_synth(cfg: &RunConfig, out: &Path, report: &mut Report) -> Result<()> {
    let s = &cfg.synth;
    let spec = s.spec.clone().ok_or_else(|| Error::Config("task `synth` needs a [synth.spec] table".into()))?;
    let kb = gen_knowledge(&spec)?;
    let manifest = kb.write_dir(&out.join("knowledge"))?;
    report.push("knowledge_hash", kb.fingerprint());
    report.push("knowledge", manifest.strip_prefix(out).unwrap_or(&manifest).display());
    match s.kind.unwrap_or_default() {
        SynthKind::Static => {
            let mut ds = gen_expression_static(&kb, &spec, s.samples.unwrap_or(2000))?;
            let classes = s.classes.unwrap_or(0);
            if classes > 0 {
                ds.labels = Some(gen_labels(&kb, &ds, classes)?);
            }
            let values = out.join("data.csv");
            let mask = (spec.dropout > 0.0).then(|| out.join("mask.csv"));
            ds.write(&values, mask.as_deref())?;
            report.push("data", "data.csv");
            if mask.is_some() {
                report.push("mask", "mask.csv");
            }
            report.push("samples", ds.samples());
            report.push("data_hash", hash_matrices(std::iter::once(&ds.values), &[]));
        }
        SynthKind::Timeseries => {
            let fs = gen_timeseries(&kb, &spec, s.series.unwrap_or(100), s.steps.unwrap_or(5))?;
            let manifest = fs.write(&out.join("frames"))?;
            report.push("data", manifest.strip_prefix(out).unwrap_or(&manifest).display());
            report.push("timestamps", fs.len());
            report.push("data_hash", hash_matrices(&fs.frames, &fs.times));
        }
    }
    Ok(())
}

fn run_validate(cfg: &RunConfig, report: &mut Report) -> Result<()> {
    let kb = knowledge(cfg, report)?;
    for (name, nodes, edges) in kb.summary() {
        report.push(format!("level.{name}.nodes"), nodes);
        report.push(format!("level.{name}.edges"), edges);
    }
    Ok(())
}
