//! Command-line surface: one TOML run configuration, flag overrides and
//! the subcommands that tie data generation, training and evaluation
//! together.

use std::fs::{self, File};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::autodiff::{Real, PRECISION};
use crate::coarsen::{
    automated_hierarchy, coarsen_once, fixture_graph, grid_hierarchy, validate_hierarchy, CoarsenMethod, Hierarchy,
};
use crate::diagnostics::{contact_check_sample, gradcheck_tiny_rugnn};
use crate::error::{Error, ErrorKind};
use crate::eval::{evaluate, report, Evaluation, RunMetadata, SurrogateStepper, ZeroModel};
use crate::meshgraph::mesh_to_topology;
use crate::net::{HiddenInit, Preset, Variant};
use crate::oracle::{
    export_dataset, generate_dataset, load_dataset, simulate_forming, Dataset, DatasetConfig, DomeParams, Split,
};
use crate::persist::{config_hash, write_json, write_table};
use crate::pipeline::FeatureOptions;
use crate::train::{Checkpoint, EpochRecord, Strategy, TrainConfig, Trainer};

/// Overrides the configured output root.
pub const OUTPUT_ROOT_ENV: &str = "RUGNN_OUTPUT_ROOT";
pub const DEFAULT_OUTPUT_ROOT: &str = "rugnn-out";

/// Gradient check threshold on the maximum relative error.
pub const GRADCHECK_TOL: Real = 1e-4;
/// Contact check threshold on the distance deviation, mm.
pub const CONTACT_CHECK_TOL: Real = 1e-9;

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;
pub const EXIT_CHECK_FAILED: i32 = 5;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] Error),
    #[error("check failed: {0}")]
    CheckFailed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) => match e.kind() {
                ErrorKind::Config => EXIT_CONFIG,
                ErrorKind::Data => EXIT_DATA,
                ErrorKind::Numerical => EXIT_NUMERICAL,
            },
            CliError::CheckFailed(_) => EXIT_CHECK_FAILED,
        }
    }
}

type CliResult<T = ()> = std::result::Result<T, CliError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HierarchyConfig {
    pub method: CoarsenMethod,
    pub levels: usize,
    /// Grid stride between levels; must exceed 1.
    pub ratio: Real,
    /// Start node of bi-stride coarsening.
    pub seed_node: usize,
}

impl Default for HierarchyConfig {
    fn default() -> Self {
        Self {
            method: CoarsenMethod::Grid,
            levels: 3,
            ratio: 3.0,
            seed_node: 0,
        }
    }
}

impl HierarchyConfig {
    pub fn validate(&self) -> crate::Result<()> {
        if !(self.ratio > 1.0 && self.ratio.is_finite()) {
            return Err(Error::Config(format!("coarsening ratio must exceed 1, got {}", self.ratio)));
        }
        if self.levels == 0 {
            return Err(Error::Config("hierarchy needs at least one level".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub preset: String,
    pub variant: Variant,
    pub d_min: Real,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            preset: Preset::DomeAppxC.name().to_string(),
            variant: Variant::Rugnn,
            d_min: FeatureOptions::default().d_min,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub split: Split,
    /// Add the all-zero displacement model to every report.
    pub baseline: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            split: Split::Test,
            baseline: false,
        }
    }
}

/// Every setting of every command. All fields have defaults; unknown keys
/// are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub output_root: PathBuf,
    pub data: DatasetConfig,
    pub hierarchy: HierarchyConfig,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub eval: EvalSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            output_root: PathBuf::from(DEFAULT_OUTPUT_ROOT),
            data: DatasetConfig::default(),
            hierarchy: HierarchyConfig::default(),
            model: ModelSection::default(),
            train: TrainConfig::default(),
            eval: EvalSection::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str, origin: &Path) -> crate::Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("{}: {}", origin.display(), e.message())))
    }

    pub fn load(path: &Path) -> crate::Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text, path)
    }

    pub fn hash(&self) -> crate::Result<String> {
        config_hash(self)
    }

    /// `RUGNN_OUTPUT_ROOT` when set, the configured root otherwise.
    pub fn output_root(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_ROOT_ENV) {
            Some(v) if !v.is_empty() => PathBuf::from(v),
            _ => self.output_root.clone(),
        }
    }

    pub fn preset(&self) -> crate::Result<Preset> {
        self.model.preset.parse()
    }
}

#[derive(Debug, Parser)]
#[command(name = "rugnn", version, about = "Recurrent U-Net graph network surrogate for sheet forming")]
pub struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a synthetic dome dataset.
    GenData(GenDataArgs),
    /// Build a mesh hierarchy, or coarsen a fixture graph once.
    Coarsen(CoarsenArgs),
    /// Train a model on a dataset.
    Train(TrainArgs),
    /// Roll checkpoints out on a split and write error reports.
    Evaluate(EvalArgs),
    /// Like evaluate, and also write every predicted position table.
    Rollout(EvalArgs),
    /// Finite-difference check of a tiny RUGNN's gradients.
    Gradcheck(GradcheckArgs),
    /// Indexed contact search against exhaustive scan on one sample.
    ContactCheck(ContactCheckArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// Put this many samples in the training split and none elsewhere.
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CoarsenArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Coarsen a fixture graph (path, star, cycle) instead of a dataset.
    #[arg(long)]
    pub graph: Option<String>,
    #[arg(long)]
    pub method: Option<CoarsenMethod>,
    #[arg(long)]
    pub levels: Option<usize>,
    #[arg(long)]
    pub ratio: Option<Real>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Hierarchy file from `coarsen`; built from the config when absent.
    #[arg(long)]
    pub hierarchy: Option<PathBuf>,
    #[arg(long)]
    pub variant: Option<Variant>,
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub strategy: Option<Strategy>,
    /// Train without contact features.
    #[arg(long)]
    pub no_contact: bool,
    #[arg(long, value_parser = parse_hidden_init)]
    pub hidden_init: Option<HiddenInit>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr_start: Option<Real>,
    #[arg(long)]
    pub lr_end: Option<Real>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Continue from a checkpoint; `--epochs` may extend the run.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Stop once this many epochs are complete, leaving a resumable
    /// checkpoint. Not part of the configuration.
    #[arg(long)]
    pub stop_after: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Further checkpoints to evaluate into the same tables.
    #[arg(long, num_args = 1..)]
    pub compare: Vec<PathBuf>,
    #[arg(long)]
    pub split: Option<Split>,
    /// Include the all-zero displacement model.
    #[arg(long)]
    pub baseline: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 13)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ContactCheckArgs {
    /// Dataset to take the sample from; one is simulated when absent.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub split: Option<Split>,
    /// Sample index within the split.
    #[arg(long, default_value_t = 0)]
    pub index: usize,
}

fn parse_hidden_init(s: &str) -> std::result::Result<HiddenInit, String> {
    match s {
        "zero" => Ok(HiddenInit::Zero),
        "global-feature" | "global_feature" => Ok(HiddenInit::GlobalFeature),
        _ => Err(format!("unknown hidden init `{s}` (zero, global-feature)")),
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_entry() -> i32 {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> CliResult {
    let config = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    match cli.command {
        Command::GenData(a) => gen_data(config, a),
        Command::Coarsen(a) => coarsen(config, a),
        Command::Train(a) => train(config, a),
        Command::Evaluate(a) => evaluate_cmd(config, a, false),
        Command::Rollout(a) => evaluate_cmd(config, a, true),
        Command::Gradcheck(a) => gradcheck(a),
        Command::ContactCheck(a) => contact_check(config, a),
    }
}

/// Provenance record written into every output directory.
#[derive(Serialize)]
struct RunRecord<'a> {
    command: &'a str,
    config_hash: &'a str,
    seed: u64,
    precision: &'a str,
    config: &'a RunConfig,
}

fn write_record(dir: &Path, command: &str, config: &RunConfig, seed: u64) -> CliResult<String> {
    let hash = config.hash()?;
    write_json(
        &dir.join("run.json"),
        &RunRecord {
            command,
            config_hash: &hash,
            seed,
            precision: PRECISION,
            config,
        },
    )?;
    Ok(hash)
}

fn print_json(v: &serde_json::Value) {
    println!("{v}");
}

fn data_dir(config: &RunConfig, flag: Option<PathBuf>) -> PathBuf {
    flag.unwrap_or_else(|| config.output_root().join("data"))
}

fn gen_data(mut config: RunConfig, a: GenDataArgs) -> CliResult {
    if let Some(n) = a.samples {
        if n == 0 {
            return Err(Error::Config("--samples must be at least 1".into()).into());
        }
        config.data.train = n;
        config.data.val = 0;
        config.data.test = 0;
    }
    if let Some(s) = a.seed {
        config.data.seed = s;
    }
    let out = data_dir(&config, a.out);
    let ds = generate_dataset(&config.data)?;
    export_dataset(&ds, &out)?;
    let hash = write_record(&out, "gen-data", &config, config.data.seed)?;
    print_json(&json!({
        "command": "gen-data",
        "dir": out,
        "train": ds.train.len(),
        "val": ds.val.len(),
        "test": ds.test.len(),
        "dataset_hash": ds.config_hash,
        "config_hash": hash,
        "seed": config.data.seed,
    }));
    Ok(())
}

/// Hierarchy over a dataset's blank as described by the config.
pub fn build_hierarchy(config: &HierarchyConfig, ds: &Dataset) -> crate::Result<Hierarchy> {
    config.validate()?;
    let sample = ds
        .train
        .first()
        .or(ds.val.first())
        .or(ds.test.first())
        .ok_or(Error::Empty("dataset"))?;
    let positions = &sample.blank.positions;
    let h = match config.method {
        CoarsenMethod::Grid => {
            let o = &ds.config.oracle;
            grid_hierarchy(o.nx, o.ny, positions, config.levels, config.ratio)?
        }
        m => automated_hierarchy(&mesh_to_topology(&sample.blank)?, positions, config.levels, m, config.seed_node)?,
    };
    let report = validate_hierarchy(&h);
    if !report.is_ok() {
        return Err(Error::Graph(report.violations.join("; ")));
    }
    Ok(h)
}

fn coarsen(mut config: RunConfig, a: CoarsenArgs) -> CliResult {
    if let Some(m) = a.method {
        config.hierarchy.method = m;
    }
    if let Some(l) = a.levels {
        config.hierarchy.levels = l;
    }
    if let Some(r) = a.ratio {
        config.hierarchy.ratio = r;
    }
    config.hierarchy.validate()?;
    let hash = config.hash()?;
    if let Some(name) = a.graph {
        let (topology, positions) = fixture_graph(&name)?;
        let c = coarsen_once(config.hierarchy.method, &topology, &positions, config.hierarchy.seed_node)?;
        let coarse_x: Vec<Real> = (0..c.positions.rows()).map(|i| c.positions.get(i, 0)).collect();
        let edges: Vec<(usize, usize)> = c.topology.undirected().collect();
        let v = json!({
            "command": "coarsen",
            "graph": name,
            "method": config.hierarchy.method.to_string(),
            "fine_nodes": topology.n_nodes(),
            "coarse_nodes": c.topology.n_nodes(),
            "map": c.map,
            "coarse_edges": edges,
            "coarse_x": coarse_x,
            "config_hash": hash,
            "seed": config.hierarchy.seed_node,
        });
        if let Some(out) = a.out {
            write_json(&out, &v)?;
        }
        print_json(&v);
        return Ok(());
    }
    let ds = load_dataset(&data_dir(&config, a.data))?;
    let h = build_hierarchy(&config.hierarchy, &ds)?;
    let out = a.out.unwrap_or_else(|| config.output_root().join("hierarchy.json"));
    h.write(&out)?;
    print_json(&json!({
        "command": "coarsen",
        "file": out,
        "method": config.hierarchy.method.to_string(),
        "node_counts": h.node_counts(),
        "config_hash": hash,
        "seed": config.hierarchy.seed_node,
    }));
    Ok(())
}

fn log_line(record: &EpochRecord, hash: &str, seed: u64) -> String {
    json!({
        "epoch": record.epoch,
        "lr": record.lr,
        "train_loss": record.train_loss,
        "val_loss": record.val_loss,
        "config_hash": hash,
        "seed": seed,
    })
    .to_string()
}

fn train(mut config: RunConfig, a: TrainArgs) -> CliResult {
    if let Some(v) = a.variant {
        config.model.variant = v;
    }
    if let Some(p) = a.preset {
        config.model.preset = p;
    }
    let t = &mut config.train;
    if let Some(s) = a.strategy {
        t.strategy = s;
    }
    if a.no_contact {
        t.contact_enabled = false;
    }
    if let Some(h) = a.hidden_init {
        t.hidden_init = h;
    }
    if let Some(b) = a.batch_size {
        t.batch_size = b;
    }
    if let Some(e) = a.epochs {
        t.epochs = e;
    }
    if let Some(l) = a.lr_start {
        t.lr_start = l;
    }
    if let Some(l) = a.lr_end {
        t.lr_end = l;
    }
    if let Some(s) = a.seed {
        t.seed = s;
    }
    config.train.validate()?;
    let ds = load_dataset(&data_dir(&config, a.data))?;
    let mut trainer = match &a.resume {
        Some(path) => {
            let ck = Checkpoint::read(path)?;
            // The checkpoint's settings govern a resumed run.
            config.train = ck.meta.train.clone();
            if let Some(e) = a.epochs {
                config.train.epochs = e;
            }
            config.model.variant = ck.meta.model.variant;
            Trainer::resume(ck, a.epochs, &ds.train, &ds.val, &ds.config_hash)?
        }
        None => {
            let preset = config.preset()?;
            let variant = config.model.variant;
            let full = match &a.hierarchy {
                Some(p) => Hierarchy::read(p)?,
                None => build_hierarchy(&config.hierarchy, &ds)?,
            };
            let (hierarchy, levels) = if variant.hierarchical() {
                let depth = full.depth();
                (full, Some(depth))
            } else {
                (Hierarchy::single(full.finest().topology.clone(), full.finest().positions.clone())?, None)
            };
            let model = preset.model(variant, levels)?;
            let features = FeatureOptions {
                d_min: config.model.d_min,
                boundary_onehot: model.node_features == 6,
            };
            Trainer::new(model, hierarchy, features, config.train.clone(), &ds.train, &ds.val, &ds.config_hash)?
        }
    };
    let hash = config.hash()?;
    let seed = config.train.seed;
    let out = a.out.unwrap_or_else(|| {
        config
            .output_root()
            .join("train")
            .join(format!("{}-s{seed}-{hash}", config.model.variant))
    });
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    write_record(&out, "train", &config, seed)?;
    let log_path = out.join("log.jsonl");
    let ck_path = out.join("checkpoint.bin");
    // Earlier epochs are rewritten from the checkpoint's history so a
    // resumed log matches an uninterrupted one line for line.
    let mut log = File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    for r in &trainer.history {
        writeln!(log, "{}", log_line(r, &hash, seed)).map_err(|e| Error::io(&log_path, e))?;
    }
    let stop = a.stop_after.unwrap_or(usize::MAX).min(trainer.config.epochs);
    while trainer.epoch < stop {
        let r = trainer.run_epoch()?;
        let line = log_line(&r, &hash, seed);
        writeln!(log, "{line}").map_err(|e| Error::io(&log_path, e))?;
        println!("{line}");
        let tmp = out.join("checkpoint.bin.tmp");
        trainer.checkpoint().write(&tmp)?;
        fs::rename(&tmp, &ck_path).map_err(|e| Error::io(&ck_path, e))?;
    }
    if !ck_path.exists() {
        trainer.checkpoint().write(&ck_path)?;
    }
    let last = trainer.history.last();
    print_json(&json!({
        "command": "train",
        "dir": out,
        "checkpoint": ck_path,
        "epochs": trainer.epoch,
        "final_train_loss": last.map(|r| r.train_loss),
        "final_val_loss": last.and_then(|r| r.val_loss),
        "config_hash": hash,
        "seed": seed,
    }));
    Ok(())
}

fn unique_label(base: String, taken: &[Evaluation]) -> String {
    if !taken.iter().any(|e| e.variant == base) {
        return base;
    }
    (2..)
        .map(|k| format!("{base}#{k}"))
        .find(|l| !taken.iter().any(|e| &e.variant == l))
        .expect("unbounded labels")
}

fn evaluate_cmd(mut config: RunConfig, a: EvalArgs, positions: bool) -> CliResult {
    if let Some(s) = a.split {
        config.eval.split = s;
    }
    if a.baseline {
        config.eval.baseline = true;
    }
    let command = if positions { "rollout" } else { "evaluate" };
    let ds = load_dataset(&data_dir(&config, a.data))?;
    let samples = ds.split(config.eval.split);
    if samples.is_empty() {
        return Err(Error::Data(format!("the {} split of the dataset is empty", config.eval.split.name())).into());
    }
    let paths: Vec<&PathBuf> = std::iter::once(&a.checkpoint).chain(&a.compare).collect();
    let hash = config.hash()?;
    let out = a.out.unwrap_or_else(|| config.output_root().join(command).join(&hash));
    let mut evals: Vec<Evaluation> = Vec::new();
    let mut baseline_contexts = None;
    let mut seed = None;
    for path in paths {
        let ck = Checkpoint::read(path)?;
        seed.get_or_insert(ck.meta.train.seed);
        let s = ck.surrogate()?;
        let contexts = samples.iter().map(|x| s.context(x)).collect::<crate::Result<Vec<_>>>()?;
        let label = unique_label(ck.meta.model.variant.to_string(), &evals);
        let e = evaluate(&label, &mut SurrogateStepper::new(&s), &contexts)?;
        if baseline_contexts.is_none() {
            baseline_contexts = Some(contexts);
        }
        evals.push(e);
    }
    if config.eval.baseline {
        let ctx = baseline_contexts.expect("at least one checkpoint");
        let label = unique_label("zero".into(), &evals);
        evals.push(evaluate(&label, &mut ZeroModel, &ctx)?);
    }
    let seed = seed.unwrap_or(0);
    let meta = RunMetadata {
        config_hash: hash.clone(),
        seed,
        samples: samples.iter().map(|s| s.name.clone()).collect(),
    };
    report(&evals, &meta, &out)?;
    write_record(&out, command, &config, seed)?;
    if positions {
        for e in &evals {
            for r in &e.rollouts {
                let dir = out.join("positions").join(&e.variant).join(&r.sample);
                for (t, x) in r.positions.iter().enumerate() {
                    write_table(&dir.join(format!("t{t:02}.txt")), x)?;
                }
            }
        }
    }
    let summary: Vec<_> = evals
        .iter()
        .map(|e| json!({"variant": e.variant, "final_mee": e.final_mee(), "mee": e.mee}))
        .collect();
    print_json(&json!({
        "command": command,
        "dir": out,
        "split": config.eval.split.name(),
        "variants": summary,
        "config_hash": hash,
        "seed": seed,
    }));
    Ok(())
}

fn gradcheck(a: GradcheckArgs) -> CliResult {
    let r = gradcheck_tiny_rugnn(a.seed)?;
    let worst = r.worst.as_ref();
    let pass = r.max_rel_error() < GRADCHECK_TOL;
    print_json(&json!({
        "command": "gradcheck",
        "checked": r.checked,
        "max_rel_error": r.max_rel_error(),
        "worst_param": worst.map(|w| w.name.clone()),
        "tolerance": GRADCHECK_TOL,
        "pass": pass,
        "seed": a.seed,
    }));
    if pass {
        Ok(())
    } else {
        Err(CliError::CheckFailed(format!(
            "max relative gradient error {:e} exceeds {GRADCHECK_TOL:e}",
            r.max_rel_error()
        )))
    }
}

fn contact_check(config: RunConfig, a: ContactCheckArgs) -> CliResult {
    let sample = match &a.data {
        Some(dir) => {
            let ds = load_dataset(dir)?;
            let split = a.split.unwrap_or(Split::Train);
            let samples = ds.split(split);
            samples.get(a.index).cloned().ok_or(Error::Index {
                op: "contact-check sample",
                index: a.index,
                limit: samples.len(),
            })?
        }
        None => {
            let (r0, r1) = config.data.r_dome;
            let (f0, f1) = config.data.r_fillet;
            let p = DomeParams::new(0.5 * (r0 + r1), 0.5 * (f0 + f1))?;
            simulate_forming(&config.data.oracle, p, config.data.seed, "contact-check")?.sample
        }
    };
    let r = contact_check_sample(&sample)?;
    let pass = r.max_deviation < CONTACT_CHECK_TOL;
    print_json(&json!({
        "command": "contact-check",
        "sample": sample.name,
        "nodes": sample.n_nodes(),
        "timesteps": sample.positions.len(),
        "max_deviation": r.max_deviation,
        "element_mismatches": r.element_mismatches,
        "tolerance": CONTACT_CHECK_TOL,
        "pass": pass,
        "config_hash": config.hash()?,
        "seed": config.data.seed,
    }));
    if pass {
        Ok(())
    } else {
        Err(CliError::CheckFailed(format!(
            "contact distance deviation {:e} exceeds {CONTACT_CHECK_TOL:e}",
            r.max_deviation
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_the_default() {
        let c = RunConfig::from_toml("", Path::new("x.toml")).unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.preset().unwrap(), Preset::DomeAppxC);
    }

    #[test]
    fn unknown_keys_are_config_errors() {
        for text in ["bogus = 1", "[train]\nepoch = 3", "[data.oracle]\nnz = 4", "[model]\nvariant = \"XGNN\""] {
            let e = RunConfig::from_toml(text, Path::new("x.toml")).unwrap_err();
            assert_eq!(CliError::from(e).exit_code(), EXIT_CONFIG, "{text}");
        }
    }

    #[test]
    fn sections_parse() {
        let text = "output_root = \"o\"\n[data]\ntrain = 3\nval = 1\ntest = 1\n[data.oracle]\nnx = 7\nny = 7\n\
                    [hierarchy]\nmethod = \"bistride\"\nlevels = 2\n[model]\npreset = \"dome-best-7.3\"\nvariant = \"vanillaGNN\"\n\
                    [train]\nepochs = 4\nstrategy = \"autoregressive\"\nhidden_init = \"global_feature\"\n[eval]\nsplit = \"val\"\n";
        let c = RunConfig::from_toml(text, Path::new("x.toml")).unwrap();
        assert_eq!(c.data.oracle.nx, 7);
        assert_eq!(c.hierarchy.method, CoarsenMethod::Bistride);
        assert_eq!(c.model.variant, Variant::VanillaGnn);
        assert_eq!(c.preset().unwrap(), Preset::DomeBest);
        assert_eq!(c.train.strategy, Strategy::Autoregressive);
        assert_eq!(c.train.hidden_init, HiddenInit::GlobalFeature);
        assert_eq!(c.eval.split, Split::Val);
        assert_ne!(c.hash().unwrap(), RunConfig::default().hash().unwrap());
    }

    #[test]
    fn invalid_ratio_is_a_config_error() {
        let h = HierarchyConfig {
            ratio: 1.0,
            ..HierarchyConfig::default()
        };
        assert!(matches!(h.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn exit_codes_are_distinct() {
        let codes = [
            CliError::from(Error::Config(String::new())).exit_code(),
            CliError::from(Error::Data(String::new())).exit_code(),
            CliError::from(Error::NonFinite(String::new())).exit_code(),
            CliError::CheckFailed(String::new()).exit_code(),
        ];
        assert_eq!(codes, [EXIT_CONFIG, EXIT_DATA, EXIT_NUMERICAL, EXIT_CHECK_FAILED]);
    }
}
