//! Autoregressive rollouts, positional error metrics and report files.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Array, Real};
use crate::error::{Error, Result};
use crate::meshgraph::TimestepGraph;
use crate::net::HiddenArrays;
use crate::persist::{write_json, write_text};
use crate::pipeline::{drive_rollout, SampleContext};
use crate::train::Surrogate;

pub mod alloc;

/// Anything that maps one timestep's features to a physical displacement.
pub trait StepModel {
    /// Forget any state carried between timesteps.
    fn reset(&mut self);
    fn step(&mut self, ctx: &SampleContext, t: usize, g: &TimestepGraph) -> Result<Array>;
}

/// Predicts no motion at all.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroModel;

impl StepModel for ZeroModel {
    fn reset(&mut self) {}

    fn step(&mut self, _: &SampleContext, _: usize, g: &TimestepGraph) -> Result<Array> {
        Ok(Array::zeros(g.n_nodes(), 3))
    }
}

/// Replays the ground-truth displacements of the sample being rolled out.
#[derive(Debug, Clone, Copy, Default)]
pub struct OracleModel;

impl StepModel for OracleModel {
    fn reset(&mut self) {}

    fn step(&mut self, ctx: &SampleContext, t: usize, _: &TimestepGraph) -> Result<Array> {
        let x = ctx.truth();
        x[t + 1].zip_map(&x[t], |a, b| a - b)
    }
}

/// A trained surrogate with its hidden state.
#[derive(Debug, Clone)]
pub struct SurrogateStepper<'a> {
    surrogate: &'a Surrogate,
    hidden: HiddenArrays,
}

impl<'a> SurrogateStepper<'a> {
    pub fn new(surrogate: &'a Surrogate) -> Self {
        Self {
            surrogate,
            hidden: HiddenArrays::default(),
        }
    }
}

impl StepModel for SurrogateStepper<'_> {
    fn reset(&mut self) {
        self.hidden = HiddenArrays::default();
    }

    fn step(&mut self, _: &SampleContext, _: usize, g: &TimestepGraph) -> Result<Array> {
        let s = self.surrogate;
        let (out, h) = s.model.predict(&s.params, &s.stats.normalize_graph(g)?, &self.hidden)?;
        self.hidden = h;
        s.stats.target.denormalize(&out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutResult {
    pub sample: String,
    /// `T + 1` arrays; index 0 is the undeformed blank.
    pub positions: Vec<Array>,
    pub displacements: Vec<Array>,
    /// Mean Euclidean node error at `t = 1..=T`.
    pub mee: Vec<Real>,
    /// Euclidean error of every node at the final timestep.
    pub node_error: Vec<Real>,
    pub wall_time_s: Real,
    /// Heap high-water mark above the level at rollout start, in bytes.
    pub peak_bytes: u64,
}

/// Rolls `model` forward over one sample from its undeformed blank.
pub fn rollout(model: &mut dyn StepModel, ctx: &SampleContext) -> Result<RolloutResult> {
    let start = Instant::now();
    let mem = alloc::PeakScope::start();
    model.reset();
    let traj = drive_rollout(ctx, |t, g| model.step(ctx, t, g))?;
    let mut peak_bytes = mem.peak_bytes();
    let truth = ctx.truth();
    let mee = (1..traj.positions.len())
        .map(|t| mean_error(&traj.positions[t], &truth[t]))
        .collect::<Result<Vec<_>>>()?;
    let last = traj.positions.len() - 1;
    let node_error = node_errors(&traj.positions[last], &truth[last])?;
    if peak_bytes == 0 {
        // No tracking allocator installed: count the trajectory arrays.
        peak_bytes = traj
            .positions
            .iter()
            .chain(&traj.displacements)
            .map(|a| (a.len() * std::mem::size_of::<Real>()) as u64)
            .sum();
    }
    Ok(RolloutResult {
        sample: ctx.sample.name.clone(),
        positions: traj.positions,
        displacements: traj.displacements,
        mee,
        node_error,
        wall_time_s: start.elapsed().as_secs_f64() as Real,
        peak_bytes,
    })
}

fn check_pair(pred: &Array, truth: &Array) -> Result<()> {
    if pred.shape() != truth.shape() || pred.cols() != 3 {
        return Err(Error::shape(
            "mee",
            format!("{:?} vs {:?}, expected matching N x 3", pred.shape(), truth.shape()),
        ));
    }
    Ok(())
}

/// Euclidean distance of every node between two position arrays.
pub fn node_errors(pred: &Array, truth: &Array) -> Result<Vec<Real>> {
    check_pair(pred, truth)?;
    Ok((0..pred.rows())
        .map(|i| {
            let (a, b) = (pred.row(i), truth.row(i));
            a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<Real>().sqrt()
        })
        .collect())
}

fn mean_error(pred: &Array, truth: &Array) -> Result<Real> {
    let e = node_errors(pred, truth)?;
    if e.is_empty() {
        return Err(Error::Empty("mee"));
    }
    Ok(e.iter().sum::<Real>() / e.len() as Real)
}

/// Mean Euclidean error at timestep `t` over `M` samples of `N` nodes:
/// `(1 / MN) sum_m sum_n |pred - truth|`. Both inputs hold one `T + 1`
/// position sequence per sample.
pub fn mee(pred: &[Vec<Array>], truth: &[Vec<Array>], t: usize) -> Result<Real> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::shape(
            "mee",
            format!("{} predicted and {} true sequences", pred.len(), truth.len()),
        ));
    }
    let mut sum = 0.0;
    let mut count = 0;
    for (p, q) in pred.iter().zip(truth) {
        let steps = p.len().min(q.len());
        if t == 0 || t >= steps || p.len() != q.len() {
            return Err(Error::Index {
                op: "mee",
                index: t,
                limit: steps,
            });
        }
        let e = node_errors(&p[t], &q[t])?;
        count += e.len();
        sum += e.iter().sum::<Real>();
    }
    if count == 0 {
        return Err(Error::Empty("mee"));
    }
    Ok(sum / count as Real)
}

/// One model's rollouts over a set of samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub variant: String,
    /// MEE over all samples at `t = 1..=T`.
    pub mee: Vec<Real>,
    /// Final-timestep error per node, averaged over samples.
    pub node_error: Vec<Real>,
    pub wall_time_s: Real,
    pub peak_bytes: u64,
    pub rollouts: Vec<RolloutResult>,
}

impl Evaluation {
    pub fn final_mee(&self) -> Real {
        self.mee.last().copied().unwrap_or(0.0)
    }
}

pub fn evaluate(variant: &str, model: &mut dyn StepModel, contexts: &[SampleContext]) -> Result<Evaluation> {
    if contexts.is_empty() {
        return Err(Error::Empty("evaluation samples"));
    }
    let rollouts = contexts.iter().map(|c| rollout(model, c)).collect::<Result<Vec<_>>>()?;
    let pred: Vec<Vec<Array>> = rollouts.iter().map(|r| r.positions.clone()).collect();
    let truth: Vec<Vec<Array>> = contexts.iter().map(|c| c.truth().to_vec()).collect();
    let steps = pred[0].len();
    let mee = (1..steps).map(|t| mee(&pred, &truth, t)).collect::<Result<Vec<_>>>()?;
    let n = rollouts[0].node_error.len();
    if rollouts.iter().any(|r| r.node_error.len() != n) {
        return Err(Error::Data("evaluation samples differ in node count".into()));
    }
    let node_error = (0..n)
        .map(|i| rollouts.iter().map(|r| r.node_error[i]).sum::<Real>() / rollouts.len() as Real)
        .collect();
    Ok(Evaluation {
        variant: variant.to_string(),
        mee,
        node_error,
        wall_time_s: rollouts.iter().map(|r| r.wall_time_s).sum(),
        peak_bytes: rollouts.iter().map(|r| r.peak_bytes).max().unwrap_or(0),
        rollouts,
    })
}

/// Provenance written next to every report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub config_hash: String,
    pub seed: u64,
    pub samples: Vec<String>,
}

#[derive(Serialize)]
struct MetadataFile<'a> {
    config_hash: &'a str,
    seed: u64,
    samples: &'a [String],
    variants: Vec<VariantCost<'a>>,
}

#[derive(Serialize)]
struct VariantCost<'a> {
    variant: &'a str,
    wall_time_s: Real,
    peak_bytes: u64,
}

pub const MEE_FILE: &str = "mee.csv";
pub const NODE_ERROR_FILE: &str = "node_error.csv";
pub const METADATA_FILE: &str = "metadata.json";

/// Per-timestep MEE table with one row per variant and timestep.
pub fn mee_table(evals: &[Evaluation]) -> String {
    let mut s = String::from("variant,timestep,mee\n");
    for e in evals {
        for (k, v) in e.mee.iter().enumerate() {
            let _ = writeln!(s, "{},{},{}", e.variant, k + 1, v);
        }
    }
    s
}

/// Final-timestep error field keyed by node index, one column per variant.
pub fn node_error_table(evals: &[Evaluation]) -> Result<String> {
    let n = evals.first().map(|e| e.node_error.len()).ok_or(Error::Empty("report"))?;
    if evals.iter().any(|e| e.node_error.len() != n) {
        return Err(Error::Data("variants were evaluated on different meshes".into()));
    }
    let mut s = String::from("node");
    for e in evals {
        let _ = write!(s, ",{}", e.variant);
    }
    s.push('\n');
    for i in 0..n {
        let _ = write!(s, "{i}");
        for e in evals {
            let _ = write!(s, ",{}", e.node_error[i]);
        }
        s.push('\n');
    }
    Ok(s)
}

/// Writes the MEE table, the node error field and the run metadata into
/// `dir`. Only the metadata holds timings.
pub fn report(evals: &[Evaluation], meta: &RunMetadata, dir: &Path) -> Result<()> {
    if evals.is_empty() {
        return Err(Error::Empty("report"));
    }
    let nodes = node_error_table(evals)?;
    write_text(&dir.join(MEE_FILE), &mee_table(evals))?;
    write_text(&dir.join(NODE_ERROR_FILE), &nodes)?;
    write_json(
        &dir.join(METADATA_FILE),
        &MetadataFile {
            config_hash: &meta.config_hash,
            seed: meta.seed,
            samples: &meta.samples,
            variants: evals
                .iter()
                .map(|e| VariantCost {
                    variant: &e.variant,
                    wall_time_s: e.wall_time_s,
                    peak_bytes: e.peak_bytes,
                })
                .collect(),
        },
    )
}
