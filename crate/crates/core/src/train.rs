//! Loss, Adam with geometric learning-rate decay, teacher-forcing and
//! autoregressive epochs, feature normalization and checkpoints.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Array, ParamEntry, ParamStore, Real, Tape, Var, PRECISION};
use crate::coarsen::Hierarchy;
use crate::error::{Error, Result};
use crate::meshgraph::TimestepGraph;
use crate::net::{Hidden, HiddenArrays, HiddenInit, Model, ModelConfig};
use crate::oracle::{derive_seed, FormingSample};
use crate::pipeline::{drive_rollout, FeatureOptions, SampleContext, Trajectory};

pub const ADAM_BETA1: Real = 0.9;
pub const ADAM_BETA2: Real = 0.999;
pub const ADAM_EPS: Real = 1e-8;
pub const STD_FLOOR: Real = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    #[default]
    TeacherForcing,
    Autoregressive,
}

impl std::str::FromStr for Strategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "teacher_forcing" | "teacher-forcing" => Ok(Self::TeacherForcing),
            "autoregressive" => Ok(Self::Autoregressive),
            _ => Err(Error::Config(format!(
                "unknown strategy `{s}` (teacher_forcing, autoregressive)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_start: Real,
    pub lr_end: Real,
    pub strategy: Strategy,
    pub contact_enabled: bool,
    pub hidden_init: HiddenInit,
    pub seed: u64,
    /// Must match the build's floating-point width.
    pub precision: String,
    /// Compute the validation rollout loss every this many epochs (and
    /// after the last one); 0 evaluates only after the last epoch.
    pub validate_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 1,
            lr_start: 1e-4,
            lr_end: 1e-6,
            strategy: Strategy::TeacherForcing,
            contact_enabled: true,
            hidden_init: HiddenInit::Zero,
            seed: 0,
            precision: PRECISION.to_string(),
            validate_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.lr_end > 0.0 && self.lr_start >= self.lr_end && self.lr_start.is_finite()) {
            return bad(format!(
                "learning rates need lr_start >= lr_end > 0, got {} and {}",
                self.lr_start, self.lr_end
            ));
        }
        if self.precision != PRECISION {
            return bad(format!(
                "precision `{}` requested but this build computes in {PRECISION}",
                self.precision
            ));
        }
        Ok(())
    }

    /// Copy the ablation flags into a model config.
    pub fn apply(&self, model: &mut ModelConfig) {
        model.contact = self.contact_enabled;
        model.hidden_init = self.hidden_init;
    }
}

/// Geometric interpolation from `lr_start` to `lr_end` over the epochs.
pub fn lr_at(epoch: usize, config: &TrainConfig) -> Real {
    if config.epochs <= 1 {
        return config.lr_start;
    }
    let frac = epoch.min(config.epochs - 1) as Real / (config.epochs - 1) as Real;
    config.lr_start * (config.lr_end / config.lr_start).powf(frac)
}

fn check_sequences(pred: &[Vec<Array>], truth: &[Vec<Array>]) -> Result<usize> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::shape(
            "mse_loss",
            format!("{} predicted and {} true sequences", pred.len(), truth.len()),
        ));
    }
    let n = pred[0].first().map(Array::rows).ok_or(Error::Empty("mse_loss sequence"))?;
    for (p, q) in pred.iter().zip(truth) {
        if p.len() != q.len() {
            return Err(Error::shape("mse_loss", format!("{} vs {} timesteps", p.len(), q.len())));
        }
        for (a, b) in p.iter().zip(q) {
            if a.shape() != b.shape() || a.rows() != n || a.cols() != 3 {
                return Err(Error::shape(
                    "mse_loss",
                    format!("{:?} vs {:?}, expected {n} x 3", a.shape(), b.shape()),
                ));
            }
        }
    }
    Ok(n)
}

/// Sum of squared errors over samples, intervals, nodes and components,
/// divided by `3 M N`.
pub fn mse_loss(pred: &[Vec<Array>], truth: &[Vec<Array>]) -> Result<Real> {
    let n = check_sequences(pred, truth)?;
    let mut sum = 0.0;
    for (p, q) in pred.iter().zip(truth) {
        for (a, b) in p.iter().zip(q) {
            sum += a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<Real>();
        }
    }
    Ok(sum / (3 * pred.len() * n) as Real)
}

/// One bias-corrected Adam update. Gradients are checked for finiteness
/// before any parameter changes.
pub fn adam_step(params: &mut ParamStore, grads: &BTreeMap<String, Array>, step: &mut u64, lr: Real) -> Result<()> {
    for (name, entry) in params.entries() {
        let g = grads
            .get(name)
            .ok_or_else(|| Error::Config(format!("no gradient for parameter {name}")))?;
        if g.shape() != entry.value.shape() {
            return Err(Error::shape("adam_step", format!("gradient of {name} has shape {:?}", g.shape())));
        }
        if !g.is_finite() {
            return Err(Error::NonFinite(format!("gradient of {name}")));
        }
    }
    *step += 1;
    let t = *step as i32;
    let c1 = 1.0 - ADAM_BETA1.powi(t);
    let c2 = 1.0 - ADAM_BETA2.powi(t);
    for (name, entry) in params.entries_mut() {
        let g = &grads[name];
        let ParamEntry { value, m, v } = entry;
        for (((p, mi), vi), gi) in value
            .data_mut()
            .iter_mut()
            .zip(m.data_mut())
            .zip(v.data_mut())
            .zip(g.data())
        {
            *mi = ADAM_BETA1 * *mi + (1.0 - ADAM_BETA1) * gi;
            *vi = ADAM_BETA2 * *vi + (1.0 - ADAM_BETA2) * gi * gi;
            *p -= lr * (*mi / c1) / ((*vi / c2).sqrt() + ADAM_EPS);
        }
    }
    Ok(())
}

/// Per-column mean and (floored) standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub mean: Vec<Real>,
    pub std: Vec<Real>,
}

impl ColumnStats {
    pub fn from_arrays(arrays: &[&Array]) -> Result<Self> {
        let cols = arrays.first().map(|a| a.cols()).ok_or(Error::Empty("normalization data"))?;
        if arrays.iter().any(|a| a.cols() != cols) {
            return Err(Error::shape("ColumnStats", "arrays differ in column count"));
        }
        let rows: usize = arrays.iter().map(|a| a.rows()).sum();
        if rows == 0 {
            return Err(Error::Empty("normalization data"));
        }
        let mut mean = vec![0.0; cols];
        for a in arrays {
            for r in 0..a.rows() {
                for (m, v) in mean.iter_mut().zip(a.row(r)) {
                    *m += v;
                }
            }
        }
        mean.iter_mut().for_each(|m| *m /= rows as Real);
        let mut var = vec![0.0; cols];
        for a in arrays {
            for r in 0..a.rows() {
                for ((s, v), m) in var.iter_mut().zip(a.row(r)).zip(&mean) {
                    *s += (v - m) * (v - m);
                }
            }
        }
        let std = var.iter().map(|s| (s / rows as Real).sqrt().max(STD_FLOOR)).collect();
        Ok(Self { mean, std })
    }

    fn check(&self, a: &Array) -> Result<()> {
        if a.cols() != self.mean.len() {
            return Err(Error::shape(
                "normalize",
                format!("{} columns, statistics cover {}", a.cols(), self.mean.len()),
            ));
        }
        Ok(())
    }

    pub fn normalize(&self, a: &Array) -> Result<Array> {
        self.check(a)?;
        let mut out = a.clone();
        for r in 0..out.rows() {
            for ((v, m), s) in out.row_mut(r).iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
        Ok(out)
    }

    pub fn denormalize(&self, a: &Array) -> Result<Array> {
        self.check(a)?;
        let mut out = a.clone();
        for r in 0..out.rows() {
            for ((v, m), s) in out.row_mut(r).iter_mut().zip(&self.mean).zip(&self.std) {
                *v = *v * s + m;
            }
        }
        Ok(out)
    }
}

/// Normalization statistics of every feature group, from the training
/// split's teacher-forcing graphs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub node: ColumnStats,
    pub contact: ColumnStats,
    pub edge: ColumnStats,
    pub coarse_edge: Option<ColumnStats>,
    pub global: ColumnStats,
    pub target: ColumnStats,
}

impl NormStats {
    pub fn compute(graphs: &[&TimestepGraph]) -> Result<Self> {
        let group = |f: fn(&TimestepGraph) -> &Array| {
            let arrays: Vec<&Array> = graphs.iter().map(|g| f(g)).collect();
            ColumnStats::from_arrays(&arrays)
        };
        let coarse: Vec<&Array> = graphs.iter().filter_map(|g| g.coarse_edge_feats.as_ref()).collect();
        let targets: Vec<&Array> = graphs.iter().filter_map(|g| g.target.as_ref()).collect();
        if targets.len() != graphs.len() {
            return Err(Error::Data("every training graph needs a target".into()));
        }
        Ok(Self {
            node: group(|g| &g.node_feats)?,
            contact: group(|g| &g.contact_feats)?,
            edge: group(|g| &g.edge_feats)?,
            coarse_edge: if coarse.is_empty() {
                None
            } else {
                Some(ColumnStats::from_arrays(&coarse)?)
            },
            global: group(|g| &g.global_feats)?,
            target: ColumnStats::from_arrays(&targets)?,
        })
    }

    pub fn normalize_graph(&self, g: &TimestepGraph) -> Result<TimestepGraph> {
        let coarse_edge_feats = match (&g.coarse_edge_feats, &self.coarse_edge) {
            (Some(a), Some(s)) => Some(s.normalize(a)?),
            (None, _) => None,
            (Some(_), None) => {
                return Err(Error::Data("coarse edge features present but not covered by the statistics".into()))
            }
        };
        Ok(TimestepGraph {
            node_feats: self.node.normalize(&g.node_feats)?,
            contact_feats: self.contact.normalize(&g.contact_feats)?,
            edge_feats: self.edge.normalize(&g.edge_feats)?,
            global_feats: self.global.normalize(&g.global_feats)?,
            coarse_edge_feats,
            target: g.target.as_ref().map(|t| self.target.normalize(t)).transpose()?,
        })
    }
}

/// Trained network with everything needed to run it on new samples.
#[derive(Debug, Clone)]
pub struct Surrogate {
    pub model: Model,
    pub params: ParamStore,
    pub stats: NormStats,
    pub features: FeatureOptions,
    pub hierarchy: Hierarchy,
}

impl Surrogate {
    pub fn context(&self, sample: &FormingSample) -> Result<SampleContext> {
        SampleContext::new(sample, &self.hierarchy, self.features)
    }

    /// Autoregressive rollout; also returns the normalized predictions.
    pub fn rollout(&self, ctx: &SampleContext) -> Result<(Trajectory, Vec<Array>)> {
        rollout_with(&self.model, &self.params, &self.stats, ctx)
    }
}

fn rollout_with(model: &Model, params: &ParamStore, stats: &NormStats, ctx: &SampleContext) -> Result<(Trajectory, Vec<Array>)> {
    let mut hidden = HiddenArrays::default();
    let mut normalized = Vec::with_capacity(ctx.intervals());
    let traj = drive_rollout(ctx, |_, g| {
        let (out, h) = model.predict(params, &stats.normalize_graph(g)?, &hidden)?;
        hidden = h;
        let d = stats.target.denormalize(&out)?;
        normalized.push(out);
        Ok(d)
    })?;
    Ok((traj, normalized))
}

/// Normalized ground-truth displacements of a sample.
fn normalized_targets(stats: &NormStats, ctx: &SampleContext) -> Result<Vec<Array>> {
    let x = ctx.truth();
    (0..ctx.intervals())
        .map(|t| stats.target.normalize(&x[t + 1].zip_map(&x[t], |a, b| a - b)?))
        .collect()
}

/// Autoregressive rollout loss over samples, in normalized target space.
pub fn rollout_loss(surrogate: &Surrogate, contexts: &[SampleContext]) -> Result<Real> {
    rollout_loss_parts(&surrogate.model, &surrogate.params, &surrogate.stats, contexts)
}

fn rollout_loss_parts(model: &Model, params: &ParamStore, stats: &NormStats, contexts: &[SampleContext]) -> Result<Real> {
    let mut pred = Vec::with_capacity(contexts.len());
    let mut truth = Vec::with_capacity(contexts.len());
    for ctx in contexts {
        pred.push(rollout_with(model, params, stats, ctx)?.1);
        truth.push(normalized_targets(stats, ctx)?);
    }
    mse_loss(&pred, &truth)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: Real,
    pub train_loss: Real,
    pub val_loss: Option<Real>,
}

struct TrainSample {
    ctx: SampleContext,
    /// Normalized teacher-forcing graphs with normalized targets.
    graphs: Vec<TimestepGraph>,
}

/// Training state: parameters, optimizer, shuffling stream and history.
pub struct Trainer {
    pub model: Model,
    pub params: ParamStore,
    pub stats: NormStats,
    pub config: TrainConfig,
    pub features: FeatureOptions,
    pub hierarchy: Hierarchy,
    pub adam_step: u64,
    /// Completed epochs.
    pub epoch: usize,
    pub history: Vec<EpochRecord>,
    pub data_hash: String,
    rng: ChaCha8Rng,
    train: Vec<TrainSample>,
    val: Vec<SampleContext>,
}

fn contexts(samples: &[FormingSample], h: &Hierarchy, f: FeatureOptions) -> Result<Vec<SampleContext>> {
    samples.iter().map(|s| SampleContext::new(s, h, f)).collect()
}

impl Trainer {
    pub fn new(
        mut model_config: ModelConfig,
        hierarchy: Hierarchy,
        features: FeatureOptions,
        config: TrainConfig,
        train: &[FormingSample],
        val: &[FormingSample],
        data_hash: &str,
    ) -> Result<Self> {
        config.validate()?;
        config.apply(&mut model_config);
        if model_config.node_features != features.schema().node_width() {
            return Err(Error::Config(format!(
                "model expects {} node features, the feature options give {}",
                model_config.node_features,
                features.schema().node_width()
            )));
        }
        if train.is_empty() {
            return Err(Error::Empty("training split"));
        }
        let model = Model::new(model_config, &hierarchy)?;
        let params = model.init_params(config.seed)?;
        let ctxs = contexts(train, &hierarchy, features)?;
        let raw: Vec<Vec<TimestepGraph>> = ctxs.iter().map(|c| c.teacher_graphs()).collect::<Result<_>>()?;
        let flat: Vec<&TimestepGraph> = raw.iter().flatten().collect();
        let stats = NormStats::compute(&flat)?;
        let train = ctxs
            .into_iter()
            .zip(raw)
            .map(|(ctx, gs)| {
                let graphs = gs.iter().map(|g| stats.normalize_graph(g)).collect::<Result<_>>()?;
                Ok(TrainSample { ctx, graphs })
            })
            .collect::<Result<_>>()?;
        let val = contexts(val, &hierarchy, features)?;
        Ok(Self {
            model,
            params,
            stats,
            rng: ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 0x5eed, 1)),
            config,
            features,
            hierarchy,
            adam_step: 0,
            epoch: 0,
            history: Vec::new(),
            data_hash: data_hash.to_string(),
            train,
            val,
        })
    }

    pub fn n_train(&self) -> usize {
        self.train.len()
    }

    pub fn surrogate(&self) -> Surrogate {
        Surrogate {
            model: self.model.clone(),
            params: self.params.clone(),
            stats: self.stats.clone(),
            features: self.features,
            hierarchy: self.hierarchy.clone(),
        }
    }

    /// Sum of squared normalized errors of one teacher-forced sample.
    fn teacher_forcing_terms(&self, tape: &mut Tape, p: &crate::autodiff::Bound, s: &TrainSample) -> Result<Vec<Var>> {
        let mut hidden = Hidden::start();
        let mut terms = Vec::with_capacity(s.graphs.len());
        for g in &s.graphs {
            let (out, h) = self.model.forward(tape, p, g, &hidden)?;
            hidden = h;
            let target = g.target.clone().ok_or_else(|| Error::Data("teacher graph without target".into()))?;
            let target = tape.constant(target);
            let diff = tape.sub(out, target)?;
            terms.push(tape.sum_squares(diff)?);
        }
        Ok(terms)
    }

    /// Feeds the model its own predictions; fed-back positions enter the
    /// next step's features as constants, gradients flow through the
    /// hidden states and every step's output.
    fn autoregressive_terms(&self, tape: &mut Tape, p: &crate::autodiff::Bound, s: &TrainSample) -> Result<Vec<Var>> {
        let mut hidden = Hidden::start();
        let mut terms = Vec::with_capacity(s.graphs.len());
        drive_rollout(&s.ctx, |t, g| {
            let gn = self.stats.normalize_graph(g)?;
            let (out, h) = self.model.forward(tape, p, &gn, &hidden)?;
            hidden = h;
            let target = s.graphs[t]
                .target
                .clone()
                .ok_or_else(|| Error::Data("teacher graph without target".into()))?;
            let target = tape.constant(target);
            let diff = tape.sub(out, target)?;
            terms.push(tape.sum_squares(diff)?);
            self.stats.target.denormalize(tape.value(out))
        })?;
        Ok(terms)
    }

    /// One pass over the shuffled training split with one optimizer step
    /// per batch. The reported loss uses the pre-update predictions.
    pub fn run_epoch(&mut self) -> Result<EpochRecord> {
        let lr = lr_at(self.epoch, &self.config);
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        order.shuffle(&mut self.rng);
        let n = self.train[0].ctx.n_nodes();
        let mut total = 0.0;
        for batch in order.chunks(self.config.batch_size) {
            let mut tape = Tape::new();
            let p = self.params.bind(&mut tape);
            let mut terms = Vec::new();
            for &i in batch {
                let s = &self.train[i];
                terms.extend(match self.config.strategy {
                    Strategy::TeacherForcing => self.teacher_forcing_terms(&mut tape, &p, s)?,
                    Strategy::Autoregressive => self.autoregressive_terms(&mut tape, &p, s)?,
                });
            }
            let mut sum = terms[0];
            for &t in &terms[1..] {
                sum = tape.add(sum, t)?;
            }
            let loss = tape.scale(sum, 1.0 / (3 * batch.len() * n) as Real)?;
            let value = tape.value(sum).data()[0];
            if !value.is_finite() {
                return Err(Error::NonFinite(format!("training loss in epoch {}", self.epoch)));
            }
            total += value;
            let grads = tape.backward(loss)?;
            adam_step(&mut self.params, &p.gradients(&grads), &mut self.adam_step, lr)?;
        }
        self.epoch += 1;
        let every = self.config.validate_every;
        let due = self.epoch == self.config.epochs || (every > 0 && self.epoch % every == 0);
        let val_loss = if due && !self.val.is_empty() {
            Some(self.validation_loss()?)
        } else {
            None
        };
        let record = EpochRecord {
            epoch: self.epoch - 1,
            lr,
            train_loss: total / (3 * self.train.len() * n) as Real,
            val_loss,
        };
        self.history.push(record.clone());
        Ok(record)
    }

    /// Runs the remaining epochs, calling `on_epoch` after each one.
    pub fn run(&mut self, mut on_epoch: impl FnMut(&Trainer, &EpochRecord) -> Result<()>) -> Result<()> {
        while self.epoch < self.config.epochs {
            let record = self.run_epoch()?;
            on_epoch(self, &record)?;
        }
        Ok(())
    }

    pub fn validation_loss(&self) -> Result<Real> {
        if self.val.is_empty() {
            return Err(Error::Empty("validation split"));
        }
        rollout_loss_parts(&self.model, &self.params, &self.stats, &self.val)
    }

    /// Rollout loss over the training samples.
    pub fn train_rollout_loss(&self) -> Result<Real> {
        let ctxs: Vec<SampleContext> = self.train.iter().map(|s| s.ctx.clone()).collect();
        rollout_loss_parts(&self.model, &self.params, &self.stats, &ctxs)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            meta: CheckpointMeta {
                format: CHECKPOINT_FORMAT,
                precision: PRECISION.to_string(),
                model: self.model.config().clone(),
                train: self.config.clone(),
                features: self.features,
                stats: self.stats.clone(),
                hierarchy: self.hierarchy.clone(),
                adam_step: self.adam_step,
                epoch: self.epoch,
                rng: self.rng.clone(),
                history: self.history.clone(),
                data_hash: self.data_hash.clone(),
                params: param_layout(&self.params),
            },
            params: self.params.clone(),
        }
    }

    /// Continue from a checkpoint. `epochs` may extend the run; every other
    /// training setting comes from the checkpoint.
    pub fn resume(ck: Checkpoint, epochs: Option<usize>, train: &[FormingSample], val: &[FormingSample], data_hash: &str) -> Result<Self> {
        let m = ck.meta;
        if m.data_hash != data_hash {
            return Err(Error::Data(format!(
                "checkpoint was trained on dataset {}, got {data_hash}",
                m.data_hash
            )));
        }
        let mut config = m.train;
        if let Some(e) = epochs {
            config.epochs = e;
        }
        config.validate()?;
        let model = Model::new(m.model, &m.hierarchy)?;
        model.check_params(&ck.params)?;
        let ctxs = contexts(train, &m.hierarchy, m.features)?;
        let train = ctxs
            .into_iter()
            .map(|ctx| {
                let graphs = ctx
                    .teacher_graphs()?
                    .iter()
                    .map(|g| m.stats.normalize_graph(g))
                    .collect::<Result<_>>()?;
                Ok(TrainSample { ctx, graphs })
            })
            .collect::<Result<Vec<_>>>()?;
        if train.is_empty() {
            return Err(Error::Empty("training split"));
        }
        let val = contexts(val, &m.hierarchy, m.features)?;
        Ok(Self {
            model,
            params: ck.params,
            stats: m.stats,
            config,
            features: m.features,
            hierarchy: m.hierarchy,
            adam_step: m.adam_step,
            epoch: m.epoch,
            history: m.history,
            data_hash: m.data_hash,
            rng: m.rng,
            train,
            val,
        })
    }
}

pub const CHECKPOINT_FORMAT: u32 = 1;
const CHECKPOINT_MAGIC: &[u8; 8] = b"RUGNNCK1";

/// Everything except the parameter arrays, stored as JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format: u32,
    pub precision: String,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub features: FeatureOptions,
    pub stats: NormStats,
    pub hierarchy: Hierarchy,
    pub adam_step: u64,
    pub epoch: usize,
    pub rng: ChaCha8Rng,
    pub history: Vec<EpochRecord>,
    pub data_hash: String,
    /// Parameter names and shapes in storage order.
    pub params: Vec<(String, Vec<usize>)>,
}

fn param_layout(p: &ParamStore) -> Vec<(String, Vec<usize>)> {
    p.entries().iter().map(|(k, e)| (k.clone(), e.value.shape().to_vec())).collect()
}

/// Checkpoint file layout: 8-byte magic, little-endian u64 length of the
/// JSON metadata, the metadata, then for every parameter in name order its
/// value, first and second Adam moments as little-endian floats of the
/// build's precision.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub params: ParamStore,
}

impl Checkpoint {
    pub fn surrogate(&self) -> Result<Surrogate> {
        let model = Model::new(self.meta.model.clone(), &self.meta.hierarchy)?;
        model.check_params(&self.params)?;
        Ok(Surrogate {
            model,
            params: self.params.clone(),
            stats: self.meta.stats.clone(),
            features: self.meta.features,
            hierarchy: self.meta.hierarchy.clone(),
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut meta = self.meta.clone();
        meta.params = param_layout(&self.params);
        let json = serde_json::to_vec(&meta).map_err(|e| Error::Data(format!("checkpoint metadata: {e}")))?;
        let mut out = Vec::with_capacity(16 + json.len() + self.params.scalar_count() * 3 * std::mem::size_of::<Real>());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for e in self.params.entries().values() {
            for a in [&e.value, &e.m, &e.v] {
                for v in a.data() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let bad = |detail: String| Error::Parse {
            path: origin.to_path_buf(),
            detail,
        };
        let mut r = bytes;
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| bad("truncated header".into()))?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(bad("not a checkpoint file".into()));
        }
        let mut len = [0u8; 8];
        r.read_exact(&mut len).map_err(|_| bad("truncated header".into()))?;
        let len = u64::from_le_bytes(len) as usize;
        if r.len() < len {
            return Err(bad("truncated metadata".into()));
        }
        let meta: CheckpointMeta = serde_json::from_slice(&r[..len]).map_err(|e| bad(e.to_string()))?;
        r = &r[len..];
        if meta.precision != PRECISION {
            return Err(Error::Config(format!(
                "checkpoint stores {} values but this build computes in {PRECISION}",
                meta.precision
            )));
        }
        const W: usize = std::mem::size_of::<Real>();
        let mut read_array = |shape: &[usize]| -> Result<Array> {
            let n: usize = shape.iter().product();
            if r.len() < n * W {
                return Err(bad("truncated parameter data".into()));
            }
            let data = r[..n * W]
                .chunks_exact(W)
                .map(|c| Real::from_le_bytes(c.try_into().expect("chunk width")))
                .collect();
            r = &r[n * W..];
            Array::new(shape.to_vec(), data)
        };
        let mut entries = BTreeMap::new();
        for (name, shape) in &meta.params {
            let value = read_array(shape)?;
            let m = read_array(shape)?;
            let v = read_array(shape)?;
            entries.insert(name.clone(), ParamEntry { value, m, v });
        }
        if !r.is_empty() {
            return Err(bad(format!("{} trailing bytes", r.len())));
        }
        Ok(Self {
            meta,
            params: ParamStore::from_entries(entries),
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}
