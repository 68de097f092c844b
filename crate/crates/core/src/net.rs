//! Encoder, hierarchical recurrent processor and decoder.
//!
//! One forward call maps the (normalized) features of one timestep to a
//! normalized displacement prediction and threads the per-edge hidden
//! states of the recurrent processor blocks to the next timestep.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{
    gru_cell, mlp3, Array, Bound, GruCell, Init, Linear, Mlp3, ParamSpec, ParamStore, Tape, Var,
    LEAKY_SLOPE,
};
use crate::coarsen::Hierarchy;
use crate::error::{Error, Result};
use crate::meshgraph::{TimestepGraph, CONTACT_FEATURES, EDGE_FEATURES, GLOBAL_FEATURES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "vanillaGNN", alias = "vanillagnn", alias = "vanilla")]
    VanillaGnn,
    #[serde(rename = "RGNN", alias = "rgnn")]
    Rgnn,
    #[serde(rename = "UGNN", alias = "ugnn")]
    Ugnn,
    #[serde(rename = "RUGNN", alias = "rugnn")]
    Rugnn,
}

impl Variant {
    pub fn recurrent(self) -> bool {
        matches!(self, Self::Rgnn | Self::Rugnn)
    }

    pub fn hierarchical(self) -> bool {
        matches!(self, Self::Ugnn | Self::Rugnn)
    }

    pub const ALL: [Variant; 4] = [Self::VanillaGnn, Self::Rgnn, Self::Ugnn, Self::Rugnn];
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::VanillaGnn => "vanillaGNN",
            Self::Rgnn => "RGNN",
            Self::Ugnn => "UGNN",
            Self::Rugnn => "RUGNN",
        })
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "vanillagnn" | "vanilla" => Ok(Self::VanillaGnn),
            "rgnn" => Ok(Self::Rgnn),
            "ugnn" => Ok(Self::Ugnn),
            "rugnn" => Ok(Self::Rugnn),
            _ => Err(Error::Config(format!(
                "unknown variant `{s}` (vanillaGNN, RGNN, UGNN, RUGNN)"
            ))),
        }
    }
}

/// How recurrent hidden states start at `t = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HiddenInit {
    #[default]
    Zero,
    /// Tile the encoded global latent across the block width on every edge.
    GlobalFeature,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: Variant,
    /// Latent width per hierarchy level, finest first.
    pub widths: Vec<usize>,
    /// Message-passing layers in blocks 1, 2 and 3. Single-level variants
    /// use only the middle entry.
    pub layers: [usize; 3],
    pub global_width: usize,
    /// Node input width: 6 with boundary flags, 3 without.
    pub node_features: usize,
    /// When false, contact inputs are zeros and the decoder's contact
    /// input is zeroed; parameter shapes are unchanged.
    pub contact: bool,
    pub hidden_init: HiddenInit,
    /// Layer normalization after the decoder's last layer.
    pub decoder_layer_norm: bool,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.widths.is_empty() || self.widths.contains(&0) {
            return bad(format!("latent widths must be non-empty and positive, got {:?}", self.widths));
        }
        if self.global_width == 0 {
            return bad("global latent width must be positive".into());
        }
        if !(self.node_features == 6 || self.node_features == 3) {
            return bad(format!("node feature width must be 6 or 3, got {}", self.node_features));
        }
        if self.layers[1] == 0 {
            return bad("the middle processor block needs at least one layer".into());
        }
        if !self.variant.hierarchical() {
            if self.widths.len() != 1 {
                return bad(format!("{} runs on a single level, got {} widths", self.variant, self.widths.len()));
            }
            if self.layers[0] != 0 || self.layers[2] != 0 {
                return bad(format!("{} has one processor block; set layers to [0, L, 0]", self.variant));
            }
        }
        if self.hidden_init == HiddenInit::GlobalFeature && !self.variant.recurrent() {
            return bad(format!("{} has no hidden state to initialize", self.variant));
        }
        Ok(())
    }

    pub fn levels(&self) -> usize {
        self.widths.len()
    }
}

/// Named architecture presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    DomeAppxC,
    DomeBest,
    BulkheadAppxE,
}

impl Preset {
    pub const NAMES: [&'static str; 3] = ["dome-appxC", "dome-best-7.3", "bulkhead-appxE"];

    pub fn name(self) -> &'static str {
        match self {
            Self::DomeAppxC => "dome-appxC",
            Self::DomeBest => "dome-best-7.3",
            Self::BulkheadAppxE => "bulkhead-appxE",
        }
    }

    pub fn level_widths(self) -> Vec<usize> {
        match self {
            Self::DomeAppxC | Self::DomeBest => vec![32, 32, 64, 128],
            Self::BulkheadAppxE => vec![32, 32, 64, 128, 128],
        }
    }

    pub fn block_layers(self) -> [usize; 3] {
        match self {
            Self::DomeAppxC | Self::BulkheadAppxE => [2, 10, 2],
            Self::DomeBest => [1, 20, 1],
        }
    }

    /// Model config for `variant`; hierarchical variants keep the first
    /// `levels` level widths (all of them when `None`).
    pub fn model(self, variant: Variant, levels: Option<usize>) -> Result<ModelConfig> {
        let node_features = match self {
            Self::BulkheadAppxE => 3,
            _ => 6,
        };
        let (widths, layers) = if variant.hierarchical() {
            let all = self.level_widths();
            let k = levels.unwrap_or(all.len());
            if k == 0 || k > all.len() {
                return Err(Error::Config(format!(
                    "preset {} defines {} levels, requested {k}",
                    self.name(),
                    all.len()
                )));
            }
            (all[..k].to_vec(), self.block_layers())
        } else {
            (vec![128], [0, 10, 0])
        };
        Ok(ModelConfig {
            variant,
            widths,
            layers,
            global_width: 16,
            node_features,
            contact: true,
            hidden_init: HiddenInit::Zero,
            decoder_layer_norm: false,
        })
    }
}

impl std::str::FromStr for Preset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dome-appxC" => Ok(Self::DomeAppxC),
            "dome-best-7.3" => Ok(Self::DomeBest),
            "bulkhead-appxE" => Ok(Self::BulkheadAppxE),
            other => Err(Error::Config(format!(
                "unknown preset `{other}` ({})",
                Self::NAMES.join(", ")
            ))),
        }
    }
}

/// One message-passing layer: edge MLP, optional edge GRU, node MLP.
#[derive(Debug, Clone)]
pub struct RgpLayer {
    pub edge: Mlp3,
    pub gru: Option<GruCell>,
    pub node: Mlp3,
}

impl RgpLayer {
    pub fn new(prefix: &str, width: usize, global: usize, recurrent: bool, specs: &mut Vec<ParamSpec>) -> Self {
        Self {
            edge: Mlp3::new(&format!("{prefix}.edge"), 3 * width + global, width, width, true, specs),
            gru: recurrent.then(|| GruCell::new(&format!("{prefix}.gru"), width, width, specs)),
            node: Mlp3::new(&format!("{prefix}.node"), 2 * width + global, width, width, true, specs),
        }
    }
}

/// Directed edge index arrays of one graph.
#[derive(Debug, Clone)]
pub struct EdgeIndex {
    pub sources: Arc<[usize]>,
    pub targets: Arc<[usize]>,
    pub n_nodes: usize,
}

impl EdgeIndex {
    pub fn n_edges(&self) -> usize {
        self.sources.len()
    }
}

/// One processor layer applied to node latents `v`, the block's edge
/// latents `e`, the per-edge broadcast global latent `u_e` and per-node
/// `u_v`. Returns the updated node latents and hidden edge states.
#[allow(clippy::too_many_arguments)]
pub fn rgp_layer(
    tape: &mut Tape,
    p: &Bound,
    layer: &RgpLayer,
    graph: &EdgeIndex,
    v: Var,
    e: Var,
    u_e: Var,
    u_v: Var,
    h: Option<Var>,
) -> Result<(Var, Var)> {
    let vi = tape.gather_rows(v, graph.sources.clone())?;
    let vj = tape.gather_rows(v, graph.targets.clone())?;
    let edge_in = tape.concat(&[vi, vj, e, u_e])?;
    let e_new = mlp3(tape, p, &layer.edge, edge_in)?;
    let h_new = match (&layer.gru, h) {
        (Some(cell), Some(h)) => gru_cell(tape, p, cell, e_new, h)?,
        (Some(_), None) => return Err(Error::shape("rgp_layer", "recurrent layer without hidden state")),
        (None, _) => e_new,
    };
    let agg = tape.segment_sum(h_new, graph.targets.clone(), graph.n_nodes)?;
    let node_in = tape.concat(&[agg, v, u_v])?;
    let v_new = mlp3(tape, p, &layer.node, node_in)?;
    Ok((v_new, h_new))
}

/// Shared arithmetic of both resampling directions: gather source rows per
/// inter-level edge, scale by the per-edge gain, sum at targets, project.
#[allow(clippy::too_many_arguments)]
fn resample(
    tape: &mut Tape,
    source: Var,
    src_index: Arc<[usize]>,
    dst_index: Arc<[usize]>,
    n_out: usize,
    gain: Var,
    proj: Var,
    bias: Var,
) -> Result<Var> {
    let g = tape.value(gain);
    let s = tape.value(source);
    if g.rows() != src_index.len() || g.cols() != s.cols() || dst_index.len() != src_index.len() {
        return Err(Error::shape(
            "resample",
            format!(
                "{} edges, gains {}x{}, source width {}",
                src_index.len(),
                g.rows(),
                g.cols(),
                s.cols()
            ),
        ));
    }
    let msg = tape.gather_rows(source, src_index)?;
    let msg = tape.mul(msg, gain)?;
    let agg = tape.segment_sum(msg, dst_index, n_out)?;
    let out = tape.linear(agg, proj, bias)?;
    tape.leaky_relu(out, LEAKY_SLOPE)
}

/// Fine-to-coarse layer. `edges` holds `(fine, coarse)` index arrays.
#[allow(clippy::too_many_arguments)]
pub fn downsample_layer(
    tape: &mut Tape,
    fine: Var,
    fine_index: Arc<[usize]>,
    coarse_index: Arc<[usize]>,
    n_coarse: usize,
    gain: Var,
    proj: Var,
    bias: Var,
) -> Result<Var> {
    resample(tape, fine, fine_index, coarse_index, n_coarse, gain, proj, bias)
}

/// Coarse-to-fine layer; each message is the coarse node's downsample-path
/// snapshot concatenated with its current latent.
#[allow(clippy::too_many_arguments)]
pub fn upsample_layer(
    tape: &mut Tape,
    skip: Var,
    coarse: Var,
    coarse_index: Arc<[usize]>,
    fine_index: Arc<[usize]>,
    n_fine: usize,
    gain: Var,
    proj: Var,
    bias: Var,
) -> Result<Var> {
    let both = tape.concat(&[skip, coarse])?;
    resample(tape, both, coarse_index, fine_index, n_fine, gain, proj, bias)
}

#[derive(Debug, Clone)]
struct Resample {
    gain: String,
    proj: Linear,
    fine: Arc<[usize]>,
    coarse: Arc<[usize]>,
    n_fine: usize,
    n_coarse: usize,
}

#[derive(Debug, Clone)]
struct Block {
    layers: Vec<RgpLayer>,
    graph: EdgeIndex,
    width: usize,
    /// Reads coarse-level edge latents instead of the finest ones.
    coarse_edges: bool,
}

/// Hidden edge states of the three blocks as tape variables.
#[derive(Debug, Clone, Default)]
pub struct Hidden {
    blocks: [Option<Var>; 3],
    updates: usize,
}

impl Hidden {
    /// State before the first timestep; blocks initialize on first use.
    pub fn start() -> Self {
        Self::default()
    }

    pub fn updates(&self) -> usize {
        self.updates
    }

    pub fn block(&self, b: usize) -> Option<Var> {
        self.blocks[b]
    }

    pub fn to_arrays(&self, tape: &Tape) -> HiddenArrays {
        HiddenArrays {
            blocks: self.blocks.map(|b| b.map(|v| tape.value(v).clone())),
            updates: self.updates,
        }
    }

    pub fn from_arrays(tape: &mut Tape, h: &HiddenArrays) -> Self {
        let mut blocks = [None; 3];
        for (slot, a) in blocks.iter_mut().zip(&h.blocks) {
            *slot = a.as_ref().map(|a| tape.constant(a.clone()));
        }
        Self {
            blocks,
            updates: h.updates,
        }
    }
}

/// Hidden states detached from any tape, for step-by-step inference.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct HiddenArrays {
    pub blocks: [Option<Array>; 3],
    pub updates: usize,
}

/// Network structure bound to one hierarchy.
#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    enc_node: Mlp3,
    enc_contact: Mlp3,
    enc_edge: Mlp3,
    enc_global: Mlp3,
    enc_coarse_edge: Option<Mlp3>,
    combine: Mlp3,
    blocks: [Option<Block>; 3],
    down: Vec<Resample>,
    up: Vec<Resample>,
    decoder: Mlp3,
    n_nodes: usize,
    specs: Vec<ParamSpec>,
}

/// Intermediate values of one forward pass, exposed for tests.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub node_latent: Var,
    pub contact_latent: Var,
    pub edge_latent: Var,
    pub global_latent: Var,
    pub combined: Var,
    pub processed: Var,
    pub output: Var,
}

impl Model {
    pub fn new(config: ModelConfig, hierarchy: &Hierarchy) -> Result<Self> {
        config.validate()?;
        let hier = config.variant.hierarchical();
        if hier && hierarchy.depth() != config.levels() {
            return Err(Error::Config(format!(
                "{} expects a {}-level hierarchy, got {}",
                config.variant,
                config.levels(),
                hierarchy.depth()
            )));
        }
        let w = &config.widths;
        let g = config.global_width;
        let w0 = w[0];
        let top = if hier { config.levels() - 1 } else { 0 };
        let mut specs = Vec::new();
        let enc_node = Mlp3::new("enc.node", config.node_features, w0, w0, true, &mut specs);
        let enc_contact = Mlp3::new("enc.contact", CONTACT_FEATURES, w0, w0, true, &mut specs);
        let enc_edge = Mlp3::new("enc.edge", EDGE_FEATURES, w0, w0, true, &mut specs);
        let enc_global = Mlp3::new("enc.global", GLOBAL_FEATURES, g, g, true, &mut specs);
        let enc_coarse_edge =
            (top > 0).then(|| Mlp3::new("enc.coarse_edge", EDGE_FEATURES, w[top], w[top], true, &mut specs));
        let combine = Mlp3::new("combine", 2 * w0, w0, w0, true, &mut specs);
        let recurrent = config.variant.recurrent();
        let graph_of = |level: usize| {
            let t = &hierarchy.levels[level].topology;
            EdgeIndex {
                sources: t.sources(),
                targets: t.targets(),
                n_nodes: t.n_nodes(),
            }
        };
        let block = |b: usize, level: usize, specs: &mut Vec<ParamSpec>| -> Option<Block> {
            let n = config.layers[b];
            (n > 0).then(|| Block {
                layers: (0..n)
                    .map(|l| RgpLayer::new(&format!("rgpb{}.l{l}", b + 1), w[level], g, recurrent, specs))
                    .collect(),
                graph: graph_of(level),
                width: w[level],
                coarse_edges: level > 0,
            })
        };
        let blocks = [
            if hier { block(0, 0, &mut specs) } else { None },
            block(1, top, &mut specs),
            if hier { block(2, 0, &mut specs) } else { None },
        ];
        let mut down = Vec::new();
        let mut up = Vec::new();
        for k in 1..=top {
            let il = &hierarchy.inter_level[k - 1];
            let (fine, coarse) = (il.fine_index(), il.coarse_index());
            let n_fine = hierarchy.levels[k - 1].topology.n_nodes();
            let n_coarse = hierarchy.levels[k].topology.n_nodes();
            let e = il.edges.len();
            let make = |name: String, width_in: usize, width_out: usize, specs: &mut Vec<ParamSpec>| {
                specs.push(ParamSpec {
                    name: format!("{name}.gain"),
                    rows: e,
                    cols: width_in,
                    init: Init::Ones,
                });
                Resample {
                    gain: format!("{name}.gain"),
                    proj: Linear::new(&format!("{name}.proj"), width_in, width_out, specs),
                    fine: fine.clone(),
                    coarse: coarse.clone(),
                    n_fine,
                    n_coarse,
                }
            };
            down.push(make(format!("ds{k}"), w[k - 1], w[k], &mut specs));
            up.push(make(format!("us{k}"), 2 * w[k], w[k - 1], &mut specs));
        }
        let decoder = Mlp3::new("dec", 3 * w0, w0, 3, config.decoder_layer_norm, &mut specs);
        Ok(Self {
            n_nodes: hierarchy.levels[0].topology.n_nodes(),
            config,
            enc_node,
            enc_contact,
            enc_edge,
            enc_global,
            enc_coarse_edge,
            combine,
            blocks,
            down,
            up,
            decoder,
            specs,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn param_specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn init_params(&self, seed: u64) -> Result<ParamStore> {
        ParamStore::initialize(&self.specs, seed)
    }

    /// Checks that `params` has exactly this model's names and shapes.
    pub fn check_params(&self, params: &ParamStore) -> Result<()> {
        if params.len() != self.specs.len() {
            return Err(Error::Data(format!(
                "checkpoint has {} parameters, model needs {}",
                params.len(),
                self.specs.len()
            )));
        }
        for s in &self.specs {
            let a = params
                .get(&s.name)
                .ok_or_else(|| Error::Data(format!("missing parameter {}", s.name)))?;
            if a.rows() != s.rows || a.cols() != s.cols {
                return Err(Error::Data(format!(
                    "parameter {} is {:?}, expected {}x{}",
                    s.name,
                    a.shape(),
                    s.rows,
                    s.cols
                )));
            }
        }
        Ok(())
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    /// Initial hidden state of block `b` given the encoded global latent.
    fn initial_hidden(&self, tape: &mut Tape, block: &Block, u: Var) -> Result<Var> {
        let e = block.graph.n_edges();
        match self.config.hidden_init {
            HiddenInit::Zero => Ok(tape.constant(Array::zeros(e, block.width))),
            HiddenInit::GlobalFeature => {
                let g = self.config.global_width;
                let copies = block.width.div_ceil(g);
                let tiled = tape.concat(&vec![u; copies])?;
                let row = tape.slice_cols(tiled, 0, block.width)?;
                tape.broadcast_rows(row, e)
            }
        }
    }

    fn run_block(
        &self,
        tape: &mut Tape,
        p: &Bound,
        b: usize,
        v: Var,
        e: Var,
        u: Var,
        hidden: &mut Hidden,
    ) -> Result<Var> {
        let Some(block) = &self.blocks[b] else {
            return Ok(v);
        };
        let recurrent = self.config.variant.recurrent();
        let mut h = if recurrent {
            Some(match hidden.blocks[b] {
                Some(h) => h,
                None => self.initial_hidden(tape, block, u)?,
            })
        } else {
            None
        };
        let u_e = tape.broadcast_rows(u, block.graph.n_edges())?;
        let u_v = tape.broadcast_rows(u, block.graph.n_nodes)?;
        let mut v = v;
        for layer in &block.layers {
            let (v_new, h_new) = rgp_layer(tape, p, layer, &block.graph, v, e, u_e, u_v, h)?;
            v = v_new;
            if recurrent {
                h = Some(h_new);
            }
        }
        hidden.blocks[b] = h;
        Ok(v)
    }

    /// Forward pass with intermediate values.
    pub fn forward_traced(
        &self,
        tape: &mut Tape,
        p: &Bound,
        g: &TimestepGraph,
        hidden: &Hidden,
    ) -> Result<(ForwardTrace, Hidden)> {
        if g.n_nodes() != self.n_nodes {
            return Err(Error::shape(
                "forward",
                format!("graph has {} nodes, model expects {}", g.n_nodes(), self.n_nodes),
            ));
        }
        let mut hidden = hidden.clone();
        let x_node = tape.constant(g.node_feats.clone());
        let contact_in = if self.config.contact {
            g.contact_feats.clone()
        } else {
            Array::zeros(g.contact_feats.rows(), g.contact_feats.cols())
        };
        let x_contact = tape.constant(contact_in);
        let x_edge = tape.constant(g.edge_feats.clone());
        let x_global = tape.constant(g.global_feats.clone());

        let v_enc = mlp3(tape, p, &self.enc_node, x_node)?;
        let c_enc = mlp3(tape, p, &self.enc_contact, x_contact)?;
        let e_enc = mlp3(tape, p, &self.enc_edge, x_edge)?;
        let u = mlp3(tape, p, &self.enc_global, x_global)?;
        let both = tape.concat(&[v_enc, c_enc])?;
        let combined = mlp3(tape, p, &self.combine, both)?;

        let mut v = self.run_block(tape, p, 0, combined, e_enc, u, &mut hidden)?;
        let mut snapshots = Vec::with_capacity(self.down.len());
        for ds in &self.down {
            v = downsample_layer(
                tape,
                v,
                ds.fine.clone(),
                ds.coarse.clone(),
                ds.n_coarse,
                p.get(&ds.gain)?,
                p.get(&ds.proj.weight)?,
                p.get(&ds.proj.bias)?,
            )?;
            snapshots.push(v);
        }
        let mid_edges = match (&self.blocks[1], &self.enc_coarse_edge) {
            (Some(b), Some(enc)) if b.coarse_edges => {
                let feats = g
                    .coarse_edge_feats
                    .as_ref()
                    .ok_or_else(|| Error::shape("forward", "coarse edge features missing"))?;
                let x = tape.constant(feats.clone());
                mlp3(tape, p, enc, x)?
            }
            _ => e_enc,
        };
        v = self.run_block(tape, p, 1, v, mid_edges, u, &mut hidden)?;
        for (us, &skip) in self.up.iter().zip(&snapshots).rev() {
            v = upsample_layer(
                tape,
                skip,
                v,
                us.coarse.clone(),
                us.fine.clone(),
                us.n_fine,
                p.get(&us.gain)?,
                p.get(&us.proj.weight)?,
                p.get(&us.proj.bias)?,
            )?;
        }
        let processed = self.run_block(tape, p, 2, v, e_enc, u, &mut hidden)?;
        let c_dec = if self.config.contact {
            c_enc
        } else {
            let shape = tape.value(c_enc);
            tape.constant(Array::zeros(shape.rows(), shape.cols()))
        };
        let dec_in = tape.concat(&[processed, v_enc, c_dec])?;
        let output = mlp3(tape, p, &self.decoder, dec_in)?;
        if self.config.variant.recurrent() {
            hidden.updates += 1;
        }
        Ok((
            ForwardTrace {
                node_latent: v_enc,
                contact_latent: c_enc,
                edge_latent: e_enc,
                global_latent: u,
                combined,
                processed,
                output,
            },
            hidden,
        ))
    }

    /// Normalized displacement prediction for one timestep.
    pub fn forward(&self, tape: &mut Tape, p: &Bound, g: &TimestepGraph, hidden: &Hidden) -> Result<(Var, Hidden)> {
        let (trace, hidden) = self.forward_traced(tape, p, g, hidden)?;
        Ok((trace.output, hidden))
    }

    /// Inference step on a fresh tape.
    pub fn predict(&self, params: &ParamStore, g: &TimestepGraph, hidden: &HiddenArrays) -> Result<(Array, HiddenArrays)> {
        let mut tape = Tape::new();
        let p = params.bind_constant(&mut tape);
        let h = Hidden::from_arrays(&mut tape, hidden);
        let (out, h) = self.forward(&mut tape, &p, g, &h)?;
        Ok((tape.value(out).clone(), h.to_arrays(&tape)))
    }
}
