//! Mesh to graph conversion and per-timestep feature assembly.
//!
//! Node features are `(dx, dy, dz, b_x, b_y, b_z)` where the first three are
//! the displacement since the previous timestep (zero at `t = 0`) and the
//! last three flag a fixed degree of freedom. Edge features are
//! `(x0_i - x0_j, |x0_i - x0_j|, xt_i - xt_j, |xt_i - xt_j|)` for each
//! directed edge `i -> j`.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Array, Real};
use crate::error::{Error, Result};

pub const EDGE_FEATURES: usize = 8;
pub const CONTACT_FEATURES: usize = 4;
pub const GLOBAL_FEATURES: usize = 2;

/// FE-style surface mesh of triangles and quads.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub positions: Array,
    pub elements: Vec<Vec<usize>>,
    pub boundary: Vec<[bool; 3]>,
}

impl Mesh {
    pub fn new(positions: Array, elements: Vec<Vec<usize>>, boundary: Vec<[bool; 3]>) -> Result<Self> {
        let n = positions.rows();
        if positions.cols() != 3 {
            return Err(Error::Data(format!("mesh positions must be N x 3, got {:?}", positions.shape())));
        }
        if boundary.len() != n {
            return Err(Error::Data(format!("{} boundary rows for {n} nodes", boundary.len())));
        }
        if !positions.is_finite() {
            return Err(Error::Data("non-finite mesh position".into()));
        }
        for (k, el) in elements.iter().enumerate() {
            if !(el.len() == 3 || el.len() == 4) {
                return Err(Error::Data(format!("element {k} has {} nodes", el.len())));
            }
            if let Some(&bad) = el.iter().find(|&&i| i >= n) {
                return Err(Error::Index {
                    op: "mesh element",
                    index: bad,
                    limit: n,
                });
            }
        }
        Ok(Self {
            positions,
            elements,
            boundary,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.positions.rows()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("# rugnn mesh v1\n");
        let _ = writeln!(s, "nodes {}", self.n_nodes());
        for i in 0..self.n_nodes() {
            let p = self.positions.row(i);
            let b = self.boundary[i];
            let _ = writeln!(
                s,
                "{i} {} {} {} {} {} {}",
                p[0], p[1], p[2], b[0] as u8, b[1] as u8, b[2] as u8
            );
        }
        let _ = writeln!(s, "elements {}", self.elements.len());
        for el in &self.elements {
            let line: Vec<String> = el.iter().map(usize::to_string).collect();
            let _ = writeln!(s, "{}", line.join(" "));
        }
        s
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let err = |detail: String| Error::Parse {
            path: origin.to_path_buf(),
            detail,
        };
        let mut lines = text
            .lines()
            .map(|l| l.split('#').next().unwrap_or("").trim())
            .filter(|l| !l.is_empty());
        let header = |line: Option<&str>, key: &str| -> Result<usize> {
            let line = line.ok_or_else(|| err(format!("missing `{key}` header")))?;
            let mut it = line.split_whitespace();
            if it.next() != Some(key) {
                return Err(err(format!("expected `{key} <count>`, got `{line}`")));
            }
            it.next()
                .and_then(|c| c.parse().ok())
                .ok_or_else(|| err(format!("bad count in `{line}`")))
        };
        let n = header(lines.next(), "nodes")?;
        let mut pos = vec![0.0; n * 3];
        let mut boundary = vec![[false; 3]; n];
        let mut seen = vec![false; n];
        for _ in 0..n {
            let line = lines.next().ok_or_else(|| err("truncated node block".into()))?;
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 7 {
                return Err(err(format!("node line needs 7 fields: `{line}`")));
            }
            let i: usize = f[0].parse().map_err(|_| err(format!("bad node index `{}`", f[0])))?;
            if i >= n || seen[i] {
                return Err(err(format!("node index {i} out of range or repeated")));
            }
            seen[i] = true;
            for d in 0..3 {
                pos[i * 3 + d] = f[1 + d]
                    .parse::<Real>()
                    .map_err(|_| err(format!("bad coordinate `{}`", f[1 + d])))?;
                boundary[i][d] = match f[4 + d] {
                    "0" => false,
                    "1" => true,
                    other => return Err(err(format!("boundary flag must be 0/1, got `{other}`"))),
                };
            }
        }
        let m = header(lines.next(), "elements")?;
        let mut elements = Vec::with_capacity(m);
        for _ in 0..m {
            let line = lines.next().ok_or_else(|| err("truncated element block".into()))?;
            let el: Vec<usize> = line
                .split_whitespace()
                .map(|t| t.parse().map_err(|_| err(format!("bad element index `{t}`"))))
                .collect::<Result<_>>()?;
            elements.push(el);
        }
        Mesh::new(Array::from_parts(n, 3, pos), elements, boundary)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }
}

/// Directed graph with both directions of every undirected edge, sorted by
/// `(source, target)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TopologyRepr", into = "TopologyRepr")]
pub struct GraphTopology {
    n_nodes: usize,
    edges: Vec<(usize, usize)>,
    sources: Arc<[usize]>,
    targets: Arc<[usize]>,
}

#[derive(Serialize, Deserialize)]
struct TopologyRepr {
    n_nodes: usize,
    edges: Vec<(usize, usize)>,
}

impl TryFrom<TopologyRepr> for GraphTopology {
    type Error = Error;
    fn try_from(r: TopologyRepr) -> Result<Self> {
        let t = Self::from_directed(r.n_nodes, r.edges);
        t.validate()?;
        Ok(t)
    }
}

impl From<GraphTopology> for TopologyRepr {
    fn from(t: GraphTopology) -> Self {
        Self {
            n_nodes: t.n_nodes,
            edges: t.edges,
        }
    }
}

impl GraphTopology {
    /// Build from undirected pairs; self-loops are dropped and duplicates
    /// merged.
    pub fn from_undirected(n_nodes: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut set = BTreeSet::new();
        for (a, b) in pairs {
            if a >= n_nodes || b >= n_nodes {
                return Err(Error::Index {
                    op: "GraphTopology",
                    index: a.max(b),
                    limit: n_nodes,
                });
            }
            if a != b {
                set.insert((a, b));
                set.insert((b, a));
            }
        }
        Ok(Self::from_directed(n_nodes, set.into_iter().collect()))
    }

    fn from_directed(n_nodes: usize, mut edges: Vec<(usize, usize)>) -> Self {
        edges.sort_unstable();
        let sources = edges.iter().map(|e| e.0).collect();
        let targets = edges.iter().map(|e| e.1).collect();
        Self {
            n_nodes,
            edges,
            sources,
            targets,
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn sources(&self) -> Arc<[usize]> {
        self.sources.clone()
    }

    pub fn targets(&self) -> Arc<[usize]> {
        self.targets.clone()
    }

    /// Undirected edges `(i, j)` with `i < j`.
    pub fn undirected(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied().filter(|(a, b)| a < b)
    }

    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n_nodes];
        for &(a, b) in &self.edges {
            adj[a].push(b);
        }
        adj
    }

    /// Checks symmetry, absence of self-loops and duplicates, and bounds.
    pub fn validate(&self) -> Result<()> {
        let set: BTreeSet<(usize, usize)> = self.edges.iter().copied().collect();
        if set.len() != self.edges.len() {
            return Err(Error::Graph("duplicate directed edge".into()));
        }
        for &(a, b) in &self.edges {
            if a >= self.n_nodes || b >= self.n_nodes {
                return Err(Error::Graph(format!("edge ({a}, {b}) out of range")));
            }
            if a == b {
                return Err(Error::Graph(format!("self-loop at {a}")));
            }
            if !set.contains(&(b, a)) {
                return Err(Error::Graph(format!("edge ({a}, {b}) has no reverse")));
            }
        }
        Ok(())
    }

    /// Number of connected components.
    pub fn components(&self) -> usize {
        let adj = self.neighbors();
        let mut seen = vec![false; self.n_nodes];
        let mut count = 0;
        for s in 0..self.n_nodes {
            if seen[s] {
                continue;
            }
            count += 1;
            let mut stack = vec![s];
            seen[s] = true;
            while let Some(u) = stack.pop() {
                for &v in &adj[u] {
                    if !seen[v] {
                        seen[v] = true;
                        stack.push(v);
                    }
                }
            }
        }
        count
    }

    /// Same graph under the node relabeling `old -> map[old]`.
    pub fn relabel(&self, map: &[usize]) -> Result<Self> {
        Self::from_undirected(self.n_nodes, self.undirected().map(|(a, b)| (map[a], map[b])))
    }
}

/// Graph edges of a mesh: element perimeters, without diagonals.
pub fn mesh_to_topology(mesh: &Mesh) -> Result<GraphTopology> {
    let mut pairs = Vec::new();
    for (k, el) in mesh.elements.iter().enumerate() {
        let unique: BTreeSet<usize> = el.iter().copied().collect();
        if unique.len() != el.len() {
            return Err(Error::Degenerate(format!("element {k} repeats a node: {el:?}")));
        }
        for i in 0..el.len() {
            pairs.push((el[i], el[(i + 1) % el.len()]));
        }
    }
    GraphTopology::from_undirected(mesh.n_nodes(), pairs)
}

/// Which columns the node features carry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSchema {
    /// Append the fixed-direction flags (dome schema). Without them the node
    /// features are displacement only (bulkhead schema).
    pub boundary_onehot: bool,
}

impl Default for FeatureSchema {
    fn default() -> Self {
        Self {
            boundary_onehot: true,
        }
    }
}

impl FeatureSchema {
    pub fn node_width(&self) -> usize {
        if self.boundary_onehot {
            6
        } else {
            3
        }
    }
}

pub fn node_features(
    positions_t: &Array,
    positions_prev: Option<&Array>,
    boundary: &[[bool; 3]],
    schema: FeatureSchema,
) -> Result<Array> {
    let n = positions_t.rows();
    if let Some(prev) = positions_prev {
        if prev.rows() != n || prev.cols() != 3 {
            return Err(Error::shape("node_features", "previous positions differ in shape"));
        }
    }
    if boundary.len() != n {
        return Err(Error::shape("node_features", "boundary length differs from node count"));
    }
    let w = schema.node_width();
    let mut out = Array::zeros(n, w);
    for i in 0..n {
        let row = out.row_mut(i);
        if let Some(prev) = positions_prev {
            for d in 0..3 {
                row[d] = positions_t.get(i, d) - prev.get(i, d);
            }
        }
        if schema.boundary_onehot {
            for d in 0..3 {
                row[3 + d] = if boundary[i][d] { 1.0 } else { 0.0 };
            }
        }
    }
    Ok(out)
}

pub fn edge_features(positions_0: &Array, positions_t: &Array, topology: &GraphTopology) -> Result<Array> {
    let n = topology.n_nodes();
    if positions_0.rows() != n || positions_t.rows() != n {
        return Err(Error::shape(
            "edge_features",
            format!("{n} nodes, positions {} and {}", positions_0.rows(), positions_t.rows()),
        ));
    }
    let mut out = Array::zeros(topology.n_edges(), EDGE_FEATURES);
    for (k, &(i, j)) in topology.edges().iter().enumerate() {
        let row = out.row_mut(k);
        for (base, pos) in [(0, positions_0), (4, positions_t)] {
            let mut sq = 0.0;
            for d in 0..3 {
                let v = pos.get(i, d) - pos.get(j, d);
                row[base + d] = v;
                sq += v * v;
            }
            row[base + 3] = sq.sqrt();
        }
    }
    Ok(out)
}

/// Feature arrays for one timestep of one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct TimestepGraph {
    pub node_feats: Array,
    pub contact_feats: Array,
    pub edge_feats: Array,
    pub global_feats: Array,
    /// Edge features of the coarsest hierarchy level, built from anchor
    /// positions; absent for single-level models.
    pub coarse_edge_feats: Option<Array>,
    /// `x(t+1) - x(t)` when ground truth is available.
    pub target: Option<Array>,
}

impl TimestepGraph {
    pub fn n_nodes(&self) -> usize {
        self.node_feats.rows()
    }
}

/// Inputs shared by every timestep of one sequence.
#[derive(Debug, Clone, Copy)]
pub struct SequenceView<'a> {
    /// Positions per timestep; index 0 is the undeformed blank. Ground truth
    /// targets exist for `t` when `positions.len() > t + 1`.
    pub positions: &'a [Array],
    pub boundary: &'a [[bool; 3]],
    pub topology: &'a GraphTopology,
    pub dt: Real,
    pub stroke: Real,
    /// Number of supervised intervals `T`.
    pub intervals: usize,
}

pub fn assemble_timestep(
    seq: SequenceView<'_>,
    t: usize,
    contact_feats: Array,
    schema: FeatureSchema,
) -> Result<TimestepGraph> {
    if t >= seq.intervals || t >= seq.positions.len() {
        return Err(Error::Index {
            op: "assemble_timestep",
            index: t,
            limit: seq.intervals.min(seq.positions.len()),
        });
    }
    let x_t = &seq.positions[t];
    let prev = (t > 0).then(|| &seq.positions[t - 1]);
    if contact_feats.rows() != x_t.rows() || contact_feats.cols() != CONTACT_FEATURES {
        return Err(Error::shape("assemble_timestep", "contact features must be N x 4"));
    }
    let target = match seq.positions.get(t + 1) {
        Some(next) => Some(next.zip_map(x_t, |a, b| a - b)?),
        None => None,
    };
    Ok(TimestepGraph {
        node_feats: node_features(x_t, prev, seq.boundary, schema)?,
        contact_feats,
        edge_feats: edge_features(&seq.positions[0], x_t, seq.topology)?,
        global_feats: Array::from_parts(1, 2, vec![seq.dt, seq.stroke]),
        coarse_edge_feats: None,
        target,
    })
}
