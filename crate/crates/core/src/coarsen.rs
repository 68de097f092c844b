//! Multi-level graph hierarchies and nearest-neighbour inter-level edges.
//!
//! Every coarse node carries an anchor: the finest-level node nearest to it
//! at `t = 0`. A coarse node's position at any timestep is its anchor's.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Array, Real};
use crate::error::{Error, Result};
use crate::meshgraph::{self, GraphTopology};

/// Number of coarse neighbours linked to each fine node.
pub const INTER_LEVEL_K: usize = 3;

/// One coarsening step: coarse graph plus the fine-to-coarse assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct Coarsened {
    pub topology: GraphTopology,
    pub positions: Array,
    /// Coarse node of every fine node.
    pub map: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CoarsenMethod {
    Grid,
    Gpartition,
    Gpool,
    Bistride,
}

impl fmt::Display for CoarsenMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Grid => "grid",
            Self::Gpartition => "gpartition",
            Self::Gpool => "gpool",
            Self::Bistride => "bistride",
        })
    }
}

impl std::str::FromStr for CoarsenMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "grid" => Ok(Self::Grid),
            "gpartition" => Ok(Self::Gpartition),
            "gpool" => Ok(Self::Gpool),
            "bistride" => Ok(Self::Bistride),
            other => Err(Error::Config(format!(
                "unknown coarsening method `{other}` (grid, gpartition, gpool, bistride)"
            ))),
        }
    }
}

fn check_inputs(topology: &GraphTopology, positions: &Array) -> Result<()> {
    if topology.n_nodes() == 0 {
        return Err(Error::Empty("graph"));
    }
    if positions.rows() != topology.n_nodes() || positions.cols() != 3 {
        return Err(Error::shape(
            "coarsen",
            format!("{} nodes but positions {:?}", topology.n_nodes(), positions.shape()),
        ));
    }
    Ok(())
}

/// Coarse graph from a cluster assignment: clusters are adjacent iff a fine
/// edge crosses them; positions are member centroids.
fn from_clusters(topology: &GraphTopology, positions: &Array, map: Vec<usize>, n_coarse: usize) -> Result<Coarsened> {
    let mut sums = vec![[0.0 as Real; 3]; n_coarse];
    let mut counts = vec![0usize; n_coarse];
    for (i, &c) in map.iter().enumerate() {
        for d in 0..3 {
            sums[c][d] += positions.get(i, d);
        }
        counts[c] += 1;
    }
    let mut pos = Vec::with_capacity(n_coarse * 3);
    for (s, &n) in sums.iter().zip(&counts) {
        pos.extend(s.iter().map(|v| v / n as Real));
    }
    let coarse = GraphTopology::from_undirected(n_coarse, topology.undirected().map(|(a, b)| (map[a], map[b])))?;
    Ok(Coarsened {
        topology: coarse,
        positions: Array::from_parts(n_coarse, 3, pos),
        map,
    })
}

/// Number clusters by their lowest member so the result does not depend on
/// the order clusters were formed.
fn renumber(raw: &[usize]) -> (Vec<usize>, usize) {
    let mut first = std::collections::BTreeMap::new();
    for (i, &c) in raw.iter().enumerate() {
        first.entry(c).or_insert(i);
    }
    let mut order: Vec<(usize, usize)> = first.into_iter().map(|(c, i)| (i, c)).collect();
    order.sort_unstable();
    let mut relabel = vec![0; raw.len()];
    for (new, &(_, old)) in order.iter().enumerate() {
        relabel[old] = new;
    }
    (raw.iter().map(|&c| relabel[c]).collect(), order.len())
}

/// Greedy edge matching in `(min, max)` edge order.
pub fn coarsen_gpartition(topology: &GraphTopology, positions: &Array) -> Result<Coarsened> {
    check_inputs(topology, positions)?;
    let n = topology.n_nodes();
    let mut raw: Vec<Option<usize>> = vec![None; n];
    let mut next = 0;
    for (a, b) in topology.undirected() {
        if raw[a].is_none() && raw[b].is_none() {
            raw[a] = Some(next);
            raw[b] = Some(next);
            next += 1;
        }
    }
    let raw: Vec<usize> = raw
        .into_iter()
        .map(|c| {
            c.unwrap_or_else(|| {
                next += 1;
                next - 1
            })
        })
        .collect();
    let (map, n_coarse) = renumber(&raw);
    from_clusters(topology, positions, map, n_coarse)
}

/// Each unassigned node, in index order, claims itself and its unassigned
/// neighbours.
pub fn coarsen_gpool(topology: &GraphTopology, positions: &Array) -> Result<Coarsened> {
    check_inputs(topology, positions)?;
    let n = topology.n_nodes();
    let adj = topology.neighbors();
    let mut raw: Vec<Option<usize>> = vec![None; n];
    let mut next = 0;
    for s in 0..n {
        if raw[s].is_some() {
            continue;
        }
        raw[s] = Some(next);
        for &v in &adj[s] {
            if raw[v].is_none() {
                raw[v] = Some(next);
            }
        }
        next += 1;
    }
    let raw: Vec<usize> = raw.into_iter().map(|c| c.expect("every node visited")).collect();
    let (map, n_coarse) = renumber(&raw);
    from_clusters(topology, positions, map, n_coarse)
}

/// BFS parity coarsening: keep even-depth nodes.
///
/// Components not reached from `seed` are seeded at their lowest index.
/// A dropped node maps to its lowest-index adjacent kept node.
pub fn coarsen_bistride(topology: &GraphTopology, positions: &Array, seed: usize) -> Result<Coarsened> {
    check_inputs(topology, positions)?;
    let n = topology.n_nodes();
    if seed >= n {
        return Err(Error::Index {
            op: "coarsen_bistride seed",
            index: seed,
            limit: n,
        });
    }
    let adj = topology.neighbors();
    let mut depth: Vec<Option<usize>> = vec![None; n];
    let seeds = std::iter::once(seed).chain(0..n);
    for s in seeds {
        if depth[s].is_some() {
            continue;
        }
        depth[s] = Some(0);
        let mut queue = VecDeque::from([s]);
        while let Some(u) = queue.pop_front() {
            let du = depth[u].expect("queued nodes have depth");
            for &v in &adj[u] {
                if depth[v].is_none() {
                    depth[v] = Some(du + 1);
                    queue.push_back(v);
                }
            }
        }
    }
    let keep: Vec<bool> = depth.iter().map(|d| d.expect("all visited") % 2 == 0).collect();
    let mut coarse_id = vec![usize::MAX; n];
    let mut kept = Vec::new();
    for i in 0..n {
        if keep[i] {
            coarse_id[i] = kept.len();
            kept.push(i);
        }
    }
    let mut map = vec![0; n];
    for i in 0..n {
        map[i] = if keep[i] {
            coarse_id[i]
        } else {
            // odd depth always has a kept parent at depth - 1
            let parent = adj[i]
                .iter()
                .copied()
                .filter(|&v| keep[v])
                .min()
                .expect("odd-depth node has an even-depth neighbour");
            coarse_id[parent]
        };
    }
    let mut pairs = BTreeSet::new();
    for (a, b) in topology.undirected() {
        if keep[a] && keep[b] {
            pairs.insert((coarse_id[a], coarse_id[b]));
        }
    }
    for nbrs in &adj {
        let kept_nbrs: Vec<usize> = nbrs.iter().copied().filter(|&v| keep[v]).collect();
        for (x, &a) in kept_nbrs.iter().enumerate() {
            for &b in &kept_nbrs[x + 1..] {
                pairs.insert((coarse_id[a], coarse_id[b]));
            }
        }
    }
    Ok(Coarsened {
        topology: GraphTopology::from_undirected(kept.len(), pairs)?,
        positions: positions.select_rows(&kept),
        map,
    })
}

/// Point KD-tree for exact k-nearest queries with lowest-index tie-breaks.
struct PointTree<'a> {
    points: &'a Array,
    nodes: Vec<PointNode>,
    order: Vec<usize>,
}

struct PointNode {
    lo: [Real; 3],
    hi: [Real; 3],
    start: usize,
    end: usize,
    children: Option<(usize, usize)>,
}

const POINT_LEAF: usize = 8;

fn sq_dist(a: &[Real], b: &[Real]) -> Real {
    (0..3).map(|d| (a[d] - b[d]) * (a[d] - b[d])).sum()
}

impl<'a> PointTree<'a> {
    fn build(points: &'a Array) -> Self {
        let mut tree = Self {
            points,
            nodes: Vec::new(),
            order: (0..points.rows()).collect(),
        };
        if points.rows() > 0 {
            tree.build_node(0, points.rows());
        }
        tree
    }

    fn build_node(&mut self, start: usize, end: usize) -> usize {
        let mut lo = [Real::INFINITY; 3];
        let mut hi = [Real::NEG_INFINITY; 3];
        for &i in &self.order[start..end] {
            let p = self.points.row(i);
            for d in 0..3 {
                lo[d] = lo[d].min(p[d]);
                hi[d] = hi[d].max(p[d]);
            }
        }
        let id = self.nodes.len();
        self.nodes.push(PointNode {
            lo,
            hi,
            start,
            end,
            children: None,
        });
        if end - start > POINT_LEAF {
            let axis = (0..3)
                .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])).then(b.cmp(&a)))
                .unwrap_or(0);
            let pts = self.points;
            self.order[start..end].sort_by(|&a, &b| pts.get(a, axis).total_cmp(&pts.get(b, axis)).then(a.cmp(&b)));
            let mid = start + (end - start) / 2;
            let l = self.build_node(start, mid);
            let r = self.build_node(mid, end);
            self.nodes[id].children = Some((l, r));
        }
        id
    }

    fn box_sq_dist(node: &PointNode, p: &[Real]) -> Real {
        (0..3)
            .map(|d| {
                let e = (node.lo[d] - p[d]).max(p[d] - node.hi[d]).max(0.0);
                e * e
            })
            .sum()
    }

    /// The `k` nearest points sorted by `(squared distance, index)`.
    fn k_nearest(&self, p: &[Real], k: usize) -> Vec<(Real, usize)> {
        let mut best: Vec<(Real, usize)> = Vec::with_capacity(k + 1);
        if self.nodes.is_empty() || k == 0 {
            return best;
        }
        let mut stack = vec![0];
        while let Some(id) = stack.pop() {
            let node = &self.nodes[id];
            if best.len() == k && Self::box_sq_dist(node, p) > best[k - 1].0 {
                continue;
            }
            match node.children {
                Some((l, r)) => {
                    let dl = Self::box_sq_dist(&self.nodes[l], p);
                    let dr = Self::box_sq_dist(&self.nodes[r], p);
                    if dl <= dr {
                        stack.extend([r, l]);
                    } else {
                        stack.extend([l, r]);
                    }
                }
                None => {
                    for &i in &self.order[node.start..node.end] {
                        let cand = (sq_dist(p, self.points.row(i)), i);
                        if best.len() < k || lex_less(cand, best[k - 1]) {
                            let at = best.partition_point(|&b| lex_less(b, cand));
                            best.insert(at, cand);
                            best.truncate(k);
                        }
                    }
                }
            }
        }
        best
    }
}

fn lex_less(a: (Real, usize), b: (Real, usize)) -> bool {
    a.0 < b.0 || (a.0 == b.0 && a.1 < b.1)
}

/// Exhaustive k-nearest scan; the reference for the KD-tree.
pub fn k_nearest_brute_force(points: &Array, p: &[Real], k: usize) -> Vec<usize> {
    let mut all: Vec<(Real, usize)> = (0..points.rows()).map(|i| (sq_dist(p, points.row(i)), i)).collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    all.into_iter().take(k).map(|(_, i)| i).collect()
}

/// `(fine, coarse)` pairs linking each fine node to its nearest
/// `min(3, |coarse|)` coarse nodes, sorted by `(fine, coarse)`.
pub fn build_interlevel_edges(fine: &Array, coarse: &Array) -> Result<Vec<(usize, usize)>> {
    if coarse.rows() == 0 {
        return Err(Error::Empty("coarse level"));
    }
    if fine.cols() != 3 || coarse.cols() != 3 {
        return Err(Error::shape("build_interlevel_edges", "positions must be N x 3"));
    }
    let tree = PointTree::build(coarse);
    let k = INTER_LEVEL_K.min(coarse.rows());
    let mut edges = Vec::with_capacity(fine.rows() * k);
    for f in 0..fine.rows() {
        let mut near: Vec<usize> = tree.k_nearest(fine.row(f), k).into_iter().map(|(_, i)| i).collect();
        near.sort_unstable();
        edges.extend(near.into_iter().map(|c| (f, c)));
    }
    Ok(edges)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Level {
    pub topology: GraphTopology,
    /// Reference positions at `t = 0`.
    pub positions: Array,
    /// Finest-level node standing in for each node of this level.
    pub anchors: Vec<usize>,
}

/// Edges between level `k` (fine) and `k + 1` (coarse).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterLevel {
    pub edges: Vec<(usize, usize)>,
}

impl InterLevel {
    pub fn fine_index(&self) -> Arc<[usize]> {
        self.edges.iter().map(|e| e.0).collect()
    }

    pub fn coarse_index(&self) -> Arc<[usize]> {
        self.edges.iter().map(|e| e.1).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hierarchy {
    pub levels: Vec<Level>,
    pub inter_level: Vec<InterLevel>,
}

/// Nearest finest node to each point; ties go to the lowest index.
fn anchors_for(finest: &Array, points: &Array) -> Vec<usize> {
    let tree = PointTree::build(finest);
    (0..points.rows()).map(|i| tree.k_nearest(points.row(i), 1)[0].1).collect()
}

impl Hierarchy {
    /// One-level hierarchy over the finest graph.
    pub fn single(topology: GraphTopology, positions: Array) -> Result<Self> {
        check_inputs(&topology, &positions)?;
        let n = topology.n_nodes();
        Ok(Self {
            levels: vec![Level {
                topology,
                positions,
                anchors: (0..n).collect(),
            }],
            inter_level: Vec::new(),
        })
    }

    /// Append a coarser level built from the current coarsest one.
    fn push_level(&mut self, topology: GraphTopology, positions: Array, anchors: Vec<usize>) -> Result<()> {
        let fine = &self.levels.last().expect("at least one level").positions;
        let edges = build_interlevel_edges(fine, &positions)?;
        self.levels.push(Level {
            topology,
            positions,
            anchors,
        });
        self.inter_level.push(InterLevel { edges });
        Ok(())
    }

    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    pub fn node_counts(&self) -> Vec<usize> {
        self.levels.iter().map(|l| l.topology.n_nodes()).collect()
    }

    pub fn finest(&self) -> &Level {
        &self.levels[0]
    }

    pub fn coarsest(&self) -> &Level {
        self.levels.last().expect("hierarchy has a level")
    }

    /// Current positions of a level's nodes, read through the anchors.
    pub fn anchored_positions(&self, level: usize, finest_positions: &Array) -> Array {
        finest_positions.select_rows(&self.levels[level].anchors)
    }

    /// Edge features of the coarsest level at the given finest positions.
    pub fn coarse_edge_features(&self, finest_0: &Array, finest_t: &Array) -> Result<Array> {
        let top = self.depth() - 1;
        meshgraph::edge_features(
            &self.anchored_positions(top, finest_0),
            &self.anchored_positions(top, finest_t),
            &self.levels[top].topology,
        )
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Data(format!("hierarchy serialization: {e}")))
    }

    pub fn from_json(text: &str, origin: &Path) -> Result<Self> {
        let h: Self = serde_json::from_str(text).map_err(|e| Error::Parse {
            path: origin.to_path_buf(),
            detail: e.to_string(),
        })?;
        let report = validate_hierarchy(&h);
        if !report.is_ok() {
            return Err(Error::Graph(format!("invalid hierarchy: {}", report.violations.join("; "))));
        }
        Ok(h)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, path)
    }
}

/// Per-axis node counts for each level of a grid hierarchy.
pub fn grid_level_dims(nx: usize, ny: usize, levels: usize, ratio: Real) -> Result<Vec<(usize, usize)>> {
    if levels == 0 {
        return Err(Error::Config("hierarchy needs at least one level".into()));
    }
    if !(ratio >= 2.0) || !ratio.is_finite() {
        return Err(Error::Config(format!("node reduction ratio must be >= 2, got {ratio}")));
    }
    if nx < 2 || ny < 2 {
        return Err(Error::Config(format!("grid must be at least 2 x 2, got {nx} x {ny}")));
    }
    let stride = ratio.sqrt();
    let mut dims = vec![(nx, ny)];
    for k in 1..levels {
        let (px, py) = dims[k - 1];
        let (cx, cy) = ((px as Real / stride).round() as usize, (py as Real / stride).round() as usize);
        if cx < 2 || cy < 2 || cx * cy < 4 {
            return Err(Error::Config(format!(
                "level {k} would have {cx} x {cy} nodes; a level needs at least 4 nodes"
            )));
        }
        dims.push((cx, cy));
    }
    Ok(dims)
}

/// Structured-grid striding. Node `j * nx + i` sits at column `i`, row `j`.
pub fn grid_hierarchy(nx: usize, ny: usize, positions: &Array, levels: usize, ratio: Real) -> Result<Hierarchy> {
    let dims = grid_level_dims(nx, ny, levels, ratio)?;
    if positions.rows() != nx * ny || positions.cols() != 3 {
        return Err(Error::shape(
            "grid_hierarchy",
            format!("{nx} x {ny} grid but positions {:?}", positions.shape()),
        ));
    }
    let grid_edges = |cx: usize, cy: usize| {
        let mut pairs = Vec::new();
        for j in 0..cy {
            for i in 0..cx {
                let a = j * cx + i;
                if i + 1 < cx {
                    pairs.push((a, a + 1));
                }
                if j + 1 < cy {
                    pairs.push((a, a + cx));
                }
            }
        }
        pairs
    };
    let pick = |j: usize, n_fine: usize, n_k: usize| ((j * (n_fine - 1)) as Real / (n_k - 1) as Real).round() as usize;
    let finest = GraphTopology::from_undirected(nx * ny, grid_edges(nx, ny))?;
    let mut h = Hierarchy::single(finest, positions.clone())?;
    for &(cx, cy) in &dims[1..] {
        let mut anchors = Vec::with_capacity(cx * cy);
        for j in 0..cy {
            for i in 0..cx {
                anchors.push(pick(j, ny, cy) * nx + pick(i, nx, cx));
            }
        }
        let topo = GraphTopology::from_undirected(cx * cy, grid_edges(cx, cy))?;
        let pos = positions.select_rows(&anchors);
        h.push_level(topo, pos, anchors)?;
    }
    Ok(h)
}

/// Repeated application of one automated coarsening method.
pub fn automated_hierarchy(
    topology: &GraphTopology,
    positions: &Array,
    levels: usize,
    method: CoarsenMethod,
    seed: usize,
) -> Result<Hierarchy> {
    if levels == 0 {
        return Err(Error::Config("hierarchy needs at least one level".into()));
    }
    let mut h = Hierarchy::single(topology.clone(), positions.clone())?;
    for k in 1..levels {
        let prev = h.coarsest();
        let step = match method {
            CoarsenMethod::Gpartition => coarsen_gpartition(&prev.topology, &prev.positions)?,
            CoarsenMethod::Gpool => coarsen_gpool(&prev.topology, &prev.positions)?,
            CoarsenMethod::Bistride => coarsen_bistride(&prev.topology, &prev.positions, seed.min(prev.topology.n_nodes() - 1))?,
            CoarsenMethod::Grid => {
                return Err(Error::Config("grid coarsening needs grid dimensions".into()));
            }
        };
        if step.topology.n_nodes() >= prev.topology.n_nodes() {
            return Err(Error::Config(format!("level {k} does not reduce the node count")));
        }
        if step.topology.n_nodes() < 4 {
            return Err(Error::Config(format!(
                "level {k} would have {} nodes; a level needs at least 4 nodes",
                step.topology.n_nodes()
            )));
        }
        let anchors = anchors_for(positions, &step.positions);
        h.push_level(step.topology, step.positions, anchors)?;
    }
    Ok(h)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct HierarchyReport {
    pub violations: Vec<String>,
}

impl HierarchyReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn validate_hierarchy(h: &Hierarchy) -> HierarchyReport {
    let mut v = Vec::new();
    if h.levels.is_empty() {
        v.push("no levels".to_string());
        return HierarchyReport { violations: v };
    }
    if h.inter_level.len() + 1 != h.levels.len() {
        v.push(format!(
            "{} inter-level edge sets for {} levels",
            h.inter_level.len(),
            h.levels.len()
        ));
    }
    let n0 = h.levels[0].topology.n_nodes();
    if h.levels[0].anchors != (0..n0).collect::<Vec<_>>() {
        v.push("level 0 anchors are not the identity".into());
    }
    for (k, level) in h.levels.iter().enumerate() {
        let n = level.topology.n_nodes();
        if level.positions.rows() != n || level.positions.cols() != 3 {
            v.push(format!("level {k}: positions {:?} for {n} nodes", level.positions.shape()));
        }
        if level.anchors.len() != n {
            v.push(format!("level {k}: {} anchors for {n} nodes", level.anchors.len()));
        }
        if let Some(&bad) = level.anchors.iter().find(|&&a| a >= n0) {
            v.push(format!("level {k}: anchor {bad} out of range"));
        }
        if let Err(e) = level.topology.validate() {
            v.push(format!("level {k}: {e}"));
        }
        let comps = level.topology.components();
        if comps != 1 {
            v.push(format!("level {k}: graph has {comps} connected components"));
        }
        if k > 0 && n >= h.levels[k - 1].topology.n_nodes() {
            v.push(format!(
                "node counts not strictly decreasing: level {} has {}, level {k} has {n}",
                k - 1,
                h.levels[k - 1].topology.n_nodes()
            ));
        }
    }
    for (k, il) in h.inter_level.iter().enumerate() {
        let (Some(fine), Some(coarse)) = (h.levels.get(k), h.levels.get(k + 1)) else {
            continue;
        };
        let (nf, nc) = (fine.topology.n_nodes(), coarse.topology.n_nodes());
        let want = INTER_LEVEL_K.min(nc);
        if il.edges.windows(2).any(|w| w[0] >= w[1]) {
            v.push(format!("inter-level {k}: edges not in canonical (fine, coarse) order"));
        }
        let mut per_fine = vec![0usize; nf];
        for &(f, c) in &il.edges {
            if f >= nf || c >= nc {
                v.push(format!("inter-level {k}: edge ({f}, {c}) out of range"));
                continue;
            }
            per_fine[f] += 1;
        }
        for (f, &count) in per_fine.iter().enumerate() {
            if count != want {
                v.push(format!("inter-level {k}: fine node {f} has {count} edges, expected {want}"));
            }
        }
    }
    HierarchyReport { violations: v }
}

/// Small hand-traceable graphs with nodes placed at x = 0, 1, 2, ...
pub const FIXTURES: [&str; 3] = ["path", "star", "cycle"];

/// Five-node path, five-node star centred on node 0, or four-node cycle.
pub fn fixture_graph(name: &str) -> Result<(GraphTopology, Array)> {
    let (n, pairs): (usize, Vec<(usize, usize)>) = match name {
        "path" => (5, (1..5).map(|i| (i - 1, i)).collect()),
        "star" => (5, (1..5).map(|i| (0, i)).collect()),
        "cycle" => (4, vec![(0, 1), (1, 2), (2, 3), (3, 0)]),
        other => {
            return Err(Error::Config(format!(
                "unknown fixture graph `{other}` ({})",
                FIXTURES.join(", ")
            )))
        }
    };
    let positions = Array::from_parts(n, 3, (0..n).flat_map(|i| [i as Real, 0.0, 0.0]).collect());
    Ok((GraphTopology::from_undirected(n, pairs)?, positions))
}

/// One coarsening step with an automated method.
pub fn coarsen_once(method: CoarsenMethod, topology: &GraphTopology, positions: &Array, seed: usize) -> Result<Coarsened> {
    match method {
        CoarsenMethod::Gpartition => coarsen_gpartition(topology, positions),
        CoarsenMethod::Gpool => coarsen_gpool(topology, positions),
        CoarsenMethod::Bistride => coarsen_bistride(topology, positions, seed),
        CoarsenMethod::Grid => Err(Error::Config("grid coarsening needs grid dimensions".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn line_positions(n: usize) -> Array {
        Array::from_parts(n, 3, (0..n).flat_map(|i| [i as Real, 0.0, 0.0]).collect())
    }

    fn path(n: usize) -> GraphTopology {
        GraphTopology::from_undirected(n, (1..n).map(|i| (i - 1, i))).unwrap()
    }

    fn edges(t: &GraphTopology) -> Vec<(usize, usize)> {
        t.undirected().collect()
    }

    #[test]
    fn gpartition_path() {
        let c = coarsen_gpartition(&path(4), &line_positions(4)).unwrap();
        assert_eq!(c.map, vec![0, 0, 1, 1]);
        assert_eq!(edges(&c.topology), vec![(0, 1)]);
        assert_eq!(c.positions.row(0), &[0.5, 0.0, 0.0]);
        assert_eq!(c.positions.row(1), &[2.5, 0.0, 0.0]);
    }

    #[test]
    fn gpartition_triangle_and_single() {
        let tri = GraphTopology::from_undirected(3, [(0, 1), (1, 2), (0, 2)]).unwrap();
        let c = coarsen_gpartition(&tri, &line_positions(3)).unwrap();
        assert_eq!(c.map, vec![0, 0, 1]);
        assert_eq!(edges(&c.topology), vec![(0, 1)]);
        let one = GraphTopology::from_undirected(1, []).unwrap();
        let c = coarsen_gpartition(&one, &line_positions(1)).unwrap();
        assert_eq!((c.map, c.topology.n_nodes()), (vec![0], 1));
    }

    #[test]
    fn gpool_star_path_isolated() {
        let star = GraphTopology::from_undirected(5, (1..5).map(|i| (0, i))).unwrap();
        let c = coarsen_gpool(&star, &line_positions(5)).unwrap();
        assert_eq!(c.map, vec![0; 5]);
        assert_eq!(c.topology.n_edges(), 0);

        let c = coarsen_gpool(&path(5), &line_positions(5)).unwrap();
        assert_eq!(c.map, vec![0, 0, 1, 1, 2]);
        assert_eq!(edges(&c.topology), vec![(0, 1), (1, 2)]);

        let iso = GraphTopology::from_undirected(1, []).unwrap();
        assert_eq!(coarsen_gpool(&iso, &line_positions(1)).unwrap().map, vec![0]);
    }

    #[test]
    fn bistride_path_cycle_single() {
        // nodes 1..5 of the hand trace are indices 0..4 here
        let c = coarsen_bistride(&path(5), &line_positions(5), 0).unwrap();
        assert_eq!(c.topology.n_nodes(), 3);
        assert_eq!(c.positions.data().chunks(3).map(|p| p[0]).collect::<Vec<_>>(), vec![0.0, 2.0, 4.0]);
        assert_eq!(edges(&c.topology), vec![(0, 1), (1, 2)]);
        assert_eq!(c.map, vec![0, 0, 1, 1, 2]);

        let cycle = GraphTopology::from_undirected(4, [(0, 1), (1, 2), (2, 3), (3, 0)]).unwrap();
        let c = coarsen_bistride(&cycle, &line_positions(4), 0).unwrap();
        assert_eq!(c.positions.data().chunks(3).map(|p| p[0]).collect::<Vec<_>>(), vec![0.0, 2.0]);
        assert_eq!(edges(&c.topology), vec![(0, 1)]);

        let one = GraphTopology::from_undirected(1, []).unwrap();
        assert_eq!(coarsen_bistride(&one, &line_positions(1), 0).unwrap().topology.n_nodes(), 1);
    }

    #[test]
    fn bistride_disconnected_components_seed_lowest() {
        let t = GraphTopology::from_undirected(6, [(0, 1), (1, 2), (3, 4), (4, 5)]).unwrap();
        let c = coarsen_bistride(&t, &line_positions(6), 1).unwrap();
        // component {0,1,2} seeded at 1 keeps 1; component {3,4,5} seeded at 3 keeps 3, 5
        assert_eq!(c.positions.data().chunks(3).map(|p| p[0]).collect::<Vec<_>>(), vec![1.0, 3.0, 5.0]);
    }

    #[test]
    fn empty_graph_rejected() {
        let t = GraphTopology::from_undirected(0, []).unwrap();
        assert!(matches!(coarsen_gpool(&t, &Array::zeros(0, 3)), Err(Error::Empty(_))));
    }

    fn grid_positions(nx: usize, ny: usize) -> Array {
        let mut p = Vec::new();
        for j in 0..ny {
            for i in 0..nx {
                p.extend([i as Real * 10.0, j as Real * 10.0, 0.0]);
            }
        }
        Array::from_parts(nx * ny, 3, p)
    }

    #[test]
    fn grid_counts() {
        let h = grid_hierarchy(15, 15, &grid_positions(15, 15), 3, 3.0).unwrap();
        assert_eq!(h.node_counts(), vec![225, 81, 25]);
        assert!(validate_hierarchy(&h).is_ok(), "{:?}", validate_hierarchy(&h));
        let four = grid_hierarchy(15, 15, &grid_positions(15, 15), 4, 3.0).unwrap();
        assert_eq!(four.node_counts(), vec![225, 81, 25, 9]);
        let one = grid_hierarchy(15, 15, &grid_positions(15, 15), 1, 3.0).unwrap();
        assert_eq!(one.node_counts(), vec![225]);
        assert!(one.inter_level.is_empty());
        assert!(grid_hierarchy(15, 15, &grid_positions(15, 15), 6, 3.0).is_err());
        assert!(matches!(grid_level_dims(15, 15, 3, 1.5), Err(Error::Config(_))));
    }

    #[test]
    fn grid_anchors_are_exact_and_corners_kept() {
        let pos = grid_positions(15, 15);
        let h = grid_hierarchy(15, 15, &pos, 3, 3.0).unwrap();
        for level in &h.levels {
            assert_eq!(level.positions, pos.select_rows(&level.anchors));
        }
        let top = h.coarsest();
        assert_eq!(top.anchors[0], 0);
        assert_eq!(*top.anchors.last().unwrap(), 224);
    }

    #[test]
    fn interlevel_examples() {
        let coarse = Array::from_rows(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [5.0, 5.0, 0.0]]).unwrap();
        let fine = Array::from_rows(&[[0.0, 0.0, 0.0]]).unwrap();
        assert_eq!(build_interlevel_edges(&fine, &coarse).unwrap(), vec![(0, 0), (0, 1), (0, 2)]);
        let two = coarse.select_rows(&[0, 3]);
        let fine = Array::from_rows(&[[0.0, 0.0, 0.0], [9.0, 9.0, 9.0]]).unwrap();
        assert_eq!(build_interlevel_edges(&fine, &two).unwrap().len(), 4);
        assert!(build_interlevel_edges(&fine, &Array::zeros(0, 3)).is_err());
    }

    #[test]
    fn interlevel_ties_go_to_lowest_index() {
        let coarse = Array::from_rows(&[
            [1.0, 0.0, 0.0],
            [-1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, -1.0, 0.0],
            [0.0, 0.0, 1.0],
        ])
        .unwrap();
        let fine = Array::zeros(1, 3);
        assert_eq!(build_interlevel_edges(&fine, &coarse).unwrap(), vec![(0, 0), (0, 1), (0, 2)]);
    }

    #[test]
    fn interlevel_matches_exhaustive_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let pts = |n: usize, rng: &mut ChaCha8Rng| {
            Array::from_parts(n, 3, (0..n * 3).map(|_| rng.random_range(-100.0..100.0)).collect())
        };
        let coarse = pts(200, &mut rng);
        let fine = pts(200, &mut rng);
        let edges = build_interlevel_edges(&fine, &coarse).unwrap();
        for f in 0..200 {
            let mut want = k_nearest_brute_force(&coarse, fine.row(f), 3);
            want.sort_unstable();
            let got: Vec<usize> = edges[f * 3..f * 3 + 3].iter().map(|e| e.1).collect();
            assert_eq!(got, want);
        }
    }

    #[test]
    fn validator_names_violations() {
        let pos = grid_positions(15, 15);
        let mut h = grid_hierarchy(15, 15, &pos, 3, 3.0).unwrap();
        h.inter_level[0].edges.remove(0);
        let r = validate_hierarchy(&h);
        assert!(r.violations.iter().any(|s| s.contains("fine node 0 has 2 edges")), "{r:?}");

        let mut h = grid_hierarchy(15, 15, &pos, 3, 3.0).unwrap();
        h.levels.swap(1, 2);
        let r = validate_hierarchy(&h);
        assert!(r.violations.iter().any(|s| s.contains("not strictly decreasing")), "{r:?}");
    }

    #[test]
    fn automated_hierarchies_validate() {
        let pos = grid_positions(15, 15);
        let base = grid_hierarchy(15, 15, &pos, 1, 3.0).unwrap();
        let topo = &base.finest().topology;
        for method in [CoarsenMethod::Gpartition, CoarsenMethod::Gpool, CoarsenMethod::Bistride] {
            let h = automated_hierarchy(topo, &pos, 3, method, 0).unwrap();
            assert!(validate_hierarchy(&h).is_ok(), "{method}: {:?}", validate_hierarchy(&h));
            let again = automated_hierarchy(topo, &pos, 3, method, 0).unwrap();
            assert_eq!(h, again);
        }
    }

    #[test]
    fn json_round_trip() {
        let h = grid_hierarchy(7, 7, &grid_positions(7, 7), 2, 3.0).unwrap();
        let back = Hierarchy::from_json(&h.to_json().unwrap(), Path::new("mem")).unwrap();
        assert_eq!(back, h);
    }

    fn random_connected(rng: &mut ChaCha8Rng, n: usize) -> GraphTopology {
        let mut pairs: Vec<(usize, usize)> = (1..n).map(|i| (rng.random_range(0..i), i)).collect();
        for _ in 0..n {
            let (a, b) = (rng.random_range(0..n), rng.random_range(0..n));
            pairs.push((a, b));
        }
        GraphTopology::from_undirected(n, pairs).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn cluster_maps_are_total_and_surjective(seed in 0u64..10_000, n in 1usize..40) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = random_connected(&mut rng, n);
            let pos = line_positions(n);
            for c in [coarsen_gpartition(&t, &pos).unwrap(), coarsen_gpool(&t, &pos).unwrap()] {
                prop_assert_eq!(c.map.len(), n);
                let hit: BTreeSet<usize> = c.map.iter().copied().collect();
                prop_assert_eq!(hit, (0..c.topology.n_nodes()).collect::<BTreeSet<_>>());
                c.topology.validate().unwrap();
            }
        }

        #[test]
        fn bistride_keeps_even_depths(seed in 0u64..10_000, n in 1usize..40) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = random_connected(&mut rng, n);
            let s = rng.random_range(0..n);
            let c = coarsen_bistride(&t, &line_positions(n), s).unwrap();
            // BFS depths reference
            let adj = t.neighbors();
            let mut depth = vec![usize::MAX; n];
            depth[s] = 0;
            let mut q = VecDeque::from([s]);
            while let Some(u) = q.pop_front() {
                for &v in &adj[u] {
                    if depth[v] == usize::MAX {
                        depth[v] = depth[u] + 1;
                        q.push_back(v);
                    }
                }
            }
            let kept: Vec<usize> = c.positions.data().chunks(3).map(|p| p[0] as usize).collect();
            prop_assert!(kept.iter().all(|&k| depth[k] % 2 == 0));
            prop_assert_eq!(kept.len(), depth.iter().filter(|d| *d % 2 == 0).count());
            prop_assert_eq!(c.topology.components(), 1);
        }
    }
}
