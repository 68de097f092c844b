//! Feature assembly for forming samples and the autoregressive driver
//! shared by training and evaluation.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Array, Real};
use crate::coarsen::Hierarchy;
use crate::contact::{contact_features, ContactScene, DEFAULT_D_MIN};
use crate::error::{Error, Result};
use crate::meshgraph::{edge_features, node_features, FeatureSchema, GraphTopology, TimestepGraph};
use crate::oracle::FormingSample;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureOptions {
    /// Distance clamp before inversion, mm.
    pub d_min: Real,
    /// Append fixed-direction flags to the node features.
    pub boundary_onehot: bool,
}

impl Default for FeatureOptions {
    fn default() -> Self {
        Self {
            d_min: DEFAULT_D_MIN,
            boundary_onehot: true,
        }
    }
}

impl FeatureOptions {
    pub fn schema(&self) -> FeatureSchema {
        FeatureSchema {
            boundary_onehot: self.boundary_onehot,
        }
    }
}

/// Coarsest hierarchy level as seen by the coarse edge encoder.
#[derive(Debug, Clone)]
struct CoarseView {
    anchors: Vec<usize>,
    topology: GraphTopology,
}

/// One sample prepared for feature assembly against a fixed hierarchy.
#[derive(Debug, Clone)]
pub struct SampleContext {
    pub sample: FormingSample,
    topology: GraphTopology,
    scene: ContactScene,
    coarse: Option<CoarseView>,
    options: FeatureOptions,
}

impl SampleContext {
    pub fn new(sample: &FormingSample, hierarchy: &Hierarchy, options: FeatureOptions) -> Result<Self> {
        if !(options.d_min > 0.0) {
            return Err(Error::Config(format!("d_min must be positive, got {}", options.d_min)));
        }
        let topology = sample.topology()?;
        if topology != hierarchy.finest().topology {
            return Err(Error::Data(format!(
                "sample {} mesh ({} nodes, {} edges) does not match the hierarchy's finest level ({} nodes, {} edges)",
                sample.name,
                topology.n_nodes(),
                topology.n_edges(),
                hierarchy.finest().topology.n_nodes(),
                hierarchy.finest().topology.n_edges()
            )));
        }
        let coarse = (hierarchy.depth() > 1).then(|| {
            let top = hierarchy.coarsest();
            CoarseView {
                anchors: top.anchors.clone(),
                topology: top.topology.clone(),
            }
        });
        Ok(Self {
            sample: sample.clone(),
            topology,
            scene: sample.scene()?,
            coarse,
            options,
        })
    }

    pub fn intervals(&self) -> usize {
        self.sample.intervals()
    }

    pub fn n_nodes(&self) -> usize {
        self.sample.n_nodes()
    }

    pub fn truth(&self) -> &[Array] {
        &self.sample.positions
    }

    /// Features of timestep `t` at arbitrary blank positions. Contact is
    /// measured against the tools' prescribed poses at `t`.
    pub fn graph_at(&self, t: usize, x_t: &Array, x_prev: Option<&Array>) -> Result<TimestepGraph> {
        let s = &self.sample;
        if t >= s.poses.len() {
            return Err(Error::Index {
                op: "graph_at",
                index: t,
                limit: s.poses.len(),
            });
        }
        let x0 = &s.positions[0];
        let contact = contact_features(x_t, &self.scene, &s.poses[t], self.options.d_min)?.to_array();
        let coarse_edge_feats = match &self.coarse {
            Some(c) => Some(edge_features(
                &x0.select_rows(&c.anchors),
                &x_t.select_rows(&c.anchors),
                &c.topology,
            )?),
            None => None,
        };
        Ok(TimestepGraph {
            node_feats: node_features(x_t, x_prev, &s.blank.boundary, self.options.schema())?,
            contact_feats: contact,
            edge_feats: edge_features(x0, x_t, &self.topology)?,
            global_feats: Array::from_parts(1, 2, vec![s.dt, s.stroke_at(t)]),
            coarse_edge_feats,
            target: None,
        })
    }

    /// Ground-truth inputs and targets for every interval.
    pub fn teacher_graphs(&self) -> Result<Vec<TimestepGraph>> {
        let x = &self.sample.positions;
        (0..self.intervals())
            .map(|t| {
                let mut g = self.graph_at(t, &x[t], t.checked_sub(1).map(|p| &x[p]))?;
                g.target = Some(x[t + 1].zip_map(&x[t], |a, b| a - b)?);
                Ok(g)
            })
            .collect()
    }
}

/// Positions and displacements of one autoregressive rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// `T + 1` position arrays; index 0 is the undeformed blank.
    pub positions: Vec<Array>,
    /// `T` predicted displacements.
    pub displacements: Vec<Array>,
}

/// Rolls a step function forward from the undeformed blank. `step`
/// receives the timestep and its features and returns the physical
/// displacement to the next timestep.
pub fn drive_rollout(
    ctx: &SampleContext,
    mut step: impl FnMut(usize, &TimestepGraph) -> Result<Array>,
) -> Result<Trajectory> {
    let n = ctx.n_nodes();
    let mut positions = vec![ctx.truth()[0].clone()];
    let mut displacements = Vec::with_capacity(ctx.intervals());
    for t in 0..ctx.intervals() {
        let g = ctx.graph_at(t, &positions[t], t.checked_sub(1).map(|p| &positions[p]))?;
        let d = step(t, &g)?;
        if d.rows() != n || d.cols() != 3 {
            return Err(Error::shape("rollout", format!("step returned {:?}, expected {n} x 3", d.shape())));
        }
        if !d.is_finite() {
            return Err(Error::RolloutNonFinite { step: t + 1 });
        }
        let next = positions[t].zip_map(&d, |a, b| a + b)?;
        positions.push(next);
        displacements.push(d);
    }
    Ok(Trajectory {
        positions,
        displacements,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coarsen::grid_hierarchy;
    use crate::meshgraph::assemble_timestep;
    use crate::meshgraph::SequenceView;
    use crate::oracle::{simulate_forming, DomeParams, OracleConfig};

    fn sample() -> FormingSample {
        let cfg = OracleConfig {
            nx: 7,
            ny: 7,
            ..OracleConfig::default()
        };
        simulate_forming(&cfg, DomeParams::new(70.0, 12.0).unwrap(), 0, "s").unwrap().sample
    }

    fn hierarchy(s: &FormingSample) -> Hierarchy {
        grid_hierarchy(7, 7, &s.blank.positions, 2, 3.0).unwrap()
    }

    #[test]
    fn teacher_graphs_match_sequence_assembly() {
        let s = sample();
        let h = hierarchy(&s);
        let ctx = SampleContext::new(&s, &h, FeatureOptions::default()).unwrap();
        let graphs = ctx.teacher_graphs().unwrap();
        assert_eq!(graphs.len(), 10);
        let topo = s.topology().unwrap();
        for (t, g) in graphs.iter().enumerate() {
            let seq = SequenceView {
                positions: &s.positions,
                boundary: &s.blank.boundary,
                topology: &topo,
                dt: s.dt,
                stroke: s.stroke_at(t),
                intervals: 10,
            };
            let reference = assemble_timestep(seq, t, g.contact_feats.clone(), FeatureSchema::default()).unwrap();
            assert_eq!(g.node_feats, reference.node_feats);
            assert_eq!(g.edge_feats, reference.edge_feats);
            assert_eq!(g.global_feats, reference.global_feats);
            assert_eq!(g.target, reference.target);
            let coarse = g.coarse_edge_feats.as_ref().unwrap();
            assert_eq!(coarse, &h.coarse_edge_features(&s.positions[0], &s.positions[t]).unwrap());
        }
        // Global stroke grows with the punch travel.
        assert_eq!(graphs[0].global_feats.get(0, 1), 0.0);
        assert!((graphs[9].global_feats.get(0, 1) - 0.9 * s.stroke).abs() < 1e-12);
    }

    #[test]
    fn single_level_hierarchy_has_no_coarse_edges() {
        let s = sample();
        let h = Hierarchy::single(s.topology().unwrap(), s.blank.positions.clone()).unwrap();
        let ctx = SampleContext::new(&s, &h, FeatureOptions::default()).unwrap();
        assert!(ctx.graph_at(0, &s.positions[0], None).unwrap().coarse_edge_feats.is_none());
    }

    #[test]
    fn mismatched_hierarchy_is_a_data_error() {
        let s = sample();
        let other = simulate_forming(
            &OracleConfig {
                nx: 6,
                ny: 6,
                ..OracleConfig::default()
            },
            DomeParams::new(70.0, 12.0).unwrap(),
            0,
            "o",
        )
        .unwrap()
        .sample;
        let h = hierarchy(&s);
        assert!(matches!(
            SampleContext::new(&other, &h, FeatureOptions::default()),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn driver_accumulates_and_flags_non_finite_steps() {
        let s = sample();
        let h = hierarchy(&s);
        let ctx = SampleContext::new(&s, &h, FeatureOptions::default()).unwrap();
        let truth = ctx.truth().to_vec();
        let exact = drive_rollout(&ctx, |t, _| truth[t + 1].zip_map(&truth[t], |a, b| a - b)).unwrap();
        for (p, q) in exact.positions.iter().zip(&truth) {
            assert!(p.zip_map(q, |a, b| a - b).unwrap().max_abs() < 1e-12);
        }
        let mut acc = exact.positions[0].clone();
        for (t, d) in exact.displacements.iter().enumerate() {
            acc = acc.zip_map(d, |a, b| a + b).unwrap();
            assert_eq!(acc, exact.positions[t + 1]);
        }
        let err = drive_rollout(&ctx, |t, g| {
            let mut d = Array::zeros(g.n_nodes(), 3);
            if t == 3 {
                d.set(0, 0, Real::NAN);
            }
            Ok(d)
        })
        .unwrap_err();
        assert!(matches!(err, Error::RolloutNonFinite { step: 4 }));
    }

    #[test]
    fn rollout_contact_follows_predicted_positions() {
        let s = sample();
        let h = hierarchy(&s);
        let ctx = SampleContext::new(&s, &h, FeatureOptions::default()).unwrap();
        let mut seen = Vec::new();
        let traj = drive_rollout(&ctx, |_, g| {
            seen.push(g.contact_feats.clone());
            Ok(Array::full(g.n_nodes(), 3, -1.0))
        })
        .unwrap();
        for t in 0..10 {
            let expected = contact_features(&traj.positions[t], &s.scene().unwrap(), &s.poses[t], DEFAULT_D_MIN)
                .unwrap()
                .to_array();
            assert_eq!(seen[t], expected);
        }
    }
}
