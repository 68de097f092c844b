//! Self-checks shared by the command line and the test suites: gradient
//! integrity of a tiny network and contact search against exhaustive scan.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::check::{check_params, GradCheckReport};
use crate::autodiff::{Array, ParamStore, Real, Tape};
use crate::coarsen::{build_interlevel_edges, Hierarchy, InterLevel, Level};
use crate::contact::{contact_check_report, ContactCheckReport};
use crate::error::Result;
use crate::meshgraph::{GraphTopology, TimestepGraph};
use crate::net::{Hidden, HiddenArrays, HiddenInit, Model, ModelConfig, Variant};
use crate::oracle::FormingSample;

/// Central-difference step.
pub const FD_STEP: Real = 1e-6;
/// Gradients smaller than this compare on an absolute scale.
pub const FD_FLOOR: Real = 1e-3;

/// A 3 x 2 grid with its four corners as the coarse level.
pub fn six_node_hierarchy() -> Result<Hierarchy> {
    let mut p = Vec::new();
    for j in 0..2 {
        for i in 0..3 {
            p.extend([i as Real * 10.0, j as Real * 10.0, 0.0]);
        }
    }
    let pos = Array::new(vec![6, 3], p)?;
    let fine = GraphTopology::from_undirected(6, [(0, 1), (1, 2), (3, 4), (4, 5), (0, 3), (1, 4), (2, 5)])?;
    let anchors = vec![0, 2, 3, 5];
    let coarse_pos = pos.select_rows(&anchors);
    let coarse = GraphTopology::from_undirected(4, [(0, 1), (2, 3), (0, 2), (1, 3)])?;
    let edges = build_interlevel_edges(&pos, &coarse_pos)?;
    Ok(Hierarchy {
        levels: vec![
            Level {
                topology: fine,
                positions: pos,
                anchors: (0..6).collect(),
            },
            Level {
                topology: coarse,
                positions: coarse_pos,
                anchors,
            },
        ],
        inter_level: vec![InterLevel { edges }],
    })
}

/// Two-level RUGNN with width 4 and one, two and one layers per block.
pub fn tiny_rugnn_config() -> ModelConfig {
    ModelConfig {
        variant: Variant::Rugnn,
        widths: vec![4, 4],
        layers: [1, 2, 1],
        global_width: 4,
        node_features: 6,
        contact: true,
        hidden_init: HiddenInit::Zero,
        decoder_layer_norm: false,
    }
}

fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Result<Array> {
    Array::new(vec![rows, cols], (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect())
}

/// Single-timestep loss `sum((pred - target)^2) / 3N` and its gradients.
pub fn step_loss(
    model: &Model,
    store: &ParamStore,
    g: &TimestepGraph,
    hidden: &HiddenArrays,
) -> Result<(Real, BTreeMap<String, Array>)> {
    let mut tape = Tape::new();
    let p = store.bind(&mut tape);
    let h = Hidden::from_arrays(&mut tape, hidden);
    let (out, _) = model.forward(&mut tape, &p, g, &h)?;
    let target = tape.constant(g.target.clone().unwrap_or_else(|| Array::zeros(g.n_nodes(), 3)));
    let diff = tape.sub(out, target)?;
    let sq = tape.sum_squares(diff)?;
    let loss = tape.scale(sq, 1.0 / (3.0 * g.n_nodes() as Real))?;
    let grads = tape.backward(loss)?;
    Ok((tape.value(loss).data()[0], p.gradients(&grads)))
}

/// Finite-difference check of every parameter of a tiny RUGNN on random
/// features, targets and nonzero hidden states.
pub fn gradcheck_tiny_rugnn(seed: u64) -> Result<GradCheckReport> {
    let h = six_node_hierarchy()?;
    let model = Model::new(tiny_rugnn_config(), &h)?;
    let store = model.init_params(seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fine_e = h.finest().topology.n_edges();
    let coarse_e = h.coarsest().topology.n_edges();
    let g = TimestepGraph {
        node_feats: random(6, 6, &mut rng)?,
        contact_feats: random(6, 4, &mut rng)?,
        edge_feats: random(fine_e, 8, &mut rng)?,
        global_feats: random(1, 2, &mut rng)?,
        coarse_edge_feats: Some(random(coarse_e, 8, &mut rng)?),
        target: Some(random(6, 3, &mut rng)?),
    };
    let hidden = HiddenArrays {
        blocks: [
            Some(random(fine_e, 4, &mut rng)?),
            Some(random(coarse_e, 4, &mut rng)?),
            Some(random(fine_e, 4, &mut rng)?),
        ],
        updates: 1,
    };
    let (_, analytic) = step_loss(&model, &store, &g, &hidden)?;
    check_params(&store, &analytic, FD_STEP, FD_FLOOR, |s| Ok(step_loss(&model, s, &g, &hidden)?.0))
}

/// Indexed contact search against exhaustive scan at every timestep of a
/// sample, using the true blank positions. Returns the worst report.
pub fn contact_check_sample(sample: &FormingSample) -> Result<ContactCheckReport> {
    let scene = sample.scene()?;
    let mut worst = ContactCheckReport::default();
    for (x, poses) in sample.positions.iter().zip(&sample.poses) {
        let r = contact_check_report(x, &scene, poses)?;
        worst.element_mismatches += r.element_mismatches;
        if r.max_deviation >= worst.max_deviation {
            worst.max_deviation = r.max_deviation;
            worst.rows = r.rows;
        }
    }
    Ok(worst)
}
