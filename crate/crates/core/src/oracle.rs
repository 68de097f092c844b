//! Synthetic dome-forming data: parametric tools, Latin hypercube sampling
//! and a quasi-static spring-network sheet simulator.
//!
//! The blank is a structured quad grid over one quarter of the part with
//! symmetry planes `x = 0` and `y = 0`. A rigid punch descends in equal
//! increments; after each increment nodes inside the punch are pushed back
//! onto its surface and the free coordinates relax by projected gradient
//! descent on a spring energy. Nodes in the outer holder band are clamped.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Array, Real};
use crate::contact::{ContactScene, Point, Pose, RigidSurface, Triangle};
use crate::error::{Error, Result};
use crate::meshgraph::{mesh_to_topology, GraphTopology, Mesh};
use crate::persist;

pub const R_DOME_RANGE: (Real, Real) = (60.0, 120.0);
pub const R_FILLET_RANGE: (Real, Real) = (10.0, 20.0);
pub const DATASET_FORMAT: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomeParams {
    pub r_dome: Real,
    pub r_fillet: Real,
}

impl DomeParams {
    pub fn new(r_dome: Real, r_fillet: Real) -> Result<Self> {
        let p = Self { r_dome, r_fillet };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let inside = |v: Real, (lo, hi): (Real, Real)| v.is_finite() && v >= lo && v <= hi;
        if !inside(self.r_dome, R_DOME_RANGE) || !inside(self.r_fillet, R_FILLET_RANGE) {
            return Err(Error::Config(format!(
                "dome parameters out of range: R_dome {} (60..120 mm), R_fillet {} (10..20 mm)",
                self.r_dome, self.r_fillet
            )));
        }
        Ok(())
    }
}

/// SplitMix64 step, used to derive independent seeds from a master seed.
pub fn derive_seed(master: u64, a: u64, b: u64) -> u64 {
    let mut z = master
        .wrapping_add(a.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(b.wrapping_mul(0xD1B5_4A32_D192_ED03))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Latin hypercube design in the unit cube: one point per stratum on every
/// axis, strata paired by independent random permutations.
pub fn lhc_unit(n: usize, dims: usize, seed: u64) -> Result<Vec<Vec<Real>>> {
    if n == 0 {
        return Err(Error::Config("Latin hypercube needs at least one sample".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = vec![vec![0.0; dims]; n];
    for d in 0..dims {
        let mut strata: Vec<usize> = (0..n).collect();
        strata.shuffle(&mut rng);
        for (point, &s) in points.iter_mut().zip(&strata) {
            let u: Real = rng.random();
            point[d] = (s as Real + u) / n as Real;
        }
    }
    Ok(points)
}

/// Dome tool parameters drawn by Latin hypercube over `ranges`
/// (`[R_dome, R_fillet]`).
pub fn lhc_sample(n: usize, ranges: [(Real, Real); 2], seed: u64) -> Result<Vec<DomeParams>> {
    for (lo, hi) in ranges {
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::Config(format!("invalid sampling range [{lo}, {hi}]")));
        }
    }
    lhc_unit(n, 2, seed)?
        .into_iter()
        .map(|u| {
            let at = |k: usize| ranges[k].0 + (ranges[k].1 - ranges[k].0) * u[k];
            DomeParams::new(at(0), at(1))
        })
        .collect()
}

/// Axisymmetric tool cross-section `z(r)`: spherical cap blended into a
/// flat flange by a concave fillet. The punch flange sits at `z = 0` with
/// the apex below it; an offset profile keeps both circle centres and
/// moves the surface `offset` further from the punch body.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DomeProfile {
    cap_radius: Real,
    cap_center_z: Real,
    fillet_radius: Real,
    fillet_center_z: Real,
    footprint: Real,
    tangent_radius: Real,
}

impl DomeProfile {
    pub fn punch(params: DomeParams, footprint: Real) -> Result<Self> {
        let (r, rf) = (params.r_dome, params.r_fillet);
        if !(footprint > 0.0 && r + rf > footprint) {
            return Err(Error::Config(format!(
                "footprint radius {footprint} mm must be positive and below R_dome + R_fillet"
            )));
        }
        let depth = r + rf - ((r + rf) * (r + rf) - footprint * footprint).sqrt();
        Ok(Self {
            cap_radius: r,
            cap_center_z: r - depth,
            fillet_radius: rf,
            fillet_center_z: -rf,
            footprint,
            tangent_radius: footprint * r / (r + rf),
        })
    }

    pub fn offset(&self, offset: Real) -> Result<Self> {
        if !(offset >= 0.0 && offset < self.fillet_radius) {
            return Err(Error::Config(format!(
                "tool offset {offset} mm must lie in [0, R_fillet)"
            )));
        }
        let cap_radius = self.cap_radius + offset;
        let sum = self.cap_radius + self.fillet_radius;
        Ok(Self {
            cap_radius,
            fillet_radius: self.fillet_radius - offset,
            tangent_radius: self.footprint * cap_radius / sum,
            ..*self
        })
    }

    pub fn height(&self, r: Real) -> Real {
        if r <= self.tangent_radius {
            self.cap_center_z - (self.cap_radius * self.cap_radius - r * r).max(0.0).sqrt()
        } else if r < self.footprint {
            let dr = r - self.footprint;
            self.fillet_center_z + (self.fillet_radius * self.fillet_radius - dr * dr).max(0.0).sqrt()
        } else {
            self.flange_z()
        }
    }

    pub fn flange_z(&self) -> Real {
        self.fillet_center_z + self.fillet_radius
    }

    pub fn apex_z(&self) -> Real {
        self.cap_center_z - self.cap_radius
    }

    /// Vertical distance from flange to apex.
    pub fn depth(&self) -> Real {
        self.flange_z() - self.apex_z()
    }

    pub fn cap_radius(&self) -> Real {
        self.cap_radius
    }

    pub fn cap_center(&self) -> Point {
        [0.0, 0.0, self.cap_center_z]
    }

    pub fn tangent_radius(&self) -> Real {
        self.tangent_radius
    }

    pub fn footprint(&self) -> Real {
        self.footprint
    }
}

/// Polar triangulation of one quarter of an axisymmetric tool.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToolMeshSpec {
    pub sectors: usize,
    pub cap_rings: usize,
    pub fillet_rings: usize,
    pub flange_rings: usize,
    /// Outer radius of the flange, mm.
    pub outer_radius: Real,
}

impl Default for ToolMeshSpec {
    fn default() -> Self {
        Self {
            sectors: 24,
            cap_rings: 24,
            fillet_rings: 12,
            flange_rings: 8,
            outer_radius: 300.0,
        }
    }
}

impl ToolMeshSpec {
    pub fn triangle_count(&self) -> usize {
        let rings = self.cap_rings + self.fillet_rings + self.flange_rings;
        self.sectors * (2 * rings - 1)
    }

    fn validate(&self, profile: &DomeProfile) -> Result<()> {
        if self.sectors == 0 || self.cap_rings == 0 || self.fillet_rings == 0 || self.flange_rings == 0 {
            return Err(Error::Config("tool mesh needs at least one sector and ring per zone".into()));
        }
        if !(self.outer_radius > profile.footprint) {
            return Err(Error::Config(format!(
                "tool outer radius {} mm must exceed the footprint {} mm",
                self.outer_radius, profile.footprint
            )));
        }
        Ok(())
    }
}

/// Piecewise-linear height field of a polar tool mesh, for exact
/// penetration tests against the triangulated surface.
#[derive(Debug, Clone, PartialEq)]
pub struct HeightField {
    /// Ring radii with a leading 0 for the centre vertex.
    radii: Vec<Real>,
    sectors: usize,
    triangles: Vec<Triangle>,
}

impl HeightField {
    fn cell_triangles(&self, ring: usize, sector: usize) -> std::ops::Range<usize> {
        if ring == 0 {
            sector..sector + 1
        } else {
            let base = self.sectors + 2 * ((ring - 1) * self.sectors + sector);
            base..base + 2
        }
    }

    pub fn outer_radius(&self) -> Real {
        *self.radii.last().unwrap_or(&0.0)
    }

    /// Surface height at `(x, y)` in the tool frame; the quarter mesh is
    /// mirrored across both symmetry planes. `None` beyond the outer radius.
    pub fn height_at(&self, x: Real, y: Real) -> Option<Real> {
        let (x, y) = (x.abs(), y.abs());
        let r = x.hypot(y);
        if r > self.outer_radius() {
            return None;
        }
        let n_cells = self.radii.len() - 1;
        let ring = (self.radii.partition_point(|&ri| ri <= r).max(1) - 1).min(n_cells - 1);
        let dtheta = std::f64::consts::FRAC_PI_2 as Real / self.sectors as Real;
        let sector = ((y.atan2(x) / dtheta).floor().max(0.0) as usize).min(self.sectors - 1);
        let mut best: Option<(Real, Real)> = None;
        for i in ring.saturating_sub(1)..=(ring + 1).min(n_cells - 1) {
            for j in sector.saturating_sub(1)..=(sector + 1).min(self.sectors - 1) {
                for k in self.cell_triangles(i, j) {
                    let (w, z) = barycentric_height(&self.triangles[k], x, y);
                    if best.is_none_or(|(bw, _)| w > bw) {
                        best = Some((w, z));
                    }
                }
            }
        }
        best.map(|(_, z)| z)
    }
}

/// Smallest barycentric weight of `(x, y)` in the triangle's projection and
/// the interpolated height.
fn barycentric_height(tri: &Triangle, x: Real, y: Real) -> (Real, Real) {
    let [a, b, c] = tri;
    let det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
    let l1 = ((x - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (y - a[1])) / det;
    let l2 = ((b[0] - a[0]) * (y - a[1]) - (x - a[0]) * (b[1] - a[1])) / det;
    let l0 = 1.0 - l1 - l2;
    (l0.min(l1).min(l2), l0 * a[2] + l1 * b[2] + l2 * c[2])
}

/// Triangulated quarter tool and its height field.
#[derive(Debug, Clone)]
pub struct ToolGeometry {
    pub surface: RigidSurface,
    pub field: HeightField,
}

pub fn triangulate_profile(profile: &DomeProfile, spec: &ToolMeshSpec) -> Result<ToolGeometry> {
    spec.validate(profile)?;
    let mut radii = vec![0.0];
    let zones = [
        (0.0, profile.tangent_radius, spec.cap_rings),
        (profile.tangent_radius, profile.footprint, spec.fillet_rings),
        (profile.footprint, spec.outer_radius, spec.flange_rings),
    ];
    for (lo, hi, n) in zones {
        for k in 1..=n {
            radii.push(if k == n { hi } else { lo + (hi - lo) * k as Real / n as Real });
        }
    }
    let dtheta = std::f64::consts::FRAC_PI_2 as Real / spec.sectors as Real;
    let vertex = |i: usize, j: usize| -> Point {
        let r = radii[i];
        let z = profile.height(r);
        if i == 0 {
            return [0.0, 0.0, z];
        }
        let (s, c) = if j == 0 {
            (0.0, 1.0)
        } else if j == spec.sectors {
            (1.0, 0.0)
        } else {
            (j as Real * dtheta).sin_cos()
        };
        [r * c, r * s, z]
    };
    let mut triangles = Vec::with_capacity(spec.triangle_count());
    for j in 0..spec.sectors {
        triangles.push([vertex(0, 0), vertex(1, j), vertex(1, j + 1)]);
    }
    for i in 1..radii.len() - 1 {
        for j in 0..spec.sectors {
            let (a, b, c, d) = (vertex(i, j), vertex(i + 1, j), vertex(i + 1, j + 1), vertex(i, j + 1));
            triangles.push([a, b, c]);
            triangles.push([a, c, d]);
        }
    }
    let surface = RigidSurface::new(triangles.clone())?;
    Ok(ToolGeometry {
        surface,
        field: HeightField {
            radii,
            sectors: spec.sectors,
            triangles,
        },
    })
}

/// Triangulated punch: spherical cap of radius `R_dome` blended to the
/// flange by a fillet of radius `R_fillet`.
pub fn build_dome_tool(params: DomeParams, footprint: Real, spec: &ToolMeshSpec) -> Result<ToolGeometry> {
    params.validate()?;
    triangulate_profile(&DomeProfile::punch(params, footprint)?, spec)
}

/// Die surface: the punch profile offset away from the punch body.
pub fn build_die(params: DomeParams, footprint: Real, offset: Real, spec: &ToolMeshSpec) -> Result<ToolGeometry> {
    params.validate()?;
    triangulate_profile(&DomeProfile::punch(params, footprint)?.offset(offset)?, spec)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSettings {
    /// Iteration cap per increment.
    pub max_iters: usize,
    /// Stop when no coordinate moves more than this, mm.
    pub tol: Real,
    pub edge_stiffness: Real,
    pub diagonal_stiffness: Real,
    /// Rest lengths are this fraction shorter than the blank's edge
    /// lengths, giving the sheet out-of-plane stiffness when flat.
    pub prestretch: Real,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            max_iters: 4000,
            tol: 1e-9,
            edge_stiffness: 1.0,
            diagonal_stiffness: 0.5,
            prestretch: 0.05,
        }
    }
}

/// Blank, tool and kinematics of the synthetic forming process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleConfig {
    /// Grid nodes along x and y.
    pub nx: usize,
    pub ny: usize,
    /// Side length of the quarter blank, mm.
    pub extent: Real,
    /// Nodes at or beyond this radius are clamped by the blank holder.
    pub holder_radius: Real,
    /// Radius where the fillet meets the flange, mm.
    pub footprint: Real,
    /// Punch flange height at `t = 0`, mm.
    pub punch_start: Real,
    /// Total punch travel, mm.
    pub stroke: Real,
    pub intervals: usize,
    /// Punch speed, mm/s.
    pub speed: Real,
    /// Gap between punch and die surfaces, mm.
    pub die_offset: Real,
    pub tool_mesh: ToolMeshSpec,
    pub solver: SolverSettings,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            nx: 15,
            ny: 15,
            extent: 200.0,
            holder_radius: 150.0,
            footprint: 65.0,
            punch_start: 45.0,
            stroke: 44.0,
            intervals: 10,
            speed: 500.0,
            die_offset: 2.0,
            tool_mesh: ToolMeshSpec::default(),
            solver: SolverSettings::default(),
        }
    }
}

impl OracleConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.nx < 2 || self.ny < 2 {
            return bad(format!("blank grid must be at least 2 x 2, got {} x {}", self.nx, self.ny));
        }
        if self.intervals == 0 {
            return bad("at least one timestep interval is required".into());
        }
        let positive = [
            ("extent", self.extent),
            ("holder_radius", self.holder_radius),
            ("speed", self.speed),
            ("solver.tol", self.solver.tol),
            ("solver.edge_stiffness", self.solver.edge_stiffness),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.stroke.is_finite() && self.stroke >= 0.0) {
            return bad(format!("stroke must be non-negative, got {}", self.stroke));
        }
        if !(self.solver.prestretch >= 0.0 && self.solver.prestretch < 1.0) {
            return bad(format!("solver.prestretch must lie in [0, 1), got {}", self.solver.prestretch));
        }
        if !(self.solver.diagonal_stiffness >= 0.0) {
            return bad("solver.diagonal_stiffness must be non-negative".into());
        }
        if self.solver.max_iters == 0 {
            return bad("solver.max_iters must be positive".into());
        }
        if self.tool_mesh.outer_radius < self.extent * Real::sqrt(2.0) {
            return bad(format!(
                "tool outer radius {} mm does not cover the blank corner",
                self.tool_mesh.outer_radius
            ));
        }
        Ok(())
    }

    pub fn dt(&self) -> Real {
        self.stroke / self.intervals as Real / self.speed
    }

    /// Punch travel after `t` increments.
    pub fn stroke_at(&self, t: usize) -> Real {
        self.stroke * t as Real / self.intervals as Real
    }

    /// Tool poses at timestep `t`: punch, then die (fixed at the punch's
    /// final pose).
    pub fn poses_at(&self, t: usize) -> Vec<Pose> {
        vec![
            Pose::translation([0.0, 0.0, self.punch_start - self.stroke_at(t)]),
            Pose::translation([0.0, 0.0, self.punch_start - self.stroke]),
        ]
    }
}

/// Undeformed quarter blank with symmetry and holder flags.
pub fn blank_mesh(cfg: &OracleConfig) -> Result<Mesh> {
    let (nx, ny) = (cfg.nx, cfg.ny);
    let hx = cfg.extent / (nx - 1) as Real;
    let hy = cfg.extent / (ny - 1) as Real;
    let mut pos = Vec::with_capacity(nx * ny * 3);
    let mut boundary = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let (x, y) = (i as Real * hx, j as Real * hy);
            pos.extend_from_slice(&[x, y, 0.0]);
            let held = x.hypot(y) >= cfg.holder_radius;
            boundary.push([i == 0 || held, j == 0 || held, held]);
        }
    }
    let mut elements = Vec::new();
    for j in 0..ny - 1 {
        for i in 0..nx - 1 {
            let a = j * nx + i;
            elements.push(vec![a, a + 1, a + 1 + nx, a + nx]);
        }
    }
    Mesh::new(Array::from_parts(nx * ny, 3, pos), elements, boundary)
}

#[derive(Debug, Clone, Copy)]
struct Spring {
    i: usize,
    j: usize,
    rest: Real,
    k: Real,
}

fn springs(mesh: &Mesh, topo: &GraphTopology, s: &SolverSettings) -> Vec<Spring> {
    let x = &mesh.positions;
    let len = |i: usize, j: usize| {
        let (a, b) = (x.row(i), x.row(j));
        (1.0 - s.prestretch) * ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
    };
    let mut out: Vec<Spring> = topo
        .undirected()
        .map(|(i, j)| Spring {
            i,
            j,
            rest: len(i, j),
            k: s.edge_stiffness,
        })
        .collect();
    if s.diagonal_stiffness > 0.0 {
        for el in mesh.elements.iter().filter(|e| e.len() == 4) {
            for (i, j) in [(el[0], el[2]), (el[1], el[3])] {
                out.push(Spring {
                    i,
                    j,
                    rest: len(i, j),
                    k: s.diagonal_stiffness,
                });
            }
        }
    }
    out
}

fn spring_energy(x: &[Real], springs: &[Spring]) -> Real {
    springs
        .iter()
        .map(|s| {
            let d = [
                x[3 * s.i] - x[3 * s.j],
                x[3 * s.i + 1] - x[3 * s.j + 1],
                x[3 * s.i + 2] - x[3 * s.j + 2],
            ];
            let l = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
            s.k * (l - s.rest) * (l - s.rest)
        })
        .sum()
}

fn spring_gradient(x: &[Real], springs: &[Spring], g: &mut [Real]) {
    g.iter_mut().for_each(|v| *v = 0.0);
    for s in springs {
        let d = [
            x[3 * s.i] - x[3 * s.j],
            x[3 * s.i + 1] - x[3 * s.j + 1],
            x[3 * s.i + 2] - x[3 * s.j + 2],
        ];
        let l = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        if l == 0.0 {
            continue;
        }
        let c = 2.0 * s.k * (l - s.rest) / l;
        for a in 0..3 {
            g[3 * s.i + a] += c * d[a];
            g[3 * s.j + a] -= c * d[a];
        }
    }
}

/// Feasible set: clamped coordinates plus "below the punch surface".
struct Constraints<'a> {
    fixed: &'a [[bool; 3]],
    rest: &'a [Real],
    field: &'a HeightField,
    punch_z: Real,
}

impl Constraints<'_> {
    /// Returns whether any coordinate changed.
    fn project(&self, x: &mut [Real]) -> bool {
        let before = x.to_vec();
        for (n, flags) in self.fixed.iter().enumerate() {
            for a in 0..3 {
                if flags[a] {
                    x[3 * n + a] = self.rest[3 * n + a];
                }
            }
            if !flags[2] {
                if let Some(h) = self.field.height_at(x[3 * n], x[3 * n + 1]) {
                    x[3 * n + 2] = x[3 * n + 2].min(h + self.punch_z);
                }
            }
        }
        x.iter().zip(&before).any(|(a, b)| a.to_bits() != b.to_bits())
    }
}

/// Convergence record of one load increment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IncrementStats {
    pub iterations: usize,
    pub energy_start: Real,
    pub energy_end: Real,
    /// Largest energy change between accepted iterates (never positive).
    pub max_energy_increase: Real,
    pub converged: bool,
}

/// Projected gradient descent with Barzilai-Borwein steps and monotone
/// backtracking: a trial point is accepted only if it does not raise the
/// energy.
/// The state entering an increment is an equilibrium, so nothing moves
/// unless the punch displaced a node.
fn relax(x: &mut [Real], springs: &[Spring], cons: &Constraints<'_>, s: &SolverSettings, increment: usize) -> Result<IncrementStats> {
    let moved = cons.project(x);
    let mut e = spring_energy(x, springs);
    let energy_start = e;
    if !moved {
        return Ok(IncrementStats {
            iterations: 0,
            energy_start,
            energy_end: e,
            max_energy_increase: 0.0,
            converged: true,
        });
    }
    let mut g = vec![0.0; x.len()];
    spring_gradient(x, springs, &mut g);
    let mut trial = vec![0.0; x.len()];
    let mut g_new = vec![0.0; x.len()];
    let mut alpha: Real = 0.05;
    let mut max_increase = Real::NEG_INFINITY;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < s.max_iters {
        iterations += 1;
        let e_new = loop {
            for ((t, xi), gi) in trial.iter_mut().zip(x.iter()).zip(&g) {
                *t = xi - alpha * gi;
            }
            cons.project(&mut trial);
            let e_new = spring_energy(&trial, springs);
            if !e_new.is_finite() {
                return Err(Error::Divergence {
                    increment,
                    detail: format!("non-finite spring energy after {iterations} iterations"),
                });
            }
            if e_new <= e || alpha < 1e-14 {
                break e_new;
            }
            alpha *= 0.5;
        };
        if e_new > e {
            converged = true;
            break;
        }
        spring_gradient(&trial, springs, &mut g_new);
        let (mut ss, mut sy, mut step) = (0.0, 0.0, 0.0 as Real);
        for k in 0..x.len() {
            let sk = trial[k] - x[k];
            let yk = g_new[k] - g[k];
            ss += sk * sk;
            sy += sk * yk;
            step = step.max(sk.abs());
        }
        max_increase = max_increase.max(e_new - e);
        x.copy_from_slice(&trial);
        std::mem::swap(&mut g, &mut g_new);
        e = e_new;
        if step < s.tol {
            converged = true;
            break;
        }
        alpha = if sy > 0.0 { (ss / sy).clamp(1e-10, 1e3) } else { (2.0 * alpha).min(1e3) };
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Divergence {
            increment,
            detail: "non-finite node position".into(),
        });
    }
    Ok(IncrementStats {
        iterations,
        energy_start,
        energy_end: e,
        max_energy_increase: if max_increase.is_finite() { max_increase } else { 0.0 },
        converged,
    })
}

/// Ground-truth forming sequence of one tool design.
#[derive(Debug, Clone)]
pub struct FormingSample {
    pub name: String,
    pub params: DomeParams,
    pub seed: u64,
    pub dt: Real,
    pub stroke: Real,
    pub blank: Mesh,
    /// Positions at every timestep; index 0 is the undeformed blank.
    pub positions: Vec<Array>,
    /// Punch then die, in their local frames.
    pub tools: Vec<RigidSurface>,
    /// Tool poses per timestep.
    pub poses: Vec<Vec<Pose>>,
    pub config_hash: String,
}

impl FormingSample {
    pub fn intervals(&self) -> usize {
        self.positions.len() - 1
    }

    pub fn n_nodes(&self) -> usize {
        self.blank.n_nodes()
    }

    /// Punch travel after `t` increments.
    pub fn stroke_at(&self, t: usize) -> Real {
        self.stroke * t as Real / self.intervals() as Real
    }

    pub fn topology(&self) -> Result<GraphTopology> {
        mesh_to_topology(&self.blank)
    }

    pub fn scene(&self) -> Result<ContactScene> {
        ContactScene::new(self.tools.clone())
    }
}

/// Hash of everything that determines one sample.
pub fn sample_hash(cfg: &OracleConfig, params: DomeParams, seed: u64) -> Result<String> {
    persist::config_hash(&(cfg, params, seed))
}

/// Simulated forming sequence plus per-increment solver statistics.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub sample: FormingSample,
    pub stats: Vec<IncrementStats>,
    /// Deepest node penetration into the triangulated punch over all
    /// timesteps, mm.
    pub max_penetration: Real,
}

/// Runs the quasi-static forming simulation. The simulator itself is
/// deterministic; `seed` is recorded for provenance.
pub fn simulate_forming(cfg: &OracleConfig, params: DomeParams, seed: u64, name: &str) -> Result<Simulation> {
    cfg.validate()?;
    let punch = build_dome_tool(params, cfg.footprint, &cfg.tool_mesh)?;
    let die = build_die(params, cfg.footprint, cfg.die_offset, &cfg.tool_mesh)?;
    let blank = blank_mesh(cfg)?;
    let topo = mesh_to_topology(&blank)?;
    let springs = springs(&blank, &topo, &cfg.solver);
    let rest = blank.positions.data().to_vec();
    let mut x = rest.clone();
    let mut positions = vec![blank.positions.clone()];
    let mut poses = vec![cfg.poses_at(0)];
    let mut stats = Vec::with_capacity(cfg.intervals);
    let mut max_penetration: Real = 0.0;
    for t in 1..=cfg.intervals {
        let pose = cfg.poses_at(t);
        let cons = Constraints {
            fixed: &blank.boundary,
            rest: &rest,
            field: &punch.field,
            punch_z: pose[0].translation[2],
        };
        stats.push(relax(&mut x, &springs, &cons, &cfg.solver, t)?);
        let a = Array::from_parts(blank.n_nodes(), 3, x.clone());
        max_penetration = max_penetration.max(max_penetration_depth(&a, &punch.field, &pose[0]));
        positions.push(a);
        poses.push(pose);
    }
    Ok(Simulation {
        sample: FormingSample {
            name: name.to_string(),
            params,
            seed,
            dt: cfg.dt(),
            stroke: cfg.stroke,
            blank,
            positions,
            tools: vec![punch.surface, die.surface],
            poses,
            config_hash: sample_hash(cfg, params, seed)?,
        },
        stats,
        max_penetration,
    })
}

/// Deepest penetration of any node into the solid above a height-field
/// tool placed at `pose` (translation only).
pub fn max_penetration_depth(positions: &Array, field: &HeightField, pose: &Pose) -> Real {
    let mut worst: Real = 0.0;
    for n in 0..positions.rows() {
        let p = pose.apply_inverse([positions.get(n, 0), positions.get(n, 1), positions.get(n, 2)]);
        if let Some(h) = field.height_at(p[0], p[1]) {
            worst = worst.max(p[2] - h);
        }
    }
    worst
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split `{other}` (train, val, test)"))),
        }
    }
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub oracle: OracleConfig,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub seed: u64,
    pub r_dome: (Real, Real),
    pub r_fillet: (Real, Real),
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            oracle: OracleConfig::default(),
            train: 50,
            val: 20,
            test: 20,
            seed: 0,
            r_dome: R_DOME_RANGE,
            r_fillet: R_FILLET_RANGE,
        }
    }
}

impl DatasetConfig {
    pub fn count(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Val => self.val,
            Split::Test => self.test,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub config: DatasetConfig,
    pub config_hash: String,
    pub train: Vec<FormingSample>,
    pub val: Vec<FormingSample>,
    pub test: Vec<FormingSample>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> &[FormingSample] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    fn split_mut(&mut self, split: Split) -> &mut Vec<FormingSample> {
        match split {
            Split::Train => &mut self.train,
            Split::Val => &mut self.val,
            Split::Test => &mut self.test,
        }
    }
}

/// Simulates every split; each split gets its own Latin hypercube draw.
pub fn generate_dataset(cfg: &DatasetConfig) -> Result<Dataset> {
    cfg.oracle.validate()?;
    let mut ds = Dataset {
        config: cfg.clone(),
        config_hash: persist::config_hash(cfg)?,
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for (s, split) in Split::ALL.into_iter().enumerate() {
        let n = cfg.count(split);
        if n == 0 {
            continue;
        }
        let design = lhc_sample(n, [cfg.r_dome, cfg.r_fillet], derive_seed(cfg.seed, s as u64, 0))?;
        for (i, params) in design.into_iter().enumerate() {
            let seed = derive_seed(cfg.seed, s as u64, i as u64 + 1);
            let name = format!("{}-{i:03}", split.name());
            let sim = simulate_forming(&cfg.oracle, params, seed, &name)?;
            ds.split_mut(split).push(sim.sample);
        }
    }
    Ok(ds)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleManifest {
    pub format: u32,
    pub name: String,
    pub params: DomeParams,
    pub seed: u64,
    pub dt: Real,
    pub stroke: Real,
    pub intervals: usize,
    pub config_hash: String,
    /// Tool poses per timestep, in `tools` order.
    pub poses: Vec<Vec<Pose>>,
    pub blank: String,
    pub tools: Vec<String>,
    pub positions: Vec<String>,
}

pub fn export_sample(sample: &FormingSample, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let tool_names = ["punch.mesh", "die.mesh"];
    if sample.tools.len() > tool_names.len() {
        return Err(Error::Data(format!("{} tools, at most 2 supported", sample.tools.len())));
    }
    let manifest = SampleManifest {
        format: DATASET_FORMAT,
        name: sample.name.clone(),
        params: sample.params,
        seed: sample.seed,
        dt: sample.dt,
        stroke: sample.stroke,
        intervals: sample.intervals(),
        config_hash: sample.config_hash.clone(),
        poses: sample.poses.clone(),
        blank: "blank.mesh".into(),
        tools: tool_names[..sample.tools.len()].iter().map(|s| s.to_string()).collect(),
        positions: (0..sample.positions.len()).map(|t| format!("positions/t{t:02}.txt")).collect(),
    };
    persist::write_text(&dir.join(&manifest.blank), &sample.blank.to_text())?;
    for (tool, file) in sample.tools.iter().zip(&manifest.tools) {
        persist::write_text(&dir.join(file), &tool.to_mesh()?.to_text())?;
    }
    for (a, file) in sample.positions.iter().zip(&manifest.positions) {
        persist::write_table(&dir.join(file), a)?;
    }
    persist::write_json(&dir.join("manifest.json"), &manifest)
}

pub fn load_sample(dir: &Path) -> Result<FormingSample> {
    let m: SampleManifest = persist::read_json(&dir.join("manifest.json"))?;
    if m.format != DATASET_FORMAT {
        return Err(Error::Data(format!("{}: unsupported sample format {}", dir.display(), m.format)));
    }
    let blank = Mesh::read(&dir.join(&m.blank))?;
    let tools = m
        .tools
        .iter()
        .map(|f| RigidSurface::from_mesh(&Mesh::read(&dir.join(f))?))
        .collect::<Result<Vec<_>>>()?;
    let positions = m
        .positions
        .iter()
        .map(|f| persist::read_table(&dir.join(f)))
        .collect::<Result<Vec<_>>>()?;
    let sample = FormingSample {
        name: m.name,
        params: m.params,
        seed: m.seed,
        dt: m.dt,
        stroke: m.stroke,
        blank,
        positions,
        tools,
        poses: m.poses,
        config_hash: m.config_hash,
    };
    check_sample(&sample, m.intervals).map_err(|e| Error::Data(format!("{}: {e}", dir.display())))?;
    Ok(sample)
}

fn check_sample(s: &FormingSample, intervals: usize) -> std::result::Result<(), String> {
    if s.positions.len() != intervals + 1 || intervals == 0 {
        return Err(format!("{} position files for {intervals} intervals", s.positions.len()));
    }
    if s.poses.len() != s.positions.len() {
        return Err(format!("{} pose rows for {} timesteps", s.poses.len(), s.positions.len()));
    }
    if s.tools.is_empty() || s.poses.iter().any(|p| p.len() != s.tools.len()) {
        return Err("every timestep needs one pose per tool".into());
    }
    let n = s.blank.n_nodes();
    if s.positions.iter().any(|p| p.rows() != n || p.cols() != 3) {
        return Err(format!("position tables must be {n} x 3"));
    }
    if s.positions[0] != s.blank.positions {
        return Err("timestep 0 differs from the blank mesh".into());
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format: u32,
    pub config: DatasetConfig,
    pub config_hash: String,
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

pub fn export_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    let mut manifest = DatasetManifest {
        format: DATASET_FORMAT,
        config: ds.config.clone(),
        config_hash: ds.config_hash.clone(),
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for split in Split::ALL {
        let mut names = Vec::new();
        for (i, s) in ds.split(split).iter().enumerate() {
            let rel = format!("{}/{i:03}", split.name());
            export_sample(s, &dir.join(&rel))?;
            names.push(rel);
        }
        match split {
            Split::Train => manifest.train = names,
            Split::Val => manifest.val = names,
            Split::Test => manifest.test = names,
        }
    }
    persist::write_json(&dir.join("dataset.json"), &manifest)
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let m: DatasetManifest = persist::read_json(&dir.join("dataset.json"))?;
    if m.format != DATASET_FORMAT {
        return Err(Error::Data(format!("{}: unsupported dataset format {}", dir.display(), m.format)));
    }
    let load = |names: &[String]| names.iter().map(|n| load_sample(&dir.join(n))).collect::<Result<Vec<_>>>();
    Ok(Dataset {
        train: load(&m.train)?,
        val: load(&m.val)?,
        test: load(&m.test)?,
        config: m.config,
        config_hash: m.config_hash,
    })
}

#[cfg(test)]
mod tests;
