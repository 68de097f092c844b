//! Node-to-surface contact features against rigid tool surfaces.
//!
//! Each tool surface is indexed once in its local frame. A tool pose maps
//! local coordinates to world coordinates; queries are pulled back into the
//! local frame, so a moving tool never needs its index rebuilt.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Array, Real};
use crate::error::{Error, Result};
use crate::meshgraph::Mesh;

pub type Point = [Real; 3];
pub type Triangle = [Point; 3];

/// Default clamp applied to distances before inversion, in mm.
pub const DEFAULT_D_MIN: Real = 1e-3;
/// Triangles with a smaller area (mm²) are rejected.
pub const MIN_TRIANGLE_AREA: Real = 1e-12;
const LEAF_SIZE: usize = 4;

fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn add(a: Point, b: Point) -> Point {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

fn scale(a: Point, s: Real) -> Point {
    [a[0] * s, a[1] * s, a[2] * s]
}

fn dot(a: Point, b: Point) -> Real {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: Point, b: Point) -> Point {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn norm(a: Point) -> Real {
    dot(a, a).sqrt()
}

fn triangle_area(tri: &Triangle) -> Real {
    0.5 * norm(cross(sub(tri[1], tri[0]), sub(tri[2], tri[0])))
}

/// Exact distance from `p` to the closed triangle and the closest point.
///
/// Classifies `p` against the vertex, edge and face Voronoi regions.
pub fn point_triangle_distance(p: Point, tri: &Triangle) -> Result<(Real, Point)> {
    let area = triangle_area(tri);
    if !(area > MIN_TRIANGLE_AREA) {
        return Err(Error::Degenerate(format!("triangle area {area:e} mm^2")));
    }
    let c = closest_point(p, tri);
    Ok((norm(sub(p, c)), c))
}

fn closest_point(p: Point, [a, b, c]: &Triangle) -> Point {
    let (a, b, c) = (*a, *b, *c);
    let ab = sub(b, a);
    let ac = sub(c, a);
    let ap = sub(p, a);
    let d1 = dot(ab, ap);
    let d2 = dot(ac, ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return a;
    }
    let bp = sub(p, b);
    let d3 = dot(ab, bp);
    let d4 = dot(ac, bp);
    if d3 >= 0.0 && d4 <= d3 {
        return b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        return add(a, scale(ab, d1 / (d1 - d3)));
    }
    let cp = sub(p, c);
    let d5 = dot(ab, cp);
    let d6 = dot(ac, cp);
    if d6 >= 0.0 && d5 <= d6 {
        return c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        return add(a, scale(ac, d2 / (d2 - d6)));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return add(b, scale(sub(c, b), w));
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    add(a, add(scale(ab, v), scale(ac, w)))
}

/// Rigid transform `x -> R x + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub rotation: [[Real; 3]; 3],
    pub translation: Point,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [0.0; 3],
        }
    }

    pub fn translation(t: Point) -> Self {
        Self {
            translation: t,
            ..Self::identity()
        }
    }

    pub fn rotate(&self, v: Point) -> Point {
        let r = &self.rotation;
        [dot(r[0], v), dot(r[1], v), dot(r[2], v)]
    }

    pub fn rotate_inverse(&self, v: Point) -> Point {
        let r = &self.rotation;
        [
            r[0][0] * v[0] + r[1][0] * v[1] + r[2][0] * v[2],
            r[0][1] * v[0] + r[1][1] * v[1] + r[2][1] * v[2],
            r[0][2] * v[0] + r[1][2] * v[1] + r[2][2] * v[2],
        ]
    }

    pub fn apply(&self, p: Point) -> Point {
        add(self.rotate(p), self.translation)
    }

    pub fn apply_inverse(&self, p: Point) -> Point {
        self.rotate_inverse(sub(p, self.translation))
    }

    /// `self` applied after `inner`.
    pub fn compose(&self, inner: &Pose) -> Pose {
        let mut rotation = [[0.0; 3]; 3];
        for (i, row) in rotation.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (0..3).map(|k| self.rotation[i][k] * inner.rotation[k][j]).sum();
            }
        }
        Pose {
            rotation,
            translation: self.apply(inner.translation),
        }
    }
}

/// Triangulated rigid tool surface in its local frame.
#[derive(Debug, Clone, PartialEq)]
pub struct RigidSurface {
    triangles: Vec<Triangle>,
    normals: Vec<Point>,
}

impl RigidSurface {
    pub fn new(triangles: Vec<Triangle>) -> Result<Self> {
        let mut normals = Vec::with_capacity(triangles.len());
        for (k, tri) in triangles.iter().enumerate() {
            if tri.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::Data(format!("triangle {k} has a non-finite vertex")));
            }
            let n = cross(sub(tri[1], tri[0]), sub(tri[2], tri[0]));
            let len = norm(n);
            if !(0.5 * len > MIN_TRIANGLE_AREA) {
                return Err(Error::Degenerate(format!("triangle {k} has area {:e} mm^2", 0.5 * len)));
            }
            normals.push(scale(n, 1.0 / len));
        }
        Ok(Self { triangles, normals })
    }

    pub fn from_mesh(mesh: &Mesh) -> Result<Self> {
        let mut tris = Vec::with_capacity(mesh.elements.len());
        for (k, el) in mesh.elements.iter().enumerate() {
            if el.len() != 3 {
                return Err(Error::Data(format!("tool element {k} is not a triangle")));
            }
            let v = |i: usize| {
                let r = mesh.positions.row(el[i]);
                [r[0], r[1], r[2]]
            };
            tris.push([v(0), v(1), v(2)]);
        }
        Self::new(tris)
    }

    /// Shared-vertex mesh with exact vertex deduplication.
    pub fn to_mesh(&self) -> Result<Mesh> {
        let mut lookup = std::collections::BTreeMap::new();
        let mut pos = Vec::new();
        let mut elements = Vec::with_capacity(self.triangles.len());
        for tri in &self.triangles {
            let mut el = Vec::with_capacity(3);
            for v in tri {
                let key = v.map(Real::to_bits);
                let id = *lookup.entry(key).or_insert_with(|| {
                    pos.extend_from_slice(v);
                    pos.len() / 3 - 1
                });
                el.push(id);
            }
            elements.push(el);
        }
        let n = pos.len() / 3;
        Mesh::new(Array::from_parts(n, 3, pos), elements, vec![[false; 3]; n])
    }

    pub fn triangles(&self) -> &[Triangle] {
        &self.triangles
    }

    pub fn normals(&self) -> &[Point] {
        &self.normals
    }

    pub fn len(&self) -> usize {
        self.triangles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }
}

#[derive(Debug, Clone, Copy)]
struct Aabb {
    lo: Point,
    hi: Point,
}

impl Aabb {
    fn empty() -> Self {
        Self {
            lo: [Real::INFINITY; 3],
            hi: [Real::NEG_INFINITY; 3],
        }
    }

    fn grow(&mut self, p: Point) {
        for d in 0..3 {
            self.lo[d] = self.lo[d].min(p[d]);
            self.hi[d] = self.hi[d].max(p[d]);
        }
    }

    /// Lower bound on the distance from `p` to anything inside the box.
    fn distance(&self, p: Point) -> Real {
        let mut sq = 0.0;
        for d in 0..3 {
            let e = (self.lo[d] - p[d]).max(p[d] - self.hi[d]).max(0.0);
            sq += e * e;
        }
        sq.sqrt()
    }
}

#[derive(Debug, Clone)]
struct KdNode {
    bounds: Aabb,
    /// Range into `SpatialIndex::order` for leaves.
    start: usize,
    end: usize,
    children: Option<(usize, usize)>,
}

/// KD-tree over triangle centroids; each node bounds every vertex of the
/// triangles below it, so box distances are valid lower bounds.
#[derive(Debug, Clone)]
pub struct SpatialIndex {
    nodes: Vec<KdNode>,
    order: Vec<usize>,
}

impl SpatialIndex {
    pub fn build(surface: &RigidSurface) -> Self {
        let centroids: Vec<Point> = surface
            .triangles
            .iter()
            .map(|t| scale(add(add(t[0], t[1]), t[2]), 1.0 / 3.0))
            .collect();
        let mut index = Self {
            nodes: Vec::new(),
            order: (0..surface.len()).collect(),
        };
        if !centroids.is_empty() {
            index.build_node(surface, &centroids, 0, surface.len());
        }
        index
    }

    fn build_node(&mut self, surface: &RigidSurface, centroids: &[Point], start: usize, end: usize) -> usize {
        let mut bounds = Aabb::empty();
        let mut cbounds = Aabb::empty();
        for &t in &self.order[start..end] {
            for v in surface.triangles[t] {
                bounds.grow(v);
            }
            cbounds.grow(centroids[t]);
        }
        let id = self.nodes.len();
        self.nodes.push(KdNode {
            bounds,
            start,
            end,
            children: None,
        });
        if end - start > LEAF_SIZE {
            let axis = (0..3)
                .max_by(|&a, &b| {
                    let ea = cbounds.hi[a] - cbounds.lo[a];
                    let eb = cbounds.hi[b] - cbounds.lo[b];
                    ea.total_cmp(&eb).then(b.cmp(&a))
                })
                .unwrap_or(0);
            self.order[start..end].sort_by(|&a, &b| {
                centroids[a][axis].total_cmp(&centroids[b][axis]).then(a.cmp(&b))
            });
            let mid = start + (end - start) / 2;
            let left = self.build_node(surface, centroids, start, mid);
            let right = self.build_node(surface, centroids, mid, end);
            self.nodes[id].children = Some((left, right));
        }
        id
    }

    /// Nearest triangle to `p` (local frame) that beats `best`, where
    /// `best` holds `(distance, triangle)`; ties go to the lower triangle id.
    fn nearest(&self, surface: &RigidSurface, p: Point, best: &mut Option<(Real, usize, Point)>) {
        if self.nodes.is_empty() {
            return;
        }
        let mut stack = vec![0usize];
        while let Some(id) = stack.pop() {
            let node = &self.nodes[id];
            if prune(node.bounds.distance(p), best) {
                continue;
            }
            match node.children {
                Some((l, r)) => {
                    let dl = self.nodes[l].bounds.distance(p);
                    let dr = self.nodes[r].bounds.distance(p);
                    // push the farther child first so the nearer one pops next
                    if dl <= dr {
                        stack.push(r);
                        stack.push(l);
                    } else {
                        stack.push(l);
                        stack.push(r);
                    }
                }
                None => {
                    for &t in &self.order[node.start..node.end] {
                        let c = closest_point(p, &surface.triangles[t]);
                        let d = norm(sub(p, c));
                        if better(d, t, best) {
                            *best = Some((d, t, c));
                        }
                    }
                }
            }
        }
    }
}

/// A box is skipped only when its lower bound clearly exceeds the best
/// distance; the slack absorbs rounding in both computations.
fn prune(lower: Real, best: &Option<(Real, usize, Point)>) -> bool {
    match best {
        Some((d, _, _)) => lower > d * (1.0 + 1e-12) + 1e-12,
        None => false,
    }
}

fn better(d: Real, t: usize, best: &Option<(Real, usize, Point)>) -> bool {
    match best {
        None => true,
        Some((bd, bt, _)) => d < *bd || (d == *bd && t < *bt),
    }
}

/// Closest element over the union of all tool surfaces.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Nearest {
    pub surface: usize,
    pub triangle: usize,
    pub distance: Real,
    /// World-frame closest point.
    pub closest: Point,
    /// World-frame unit normal of the element as stored (unoriented).
    pub normal: Point,
}

/// Tool surfaces with their indices.
#[derive(Debug, Clone)]
pub struct ContactScene {
    surfaces: Vec<RigidSurface>,
    indices: Vec<SpatialIndex>,
}

impl ContactScene {
    pub fn new(surfaces: Vec<RigidSurface>) -> Result<Self> {
        if surfaces.iter().all(RigidSurface::is_empty) {
            return Err(Error::Empty("contact surface set"));
        }
        let indices = surfaces.iter().map(SpatialIndex::build).collect();
        Ok(Self { surfaces, indices })
    }

    pub fn surfaces(&self) -> &[RigidSurface] {
        &self.surfaces
    }

    fn check_poses(&self, poses: &[Pose]) -> Result<()> {
        if poses.len() != self.surfaces.len() {
            return Err(Error::shape(
                "ContactScene",
                format!("{} poses for {} surfaces", poses.len(), self.surfaces.len()),
            ));
        }
        Ok(())
    }

    fn finish(&self, s: usize, t: usize, d: Real, c: Point, pose: &Pose) -> Nearest {
        Nearest {
            surface: s,
            triangle: t,
            distance: d,
            closest: pose.apply(c),
            normal: pose.rotate(self.surfaces[s].normals[t]),
        }
    }

    /// Exact nearest element via the KD-trees.
    pub fn nearest(&self, p: Point, poses: &[Pose]) -> Result<Nearest> {
        self.check_poses(poses)?;
        let mut result: Option<Nearest> = None;
        for (s, (surface, index)) in self.surfaces.iter().zip(&self.indices).enumerate() {
            let local = poses[s].apply_inverse(p);
            // seed with the current best distance so other surfaces prune early;
            // a strictly smaller distance is needed to displace a lower surface id
            let mut best = result.map(|r| (r.distance, usize::MAX, [0.0; 3]));
            index.nearest(surface, local, &mut best);
            if let Some((d, t, c)) = best {
                if t != usize::MAX && result.is_none_or(|r| d < r.distance) {
                    result = Some(self.finish(s, t, d, c, &poses[s]));
                }
            }
        }
        result.ok_or(Error::Empty("contact surface set"))
    }

    /// Exhaustive scan with the same tie rule; the reference for `nearest`.
    pub fn nearest_brute_force(&self, p: Point, poses: &[Pose]) -> Result<Nearest> {
        self.check_poses(poses)?;
        let mut result: Option<Nearest> = None;
        for (s, surface) in self.surfaces.iter().enumerate() {
            let local = poses[s].apply_inverse(p);
            for (t, tri) in surface.triangles.iter().enumerate() {
                let c = closest_point(local, tri);
                let d = norm(sub(local, c));
                if result.is_none_or(|r| d < r.distance) {
                    result = Some(self.finish(s, t, d, c, &poses[s]));
                }
            }
        }
        result.ok_or(Error::Empty("contact surface set"))
    }
}

/// Per-node contact inputs: `1 / max(d, d_min)` and the oriented normal.
#[derive(Debug, Clone, PartialEq)]
pub struct ContactFeatures {
    pub inv_dist: Vec<Real>,
    pub normal: Vec<Point>,
}

impl ContactFeatures {
    /// `N x 4` array `(1/d, n_x, n_y, n_z)`.
    pub fn to_array(&self) -> Array {
        let mut data = Vec::with_capacity(self.inv_dist.len() * 4);
        for (i, n) in self.inv_dist.iter().zip(&self.normal) {
            data.push(*i);
            data.extend_from_slice(n);
        }
        Array::from_parts(self.inv_dist.len(), 4, data)
    }
}

pub fn contact_features(positions: &Array, scene: &ContactScene, poses: &[Pose], d_min: Real) -> Result<ContactFeatures> {
    if !(d_min > 0.0) {
        return Err(Error::Config(format!("d_min must be positive, got {d_min}")));
    }
    if positions.cols() != 3 {
        return Err(Error::shape("contact_features", "positions must be N x 3"));
    }
    let n = positions.rows();
    let mut inv_dist = Vec::with_capacity(n);
    let mut normal = Vec::with_capacity(n);
    for i in 0..n {
        let r = positions.row(i);
        let p = [r[0], r[1], r[2]];
        let hit = scene.nearest(p, poses)?;
        inv_dist.push(1.0 / hit.distance.max(d_min));
        let mut nrm = hit.normal;
        if hit.distance > 0.0 && dot(nrm, sub(p, hit.closest)) < 0.0 {
            nrm = scale(nrm, -1.0);
        }
        normal.push(nrm);
    }
    Ok(ContactFeatures { inv_dist, normal })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContactCheckRow {
    pub node: usize,
    pub index_distance: Real,
    pub brute_distance: Real,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ContactCheckReport {
    pub rows: Vec<ContactCheckRow>,
    pub max_deviation: Real,
    /// Nodes where the two searches picked different elements.
    pub element_mismatches: usize,
}

/// Index distances against exhaustive scan for every node.
pub fn contact_check_report(positions: &Array, scene: &ContactScene, poses: &[Pose]) -> Result<ContactCheckReport> {
    let mut report = ContactCheckReport::default();
    for i in 0..positions.rows() {
        let r = positions.row(i);
        let p = [r[0], r[1], r[2]];
        let a = scene.nearest(p, poses)?;
        let b = scene.nearest_brute_force(p, poses)?;
        let dev = (a.distance - b.distance).abs();
        report.max_deviation = report.max_deviation.max(dev);
        if (a.surface, a.triangle) != (b.surface, b.triangle) {
            report.element_mismatches += 1;
        }
        report.rows.push(ContactCheckRow {
            node: i,
            index_distance: a.distance,
            brute_distance: b.distance,
        });
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_tri() -> Triangle {
        [[0.0, 0.0, 0.0], [10.0, 0.0, 0.0], [0.0, 10.0, 0.0]]
    }

    fn random_point(rng: &mut ChaCha8Rng, half: Real) -> Point {
        [
            rng.random_range(-half..half),
            rng.random_range(-half..half),
            rng.random_range(-half..half),
        ]
    }

    fn random_triangles(rng: &mut ChaCha8Rng, n: usize) -> Vec<Triangle> {
        (0..n)
            .map(|_| {
                let c = random_point(rng, 100.0);
                [
                    add(c, random_point(rng, 5.0)),
                    add(c, random_point(rng, 5.0)),
                    add(c, random_point(rng, 5.0)),
                ]
            })
            .collect()
    }

    fn random_rotation(rng: &mut ChaCha8Rng) -> [[Real; 3]; 3] {
        // rotation from a random unit quaternion
        let mut q = [0.0; 4];
        for v in &mut q {
            *v = rng.random_range(-1.0..1.0);
        }
        let n = q.iter().map(|v| v * v).sum::<Real>().sqrt();
        let [w, x, y, z] = q.map(|v| v / n);
        [
            [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
            [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
            [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
        ]
    }

    #[test]
    fn plane_distance() {
        let (d, c) = point_triangle_distance([1.0, 1.0, 5.0], &unit_tri()).unwrap();
        assert_eq!(d, 5.0);
        assert_eq!(c, [1.0, 1.0, 0.0]);
    }

    #[test]
    fn vertex_coincidence() {
        let (d, _) = point_triangle_distance([10.0, 0.0, 0.0], &unit_tri()).unwrap();
        assert_eq!(d, 0.0);
    }

    #[test]
    fn degenerate_triangle_rejected() {
        let tri = [[0.0; 3], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]];
        assert!(matches!(point_triangle_distance([0.0; 3], &tri), Err(Error::Degenerate(_))));
        assert!(RigidSurface::new(vec![tri]).is_err());
    }

    #[test]
    fn distance_matches_dense_sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..3 {
            let tri = random_triangles(&mut rng, 1)[0];
            let p = random_point(&mut rng, 20.0);
            let (d, _) = point_triangle_distance(p, &tri).unwrap();
            let mut sampled = Real::INFINITY;
            for _ in 0..1_000_000 {
                let (mut u, mut v): (Real, Real) = (rng.random(), rng.random());
                if u + v > 1.0 {
                    u = 1.0 - u;
                    v = 1.0 - v;
                }
                let q = add(tri[0], add(scale(sub(tri[1], tri[0]), u), scale(sub(tri[2], tri[0]), v)));
                sampled = sampled.min(norm(sub(p, q)));
            }
            assert!(d <= sampled + 1e-4, "{d} vs {sampled}");
            assert!(sampled - d < 0.05, "sampling should approach the exact value");
        }
    }

    #[test]
    fn single_triangle_is_nearest() {
        let scene = ContactScene::new(vec![RigidSurface::new(vec![unit_tri()]).unwrap()]).unwrap();
        let hit = scene.nearest([3.0, 3.0, -2.0], &[Pose::identity()]).unwrap();
        assert_eq!((hit.surface, hit.triangle), (0, 0));
        assert_eq!(hit.distance, 2.0);
    }

    #[test]
    fn empty_scene_rejected() {
        assert!(matches!(ContactScene::new(vec![]), Err(Error::Empty(_))));
    }

    #[test]
    fn tie_goes_to_lowest_triangle_id() {
        let mut tris = Vec::new();
        for k in 0..10 {
            let off = k as Real * 100.0;
            tris.push([[off, 0.0, 0.0], [off + 1.0, 0.0, 0.0], [off, 1.0, 0.0]]);
        }
        // triangles 3 and 7 mirrored across z = 0 around x = 1000
        tris[3] = [[1000.0, 0.0, 5.0], [1001.0, 0.0, 5.0], [1000.0, 1.0, 5.0]];
        tris[7] = [[1000.0, 0.0, -5.0], [1001.0, 0.0, -5.0], [1000.0, 1.0, -5.0]];
        let scene = ContactScene::new(vec![RigidSurface::new(tris).unwrap()]).unwrap();
        let p = [1000.25, 0.25, 0.0];
        let hit = scene.nearest(p, &[Pose::identity()]).unwrap();
        assert_eq!(hit.triangle, 3);
        assert_eq!(hit.distance, 5.0);
        assert_eq!(scene.nearest_brute_force(p, &[Pose::identity()]).unwrap().triangle, 3);
    }

    #[test]
    fn tie_across_surfaces_goes_to_lowest_surface() {
        let up = RigidSurface::new(vec![[[0.0, 0.0, 5.0], [1.0, 0.0, 5.0], [0.0, 1.0, 5.0]]]).unwrap();
        let down = RigidSurface::new(vec![[[0.0, 0.0, -5.0], [1.0, 0.0, -5.0], [0.0, 1.0, -5.0]]]).unwrap();
        let scene = ContactScene::new(vec![down, up]).unwrap();
        let hit = scene.nearest([0.2, 0.2, 0.0], &[Pose::identity(); 2]).unwrap();
        assert_eq!(hit.surface, 0);
    }

    #[test]
    fn index_matches_exhaustive_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let scene = ContactScene::new(vec![RigidSurface::new(random_triangles(&mut rng, 1000)).unwrap()]).unwrap();
        let poses = [Pose::identity()];
        for _ in 0..100 {
            let p = random_point(&mut rng, 120.0);
            let a = scene.nearest(p, &poses).unwrap();
            let b = scene.nearest_brute_force(p, &poses).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn plate_features() {
        let plate = RigidSurface::new(vec![
            [[-10.0, -10.0, 0.0], [10.0, -10.0, 0.0], [10.0, 10.0, 0.0]],
            [[-10.0, -10.0, 0.0], [10.0, 10.0, 0.0], [-10.0, 10.0, 0.0]],
        ])
        .unwrap();
        let scene = ContactScene::new(vec![plate]).unwrap();
        let pos = Array::from_rows(&[[1.0, 2.0, 5.0], [1.0, 2.0, 0.0], [1.0, 2.0, -4.0]]).unwrap();
        let f = contact_features(&pos, &scene, &[Pose::identity()], DEFAULT_D_MIN).unwrap();
        assert!((f.inv_dist[0] - 0.2).abs() < 1e-15);
        assert_eq!(f.normal[0], [0.0, 0.0, 1.0]);
        assert!((f.inv_dist[1] - 1000.0).abs() < 1e-9);
        // the node below the plate sees the normal flipped toward itself
        assert_eq!(f.normal[2], [0.0, 0.0, -1.0]);
        assert_eq!(f.to_array().shape(), &[3, 4]);
    }

    fn uv_sphere(center: Point, radius: Real, n_lat: usize, n_lon: usize, rot: &[[Real; 3]; 3]) -> RigidSurface {
        let pose = Pose {
            rotation: *rot,
            translation: center,
        };
        let vert = |i: usize, j: usize| -> Point {
            let th = std::f64::consts::PI as Real * i as Real / n_lat as Real;
            let ph = 2.0 * std::f64::consts::PI as Real * j as Real / n_lon as Real;
            pose.apply([radius * th.sin() * ph.cos(), radius * th.sin() * ph.sin(), radius * th.cos()])
        };
        let mut tris = Vec::new();
        for i in 0..n_lat {
            for j in 0..n_lon {
                let (a, b, c, d) = (vert(i, j), vert(i, j + 1), vert(i + 1, j), vert(i + 1, j + 1));
                if i != 0 {
                    tris.push([a, b, d]);
                }
                if i != n_lat - 1 {
                    tris.push([a, d, c]);
                }
            }
        }
        RigidSurface::new(tris).unwrap()
    }

    #[test]
    fn meshed_sphere_distance() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rot = random_rotation(&mut rng);
        let sphere = uv_sphere([0.0, 0.0, 60.0], 50.0, 23, 44, &rot);
        assert!((1900..=2100).contains(&sphere.len()), "{}", sphere.len());
        let scene = ContactScene::new(vec![sphere]).unwrap();
        let hit = scene.nearest([0.0; 3], &[Pose::identity()]).unwrap();
        assert!((hit.distance - 10.0).abs() / 10.0 < 0.005, "{}", hit.distance);
    }

    #[test]
    fn check_report_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let scene = ContactScene::new(vec![RigidSurface::new(random_triangles(&mut rng, 50)).unwrap()]).unwrap();
        let empty = contact_check_report(&Array::zeros(0, 3), &scene, &[Pose::identity()]).unwrap();
        assert!(empty.rows.is_empty());
        let pts = Array::new(vec![20, 3], (0..60).map(|_| rng.random_range(-100.0..100.0)).collect()).unwrap();
        let r = contact_check_report(&pts, &scene, &[Pose::identity()]).unwrap();
        assert_eq!(r.rows.len(), 20);
        assert!(r.max_deviation < 1e-9);
        let moved = contact_check_report(&pts.map(|v| v + 7.5), &scene, &[Pose::translation([7.5; 3])]).unwrap();
        for (a, b) in r.rows.iter().zip(&moved.rows) {
            assert!((a.index_distance - b.index_distance).abs() < 1e-9);
        }
    }

    #[test]
    fn mesh_round_trip() {
        let s = uv_sphere([0.0; 3], 5.0, 6, 8, &Pose::identity().rotation);
        let back = RigidSurface::from_mesh(&s.to_mesh().unwrap()).unwrap();
        assert_eq!(back, s);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn rigid_motion_invariance(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let surfaces = vec![
                RigidSurface::new(random_triangles(&mut rng, 40)).unwrap(),
                RigidSurface::new(random_triangles(&mut rng, 40)).unwrap(),
            ];
            let scene = ContactScene::new(surfaces).unwrap();
            let poses = [Pose::identity(), Pose::translation(random_point(&mut rng, 10.0))];
            let motion = Pose { rotation: random_rotation(&mut rng), translation: random_point(&mut rng, 50.0) };
            let moved_poses = [motion.compose(&poses[0]), motion.compose(&poses[1])];
            let pts: Vec<Point> = (0..10).map(|_| random_point(&mut rng, 100.0)).collect();
            let flat = |ps: &[Point]| Array::new(vec![ps.len(), 3], ps.iter().flatten().copied().collect()).unwrap();
            let moved_pts: Vec<Point> = pts.iter().map(|&p| motion.apply(p)).collect();
            let f = contact_features(&flat(&pts), &scene, &poses, DEFAULT_D_MIN).unwrap();
            let g = contact_features(&flat(&moved_pts), &scene, &moved_poses, DEFAULT_D_MIN).unwrap();
            for i in 0..pts.len() {
                prop_assert!((f.inv_dist[i] - g.inv_dist[i]).abs() <= 1e-9 * f.inv_dist[i].max(1.0));
                let rotated = motion.rotate(f.normal[i]);
                for d in 0..3 {
                    prop_assert!((rotated[d] - g.normal[i][d]).abs() < 1e-9);
                }
                prop_assert!((norm(g.normal[i]) - 1.0).abs() < 1e-9);
            }
        }

        #[test]
        fn distance_is_one_lipschitz(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let scene = ContactScene::new(vec![RigidSurface::new(random_triangles(&mut rng, 60)).unwrap()]).unwrap();
            let p = random_point(&mut rng, 110.0);
            let q = add(p, random_point(&mut rng, 10.0));
            let dp = scene.nearest(p, &[Pose::identity()]).unwrap().distance;
            let dq = scene.nearest(q, &[Pose::identity()]).unwrap().distance;
            prop_assert!((dp - dq).abs() <= norm(sub(p, q)) + 1e-12);
        }
    }
}
