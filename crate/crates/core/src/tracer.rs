//! BVH ray tracing over ellipsoidal Gaussian primitives.
//!
//! A ray meets a primitive at the peak of its density along the ray:
//! t* = Δμᵀ Σ⁻¹ d / (dᵀ Σ⁻¹ d), clamped to `t_eps`, with response
//! α* = o·exp(−½ q(t*)). A hit is accepted when q(t*) ≤ 9 (the 3σ
//! ellipsoid the BVH boxes bound) and α* > α_min.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::math::{self, Mat3, Vec3};
use crate::scene::{GaussianPrimitive, Scene};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceOpts {
    pub alpha_min: f64,
    pub t_stop: f64,
    pub t_eps: f64,
    /// Evaluate view-dependent SH along the ray; band 0 only otherwise.
    pub sh_eval: bool,
    pub max_leaf: usize,
}

impl Default for TraceOpts {
    fn default() -> Self {
        TraceOpts {
            alpha_min: 1.0 / 255.0,
            t_stop: 1e-3,
            t_eps: 1e-4,
            sh_eval: true,
            max_leaf: 4,
        }
    }
}

const CUTOFF_Q: f64 = 9.0;
const CUTOFF_SLACK: f64 = 1e-9;

/// Default traceable set: rough-region primitives.
pub fn rough_region(g: &GaussianPrimitive) -> bool {
    g.region >= 0.5
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    fn empty() -> Self {
        Aabb {
            min: Vec3::repeat(f64::INFINITY),
            max: Vec3::repeat(f64::NEG_INFINITY),
        }
    }

    fn union(&self, o: &Aabb) -> Aabb {
        Aabb {
            min: self.min.inf(&o.min),
            max: self.max.sup(&o.max),
        }
    }

    pub fn contains(&self, o: &Aabb) -> bool {
        (0..3).all(|i| self.min[i] <= o.min[i] && self.max[i] >= o.max[i])
    }

    /// Slab test against the ray segment [0, ∞).
    fn hit(&self, origin: &Vec3, inv_dir: &Vec3) -> bool {
        let mut t0 = 0.0f64;
        let mut t1 = f64::INFINITY;
        for i in 0..3 {
            let a = (self.min[i] - origin[i]) * inv_dir[i];
            let b = (self.max[i] - origin[i]) * inv_dir[i];
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            // NaN arises for axis-parallel rays grazing a slab plane; keep the box.
            if !lo.is_nan() {
                t0 = t0.max(lo);
            }
            if !hi.is_nan() {
                t1 = t1.min(hi);
            }
        }
        t0 <= t1
    }
}

/// Geometry of one traceable primitive, frozen at build time.
#[derive(Clone, Debug, PartialEq)]
struct Item {
    index: u32,
    mean: Vec3,
    inv_cov: Mat3,
    opacity: f64,
    bounds: Aabb,
}

#[derive(Clone, Debug, PartialEq)]
enum Node {
    Leaf { bounds: Aabb, start: usize, count: usize },
    Inner { bounds: Aabb, left: usize, right: usize },
}

impl Node {
    fn bounds(&self) -> &Aabb {
        match self {
            Node::Leaf { bounds, .. } | Node::Inner { bounds, .. } => bounds,
        }
    }
}

/// Bounding volume hierarchy over the 3σ boxes of the traceable primitives.
#[derive(Clone, Debug, PartialEq)]
pub struct Bvh {
    nodes: Vec<Node>,
    items: Vec<Item>,
    opts: TraceOpts,
}

/// One accepted ray/primitive response.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hit {
    pub prim: u32,
    pub t: f64,
    pub alpha: f64,
}

/// Composited result of one traced ray.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TraceResult {
    /// L_ind + V·L_env(dir) with the environment at mip level 0.
    pub l_i: Vec3,
    pub l_ind: Vec3,
    pub v: f64,
    pub e_i: f64,
    /// Composited hits: (primitive, blend weight, SH clamp mask).
    pub contributions: Vec<(u32, f64, [bool; 3])>,
}

fn box_of(g: &GaussianPrimitive, cov: &Mat3) -> Aabb {
    let m = g.mean();
    let r = Vec3::new(cov[(0, 0)].sqrt(), cov[(1, 1)].sqrt(), cov[(2, 2)].sqrt()) * CUTOFF_Q.sqrt();
    let pad = r * 1e-6 + Vec3::repeat(1e-12);
    Aabb {
        min: m - r - pad,
        max: m + r + pad,
    }
}

/// Builds the hierarchy over the primitives selected by `filter`.
/// Median split on the longest centroid axis; deterministic.
pub fn build_bvh(scene: &Scene, filter: impl Fn(&GaussianPrimitive) -> bool, opts: &TraceOpts) -> Bvh {
    let mut items: Vec<Item> = scene
        .primitives
        .iter()
        .enumerate()
        .filter(|(_, g)| filter(g))
        .filter_map(|(i, g)| {
            let cov = g.covariance();
            Some(Item {
                index: i as u32,
                mean: g.mean(),
                inv_cov: cov.try_inverse()?,
                opacity: g.opacity as f64,
                bounds: box_of(g, &cov),
            })
        })
        .collect();
    let mut nodes = Vec::new();
    if !items.is_empty() {
        let n = items.len();
        build_node(&mut items, 0, n, opts.max_leaf.max(1), &mut nodes);
    }
    Bvh {
        nodes,
        items,
        opts: opts.clone(),
    }
}

fn build_node(items: &mut [Item], start: usize, end: usize, max_leaf: usize, nodes: &mut Vec<Node>) -> usize {
    let bounds = items[start..end].iter().fold(Aabb::empty(), |b, it| b.union(&it.bounds));
    let id = nodes.len();
    if end - start <= max_leaf {
        nodes.push(Node::Leaf {
            bounds,
            start,
            count: end - start,
        });
        return id;
    }
    let (cmin, cmax) = items[start..end].iter().fold(
        (Vec3::repeat(f64::INFINITY), Vec3::repeat(f64::NEG_INFINITY)),
        |(lo, hi), it| (lo.inf(&it.mean), hi.sup(&it.mean)),
    );
    let ext = cmax - cmin;
    let axis = if ext.x >= ext.y && ext.x >= ext.z {
        0
    } else if ext.y >= ext.z {
        1
    } else {
        2
    };
    items[start..end].sort_by(|a, b| a.mean[axis].total_cmp(&b.mean[axis]).then(a.index.cmp(&b.index)));
    let mid = start + (end - start) / 2;
    nodes.push(Node::Leaf { bounds, start, count: 0 });
    let left = build_node(items, start, mid, max_leaf, nodes);
    let right = build_node(items, mid, end, max_leaf, nodes);
    nodes[id] = Node::Inner { bounds, left, right };
    id
}

impl Bvh {
    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn opts(&self) -> &TraceOpts {
        &self.opts
    }

    fn respond(&self, it: &Item, origin: &Vec3, dir: &Vec3) -> Option<Hit> {
        let dm = it.mean - origin;
        let sd = it.inv_cov * dir;
        let a = dir.dot(&sd);
        let b = dm.dot(&sd);
        let c = dm.dot(&(it.inv_cov * dm));
        let t = (b / a).max(self.opts.t_eps);
        let q = (c - 2.0 * t * b + t * t * a).max(0.0);
        if q > CUTOFF_Q + CUTOFF_SLACK {
            return None;
        }
        let alpha = it.opacity * (-0.5 * q).exp();
        (alpha > self.opts.alpha_min).then_some(Hit { prim: it.index, t, alpha })
    }

    /// Checks the containment invariants; returns offending node ids.
    pub fn containment_violations(&self) -> Vec<usize> {
        let mut bad = Vec::new();
        for (id, node) in self.nodes.iter().enumerate() {
            match node {
                Node::Leaf { bounds, start, count } => {
                    if self.items[*start..start + count].iter().any(|it| !bounds.contains(&it.bounds)) {
                        bad.push(id);
                    }
                }
                Node::Inner { bounds, left, right } => {
                    if !bounds.contains(self.nodes[*left].bounds()) || !bounds.contains(self.nodes[*right].bounds()) {
                        bad.push(id);
                    }
                }
            }
        }
        bad
    }

    /// Number of leaves.
    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }
}

fn sort_hits(hits: &mut [Hit]) {
    hits.sort_by(|a, b| a.t.total_cmp(&b.t).then(a.prim.cmp(&b.prim)));
}

/// All accepted hits along the ray, ascending in t* (ties by index).
pub fn intersect_ray(bvh: &Bvh, origin: &Vec3, dir: &Vec3) -> Vec<Hit> {
    let mut hits = Vec::new();
    if bvh.nodes.is_empty() {
        return hits;
    }
    let inv = dir.map(|v| 1.0 / v);
    let mut stack = vec![0usize];
    while let Some(id) = stack.pop() {
        let node = &bvh.nodes[id];
        if !node.bounds().hit(origin, &inv) {
            continue;
        }
        match node {
            Node::Leaf { start, count, .. } => {
                for it in &bvh.items[*start..start + count] {
                    if let Some(h) = bvh.respond(it, origin, dir) {
                        hits.push(h);
                    }
                }
            }
            Node::Inner { left, right, .. } => {
                stack.push(*right);
                stack.push(*left);
            }
        }
    }
    sort_hits(&mut hits);
    hits
}

/// Linear-scan reference for [`intersect_ray`].
pub fn intersect_linear(bvh: &Bvh, origin: &Vec3, dir: &Vec3) -> Vec<Hit> {
    let mut hits: Vec<Hit> = bvh.items.iter().filter_map(|it| bvh.respond(it, origin, dir)).collect();
    sort_hits(&mut hits);
    hits
}

/// Front-to-back compositing of an ordered hit list.
pub fn composite_hits(hits: &[Hit], scene: &Scene, dir: &Vec3, opts: &TraceOpts) -> TraceResult {
    let basis = if opts.sh_eval {
        math::sh_basis_rest(scene.sh_degree, dir)
    } else {
        Vec::new()
    };
    let mut r = TraceResult {
        v: 1.0,
        ..Default::default()
    };
    let mut t = 1.0;
    for h in hits {
        let g = &scene.primitives[h.prim as usize];
        let (color, live) = math::eval_color(g.color, &g.sh_rest, &basis);
        let w = h.alpha * t;
        r.l_ind += color * w;
        r.e_i += g.label as f64 * w;
        r.contributions.push((h.prim, w, live));
        t *= 1.0 - h.alpha;
        if t < opts.t_stop {
            break;
        }
    }
    r.v = t;
    r.l_i = r.l_ind + scene.env.sample(dir, 0.0) * t;
    r
}

/// Traces one ray from `origin` along unit `dir`.
pub fn trace(bvh: &Bvh, scene: &Scene, origin: &Vec3, dir: &Vec3) -> TraceResult {
    composite_hits(&intersect_ray(bvh, origin, dir), scene, dir, &bvh.opts)
}

/// Same as [`trace`] with the linear-scan hit list.
pub fn trace_linear(bvh: &Bvh, scene: &Scene, origin: &Vec3, dir: &Vec3) -> TraceResult {
    composite_hits(&intersect_linear(bvh, origin, dir), scene, dir, &bvh.opts)
}

/// Traces a batch of (origin, dir) rays in parallel.
pub fn trace_batch(bvh: &Bvh, scene: &Scene, rays: &[(Vec3, Vec3)]) -> Vec<TraceResult> {
    rays.par_iter().map(|(o, d)| trace(bvh, scene, o, d)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::tests::random_scene;
    use crate::scene::tests::tiny_scene;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn iso(pos: [f32; 3], sigma: f32, opacity: f32, label: f32, color: [f32; 3]) -> GaussianPrimitive {
        GaussianPrimitive {
            position: pos,
            scale: [sigma; 3],
            opacity,
            label,
            color,
            region: 1.0,
            ..Default::default()
        }
    }

    fn scene_of(prims: Vec<GaussianPrimitive>) -> Scene {
        let mut s = tiny_scene();
        s.primitives = prims;
        s
    }

    fn all(_: &GaussianPrimitive) -> bool {
        true
    }

    #[test]
    fn single_primitive_single_leaf() {
        let s = scene_of(vec![iso([0.0; 3], 0.1, 0.8, 0.0, [1.0; 3])]);
        let b = build_bvh(&s, all, &TraceOpts::default());
        assert_eq!(b.node_count(), 1);
        assert_eq!(b.leaf_count(), 1);
    }

    #[test]
    fn empty_selection_traces_to_unit_visibility() {
        let s = scene_of(vec![iso([0.0; 3], 0.1, 0.8, 1.0, [1.0; 3])]);
        let b = build_bvh(&s, |_| false, &TraceOpts::default());
        assert!(b.is_empty());
        let r = trace(&b, &s, &Vec3::new(0.0, 0.0, -2.0), &Vec3::z());
        assert_eq!((r.v, r.l_ind, r.e_i), (1.0, Vec3::zeros(), 0.0));
    }

    #[test]
    fn ray_through_mean_peaks_at_opacity() {
        let s = scene_of(vec![iso([0.0, 0.0, 1.5], 0.1, 0.8, 0.0, [1.0; 3])]);
        let b = build_bvh(&s, all, &TraceOpts::default());
        let hits = intersect_ray(&b, &Vec3::zeros(), &Vec3::z());
        assert_eq!(hits.len(), 1);
        assert!((hits[0].alpha - 0.8).abs() < 1e-7);
        assert!((hits[0].t - 1.5).abs() < 1e-7);
    }

    #[test]
    fn three_sigma_offset_falloff() {
        // closed-form Gaussian falloff: q = 9 at 3σ
        let sigma = 0.125f32;
        let s = scene_of(vec![iso([0.375, 0.0, 2.0], sigma, 0.8, 0.0, [1.0; 3])]);
        let expected = 0.8f32 as f64 * (-4.5f64).exp();
        let mut opts = TraceOpts::default();
        opts.alpha_min = 0.008;
        let hits = intersect_ray(&build_bvh(&s, all, &opts), &Vec3::zeros(), &Vec3::z());
        assert_eq!(hits.len(), 1);
        assert!((hits[0].alpha - expected).abs() < 1e-9);
        opts.alpha_min = 0.0095;
        assert!(intersect_ray(&build_bvh(&s, all, &opts), &Vec3::zeros(), &Vec3::z()).is_empty());
    }

    #[test]
    fn single_term_blend() {
        let s = scene_of(vec![iso([0.0, 0.0, 1.0], 0.1, 0.6, 1.0, [1.0, 0.0, 0.0])]);
        let b = build_bvh(&s, all, &TraceOpts::default());
        let r = trace(&b, &s, &Vec3::zeros(), &Vec3::z());
        let a = 0.6f32 as f64;
        assert!((r.l_ind - Vec3::new(a, 0.0, 0.0)).norm() < 1e-7);
        assert!((r.e_i - a).abs() < 1e-7 && (r.v - (1.0 - a)).abs() < 1e-7);
    }

    #[test]
    fn two_half_hits() {
        let s = scene_of(vec![
            iso([0.0, 0.0, 1.0], 0.1, 0.5, 1.0, [1.0; 3]),
            iso([0.0, 0.0, 2.0], 0.1, 0.5, 0.0, [1.0; 3]),
        ]);
        let b = build_bvh(&s, all, &TraceOpts::default());
        let r = trace(&b, &s, &Vec3::zeros(), &Vec3::z());
        assert!((r.e_i - 0.5).abs() < 1e-12 && (r.v - 0.25).abs() < 1e-12);
    }

    #[test]
    fn boxes_nest_and_hits_match_linear_scan() {
        let s = random_scene(100, 11);
        let b = build_bvh(&s, all, &TraceOpts::default());
        assert!(b.containment_violations().is_empty());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..500 {
            let o = Vec3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            let d = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)).normalize();
            assert_eq!(intersect_ray(&b, &o, &d), intersect_linear(&b, &o, &d));
        }
    }

    #[test]
    fn all_label_one_gives_complement_of_visibility() {
        let mut s = random_scene(60, 3);
        s.primitives.iter_mut().for_each(|g| g.label = 1.0);
        let b = build_bvh(&s, all, &TraceOpts::default());
        let r = trace(&b, &s, &Vec3::new(0.0, -3.0, 0.0), &Vec3::y());
        assert!(!r.contributions.is_empty());
        assert!((r.e_i - (1.0 - r.v)).abs() < 1e-12);
    }
}
