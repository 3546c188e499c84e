//! Bounding-volume hierarchy over mesh triangles.
//!
//! Traversal is written so the BVH answer is *identical* to brute-force
//! iteration: nodes are culled only when strictly farther than the current
//! best hit, and ties on t are broken toward the lower triangle index.

use crate::math::{vec3, Aabb, Ray, Vec3};
use crate::mesh::TriangleMesh;

#[derive(Debug, Clone)]
struct BvhNode {
    aabb: Aabb,
    /// Leaf: start/count into `order`. Inner: `left` child is node+1,
    /// `right` stored here, count == 0.
    right: u32,
    start: u32,
    count: u32,
}

#[derive(Debug, Clone)]
pub struct Bvh {
    nodes: Vec<BvhNode>,
    order: Vec<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeshHit {
    pub t: f64,
    pub tri: u32,
    /// Barycentric weights of corners 1 and 2 (corner 0 gets 1-u-v).
    pub u: f64,
    pub v: f64,
}

const LEAF_SIZE: usize = 4;

pub fn build_bvh(mesh: &TriangleMesh) -> Bvh {
    let n = mesh.triangles.len();
    let mut order: Vec<u32> = (0..n as u32).collect();
    let centroids: Vec<Vec3> = (0..n)
        .map(|i| {
            let (a, b, c) = mesh.corners(i);
            (a + b + c) / 3.0
        })
        .collect();
    let tri_boxes: Vec<Aabb> = (0..n)
        .map(|i| {
            let (a, b, c) = mesh.corners(i);
            let mut bb = Aabb::EMPTY;
            bb.grow(a);
            bb.grow(b);
            bb.grow(c);
            bb
        })
        .collect();

    let mut nodes = Vec::with_capacity(2 * n.max(1));
    build_node(&mut nodes, &mut order, 0, n, &centroids, &tri_boxes);
    Bvh { nodes, order }
}

fn range_aabb(order: &[u32], start: usize, count: usize, tri_boxes: &[Aabb]) -> Aabb {
    let mut bb = Aabb::EMPTY;
    for &t in &order[start..start + count] {
        bb = bb.union(tri_boxes[t as usize]);
    }
    bb
}

fn build_node(
    nodes: &mut Vec<BvhNode>,
    order: &mut [u32],
    start: usize,
    count: usize,
    centroids: &[Vec3],
    tri_boxes: &[Aabb],
) -> u32 {
    let aabb = range_aabb(order, start, count, tri_boxes);
    let this = nodes.len() as u32;
    nodes.push(BvhNode { aabb, right: 0, start: start as u32, count: count as u32 });
    if count <= LEAF_SIZE {
        return this;
    }
    // Median split along the widest centroid axis.
    let mut cb = Aabb::EMPTY;
    for &t in &order[start..start + count] {
        cb.grow(centroids[t as usize]);
    }
    let ext = cb.extent();
    let axis = if ext.x >= ext.y && ext.x >= ext.z {
        0
    } else if ext.y >= ext.z {
        1
    } else {
        2
    };
    if ext.axis(axis) <= 1e-12 {
        // All centroids coincide; keep the leaf.
        return this;
    }
    let slice = &mut order[start..start + count];
    let mid = count / 2;
    slice.select_nth_unstable_by(mid, |&a, &b| {
        centroids[a as usize]
            .axis(axis)
            .partial_cmp(&centroids[b as usize].axis(axis))
            .unwrap()
            .then(a.cmp(&b))
    });
    nodes[this as usize].count = 0;
    build_node(nodes, order, start, mid, centroids, tri_boxes);
    let right = build_node(nodes, order, start + mid, count - mid, centroids, tri_boxes);
    nodes[this as usize].right = right;
    this
}

/// Moeller-Trumbore, no backface culling. Accepts hits with t in
/// (t_min, t_max), open interval.
#[inline]
pub fn ray_triangle(a: Vec3, b: Vec3, c: Vec3, ray: &Ray, t_min: f64, t_max: f64) -> Option<(f64, f64, f64)> {
    let e1 = b - a;
    let e2 = c - a;
    let p = ray.dir.cross(e2);
    let det = e1.dot(p);
    if det.abs() < 1e-12 {
        return None;
    }
    let inv = 1.0 / det;
    let s = ray.origin - a;
    let u = s.dot(p) * inv;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let q = s.cross(e1);
    let v = ray.dir.dot(q) * inv;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    let t = e2.dot(q) * inv;
    if t > t_min && t < t_max {
        Some((t, u, v))
    } else {
        None
    }
}

fn better(candidate: (f64, u32), best: Option<(f64, u32)>) -> bool {
    match best {
        None => true,
        Some((bt, bi)) => candidate.0 < bt || (candidate.0 == bt && candidate.1 < bi),
    }
}

/// Nearest hit via the BVH. Equal to `intersect_brute` on every input.
pub fn intersect(mesh: &TriangleMesh, bvh: &Bvh, ray: &Ray, t_min: f64, t_max: f64) -> Option<MeshHit> {
    if bvh.nodes.is_empty() {
        return None;
    }
    let inv_dir = vec3(1.0 / ray.dir.x, 1.0 / ray.dir.y, 1.0 / ray.dir.z);
    let mut best: Option<MeshHit> = None;
    let mut stack = [0u32; 64];
    let mut top = 0usize;
    stack[top] = 0;
    top += 1;
    while top > 0 {
        top -= 1;
        let id = stack[top];
        let node = &bvh.nodes[id as usize];
        let best_t = best.map_or(t_max, |h| h.t);
        let entry = node.aabb.ray_hit(ray.origin, inv_dir, t_min, t_max);
        match entry {
            // Cull only when strictly beyond the best hit so that equal-t
            // ties are still visited and broken by index.
            Some(e) if e <= best_t => {}
            _ => continue,
        }
        if node.count > 0 {
            for &tri in &bvh.order[node.start as usize..(node.start + node.count) as usize] {
                let (a, b, c) = mesh.corners(tri as usize);
                if let Some((t, u, v)) = ray_triangle(a, b, c, ray, t_min, t_max) {
                    if better((t, tri), best.map(|h| (h.t, h.tri))) {
                        best = Some(MeshHit { t, tri, u, v });
                    }
                }
            }
        } else {
            // Visit the near child first for earlier best-hit shrinkage.
            let l = id + 1;
            let r = node.right;
            let dl = bvh.nodes[l as usize].aabb.ray_hit(ray.origin, inv_dir, t_min, t_max);
            let dr = bvh.nodes[r as usize].aabb.ray_hit(ray.origin, inv_dir, t_min, t_max);
            let (first, second) = match (dl, dr) {
                (Some(a), Some(b)) if b < a => (r, l),
                _ => (l, r),
            };
            stack[top] = second;
            top += 1;
            stack[top] = first;
            top += 1;
        }
    }
    best
}

/// Reference implementation: test every triangle in index order.
pub fn intersect_brute(mesh: &TriangleMesh, ray: &Ray, t_min: f64, t_max: f64) -> Option<MeshHit> {
    let mut best: Option<MeshHit> = None;
    for tri in 0..mesh.triangles.len() as u32 {
        let (a, b, c) = mesh.corners(tri as usize);
        if let Some((t, u, v)) = ray_triangle(a, b, c, ray, t_min, t_max) {
            if better((t, tri), best.map(|h| (h.t, h.tri))) {
                best = Some(MeshHit { t, tri, u, v });
            }
        }
    }
    best
}

/// Any-hit query with early exit; used for visibility rays.
pub fn occluded(mesh: &TriangleMesh, bvh: &Bvh, ray: &Ray, t_min: f64, t_max: f64) -> bool {
    if bvh.nodes.is_empty() {
        return false;
    }
    let inv_dir = vec3(1.0 / ray.dir.x, 1.0 / ray.dir.y, 1.0 / ray.dir.z);
    let mut stack = [0u32; 64];
    let mut top = 0usize;
    stack[top] = 0;
    top += 1;
    while top > 0 {
        top -= 1;
        let id = stack[top];
        let node = &bvh.nodes[id as usize];
        if node.aabb.ray_hit(ray.origin, inv_dir, t_min, t_max).is_none() {
            continue;
        }
        if node.count > 0 {
            for &tri in &bvh.order[node.start as usize..(node.start + node.count) as usize] {
                let (a, b, c) = mesh.corners(tri as usize);
                if ray_triangle(a, b, c, ray, t_min, t_max).is_some() {
                    return true;
                }
            }
        } else {
            stack[top] = id + 1;
            top += 1;
            stack[top] = node.right;
            top += 1;
        }
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::vec3;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn unit_square_pair() -> TriangleMesh {
        TriangleMesh::new(
            vec![
                vec3(-0.5, -0.5, 0.0),
                vec3(0.5, -0.5, 0.0),
                vec3(0.5, 0.5, 0.0),
                vec3(-0.5, 0.5, 0.0),
            ],
            vec![[0, 1, 2], [0, 2, 3]],
            None,
        )
        .unwrap()
    }

    #[test]
    fn axis_ray_hits_plane_pair() {
        let mesh = unit_square_pair();
        let bvh = build_bvh(&mesh);
        let ray = Ray::new(vec3(0.0, 0.0, -5.0), vec3(0.0, 0.0, 1.0));
        let hit = intersect(&mesh, &bvh, &ray, 1e-9, f64::INFINITY).unwrap();
        assert!((hit.t - 5.0).abs() < 1e-9);
        let p = ray.at(hit.t);
        assert!(p.length() < 1e-9);
    }

    #[test]
    fn miss_points_away() {
        let mesh = unit_square_pair();
        let bvh = build_bvh(&mesh);
        let ray = Ray::new(vec3(0.0, 0.0, -5.0), vec3(0.0, 0.0, -1.0));
        assert!(intersect(&mesh, &bvh, &ray, 1e-9, f64::INFINITY).is_none());
        assert!(!occluded(&mesh, &bvh, &ray, 1e-9, f64::INFINITY));
    }

    fn random_mesh(n_tris: usize, seed: u64) -> TriangleMesh {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut vertices = Vec::new();
        let mut triangles = Vec::new();
        while triangles.len() < n_tris {
            let base = vec3(
                rng.gen::<f64>() * 4.0 - 2.0,
                rng.gen::<f64>() * 4.0 - 2.0,
                rng.gen::<f64>() * 4.0 - 2.0,
            );
            let e1 = vec3(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5);
            let e2 = vec3(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5);
            if e1.cross(e2).length() < 1e-3 {
                continue;
            }
            let i = vertices.len() as u32;
            vertices.push(base);
            vertices.push(base + e1);
            vertices.push(base + e2);
            triangles.push([i, i + 1, i + 2]);
        }
        TriangleMesh::new(vertices, triangles, None).unwrap()
    }

    #[test]
    fn bvh_equals_brute_force_on_random_scenes() {
        let mesh = random_mesh(500, 99);
        let bvh = build_bvh(&mesh);
        let mut rng = ChaCha8Rng::seed_from_u64(100);
        for _ in 0..1000 {
            let origin = vec3(
                rng.gen::<f64>() * 6.0 - 3.0,
                rng.gen::<f64>() * 6.0 - 3.0,
                rng.gen::<f64>() * 6.0 - 3.0,
            );
            let dir = vec3(
                rng.gen::<f64>() - 0.5,
                rng.gen::<f64>() - 0.5,
                rng.gen::<f64>() - 0.5,
            )
            .normalized();
            let ray = Ray::new(origin, dir);
            let a = intersect(&mesh, &bvh, &ray, 1e-9, f64::INFINITY);
            let b = intersect_brute(&mesh, &ray, 1e-9, f64::INFINITY);
            assert_eq!(a, b, "ray {origin:?} {dir:?}");
            let occ = occluded(&mesh, &bvh, &ray, 1e-9, 2.0);
            let occ_brute = intersect_brute(&mesh, &ray, 1e-9, 2.0).is_some();
            assert_eq!(occ, occ_brute);
        }
    }

    #[test]
    fn t_max_bounds_hits() {
        let mesh = unit_square_pair();
        let bvh = build_bvh(&mesh);
        let ray = Ray::new(vec3(0.0, 0.0, -5.0), vec3(0.0, 0.0, 1.0));
        assert!(intersect(&mesh, &bvh, &ray, 1e-9, 4.0).is_none());
        assert!(intersect(&mesh, &bvh, &ray, 1e-9, 6.0).is_some());
    }
}
