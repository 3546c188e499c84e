//! Unified ray-query interface over the two geometry representations.

use crate::bvh::{self, Bvh};
use crate::math::{Aabb, Ray, Vec3};
use crate::mesh::TriangleMesh;
use crate::sdf::{SdfScene, TraceParams};

/// A point on a surface with its outward unit normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceSample {
    pub position: Vec3,
    pub normal: Vec3,
}

/// Result of a nearest-hit ray query.
#[derive(Debug, Clone, Copy)]
pub struct RayHit {
    pub hit: bool,
    pub t: f64,
    pub position: Vec3,
    /// Shading normal: interpolated vertex normal on meshes when present,
    /// gradient normal on SDFs.
    pub normal: Vec3,
    /// Mesh hits carry the triangle index and full barycentrics
    /// (corner 0, corner 1, corner 2); SDF hits carry None.
    pub tri: Option<(u32, [f64; 3])>,
}

impl RayHit {
    pub fn miss() -> RayHit {
        RayHit { hit: false, t: f64::INFINITY, position: Vec3::ZERO, normal: Vec3::ZERO, tri: None }
    }
}

/// A renderable/bakeable surface: triangle mesh behind a BVH, or an SDF
/// scene traced by sphere marching.
#[derive(Debug, Clone)]
pub enum Surface {
    Mesh { mesh: TriangleMesh, bvh: Bvh },
    Sdf { scene: SdfScene, params: TraceParams },
}

impl Surface {
    pub fn from_mesh(mesh: TriangleMesh) -> Surface {
        let bvh = bvh::build_bvh(&mesh);
        Surface::Mesh { mesh, bvh }
    }

    pub fn from_sdf(scene: SdfScene) -> Surface {
        let params = TraceParams::for_scene(&scene);
        Surface::Sdf { scene, params }
    }

    pub fn bounds(&self) -> Aabb {
        match self {
            Surface::Mesh { mesh, .. } => mesh.aabb(),
            Surface::Sdf { scene, .. } => scene.bounds,
        }
    }

    pub fn diagonal(&self) -> f64 {
        self.bounds().diagonal()
    }

    /// Origin offset for secondary (visibility) rays, scene-scaled to avoid
    /// self-intersection. SDF origins sit a few hit-epsilons out so the
    /// first march step starts strictly outside the hit shell.
    pub fn t_eps(&self) -> f64 {
        match self {
            Surface::Mesh { .. } => 1e-4 * self.diagonal(),
            Surface::Sdf { params, .. } => 3.0 * params.hit_eps,
        }
    }

    /// Nearest hit with t in (t_min, t_max).
    pub fn ray_intersect(&self, ray: &Ray, t_min: f64, t_max: f64) -> RayHit {
        match self {
            Surface::Mesh { mesh, bvh } => match bvh::intersect(mesh, bvh, ray, t_min, t_max) {
                None => RayHit::miss(),
                Some(h) => {
                    let normal = mesh.shading_normal(h.tri as usize, h.u, h.v);
                    RayHit {
                        hit: true,
                        t: h.t,
                        position: ray.at(h.t),
                        normal,
                        tri: Some((h.tri, [1.0 - h.u - h.v, h.u, h.v])),
                    }
                }
            },
            Surface::Sdf { scene, params } => match scene.sphere_trace(ray, t_min, params) {
                None => RayHit::miss(),
                Some(t) => {
                    let position = ray.at(t);
                    // A singular gradient at the exact hit point cannot be
                    // signalled through the miss-flag contract; fall back to
                    // the facing direction.
                    let normal = scene.normal(position).unwrap_or(-ray.dir);
                    RayHit { hit: true, t, position, normal, tri: None }
                }
            },
        }
    }

    /// Any-hit visibility query for t in (t_min, t_max).
    pub fn occluded(&self, ray: &Ray, t_min: f64, t_max: f64) -> bool {
        match self {
            Surface::Mesh { mesh, bvh } => bvh::occluded(mesh, bvh, ray, t_min, t_max),
            Surface::Sdf { scene, params } => {
                let mut p = *params;
                p.t_max = p.t_max.min(t_max);
                scene.sphere_trace(ray, t_min, &p).is_some()
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::vec3;

    #[test]
    fn mesh_surface_reports_barycentrics() {
        let mesh = TriangleMesh::new(
            vec![vec3(0.0, 0.0, 0.0), vec3(1.0, 0.0, 0.0), vec3(0.0, 1.0, 0.0)],
            vec![[0, 1, 2]],
            None,
        )
        .unwrap();
        let s = Surface::from_mesh(mesh);
        let ray = Ray::new(vec3(0.25, 0.25, 1.0), vec3(0.0, 0.0, -1.0));
        let hit = s.ray_intersect(&ray, 1e-9, f64::INFINITY);
        assert!(hit.hit);
        let (tri, bary) = hit.tri.unwrap();
        assert_eq!(tri, 0);
        assert!((bary[0] - 0.5).abs() < 1e-12);
        assert!((bary[1] - 0.25).abs() < 1e-12);
        assert!((bary[2] - 0.25).abs() < 1e-12);
        assert!((hit.position - vec3(0.25, 0.25, 0.0)).length() < 1e-12);
    }

    #[test]
    fn miss_has_flag_cleared() {
        let mesh = TriangleMesh::new(
            vec![vec3(0.0, 0.0, 0.0), vec3(1.0, 0.0, 0.0), vec3(0.0, 1.0, 0.0)],
            vec![[0, 1, 2]],
            None,
        )
        .unwrap();
        let s = Surface::from_mesh(mesh);
        let ray = Ray::new(vec3(5.0, 5.0, 1.0), vec3(0.0, 0.0, -1.0));
        assert!(!s.ray_intersect(&ray, 1e-9, f64::INFINITY).hit);
    }
}
