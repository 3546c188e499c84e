//! Triangle meshes: OBJ loading, validation, and area-weighted surface
//! sampling.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::math::{Aabb, Vec3};
use crate::sh::SHVector;
use crate::surface::SurfaceSample;

#[derive(Debug, Clone)]
pub struct TriangleMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[u32; 3]>,
    /// Per-vertex shading normals (unit length).
    pub normals: Option<Vec<Vec3>>,
    /// Per-vertex baked transfer, the storage baseline.
    pub baked: Option<Vec<SHVector>>,
}

impl TriangleMesh {
    /// Validating constructor: indices in range, no degenerate triangles,
    /// unit normals.
    pub fn new(
        vertices: Vec<Vec3>,
        triangles: Vec<[u32; 3]>,
        normals: Option<Vec<Vec3>>,
    ) -> Result<TriangleMesh> {
        let mesh = TriangleMesh { vertices, triangles, normals, baked: None };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn validate(&self) -> Result<()> {
        let nv = self.vertices.len() as u32;
        for (i, t) in self.triangles.iter().enumerate() {
            if t.iter().any(|&v| v >= nv) {
                return Err(Error::data(format!(
                    "triangle {i} references vertex out of range (mesh has {nv} vertices)"
                )));
            }
        }
        if self.vertices.iter().any(|v| !v.is_finite()) {
            return Err(Error::data("non-finite vertex position"));
        }
        for (i, _) in self.triangles.iter().enumerate() {
            if self.triangle_area(i) <= 1e-12 {
                return Err(Error::data(format!("triangle {i} is degenerate")));
            }
        }
        if let Some(ns) = &self.normals {
            if ns.len() != self.vertices.len() {
                return Err(Error::data("normal count does not match vertex count"));
            }
            if ns.iter().any(|n| !n.is_unit(1e-4)) {
                return Err(Error::data("non-unit vertex normal"));
            }
        }
        if let Some(b) = &self.baked {
            if b.len() != self.vertices.len() {
                return Err(Error::data("baked transfer count does not match vertex count"));
            }
        }
        Ok(())
    }

    pub fn corners(&self, tri: usize) -> (Vec3, Vec3, Vec3) {
        let [a, b, c] = self.triangles[tri];
        (
            self.vertices[a as usize],
            self.vertices[b as usize],
            self.vertices[c as usize],
        )
    }

    pub fn triangle_area(&self, tri: usize) -> f64 {
        let (a, b, c) = self.corners(tri);
        0.5 * (b - a).cross(c - a).length()
    }

    pub fn total_area(&self) -> f64 {
        (0..self.triangles.len()).map(|i| self.triangle_area(i)).sum()
    }

    pub fn geometric_normal(&self, tri: usize) -> Vec3 {
        let (a, b, c) = self.corners(tri);
        (b - a).cross(c - a).normalized()
    }

    pub fn aabb(&self) -> Aabb {
        let mut b = Aabb::EMPTY;
        for &v in &self.vertices {
            b.grow(v);
        }
        b
    }

    /// Shading normal at barycentric (u, v) on `tri` (weights: w0 = 1-u-v on
    /// corner 0). Falls back to the geometric normal without vertex normals.
    pub fn shading_normal(&self, tri: usize, u: f64, v: f64) -> Vec3 {
        match &self.normals {
            Some(ns) => {
                let [a, b, c] = self.triangles[tri];
                let n = ns[a as usize] * (1.0 - u - v) + ns[b as usize] * u + ns[c as usize] * v;
                let len = n.length();
                if len > 1e-9 {
                    n / len
                } else {
                    self.geometric_normal(tri)
                }
            }
            None => self.geometric_normal(tri),
        }
    }
}

/// Load an ASCII OBJ (v / vn / f records; polygons fan-triangulated).
pub fn load_obj(path: &std::path::Path) -> Result<TriangleMesh> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_obj(&text)
}

fn parse_vec3(parts: &[&str], line: usize) -> Result<Vec3> {
    if parts.len() < 3 {
        return Err(Error::parse(line, "expected three coordinates"));
    }
    let mut c = [0.0; 3];
    for (i, p) in parts[..3].iter().enumerate() {
        c[i] = p
            .parse::<f64>()
            .map_err(|_| Error::parse(line, format!("bad number {p:?}")))?;
        if !c[i].is_finite() {
            return Err(Error::parse(line, format!("non-finite coordinate {p:?}")));
        }
    }
    Ok(Vec3::from_array(c))
}

/// Parse OBJ text. Faces may be `v`, `v/vt`, `v//vn`, or `v/vt/vn`; indices
/// are 1-based. Unknown record types are skipped.
pub fn parse_obj(text: &str) -> Result<TriangleMesh> {
    let mut vertices: Vec<Vec3> = Vec::new();
    let mut vns: Vec<Vec3> = Vec::new();
    // (vertex index, optional normal index) per face corner.
    let mut faces: Vec<Vec<(u32, Option<u32>)>> = Vec::new();

    for (ln, raw) in text.lines().enumerate() {
        let line = ln + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut parts = trimmed.split_whitespace();
        let tag = parts.next().unwrap();
        let rest: Vec<&str> = parts.collect();
        match tag {
            "v" => vertices.push(parse_vec3(&rest, line)?),
            "vn" => vns.push(parse_vec3(&rest, line)?),
            "f" => {
                if rest.len() < 3 {
                    return Err(Error::parse(line, "face needs at least three vertices"));
                }
                let mut corners = Vec::with_capacity(rest.len());
                for corner in &rest {
                    let mut fields = corner.split('/');
                    let v_str = fields.next().unwrap_or("");
                    let _vt = fields.next();
                    let vn_str = fields.next();
                    let v_idx: i64 = v_str
                        .parse()
                        .map_err(|_| Error::parse(line, format!("bad vertex index {v_str:?}")))?;
                    if v_idx <= 0 {
                        return Err(Error::parse(
                            line,
                            format!("vertex index {v_idx} must be positive (OBJ is 1-based)"),
                        ));
                    }
                    if v_idx as usize > vertices.len() {
                        return Err(Error::parse(
                            line,
                            format!("vertex index {v_idx} out of range"),
                        ));
                    }
                    let vn_idx = match vn_str {
                        Some(s) if !s.is_empty() => {
                            let n: i64 = s.parse().map_err(|_| {
                                Error::parse(line, format!("bad normal index {s:?}"))
                            })?;
                            if n <= 0 || n as usize > vns.len() {
                                return Err(Error::parse(
                                    line,
                                    format!("normal index {n} out of range"),
                                ));
                            }
                            Some((n - 1) as u32)
                        }
                        _ => None,
                    };
                    corners.push(((v_idx - 1) as u32, vn_idx));
                }
                faces.push(corners);
            }
            _ => {} // o, g, s, vt, usemtl, mtllib, ...
        }
    }

    let mut triangles = Vec::new();
    let mut normal_of: Vec<Option<Vec3>> = vec![None; vertices.len()];
    let mut any_normal = false;
    for face in &faces {
        for k in 1..face.len() - 1 {
            triangles.push([face[0].0, face[k].0, face[k + 1].0]);
        }
        for &(v, vn) in face {
            if let Some(ni) = vn {
                let n = vns[ni as usize];
                let len = n.length();
                if len < 1e-9 {
                    return Err(Error::data("zero-length normal record"));
                }
                normal_of[v as usize] = Some(n / len);
                any_normal = true;
            }
        }
    }

    let normals = if any_normal {
        // Vertices the file left unassigned get an area-weighted average of
        // incident face normals.
        let mut acc = vec![Vec3::ZERO; vertices.len()];
        for t in &triangles {
            let (a, b, c) = (
                vertices[t[0] as usize],
                vertices[t[1] as usize],
                vertices[t[2] as usize],
            );
            let n = (b - a).cross(c - a);
            for &v in t {
                acc[v as usize] += n;
            }
        }
        Some(
            normal_of
                .iter()
                .enumerate()
                .map(|(i, n)| match n {
                    Some(n) => *n,
                    None => {
                        let len = acc[i].length();
                        if len > 1e-12 {
                            acc[i] / len
                        } else {
                            Vec3 { x: 0.0, y: 0.0, z: 1.0 }
                        }
                    }
                })
                .collect(),
        )
    } else {
        None
    };

    TriangleMesh::new(vertices, triangles, normals)
}

/// Uniform barycentrics from two unit randoms via the sqrt warp.
pub fn uniform_barycentric(r1: f64, r2: f64) -> [f64; 3] {
    let su = r1.sqrt();
    [1.0 - su, su * (1.0 - r2), su * r2]
}

/// Area-weighted surface samples: triangle chosen by CDF inversion, point
/// uniform within the triangle, normal from shading normals when present.
/// Returns (triangle index, barycentrics, sample) per point.
pub fn sample_surface_detailed(
    mesh: &TriangleMesh,
    count: usize,
    seed: u64,
) -> Result<Vec<(u32, [f64; 3], SurfaceSample)>> {
    if mesh.triangles.is_empty() {
        return Err(Error::data("cannot sample an empty mesh"));
    }
    if count == 0 {
        return Err(Error::input("sample count must be >= 1"));
    }
    let mut cdf = Vec::with_capacity(mesh.triangles.len());
    let mut acc = 0.0;
    for i in 0..mesh.triangles.len() {
        acc += mesh.triangle_area(i);
        cdf.push(acc);
    }
    let total = acc;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let target = rng.gen::<f64>() * total;
        let tri = cdf.partition_point(|&c| c < target).min(cdf.len() - 1);
        let bary = uniform_barycentric(rng.gen(), rng.gen());
        let (a, b, c) = mesh.corners(tri);
        let position = a * bary[0] + b * bary[1] + c * bary[2];
        let normal = mesh.shading_normal(tri, bary[1], bary[2]);
        out.push((tri as u32, bary, SurfaceSample { position, normal }));
    }
    Ok(out)
}

pub fn sample_surface(mesh: &TriangleMesh, count: usize, seed: u64) -> Result<Vec<SurfaceSample>> {
    Ok(sample_surface_detailed(mesh, count, seed)?
        .into_iter()
        .map(|(_, _, s)| s)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::vec3;

    const CUBE_OBJ: &str = "\
v -0.5 -0.5 -0.5
v 0.5 -0.5 -0.5
v 0.5 0.5 -0.5
v -0.5 0.5 -0.5
v -0.5 -0.5 0.5
v 0.5 -0.5 0.5
v 0.5 0.5 0.5
v -0.5 0.5 0.5
f 1 4 3 2
f 5 6 7 8
f 1 2 6 5
f 2 3 7 6
f 3 4 8 7
f 4 1 5 8
";

    #[test]
    fn cube_quads_fan_triangulate() {
        let mesh = parse_obj(CUBE_OBJ).unwrap();
        assert_eq!(mesh.vertices.len(), 8);
        assert_eq!(mesh.triangles.len(), 12);
        assert!((mesh.total_area() - 6.0).abs() < 1e-12);
    }

    #[test]
    fn zero_index_is_rejected() {
        let err = parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 0 1 2\n").unwrap_err();
        assert!(err.to_string().contains("1-based"), "{err}");
    }

    #[test]
    fn quad_area_is_analytic() {
        let obj = "\
v 0 0 0
v 3 0 0
v 3 2 0
v 0 2 0
f 1 2 3
f 1 3 4
";
        let mesh = parse_obj(obj).unwrap();
        assert!((mesh.total_area() - 6.0).abs() < 1e-6);
    }

    #[test]
    fn corner_normals_are_parsed() {
        let obj = "\
v 0 0 0
v 1 0 0
v 0 1 0
vn 0 0 1
f 1//1 2//1 3//1
";
        let mesh = parse_obj(obj).unwrap();
        let ns = mesh.normals.as_ref().unwrap();
        for n in ns {
            assert!((n.z - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn degenerate_triangle_is_rejected() {
        let err = parse_obj("v 0 0 0\nv 1 0 0\nv 2 0 0\nf 1 2 3\n").unwrap_err();
        assert!(err.to_string().contains("degenerate"), "{err}");
    }

    fn two_triangle_mesh() -> TriangleMesh {
        // Triangle 0 area 0.5, triangle 1 area 1.5 (base 3 instead of 1).
        TriangleMesh::new(
            vec![
                vec3(0.0, 0.0, 0.0),
                vec3(1.0, 0.0, 0.0),
                vec3(0.0, 1.0, 0.0),
                vec3(10.0, 0.0, 0.0),
                vec3(13.0, 0.0, 0.0),
                vec3(10.0, 1.0, 0.0),
            ],
            vec![[0, 1, 2], [3, 4, 5]],
            None,
        )
        .unwrap()
    }

    #[test]
    fn sampling_is_area_proportional() {
        let mesh = two_triangle_mesh();
        let samples = sample_surface_detailed(&mesh, 40000, 11).unwrap();
        let big = samples.iter().filter(|(t, _, _)| *t == 1).count() as f64;
        let frac = big / 40000.0;
        assert!((frac - 0.75).abs() < 0.01, "triangle-1 fraction {frac}");
    }

    #[test]
    fn barycentrics_are_valid() {
        let mesh = two_triangle_mesh();
        for (_, bary, _) in sample_surface_detailed(&mesh, 1000, 3).unwrap() {
            assert!(bary.iter().all(|&b| b >= 0.0));
            assert!((bary.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let mesh = two_triangle_mesh();
        let a = sample_surface(&mesh, 100, 42).unwrap();
        let b = sample_surface(&mesh, 100, 42).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.position, y.position);
            assert_eq!(x.normal, y.normal);
        }
    }

    #[test]
    fn per_triangle_counts_pass_chi_square() {
        // 10 triangles with mixed areas; p > 0.001 at 9 dof means
        // chi-square < 27.88.
        let mut vertices = Vec::new();
        let mut triangles = Vec::new();
        for i in 0..10u32 {
            let w = 0.3 + 0.37 * i as f64;
            let x = 4.0 * i as f64;
            let base = vertices.len() as u32;
            vertices.push(vec3(x, 0.0, 0.0));
            vertices.push(vec3(x + w, 0.0, 0.0));
            vertices.push(vec3(x, 1.0, 0.0));
            triangles.push([base, base + 1, base + 2]);
        }
        let mesh = TriangleMesh::new(vertices, triangles, None).unwrap();
        let n = 100_000;
        let samples = sample_surface_detailed(&mesh, n, 7).unwrap();
        let mut counts = [0usize; 10];
        for (t, _, _) in &samples {
            counts[*t as usize] += 1;
        }
        let total = mesh.total_area();
        let mut chi2 = 0.0;
        for i in 0..10 {
            let expect = mesh.triangle_area(i) / total * n as f64;
            let d = counts[i] as f64 - expect;
            chi2 += d * d / expect;
        }
        assert!(chi2 < 27.88, "chi-square {chi2}");
    }
}
