//! Ground-truth transfer baking: cosine-weighted visibility projected to
//! SH at sampled surface points, and the binary dataset container.

use std::f64::consts::PI;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::marching::marching_cubes;
use crate::math::{mix_seed, Ray, Vec3};
use crate::mesh::sample_surface;
use crate::quadrature::stratified_sphere_dirs;
use crate::sh::{sh_basis_into, SHVector};
use crate::surface::{Surface, SurfaceSample};

/// One baked training point.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferRecord {
    pub position: Vec3,
    pub normal: Vec3,
    pub transfer: SHVector,
}

/// Maps scene-space positions into the MLP's [-1,1]^3 input cube.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Normalization {
    pub center: Vec3,
    pub half_extent: f64,
}

impl Normalization {
    pub fn to_unit(&self, p: Vec3) -> Vec3 {
        (p - self.center) / self.half_extent
    }
}

#[derive(Debug, Clone)]
pub struct TransferDataset {
    pub records: Vec<TransferRecord>,
    pub scene_id: String,
    pub norm: Normalization,
    /// max |coefficient| over the dataset; targets are trained as T/scale.
    pub scale: f64,
    pub order: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct BakeConfig {
    pub n_rays: usize,
    pub order: usize,
    pub seed: u64,
    /// Marching-cubes bootstrap resolution for SDF surfaces.
    pub mc_resolution: u32,
    pub project_iters: u32,
}

impl Default for BakeConfig {
    fn default() -> Self {
        BakeConfig { n_rays: 4096, order: 4, seed: 0, mc_resolution: 128, project_iters: 16 }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BakeStats {
    pub requested: usize,
    pub baked: usize,
    /// SDF samples whose surface projection failed to converge.
    pub discarded: usize,
}

impl BakeStats {
    pub fn discard_fraction(&self) -> f64 {
        if self.requested == 0 {
            0.0
        } else {
            self.discarded as f64 / self.requested as f64
        }
    }
}

/// Monte Carlo transfer estimate at one surface point:
/// T_i = (4π/N) Σ_r V(ω_r)·max(ω_r·n̂,0)·y_i(ω_r)
/// over stratified uniform-sphere directions. Visibility rays start
/// `surface.t_eps()` along the normal to dodge self-intersection.
pub fn bake_transfer(
    surface: &Surface,
    sample: &SurfaceSample,
    n_rays: usize,
    order: usize,
    seed: u64,
) -> Result<SHVector> {
    if n_rays < 64 {
        return Err(Error::input(format!("n_rays {n_rays} below minimum 64")));
    }
    let dirs = stratified_sphere_dirs(n_rays, seed);
    let origin = sample.position + sample.normal * surface.t_eps();
    let n_coeffs = order * order;
    let mut coeffs = vec![0.0f64; n_coeffs];
    let mut basis = vec![0.0f64; n_coeffs];
    for dir in &dirs {
        let cosine = dir.dot(sample.normal);
        if cosine <= 0.0 {
            continue;
        }
        let ray = Ray::new(origin, *dir);
        if surface.occluded(&ray, 0.0, f64::INFINITY) {
            continue;
        }
        sh_basis_into(order, *dir, &mut basis);
        for (c, y) in coeffs.iter_mut().zip(&basis) {
            *c += cosine * y;
        }
    }
    let w = 4.0 * PI / dirs.len() as f64;
    for c in &mut coeffs {
        *c *= w;
    }
    SHVector::new(order, coeffs)
}

fn normalization_for(surface: &Surface) -> Normalization {
    let bb = surface.bounds();
    let ext = bb.extent();
    Normalization { center: bb.center(), half_extent: 0.5 * ext.max_component() }
}

/// Bake `count` surface points into a training dataset.
///
/// Mesh surfaces are sampled by area; SDF surfaces bootstrap a marching-
/// cubes mesh, sample it by area, then project each point onto the true
/// zero level set (non-converging samples are discarded and reported).
pub fn bake_dataset(
    surface: &Surface,
    scene_id: &str,
    count: usize,
    cfg: &BakeConfig,
) -> Result<(TransferDataset, BakeStats)> {
    if count == 0 {
        return Err(Error::input("dataset point count must be >= 1"));
    }
    let samples: Vec<Option<SurfaceSample>> = match surface {
        Surface::Mesh { mesh, .. } => {
            sample_surface(mesh, count, cfg.seed)?.into_iter().map(Some).collect()
        }
        Surface::Sdf { scene, .. } => {
            let shell = marching_cubes(scene, cfg.mc_resolution, scene.bounds)?;
            let rough = sample_surface(&shell, count, cfg.seed)?;
            rough
                .into_par_iter()
                .map(|s| scene.project_to_surface(s.position, cfg.project_iters).ok())
                .collect()
        }
    };
    let discarded = samples.iter().filter(|s| s.is_none()).count();

    let records: Vec<TransferRecord> = samples
        .into_par_iter()
        .enumerate()
        .filter_map(|(i, s)| s.map(|s| (i, s)))
        .map(|(i, s)| {
            let transfer =
                bake_transfer(surface, &s, cfg.n_rays, cfg.order, mix_seed(cfg.seed, i as u64))?;
            Ok(TransferRecord { position: s.position, normal: s.normal, transfer })
        })
        .collect::<Result<_>>()?;

    if records.is_empty() {
        return Err(Error::data("all bake samples were discarded"));
    }

    let norm = normalization_for(surface);
    let scale = records
        .iter()
        .map(|r| r.transfer.max_abs())
        .fold(0.0f64, f64::max)
        .max(1e-6);

    let stats = BakeStats { requested: count, baked: records.len(), discarded };
    Ok((
        TransferDataset {
            records,
            scene_id: scene_id.to_string(),
            norm,
            scale,
            order: cfg.order,
        },
        stats,
    ))
}

// --- binary dataset format -------------------------------------------------
//
// little-endian: magic "NPRT", u32 version=1, u32 sh_order, u64 count,
// f32x3 center, f32 half_extent, f32 scale,
// then per record: f32x3 position, f32x3 normal, f32 x order^2 transfer.

const MAGIC: &[u8; 4] = b"NPRT";
const VERSION: u32 = 1;
const MAX_RECORDS: u64 = 100_000_000;

struct ByteReader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn new(data: &'a [u8]) -> Self {
        ByteReader { data, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.data.len())
            .ok_or_else(|| Error::format("dataset file truncated"))?;
        let s = &self.data[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn finite_f32(&mut self, what: &str) -> Result<f64> {
        let v = self.f32()?;
        if !v.is_finite() {
            return Err(Error::format(format!("non-finite {what} in dataset")));
        }
        Ok(v as f64)
    }

    fn vec3(&mut self, what: &str) -> Result<Vec3> {
        Ok(Vec3 {
            x: self.finite_f32(what)?,
            y: self.finite_f32(what)?,
            z: self.finite_f32(what)?,
        })
    }

    fn done(&self) -> bool {
        self.pos == self.data.len()
    }
}

pub fn dataset_to_bytes(ds: &TransferDataset) -> Vec<u8> {
    let n_coeffs = ds.order * ds.order;
    let mut out = Vec::with_capacity(36 + ds.records.len() * 4 * (6 + n_coeffs));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(ds.order as u32).to_le_bytes());
    out.extend_from_slice(&(ds.records.len() as u64).to_le_bytes());
    for v in [ds.norm.center.x, ds.norm.center.y, ds.norm.center.z] {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out.extend_from_slice(&(ds.norm.half_extent as f32).to_le_bytes());
    out.extend_from_slice(&(ds.scale as f32).to_le_bytes());
    for r in &ds.records {
        for v in [r.position.x, r.position.y, r.position.z, r.normal.x, r.normal.y, r.normal.z] {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        for &c in &r.transfer.coeffs {
            out.extend_from_slice(&(c as f32).to_le_bytes());
        }
    }
    out
}

/// Parse a dataset byte buffer, validating structure and all values.
pub fn parse_dataset(data: &[u8]) -> Result<TransferDataset> {
    let mut r = ByteReader::new(data);
    if r.take(4)? != MAGIC {
        return Err(Error::format("bad dataset magic (expected NPRT)"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::format(format!("unsupported dataset version {version}")));
    }
    let order = r.u32()? as usize;
    if !(1..=8).contains(&order) {
        return Err(Error::format(format!("dataset sh_order {order} outside [1,8]")));
    }
    let count = r.u64()?;
    if count > MAX_RECORDS {
        return Err(Error::format(format!("dataset count {count} implausibly large")));
    }
    let n_coeffs = order * order;
    let center = r.vec3("normalization center")?;
    let half_extent = r.finite_f32("half extent")?;
    if half_extent <= 0.0 {
        return Err(Error::format("dataset half_extent must be positive"));
    }
    let scale = r.finite_f32("scale")?;
    if scale <= 0.0 {
        return Err(Error::format("dataset scale must be positive"));
    }
    let record_bytes = 4usize * (6 + n_coeffs);
    let expect = (count as usize)
        .checked_mul(record_bytes)
        .ok_or_else(|| Error::format("dataset size overflow"))?;
    if data.len() - r.pos != expect {
        return Err(Error::format(format!(
            "dataset payload is {} bytes, expected {expect} for {count} records",
            data.len() - r.pos
        )));
    }
    let mut records = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let position = r.vec3("position")?;
        let normal = r.vec3("normal")?;
        if (normal.length() - 1.0).abs() > 1e-2 {
            return Err(Error::format("dataset normal is not unit length"));
        }
        let mut coeffs = Vec::with_capacity(n_coeffs);
        for _ in 0..n_coeffs {
            coeffs.push(r.finite_f32("transfer coefficient")?);
        }
        records.push(TransferRecord { position, normal, transfer: SHVector::new(order, coeffs)? });
    }
    debug_assert!(r.done());
    Ok(TransferDataset {
        records,
        scene_id: String::new(),
        norm: Normalization { center, half_extent },
        scale,
        order,
    })
}

pub fn save_dataset(ds: &TransferDataset, path: &Path) -> Result<()> {
    std::fs::write(path, dataset_to_bytes(ds)).map_err(|e| Error::io(path, e))
}

pub fn load_dataset(path: &Path) -> Result<TransferDataset> {
    let data = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut ds = parse_dataset(&data)?;
    ds.scene_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::vec3;
    use crate::mesh::TriangleMesh;
    use crate::quadrature::QuadratureSpec;
    use crate::sdf::parse_sdf_scene;
    use crate::sh::{project_function, sh_index};

    fn big_plane() -> Surface {
        let s = 50.0;
        Surface::from_mesh(
            TriangleMesh::new(
                vec![
                    vec3(-s, -s, 0.0),
                    vec3(s, -s, 0.0),
                    vec3(s, s, 0.0),
                    vec3(-s, s, 0.0),
                ],
                vec![[0, 1, 2], [0, 2, 3]],
                None,
            )
            .unwrap(),
        )
    }

    fn clamped_cosine_zonal() -> [f64; 4] {
        [0.8862269254527580, 1.0233267079464885, 0.4954159122007514, 0.0]
    }

    #[test]
    fn unoccluded_plane_matches_clamped_cosine() {
        let surface = big_plane();
        let sample = SurfaceSample { position: vec3(0.0, 0.0, 0.0), normal: vec3(0.0, 0.0, 1.0) };
        let t = bake_transfer(&surface, &sample, 4096, 4, 7).unwrap();
        let zonal = clamped_cosine_zonal();
        for l in 0..4 {
            let got = t.coeffs[sh_index(l, 0)];
            assert!(
                (got - zonal[l]).abs() < 0.02,
                "band {l}: {got} vs {}",
                zonal[l]
            );
        }
        for (i, &c) in t.coeffs.iter().enumerate() {
            let l = (i as f64).sqrt() as usize;
            if sh_index(l, 0) != i {
                assert!(c.abs() < 0.02, "non-zonal coeff {i} = {c}");
            }
        }
    }

    #[test]
    fn enclosed_point_bakes_exact_zeros() {
        // Sample at the center of a closed cube: every ray is occluded.
        let mesh = crate::mesh::parse_obj(
            "v -1 -1 -1\nv 1 -1 -1\nv 1 1 -1\nv -1 1 -1\nv -1 -1 1\nv 1 -1 1\nv 1 1 1\nv -1 1 1\n\
             f 1 2 3 4\nf 5 8 7 6\nf 1 5 6 2\nf 2 6 7 3\nf 3 7 8 4\nf 4 8 5 1\n",
        )
        .unwrap();
        let surface = Surface::from_mesh(mesh);
        let sample = SurfaceSample { position: vec3(0.0, 0.0, 0.0), normal: vec3(0.0, 0.0, 1.0) };
        let t = bake_transfer(&surface, &sample, 256, 4, 3).unwrap();
        for &c in &t.coeffs {
            assert_eq!(c, 0.0);
        }
    }

    #[test]
    fn half_space_wall_matches_analytic_visibility() {
        // Ground plane with a huge wall at x = 1 blocking every direction
        // with a positive x component above the horizon.
        let s = 200.0;
        let mesh = TriangleMesh::new(
            vec![
                // ground
                vec3(-s, -s, 0.0),
                vec3(s, -s, 0.0),
                vec3(s, s, 0.0),
                vec3(-s, s, 0.0),
                // wall x=1, facing -x
                vec3(1.0, -s, 0.0),
                vec3(1.0, s, 0.0),
                vec3(1.0, s, s),
                vec3(1.0, -s, s),
            ],
            vec![[0, 1, 2], [0, 2, 3], [4, 5, 6], [4, 6, 7]],
            None,
        )
        .unwrap();
        let surface = Surface::from_mesh(mesh);
        let sample = SurfaceSample { position: vec3(0.0, 0.0, 0.0), normal: vec3(0.0, 0.0, 1.0) };
        let baked = bake_transfer(&surface, &sample, 16384, 4, 11).unwrap();
        // Analytic: V = 1 iff omega_x <= (1 - eps') * ... for a wall at
        // x=1 seen from the origin the blocked set is omega_x/omega_z ...
        // every upward ray with omega_x > 0 eventually crosses x=1 at
        // z > 0, so V(omega) = [omega_x <= 0] above the horizon.
        let oracle = project_function(
            |d: Vec3| if d.z > 0.0 && d.x <= 0.0 { d.z } else { 0.0 },
            4,
            QuadratureSpec::LatLong { n_theta: 256, n_phi: 512 },
        )
        .unwrap();
        for i in 0..16 {
            assert!(
                (baked.coeffs[i] - oracle.coeffs[i]).abs() < 0.02,
                "coeff {i}: {} vs {}",
                baked.coeffs[i],
                oracle.coeffs[i]
            );
        }
    }

    #[test]
    fn bake_is_deterministic() {
        let surface = big_plane();
        let sample = SurfaceSample { position: vec3(0.3, -0.2, 0.0), normal: vec3(0.0, 0.0, 1.0) };
        let a = bake_transfer(&surface, &sample, 1024, 4, 42).unwrap();
        let b = bake_transfer(&surface, &sample, 1024, 4, 42).unwrap();
        assert_eq!(a.coeffs, b.coeffs);
    }

    fn occluded_fixture() -> Surface {
        // Ground plane with a sphere-ish blocker (icosahedron-free: a cube)
        // hovering above, so visibility is non-trivial.
        let mut vertices = vec![
            vec3(-20.0, -20.0, 0.0),
            vec3(20.0, -20.0, 0.0),
            vec3(20.0, 20.0, 0.0),
            vec3(-20.0, 20.0, 0.0),
        ];
        let mut triangles = vec![[0u32, 1, 2], [0, 2, 3]];
        let c = vec3(0.4, 0.1, 1.2);
        let h = 0.5;
        let base = vertices.len() as u32;
        for dz in [-h, h] {
            for (dx, dy) in [(-h, -h), (h, -h), (h, h), (-h, h)] {
                vertices.push(c + vec3(dx, dy, dz));
            }
        }
        let quads = [
            [0, 3, 2, 1],
            [4, 5, 6, 7],
            [0, 1, 5, 4],
            [1, 2, 6, 5],
            [2, 3, 7, 6],
            [3, 0, 4, 7],
        ];
        for q in quads {
            triangles.push([base + q[0], base + q[1], base + q[2]]);
            triangles.push([base + q[0], base + q[2], base + q[3]]);
        }
        Surface::from_mesh(TriangleMesh::new(vertices, triangles, None).unwrap())
    }

    #[test]
    fn doubling_rays_shrinks_error_like_root_two() {
        let surface = occluded_fixture();
        let sample = SurfaceSample { position: vec3(0.0, 0.0, 0.0), normal: vec3(0.0, 0.0, 1.0) };
        let reference = bake_transfer(&surface, &sample, 1 << 20, 4, 999).unwrap();
        let mean_dev = |n_rays: usize| {
            let mut acc = 0.0;
            let trials = 12;
            for s in 0..trials {
                let t = bake_transfer(&surface, &sample, n_rays, 4, 1000 + s).unwrap();
                acc += t
                    .coeffs
                    .iter()
                    .zip(&reference.coeffs)
                    .map(|(a, b)| (a - b).abs())
                    .sum::<f64>()
                    / 16.0;
            }
            acc / trials as f64
        };
        let d1 = mean_dev(1024);
        let d2 = mean_dev(2048);
        let ratio = d1 / d2;
        let target = std::f64::consts::SQRT_2;
        assert!(
            ratio > target / 1.5 && ratio < target * 1.5,
            "convergence ratio {ratio} not ~ sqrt(2)"
        );
    }

    #[test]
    fn sphere_sdf_dataset_invariants_hold() {
        let scene = parse_sdf_scene("sphere c=0,0,0 r=1\nbounds min=-1.5,-1.5,-1.5 max=1.5,1.5,1.5\n").unwrap();
        let surface = Surface::from_sdf(scene.clone());
        let cfg = BakeConfig { n_rays: 512, mc_resolution: 48, seed: 5, ..Default::default() };
        let (ds, stats) = bake_dataset(&surface, "sphere", 400, &cfg).unwrap();
        assert!(stats.discard_fraction() < 0.05, "discards: {stats:?}");
        for r in &ds.records {
            assert!(scene.eval(r.position).abs() < 1e-3);
            assert!(r.normal.dot(r.position) > 0.0, "inward normal at {:?}", r.position);
            let unit = ds.norm.to_unit(r.position);
            assert!(unit.x.abs() <= 1.0 + 1e-9 && unit.y.abs() <= 1.0 + 1e-9 && unit.z.abs() <= 1.0 + 1e-9);
            // Band 0 is rotation invariant: unoccluded sphere pins it to
            // the clamped-cosine DC everywhere (wider net at 512 rays).
            assert!(
                (r.transfer.coeffs[0] - 0.8862269254527580).abs() < 0.05,
                "DC {}",
                r.transfer.coeffs[0]
            );
        }
        assert!(ds.scale > 0.9 && ds.scale < 1.15, "scale {}", ds.scale);
    }

    #[test]
    fn dataset_round_trips_and_rejects_garbage() {
        let surface = big_plane();
        let cfg = BakeConfig { n_rays: 64, seed: 9, ..Default::default() };
        let (ds, _) = bake_dataset(&surface, "plane", 25, &cfg).unwrap();
        let bytes = dataset_to_bytes(&ds);
        let back = parse_dataset(&bytes).unwrap();
        assert_eq!(back.records.len(), ds.records.len());
        assert_eq!(dataset_to_bytes(&back), bytes);
        assert_eq!(back.order, 4);

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(parse_dataset(&bad).is_err());
        assert!(parse_dataset(&bytes[..bytes.len() - 3]).is_err());
        assert!(parse_dataset(&[]).is_err());

        // Version bump rejected.
        let mut v2 = bytes.clone();
        v2[4] = 9;
        assert!(parse_dataset(&v2).is_err());
    }

    #[test]
    fn save_load_is_byte_stable() {
        let surface = big_plane();
        let cfg = BakeConfig { n_rays: 64, seed: 1, ..Default::default() };
        let (ds, _) = bake_dataset(&surface, "plane", 10, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.nprt");
        let p2 = dir.path().join("b.nprt");
        save_dataset(&ds, &p1).unwrap();
        let (ds2, _) = bake_dataset(&surface, "plane", 10, &cfg).unwrap();
        save_dataset(&ds2, &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        let loaded = load_dataset(&p1).unwrap();
        assert_eq!(loaded.records.len(), 10);
        assert_eq!(loaded.scene_id, "a");
    }

    #[test]
    fn irradiance_is_bounded_by_unoccluded_value() {
        let surface = occluded_fixture();
        let cfg = BakeConfig { n_rays: 1024, seed: 2, ..Default::default() };
        let (ds, _) = bake_dataset(&surface, "fixture", 60, &cfg).unwrap();
        // Constant unit-radiance light: L = 2 sqrt(pi) at DC.
        let mut light = SHVector::zeros(4);
        light.coeffs[0] = 2.0 * PI.sqrt();
        for r in &ds.records {
            let e = crate::sh::diffuse_shade(&r.transfer, &light).unwrap();
            assert!(e >= -1e-9, "negative irradiance {e}");
            assert!(e <= PI * 1.05, "irradiance {e} above unoccluded bound");
        }
    }
}
