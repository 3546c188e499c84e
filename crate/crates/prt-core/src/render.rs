//! Deferred CPU renderer: pinhole camera, G-buffer trace, fragment packing,
//! and SH shading against any transfer source (MLP, baked vertices, per-pixel
//! brute force, or the analytic unoccluded cosine).

use rayon::prelude::*;

use crate::bake::bake_transfer;
use crate::envmap::EnvironmentLight;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::math::{mix_seed, Ray, Vec3};
use crate::mesh::TriangleMesh;
use crate::mlp::{ForwardScratch, MlpModel};
use crate::partition::ClusteredModel;
use crate::sh::{sh_basis_eval, sh_eval_expansion, SHVector};
use crate::surface::Surface;
use crate::triple::{transferred_radiance, TripleProductTensor};
use crate::zonal::{phong_zonal_coeffs, zonal_convolve, ZonalCoeffs};

/// Pinhole camera. `fov_y_deg` is the full vertical field of view.
#[derive(Debug, Clone, Copy)]
pub struct Camera {
    pub eye: Vec3,
    pub look_at: Vec3,
    pub up: Vec3,
    pub fov_y_deg: f64,
    pub width: usize,
    pub height: usize,
}

impl Camera {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::input(format!(
                "image dimensions {}x{} must be positive",
                self.width, self.height
            )));
        }
        if !(self.fov_y_deg > 1.0 && self.fov_y_deg < 179.0) || !self.fov_y_deg.is_finite() {
            return Err(Error::input(format!(
                "vertical fov {} deg outside (1, 179)",
                self.fov_y_deg
            )));
        }
        let forward = self.look_at - self.eye;
        if forward.length() < 1e-9 {
            return Err(Error::input("camera eye and look-at coincide"));
        }
        if forward.normalized().cross(self.up).length() < 1e-9 {
            return Err(Error::input("camera up vector is parallel to the view direction"));
        }
        Ok(())
    }

    fn basis(&self) -> (Vec3, Vec3, Vec3) {
        let forward = (self.look_at - self.eye).normalized();
        let right = forward.cross(self.up).normalized();
        let up = right.cross(forward);
        (forward, right, up)
    }

    /// Ray through the center of pixel (x, y); (0, 0) is the top-left pixel.
    pub fn ray_through(&self, x: usize, y: usize) -> Ray {
        let (forward, right, up) = self.basis();
        let tan_half = (self.fov_y_deg.to_radians() * 0.5).tan();
        let aspect = self.width as f64 / self.height as f64;
        let sx = (2.0 * (x as f64 + 0.5) / self.width as f64 - 1.0) * aspect * tan_half;
        let sy = (1.0 - 2.0 * (y as f64 + 0.5) / self.height as f64) * tan_half;
        Ray::new(self.eye, (forward + right * sx + up * sy).normalized())
    }
}

/// One G-buffer pixel. Misses keep zeroed geometry and `hit == false`.
#[derive(Debug, Clone, Copy)]
pub struct GPixel {
    pub hit: bool,
    pub position: Vec3,
    pub normal: Vec3,
    /// Unit direction from the surface point toward the eye.
    pub omega_o: Vec3,
    /// Triangle index + barycentrics for mesh hits; None on SDF hits.
    pub tri: Option<(u32, [f64; 3])>,
}

impl GPixel {
    pub fn miss() -> GPixel {
        GPixel { hit: false, position: Vec3::ZERO, normal: Vec3::ZERO, omega_o: Vec3::ZERO, tri: None }
    }
}

#[derive(Debug, Clone)]
pub struct GBuffer {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<GPixel>,
}

impl GBuffer {
    pub fn hit_count(&self) -> usize {
        self.pixels.iter().filter(|p| p.hit).count()
    }
}

/// Trace primary rays through every pixel center.
pub fn trace_gbuffer(surface: &Surface, camera: &Camera) -> Result<GBuffer> {
    camera.validate()?;
    let rows: Vec<Vec<GPixel>> = (0..camera.height)
        .into_par_iter()
        .map(|y| {
            (0..camera.width)
                .map(|x| {
                    let ray = camera.ray_through(x, y);
                    let hit = surface.ray_intersect(&ray, 1e-9, f64::INFINITY);
                    if !hit.hit {
                        return GPixel::miss();
                    }
                    GPixel {
                        hit: true,
                        position: hit.position,
                        normal: hit.normal,
                        omega_o: -ray.dir,
                        tri: hit.tri,
                    }
                })
                .collect()
        })
        .collect();
    Ok(GBuffer { width: camera.width, height: camera.height, pixels: rows.concat() })
}

/// Row-major linear indices of the hit pixels, in scan order. Shading runs
/// over exactly this list, so transfer evaluations == surviving fragments.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedFragments {
    pub indices: Vec<u32>,
}

pub fn pack_fragments(gb: &GBuffer) -> PackedFragments {
    let indices = gb
        .pixels
        .iter()
        .enumerate()
        .filter(|(_, p)| p.hit)
        .map(|(i, _)| i as u32)
        .collect();
    PackedFragments { indices }
}

/// Scatter per-fragment colors back to a full image; misses stay black.
pub fn unpack_fragments(
    colors: &[[f32; 3]],
    packed: &PackedFragments,
    width: usize,
    height: usize,
) -> Result<Image> {
    if colors.len() != packed.indices.len() {
        return Err(Error::input(format!(
            "fragment color count {} does not match packed index count {}",
            colors.len(),
            packed.indices.len()
        )));
    }
    let mut img = Image::new(width, height);
    for (&idx, &c) in packed.indices.iter().zip(colors) {
        let idx = idx as usize;
        if idx >= img.pixels.len() {
            return Err(Error::input(format!(
                "packed index {idx} out of range for {width}x{height} image"
            )));
        }
        img.pixels[idx] = c;
    }
    Ok(img)
}

/// Surface reflectance model used by the shading pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Material {
    Diffuse { albedo: [f64; 3] },
    GlossyPhong { albedo: [f64; 3], exponent: f64 },
}

impl Material {
    pub fn validate(&self) -> Result<()> {
        let albedo = match self {
            Material::Diffuse { albedo } => albedo,
            Material::GlossyPhong { albedo, exponent } => {
                if !exponent.is_finite() || *exponent <= 0.0 {
                    return Err(Error::input(format!(
                        "phong exponent {exponent} must be positive and finite"
                    )));
                }
                albedo
            }
        };
        for (i, a) in albedo.iter().enumerate() {
            if !a.is_finite() || !(0.0..=1.0).contains(a) {
                return Err(Error::input(format!(
                    "albedo channel {i} = {a} outside [0, 1]"
                )));
            }
        }
        Ok(())
    }
}

/// Where per-fragment transfer vectors come from.
pub enum TransferSource<'a> {
    /// Trained MLP evaluated at (position, normal).
    Mlp(&'a MlpModel),
    /// Per-vertex baked transfer interpolated with the hit barycentrics.
    /// Only valid for mesh G-buffers.
    VertexBaked { mesh: &'a TriangleMesh, transfers: &'a [SHVector] },
    /// Fresh Monte Carlo bake at every fragment (reference path). Seeded per
    /// pixel index so the result is independent of traversal order.
    BruteForce { surface: &'a Surface, n_rays: usize, seed: u64, order: usize },
    /// Analytic shadow-free transfer: the clamped cosine rotated to the
    /// fragment normal. Exact on convex/unoccluded geometry.
    UnoccludedCosine { zonal: ZonalCoeffs },
    /// Full-frame transfer buffer indexed by linear pixel id (misses may
    /// hold anything; only hit pixels are read). Lets callers cache or
    /// inspect per-pixel vectors and re-shade without re-evaluating.
    Precomputed { transfers: &'a [SHVector] },
    /// Partitioned scene: fragments route through the grid to their cell's
    /// cluster model.
    Clustered(&'a ClusteredModel),
}

impl<'a> TransferSource<'a> {
    /// Analytic clamped-cosine source at the given SH order.
    pub fn unoccluded_cosine(order: usize) -> Result<TransferSource<'a>> {
        Ok(TransferSource::UnoccludedCosine { zonal: phong_zonal_coeffs(1.0, order)? })
    }

    pub fn order(&self) -> usize {
        match self {
            TransferSource::Mlp(m) => m.sh_order,
            TransferSource::VertexBaked { transfers, .. } => {
                transfers.first().map_or(0, |t| t.order)
            }
            TransferSource::BruteForce { order, .. } => *order,
            TransferSource::UnoccludedCosine { zonal } => zonal.order,
            TransferSource::Precomputed { transfers } => {
                transfers.first().map_or(0, |t| t.order)
            }
            TransferSource::Clustered(cm) => cm.sh_order(),
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            TransferSource::VertexBaked { mesh, transfers } => {
                if transfers.len() != mesh.vertices.len() {
                    return Err(Error::input(format!(
                        "{} vertex transfers for a mesh with {} vertices",
                        transfers.len(),
                        mesh.vertices.len()
                    )));
                }
                let order = self.order();
                if order == 0 {
                    return Err(Error::input("vertex transfer list is empty"));
                }
                if let Some(bad) = transfers.iter().find(|t| t.order != order) {
                    return Err(Error::input(format!(
                        "mixed vertex transfer orders: {} vs {}",
                        bad.order, order
                    )));
                }
                Ok(())
            }
            TransferSource::BruteForce { n_rays, order, .. } => {
                if *n_rays < 64 {
                    return Err(Error::input(format!("n_rays {n_rays} below minimum 64")));
                }
                crate::sh::check_order(*order)
            }
            TransferSource::Precomputed { transfers } => {
                if transfers.is_empty() {
                    return Err(Error::input("precomputed transfer buffer is empty"));
                }
                let order = transfers[0].order;
                if let Some(bad) = transfers.iter().find(|t| t.order != order) {
                    return Err(Error::input(format!(
                        "mixed precomputed transfer orders: {} vs {}",
                        bad.order, order
                    )));
                }
                Ok(())
            }
            TransferSource::Clustered(cm) => cm.validate(),
            _ => Ok(()),
        }
    }

    /// Transfer vector for one fragment. `pixel_index` keys the per-pixel
    /// RNG stream of the brute-force path.
    fn transfer_at(
        &self,
        px: &GPixel,
        pixel_index: u32,
        scratch: &mut ForwardScratch,
        buf: &mut Vec<f64>,
    ) -> Result<SHVector> {
        match self {
            TransferSource::Mlp(model) => {
                buf.resize(model.out_dim(), 0.0);
                model.predict_into(px.position, px.normal, scratch, buf)?;
                Ok(SHVector::new(model.sh_order, buf.clone())?)
            }
            TransferSource::VertexBaked { mesh, transfers } => {
                let (tri, bary) = px.tri.ok_or_else(|| {
                    Error::input("vertex-baked source needs mesh hits with barycentrics")
                })?;
                let idx = mesh
                    .triangles
                    .get(tri as usize)
                    .ok_or_else(|| Error::input(format!("triangle index {tri} out of range")))?;
                let order = transfers[idx[0] as usize].order;
                let n = order * order;
                buf.clear();
                buf.resize(n, 0.0);
                for (corner, &v) in idx.iter().enumerate() {
                    let t = &transfers[v as usize];
                    for (o, c) in buf.iter_mut().zip(&t.coeffs) {
                        *o += bary[corner] * c;
                    }
                }
                Ok(SHVector::new(order, buf.clone())?)
            }
            TransferSource::BruteForce { surface, n_rays, seed, order } => {
                let sample = crate::surface::SurfaceSample { position: px.position, normal: px.normal };
                bake_transfer(surface, &sample, *n_rays, *order, mix_seed(*seed, pixel_index as u64))
            }
            TransferSource::UnoccludedCosine { zonal } => {
                let basis = sh_basis_eval(px.normal, zonal.order)?;
                let f = SHVector::new(zonal.order, basis)?;
                zonal_convolve(&f, zonal)
            }
            TransferSource::Precomputed { transfers } => {
                transfers.get(pixel_index as usize).cloned().ok_or_else(|| {
                    Error::input(format!(
                        "precomputed buffer has {} entries, pixel {pixel_index} requested",
                        transfers.len()
                    ))
                })
            }
            TransferSource::Clustered(cm) => cm.predict(px.position, px.normal),
        }
    }

    /// Evaluate the source at every hit pixel into a full-frame buffer
    /// (misses hold zero vectors). The buffer plugs back in as
    /// [`TransferSource::Precomputed`], which must then shade identically.
    pub fn evaluate_frame(&self, gb: &GBuffer) -> Result<Vec<SHVector>> {
        self.validate()?;
        let order = self.order();
        let frame: Vec<SHVector> = gb
            .pixels
            .par_iter()
            .enumerate()
            .map_init(
                || (ForwardScratch::default(), Vec::new()),
                |(scratch, buf), (i, px)| {
                    if px.hit {
                        self.transfer_at(px, i as u32, scratch, buf)
                    } else {
                        Ok(SHVector::zeros(order))
                    }
                },
            )
            .collect::<Result<_>>()?;
        Ok(frame)
    }
}

fn shade_fragment(
    px: &GPixel,
    transfer: &SHVector,
    light: &EnvironmentLight,
    material: &Material,
    rho: Option<&ZonalCoeffs>,
    tau: Option<&TripleProductTensor>,
) -> Result<[f32; 3]> {
    let mut out = [0.0f32; 3];
    match material {
        Material::Diffuse { albedo } => {
            for c in 0..3 {
                let b = albedo[c] / std::f64::consts::PI * transfer.dot(&light.sh[c]);
                out[c] = b.max(0.0) as f32;
            }
        }
        Material::GlossyPhong { albedo, .. } => {
            let rho = rho.expect("glossy kernel prepared by shade()");
            let tau = tau.ok_or_else(|| {
                Error::input("glossy shading needs a triple-product tensor")
            })?;
            let r = px.normal * (2.0 * px.normal.dot(px.omega_o)) - px.omega_o;
            let r = r.normalized();
            for c in 0..3 {
                let h = transferred_radiance(transfer, &light.sh[c], tau)?;
                let hc = zonal_convolve(&h, rho)?;
                let v = albedo[c] * sh_eval_expansion(&hc, r)?;
                out[c] = v.max(0.0) as f32;
            }
        }
    }
    Ok(out)
}

/// Shade every packed fragment and scatter into a full image. The light is
/// consumed only through its SH coefficients, so swapping lights never
/// touches the transfer source.
pub fn shade(
    gb: &GBuffer,
    source: &TransferSource,
    light: &EnvironmentLight,
    material: &Material,
    tau: Option<&TripleProductTensor>,
) -> Result<Image> {
    material.validate()?;
    source.validate()?;
    if !light.is_finite() {
        return Err(Error::input("environment light has non-finite coefficients"));
    }
    let order = source.order();
    if light.order() != order {
        return Err(Error::input(format!(
            "light order {} does not match transfer order {}",
            light.order(),
            order
        )));
    }
    let rho = match material {
        Material::GlossyPhong { exponent, .. } => {
            // Normalized phong lobe: (e+1)/(2pi) * max(cos, 0)^e.
            let mut z = phong_zonal_coeffs(*exponent, order)?;
            let norm = (exponent + 1.0) / (2.0 * std::f64::consts::PI);
            for v in &mut z.values {
                *v *= norm;
            }
            Some(z)
        }
        Material::Diffuse { .. } => None,
    };
    if matches!(material, Material::GlossyPhong { .. }) {
        if let Some(t) = tau {
            if t.order != order {
                return Err(Error::input(format!(
                    "triple-product tensor order {} does not match transfer order {}",
                    t.order, order
                )));
            }
        }
    }
    let packed = pack_fragments(gb);
    let colors: Vec<[f32; 3]> = packed
        .indices
        .par_iter()
        .map_init(
            || (ForwardScratch::default(), Vec::new()),
            |(scratch, buf), &idx| {
                let px = &gb.pixels[idx as usize];
                let t = source.transfer_at(px, idx, scratch, buf)?;
                shade_fragment(px, &t, light, material, rho.as_ref(), tau)
            },
        )
        .collect::<Result<_>>()?;
    unpack_fragments(&colors, &packed, gb.width, gb.height)
}

/// The two renders plus their difference metrics.
#[derive(Debug, Clone)]
pub struct CompareOutput {
    pub learnt: Image,
    pub reference: Image,
    pub report: crate::metrics::MetricsReport,
}

/// Render the same G-buffer with two transfer sources and measure the
/// difference. One trace, two shading passes, identical light/material.
pub fn render_compare(
    surface: &Surface,
    camera: &Camera,
    light: &EnvironmentLight,
    material: &Material,
    tau: Option<&TripleProductTensor>,
    learnt: &TransferSource,
    reference: &TransferSource,
) -> Result<CompareOutput> {
    let gb = trace_gbuffer(surface, camera)?;
    let learnt_img = shade(&gb, learnt, light, material, tau)?;
    let reference_img = shade(&gb, reference, light, material, tau)?;
    let report = crate::metrics::compare_images(&learnt_img, &reference_img)?;
    Ok(CompareOutput { learnt: learnt_img, reference: reference_img, report })
}

/// Bake a transfer vector at every mesh vertex (the classical per-vertex
/// PRT baseline the learnt model is compared against).
pub fn bake_vertex_transfers(
    surface: &Surface,
    mesh: &TriangleMesh,
    n_rays: usize,
    order: usize,
    seed: u64,
) -> Result<Vec<SHVector>> {
    let normals = mesh
        .normals
        .as_ref()
        .ok_or_else(|| Error::input("vertex baking needs per-vertex normals"))?;
    mesh.vertices
        .par_iter()
        .zip(normals)
        .enumerate()
        .map(|(i, (&p, &n))| {
            let sample = crate::surface::SurfaceSample { position: p, normal: n };
            bake_transfer(surface, &sample, n_rays, order, mix_seed(seed, i as u64))
        })
        .collect()
}
