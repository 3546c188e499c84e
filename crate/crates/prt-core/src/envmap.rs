//! Environment lighting: equirectangular radiance maps projected into
//! per-channel SH expansions.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::math::{vec3, Vec3};
use crate::quadrature::QuadratureSpec;
use crate::sh::{project_function, sh_basis_into, SHVector};

/// Per-channel SH expansion of incident radiance.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvironmentLight {
    pub sh: [SHVector; 3],
}

impl EnvironmentLight {
    pub fn order(&self) -> usize {
        self.sh[0].order
    }

    pub fn is_finite(&self) -> bool {
        self.sh.iter().all(|s| s.coeffs.iter().all(|c| c.is_finite()))
    }

    /// Constant radiance c in every direction: only the DC term,
    /// L0 = 2 sqrt(pi) * c.
    pub fn constant(order: usize, c: [f64; 3]) -> Result<EnvironmentLight> {
        let dc = 2.0 * std::f64::consts::PI.sqrt();
        let mut sh = [SHVector::zeros(order), SHVector::zeros(order), SHVector::zeros(order)];
        for (s, &v) in sh.iter_mut().zip(&c) {
            s.coeffs[0] = dc * v;
        }
        Ok(EnvironmentLight { sh })
    }

    /// Project an analytic radiance function with the given quadrature.
    pub fn from_function<F>(f: F, order: usize, quad: QuadratureSpec) -> Result<EnvironmentLight>
    where
        F: Fn(Vec3) -> [f64; 3],
    {
        let r = project_function(|d| f(d)[0], order, quad.clone())?;
        let g = project_function(|d| f(d)[1], order, quad.clone())?;
        let b = project_function(|d| f(d)[2], order, quad)?;
        Ok(EnvironmentLight { sh: [r, g, b] })
    }
}

/// Direction for the center of equirect pixel (u, v):
/// theta = pi (v+0.5)/H, phi = 2 pi (u+0.5)/W, z up.
pub fn equirect_direction(u: usize, v: usize, width: usize, height: usize) -> Vec3 {
    let theta = std::f64::consts::PI * (v as f64 + 0.5) / height as f64;
    let phi = 2.0 * std::f64::consts::PI * (u as f64 + 0.5) / width as f64;
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = phi.sin_cos();
    vec3(st * cp, st * sp, ct)
}

/// Riemann projection over the pixel grid:
/// L_j = sum_px L(w_px) y_j(w_px) dOmega, dOmega = (2 pi / W)(pi / H) sin(theta).
pub fn project_envmap(env: &Image, order: usize) -> Result<EnvironmentLight> {
    if env.width == 0 || env.height == 0 {
        return Err(Error::input("environment map has no pixels"));
    }
    if !env.is_finite() {
        return Err(Error::data("environment map contains non-finite radiance"));
    }
    let n = order * order;
    let width = env.width;
    let height = env.height;
    // One partial sum per row, folded in row order for determinism.
    let rows: Vec<Vec<f64>> = (0..height)
        .into_par_iter()
        .map(|v| {
            let mut acc = vec![0.0; 3 * n];
            let mut basis = vec![0.0; n];
            let theta = std::f64::consts::PI * (v as f64 + 0.5) / height as f64;
            let d_omega = (2.0 * std::f64::consts::PI / width as f64)
                * (std::f64::consts::PI / height as f64)
                * theta.sin();
            for u in 0..width {
                let dir = equirect_direction(u, v, width, height);
                sh_basis_into(order, dir, &mut basis);
                let px = env.get(u, v);
                for (j, &y) in basis.iter().enumerate() {
                    let w = y * d_omega;
                    acc[j] += px[0] as f64 * w;
                    acc[n + j] += px[1] as f64 * w;
                    acc[2 * n + j] += px[2] as f64 * w;
                }
            }
            acc
        })
        .collect();
    let mut sh = [SHVector::zeros(order), SHVector::zeros(order), SHVector::zeros(order)];
    for row in rows {
        for c in 0..3 {
            for j in 0..n {
                sh[c].coeffs[j] += row[c * n + j];
            }
        }
    }
    Ok(EnvironmentLight { sh })
}

/// Bake an analytic radiance function into an equirect image (fixture
/// plumbing for tests and the CLI).
pub fn envmap_from_function<F>(f: F, width: usize, height: usize) -> Image
where
    F: Fn(Vec3) -> [f64; 3],
{
    let mut img = Image::new(width, height);
    for v in 0..height {
        for u in 0..width {
            let d = equirect_direction(u, v, width, height);
            let val = f(d);
            img.set(u, v, [val[0] as f32, val[1] as f32, val[2] as f32]);
        }
    }
    img
}
