//! Sphere sampling and quadrature rules.
//!
//! Two rules are provided:
//!
//! * stratified Monte Carlo over the full sphere (used by the transfer baker),
//! * a Gauss-Legendre (in cos theta) x uniform (in phi) product rule, which
//!   integrates band-limited spherical polynomials exactly and backs the
//!   analytic oracles in the test suite.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::math::{mix_seed, vec3, Vec3};

/// Maps a point of the unit square to the unit sphere, area-preserving:
/// u drives the azimuth, v the z coordinate.
pub fn square_to_sphere(u: f64, v: f64) -> Vec3 {
    let z = 1.0 - 2.0 * v;
    let r = (1.0 - z * z).max(0.0).sqrt();
    let phi = 2.0 * std::f64::consts::PI * u;
    vec3(r * phi.cos(), r * phi.sin(), z)
}

/// Stratified directions over the full sphere. `n` is rounded up to the next
/// perfect square so the strata form a k x k grid; jitter comes from a
/// ChaCha8 stream seeded with `seed`, so the set is reproducible.
pub fn stratified_sphere_dirs(n: usize, seed: u64) -> Vec<Vec3> {
    let k = (n as f64).sqrt().ceil() as usize;
    let k = k.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dirs = Vec::with_capacity(k * k);
    let inv = 1.0 / k as f64;
    for i in 0..k {
        for j in 0..k {
            let u = (i as f64 + rng.gen::<f64>()) * inv;
            let v = (j as f64 + rng.gen::<f64>()) * inv;
            dirs.push(square_to_sphere(u, v));
        }
    }
    dirs
}

/// Gauss-Legendre nodes and weights on [-1, 1], computed by Newton iteration
/// on the Legendre recurrence. Exact for polynomials of degree <= 2n-1.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        // Chebyshev-based initial guess.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // Evaluate P_n(x) and P_n'(x) via the three-term recurrence.
            let mut p0 = 1.0;
            let mut p1 = x;
            for l in 2..=n {
                let lf = l as f64;
                let p2 = ((2.0 * lf - 1.0) * x * p1 - (lf - 1.0) * p0) / lf;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = x;
        weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    // Newton converges from the Chebyshev guesses in descending order; flip
    // so callers see ascending nodes.
    nodes.reverse();
    weights.reverse();
    (nodes, weights)
}

/// A direction/solid-angle-weight pair ready to plug into a sum.
#[derive(Debug, Clone, Copy)]
pub struct SphereSample {
    pub dir: Vec3,
    pub weight: f64,
}

/// Quadrature rule over the unit sphere.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum QuadratureSpec {
    /// Stratified uniform sampling; every sample carries weight 4*pi/N.
    MonteCarlo { samples: usize, seed: u64 },
    /// Gauss-Legendre in cos(theta) times a uniform phi grid. Exact for
    /// spherical polynomials of theta-degree <= 2*n_theta - 1 and azimuthal
    /// order < n_phi / 2 (roughly; see the parity note in `triple`).
    LatLong { n_theta: usize, n_phi: usize },
}

impl QuadratureSpec {
    pub fn samples(&self) -> Vec<SphereSample> {
        match *self {
            QuadratureSpec::MonteCarlo { samples, seed } => {
                let dirs = stratified_sphere_dirs(samples, seed);
                let w = 4.0 * std::f64::consts::PI / dirs.len() as f64;
                dirs.into_iter()
                    .map(|dir| SphereSample { dir, weight: w })
                    .collect()
            }
            QuadratureSpec::LatLong { n_theta, n_phi } => {
                let (nodes, weights) = gauss_legendre(n_theta);
                let dphi = 2.0 * std::f64::consts::PI / n_phi as f64;
                let mut out = Vec::with_capacity(n_theta * n_phi);
                for (&ct, &wt) in nodes.iter().zip(&weights) {
                    let st = (1.0 - ct * ct).max(0.0).sqrt();
                    for j in 0..n_phi {
                        let phi = (j as f64 + 0.5) * dphi;
                        out.push(SphereSample {
                            dir: vec3(st * phi.cos(), st * phi.sin(), ct),
                            weight: wt * dphi,
                        });
                    }
                }
                out
            }
        }
    }
}

/// Integrate `f` over the sphere with the given rule.
pub fn integrate_sphere<F: FnMut(Vec3) -> f64>(spec: QuadratureSpec, mut f: F) -> f64 {
    spec.samples().iter().map(|s| s.weight * f(s.dir)).sum()
}

/// Deterministic per-item seed derivation, re-exported for bakers that hand
/// each work item its own RNG stream.
pub fn item_seed(base: u64, index: usize) -> u64 {
    mix_seed(base, index as u64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        // n nodes are exact through degree 2n-1.
        let (x, w) = gauss_legendre(4);
        let integral: f64 = x.iter().zip(&w).map(|(&x, &w)| w * x.powi(6)).sum();
        assert!((integral - 2.0 / 7.0).abs() < 1e-12, "got {integral}");
        let total: f64 = w.iter().sum();
        assert!((total - 2.0).abs() < 1e-12);
    }

    #[test]
    fn latlong_weights_sum_to_sphere_area() {
        let spec = QuadratureSpec::LatLong { n_theta: 8, n_phi: 16 };
        let area: f64 = spec.samples().iter().map(|s| s.weight).sum();
        assert!((area - 4.0 * std::f64::consts::PI).abs() < 1e-10);
    }

    #[test]
    fn latlong_integrates_z_squared() {
        // Integral of z^2 over the sphere = 4*pi/3.
        let spec = QuadratureSpec::LatLong { n_theta: 4, n_phi: 8 };
        let v = integrate_sphere(spec, |d| d.z * d.z);
        assert!((v - 4.0 * std::f64::consts::PI / 3.0).abs() < 1e-12);
    }

    #[test]
    fn stratified_dirs_are_unit_and_reproducible() {
        let a = stratified_sphere_dirs(100, 42);
        let b = stratified_sphere_dirs(100, 42);
        assert_eq!(a.len(), 100);
        for (da, db) in a.iter().zip(&b) {
            assert_eq!(da, db);
            assert!(da.is_unit(1e-12));
        }
        let c = stratified_sphere_dirs(100, 43);
        assert_ne!(a[0], c[0]);
    }

    #[test]
    fn stratified_rounds_up_to_square() {
        assert_eq!(stratified_sphere_dirs(10, 1).len(), 16);
    }

    #[test]
    fn monte_carlo_integrates_constant_exactly() {
        let spec = QuadratureSpec::MonteCarlo { samples: 64, seed: 9 };
        let v = integrate_sphere(spec, |_| 1.0);
        assert!((v - 4.0 * std::f64::consts::PI).abs() < 1e-12);
    }
}
