//! Real spherical harmonics: basis evaluation, projection, expansion
//! evaluation, and the diffuse dot product.
//!
//! Convention: orthonormal real basis without the Condon-Shortley phase,
//! flat index `i = l(l+1) + m` for band `l`, order `m in [-l, l]`. With this
//! convention `integral(y_i * y_j) = delta_ij` over the unit sphere.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::Vec3;
use crate::quadrature::QuadratureSpec;

/// Highest supported band count for basis evaluation.
pub const MAX_ORDER: usize = 8;

/// `1 / (2 sqrt(pi))` — the constant band-0 basis value.
pub const Y00: f64 = 0.282_094_791_773_878_14;

/// Flat coefficient index for band `l`, order `m`.
pub fn sh_index(l: usize, m: i64) -> usize {
    ((l * (l + 1)) as i64 + m) as usize
}

/// Coefficients of an order-n SH expansion (n^2 values).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SHVector {
    pub order: usize,
    pub coeffs: Vec<f64>,
}

impl SHVector {
    pub fn zeros(order: usize) -> SHVector {
        SHVector {
            order,
            coeffs: vec![0.0; order * order],
        }
    }

    /// Validating constructor: length must be `order^2`, all values finite.
    pub fn new(order: usize, coeffs: Vec<f64>) -> Result<SHVector> {
        if coeffs.len() != order * order {
            return Err(Error::input(format!(
                "SH coefficient count {} does not match order {} (expected {})",
                coeffs.len(),
                order,
                order * order
            )));
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::data("non-finite SH coefficient"));
        }
        Ok(SHVector { order, coeffs })
    }

    /// Basis vector `e_index` (a single unit coefficient).
    pub fn unit(order: usize, index: usize) -> SHVector {
        let mut v = SHVector::zeros(order);
        v.coeffs[index] = 1.0;
        v
    }

    pub fn n_coeffs(&self) -> usize {
        self.coeffs.len()
    }

    pub fn dot(&self, o: &SHVector) -> f64 {
        self.coeffs.iter().zip(&o.coeffs).map(|(a, b)| a * b).sum()
    }

    pub fn scaled(&self, s: f64) -> SHVector {
        SHVector {
            order: self.order,
            coeffs: self.coeffs.iter().map(|c| c * s).collect(),
        }
    }

    pub fn add(&self, o: &SHVector) -> SHVector {
        SHVector {
            order: self.order,
            coeffs: self
                .coeffs
                .iter()
                .zip(&o.coeffs)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.coeffs.iter().fold(0.0, |m, c| m.max(c.abs()))
    }
}

fn check_unit(dir: Vec3) -> Result<()> {
    if !dir.is_finite() || !dir.is_unit(1e-6) {
        return Err(Error::input(format!(
            "direction must be unit length, got |v| = {}",
            dir.length()
        )));
    }
    Ok(())
}

pub(crate) fn check_order(order: usize) -> Result<()> {
    if !(1..=MAX_ORDER).contains(&order) {
        return Err(Error::input(format!(
            "SH order must be in [1, {MAX_ORDER}], got {order}"
        )));
    }
    Ok(())
}

/// Orthonormalization constants K(l,m) = sqrt((2l+1)/(4pi) * (l-m)!/(l+m)!),
/// flattened by `l(l+1)/2 + m`.
fn norm_table() -> &'static [f64; MAX_ORDER * (MAX_ORDER + 1) / 2] {
    static TABLE: OnceLock<[f64; MAX_ORDER * (MAX_ORDER + 1) / 2]> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut t = [0.0; MAX_ORDER * (MAX_ORDER + 1) / 2];
        for l in 0..MAX_ORDER {
            for m in 0..=l {
                let mut ratio = 1.0;
                for r in (l - m + 1)..=(l + m) {
                    ratio *= r as f64;
                }
                t[l * (l + 1) / 2 + m] =
                    ((2 * l + 1) as f64 / (4.0 * std::f64::consts::PI) / ratio).sqrt();
            }
        }
        t
    })
}

/// Evaluate all `order^2` basis functions at a unit direction into `out`.
///
/// Unchecked hot path: `dir` must be unit, `out.len() >= order^2`,
/// `order <= MAX_ORDER`. Uses the associated-Legendre recurrence with the
/// `(1-z^2)^(m/2)` factor folded into the sectorial terms
/// `(a_m, b_m) = (Re, Im)\,(x+iy)^m`, which keeps the evaluation stable at
/// the poles.
pub fn sh_basis_into(order: usize, dir: Vec3, out: &mut [f64]) {
    debug_assert!((1..=MAX_ORDER).contains(&order));
    debug_assert!(out.len() >= order * order);
    let (x, y, z) = (dir.x, dir.y, dir.z);
    let kn = norm_table();

    let mut pmm = 1.0; // semi-normalized P_m^m with (1-z^2)^(m/2) stripped
    let mut am = 1.0; // Re (x+iy)^m
    let mut bm = 0.0; // Im (x+iy)^m
    for m in 0..order {
        let mf = m as f64;
        let mut p_prev = 0.0;
        let mut p = pmm;
        for l in m..order {
            if l > m {
                let lf = l as f64;
                let next = if l == m + 1 {
                    z * (2.0 * mf + 1.0) * pmm
                } else {
                    ((2.0 * lf - 1.0) * z * p - (lf + mf - 1.0) * p_prev) / (lf - mf)
                };
                p_prev = p;
                p = next;
            }
            let k = kn[l * (l + 1) / 2 + m];
            if m == 0 {
                out[l * (l + 1)] = k * p;
            } else {
                let v = std::f64::consts::SQRT_2 * k * p;
                out[l * (l + 1) + m] = v * am;
                out[l * (l + 1) - m] = v * bm;
            }
        }
        let (na, nb) = (x * am - y * bm, x * bm + y * am);
        am = na;
        bm = nb;
        pmm *= 2.0 * mf + 1.0;
    }
}

/// Evaluate the basis at `dir`, returning `order^2` values indexed by
/// `l(l+1)+m`.
pub fn sh_basis_eval(dir: Vec3, order: usize) -> Result<Vec<f64>> {
    check_unit(dir)?;
    check_order(order)?;
    let mut out = vec![0.0; order * order];
    sh_basis_into(order, dir, &mut out);
    Ok(out)
}

/// Project a spherical function onto the basis: `coeffs_i = integral(f * y_i)`.
pub fn project_function<F>(mut f: F, order: usize, quad: QuadratureSpec) -> Result<SHVector>
where
    F: FnMut(Vec3) -> f64,
{
    check_order(order)?;
    let n = order * order;
    let mut acc = vec![0.0; n];
    let mut basis = vec![0.0; n];
    for s in quad.samples() {
        let v = f(s.dir);
        if !v.is_finite() {
            return Err(Error::data(format!(
                "sampler returned non-finite value at direction ({}, {}, {})",
                s.dir.x, s.dir.y, s.dir.z
            )));
        }
        sh_basis_into(order, s.dir, &mut basis);
        let wv = s.weight * v;
        for i in 0..n {
            acc[i] += wv * basis[i];
        }
    }
    Ok(SHVector {
        order,
        coeffs: acc,
    })
}

/// Evaluate an expansion at a direction: `sum_i f_i y_i(dir)`.
pub fn sh_eval_expansion(f: &SHVector, dir: Vec3) -> Result<f64> {
    check_unit(dir)?;
    check_order(f.order)?;
    let mut basis = vec![0.0; f.n_coeffs()];
    sh_basis_into(f.order, dir, &mut basis);
    Ok(f.coeffs.iter().zip(&basis).map(|(c, y)| c * y).sum())
}

/// Diffuse dot product (transfer . light). Albedo/pi scaling is the
/// caller's concern.
pub fn diffuse_shade(t: &SHVector, l: &SHVector) -> Result<f64> {
    if t.order != l.order {
        return Err(Error::input(format!(
            "order mismatch: transfer order {} vs light order {}",
            t.order, l.order
        )));
    }
    Ok(t.dot(l))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::vec3;

    /// Frozen Cartesian polynomial forms of the first 16 basis functions:
    /// (index, closure over unit (x,y,z)).
    fn oracle_table() -> Vec<(usize, Box<dyn Fn(f64, f64, f64) -> f64>)> {
        vec![
            (0, Box::new(|_, _, _| 0.28209479177387814)),
            (1, Box::new(|_, y, _| 0.4886025119029199 * y)),
            (2, Box::new(|_, _, z| 0.4886025119029199 * z)),
            (3, Box::new(|x, _, _| 0.4886025119029199 * x)),
            (4, Box::new(|x, y, _| 1.0925484305920792 * x * y)),
            (5, Box::new(|_, y, z| 1.0925484305920792 * y * z)),
            (6, Box::new(|_, _, z| 0.31539156525252005 * (3.0 * z * z - 1.0))),
            (7, Box::new(|x, _, z| 1.0925484305920792 * x * z)),
            (8, Box::new(|x, y, _| 0.5462742152960396 * (x * x - y * y))),
            (9, Box::new(|x, y, _| 0.5900435899266435 * y * (3.0 * x * x - y * y))),
            (10, Box::new(|x, y, z| 2.890611442640554 * x * y * z)),
            (11, Box::new(|_, y, z| 0.4570457994644658 * y * (5.0 * z * z - 1.0))),
            (12, Box::new(|_, _, z| 0.3731763325901154 * z * (5.0 * z * z - 3.0))),
            (13, Box::new(|x, _, z| 0.4570457994644658 * x * (5.0 * z * z - 1.0))),
            (14, Box::new(|x, y, z| 1.445305721320277 * z * (x * x - y * y))),
            (15, Box::new(|x, y, _| 0.5900435899266435 * x * (x * x - 3.0 * y * y))),
        ]
    }

    #[test]
    fn band0_at_pole() {
        let v = sh_basis_eval(vec3(0.0, 0.0, 1.0), 1).unwrap();
        assert_eq!(v.len(), 1);
        assert!((v[0] - 0.2820948).abs() < 1e-7);
    }

    #[test]
    fn pole_kills_nonzonal_terms() {
        let v = sh_basis_eval(vec3(0.0, 0.0, 1.0), 2).unwrap();
        assert_eq!(v[1], 0.0);
        assert_eq!(v[3], 0.0);
    }

    #[test]
    fn matches_cartesian_oracle() {
        let dirs = [
            vec3(0.6, 0.8, 0.0),
            vec3(0.0, 0.0, 1.0),
            vec3(0.0, 0.0, -1.0),
            vec3(1.0, 2.0, -3.0).normalized(),
            vec3(-0.3, 0.1, 0.7).normalized(),
        ];
        for dir in dirs {
            let v = sh_basis_eval(dir, 4).unwrap();
            for (i, f) in oracle_table() {
                let expect = f(dir.x, dir.y, dir.z);
                assert!(
                    (v[i] - expect).abs() < 1e-10,
                    "basis {i} at {dir:?}: got {} want {expect}",
                    v[i]
                );
            }
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(sh_basis_eval(vec3(0.0, 0.0, 2.0), 4).is_err());
        assert!(sh_basis_eval(vec3(0.0, 0.0, 1.0), 0).is_err());
        assert!(sh_basis_eval(vec3(0.0, 0.0, 1.0), 9).is_err());
    }

    #[test]
    fn gram_matrix_is_identity_under_exact_rule() {
        // Products of two order-4 basis functions are band-limited, so the
        // lat-long product rule integrates them exactly.
        let quad = QuadratureSpec::LatLong { n_theta: 8, n_phi: 32 };
        let samples = quad.samples();
        let n = 16;
        let mut gram = vec![0.0; n * n];
        let mut basis = vec![0.0; n];
        for s in &samples {
            sh_basis_into(4, s.dir, &mut basis);
            for i in 0..n {
                for j in 0..n {
                    gram[i * n + j] += s.weight * basis[i] * basis[j];
                }
            }
        }
        for i in 0..n {
            for j in 0..n {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!(
                    (gram[i * n + j] - expect).abs() < 1e-12,
                    "gram[{i}][{j}] = {}",
                    gram[i * n + j]
                );
            }
        }
    }

    #[test]
    fn projects_constant_to_dc() {
        let quad = QuadratureSpec::LatLong { n_theta: 8, n_phi: 32 };
        let v = project_function(|_| 1.0, 4, quad).unwrap();
        let two_sqrt_pi = 2.0 * std::f64::consts::PI.sqrt();
        assert!((v.coeffs[0] - two_sqrt_pi).abs() < 1e-12);
        for c in &v.coeffs[1..] {
            assert!(c.abs() < 1e-12);
        }
    }

    #[test]
    fn projects_basis_function_to_unit_coefficient() {
        let quad = QuadratureSpec::LatLong { n_theta: 8, n_phi: 32 };
        let v = project_function(
            |d| {
                let mut b = [0.0; 16];
                sh_basis_into(4, d, &mut b);
                b[5]
            },
            4,
            quad,
        )
        .unwrap();
        for (i, c) in v.coeffs.iter().enumerate() {
            let expect = if i == 5 { 1.0 } else { 0.0 };
            assert!((c - expect).abs() < 1e-12, "coeff {i} = {c}");
        }
    }

    #[test]
    fn projects_clamped_cosine_to_zonal_values() {
        // Analytic zonal projection of max(cos theta, 0); the band-3 entry
        // vanishes.
        let expect = [0.8862269254527580, 1.0233267079464885, 0.4954159122007514, 0.0];
        let quad = QuadratureSpec::LatLong { n_theta: 512, n_phi: 16 };
        let v = project_function(|d| d.z.max(0.0), 4, quad).unwrap();
        for l in 0..4 {
            let got = v.coeffs[sh_index(l, 0)];
            assert!(
                (got - expect[l]).abs() < 1e-4,
                "band {l}: got {got} want {}",
                expect[l]
            );
        }
        for l in 1..4usize {
            for m in 1..=(l as i64) {
                assert!(v.coeffs[sh_index(l, m)].abs() < 1e-10);
                assert!(v.coeffs[sh_index(l, -m)].abs() < 1e-10);
            }
        }
    }

    #[test]
    fn projection_rejects_non_finite_sampler() {
        let quad = QuadratureSpec::LatLong { n_theta: 2, n_phi: 4 };
        assert!(project_function(|_| f64::NAN, 4, quad).is_err());
    }

    #[test]
    fn expansion_of_dc_is_constant() {
        let f = SHVector::unit(4, 0);
        for dir in [vec3(0.0, 1.0, 0.0), vec3(1.0, -1.0, 0.3).normalized()] {
            let v = sh_eval_expansion(&f, dir).unwrap();
            assert!((v - 0.2820948).abs() < 1e-7);
        }
    }

    #[test]
    fn linear_function_is_exactly_band_one() {
        let quad = QuadratureSpec::LatLong { n_theta: 8, n_phi: 32 };
        let f = project_function(|d| d.z, 4, quad).unwrap();
        let v = sh_eval_expansion(&f, vec3(0.0, 0.0, 1.0)).unwrap();
        assert!((v - 1.0).abs() < 1e-6);
    }

    #[test]
    fn zero_expansion_evaluates_to_zero() {
        let f = SHVector::zeros(4);
        assert_eq!(sh_eval_expansion(&f, vec3(0.0, 0.0, 1.0)).unwrap(), 0.0);
    }

    #[test]
    fn diffuse_shade_matches_analytic_irradiance() {
        // Clamped-cosine transfer about +z against a constant light of
        // radiance c gives irradiance pi*c.
        let zonal = [0.8862269254527580, 1.0233267079464885, 0.4954159122007514, 0.0];
        let mut t = SHVector::zeros(4);
        for l in 0..4 {
            t.coeffs[sh_index(l, 0)] = zonal[l];
        }
        let c = 0.7;
        let mut light = SHVector::zeros(4);
        light.coeffs[0] = 2.0 * std::f64::consts::PI.sqrt() * c;
        let b = diffuse_shade(&t, &light).unwrap();
        assert!((b - std::f64::consts::PI * c).abs() < 1e-3, "got {b}");
    }

    #[test]
    fn diffuse_shade_is_linear_in_light() {
        let t = SHVector::new(4, (0..16).map(|i| (i as f64) * 0.1 - 0.5).collect()).unwrap();
        let l1 = SHVector::new(4, (0..16).map(|i| (i as f64).sin()).collect()).unwrap();
        let l2 = SHVector::new(4, (0..16).map(|i| (i as f64).cos()).collect()).unwrap();
        let sum = diffuse_shade(&t, &l1.add(&l2)).unwrap();
        let parts = diffuse_shade(&t, &l1).unwrap() + diffuse_shade(&t, &l2).unwrap();
        assert!((sum - parts).abs() < 1e-12);
    }

    #[test]
    fn diffuse_shade_rejects_order_mismatch() {
        let t = SHVector::zeros(4);
        let l = SHVector::zeros(3);
        assert!(diffuse_shade(&t, &l).is_err());
    }

    #[test]
    fn shvector_constructor_validates() {
        assert!(SHVector::new(4, vec![0.0; 15]).is_err());
        assert!(SHVector::new(4, vec![f64::NAN; 16]).is_err());
        assert!(SHVector::new(4, vec![0.0; 16]).is_ok());
    }
}
