//! Zonal (rotationally symmetric) SH kernels: Phong-lobe projection and
//! frequency-space convolution.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sh::{sh_index, SHVector};

/// One coefficient per band of a kernel symmetric about +z.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZonalCoeffs {
    pub order: usize,
    pub values: Vec<f64>,
}

/// Legendre polynomial P_l(x) by the three-term recurrence.
pub fn legendre(l: usize, x: f64) -> f64 {
    match l {
        0 => 1.0,
        1 => x,
        _ => {
            let mut p0 = 1.0;
            let mut p1 = x;
            for k in 2..=l {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            p1
        }
    }
}

/// Adaptive Simpson on [a, b] to absolute tolerance `tol`.
fn adaptive_simpson<F: Fn(f64) -> f64 + Copy>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
        let m = 0.5 * (a + b);
        let fm = f(m);
        ((b - a) / 6.0 * (fa + 4.0 * fm + fb), m, fm)
    }
    fn recurse<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        whole: f64,
        m: f64,
        fm: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let (left, lm, flm) = simpson(f, a, fa, m, fm);
        let (right, rm, frm) = simpson(f, m, fm, b, fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        recurse(f, a, fa, m, fm, left, lm, flm, 0.5 * tol, depth - 1)
            + recurse(f, m, fm, b, fb, right, rm, frm, 0.5 * tol, depth - 1)
    }
    let fa = f(a);
    let fb = f(b);
    let (whole, m, fm) = simpson(&f, a, fa, b, fb);
    recurse(&f, a, fa, b, fb, whole, m, fm, tol, 48)
}

/// Zonal SH projection of the unnormalized lobe max(cos theta, 0)^e about +z:
/// `h_l = 2 pi * integral_0^1 t^e N_l P_l(t) dt` with
/// `N_l = sqrt((2l+1)/(4 pi))`. Energy normalization is a material concern.
pub fn phong_zonal_coeffs(exponent: f64, order: usize) -> Result<ZonalCoeffs> {
    if !exponent.is_finite() || exponent < 0.0 {
        return Err(Error::input(format!(
            "Phong exponent must be finite and >= 0, got {exponent}"
        )));
    }
    let mut values = Vec::with_capacity(order);
    for l in 0..order {
        let nl = ((2 * l + 1) as f64 / (4.0 * std::f64::consts::PI)).sqrt();
        let integral = adaptive_simpson(|t| t.powf(exponent) * legendre(l, t), 0.0, 1.0, 1e-12);
        values.push(2.0 * std::f64::consts::PI * nl * integral);
    }
    Ok(ZonalCoeffs { order, values })
}

/// Funk-Hecke convolution of an expansion with a zonal kernel:
/// `(f (*) h)_lm = sqrt(4 pi / (2l+1)) * h_l * f_lm`.
pub fn zonal_convolve(f: &SHVector, h: &ZonalCoeffs) -> Result<SHVector> {
    if f.order != h.order {
        return Err(Error::input(format!(
            "order mismatch: expansion order {} vs kernel order {}",
            f.order, h.order
        )));
    }
    let mut out = SHVector::zeros(f.order);
    for l in 0..f.order {
        let factor = (4.0 * std::f64::consts::PI / (2 * l + 1) as f64).sqrt() * h.values[l];
        for m in -(l as i64)..=(l as i64) {
            let i = sh_index(l, m);
            out.coeffs[i] = factor * f.coeffs[i];
        }
    }
    Ok(out)
}
