//! Image-difference metrics: MAE, PSNR, and single-scale SSIM on luminance.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

/// PSNR when the mean squared error underflows the meaningful range.
pub const PSNR_CAP_DB: f64 = 99.0;
const MSE_FLOOR: f64 = 1e-10;

/// SSIM window: 11x11 Gaussian, sigma 1.5 (the reference single-scale
/// configuration), evaluated only where the window fits entirely inside
/// both images.
const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mae: f64,
    pub psnr_db: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelBreakdown {
    pub r: ChannelStats,
    pub g: ChannelStats,
    pub b: ChannelStats,
}

/// Full comparison report; serializes to the JSON the compare command prints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mae: f64,
    pub psnr_db: f64,
    pub ssim: f64,
    pub width: usize,
    pub height: usize,
    pub channels: ChannelBreakdown,
}

fn check_pair(a: &Image, b: &Image) -> Result<()> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::input(format!(
            "image dimensions differ: {}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    if a.pixels.is_empty() {
        return Err(Error::input("cannot compare empty images"));
    }
    if !a.is_finite() || !b.is_finite() {
        return Err(Error::data("image contains non-finite pixels"));
    }
    Ok(())
}

fn channel_sums(a: &Image, b: &Image) -> [(f64, f64); 3] {
    let mut sums = [(0.0f64, 0.0f64); 3];
    for (pa, pb) in a.pixels.iter().zip(&b.pixels) {
        for c in 0..3 {
            let d = pa[c] as f64 - pb[c] as f64;
            sums[c].0 += d.abs();
            sums[c].1 += d * d;
        }
    }
    sums
}

fn psnr_from_mse(mse: f64) -> f64 {
    if mse < MSE_FLOOR {
        PSNR_CAP_DB
    } else {
        10.0 * (1.0 / mse).log10()
    }
}

/// Mean absolute error over pixels x channels.
pub fn mae(a: &Image, b: &Image) -> Result<f64> {
    check_pair(a, b)?;
    let sums = channel_sums(a, b);
    let n = (a.pixels.len() * 3) as f64;
    Ok(sums.iter().map(|s| s.0).sum::<f64>() / n)
}

/// Mean squared error over pixels x channels.
pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    check_pair(a, b)?;
    let sums = channel_sums(a, b);
    let n = (a.pixels.len() * 3) as f64;
    Ok(sums.iter().map(|s| s.1).sum::<f64>() / n)
}

/// Peak signal-to-noise ratio in dB against a unit dynamic range, capped at
/// [`PSNR_CAP_DB`] once the MSE drops below 1e-10.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?))
}

fn luminance(img: &Image) -> Vec<f64> {
    img.pixels
        .iter()
        .map(|p| 0.2126 * p[0] as f64 + 0.7152 * p[1] as f64 + 0.0722 * p[2] as f64)
        .collect()
}

fn gaussian_window() -> [f64; SSIM_WINDOW * SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW * SSIM_WINDOW];
    let half = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for y in 0..SSIM_WINDOW {
        for x in 0..SSIM_WINDOW {
            let dx = x as f64 - half;
            let dy = y as f64 - half;
            let g = (-(dx * dx + dy * dy) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
            w[y * SSIM_WINDOW + x] = g;
            sum += g;
        }
    }
    for v in &mut w {
        *v /= sum;
    }
    w
}

/// Mean structural similarity on Rec. 709 luminance with a unit dynamic
/// range. Windows that would overhang the border are skipped, so both
/// dimensions must be at least the window size.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    check_pair(a, b)?;
    if a.width < SSIM_WINDOW || a.height < SSIM_WINDOW {
        return Err(Error::input(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} images, got {}x{}",
            a.width, a.height
        )));
    }
    let la = luminance(a);
    let lb = luminance(b);
    let w = gaussian_window();
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let width = a.width;
    let mut total = 0.0;
    let mut count = 0usize;
    for wy in 0..=(a.height - SSIM_WINDOW) {
        for wx in 0..=(width - SSIM_WINDOW) {
            let mut mu_a = 0.0;
            let mut mu_b = 0.0;
            let mut aa = 0.0;
            let mut bb = 0.0;
            let mut ab = 0.0;
            for dy in 0..SSIM_WINDOW {
                let row = (wy + dy) * width + wx;
                let wrow = dy * SSIM_WINDOW;
                for dx in 0..SSIM_WINDOW {
                    let g = w[wrow + dx];
                    let va = la[row + dx];
                    let vb = lb[row + dx];
                    mu_a += g * va;
                    mu_b += g * vb;
                    aa += g * va * va;
                    bb += g * vb * vb;
                    ab += g * va * vb;
                }
            }
            let var_a = aa - mu_a * mu_a;
            let var_b = bb - mu_b * mu_b;
            let cov = ab - mu_a * mu_b;
            let s = ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2))
                / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
            total += s;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// All metrics at once, with the per-channel breakdown.
pub fn compare_images(a: &Image, b: &Image) -> Result<MetricsReport> {
    check_pair(a, b)?;
    let sums = channel_sums(a, b);
    let n = a.pixels.len() as f64;
    let per_channel: Vec<ChannelStats> = sums
        .iter()
        .map(|&(abs, sq)| ChannelStats { mae: abs / n, psnr_db: psnr_from_mse(sq / n) })
        .collect();
    let mae = sums.iter().map(|s| s.0).sum::<f64>() / (3.0 * n);
    let psnr_db = psnr_from_mse(sums.iter().map(|s| s.1).sum::<f64>() / (3.0 * n));
    Ok(MetricsReport {
        mae,
        psnr_db,
        ssim: ssim(a, b)?,
        width: a.width,
        height: a.height,
        channels: ChannelBreakdown {
            r: per_channel[0],
            g: per_channel[1],
            b: per_channel[2],
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn uniform(w: usize, h: usize, v: f32) -> Image {
        let mut img = Image::new(w, h);
        img.pixels.fill([v; 3]);
        img
    }

    fn noisy(base: &Image, sigma: f64, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = base.clone();
        for p in &mut out.pixels {
            for c in p.iter_mut() {
                // Box-Muller normal draw.
                let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
                let u2: f64 = rng.gen_range(0.0..1.0);
                let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
                *c = (*c as f64 + sigma * z) as f32;
            }
        }
        out
    }

    #[test]
    fn identical_images_hit_the_trivial_identities() {
        let img = noisy(&uniform(32, 32, 0.5), 0.1, 3);
        assert_eq!(mae(&img, &img).unwrap(), 0.0);
        assert_eq!(psnr(&img, &img).unwrap(), PSNR_CAP_DB);
        assert!((ssim(&img, &img).unwrap() - 1.0).abs() < 1e-12);
        let report = compare_images(&img, &img).unwrap();
        assert_eq!(report.mae, 0.0);
        assert_eq!(report.psnr_db, PSNR_CAP_DB);
        assert_eq!(report.channels.g.psnr_db, PSNR_CAP_DB);
    }

    #[test]
    fn half_versus_point_six_is_twenty_db() {
        let a = uniform(16, 16, 0.5);
        let b = uniform(16, 16, 0.6);
        // Exact in reals: mae 0.1, mse 0.01, psnr 20. f32 pixel storage
        // perturbs 0.6 by ~2e-8, good for ~2e-6 dB.
        assert!((mae(&a, &b).unwrap() - 0.1).abs() < 1e-6);
        assert!((mse(&a, &b).unwrap() - 0.01).abs() < 1e-6);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-5);
    }

    #[test]
    fn small_noise_lands_near_forty_db() {
        let a = uniform(64, 64, 0.5);
        let b = noisy(&a, 0.01, 11);
        let p = psnr(&a, &b).unwrap();
        assert!((p - 40.0).abs() < 0.5, "psnr {p}");
        // Low-amplitude uncorrelated noise barely dents luminance SSIM.
        let s = ssim(&a, &b).unwrap();
        assert!(s > 0.5 && s < 1.0, "ssim {s}");
    }

    #[test]
    fn metrics_are_symmetric() {
        let a = noisy(&uniform(32, 32, 0.4), 0.05, 1);
        let b = noisy(&uniform(32, 32, 0.6), 0.05, 2);
        assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
        assert_eq!(mae(&a, &b).unwrap(), mae(&b, &a).unwrap());
        let sab = ssim(&a, &b).unwrap();
        let sba = ssim(&b, &a).unwrap();
        assert!((sab - sba).abs() < 1e-9);
    }

    #[test]
    fn mae_satisfies_the_triangle_inequality() {
        for seed in 0..5u64 {
            let a = noisy(&uniform(16, 16, 0.5), 0.2, seed * 3);
            let b = noisy(&uniform(16, 16, 0.5), 0.2, seed * 3 + 1);
            let c = noisy(&uniform(16, 16, 0.5), 0.2, seed * 3 + 2);
            let ac = mae(&a, &c).unwrap();
            let ab = mae(&a, &b).unwrap();
            let bc = mae(&b, &c).unwrap();
            assert!(ac <= ab + bc + 1e-12, "{ac} > {ab} + {bc}");
        }
    }

    #[test]
    fn ssim_penalizes_structural_change_more_than_bias() {
        // A constant offset keeps structure (high SSIM); shuffled texture
        // destroys it.
        let base = noisy(&uniform(48, 48, 0.5), 0.15, 7);
        let mut offset = base.clone();
        for p in &mut offset.pixels {
            for c in p.iter_mut() {
                *c += 0.02;
            }
        }
        let mut shuffled = base.clone();
        shuffled.pixels.rotate_left(48 * 7 + 13);
        let s_offset = ssim(&base, &offset).unwrap();
        let s_shuffled = ssim(&base, &shuffled).unwrap();
        assert!(s_offset > 0.9, "offset ssim {s_offset}");
        assert!(s_shuffled < s_offset - 0.3, "shuffled {s_shuffled} vs offset {s_offset}");
        assert!((-1.0..=1.0).contains(&s_shuffled));
    }

    #[test]
    fn report_serializes_with_the_agreed_field_names() {
        let a = uniform(16, 16, 0.5);
        let b = uniform(16, 16, 0.6);
        let report = compare_images(&a, &b).unwrap();
        let json = serde_json::to_value(&report).unwrap();
        for key in ["mae", "psnr_db", "ssim", "width", "height", "channels"] {
            assert!(json.get(key).is_some(), "missing key {key}");
        }
        assert!(json["channels"]["r"].get("mae").is_some());
        assert!(json["channels"]["b"].get("psnr_db").is_some());
        let back: MetricsReport = serde_json::from_value(json).unwrap();
        assert_eq!(back, report);
    }

    #[test]
    fn dimension_and_size_errors_are_rejected() {
        let a = uniform(16, 16, 0.5);
        let b = uniform(16, 8, 0.5);
        assert!(mae(&a, &b).is_err());
        assert!(psnr(&a, &b).is_err());
        assert!(ssim(&a, &b).is_err());
        // Too small for an 11x11 window.
        let tiny = uniform(8, 8, 0.5);
        assert!(ssim(&tiny, &tiny).is_err());
        // Non-finite input is data corruption, not a valid comparison.
        let mut bad = uniform(16, 16, 0.5);
        bad.pixels[3][1] = f32::NAN;
        assert!(mae(&bad, &a).is_err());
    }
}
