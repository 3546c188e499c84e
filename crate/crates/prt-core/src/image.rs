//! Linear RGB float images and the file formats around them: PFM in and
//! out (exact f32 round trip), PNG/PPM tone-mapped output.

use std::io::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// Row-major, top-down, linear radiance.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<[f32; 3]>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Image {
        Image { width, height, pixels: vec![[0.0; 3]; width * height] }
    }

    pub fn get(&self, x: usize, y: usize) -> [f32; 3] {
        self.pixels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: [f32; 3]) {
        self.pixels[y * self.width + x] = v;
    }

    pub fn is_finite(&self) -> bool {
        self.pixels.iter().all(|p| p.iter().all(|c| c.is_finite()))
    }
}

// --- PFM ---------------------------------------------------------------

/// Parse a PFM image ("PF" color or "Pf" grayscale, f32 scanlines stored
/// bottom-up, negative scale factor = little-endian).
pub fn parse_pfm(bytes: &[u8]) -> Result<Image> {
    let mut pos = 0usize;
    let mut token = || -> Result<&[u8]> {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format("truncated header"));
        }
        // Consume exactly one whitespace byte after the token; the pixel
        // payload begins immediately after the scale token's newline.
        pos += 1;
        Ok(&bytes[start..pos - 1])
    };
    let magic = token()?;
    let channels = match magic {
        b"PF" => 3,
        b"Pf" => 1,
        _ => return Err(Error::format("not a PFM file (expected PF or Pf)")),
    };
    let parse_dim = |t: &[u8]| -> Result<usize> {
        let s = std::str::from_utf8(t).map_err(|_| Error::format("non-ascii dimension"))?;
        let v: i64 = s.parse().map_err(|_| Error::format(format!("bad dimension {s:?}")))?;
        if v <= 0 || v > 1 << 15 {
            return Err(Error::format(format!("dimension {v} out of range")));
        }
        Ok(v as usize)
    };
    let width = parse_dim(token()?)?;
    let height = parse_dim(token()?)?;
    let scale_tok = token()?;
    let scale: f64 = std::str::from_utf8(scale_tok)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::format("bad scale factor"))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(Error::format("scale factor must be finite and nonzero"));
    }
    let little_endian = scale < 0.0;
    let mag = scale.abs() as f32;

    let n_floats = width
        .checked_mul(height)
        .and_then(|v| v.checked_mul(channels))
        .ok_or_else(|| Error::format("image too large"))?;
    let payload = if pos <= bytes.len() { &bytes[pos..] } else { &[][..] };
    if payload.len() != n_floats * 4 {
        return Err(Error::format(format!(
            "payload is {} bytes, expected {}",
            payload.len(),
            n_floats * 4
        )));
    }
    let mut img = Image::new(width, height);
    for (i, chunk) in payload.chunks_exact(4 * channels).enumerate() {
        // Scanlines are stored bottom-up.
        let y = height - 1 - i / width;
        let x = i % width;
        let mut px = [0.0f32; 3];
        for c in 0..channels {
            let raw: [u8; 4] = chunk[c * 4..(c + 1) * 4].try_into().unwrap();
            let v = if little_endian { f32::from_le_bytes(raw) } else { f32::from_be_bytes(raw) };
            px[c] = v * if mag == 1.0 { 1.0 } else { mag };
        }
        if channels == 1 {
            px = [px[0]; 3];
        }
        img.pixels[y * width + x] = px;
    }
    Ok(img)
}

pub fn load_pfm(path: &Path) -> Result<Image> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_pfm(&bytes)
}

/// Write a color PFM (little-endian, scale -1) preserving f32 bits.
pub fn save_pfm(img: &Image, path: &Path) -> Result<()> {
    let mut out = Vec::with_capacity(64 + img.pixels.len() * 12);
    let _ = write!(out, "PF\n{} {}\n-1.0\n", img.width, img.height);
    for y in (0..img.height).rev() {
        for x in 0..img.width {
            for c in img.get(x, y) {
                out.extend_from_slice(&c.to_le_bytes());
            }
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

// --- Radiance HDR ------------------------------------------------------

pub fn parse_hdr(bytes: &[u8]) -> Result<Image> {
    use image::codecs::hdr::HdrDecoder;
    use image::ImageDecoder;
    let decoder = HdrDecoder::new(std::io::Cursor::new(bytes))
        .map_err(|e| Error::format(format!("HDR decode failed: {e}")))?;
    let (width, height) = decoder.dimensions();
    let (width, height) = (width as usize, height as usize);
    if width == 0 || height == 0 || width > 1 << 15 || height > 1 << 15 {
        return Err(Error::format("HDR dimensions out of range"));
    }
    let mut buf = vec![0u8; width * height * 12];
    decoder
        .read_image(&mut buf)
        .map_err(|e| Error::format(format!("HDR payload decode failed: {e}")))?;
    let mut img = Image::new(width, height);
    // read_image writes native-endian f32 triplets.
    for (px, chunk) in img.pixels.iter_mut().zip(buf.chunks_exact(12)) {
        for c in 0..3 {
            px[c] = f32::from_ne_bytes(chunk[c * 4..(c + 1) * 4].try_into().unwrap());
        }
    }
    Ok(img)
}

pub fn load_hdr(path: &Path) -> Result<Image> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_hdr(&bytes)
}

/// Dispatch on extension: .pfm or .hdr.
pub fn load_radiance_image(path: &Path) -> Result<Image> {
    match path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()) {
        Some(ref e) if e == "pfm" => load_pfm(path),
        Some(ref e) if e == "hdr" => load_hdr(path),
        _ => Err(Error::input(format!(
            "unsupported radiance image extension on {}",
            path.display()
        ))),
    }
}

// --- Tone-mapped output ------------------------------------------------

fn to_8bit(img: &Image, exposure: f32, gamma: f32) -> Vec<u8> {
    let inv_gamma = 1.0 / gamma;
    let mut out = Vec::with_capacity(img.pixels.len() * 3);
    for px in &img.pixels {
        for &c in px {
            let v = (exposure * c).clamp(0.0, 1.0).powf(inv_gamma);
            out.push((v * 255.0).round() as u8);
        }
    }
    out
}

/// Tone map and write by extension: .png, .ppm, or .pfm (raw linear
/// dump ignoring exposure/gamma, for metric fidelity).
pub fn tonemap_write(img: &Image, path: &Path, exposure: f32, gamma: f32) -> Result<()> {
    if !(exposure > 0.0 && exposure.is_finite()) || !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::input("exposure and gamma must be positive and finite"));
    }
    match path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()) {
        Some(ref e) if e == "png" => {
            let data = to_8bit(img, exposure, gamma);
            let buf: image::RgbImage =
                image::ImageBuffer::from_raw(img.width as u32, img.height as u32, data)
                    .ok_or_else(|| Error::input("image dimensions inconsistent"))?;
            buf.save_with_format(path, image::ImageFormat::Png)
                .map_err(|e| Error::format(format!("PNG encode failed: {e}")))
        }
        Some(ref e) if e == "ppm" => {
            let data = to_8bit(img, exposure, gamma);
            let mut out = Vec::with_capacity(32 + data.len());
            let _ = write!(out, "P6\n{} {}\n255\n", img.width, img.height);
            out.extend_from_slice(&data);
            std::fs::write(path, out).map_err(|e| Error::io(path, e))
        }
        Some(ref e) if e == "pfm" => save_pfm(img, path),
        _ => Err(Error::input(format!(
            "unsupported output extension on {}",
            path.display()
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn noise_image(width: usize, height: usize, seed: u32) -> Image {
        let mut img = Image::new(width, height);
        let mut state = seed.wrapping_mul(747796405).wrapping_add(2891336453);
        for px in &mut img.pixels {
            for c in px.iter_mut() {
                state = state.wrapping_mul(747796405).wrapping_add(2891336453);
                *c = (state >> 8) as f32 / (1u32 << 24) as f32 * 4.0 - 1.0;
            }
        }
        img
    }

    #[test]
    fn pfm_round_trip_preserves_bits() {
        let img = noise_image(17, 9, 1);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.pfm");
        save_pfm(&img, &path).unwrap();
        let back = load_pfm(&path).unwrap();
        assert_eq!(img.width, back.width);
        assert_eq!(img.height, back.height);
        for (a, b) in img.pixels.iter().zip(&back.pixels) {
            for c in 0..3 {
                assert_eq!(a[c].to_bits(), b[c].to_bits());
            }
        }
    }

    #[test]
    fn pfm_scale_and_grayscale_and_big_endian() {
        // Grayscale big-endian with scale 2.0.
        let mut bytes = b"Pf\n2 1\n2.0\n".to_vec();
        for v in [0.5f32, -1.0] {
            bytes.extend_from_slice(&v.to_be_bytes());
        }
        let img = parse_pfm(&bytes).unwrap();
        assert_eq!(img.width, 2);
        assert_eq!(img.height, 1);
        assert_eq!(img.get(0, 0), [1.0, 1.0, 1.0]);
        assert_eq!(img.get(1, 0), [-2.0, -2.0, -2.0]);
    }

    #[test]
    fn pfm_rows_are_bottom_up() {
        // 1x2 color: payload row 0 is the BOTTOM row.
        let mut bytes = b"PF\n1 2\n-1.0\n".to_vec();
        for v in [1.0f32, 1.0, 1.0, 2.0, 2.0, 2.0] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let img = parse_pfm(&bytes).unwrap();
        assert_eq!(img.get(0, 1), [1.0, 1.0, 1.0], "bottom row first in payload");
        assert_eq!(img.get(0, 0), [2.0, 2.0, 2.0]);
    }

    #[test]
    fn malformed_pfm_is_rejected() {
        assert!(parse_pfm(b"").is_err());
        assert!(parse_pfm(b"P6\n1 1\n255\n").is_err());
        assert!(parse_pfm(b"PF\n0 4\n-1.0\n").is_err());
        assert!(parse_pfm(b"PF\n2 2\n-1.0\nshort").is_err());
        assert!(parse_pfm(b"PF\n2 2\nzero\n0000000000000000").is_err());
        assert!(parse_pfm(b"PF\n99999999 99999999\n-1.0\n").is_err());
        // Payload longer than advertised is also an error.
        let mut bytes = b"PF\n1 1\n-1.0\n".to_vec();
        bytes.extend_from_slice(&[0u8; 16]);
        assert!(parse_pfm(&bytes).is_err());
    }

    #[test]
    fn hdr_round_trips_through_the_codec() {
        // Encode a tiny HDR with the image crate, then decode through
        // our wrapper.
        let img = Image {
            width: 4,
            height: 2,
            pixels: (0..8).map(|i| [i as f32 * 0.25, 1.0, 4.0 - i as f32 * 0.5]).collect(),
        };
        let mut encoded = Vec::new();
        {
            use image::codecs::hdr::HdrEncoder;
            let rgb: Vec<image::Rgb<f32>> =
                img.pixels.iter().map(|p| image::Rgb(*p)).collect();
            HdrEncoder::new(&mut encoded).encode(&rgb, img.width, img.height).unwrap();
        }
        let back = parse_hdr(&encoded).unwrap();
        assert_eq!(back.width, 4);
        assert_eq!(back.height, 2);
        // RGBE is lossy (shared exponent): ~1% relative tolerance.
        for (a, b) in img.pixels.iter().zip(&back.pixels) {
            for c in 0..3 {
                assert!((a[c] - b[c]).abs() <= 0.01 * a[c].abs().max(1e-3), "{a:?} vs {b:?}");
            }
        }
        assert!(parse_hdr(b"garbage").is_err());
    }

    #[test]
    fn tonemap_endpoints() {
        let mut img = Image::new(2, 1);
        img.set(0, 0, [1.0, 1.0, 1.0]);
        img.set(1, 0, [0.0, 0.0, 0.0]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.ppm");
        tonemap_write(&img, &path, 1.0, 2.2).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let header_end = bytes.len() - 6;
        assert_eq!(&bytes[header_end..header_end + 3], &[255, 255, 255]);
        assert_eq!(&bytes[header_end + 3..], &[0, 0, 0]);

        let png_path = dir.path().join("x.png");
        tonemap_write(&img, &png_path, 1.0, 2.2).unwrap();
        assert!(std::fs::metadata(&png_path).unwrap().len() > 0);
        assert!(tonemap_write(&img, &dir.path().join("x.bmp"), 1.0, 2.2).is_err());
        assert!(tonemap_write(&img, &path, 0.0, 2.2).is_err());
    }
}
