//! Image files, crops, resampling and dataset manifests.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::PlanarImage;

mod pnm;

pub use pnm::{decode_ppm, encode_pfm, encode_ppm};

fn decode_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Decode {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

fn extension(path: &Path) -> String {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .unwrap_or_default()
}

/// Whether `path` looks like an image this module can read.
pub fn is_image_path(path: &Path) -> bool {
    matches!(extension(path).as_str(), "png" | "ppm")
}

fn from_bytes(width: usize, height: usize, bytes: &[u8]) -> Result<PlanarImage> {
    PlanarImage::new(height, width, 3, bytes.iter().map(|&b| b as f64 / 255.0).collect())
}

/// Round-to-nearest 8-bit quantization after clamping to `[0, 1]`.
pub fn quantize(img: &PlanarImage) -> Vec<u8> {
    img.data()
        .iter()
        .map(|&v| {
            let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
            (v * 255.0).round() as u8
        })
        .collect()
}

fn decode_png(path: &Path, bytes: &[u8]) -> Result<PlanarImage> {
    let mut decoder = png::Decoder::new(bytes);
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(|e| decode_err(path, e.to_string()))?;
    let (color, depth) = reader.output_color_type();
    if color != png::ColorType::Rgb || depth != png::BitDepth::Eight {
        return Err(decode_err(
            path,
            format!("unsupported PNG format {color:?}/{depth:?}, expected 8-bit RGB"),
        ));
    }
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf).map_err(|e| decode_err(path, e.to_string()))?;
    buf.truncate(info.buffer_size());
    from_bytes(info.width as usize, info.height as usize, &buf).map_err(|e| decode_err(path, e.to_string()))
}

fn encode_png(img: &PlanarImage) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, img.width() as u32, img.height() as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc
            .write_header()
            .map_err(|e| Error::contract("save_image", e.to_string()))?;
        writer
            .write_image_data(&quantize(img))
            .map_err(|e| Error::contract("save_image", e.to_string()))?;
    }
    Ok(out)
}

/// Loads an 8-bit RGB PNG or binary PPM as floats `v / 255`.
pub fn load_image(path: impl AsRef<Path>) -> Result<PlanarImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    match extension(path).as_str() {
        "png" => decode_png(path, &bytes),
        "ppm" => decode_ppm(&bytes).map_err(|msg| decode_err(path, msg)),
        other => Err(decode_err(path, format!("unsupported image extension {other:?}"))),
    }
}

/// Saves a 3-channel image as PNG or PPM (chosen by extension).
pub fn save_image(img: &PlanarImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    img.require_channels("save_image", 3)?;
    let bytes = match extension(path).as_str() {
        "png" => encode_png(img)?,
        "ppm" => encode_ppm(img.width(), img.height(), &quantize(img)),
        other => return Err(decode_err(path, format!("unsupported image extension {other:?}"))),
    };
    write_file(path, &bytes)
}

/// Writes a 3-channel float image as little-endian PFM.
pub fn save_pfm(img: &PlanarImage, path: impl AsRef<Path>) -> Result<()> {
    img.require_channels("save_pfm", 3)?;
    write_file(path.as_ref(), &encode_pfm(img))
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(bytes).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

/// Image files directly inside `dir`, sorted by path.
pub fn list_images(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        if p.is_file() && is_image_path(&p) {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

/// Top-left corner of a uniformly placed `size x size` window.
pub fn crop_offset(img: &PlanarImage, size: usize, rng: &mut impl Rng) -> Result<(usize, usize)> {
    if size == 0 || size > img.height() || size > img.width() {
        return Err(Error::contract(
            "random_crop",
            format!("crop {size} does not fit {}x{}", img.height(), img.width()),
        ));
    }
    let y = rng.gen_range(0..=img.height() - size);
    let x = rng.gen_range(0..=img.width() - size);
    Ok((y, x))
}

pub fn crop(img: &PlanarImage, y0: usize, x0: usize, h: usize, w: usize) -> Result<PlanarImage> {
    if h == 0 || w == 0 || y0 + h > img.height() || x0 + w > img.width() {
        return Err(Error::contract("crop", "window outside image"));
    }
    let c = img.channels();
    let mut data = Vec::with_capacity(h * w * c);
    for y in y0..y0 + h {
        let start = (y * img.width() + x0) * c;
        data.extend_from_slice(&img.data()[start..start + w * c]);
    }
    PlanarImage::new(h, w, c, data)
}

pub fn random_crop(img: &PlanarImage, size: usize, rng: &mut impl Rng) -> Result<PlanarImage> {
    let (y, x) = crop_offset(img, size, rng)?;
    crop(img, y, x, size, size)
}

/// Bilinear resampling with pixel-center alignment and edge clamping.
pub fn resize_bilinear(img: &PlanarImage, height: usize, width: usize) -> Result<PlanarImage> {
    if height == 0 || width == 0 {
        return Err(Error::contract("resize_bilinear", "empty target size"));
    }
    if height == img.height() && width == img.width() {
        return Ok(img.clone());
    }
    let c = img.channels();
    let axis = |out: usize, inp: usize| -> Vec<(usize, usize, f64)> {
        let scale = inp as f64 / out as f64;
        (0..out)
            .map(|i| {
                let pos = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (inp - 1) as f64);
                let lo = pos.floor() as usize;
                let hi = (lo + 1).min(inp - 1);
                (lo, hi, pos - lo as f64)
            })
            .collect()
    };
    let ys = axis(height, img.height());
    let xs = axis(width, img.width());
    let mut data = Vec::with_capacity(height * width * c);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            let (p00, p01) = (img.pixel(y0, x0), img.pixel(y0, x1));
            let (p10, p11) = (img.pixel(y1, x0), img.pixel(y1, x1));
            for k in 0..c {
                let top = p00[k] + (p01[k] - p00[k]) * fx;
                let bot = p10[k] + (p11[k] - p10[k]) * fx;
                data.push(top + (bot - top) * fy);
            }
        }
    }
    PlanarImage::new(height, width, c, data)
}

/// One dataset entry; without a target the input is treated as clean and
/// corrupted synthetically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub input_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_path: Option<PathBuf>,
}

/// Reads a manifest; relative paths are resolved against its directory.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut entries: Vec<ManifestEntry> =
        serde_json::from_str(&text).map_err(|e| decode_err(path, format!("manifest: {e}")))?;
    let base = path.parent().unwrap_or(Path::new(""));
    for e in &mut entries {
        if e.input_path.is_relative() {
            e.input_path = base.join(&e.input_path);
        }
        if let Some(t) = &mut e.target_path {
            if t.is_relative() {
                *t = base.join(&*t);
            }
        }
    }
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ramp(h: usize, w: usize) -> PlanarImage {
        PlanarImage::from_fn(h, w, 3, |y, x| vec![y as f64 / 10.0, x as f64 / 10.0, 0.5]).unwrap()
    }

    #[test]
    fn full_crop_is_identity() {
        let img = ramp(4, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(random_crop(&ramp(4, 4), 4, &mut rng).unwrap(), ramp(4, 4));
        assert!(random_crop(&img, 5, &mut rng).is_err());
    }

    #[test]
    fn crop_is_seeded() {
        let img = ramp(9, 9);
        let a = random_crop(&img, 3, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = random_crop(&img, 3, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn size_one_crops_cover_every_position() {
        let img = ramp(3, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut seen = [[false; 3]; 3];
        for _ in 0..10_000 {
            let (y, x) = crop_offset(&img, 1, &mut rng).unwrap();
            seen[y][x] = true;
        }
        assert!(seen.iter().flatten().all(|&s| s));
    }

    #[test]
    fn resize_halving_averages_blocks() {
        let img = PlanarImage::new(2, 2, 1, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let small = resize_bilinear(&img, 1, 1).unwrap();
        assert_eq!(small.data(), &[1.5]);
        let same = resize_bilinear(&img, 2, 2).unwrap();
        assert_eq!(same, img);
    }

    #[test]
    fn quantize_rounds_and_clamps() {
        let img = PlanarImage::new(1, 1, 3, vec![-0.2, 0.5, 1.7]).unwrap();
        assert_eq!(quantize(&img), vec![0, 128, 255]);
    }
}
