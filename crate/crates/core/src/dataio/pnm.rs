//! Binary PPM (P6, maxval 255) and PFM encoders/decoders.

use crate::image::PlanarImage;

/// Reads the next whitespace-separated header token, skipping `#` comments.
fn next_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Option<&'a [u8]> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    (start < *pos).then(|| &bytes[start..*pos])
}

fn header_number(bytes: &[u8], pos: &mut usize, what: &str) -> Result<usize, String> {
    let tok = next_token(bytes, pos).ok_or_else(|| format!("missing {what}"))?;
    std::str::from_utf8(tok)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| format!("bad {what}"))
}

pub fn decode_ppm(bytes: &[u8]) -> Result<PlanarImage, String> {
    let mut pos = 0;
    if next_token(bytes, &mut pos) != Some(b"P6".as_slice()) {
        return Err("not a binary PPM (P6)".into());
    }
    let width = header_number(bytes, &mut pos, "width")?;
    let height = header_number(bytes, &mut pos, "height")?;
    let maxval = header_number(bytes, &mut pos, "maxval")?;
    if maxval != 255 {
        return Err(format!("unsupported maxval {maxval}, expected 255"));
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let need = width * height * 3;
    let raster = bytes.get(pos..pos + need).ok_or("truncated raster")?;
    PlanarImage::new(height, width, 3, raster.iter().map(|&b| b as f64 / 255.0).collect())
        .map_err(|e| e.to_string())
}

pub fn encode_ppm(width: usize, height: usize, raster: &[u8]) -> Vec<u8> {
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(raster);
    out
}

/// Little-endian PFM; rows are stored bottom to top.
pub fn encode_pfm(img: &PlanarImage) -> Vec<u8> {
    let (w, h, c) = (img.width(), img.height(), img.channels());
    let mut out = format!("PF\n{w} {h}\n-1.0\n").into_bytes();
    for y in (0..h).rev() {
        for v in &img.data()[y * w * c..(y + 1) * w * c] {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    out
}
