//! Grayscale magnitude images, one PNG per slice.
//!
//! Coils are combined by root sum of squares and each slice is scaled so
//! its brightest pixel is white.

use std::path::{Path, PathBuf};

use crate::error::{invalid, Result};
use crate::io::write_atomic;
use crate::tensor::{ComplexTensor4, Domain};

/// 8-bit root-sum-of-squares magnitude of slice `s`, row-major.
pub fn slice_pixels(t: &ComplexTensor4, s: usize) -> Vec<u8> {
    let d = t.dims();
    let mut mag = vec![0.0f64; d.plane_len()];
    for c in 0..d.coils {
        for (m, v) in mag.iter_mut().zip(t.plane(s, c)) {
            *m += v.norm_sqr();
        }
    }
    let peak = mag.iter().cloned().fold(0.0, f64::max).sqrt();
    mag.iter()
        .map(|&m| if peak > 0.0 { (255.0 * m.sqrt() / peak).round().clamp(0.0, 255.0) as u8 } else { 0 })
        .collect()
}

pub fn encode_png(pixels: &[u8], ny: usize, nx: usize) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    let mut enc = png::Encoder::new(&mut out, nx as u32, ny as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Eight);
    let mut w = enc.write_header().map_err(|e| invalid!("png header: {e}"))?;
    w.write_image_data(pixels).map_err(|e| invalid!("png data: {e}"))?;
    w.finish().map_err(|e| invalid!("png finish: {e}"))?;
    Ok(out)
}

/// PNG bytes for every slice of an image-domain tensor.
pub fn render_slices(t: &ComplexTensor4) -> Result<Vec<Vec<u8>>> {
    if t.domain() != Domain::Image {
        return Err(invalid!("cannot plot a k-space tensor; apply ifft2c first"));
    }
    let d = t.dims();
    (0..d.slices).map(|s| encode_png(&slice_pixels(t, s), d.ny, d.nx)).collect()
}

/// Writes `<stem>_slice<k>.png` into `dir` and returns the paths.
pub fn write_slice_pngs(t: &ComplexTensor4, dir: &Path, stem: &str) -> Result<Vec<PathBuf>> {
    let mut paths = Vec::new();
    for (s, bytes) in render_slices(t)?.into_iter().enumerate() {
        let p = dir.join(format!("{stem}_slice{s}.png"));
        write_atomic(&p, &bytes)?;
        paths.push(p);
    }
    Ok(paths)
}
