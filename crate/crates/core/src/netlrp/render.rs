//! Heatmap export: raw little-endian f32 tensors plus PPM (blue-white-red,
//! symmetric around zero) and PGM (|relevance|) renderings.

use std::path::{Path, PathBuf};

use ndarray::{Array2, Axis};

use super::lrp::Heatmap;
use crate::error::{Error, Result};

/// Collapses a heatmap to a 2-D image: channels are summed for `[C, H, W]`,
/// vectors become a single row.
pub fn heatmap_image(h: &Heatmap) -> Result<Array2<f64>> {
    let r = &h.relevance;
    match r.ndim() {
        1 => Ok(r.view().into_shape_with_order((1, r.len())).expect("vector").to_owned()),
        2 => Ok(r.view().into_dimensionality().expect("2-D").to_owned()),
        3 => Ok(r.sum_axis(Axis(0)).into_dimensionality().expect("2-D")),
        n => Err(Error::Unsupported(format!("cannot render a {n}-D heatmap"))),
    }
}

pub fn render_ppm(h: &Heatmap) -> Result<Vec<u8>> {
    let img = heatmap_image(h)?;
    let scale = img.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let (rows, cols) = img.dim();
    let mut out = format!("P6\n{cols} {rows}\n255\n").into_bytes();
    for &v in img.iter() {
        let t = if scale > 0.0 { v / scale } else { 0.0 };
        let fade = (255.0 * (1.0 - t.abs())).round() as u8;
        out.extend_from_slice(&if t >= 0.0 { [255, fade, fade] } else { [fade, fade, 255] });
    }
    Ok(out)
}

pub fn render_pgm(h: &Heatmap) -> Result<Vec<u8>> {
    let img = heatmap_image(h)?;
    let scale = img.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let (rows, cols) = img.dim();
    let mut out = format!("P5\n{cols} {rows}\n255\n").into_bytes();
    out.extend(img.iter().map(|v| if scale > 0.0 { (255.0 * v.abs() / scale).round() as u8 } else { 0 }));
    Ok(out)
}

/// Writes `<stem>.f32`, `<stem>.ppm` and `<stem>.pgm`; dots already in the
/// stem are kept.
pub fn export_heatmap(h: &Heatmap, stem: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let stem = stem.as_ref();
    let with = |ext: &str| {
        let mut s = stem.as_os_str().to_owned();
        s.push(".");
        s.push(ext);
        PathBuf::from(s)
    };
    let raw = with("f32");
    super::manifest::write_tensor(&raw, h.relevance.iter())?;
    let ppm = with("ppm");
    std::fs::write(&ppm, render_ppm(h)?)?;
    let pgm = with("pgm");
    std::fs::write(&pgm, render_pgm(h)?)?;
    Ok(vec![raw, ppm, pgm])
}
