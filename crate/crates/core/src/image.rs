//! Grayscale PNG export of fields: 0 maps to black, 1 to white, linearly.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use crate::error::{Error, Result};
use crate::voxel::VoxelGrid;

/// Fixes one axis of a 3D grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Slice {
    pub axis: usize,
    pub index: usize,
}

impl std::str::FromStr for Slice {
    type Err = Error;

    /// Parses `axis=index`, with the axis as `0..2` or `x`, `y`, `z`.
    fn from_str(s: &str) -> Result<Self> {
        let (a, i) = s
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("slice `{s}` is not axis=index")))?;
        let axis = match a.trim() {
            "0" | "x" => 0,
            "1" | "y" => 1,
            "2" | "z" => 2,
            other => return Err(Error::Config(format!("unknown slice axis `{other}`"))),
        };
        let index = i
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("bad slice index `{i}`")))?;
        Ok(Slice { axis, index })
    }
}

fn level(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// 8-bit pixels, `width x height`, in row-major order with the first grid axis
/// across and the second axis up.
pub fn grayscale(grid: &VoxelGrid, slice: Option<Slice>) -> Result<(u32, u32, Vec<u8>)> {
    let dims = grid.lattice().dims3();
    let (u, v, fixed) = match (grid.ndim(), slice) {
        (2, None) => (0, 1, None),
        (2, Some(_)) => return Err(Error::Config("2D fields take no slice".into())),
        (_, None) => return Err(Error::Config("3D fields need a slice axis=index".into())),
        (_, Some(s)) => {
            if s.axis > 2 || s.index >= dims[s.axis] {
                return Err(Error::range("slice", format!("{s:?} outside {dims:?}")));
            }
            let rest: Vec<usize> = (0..3).filter(|&a| a != s.axis).collect();
            (rest[0], rest[1], Some(s))
        }
    };
    let (w, h) = (dims[u], dims[v]);
    let mut pixels = Vec::with_capacity(w * h);
    for row in 0..h {
        for col in 0..w {
            let mut idx = [0usize; 3];
            idx[u] = col;
            idx[v] = h - 1 - row;
            if let Some(s) = fixed {
                idx[s.axis] = s.index;
            }
            pixels.push(level(grid.get(idx)));
        }
    }
    Ok((w as u32, h as u32, pixels))
}

pub fn write_png(path: impl AsRef<Path>, grid: &VoxelGrid, slice: Option<Slice>) -> Result<()> {
    let path = path.as_ref();
    let (w, h, pixels) = grayscale(grid, slice)?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), w, h);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc
        .write_header()
        .map_err(|e| Error::Resource(format!("PNG header: {e}")))?;
    writer
        .write_image_data(&pixels)
        .map_err(|e| Error::Resource(format!("PNG data: {e}")))?;
    writer.finish().map_err(|e| Error::Resource(format!("PNG finish: {e}")))
}
