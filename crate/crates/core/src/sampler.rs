//! Training samples drawn from field stacks, in unit-hypercube coordinates.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cspace::FieldStack;
use crate::error::{Error, Result};
use crate::voxel::{Lattice, Orientation};

/// Affine map of one input axis onto `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisMap {
    pub lo: f64,
    pub hi: f64,
}

impl AxisMap {
    pub fn apply(&self, v: f64) -> f64 {
        (v - self.lo) / (self.hi - self.lo)
    }

    pub fn invert(&self, u: f64) -> f64 {
        self.lo + u * (self.hi - self.lo)
    }
}

/// Per-axis maps from raw configuration coordinates `(x, y[, z], theta[, phi])` to
/// network inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct CoordinateMap {
    axes: Vec<AxisMap>,
}

/// Angle ranges mapped onto the unit interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AngleRanges {
    pub theta: (f64, f64),
    pub phi: (f64, f64),
}

impl Default for AngleRanges {
    fn default() -> Self {
        Self {
            theta: (0.0, 360.0),
            phi: (0.0, 180.0),
        }
    }
}

impl CoordinateMap {
    pub fn new(axes: Vec<AxisMap>) -> Result<Self> {
        for (i, a) in axes.iter().enumerate() {
            if !(a.lo.is_finite() && a.hi.is_finite() && a.hi > a.lo) {
                return Err(Error::range(
                    "axis extent",
                    format!("axis {i} has degenerate extent [{}, {}]", a.lo, a.hi),
                ));
            }
        }
        Ok(Self { axes })
    }

    pub fn axes(&self) -> &[AxisMap] {
        &self.axes
    }

    pub fn input_dim(&self) -> usize {
        self.axes.len()
    }

    /// Raw configuration coordinates of a voxel center at an orientation.
    pub fn raw(lattice: &Lattice, idx: [usize; 3], orientation: &Orientation) -> Vec<f64> {
        let mut raw = lattice.world(idx);
        raw.extend(orientation.angles());
        raw
    }

    pub fn apply(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter().zip(&self.axes).map(|(v, a)| a.apply(*v)).collect()
    }

    pub fn invert(&self, unit: &[f64]) -> Vec<f64> {
        unit.iter().zip(&self.axes).map(|(u, a)| a.invert(*u)).collect()
    }

    /// Normalized coordinates of a voxel at an orientation.
    pub fn encode(&self, lattice: &Lattice, idx: [usize; 3], orientation: &Orientation) -> Vec<f64> {
        self.apply(&Self::raw(lattice, idx, orientation))
    }
}

/// Spatial axes map the lattice's cell box onto `[0, 1]`, so voxel centers land
/// strictly inside; angles map their declared ranges.
pub fn normalize_coords(lattice: &Lattice, ranges: AngleRanges) -> Result<CoordinateMap> {
    let mut axes: Vec<AxisMap> = lattice
        .cell_bounds()
        .into_iter()
        .map(|(lo, hi)| AxisMap { lo, hi })
        .collect();
    axes.push(AxisMap {
        lo: ranges.theta.0,
        hi: ranges.theta.1,
    });
    if lattice.ndim() == 3 {
        axes.push(AxisMap {
            lo: ranges.phi.0,
            hi: ranges.phi.1,
        });
    }
    CoordinateMap::new(axes)
}

/// How many voxels of each cross-section become training rows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplingPlan {
    /// Fraction of each section's voxels kept.
    pub density: f64,
    /// Share of the kept rows drawn from voxels with a strictly positive value.
    pub positive_fraction: f64,
    pub seed: u64,
}

impl Default for SamplingPlan {
    fn default() -> Self {
        Self {
            density: 0.35,
            positive_fraction: 0.75,
            seed: 0,
        }
    }
}

impl SamplingPlan {
    pub fn validate(&self) -> Result<()> {
        if !(self.density > 0.0 && self.density <= 1.0) {
            return Err(Error::range("density", format!("{} not in (0, 1]", self.density)));
        }
        if !(0.0..=1.0).contains(&self.positive_fraction) {
            return Err(Error::range(
                "positive_fraction",
                format!("{} not in [0, 1]", self.positive_fraction),
            ));
        }
        Ok(())
    }
}

/// Normalized coordinates with their target values and where each row came from.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    pub coords: Array2<f64>,
    pub targets: Array1<f64>,
    /// `(section index, flat voxel index)` per row.
    pub provenance: Vec<(usize, usize)>,
}

impl SampleBatch {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.coords.ncols()
    }

    /// Plain-text header line, then `input_dim + 1` little-endian f64 per row
    /// (coordinates followed by the target).
    pub fn export(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = format!("SMPL 1 {} {}\n", self.len(), self.input_dim()).into_bytes();
        for (row, t) in self.coords.rows().into_iter().zip(&self.targets) {
            for v in row {
                out.write_all(&v.to_le_bytes()).expect("vec write");
            }
            out.write_all(&t.to_le_bytes()).expect("vec write");
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    /// Reads a batch written by [`SampleBatch::export`]; provenance is not stored.
    pub fn import(path: impl AsRef<Path>) -> Result<(Array2<f64>, Array1<f64>)> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let nl = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::format("SMPL", "missing header"))?;
        let header = String::from_utf8_lossy(&bytes[..nl]);
        let t: Vec<&str> = header.split_whitespace().collect();
        if t.len() != 4 || t[0] != "SMPL" || t[1] != "1" {
            return Err(Error::format("SMPL", format!("bad header `{header}`")));
        }
        let rows: usize = t[2].parse().map_err(|_| Error::format("SMPL", "bad row count"))?;
        let dim: usize = t[3].parse().map_err(|_| Error::format("SMPL", "bad input dim"))?;
        let payload = &bytes[nl + 1..];
        if payload.len() != rows * (dim + 1) * 8 {
            return Err(Error::format("SMPL", "payload length mismatch"));
        }
        let vals: Vec<f64> = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let all = Array2::from_shape_vec((rows, dim + 1), vals).expect("checked length");
        let coords = all.slice(ndarray::s![.., ..dim]).to_owned();
        let targets = all.column(dim).to_owned();
        Ok((coords, targets))
    }
}

/// Per-section quota split between positive and zero voxels. A shortfall on one side
/// is filled from the other so the row count stays fixed.
fn section_quota(n_voxels: usize, positives: usize, plan: &SamplingPlan) -> (usize, usize, bool) {
    let keep = ((plan.density * n_voxels as f64).floor() as usize).clamp(1, n_voxels);
    let want_pos = ((plan.positive_fraction * keep as f64).round() as usize).min(keep);
    let zeros = n_voxels - positives;
    let mut pos = want_pos.min(positives);
    let mut zer = (keep - pos).min(zeros);
    if pos + zer < keep {
        pos = (keep - zer).min(positives);
    }
    if pos + zer < keep {
        zer = (keep - pos).min(zeros);
    }
    (pos, zer, pos != want_pos)
}

/// Draws rows from every section without replacement, keeping `⌊density · n⌋` voxels
/// per section with the planned positive/zero split. Deterministic in the plan seed.
pub fn draw_samples(stack: &FieldStack, map: &CoordinateMap, plan: &SamplingPlan) -> Result<SampleBatch> {
    plan.validate()?;
    let lattice = stack.lattice();
    let input_dim = lattice.ndim() + stack.sections()[0].orientation.angle_count();
    if map.input_dim() != input_dim {
        return Err(Error::structure(
            "input_dim",
            format!("map has {} axes, stack needs {input_dim}", map.input_dim()),
        ));
    }
    let n = lattice.len();
    let mut coords: Vec<f64> = Vec::new();
    let mut targets: Vec<f64> = Vec::new();
    let mut provenance = Vec::new();

    for (si, section) in stack.sections().iter().enumerate() {
        let data = section.field.data();
        let (positive, zero): (Vec<usize>, Vec<usize>) = (0..n).partition(|&v| data[v] > 0.0);
        let (n_pos, n_zero, short) = section_quota(n, positive.len(), plan);
        if short {
            log::warn!(
                "section {} has {} positive voxels; positive quota filled from the zero set",
                section.orientation,
                positive.len()
            );
        }
        let mut rng = ChaCha8Rng::seed_from_u64(plan.seed ^ si as u64);
        let mut chosen: Vec<usize> = sample(&mut rng, positive.len(), n_pos)
            .into_iter()
            .map(|i| positive[i])
            .collect();
        chosen.extend(sample(&mut rng, zero.len(), n_zero).into_iter().map(|i| zero[i]));
        for v in chosen {
            let idx = lattice.unflatten(v);
            coords.extend(
                map.encode(lattice, idx, &section.orientation)
                    .into_iter()
                    .map(|c| c.clamp(0.0, 1.0)),
            );
            targets.push(data[v]);
            provenance.push((si, v));
        }
    }
    let rows = targets.len();
    Ok(SampleBatch {
        coords: Array2::from_shape_vec((rows, input_dim), coords).expect("row-major fill"),
        targets: Array1::from(targets),
        provenance,
    })
}
