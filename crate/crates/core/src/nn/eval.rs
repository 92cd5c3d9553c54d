use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::{Array2, Axis};

use super::NeuralField;
use crate::cspace::{FieldCrossSection, FieldStack};
use crate::error::{Error, Result};
use crate::sampler::{normalize_coords, AngleRanges, CoordinateMap};
use crate::voxel::{Lattice, Orientation, VoxelGrid};

/// Rows per forward call; bounds activation memory for wide networks.
const CHUNK_ROWS: usize = 2048;

/// Queries a network on lattices, counting every forward row.
pub struct FieldEvaluator<'a> {
    net: &'a NeuralField,
    rows: AtomicU64,
}

impl<'a> FieldEvaluator<'a> {
    pub fn new(net: &'a NeuralField) -> Self {
        Self {
            net,
            rows: AtomicU64::new(0),
        }
    }

    /// Forward rows evaluated so far.
    pub fn rows_evaluated(&self) -> u64 {
        self.rows.load(Ordering::Relaxed)
    }

    fn map_for(&self, lattice: &Lattice, orientation: &Orientation) -> Result<CoordinateMap> {
        let needed = lattice.ndim() + orientation.angle_count();
        if needed != self.net.input_dim() {
            return Err(Error::structure(
                "input_dim",
                format!(
                    "{}D lattice with {} angles needs {needed} inputs, network takes {}",
                    lattice.ndim(),
                    orientation.angle_count(),
                    self.net.input_dim()
                ),
            ));
        }
        match self.net.domain() {
            Some(map) => Ok(map.clone()),
            None => normalize_coords(lattice, AngleRanges::default()),
        }
    }

    /// One cross-section: the network at every voxel center of `lattice`.
    pub fn section(&self, lattice: &Lattice, orientation: &Orientation) -> Result<FieldCrossSection> {
        let map = self.map_for(lattice, orientation)?;
        let d = map.input_dim();
        let n = lattice.len();
        let mut values = Vec::with_capacity(n);
        for start in (0..n).step_by(CHUNK_ROWS) {
            let end = (start + CHUNK_ROWS).min(n);
            let mut x = Array2::zeros((end - start, d));
            for (row, mut dst) in x.axis_iter_mut(Axis(0)).enumerate() {
                let c = map.encode(lattice, lattice.unflatten(start + row), orientation);
                dst.iter_mut().zip(c).for_each(|(d, c)| *d = c.clamp(0.0, 1.0));
            }
            values.extend(self.net.forward(x.view())?);
            self.rows.fetch_add((end - start) as u64, Ordering::Relaxed);
        }
        Ok(FieldCrossSection {
            orientation: *orientation,
            field: VoxelGrid::new(lattice.clone(), values)?,
        })
    }

    pub fn stack(&self, lattice: &Lattice, orientations: &[Orientation]) -> Result<FieldStack> {
        let sections = orientations
            .iter()
            .map(|o| self.section(lattice, o))
            .collect::<Result<Vec<_>>>()?;
        FieldStack::new(sections)
    }
}

pub fn evaluate_section(net: &NeuralField, lattice: &Lattice, orientation: &Orientation) -> Result<FieldCrossSection> {
    FieldEvaluator::new(net).section(lattice, orientation)
}

/// The network's field on `lattice` at each orientation. Coordinates go through the
/// network's bound domain when present, else the lattice's own normalization.
pub fn evaluate_field(net: &NeuralField, lattice: &Lattice, orientations: &[Orientation]) -> Result<FieldStack> {
    FieldEvaluator::new(net).stack(lattice, orientations)
}
