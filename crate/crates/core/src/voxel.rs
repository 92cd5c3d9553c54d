//! Voxel lattices, scalar grids, orientations and rigid resampling.
//!
//! Grids are stored row-major with the last axis varying fastest. Two-dimensional
//! grids are handled internally as `[d0, d1, 1]` so that most loops are written once.

use std::cmp::Ordering;
use std::fmt;

use crate::error::{Error, Result};

/// Regular lattice geometry: voxel counts per axis, uniform spacing and the world
/// position of the center of voxel `(0, .., 0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Lattice {
    dims: Vec<usize>,
    spacing: f64,
    origin: Vec<f64>,
}

impl Lattice {
    pub fn new(dims: &[usize], spacing: f64, origin: &[f64]) -> Result<Self> {
        if !(2..=3).contains(&dims.len()) {
            return Err(Error::structure(
                "dims",
                format!("expected 2 or 3 axes, got {}", dims.len()),
            ));
        }
        if dims.contains(&0) {
            return Err(Error::range("dims", format!("{dims:?} has an empty axis")));
        }
        if !(spacing.is_finite() && spacing > 0.0) {
            return Err(Error::range("spacing", format!("{spacing} is not positive")));
        }
        if origin.len() != dims.len() {
            return Err(Error::structure(
                "origin",
                format!("{} coordinates for {} axes", origin.len(), dims.len()),
            ));
        }
        if origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::range("origin", format!("{origin:?} is not finite")));
        }
        dims.iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Resource(format!("lattice {dims:?} overflows usize")))?;
        Ok(Self {
            dims: dims.to_vec(),
            spacing,
            origin: origin.to_vec(),
        })
    }

    /// Lattice with unit spacing whose origin sits at zero.
    pub fn unit(dims: &[usize]) -> Result<Self> {
        Self::new(dims, 1.0, &vec![0.0; dims.len()])
    }

    pub fn ndim(&self) -> usize {
        self.dims.len()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn origin(&self) -> &[f64] {
        &self.origin
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Dimensions padded to three axes.
    pub fn dims3(&self) -> [usize; 3] {
        [self.dims[0], self.dims[1], self.dims.get(2).copied().unwrap_or(1)]
    }

    pub fn flat_index(&self, idx: [usize; 3]) -> usize {
        let [_, d1, d2] = self.dims3();
        (idx[0] * d1 + idx[1]) * d2 + idx[2]
    }

    pub fn unflatten(&self, flat: usize) -> [usize; 3] {
        let [_, d1, d2] = self.dims3();
        [flat / (d1 * d2), (flat / d2) % d1, flat % d2]
    }

    pub fn contains(&self, idx: [isize; 3]) -> bool {
        let d = self.dims3();
        (0..3).all(|a| idx[a] >= 0 && (idx[a] as usize) < d[a])
    }

    /// World position of a voxel center.
    pub fn world(&self, idx: [usize; 3]) -> Vec<f64> {
        (0..self.ndim())
            .map(|a| self.origin[a] + self.spacing * idx[a] as f64)
            .collect()
    }

    /// World-space centroid of the voxel centers.
    pub fn centroid(&self) -> Vec<f64> {
        (0..self.ndim())
            .map(|a| self.origin[a] + 0.5 * self.spacing * (self.dims[a] - 1) as f64)
            .collect()
    }

    /// Axis-aligned box covered by the voxel cells, as `(lo, hi)` per axis.
    pub fn cell_bounds(&self) -> Vec<(f64, f64)> {
        (0..self.ndim())
            .map(|a| {
                let lo = self.origin[a] - 0.5 * self.spacing;
                (lo, lo + self.spacing * self.dims[a] as f64)
            })
            .collect()
    }

    /// Checks that two lattices coincide, naming the first field that differs.
    pub fn ensure_same(&self, other: &Lattice) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::structure("dims", format!("{:?} vs {:?}", self.dims, other.dims)));
        }
        if self.spacing != other.spacing {
            return Err(Error::structure(
                "spacing",
                format!("{} vs {}", self.spacing, other.spacing),
            ));
        }
        if self.origin != other.origin {
            return Err(Error::structure(
                "origin",
                format!("{:?} vs {:?}", self.origin, other.origin),
            ));
        }
        Ok(())
    }
}

/// Dense scalar samples on a [`Lattice`].
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    lattice: Lattice,
    data: Vec<f64>,
}

impl VoxelGrid {
    pub fn new(lattice: Lattice, data: Vec<f64>) -> Result<Self> {
        if data.len() != lattice.len() {
            return Err(Error::structure(
                "data",
                format!("{} values for {} voxels", data.len(), lattice.len()),
            ));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::range("voxel value", format!("non-finite at {pos}")));
        }
        Ok(Self { lattice, data })
    }

    pub fn zeros(lattice: Lattice) -> Self {
        let n = lattice.len();
        Self {
            lattice,
            data: vec![0.0; n],
        }
    }

    pub fn from_fn(lattice: Lattice, mut f: impl FnMut([usize; 3]) -> f64) -> Result<Self> {
        let data = (0..lattice.len()).map(|i| f(lattice.unflatten(i))).collect();
        Self::new(lattice, data)
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn ndim(&self) -> usize {
        self.lattice.ndim()
    }

    pub fn dims(&self) -> &[usize] {
        self.lattice.dims()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, idx: [usize; 3]) -> f64 {
        self.data[self.lattice.flat_index(idx)]
    }

    /// Value at a possibly out-of-range index; outside the lattice is empty space.
    pub fn get_or_zero(&self, idx: [isize; 3]) -> f64 {
        if self.lattice.contains(idx) {
            self.get([idx[0] as usize, idx[1] as usize, idx[2] as usize])
        } else {
            0.0
        }
    }

    pub fn set(&mut self, idx: [usize; 3], value: f64) {
        let flat = self.lattice.flat_index(idx);
        self.data[flat] = value;
    }

    /// Every value is exactly 0 or 1.
    pub fn is_indicator(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    /// Every value lies in the unit interval.
    pub fn is_unit_range(&self) -> bool {
        self.data.iter().all(|&v| (0.0..=1.0).contains(&v))
    }

    pub fn occupied_count(&self) -> usize {
        self.data.iter().filter(|&&v| v > 0.0).count()
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            lattice: self.lattice.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub(crate) fn with_data(&self, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), self.data.len());
        Self {
            lattice: self.lattice.clone(),
            data,
        }
    }
}

/// Rotation parameter of the tool, in degrees.
///
/// Planar orientations carry a single angle `theta ∈ [0, 360)`. Spatial orientations
/// describe the axis of an axisymmetric tool: `phi ∈ [0, 180]` tilts the tool's +z axis
/// away from world +z and `theta ∈ [0, 360)` is the azimuth of that tilt.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Orientation {
    Planar { theta: f64 },
    Spatial { theta: f64, phi: f64 },
}

impl Orientation {
    pub fn planar(theta: f64) -> Result<Self> {
        check_theta(theta)?;
        Ok(Orientation::Planar { theta })
    }

    pub fn spatial(theta: f64, phi: f64) -> Result<Self> {
        check_theta(theta)?;
        if !(phi.is_finite() && (0.0..=180.0).contains(&phi)) {
            return Err(Error::range("phi", format!("{phi} not in [0, 180]")));
        }
        Ok(Orientation::Spatial { theta, phi })
    }

    /// Planar orientation with `theta` wrapped into `[0, 360)`.
    pub fn planar_wrapped(theta: f64) -> Result<Self> {
        if !theta.is_finite() {
            return Err(Error::range("theta", format!("{theta} is not finite")));
        }
        let mut t = theta.rem_euclid(360.0);
        if t >= 360.0 {
            t = 0.0;
        }
        Self::planar(t)
    }

    /// Identity orientation for a grid of the given dimensionality.
    pub fn identity(ndim: usize) -> Self {
        if ndim == 2 {
            Orientation::Planar { theta: 0.0 }
        } else {
            Orientation::Spatial { theta: 0.0, phi: 0.0 }
        }
    }

    pub fn theta(&self) -> f64 {
        match *self {
            Orientation::Planar { theta } | Orientation::Spatial { theta, .. } => theta,
        }
    }

    pub fn phi(&self) -> Option<f64> {
        match *self {
            Orientation::Planar { .. } => None,
            Orientation::Spatial { phi, .. } => Some(phi),
        }
    }

    pub fn angles(&self) -> Vec<f64> {
        match *self {
            Orientation::Planar { theta } => vec![theta],
            Orientation::Spatial { theta, phi } => vec![theta, phi],
        }
    }

    /// Spatial dimensionality this orientation applies to.
    pub fn ndim(&self) -> usize {
        match self {
            Orientation::Planar { .. } => 2,
            Orientation::Spatial { .. } => 3,
        }
    }

    pub fn angle_count(&self) -> usize {
        self.ndim() - 1
    }

    /// Lexicographic order on the angle tuple.
    pub fn cmp_angles(&self, other: &Self) -> Ordering {
        self.angles()
            .iter()
            .zip(other.angles().iter())
            .map(|(a, b)| a.total_cmp(b))
            .find(|o| o.is_ne())
            .unwrap_or_else(|| self.ndim().cmp(&other.ndim()))
    }

    pub fn rotation(&self) -> Rotation {
        match *self {
            Orientation::Planar { theta } => {
                let (s, c) = sin_cos_deg(theta);
                Rotation {
                    m: [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]],
                }
            }
            Orientation::Spatial { theta, phi } => {
                let (st, ct) = sin_cos_deg(theta);
                let (sp, cp) = sin_cos_deg(phi);
                // Rz(theta) * Ry(phi)
                Rotation {
                    m: [[ct * cp, -st, ct * sp], [st * cp, ct, st * sp], [-sp, 0.0, cp]],
                }
            }
        }
    }
}

impl fmt::Display for Orientation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Orientation::Planar { theta } => write!(f, "theta={theta}"),
            Orientation::Spatial { theta, phi } => write!(f, "theta={theta},phi={phi}"),
        }
    }
}

fn check_theta(theta: f64) -> Result<()> {
    if !(theta.is_finite() && (0.0..360.0).contains(&theta)) {
        return Err(Error::range("theta", format!("{theta} not in [0, 360)")));
    }
    Ok(())
}

/// `(sin, cos)` of an angle in degrees, exact at multiples of 90°.
fn sin_cos_deg(deg: f64) -> (f64, f64) {
    let r = deg.rem_euclid(360.0);
    if r == 0.0 {
        (0.0, 1.0)
    } else if r == 90.0 {
        (1.0, 0.0)
    } else if r == 180.0 {
        (0.0, -1.0)
    } else if r == 270.0 {
        (-1.0, 0.0)
    } else {
        r.to_radians().sin_cos()
    }
}

/// Proper rotation in three dimensions; planar rotations leave the third axis fixed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation {
    m: [[f64; 3]; 3],
}

impl Rotation {
    pub fn matrix(&self) -> [[f64; 3]; 3] {
        self.m
    }

    pub fn apply(&self, v: [f64; 3]) -> [f64; 3] {
        let m = &self.m;
        [0, 1, 2].map(|r| m[r][0] * v[0] + m[r][1] * v[1] + m[r][2] * v[2])
    }

    pub fn apply_inverse(&self, v: [f64; 3]) -> [f64; 3] {
        let m = &self.m;
        [0, 1, 2].map(|c| m[0][c] * v[0] + m[1][c] * v[1] + m[2][c] * v[2])
    }
}

/// Resampling kernel used when rotating a grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Resample {
    /// Nearest source voxel, plus a forward splat of every occupied source voxel so
    /// thin features survive; preserves indicator values exactly.
    #[default]
    Nearest,
    /// Multilinear interpolation with empty space outside the source grid.
    Multilinear,
    /// Multilinear interpolation re-binarized at 0.5.
    MultilinearThreshold,
}

/// Output dimensions of a rotated grid: the tight axis-aligned lattice around the
/// rotated cell footprint, at the same spacing.
fn rotated_dims(dims: [usize; 3], ndim: usize, rot: &Rotation) -> [usize; 3] {
    let m = rot.matrix();
    let mut out = [1usize; 3];
    for (a, o) in out.iter_mut().enumerate().take(ndim) {
        let extent: f64 = (0..ndim).map(|b| m[a][b].abs() * dims[b] as f64).sum();
        *o = ((extent - 1e-9).ceil() as usize).max(1);
    }
    out
}

fn half(d: usize) -> f64 {
    0.5 * (d as f64 - 1.0)
}

/// Index of a source voxel after rotation about the grid centroid, in the rotated
/// lattice, rounded to the nearest voxel.
pub fn rotated_index(source: &Lattice, target: &Lattice, orientation: &Orientation, idx: [usize; 3]) -> [isize; 3] {
    let rot = orientation.rotation();
    let sd = source.dims3();
    let td = target.dims3();
    let u = [0, 1, 2].map(|a| idx[a] as f64 - half(sd[a]));
    let v = rot.apply(u);
    [0, 1, 2].map(|a| (v[a] + half(td[a])).round() as isize)
}

fn check_orientation(grid: &VoxelGrid, orientation: &Orientation) -> Result<()> {
    if orientation.ndim() != grid.ndim() {
        return Err(Error::structure(
            "orientation",
            format!(
                "{}-angle orientation applied to a {}D grid",
                orientation.angle_count(),
                grid.ndim()
            ),
        ));
    }
    // Re-validate in case the value was built directly from enum literals.
    match *orientation {
        Orientation::Planar { theta } => Orientation::planar(theta).map(|_| ()),
        Orientation::Spatial { theta, phi } => Orientation::spatial(theta, phi).map(|_| ()),
    }
}

/// Rotates a grid about its world centroid.
///
/// The output lattice is the tight axis-aligned bounding lattice of the rotated
/// footprint at the same spacing, centered on the same world centroid.
pub fn rotate_grid(grid: &VoxelGrid, orientation: &Orientation, mode: Resample) -> Result<VoxelGrid> {
    check_orientation(grid, orientation)?;
    let lattice = grid.lattice();
    let ndim = lattice.ndim();
    let rot = orientation.rotation();
    let sd = lattice.dims3();
    let td = rotated_dims(sd, ndim, &rot);

    let h = lattice.spacing();
    let origin: Vec<f64> = (0..ndim)
        .map(|a| lattice.origin()[a] + h * (sd[a] as f64 - td[a] as f64) / 2.0)
        .collect();
    let out_lattice = Lattice::new(&td[..ndim], h, &origin)?;

    let mut data = vec![0.0; out_lattice.len()];
    for (flat, value) in data.iter_mut().enumerate() {
        let j = out_lattice.unflatten(flat);
        let u = [0, 1, 2].map(|a| j[a] as f64 - half(td[a]));
        let v = rot.apply_inverse(u);
        let src = [0, 1, 2].map(|a| v[a] + half(sd[a]));
        *value = match mode {
            Resample::Nearest => grid.get_or_zero(src.map(|s| s.round() as isize)),
            Resample::Multilinear => sample_multilinear(grid, src, ndim),
            Resample::MultilinearThreshold => {
                if sample_multilinear(grid, src, ndim) >= 0.5 {
                    1.0
                } else {
                    0.0
                }
            }
        };
    }
    if mode == Resample::Nearest {
        // Inverse sampling alone can miss thin features; every occupied source voxel
        // also marks the voxel it lands on.
        for (flat, &v) in grid.data().iter().enumerate() {
            if v != 0.0 {
                let q = rotated_index(lattice, &out_lattice, orientation, lattice.unflatten(flat));
                let q = [0, 1, 2].map(|a| q[a].clamp(0, td[a] as isize - 1) as usize);
                let t = out_lattice.flat_index(q);
                data[t] = data[t].max(v);
            }
        }
    }
    VoxelGrid::new(out_lattice, data)
}

fn sample_multilinear(grid: &VoxelGrid, src: [f64; 3], ndim: usize) -> f64 {
    let base = src.map(|s| s.floor());
    let frac = [0, 1, 2].map(|a| src[a] - base[a]);
    let corners = 1usize << ndim;
    let mut acc = 0.0;
    for c in 0..corners {
        let mut w = 1.0;
        let mut idx = [0isize; 3];
        for a in 0..ndim {
            let bit = (c >> a) & 1;
            idx[a] = base[a] as isize + bit as isize;
            w *= if bit == 1 { frac[a] } else { 1.0 - frac[a] };
        }
        if w != 0.0 {
            acc += w * grid.get_or_zero(idx);
        }
    }
    acc.clamp(0.0, 1.0)
}

/// Point reflection: data reversed along every axis, origin mirrored through the
/// world origin so each voxel center `p` moves to `-p`.
pub fn reflect_grid(grid: &VoxelGrid) -> VoxelGrid {
    let lattice = grid.lattice();
    let n = grid.len();
    let data: Vec<f64> = (0..n).map(|i| grid.data()[n - 1 - i]).collect();
    let h = lattice.spacing();
    let origin: Vec<f64> = (0..lattice.ndim())
        .map(|a| -(lattice.origin()[a] + h * (lattice.dims()[a] - 1) as f64))
        .collect();
    let reflected = Lattice::new(lattice.dims(), h, &origin).expect("reflected lattice is valid");
    VoxelGrid {
        lattice: reflected,
        data,
    }
}

/// Part plus optional fixtures on a shared lattice.
#[derive(Debug, Clone)]
pub struct ObstacleSet {
    pub part: VoxelGrid,
    pub fixtures: Option<VoxelGrid>,
}

/// Effective obstacle: pointwise maximum of part and fixtures.
pub fn union_obstacle(obs: &ObstacleSet) -> Result<VoxelGrid> {
    let Some(fixtures) = &obs.fixtures else {
        return Ok(obs.part.clone());
    };
    obs.part.lattice().ensure_same(fixtures.lattice())?;
    let data = obs
        .part
        .data()
        .iter()
        .zip(fixtures.data())
        .map(|(a, b)| a.max(*b))
        .collect();
    Ok(obs.part.with_data(data))
}

/// Tool occupancy with its designated sharp points.
#[derive(Debug, Clone, PartialEq)]
pub struct ToolAssembly {
    occupancy: VoxelGrid,
    sharp_points: Vec<[usize; 3]>,
}

impl ToolAssembly {
    pub fn new(occupancy: VoxelGrid, sharp_points: Vec<[usize; 3]>) -> Result<Self> {
        if !occupancy.is_indicator() {
            return Err(Error::range("tool occupancy", "values must be 0 or 1"));
        }
        if occupancy.occupied_count() == 0 {
            return Err(Error::Config("tool occupancy is empty".into()));
        }
        if sharp_points.is_empty() {
            return Err(Error::Config("tool has no sharp points".into()));
        }
        let dims = occupancy.lattice().dims3();
        for k in &sharp_points {
            if (0..3).any(|a| k[a] >= dims[a]) {
                return Err(Error::range("sharp point", format!("{k:?} outside {dims:?}")));
            }
            if occupancy.get(*k) != 1.0 {
                return Err(Error::range("sharp point", format!("{k:?} is not occupied")));
            }
        }
        Ok(Self {
            occupancy,
            sharp_points,
        })
    }

    /// Sharp points are the occupied voxels of the lowest layer along the last axis,
    /// which for a tool modeled tip-down is the cutter tip.
    pub fn with_tip(occupancy: VoxelGrid) -> Result<Self> {
        let lattice = occupancy.lattice().clone();
        let last = lattice.ndim() - 1;
        let occupied: Vec<[usize; 3]> = (0..lattice.len())
            .filter(|&i| occupancy.data()[i] > 0.0)
            .map(|i| lattice.unflatten(i))
            .collect();
        let Some(low) = occupied.iter().map(|k| k[last]).min() else {
            return Err(Error::Config("tool occupancy is empty".into()));
        };
        let tip = occupied.into_iter().filter(|k| k[last] == low).collect();
        Self::new(occupancy, tip)
    }

    pub fn occupancy(&self) -> &VoxelGrid {
        &self.occupancy
    }

    pub fn sharp_points(&self) -> &[[usize; 3]] {
        &self.sharp_points
    }

    pub fn occupied_count(&self) -> usize {
        self.occupancy.occupied_count()
    }

    /// Occupied voxel count times voxel volume.
    pub fn tool_measure(&self) -> f64 {
        let l = self.occupancy.lattice();
        self.occupied_count() as f64 * l.spacing().powi(l.ndim() as i32)
    }

    /// Box-filtered, re-binarized tool at a reduced resolution. Sharp points move to
    /// their containing coarse voxel, snapped to the nearest occupied one.
    pub fn downsampled(&self, scale: f64) -> Result<Self> {
        let coarse = box_downsample(&self.occupancy, scale)?;
        let cl = coarse.lattice().clone();
        let fd = self.occupancy.lattice().dims3();
        let cd = cl.dims3();
        let occupied: Vec<[usize; 3]> = (0..cl.len())
            .filter(|&i| coarse.data()[i] > 0.0)
            .map(|i| cl.unflatten(i))
            .collect();
        if occupied.is_empty() {
            return Err(Error::Config(format!("tool vanishes when downsampled by {scale}")));
        }
        let mut points: Vec<[usize; 3]> = Vec::new();
        for k in &self.sharp_points {
            let target = [0, 1, 2].map(|a| (k[a] as f64 - half(fd[a])) * scale + half(cd[a]));
            let nearest = occupied
                .iter()
                .min_by(|p, q| {
                    let dp: f64 = (0..3).map(|a| (p[a] as f64 - target[a]).powi(2)).sum();
                    let dq: f64 = (0..3).map(|a| (q[a] as f64 - target[a]).powi(2)).sum();
                    dp.total_cmp(&dq)
                })
                .copied()
                .expect("nonempty");
            if !points.contains(&nearest) {
                points.push(nearest);
            }
        }
        Self::new(coarse, points)
    }
}

/// Reduces resolution by `scale ∈ (0, 1]`: each coarse voxel averages the fine voxels
/// whose centers fall in its cell, then thresholds at 0.5. The coarse lattice keeps the
/// world centroid and uses spacing `h / scale`.
pub fn box_downsample(grid: &VoxelGrid, scale: f64) -> Result<VoxelGrid> {
    if !(scale.is_finite() && scale > 0.0 && scale <= 1.0) {
        return Err(Error::range("scale", format!("{scale} not in (0, 1]")));
    }
    if scale == 1.0 {
        return Ok(grid.clone());
    }
    let fine = grid.lattice();
    let ndim = fine.ndim();
    let fd = fine.dims3();
    let mut cd = [1usize; 3];
    for a in 0..ndim {
        cd[a] = ((fd[a] as f64 * scale).round() as usize).max(1);
    }
    let h = fine.spacing() / scale;
    let centroid = fine.centroid();
    let origin: Vec<f64> = (0..ndim).map(|a| centroid[a] - h * half(cd[a])).collect();
    let coarse = Lattice::new(&cd[..ndim], h, &origin)?;

    let mut sum = vec![0.0; coarse.len()];
    let mut count = vec![0usize; coarse.len()];
    for flat in 0..fine.len() {
        let j = fine.unflatten(flat);
        let c = [0, 1, 2].map(|a| ((j[a] as f64 - half(fd[a])) * scale + half(cd[a])).round() as isize);
        if coarse.contains(c) {
            let ci = coarse.flat_index(c.map(|x| x as usize));
            sum[ci] += grid.data()[flat];
            count[ci] += 1;
        }
    }
    let data = (0..coarse.len())
        .map(|ci| {
            let mean = if count[ci] > 0 {
                sum[ci] / count[ci] as f64
            } else {
                let i = coarse.unflatten(ci);
                let j = [0, 1, 2].map(|a| {
                    ((i[a] as f64 - half(cd[a])) / scale + half(fd[a]))
                        .round()
                        .clamp(0.0, (fd[a] - 1) as f64) as usize
                });
                grid.get(j)
            };
            if mean >= 0.5 {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    VoxelGrid::new(coarse, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn disk(n: usize, radius: f64) -> VoxelGrid {
        let l = Lattice::unit(&[n, n]).unwrap();
        let c = half(n);
        VoxelGrid::from_fn(l, |[i, j, _]| {
            let r2 = (i as f64 - c).powi(2) + (j as f64 - c).powi(2);
            if r2 <= radius * radius {
                1.0
            } else {
                0.0
            }
        })
        .unwrap()
    }

    fn random_grid(dims: &[usize], seed: u64) -> VoxelGrid {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let l = Lattice::new(dims, 0.5, &vec![1.25; dims.len()]).unwrap();
        VoxelGrid::from_fn(l, |_| if rng.gen_bool(0.4) { 1.0 } else { 0.0 }).unwrap()
    }

    #[test]
    fn lattice_rejects_bad_input() {
        assert!(Lattice::new(&[4], 1.0, &[0.0]).is_err());
        assert!(Lattice::new(&[4, 0], 1.0, &[0.0, 0.0]).is_err());
        assert!(Lattice::new(&[4, 4], 0.0, &[0.0, 0.0]).is_err());
        assert!(Lattice::new(&[4, 4], 1.0, &[0.0]).is_err());
        let l = Lattice::unit(&[3, 4, 5]).unwrap();
        assert_eq!(l.len(), 60);
        for i in 0..60 {
            assert_eq!(l.flat_index(l.unflatten(i)), i);
        }
    }

    #[test]
    fn grid_length_must_match() {
        let l = Lattice::unit(&[2, 2]).unwrap();
        assert!(VoxelGrid::new(l.clone(), vec![0.0; 3]).is_err());
        assert!(VoxelGrid::new(l, vec![0.0, 1.0, f64::NAN, 0.0]).is_err());
    }

    #[test]
    fn orientation_ranges() {
        assert!(Orientation::planar(360.0).is_err());
        assert!(Orientation::planar(-1.0).is_err());
        assert!(Orientation::planar(f64::NAN).is_err());
        assert!(Orientation::spatial(10.0, 180.0).is_ok());
        assert!(Orientation::spatial(10.0, 180.5).is_err());
        assert_eq!(Orientation::planar_wrapped(-37.0).unwrap().theta(), 323.0);
    }

    #[test]
    fn identity_rotation_is_exact() {
        let g = random_grid(&[7, 5], 3);
        let r = rotate_grid(&g, &Orientation::identity(2), Resample::Nearest).unwrap();
        assert_eq!(r, g);
        let r = rotate_grid(&g, &Orientation::identity(2), Resample::Multilinear).unwrap();
        assert_eq!(r.data(), g.data());
        let g3 = random_grid(&[4, 5, 6], 4);
        let r3 = rotate_grid(&g3, &Orientation::identity(3), Resample::Nearest).unwrap();
        assert_eq!(r3, g3);
    }

    #[test]
    fn quarter_turn_is_a_permutation() {
        let g = random_grid(&[6, 4], 9);
        let r = rotate_grid(&g, &Orientation::planar(90.0).unwrap(), Resample::Nearest).unwrap();
        assert_eq!(r.dims(), &[4, 6]);
        // Counter-clockwise: source (i, j) lands at (d1 - 1 - j, i).
        for i in 0..6 {
            for j in 0..4 {
                assert_eq!(r.get([3 - j, i, 0]), g.get([i, j, 0]));
            }
        }
        assert_eq!(r.sum(), g.sum());
    }

    #[test]
    fn rotation_round_trip_on_disk() {
        let g = disk(32, 10.0);
        let fwd = rotate_grid(&g, &Orientation::planar(37.0).unwrap(), Resample::Multilinear).unwrap();
        let back = rotate_grid(&fwd, &Orientation::planar(323.0).unwrap(), Resample::Multilinear).unwrap();
        // The round trip lands on a lattice at least as large; compare on the shared center.
        let off = [0, 1].map(|a| (back.dims()[a] - 32) / 2);
        let mut mad = 0.0;
        for i in 0..32 {
            for j in 0..32 {
                mad += (back.get([i + off[0], j + off[1], 0]) - g.get([i, j, 0])).abs();
            }
        }
        mad /= 1024.0;
        // Two bilinear passes smear only the one-voxel rim of a radius-10 disk:
        // about 2π·10 rim voxels out of 1024, each off by well under 0.5.
        assert!(mad < 0.03, "mean abs deviation {mad}");
    }

    #[test]
    fn nearest_rotation_preserves_indicators() {
        let g = disk(16, 5.0);
        for theta in [13.0, 45.0, 200.0] {
            let r = rotate_grid(&g, &Orientation::planar(theta).unwrap(), Resample::Nearest).unwrap();
            assert!(r.is_indicator());
            let t = rotate_grid(&g, &Orientation::planar(theta).unwrap(), Resample::MultilinearThreshold).unwrap();
            assert!(t.is_indicator());
        }
    }

    #[test]
    fn rotation_rejects_mismatched_orientation() {
        let g = disk(8, 3.0);
        assert!(matches!(
            rotate_grid(&g, &Orientation::identity(3), Resample::Nearest),
            Err(Error::Structure { .. })
        ));
        let bad = Orientation::Planar { theta: f64::NAN };
        assert!(matches!(
            rotate_grid(&g, &bad, Resample::Nearest),
            Err(Error::Range { .. })
        ));
    }

    #[test]
    fn spatial_rotation_tilts_tool_axis() {
        let o = Orientation::spatial(90.0, 90.0).unwrap();
        let v = o.rotation().apply([0.0, 0.0, 1.0]);
        assert!((v[0]).abs() < 1e-15 && (v[1] - 1.0).abs() < 1e-15 && v[2].abs() < 1e-15);
    }

    #[test]
    fn reflection_examples() {
        let g = disk(9, 3.0);
        assert_eq!(reflect_grid(&g).data(), g.data());

        let l = Lattice::new(&[5, 3], 2.0, &[1.0, -4.0]).unwrap();
        let mut single = VoxelGrid::zeros(l);
        single.set([1, 2, 0], 1.0);
        let r = reflect_grid(&single);
        assert_eq!(r.get([3, 0, 0]), 1.0);
        assert_eq!(r.sum(), 1.0);
        // World positions are negated.
        assert_eq!(r.lattice().world([3, 0, 0]), vec![-3.0, 0.0]);
        assert_eq!(single.lattice().world([1, 2, 0]), vec![3.0, 0.0]);
        assert_eq!(reflect_grid(&r), single);
    }

    #[test]
    fn union_examples() {
        let l = Lattice::unit(&[8, 8]).unwrap();
        let part = VoxelGrid::zeros(l.clone());
        let ones = part.map(|_| 1.0);
        let none = ObstacleSet {
            part: ones.clone(),
            fixtures: None,
        };
        assert_eq!(union_obstacle(&none).unwrap(), ones);
        let all = ObstacleSet {
            part: part.clone(),
            fixtures: Some(ones.clone()),
        };
        assert_eq!(union_obstacle(&all).unwrap(), ones);

        let square = |x0: usize, y0: usize| {
            VoxelGrid::from_fn(l.clone(), |[i, j, _]| {
                if (x0..x0 + 3).contains(&i) && (y0..y0 + 3).contains(&j) {
                    1.0
                } else {
                    0.0
                }
            })
            .unwrap()
        };
        let a = square(1, 1);
        let b = square(2, 3);
        let u = union_obstacle(&ObstacleSet {
            part: a.clone(),
            fixtures: Some(b.clone()),
        })
        .unwrap();
        for i in 0..8 {
            for j in 0..8 {
                let in_a = (1..4).contains(&i) && (1..4).contains(&j);
                let in_b = (2..5).contains(&i) && (3..6).contains(&j);
                assert_eq!(u.get([i, j, 0]) == 1.0, in_a || in_b);
            }
        }

        let shifted = VoxelGrid::zeros(Lattice::new(&[8, 8], 1.0, &[0.5, 0.0]).unwrap());
        let err = union_obstacle(&ObstacleSet {
            part: a,
            fixtures: Some(shifted),
        })
        .unwrap_err();
        assert!(matches!(err, Error::Structure { field: "origin", .. }));
    }

    #[test]
    fn tool_validation_and_tip() {
        let l = Lattice::unit(&[3, 5]).unwrap();
        let occ = VoxelGrid::from_fn(l, |[i, j, _]| if i == 1 || j >= 2 { 1.0 } else { 0.0 }).unwrap();
        let tool = ToolAssembly::with_tip(occ.clone()).unwrap();
        assert_eq!(tool.sharp_points(), &[[1, 0, 0]]);
        assert_eq!(tool.tool_measure(), 11.0);
        assert!(ToolAssembly::new(occ.clone(), vec![]).is_err());
        assert!(ToolAssembly::new(occ.clone(), vec![[0, 0, 0]]).is_err());
        assert!(ToolAssembly::new(occ, vec![[0, 9, 0]]).is_err());
    }

    #[test]
    fn downsample_keeps_centroid_and_binarizes() {
        let g = disk(20, 7.0);
        let c = box_downsample(&g, 0.65).unwrap();
        assert_eq!(c.dims(), &[13, 13]);
        assert!(c.is_indicator());
        let (a, b) = (g.lattice().centroid(), c.lattice().centroid());
        assert!((a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12);
        let same = box_downsample(&g, 1.0).unwrap();
        assert_eq!(same, g);
        assert!(box_downsample(&g, 0.0).is_err());
    }
}
