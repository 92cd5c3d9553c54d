//! Procedurally generated geometry for tests, examples and benchmarks.
//!
//! Tools are modeled tip-down: the cutter tip is the lowest occupied layer along the
//! last axis and the body extends toward larger indices.

use crate::error::{Error, Result};
use crate::voxel::{Lattice, ToolAssembly, VoxelGrid};

/// Side length of the planar benchmark part.
pub const PLANAR_SIZE: usize = 32;

fn indicator(lattice: Lattice, inside: impl Fn([usize; 3]) -> bool) -> VoxelGrid {
    VoxelGrid::from_fn(lattice, |i| if inside(i) { 1.0 } else { 0.0 }).expect("finite values")
}

fn in_disk(i: [usize; 3], center: (f64, f64), radius: f64) -> bool {
    let (x, y) = (i[0] as f64 - center.0, i[1] as f64 - center.1);
    x * x + y * y <= radius * radius
}

const BOSS_CENTER: (f64, f64) = (9.0, 20.0);
const BOSS_RADIUS: f64 = 3.0;

/// Planar bracket on a 32 x 32 unit lattice: a base plate, an upright wall that forms
/// an inside corner with it, a narrow slot cut into the plate, and a round boss
/// floating above the plate.
pub fn planar_part() -> VoxelGrid {
    let l = Lattice::unit(&[PLANAR_SIZE, PLANAR_SIZE]).expect("valid lattice");
    indicator(l, |i| planar_body(i) || in_disk(i, BOSS_CENTER, BOSS_RADIUS))
}

fn planar_body([x, y, _]: [usize; 3]) -> bool {
    let plate = y < 8 && !((14..16).contains(&x) && y >= 3);
    let wall = (22..27).contains(&x) && y < 24;
    plate || wall
}

/// The planar part with its round boss removed.
pub fn planar_part_without_boss() -> VoxelGrid {
    let l = Lattice::unit(&[PLANAR_SIZE, PLANAR_SIZE]).expect("valid lattice");
    indicator(l, planar_body)
}

/// L-shaped cutter: a two-voxel shank of height 9 topped by a holder offset to one
/// side. Sharp points are the two tip voxels.
pub fn planar_l_tool() -> ToolAssembly {
    let l = Lattice::unit(&[6, 12]).expect("valid lattice");
    let occ = indicator(l, |[x, y, _]| (x < 2 && y < 12) || (y >= 9 && x < 6));
    ToolAssembly::with_tip(occ).expect("tool has a tip")
}

/// Solid `side x side` square cutter with its bottom row as the tip.
pub fn square_tool(side: usize) -> Result<ToolAssembly> {
    let l = Lattice::unit(&[side, side])?;
    ToolAssembly::with_tip(indicator(l, |_| true))
}

/// 16 x 16 disk obstacle of radius 4.5 centered in the domain.
pub fn toy_disk() -> VoxelGrid {
    let l = Lattice::unit(&[16, 16]).expect("valid lattice");
    indicator(l, |i| in_disk(i, (7.5, 7.5), 4.5))
}

/// Removes the occupied voxels within `radius` of `center` (index units), refusing to
/// delete more than `max_fraction` of the occupied voxels.
pub fn remove_feature(obstacle: &VoxelGrid, center: [f64; 3], radius: f64, max_fraction: f64) -> Result<VoxelGrid> {
    let l = obstacle.lattice().clone();
    let total = obstacle.occupied_count();
    let mut removed = 0usize;
    let data = (0..l.len())
        .map(|flat| {
            let v = obstacle.data()[flat];
            let i = l.unflatten(flat);
            let d2: f64 = (0..3).map(|a| (i[a] as f64 - center[a]).powi(2)).sum();
            if v != 0.0 && d2 <= radius * radius {
                removed += 1;
                0.0
            } else {
                v
            }
        })
        .collect();
    if removed as f64 > max_fraction * total as f64 {
        return Err(Error::Config(format!(
            "feature removal deletes {removed} of {total} occupied voxels"
        )));
    }
    VoxelGrid::new(l, data)
}

/// The planar part with its boss removed through [`remove_feature`], capped at 10%
/// of the occupied voxels.
pub fn planar_part_perturbed() -> VoxelGrid {
    remove_feature(&planar_part(), [BOSS_CENTER.0, BOSS_CENTER.1, 0.0], BOSS_RADIUS, 0.10)
        .expect("boss is a small feature")
}

/// 24^3 part: a base plate, a pillar, and a sphere resting against the pillar.
pub fn spatial_part() -> VoxelGrid {
    let l = Lattice::unit(&[24, 24, 24]).expect("valid lattice");
    indicator(l, |[x, y, z]| {
        let plate = z < 5;
        let pillar = (15..19).contains(&x) && (6..18).contains(&y) && z < 16;
        let (dx, dy, dz) = (x as f64 - 9.0, y as f64 - 12.0, z as f64 - 9.0);
        let sphere = dx * dx + dy * dy + dz * dz <= 9.0;
        plate || pillar || sphere
    })
}

/// Axisymmetric cutter along the last axis: a thin shank of radius 1 under a holder
/// of radius 3.
pub fn spatial_tool() -> ToolAssembly {
    let l = Lattice::unit(&[7, 7, 11]).expect("valid lattice");
    let occ = indicator(l, |[x, y, z]| {
        let r2 = (x as f64 - 3.0).powi(2) + (y as f64 - 3.0).powi(2);
        (r2 <= 1.0 && z < 8) || (r2 <= 9.0 && z >= 8)
    });
    ToolAssembly::with_tip(occ).expect("tool has a tip")
}
