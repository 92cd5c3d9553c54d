//! Loading obstacles and tools from VOXF files.

use std::fmt;
use std::path::Path;

use accessnet::voxel::{union_obstacle, ObstacleSet, ToolAssembly, VoxelGrid};
use accessnet::{voxf, Error, Result};

/// How sharp points are chosen on a tool.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SharpSpec {
    /// Occupied voxels of the lowest layer along the last axis.
    Tip,
    /// Explicit voxel indices.
    Points(Vec<[usize; 3]>),
}

impl std::str::FromStr for SharpSpec {
    type Err = Error;

    /// `tip`, or `;`-separated index tuples such as `0,0;1,0`.
    fn from_str(s: &str) -> Result<Self> {
        if s.trim() == "tip" {
            return Ok(SharpSpec::Tip);
        }
        let mut points = Vec::new();
        for item in s.split(';').filter(|p| !p.trim().is_empty()) {
            let coords = item
                .split(',')
                .map(|c| c.trim().parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| Error::Config(format!("bad sharp point `{item}`")))?;
            if !(2..=3).contains(&coords.len()) {
                return Err(Error::Config(format!("sharp point `{item}` needs 2 or 3 indices")));
            }
            let mut k = [0usize; 3];
            k[..coords.len()].copy_from_slice(&coords);
            points.push(k);
        }
        if points.is_empty() {
            return Err(Error::Config(format!("no sharp points in `{s}`")));
        }
        Ok(SharpSpec::Points(points))
    }
}

impl fmt::Display for SharpSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SharpSpec::Tip => write!(f, "tip"),
            SharpSpec::Points(ps) => {
                let items: Vec<String> = ps.iter().map(|k| format!("{},{},{}", k[0], k[1], k[2])).collect();
                write!(f, "{}", items.join(";"))
            }
        }
    }
}

/// Part, unioned with fixtures when given.
pub fn load_obstacle(part: &Path, fixtures: Option<&Path>) -> Result<VoxelGrid> {
    let part = voxf::load(part)?;
    let fixtures = fixtures.map(voxf::load).transpose()?;
    union_obstacle(&ObstacleSet { part, fixtures })
}

pub fn load_tool(path: &Path, sharp: &SharpSpec) -> Result<ToolAssembly> {
    let occ = voxf::load(path)?;
    match sharp {
        SharpSpec::Tip => ToolAssembly::with_tip(occ),
        SharpSpec::Points(ps) => ToolAssembly::new(occ, ps.clone()),
    }
}
