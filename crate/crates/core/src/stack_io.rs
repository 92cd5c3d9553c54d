//! Field stacks on disk: a JSON manifest listing one VOXF file per cross-section.
//!
//! ```json
//! {"version": 1, "ndim": 2, "sections": [{"theta": 0.0, "file": "section_0000.voxf"}]}
//! ```
//!
//! File names are relative to the manifest's directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cspace::{FieldCrossSection, FieldStack};
use crate::error::{Error, Result};
use crate::voxel::Orientation;
use crate::voxf::{self, Dtype};

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub ndim: usize,
    pub sections: Vec<SectionEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectionEntry {
    pub theta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi: Option<f64>,
    pub file: String,
}

impl SectionEntry {
    fn orientation(&self) -> Result<Orientation> {
        match self.phi {
            None => Orientation::planar(self.theta),
            Some(phi) => Orientation::spatial(self.theta, phi),
        }
    }
}

/// Writes every section as `f64` VOXF plus `manifest.json` into `dir`, creating it if
/// needed. Returns the manifest path.
pub fn write_stack(dir: impl AsRef<Path>, stack: &FieldStack) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut sections = Vec::with_capacity(stack.len());
    for (i, s) in stack.sections().iter().enumerate() {
        let file = format!("section_{i:04}.voxf");
        voxf::save(dir.join(&file), &s.field, Dtype::F64)?;
        let (theta, phi) = match s.orientation {
            Orientation::Planar { theta } => (theta, None),
            Orientation::Spatial { theta, phi } => (theta, Some(phi)),
        };
        sections.push(SectionEntry { theta, phi, file });
    }
    let manifest = Manifest {
        version: 1,
        ndim: stack.ndim(),
        sections,
    };
    let path = dir.join(MANIFEST_NAME);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Accepts either a manifest file or a directory containing `manifest.json`.
pub fn read_stack(path: impl AsRef<Path>) -> Result<FieldStack> {
    let mut path = path.as_ref().to_path_buf();
    if path.is_dir() {
        path = path.join(MANIFEST_NAME);
    }
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::format("manifest", e.to_string()))?;
    if manifest.version != 1 {
        return Err(Error::format(
            "manifest",
            format!("unsupported version {}", manifest.version),
        ));
    }
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut sections = Vec::with_capacity(manifest.sections.len());
    for entry in &manifest.sections {
        let orientation = entry
            .orientation()
            .map_err(|e| Error::format("manifest", format!("{}: {e}", entry.file)))?;
        let field = voxf::load(dir.join(&entry.file))?;
        if field.ndim() != manifest.ndim {
            return Err(Error::format(
                "manifest",
                format!("{} is {}D, manifest says {}D", entry.file, field.ndim(), manifest.ndim),
            ));
        }
        sections.push(FieldCrossSection { orientation, field });
    }
    FieldStack::new(sections).map_err(|e| Error::format("manifest", e.to_string()))
}
