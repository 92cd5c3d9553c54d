//! VOXF voxel-field files.
//!
//! One ASCII header line
//! `VOXF 1 <ndim> <d0> <d1> [<d2>] <spacing> <ox> <oy> [<oz>] <dtype>`
//! followed by the raw little-endian row-major payload: one byte per voxel for `u8`
//! indicators, eight bytes per voxel for `f64` fields.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::voxel::{Lattice, VoxelGrid};

const MAGIC: &str = "VOXF";
const VERSION: u32 = 1;
/// Headers longer than this are rejected before searching further for the newline.
const MAX_HEADER: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    U8,
    F64,
}

impl Dtype {
    fn as_str(self) -> &'static str {
        match self {
            Dtype::U8 => "u8",
            Dtype::F64 => "f64",
        }
    }

    /// `u8` for indicator grids, `f64` otherwise.
    pub fn for_grid(grid: &VoxelGrid) -> Self {
        if grid.is_indicator() {
            Dtype::U8
        } else {
            Dtype::F64
        }
    }
}

pub fn encode(grid: &VoxelGrid, dtype: Dtype) -> Result<Vec<u8>> {
    let l = grid.lattice();
    let mut header = format!("{MAGIC} {VERSION} {}", l.ndim());
    for d in l.dims() {
        header.push_str(&format!(" {d}"));
    }
    header.push_str(&format!(" {}", l.spacing()));
    for o in l.origin() {
        header.push_str(&format!(" {o}"));
    }
    header.push_str(&format!(" {}\n", dtype.as_str()));

    let mut out = header.into_bytes();
    match dtype {
        Dtype::U8 => {
            if !grid.is_indicator() {
                return Err(Error::format("VOXF", "u8 payload requires an indicator grid"));
            }
            out.extend(grid.data().iter().map(|&v| v as u8));
        }
        Dtype::F64 => {
            out.reserve(grid.len() * 8);
            for v in grid.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<(VoxelGrid, Dtype)> {
    let newline = bytes
        .iter()
        .take(MAX_HEADER)
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::format("VOXF", "missing header line"))?;
    let header = std::str::from_utf8(&bytes[..newline]).map_err(|_| Error::format("VOXF", "header is not ASCII"))?;
    let tokens: Vec<&str> = header.split_ascii_whitespace().collect();
    let bad = |detail: String| Error::format("VOXF", detail);

    if tokens.first() != Some(&MAGIC) {
        return Err(bad(format!("bad magic in `{header}`")));
    }
    if tokens.get(1) != Some(&"1") {
        return Err(bad(format!("unsupported version in `{header}`")));
    }
    let ndim: usize = tokens
        .get(2)
        .and_then(|t| t.parse().ok())
        .filter(|n| (2..=3).contains(n))
        .ok_or_else(|| bad(format!("bad ndim in `{header}`")))?;
    let expected = 3 + ndim + 1 + ndim + 1;
    if tokens.len() != expected {
        return Err(bad(format!(
            "expected {expected} header fields, found {}",
            tokens.len()
        )));
    }
    let dims = tokens[3..3 + ndim]
        .iter()
        .map(|t| t.parse::<usize>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| bad(format!("bad dimension: {e}")))?;
    let spacing: f64 = tokens[3 + ndim].parse().map_err(|e| bad(format!("bad spacing: {e}")))?;
    let origin = tokens[4 + ndim..4 + 2 * ndim]
        .iter()
        .map(|t| t.parse::<f64>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| bad(format!("bad origin: {e}")))?;
    let dtype = match tokens[expected - 1] {
        "u8" => Dtype::U8,
        "f64" => Dtype::F64,
        other => return Err(bad(format!("unknown dtype `{other}`"))),
    };
    let lattice = Lattice::new(&dims, spacing, &origin).map_err(|e| bad(format!("invalid lattice: {e}")))?;

    let payload = &bytes[newline + 1..];
    let n = lattice.len();
    let data: Vec<f64> = match dtype {
        Dtype::U8 => {
            if payload.len() != n {
                return Err(bad(format!("payload has {} bytes, expected {n}", payload.len())));
            }
            payload
                .iter()
                .map(|&b| match b {
                    0 => Ok(0.0),
                    1 => Ok(1.0),
                    _ => Err(bad(format!("u8 voxel value {b} is not 0 or 1"))),
                })
                .collect::<Result<_>>()?
        }
        Dtype::F64 => {
            if payload.len() != n * 8 {
                return Err(bad(format!("payload has {} bytes, expected {}", payload.len(), n * 8)));
            }
            payload
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect()
        }
    };
    let grid = VoxelGrid::new(lattice, data).map_err(|e| bad(e.to_string()))?;
    Ok((grid, dtype))
}

pub fn save(path: impl AsRef<Path>, grid: &VoxelGrid, dtype: Dtype) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(grid, dtype)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<VoxelGrid> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map(|(g, _)| g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let l = Lattice::new(&[2, 3], 0.5, &[1.0, -2.25]).unwrap();
        let g = VoxelGrid::new(l, vec![0.0, 1.0, 1.0, 0.0, 0.0, 1.0]).unwrap();
        let bytes = encode(&g, Dtype::U8).unwrap();
        let text = "VOXF 1 2 2 3 0.5 1 -2.25 u8\n";
        assert_eq!(&bytes[..text.len()], text.as_bytes());
        assert_eq!(&bytes[text.len()..], &[0, 1, 1, 0, 0, 1]);
        assert_eq!(decode(&bytes).unwrap(), (g, Dtype::U8));
    }

    #[test]
    fn rejects_malformed_input() {
        assert!(decode(b"VOXF 1 2 2 2 1 0 0 u8").is_err());
        assert!(decode(b"VOXF 2 2 2 2 1 0 0 u8\n\0\0\0\0").is_err());
        assert!(decode(b"VOXF 1 2 2 2 1 0 0 u8\n\0\0\0").is_err());
        assert!(decode(b"VOXF 1 2 2 2 1 0 0 u8\n\0\0\0\x07").is_err());
        assert!(decode(b"VOXF 1 2 2 2 1 0 u8\n\0\0\0\0").is_err());
        assert!(decode(b"VOXF 1 2 2 2 1 0 0 f32\n\0\0\0\0").is_err());
        let l = Lattice::unit(&[2, 2]).unwrap();
        let g = VoxelGrid::new(l, vec![0.5; 4]).unwrap();
        assert!(encode(&g, Dtype::U8).is_err());
    }

    proptest! {
        #[test]
        fn f64_round_trip_is_bit_exact(
            dims in prop::collection::vec(1usize..5, 2..=3),
            spacing in 1e-3f64..10.0,
            seed in any::<u64>(),
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let origin: Vec<f64> = dims.iter().map(|_| rng.gen_range(-5.0..5.0)).collect();
            let l = Lattice::new(&dims, spacing, &origin).unwrap();
            let g = VoxelGrid::from_fn(l, |_| rng.gen::<f64>()).unwrap();
            let (back, dtype) = decode(&encode(&g, Dtype::F64).unwrap()).unwrap();
            prop_assert_eq!(dtype, Dtype::F64);
            prop_assert_eq!(back.lattice(), g.lattice());
            prop_assert!(back.data().iter().zip(g.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }
}
