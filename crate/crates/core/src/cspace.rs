//! Collision measure fields over translations for fixed tool orientations, and their
//! reduction to the inaccessibility measure field.
//!
//! For a design voxel `x`, orientation `R` and sharp point `k`, the overlap between the
//! obstacle and the rotated tool placed with `R·k` at `x` equals the convolution of the
//! obstacle indicator with the point-reflected rotated tool, read at `x - R·k`. The
//! cross-section value is the minimum overlap over sharp points divided by the rotated
//! tool's measure.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fft::Convolver;
use crate::voxel::{reflect_grid, rotate_grid, rotated_index, Lattice, Orientation, Resample, ToolAssembly, VoxelGrid};

/// One translational slice of the collision measure field.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldCrossSection {
    pub orientation: Orientation,
    pub field: VoxelGrid,
}

/// Cross-sections sharing one lattice, sorted by orientation angles.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldStack {
    sections: Vec<FieldCrossSection>,
}

impl FieldStack {
    pub fn new(mut sections: Vec<FieldCrossSection>) -> Result<Self> {
        let Some(first) = sections.first() else {
            return Err(Error::Config("a field stack needs at least one section".into()));
        };
        let lattice = first.field.lattice().clone();
        for s in &sections {
            s.field.lattice().ensure_same(&lattice)?;
            if s.orientation.ndim() != lattice.ndim() {
                return Err(Error::structure(
                    "orientation",
                    format!("{} mixed into a {}D stack", s.orientation, lattice.ndim()),
                ));
            }
            if !s.field.is_unit_range() {
                return Err(Error::range(
                    "field value",
                    format!("section {} leaves [0, 1]", s.orientation),
                ));
            }
        }
        sections.sort_by(|a, b| a.orientation.cmp_angles(&b.orientation));
        if let Some(w) = sections.windows(2).find(|w| w[0].orientation == w[1].orientation) {
            return Err(Error::Config(format!(
                "duplicate orientation {} in stack",
                w[0].orientation
            )));
        }
        Ok(Self { sections })
    }

    pub fn sections(&self) -> &[FieldCrossSection] {
        &self.sections
    }

    pub fn len(&self) -> usize {
        self.sections.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sections.is_empty()
    }

    pub fn lattice(&self) -> &Lattice {
        self.sections[0].field.lattice()
    }

    pub fn ndim(&self) -> usize {
        self.lattice().ndim()
    }

    pub fn orientations(&self) -> Vec<Orientation> {
        self.sections.iter().map(|s| s.orientation).collect()
    }

    pub fn find(&self, orientation: &Orientation) -> Option<&FieldCrossSection> {
        self.sections.iter().find(|s| s.orientation == *orientation)
    }
}

/// Knobs for cross-section computation.
#[derive(Debug, Clone)]
pub struct CmfOptions {
    pub resample: Resample,
    /// Largest padded FFT array, in elements.
    pub max_fft_elements: usize,
    /// Largest number of voxel-pair visits the brute-force oracle may make.
    pub brute_force_budget: u64,
}

impl Default for CmfOptions {
    fn default() -> Self {
        Self {
            resample: Resample::Nearest,
            max_fft_elements: 1 << 27,
            brute_force_budget: 2_000_000_000,
        }
    }
}

/// Rotated tool with its sharp points located in the rotated lattice.
struct PlacedTool {
    rotated: VoxelGrid,
    sharp: Vec<[isize; 3]>,
    mass: f64,
    binary: bool,
}

fn place_tool(
    obstacle: &VoxelGrid,
    tool: &ToolAssembly,
    orientation: &Orientation,
    resample: Resample,
) -> Result<PlacedTool> {
    if !obstacle.is_indicator() {
        return Err(Error::range("obstacle", "values must be 0 or 1"));
    }
    let occ = tool.occupancy();
    if occ.ndim() != obstacle.ndim() {
        return Err(Error::structure(
            "tool",
            format!("{}D tool against a {}D obstacle", occ.ndim(), obstacle.ndim()),
        ));
    }
    if occ.lattice().spacing() != obstacle.lattice().spacing() {
        return Err(Error::structure(
            "spacing",
            format!(
                "tool {} vs obstacle {}",
                occ.lattice().spacing(),
                obstacle.lattice().spacing()
            ),
        ));
    }
    if tool.sharp_points().is_empty() {
        return Err(Error::Config("tool has no sharp points".into()));
    }
    let rotated = rotate_grid(occ, orientation, resample)?;
    let mass = rotated.sum();
    if mass <= 0.0 {
        return Err(Error::Config(format!("tool vanishes at {orientation}")));
    }
    let mut sharp: Vec<[isize; 3]> = Vec::new();
    for &k in tool.sharp_points() {
        let q = rotated_index(occ.lattice(), rotated.lattice(), orientation, k);
        if !sharp.contains(&q) {
            sharp.push(q);
        }
    }
    let binary = rotated.is_indicator();
    Ok(PlacedTool {
        rotated,
        sharp,
        mass,
        binary,
    })
}

pub fn cmf_cross_section(
    obstacle: &VoxelGrid,
    tool: &ToolAssembly,
    orientation: &Orientation,
) -> Result<FieldCrossSection> {
    cmf_cross_section_with(obstacle, tool, orientation, &CmfOptions::default())
}

/// FFT evaluation of one cross-section on the obstacle lattice. Space outside the
/// obstacle lattice is empty, so the tool may hang off the domain.
pub fn cmf_cross_section_with(
    obstacle: &VoxelGrid,
    tool: &ToolAssembly,
    orientation: &Orientation,
    options: &CmfOptions,
) -> Result<FieldCrossSection> {
    let placed = place_tool(obstacle, tool, orientation, options.resample)?;
    let reflected = reflect_grid(&placed.rotated);
    let mut conv = Convolver::new(options.max_fft_elements);
    let (full, full_dims) = conv.convolve(obstacle.data(), obstacle.dims(), reflected.data(), reflected.dims())?;

    let lattice = obstacle.lattice();
    let td = placed.rotated.lattice().dims3();
    let mut fd = [1usize; 3];
    fd[..full_dims.len()].copy_from_slice(&full_dims);
    let clean = |v: f64| {
        if placed.binary {
            v.round()
        } else {
            v.max(0.0)
        }
    };

    let data = (0..lattice.len())
        .map(|flat| {
            let i = lattice.unflatten(flat);
            let overlap = placed
                .sharp
                .iter()
                .map(|k| {
                    let m = [0, 1, 2].map(|a| i[a] as isize - k[a] + td[a] as isize - 1);
                    if (0..3).all(|a| m[a] >= 0 && (m[a] as usize) < fd[a]) {
                        let idx = (m[0] as usize * fd[1] + m[1] as usize) * fd[2] + m[2] as usize;
                        clean(full[idx])
                    } else {
                        0.0
                    }
                })
                .fold(f64::INFINITY, f64::min);
            (overlap / placed.mass).clamp(0.0, 1.0)
        })
        .collect();
    Ok(FieldCrossSection {
        orientation: *orientation,
        field: VoxelGrid::new(lattice.clone(), data)?,
    })
}

pub fn cmf_brute_force(
    obstacle: &VoxelGrid,
    tool: &ToolAssembly,
    orientation: &Orientation,
) -> Result<FieldCrossSection> {
    cmf_brute_force_with(obstacle, tool, orientation, &CmfOptions::default())
}

/// Direct overlap counting at every placement; the reference for the FFT path.
pub fn cmf_brute_force_with(
    obstacle: &VoxelGrid,
    tool: &ToolAssembly,
    orientation: &Orientation,
    options: &CmfOptions,
) -> Result<FieldCrossSection> {
    let placed = place_tool(obstacle, tool, orientation, options.resample)?;
    let rl = placed.rotated.lattice();
    let body: Vec<([isize; 3], f64)> = (0..rl.len())
        .filter(|&q| placed.rotated.data()[q] != 0.0)
        .map(|q| (rl.unflatten(q).map(|x| x as isize), placed.rotated.data()[q]))
        .collect();

    let lattice = obstacle.lattice();
    let work = lattice.len() as u64 * body.len() as u64 * placed.sharp.len() as u64;
    if work > options.brute_force_budget {
        return Err(Error::Resource(format!(
            "brute force needs {work} voxel visits (budget {}); use the FFT path",
            options.brute_force_budget
        )));
    }

    let data = (0..lattice.len())
        .map(|flat| {
            let i = lattice.unflatten(flat);
            let overlap = placed
                .sharp
                .iter()
                .map(|k| {
                    body.iter()
                        .map(|(q, w)| {
                            let p = [0, 1, 2].map(|a| i[a] as isize + q[a] - k[a]);
                            w * obstacle.get_or_zero(p)
                        })
                        .sum::<f64>()
                })
                .fold(f64::INFINITY, f64::min);
            (overlap / placed.mass).clamp(0.0, 1.0)
        })
        .collect();
    Ok(FieldCrossSection {
        orientation: *orientation,
        field: VoxelGrid::new(lattice.clone(), data)?,
    })
}

/// Pointwise minimum over all sections.
pub fn imf_from_stack(stack: &FieldStack) -> VoxelGrid {
    let first = &stack.sections()[0].field;
    let mut data = first.data().to_vec();
    for s in &stack.sections()[1..] {
        for (m, v) in data.iter_mut().zip(s.field.data()) {
            *m = m.min(*v);
        }
    }
    first.with_data(data)
}

pub fn build_stack(obstacle: &VoxelGrid, tool: &ToolAssembly, orientations: &[Orientation]) -> Result<FieldStack> {
    build_stack_with(obstacle, tool, orientations, &CmfOptions::default())
}

/// One FFT cross-section per orientation, computed in parallel and assembled in
/// angle order.
pub fn build_stack_with(
    obstacle: &VoxelGrid,
    tool: &ToolAssembly,
    orientations: &[Orientation],
    options: &CmfOptions,
) -> Result<FieldStack> {
    let sections = orientations
        .par_iter()
        .map(|o| cmf_cross_section_with(obstacle, tool, o, options))
        .collect::<Result<Vec<_>>>()?;
    FieldStack::new(sections)
}

/// `count_theta` azimuths on `[0, 360)`; with `count_phi`, the Cartesian product with
/// `count_phi` polar angles on the closed interval `[0, 180]`.
pub fn equispaced_orientations(count_theta: usize, count_phi: Option<usize>) -> Result<Vec<Orientation>> {
    if count_theta == 0 || count_phi == Some(0) {
        return Err(Error::range("orientation count", "counts must be at least 1"));
    }
    let thetas: Vec<f64> = (0..count_theta)
        .map(|i| 360.0 * i as f64 / count_theta as f64)
        .collect();
    match count_phi {
        None => thetas.into_iter().map(Orientation::planar).collect(),
        Some(np) => {
            let phis: Vec<f64> = if np == 1 {
                vec![0.0]
            } else {
                (0..np).map(|j| 180.0 * j as f64 / (np - 1) as f64).collect()
            };
            thetas
                .iter()
                .flat_map(|&t| phis.iter().map(move |&p| Orientation::spatial(t, p)))
                .collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid(dims: &[usize], f: impl FnMut([usize; 3]) -> f64) -> VoxelGrid {
        VoxelGrid::from_fn(Lattice::unit(dims).unwrap(), f).unwrap()
    }

    fn random_indicator(rng: &mut ChaCha8Rng, dims: &[usize], p: f64) -> VoxelGrid {
        grid(dims, |_| if rng.gen_bool(p) { 1.0 } else { 0.0 })
    }

    fn solid_tool(dims: &[usize], sharp: Vec<[usize; 3]>) -> ToolAssembly {
        ToolAssembly::new(grid(dims, |_| 1.0), sharp).unwrap()
    }

    #[test]
    fn empty_obstacle_gives_zero_field() {
        let o = grid(&[6, 6], |_| 0.0);
        let t = solid_tool(&[2, 3], vec![[0, 0, 0]]);
        let s = cmf_cross_section(&o, &t, &Orientation::planar(30.0).unwrap()).unwrap();
        assert!(s.field.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn full_obstacle_interior_is_one() {
        let o = grid(&[10, 10], |_| 1.0);
        let t = solid_tool(&[3, 3], vec![[1, 1, 0]]);
        let s = cmf_cross_section(&o, &t, &Orientation::planar(0.0).unwrap()).unwrap();
        for i in 1..9 {
            for j in 1..9 {
                assert_eq!(s.field.get([i, j, 0]), 1.0);
            }
        }
        // The tool hangs off the domain at the rim.
        assert!(s.field.get([0, 0, 0]) < 1.0);
    }

    #[test]
    fn single_voxel_obstacle_by_hand() {
        // Obstacle voxel at (2, 1); a 2x2 tool with the sharp point at its (0, 0) corner
        // covers (x..x+1, y..y+1), so it hits the obstacle iff x ∈ {1, 2}, y ∈ {0, 1}.
        let o = grid(&[4, 4], |[i, j, _]| if (i, j) == (2, 1) { 1.0 } else { 0.0 });
        let t = solid_tool(&[2, 2], vec![[0, 0, 0]]);
        let id = Orientation::planar(0.0).unwrap();
        let fft = cmf_cross_section(&o, &t, &id).unwrap();
        let brute = cmf_brute_force(&o, &t, &id).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let expect = if (1..=2).contains(&i) && (0..=1).contains(&j) {
                    0.25
                } else {
                    0.0
                };
                assert_eq!(fft.field.get([i, j, 0]), expect, "({i},{j})");
            }
        }
        assert_eq!(fft, brute);
    }

    #[test]
    fn unit_tool_reproduces_obstacle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let o = random_indicator(&mut rng, &[9, 7], 0.5);
        let t = solid_tool(&[1, 1], vec![[0, 0, 0]]);
        for theta in [0.0, 45.0, 123.0] {
            let o_ = Orientation::planar(theta).unwrap();
            assert_eq!(cmf_brute_force(&o, &t, &o_).unwrap().field, o);
            assert_eq!(cmf_cross_section(&o, &t, &o_).unwrap().field, o);
        }
    }

    #[test]
    fn disjoint_supports_are_zero() {
        // Tool is a vertical bar that always reaches upward from the sharp point; the
        // obstacle sits entirely below the lowest row a placement can touch.
        let o = grid(&[6, 6], |[_, j, _]| if j == 0 { 1.0 } else { 0.0 });
        let t = solid_tool(&[1, 3], vec![[0, 0, 0]]);
        let s = cmf_brute_force(&o, &t, &Orientation::planar(0.0).unwrap()).unwrap();
        for i in 0..6 {
            for j in 1..6 {
                assert_eq!(s.field.get([i, j, 0]), 0.0);
            }
        }
    }

    #[test]
    fn oracle_agreement_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let ndim = if rng.gen_bool(0.7) { 2 } else { 3 };
            let dims: Vec<usize> = (0..ndim)
                .map(|_| rng.gen_range(3..=(if ndim == 2 { 16 } else { 8 })))
                .collect();
            let tdims: Vec<usize> = (0..ndim).map(|_| rng.gen_range(1..=4)).collect();
            let o = random_indicator(&mut rng, &dims, 0.3);
            let mut occ = random_indicator(&mut rng, &tdims, 0.7);
            occ.set([0, 0, 0], 1.0);
            let tool = ToolAssembly::with_tip(occ).unwrap();
            let orientation = if ndim == 2 {
                Orientation::planar(rng.gen_range(0.0..360.0)).unwrap()
            } else {
                Orientation::spatial(rng.gen_range(0.0..360.0), rng.gen_range(0.0..=180.0)).unwrap()
            };
            let a = cmf_cross_section(&o, &tool, &orientation).unwrap();
            let b = cmf_brute_force(&o, &tool, &orientation).unwrap();
            let diff = a
                .field
                .data()
                .iter()
                .zip(b.field.data())
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max);
            assert!(diff <= 1e-9, "max diff {diff}");
        }
    }

    #[test]
    fn multilinear_tools_stay_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let o = random_indicator(&mut rng, &[12, 12], 0.4);
        let t = solid_tool(&[3, 5], vec![[1, 0, 0]]);
        let opts = CmfOptions {
            resample: Resample::Multilinear,
            ..CmfOptions::default()
        };
        let o_ = Orientation::planar(33.0).unwrap();
        let a = cmf_cross_section_with(&o, &t, &o_, &opts).unwrap();
        let b = cmf_brute_force_with(&o, &t, &o_, &opts).unwrap();
        assert!(a.field.is_unit_range());
        for (x, y) in a.field.data().iter().zip(b.field.data()) {
            assert!((x - y).abs() <= 1e-9);
        }
    }

    #[test]
    fn errors() {
        let o = grid(&[4, 4], |_| 0.0);
        let t = solid_tool(&[2, 2], vec![[0, 0, 0]]);
        let o3 = Orientation::identity(3);
        assert!(cmf_cross_section(&o, &t, &o3).is_err());
        let frac = grid(&[4, 4], |_| 0.5);
        assert!(cmf_cross_section(&frac, &t, &Orientation::identity(2)).is_err());
        let tiny = CmfOptions {
            max_fft_elements: 10,
            brute_force_budget: 10,
            ..CmfOptions::default()
        };
        assert!(matches!(
            cmf_cross_section_with(&o, &t, &Orientation::identity(2), &tiny),
            Err(Error::Resource(_))
        ));
        assert!(matches!(
            cmf_brute_force_with(&o, &t, &Orientation::identity(2), &tiny),
            Err(Error::Resource(_))
        ));
        let coarse_tool = ToolAssembly::new(
            VoxelGrid::from_fn(Lattice::new(&[2, 2], 2.0, &[0.0, 0.0]).unwrap(), |_| 1.0).unwrap(),
            vec![[0, 0, 0]],
        )
        .unwrap();
        assert!(matches!(
            cmf_cross_section(&o, &coarse_tool, &Orientation::identity(2)),
            Err(Error::Structure { field: "spacing", .. })
        ));
    }

    #[test]
    fn imf_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let fields: Vec<VoxelGrid> = (0..3).map(|_| grid(&[5, 4], |_| rng.gen())).collect();
        let single = FieldStack::new(vec![FieldCrossSection {
            orientation: Orientation::planar(0.0).unwrap(),
            field: fields[0].clone(),
        }])
        .unwrap();
        assert_eq!(imf_from_stack(&single), fields[0]);

        let stack = FieldStack::new(
            fields
                .iter()
                .enumerate()
                .map(|(i, f)| FieldCrossSection {
                    orientation: Orientation::planar(100.0 * i as f64).unwrap(),
                    field: f.clone(),
                })
                .collect(),
        )
        .unwrap();
        let imf = imf_from_stack(&stack);
        for v in 0..20 {
            let scan = fields.iter().map(|f| f.data()[v]).fold(f64::INFINITY, f64::min);
            assert_eq!(imf.data()[v], scan);
        }
    }

    #[test]
    fn stack_validation_and_order() {
        let f = grid(&[3, 3], |_| 0.0);
        let sec = |t: f64| FieldCrossSection {
            orientation: Orientation::planar(t).unwrap(),
            field: f.clone(),
        };
        assert!(FieldStack::new(vec![]).is_err());
        assert!(FieldStack::new(vec![sec(10.0), sec(10.0)]).is_err());
        let s = FieldStack::new(vec![sec(200.0), sec(10.0), sec(90.0)]).unwrap();
        let angles: Vec<f64> = s.orientations().iter().map(|o| o.theta()).collect();
        assert_eq!(angles, vec![10.0, 90.0, 200.0]);
        let mixed = FieldCrossSection {
            orientation: Orientation::identity(3),
            field: f.clone(),
        };
        assert!(FieldStack::new(vec![sec(0.0), mixed]).is_err());
    }

    #[test]
    fn stack_of_one_equals_cross_section() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let o = random_indicator(&mut rng, &[8, 8], 0.3);
        let t = solid_tool(&[2, 3], vec![[0, 0, 0]]);
        let r = Orientation::planar(15.0).unwrap();
        let s = build_stack(&o, &t, &[r]).unwrap();
        assert_eq!(s.sections()[0], cmf_cross_section(&o, &t, &r).unwrap());
    }

    #[test]
    fn equispaced_counts() {
        let four: Vec<f64> = equispaced_orientations(4, None)
            .unwrap()
            .iter()
            .map(|o| o.theta())
            .collect();
        assert_eq!(four, vec![0.0, 90.0, 180.0, 270.0]);
        assert_eq!(equispaced_orientations(37, None).unwrap().len(), 37);
        assert_eq!(equispaced_orientations(15, Some(15)).unwrap().len(), 225);
        assert_eq!(equispaced_orientations(25, Some(25)).unwrap().len(), 625);
        let o = equispaced_orientations(2, Some(3)).unwrap();
        assert_eq!(o.last().unwrap().phi(), Some(180.0));
        assert!(equispaced_orientations(0, None).is_err());
        assert!(equispaced_orientations(3, Some(0)).is_err());
    }
}
