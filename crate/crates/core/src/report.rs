//! Evaluation protocols: model error against exact fields, angular baseline
//! comparison, and architecture / sampling ablations. Reports render as
//! comma-separated tables.

use crate::baselines::{fit_interpolant, min_over, mpe, mse, stack_errors, upsample_stack, InterpKind};
use crate::cspace::{
    build_stack_with, cmf_cross_section_with, imf_from_stack, CmfOptions, FieldCrossSection, FieldStack,
};
use crate::error::{Error, Result};
use crate::nn::{evaluate_field, evaluate_section, init_network, NeuralField};
use crate::trainer::{train_single_resolution, TrainConfig};
use crate::voxel::{Orientation, ToolAssembly, VoxelGrid};

/// Orientations at which a model is scored.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalTargets {
    /// A cross-section the model was trained on.
    pub in_sample: Orientation,
    /// A cross-section between training orientations.
    pub out_of_sample: Orientation,
    /// Named orientation sets whose IMFs are compared.
    pub imf_sets: Vec<(String, Vec<Orientation>)>,
}

/// Exact fields for every evaluation target.
#[derive(Debug, Clone)]
pub struct EvalTruth {
    pub in_sample: FieldCrossSection,
    pub out_of_sample: FieldCrossSection,
    /// `(name, orientations, exact IMF)` per set.
    pub imfs: Vec<(String, Vec<Orientation>, VoxelGrid)>,
}

impl EvalTruth {
    pub fn compute(
        obstacle: &VoxelGrid,
        tool: &ToolAssembly,
        targets: &EvalTargets,
        options: &CmfOptions,
    ) -> Result<Self> {
        let in_sample = cmf_cross_section_with(obstacle, tool, &targets.in_sample, options)?;
        let out_of_sample = cmf_cross_section_with(obstacle, tool, &targets.out_of_sample, options)?;
        let imfs = targets
            .imf_sets
            .iter()
            .map(|(name, orients)| {
                let stack = build_stack_with(obstacle, tool, orients, options)?;
                Ok((name.clone(), orients.clone(), imf_from_stack(&stack)))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            in_sample,
            out_of_sample,
            imfs,
        })
    }
}

/// MSE and MPE per target, in target order.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationReport {
    pub rows: Vec<(String, f64, f64)>,
}

impl EvaluationReport {
    pub fn get(&self, target: &str) -> Option<(f64, f64)> {
        self.rows.iter().find(|r| r.0 == target).map(|r| (r.1, r.2))
    }

    pub fn header(&self) -> String {
        self.rows
            .iter()
            .map(|(name, _, _)| format!("{name}_mse,{name}_mpe"))
            .collect::<Vec<_>>()
            .join(",")
    }

    pub fn values(&self) -> String {
        self.rows
            .iter()
            .map(|(_, a, b)| format!("{a:e},{b:e}"))
            .collect::<Vec<_>>()
            .join(",")
    }

    /// One header line and one value line.
    pub fn table(&self) -> String {
        format!("{}\n{}\n", self.header(), self.values())
    }
}

pub fn evaluate_model(net: &NeuralField, truth: &EvalTruth) -> Result<EvaluationReport> {
    let lattice = truth.in_sample.field.lattice();
    let mut rows = Vec::new();
    for (name, exact) in [("in_sample", &truth.in_sample), ("out_of_sample", &truth.out_of_sample)] {
        let pred = evaluate_section(net, lattice, &exact.orientation)?;
        rows.push((
            name.to_string(),
            mse(&pred.field, &exact.field)?,
            mpe(&pred.field, &exact.field)?,
        ));
    }
    for (name, orients, exact) in &truth.imfs {
        let pred = imf_from_stack(&evaluate_field(net, lattice, orients)?);
        rows.push((format!("imf_{name}"), mse(&pred, exact)?, mpe(&pred, exact)?));
    }
    Ok(EvaluationReport { rows })
}

/// Errors of one reconstruction method against the exact upsampled stack.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodErrors {
    pub method: String,
    pub cmf_mse: f64,
    pub cmf_mpe: f64,
    pub imf_mse: f64,
    pub imf_mpe: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub rows: Vec<MethodErrors>,
    /// IMF of the linearly upsampled stack equals the knot-only IMF voxel for voxel.
    pub linear_imf_equals_knot_imf: bool,
}

impl ComparisonReport {
    pub fn get(&self, method: &str) -> Option<&MethodErrors> {
        self.rows.iter().find(|r| r.method == method)
    }

    pub fn table(&self) -> String {
        let mut out = String::from("method,cmf_mse,cmf_mpe,imf_mse,imf_mpe\n");
        for r in &self.rows {
            out += &format!(
                "{},{:e},{:e},{:e},{:e}\n",
                r.method, r.cmf_mse, r.cmf_mpe, r.imf_mse, r.imf_mpe
            );
        }
        out
    }
}

/// `(hidden_layers, hidden_width, omega0)` of the network in the planar comparison.
pub fn planar_comparison_net() -> (usize, usize, f64) {
    (3, 128, 30.0)
}

/// Training schedule of the planar comparison network: 200 epochs on every knot
/// voxel, with a slower decay than the default so late epochs still move.
pub fn planar_comparison_train(seed: u64) -> TrainConfig {
    let mut cfg = TrainConfig {
        epochs: 200,
        lr0: 1e-3,
        lr_decay: 0.02,
        seed,
        ..TrainConfig::default()
    };
    cfg.plan.density = 1.0;
    cfg.plan.seed = seed;
    cfg
}

/// Reconstructs `truth` (a dense planar stack) from the `knots` stack with every
/// angular interpolant and, when given, a trained network. CMF errors use unclamped
/// values; IMFs use values clamped to `[0, 1]`.
pub fn compare_baselines(
    knots: &FieldStack,
    truth: &FieldStack,
    net: Option<&NeuralField>,
) -> Result<ComparisonReport> {
    if truth.ndim() != 2 || knots.ndim() != 2 {
        return Err(Error::structure("stack", "baseline comparison is planar only"));
    }
    let targets = truth.orientations();
    let truth_grids: Vec<&VoxelGrid> = truth.sections().iter().map(|s| &s.field).collect();
    let truth_imf = imf_from_stack(truth);
    let mut rows = Vec::new();

    if let Some(net) = net {
        let pred = evaluate_field(net, truth.lattice(), &targets)?;
        let (cmf_mse, cmf_mpe) = stack_errors(pred.sections().iter().map(|s| &s.field), truth_grids.iter().copied())?;
        let imf = imf_from_stack(&pred);
        rows.push(MethodErrors {
            method: "DNN".into(),
            cmf_mse,
            cmf_mpe,
            imf_mse: mse(&imf, &truth_imf)?,
            imf_mpe: mpe(&imf, &truth_imf)?,
        });
    }

    let mut linear_exact = false;
    for kind in [InterpKind::Trig, InterpKind::Cubic, InterpKind::Linear] {
        let up = upsample_stack(&fit_interpolant(knots, kind)?, &targets)?;
        let (cmf_mse, cmf_mpe) = stack_errors(up.raw_grids(), truth_grids.iter().copied())?;
        let clamped: Vec<&VoxelGrid> = up.clamped.sections().iter().map(|s| &s.field).collect();
        let imf = min_over(&clamped)?;
        if kind == InterpKind::Linear {
            linear_exact = imf == imf_from_stack(knots);
        }
        rows.push(MethodErrors {
            method: kind.name().into(),
            cmf_mse,
            cmf_mpe,
            imf_mse: mse(&imf, &truth_imf)?,
            imf_mpe: mpe(&imf, &truth_imf)?,
        });
    }
    Ok(ComparisonReport {
        rows,
        linear_imf_equals_knot_imf: linear_exact,
    })
}

/// One point of the ablation grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AblationCell {
    pub density: f64,
    pub width: usize,
    pub depth: usize,
}

/// The full sampling-density by width by depth grid.
pub fn ablation_grid(densities: &[f64], widths: &[usize], depths: &[usize]) -> Vec<AblationCell> {
    let mut cells = Vec::new();
    for &density in densities {
        for &width in widths {
            for &depth in depths {
                cells.push(AblationCell { density, width, depth });
            }
        }
    }
    cells
}

/// Everything shared by the cells of an ablation.
#[derive(Debug, Clone)]
pub struct AblationSetup {
    pub train_stack: FieldStack,
    pub train: TrainConfig,
    pub omega0: f64,
    pub init_seed: u64,
    pub truth: EvalTruth,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationReport {
    pub rows: Vec<(AblationCell, EvaluationReport)>,
}

impl AblationReport {
    pub fn table(&self) -> String {
        let Some((_, first)) = self.rows.first() else {
            return String::from("density,width,depth\n");
        };
        let mut out = format!("density,width,depth,{}\n", first.header());
        for (c, r) in &self.rows {
            out += &format!("{},{},{},{}\n", c.density, c.width, c.depth, r.values());
        }
        out
    }
}

/// Trains one network per cell on the shared stack and scores it.
pub fn ablation_run(cells: &[AblationCell], setup: &AblationSetup) -> Result<AblationReport> {
    if cells.is_empty() {
        return Err(Error::Config("empty ablation grid".into()));
    }
    let input_dim = setup.train_stack.ndim() + setup.train_stack.sections()[0].orientation.angle_count();
    let mut rows = Vec::with_capacity(cells.len());
    for &cell in cells {
        let mut cfg = setup.train.clone();
        cfg.plan.density = cell.density;
        let mut net = init_network(input_dim, cell.depth, cell.width, setup.omega0, setup.init_seed)?;
        train_single_resolution(&setup.train_stack, &mut net, &cfg)?;
        log::info!("ablation cell {cell:?} trained");
        rows.push((cell, evaluate_model(&net, &setup.truth)?));
    }
    Ok(AblationReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cspace::equispaced_orientations;
    use crate::fixtures::{square_tool, toy_disk};
    use crate::nn::NetworkSpec;

    fn toy_targets() -> EvalTargets {
        EvalTargets {
            in_sample: Orientation::planar(90.0).unwrap(),
            out_of_sample: Orientation::planar(12.0).unwrap(),
            imf_sets: vec![
                ("4".into(), equispaced_orientations(4, None).unwrap()),
                ("8".into(), equispaced_orientations(8, None).unwrap()),
            ],
        }
    }

    #[test]
    fn perfect_prediction_scores_zero() {
        // A constant field is exactly representable: zero weights give 0.5 everywhere.
        let truth_field = VoxelGrid::from_fn(crate::voxel::Lattice::unit(&[4, 4]).unwrap(), |_| 0.5).unwrap();
        let section = |t: f64| FieldCrossSection {
            orientation: Orientation::planar(t).unwrap(),
            field: truth_field.clone(),
        };
        let truth = EvalTruth {
            in_sample: section(0.0),
            out_of_sample: section(12.0),
            imfs: vec![
                (
                    "a".into(),
                    equispaced_orientations(3, None).unwrap(),
                    truth_field.clone(),
                ),
                (
                    "b".into(),
                    equispaced_orientations(5, None).unwrap(),
                    truth_field.clone(),
                ),
            ],
        };
        let net = NeuralField::zeros(NetworkSpec::new(3, 2, 4, 30.0)).unwrap();
        let r = evaluate_model(&net, &truth).unwrap();
        assert_eq!(r.rows.len(), 4);
        assert!(r.rows.iter().all(|(_, a, b)| *a == 0.0 && *b == 0.0));
        let table = r.table();
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines[0].split(',').count(), 8);
        assert_eq!(lines[1].split(',').count(), 8);
    }

    #[test]
    fn single_cell_ablation_gives_one_row() {
        let o = toy_disk();
        let t = square_tool(3).unwrap();
        let opts = CmfOptions::default();
        let setup = AblationSetup {
            train_stack: build_stack_with(&o, &t, &equispaced_orientations(4, None).unwrap(), &opts).unwrap(),
            train: TrainConfig {
                epochs: 2,
                batch_size: 128,
                ..TrainConfig::default()
            },
            omega0: 30.0,
            init_seed: 0,
            truth: EvalTruth::compute(&o, &t, &toy_targets(), &opts).unwrap(),
        };
        let cells = [AblationCell {
            density: 0.1,
            width: 8,
            depth: 2,
        }];
        let r = ablation_run(&cells, &setup).unwrap();
        assert_eq!(r.rows.len(), 1);
        assert_eq!(r.table().lines().count(), 2);
        assert_eq!(ablation_grid(&[0.1, 0.5], &[256, 512], &[4, 5, 6]).len(), 12);
        assert!(ablation_run(&[], &setup).is_err());
    }

    #[test]
    fn comparison_has_every_method() {
        let o = toy_disk();
        let t = square_tool(3).unwrap();
        let opts = CmfOptions::default();
        let knots = build_stack_with(&o, &t, &equispaced_orientations(8, None).unwrap(), &opts).unwrap();
        let truth = build_stack_with(&o, &t, &equispaced_orientations(32, None).unwrap(), &opts).unwrap();
        let net = init_network(3, 2, 8, 30.0, 0).unwrap();
        let r = compare_baselines(&knots, &truth, Some(&net)).unwrap();
        let methods: Vec<&str> = r.rows.iter().map(|m| m.method.as_str()).collect();
        assert_eq!(methods, ["DNN", "Trig", "Cubic", "Linear"]);
        assert!(r.linear_imf_equals_knot_imf);
        assert_eq!(r.table().lines().next().unwrap().split(',').count(), 5);
    }
}
