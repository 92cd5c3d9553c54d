use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use accessnet::baselines::{mpe, mse};
use accessnet::cspace::{
    build_stack_with, cmf_brute_force_with, equispaced_orientations, imf_from_stack, CmfOptions, FieldStack,
};
use accessnet::fixtures;
use accessnet::image::write_png;
use accessnet::nn::nfld::{self, TrainingState};
use accessnet::nn::{init_network, NeuralField};
use accessnet::report::{
    ablation_grid, ablation_run, compare_baselines, evaluate_model, planar_comparison_net, planar_comparison_train,
    AblationSetup, EvalTargets, EvalTruth,
};
use accessnet::sampler::{normalize_coords, AngleRanges};
use accessnet::stack_io::{read_stack, write_stack};
use accessnet::trainer::{
    prepare_samples, train_multi_resolution, train_on_samples, warm_start_finetune, EpochLog, TrainConfig, TrainReport,
};
use accessnet::voxel::{Orientation, ToolAssembly, VoxelGrid};
use accessnet::voxf::{self, Dtype};
use accessnet::{Error, Result};
use rayon::prelude::*;

use crate::config::{parse_resample, Pipeline, RunConfig};
use crate::geometry::{load_obstacle, load_tool};
use crate::{Command, GeometryArgs, InlineNetArgs, TargetArgs};

pub const FIXTURE_NAMES: [&str; 7] = [
    "planar-part",
    "planar-part-perturbed",
    "planar-tool",
    "square-tool",
    "toy-disk",
    "spatial-part",
    "spatial-tool",
];

/// Runs one command. `Ok(false)` means a checked property did not hold.
pub fn run(cmd: Command) -> Result<bool> {
    match cmd {
        Command::ComputeCmf {
            geometry,
            theta_count,
            phi_count,
            oracle,
            out,
        } => compute_cmf(&geometry, theta_count, phi_count, oracle, &out),
        Command::Imf { stack, out, png, slice } => {
            let imf = imf_from_stack(&read_stack(&stack)?);
            voxf::save(&out, &imf, Dtype::F64)?;
            if let Some(p) = png {
                write_png(p, &imf, slice)?;
            }
            Ok(true)
        }
        Command::Compare { lhs, rhs, expect_le } => compare(&lhs, &rhs, expect_le),
        Command::Train {
            config,
            epochs,
            resume,
            out,
        } => {
            let mut cfg = RunConfig::load(&config, Pipeline::Single)?;
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            train(&cfg, resume.as_deref(), out)
        }
        Command::TrainMultires { config, out } => train_multires(&RunConfig::load(&config, Pipeline::MultiRes)?, out),
        Command::Finetune { config, base, out } => {
            let mut cfg = RunConfig::load(&config, Pipeline::Finetune)?;
            if base.is_some() {
                cfg.base_model = base;
            }
            finetune(&cfg, out)
        }
        Command::Eval {
            model,
            geometry,
            targets,
            out,
        } => {
            let net = nfld::load_model(&model)?;
            let (obstacle, tool, options) = load_geometry(&geometry)?;
            let targets = eval_targets(&targets, obstacle.ndim())?;
            check_model_fits(&net, &obstacle, &targets.in_sample)?;
            let truth = EvalTruth::compute(&obstacle, &tool, &targets, &options)?;
            let report = evaluate_model(&net, &truth)?;
            emit(out.as_deref(), &report.table())?;
            Ok(true)
        }
        Command::CompareBaselines {
            geometry,
            knots,
            targets,
            model,
            net,
            out,
        } => compare_baselines_cmd(&geometry, knots, targets, model.as_deref(), &net, out.as_deref()),
        Command::Fixture { name, out } => {
            let grid = fixture(&name)?;
            voxf::save(&out, &grid, Dtype::for_grid(&grid))?;
            Ok(true)
        }
        Command::Ablation {
            config,
            densities,
            widths,
            depths,
            targets,
            out,
        } => {
            let cfg = RunConfig::load(&config, Pipeline::Single)?;
            let (obstacle, tool) = config_geometry(&cfg)?;
            let options = cfg.cmf_options();
            let train_stack = build_stack_with(&obstacle, &tool, &cfg_orientations(&cfg)?, &options)?;
            let targets = eval_targets(&targets, obstacle.ndim())?;
            let setup = AblationSetup {
                train_stack,
                train: cfg.train.clone(),
                omega0: cfg.omega0,
                init_seed: cfg.seed,
                truth: EvalTruth::compute(&obstacle, &tool, &targets, &options)?,
            };
            let report = ablation_run(&ablation_grid(&densities, &widths, &depths), &setup)?;
            emit(out.as_deref(), &report.table())?;
            Ok(true)
        }
    }
}

fn load_geometry(g: &GeometryArgs) -> Result<(VoxelGrid, ToolAssembly, CmfOptions)> {
    let obstacle = load_obstacle(&g.obstacle, g.fixtures.as_deref())?;
    let tool = load_tool(&g.tool, &g.sharp)?;
    let defaults = CmfOptions::default();
    let options = CmfOptions {
        resample: parse_resample(&g.resample)?,
        max_fft_elements: g.max_fft_elements.unwrap_or(defaults.max_fft_elements),
        brute_force_budget: g.brute_force_budget.unwrap_or(defaults.brute_force_budget),
    };
    Ok((obstacle, tool, options))
}

fn config_geometry(cfg: &RunConfig) -> Result<(VoxelGrid, ToolAssembly)> {
    Ok((
        load_obstacle(&cfg.obstacle, cfg.fixtures.as_deref())?,
        load_tool(&cfg.tool, &cfg.sharp)?,
    ))
}

fn cfg_orientations(cfg: &RunConfig) -> Result<Vec<Orientation>> {
    equispaced_orientations(cfg.theta_count, cfg.phi_count)
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).map_err(|e| Error::io(p, e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn compute_cmf(
    g: &GeometryArgs,
    theta_count: usize,
    phi_count: Option<usize>,
    oracle: bool,
    out: &Path,
) -> Result<bool> {
    let (obstacle, tool, options) = load_geometry(g)?;
    let orientations = equispaced_orientations(theta_count, phi_count)?;
    if phi_count.is_some() != (obstacle.ndim() == 3) {
        return Err(Error::Config(format!(
            "a {}D obstacle needs {} orientations",
            obstacle.ndim(),
            if obstacle.ndim() == 3 {
                "spatial (--phi-count)"
            } else {
                "planar"
            }
        )));
    }
    let stack = if oracle {
        let sections = orientations
            .par_iter()
            .map(|o| cmf_brute_force_with(&obstacle, &tool, o, &options))
            .collect::<Result<Vec<_>>>()?;
        FieldStack::new(sections)?
    } else {
        build_stack_with(&obstacle, &tool, &orientations, &options)?
    };
    let manifest = write_stack(out, &stack)?;
    eprintln!("wrote {} sections to {}", stack.len(), manifest.display());
    Ok(true)
}

fn compare(lhs: &Path, rhs: &Path, expect_le: bool) -> Result<bool> {
    let a = voxf::load(lhs)?;
    let b = voxf::load(rhs)?;
    let max_excess = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| x - y)
        .fold(f64::NEG_INFINITY, f64::max);
    let (e2, ep) = (mse(&a, &b)?, mpe(&a, &b)?);
    let le = max_excess <= 0.0;
    println!("mse,mpe,max_lhs_minus_rhs,lhs_le_rhs");
    println!("{e2:e},{ep:e},{max_excess:e},{le}");
    Ok(le || !expect_le)
}

fn fixture(name: &str) -> Result<VoxelGrid> {
    Ok(match name {
        "planar-part" => fixtures::planar_part(),
        "planar-part-perturbed" => fixtures::planar_part_perturbed(),
        "planar-tool" => fixtures::planar_l_tool().occupancy().clone(),
        "square-tool" => fixtures::square_tool(3)?.occupancy().clone(),
        "toy-disk" => fixtures::toy_disk(),
        "spatial-part" => fixtures::spatial_part(),
        "spatial-tool" => fixtures::spatial_tool().occupancy().clone(),
        other => return Err(Error::Config(format!("unknown fixture `{other}`"))),
    })
}

fn parse_set(s: &str, ndim: usize) -> Result<Vec<Orientation>> {
    let bad = || Error::Config(format!("bad orientation set `{s}`"));
    match s.split_once('x') {
        Some((t, p)) if ndim == 3 => {
            equispaced_orientations(t.parse().map_err(|_| bad())?, Some(p.parse().map_err(|_| bad())?))
        }
        None if ndim == 2 => equispaced_orientations(s.parse().map_err(|_| bad())?, None),
        _ => Err(Error::Config(format!(
            "orientation set `{s}` does not fit a {ndim}D field"
        ))),
    }
}

fn eval_targets(t: &TargetArgs, ndim: usize) -> Result<EvalTargets> {
    let orient = |theta, phi| {
        if ndim == 3 {
            Orientation::spatial(theta, phi)
        } else {
            Orientation::planar(theta)
        }
    };
    let defaults = if ndim == 3 { ["15x15", "25x25"] } else { ["36", "144"] };
    let names: Vec<String> = if t.imf_sets.is_empty() {
        defaults.iter().map(|s| s.to_string()).collect()
    } else {
        t.imf_sets.clone()
    };
    let imf_sets = names
        .iter()
        .map(|n| Ok((n.clone(), parse_set(n, ndim)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalTargets {
        in_sample: orient(t.in_theta, t.in_phi)?,
        out_of_sample: orient(t.out_theta, t.out_phi)?,
        imf_sets,
    })
}

fn check_model_fits(net: &NeuralField, obstacle: &VoxelGrid, o: &Orientation) -> Result<()> {
    let want = obstacle.ndim() + o.angle_count();
    if net.input_dim() != want {
        return Err(Error::structure(
            "model",
            format!(
                "model takes {} inputs, {}D geometry needs {want}",
                net.input_dim(),
                obstacle.ndim()
            ),
        ));
    }
    if let Some(map) = net.domain() {
        let fresh = normalize_coords(obstacle.lattice(), AngleRanges::default())?;
        if map != &fresh {
            return Err(Error::structure(
                "model",
                "model domain does not match the geometry lattice",
            ));
        }
    }
    Ok(())
}

fn output_dir(cfg: &RunConfig, over: Option<PathBuf>) -> Result<PathBuf> {
    let dir = over
        .or_else(|| cfg.out.clone())
        .ok_or_else(|| Error::Config("no output directory: set `out` or pass --out".into()))?;
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

fn write_run_log(dir: &Path, cfg: &RunConfig, extra: &str) -> Result<()> {
    let text = format!("{}{extra}", cfg.describe());
    eprint!("{text}");
    let p = dir.join("run.log");
    fs::write(&p, text).map_err(|e| Error::io(&p, e))
}

const LOSS_HEADER: &str = "epoch,lr,loss\n";

fn append(path: &Path, text: &str) -> Result<()> {
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

fn new_network(cfg: &RunConfig, ndim: usize, angle_count: usize) -> Result<NeuralField> {
    init_network(
        ndim + angle_count,
        cfg.hidden_layers,
        cfg.hidden_width,
        cfg.omega0,
        cfg.seed,
    )
}

/// Trains with a checkpoint and a loss line written after every epoch.
fn train_logged(
    net: &mut NeuralField,
    stack: &FieldStack,
    train: &TrainConfig,
    resume: Option<TrainingState>,
    dir: &Path,
) -> Result<TrainReport> {
    let samples = prepare_samples(stack, net, train)?;
    let loss_path = dir.join("loss.csv");
    if resume.is_none() {
        fs::write(&loss_path, LOSS_HEADER).map_err(|e| Error::io(&loss_path, e))?;
    }
    let ckpt = dir.join("checkpoint.nfld");
    let mut hook = |log: &EpochLog, net: &NeuralField, state: &TrainingState| -> Result<()> {
        nfld::save_checkpoint(&ckpt, net, state)?;
        append(&loss_path, &format!("{},{:e},{:e}\n", log.epoch, log.lr, log.loss))
    };
    train_on_samples(net, &samples, train, resume, Some(&mut hook))
}

fn train(cfg: &RunConfig, resume: Option<&Path>, out: Option<PathBuf>) -> Result<bool> {
    let dir = output_dir(cfg, out)?;
    let (obstacle, tool) = config_geometry(cfg)?;
    let orientations = cfg_orientations(cfg)?;
    let stack = build_stack_with(&obstacle, &tool, &orientations, &cfg.cmf_options())?;
    let (mut net, state) = match resume {
        Some(p) => {
            let ckpt = nfld::load(p)?;
            let state = ckpt
                .state
                .ok_or_else(|| Error::format("NFLD", format!("{} has no optimizer state", p.display())))?;
            (ckpt.net, Some(state))
        }
        None => (new_network(cfg, obstacle.ndim(), orientations[0].angle_count())?, None),
    };
    let extra = match &state {
        Some(s) => format!("resume_from_epoch {}\n", s.epochs_done),
        None => String::new(),
    };
    write_run_log(&dir, cfg, &extra)?;
    if state.is_none() {
        let init = net
            .clone()
            .with_domain(normalize_coords(stack.lattice(), AngleRanges::default())?)?;
        nfld::save_model(dir.join("init.nfld"), &init)?;
    }
    let report = train_logged(&mut net, &stack, &cfg.train, state, &dir)?;
    nfld::save_model(dir.join("model.nfld"), &net)?;
    if let Some(l) = report.final_loss() {
        eprintln!("final loss {l:e}");
    }
    Ok(true)
}

fn train_multires(cfg: &RunConfig, out: Option<PathBuf>) -> Result<bool> {
    let dir = output_dir(cfg, out)?;
    write_run_log(&dir, cfg, "")?;
    let (obstacle, tool) = config_geometry(cfg)?;
    let angle_count = if cfg.phi_count.is_some() { 2 } else { 1 };
    let mut net = new_network(cfg, obstacle.ndim(), angle_count)?;
    let report = train_multi_resolution(&obstacle, &tool, &mut net, &cfg.multires, &cfg.cmf_options())?;
    let mut log = String::from("stage,epoch,lr,loss\n");
    for (stage, r) in [("coarse", &report.coarse), ("fine", &report.fine)] {
        for e in &r.log {
            log += &format!("{stage},{},{:e},{:e}\n", e.epoch, e.lr, e.loss);
        }
    }
    let p = dir.join("loss.csv");
    fs::write(&p, log).map_err(|e| Error::io(&p, e))?;
    if let Some(state) = &report.fine.state {
        nfld::save_checkpoint(dir.join("checkpoint.nfld"), &net, state)?;
    }
    nfld::save_model(dir.join("model.nfld"), &net)?;
    Ok(true)
}

fn finetune(cfg: &RunConfig, out: Option<PathBuf>) -> Result<bool> {
    let base_path = cfg
        .base_model
        .as_ref()
        .ok_or_else(|| Error::Config("no base model: set `base_model` or pass --base".into()))?;
    let dir = output_dir(cfg, out)?;
    write_run_log(&dir, cfg, &format!("base_model {}\n", base_path.display()))?;
    let base = nfld::load_model(base_path)?;
    let (obstacle, tool) = config_geometry(cfg)?;
    let stack = build_stack_with(&obstacle, &tool, &cfg_orientations(cfg)?, &cfg.cmf_options())?;
    check_model_fits(&base, &obstacle, &stack.sections()[0].orientation)?;
    let (net, report) = warm_start_finetune(&stack, &base, &cfg.warm)?;
    let p = dir.join("loss.csv");
    fs::write(&p, report.loss_table()).map_err(|e| Error::io(&p, e))?;
    if let Some(state) = &report.state {
        nfld::save_checkpoint(dir.join("checkpoint.nfld"), &net, state)?;
    }
    nfld::save_model(dir.join("model.nfld"), &net)?;
    Ok(true)
}

fn compare_baselines_cmd(
    g: &GeometryArgs,
    knots: usize,
    targets: usize,
    model: Option<&Path>,
    net_args: &InlineNetArgs,
    out: Option<&Path>,
) -> Result<bool> {
    let (obstacle, tool, options) = load_geometry(g)?;
    if obstacle.ndim() != 2 {
        return Err(Error::structure("obstacle", "baseline comparison takes 2D geometry"));
    }
    let knot_stack = build_stack_with(&obstacle, &tool, &equispaced_orientations(knots, None)?, &options)?;
    let truth = build_stack_with(&obstacle, &tool, &equispaced_orientations(targets, None)?, &options)?;
    let net = match model {
        Some(p) => {
            let net = nfld::load_model(p)?;
            check_model_fits(&net, &obstacle, &truth.sections()[0].orientation)?;
            net
        }
        None => {
            let (_, _, omega0) = planar_comparison_net();
            let mut net = init_network(3, net_args.depth, net_args.width, omega0, net_args.seed)?;
            let train = TrainConfig {
                epochs: net_args.epochs,
                ..planar_comparison_train(net_args.seed)
            };
            let samples = prepare_samples(&knot_stack, &mut net, &train)?;
            train_on_samples(&mut net, &samples, &train, None, None)?;
            net
        }
    };
    let report = compare_baselines(&knot_stack, &truth, Some(&net))?;
    eprintln!("linear IMF equals knot IMF: {}", report.linear_imf_equals_knot_imf);
    emit(out, &report.table())?;
    Ok(true)
}
