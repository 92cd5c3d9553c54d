//! Mini-batch training of a [`NeuralField`] on sampled field stacks: single
//! resolution, coarse-to-fine, and warm-started fine-tuning.

use ndarray::Axis;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cspace::{build_stack_with, equispaced_orientations, CmfOptions, FieldStack};
use crate::error::{Error, Result};
use crate::nn::nfld::TrainingState;
use crate::nn::{adam_step, AdamConfig, AdamState, NeuralField, WeightDecay};
use crate::sampler::{draw_samples, normalize_coords, AngleRanges, CoordinateMap, SampleBatch, SamplingPlan};
use crate::voxel::{box_downsample, Orientation, ToolAssembly, VoxelGrid};

/// Targets are pulled this far inside `(0, 1)` when clamping is enabled.
const TARGET_MARGIN: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr0: f64,
    /// Fractional learning-rate drop per epoch.
    pub lr_decay: f64,
    pub weight_decay: f64,
    pub decay_mode: WeightDecay,
    pub batch_size: usize,
    pub plan: SamplingPlan,
    /// Seeds the per-epoch shuffles.
    pub seed: u64,
    /// Clamp targets to `[1e-6, 1 - 1e-6]` before training.
    pub clamp_targets: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            lr0: 5e-4,
            lr_decay: 0.07,
            weight_decay: 1e-6,
            decay_mode: WeightDecay::Decoupled,
            batch_size: 1024,
            plan: SamplingPlan::default(),
            seed: 0,
            clamp_targets: false,
        }
    }
}

impl TrainConfig {
    /// Zero epochs is accepted and leaves the network untouched.
    pub fn validate(&self) -> Result<()> {
        if !(self.lr0.is_finite() && self.lr0 > 0.0) {
            return Err(Error::Config(format!("lr0 {} must be positive", self.lr0)));
        }
        if !(0.0..1.0).contains(&self.lr_decay) {
            return Err(Error::Config(format!("lr_decay {} not in [0, 1)", self.lr_decay)));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::Config(format!("weight_decay {} is negative", self.weight_decay)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        self.plan.validate()
    }

    /// `lr0 * (1 - lr_decay)^epoch`, epochs counted from zero.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr0 * (1.0 - self.lr_decay).powi(epoch as i32)
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr0,
            weight_decay: self.weight_decay,
            decay_mode: self.decay_mode,
            ..AdamConfig::default()
        }
    }

    /// `key value` lines describing every hyperparameter.
    pub fn describe(&self) -> String {
        format!(
            "epochs {}\nlr0 {}\nlr_decay {}\nweight_decay {}\ndecay_mode {}\nbatch_size {}\n\
             density {}\npositive_fraction {}\nsample_seed {}\nshuffle_seed {}\nclamp_targets {}\n",
            self.epochs,
            self.lr0,
            self.lr_decay,
            self.weight_decay,
            match self.decay_mode {
                WeightDecay::Decoupled => "decoupled",
                WeightDecay::Coupled => "coupled",
            },
            self.batch_size,
            self.plan.density,
            self.plan.positive_fraction,
            self.plan.seed,
            self.seed,
            self.clamp_targets
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    /// Sample-weighted mean L1 loss over the epoch's batches.
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub log: Vec<EpochLog>,
    pub samples: usize,
    /// Adam steps taken during this run.
    pub steps: u64,
    /// Optimizer state after the last epoch; `None` when no epoch ran from scratch.
    pub state: Option<TrainingState>,
}

impl TrainReport {
    pub fn final_loss(&self) -> Option<f64> {
        self.log.last().map(|e| e.loss)
    }

    /// `epoch,lr,loss` lines.
    pub fn loss_table(&self) -> String {
        let mut out = String::from("epoch,lr,loss\n");
        for e in &self.log {
            out += &format!("{},{},{}\n", e.epoch, e.lr, e.loss);
        }
        out
    }
}

/// Called after every epoch with the network and resumable optimizer state.
pub type EpochHook<'a> = dyn FnMut(&EpochLog, &NeuralField, &TrainingState) -> Result<()> + 'a;

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    // Independent stream per epoch, so a resumed run reshuffles identically.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    rng
}

/// Binds the network to `map` unless it already carries a domain.
fn ensure_domain(net: &mut NeuralField, map: CoordinateMap) -> Result<CoordinateMap> {
    if let Some(existing) = net.domain() {
        return Ok(existing.clone());
    }
    *net = net.clone().with_domain(map.clone())?;
    Ok(map)
}

fn check_dims(net: &NeuralField, stack: &FieldStack) -> Result<()> {
    let needed = stack.ndim() + stack.sections()[0].orientation.angle_count();
    if net.input_dim() != needed {
        return Err(Error::structure(
            "input_dim",
            format!("network takes {} inputs, stack needs {needed}", net.input_dim()),
        ));
    }
    Ok(())
}

/// Samples a stack on the network's domain (bound to the stack's lattice if unset).
pub fn prepare_samples(stack: &FieldStack, net: &mut NeuralField, cfg: &TrainConfig) -> Result<SampleBatch> {
    check_dims(net, stack)?;
    cfg.validate()?;
    let map = ensure_domain(net, normalize_coords(stack.lattice(), AngleRanges::default())?)?;
    let mut batch = draw_samples(stack, &map, &cfg.plan)?;
    if cfg.clamp_targets {
        batch
            .targets
            .mapv_inplace(|t| t.clamp(TARGET_MARGIN, 1.0 - TARGET_MARGIN));
    }
    Ok(batch)
}

/// Runs epochs `start..cfg.epochs` over fixed samples. `resume` carries optimizer
/// state and completed epochs from an earlier run; without it training starts fresh.
pub fn train_on_samples(
    net: &mut NeuralField,
    samples: &SampleBatch,
    cfg: &TrainConfig,
    resume: Option<TrainingState>,
    hook: Option<&mut EpochHook<'_>>,
) -> Result<TrainReport> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::Config("no training samples".into()));
    }
    if samples.input_dim() != net.input_dim() {
        return Err(Error::structure(
            "input_dim",
            format!(
                "samples have {} columns, network {}",
                samples.input_dim(),
                net.input_dim()
            ),
        ));
    }
    let (mut adam, start) = match resume {
        Some(s) => (s.adam, s.epochs_done),
        None => (AdamState::new(net, cfg.adam())?, 0),
    };
    let steps_before = adam.step;
    let n = samples.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut log = Vec::new();
    let mut hook = hook;

    for epoch in start..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        adam.config.lr = lr;
        order.sort_unstable();
        order.shuffle(&mut epoch_rng(cfg.seed, epoch));
        let mut total = 0.0;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let x = samples.coords.select(Axis(0), idx);
            let y = samples.targets.select(Axis(0), idx);
            let (loss, grads) = net.backward(x.view(), y.view())?;
            if !loss.is_finite() {
                return Err(Error::Training(format!("non-finite loss at epoch {epoch}, batch {b}")));
            }
            adam_step(net, &grads, &mut adam).map_err(|e| Error::Training(format!("epoch {epoch}, batch {b}: {e}")))?;
            total += loss * idx.len() as f64;
        }
        let entry = EpochLog {
            epoch,
            lr,
            loss: total / n as f64,
        };
        log::info!("epoch {epoch} lr {lr:.4e} loss {:.6e}", entry.loss);
        log.push(entry);
        if let Some(h) = hook.as_deref_mut() {
            let state = TrainingState {
                adam: adam.clone(),
                epochs_done: epoch + 1,
            };
            h(&entry, net, &state)?;
        }
    }
    let steps = adam.step - steps_before;
    Ok(TrainReport {
        log,
        samples: n,
        steps,
        state: Some(TrainingState {
            adam,
            epochs_done: cfg.epochs.max(start),
        }),
    })
}

/// Samples the stack once, then trains for `cfg.epochs` epochs.
pub fn train_single_resolution(stack: &FieldStack, net: &mut NeuralField, cfg: &TrainConfig) -> Result<TrainReport> {
    let samples = prepare_samples(stack, net, cfg)?;
    train_on_samples(net, &samples, cfg, None, None)
}

/// Resolution scale, orientation counts and epochs of one training stage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageConfig {
    pub scale: f64,
    pub theta_count: usize,
    /// Polar angle count for spatial problems.
    pub phi_count: Option<usize>,
    pub epochs: usize,
}

impl StageConfig {
    pub fn orientations(&self) -> Result<Vec<Orientation>> {
        equispaced_orientations(self.theta_count, self.phi_count)
    }

    pub fn orientation_count(&self) -> usize {
        self.theta_count * self.phi_count.unwrap_or(1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiResConfig {
    pub coarse: StageConfig,
    pub fine: StageConfig,
    /// Shared hyperparameters; its `epochs` field is ignored.
    pub train: TrainConfig,
    /// Carry Adam moments from the coarse stage into the fine stage.
    pub persist_optimizer: bool,
}

impl MultiResConfig {
    /// 30 x 30 coarse orientations at 0.65 scale for 20 epochs, then 15 x 15 at full
    /// scale for 25 epochs.
    pub fn spatial() -> Self {
        Self {
            coarse: StageConfig {
                scale: 0.65,
                theta_count: 30,
                phi_count: Some(30),
                epochs: 20,
            },
            fine: StageConfig {
                scale: 1.0,
                theta_count: 15,
                phi_count: Some(15),
                epochs: 25,
            },
            train: TrainConfig::default(),
            persist_optimizer: false,
        }
    }

    /// Planar analogue: `coarse_count` then `fine_count` azimuths.
    pub fn planar(coarse_count: usize, fine_count: usize) -> Self {
        let mut cfg = Self::spatial();
        cfg.coarse.theta_count = coarse_count;
        cfg.coarse.phi_count = None;
        cfg.fine.theta_count = fine_count;
        cfg.fine.phi_count = None;
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        for (name, s) in [("coarse", &self.coarse), ("fine", &self.fine)] {
            if !(s.scale > 0.0 && s.scale <= 1.0) {
                return Err(Error::Config(format!("{name} scale {} not in (0, 1]", s.scale)));
            }
            if s.theta_count == 0 || s.phi_count == Some(0) {
                return Err(Error::Config(format!("{name} stage has no orientations")));
            }
        }
        self.train.validate()
    }

    fn stage_train(&self, stage: &StageConfig) -> TrainConfig {
        TrainConfig {
            epochs: stage.epochs,
            ..self.train.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiResReport {
    pub coarse: TrainReport,
    pub fine: TrainReport,
    pub coarse_sections: usize,
    pub fine_sections: usize,
}

/// Ground-truth stack for one stage: geometry box-filtered to `scale`, then the CMF
/// recomputed at that resolution.
pub fn stage_stack(
    obstacle: &VoxelGrid,
    tool: &ToolAssembly,
    stage: &StageConfig,
    options: &CmfOptions,
) -> Result<FieldStack> {
    let orientations = stage.orientations()?;
    if stage.scale == 1.0 {
        return build_stack_with(obstacle, tool, &orientations, options);
    }
    let coarse_obstacle = box_downsample(obstacle, stage.scale)?;
    let coarse_tool = tool.downsampled(stage.scale)?;
    build_stack_with(&coarse_obstacle, &coarse_tool, &orientations, options)
}

/// Coarse stage then fine stage on the same parameters. Network coordinates are
/// normalized on the fine lattice, so both stages share one world-space domain.
pub fn train_multi_resolution(
    obstacle: &VoxelGrid,
    tool: &ToolAssembly,
    net: &mut NeuralField,
    cfg: &MultiResConfig,
    options: &CmfOptions,
) -> Result<MultiResReport> {
    cfg.validate()?;
    ensure_domain(net, normalize_coords(obstacle.lattice(), AngleRanges::default())?)?;

    let coarse_stack = stage_stack(obstacle, tool, &cfg.coarse, options)?;
    let coarse_cfg = cfg.stage_train(&cfg.coarse);
    let samples = prepare_samples(&coarse_stack, net, &coarse_cfg)?;
    let coarse = train_on_samples(net, &samples, &coarse_cfg, None, None)?;
    drop(samples);

    let fine_stack = stage_stack(obstacle, tool, &cfg.fine, options)?;
    let fine_cfg = cfg.stage_train(&cfg.fine);
    let samples = prepare_samples(&fine_stack, net, &fine_cfg)?;
    let carried = if cfg.persist_optimizer {
        coarse.state.clone().map(|s| TrainingState {
            adam: s.adam,
            epochs_done: 0,
        })
    } else {
        None
    };
    let fine = train_on_samples(net, &samples, &fine_cfg, carried, None)?;
    Ok(MultiResReport {
        coarse,
        fine,
        coarse_sections: coarse_stack.len(),
        fine_sections: fine_stack.len(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct WarmStartConfig {
    pub finetune_lr: f64,
    pub finetune_epochs: usize,
    /// Remaining hyperparameters; `lr0` and `epochs` are taken from the fields above.
    pub train: TrainConfig,
}

impl Default for WarmStartConfig {
    fn default() -> Self {
        Self {
            finetune_lr: 1e-4,
            finetune_epochs: 5,
            train: TrainConfig::default(),
        }
    }
}

impl WarmStartConfig {
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lr0: self.finetune_lr,
            epochs: self.finetune_epochs,
            ..self.train.clone()
        }
    }
}

/// Continues training a copy of `base` on a new stack with fresh optimizer state.
pub fn warm_start_finetune(
    stack: &FieldStack,
    base: &NeuralField,
    cfg: &WarmStartConfig,
) -> Result<(NeuralField, TrainReport)> {
    let mut net = base.clone();
    let tc = cfg.train_config();
    let report = train_single_resolution(stack, &mut net, &tc)?;
    Ok((net, report))
}
