//! `key = value` run configuration files.
//!
//! Blank lines and `#` comments are ignored. Relative paths resolve against the
//! directory holding the configuration file.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use accessnet::cspace::CmfOptions;
use accessnet::nn::WeightDecay;
use accessnet::sampler::SamplingPlan;
use accessnet::trainer::{MultiResConfig, StageConfig, TrainConfig, WarmStartConfig};
use accessnet::voxel::Resample;
use accessnet::{Error, Result};

use crate::geometry::SharpSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pipeline {
    Single,
    MultiRes,
    Finetune,
}

impl Pipeline {
    fn name(self) -> &'static str {
        match self {
            Pipeline::Single => "single",
            Pipeline::MultiRes => "multires",
            Pipeline::Finetune => "finetune",
        }
    }
}

/// Fully resolved run description.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub pipeline: Pipeline,
    pub obstacle: PathBuf,
    pub fixtures: Option<PathBuf>,
    pub tool: PathBuf,
    pub sharp: SharpSpec,
    pub theta_count: usize,
    pub phi_count: Option<usize>,
    pub resample: Resample,
    pub seed: u64,
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub omega0: f64,
    pub train: TrainConfig,
    pub multires: MultiResConfig,
    pub warm: WarmStartConfig,
    pub base_model: Option<PathBuf>,
    /// Output directory; created on demand.
    pub out: Option<PathBuf>,
}

struct Entries {
    map: BTreeMap<String, String>,
    base: PathBuf,
}

impl Entries {
    fn take(&mut self, key: &str) -> Option<String> {
        self.map.remove(key)
    }

    fn parse<T: std::str::FromStr>(&mut self, key: &str, default: T) -> Result<T> {
        match self.take(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{v}`"))),
        }
    }

    fn optional<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        match self.take(key) {
            None => Ok(None),
            Some(v) if v.is_empty() || v == "none" => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{v}`"))),
        }
    }

    fn path(&mut self, key: &str) -> Result<Option<PathBuf>> {
        let Some(v) = self.take(key).filter(|v| !v.is_empty()) else {
            return Ok(None);
        };
        let p = self.base.join(v);
        if !p.exists() {
            return Err(Error::Config(format!("`{key}`: {} does not exist", p.display())));
        }
        Ok(Some(p))
    }

    fn required_path(&mut self, key: &str) -> Result<PathBuf> {
        self.path(key)?
            .ok_or_else(|| Error::Config(format!("missing required key `{key}`")))
    }
}

pub fn parse_resample(s: &str) -> Result<Resample> {
    match s {
        "nearest" => Ok(Resample::Nearest),
        "multilinear" => Ok(Resample::Multilinear),
        "threshold" => Ok(Resample::MultilinearThreshold),
        other => Err(Error::Config(format!("unknown resample mode `{other}`"))),
    }
}

fn parse_decay(s: &str) -> Result<WeightDecay> {
    match s {
        "decoupled" => Ok(WeightDecay::Decoupled),
        "coupled" => Ok(WeightDecay::Coupled),
        other => Err(Error::Config(format!("unknown decay mode `{other}`"))),
    }
}

fn read_entries(path: &Path) -> Result<Entries> {
    let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let mut map = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
        let k = k.trim().to_string();
        if map.insert(k.clone(), v.trim().to_string()).is_some() {
            return Err(Error::Config(format!("line {}: duplicate key `{k}`", n + 1)));
        }
    }
    Ok(Entries {
        map,
        base: path.parent().unwrap_or(Path::new(".")).to_path_buf(),
    })
}

impl RunConfig {
    /// Reads a configuration for `pipeline`. A `pipeline` key, if present, must agree.
    pub fn load(path: &Path, pipeline: Pipeline) -> Result<Self> {
        let mut e = read_entries(path)?;
        if let Some(p) = e.take("pipeline") {
            if p != pipeline.name() {
                return Err(Error::Config(format!(
                    "configuration selects pipeline `{p}` but `{}` was requested",
                    pipeline.name()
                )));
            }
        }
        let seed: u64 = e.parse("seed", 0)?;
        let defaults = TrainConfig::default();
        let train = TrainConfig {
            epochs: e.parse("epochs", defaults.epochs)?,
            lr0: e.parse("lr0", defaults.lr0)?,
            lr_decay: e.parse("lr_decay", defaults.lr_decay)?,
            weight_decay: e.parse("weight_decay", defaults.weight_decay)?,
            decay_mode: parse_decay(&e.parse("decay_mode", "decoupled".to_string())?)?,
            batch_size: e.parse("batch_size", defaults.batch_size)?,
            plan: SamplingPlan {
                density: e.parse("density", defaults.plan.density)?,
                positive_fraction: e.parse("positive_fraction", defaults.plan.positive_fraction)?,
                seed,
            },
            seed,
            clamp_targets: e.parse("clamp_targets", false)?,
        };
        train.validate()?;

        let theta_count = e.parse("theta_count", 36usize)?;
        let phi_count = e.optional("phi_count")?;
        let d = MultiResConfig::spatial();
        let multires = MultiResConfig {
            coarse: StageConfig {
                scale: e.parse("coarse_scale", d.coarse.scale)?,
                theta_count: e.parse("coarse_theta_count", d.coarse.theta_count)?,
                phi_count: if phi_count.is_some() {
                    Some(e.parse("coarse_phi_count", d.coarse.phi_count.unwrap_or(30))?)
                } else {
                    e.take("coarse_phi_count");
                    None
                },
                epochs: e.parse("coarse_epochs", d.coarse.epochs)?,
            },
            fine: StageConfig {
                scale: 1.0,
                theta_count: e.parse("fine_theta_count", d.fine.theta_count)?,
                phi_count: if phi_count.is_some() {
                    Some(e.parse("fine_phi_count", d.fine.phi_count.unwrap_or(15))?)
                } else {
                    e.take("fine_phi_count");
                    None
                },
                epochs: e.parse("fine_epochs", d.fine.epochs)?,
            },
            train: train.clone(),
            persist_optimizer: e.parse("persist_optimizer", false)?,
        };
        let wd = WarmStartConfig::default();
        let warm = WarmStartConfig {
            finetune_lr: e.parse("finetune_lr", wd.finetune_lr)?,
            finetune_epochs: e.parse("finetune_epochs", wd.finetune_epochs)?,
            train: train.clone(),
        };
        if !(warm.finetune_lr.is_finite() && warm.finetune_lr > 0.0) {
            return Err(Error::Config(format!(
                "finetune_lr {} must be positive",
                warm.finetune_lr
            )));
        }

        let cfg = RunConfig {
            pipeline,
            obstacle: e.required_path("obstacle")?,
            fixtures: e.path("fixtures")?,
            tool: e.required_path("tool")?,
            sharp: e.parse("sharp", SharpSpec::Tip)?,
            theta_count,
            phi_count,
            resample: parse_resample(&e.parse("resample", "nearest".to_string())?)?,
            seed,
            hidden_layers: e.parse("hidden_layers", 5usize)?,
            hidden_width: e.parse("hidden_width", 512usize)?,
            omega0: e.parse("omega0", 30.0)?,
            train,
            multires,
            warm,
            base_model: e.path("base_model")?,
            out: e.take("out").filter(|v| !v.is_empty()).map(|v| e.base.join(v)),
        };
        if pipeline == Pipeline::MultiRes {
            cfg.multires.validate()?;
        }
        if let Some(k) = e.map.keys().next() {
            return Err(Error::Config(format!("unknown key `{k}`")));
        }
        Ok(cfg)
    }

    pub fn cmf_options(&self) -> CmfOptions {
        CmfOptions {
            resample: self.resample,
            ..CmfOptions::default()
        }
    }

    /// Resolved settings as `key value` lines, for run logs.
    pub fn describe(&self) -> String {
        let mut out = format!("pipeline {}\n", self.pipeline.name());
        out += &format!("obstacle {}\n", self.obstacle.display());
        if let Some(f) = &self.fixtures {
            out += &format!("fixtures {}\n", f.display());
        }
        out += &format!("tool {}\nsharp {}\n", self.tool.display(), self.sharp);
        out += &format!("theta_count {}\n", self.theta_count);
        if let Some(p) = self.phi_count {
            out += &format!("phi_count {p}\n");
        }
        out += &format!(
            "hidden_layers {}\nhidden_width {}\nomega0 {}\nseed {}\n",
            self.hidden_layers, self.hidden_width, self.omega0, self.seed
        );
        match self.pipeline {
            Pipeline::Single => out += &self.train.describe(),
            Pipeline::MultiRes => {
                out += &self.train.describe();
                let m = &self.multires;
                out += &format!(
                    "coarse_scale {}\ncoarse_orientations {}\ncoarse_epochs {}\nfine_orientations {}\nfine_epochs {}\npersist_optimizer {}\n",
                    m.coarse.scale,
                    m.coarse.orientation_count(),
                    m.coarse.epochs,
                    m.fine.orientation_count(),
                    m.fine.epochs,
                    m.persist_optimizer
                );
            }
            Pipeline::Finetune => out += &self.warm.train_config().describe(),
        }
        out
    }
}
