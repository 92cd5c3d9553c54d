use ndarray::Zip;

use super::{Dense, Gradients, NeuralField};
use crate::error::{Error, Result};

/// How weight decay enters the update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WeightDecay {
    /// `param -= lr * wd * param`, outside the moment estimates.
    #[default]
    Decoupled,
    /// `wd * param` added to the gradient before the moment update.
    Coupled,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub decay_mode: WeightDecay,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-6,
            decay_mode: WeightDecay::Decoupled,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr.is_finite()
            && self.lr >= 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps.is_finite()
            && self.eps > 0.0
            && self.weight_decay.is_finite()
            && self.weight_decay >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid optimizer settings {self:?}")))
        }
    }
}

/// Moment estimates shaped like the network's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub config: AdamConfig,
    pub m: Vec<Dense>,
    pub v: Vec<Dense>,
}

impl AdamState {
    pub fn new(net: &NeuralField, config: AdamConfig) -> Result<Self> {
        config.validate()?;
        let zeros = Gradients::zeros_like(net).layers;
        Ok(Self {
            step: 0,
            config,
            m: zeros.clone(),
            v: zeros,
        })
    }

    fn check_shapes(&self, net: &NeuralField, grads: &Gradients) -> Result<()> {
        let same = |a: &[Dense]| {
            a.len() == net.layers.len()
                && a.iter()
                    .zip(&net.layers)
                    .all(|(x, y)| x.weight.dim() == y.weight.dim() && x.bias.len() == y.bias.len())
        };
        if !same(&self.m) || !same(&self.v) {
            return Err(Error::structure("optimizer", "moments do not match the network"));
        }
        if !same(&grads.layers) {
            return Err(Error::structure("gradients", "gradients do not match the network"));
        }
        Ok(())
    }
}

fn first_non_finite(grads: &Gradients) -> Option<String> {
    for (l, d) in grads.layers.iter().enumerate() {
        if let Some(((r, c), _)) = d.weight.indexed_iter().find(|(_, g)| !g.is_finite()) {
            return Some(format!("layers[{l}].weight[{r},{c}]"));
        }
        if let Some((i, _)) = d.bias.indexed_iter().find(|(_, g)| !g.is_finite()) {
            return Some(format!("layers[{l}].bias[{i}]"));
        }
    }
    None
}

/// One bias-corrected Adam update. The network is left untouched on error.
pub fn adam_step(net: &mut NeuralField, grads: &Gradients, state: &mut AdamState) -> Result<()> {
    state.check_shapes(net, grads)?;
    state.config.validate()?;
    if let Some(path) = first_non_finite(grads) {
        return Err(Error::Training(format!(
            "non-finite gradient at {path} (step {})",
            state.step + 1
        )));
    }
    state.step += 1;
    let AdamConfig {
        lr,
        beta1,
        beta2,
        eps,
        weight_decay: wd,
        decay_mode,
    } = state.config;
    let t = state.step as f64;
    let c1 = 1.0 - beta1.powf(t);
    let c2 = 1.0 - beta2.powf(t);
    let coupled = decay_mode == WeightDecay::Coupled;

    let update = |p: &mut f64, &g: &f64, m: &mut f64, v: &mut f64| {
        let g = if coupled { g + wd * *p } else { g };
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        let step = lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        let shrink = if coupled { 0.0 } else { lr * wd * *p };
        *p -= step + shrink;
    };
    for (((layer, g), m), v) in net
        .layers
        .iter_mut()
        .zip(&grads.layers)
        .zip(&mut state.m)
        .zip(&mut state.v)
    {
        Zip::from(&mut layer.weight)
            .and(&g.weight)
            .and(&mut m.weight)
            .and(&mut v.weight)
            .for_each(update);
        Zip::from(&mut layer.bias)
            .and(&g.bias)
            .and(&mut m.bias)
            .and(&mut v.bias)
            .for_each(update);
    }
    Ok(())
}
