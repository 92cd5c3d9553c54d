//! Sinusoidal fully connected network with an input skip connection and a sigmoid head.
//!
//! Hidden layer `l` computes `sin(omega0 * (W_l a + b_l))`. After hidden layer
//! `skip_at` (1-based) its activations are concatenated with the raw input before the
//! next layer, which is therefore `hidden_width + input_dim` wide. The head is a single
//! linear unit followed by a sigmoid so predictions stay inside the unit interval.

mod adam;
mod eval;
pub mod nfld;

use ndarray::{concatenate, s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::sampler::CoordinateMap;

pub use adam::{adam_step, AdamConfig, AdamState, WeightDecay};
pub use eval::{evaluate_field, evaluate_section, FieldEvaluator};

/// Predictions are kept this far from 0 and 1 so the head never saturates exactly.
const OUTPUT_MARGIN: f64 = 1e-15;

/// Network shape and activation frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub hidden_layers: usize,
    pub hidden_width: usize,
    /// Hidden layer (1-based) whose output is concatenated with the input.
    pub skip_at: Option<usize>,
    pub omega0: f64,
}

impl NetworkSpec {
    /// Skip after the second hidden layer whenever there is a layer after it.
    pub fn new(input_dim: usize, hidden_layers: usize, hidden_width: usize, omega0: f64) -> Self {
        Self {
            input_dim,
            hidden_layers,
            hidden_width,
            skip_at: (hidden_layers > 2).then_some(2),
            omega0,
        }
    }

    /// Five hidden layers of 512 units, frequency 30.
    pub fn standard(input_dim: usize) -> Self {
        Self::new(input_dim, 5, 512, 30.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_layers == 0 || self.hidden_width == 0 {
            return Err(Error::range(
                "network size",
                format!(
                    "input_dim {}, hidden_layers {}, hidden_width {} must be positive",
                    self.input_dim, self.hidden_layers, self.hidden_width
                ),
            ));
        }
        if !(self.omega0.is_finite() && self.omega0 > 0.0) {
            return Err(Error::range("omega0", format!("{} is not positive", self.omega0)));
        }
        if let Some(s) = self.skip_at {
            if s == 0 || s >= self.hidden_layers {
                return Err(Error::Config(format!(
                    "skip_at {s} needs 1 <= skip_at < hidden_layers ({})",
                    self.hidden_layers
                )));
            }
        }
        Ok(())
    }

    /// `(fan_out, fan_in)` of every layer, hidden layers first, head last.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::with_capacity(self.hidden_layers + 1);
        for l in 0..self.hidden_layers {
            let fan_in = if l == 0 {
                self.input_dim
            } else if Some(l) == self.skip_at {
                self.hidden_width + self.input_dim
            } else {
                self.hidden_width
            };
            shapes.push((self.hidden_width, fan_in));
        }
        shapes.push((1, self.hidden_width));
        shapes
    }

    pub fn parameter_count(&self) -> usize {
        self.layer_shapes().iter().map(|(o, i)| o * i + o).sum()
    }
}

/// Weights stored `fan_out x fan_in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    fn zeros(fan_out: usize, fan_in: usize) -> Self {
        Self {
            weight: Array2::zeros((fan_out, fan_in)),
            bias: Array1::zeros(fan_out),
        }
    }
}

/// Gradients shaped exactly like the network's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Dense>,
}

impl Gradients {
    pub fn zeros_like(net: &NeuralField) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|d| Dense::zeros(d.weight.nrows(), d.weight.ncols()))
                .collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|d| d.weight.iter().chain(d.bias.iter()))
            .fold(0.0, |m, g| m.max(g.abs()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeuralField {
    spec: NetworkSpec,
    layers: Vec<Dense>,
    /// Map from raw configuration coordinates to network inputs, once bound to a domain.
    domain: Option<CoordinateMap>,
}

/// Forward activations kept for backpropagation.
struct Trace {
    inputs: Vec<Array2<f64>>,
    phases: Vec<Array2<f64>>,
    output: Array1<f64>,
}

pub fn init_network(
    input_dim: usize,
    hidden_layers: usize,
    hidden_width: usize,
    omega0: f64,
    seed: u64,
) -> Result<NeuralField> {
    NeuralField::init(NetworkSpec::new(input_dim, hidden_layers, hidden_width, omega0), seed)
}

impl NeuralField {
    /// First layer weights uniform on `±1/fan_in`, later layers on
    /// `±sqrt(6/fan_in)/omega0`, biases zero.
    pub fn init(spec: NetworkSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = spec
            .layer_shapes()
            .into_iter()
            .enumerate()
            .map(|(l, (fan_out, fan_in))| {
                let bound = if l == 0 {
                    1.0 / fan_in as f64
                } else {
                    (6.0 / fan_in as f64).sqrt() / spec.omega0
                };
                let weight = Array2::from_shape_simple_fn((fan_out, fan_in), || rng.gen_range(-bound..=bound));
                Dense {
                    weight,
                    bias: Array1::zeros(fan_out),
                }
            })
            .collect();
        Ok(Self {
            spec,
            layers,
            domain: None,
        })
    }

    /// Every parameter zero; predicts 0.5 everywhere.
    pub fn zeros(spec: NetworkSpec) -> Result<Self> {
        spec.validate()?;
        let layers = spec
            .layer_shapes()
            .into_iter()
            .map(|(o, i)| Dense::zeros(o, i))
            .collect();
        Ok(Self {
            spec,
            layers,
            domain: None,
        })
    }

    /// Rebuilds a network from explicit layers, checking every shape.
    pub fn from_layers(spec: NetworkSpec, layers: Vec<Dense>, domain: Option<CoordinateMap>) -> Result<Self> {
        spec.validate()?;
        let shapes = spec.layer_shapes();
        if layers.len() != shapes.len() {
            return Err(Error::structure(
                "layers",
                format!("{} layers for a spec with {}", layers.len(), shapes.len()),
            ));
        }
        for (l, (d, &(o, i))) in layers.iter().zip(&shapes).enumerate() {
            if d.weight.dim() != (o, i) || d.bias.len() != o {
                return Err(Error::structure(
                    "layers",
                    format!("layer {l} is {:?}, expected ({o}, {i})", d.weight.dim()),
                ));
            }
            if d.weight.iter().chain(d.bias.iter()).any(|v| !v.is_finite()) {
                return Err(Error::range("parameter", format!("layer {l} is not finite")));
            }
        }
        let net = Self {
            spec,
            layers,
            domain: None,
        };
        match domain {
            Some(map) => net.with_domain(map),
            None => Ok(net),
        }
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn parameter_count(&self) -> usize {
        self.spec.parameter_count()
    }

    pub fn domain(&self) -> Option<&CoordinateMap> {
        self.domain.as_ref()
    }

    pub fn with_domain(mut self, map: CoordinateMap) -> Result<Self> {
        if map.input_dim() != self.spec.input_dim {
            return Err(Error::structure(
                "input_dim",
                format!(
                    "domain map has {} axes, network {}",
                    map.input_dim(),
                    self.spec.input_dim
                ),
            ));
        }
        self.domain = Some(map);
        Ok(self)
    }

    /// Parameters in declaration order: per layer, weights row-major then biases.
    pub fn parameters(&self) -> Vec<f64> {
        flatten(&self.layers)
    }

    pub fn set_parameters(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.parameter_count() {
            return Err(Error::structure(
                "parameters",
                format!("{} values for {} parameters", values.len(), self.parameter_count()),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::range("parameter", "non-finite value"));
        }
        unflatten_into(&mut self.layers, values);
        Ok(())
    }

    fn check_batch(&self, batch: &ArrayView2<f64>) -> Result<()> {
        if batch.ncols() != self.spec.input_dim {
            return Err(Error::structure(
                "batch",
                format!("{} columns, network expects {}", batch.ncols(), self.spec.input_dim),
            ));
        }
        Ok(())
    }

    /// Rows with any coordinate outside the unit hypercube. Such queries are allowed
    /// but extrapolate beyond the training domain.
    pub fn out_of_range_rows(batch: ArrayView2<f64>) -> usize {
        batch
            .rows()
            .into_iter()
            .filter(|r| r.iter().any(|v| !(0.0..=1.0).contains(v)))
            .count()
    }

    fn trace(&self, x: ArrayView2<f64>) -> Trace {
        let omega0 = self.spec.omega0;
        let hidden = self.spec.hidden_layers;
        let mut inputs = Vec::with_capacity(hidden + 1);
        let mut phases = Vec::with_capacity(hidden);
        let mut act = x.to_owned();
        for l in 0..hidden {
            let input = if Some(l) == self.spec.skip_at {
                concatenate![Axis(1), act, x]
            } else {
                act
            };
            let layer = &self.layers[l];
            let mut phase = input.dot(&layer.weight.t());
            phase += &layer.bias;
            phase *= omega0;
            act = phase.mapv(f64::sin);
            inputs.push(input);
            phases.push(phase);
        }
        let head = &self.layers[hidden];
        let logits = act.dot(&head.weight.row(0)) + head.bias[0];
        let output = logits.mapv(sigmoid);
        inputs.push(act);
        Trace { inputs, phases, output }
    }

    /// Predictions for a batch of normalized coordinates, one row per query.
    pub fn forward(&self, batch: ArrayView2<f64>) -> Result<Array1<f64>> {
        self.check_batch(&batch)?;
        Ok(self.trace(batch).output)
    }

    /// Mean L1 loss of the batch and its exact gradient with respect to every
    /// parameter. The subgradient of `|r|` at `r = 0` is taken as 0.
    pub fn backward(&self, batch: ArrayView2<f64>, target: ArrayView1<f64>) -> Result<(f64, Gradients)> {
        self.check_batch(&batch)?;
        if target.len() != batch.nrows() {
            return Err(Error::structure(
                "target",
                format!("{} targets for {} rows", target.len(), batch.nrows()),
            ));
        }
        let n = batch.nrows();
        if n == 0 {
            return Err(Error::Config("empty batch".into()));
        }
        let trace = self.trace(batch);
        let loss = loss_l1(trace.output.view(), target)?;

        let hidden = self.spec.hidden_layers;
        let width = self.spec.hidden_width;
        let omega0 = self.spec.omega0;
        let inv_n = 1.0 / n as f64;
        // d loss / d logit
        let dlogit: Array1<f64> = ndarray::Zip::from(&trace.output)
            .and(&target)
            .map_collect(|&p, &t| sign(p - t) * inv_n * p * (1.0 - p));

        let mut grads: Vec<Dense> = Vec::with_capacity(hidden + 1);
        let last_act = &trace.inputs[hidden];
        let head = &self.layers[hidden];
        grads.push(Dense {
            weight: dlogit.dot(last_act).insert_axis(Axis(0)),
            bias: Array1::from_elem(1, dlogit.sum()),
        });
        let mut dact: Array2<f64> = dlogit.view().insert_axis(Axis(1)).dot(&head.weight);

        for l in (0..hidden).rev() {
            let mut dphase = trace.phases[l].mapv(|z| omega0 * z.cos());
            dphase *= &dact;
            let input = &trace.inputs[l];
            grads.push(Dense {
                weight: dphase.t().dot(input),
                bias: dphase.sum_axis(Axis(0)),
            });
            if l > 0 {
                let dinput = dphase.dot(&self.layers[l].weight);
                dact = if Some(l) == self.spec.skip_at {
                    dinput.slice(s![.., ..width]).to_owned()
                } else {
                    dinput
                };
            }
        }
        grads.reverse();
        Ok((loss, Gradients { layers: grads }))
    }
}

fn sigmoid(z: f64) -> f64 {
    (1.0 / (1.0 + (-z).exp())).clamp(OUTPUT_MARGIN, 1.0 - OUTPUT_MARGIN)
}

fn sign(r: f64) -> f64 {
    if r > 0.0 {
        1.0
    } else if r < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Mean absolute deviation.
pub fn loss_l1(pred: ArrayView1<f64>, target: ArrayView1<f64>) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::structure(
            "target",
            format!("{} predictions vs {} targets", pred.len(), target.len()),
        ));
    }
    if pred.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    let total: f64 = pred.iter().zip(target).map(|(p, t)| (p - t).abs()).sum();
    Ok(total / pred.len() as f64)
}

pub(crate) fn flatten(layers: &[Dense]) -> Vec<f64> {
    let mut out = Vec::new();
    for d in layers {
        out.extend(d.weight.iter());
        out.extend(d.bias.iter());
    }
    out
}

pub(crate) fn unflatten_into(layers: &mut [Dense], values: &[f64]) {
    let mut it = values.iter();
    for d in layers {
        d.weight
            .iter_mut()
            .for_each(|w| *w = *it.next().expect("length checked"));
        d.bias.iter_mut().for_each(|b| *b = *it.next().expect("length checked"));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array};

    fn random_batch(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Array2<f64> {
        Array::from_shape_simple_fn((n, d), || rng.gen::<f64>())
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let a = init_network(3, 4, 16, 30.0, 7).unwrap();
        let b = init_network(3, 4, 16, 30.0, 7).unwrap();
        assert_eq!(a.parameters(), b.parameters());
        let c = init_network(3, 4, 16, 30.0, 8).unwrap();
        assert_ne!(a.parameters(), c.parameters());
        assert!(a.layers()[0].weight.iter().all(|w| w.abs() <= 1.0 / 3.0));
        let bound = (6.0f64 / 16.0).sqrt() / 30.0;
        assert!(a.layers()[1].weight.iter().all(|w| w.abs() <= bound));
        assert!(a.layers().iter().all(|d| d.bias.iter().all(|&b| b == 0.0)));
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(init_network(3, 2, 8, 0.0, 0).is_err());
        assert!(init_network(3, 2, 8, -1.0, 0).is_err());
        assert!(init_network(0, 2, 8, 30.0, 0).is_err());
        let mut spec = NetworkSpec::new(3, 3, 8, 30.0);
        spec.skip_at = Some(3);
        assert!(NeuralField::init(spec, 0).is_err());
    }

    #[test]
    fn parameter_count_by_hand() {
        // 2 hidden layers of width 4, input 5, no skip (only two hidden layers):
        // 5*4+4 + 4*4+4 + 4*1+1 = 24 + 20 + 5.
        let spec = NetworkSpec::new(5, 2, 4, 30.0);
        assert_eq!(spec.skip_at, None);
        assert_eq!(spec.parameter_count(), 49);
        // Three hidden layers: the third takes width + input = 9 inputs.
        let spec = NetworkSpec::new(5, 3, 4, 30.0);
        assert_eq!(spec.layer_shapes(), vec![(4, 5), (4, 4), (4, 9), (1, 4)]);
        assert_eq!(spec.parameter_count(), 24 + 20 + 40 + 5);
        let standard = NetworkSpec::standard(5);
        assert_eq!(standard.layer_shapes()[2], (512, 517));
        assert_eq!(standard.parameter_count(), 1_056_769);
    }

    #[test]
    fn zero_network_predicts_half() {
        let net = NeuralField::zeros(NetworkSpec::new(3, 3, 8, 30.0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = net.forward(random_batch(&mut rng, 10, 3).view()).unwrap();
        assert!(out.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn single_unit_closed_form() {
        let spec = NetworkSpec::new(1, 1, 1, 30.0);
        let layers = vec![
            Dense {
                weight: array![[0.013]],
                bias: array![0.0],
            },
            Dense {
                weight: array![[1.7]],
                bias: array![0.0],
            },
        ];
        let net = NeuralField::from_layers(spec, layers, None).unwrap();
        for u in [0.0, 0.25, 0.8] {
            let got = net.forward(array![[u]].view()).unwrap()[0];
            let want = 1.0 / (1.0 + (-1.7 * (30.0f64 * 0.013 * u).sin()).exp());
            assert!((got - want).abs() < 1e-15);
        }
    }

    #[test]
    fn identical_rows_identical_outputs() {
        let net = init_network(3, 3, 16, 30.0, 1).unwrap();
        let row = array![0.1, 0.7, 0.3];
        let batch = Array2::from_shape_fn((6, 3), |(_, j)| row[j]);
        let out = net.forward(batch.view()).unwrap();
        assert!(out.iter().all(|&v| v == out[0]));
        assert!(net.forward(Array2::zeros((2, 4)).view()).is_err());
    }

    #[test]
    fn output_strictly_inside_unit_interval() {
        let mut net = init_network(2, 2, 4, 30.0, 0).unwrap();
        let n = net.parameter_count();
        net.set_parameters(&vec![1e3; n]).unwrap();
        let out = net.forward(array![[0.3, 0.9], [1e6, -1e6]].view()).unwrap();
        assert!(out.iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn loss_examples() {
        let a = array![0.1, 0.5, 0.9];
        assert_eq!(loss_l1(a.view(), a.view()).unwrap(), 0.0);
        let b = a.mapv(|v| v - 0.25);
        assert!((loss_l1(a.view(), b.view()).unwrap() - 0.25).abs() < 1e-15);
        let p = array![0.3, 0.1, 0.8, 0.55, 0.2];
        let t = array![0.25, 0.4, 0.8, 0.9, 0.0];
        let manual = (0.05 + 0.3 + 0.0 + 0.35 + 0.2) / 5.0;
        assert!((loss_l1(p.view(), t.view()).unwrap() - manual).abs() < 1e-15);
        assert!(loss_l1(array![].view(), array![].view()).is_err());
        assert!(loss_l1(a.view(), array![1.0].view()).is_err());
    }

    #[test]
    fn exact_fit_has_zero_gradient() {
        let net = init_network(3, 3, 8, 30.0, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_batch(&mut rng, 12, 3);
        let y = net.forward(x.view()).unwrap();
        let (loss, g) = net.backward(x.view(), y.view()).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(g.max_abs(), 0.0);
    }

    #[test]
    fn duplicated_batch_keeps_gradients() {
        let net = init_network(3, 3, 8, 30.0, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_batch(&mut rng, 9, 3);
        let y = Array1::from_shape_simple_fn(9, || rng.gen::<f64>());
        let (_, g1) = net.backward(x.view(), y.view()).unwrap();
        let x2 = concatenate![Axis(0), x, x];
        let y2 = concatenate![Axis(0), y, y];
        let (_, g2) = net.backward(x2.view(), y2.view()).unwrap();
        for (a, b) in flatten(&g1.layers).iter().zip(flatten(&g2.layers)) {
            assert!((a - b).abs() <= 1e-14 * a.abs().max(1e-3), "{a} vs {b}");
        }
    }

    /// Central differences of the mean L1 loss, parameter by parameter.
    fn finite_difference(net: &NeuralField, x: &Array2<f64>, y: &Array1<f64>, h: f64) -> Vec<f64> {
        let base = net.parameters();
        let mut probe = net.clone();
        let loss_at = |probe: &mut NeuralField, p: &[f64]| {
            probe.set_parameters(p).unwrap();
            let pred = probe.forward(x.view()).unwrap();
            pred.iter().zip(y).map(|(a, b)| (a - b).abs()).sum::<f64>() / y.len() as f64
        };
        (0..base.len())
            .map(|i| {
                let mut p = base.clone();
                p[i] = base[i] + h;
                let up = loss_at(&mut probe, &p);
                p[i] = base[i] - h;
                let down = loss_at(&mut probe, &p);
                (up - down) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let net = NeuralField::init(NetworkSpec::new(3, 3, 8, 30.0), 5).unwrap();
        let x = random_batch(&mut rng, 6, 3);
        // Targets well away from predictions keep every residual off the kink.
        let y = Array1::from_shape_simple_fn(6, || if rng.gen_bool(0.5) { 0.0 } else { 1.0 });
        let (_, g) = net.backward(x.view(), y.view()).unwrap();
        let analytic = flatten(&g.layers);
        let numeric = finite_difference(&net, &x, &y, 1e-5);
        let scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (a, n) in analytic.iter().zip(&numeric) {
            let rel = (a - n).abs() / n.abs().max(1e-3 * scale);
            assert!(rel < 1e-4, "analytic {a} numeric {n}");
        }
    }
}
