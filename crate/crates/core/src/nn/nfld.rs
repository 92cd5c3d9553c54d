//! NFLD model files.
//!
//! A plain-text header, one `key values...` line each, terminated by `end`:
//!
//! ```text
//! NFLD 1
//! input_dim 3
//! hidden_layers 3
//! hidden_width 64
//! skip_at 2
//! omega0 30
//! domain 0 1 0 1 0 360
//! params 8769
//! optimizer none
//! end
//! ```
//!
//! followed by the little-endian f64 parameters in layer order (weights row-major, then
//! biases). `domain` is `none` or one `lo hi` pair per input axis. Checkpoints replace
//! `optimizer none` with `optimizer <step> <epochs_done> <lr> <beta1> <beta2> <eps>
//! <weight_decay> <decoupled|coupled>` and append the first and second moments in the
//! same layout as the parameters.

use std::fs;
use std::path::Path;

use super::{flatten, unflatten_into, AdamConfig, AdamState, Gradients, NetworkSpec, NeuralField, WeightDecay};
use crate::error::{Error, Result};
use crate::sampler::{AxisMap, CoordinateMap};

const MAGIC: &str = "NFLD";
const MAX_HEADER: usize = 1 << 16;

/// Optimizer state saved alongside a network so training can resume.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingState {
    pub adam: AdamState,
    pub epochs_done: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub net: NeuralField,
    pub state: Option<TrainingState>,
}

fn bad(detail: impl Into<String>) -> Error {
    Error::format("NFLD", detail)
}

pub fn encode(net: &NeuralField, state: Option<&TrainingState>) -> Vec<u8> {
    let spec = net.spec();
    let mut h = format!("{MAGIC} 1\n");
    h += &format!("input_dim {}\n", spec.input_dim);
    h += &format!("hidden_layers {}\n", spec.hidden_layers);
    h += &format!("hidden_width {}\n", spec.hidden_width);
    match spec.skip_at {
        Some(s) => h += &format!("skip_at {s}\n"),
        None => h += "skip_at none\n",
    }
    h += &format!("omega0 {}\n", spec.omega0);
    match net.domain() {
        Some(map) => {
            h += "domain";
            for a in map.axes() {
                h += &format!(" {} {}", a.lo, a.hi);
            }
            h += "\n";
        }
        None => h += "domain none\n",
    }
    h += &format!("params {}\n", net.parameter_count());
    match state {
        Some(TrainingState { adam, epochs_done }) => {
            let c = adam.config;
            let mode = match c.decay_mode {
                WeightDecay::Decoupled => "decoupled",
                WeightDecay::Coupled => "coupled",
            };
            h += &format!(
                "optimizer {} {epochs_done} {} {} {} {} {} {mode}\n",
                adam.step, c.lr, c.beta1, c.beta2, c.eps, c.weight_decay
            );
        }
        None => h += "optimizer none\n",
    }
    h += "end\n";

    let mut out = h.into_bytes();
    let mut push = |values: Vec<f64>| {
        for v in values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    };
    push(net.parameters());
    if let Some(s) = state {
        push(flatten(&s.adam.m));
        push(flatten(&s.adam.v));
    }
    out
}

struct Header<'a> {
    lines: Vec<(&'a str, Vec<&'a str>)>,
}

impl<'a> Header<'a> {
    fn get(&self, key: &str) -> Result<&[&'a str]> {
        self.lines
            .iter()
            .find(|(k, _)| *k == key)
            .map(|(_, v)| v.as_slice())
            .ok_or_else(|| bad(format!("missing `{key}` line")))
    }

    fn single<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        match self.get(key)? {
            [v] => v.parse().map_err(|_| bad(format!("bad `{key}` value `{v}`"))),
            other => Err(bad(format!("`{key}` expects one value, found {}", other.len()))),
        }
    }
}

fn parse_f64(key: &str, v: &str) -> Result<f64> {
    v.parse().map_err(|_| bad(format!("bad `{key}` value `{v}`")))
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let marker = b"\nend\n";
    let end = bytes
        .windows(marker.len())
        .take(MAX_HEADER)
        .position(|w| w == marker)
        .ok_or_else(|| bad("header has no `end` line"))?;
    let text = std::str::from_utf8(&bytes[..end]).map_err(|_| bad("header is not ASCII"))?;
    let mut lines = text.lines();
    if lines.next() != Some("NFLD 1") {
        return Err(bad("missing `NFLD 1` signature"));
    }
    let header = Header {
        lines: lines
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                let mut t = l.split_ascii_whitespace();
                (t.next().unwrap_or(""), t.collect())
            })
            .collect(),
    };

    let skip_at = match header.get("skip_at")? {
        ["none"] => None,
        [v] => Some(v.parse().map_err(|_| bad(format!("bad `skip_at` value `{v}`")))?),
        _ => return Err(bad("`skip_at` expects one value")),
    };
    let spec = NetworkSpec {
        input_dim: header.single("input_dim")?,
        hidden_layers: header.single("hidden_layers")?,
        hidden_width: header.single("hidden_width")?,
        skip_at,
        omega0: header.single("omega0")?,
    };
    spec.validate().map_err(|e| bad(format!("invalid network: {e}")))?;

    let domain = match header.get("domain")? {
        ["none"] => None,
        values if values.len() == 2 * spec.input_dim => {
            let axes = values
                .chunks_exact(2)
                .map(|p| {
                    Ok(AxisMap {
                        lo: parse_f64("domain", p[0])?,
                        hi: parse_f64("domain", p[1])?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Some(CoordinateMap::new(axes).map_err(|e| bad(e.to_string()))?)
        }
        values => {
            return Err(bad(format!(
                "`domain` has {} values, expected {}",
                values.len(),
                2 * spec.input_dim
            )))
        }
    };

    let count: usize = header.single("params")?;
    if count != spec.parameter_count() {
        return Err(bad(format!(
            "header declares {count} parameters, layout has {}",
            spec.parameter_count()
        )));
    }
    let optimizer = match header.get("optimizer")? {
        ["none"] => None,
        [step, epochs, lr, b1, b2, eps, wd, mode] => {
            let decay_mode = match *mode {
                "decoupled" => WeightDecay::Decoupled,
                "coupled" => WeightDecay::Coupled,
                other => return Err(bad(format!("unknown decay mode `{other}`"))),
            };
            let config = AdamConfig {
                lr: parse_f64("optimizer", lr)?,
                beta1: parse_f64("optimizer", b1)?,
                beta2: parse_f64("optimizer", b2)?,
                eps: parse_f64("optimizer", eps)?,
                weight_decay: parse_f64("optimizer", wd)?,
                decay_mode,
            };
            config.validate().map_err(|e| bad(e.to_string()))?;
            let step: u64 = step.parse().map_err(|_| bad("bad optimizer step"))?;
            let epochs: usize = epochs.parse().map_err(|_| bad("bad optimizer epoch count"))?;
            Some((step, epochs, config))
        }
        _ => return Err(bad("`optimizer` expects `none` or eight values")),
    };

    let payload = &bytes[end + marker.len()..];
    let blocks = if optimizer.is_some() { 3 } else { 1 };
    if payload.len() != blocks * count * 8 {
        return Err(bad(format!(
            "payload has {} bytes, expected {}",
            payload.len(),
            blocks * count * 8
        )));
    }
    let values: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();

    let mut net = NeuralField::zeros(spec)?;
    net.set_parameters(&values[..count])
        .map_err(|e| bad(format!("parameters: {e}")))?;
    if let Some(map) = domain {
        net = net.with_domain(map)?;
    }
    let state = match optimizer {
        None => None,
        Some((step, epochs_done, config)) => {
            let mut m = Gradients::zeros_like(&net).layers;
            let mut v = m.clone();
            unflatten_into(&mut m, &values[count..2 * count]);
            unflatten_into(&mut v, &values[2 * count..]);
            Some(TrainingState {
                adam: AdamState { step, config, m, v },
                epochs_done,
            })
        }
    };
    Ok(Checkpoint { net, state })
}

pub fn save_model(path: impl AsRef<Path>, net: &NeuralField) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(net, None)).map_err(|e| Error::io(path, e))
}

pub fn save_checkpoint(path: impl AsRef<Path>, net: &NeuralField, state: &TrainingState) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(net, Some(state))).map_err(|e| Error::io(path, e))
}

/// Reads a model or checkpoint file.
pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<NeuralField> {
    load(path).map(|c| c.net)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{adam_step, init_network};
    use crate::sampler::{normalize_coords, AngleRanges};
    use crate::voxel::Lattice;
    use ndarray::{Array1, Array2};

    fn bound_net() -> NeuralField {
        let l = Lattice::new(&[8, 6], 0.25, &[-1.0, 0.5]).unwrap();
        let map = normalize_coords(&l, AngleRanges::default()).unwrap();
        init_network(3, 3, 16, 30.0, 4).unwrap().with_domain(map).unwrap()
    }

    fn bits(v: &[f64]) -> Vec<u64> {
        v.iter().map(|x| x.to_bits()).collect()
    }

    #[test]
    fn model_round_trip_is_bit_exact() {
        let net = bound_net();
        let back = decode(&encode(&net, None)).unwrap();
        assert!(back.state.is_none());
        assert_eq!(bits(&back.net.parameters()), bits(&net.parameters()));
        assert_eq!(back.net, net);
    }

    #[test]
    fn checkpoint_round_trip_keeps_moments() {
        let mut net = bound_net();
        let mut adam = AdamState::new(&net, AdamConfig::default()).unwrap();
        let x = Array2::from_shape_fn((8, 3), |(i, j)| (i * 3 + j) as f64 / 24.0);
        let y = Array1::from_shape_fn(8, |i| (i % 2) as f64);
        let (_, g) = net.backward(x.view(), y.view()).unwrap();
        adam_step(&mut net, &g, &mut adam).unwrap();
        let state = TrainingState { adam, epochs_done: 3 };
        let back = decode(&encode(&net, Some(&state))).unwrap();
        assert_eq!(back.net, net);
        assert_eq!(back.state.unwrap(), state);
    }

    #[test]
    fn header_is_plain_text() {
        let net = init_network(3, 2, 4, 30.0, 0).unwrap();
        let bytes = encode(&net, None);
        let text = "NFLD 1\ninput_dim 3\nhidden_layers 2\nhidden_width 4\nskip_at none\nomega0 30\n\
                    domain none\nparams 41\noptimizer none\nend\n";
        assert_eq!(&bytes[..text.len()], text.as_bytes());
        assert_eq!(bytes.len(), text.len() + 41 * 8);
    }

    #[test]
    fn rejects_corrupt_files() {
        let good = encode(&bound_net(), None);
        assert!(decode(&good[..good.len() - 1]).is_err());
        let split = good.windows(5).position(|w| w == b"\nend\n").unwrap() + 5;
        let (head, payload) = good.split_at(split);
        let head = std::str::from_utf8(head).unwrap();
        let swap = |from: &str, to: &str| {
            assert!(head.contains(from), "{from}");
            let mut bytes = head.replacen(from, to, 1).into_bytes();
            bytes.extend_from_slice(payload);
            decode(&bytes).is_err()
        };
        assert!(swap("NFLD 1", "NFLD 2"));
        assert!(swap("hidden_width 16", "hidden_width 17"));
        assert!(swap("omega0 30", "omega0 -1"));
        assert!(swap("skip_at 2", "skip_at 9"));
        assert!(decode(b"garbage").is_err());
    }
}
