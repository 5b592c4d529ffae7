//! Checkpoint file: a text manifest of named f32 tensors followed by a blank
//! line and their little-endian payload, in manifest order.
//!
//! ```text
//! vocal-style checkpoint v1
//! @seed 7
//! @epoch 3
//! @step 120
//! @model.gru_hidden 128
//! frontend.conv0.weight	f32	16x1x7
//! ...
//!
//! <payload>
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::Adam;
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::nn::Tensor;

const MAGIC: &str = "vocal-style checkpoint v1";

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub seed: u64,
    /// Completed epochs.
    pub epoch: usize,
    /// Global step counter.
    pub step: u64,
    pub optimizer: Option<Adam>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub state: TrainState,
}

fn shape_str(shape: &[usize]) -> String {
    shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x")
}

/// Every stored tensor in file order.
fn layout(model: &Model, optimizer: Option<&Adam>) -> Vec<(String, Vec<usize>)> {
    let mut out: Vec<(String, Vec<usize>)> = model
        .tensors()
        .into_iter()
        .chain(model.buffers())
        .map(|(n, t)| (n, t.shape.clone()))
        .collect();
    if let Some(opt) = optimizer {
        for (prefix, m) in [("adam.m.", &opt.m), ("adam.v.", &opt.v)] {
            out.extend(m.tensors().into_iter().map(|(n, t)| (format!("{prefix}{n}"), t.shape.clone())));
        }
    }
    out
}

fn stored<'a>(ck: &'a Checkpoint) -> Vec<&'a Tensor> {
    let mut out: Vec<&Tensor> = ck
        .model
        .tensors()
        .into_iter()
        .chain(ck.model.buffers())
        .map(|(_, t)| t)
        .collect();
    if let Some(opt) = &ck.state.optimizer {
        out.extend(opt.m.tensors().into_iter().map(|(_, t)| t));
        out.extend(opt.v.tensors().into_iter().map(|(_, t)| t));
    }
    out
}

pub fn save_checkpoint(path: impl AsRef<Path>, ck: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    let mut head = format!(
        "{MAGIC}\n@seed {}\n@epoch {}\n@step {}\n",
        ck.state.seed, ck.state.epoch, ck.state.step
    );
    if let Some(opt) = &ck.state.optimizer {
        head.push_str(&format!("@adam_t {}\n@adam_lr {}\n", opt.t, opt.learning_rate));
    }
    for (k, v) in ck.model.config.to_pairs() {
        head.push_str(&format!("@model.{k} {v}\n"));
    }
    for (name, shape) in layout(&ck.model, ck.state.optimizer.as_ref()) {
        head.push_str(&format!("{name}\tf32\t{}\n", shape_str(&shape)));
    }
    head.push('\n');
    let mut bytes = head.into_bytes();
    for t in stored(ck) {
        for &x in &t.data {
            bytes.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn meta<T: std::str::FromStr>(meta: &BTreeMap<String, String>, key: &str) -> Result<T> {
    let v = meta
        .get(key)
        .ok_or_else(|| Error::Checkpoint(format!("missing @{key}")))?;
    v.parse()
        .map_err(|_| Error::Checkpoint(format!("bad value for @{key}: {v:?}")))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let split = bytes
        .windows(2)
        .position(|w| w == b"\n\n")
        .ok_or_else(|| Error::Checkpoint("no header terminator".into()))?;
    let head = std::str::from_utf8(&bytes[..split]).map_err(|_| Error::Checkpoint("header is not UTF-8".into()))?;
    let payload = &bytes[split + 2..];
    let mut lines = head.lines();
    if lines.next() != Some(MAGIC) {
        return Err(Error::Checkpoint(format!("expected first line {MAGIC:?}")));
    }
    let mut fields = BTreeMap::new();
    let mut model_pairs = BTreeMap::new();
    let mut entries = Vec::new();
    for line in lines {
        if let Some(rest) = line.strip_prefix('@') {
            let (k, v) = rest
                .split_once(' ')
                .ok_or_else(|| Error::Checkpoint(format!("bad meta line {line:?}")))?;
            match k.strip_prefix("model.") {
                Some(mk) => model_pairs.insert(mk.to_string(), v.to_string()),
                None => fields.insert(k.to_string(), v.to_string()),
            };
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 || cols[1] != "f32" {
            return Err(Error::Checkpoint(format!("bad tensor line {line:?}")));
        }
        let shape = cols[2]
            .split('x')
            .map(|d| d.parse::<usize>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| Error::CheckpointParam {
                name: cols[0].into(),
                reason: format!("bad shape {:?}", cols[2]),
            })?;
        entries.push((cols[0].to_string(), shape));
    }

    let config = ModelConfig::from_pairs(&model_pairs)?;
    let mut model = Model::init(config, 0)?;
    let optimizer = match fields.get("adam_t") {
        Some(_) => {
            let mut opt = Adam::new(&model, meta(&fields, "adam_lr")?);
            opt.t = meta(&fields, "adam_t")?;
            Some(opt)
        }
        None => None,
    };
    let expected = layout(&model, optimizer.as_ref());
    for (i, (name, shape)) in expected.iter().enumerate() {
        match entries.get(i) {
            None => {
                return Err(Error::CheckpointParam {
                    name: name.clone(),
                    reason: "missing".into(),
                })
            }
            Some((n, _)) if n != name => {
                return Err(Error::CheckpointParam {
                    name: n.clone(),
                    reason: format!("unexpected; architecture expects {name} here"),
                })
            }
            Some((_, s)) if s != shape => {
                return Err(Error::CheckpointParam {
                    name: name.clone(),
                    reason: format!("shape {} does not match architecture {}", shape_str(s), shape_str(shape)),
                })
            }
            _ => {}
        }
    }
    if let Some((extra, _)) = entries.get(expected.len()) {
        return Err(Error::CheckpointParam {
            name: extra.clone(),
            reason: "not part of the architecture".into(),
        });
    }
    let numel: usize = expected.iter().map(|(_, s)| s.iter().product::<usize>()).sum();
    if payload.len() != 4 * numel {
        return Err(Error::PayloadLength {
            expected: 4 * numel,
            found: payload.len(),
        });
    }

    let mut values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64);
    let mut fill = |t: &mut Tensor| t.data.iter_mut().for_each(|x| *x = values.next().expect("length checked"));
    for (_, t) in model.tensors_mut() {
        fill(t);
    }
    for (_, t) in model.buffers_mut() {
        fill(t);
    }
    let mut optimizer = optimizer;
    if let Some(opt) = optimizer.as_mut() {
        for (_, t) in opt.m.tensors_mut() {
            fill(t);
        }
        for (_, t) in opt.v.tensors_mut() {
            fill(t);
        }
    }
    Ok(Checkpoint {
        model,
        state: TrainState {
            seed: meta(&fields, "seed")?,
            epoch: meta(&fields, "epoch")?,
            step: meta(&fields, "step")?,
            optimizer,
        },
    })
}
