//! Trainable parameter storage, SGD, checkpoints, and gradient checking.

use std::collections::BTreeMap;

use crate::error::Error;
use crate::rng::Rng;
use crate::Result;

use super::{Tape, TensorId};

/// One trainable array.
#[derive(Debug, Clone)]
pub struct Param {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    /// None until a backward pass has exported into it.
    pub grad: Option<Vec<f64>>,
}

/// Ordered map name -> parameter; iteration is lexicographic, which fixes
/// checkpoint layout and update order.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    map: BTreeMap<String, Param>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    pub fn insert(&mut self, name: &str, shape: &[usize], data: Vec<f64>) {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.map.insert(
            name.to_string(),
            Param {
                shape: shape.to_vec(),
                data,
                grad: None,
            },
        );
    }

    /// Uniform(-bound, bound) with the Xavier/Glorot bound
    /// sqrt(6 / (fan_in + fan_out)).
    pub fn insert_xavier(&mut self, name: &str, shape: &[usize], fan: (usize, usize), rng: &mut Rng) {
        let n: usize = shape.iter().product();
        let bound = (6.0 / (fan.0 + fan.1) as f64).sqrt();
        let data = (0..n).map(|_| rng.range_f64(-bound, bound)).collect();
        self.insert(name, shape, data);
    }

    pub fn insert_zeros(&mut self, name: &str, shape: &[usize]) {
        let n: usize = shape.iter().product();
        self.insert(name, shape, vec![0.0; n]);
    }

    pub fn insert_const(&mut self, name: &str, shape: &[usize], value: f64) {
        let n: usize = shape.iter().product();
        self.insert(name, shape, vec![value; n]);
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.map.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.map.get_mut(name)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Param)> {
        self.map.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.map.keys()
    }

    /// Count of scalar coordinates across all parameters.
    pub fn coord_count(&self) -> usize {
        self.map.values().map(|p| p.data.len()).sum()
    }

    /// Zero every gradient buffer (allocating missing ones).
    pub fn zero_grads(&mut self) {
        for p in self.map.values_mut() {
            match &mut p.grad {
                Some(g) => g.fill(0.0),
                None => p.grad = Some(vec![0.0; p.data.len()]),
            }
        }
    }

    /// Global L2 norm of all gradients.
    pub fn grad_norm(&self) -> f64 {
        self.map
            .values()
            .filter_map(|p| p.grad.as_ref())
            .flat_map(|g| g.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// Scale all gradients down so the global L2 norm is at most `max_norm`.
    pub fn clip_grad_norm(&mut self, max_norm: f64) {
        let norm = self.grad_norm();
        if norm > max_norm && norm > 0.0 {
            let scale = max_norm / norm;
            for p in self.map.values_mut() {
                if let Some(g) = &mut p.grad {
                    for v in g.iter_mut() {
                        *v *= scale;
                    }
                }
            }
        }
    }
}

/// p <- p - lr * grad for every parameter, then zero the gradients.
/// Errors if any parameter has never received a gradient.
pub fn sgd_step(params: &mut ParamSet, lr: f64) -> Result<()> {
    if let Some((name, _)) = params.map.iter().find(|(_, p)| p.grad.is_none()) {
        return Err(Error::Invalid(format!(
            "sgd_step: parameter {name:?} has no gradient (backward not run?)"
        )));
    }
    for p in params.map.values_mut() {
        let g = p.grad.as_mut().expect("checked above");
        for (x, gv) in p.data.iter_mut().zip(g.iter()) {
            *x -= lr * *gv;
        }
        g.fill(0.0);
    }
    Ok(())
}

// ---- checkpoint format -----------------------------------------------------
//
// magic "RKPT", version byte 1, then a text manifest with one record per
// line: `name f32 d0 d1 ...`, a single NUL separator, and the raw
// little-endian IEEE-754 32-bit arrays concatenated in manifest order.

const MAGIC: &[u8; 4] = b"RKPT";
const VERSION: u8 = 1;

impl ParamSet {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        for (name, p) in &self.map {
            let dims: Vec<String> = p.shape.iter().map(|d| d.to_string()).collect();
            out.extend_from_slice(format!("{} f32 {}\n", name, dims.join(" ")).as_bytes());
        }
        out.push(0);
        for p in self.map.values() {
            for v in &p.data {
                out.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<ParamSet> {
        if bytes.len() < 5 || &bytes[0..4] != MAGIC {
            return Err(Error::Checkpoint("missing RKPT magic".into()));
        }
        if bytes[4] != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {}",
                bytes[4]
            )));
        }
        let sep = bytes[5..]
            .iter()
            .position(|&b| b == 0)
            .ok_or_else(|| Error::Checkpoint("missing manifest separator".into()))?
            + 5;
        let manifest = std::str::from_utf8(&bytes[5..sep])
            .map_err(|_| Error::Checkpoint("manifest is not utf-8".into()))?;
        let mut records = Vec::new();
        for line in manifest.lines() {
            if line.is_empty() {
                continue;
            }
            let mut fields = line.split(' ');
            let name = fields
                .next()
                .ok_or_else(|| Error::Checkpoint("empty manifest record".into()))?;
            let dtype = fields
                .next()
                .ok_or_else(|| Error::Checkpoint(format!("record {name:?} missing dtype")))?;
            if dtype != "f32" {
                return Err(Error::Checkpoint(format!(
                    "record {name:?} has unsupported dtype {dtype:?}"
                )));
            }
            let shape: Vec<usize> = fields
                .map(|d| {
                    d.parse::<usize>()
                        .map_err(|_| Error::Checkpoint(format!("bad dim {d:?} in {name:?}")))
                })
                .collect::<Result<_>>()?;
            records.push((name.to_string(), shape));
        }
        let mut set = ParamSet::new();
        let mut cursor = sep + 1;
        for (name, shape) in records {
            let n: usize = shape.iter().product();
            let need = n * 4;
            if cursor + need > bytes.len() {
                return Err(Error::Checkpoint(format!(
                    "payload truncated reading {name:?}"
                )));
            }
            let data: Vec<f64> = bytes[cursor..cursor + need]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect();
            cursor += need;
            set.insert(&name, &shape, data);
        }
        if cursor != bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes after payload",
                bytes.len() - cursor
            )));
        }
        Ok(set)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<ParamSet> {
        ParamSet::from_bytes(&std::fs::read(path)?)
    }
}

/// Central-difference gradient check.
///
/// `build` must construct the scalar loss for the current parameter values;
/// it is evaluated once with a backward pass for the analytic gradient and
/// twice per coordinate for the numeric one. Returns the maximum relative
/// error |a - n| / max(1e-8, |a| + |n|).
pub fn grad_check<F>(mut build: F, params: &mut ParamSet, eps: f64) -> Result<f64>
where
    F: FnMut(&mut Tape, &ParamSet) -> Result<TensorId>,
{
    let mut tape = Tape::new();
    let loss = build(&mut tape, params)?;
    tape.backward(loss)?;
    let analytic = tape.param_grads();

    let names: Vec<String> = params.names().cloned().collect();
    let mut max_rel: f64 = 0.0;
    for name in &names {
        let coords = params.get(name).expect("own name").data.len();
        for k in 0..coords {
            let orig = params.get(name).unwrap().data[k];

            params.get_mut(name).unwrap().data[k] = orig + eps;
            let mut tp = Tape::new();
            let lp = build(&mut tp, params)?;
            let fp = tp.scalar(lp);

            params.get_mut(name).unwrap().data[k] = orig - eps;
            let mut tm = Tape::new();
            let lm = build(&mut tm, params)?;
            let fm = tm.scalar(lm);

            params.get_mut(name).unwrap().data[k] = orig;

            let numeric = (fp - fm) / (2.0 * eps);
            let a = analytic.get(name).map_or(0.0, |g| g[k]);
            let rel = (a - numeric).abs() / f64::max(1e-8, a.abs() + numeric.abs());
            max_rel = max_rel.max(rel);
        }
    }
    Ok(max_rel)
}
