use rand::Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

/// Named learnable tensors plus non-learnable buffers (e.g. running statistics).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    buffer_names: Vec<String>,
    buffers: Vec<Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, t: Tensor) -> ParamId {
        let name = name.into();
        assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.tensors.push(t);
        ParamId(self.tensors.len() - 1)
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, t: Tensor) -> usize {
        self.buffer_names.push(name.into());
        self.buffers.push(t);
        self.buffers.len() - 1
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn buffer(&self, i: usize) -> &Tensor {
        &self.buffers[i]
    }

    pub fn buffer_mut(&mut self, i: usize) -> &mut Tensor {
        &mut self.buffers[i]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    /// Parameters then buffers, buffers prefixed with `buffer:`.
    pub fn named_arrays(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> =
            self.names.iter().cloned().zip(self.tensors.iter()).collect();
        out.extend(
            self.buffer_names
                .iter()
                .map(|n| format!("buffer:{n}"))
                .zip(self.buffers.iter()),
        );
        out
    }

    /// Overwrites values from `(name, tensor)` pairs; every name must match in shape.
    pub fn load_named(&mut self, arrays: &[(String, Tensor)]) -> Result<()> {
        let mut seen = 0;
        for (name, t) in arrays {
            let slot = if let Some(b) = name.strip_prefix("buffer:") {
                self.buffer_names
                    .iter()
                    .position(|n| n == b)
                    .map(|i| &mut self.buffers[i])
            } else {
                self.names
                    .iter()
                    .position(|n| n == name)
                    .map(|i| &mut self.tensors[i])
            };
            let slot = slot.ok_or_else(|| Error::Checkpoint(format!("unexpected array `{name}`")))?;
            if slot.shape != t.shape {
                return Err(Error::Checkpoint(format!(
                    "array `{name}` has shape {:?}, model expects {:?}",
                    t.shape, slot.shape
                )));
            }
            slot.data.copy_from_slice(&t.data);
            seen += 1;
        }
        if seen != self.tensors.len() + self.buffers.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {seen} arrays, model has {}",
                self.tensors.len() + self.buffers.len()
            )));
        }
        Ok(())
    }

    /// SHA-256 over learnable parameters only.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for (n, t) in self.names.iter().zip(&self.tensors) {
            h.update(n.as_bytes());
            for v in &t.data {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

/// Normal(0, std) resampled outside two standard deviations.
pub fn trunc_normal(shape: &[usize], std: f64, rng: &mut impl Rng) -> Tensor {
    let normal = Normal::new(0.0, 1.0).unwrap();
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| loop {
            let z: f64 = normal.sample(rng);
            if z.abs() <= 2.0 {
                break z * std;
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data)
}

/// He-normal initialization for a layer with the given fan-in.
pub fn he_normal(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor {
    let std = (2.0 / fan_in as f64).sqrt();
    let normal = Normal::new(0.0, std).unwrap();
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| normal.sample(rng)).collect())
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &ParamSet, lr: f64) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors.iter().map(|t| vec![0.0; t.data.len()]).collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// One update from `(param, gradient)` pairs; parameters without a gradient are left alone.
    pub fn step(&mut self, params: &mut ParamSet, grads: &[(ParamId, Vec<f64>)]) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (id, g) in grads {
            let (m, v) = (&mut self.m[id.0], &mut self.v[id.0]);
            let w = &mut params.tensors[id.0].data;
            for i in 0..g.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                w[i] -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}
