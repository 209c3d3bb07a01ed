use std::io::Write;
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use gma_core::features::{FeatureMatrix, FmClass};

use crate::network::{BatchGradients, DropoutMasks, Mode, Net, StageStats, BN_MOMENTUM};
use crate::spec::{Layout, NetworkSpec};
use crate::NeuralError;

const MAGIC: &[u8; 4] = b"GMAW";
pub const WEIGHTS_VERSION: u16 = 1;

/// Trainable parameters and running statistics of one network, 32-bit.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    spec: NetworkSpec,
    layout: Layout,
    params: Vec<f32>,
    running: Vec<f32>,
}

impl ModelWeights {
    /// All parameters zero, running means 0 and variances 1.
    pub fn zeros(spec: &NetworkSpec) -> Result<Self, NeuralError> {
        spec.validate()?;
        let layout = Layout::new(spec);
        let mut running = vec![0.0; layout.running_len];
        for stage in 0..=spec.fc.len() {
            running[layout.stats(stage)[1].range()].fill(1.0);
        }
        Ok(ModelWeights {
            spec: spec.clone(),
            params: vec![0.0; layout.param_len],
            running,
            layout,
        })
    }

    /// Glorot-uniform kernels and weights, zero biases and shifts, unit scales.
    pub fn init(spec: &NetworkSpec, seed: u64) -> Result<Self, NeuralError> {
        let mut w = ModelWeights::zeros(spec)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fill = |params: &mut [f32], fan_in: usize, fan_out: usize| {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt() as f32;
            for p in params {
                *p = rng.random_range(-limit..limit);
            }
        };
        let layout = w.layout.clone();
        let [kernel, _, gamma, _] = layout.conv();
        fill(
            &mut w.params[kernel.range()],
            spec.filter_len * spec.channels,
            spec.filter_len * spec.filters,
        );
        w.params[gamma.range()].fill(1.0);
        for i in 0..spec.fc.len() {
            let [weight, _, gamma, _] = layout.dense(i);
            fill(&mut w.params[weight.range()], weight.rows, weight.cols);
            w.params[gamma.range()].fill(1.0);
        }
        let [out, _] = layout.output();
        fill(&mut w.params[out.range()], out.rows, 1);
        Ok(w)
    }

    pub fn from_parts(spec: &NetworkSpec, params: Vec<f32>, running: Vec<f32>) -> Result<Self, NeuralError> {
        spec.validate()?;
        let layout = Layout::new(spec);
        if params.len() != layout.param_len || running.len() != layout.running_len {
            return Err(NeuralError::ShapeMismatch {
                expected: format!("{} params, {} running", layout.param_len, layout.running_len),
                found: format!("{} params, {} running", params.len(), running.len()),
            });
        }
        Ok(ModelWeights {
            spec: spec.clone(),
            layout,
            params,
            running,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn params(&self) -> &[f32] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f32] {
        &mut self.params
    }

    pub fn running(&self) -> &[f32] {
        &self.running
    }

    pub fn running_mut(&mut self) -> &mut [f32] {
        &mut self.running
    }

    /// Tensor by slot name, e.g. `dense0.weight` or `conv.bn.var`.
    pub fn tensor(&self, name: &str) -> Option<&[f32]> {
        let slot = self.layout.find(name)?;
        if self.layout.params.iter().any(|s| s.name == name) {
            Some(&self.params[slot.range()])
        } else {
            Some(&self.running[slot.range()])
        }
    }

    pub fn net(&self) -> Net<'_, f32> {
        Net::new(&self.spec, &self.layout, &self.params, &self.running)
    }

    /// Folds batch statistics into the running statistics.
    pub fn update_running(&mut self, stats: &[StageStats<f32>]) {
        let m = BN_MOMENTUM as f32;
        for (stage, st) in stats.iter().enumerate() {
            let [mean, var] = self.layout.stats(stage);
            for (r, &b) in self.running[mean.range()].iter_mut().zip(&st.mean) {
                *r = m * *r + (1.0 - m) * b;
            }
            for (r, &b) in self.running[var.range()].iter_mut().zip(&st.var) {
                *r = m * *r + (1.0 - m) * b;
            }
        }
    }

    /// Eval-mode probabilities of FM+.
    pub fn predict(&self, inputs: &[&FeatureMatrix]) -> Result<Vec<f32>, NeuralError> {
        if inputs.is_empty() {
            return Ok(Vec::new());
        }
        let x = stack(inputs)?;
        let pass = self.net().forward(x.view(), Mode::Eval, None)?;
        Ok(pass.probs.to_vec())
    }

    /// FM+ iff the eval-mode probability exceeds 0.5.
    pub fn classify(&self, input: &FeatureMatrix) -> Result<FmClass, NeuralError> {
        Ok(decide(self.predict(&[input])?[0]))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let desc = self.spec.descriptor();
        let mut buf = Vec::with_capacity(4 * (self.params.len() + self.running.len()) + desc.len() + 32);
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&WEIGHTS_VERSION.to_le_bytes());
        buf.extend_from_slice(&(desc.len() as u32).to_le_bytes());
        buf.extend_from_slice(desc.as_bytes());
        for tensor in [&self.params, &self.running] {
            buf.extend_from_slice(&(tensor.len() as u32).to_le_bytes());
            for v in tensor.iter() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&buf);
        buf.extend_from_slice(&crc.to_le_bytes());
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, NeuralError> {
        let malformed = |m: &str| NeuralError::MalformedWeights(m.to_owned());
        if bytes.len() < 14 || &bytes[..4] != MAGIC {
            return Err(malformed("missing magic"));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != WEIGHTS_VERSION {
            return Err(NeuralError::VersionMismatch {
                expected: WEIGHTS_VERSION,
                found: version,
            });
        }
        let (body, trailer) = bytes.split_at(bytes.len() - 4);
        if crc32fast::hash(body) != u32::from_le_bytes(trailer.try_into().expect("4 bytes")) {
            return Err(NeuralError::ChecksumFailure);
        }
        let mut cursor = 6;
        let mut take = |n: usize| -> Result<&[u8], NeuralError> {
            let slice = body.get(cursor..cursor + n).ok_or_else(|| malformed("truncated"))?;
            cursor += n;
            Ok(slice)
        };
        let desc_len = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes")) as usize;
        let desc = std::str::from_utf8(take(desc_len)?).map_err(|_| malformed("descriptor not utf-8"))?;
        let spec = NetworkSpec::from_descriptor(desc)?;
        let mut tensors = Vec::new();
        for _ in 0..2 {
            let n = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes")) as usize;
            let raw = take(n * 4)?;
            tensors.push(
                raw.chunks_exact(4)
                    .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
                    .collect::<Vec<f32>>(),
            );
        }
        let running = tensors.pop().expect("two tensors");
        let params = tensors.pop().expect("two tensors");
        ModelWeights::from_parts(&spec, params, running)
    }

    pub fn save(&self, path: &Path) -> Result<(), NeuralError> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        f.sync_all()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, NeuralError> {
        ModelWeights::from_bytes(&std::fs::read(path)?)
    }

    /// Batch gradients in 32-bit arithmetic.
    pub fn gradients(
        &self,
        x: ArrayView2<f32>,
        labels: &[f32],
        masks: &DropoutMasks<f32>,
    ) -> Result<BatchGradients<f32>, NeuralError> {
        self.net().gradients(x, labels, masks)
    }
}

/// FM+ iff `p > 0.5`.
pub fn decide(p: f32) -> FmClass {
    if p > 0.5 {
        FmClass::Present
    } else {
        FmClass::Absent
    }
}

/// Stacks feature matrices row-wise into one batch.
pub fn stack(inputs: &[&FeatureMatrix]) -> Result<Array2<f32>, NeuralError> {
    let first = inputs.first().ok_or(NeuralError::EmptyBatch)?;
    let (rows, cols) = first.data().dim();
    let mut out = Array2::zeros((rows * inputs.len(), cols));
    for (i, m) in inputs.iter().enumerate() {
        if m.data().dim() != (rows, cols) {
            return Err(NeuralError::ShapeMismatch {
                expected: format!("{rows} x {cols}"),
                found: format!("{:?}", m.data().dim()),
            });
        }
        out.slice_mut(ndarray::s![i * rows..(i + 1) * rows, ..])
            .assign(m.data());
    }
    Ok(out)
}
