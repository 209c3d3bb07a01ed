//! Analytic gradients against five-point central finite differences.
//!
//! Differences are always evaluated in 64-bit arithmetic on the same
//! parameter values, so in 32-bit mode the comparison measures the error of
//! the 32-bit analytic gradient alone. Elements whose perturbations move any
//! rectifier input across zero are skipped, since the loss has a kink there.

use ndarray::{Array2, NdFloat};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::network::{DropoutMasks, Net};
use crate::spec::{Layout, NetworkSpec};
use crate::NeuralError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    pub checked: usize,
    pub skipped: usize,
    pub max_abs_diff: f64,
    /// `max |analytic - numeric|` over the largest gradient magnitude in the
    /// tensor's layer, floored at [`ZERO_FLOOR`] times the network's.
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorCheck>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.tensors.iter().map(|t| t.rel_error).fold(0.0, f64::max)
    }

    pub fn find(&self, name: &str) -> Option<&TensorCheck> {
        self.tensors.iter().find(|t| t.name == name)
    }
}

/// Layers whose gradients fall below this share of the network-wide scale
/// are judged against that scale: their values come from cancellation of far
/// larger upstream terms, below the resolution of either precision.
pub const ZERO_FLOOR: f64 = 1e-2;

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    pub batch: usize,
    pub seed: u64,
    pub step: f64,
    /// Elements sampled per tensor; smaller tensors are checked in full.
    pub per_tensor: usize,
    pub precision: Precision,
}

impl GradCheckConfig {
    pub fn f32(seed: u64) -> Self {
        GradCheckConfig {
            batch: 4,
            seed,
            step: 1e-5,
            per_tensor: 40,
            precision: Precision::F32,
        }
    }

    pub fn f64(seed: u64) -> Self {
        GradCheckConfig {
            precision: Precision::F64,
            ..GradCheckConfig::f32(seed)
        }
    }
}

/// Random parameters with non-trivial scales and shifts, inputs, labels and masks.
fn fixture(spec: &NetworkSpec, cfg: &GradCheckConfig) -> (Vec<f32>, Array2<f32>, Vec<f32>, DropoutMasks<f32>) {
    let layout = Layout::new(spec);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = vec![0.0f32; layout.param_len];
    for slot in &layout.params {
        let scale = if slot.name.ends_with("gamma") {
            None
        } else {
            Some((3.0 / slot.rows.max(1) as f32).sqrt())
        };
        for p in &mut params[slot.range()] {
            *p = match scale {
                None => rng.random_range(0.5..1.5),
                Some(s) => rng.random_range(-s..s),
            };
        }
    }
    let x = Array2::from_shape_simple_fn((cfg.batch * spec.frames, spec.channels), || {
        rng.random_range(-1.0f32..1.0)
    });
    let labels = (0..cfg.batch).map(|i| (i % 2) as f32).collect();
    let masks = DropoutMasks::sample(spec, cfg.batch, &mut rng);
    (params, x, labels, masks)
}

fn analytic<T: NdFloat>(
    spec: &NetworkSpec,
    layout: &Layout,
    params: &[f32],
    x: &Array2<f32>,
    labels: &[f32],
    masks: &DropoutMasks<f32>,
) -> Result<Vec<f64>, NeuralError> {
    let up = |v: &f32| T::from(*v).expect("finite");
    let params: Vec<T> = params.iter().map(up).collect();
    let running = vec![T::one(); layout.running_len];
    let net = Net::new(spec, layout, &params, &running);
    let x = x.mapv(|v| up(&v));
    let labels: Vec<T> = labels.iter().map(up).collect();
    let (_, grad, _) = net.gradients(x.view(), &labels, &masks.cast())?;
    Ok(grad.into_iter().map(|g| g.to_f64().expect("finite")).collect())
}

fn signs(pre: &[Array2<f64>]) -> Vec<bool> {
    pre.iter().flat_map(|a| a.iter().map(|&v| v > 0.0)).collect()
}

pub fn check_gradients(spec: &NetworkSpec, cfg: &GradCheckConfig) -> Result<GradCheckReport, NeuralError> {
    spec.validate()?;
    let layout = Layout::new(spec);
    let (params, x, labels, masks) = fixture(spec, cfg);
    let grad = match cfg.precision {
        Precision::F32 => analytic::<f32>(spec, &layout, &params, &x, &labels, &masks)?,
        Precision::F64 => analytic::<f64>(spec, &layout, &params, &x, &labels, &masks)?,
    };

    let mut p64: Vec<f64> = params.iter().map(|&v| v as f64).collect();
    let running = vec![1.0f64; layout.running_len];
    let x64 = x.mapv(|v| v as f64);
    let labels64: Vec<f64> = labels.iter().map(|&v| v as f64).collect();
    let masks64: DropoutMasks<f64> = masks.cast();
    let mut pick = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);

    let mut tensors = Vec::new();
    let mut scales = Vec::new();
    for slot in &layout.params {
        let idx: Vec<usize> = if slot.len() <= cfg.per_tensor {
            (0..slot.len()).collect()
        } else {
            sample(&mut pick, slot.len(), cfg.per_tensor).into_vec()
        };
        let mut check = TensorCheck {
            name: slot.name.clone(),
            checked: 0,
            skipped: 0,
            max_abs_diff: 0.0,
            rel_error: 0.0,
        };
        let (mut max_num, mut max_ana) = (0.0f64, 0.0f64);
        for i in idx {
            let j = slot.offset + i;
            let orig = p64[j];
            let mut eval = |v: f64| -> Result<(f64, Vec<bool>), NeuralError> {
                p64[j] = v;
                let net = Net::new(spec, &layout, &p64, &running);
                let loss = net.loss(x64.view(), &labels64, &masks64)?;
                let pre = net.pre_activations(x64.view(), &masks64)?;
                Ok((loss, signs(&pre)))
            };
            let h = cfg.step;
            let (p1, s_p1) = eval(orig + h)?;
            let (m1, s_m1) = eval(orig - h)?;
            let (p2, s_p2) = eval(orig + 2.0 * h)?;
            let (m2, s_m2) = eval(orig - 2.0 * h)?;
            p64[j] = orig;
            if s_p1 != s_m1 || s_p2 != s_p1 || s_m2 != s_p1 {
                check.skipped += 1;
                continue;
            }
            let numeric = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h);
            let a = grad[j];
            check.checked += 1;
            check.max_abs_diff = check.max_abs_diff.max((a - numeric).abs());
            max_num = max_num.max(numeric.abs());
            max_ana = max_ana.max(a.abs());
        }
        scales.push(max_num.max(max_ana));
        tensors.push(check);
    }
    // Biases feeding a batch normalisation have an exact zero gradient, so
    // their own scale is round-off only.
    let layer = |name: &str| name.split('.').next().unwrap_or("").to_owned();
    let mut layer_scale = std::collections::HashMap::new();
    for (t, &scale) in tensors.iter().zip(&scales) {
        let entry = layer_scale.entry(layer(&t.name)).or_insert(0.0f64);
        *entry = entry.max(scale);
    }
    let network = scales.iter().copied().fold(0.0, f64::max);
    for t in &mut tensors {
        t.rel_error = t.max_abs_diff / layer_scale[&layer(&t.name)].max(ZERO_FLOOR * network).max(1e-12);
    }
    Ok(GradCheckReport { tensors })
}
