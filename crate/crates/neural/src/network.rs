//! Forward and backward passes, generic over the float type so the same code
//! serves 32-bit training and a 64-bit checking mode.
//!
//! A batch is a `(B*T) x C` matrix: `B` samples of `T` frames stacked row-wise.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut2, Axis, NdFloat};
use rand::Rng;

use crate::spec::{Layout, NetworkSpec, Slot};
use crate::NeuralError;

pub const BN_EPSILON: f64 = 1e-5;
/// Weight of the old value in running-statistic updates.
pub const BN_MOMENTUM: f64 = 0.9;
pub const PROB_CLAMP: f64 = 1e-7;

/// Mean batch loss, gradient laid out like the parameters, and batch statistics.
pub type BatchGradients<T> = (T, Vec<T>, Vec<StageStats<T>>);

#[inline]
pub(crate) fn cst<T: NdFloat>(v: f64) -> T {
    T::from(v).expect("representable constant")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics and dropout masks.
    Train,
    /// Running statistics, no dropout.
    Eval,
}

/// Inverted-dropout multipliers: 0 for dropped units, `1 / (1 - rate)` for kept ones.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMasks<T> {
    /// `(B*T) x F`.
    pub conv: Array2<T>,
    /// `B x n_i` per dense layer.
    pub dense: Vec<Array2<T>>,
}

impl<T: NdFloat> DropoutMasks<T> {
    pub fn keep_all(spec: &NetworkSpec, batch: usize) -> Self {
        DropoutMasks {
            conv: Array2::ones((batch * spec.frames, spec.filters)),
            dense: spec.fc.iter().map(|&n| Array2::ones((batch, n))).collect(),
        }
    }

    pub fn sample<R: Rng>(spec: &NetworkSpec, batch: usize, rng: &mut R) -> Self {
        let rate = spec.dropout();
        let keep = cst::<T>(1.0 / (1.0 - rate));
        let mut draw = |shape: (usize, usize)| {
            Array2::from_shape_simple_fn(shape, || if rng.random::<f64>() < rate { T::zero() } else { keep })
        };
        let conv = draw((batch * spec.frames, spec.filters));
        let dense = spec.fc.iter().map(|&n| draw((batch, n))).collect();
        DropoutMasks { conv, dense }
    }

    pub fn cast<U: NdFloat>(&self) -> DropoutMasks<U> {
        let c = |a: &Array2<T>| a.mapv(|v| U::from(v).expect("finite mask"));
        DropoutMasks {
            conv: c(&self.conv),
            dense: self.dense.iter().map(c).collect(),
        }
    }

    fn batch(&self) -> usize {
        self.dense.first().map(|m| m.nrows()).unwrap_or(0)
    }
}

/// Mean and biased variance of one normalisation stage over a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct StageStats<T> {
    pub mean: Array1<T>,
    pub var: Array1<T>,
}

struct NormCache<T> {
    xhat: Array2<T>,
    inv_std: Array1<T>,
    /// Normalised and affine-transformed, before the rectifier.
    y: Array2<T>,
}

/// Result of a forward pass, with what the backward pass needs.
pub struct ForwardPass<T> {
    pub probs: Array1<T>,
    pub logits: Array1<T>,
    /// Per-stage batch statistics; empty in eval mode.
    pub stats: Vec<StageStats<T>>,
    cols: Array2<T>,
    norms: Vec<NormCache<T>>,
    /// Input of each dense layer, then input of the output unit.
    inputs: Vec<Array2<T>>,
    batch: usize,
}

/// Borrowed view of a parameter set.
pub struct Net<'a, T> {
    pub spec: &'a NetworkSpec,
    pub layout: &'a Layout,
    pub params: &'a [T],
    pub running: &'a [T],
}

fn matrix<'b, T>(buf: &'b [T], slot: &Slot) -> ArrayView2<'b, T> {
    ArrayView2::from_shape((slot.rows, slot.cols), &buf[slot.range()]).expect("slot shape")
}

fn vector<'b, T>(buf: &'b [T], slot: &Slot) -> ArrayView1<'b, T> {
    ArrayView1::from(&buf[slot.range()])
}

/// Writes `a^T b` into the slot's section of `grad`.
fn put_product<T: NdFloat>(grad: &mut [T], slot: &Slot, a: ArrayView2<T>, b: ArrayView2<T>) {
    let mut out = ArrayViewMut2::from_shape((slot.rows, slot.cols), &mut grad[slot.range()]).expect("slot shape");
    general_mat_mul(T::one(), &a.t(), &b, T::zero(), &mut out);
}

fn put<T: NdFloat>(grad: &mut [T], slot: &Slot, values: &Array1<T>) {
    grad[slot.range()].copy_from_slice(values.as_slice().expect("contiguous"));
}

/// Rows `(b, t)` hold the zero-padded window of frames `t - P ..= t + P`,
/// laid out frame-major then channel.
pub fn im2col<T: NdFloat>(x: ArrayView2<T>, batch: usize, frames: usize, len: usize) -> Array2<T> {
    let c = x.ncols();
    let pad = (len / 2) as isize;
    let mut cols = Array2::zeros((batch * frames, len * c));
    for b in 0..batch {
        for t in 0..frames {
            let row = b * frames + t;
            for l in 0..len {
                let src = t as isize + l as isize - pad;
                if (0..frames as isize).contains(&src) {
                    cols.slice_mut(s![row, l * c..(l + 1) * c])
                        .assign(&x.row(b * frames + src as usize));
                }
            }
        }
    }
    cols
}

pub fn sigmoid<T: NdFloat>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

fn clamp_prob<T: NdFloat>(p: T) -> T {
    let lo = cst::<T>(PROB_CLAMP);
    let hi = T::one() - lo;
    p.max(lo).min(hi)
}

/// Binary cross-entropy with the probability clamped to `[1e-7, 1 - 1e-7]`.
pub fn bce_loss<T: NdFloat>(p: T, y: T) -> T {
    let p = clamp_prob(p);
    -(y * p.ln() + (T::one() - y) * (T::one() - p).ln())
}

pub fn mean_bce<T: NdFloat>(probs: &Array1<T>, labels: &[T]) -> T {
    let total = probs
        .iter()
        .zip(labels)
        .fold(T::zero(), |acc, (&p, &y)| acc + bce_loss(p, y));
    total / cst(probs.len() as f64)
}

fn rectify<T: NdFloat>(y: &Array2<T>, mask: Option<&Array2<T>>) -> Array2<T> {
    let mut a = y.mapv(|v| v.max(T::zero()));
    if let Some(m) = mask {
        a *= m;
    }
    a
}

/// Gradient of the rectifier and dropout, in place on `da`.
fn rectify_backward<T: NdFloat>(mut da: Array2<T>, y: &Array2<T>, mask: &Array2<T>) -> Array2<T> {
    ndarray::Zip::from(&mut da).and(y).and(mask).for_each(|d, &y, &m| {
        *d = if y > T::zero() { *d * m } else { T::zero() };
    });
    da
}

/// Gradients through a normalised stage: `(dz, dz summed over rows, dgamma, dbeta)`.
/// The row sum is taken in closed form, since summing `dz` cancels to round-off
/// scaled by `1 / std`.
fn norm_backward<T: NdFloat>(
    dy: &Array2<T>,
    cache: &NormCache<T>,
    gamma: ArrayView1<T>,
) -> (Array2<T>, Array1<T>, Array1<T>, Array1<T>) {
    let n = cst::<T>(dy.nrows() as f64);
    let dgamma = (dy * &cache.xhat).sum_axis(Axis(0));
    let dbeta = dy.sum_axis(Axis(0));
    let dxhat = dy * &gamma;
    let sum = dxhat.sum_axis(Axis(0));
    let sum_x = (&dxhat * &cache.xhat).sum_axis(Axis(0));
    let scale = &cache.inv_std / n;
    let dz_sum = -(cache.xhat.sum_axis(Axis(0)) * &sum_x * &scale);
    let dz = (dxhat * n - &sum - &cache.xhat * &sum_x) * &scale;
    (dz, dz_sum, dgamma, dbeta)
}

impl<'a, T: NdFloat> Net<'a, T> {
    pub fn new(spec: &'a NetworkSpec, layout: &'a Layout, params: &'a [T], running: &'a [T]) -> Self {
        assert_eq!(params.len(), layout.param_len);
        assert_eq!(running.len(), layout.running_len);
        Net {
            spec,
            layout,
            params,
            running,
        }
    }

    fn check_input(&self, x: &ArrayView2<T>) -> Result<usize, NeuralError> {
        let t = self.spec.frames;
        if x.ncols() != self.spec.channels || x.nrows() == 0 || !x.nrows().is_multiple_of(t) {
            return Err(NeuralError::ShapeMismatch {
                expected: format!("(B*{t}) x {}", self.spec.channels),
                found: format!("{} x {}", x.nrows(), x.ncols()),
            });
        }
        Ok(x.nrows() / t)
    }

    fn normalize(
        &self,
        z: Array2<T>,
        stage: usize,
        gamma: &Slot,
        beta: &Slot,
        mode: Mode,
    ) -> (NormCache<T>, Option<StageStats<T>>) {
        let (mean, var, stats) = match mode {
            Mode::Train => {
                let inv = T::one() / cst::<T>(z.nrows() as f64);
                let mut mean = z.sum_axis(Axis(0)) * inv;
                // residual pass: a mean rounded in 32 bits leaves the centred
                // column a visible offset when the spread is small
                mean += &((&z - &mean).sum_axis(Axis(0)) * inv);
                let var = (&z - &mean).mapv(|v| v * v).sum_axis(Axis(0)) * inv;
                (mean.clone(), var.clone(), Some(StageStats { mean, var }))
            }
            Mode::Eval => {
                let [m, v] = self.layout.stats(stage);
                (
                    vector(self.running, m).to_owned(),
                    vector(self.running, v).to_owned(),
                    None,
                )
            }
        };
        let eps = cst::<T>(BN_EPSILON);
        let inv_std = var.mapv(|v| T::one() / (v + eps).sqrt());
        let xhat = (z - &mean) * &inv_std;
        let y = &xhat * &vector(self.params, gamma) + vector(self.params, beta);
        (NormCache { xhat, inv_std, y }, stats)
    }

    /// Probabilities for a batch. `masks` is required in train mode and ignored in eval mode.
    pub fn forward(
        &self,
        x: ArrayView2<T>,
        mode: Mode,
        masks: Option<&DropoutMasks<T>>,
    ) -> Result<ForwardPass<T>, NeuralError> {
        let batch = self.check_input(&x)?;
        let masks = match mode {
            Mode::Train => {
                let m = masks.ok_or_else(|| NeuralError::ShapeMismatch {
                    expected: "dropout masks in train mode".into(),
                    found: "none".into(),
                })?;
                if m.batch() != batch || m.conv.dim() != (batch * self.spec.frames, self.spec.filters) {
                    return Err(NeuralError::ShapeMismatch {
                        expected: format!("masks for batch {batch}"),
                        found: format!("masks for batch {}", m.batch()),
                    });
                }
                Some(m)
            }
            Mode::Eval => None,
        };
        let spec = self.spec;
        let mut stats = Vec::new();
        let mut norms = Vec::new();
        let mut inputs = Vec::new();

        let [kernel, bias, gamma, beta] = self.layout.conv();
        let cols = im2col(x, batch, spec.frames, spec.filter_len);
        let z = cols.dot(&matrix(self.params, kernel)) + vector(self.params, bias);
        let (cache, st) = self.normalize(z, 0, gamma, beta, mode);
        stats.extend(st);
        let a = rectify(&cache.y, masks.map(|m| &m.conv));
        norms.push(cache);
        let mut h = a
            .into_shape_with_order((batch, spec.flat_width()))
            .expect("contiguous conv output");

        for i in 0..spec.fc.len() {
            let [w, b, gamma, beta] = self.layout.dense(i);
            let z = h.dot(&matrix(self.params, w)) + vector(self.params, b);
            inputs.push(h);
            let (cache, st) = self.normalize(z, i + 1, gamma, beta, mode);
            stats.extend(st);
            h = rectify(&cache.y, masks.map(|m| &m.dense[i]));
            norms.push(cache);
        }

        let [w, b] = self.layout.output();
        let logits = h.dot(&vector(self.params, w)) + self.params[b.offset];
        inputs.push(h);
        let probs = logits.mapv(sigmoid);
        Ok(ForwardPass {
            probs,
            logits,
            stats,
            cols,
            norms,
            inputs,
            batch,
        })
    }

    /// Gradient of the mean batch loss with respect to every trainable
    /// parameter, laid out like the parameter buffer.
    pub fn backward(&self, pass: &ForwardPass<T>, labels: &[T], masks: &DropoutMasks<T>) -> Vec<T> {
        let spec = self.spec;
        let batch = pass.batch;
        assert_eq!(labels.len(), batch);
        let mut grad = vec![T::zero(); self.layout.param_len];

        let lo = cst::<T>(PROB_CLAMP);
        let n = cst::<T>(batch as f64);
        let dlogit: Array1<T> = pass
            .probs
            .iter()
            .zip(labels)
            .map(|(&p, &y)| {
                if p < lo || p > T::one() - lo {
                    T::zero()
                } else {
                    (p - y) / n
                }
            })
            .collect();

        let [w_out, b_out] = self.layout.output();
        let h_last = pass.inputs.last().expect("output input");
        put(&mut grad, w_out, &h_last.t().dot(&dlogit));
        grad[b_out.offset] = dlogit.sum();
        let w = vector(self.params, w_out);
        let mut dh: Array2<T> = dlogit.view().insert_axis(Axis(1)).dot(&w.insert_axis(Axis(0)));

        for i in (0..spec.fc.len()).rev() {
            let [w, b, gamma, beta] = self.layout.dense(i);
            let cache = &pass.norms[i + 1];
            let dy = rectify_backward(dh, &cache.y, &masks.dense[i]);
            let (dz, dz_sum, dgamma, dbeta) = norm_backward(&dy, cache, vector(self.params, gamma));
            put_product(&mut grad, w, pass.inputs[i].view(), dz.view());
            put(&mut grad, b, &dz_sum);
            put(&mut grad, gamma, &dgamma);
            put(&mut grad, beta, &dbeta);
            dh = dz.dot(&matrix(self.params, w).t());
        }

        let [kernel, bias, gamma, beta] = self.layout.conv();
        let cache = &pass.norms[0];
        let da = dh
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((batch * spec.frames, spec.filters))
            .expect("contiguous gradient");
        let dy = rectify_backward(da, &cache.y, &masks.conv);
        let (dz, dz_sum, dgamma, dbeta) = norm_backward(&dy, cache, vector(self.params, gamma));
        put_product(&mut grad, kernel, pass.cols.view(), dz.view());
        put(&mut grad, bias, &dz_sum);
        put(&mut grad, gamma, &dgamma);
        put(&mut grad, beta, &dbeta);
        grad
    }

    /// Mean batch loss and its gradient under fixed masks and batch statistics.
    pub fn gradients(
        &self,
        x: ArrayView2<T>,
        labels: &[T],
        masks: &DropoutMasks<T>,
    ) -> Result<BatchGradients<T>, NeuralError> {
        if labels.is_empty() {
            return Err(NeuralError::EmptyBatch);
        }
        let pass = self.forward(x, Mode::Train, Some(masks))?;
        if labels.len() != pass.batch {
            return Err(NeuralError::ShapeMismatch {
                expected: format!("{} labels", pass.batch),
                found: format!("{} labels", labels.len()),
            });
        }
        let loss = mean_bce(&pass.probs, labels);
        let grad = self.backward(&pass, labels, masks);
        Ok((loss, grad, pass.stats))
    }

    /// Mean batch loss only (train mode, fixed masks).
    pub fn loss(&self, x: ArrayView2<T>, labels: &[T], masks: &DropoutMasks<T>) -> Result<T, NeuralError> {
        let pass = self.forward(x, Mode::Train, Some(masks))?;
        Ok(mean_bce(&pass.probs, labels))
    }

    /// Pre-rectifier values of every stage, for detecting rectifier kinks.
    pub fn pre_activations(&self, x: ArrayView2<T>, masks: &DropoutMasks<T>) -> Result<Vec<Array2<T>>, NeuralError> {
        let pass = self.forward(x, Mode::Train, Some(masks))?;
        Ok(pass.norms.into_iter().map(|c| c.y).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_spec() -> NetworkSpec {
        NetworkSpec::new(1, 1, 1, vec![1]).with_frames(2)
    }

    #[test]
    fn sigmoid_and_loss_values() {
        assert_eq!(sigmoid(0.0f64), 0.5);
        assert!((sigmoid(-800.0f64)).abs() < 1e-300);
        assert!((bce_loss(0.5f64, 1.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((bce_loss(0.5f64, 0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((bce_loss(0.9f64, 1.0) - 0.10536051565782628).abs() < 1e-12);
        assert!(bce_loss(1.0f64, 1.0) <= 1.2e-7);
        assert!(bce_loss(0.0f64, 0.0) <= 1.2e-7);
        assert!(bce_loss(0.0f64, 1.0).is_finite());
    }

    #[test]
    fn im2col_pads_with_zeros() {
        let x = ndarray::array![[1.0f64, 10.0], [2.0, 20.0], [3.0, 30.0]];
        let cols = im2col(x.view(), 1, 3, 3);
        assert_eq!(cols.row(0).to_vec(), [0.0, 0.0, 1.0, 10.0, 2.0, 20.0]);
        assert_eq!(cols.row(1).to_vec(), [1.0, 10.0, 2.0, 20.0, 3.0, 30.0]);
        assert_eq!(cols.row(2).to_vec(), [2.0, 20.0, 3.0, 30.0, 0.0, 0.0]);
    }

    #[test]
    fn zero_weights_give_half() {
        let spec = NetworkSpec::new(3, 2, 3, vec![4, 2]).with_frames(5);
        let layout = Layout::new(&spec);
        let params = vec![0.0f64; layout.param_len];
        let mut running = vec![0.0f64; layout.running_len];
        for st in 0..3 {
            let v = layout.stats(st)[1];
            running[v.range()].fill(1.0);
        }
        let net = Net::new(&spec, &layout, &params, &running);
        let x = Array2::from_shape_fn((10, 3), |(i, j)| (i * 3 + j) as f64);
        let pass = net.forward(x.view(), Mode::Eval, None).unwrap();
        assert!(pass.probs.iter().all(|&p| p == 0.5));
    }

    #[test]
    fn hand_computed_forward() {
        // Two frames, one channel, one filter of length 1, one hidden unit.
        // Eval mode with running mean 0 and variance 1.
        let spec = tiny_spec();
        let layout = Layout::new(&spec);
        let mut params = vec![0.0f64; layout.param_len];
        let set = |p: &mut Vec<f64>, name: &str, v: &[f64]| {
            let slot = layout.find(name).unwrap();
            p[slot.range()].copy_from_slice(v);
        };
        set(&mut params, "conv.kernel", &[2.0]);
        set(&mut params, "conv.bias", &[0.5]);
        set(&mut params, "conv.bn.gamma", &[1.0]);
        set(&mut params, "conv.bn.beta", &[0.0]);
        set(&mut params, "dense0.weight", &[1.0, -1.0]);
        set(&mut params, "dense0.bias", &[0.25]);
        set(&mut params, "dense0.bn.gamma", &[-2.0]);
        set(&mut params, "dense0.bn.beta", &[0.1]);
        set(&mut params, "output.weight", &[1.5]);
        set(&mut params, "output.bias", &[-0.2]);
        let mut running = vec![0.0f64; layout.running_len];
        for st in 0..2 {
            let v = layout.stats(st)[1];
            running[v.range()].fill(1.0);
        }
        let net = Net::new(&spec, &layout, &params, &running);
        let x = ndarray::array![[1.0f64], [3.0]];
        let p = net.forward(x.view(), Mode::Eval, None).unwrap().probs[0];

        let s = 1.0 / (1.0f64 + 1e-5).sqrt();
        let c = [(2.0 * 1.0 + 0.5) * s, (2.0 * 3.0 + 0.5) * s];
        let h = (c[0] - c[1] + 0.25) * s * -2.0 + 0.1;
        let h = h.max(0.0);
        let z = 1.5 * h - 0.2;
        let expected = 1.0 / (1.0 + (-z).exp());
        // c = [2.49999, 6.49997], h = 7.59992, z = 11.19988
        assert!((p - expected).abs() < 1e-15, "{p} vs {expected}");
        assert!((p - 0.9999863244012571).abs() < 1e-12);
    }

    #[test]
    fn output_layer_gradient_is_outer_product() {
        let spec = tiny_spec();
        let layout = Layout::new(&spec);
        let params: Vec<f64> = (0..layout.param_len).map(|i| 0.3 + 0.1 * i as f64).collect();
        let running = vec![0.0; layout.running_len];
        let net = Net::new(&spec, &layout, &params, &running);
        let x = ndarray::array![[1.0f64], [-2.0]];
        let masks = DropoutMasks::keep_all(&spec, 1);
        let pass = net.forward(x.view(), Mode::Train, Some(&masks)).unwrap();
        let grad = net.backward(&pass, &[1.0], &masks);
        let delta = pass.probs[0] - 1.0;
        let h = pass.inputs.last().unwrap()[[0, 0]];
        let [w, b] = layout.output();
        assert!((grad[w.offset] - h * delta).abs() < 1e-15);
        assert!((grad[b.offset] - delta).abs() < 1e-15);
    }

    #[test]
    fn dropped_unit_has_zero_incoming_gradient() {
        let spec = NetworkSpec::new(2, 3, 3, vec![4]).with_frames(6);
        let layout = Layout::new(&spec);
        let params: Vec<f64> = (0..layout.param_len)
            .map(|i| ((i * 7919) % 97) as f64 / 97.0 - 0.5)
            .collect();
        let running = vec![0.0; layout.running_len];
        let net = Net::new(&spec, &layout, &params, &running);
        let x = Array2::from_shape_fn((6 * 3, 2), |(i, j)| ((i * 31 + j * 17) % 13) as f64 / 13.0);
        let mut masks = DropoutMasks::keep_all(&spec, 3);
        masks.dense[0].column_mut(2).fill(0.0);
        let (_, grad, _) = net.gradients(x.view(), &[1.0, 0.0, 1.0], &masks).unwrap();
        let [w, b, g, be] = layout.dense(0);
        let wm = ndarray::ArrayView2::from_shape((w.rows, w.cols), &grad[w.range()]).unwrap();
        assert!(wm.column(2).iter().all(|&v| v == 0.0));
        assert_eq!(grad[b.offset + 2], 0.0);
        assert_eq!(grad[g.offset + 2], 0.0);
        assert_eq!(grad[be.offset + 2], 0.0);
        assert!(wm.column(0).iter().any(|&v| v != 0.0));
    }

    #[test]
    fn shape_errors() {
        let spec = tiny_spec();
        let layout = Layout::new(&spec);
        let params = vec![0.0f64; layout.param_len];
        let running = vec![1.0f64; layout.running_len];
        let net = Net::new(&spec, &layout, &params, &running);
        let x = Array2::<f64>::zeros((3, 1));
        assert!(matches!(
            net.forward(x.view(), Mode::Eval, None),
            Err(NeuralError::ShapeMismatch { .. })
        ));
        let x = Array2::<f64>::zeros((2, 1));
        assert!(net.forward(x.view(), Mode::Train, None).is_err());
    }

    #[test]
    fn closed_form_row_sum_matches_summed_gradient() {
        let z = Array2::from_shape_fn((6, 3), |(r, c)| ((r * 7 + c * 3) % 5) as f64 - 1.5 + 0.1 * c as f64);
        let dy = Array2::from_shape_fn((6, 3), |(r, c)| ((r + 2 * c) % 4) as f64 * 0.3 - 0.4);
        let mean = z.mean_axis(Axis(0)).unwrap();
        let var = (&z - &mean).mapv(|v| v * v).mean_axis(Axis(0)).unwrap();
        let inv_std = var.mapv(|v| 1.0 / (v + BN_EPSILON).sqrt());
        let xhat = (&z - &mean) * &inv_std;
        let cache = NormCache {
            y: xhat.clone(),
            xhat,
            inv_std,
        };
        let gamma = Array1::from(vec![0.5, 1.0, 2.0]);
        let (dz, dz_sum, _, _) = norm_backward(&dy, &cache, gamma.view());
        for (a, b) in dz.sum_axis(Axis(0)).iter().zip(&dz_sum) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }
}
