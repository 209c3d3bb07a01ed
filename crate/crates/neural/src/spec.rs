use std::fmt;

use serde::{Deserialize, Serialize};

use gma_core::features::FeatureMode;
use gma_core::keypoints::SNIPPET_FRAMES;

use crate::NeuralError;

pub const DEFAULT_FILTERS: usize = 64;
pub const DEFAULT_FILTER_LEN: usize = 7;
pub const DEFAULT_FC: [usize; 2] = [200, 100];
pub const DROPOUT: f64 = 0.1;

/// Architecture: temporal convolution, then one or two dense layers, then a
/// single logistic output. Every hidden stage is batch-normalised, rectified
/// and dropped out.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub frames: usize,
    pub channels: usize,
    pub filters: usize,
    pub filter_len: usize,
    pub fc: Vec<usize>,
    /// Dropout rate in per-mille (100 = 10%).
    pub dropout_permille: u16,
}

impl NetworkSpec {
    pub fn new(channels: usize, filters: usize, filter_len: usize, fc: Vec<usize>) -> Self {
        NetworkSpec {
            frames: SNIPPET_FRAMES,
            channels,
            filters,
            filter_len,
            fc,
            dropout_permille: (DROPOUT * 1000.0) as u16,
        }
    }

    pub fn default_for(mode: FeatureMode) -> Self {
        NetworkSpec::new(mode.columns(), DEFAULT_FILTERS, DEFAULT_FILTER_LEN, DEFAULT_FC.to_vec())
    }

    pub fn with_frames(mut self, frames: usize) -> Self {
        self.frames = frames;
        self
    }

    pub fn dropout(&self) -> f64 {
        self.dropout_permille as f64 / 1000.0
    }

    pub fn validate(&self) -> Result<(), NeuralError> {
        let bad = |m: String| Err(NeuralError::InvalidSpec(m));
        if self.frames == 0 || self.channels == 0 {
            return bad("frames and channels must be >= 1".into());
        }
        if self.filters == 0 {
            return bad("filter count must be >= 1".into());
        }
        if self.filter_len == 0 || self.filter_len.is_multiple_of(2) {
            return bad(format!("filter length must be odd, got {}", self.filter_len));
        }
        if self.fc.is_empty() || self.fc.len() > 2 || self.fc.contains(&0) {
            return bad(format!("need one or two dense layers of size >= 1, got {:?}", self.fc));
        }
        if self.dropout_permille >= 1000 {
            return bad("dropout must be below 1".into());
        }
        Ok(())
    }

    /// Flattened conv output width.
    pub fn flat_width(&self) -> usize {
        self.frames * self.filters
    }

    /// Dense layer sizes joined by `;`, e.g. `200;100`.
    pub fn fc_label(&self) -> String {
        self.fc.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(";")
    }

    /// Compact text form stored in weight files.
    pub fn descriptor(&self) -> String {
        format!(
            "frames={};channels={};filters={};filter_len={};fc={};dropout_permille={}",
            self.frames,
            self.channels,
            self.filters,
            self.filter_len,
            self.fc.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(","),
            self.dropout_permille
        )
    }

    pub fn from_descriptor(text: &str) -> Result<Self, NeuralError> {
        let bad = || NeuralError::InvalidSpec(format!("bad descriptor {text:?}"));
        let mut fields = std::collections::BTreeMap::new();
        for part in text.split(';') {
            let (k, v) = part.split_once('=').ok_or_else(bad)?;
            fields.insert(k, v);
        }
        let num = |k: &str| -> Result<usize, NeuralError> { fields.get(k).ok_or_else(bad)?.parse().map_err(|_| bad()) };
        let fc = fields
            .get("fc")
            .ok_or_else(bad)?
            .split(',')
            .map(|v| v.parse().map_err(|_| bad()))
            .collect::<Result<Vec<usize>, _>>()?;
        let spec = NetworkSpec {
            frames: num("frames")?,
            channels: num("channels")?,
            filters: num("filters")?,
            filter_len: num("filter_len")?,
            fc,
            dropout_permille: num("dropout_permille")? as u16,
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl fmt::Display for NetworkSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.descriptor())
    }
}

/// A named tensor inside a flat buffer, stored row-major as `rows x cols`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Slot {
    pub name: String,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Slot {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Positions of every trainable tensor and every running statistic.
///
/// Trainable order: `conv.kernel` (`L*C x F`, row `l*C + c`), `conv.bias`,
/// `conv.bn.gamma`, `conv.bn.beta`, then per dense layer `i` the same four
/// (`dense{i}.weight` is `in x out`), then `output.weight`, `output.bias`.
/// Running order: `conv.bn.mean`, `conv.bn.var`, then per dense layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub params: Vec<Slot>,
    pub running: Vec<Slot>,
    pub param_len: usize,
    pub running_len: usize,
}

impl Layout {
    pub fn new(spec: &NetworkSpec) -> Self {
        let mut params = Vec::new();
        let mut offset = 0;
        let push = |list: &mut Vec<Slot>, name: String, rows: usize, cols: usize, offset: &mut usize| {
            list.push(Slot {
                name,
                offset: *offset,
                rows,
                cols,
            });
            *offset += rows * cols;
        };
        let f = spec.filters;
        push(
            &mut params,
            "conv.kernel".into(),
            spec.filter_len * spec.channels,
            f,
            &mut offset,
        );
        push(&mut params, "conv.bias".into(), 1, f, &mut offset);
        push(&mut params, "conv.bn.gamma".into(), 1, f, &mut offset);
        push(&mut params, "conv.bn.beta".into(), 1, f, &mut offset);
        let mut width = spec.flat_width();
        for (i, &n) in spec.fc.iter().enumerate() {
            push(&mut params, format!("dense{i}.weight"), width, n, &mut offset);
            push(&mut params, format!("dense{i}.bias"), 1, n, &mut offset);
            push(&mut params, format!("dense{i}.bn.gamma"), 1, n, &mut offset);
            push(&mut params, format!("dense{i}.bn.beta"), 1, n, &mut offset);
            width = n;
        }
        push(&mut params, "output.weight".into(), width, 1, &mut offset);
        push(&mut params, "output.bias".into(), 1, 1, &mut offset);
        let param_len = offset;

        let mut running = Vec::new();
        let mut offset = 0;
        push(&mut running, "conv.bn.mean".into(), 1, f, &mut offset);
        push(&mut running, "conv.bn.var".into(), 1, f, &mut offset);
        for (i, &n) in spec.fc.iter().enumerate() {
            push(&mut running, format!("dense{i}.bn.mean"), 1, n, &mut offset);
            push(&mut running, format!("dense{i}.bn.var"), 1, n, &mut offset);
        }
        Layout {
            params,
            running,
            param_len,
            running_len: offset,
        }
    }

    pub fn conv(&self) -> [&Slot; 4] {
        [&self.params[0], &self.params[1], &self.params[2], &self.params[3]]
    }

    /// Weight, bias, gamma, beta of dense layer `i`.
    pub fn dense(&self, i: usize) -> [&Slot; 4] {
        let b = 4 + 4 * i;
        [
            &self.params[b],
            &self.params[b + 1],
            &self.params[b + 2],
            &self.params[b + 3],
        ]
    }

    pub fn output(&self) -> [&Slot; 2] {
        let n = self.params.len();
        [&self.params[n - 2], &self.params[n - 1]]
    }

    /// Running mean and variance of normalisation stage `stage` (0 = conv).
    pub fn stats(&self, stage: usize) -> [&Slot; 2] {
        [&self.running[2 * stage], &self.running[2 * stage + 1]]
    }

    pub fn find(&self, name: &str) -> Option<&Slot> {
        self.params.iter().chain(&self.running).find(|s| s.name == name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_shapes() {
        let spec = NetworkSpec::default_for(FeatureMode::WithHead);
        assert_eq!((spec.channels, spec.filters, spec.filter_len), (42, 64, 7));
        assert_eq!(spec.fc, [200, 100]);
        assert!((spec.dropout() - 0.1).abs() < 1e-12);
        let layout = Layout::new(&spec);
        let names: Vec<&str> = layout.params.iter().map(|s| s.name.as_str()).collect();
        assert_eq!(
            names[..5],
            [
                "conv.kernel",
                "conv.bias",
                "conv.bn.gamma",
                "conv.bn.beta",
                "dense0.weight"
            ]
        );
        assert_eq!(layout.find("conv.kernel").unwrap().rows, 7 * 42);
        assert_eq!(layout.find("dense0.weight").unwrap().rows, 250 * 64);
        assert_eq!(layout.find("output.weight").unwrap().rows, 100);
        let expected = 294 * 64 + 3 * 64 + 16000 * 200 + 3 * 200 + 200 * 100 + 3 * 100 + 100 + 1;
        assert_eq!(layout.param_len, expected);
        assert_eq!(layout.running_len, 2 * (64 + 200 + 100));
    }

    #[test]
    fn validation() {
        let ok = NetworkSpec::new(32, 16, 5, vec![50]);
        assert!(ok.validate().is_ok());
        assert!(NetworkSpec::new(32, 16, 4, vec![50]).validate().is_err());
        assert!(NetworkSpec::new(32, 0, 5, vec![50]).validate().is_err());
        assert!(NetworkSpec::new(32, 16, 5, vec![]).validate().is_err());
        assert!(NetworkSpec::new(32, 16, 5, vec![1, 2, 3]).validate().is_err());
        assert!(NetworkSpec::new(32, 16, 5, vec![0]).validate().is_err());
    }

    #[test]
    fn descriptor_round_trip() {
        let spec = NetworkSpec::new(32, 16, 5, vec![300, 150]).with_frames(40);
        assert_eq!(NetworkSpec::from_descriptor(&spec.descriptor()).unwrap(), spec);
        assert!(NetworkSpec::from_descriptor("frames=1").is_err());
        assert_eq!(spec.fc_label(), "300;150");
    }
}
