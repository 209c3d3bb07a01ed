//! Classifier inputs: selected keypoint coordinates, gap-filled, min-max
//! scaled per axis and centred in time.
//!
//! Column `2j` holds x and column `2j + 1` holds y of the `j`-th selected
//! keypoint, in ascending body index.

use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array2, Axis as NdAxis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::keypoints::{select_keypoints, Axis, KeypointSelection, SnippetKeypoints, SNIPPET_FRAMES};

const MAGIC: &[u8; 4] = b"GMAF";
const VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("{all_zero} of {total} coordinate series carry no detections")]
    DegenerateSnippet { all_zero: usize, total: usize },
    #[error("feature file: {0}")]
    Format(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMode {
    WithHead,
    WithoutHead,
}

impl FeatureMode {
    pub fn selection(self) -> KeypointSelection {
        match self {
            FeatureMode::WithHead => KeypointSelection::WithHead,
            FeatureMode::WithoutHead => KeypointSelection::WithoutHead,
        }
    }

    pub fn keypoints(self) -> &'static [usize] {
        select_keypoints(self.selection())
    }

    pub fn columns(self) -> usize {
        2 * self.keypoints().len()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FeatureMode::WithHead => "with_head",
            FeatureMode::WithoutHead => "without_head",
        }
    }

    fn code(self) -> u8 {
        match self {
            FeatureMode::WithHead => 1,
            FeatureMode::WithoutHead => 2,
        }
    }

    fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(FeatureMode::WithHead),
            2 => Some(FeatureMode::WithoutHead),
            _ => None,
        }
    }
}

impl std::fmt::Display for FeatureMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for FeatureMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "with_head" | "with-head" => Ok(FeatureMode::WithHead),
            "without_head" | "without-head" => Ok(FeatureMode::WithoutHead),
            other => Err(format!("unknown feature mode {other:?}")),
        }
    }
}

/// Column names such as `k6_x`, in matrix order.
pub fn column_labels(mode: FeatureMode) -> Vec<String> {
    mode.keypoints()
        .iter()
        .flat_map(|k| [format!("k{k}_x"), format!("k{k}_y")])
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Interpolated {
    pub series: Vec<f64>,
    /// The input had no nonzero sample; the series is returned as zeros.
    pub all_missing: bool,
}

/// Fills zero samples: linearly between the nearest nonzero neighbours inside
/// the series, with the nearest nonzero value at either end.
pub fn interpolate_missing(series: &[f64]) -> Interpolated {
    let known: Vec<usize> = (0..series.len()).filter(|&i| series[i] != 0.0).collect();
    let (Some(&first), Some(&last)) = (known.first(), known.last()) else {
        return Interpolated {
            series: vec![0.0; series.len()],
            all_missing: true,
        };
    };
    let mut out = series.to_vec();
    out[..first].fill(series[first]);
    out[last + 1..].fill(series[last]);
    for pair in known.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let (va, vb) = (series[a], series[b]);
        let span = (b - a) as f64;
        for (i, slot) in out.iter_mut().enumerate().take(b).skip(a + 1) {
            let t = (i - a) as f64 / span;
            *slot = va + t * (vb - va);
        }
    }
    Interpolated {
        series: out,
        all_missing: false,
    }
}

/// Rescales even (x) columns by the matrix-wide x extrema and odd (y) columns
/// by the y extrema. An axis without spread becomes all zeros.
pub fn minmax_normalize(m: &mut Array2<f64>) {
    for parity in 0..2 {
        let cols = (parity..m.ncols()).step_by(2);
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for c in cols.clone() {
            for &v in m.column(c) {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        let range = hi - lo;
        for c in cols {
            m.column_mut(c).mapv_inplace(|v| {
                if range > 0.0 {
                    ((v - lo) / range).clamp(0.0, 1.0)
                } else {
                    0.0
                }
            });
        }
    }
}

pub fn subtract_temporal_mean(m: &mut Array2<f64>) {
    if m.nrows() == 0 {
        return;
    }
    let means = m.mean_axis(NdAxis(0)).expect("non-empty");
    *m -= &means;
}

/// A normalised feature matrix with its column layout.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    mode: FeatureMode,
    data: Array2<f32>,
}

impl FeatureMatrix {
    pub fn new(mode: FeatureMode, data: Array2<f32>) -> Result<Self, FeatureError> {
        if data.ncols() != mode.columns() || data.nrows() == 0 {
            return Err(FeatureError::Format(format!(
                "shape {:?} does not fit {:?}",
                data.dim(),
                mode
            )));
        }
        Ok(FeatureMatrix { mode, data })
    }

    pub fn mode(&self) -> FeatureMode {
        self.mode
    }

    pub fn data(&self) -> &Array2<f32> {
        &self.data
    }

    pub fn rows(&self) -> usize {
        self.data.nrows()
    }

    pub fn cols(&self) -> usize {
        self.data.ncols()
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<(), FeatureError> {
        let mut buf = Vec::with_capacity(15 + self.data.len() * 4);
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.rows() as u32).to_le_bytes());
        buf.extend_from_slice(&(self.cols() as u32).to_le_bytes());
        buf.push(self.mode.code());
        for v in self.data.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self, FeatureError> {
        let mut header = [0u8; 15];
        r.read_exact(&mut header)
            .map_err(|_| FeatureError::Format("truncated header".into()))?;
        if &header[..4] != MAGIC {
            return Err(FeatureError::Format("bad magic".into()));
        }
        let version = u16::from_le_bytes([header[4], header[5]]);
        if version != VERSION {
            return Err(FeatureError::Format(format!("unsupported version {version}")));
        }
        let rows = u32::from_le_bytes(header[6..10].try_into().unwrap()) as usize;
        let cols = u32::from_le_bytes(header[10..14].try_into().unwrap()) as usize;
        let mode = FeatureMode::from_code(header[14])
            .ok_or_else(|| FeatureError::Format(format!("unknown mode code {}", header[14])))?;
        let mut body = vec![0u8; rows * cols * 4];
        r.read_exact(&mut body)
            .map_err(|_| FeatureError::Format("truncated body".into()))?;
        let values: Vec<f32> = body
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        let data = Array2::from_shape_vec((rows, cols), values).map_err(|e| FeatureError::Format(e.to_string()))?;
        FeatureMatrix::new(mode, data)
    }

    pub fn save(&self, path: &Path) -> Result<(), FeatureError> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, FeatureError> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        FeatureMatrix::read_from(&mut f)
    }

    /// Header of column labels, then one line per frame.
    pub fn to_csv(&self) -> String {
        let mut out = column_labels(self.mode).join(",");
        out.push('\n');
        for row in self.data.rows() {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(out, "{}", line.join(","));
        }
        out
    }
}

/// Selected coordinates before any normalisation, plus how many series were empty.
pub fn raw_matrix(snippet: &SnippetKeypoints, mode: FeatureMode) -> (Array2<f64>, usize) {
    let keypoints = mode.keypoints();
    let rows = snippet.frames().len();
    let mut m = Array2::<f64>::zeros((rows, 2 * keypoints.len()));
    let mut empty = 0;
    for (j, &k) in keypoints.iter().enumerate() {
        for (a, axis) in [Axis::X, Axis::Y].into_iter().enumerate() {
            let filled = interpolate_missing(&snippet.series(k, axis));
            empty += filled.all_missing as usize;
            for (slot, v) in m.column_mut(2 * j + a).iter_mut().zip(filled.series) {
                *slot = v;
            }
        }
    }
    (m, empty)
}

/// Selection, gap filling, min-max scaling and temporal centring.
pub fn build_features(snippet: &SnippetKeypoints, mode: FeatureMode) -> Result<FeatureMatrix, FeatureError> {
    let (mut m, empty) = raw_matrix(snippet, mode);
    let total = m.ncols();
    if 2 * empty > total {
        return Err(FeatureError::DegenerateSnippet { all_zero: empty, total });
    }
    minmax_normalize(&mut m);
    subtract_temporal_mean(&mut m);
    debug_assert_eq!(m.nrows(), SNIPPET_FRAMES);
    FeatureMatrix::new(mode, m.mapv(|v| v as f32))
}

/// Fidgety-movement class. Encoded 1 for present, 0 for absent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FmClass {
    #[serde(rename = "FM-")]
    Absent,
    #[serde(rename = "FM+")]
    Present,
}

impl FmClass {
    pub fn as_label(self) -> u8 {
        match self {
            FmClass::Absent => 0,
            FmClass::Present => 1,
        }
    }

    pub fn from_label(label: u8) -> Option<Self> {
        match label {
            0 => Some(FmClass::Absent),
            1 => Some(FmClass::Present),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub id: String,
    pub features: FeatureMatrix,
    pub class: FmClass,
}
