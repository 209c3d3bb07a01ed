//! Pose-estimator keypoint documents and the 1-25 body numbering used by every
//! downstream stage.
//!
//! Body numbering (1-based):
//!
//! | index  | region                                                          |
//! |--------|-----------------------------------------------------------------|
//! | 1-5    | head: left eye, right eye, nose, left ear, right ear            |
//! | 6-21   | neck, shoulders, elbows, wrists, hips, knees, ankles, heels     |
//! | 22-25  | toes (excluded from every analysis)                             |
//!
//! External estimators use their own index order; a [`SchemaMap`] translates it.
//! The shipped default targets the BODY-25 layout.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of keypoints per frame.
pub const KEYPOINT_COUNT: usize = 25;
/// Frame rate every snippet is recorded at.
pub const SNIPPET_FPS: u32 = 50;
/// Snippet duration in seconds.
pub const SNIPPET_SECONDS: u32 = 5;
/// Frames per snippet (50 fps x 5 s).
pub const SNIPPET_FRAMES: usize = (SNIPPET_FPS * SNIPPET_SECONDS) as usize;

/// Metadata sidecar file name inside a snippet directory.
pub const META_FILE: &str = "meta.json";

#[derive(Debug, Error)]
pub enum KeypointError {
    #[error("malformed pose document: {0}")]
    MalformedDocument(String),
    #[error("expected {expected} frames, found {found}")]
    FrameCountMismatch { expected: usize, found: usize },
    #[error("frame key {0} appears more than once")]
    DuplicateFrame(u64),
    #[error("invalid schema map: {0}")]
    InvalidSchema(String),
    #[error("invalid snippet metadata: {0}")]
    InvalidMeta(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl KeypointError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        KeypointError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// One detected body landmark. A missed detection is exactly `(0, 0, 0)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    /// Detector confidence in `[0, 1]`.
    pub r: f64,
}

impl Keypoint {
    pub const MISSING: Keypoint = Keypoint { x: 0.0, y: 0.0, r: 0.0 };

    pub fn new(x: f64, y: f64, r: f64) -> Self {
        Keypoint { x, y, r }
    }

    pub fn is_missing(&self) -> bool {
        *self == Keypoint::MISSING
    }

    fn validate(&self) -> Result<(), KeypointError> {
        if !(self.x.is_finite() && self.y.is_finite() && self.r.is_finite()) {
            return Err(KeypointError::MalformedDocument("non-finite keypoint value".into()));
        }
        if !(0.0..=1.0).contains(&self.r) {
            return Err(KeypointError::MalformedDocument(format!(
                "reliability {} outside [0, 1]",
                self.r
            )));
        }
        Ok(())
    }
}

/// The 25 keypoints of one video frame, addressed by body index 1..=25.
#[derive(Debug, Clone, PartialEq)]
pub struct KeypointFrame {
    /// Frame ordinal within the snippet, starting at 1.
    pub index: u32,
    points: [Keypoint; KEYPOINT_COUNT],
}

impl KeypointFrame {
    pub fn new(index: u32, points: [Keypoint; KEYPOINT_COUNT]) -> Self {
        KeypointFrame { index, points }
    }

    pub fn missing(index: u32) -> Self {
        KeypointFrame {
            index,
            points: [Keypoint::MISSING; KEYPOINT_COUNT],
        }
    }

    /// Keypoint at 1-based body index.
    ///
    /// Panics when `body_index` is outside `1..=25`.
    pub fn get(&self, body_index: usize) -> Keypoint {
        self.points[body_index - 1]
    }

    pub fn set(&mut self, body_index: usize, point: Keypoint) {
        self.points[body_index - 1] = point;
    }

    pub fn points(&self) -> &[Keypoint; KEYPOINT_COUNT] {
        &self.points
    }

    pub fn mean_reliability(&self) -> f64 {
        self.points.iter().map(|p| p.r).sum::<f64>() / KEYPOINT_COUNT as f64
    }
}

/// Contents of the `meta.json` sidecar that accompanies every snippet.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnippetMeta {
    pub snippet_id: String,
    #[serde(default = "default_fps")]
    pub fps: u32,
    #[serde(default = "default_width")]
    pub width: u32,
    #[serde(default = "default_height")]
    pub height: u32,
}

fn default_fps() -> u32 {
    SNIPPET_FPS
}
fn default_width() -> u32 {
    1920
}
fn default_height() -> u32 {
    1080
}

impl SnippetMeta {
    pub fn new(snippet_id: impl Into<String>) -> Self {
        SnippetMeta {
            snippet_id: snippet_id.into(),
            fps: SNIPPET_FPS,
            width: default_width(),
            height: default_height(),
        }
    }

    pub fn with_size(mut self, width: u32, height: u32) -> Self {
        self.width = width;
        self.height = height;
        self
    }

    pub fn validate(&self) -> Result<(), KeypointError> {
        if self.fps != SNIPPET_FPS {
            return Err(KeypointError::InvalidMeta(format!(
                "fps must be {SNIPPET_FPS}, got {}",
                self.fps
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(KeypointError::InvalidMeta("zero frame dimension".into()));
        }
        if self.snippet_id.is_empty() {
            return Err(KeypointError::InvalidMeta("empty snippet_id".into()));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, KeypointError> {
        let meta: SnippetMeta = serde_json::from_str(text).map_err(|e| KeypointError::InvalidMeta(e.to_string()))?;
        meta.validate()?;
        Ok(meta)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metadata serialises")
    }
}

/// A five-second snippet: exactly 250 frames in ascending order.
#[derive(Debug, Clone, PartialEq)]
pub struct SnippetKeypoints {
    pub meta: SnippetMeta,
    frames: Vec<KeypointFrame>,
}

impl SnippetKeypoints {
    /// Builds a snippet from frames already in presentation order. Frame
    /// indices are rewritten to 1..=250.
    pub fn new(meta: SnippetMeta, frames: Vec<KeypointFrame>) -> Result<Self, KeypointError> {
        meta.validate()?;
        if frames.len() != SNIPPET_FRAMES {
            return Err(KeypointError::FrameCountMismatch {
                expected: SNIPPET_FRAMES,
                found: frames.len(),
            });
        }
        let frames = frames
            .into_iter()
            .enumerate()
            .map(|(i, mut f)| {
                f.index = i as u32 + 1;
                f
            })
            .collect();
        Ok(SnippetKeypoints { meta, frames })
    }

    pub fn id(&self) -> &str {
        &self.meta.snippet_id
    }

    pub fn frames(&self) -> &[KeypointFrame] {
        &self.frames
    }

    pub fn frames_mut(&mut self) -> &mut [KeypointFrame] {
        &mut self.frames
    }

    /// Frame by 1-based ordinal.
    pub fn frame(&self, index: u32) -> &KeypointFrame {
        &self.frames[index as usize - 1]
    }

    /// Series of one coordinate of one keypoint across all frames.
    pub fn series(&self, body_index: usize, axis: Axis) -> Vec<f64> {
        self.frames
            .iter()
            .map(|f| {
                let p = f.get(body_index);
                match axis {
                    Axis::X => p.x,
                    Axis::Y => p.y,
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Axis {
    X,
    Y,
}

/// Named role of a body index inside a [`SchemaMap`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Role {
    #[serde(rename = "eyL")]
    LeftEye,
    #[serde(rename = "eyR")]
    RightEye,
    #[serde(rename = "ns")]
    Nose,
    #[serde(rename = "erL")]
    LeftEar,
    #[serde(rename = "erR")]
    RightEar,
    #[serde(rename = "body")]
    Body,
    #[serde(rename = "excluded")]
    Excluded,
}

impl Role {
    /// The role a body index must carry.
    pub fn for_index(body_index: usize) -> Role {
        match body_index {
            1 => Role::LeftEye,
            2 => Role::RightEye,
            3 => Role::Nose,
            4 => Role::LeftEar,
            5 => Role::RightEar,
            6..=21 => Role::Body,
            _ => Role::Excluded,
        }
    }
}

pub const LEFT_EYE: usize = 1;
pub const RIGHT_EYE: usize = 2;
pub const NOSE: usize = 3;
pub const LEFT_EAR: usize = 4;
pub const RIGHT_EAR: usize = 5;
pub const NECK: usize = 6;
pub const RIGHT_SHOULDER: usize = 7;
pub const RIGHT_ELBOW: usize = 8;
pub const RIGHT_WRIST: usize = 9;
pub const LEFT_SHOULDER: usize = 10;
pub const LEFT_ELBOW: usize = 11;
pub const LEFT_WRIST: usize = 12;
pub const MID_HIP: usize = 13;
pub const RIGHT_HIP: usize = 14;
pub const RIGHT_KNEE: usize = 15;
pub const RIGHT_ANKLE: usize = 16;
pub const LEFT_HIP: usize = 17;
pub const LEFT_KNEE: usize = 18;
pub const LEFT_ANKLE: usize = 19;
pub const LEFT_HEEL: usize = 20;
pub const RIGHT_HEEL: usize = 21;

/// BODY-25 external index for each body index 1..=25.
const BODY25_EXTERNAL: [usize; KEYPOINT_COUNT] = [
    16, 15, 0, 18, 17, // head
    1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, // neck .. left ankle
    21, 24, // heels
    19, 20, 22, 23, // toes
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaEntry {
    pub body_index: usize,
    pub external_index: usize,
    pub role: Role,
}

/// Translation from an estimator's keypoint order to body indices 1..=25.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SchemaMap {
    /// `external[i]` is the external index holding body index `i + 1`.
    external: [usize; KEYPOINT_COUNT],
}

impl Default for SchemaMap {
    fn default() -> Self {
        SchemaMap::body25()
    }
}

impl SchemaMap {
    /// Default map for BODY-25 output.
    pub fn body25() -> Self {
        SchemaMap {
            external: BODY25_EXTERNAL,
        }
    }

    pub fn from_entries(entries: &[SchemaEntry]) -> Result<Self, KeypointError> {
        if entries.len() != KEYPOINT_COUNT {
            return Err(KeypointError::InvalidSchema(format!(
                "expected {KEYPOINT_COUNT} entries, got {}",
                entries.len()
            )));
        }
        let mut external = [usize::MAX; KEYPOINT_COUNT];
        let mut used = [false; KEYPOINT_COUNT];
        for e in entries {
            if !(1..=KEYPOINT_COUNT).contains(&e.body_index) {
                return Err(KeypointError::InvalidSchema(format!(
                    "body_index {} out of range",
                    e.body_index
                )));
            }
            if e.external_index >= KEYPOINT_COUNT {
                return Err(KeypointError::InvalidSchema(format!(
                    "external_index {} out of range",
                    e.external_index
                )));
            }
            if e.role != Role::for_index(e.body_index) {
                return Err(KeypointError::InvalidSchema(format!(
                    "body_index {} must have role {:?}, got {:?}",
                    e.body_index,
                    Role::for_index(e.body_index),
                    e.role
                )));
            }
            if external[e.body_index - 1] != usize::MAX {
                return Err(KeypointError::InvalidSchema(format!(
                    "body_index {} listed twice",
                    e.body_index
                )));
            }
            if used[e.external_index] {
                return Err(KeypointError::InvalidSchema(format!(
                    "external_index {} mapped twice",
                    e.external_index
                )));
            }
            used[e.external_index] = true;
            external[e.body_index - 1] = e.external_index;
        }
        Ok(SchemaMap { external })
    }

    pub fn from_json(text: &str) -> Result<Self, KeypointError> {
        let entries: Vec<SchemaEntry> =
            serde_json::from_str(text).map_err(|e| KeypointError::InvalidSchema(e.to_string()))?;
        SchemaMap::from_entries(&entries)
    }

    pub fn entries(&self) -> Vec<SchemaEntry> {
        (1..=KEYPOINT_COUNT)
            .map(|i| SchemaEntry {
                body_index: i,
                external_index: self.external[i - 1],
                role: Role::for_index(i),
            })
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.entries()).expect("schema serialises")
    }

    pub fn external_index(&self, body_index: usize) -> usize {
        self.external[body_index - 1]
    }

    fn map_triplets(&self, index: u32, flat: &[f64]) -> Result<KeypointFrame, KeypointError> {
        if flat.len() != 3 * KEYPOINT_COUNT {
            return Err(KeypointError::MalformedDocument(format!(
                "pose_keypoints_2d has {} values, expected {}",
                flat.len(),
                3 * KEYPOINT_COUNT
            )));
        }
        let mut points = [Keypoint::MISSING; KEYPOINT_COUNT];
        for (slot, &ext) in points.iter_mut().zip(self.external.iter()) {
            let p = Keypoint::new(flat[3 * ext], flat[3 * ext + 1], flat[3 * ext + 2]);
            p.validate()?;
            *slot = p;
        }
        Ok(KeypointFrame::new(index, points))
    }

    fn to_triplets(&self, frame: &KeypointFrame) -> Vec<f64> {
        let mut flat = vec![0.0; 3 * KEYPOINT_COUNT];
        for (i, &ext) in self.external.iter().enumerate() {
            let p = frame.points[i];
            flat[3 * ext] = p.x;
            flat[3 * ext + 1] = p.y;
            flat[3 * ext + 2] = p.r;
        }
        flat
    }
}

/// Which body indices a stage consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KeypointSelection {
    /// Indices 1..=21.
    WithHead,
    /// Indices 6..=21.
    WithoutHead,
    /// Indices 1..=5, the face-mask anchors.
    FaceMask,
}

const WITH_HEAD: [usize; 21] = [
    1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16, 17, 18, 19, 20, 21,
];

pub fn select_keypoints(selection: KeypointSelection) -> &'static [usize] {
    match selection {
        KeypointSelection::WithHead => &WITH_HEAD,
        KeypointSelection::WithoutHead => &WITH_HEAD[5..],
        KeypointSelection::FaceMask => &WITH_HEAD[..5],
    }
}

#[derive(Debug, Deserialize, Serialize)]
struct PoseDocument {
    #[serde(default)]
    people: Vec<PersonEntry>,
}

#[derive(Debug, Deserialize, Serialize)]
struct PersonEntry {
    pose_keypoints_2d: Vec<f64>,
}

/// Parses one per-frame pose document.
///
/// Among several listed people the one with the highest mean reliability wins
/// (first listed on ties); a document with no people yields an all-missing frame.
pub fn parse_pose_frame(document: &str, index: u32, schema: &SchemaMap) -> Result<KeypointFrame, KeypointError> {
    let doc: PoseDocument =
        serde_json::from_str(document).map_err(|e| KeypointError::MalformedDocument(e.to_string()))?;
    let mut best: Option<KeypointFrame> = None;
    for person in &doc.people {
        let frame = schema.map_triplets(index, &person.pose_keypoints_2d)?;
        let better = match &best {
            None => true,
            Some(b) => frame.mean_reliability() > b.mean_reliability(),
        };
        if better {
            best = Some(frame);
        }
    }
    Ok(best.unwrap_or_else(|| KeypointFrame::missing(index)))
}

/// Serialises frames as one pose document, one person per frame, in order.
pub fn pose_document(people: &[&KeypointFrame], schema: &SchemaMap) -> String {
    let doc = PoseDocument {
        people: people
            .iter()
            .map(|f| PersonEntry {
                pose_keypoints_2d: schema.to_triplets(f),
            })
            .collect(),
    };
    serde_json::to_string(&doc).expect("pose document serialises")
}

/// A pose document together with the numeric key it sorts by.
#[derive(Debug, Clone)]
pub struct FrameDocument {
    pub key: u64,
    pub json: String,
}

/// Assembles a snippet from exactly 250 documents given in any order.
pub fn load_snippet(
    mut documents: Vec<FrameDocument>,
    schema: &SchemaMap,
    meta: SnippetMeta,
) -> Result<SnippetKeypoints, KeypointError> {
    meta.validate()?;
    if documents.len() != SNIPPET_FRAMES {
        return Err(KeypointError::FrameCountMismatch {
            expected: SNIPPET_FRAMES,
            found: documents.len(),
        });
    }
    documents.sort_by_key(|d| d.key);
    if let Some(w) = documents.windows(2).find(|w| w[0].key == w[1].key) {
        return Err(KeypointError::DuplicateFrame(w[0].key));
    }
    let frames = documents
        .iter()
        .enumerate()
        .map(|(i, d)| parse_pose_frame(&d.json, i as u32 + 1, schema))
        .collect::<Result<Vec<_>, _>>()?;
    SnippetKeypoints::new(meta, frames)
}

/// Numeric frame key of a document file name: the last run of digits in its stem.
pub fn frame_key(file_name: &str) -> Option<u64> {
    let stem = file_name.strip_suffix(".json").unwrap_or(file_name);
    let bytes = stem.as_bytes();
    let end = bytes.iter().rposition(|b| b.is_ascii_digit())? + 1;
    let start = bytes[..end]
        .iter()
        .rposition(|b| !b.is_ascii_digit())
        .map_or(0, |p| p + 1);
    stem[start..end].parse().ok()
}

/// Loads a snippet directory: `meta.json` plus one `*.json` pose document per frame.
pub fn load_snippet_dir(dir: &Path, schema: &SchemaMap) -> Result<SnippetKeypoints, KeypointError> {
    let meta_path = dir.join(META_FILE);
    let meta_text = fs::read_to_string(&meta_path).map_err(|e| KeypointError::io(&meta_path, e))?;
    let meta = SnippetMeta::from_json(&meta_text)?;
    let mut documents = Vec::with_capacity(SNIPPET_FRAMES);
    let entries = fs::read_dir(dir).map_err(|e| KeypointError::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| KeypointError::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name == META_FILE || !name.ends_with(".json") {
            continue;
        }
        let Some(key) = frame_key(&name) else {
            continue;
        };
        let path = entry.path();
        let json = fs::read_to_string(&path).map_err(|e| KeypointError::io(&path, e))?;
        documents.push(FrameDocument { key, json });
    }
    load_snippet(documents, schema, meta)
}

/// File name of the pose document for 1-based frame `index`.
pub fn frame_document_name(index: u32) -> String {
    format!("frame_{index:06}_keypoints.json")
}

/// Writes a snippet as a directory readable by [`load_snippet_dir`].
pub fn write_snippet_dir(snippet: &SnippetKeypoints, schema: &SchemaMap, dir: &Path) -> Result<(), KeypointError> {
    write_snippet_dir_with(snippet, schema, dir, |frame| vec![frame.clone()])
}

/// Like [`write_snippet_dir`], but `people` decides which person entries each
/// frame document lists (e.g. to add bystanders).
pub fn write_snippet_dir_with<F>(
    snippet: &SnippetKeypoints,
    schema: &SchemaMap,
    dir: &Path,
    mut people: F,
) -> Result<(), KeypointError>
where
    F: FnMut(&KeypointFrame) -> Vec<KeypointFrame>,
{
    fs::create_dir_all(dir).map_err(|e| KeypointError::io(dir, e))?;
    let meta_path = dir.join(META_FILE);
    fs::write(&meta_path, snippet.meta.to_json()).map_err(|e| KeypointError::io(&meta_path, e))?;
    for frame in snippet.frames() {
        let listed = people(frame);
        let refs: Vec<&KeypointFrame> = listed.iter().collect();
        let path = dir.join(frame_document_name(frame.index));
        fs::write(&path, pose_document(&refs, schema)).map_err(|e| KeypointError::io(&path, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn triplets(f: impl Fn(usize) -> (f64, f64, f64)) -> Vec<f64> {
        (0..KEYPOINT_COUNT)
            .flat_map(|i| {
                let (x, y, r) = f(i);
                [x, y, r]
            })
            .collect()
    }

    fn doc(people: &[Vec<f64>]) -> String {
        let people: Vec<_> = people
            .iter()
            .map(|p| serde_json::json!({ "pose_keypoints_2d": p, "face_keypoints_2d": [] }))
            .collect();
        serde_json::json!({ "version": 1.3, "people": people }).to_string()
    }

    #[test]
    fn hand_fixture_maps_field_by_field() {
        // external index e holds (100+e, 200+e, e/100)
        let flat = triplets(|e| (100.0 + e as f64, 200.0 + e as f64, e as f64 / 100.0));
        let schema = SchemaMap::body25();
        let frame = parse_pose_frame(&doc(&[flat]), 7, &schema).unwrap();
        assert_eq!(frame.index, 7);
        // left eye is BODY-25 index 16, nose 0, left heel 21
        assert_eq!(frame.get(LEFT_EYE), Keypoint::new(116.0, 216.0, 0.16));
        assert_eq!(frame.get(RIGHT_EYE), Keypoint::new(115.0, 215.0, 0.15));
        assert_eq!(frame.get(NOSE), Keypoint::new(100.0, 200.0, 0.0));
        assert_eq!(frame.get(LEFT_EAR), Keypoint::new(118.0, 218.0, 0.18));
        assert_eq!(frame.get(RIGHT_EAR), Keypoint::new(117.0, 217.0, 0.17));
        assert_eq!(frame.get(NECK), Keypoint::new(101.0, 201.0, 0.01));
        assert_eq!(frame.get(LEFT_ANKLE), Keypoint::new(114.0, 214.0, 0.14));
        assert_eq!(frame.get(LEFT_HEEL), Keypoint::new(121.0, 221.0, 0.21));
        assert_eq!(frame.get(RIGHT_HEEL), Keypoint::new(124.0, 224.0, 0.24));
        assert_eq!(frame.get(25), Keypoint::new(123.0, 223.0, 0.23));
    }

    #[test]
    fn empty_people_is_all_missing() {
        let frame = parse_pose_frame(r#"{"version":1.3,"people":[]}"#, 1, &SchemaMap::body25()).unwrap();
        assert!(frame.points().iter().all(Keypoint::is_missing));
    }

    #[test]
    fn short_triplet_array_is_malformed() {
        let mut flat = triplets(|_| (1.0, 1.0, 0.5));
        flat.truncate(72);
        let err = parse_pose_frame(&doc(&[flat]), 1, &SchemaMap::body25()).unwrap_err();
        assert!(matches!(err, KeypointError::MalformedDocument(_)));
    }

    #[test]
    fn unparseable_and_out_of_range_documents_are_malformed() {
        let schema = SchemaMap::body25();
        assert!(matches!(
            parse_pose_frame("{not json", 1, &schema),
            Err(KeypointError::MalformedDocument(_))
        ));
        let flat = triplets(|_| (1.0, 1.0, 1.5));
        assert!(matches!(
            parse_pose_frame(&doc(&[flat]), 1, &schema),
            Err(KeypointError::MalformedDocument(_))
        ));
    }

    #[test]
    fn most_reliable_person_wins_first_on_tie() {
        let schema = SchemaMap::body25();
        let hand = triplets(|_| (5.0, 5.0, 0.2));
        let infant = triplets(|_| (900.0, 500.0, 0.8));
        let frame = parse_pose_frame(&doc(&[hand.clone(), infant.clone()]), 1, &schema).unwrap();
        assert_eq!(frame.get(NOSE).x, 900.0);

        let twin = triplets(|_| (10.0, 10.0, 0.8));
        let frame = parse_pose_frame(&doc(&[infant, twin]), 1, &schema).unwrap();
        assert_eq!(frame.get(NOSE).x, 900.0);
    }

    #[test]
    fn selections_are_consistent() {
        let with = select_keypoints(KeypointSelection::WithHead);
        let without = select_keypoints(KeypointSelection::WithoutHead);
        let face = select_keypoints(KeypointSelection::FaceMask);
        assert_eq!(with, (1..=21).collect::<Vec<_>>().as_slice());
        assert_eq!(without, (6..=21).collect::<Vec<_>>().as_slice());
        assert_eq!(face, &[1, 2, 3, 4, 5]);
        let mut union: Vec<usize> = face.iter().chain(without).copied().collect();
        union.sort_unstable();
        union.dedup();
        assert_eq!(union, with);
    }

    #[test]
    fn schema_json_round_trip_and_validation() {
        let schema = SchemaMap::body25();
        assert_eq!(SchemaMap::from_json(&schema.to_json()).unwrap(), schema);

        let mut entries = schema.entries();
        entries[3].external_index = entries[4].external_index;
        assert!(matches!(
            SchemaMap::from_entries(&entries),
            Err(KeypointError::InvalidSchema(_))
        ));

        let mut entries = schema.entries();
        entries[0].role = Role::Body;
        assert!(SchemaMap::from_entries(&entries).is_err());

        let mut entries = schema.entries();
        entries[22].role = Role::Body;
        assert!(SchemaMap::from_entries(&entries).is_err());
    }

    #[test]
    fn frame_keys_from_file_names() {
        assert_eq!(frame_key("frame_000042_keypoints.json"), Some(42));
        assert_eq!(frame_key("clip7_000000000012_keypoints.json"), Some(12));
        assert_eq!(frame_key("meta.json"), None);
    }

    fn documents(n: usize) -> Vec<FrameDocument> {
        (0..n)
            .map(|i| FrameDocument {
                key: i as u64 * 3 + 10,
                json: doc(&[triplets(|e| (i as f64 + e as f64, 2.0 * i as f64, 0.9))]),
            })
            .collect()
    }

    #[test]
    fn load_snippet_orders_frames_and_counts() {
        let schema = SchemaMap::body25();
        let snippet = load_snippet(documents(250), &schema, SnippetMeta::new("s1")).unwrap();
        assert_eq!(snippet.frames().len(), 250);
        assert_eq!(snippet.frame(1).index, 1);
        assert_eq!(snippet.frame(250).index, 250);
        assert_eq!(snippet.frame(250).get(NOSE).y, 2.0 * 249.0);

        let err = load_snippet(documents(249), &schema, SnippetMeta::new("s1")).unwrap_err();
        assert!(matches!(
            err,
            KeypointError::FrameCountMismatch {
                expected: 250,
                found: 249
            }
        ));
    }

    #[test]
    fn load_snippet_is_order_insensitive() {
        let schema = SchemaMap::body25();
        let sorted = load_snippet(documents(250), &schema, SnippetMeta::new("s")).unwrap();
        let mut shuffled = documents(250);
        // deterministic scramble
        shuffled.reverse();
        shuffled.swap(3, 200);
        shuffled.rotate_left(77);
        let loaded = load_snippet(shuffled, &schema, SnippetMeta::new("s")).unwrap();
        assert_eq!(loaded, sorted);
    }

    #[test]
    fn duplicate_keys_rejected() {
        let mut docs = documents(250);
        docs[5].key = docs[6].key;
        assert!(matches!(
            load_snippet(docs, &SchemaMap::body25(), SnippetMeta::new("s")),
            Err(KeypointError::DuplicateFrame(_))
        ));
    }

    #[test]
    fn meta_requires_fixed_frame_rate() {
        let err = SnippetMeta::from_json(r#"{"snippet_id":"a","fps":30}"#).unwrap_err();
        assert!(matches!(err, KeypointError::InvalidMeta(_)));
        let meta = SnippetMeta::from_json(r#"{"snippet_id":"a"}"#).unwrap();
        assert_eq!((meta.fps, meta.width, meta.height), (50, 1920, 1080));
    }

    #[test]
    fn directory_round_trip() {
        let schema = SchemaMap::body25();
        let snippet = load_snippet(documents(250), &schema, SnippetMeta::new("dir")).unwrap();
        let tmp = tempfile::tempdir().unwrap();
        write_snippet_dir(&snippet, &schema, tmp.path()).unwrap();
        let back = load_snippet_dir(tmp.path(), &schema).unwrap();
        assert_eq!(back, snippet);
    }
}
