//! Seeded synthetic snippets and stick-figure renderings.
//!
//! Class `Present` adds a band-limited oscillation to wrists and ankles on
//! top of the slow drift both classes share. The motion is a generator
//! convenience with no clinical meaning.

use std::f64::consts::TAU;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::blur::{raw_center, FrameImage};
use crate::features::{build_features, FeatureError, FeatureMode, FmClass, LabeledSample};
use crate::keypoints::{
    pose_document, write_snippet_dir_with, FrameDocument, Keypoint, KeypointError, KeypointFrame, SchemaMap,
    SnippetKeypoints, SnippetMeta, KEYPOINT_COUNT, LEFT_ANKLE, LEFT_EAR, LEFT_ELBOW, LEFT_KNEE, LEFT_WRIST,
    RIGHT_ANKLE, RIGHT_EAR, RIGHT_ELBOW, RIGHT_KNEE, RIGHT_WRIST, SNIPPET_FPS, SNIPPET_FRAMES,
};

/// Body-relative rest pose, body height about 1, y downwards, head up.
const REST_POSE: [(f64, f64); KEYPOINT_COUNT] = [
    (0.035, -0.43),  // left eye
    (-0.035, -0.43), // right eye
    (0.0, -0.40),    // nose
    (0.08, -0.41),   // left ear
    (-0.08, -0.41),  // right ear
    (0.0, -0.30),    // neck
    (-0.12, -0.28),  // right shoulder
    (-0.22, -0.15),  // right elbow
    (-0.20, -0.02),  // right wrist
    (0.12, -0.28),   // left shoulder
    (0.22, -0.15),   // left elbow
    (0.20, -0.02),   // left wrist
    (0.0, 0.05),     // mid hip
    (-0.07, 0.05),   // right hip
    (-0.14, 0.20),   // right knee
    (-0.10, 0.35),   // right ankle
    (0.07, 0.05),    // left hip
    (0.14, 0.20),    // left knee
    (0.10, 0.35),    // left ankle
    (0.11, 0.38),    // left heel
    (-0.11, 0.38),   // right heel
    (0.13, 0.41),    // left big toe
    (0.15, 0.40),    // left small toe
    (-0.13, 0.41),   // right big toe
    (-0.15, 0.40),   // right small toe
];

/// Drawn segments as body index pairs.
const BONES: [(usize, usize); 20] = [
    (3, 6),
    (6, 7),
    (7, 8),
    (8, 9),
    (6, 10),
    (10, 11),
    (11, 12),
    (6, 13),
    (13, 14),
    (14, 15),
    (15, 16),
    (13, 17),
    (17, 18),
    (18, 19),
    (19, 20),
    (16, 21),
    (20, 22),
    (20, 23),
    (21, 24),
    (21, 25),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub class: FmClass,
    pub seed: u64,
    pub width: u32,
    pub height: u32,
    /// Body height in pixels.
    pub body_scale: f64,
    /// Oscillation band in Hz.
    pub band: (f64, f64),
    /// Oscillation amplitude in pixels.
    pub amplitude: f64,
    /// Drift speed bound in pixels per second.
    pub drift: f64,
    /// Per-coordinate detection noise in pixels (standard deviation).
    pub jitter: f64,
    pub missing_rate: f64,
    /// Fraction of frame documents that also list a less reliable bystander.
    pub contamination_rate: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            class: FmClass::Absent,
            seed: 0,
            width: 1920,
            height: 1080,
            body_scale: 500.0,
            band: (1.0, 4.0),
            amplitude: 12.0,
            drift: 4.0,
            jitter: 0.5,
            missing_rate: 0.0,
            contamination_rate: 0.0,
        }
    }
}

impl SynthSpec {
    pub fn new(class: FmClass, seed: u64) -> Self {
        SynthSpec {
            class,
            seed,
            ..SynthSpec::default()
        }
    }

    /// Same proportions on a smaller canvas.
    pub fn scaled(mut self, width: u32, height: u32) -> Self {
        let f = width as f64 / self.width as f64;
        self.width = width;
        self.height = height;
        self.body_scale *= f;
        self.amplitude *= f;
        self.drift *= f;
        self.jitter *= f;
        self
    }

    pub fn validate(&self) -> Result<(), String> {
        for (name, rate) in [
            ("missing_rate", self.missing_rate),
            ("contamination_rate", self.contamination_rate),
        ] {
            if !(0.0..=1.0).contains(&rate) {
                return Err(format!("{name} must lie in [0, 1], got {rate}"));
            }
        }
        let nyquist = SNIPPET_FPS as f64 / 2.0;
        let (lo, hi) = self.band;
        if !(lo > 0.0 && lo <= hi && hi < nyquist) {
            return Err(format!("band ({lo}, {hi}) must lie within (0, {nyquist}) Hz"));
        }
        if self.width == 0 || self.height == 0 || self.body_scale <= 0.0 {
            return Err("canvas and body scale must be positive".into());
        }
        Ok(())
    }

    pub fn snippet_id(&self) -> String {
        let tag = match self.class {
            FmClass::Present => "p",
            FmClass::Absent => "a",
        };
        format!("synth-{tag}-{:016x}", self.seed)
    }

    fn rng(&self, stream: &str) -> ChaCha8Rng {
        let mut h = Sha256::new();
        h.update(b"gma-synth");
        h.update(stream.as_bytes());
        h.update(self.seed.to_le_bytes());
        h.update([self.class.as_label()]);
        ChaCha8Rng::from_seed(h.finalize().into())
    }
}

/// Sum of a few sinusoids with random frequencies in `band` and random phases.
struct Oscillator {
    parts: Vec<(f64, f64, f64)>,
}

impl Oscillator {
    fn new<R: Rng>(rng: &mut R, band: (f64, f64), amplitude: f64, parts: usize) -> Self {
        let parts = (0..parts)
            .map(|_| {
                let freq = if band.1 > band.0 {
                    rng.random_range(band.0..band.1)
                } else {
                    band.0
                };
                (
                    freq,
                    rng.random_range(0.0..TAU),
                    amplitude / parts as f64 * rng.random_range(0.8..1.2),
                )
            })
            .collect();
        Oscillator { parts }
    }

    fn at(&self, t: f64) -> f64 {
        self.parts.iter().map(|(f, ph, a)| a * (TAU * f * t + ph).sin()).sum()
    }
}

/// Slow movement: linear drift plus a sub-Hz sway.
struct Drift {
    velocity: f64,
    sway: f64,
    freq: f64,
    phase: f64,
}

impl Drift {
    fn new<R: Rng>(rng: &mut R, speed: f64) -> Self {
        Drift {
            velocity: if speed > 0.0 {
                rng.random_range(-speed..speed)
            } else {
                0.0
            },
            sway: speed * rng.random_range(0.0..0.5),
            freq: rng.random_range(0.03..0.15),
            phase: rng.random_range(0.0..TAU),
        }
    }

    fn at(&self, t: f64) -> f64 {
        self.velocity * t + self.sway * (TAU * self.freq * t + self.phase).sin()
    }
}

/// Keypoints moved together with a limb end: elbows/knees at half amplitude,
/// heels and toes rigidly with the ankle.
fn limb_followers(end: usize) -> &'static [(usize, f64)] {
    match end {
        RIGHT_WRIST => &[(RIGHT_WRIST, 1.0), (RIGHT_ELBOW, 0.5)],
        LEFT_WRIST => &[(LEFT_WRIST, 1.0), (LEFT_ELBOW, 0.5)],
        RIGHT_ANKLE => &[(RIGHT_ANKLE, 1.0), (RIGHT_KNEE, 0.5), (21, 1.0), (24, 1.0), (25, 1.0)],
        LEFT_ANKLE => &[(LEFT_ANKLE, 1.0), (LEFT_KNEE, 0.5), (20, 1.0), (22, 1.0), (23, 1.0)],
        _ => &[],
    }
}

/// Generates one 250-frame snippet. Missing detections are `(0, 0, 0)`.
pub fn gen_snippet(spec: &SynthSpec) -> SnippetKeypoints {
    spec.validate().expect("invalid synthetic spec");
    let mut rng = spec.rng("motion");
    let scale = spec.body_scale * rng.random_range(0.85..1.15);
    let origin = (
        spec.width as f64 / 2.0 + rng.random_range(-0.05..0.05) * spec.width as f64,
        spec.height as f64 / 2.0 + rng.random_range(-0.05..0.05) * spec.height as f64,
    );
    let body = [Drift::new(&mut rng, spec.drift), Drift::new(&mut rng, spec.drift)];
    let ends = [RIGHT_WRIST, LEFT_WRIST, RIGHT_ANKLE, LEFT_ANKLE];
    let limb_drift: Vec<[Drift; 2]> = ends
        .iter()
        .map(|_| [Drift::new(&mut rng, spec.drift), Drift::new(&mut rng, spec.drift)])
        .collect();
    let limb_osc: Vec<[Oscillator; 2]> = ends
        .iter()
        .map(|_| {
            [
                Oscillator::new(&mut rng, spec.band, spec.amplitude, 2),
                Oscillator::new(&mut rng, spec.band, spec.amplitude, 2),
            ]
        })
        .collect();
    let oscillate = spec.class == FmClass::Present;

    let noise = Normal::new(0.0, spec.jitter.max(0.0)).expect("finite jitter");
    let mut det = spec.rng("detections");
    let frames = (0..SNIPPET_FRAMES)
        .map(|f| {
            let t = f as f64 / SNIPPET_FPS as f64;
            let mut offsets = [[0.0f64; 2]; KEYPOINT_COUNT];
            for (l, &end) in ends.iter().enumerate() {
                for axis in 0..2 {
                    let mut d = limb_drift[l][axis].at(t);
                    if oscillate {
                        d += limb_osc[l][axis].at(t);
                    }
                    for &(k, w) in limb_followers(end) {
                        offsets[k - 1][axis] += w * d;
                    }
                }
            }
            let mut frame = KeypointFrame::missing(f as u32 + 1);
            for (k, (rest, off)) in REST_POSE.iter().zip(offsets).enumerate() {
                let x = origin.0 + rest.0 * scale + body[0].at(t) + off[0] + noise.sample(&mut det);
                let y = origin.1 + rest.1 * scale + body[1].at(t) + off[1] + noise.sample(&mut det);
                let r = det.random_range(0.6..0.95);
                let missing = det.random_bool(spec.missing_rate);
                if !missing {
                    frame.set(
                        k + 1,
                        Keypoint::new(
                            x.clamp(1.0, spec.width as f64 - 1.0),
                            y.clamp(1.0, spec.height as f64 - 1.0),
                            r,
                        ),
                    );
                }
            }
            frame
        })
        .collect();
    let meta = SnippetMeta::new(spec.snippet_id()).with_size(spec.width, spec.height);
    SnippetKeypoints::new(meta, frames).expect("250 generated frames")
}

/// The tracked person, sometimes accompanied by a shifted, less reliable bystander.
fn people_with_bystanders(spec: &SynthSpec) -> impl FnMut(&KeypointFrame) -> Vec<KeypointFrame> {
    let mut rng = spec.rng("contamination");
    let rate = spec.contamination_rate;
    let shift = spec.body_scale * 0.6;
    move |frame| {
        if !rng.random_bool(rate) {
            return vec![frame.clone()];
        }
        let mut other = frame.clone();
        for k in 1..=KEYPOINT_COUNT {
            let p = frame.get(k);
            if !p.is_missing() {
                other.set(k, Keypoint::new(p.x + shift, p.y, p.r * 0.4));
            }
        }
        if rng.random_bool(0.5) {
            vec![other, frame.clone()]
        } else {
            vec![frame.clone(), other]
        }
    }
}

/// Frame documents of a generated snippet, with bystanders per the spec.
pub fn frame_documents(snippet: &SnippetKeypoints, spec: &SynthSpec, schema: &SchemaMap) -> Vec<FrameDocument> {
    let mut people = people_with_bystanders(spec);
    snippet
        .frames()
        .iter()
        .map(|f| {
            let listed = people(f);
            let refs: Vec<&KeypointFrame> = listed.iter().collect();
            FrameDocument {
                key: f.index as u64,
                json: pose_document(&refs, schema),
            }
        })
        .collect()
}

/// Writes a generated snippet as a keypoint directory.
pub fn write_synth_dir(
    snippet: &SnippetKeypoints,
    spec: &SynthSpec,
    schema: &SchemaMap,
    dir: &Path,
) -> Result<(), KeypointError> {
    write_snippet_dir_with(snippet, schema, dir, people_with_bystanders(spec))
}

/// Specs for `n_per_class` snippets of each class, alternating classes.
pub fn dataset_specs(n_per_class: usize, seed: u64, template: &SynthSpec) -> Vec<SynthSpec> {
    (0..n_per_class)
        .flat_map(|i| {
            [FmClass::Absent, FmClass::Present].map(|class| SynthSpec {
                class,
                seed: seed.wrapping_mul(1_000_003).wrapping_add(i as u64),
                ..template.clone()
            })
        })
        .collect()
}

/// Balanced labelled feature dataset.
pub fn gen_dataset(
    n_per_class: usize,
    seed: u64,
    template: &SynthSpec,
    mode: FeatureMode,
) -> Result<Vec<LabeledSample>, FeatureError> {
    dataset_specs(n_per_class, seed, template)
        .iter()
        .map(|spec| {
            let snippet = gen_snippet(spec);
            Ok(LabeledSample {
                id: snippet.id().to_owned(),
                features: build_features(&snippet, mode)?,
                class: spec.class,
            })
        })
        .collect()
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Semi-axes of the rendered face patch for a frame.
pub fn face_patch_axes(frame: &KeypointFrame) -> (f64, f64) {
    let ears = (frame.get(LEFT_EAR).x - frame.get(RIGHT_EAR).x).abs();
    let a = (0.6 * ears).max(4.0);
    (a, 0.6 * a)
}

fn background(y: u32, height: u32) -> [u8; 3] {
    let g = (40 * y / height.max(1)) as u8;
    [40 + g, 60, 90 - g]
}

const LIMB_COLOUR: [u8; 3] = [220, 200, 180];

/// Renders frame `index` (1-based): gradient background, limbs as thick
/// segments and a checkered face patch centred at the frame's raw mask centre.
pub fn render_frame(snippet: &SnippetKeypoints, index: u32, seed: u64) -> FrameImage {
    let (w, h) = (snippet.meta.width, snippet.meta.height);
    let frame = snippet.frame(index);
    let mut img = FrameImage::filled(w, h, [0, 0, 0]);
    {
        let row_bytes = w as usize * 3;
        for (y, row) in img.pixels_mut().chunks_exact_mut(row_bytes).enumerate() {
            let c = background(y as u32, h);
            for px in row.chunks_exact_mut(3) {
                px.copy_from_slice(&c);
            }
        }
    }

    let (ax, ay) = face_patch_axes(frame);
    let radius = (ax / 12.0).max(1.0);
    for &(a, b) in &BONES {
        let (p, q) = (frame.get(a), frame.get(b));
        if p.is_missing() || q.is_missing() {
            continue;
        }
        draw_segment(&mut img, (p.x, p.y), (q.x, q.y), radius, LIMB_COLOUR);
    }

    let c = raw_center(frame);
    let x0 = (c.cx - ax).floor().max(0.0) as i64;
    let x1 = ((c.cx + ax).ceil() as i64).min(w as i64 - 1);
    let y0 = (c.cy - ay).floor().max(0.0) as i64;
    let y1 = ((c.cy + ay).ceil() as i64).min(h as i64 - 1);
    let cell = (ax / 6.0).max(2.0) as i64;
    for y in y0..=y1 {
        for x in x0..=x1 {
            let dx = (x as f64 - c.cx) / ax;
            let dy = (y as f64 - c.cy) / ay;
            if dx * dx + dy * dy > 1.0 {
                continue;
            }
            let bits = splitmix(seed ^ splitmix(((x / cell) as u64) << 32 | (y / cell) as u64));
            let dark = ((x / cell) + (y / cell)) % 2 == 0;
            let base: u8 = if dark { 30 } else { 230 };
            let tint = (bits & 0x1f) as u8;
            img.put(
                x as u32,
                y as u32,
                [base.saturating_add(tint), base, base.saturating_sub(tint)],
            );
        }
    }
    img
}

fn draw_segment(img: &mut FrameImage, p: (f64, f64), q: (f64, f64), radius: f64, colour: [u8; 3]) {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let x0 = ((p.0.min(q.0) - radius).floor() as i64).max(0);
    let x1 = ((p.0.max(q.0) + radius).ceil() as i64).min(w - 1);
    let y0 = ((p.1.min(q.1) - radius).floor() as i64).max(0);
    let y1 = ((p.1.max(q.1) + radius).ceil() as i64).min(h - 1);
    let (dx, dy) = (q.0 - p.0, q.1 - p.1);
    let len2 = dx * dx + dy * dy;
    for y in y0..=y1 {
        for x in x0..=x1 {
            let (px, py) = (x as f64 - p.0, y as f64 - p.1);
            let t = if len2 > 0.0 {
                ((px * dx + py * dy) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let (ex, ey) = (px - t * dx, py - t * dy);
            if ex * ex + ey * ey <= radius * radius {
                img.put(x as u32, y as u32, colour);
            }
        }
    }
}

/// All 250 frames in memory. Prefer [`render_frame`] for full-HD canvases.
pub fn render_frames(snippet: &SnippetKeypoints, seed: u64) -> Vec<FrameImage> {
    (1..=SNIPPET_FRAMES as u32)
        .map(|i| render_frame(snippet, i, seed))
        .collect()
}

/// Pixels of the rendered face patch: those that differ from both background and limbs.
pub fn face_patch_pixels(img: &FrameImage) -> Vec<(u32, u32)> {
    let mut out = Vec::new();
    for y in 0..img.height() {
        let bg = background(y, img.height());
        for x in 0..img.width() {
            let p = img.get(x, y);
            if p != bg && p != LIMB_COLOUR {
                out.push((x, y));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::keypoints::{load_snippet, parse_pose_frame};

    fn band_energy(series: &[f64], lo: f64, hi: f64) -> f64 {
        // direct DFT over the linearly detrended series
        let n = series.len();
        let tm = (n - 1) as f64 / 2.0;
        let mean = series.iter().sum::<f64>() / n as f64;
        let slope = series
            .iter()
            .enumerate()
            .map(|(t, v)| (t as f64 - tm) * (v - mean))
            .sum::<f64>()
            / (0..n).map(|t| (t as f64 - tm).powi(2)).sum::<f64>();
        let series: Vec<f64> = series
            .iter()
            .enumerate()
            .map(|(t, v)| v - slope * (t as f64 - tm))
            .collect();
        (1..n / 2)
            .filter(|&k| {
                let f = k as f64 * SNIPPET_FPS as f64 / n as f64;
                f >= lo && f <= hi
            })
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (t, v) in series.iter().enumerate() {
                    let ang = TAU * (k * t) as f64 / n as f64;
                    re += (v - mean) * ang.cos();
                    im -= (v - mean) * ang.sin();
                }
                re * re + im * im
            })
            .sum()
    }

    #[test]
    fn deterministic() {
        let spec = SynthSpec {
            missing_rate: 0.1,
            ..SynthSpec::new(FmClass::Present, 9)
        };
        assert_eq!(gen_snippet(&spec), gen_snippet(&spec));
        let other = SynthSpec::new(FmClass::Present, 10);
        assert_ne!(gen_snippet(&spec), gen_snippet(&other));
    }

    #[test]
    fn classes_separate_spectrally() {
        use crate::keypoints::Axis;
        for seed in 0..40 {
            let p = gen_snippet(&SynthSpec::new(FmClass::Present, seed));
            let a = gen_snippet(&SynthSpec::new(FmClass::Absent, seed));
            for k in [RIGHT_WRIST, LEFT_ANKLE] {
                let ep = band_energy(&p.series(k, Axis::X), 1.0, 4.0);
                let ea = band_energy(&a.series(k, Axis::X), 1.0, 4.0);
                assert!(ep >= 10.0 * ea, "seed {seed} keypoint {k}: {ep} vs {ea}");
            }
        }
    }

    #[test]
    fn missing_rate_zero_has_no_sentinels() {
        let s = gen_snippet(&SynthSpec::new(FmClass::Absent, 3));
        assert!(s.frames().iter().all(|f| f.points().iter().all(|p| !p.is_missing())));
        let s = gen_snippet(&SynthSpec {
            missing_rate: 0.2,
            ..SynthSpec::new(FmClass::Absent, 3)
        });
        let missing = s
            .frames()
            .iter()
            .flat_map(|f| f.points())
            .filter(|p| p.is_missing())
            .count();
        let rate = missing as f64 / (250.0 * 25.0);
        assert!((rate - 0.2).abs() < 0.03, "{rate}");
    }

    #[test]
    fn documents_round_trip_despite_bystanders() {
        let spec = SynthSpec {
            contamination_rate: 0.5,
            missing_rate: 0.05,
            ..SynthSpec::new(FmClass::Present, 4)
        };
        let snippet = gen_snippet(&spec);
        let schema = SchemaMap::body25();
        let docs = frame_documents(&snippet, &spec, &schema);
        assert!(docs.iter().any(|d| d.json.matches("pose_keypoints_2d").count() == 2));
        let parsed = parse_pose_frame(&docs[0].json, 1, &schema).unwrap();
        assert_eq!(&parsed, snippet.frame(1));
        let loaded = load_snippet(docs, &schema, snippet.meta.clone()).unwrap();
        assert_eq!(loaded, snippet);
    }

    #[test]
    fn spec_validation() {
        assert!(SynthSpec::default().validate().is_ok());
        let bad = [
            SynthSpec {
                missing_rate: 1.5,
                ..Default::default()
            },
            SynthSpec {
                band: (0.0, 4.0),
                ..Default::default()
            },
            SynthSpec {
                band: (1.0, 25.0),
                ..Default::default()
            },
        ];
        assert!(bad.iter().all(|s| s.validate().is_err()));
    }

    #[test]
    fn dataset_is_balanced_and_distinct() {
        let template = SynthSpec::default().scaled(320, 180);
        let data = gen_dataset(6, 1, &template, FeatureMode::WithoutHead).unwrap();
        assert_eq!(data.len(), 12);
        assert_eq!(data.iter().filter(|s| s.class == FmClass::Present).count(), 6);
        let ids: std::collections::BTreeSet<_> = data.iter().map(|s| s.id.clone()).collect();
        assert_eq!(ids.len(), 12);
    }

    #[test]
    fn face_patch_centred_on_raw_center() {
        let snippet = gen_snippet(&SynthSpec::new(FmClass::Present, 2).scaled(640, 360));
        for index in [1, 100, 250] {
            let img = render_frame(&snippet, index, 5);
            let patch = face_patch_pixels(&img);
            assert!(patch.len() > 50);
            let n = patch.len() as f64;
            let cx = patch.iter().map(|p| p.0 as f64).sum::<f64>() / n;
            let cy = patch.iter().map(|p| p.1 as f64).sum::<f64>() / n;
            let c = raw_center(snippet.frame(index));
            assert!(
                (cx - c.cx).abs() <= 2.0 && (cy - c.cy).abs() <= 2.0,
                "({cx},{cy}) vs {c:?}"
            );
        }
        assert_eq!(render_frame(&snippet, 7, 5), render_frame(&snippet, 7, 5));
    }
}
