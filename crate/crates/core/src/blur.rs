//! Keypoint-driven face blurring.
//!
//! Two phases. First a per-frame mask trajectory is derived from the head
//! keypoints: raw centre, reliability gate, exponential smoothing. This is
//! sequential over frames. Then each frame is blurred independently inside an
//! axis-aligned ellipse around its centre (normalised box filter followed by
//! uniform integer noise). Every frame draws noise from its own RNG stream keyed
//! by `(seed, snippet_id, frame)`, so serial and parallel runs agree byte for byte.

use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::keypoints::{
    KeypointFrame, SnippetKeypoints, LEFT_EAR, LEFT_EYE, NOSE, RIGHT_EAR, RIGHT_EYE, SNIPPET_FRAMES,
};

#[derive(Debug, Error)]
pub enum BlurError {
    #[error("invalid blur parameters: {0}")]
    InvalidParams(String),
    #[error("no frame passes the head reliability gate")]
    NoValidHeadDetection,
    #[error("frame {frame}: expected {expected_w}x{expected_h}, got {got_w}x{got_h}")]
    DimensionMismatch {
        frame: usize,
        expected_w: u32,
        expected_h: u32,
        got_w: u32,
        got_h: u32,
    },
    #[error("expected {expected} frames, got {found}")]
    FrameCountMismatch { expected: usize, found: usize },
    #[error("pixel buffer of {found} bytes does not match {width}x{height} RGB")]
    BufferSize { width: u32, height: u32, found: usize },
    #[error("image codec: {0}")]
    Image(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Mask geometry, filter and noise constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BlurParams {
    /// Full ellipse width in pixels.
    pub width: f64,
    /// Full ellipse height in pixels.
    pub height: f64,
    /// Box filter side length, odd.
    pub kernel: usize,
    /// Largest noise value added per channel.
    pub noise_max: u8,
    /// Weight of the previous smoothed centre.
    pub ema: f64,
    /// Minimum mean eye/nose reliability for a frame's own centre to be used.
    pub reliability_threshold: f64,
    pub seed: u64,
}

impl Default for BlurParams {
    fn default() -> Self {
        BlurParams {
            width: 150.0,
            height: 68.0,
            kernel: 25,
            noise_max: 25,
            ema: 0.5,
            reliability_threshold: 0.35,
            seed: 0,
        }
    }
}

impl BlurParams {
    pub fn validate(&self) -> Result<(), BlurError> {
        if self.kernel == 0 || self.kernel.is_multiple_of(2) {
            return Err(BlurError::InvalidParams(format!(
                "kernel must be odd and >= 1, got {}",
                self.kernel
            )));
        }
        if !(self.width > 0.0 && self.height > 0.0) {
            return Err(BlurError::InvalidParams(
                "ellipse width and height must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.ema) {
            return Err(BlurError::InvalidParams(format!(
                "ema coefficient must lie in [0, 1), got {}",
                self.ema
            )));
        }
        if !(0.0..=1.0).contains(&self.reliability_threshold) {
            return Err(BlurError::InvalidParams(format!(
                "reliability threshold must lie in [0, 1], got {}",
                self.reliability_threshold
            )));
        }
        Ok(())
    }
}

/// Row-major 8-bit RGB image.
#[derive(Clone, PartialEq, Eq)]
pub struct FrameImage {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl std::fmt::Debug for FrameImage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FrameImage")
            .field("width", &self.width)
            .field("height", &self.height)
            .finish_non_exhaustive()
    }
}

impl FrameImage {
    pub fn new(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self, BlurError> {
        if pixels.len() != width as usize * height as usize * 3 {
            return Err(BlurError::BufferSize {
                width,
                height,
                found: pixels.len(),
            });
        }
        Ok(FrameImage { width, height, pixels })
    }

    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Self {
        let pixels = rgb
            .iter()
            .copied()
            .cycle()
            .take(width as usize * height as usize * 3)
            .collect();
        FrameImage { width, height, pixels }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    #[inline]
    fn offset(&self, x: u32, y: u32) -> usize {
        (y as usize * self.width as usize + x as usize) * 3
    }

    pub fn get(&self, x: u32, y: u32) -> [u8; 3] {
        let o = self.offset(x, y);
        [self.pixels[o], self.pixels[o + 1], self.pixels[o + 2]]
    }

    pub fn put(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let o = self.offset(x, y);
        self.pixels[o..o + 3].copy_from_slice(&rgb);
    }

    pub fn read_png(path: &Path) -> Result<Self, BlurError> {
        let img = image::open(path)
            .map_err(|e| BlurError::Image(format!("{}: {e}", path.display())))?
            .into_rgb8();
        let (w, h) = img.dimensions();
        FrameImage::new(w, h, img.into_raw())
    }

    pub fn write_png(&self, path: &Path) -> Result<(), BlurError> {
        image::save_buffer(
            path,
            &self.pixels,
            self.width,
            self.height,
            image::ExtendedColorType::Rgb8,
        )
        .map_err(|e| BlurError::Image(format!("{}: {e}", path.display())))
    }

    /// Reads the next frame of a headerless RGB24 stream; `None` at a clean end of stream.
    pub fn read_raw<R: Read>(reader: &mut R, width: u32, height: u32) -> Result<Option<Self>, BlurError> {
        let mut pixels = vec![0u8; width as usize * height as usize * 3];
        let mut filled = 0;
        while filled < pixels.len() {
            let n = reader.read(&mut pixels[filled..])?;
            if n == 0 {
                break;
            }
            filled += n;
        }
        if filled == 0 {
            return Ok(None);
        }
        if filled < pixels.len() {
            return Err(BlurError::BufferSize {
                width,
                height,
                found: filled,
            });
        }
        Ok(Some(FrameImage { width, height, pixels }))
    }

    pub fn write_raw<W: Write>(&self, writer: &mut W) -> Result<(), BlurError> {
        writer.write_all(&self.pixels)?;
        Ok(())
    }
}

/// Unsmoothed mask centre of one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawCenter {
    pub cx: f64,
    pub cy: f64,
    /// Mean reliability of eyes and nose.
    pub r_avg: f64,
}

/// Horizontal position from all five head points; vertical position and
/// reliability from eyes and nose only, which keeps the mouth outside the mask.
pub fn raw_center(frame: &KeypointFrame) -> RawCenter {
    let head = [LEFT_EYE, RIGHT_EYE, NOSE, LEFT_EAR, RIGHT_EAR].map(|i| frame.get(i));
    let eyes_nose = &head[..3];
    RawCenter {
        cx: head.iter().map(|p| p.x).sum::<f64>() / 5.0,
        cy: eyes_nose.iter().map(|p| p.y).sum::<f64>() / 3.0,
        r_avg: eyes_nose.iter().map(|p| p.r).sum::<f64>() / 3.0,
    }
}

/// Mask centre for one frame. `carried` records that the gate rejected the
/// frame's own centre and the previous accepted centre was reused.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskCenter {
    pub frame: u32,
    pub cx: f64,
    pub cy: f64,
    pub carried: bool,
}

/// Keeps a frame's raw centre when `r_avg > threshold`, otherwise repeats the
/// previous emitted centre. A rejected prefix takes the first accepted centre.
pub fn gate_centers(raw: &[RawCenter], threshold: f64) -> Result<Vec<MaskCenter>, BlurError> {
    let first = raw
        .iter()
        .find(|c| c.r_avg > threshold)
        .ok_or(BlurError::NoValidHeadDetection)?;
    let mut prev = (first.cx, first.cy);
    Ok(raw
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let carried = c.r_avg <= threshold;
            if !carried {
                prev = (c.cx, c.cy);
            }
            MaskCenter {
                frame: i as u32 + 1,
                cx: prev.0,
                cy: prev.1,
                carried,
            }
        })
        .collect())
}

/// Recursive smoothing `c(f) = a * c(f-1) + (1 - a) * c(f)` where `c(f-1)` is
/// already smoothed. The first centre is unchanged.
pub fn ema_smooth(centers: &[MaskCenter], a: f64) -> Vec<MaskCenter> {
    let mut out = centers.to_vec();
    for f in 1..out.len() {
        let prev = out[f - 1];
        let cur = &mut out[f];
        cur.cx = a * prev.cx + (1.0 - a) * cur.cx;
        cur.cy = a * prev.cy + (1.0 - a) * cur.cy;
    }
    out
}

/// One row of a region: pixels `x0..x1` on row `y`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Span {
    pub y: u32,
    pub x0: u32,
    pub x1: u32,
}

/// A set of pixels stored as row spans in ascending `(y, x)` order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Region {
    spans: Vec<Span>,
}

impl Region {
    pub fn from_spans(mut spans: Vec<Span>) -> Self {
        spans.retain(|s| s.x1 > s.x0);
        spans.sort_by_key(|s| (s.y, s.x0));
        Region { spans }
    }

    /// Whole-frame region.
    pub fn full(width: u32, height: u32) -> Self {
        Region::from_spans((0..height).map(|y| Span { y, x0: 0, x1: width }).collect())
    }

    /// Axis-aligned ellipse with the given full extents, clipped to the frame.
    /// Pixel `(x, y)` belongs to it iff
    /// `((x - cx) / (w / 2))^2 + ((y - cy) / (h / 2))^2 <= 1`.
    pub fn ellipse(cx: f64, cy: f64, w: f64, h: f64, width: u32, height: u32) -> Self {
        let (ax, ay) = (w / 2.0, h / 2.0);
        let inside = |x: i64, y: i64| {
            let dx = (x as f64 - cx) / ax;
            let dy = (y as f64 - cy) / ay;
            dx * dx + dy * dy <= 1.0
        };
        let y_lo = ((cy - ay).floor() as i64).max(0);
        let y_hi = ((cy + ay).ceil() as i64).min(height as i64 - 1);
        let x_lo = ((cx - ax).floor() as i64).max(0);
        let x_hi = ((cx + ax).ceil() as i64).min(width as i64 - 1);
        let mut spans = Vec::new();
        for y in y_lo..=y_hi {
            let mut row = (x_lo..=x_hi).filter(|&x| inside(x, y));
            if let Some(x0) = row.next() {
                let x1 = row.next_back().unwrap_or(x0) + 1;
                spans.push(Span {
                    y: y as u32,
                    x0: x0 as u32,
                    x1: x1 as u32,
                });
            }
        }
        Region { spans }
    }

    pub fn spans(&self) -> &[Span] {
        &self.spans
    }

    pub fn is_empty(&self) -> bool {
        self.spans.is_empty()
    }

    pub fn len(&self) -> usize {
        self.spans.iter().map(|s| (s.x1 - s.x0) as usize).sum()
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        self.spans.iter().any(|s| s.y == y && (s.x0..s.x1).contains(&x))
    }

    pub fn pixels(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        self.spans.iter().flat_map(|s| (s.x0..s.x1).map(move |x| (x, s.y)))
    }

    /// Inclusive-exclusive bounding box `(x0, y0, x1, y1)`.
    fn bounds(&self) -> Option<(u32, u32, u32, u32)> {
        let first = self.spans.first()?;
        let last = self.spans.last()?;
        let x0 = self.spans.iter().map(|s| s.x0).min()?;
        let x1 = self.spans.iter().map(|s| s.x1).max()?;
        Some((x0, first.y, x1, last.y + 1))
    }
}

/// Elliptic region of one mask centre.
pub fn ellipse_region(center: &MaskCenter, params: &BlurParams, width: u32, height: u32) -> Region {
    Region::ellipse(center.cx, center.cy, params.width, params.height, width, height)
}

/// Replaces every region pixel, per channel, with the rounded (half up) mean of
/// its `k x k` neighbourhood in the unmodified frame, borders replicated.
/// Pixels outside the region are untouched.
pub fn blur_region_in_place(frame: &mut FrameImage, region: &Region, k: usize) {
    assert!(k % 2 == 1, "box filter size must be odd");
    let Some((bx0, by0, bx1, by1)) = region.bounds() else {
        return;
    };
    let r = (k / 2) as i64;
    // Window of source pixels the region's neighbourhoods touch, in frame
    // coordinates, possibly extending past the border.
    let wx0 = bx0 as i64 - r;
    let wy0 = by0 as i64 - r;
    let ww = (bx1 - bx0) as usize + 2 * r as usize;
    let wh = (by1 - by0) as usize + 2 * r as usize;
    let max_x = frame.width as i64 - 1;
    let max_y = frame.height as i64 - 1;

    // Summed-area table with a zero top row and left column.
    let stride = ww + 1;
    let mut sat = vec![[0u64; 3]; stride * (wh + 1)];
    for j in 0..wh {
        let sy = (wy0 + j as i64).clamp(0, max_y) as u32;
        let mut row = [0u64; 3];
        for i in 0..ww {
            let sx = (wx0 + i as i64).clamp(0, max_x) as u32;
            let px = frame.get(sx, sy);
            for c in 0..3 {
                row[c] += px[c] as u64;
            }
            let above = sat[j * stride + i + 1];
            let cell = &mut sat[(j + 1) * stride + i + 1];
            for c in 0..3 {
                cell[c] = above[c] + row[c];
            }
        }
    }

    let area = (k * k) as u64;
    for span in region.spans() {
        // window row of the neighbourhood's top edge
        let j0 = (span.y - by0) as usize;
        let j1 = j0 + k;
        for x in span.x0..span.x1 {
            let i0 = (x - bx0) as usize;
            let i1 = i0 + k;
            let mut out = [0u8; 3];
            for c in 0..3 {
                let sum = sat[j1 * stride + i1][c] + sat[j0 * stride + i0][c]
                    - sat[j0 * stride + i1][c]
                    - sat[j1 * stride + i0][c];
                out[c] = ((2 * sum + area) / (2 * area)) as u8;
            }
            frame.put(x, span.y, out);
        }
    }
}

/// Copying variant of [`blur_region_in_place`].
pub fn blur_region(frame: &FrameImage, region: &Region, k: usize) -> FrameImage {
    let mut out = frame.clone();
    blur_region_in_place(&mut out, region, k);
    out
}

/// Adds an independent draw from `Uniform{0..=noise_max}` to every channel of
/// every region pixel, saturating at 255. Draw order: rows, then columns, then
/// R, G, B.
pub fn add_noise_in_place<R: Rng>(frame: &mut FrameImage, region: &Region, noise_max: u8, rng: &mut R) {
    for (x, y) in region.pixels() {
        let o = frame.offset(x, y);
        for c in 0..3 {
            let draw: u8 = rng.random_range(0..=noise_max);
            frame.pixels[o + c] = frame.pixels[o + c].saturating_add(draw);
        }
    }
}

pub fn add_noise<R: Rng>(frame: &FrameImage, region: &Region, noise_max: u8, rng: &mut R) -> FrameImage {
    let mut out = frame.clone();
    add_noise_in_place(&mut out, region, noise_max, rng);
    out
}

/// Noise stream of one frame, a pure function of `(seed, snippet_id, frame)`.
pub fn frame_rng(seed: u64, snippet_id: &str, frame: u32) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(b"gma-blur-noise");
    hasher.update(seed.to_le_bytes());
    hasher.update((snippet_id.len() as u64).to_le_bytes());
    hasher.update(snippet_id.as_bytes());
    hasher.update(frame.to_le_bytes());
    let digest = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest[..32]);
    ChaCha8Rng::from_seed(key)
}

/// Per-frame mask centres of one snippet plus the parameters that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskTrajectory {
    pub snippet_id: String,
    pub centers: Vec<MaskCenter>,
    pub params: BlurParams,
}

impl MaskTrajectory {
    /// Raw centre, gate, then smoothing, over every frame of `snippet`.
    pub fn plan(snippet: &SnippetKeypoints, params: &BlurParams) -> Result<Self, BlurError> {
        params.validate()?;
        let raw: Vec<RawCenter> = snippet.frames().iter().map(raw_center).collect();
        let gated = gate_centers(&raw, params.reliability_threshold)?;
        Ok(MaskTrajectory {
            snippet_id: snippet.id().to_owned(),
            centers: ema_smooth(&gated, params.ema),
            params: params.clone(),
        })
    }

    /// Blurs and noises frame `frame` (1-based) in place.
    pub fn apply(&self, frame: u32, image: &mut FrameImage) {
        let center = &self.centers[frame as usize - 1];
        let region = ellipse_region(center, &self.params, image.width, image.height);
        blur_region_in_place(image, &region, self.params.kernel);
        let mut rng = frame_rng(self.params.seed, &self.snippet_id, frame);
        add_noise_in_place(image, &region, self.params.noise_max, &mut rng);
    }

    /// Applies frames `first..first + frames.len()` (1-based) across the current rayon pool.
    pub fn apply_parallel(&self, first: u32, frames: &mut [FrameImage]) {
        frames
            .par_iter_mut()
            .enumerate()
            .for_each(|(i, frame)| self.apply(first + i as u32, frame));
    }

    /// Audit CSV `frame,cx,cy,carried`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("frame,cx,cy,carried\n");
        for c in &self.centers {
            let _ = writeln!(out, "{},{},{},{}", c.frame, c.cx, c.cy, c.carried as u8);
        }
        out
    }
}

fn check_frames(frames: &[FrameImage], snippet: &SnippetKeypoints) -> Result<(), BlurError> {
    if frames.len() != SNIPPET_FRAMES {
        return Err(BlurError::FrameCountMismatch {
            expected: SNIPPET_FRAMES,
            found: frames.len(),
        });
    }
    let (w, h) = (snippet.meta.width, snippet.meta.height);
    for (i, f) in frames.iter().enumerate() {
        if f.width != w || f.height != h {
            return Err(BlurError::DimensionMismatch {
                frame: i + 1,
                expected_w: w,
                expected_h: h,
                got_w: f.width,
                got_h: f.height,
            });
        }
    }
    Ok(())
}

/// Blurs all 250 frames of a snippet in place, one frame after another.
pub fn blur_snippet(
    frames: &mut [FrameImage],
    snippet: &SnippetKeypoints,
    params: &BlurParams,
) -> Result<MaskTrajectory, BlurError> {
    check_frames(frames, snippet)?;
    let trajectory = MaskTrajectory::plan(snippet, params)?;
    for (i, frame) in frames.iter_mut().enumerate() {
        trajectory.apply(i as u32 + 1, frame);
    }
    Ok(trajectory)
}

/// Same result as [`blur_snippet`], frames spread over the current rayon pool.
pub fn blur_snippet_parallel(
    frames: &mut [FrameImage],
    snippet: &SnippetKeypoints,
    params: &BlurParams,
) -> Result<MaskTrajectory, BlurError> {
    check_frames(frames, snippet)?;
    let trajectory = MaskTrajectory::plan(snippet, params)?;
    trajectory.apply_parallel(1, frames);
    Ok(trajectory)
}
