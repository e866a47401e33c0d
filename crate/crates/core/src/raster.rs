//! Canvases, rasterization and image analysis.
//!
//! Pixel `(x, y)` has its center at integer coordinates `(x, y)`; data is
//! row-major with channels innermost. Drawing never decreases a pixel: each
//! covered pixel becomes `max(old, value)`.

use std::path::Path;

use crate::error::{Error, Result};
use crate::geom::{Point, Rect};

/// Sobel kernels are normalized by 1/8; any nonzero gradient of a binary
/// image then has magnitude at least sqrt(2)/8, so this threshold marks every
/// binary step while ignoring float noise.
pub const DEFAULT_EDGE_THRESHOLD: f64 = 0.125;

/// Number of pyramid levels used for window features.
pub const PYRAMID_LEVELS: usize = 4;

/// Window features per channel: 4 levels of 3x3.
pub const WINDOW_FEATURES_PER_CHANNEL: usize = PYRAMID_LEVELS * 9;

/// Coverage accounting used by the circuit out-of-bounds penalty.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RasterStats {
    /// Pixels covered by all draw calls, counted once per call.
    pub drawn: u64,
    /// Covered pixels that fell outside the counting rectangle.
    pub outside: u64,
}

/// A pixel whose channel-0 value increased, with its previous value.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PixelChange {
    pub index: usize,
    pub old: f64,
}

/// Equality compares pixels only; draw accounting and change tracking are ignored.
#[derive(Clone, Debug)]
pub struct Canvas {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
    stats: RasterStats,
    counting: Rect,
    changes: Option<Vec<PixelChange>>,
}

impl PartialEq for Canvas {
    fn eq(&self, other: &Self) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels && self.data == other.data
    }
}

impl Canvas {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        assert!(channels >= 1, "canvas needs at least one channel");
        Canvas {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
            stats: RasterStats::default(),
            counting: Rect::from_size(width, height),
            changes: None,
        }
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        let mut c = Canvas::new(width, height, 1);
        c.data.fill(value);
        c
    }

    /// Builds a single-channel canvas; values must lie in [0, 1].
    pub fn from_data(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Dimension(format!(
                "{} values for a {width}x{height} canvas",
                data.len()
            )));
        }
        if data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Domain("canvas intensities must be in [0, 1]".into()));
        }
        let mut c = Canvas::new(width, height, 1);
        c.data = data;
        Ok(c)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn len_pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn stats(&self) -> RasterStats {
        self.stats
    }

    pub fn same_size(&self, other: &Canvas) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn get(&self, x: usize, y: usize, ch: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + ch]
    }

    /// Channel-0 value at a pixel index.
    pub fn at(&self, index: usize) -> f64 {
        self.data[index * self.channels]
    }

    pub fn set(&mut self, x: usize, y: usize, value: f64) {
        let base = (y * self.width + x) * self.channels;
        self.data[base..base + self.channels].fill(value);
    }

    /// Rectangle outside of which covered pixels count as out of bounds.
    pub fn set_counting_rect(&mut self, rect: Rect) {
        self.counting = rect;
    }

    pub fn counting_rect(&self) -> Rect {
        self.counting
    }

    /// Starts recording channel-0 increases for incremental scoring.
    pub fn track_changes(&mut self) {
        self.changes.get_or_insert_with(Vec::new);
    }

    pub fn take_changes(&mut self) -> Vec<PixelChange> {
        match &mut self.changes {
            Some(log) => std::mem::take(log),
            None => Vec::new(),
        }
    }

    pub fn has_pending_changes(&self) -> bool {
        self.changes.as_ref().is_some_and(|c| !c.is_empty())
    }

    fn cover(&mut self, x: i64, y: i64, value: f64) {
        self.stats.drawn += 1;
        if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
            self.stats.outside += 1;
            return;
        }
        if !self.counting.contains(x, y) {
            self.stats.outside += 1;
        }
        let index = y as usize * self.width + x as usize;
        let base = index * self.channels;
        let old = self.data[base];
        for v in &mut self.data[base..base + self.channels] {
            if value > *v {
                *v = value;
            }
        }
        if self.data[base] != old {
            if let Some(log) = &mut self.changes {
                log.push(PixelChange { index, old });
            }
        }
    }

    fn cover_box<F: Fn(Point) -> bool>(&mut self, lo: Point, hi: Point, value: f64, inside: F) {
        if !(lo.is_finite() && hi.is_finite()) {
            return;
        }
        let x0 = lo.x.floor() as i64;
        let x1 = hi.x.ceil() as i64;
        let y0 = lo.y.floor() as i64;
        let y1 = hi.y.ceil() as i64;
        for y in y0..=y1 {
            for x in x0..=x1 {
                if inside(Point::new(x as f64, y as f64)) {
                    self.cover(x, y, value);
                }
            }
        }
    }

    /// Covers every pixel whose center lies strictly within `width/2 + 0.5`
    /// of segment `ab`. Off-canvas coverage is counted, not drawn.
    pub fn draw_segment(&mut self, a: Point, b: Point, width: f64, value: f64) {
        let r = width / 2.0 + 0.5;
        let r2 = r * r;
        let d = b - a;
        let len2 = d.norm_sq();
        let lo = Point::new(a.x.min(b.x) - r, a.y.min(b.y) - r);
        let hi = Point::new(a.x.max(b.x) + r, a.y.max(b.y) + r);
        self.cover_box(lo, hi, value, |p| {
            let ap = p - a;
            let t = if len2 > 0.0 {
                (ap.dot(d) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            (ap - d * t).norm_sq() < r2
        });
    }

    /// Filled disc of the given radius under the same half-pixel coverage rule.
    pub fn draw_disc(&mut self, center: Point, radius: f64, value: f64) {
        self.draw_segment(center, center, 2.0 * radius, value);
    }

    /// Filled ellipse with semi-axes `(semi_major, semi_minor)` rotated by `angle`.
    pub fn draw_ellipse(
        &mut self,
        center: Point,
        semi_major: f64,
        semi_minor: f64,
        angle: f64,
        value: f64,
    ) {
        let a = semi_major + 0.5;
        let b = semi_minor + 0.5;
        let (s, c) = angle.sin_cos();
        let lo = Point::new(center.x - a, center.y - a);
        let hi = Point::new(center.x + a, center.y + a);
        self.cover_box(lo, hi, value, |p| {
            let q = p - center;
            let u = (q.x * c + q.y * s) / a;
            let v = (-q.x * s + q.y * c) / b;
            u * u + v * v < 1.0
        });
    }

    /// Mean intensity over all pixels and channels.
    pub fn fill_mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn count_nonzero(&self) -> usize {
        (0..self.len_pixels()).filter(|&i| self.at(i) != 0.0).count()
    }

    pub fn is_binary(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    /// Pixel data only: drops coverage statistics and change tracking.
    pub fn to_plain(&self) -> Canvas {
        let mut c = Canvas::new(self.width, self.height, self.channels);
        c.data.clone_from(&self.data);
        c
    }

    /// Column `x` maps to `width - 1 - x`.
    pub fn mirror_horizontal(&self) -> Canvas {
        let mut out = Canvas::new(self.width, self.height, self.channels);
        for y in 0..self.height {
            for x in 0..self.width {
                let src = (y * self.width + x) * self.channels;
                let dst = (y * self.width + (self.width - 1 - x)) * self.channels;
                out.data[dst..dst + self.channels]
                    .copy_from_slice(&self.data[src..src + self.channels]);
            }
        }
        out
    }

    /// Nearest-neighbor resampling to a new size.
    pub fn resize_nearest(&self, width: usize, height: usize) -> Canvas {
        let mut out = Canvas::new(width, height, self.channels);
        for y in 0..height {
            let sy = ((y as f64 + 0.5) * self.height as f64 / height as f64) as usize;
            let sy = sy.min(self.height - 1);
            for x in 0..width {
                let sx = ((x as f64 + 0.5) * self.width as f64 / width as f64) as usize;
                let sx = sx.min(self.width - 1);
                let src = (sy * self.width + sx) * self.channels;
                let dst = (y * width + x) * self.channels;
                out.data[dst..dst + self.channels]
                    .copy_from_slice(&self.data[src..src + self.channels]);
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EdgeMask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl EdgeMask {
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x] != 0
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b != 0).count()
    }

    pub fn mirror_horizontal(&self) -> EdgeMask {
        let mut data = vec![0; self.data.len()];
        for y in 0..self.height {
            for x in 0..self.width {
                data[y * self.width + self.width - 1 - x] = self.data[y * self.width + x];
            }
        }
        EdgeMask {
            width: self.width,
            height: self.height,
            data,
        }
    }
}

/// Sobel gradient magnitude at a pixel of channel 0, clamp-to-edge borders.
pub fn sobel_magnitude(canvas: &Canvas, x: usize, y: usize) -> f64 {
    let w = canvas.width as i64;
    let h = canvas.height as i64;
    let px = |dx: i64, dy: i64| {
        let xx = (x as i64 + dx).clamp(0, w - 1) as usize;
        let yy = (y as i64 + dy).clamp(0, h - 1) as usize;
        canvas.get(xx, yy, 0)
    };
    let (tl, t, tr) = (px(-1, -1), px(0, -1), px(1, -1));
    let (l, r) = (px(-1, 0), px(1, 0));
    let (bl, b, br) = (px(-1, 1), px(0, 1), px(1, 1));
    // Pairwise sums keep the result exactly mirror-symmetric.
    let gx = (((tr + br) + 2.0 * r) - ((tl + bl) + 2.0 * l)) / 8.0;
    let gy = (((bl + br) + 2.0 * b) - ((tl + tr) + 2.0 * t)) / 8.0;
    (gx * gx + gy * gy).sqrt()
}

pub fn sobel_edge_mask(canvas: &Canvas, threshold: f64) -> Result<EdgeMask> {
    if canvas.channels != 1 {
        return Err(Error::Dimension(format!(
            "Sobel mask needs a single-channel canvas, got {} channels",
            canvas.channels
        )));
    }
    let mut data = vec![0u8; canvas.len_pixels()];
    for y in 0..canvas.height {
        for x in 0..canvas.width {
            data[y * canvas.width + x] = u8::from(sobel_magnitude(canvas, x, y) > threshold);
        }
    }
    Ok(EdgeMask {
        width: canvas.width,
        height: canvas.height,
        data,
    })
}

/// Four-level 2x2 box-filter pyramid; level 0 is the source.
#[derive(Clone, Debug, PartialEq)]
pub struct Pyramid {
    pub levels: Vec<Canvas>,
}

const CHILD_OFFSETS: [(usize, usize); 4] = [(0, 0), (1, 0), (0, 1), (1, 1)];

fn downsample(src: &Canvas) -> Canvas {
    let w = src.width.div_ceil(2);
    let h = src.height.div_ceil(2);
    let c = src.channels;
    let mut out = Canvas::new(w, h, c);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut sum = 0.0;
                let mut n = 0.0;
                for (dx, dy) in CHILD_OFFSETS {
                    let (sx, sy) = (2 * x + dx, 2 * y + dy);
                    if sx < src.width && sy < src.height {
                        sum += src.get(sx, sy, ch);
                        n += 1.0;
                    }
                }
                out.data[(y * w + x) * c + ch] = sum / n;
            }
        }
    }
    out
}

pub fn build_pyramid(canvas: &Canvas) -> Pyramid {
    let mut levels = Vec::with_capacity(PYRAMID_LEVELS);
    levels.push(canvas.to_plain());
    for k in 1..PYRAMID_LEVELS {
        let next = downsample(&levels[k - 1]);
        levels.push(next);
    }
    Pyramid { levels }
}

fn window_center(pos: f64, level: usize, size: usize) -> i64 {
    let c = (pos / (1u64 << level) as f64).round();
    let c = if c.is_finite() { c as i64 } else { 0 };
    c.clamp(0, size as i64 - 1)
}

/// 3x3 windows around `position / 2^k` at each level, clamp-to-edge:
/// level-major, then row-major, channels innermost. Length 36c.
pub fn extract_windows(pyramid: &Pyramid, position: Point) -> Vec<f64> {
    let c = pyramid.levels[0].channels;
    let mut out = Vec::with_capacity(WINDOW_FEATURES_PER_CHANNEL * c);
    for (k, level) in pyramid.levels.iter().enumerate() {
        let cx = window_center(position.x, k, level.width);
        let cy = window_center(position.y, k, level.height);
        for dy in -1..=1i64 {
            for dx in -1..=1i64 {
                let x = (cx + dx).clamp(0, level.width as i64 - 1) as usize;
                let y = (cy + dy).clamp(0, level.height as i64 - 1) as usize;
                for ch in 0..c {
                    out.push(level.get(x, y, ch));
                }
            }
        }
    }
    out
}

/// Same values as `extract_windows(&build_pyramid(canvas), position)`, computing
/// only the coarse pixels the windows touch. Summation order matches
/// [`build_pyramid`], so results are bit-identical.
pub fn extract_windows_direct(canvas: &Canvas, position: Point, out: &mut Vec<f64>) {
    let mut dims = [(0usize, 0usize); PYRAMID_LEVELS];
    dims[0] = (canvas.width, canvas.height);
    for k in 1..PYRAMID_LEVELS {
        dims[k] = (dims[k - 1].0.div_ceil(2), dims[k - 1].1.div_ceil(2));
    }
    fn value(canvas: &Canvas, dims: &[(usize, usize)], k: usize, x: usize, y: usize, ch: usize) -> f64 {
        if k == 0 {
            return canvas.get(x, y, ch);
        }
        let (w, h) = dims[k - 1];
        let mut sum = 0.0;
        let mut n = 0.0;
        for (dx, dy) in CHILD_OFFSETS {
            let (sx, sy) = (2 * x + dx, 2 * y + dy);
            if sx < w && sy < h {
                sum += value(canvas, dims, k - 1, sx, sy, ch);
                n += 1.0;
            }
        }
        sum / n
    }
    let c = canvas.channels;
    for (k, &(w, h)) in dims.iter().enumerate() {
        let cx = window_center(position.x, k, w);
        let cy = window_center(position.y, k, h);
        for dy in -1..=1i64 {
            for dx in -1..=1i64 {
                let x = (cx + dx).clamp(0, w as i64 - 1) as usize;
                let y = (cy + dy).clamp(0, h as i64 - 1) as usize;
                for ch in 0..c {
                    out.push(value(canvas, &dims, k, x, y, ch));
                }
            }
        }
    }
}

/// Reads an 8-bit mask: intensity >= 128 becomes 1, everything else 0.
pub fn load_mask_png(path: &Path) -> Result<Canvas> {
    let img = image::open(path)?.to_luma8();
    let (w, h) = img.dimensions();
    let data = img
        .pixels()
        .map(|p| if p.0[0] >= 128 { 1.0 } else { 0.0 })
        .collect();
    Canvas::from_data(w as usize, h as usize, data)
}

/// Writes channel 0 as 8-bit grayscale (1.0 becomes 255).
pub fn save_mask_png(canvas: &Canvas, path: &Path) -> Result<()> {
    let bytes: Vec<u8> = (0..canvas.len_pixels())
        .map(|i| (canvas.at(i).clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let img = image::GrayImage::from_raw(canvas.width as u32, canvas.height as u32, bytes)
        .ok_or_else(|| Error::Dimension("PNG buffer size".into()))?;
    img.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn set_pixels(c: &Canvas) -> Vec<(usize, usize)> {
        let mut v = Vec::new();
        for y in 0..c.height() {
            for x in 0..c.width() {
                if c.get(x, y, 0) != 0.0 {
                    v.push((x, y));
                }
            }
        }
        v
    }

    #[test]
    fn point_segment_is_a_disc() {
        let mut c = Canvas::new(9, 9, 1);
        c.draw_segment(Point::new(4.0, 4.0), Point::new(4.0, 4.0), 1.0, 1.0);
        assert_eq!(set_pixels(&c), vec![(4, 4)]);
        let mut c = Canvas::new(9, 9, 1);
        c.draw_segment(Point::new(4.0, 4.0), Point::new(4.0, 4.0), 3.0, 1.0);
        let px = set_pixels(&c);
        assert_eq!(px.len(), 9);
        assert!(px.iter().all(|&(x, y)| (3..=5).contains(&x) && (3..=5).contains(&y)));
    }

    #[test]
    fn horizontal_unit_segment() {
        let mut c = Canvas::new(10, 6, 1);
        c.draw_segment(Point::new(2.0, 2.0), Point::new(6.0, 2.0), 1.0, 1.0);
        // oracle: enumerate pixel centers strictly within 1.0 of the segment
        let mut expected = Vec::new();
        for y in 0..6 {
            for x in 0..10 {
                let (fx, fy) = (x as f64, y as f64);
                let cx = fx.clamp(2.0, 6.0);
                let d2 = (fx - cx).powi(2) + (fy - 2.0).powi(2);
                if d2 < 1.0 {
                    expected.push((x, y));
                }
            }
        }
        assert_eq!(expected, (2..=6).map(|x| (x, 2)).collect::<Vec<_>>());
        assert_eq!(set_pixels(&c), expected);
        assert_eq!(c.stats().drawn, 5);
        assert_eq!(c.stats().outside, 0);
    }

    #[test]
    fn offscreen_segment_only_counts() {
        let mut c = Canvas::new(8, 8, 1);
        c.draw_segment(Point::new(-20.0, -20.0), Point::new(-10.0, -20.0), 2.0, 1.0);
        assert_eq!(c.count_nonzero(), 0);
        assert!(c.stats().outside > 0);
        assert_eq!(c.stats().outside, c.stats().drawn);
    }

    #[test]
    fn sobel_constant_is_empty() {
        let c = Canvas::filled(7, 5, 0.6);
        assert_eq!(sobel_edge_mask(&c, DEFAULT_EDGE_THRESHOLD).unwrap().count(), 0);
    }

    #[test]
    fn sobel_vertical_step() {
        let mut c = Canvas::new(8, 4, 1);
        for y in 0..4 {
            for x in 4..8 {
                c.set(x, y, 1.0);
            }
        }
        // hand convolution: columns 3 and 4 see gx = (1+2+1)/8 = 0.5, others 0
        let m = sobel_edge_mask(&c, DEFAULT_EDGE_THRESHOLD).unwrap();
        for y in 0..4 {
            for x in 0..8 {
                assert_eq!(m.get(x, y), x == 3 || x == 4, "pixel ({x},{y})");
            }
        }
        assert!((sobel_magnitude(&c, 3, 1) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn sobel_single_pixel() {
        let mut c = Canvas::new(7, 7, 1);
        c.set(3, 3, 1.0);
        // side neighbours see magnitude 2/8, diagonals sqrt(2)/8, center 0
        let m = sobel_edge_mask(&c, DEFAULT_EDGE_THRESHOLD).unwrap();
        for y in 0..7 {
            for x in 0..7 {
                let ring = (x as i64 - 3).abs() <= 1 && (y as i64 - 3).abs() <= 1 && (x, y) != (3, 3);
                assert_eq!(m.get(x, y), ring, "pixel ({x},{y})");
            }
        }
        assert!((sobel_magnitude(&c, 2, 2) - 2f64.sqrt() / 8.0).abs() < 1e-15);
        assert!(sobel_edge_mask(&Canvas::new(3, 3, 2), 0.1).is_err());
    }

    #[test]
    fn pyramid_examples() {
        let c = Canvas::from_data(2, 2, vec![0.0, 0.0, 1.0, 1.0]).unwrap();
        let p = build_pyramid(&c);
        assert_eq!(p.levels.len(), 4);
        assert_eq!(p.levels[1].data(), &[0.5]);

        let c = Canvas::filled(13, 7, 0.3);
        for l in build_pyramid(&c).levels {
            assert!(l.data().iter().all(|&v| v == 0.3));
        }

        let mut checker = Canvas::new(4, 4, 1);
        for y in 0..4 {
            for x in 0..4 {
                if (x + y) % 2 == 0 {
                    checker.set(x, y, 1.0);
                }
            }
        }
        let p = build_pyramid(&checker);
        assert_eq!(p.levels[1].data(), &[0.5; 4]);
        assert_eq!(p.levels[2].data(), &[0.5]);
        assert_eq!((p.levels[3].width(), p.levels[3].height()), (1, 1));

        let p = build_pyramid(&Canvas::new(129, 97, 1));
        let dims: Vec<_> = p.levels.iter().map(|l| (l.width(), l.height())).collect();
        assert_eq!(dims, vec![(129, 97), (65, 49), (33, 25), (17, 13)]);
    }

    #[test]
    fn odd_edge_averages_available_children() {
        let c = Canvas::from_data(3, 1, vec![0.0, 1.0, 1.0]).unwrap();
        let p = build_pyramid(&c);
        assert_eq!(p.levels[1].data(), &[0.5, 1.0]);
    }

    #[test]
    fn windows_constant_and_corner() {
        let c = Canvas::filled(20, 16, 0.7);
        let f = extract_windows(&build_pyramid(&c), Point::new(5.0, 5.0));
        assert_eq!(f.len(), 36);
        assert!(f.iter().all(|&v| v == 0.7));

        let mut c = Canvas::new(16, 16, 1);
        c.set(0, 0, 1.0);
        let p = build_pyramid(&c);
        let f = extract_windows(&p, Point::new(0.0, 0.0));
        // level 0 window at the corner replicates pixel (0,0) into the first
        // row and column: offsets (-1,-1),(0,-1),(-1,0),(0,0) all clamp to it
        let l0 = &f[0..9];
        assert_eq!(l0, &[1.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(f[9], p.levels[1].get(0, 0, 0));
    }

    #[test]
    fn windows_on_ramp_match_brute_force() {
        let data: Vec<f64> = (0..64).map(|i| (i % 8) as f64 / 8.0 + (i / 8) as f64 / 64.0).collect();
        let c = Canvas::from_data(8, 8, data.clone()).unwrap();
        let f = extract_windows(&build_pyramid(&c), Point::new(4.0, 4.0));
        // brute-force: a level-k pixel is the mean of its 2^k x 2^k block (8x8
        // is a power of two, so no ragged edges), window at round(4 / 2^k)
        let block_mean = |k: usize, bx: usize, by: usize| {
            let s = 1usize << k;
            let mut sum = 0.0;
            for y in by * s..(by + 1) * s {
                for x in bx * s..(bx + 1) * s {
                    sum += data[y * 8 + x];
                }
            }
            sum / (s * s) as f64
        };
        let mut expected = Vec::new();
        for k in 0..4 {
            let size = 8 >> k;
            let center = ((4.0 / (1 << k) as f64).round() as i64).clamp(0, size as i64 - 1);
            for dy in -1..=1i64 {
                for dx in -1..=1i64 {
                    let x = (center + dx).clamp(0, size as i64 - 1) as usize;
                    let y = (center + dy).clamp(0, size as i64 - 1) as usize;
                    expected.push(block_mean(k, x, y));
                }
            }
        }
        for (a, b) in f.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.png");
        let mut c = Canvas::new(13, 9, 1);
        c.draw_segment(Point::new(1.0, 1.0), Point::new(10.0, 7.0), 3.0, 1.0);
        save_mask_png(&c, &path).unwrap();
        let back = load_mask_png(&path).unwrap();
        assert_eq!(back.data(), c.data());
    }

    fn arb_canvas() -> impl Strategy<Value = Canvas> {
        (1usize..24, 1usize..24).prop_flat_map(|(w, h)| {
            proptest::collection::vec(prop_oneof![Just(0.0), Just(1.0), 0.0f64..1.0], w * h)
                .prop_map(move |d| Canvas::from_data(w, h, d).unwrap())
        })
    }

    proptest! {
        #[test]
        fn drawing_is_monotone_and_idempotent(
            ax in -5.0f64..25.0, ay in -5.0f64..25.0,
            bx in -5.0f64..25.0, by in -5.0f64..25.0,
            width in 1.0f64..6.0,
            c in arb_canvas(),
        ) {
            let mut d = c.clone();
            d.draw_segment(Point::new(ax, ay), Point::new(bx, by), width, 1.0);
            for (o, n) in c.data().iter().zip(d.data()) {
                prop_assert!(n >= o);
            }
            let mut again = d.clone();
            again.draw_segment(Point::new(ax, ay), Point::new(bx, by), width, 1.0);
            prop_assert_eq!(again.data(), d.data());
        }

        #[test]
        fn sobel_commutes_with_mirror(c in arb_canvas()) {
            let a = sobel_edge_mask(&c.mirror_horizontal(), DEFAULT_EDGE_THRESHOLD).unwrap();
            let b = sobel_edge_mask(&c, DEFAULT_EDGE_THRESHOLD).unwrap().mirror_horizontal();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn direct_windows_are_bit_identical(
            c in arb_canvas(),
            px in -4.0f64..30.0, py in -4.0f64..30.0,
        ) {
            let pos = Point::new(px, py);
            let a = extract_windows(&build_pyramid(&c), pos);
            let mut b = Vec::new();
            extract_windows_direct(&c, pos, &mut b);
            prop_assert_eq!(a.len(), 36);
            for (x, y) in a.iter().zip(&b) {
                prop_assert_eq!(x.to_bits(), y.to_bits());
            }
        }

        #[test]
        fn pyramid_preserves_fill_mean(c in arb_canvas()) {
            let p = build_pyramid(&c);
            for k in 0..3 {
                let (a, b) = (&p.levels[k], &p.levels[k + 1]);
                let tol = 2.0 / a.width().min(a.height()) as f64;
                prop_assert!((a.fill_mean() - b.fill_mean()).abs() <= tol + 1e-12);
                prop_assert_eq!(b.width(), a.width().div_ceil(2));
                prop_assert_eq!(b.height(), a.height().div_ceil(2));
            }
        }
    }
}
