//! Target masks with start annotations, mirroring, and synthetic scribbles.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::geom::{normalize_angle, polar_to_rect, Point, TurtleState};
use crate::raster::{load_mask_png, save_mask_png, Canvas};
use crate::rng::{Entropy, StreamRng};

/// Fill band enforced on synthetic masks.
pub const SYNTH_FILL_MIN: f64 = 0.03;
pub const SYNTH_FILL_MAX: f64 = 0.5;

#[derive(Clone, Debug, PartialEq)]
pub struct AnnotatedTarget {
    pub mask: Canvas,
    pub start_position: Point,
    pub start_heading: f64,
    pub source_id: String,
}

impl AnnotatedTarget {
    /// Checks that the mask is binary and non-empty and that the start point
    /// rounds to a filled pixel.
    pub fn validate(&self) -> Result<()> {
        let fail = |reason: &str| Error::Load {
            entry: self.source_id.clone(),
            reason: reason.to_string(),
        };
        if self.mask.channels() != 1 || !self.mask.is_binary() {
            return Err(fail("mask must be binary single-channel"));
        }
        if self.mask.count_nonzero() == 0 {
            return Err(fail("mask is empty"));
        }
        let (x, y) = (self.start_position.x.round(), self.start_position.y.round());
        let inside = x >= 0.0 && y >= 0.0 && x < self.mask.width() as f64 && y < self.mask.height() as f64;
        if !inside || self.mask.get(x as usize, y as usize, 0) == 0.0 {
            return Err(fail("start point is not on a filled pixel"));
        }
        Ok(())
    }

    /// Turtle at the annotated start; the program sets its own width.
    pub fn start_turtle(&self) -> TurtleState {
        TurtleState::new(self.start_position, self.start_heading, 1.0)
    }

    /// Rescales mask and annotation by nearest neighbor.
    pub fn resized(&self, width: usize, height: usize) -> AnnotatedTarget {
        if self.mask.width() == width && self.mask.height() == height {
            return self.clone();
        }
        let sx = width as f64 / self.mask.width() as f64;
        let sy = height as f64 / self.mask.height() as f64;
        let p = self.start_position;
        AnnotatedTarget {
            mask: self.mask.resize_nearest(width, height),
            start_position: Point::new(((p.x + 0.5) * sx - 0.5).round(), ((p.y + 0.5) * sy - 0.5).round()),
            start_heading: self.start_heading,
            source_id: self.source_id.clone(),
        }
    }
}

/// Mirrors mask and annotation: column x goes to `width - 1 - x` and the
/// heading reflects to `pi - heading`.
pub fn mirror_target(t: &AnnotatedTarget) -> AnnotatedTarget {
    AnnotatedTarget {
        mask: t.mask.mirror_horizontal(),
        start_position: Point::new(t.mask.width() as f64 - 1.0 - t.start_position.x, t.start_position.y),
        start_heading: normalize_angle(PI - t.start_heading),
        source_id: mirrored_id(&t.source_id),
    }
}

fn mirrored_id(id: &str) -> String {
    match id.strip_suffix("~mirror") {
        Some(base) => base.to_string(),
        None => format!("{id}~mirror"),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusManifest {
    pub entries: Vec<PathBuf>,
    pub augment: bool,
}

impl CorpusManifest {
    /// Line-per-entry text: `augment true|false`, blank lines and `#`
    /// comments, and one image path per line relative to the manifest.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        let mut augment = false;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(flag) = line.strip_prefix("augment ") {
                augment = match flag.trim() {
                    "true" => true,
                    "false" => false,
                    other => return Err(Error::parse(format!("manifest line {}", i + 1), format!("augment {other:?}"))),
                };
                continue;
            }
            entries.push(base.join(line));
        }
        Ok(CorpusManifest { entries, augment })
    }

    pub fn to_text(&self, base: &Path) -> String {
        let mut out = format!("augment {}\n", self.augment);
        for e in &self.entries {
            let rel = e.strip_prefix(base).unwrap_or(e);
            out.push_str(&format!("{}\n", rel.display()));
        }
        out
    }
}

/// Sidecar annotation path: the image path with extension `.ann`.
pub fn annotation_path(image: &Path) -> PathBuf {
    image.with_extension("ann")
}

fn parse_annotation(text: &str, entry: &str) -> Result<(Point, f64)> {
    let vals: Vec<f64> = text
        .split_whitespace()
        .map(|t| t.parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Load {
            entry: entry.to_string(),
            reason: format!("bad annotation: {e}"),
        })?;
    match vals[..] {
        [x, y, h] => Ok((Point::new(x, y), h)),
        _ => Err(Error::Load {
            entry: entry.to_string(),
            reason: "annotation needs `start_x start_y heading`".into(),
        }),
    }
}

/// Loads one mask and its sidecar annotation.
pub fn load_target(image: &Path) -> Result<AnnotatedTarget> {
    let entry = image.display().to_string();
    let load_err = |reason: String| Error::Load {
        entry: entry.clone(),
        reason,
    };
    let mask = load_mask_png(image).map_err(|e| load_err(e.to_string()))?;
    let ann = annotation_path(image);
    let text = std::fs::read_to_string(&ann).map_err(|e| load_err(format!("{}: {e}", ann.display())))?;
    let (start_position, start_heading) = parse_annotation(&text, &entry)?;
    let t = AnnotatedTarget {
        mask,
        start_position,
        start_heading: normalize_angle(start_heading),
        source_id: image.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
    };
    t.validate().map_err(|e| match e {
        Error::Load { reason, .. } => load_err(reason),
        other => other,
    })?;
    Ok(t)
}

/// Writes `<dir>/<source_id>.png` and its `.ann` sidecar.
pub fn save_target(t: &AnnotatedTarget, dir: &Path) -> Result<PathBuf> {
    let png = dir.join(format!("{}.png", t.source_id));
    save_mask_png(&t.mask, &png)?;
    let ann = annotation_path(&png);
    let text = format!("{:?} {:?} {:?}\n", t.start_position.x, t.start_position.y, t.start_heading);
    std::fs::write(&ann, text).map_err(|e| Error::io(&ann, e))?;
    Ok(png)
}

/// Loads every manifest entry, each followed by its mirror when augmenting,
/// optionally rescaled to `dims`.
pub fn load_corpus(manifest: &Path, dims: Option<(usize, usize)>) -> Result<Vec<AnnotatedTarget>> {
    let text = std::fs::read_to_string(manifest).map_err(|e| Error::io(manifest, e))?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    let m = CorpusManifest::parse(&text, base)?;
    let mut out = Vec::with_capacity(m.entries.len() * 2);
    for path in &m.entries {
        let mut t = load_target(path)?;
        if let Some((w, h)) = dims {
            t = t.resized(w, h);
            t.validate()?;
        }
        if m.augment {
            let mirror = mirror_target(&t);
            out.push(t);
            out.push(mirror);
        } else {
            out.push(t);
        }
    }
    Ok(out)
}

/// Renders a bounded-curvature random stroke of varying width.
fn draw_stroke(rng: &mut StreamRng, canvas: &mut Canvas, start: Point, heading: f64, steps: usize) -> Point {
    let (w, h) = (canvas.width() as f64, canvas.height() as f64);
    let margin = 4.0;
    let mut pos = start;
    let mut dir = heading;
    let mut curvature = 0.0;
    let mut width = rng.range(2.0, 8.0);
    for _ in 0..steps {
        curvature = (0.8 * curvature + 0.08 * rng.std_normal()).clamp(-0.25, 0.25);
        dir += curvature;
        // steer back toward the interior near the borders
        let ahead = pos + polar_to_rect(8.0, dir);
        if ahead.x < margin || ahead.y < margin || ahead.x > w - 1.0 - margin || ahead.y > h - 1.0 - margin {
            let to_center = (h / 2.0 - pos.y).atan2(w / 2.0 - pos.x);
            let turn = normalize_angle(to_center - dir);
            dir += turn.clamp(-0.5, 0.5);
        }
        dir = normalize_angle(dir);
        width = (width + 0.4 * rng.std_normal()).clamp(2.0, 8.0);
        let next = pos + polar_to_rect(2.0, dir);
        canvas.draw_segment(pos, next, width, 1.0);
        pos = next;
    }
    pos
}

/// Random smooth scribble annotated with its first point and tangent.
pub fn synth_scribble(rng: &mut StreamRng, width: usize, height: usize) -> AnnotatedTarget {
    assert!(width >= 32 && height >= 32, "synthetic targets need at least 32x32");
    loop {
        let mut mask = Canvas::new(width, height, 1);
        let start = Point::new(
            (rng.range(0.25, 0.75) * width as f64).round(),
            (rng.range(0.25, 0.75) * height as f64).round(),
        );
        let heading = rng.range(-PI, PI);
        let scale = (width.min(height) as f64 / 2.0).round() as usize;
        let steps = scale / 2 + rng.below(scale + 1);
        draw_stroke(rng, &mut mask, start, heading, steps);
        let t = AnnotatedTarget {
            mask,
            start_position: start,
            start_heading: normalize_angle(heading),
            source_id: String::new(),
        };
        let fill = t.mask.fill_mean();
        if (SYNTH_FILL_MIN..=SYNTH_FILL_MAX).contains(&fill) && t.validate().is_ok() {
            return t;
        }
    }
}

/// Two roughly perpendicular strokes crossing near the middle, annotated
/// at one end of the first stroke.
pub fn synth_plus(rng: &mut StreamRng, width: usize, height: usize) -> AnnotatedTarget {
    assert!(width >= 32 && height >= 32, "synthetic targets need at least 32x32");
    loop {
        let mut mask = Canvas::new(width, height, 1);
        let c = Point::new(
            width as f64 * rng.range(0.4, 0.6),
            height as f64 * rng.range(0.4, 0.6),
        );
        let arm = width.min(height) as f64 * rng.range(0.25, 0.35);
        let theta = rng.range(-PI, PI);
        let stroke = rng.range(3.0, 5.0);
        let a0 = c + polar_to_rect(arm, theta + PI);
        let a1 = c + polar_to_rect(arm, theta);
        let phi = theta + PI / 2.0 + rng.range(-0.2, 0.2);
        let b0 = c + polar_to_rect(arm, phi + PI);
        let b1 = c + polar_to_rect(arm, phi);
        mask.draw_segment(a0, a1, stroke, 1.0);
        mask.draw_segment(b0, b1, stroke, 1.0);
        let start = Point::new(a0.x.round(), a0.y.round());
        let t = AnnotatedTarget {
            mask,
            start_position: start,
            start_heading: normalize_angle(theta),
            source_id: String::new(),
        };
        let fill = t.mask.fill_mean();
        if (SYNTH_FILL_MIN..=SYNTH_FILL_MAX).contains(&fill) && t.validate().is_ok() {
            return t;
        }
    }
}

const STREAM_SYNTH: u64 = 0x5359;

/// Kinds of procedurally generated corpora.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SynthKind {
    Scribble,
    Plus,
}

/// `count` synthetic targets; target `i` depends only on `(seed, kind, i)`.
pub fn synth_corpus(kind: SynthKind, count: usize, seed: u64, width: usize, height: usize) -> Vec<AnnotatedTarget> {
    (0..count)
        .map(|i| {
            let tag = match kind {
                SynthKind::Scribble => 0,
                SynthKind::Plus => 1,
            };
            let mut rng = StreamRng::new(seed, &[STREAM_SYNTH, tag, i as u64]);
            let mut t = match kind {
                SynthKind::Scribble => synth_scribble(&mut rng, width, height),
                SynthKind::Plus => synth_plus(&mut rng, width, height),
            };
            let prefix = match kind {
                SynthKind::Scribble => "scribble",
                SynthKind::Plus => "plus",
            };
            t.source_id = format!("{prefix}{i:05}");
            t
        })
        .collect()
}

/// A corpus named on the command line: `synth:N`, `plus:N`, or a manifest path.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CorpusSpec {
    Synth(SynthKind, usize),
    Manifest(PathBuf),
}

impl CorpusSpec {
    pub fn parse(s: &str) -> Result<Self> {
        let count = |n: &str| {
            n.parse::<usize>()
                .ok()
                .filter(|&n| n > 0)
                .ok_or_else(|| Error::Config(format!("bad corpus size in {s:?}")))
        };
        if let Some(n) = s.strip_prefix("synth:") {
            Ok(CorpusSpec::Synth(SynthKind::Scribble, count(n)?))
        } else if let Some(n) = s.strip_prefix("plus:") {
            Ok(CorpusSpec::Synth(SynthKind::Plus, count(n)?))
        } else {
            Ok(CorpusSpec::Manifest(PathBuf::from(s)))
        }
    }

    pub fn load(&self, seed: u64, width: usize, height: usize) -> Result<Vec<AnnotatedTarget>> {
        match self {
            CorpusSpec::Synth(kind, n) => Ok(synth_corpus(*kind, *n, seed, width, height)),
            CorpusSpec::Manifest(path) => load_corpus(path, Some((width, height))),
        }
    }
}
