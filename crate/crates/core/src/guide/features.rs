//! Feature vectors: normalized call arguments followed by pixel windows of
//! the partial output and, when the constraint has one, the target image.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::geom::Point;
use crate::raster::{extract_windows, extract_windows_direct, Canvas, Pyramid};

/// Static range of one call argument, used to map it affinely onto [-1, 1].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ArgRange {
    /// `[0, canvas width]`
    CanvasX,
    /// `[0, canvas height]`
    CanvasY,
    /// `[-pi, pi]`
    Angle,
    Fixed(f64, f64),
}

impl ArgRange {
    pub fn bounds(self, width: usize, height: usize) -> (f64, f64) {
        match self {
            ArgRange::CanvasX => (0.0, width as f64),
            ArgRange::CanvasY => (0.0, height as f64),
            ArgRange::Angle => (-PI, PI),
            ArgRange::Fixed(lo, hi) => (lo, hi),
        }
    }
}

/// `2 (v - lo) / (hi - lo) - 1`, clamped to [-1, 1].
pub fn normalize_arg(v: f64, lo: f64, hi: f64) -> f64 {
    if hi <= lo {
        return 0.0;
    }
    (2.0 * (v - lo) / (hi - lo) - 1.0).clamp(-1.0, 1.0)
}

/// Which feature groups a guide sees.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSet {
    pub local: bool,
    pub partial: bool,
    pub target: bool,
}

impl FeatureSet {
    pub const ALL: FeatureSet = FeatureSet {
        local: true,
        partial: true,
        target: true,
    };

    /// Feature count for a site with `n_args` arguments on a `channels`-channel canvas.
    pub fn len(&self, n_args: usize, channels: usize, has_target: bool) -> usize {
        let w = crate::raster::WINDOW_FEATURES_PER_CHANNEL * channels;
        usize::from(self.local) * n_args
            + usize::from(self.partial) * w
            + usize::from(self.target && has_target) * w
    }
}

/// Feature subsets compared in the ablation study.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
pub enum Ablation {
    /// No inputs: each site learns a constant proposal.
    Constant,
    /// Call arguments only.
    Local,
    /// Call arguments and target windows.
    #[value(name = "local+target")]
    #[serde(rename = "local+target")]
    LocalTarget,
    /// Call arguments, partial-output windows and target windows.
    All,
}

impl Ablation {
    pub fn feature_set(self) -> FeatureSet {
        match self {
            Ablation::Constant => FeatureSet { local: false, partial: false, target: false },
            Ablation::Local => FeatureSet { local: true, partial: false, target: false },
            Ablation::LocalTarget => FeatureSet { local: true, partial: false, target: true },
            Ablation::All => FeatureSet::ALL,
        }
    }
}

/// Appends the features of one call to `out`. The partial-output windows
/// are read straight from the canvas; values equal those of its pyramid.
pub fn assemble_features_into(
    args: &[f64],
    ranges: &[ArgRange],
    partial: &Canvas,
    target: Option<&Pyramid>,
    position: Point,
    set: FeatureSet,
    out: &mut Vec<f64>,
) {
    debug_assert_eq!(args.len(), ranges.len());
    if set.local {
        for (&v, r) in args.iter().zip(ranges) {
            let (lo, hi) = r.bounds(partial.width(), partial.height());
            out.push(normalize_arg(v, lo, hi));
        }
    }
    if set.partial {
        extract_windows_direct(partial, position, out);
    }
    if set.target {
        if let Some(t) = target {
            out.extend(extract_windows(t, position));
        }
    }
}

/// Features of one call from prebuilt pyramids.
pub fn assemble_features(
    args: &[f64],
    ranges: &[ArgRange],
    partial: &Pyramid,
    target: Option<&Pyramid>,
    position: Point,
    set: FeatureSet,
) -> Result<Vec<f64>> {
    if args.len() != ranges.len() {
        return Err(Error::Dimension(format!(
            "{} arguments with {} declared ranges",
            args.len(),
            ranges.len()
        )));
    }
    let base = &partial.levels[0];
    let mut out = Vec::new();
    if set.local {
        for (&v, r) in args.iter().zip(ranges) {
            let (lo, hi) = r.bounds(base.width(), base.height());
            out.push(normalize_arg(v, lo, hi));
        }
    }
    if set.partial {
        out.extend(extract_windows(partial, position));
    }
    if set.target {
        if let Some(t) = target {
            out.extend(extract_windows(t, position));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::build_pyramid;

    #[test]
    fn zero_args_on_blank_canvases() {
        let p = build_pyramid(&Canvas::new(20, 10, 1));
        let f = assemble_features(&[], &[], &p, Some(&p), Point::new(3.0, 4.0), FeatureSet::ALL).unwrap();
        assert_eq!(f, vec![0.0; 72]);
    }

    #[test]
    fn argument_normalization() {
        assert_eq!(normalize_arg(PI, -PI, PI), 1.0);
        assert_eq!(normalize_arg(96.75, 0.0, 129.0), 0.5);
        assert_eq!(normalize_arg(500.0, 0.0, 129.0), 1.0);
        assert_eq!(normalize_arg(-3.0, 0.0, 129.0), -1.0);
        let p = build_pyramid(&Canvas::new(129, 97, 1));
        let f = assemble_features(&[96.75, PI], &[ArgRange::CanvasX, ArgRange::Angle], &p, None, Point::new(0.0, 0.0), FeatureSet::ALL).unwrap();
        assert_eq!(&f[..2], &[0.5, 1.0]);
        assert_eq!(f.len(), 2 + 36);
    }

    #[test]
    fn direct_and_pyramid_paths_agree() {
        let mut c = Canvas::new(33, 21, 1);
        c.draw_segment(Point::new(2.0, 3.0), Point::new(30.0, 17.0), 3.0, 1.0);
        let t = build_pyramid(&c.mirror_horizontal());
        let args = [4.0, 5.0, 0.3];
        let ranges = [ArgRange::CanvasX, ArgRange::CanvasY, ArgRange::Angle];
        for pos in [Point::new(0.0, 0.0), Point::new(16.4, 9.6), Point::new(40.0, -2.0)] {
            let a = assemble_features(&args, &ranges, &build_pyramid(&c), Some(&t), pos, FeatureSet::ALL).unwrap();
            let mut b = Vec::new();
            assemble_features_into(&args, &ranges, &c, Some(&t), pos, FeatureSet::ALL, &mut b);
            assert_eq!(a, b);
        }
    }

    #[test]
    fn ablation_lengths() {
        assert_eq!(Ablation::Constant.feature_set().len(3, 1, true), 0);
        assert_eq!(Ablation::Local.feature_set().len(3, 1, true), 3);
        assert_eq!(Ablation::LocalTarget.feature_set().len(3, 1, true), 39);
        assert_eq!(Ablation::All.feature_set().len(3, 1, true), 75);
        assert_eq!(Ablation::All.feature_set().len(3, 1, false), 39);
    }
}
