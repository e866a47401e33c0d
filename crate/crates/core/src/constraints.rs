//! Constraint likelihoods: shape matching against a target mask and the
//! stylized circuit score. Both are total functions of any partial canvas,
//! and both expose incremental statistics so SMC can rescore a particle
//! after each primitive by touching only the pixels that changed.

use crate::error::{Error, Result};
use crate::geom::Rect;
use crate::raster::{
    build_pyramid, sobel_edge_mask, sobel_magnitude, Canvas, EdgeMask, PixelChange, Pyramid,
    DEFAULT_EDGE_THRESHOLD,
};
use crate::trace::gaussian_logpdf;

/// Empty and edge pixels are worth 1.5 times a filled interior pixel.
pub const W_FILLED: f64 = 2.0 / 3.0;
pub const SIGMA_SHAPE: f64 = 0.02;
pub const TAU_CIRCUIT: f64 = 0.5;
pub const SIGMA_CIRCUIT: f64 = 0.01;

/// A likelihood over canvases with incremental sufficient statistics.
pub trait Likelihood: Send + Sync {
    type Stats: Clone + Send + Sync;

    /// Canvas size the constraint is defined on.
    fn dims(&self) -> (usize, usize);

    fn stats(&self, canvas: &Canvas) -> Self::Stats;

    /// Folds pixel changes (already applied to `canvas`) into `stats`.
    fn update(&self, stats: &mut Self::Stats, canvas: &Canvas, changes: &[PixelChange]);

    fn log_likelihood(&self, stats: &Self::Stats, canvas: &Canvas) -> f64;

    /// The scalar the Gaussian is evaluated at (normalized similarity, circuit score).
    fn score(&self, stats: &Self::Stats, canvas: &Canvas) -> f64;

    /// Target image whose windows feed the guide, if the constraint has one.
    fn target_pyramid(&self) -> Option<&Pyramid> {
        None
    }

    /// Coverage outside this rectangle counts as out of bounds.
    fn counting_rect(&self) -> Rect {
        let (w, h) = self.dims();
        Rect::from_size(w, h)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum PixelClass {
    /// Weight 1: empty target pixel, or any edge pixel.
    Unit,
    /// Weight w_filled: filled interior pixel.
    Filled,
}

fn classify(target: &Canvas, edges: &EdgeMask, index: usize) -> PixelClass {
    if target.at(index) == 0.0 || edges.data[index] != 0 {
        PixelClass::Unit
    } else {
        PixelClass::Filled
    }
}

/// Weighted fraction of pixels where `image` equals `target`.
///
/// Weights: 1 for empty target pixels, 1 for target edge pixels, `w_filled`
/// for filled non-edge pixels; the edge case takes precedence over filled.
pub fn sim(image: &Canvas, target: &Canvas, target_edges: &EdgeMask, w_filled: f64) -> Result<f64> {
    if !image.same_size(target) || target_edges.width != target.width() || target_edges.height != target.height() {
        return Err(Error::Dimension(format!(
            "sim of {}x{} image against {}x{} target",
            image.width(),
            image.height(),
            target.width(),
            target.height()
        )));
    }
    let mut counts = MatchCounts::default();
    for i in 0..image.len_pixels() {
        let class = classify(target, target_edges, i);
        counts.add_total(class);
        if image.at(i) == target.at(i) {
            counts.add_match(class, 1);
        }
    }
    Ok(counts.ratio(w_filled))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
struct MatchCounts {
    unit_total: i64,
    filled_total: i64,
    unit_match: i64,
    filled_match: i64,
}

impl MatchCounts {
    fn add_total(&mut self, class: PixelClass) {
        match class {
            PixelClass::Unit => self.unit_total += 1,
            PixelClass::Filled => self.filled_total += 1,
        }
    }

    fn add_match(&mut self, class: PixelClass, delta: i64) {
        match class {
            PixelClass::Unit => self.unit_match += delta,
            PixelClass::Filled => self.filled_match += delta,
        }
    }

    fn ratio(&self, w_filled: f64) -> f64 {
        let num = self.unit_match as f64 + w_filled * self.filled_match as f64;
        let den = self.unit_total as f64 + w_filled * self.filled_total as f64;
        if den == 0.0 {
            1.0
        } else {
            num / den
        }
    }
}

/// Shape-matching constraint against a binary target mask.
#[derive(Clone, Debug)]
pub struct ShapeConstraint {
    target: Canvas,
    target_edges: EdgeMask,
    target_pyramid: Pyramid,
    classes: Vec<PixelClass>,
    totals: MatchCounts,
    pub w_filled: f64,
    pub sigma: f64,
    baseline: f64,
}

impl ShapeConstraint {
    pub fn new(target: Canvas) -> Result<Self> {
        Self::with_params(target, W_FILLED, SIGMA_SHAPE)
    }

    pub fn with_params(target: Canvas, w_filled: f64, sigma: f64) -> Result<Self> {
        if target.channels() != 1 || !target.is_binary() {
            return Err(Error::Domain("shape target must be a binary single-channel mask".into()));
        }
        if !(sigma > 0.0) {
            return Err(Error::ParameterDomain(format!("sigma_shape = {sigma}")));
        }
        let target = target.to_plain();
        let target_edges = sobel_edge_mask(&target, DEFAULT_EDGE_THRESHOLD)?;
        let classes: Vec<PixelClass> = (0..target.len_pixels())
            .map(|i| classify(&target, &target_edges, i))
            .collect();
        let mut totals = MatchCounts::default();
        for &c in &classes {
            totals.add_total(c);
        }
        let empty = Canvas::new(target.width(), target.height(), 1);
        let baseline = sim(&empty, &target, &target_edges, w_filled)?;
        if baseline >= 1.0 {
            return Err(Error::DegenerateConstraint(
                "target mask is empty, so every output is as similar as the empty image".into(),
            ));
        }
        let target_pyramid = build_pyramid(&target);
        Ok(ShapeConstraint {
            target,
            target_edges,
            target_pyramid,
            classes,
            totals,
            w_filled,
            sigma,
            baseline,
        })
    }

    pub fn target(&self) -> &Canvas {
        &self.target
    }

    pub fn target_edges(&self) -> &EdgeMask {
        &self.target_edges
    }

    /// sim(0, c)
    pub fn baseline(&self) -> f64 {
        self.baseline
    }

    pub fn normalize(&self, similarity: f64) -> f64 {
        (similarity - self.baseline) / (1.0 - self.baseline)
    }

    /// Normalized similarity of a full image, computed from scratch.
    pub fn normalized_similarity(&self, image: &Canvas) -> Result<f64> {
        Ok(self.normalize(sim(image, &self.target, &self.target_edges, self.w_filled)?))
    }

    pub fn log_density_of(&self, normalized: f64) -> f64 {
        gaussian_logpdf(normalized, 1.0, self.sigma)
    }
}

/// Shape log-likelihood of a full image: log N(normalized sim; 1, sigma).
pub fn shape_log_likelihood(image: &Canvas, constraint: &ShapeConstraint) -> Result<f64> {
    Ok(constraint.log_density_of(constraint.normalized_similarity(image)?))
}

impl Likelihood for ShapeConstraint {
    type Stats = ShapeStats;

    fn dims(&self) -> (usize, usize) {
        (self.target.width(), self.target.height())
    }

    fn stats(&self, canvas: &Canvas) -> ShapeStats {
        let mut counts = self.totals;
        for (i, &class) in self.classes.iter().enumerate() {
            if canvas.at(i) == self.target.at(i) {
                counts.add_match(class, 1);
            }
        }
        ShapeStats { counts }
    }

    fn update(&self, stats: &mut ShapeStats, canvas: &Canvas, changes: &[PixelChange]) {
        for ch in changes {
            let t = self.target.at(ch.index);
            let was = i64::from(ch.old == t);
            let now = i64::from(canvas.at(ch.index) == t);
            stats.counts.add_match(self.classes[ch.index], now - was);
        }
    }

    fn log_likelihood(&self, stats: &ShapeStats, canvas: &Canvas) -> f64 {
        self.log_density_of(self.score(stats, canvas))
    }

    fn score(&self, stats: &ShapeStats, _canvas: &Canvas) -> f64 {
        self.normalize(stats.counts.ratio(self.w_filled))
    }

    fn target_pyramid(&self) -> Option<&Pyramid> {
        Some(&self.target_pyramid)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShapeStats {
    counts: MatchCounts,
}

/// Mean of the binary Sobel mask over the canvas.
pub fn edge_density(image: &Canvas) -> Result<f64> {
    let mask = sobel_edge_mask(image, DEFAULT_EDGE_THRESHOLD)?;
    Ok(mask.count() as f64 / image.len_pixels() as f64)
}

/// Mean intensity over the canvas.
pub fn fill_density(image: &Canvas) -> Result<f64> {
    if image.channels() != 1 {
        return Err(Error::Dimension("fill density needs a single-channel canvas".into()));
    }
    Ok(image.fill_mean())
}

/// |x - xbar| / |xbar|
pub fn relative_error(x: f64, xbar: f64) -> Result<f64> {
    if xbar == 0.0 {
        return Err(Error::Domain("relative error against zero".into()));
    }
    Ok((x - xbar).abs() / xbar.abs())
}

#[derive(Clone, Debug, PartialEq)]
pub struct CircuitConstraint {
    pub width: usize,
    pub height: usize,
    pub tau: f64,
    pub sigma: f64,
    pub die_bounds: Rect,
    pub oob_weight: f64,
}

impl CircuitConstraint {
    pub fn new(width: usize, height: usize) -> Self {
        CircuitConstraint {
            width,
            height,
            tau: TAU_CIRCUIT,
            sigma: SIGMA_CIRCUIT,
            die_bounds: Rect::from_size(width, height),
            oob_weight: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::ParameterDomain(format!("tau = {}", self.tau)));
        }
        if !(self.sigma > 0.0) {
            return Err(Error::ParameterDomain(format!("sigma_circ = {}", self.sigma)));
        }
        if self.die_bounds.is_empty() || !Rect::from_size(self.width, self.height).contains_rect(&self.die_bounds) {
            return Err(Error::ParameterDomain("die bounds must lie inside the canvas".into()));
        }
        Ok(())
    }

    /// edge * (1 - eta(fill, tau)) * (1 - oob_weight * oob / max(1, drawn))
    pub fn score_from(&self, edge: f64, fill: f64, oob_pixels: u64, drawn_pixels: u64) -> f64 {
        let eta = (fill - self.tau).abs() / self.tau;
        let oob = oob_pixels as f64 / drawn_pixels.max(1) as f64;
        edge * (1.0 - eta) * (1.0 - self.oob_weight * oob)
    }
}

/// Circuit log-likelihood of a full image given the rasterizer's coverage counts.
pub fn circuit_log_likelihood(
    image: &Canvas,
    oob_pixels: u64,
    drawn_pixels: u64,
    constraint: &CircuitConstraint,
) -> Result<f64> {
    let edge = edge_density(image)?;
    let fill = fill_density(image)?;
    relative_error(fill, constraint.tau)?;
    let s = constraint.score_from(edge, fill, oob_pixels, drawn_pixels);
    Ok(gaussian_logpdf(s, 1.0, constraint.sigma))
}

#[derive(Clone, Debug, PartialEq)]
pub struct CircuitStats {
    edges: Vec<u8>,
    edge_count: i64,
    fill_sum: f64,
}

impl Likelihood for CircuitConstraint {
    type Stats = CircuitStats;

    fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    fn stats(&self, canvas: &Canvas) -> CircuitStats {
        let mask = sobel_edge_mask(&canvas.to_plain(), DEFAULT_EDGE_THRESHOLD)
            .expect("circuit canvases are single-channel");
        let edge_count = mask.count() as i64;
        CircuitStats {
            edges: mask.data,
            edge_count,
            fill_sum: (0..canvas.len_pixels()).map(|i| canvas.at(i)).sum(),
        }
    }

    fn update(&self, stats: &mut CircuitStats, canvas: &Canvas, changes: &[PixelChange]) {
        let w = canvas.width() as i64;
        let h = canvas.height() as i64;
        let mut dirty: Vec<usize> = Vec::with_capacity(changes.len() * 9);
        for ch in changes {
            stats.fill_sum += canvas.at(ch.index) - ch.old;
            let x = (ch.index as i64) % w;
            let y = (ch.index as i64) / w;
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (xx, yy) = (x + dx, y + dy);
                    if xx >= 0 && yy >= 0 && xx < w && yy < h {
                        dirty.push((yy * w + xx) as usize);
                    }
                }
            }
        }
        dirty.sort_unstable();
        dirty.dedup();
        for i in dirty {
            let x = i % canvas.width();
            let y = i / canvas.width();
            let e = u8::from(sobel_magnitude(canvas, x, y) > DEFAULT_EDGE_THRESHOLD);
            stats.edge_count += i64::from(e) - i64::from(stats.edges[i]);
            stats.edges[i] = e;
        }
    }

    fn log_likelihood(&self, stats: &CircuitStats, canvas: &Canvas) -> f64 {
        gaussian_logpdf(self.score(stats, canvas), 1.0, self.sigma)
    }

    fn score(&self, stats: &CircuitStats, canvas: &Canvas) -> f64 {
        let n = canvas.len_pixels() as f64;
        let raster = canvas.stats();
        self.score_from(
            stats.edge_count as f64 / n,
            stats.fill_sum / n,
            raster.outside,
            raster.drawn,
        )
    }

    fn counting_rect(&self) -> Rect {
        self.die_bounds
    }
}
