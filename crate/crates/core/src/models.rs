//! The chain and vine programs.

use std::f64::consts::{FRAC_PI_2, PI};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{Exec, ModelProgram, SiteDecl, Step};
use crate::geom::{normalize_angle, polar_to_rect, TurtleState};
use crate::guide::ArgRange;
use crate::trace::ChoiceKind;

/// Default recursion cap; reaching it forces the continue-flip to false.
pub const DEFAULT_DEPTH_CAP: u32 = 60;

fn check(cond: bool, what: &str) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::Config(what.to_string()))
    }
}

fn read_config<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e.to_string()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChainConfig {
    pub segment_length: f64,
    pub angle_stddev: f64,
    pub continue_prob: f64,
    pub stroke_width: f64,
    pub depth_cap: u32,
}

impl Default for ChainConfig {
    fn default() -> Self {
        ChainConfig {
            segment_length: 4.0,
            angle_stddev: PI / 8.0,
            continue_prob: 0.5,
            stroke_width: 3.0,
            depth_cap: DEFAULT_DEPTH_CAP,
        }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        check(self.segment_length > 0.0, "segment_length must be > 0")?;
        check(self.angle_stddev > 0.0, "angle_stddev must be > 0")?;
        check(self.continue_prob > 0.0 && self.continue_prob < 1.0, "continue_prob must be in (0, 1)")?;
        check(self.stroke_width >= 1.0, "stroke_width must be >= 1")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let cfg: Self = read_config(path)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

const TURTLE_ARGS: [ArgRange; 3] = [ArgRange::CanvasX, ArgRange::CanvasY, ArgRange::Angle];

/// Chain of fixed-length segments, each turned by a gaussian perturbation.
#[derive(Clone, Debug)]
pub struct ChainProgram {
    pub cfg: ChainConfig,
    sites: Vec<SiteDecl>,
}

pub const CHAIN_ANGLE: usize = 0;
pub const CHAIN_CONTINUE: usize = 1;

impl ChainProgram {
    pub fn new(cfg: ChainConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(ChainProgram {
            cfg,
            sites: vec![
                SiteDecl::new(0, "angle", ChoiceKind::Gaussian, &TURTLE_ARGS),
                SiteDecl::new(1, "continue", ChoiceKind::Flip, &TURTLE_ARGS),
            ],
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChainState {
    pub turtle: TurtleState,
    pub done: bool,
}

impl ModelProgram for ChainProgram {
    type State = ChainState;

    fn name(&self) -> &str {
        "chain"
    }

    fn sites(&self) -> &[SiteDecl] {
        &self.sites
    }

    fn init(&self, start: TurtleState) -> ChainState {
        ChainState {
            turtle: TurtleState {
                width: self.cfg.stroke_width,
                depth: 0,
                ..start
            },
            done: false,
        }
    }

    fn step(&self, st: &mut ChainState, exec: &mut Exec<'_>) -> Result<Step> {
        if st.done {
            return Ok(Step::Done);
        }
        let t = &mut st.turtle;
        let pos = t.position;
        let args = [pos.x, pos.y, t.heading];
        let d = exec.gaussian(&self.sites[CHAIN_ANGLE], 0.0, self.cfg.angle_stddev, &args, pos)?;
        t.set_heading(t.heading + d);
        let next = t.advance(self.cfg.segment_length);
        exec.canvas().draw_segment(pos, next, t.width, 1.0);
        let go_on = t.depth + 1 < self.cfg.depth_cap
            && exec.flip(&self.sites[CHAIN_CONTINUE], self.cfg.continue_prob, &args, next)?;
        if go_on {
            t.depth += 1;
        } else {
            st.done = true;
        }
        Ok(Step::Emitted)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VineConfig {
    pub segment_length: f64,
    pub angle_stddev: f64,
    pub continue_prob: f64,
    pub branch_prob: f64,
    pub branch_angle_mean: f64,
    pub branch_angle_stddev: f64,
    pub width_initial: f64,
    pub width_decay: f64,
    pub leaf_prob: f64,
    pub leaf_size: f64,
    pub flower_prob: f64,
    pub flower_radius: f64,
    pub max_depth: u32,
    /// Hard cap on segments over all branches.
    pub max_segments: u32,
}

impl Default for VineConfig {
    fn default() -> Self {
        VineConfig {
            segment_length: 4.0,
            angle_stddev: PI / 8.0,
            continue_prob: 0.9,
            branch_prob: 0.12,
            branch_angle_mean: PI / 5.0,
            branch_angle_stddev: PI / 10.0,
            width_initial: 3.0,
            width_decay: 0.75,
            leaf_prob: 0.2,
            leaf_size: 3.0,
            flower_prob: 0.5,
            flower_radius: 2.5,
            max_depth: 40,
            max_segments: 400,
        }
    }
}

impl VineConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |p: f64| (0.0..=1.0).contains(&p);
        check(self.segment_length > 0.0, "segment_length must be > 0")?;
        check(self.angle_stddev > 0.0, "angle_stddev must be > 0")?;
        check(self.branch_angle_stddev > 0.0, "branch_angle_stddev must be > 0")?;
        check(
            unit(self.continue_prob) && unit(self.branch_prob) && unit(self.leaf_prob) && unit(self.flower_prob),
            "probabilities must be in [0, 1]",
        )?;
        check(self.width_decay > 0.0 && self.width_decay <= 1.0, "width_decay must be in (0, 1]")?;
        check(
            self.width_initial > 0.0 && self.leaf_size > 0.0 && self.flower_radius > 0.0,
            "sizes must be > 0",
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let cfg: Self = read_config(path)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

pub const VINE_ANGLE: usize = 0;
pub const VINE_CONTINUE: usize = 1;
pub const VINE_BRANCH: usize = 2;
pub const VINE_SIDE: usize = 3;
pub const VINE_BRANCH_ANGLE: usize = 4;
pub const VINE_LEAF: usize = 5;
pub const VINE_FLOWER: usize = 6;

/// Vine growth: tapered branches with leaves and flowers.
///
/// Each growth step turns by gaussian(0, angle_stddev) and draws a segment.
/// It may then fork a thinner child at `±gaussian(branch_angle_mean,
/// branch_angle_stddev)` (grown once the parent branch ends) and may attach
/// a leaf ellipse at the new tip. A branch that stops continuing may end in
/// a flower disc. Flips with probability 0 are skipped entirely, so with no
/// branches, leaves or flowers the choice sequence is the chain's.
#[derive(Clone, Debug)]
pub struct VineProgram {
    pub cfg: VineConfig,
    sites: Vec<SiteDecl>,
}

impl VineProgram {
    pub fn new(cfg: VineConfig) -> Result<Self> {
        cfg.validate()?;
        let args = [
            ArgRange::CanvasX,
            ArgRange::CanvasY,
            ArgRange::Angle,
            ArgRange::Fixed(0.0, cfg.width_initial),
            ArgRange::Fixed(0.0, f64::from(cfg.max_depth)),
        ];
        let sites = vec![
            SiteDecl::new(0, "angle", ChoiceKind::Gaussian, &args),
            SiteDecl::new(1, "continue", ChoiceKind::Flip, &args),
            SiteDecl::new(2, "branch", ChoiceKind::Flip, &args),
            SiteDecl::new(3, "branch_side", ChoiceKind::Flip, &args),
            SiteDecl::new(4, "branch_angle", ChoiceKind::Gaussian, &args),
            SiteDecl::new(5, "leaf", ChoiceKind::Flip, &args),
            SiteDecl::new(6, "flower", ChoiceKind::Flip, &args),
        ];
        Ok(VineProgram { cfg, sites })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Phase {
    Grow,
    Decorate,
    Finish,
}

#[derive(Clone, Debug, PartialEq)]
struct Branch {
    turtle: TurtleState,
    phase: Phase,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VineState {
    /// Top of the stack is the branch being grown.
    stack: Vec<Branch>,
    segments: u32,
}

impl VineState {
    pub fn segments(&self) -> u32 {
        self.segments
    }

    pub fn turtle(&self) -> Option<&TurtleState> {
        self.stack.last().map(|b| &b.turtle)
    }
}

impl VineProgram {
    fn flip_if(&self, exec: &mut Exec<'_>, site: usize, p: f64, args: &[f64], t: &TurtleState) -> Result<bool> {
        if p == 0.0 {
            return Ok(false);
        }
        exec.flip(&self.sites[site], p, args, t.position)
    }
}

impl ModelProgram for VineProgram {
    type State = VineState;

    fn name(&self) -> &str {
        "vine"
    }

    fn sites(&self) -> &[SiteDecl] {
        &self.sites
    }

    fn init(&self, start: TurtleState) -> VineState {
        VineState {
            stack: vec![Branch {
                turtle: TurtleState {
                    width: self.cfg.width_initial,
                    depth: 0,
                    ..start
                },
                phase: Phase::Grow,
            }],
            segments: 0,
        }
    }

    fn step(&self, st: &mut VineState, exec: &mut Exec<'_>) -> Result<Step> {
        let cfg = &self.cfg;
        loop {
            let segments = st.segments;
            let Some(top) = st.stack.last_mut() else {
                return Ok(Step::Done);
            };
            let t = &mut top.turtle;
            let args = [t.position.x, t.position.y, t.heading, t.width, f64::from(t.depth)];
            match top.phase {
                Phase::Grow => {
                    if t.depth >= cfg.max_depth || segments >= cfg.max_segments {
                        st.stack.pop();
                        continue;
                    }
                    let pos = t.position;
                    let d = exec.gaussian(&self.sites[VINE_ANGLE], 0.0, cfg.angle_stddev, &args, pos)?;
                    t.set_heading(t.heading + d);
                    let next = t.advance(cfg.segment_length);
                    exec.canvas().draw_segment(pos, next, t.width, 1.0);
                    top.phase = Phase::Decorate;
                    st.segments += 1;
                    return Ok(Step::Emitted);
                }
                Phase::Decorate => {
                    top.phase = Phase::Finish;
                    let turtle = *t;
                    let mut child = None;
                    if segments < cfg.max_segments && self.flip_if(exec, VINE_BRANCH, cfg.branch_prob, &args, &turtle)? {
                        let left = exec.flip(&self.sites[VINE_SIDE], 0.5, &args, turtle.position)?;
                        let a = exec.gaussian(
                            &self.sites[VINE_BRANCH_ANGLE],
                            cfg.branch_angle_mean,
                            cfg.branch_angle_stddev,
                            &args,
                            turtle.position,
                        )?;
                        let mut c = turtle;
                        c.set_heading(turtle.heading + if left { a } else { -a });
                        c.width = turtle.width * cfg.width_decay;
                        c.depth = turtle.depth + 1;
                        child = Some(Branch {
                            turtle: c,
                            phase: Phase::Grow,
                        });
                    }
                    if let Some(c) = child {
                        let below = st.stack.len() - 1;
                        st.stack.insert(below, c);
                    }
                    if self.flip_if(exec, VINE_LEAF, cfg.leaf_prob, &args, &turtle)? {
                        // leaves hang off alternating sides of the stem
                        let side = if segments % 2 == 0 { FRAC_PI_2 } else { -FRAC_PI_2 };
                        let dir = normalize_angle(turtle.heading + side / 2.0);
                        let center = turtle.position + polar_to_rect(cfg.leaf_size, dir);
                        exec.canvas().draw_ellipse(center, cfg.leaf_size, cfg.leaf_size / 2.0, dir, 1.0);
                        return Ok(Step::Emitted);
                    }
                }
                Phase::Finish => {
                    let turtle = *t;
                    let forced_stop = turtle.depth + 1 >= cfg.max_depth || segments >= cfg.max_segments;
                    let go_on = !forced_stop
                        && self.flip_if(exec, VINE_CONTINUE, cfg.continue_prob, &args, &turtle)?;
                    if go_on {
                        let top = st.stack.last_mut().expect("current branch");
                        top.turtle.depth += 1;
                        top.phase = Phase::Grow;
                        continue;
                    }
                    st.stack.pop();
                    if self.flip_if(exec, VINE_FLOWER, cfg.flower_prob, &args, &turtle)? {
                        exec.canvas().draw_disc(turtle.position, cfg.flower_radius, 1.0);
                        return Ok(Step::Emitted);
                    }
                }
            }
        }
    }
}
