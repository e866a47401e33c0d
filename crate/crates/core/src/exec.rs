//! Execution context for model programs.
//!
//! A program is a state machine whose `step` runs until it emits one
//! primitive onto the canvas (the point where SMC rescores the particle) or
//! finishes. All randomness goes through [`Exec::gaussian`] and
//! [`Exec::flip`], which record each choice and, depending on the mode,
//! sample from the prior, sample from a guide, or read back a stored trace.

use crate::error::{Error, Result};
use crate::geom::{Point, TurtleState};
use crate::guide::{assemble_features_into, bound_outputs, ArgRange, FeatureSet, ParameterStore};
use crate::raster::{Canvas, Pyramid};
use crate::rng::Entropy;
use crate::trace::{sample_choice, ChoiceAddress, ChoiceKind, ChoiceRecord, DistributionSpec, SiteId, Trace};

/// A lexical random-choice site and the ranges of the arguments its guide sees.
#[derive(Clone, Debug, PartialEq)]
pub struct SiteDecl {
    pub id: SiteId,
    pub name: &'static str,
    pub kind: ChoiceKind,
    pub args: Vec<ArgRange>,
}

impl SiteDecl {
    pub fn new(id: u32, name: &'static str, kind: ChoiceKind, args: &[ArgRange]) -> Self {
        SiteDecl {
            id: SiteId(id),
            name,
            kind,
            args: args.to_vec(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Step {
    /// One primitive was drawn; the program may continue.
    Emitted,
    Done,
}

/// An accumulative procedural program.
pub trait ModelProgram: Send + Sync {
    /// Suspended continuation between steps.
    type State: Clone + Send + Sync;

    fn name(&self) -> &str;

    /// Every site the program can hit, ids `0..n`.
    fn sites(&self) -> &[SiteDecl];

    fn init(&self, start: TurtleState) -> Self::State;

    fn step(&self, state: &mut Self::State, exec: &mut Exec<'_>) -> Result<Step>;
}

/// Trace, canvas and per-site hit counts of one execution.
#[derive(Clone, Debug)]
pub struct ExecState {
    pub trace: Trace,
    pub canvas: Canvas,
    /// Sum of `prior_logp - guide_logp` over guided choices.
    pub log_importance: f64,
    instances: Vec<u32>,
}

impl ExecState {
    pub fn new(canvas: Canvas) -> Self {
        ExecState {
            trace: Trace::new(),
            canvas,
            log_importance: 0.0,
            instances: Vec::new(),
        }
    }
}

/// The inputs and outcome of one choice, as a guide network sees them.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureRecord {
    pub site: SiteId,
    pub features: Vec<f64>,
    pub prior: DistributionSpec,
    pub value: f64,
}

/// Where choice values come from.
#[derive(Clone, Copy)]
pub enum Mode<'a> {
    /// Prior sampling.
    Forward,
    /// Values read back from a trace.
    Replay(&'a Trace),
    /// Guide sampling; `target` is the constraint image, if any.
    Guided {
        store: &'a ParameterStore,
        target: Option<&'a Pyramid>,
    },
}

/// Feature recording during replay, used to build training caches.
pub struct Recorder<'a> {
    pub features: FeatureSet,
    pub target: Option<&'a Pyramid>,
    pub records: &'a mut Vec<FeatureRecord>,
}

pub struct Exec<'a> {
    state: &'a mut ExecState,
    entropy: Option<&'a mut dyn Entropy>,
    mode: Mode<'a>,
    recorder: Option<Recorder<'a>>,
    scratch: Vec<f64>,
}

impl<'a> Exec<'a> {
    pub fn new(state: &'a mut ExecState, mode: Mode<'a>, entropy: Option<&'a mut dyn Entropy>) -> Self {
        Exec {
            state,
            entropy,
            mode,
            recorder: None,
            scratch: Vec::new(),
        }
    }

    pub fn with_recorder(mut self, recorder: Recorder<'a>) -> Self {
        self.recorder = Some(recorder);
        self
    }

    pub fn canvas(&mut self) -> &mut Canvas {
        &mut self.state.canvas
    }

    pub fn gaussian(&mut self, decl: &SiteDecl, mean: f64, stddev: f64, args: &[f64], position: Point) -> Result<f64> {
        self.choose(decl, DistributionSpec::Gaussian { mean, stddev }, args, position)
    }

    pub fn flip(&mut self, decl: &SiteDecl, p: f64, args: &[f64], position: Point) -> Result<bool> {
        Ok(self.choose(decl, DistributionSpec::Flip { p }, args, position)? != 0.0)
    }

    fn features(&mut self, decl: &SiteDecl, args: &[f64], position: Point, set: FeatureSet, target: Option<&Pyramid>) -> Vec<f64> {
        let mut out = std::mem::take(&mut self.scratch);
        out.clear();
        assemble_features_into(args, &decl.args, &self.state.canvas, target, position, set, &mut out);
        out
    }

    fn choose(&mut self, decl: &SiteDecl, spec: DistributionSpec, args: &[f64], position: Point) -> Result<f64> {
        spec.validate()?;
        debug_assert_eq!(decl.kind, spec.kind());
        let site = decl.id.0 as usize;
        if self.state.instances.len() <= site {
            self.state.instances.resize(site + 1, 0);
        }
        let address = ChoiceAddress {
            site: decl.id,
            instance: self.state.instances[site],
        };
        self.state.instances[site] += 1;
        let index = self.state.trace.len();

        let (value, guide_logp) = match self.mode {
            Mode::Replay(trace) => {
                let rec = trace.choices.get(index).ok_or(Error::TraceExhausted {
                    index,
                    len: trace.len(),
                })?;
                if rec.address != address || rec.prior.kind() != spec.kind() {
                    return Err(Error::StructuralMismatch {
                        index,
                        expected: rec.address,
                        found: address,
                    });
                }
                (rec.value, rec.guide_logp)
            }
            Mode::Forward => {
                let entropy = self.entropy.as_deref_mut().expect("forward execution needs entropy");
                (sample_choice(&spec, None, entropy)?.value, None)
            }
            Mode::Guided { store, target } => {
                let net = store.get(decl.id).ok_or(Error::MissingNetwork(decl.id))?;
                let x = self.features(decl, args, position, store.config.features, target);
                let raw = net.forward(&x);
                self.scratch = x;
                let proposal = bound_outputs(&raw?, net.head, &spec)?;
                let entropy = self.entropy.as_deref_mut().expect("guided execution needs entropy");
                let s = sample_choice(&spec, Some(&proposal), entropy)?;
                let g = s.proposal_logp.expect("proposal density");
                self.state.log_importance += s.prior_logp - g;
                (s.value, Some(g))
            }
        };

        if let Some(rec) = self.recorder.take() {
            let features = self.features(decl, args, position, rec.features, rec.target);
            rec.records.push(FeatureRecord {
                site: decl.id,
                features,
                prior: spec,
                value,
            });
            self.recorder = Some(rec);
        }

        self.state.trace.push(ChoiceRecord {
            address,
            prior: spec,
            value,
            prior_logp: spec.log_prob(value),
            guide_logp,
        });
        Ok(value)
    }
}

/// Runs a program to completion from `turtle` on `canvas`.
///
/// In replay mode the returned trace equals the input and the canvas is a
/// deterministic function of it; leftover choices are a structural mismatch.
pub fn run_program<P: ModelProgram>(
    program: &P,
    mode: Mode<'_>,
    entropy: Option<&mut dyn Entropy>,
    canvas: Canvas,
    turtle: TurtleState,
) -> Result<(Trace, Canvas)> {
    let replay_len = match &mode {
        Mode::Replay(t) => Some(t.len()),
        _ => None,
    };
    let mut state = ExecState::new(canvas);
    let mut prog = program.init(turtle);
    {
        let entropy = entropy.map(|e| e as &mut dyn Entropy);
        let mut exec = Exec::new(&mut state, mode, entropy);
        while program.step(&mut prog, &mut exec)? == Step::Emitted {}
    }
    check_replay_consumed(replay_len, &state.trace)?;
    Ok((state.trace, state.canvas))
}

fn check_replay_consumed(replay_len: Option<usize>, produced: &Trace) -> Result<()> {
    match replay_len {
        Some(n) if n != produced.len() => Err(Error::Parse {
            context: "replay".into(),
            reason: format!("trace has {n} choices but execution made {}", produced.len()),
        }),
        _ => Ok(()),
    }
}

/// Replays `trace` and records the guide features at every choice.
pub fn replay_features<P: ModelProgram>(
    program: &P,
    trace: &Trace,
    canvas: Canvas,
    turtle: TurtleState,
    features: FeatureSet,
    target: Option<&Pyramid>,
) -> Result<Vec<FeatureRecord>> {
    let mut records = Vec::with_capacity(trace.len());
    let mut state = ExecState::new(canvas);
    let mut prog = program.init(turtle);
    {
        let mut exec = Exec::new(&mut state, Mode::Replay(trace), None).with_recorder(Recorder {
            features,
            target,
            records: &mut records,
        });
        while program.step(&mut prog, &mut exec)? == Step::Emitted {}
    }
    check_replay_consumed(Some(trace.len()), &state.trace)?;
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamRng;

    /// Draws a fixed dot and makes no choices.
    struct Dot;

    impl ModelProgram for Dot {
        type State = bool;
        fn name(&self) -> &str {
            "dot"
        }
        fn sites(&self) -> &[SiteDecl] {
            &[]
        }
        fn init(&self, _start: TurtleState) -> bool {
            false
        }
        fn step(&self, drawn: &mut bool, exec: &mut Exec<'_>) -> Result<Step> {
            if *drawn {
                return Ok(Step::Done);
            }
            exec.canvas().draw_disc(Point::new(3.0, 3.0), 1.0, 1.0);
            *drawn = true;
            Ok(Step::Emitted)
        }
    }

    #[test]
    fn deterministic_program_has_empty_trace() {
        let start = TurtleState::new(Point::new(0.0, 0.0), 0.0, 1.0);
        let mut rng = StreamRng::new(1, &[]);
        let (trace, canvas) = run_program(&Dot, Mode::Forward, Some(&mut rng), Canvas::new(8, 8, 1), start).unwrap();
        assert!(trace.is_empty());
        let mut expected = Canvas::new(8, 8, 1);
        expected.draw_disc(Point::new(3.0, 3.0), 1.0, 1.0);
        assert_eq!(canvas.data(), expected.data());
    }
}
