//! Sequential Monte Carlo over program executions.
//!
//! Particles advance one emitted primitive at a time. Each choice adds
//! `prior_logp - guide_logp` to the particle's log-weight (zero without a
//! guide) and each emission adds the change in partial log-likelihood.
//! Finished particles keep their weight and still take part in resampling.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constraints::Likelihood;
use crate::error::{Error, Result};
use crate::exec::{Exec, ExecState, Mode, ModelProgram, Step};
use crate::geom::TurtleState;
use crate::guide::ParameterStore;
use crate::raster::Canvas;
use crate::rng::{Entropy, StreamRng};
use crate::trace::Trace;

const STREAM_PARTICLE: u64 = 0x5053;
const STREAM_RESAMPLE: u64 = 0x5253;
const STREAM_SELECT: u64 = 0x5345;

/// Below this many particles, stepping stays on the calling thread.
const PARALLEL_MIN_PARTICLES: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum ResampleStrategy {
    Always,
    /// Resample when ESS falls below this fraction of N.
    EssThreshold(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
pub enum Selection {
    MaxWeight,
    SampleByWeight,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SmcConfig {
    pub num_particles: usize,
    pub resample: ResampleStrategy,
    pub seed: u64,
    pub selection: Selection,
    /// Step particles on the rayon pool. Results do not depend on it.
    pub parallel: bool,
}

impl SmcConfig {
    pub fn new(num_particles: usize, seed: u64) -> Self {
        SmcConfig {
            num_particles,
            resample: ResampleStrategy::EssThreshold(0.5),
            seed,
            selection: Selection::MaxWeight,
            parallel: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_particles == 0 {
            return Err(Error::Config("SMC needs at least one particle".into()));
        }
        if let ResampleStrategy::EssThreshold(f) = self.resample {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::Config(format!("ESS fraction {f} outside (0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub step: usize,
    pub ess: f64,
    pub max_log_weight: f64,
    pub resampled: bool,
}

/// `step,ess,max_log_weight,resampled` rows.
pub fn diagnostics_csv(diags: &[StepDiagnostics]) -> String {
    let mut out = String::from("step,ess,max_log_weight,resampled\n");
    for d in diags {
        out.push_str(&format!("{},{:?},{:?},{}\n", d.step, d.ess, d.max_log_weight, u8::from(d.resampled)));
    }
    out
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}

fn normalized(log_weights: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(log_weights);
    log_weights.iter().map(|&w| (w - lse).exp()).collect()
}

/// `(sum w)^2 / sum w^2` of the normalized weights.
pub fn effective_sample_size(log_weights: &[f64]) -> f64 {
    let w = normalized(log_weights);
    let s2: f64 = w.iter().map(|x| x * x).sum();
    1.0 / s2
}

/// Systematic resampling with a single uniform offset `u` in [0, 1).
/// Returns ancestors in nondecreasing order.
pub fn systematic_resample(log_weights: &[f64], u: f64) -> Vec<usize> {
    let n = log_weights.len();
    let w = normalized(log_weights);
    let mut out = Vec::with_capacity(n);
    let mut cum = w[0];
    let mut i = 0;
    for j in 0..n {
        let pos = (j as f64 + u) / n as f64;
        while pos >= cum && i + 1 < n {
            i += 1;
            cum += w[i];
        }
        out.push(i);
    }
    out
}

/// An in-flight execution.
pub struct Particle<P: ModelProgram, L: Likelihood> {
    pub program: P::State,
    pub exec: ExecState,
    pub stats: L::Stats,
    pub log_weight: f64,
    pub last_partial_loglike: f64,
    pub done: bool,
}

impl<P: ModelProgram, L: Likelihood> Clone for Particle<P, L> {
    fn clone(&self) -> Self {
        Particle {
            program: self.program.clone(),
            exec: self.exec.clone(),
            stats: self.stats.clone(),
            log_weight: self.log_weight,
            last_partial_loglike: self.last_partial_loglike,
            done: self.done,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SmcOutput {
    pub trace: Trace,
    pub canvas: Canvas,
    pub log_weight: f64,
    /// Final partial log-likelihood of the selected particle.
    pub log_likelihood: f64,
    /// Constraint score of the selected particle.
    pub score: f64,
    /// Log of the marginal-likelihood estimate.
    pub log_marginal: f64,
    pub selected: usize,
    pub diagnostics: Vec<StepDiagnostics>,
}

fn advance<P: ModelProgram, L: Likelihood>(
    p: &mut Particle<P, L>,
    program: &P,
    constraint: &L,
    mode: Mode<'_>,
    seed: u64,
    step: usize,
    slot: usize,
) -> Result<()> {
    if p.done {
        return Ok(());
    }
    let mut rng = StreamRng::new(seed, &[STREAM_PARTICLE, step as u64, slot as u64]);
    p.exec.log_importance = 0.0;
    let outcome = {
        let mut exec = Exec::new(&mut p.exec, mode, Some(&mut rng as &mut dyn Entropy));
        program.step(&mut p.program, &mut exec)?
    };
    p.log_weight += p.exec.log_importance;
    match outcome {
        Step::Emitted => {
            let changes = p.exec.canvas.take_changes();
            constraint.update(&mut p.stats, &p.exec.canvas, &changes);
            let ll = constraint.log_likelihood(&p.stats, &p.exec.canvas);
            p.log_weight += ll - p.last_partial_loglike;
            p.last_partial_loglike = ll;
        }
        Step::Done => p.done = true,
    }
    Ok(())
}

/// Runs SMC from `start` and returns the selected particle.
pub fn smc_run<P: ModelProgram, L: Likelihood>(
    program: &P,
    constraint: &L,
    guide: Option<&ParameterStore>,
    cfg: &SmcConfig,
    start: TurtleState,
) -> Result<SmcOutput> {
    cfg.validate()?;
    let n = cfg.num_particles;
    let mode = match guide {
        Some(store) => Mode::Guided {
            store,
            target: constraint.target_pyramid(),
        },
        None => Mode::Forward,
    };
    let (w, h) = constraint.dims();
    let mut canvas = Canvas::new(w, h, 1);
    canvas.set_counting_rect(constraint.counting_rect());
    canvas.track_changes();
    let stats = constraint.stats(&canvas);
    let proto: Particle<P, L> = Particle {
        program: program.init(start),
        exec: ExecState::new(canvas),
        stats,
        log_weight: 0.0,
        last_partial_loglike: 0.0,
        done: false,
    };
    let mut particles = vec![proto; n];
    let mut diagnostics = Vec::new();
    let mut log_marginal = 0.0;
    let ln_n = (n as f64).ln();

    for step in 0.. {
        if cfg.parallel && n >= PARALLEL_MIN_PARTICLES {
            particles
                .par_iter_mut()
                .enumerate()
                .try_for_each(|(slot, p)| advance(p, program, constraint, mode, cfg.seed, step, slot))?;
        } else {
            for (slot, p) in particles.iter_mut().enumerate() {
                advance(p, program, constraint, mode, cfg.seed, step, slot)?;
            }
        }
        let lw: Vec<f64> = particles.iter().map(|p| p.log_weight).collect();
        let max_log_weight = lw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !lw.iter().any(|w| w.is_finite()) || lw.iter().any(|w| w.is_nan()) {
            diagnostics.push(StepDiagnostics {
                step,
                ess: 0.0,
                max_log_weight,
                resampled: false,
            });
            return Err(Error::DegeneratePopulation { step, diagnostics });
        }
        let ess = effective_sample_size(&lw);
        let all_done = particles.iter().all(|p| p.done);
        let resample = !all_done
            && match cfg.resample {
                ResampleStrategy::Always => true,
                ResampleStrategy::EssThreshold(f) => ess < f * n as f64,
            };
        diagnostics.push(StepDiagnostics {
            step,
            ess,
            max_log_weight,
            resampled: resample,
        });
        if all_done {
            break;
        }
        if resample {
            log_marginal += log_sum_exp(&lw) - ln_n;
            let u = StreamRng::new(cfg.seed, &[STREAM_RESAMPLE, step as u64]).uniform();
            let ancestors = systematic_resample(&lw, u);
            let mut counts = vec![0usize; n];
            for a in ancestors {
                counts[a] += 1;
            }
            let old = std::mem::take(&mut particles);
            for (mut p, c) in old.into_iter().zip(counts) {
                if c == 0 {
                    continue;
                }
                p.log_weight = 0.0;
                for _ in 1..c {
                    particles.push(p.clone());
                }
                particles.push(p);
            }
        }
    }

    let lw: Vec<f64> = particles.iter().map(|p| p.log_weight).collect();
    log_marginal += log_sum_exp(&lw) - ln_n;
    let selected = match cfg.selection {
        Selection::MaxWeight => {
            let mut best = 0;
            for (i, &w) in lw.iter().enumerate() {
                if w > lw[best] {
                    best = i;
                }
            }
            best
        }
        Selection::SampleByWeight => {
            let u = StreamRng::new(cfg.seed, &[STREAM_SELECT]).uniform();
            let w = normalized(&lw);
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, wi) in w.iter().enumerate() {
                acc += wi;
                if u < acc {
                    chosen = i;
                    break;
                }
            }
            chosen
        }
    };
    let p = particles.swap_remove(selected);
    Ok(SmcOutput {
        score: constraint.score(&p.stats, &p.exec.canvas),
        trace: p.exec.trace,
        canvas: p.exec.canvas.to_plain(),
        log_weight: p.log_weight,
        log_likelihood: p.last_partial_loglike,
        log_marginal,
        selected,
        diagnostics,
    })
}
