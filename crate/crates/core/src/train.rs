//! Amortized training of the guide.
//!
//! Examples are traces drawn by unguided SMC for randomly chosen tasks.
//! The objective is the mean guide log density of the recorded choices,
//! with features recomputed by replaying each trace; it is maximized by
//! Adam with one example per step.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::constraints::Likelihood;
use crate::error::{Error, Result};
use crate::exec::{replay_features, FeatureRecord, ModelProgram};
use crate::geom::TurtleState;
use crate::guide::ParameterStore;
use crate::raster::Canvas;
use crate::rng::StreamRng;
use crate::smc::{smc_run, ResampleStrategy, Selection, SmcConfig};
use crate::trace::{SiteId, Trace};

const STREAM_DATASET: u64 = 0x4453;
const STREAM_TRAIN: u64 = 0x5452;

/// A constraint paired with the turtle state programs start from.
#[derive(Clone, Debug)]
pub struct Task<L> {
    pub id: String,
    pub constraint: L,
    pub start: TurtleState,
}

impl<L: Likelihood> Task<L> {
    /// A blank canvas of the constraint's size.
    pub fn blank_canvas(&self) -> Canvas {
        let (w, h) = self.constraint.dims();
        let mut c = Canvas::new(w, h, 1);
        c.set_counting_rect(self.constraint.counting_rect());
        c
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingExample {
    pub id: usize,
    /// Index into the task list the example was generated for.
    pub task: usize,
    pub trace: Trace,
    pub seed: u64,
    pub particles: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub num_examples: usize,
    pub gen_particles: usize,
    pub iterations: usize,
    pub seed: u64,
    pub eval_every: usize,
    /// Fraction of final iterations whose parameters are averaged into the
    /// returned guide; 0 returns the last iterate.
    pub average_tail: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            num_examples: 10_000,
            gen_particles: 600,
            iterations: 20_000,
            seed: 0,
            eval_every: 500,
            average_tail: 0.5,
        }
    }
}

/// An example that could not be generated.
#[derive(Clone, Debug, PartialEq)]
pub struct Skipped {
    pub id: usize,
    pub task: usize,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Generated {
    pub examples: Vec<TrainingExample>,
    pub skipped: Vec<Skipped>,
}

/// Draws `cfg.num_examples` tasks uniformly and keeps one posterior sample
/// of unguided SMC per task. Example `s` depends only on `(cfg.seed, s)`.
pub fn generate_dataset<P: ModelProgram, L: Likelihood>(
    program: &P,
    tasks: &[Task<L>],
    cfg: &TrainConfig,
) -> Result<Generated> {
    if tasks.is_empty() {
        return Err(Error::Config("no tasks to generate examples for".into()));
    }
    let results: Vec<(usize, usize, u64, Result<Trace>)> = (0..cfg.num_examples)
        .into_par_iter()
        .map(|s| {
            let mut rng = StreamRng::new(cfg.seed, &[STREAM_DATASET, s as u64]);
            let task = rng.below(tasks.len());
            let seed = rng.next_u64();
            let smc = SmcConfig {
                num_particles: cfg.gen_particles,
                resample: ResampleStrategy::EssThreshold(0.5),
                seed,
                selection: Selection::SampleByWeight,
                parallel: false,
            };
            let t = &tasks[task];
            let out = smc_run(program, &t.constraint, None, &smc, t.start).map(|o| o.trace);
            (s, task, seed, out)
        })
        .collect();
    let mut g = Generated::default();
    for (id, task, seed, r) in results {
        match r {
            Ok(trace) => g.examples.push(TrainingExample {
                id,
                task,
                trace,
                seed,
                particles: cfg.gen_particles,
            }),
            Err(e @ Error::DegeneratePopulation { .. }) => {
                log::warn!("example {id} skipped: {e}");
                g.skipped.push(Skipped {
                    id,
                    task,
                    reason: e.to_string(),
                });
            }
            Err(e) => return Err(e),
        }
    }
    Ok(g)
}

/// Guide inputs and outcomes at every choice of one example.
pub type ExampleFeatures = Vec<FeatureRecord>;

fn replay_example<P: ModelProgram, L: Likelihood>(
    program: &P,
    tasks: &[Task<L>],
    ex: &TrainingExample,
    store: &ParameterStore,
) -> Result<ExampleFeatures> {
    let corrupt = |e: Error| Error::CorruptExample {
        id: ex.id,
        source: Box::new(e),
    };
    let task = tasks.get(ex.task).ok_or_else(|| corrupt(Error::Config(format!("no task #{}", ex.task))))?;
    replay_features(
        program,
        &ex.trace,
        task.blank_canvas(),
        task.start,
        store.config.features,
        task.constraint.target_pyramid(),
    )
    .map_err(corrupt)
}

/// Replays every example once and keeps its features.
pub fn build_feature_cache<P: ModelProgram, L: Likelihood>(
    program: &P,
    tasks: &[Task<L>],
    examples: &[TrainingExample],
    store: &ParameterStore,
) -> Result<Vec<ExampleFeatures>> {
    examples
        .par_iter()
        .map(|ex| replay_example(program, tasks, ex, store))
        .collect()
}

/// `sum_i log p_guide(x_i)` over one example's choices.
pub fn example_log_density(store: &ParameterStore, records: &[FeatureRecord]) -> Result<f64> {
    let mut total = 0.0;
    for r in records {
        let net = store.get(r.site).ok_or(Error::MissingNetwork(r.site))?;
        let raw = net.forward(&r.features)?;
        let prop = crate::guide::bound_outputs(&raw, net.head, &r.prior)?;
        total += prop.log_prob(r.value);
    }
    Ok(total)
}

/// Per-site gradient buffers.
pub type Gradient = BTreeMap<SiteId, Vec<f64>>;

/// Log density of one example and its gradient, summed over choices.
pub fn example_gradient(store: &ParameterStore, records: &[FeatureRecord]) -> Result<(f64, Gradient)> {
    let mut grad: Gradient = store
        .networks
        .iter()
        .map(|(&s, n)| (s, vec![0.0; n.num_params()]))
        .collect();
    let mut total = 0.0;
    for r in records {
        let net = store.get(r.site).ok_or(Error::MissingNetwork(r.site))?;
        let g = grad.get_mut(&r.site).expect("buffer per network");
        total += net.accumulate_logpdf_grad(&r.features, &r.prior, r.value, g)?;
    }
    Ok((total, grad))
}

/// Mean example log density over cached features.
pub fn objective_cached(store: &ParameterStore, cache: &[ExampleFeatures], subset: &[usize]) -> Result<f64> {
    if subset.is_empty() {
        return Ok(0.0);
    }
    let vals: Vec<f64> = subset
        .par_iter()
        .map(|&i| example_log_density(store, &cache[i]))
        .collect::<Result<_>>()?;
    Ok(vals.iter().sum::<f64>() / subset.len() as f64)
}

/// Mean over examples of the guide log density of the recorded trace,
/// replaying each trace to rebuild the features.
pub fn objective_estimate<P: ModelProgram, L: Likelihood>(
    program: &P,
    tasks: &[Task<L>],
    examples: &[TrainingExample],
    store: &ParameterStore,
) -> Result<f64> {
    if examples.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for ex in examples {
        let recs = replay_example(program, tasks, ex, store)?;
        total += example_log_density(store, &recs)?;
    }
    Ok(total / examples.len() as f64)
}

/// Adam ascent state for one parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub step_size: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            step_size: 0.01,
            beta1: 0.75,
            beta2: 0.75,
            eps: 1e-8,
        }
    }

    /// One bias-corrected ascent step. A non-finite gradient leaves
    /// everything untouched and returns false.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<bool> {
        if params.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(Error::Dimension(format!(
                "Adam state for {} parameters given {} params and {} gradients",
                self.m.len(),
                params.len(),
                grad.len()
            )));
        }
        if grad.iter().any(|g| !g.is_finite()) {
            log::warn!("non-finite gradient; Adam step skipped");
            return Ok(false);
        }
        self.advance(params, grad);
        Ok(true)
    }

    fn advance(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] += self.step_size * mh / (vh.sqrt() + self.eps);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurvePoint {
    pub iteration: usize,
    pub train_obj: f64,
    pub heldout_obj: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingLog {
    pub curve: Vec<CurvePoint>,
    /// Objective of the sampled example at each iteration, before its step.
    pub per_iteration: Vec<f64>,
    pub skipped_steps: usize,
}

impl TrainingLog {
    /// `iteration,train_obj,heldout_obj` rows.
    pub fn curve_csv(&self) -> String {
        let mut out = String::from("iteration,train_obj,heldout_obj\n");
        for p in &self.curve {
            out.push_str(&format!("{},{:?},{:?}\n", p.iteration, p.train_obj, p.heldout_obj));
        }
        out
    }
}

/// Indices of the training and held-out splits. The last `floor(n / 10)`
/// examples are held out; with fewer than ten, both splits are everything.
pub fn split_indices(n: usize) -> (Vec<usize>, Vec<usize>) {
    let held = n / 10;
    if held == 0 {
        let all: Vec<usize> = (0..n).collect();
        return (all.clone(), all);
    }
    ((0..n - held).collect(), (n - held..n).collect())
}

/// Runs `cfg.iterations` single-example Adam ascent steps on cached features.
pub fn train_guide(store: &mut ParameterStore, cache: &[ExampleFeatures], cfg: &TrainConfig) -> Result<TrainingLog> {
    if cache.is_empty() {
        return Err(Error::Config("no training examples".into()));
    }
    if cfg.eval_every == 0 {
        return Err(Error::Config("evaluation interval must be positive".into()));
    }
    for recs in cache {
        for r in recs {
            store.get(r.site).ok_or(Error::MissingNetwork(r.site))?;
        }
    }
    let (train, held) = split_indices(cache.len());
    let mut adam: BTreeMap<SiteId, AdamState> = store
        .networks
        .iter()
        .map(|(&s, n)| (s, AdamState::new(n.num_params())))
        .collect();
    let mut log = TrainingLog::default();
    if !(0.0..=1.0).contains(&cfg.average_tail) {
        return Err(Error::Config(format!("average_tail {} outside [0, 1]", cfg.average_tail)));
    }
    let tail = (cfg.average_tail * cfg.iterations as f64).round() as usize;
    let tail_start = cfg.iterations - tail;
    let mut sums: BTreeMap<SiteId, Vec<f64>> = BTreeMap::new();
    let evaluate = |it: usize, store: &ParameterStore, log: &mut TrainingLog| -> Result<()> {
        log.curve.push(CurvePoint {
            iteration: it,
            train_obj: objective_cached(store, cache, &train)?,
            heldout_obj: objective_cached(store, cache, &held)?,
        });
        Ok(())
    };
    evaluate(0, store, &mut log)?;
    let mut rng = StreamRng::new(cfg.seed, &[STREAM_TRAIN]);
    for it in 1..=cfg.iterations {
        let i = train[rng.below(train.len())];
        let (obj, grad) = example_gradient(store, &cache[i])?;
        log.per_iteration.push(obj);
        if grad.values().flatten().any(|g| !g.is_finite()) || !obj.is_finite() {
            log::warn!("iteration {it}: non-finite gradient on example {i}; step skipped");
            log.skipped_steps += 1;
        } else {
            for (site, g) in &grad {
                let net = store.networks.get_mut(site).expect("network per gradient");
                adam.get_mut(site).expect("Adam state per network").step(&mut net.params, g)?;
            }
        }
        if it > tail_start {
            for (site, net) in &store.networks {
                let acc = sums.entry(*site).or_insert_with(|| vec![0.0; net.params.len()]);
                for (a, p) in acc.iter_mut().zip(&net.params) {
                    *a += p;
                }
            }
            if it == cfg.iterations {
                for (site, acc) in &sums {
                    let net = store.networks.get_mut(site).expect("sum per network");
                    for (p, a) in net.params.iter_mut().zip(acc) {
                        *p = a / tail as f64;
                    }
                }
            }
        }
        if it % cfg.eval_every == 0 || it == cfg.iterations {
            evaluate(it, store, &mut log)?;
        }
    }
    Ok(log)
}
