//! End-to-end acceptance suite. Runs every criterion, prints one line each,
//! and exits nonzero if any fails. Pass criterion numbers as arguments to
//! run a subset, e.g. `cargo test --test acceptance -- 3 4`.

use std::f64::consts::PI;
use std::time::Instant;

use ngpm::constraints::{
    circuit_log_likelihood, edge_density, fill_density, relative_error, shape_log_likelihood, sim, CircuitConstraint,
    Likelihood, ShapeConstraint, SIGMA_SHAPE, W_FILLED,
};
use ngpm::corpus::{synth_corpus, AnnotatedTarget, SynthKind};
use ngpm::exec::{Exec, ModelProgram, SiteDecl, Step};
use ngpm::geom::{Point, TurtleState};
use ngpm::guide::{guide_logpdf_grad, Ablation, GuideConfig, GuideNetwork, Head, MixtureParams, ParameterStore};
use ngpm::models::{ChainConfig, ChainProgram, VineConfig, VineProgram};
use ngpm::raster::{sobel_edge_mask, Canvas, PixelChange, DEFAULT_EDGE_THRESHOLD};
use ngpm::rng::{Entropy, StreamRng};
use ngpm::smc::{smc_run, Selection, SmcConfig, SmcOutput};
use ngpm::trace::{gaussian_logpdf, ChoiceKind, DistributionSpec, SiteId};
use ngpm::train::{build_feature_cache, generate_dataset, train_guide, Task, TrainConfig, TrainingExample};

type Verdict = (bool, String);

fn main() {
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let on = |k: usize| wanted.is_empty() || wanted.contains(&k);
    let _ = env_logger::builder().is_test(true).try_init();

    let criteria: [(usize, &str, fn(&mut Shared) -> Verdict); 10] = [
        (1, "gradient correctness", c1_gradients),
        (2, "mixture normalization", c2_mixture_normalization),
        (3, "SMC matches enumeration", c3_smc_oracle),
        (4, "prior-equivalent guide invariance", c4_guide_invariance),
        (5, "desk-scale speedup", c5_speedup),
        (6, "mixture ablation", c6_mixture_ablation),
        (7, "training-set size trend", c7_dataset_size),
        (8, "likelihood unit fidelity", c8_likelihood_fidelity),
        (9, "selftest determinism", c9_determinism),
        (10, "circuit guidance", c10_circuit),
    ];
    let mut shared = Shared::default();
    let mut failed = 0;
    for (k, name, f) in criteria {
        if !on(k) {
            continue;
        }
        let t0 = Instant::now();
        let (ok, detail) = f(&mut shared);
        let tag = if ok { "PASS" } else { "FAIL" };
        println!("[{tag}] criterion {k:>2} {name}: {detail} ({:.1}s)", t0.elapsed().as_secs_f64());
        failed += usize::from(!ok);
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}

fn rel_err(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

// ---------------------------------------------------------------- 1

/// Denominator floor: coordinates whose true value is below ~1e-6 are
/// compared on an absolute scale, since the central difference itself
/// carries O(1e-11) rounding there.
const GRAD_FLOOR: f64 = 1e-6;

fn c1_gradients(_: &mut Shared) -> Verdict {
    let mut rng = StreamRng::new(0xc1, &[]);
    let mut worst: f64 = 0.0;
    let mut coords = 0usize;
    let nets = 24;
    for trial in 0..nets {
        let inputs = 1 + rng.below(40);
        let head = if trial % 2 == 0 { Head::Flip } else { Head::Mixture { k: 1 + rng.below(6) } };
        let prior = match head {
            Head::Flip => DistributionSpec::Flip { p: rng.range(0.05, 0.95) },
            Head::Mixture { .. } => DistributionSpec::Gaussian {
                mean: rng.range(-3.0, 3.0),
                stddev: rng.range(0.1, 2.0),
            },
        };
        let mut net = GuideNetwork::init(SiteId(trial as u32), inputs, head, &mut rng);
        for p in net.params.iter_mut() {
            *p += rng.range(-0.3, 0.3);
        }
        let x: Vec<f64> = (0..inputs).map(|_| rng.range(-1.0, 1.0)).collect();
        let value = match (head, prior) {
            (Head::Flip, _) => (rng.uniform() < 0.5) as u8 as f64,
            (_, DistributionSpec::Gaussian { mean, stddev }) => mean + stddev * rng.range(-2.5, 2.5),
            _ => unreachable!(),
        };
        let (_, g) = guide_logpdf_grad(&net, &x, &prior, value).unwrap();
        let h = 1e-5;
        for i in 0..net.num_params() {
            let mut up = net.clone();
            up.params[i] += h;
            let mut dn = net.clone();
            dn.params[i] -= h;
            let fu = guide_logpdf_grad(&up, &x, &prior, value).unwrap().0;
            let fd = guide_logpdf_grad(&dn, &x, &prior, value).unwrap().0;
            worst = worst.max(rel_err(g[i], (fu - fd) / (2.0 * h), GRAD_FLOOR));
            coords += 1;
        }
    }
    (worst < 1e-4, format!("{nets} networks, {coords} coordinates, max relative error {worst:.2e} (< 1e-4)"))
}

// ---------------------------------------------------------------- 2

fn c2_mixture_normalization(_: &mut Shared) -> Verdict {
    let mut rng = StreamRng::new(0xc2, &[]);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let w: Vec<f64> = (0..4).map(|_| rng.range(0.05, 1.0)).collect();
        let mu: Vec<f64> = (0..4).map(|_| rng.range(-5.0, 5.0)).collect();
        let sd: Vec<f64> = (0..4).map(|_| rng.range(0.05, 3.0)).collect();
        let m = MixtureParams::new(&w, &mu, &sd).unwrap();
        // integrate over the union of the components' ±8σ ranges
        let lo = (0..4).map(|j| mu[j] - 8.0 * sd[j]).fold(f64::INFINITY, f64::min);
        let hi = (0..4).map(|j| mu[j] + 8.0 * sd[j]).fold(f64::NEG_INFINITY, f64::max);
        let smallest = sd.iter().copied().fold(f64::INFINITY, f64::min);
        let n = (((hi - lo) / (smallest / 20.0)).ceil() as usize).max(2000) & !1;
        let step = (hi - lo) / n as f64;
        let mut acc = 0.0;
        for i in 0..=n {
            let c = if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
            acc += c * m.logpdf(lo + i as f64 * step).exp();
        }
        worst = worst.max((acc * step / 3.0 - 1.0).abs());
    }
    (worst < 1e-3, format!("50 mixtures, max |integral - 1| = {worst:.2e} (< 1e-3)"))
}

// ---------------------------------------------------------------- 3

/// Two flips; each lights one pixel when true.
struct TwoFlips {
    sites: Vec<SiteDecl>,
    p: [f64; 2],
}

impl TwoFlips {
    fn new() -> Self {
        TwoFlips {
            sites: vec![
                SiteDecl::new(0, "a", ChoiceKind::Flip, &[]),
                SiteDecl::new(1, "b", ChoiceKind::Flip, &[]),
            ],
            p: [0.3, 0.6],
        }
    }
}

impl ModelProgram for TwoFlips {
    type State = usize;

    fn name(&self) -> &str {
        "two-flips"
    }

    fn sites(&self) -> &[SiteDecl] {
        &self.sites
    }

    fn init(&self, _: TurtleState) -> usize {
        0
    }

    fn step(&self, k: &mut usize, exec: &mut Exec<'_>) -> ngpm::Result<Step> {
        if *k == 2 {
            return Ok(Step::Done);
        }
        let decl = self.sites[*k].clone();
        if exec.flip(&decl, self.p[*k], &[], Point::new(0.0, 0.0))? {
            exec.canvas().draw_disc(Point::new(*k as f64, 0.0), 0.4, 1.0);
        }
        *k += 1;
        Ok(Step::Emitted)
    }
}

/// Log-likelihood read from a table keyed by the two pixels.
struct Table([[f64; 2]; 2]);

impl Table {
    fn lookup(&self, c: &Canvas) -> f64 {
        let a = (c.get(0, 0, 0) > 0.0) as usize;
        let b = (c.get(1, 0, 0) > 0.0) as usize;
        self.0[a][b].ln()
    }
}

impl Likelihood for Table {
    type Stats = ();

    fn dims(&self) -> (usize, usize) {
        (2, 1)
    }

    fn stats(&self, _: &Canvas) {}

    fn update(&self, _: &mut (), _: &Canvas, _: &[PixelChange]) {}

    fn log_likelihood(&self, _: &(), canvas: &Canvas) -> f64 {
        self.lookup(canvas)
    }

    fn score(&self, _: &(), canvas: &Canvas) -> f64 {
        self.lookup(canvas)
    }
}

fn c3_smc_oracle(_: &mut Shared) -> Verdict {
    let program = TwoFlips::new();
    let table = Table([[0.1, 1.0], [0.5, 2.0]]);
    let start = TurtleState::new(Point::new(0.0, 0.0), 0.0, 1.0);

    let mut exact = [[0.0; 2]; 2];
    let mut z = 0.0;
    for a in 0..2 {
        for b in 0..2 {
            let pa = if a == 1 { program.p[0] } else { 1.0 - program.p[0] };
            let pb = if b == 1 { program.p[1] } else { 1.0 - program.p[1] };
            exact[a][b] = pa * pb * table.0[a][b];
            z += exact[a][b];
        }
    }

    let runs = 10_000;
    let mut counts = [[0usize; 2]; 2];
    let mut z_sum = 0.0;
    for seed in 0..runs {
        let mut cfg = SmcConfig::new(32, seed as u64);
        cfg.selection = Selection::SampleByWeight;
        let out = smc_run(&program, &table, None, &cfg, start).unwrap();
        let v: Vec<usize> = out.trace.choices.iter().map(|c| c.value as usize).collect();
        counts[v[0]][v[1]] += 1;
        z_sum += out.log_marginal.exp();
    }
    let mut worst_z: f64 = 0.0;
    let mut detail = Vec::new();
    for a in 0..2 {
        for b in 0..2 {
            let p = exact[a][b] / z;
            let f = counts[a][b] as f64 / runs as f64;
            let se = (p * (1.0 - p) / runs as f64).sqrt();
            let zs = (f - p).abs() / se;
            worst_z = worst_z.max(zs);
            detail.push(format!("{a}{b}: {f:.4} vs {p:.4}"));
        }
    }
    let z_hat = z_sum / runs as f64;
    let z_rel = (z_hat - z).abs() / z;
    (
        worst_z < 3.0 && z_rel < 0.02,
        format!(
            "{}; max deviation {worst_z:.2} SE (< 3); marginal {z_hat:.5} vs {z:.5}, rel {z_rel:.2e} (< 2%)",
            detail.join(", ")
        ),
    )
}

// ---------------------------------------------------------------- 4

fn same_run(a: &SmcOutput, b: &SmcOutput) -> bool {
    let values = |o: &SmcOutput| o.trace.choices.iter().map(|c| c.value.to_bits()).collect::<Vec<_>>();
    a.canvas.data() == b.canvas.data()
        && values(a) == values(b)
        && a.log_weight.to_bits() == b.log_weight.to_bits()
        && a.log_marginal.to_bits() == b.log_marginal.to_bits()
        && a.selected == b.selected
        && a.diagnostics == b.diagnostics
}

fn invariance_on<P: ModelProgram>(program: &P, targets: &[AnnotatedTarget], runs: usize) -> (usize, usize) {
    let tasks = shape_tasks(targets);
    let config = GuideConfig {
        features: Ablation::All.feature_set(),
        mixture_k: 1,
        channels: 1,
        has_target: true,
        init_seed: 0,
    };
    let store = ParameterStore::prior_equivalent(config, program.sites()).unwrap();
    let mut same = 0;
    for r in 0..runs {
        let t = &tasks[r % tasks.len()];
        let cfg = SmcConfig::new(8, 0x4000 + r as u64);
        let u = smc_run(program, &t.constraint, None, &cfg, t.start).unwrap();
        let g = smc_run(program, &t.constraint, Some(&store), &cfg, t.start).unwrap();
        same += usize::from(same_run(&u, &g));
    }
    (same, runs)
}

fn c4_guide_invariance(_: &mut Shared) -> Verdict {
    let targets = synth_corpus(SynthKind::Scribble, 5, 0xc4, 64, 64);
    let chain = ChainProgram::new(ChainConfig::default()).unwrap();
    let vine = VineProgram::new(VineConfig::default()).unwrap();
    let (cs, cn) = invariance_on(&chain, &targets, 40);
    let (vs, vn) = invariance_on(&vine, &targets, 40);
    (
        cs == cn && vs == vn,
        format!("bit-identical runs: chain {cs}/{cn}, vine {vs}/{vn}"),
    )
}

// ---------------------------------------------------------------- 5-7, 10

const DESK: usize = 64;
const TRAIN_TARGETS: usize = 100;
const HELD_OUT_TARGETS: usize = 20;
const EVAL_SEEDS: u64 = 10;

fn shape_tasks(targets: &[AnnotatedTarget]) -> Vec<Task<ShapeConstraint>> {
    targets
        .iter()
        .map(|t| Task {
            id: t.source_id.clone(),
            constraint: ShapeConstraint::new(t.mask.clone()).unwrap(),
            start: t.start_turtle(),
        })
        .collect()
}

/// Datasets shared between criteria; example `s` depends only on the seed
/// and `s`, so smaller datasets are prefixes of larger ones.
#[derive(Default)]
struct Shared {
    chain_examples: Option<Vec<TrainingExample>>,
    chain_guides: Vec<(usize, ParameterStore)>,
}

fn chain_program() -> ChainProgram {
    ChainProgram::new(ChainConfig::default()).unwrap()
}

fn chain_train_tasks() -> Vec<Task<ShapeConstraint>> {
    shape_tasks(&synth_corpus(SynthKind::Scribble, TRAIN_TARGETS, 0x5eed, DESK, DESK))
}

fn chain_test_tasks() -> Vec<Task<ShapeConstraint>> {
    shape_tasks(&synth_corpus(SynthKind::Scribble, HELD_OUT_TARGETS, 0x7e57, DESK, DESK))
}

fn generate<P: ModelProgram, L: Likelihood>(program: &P, tasks: &[Task<L>], n: usize, particles: usize, seed: u64) -> Vec<TrainingExample> {
    let cfg = TrainConfig {
        num_examples: n,
        gen_particles: particles,
        seed,
        ..Default::default()
    };
    let g = generate_dataset(program, tasks, &cfg).unwrap();
    if !g.skipped.is_empty() {
        eprintln!("{} of {n} examples skipped", g.skipped.len());
    }
    g.examples
}

fn train<P: ModelProgram, L: Likelihood>(
    program: &P,
    tasks: &[Task<L>],
    examples: &[TrainingExample],
    mixture_k: usize,
    has_target: bool,
    seed: u64,
) -> ParameterStore {
    let config = GuideConfig {
        features: Ablation::All.feature_set(),
        mixture_k,
        channels: 1,
        has_target,
        init_seed: seed,
    };
    let mut store = ParameterStore::for_sites(config, program.sites()).unwrap();
    let cache = build_feature_cache(program, tasks, examples, &store).unwrap();
    let cfg = TrainConfig {
        iterations: 20_000,
        seed,
        ..Default::default()
    };
    let log = train_guide(&mut store, &cache, &cfg).unwrap();
    let first = &log.curve[0];
    let last = log.curve.last().unwrap();
    eprintln!(
        "  trained on {} examples (K={mixture_k}): held-out {:.3} -> {:.3}, train {:.3} -> {:.3}",
        examples.len(),
        first.heldout_obj,
        last.heldout_obj,
        first.train_obj,
        last.train_obj
    );
    store
}

fn chain_examples(shared: &mut Shared, n: usize) -> Vec<TrainingExample> {
    let have = shared.chain_examples.as_ref().map_or(0, Vec::len);
    if have < n {
        shared.chain_examples = Some(generate(&chain_program(), &chain_train_tasks(), n, 200, 0xda7a));
    }
    shared.chain_examples.as_ref().unwrap().iter().take(n).cloned().collect()
}

fn chain_guide(shared: &mut Shared, n: usize) -> ParameterStore {
    if let Some((_, g)) = shared.chain_guides.iter().find(|(k, _)| *k == n) {
        return g.clone();
    }
    let examples = chain_examples(shared, n);
    let g = train(&chain_program(), &chain_train_tasks(), &examples, 4, true, 0x7a1);
    shared.chain_guides.push((n, g.clone()));
    g
}

/// Scores of seed-matched SMC runs over every task, in parallel.
fn scores<P: ModelProgram, L: Likelihood>(
    program: &P,
    tasks: &[Task<L>],
    guide: Option<&ParameterStore>,
    particles: usize,
    seeds: u64,
) -> Vec<f64> {
    use rayon::prelude::*;
    let jobs: Vec<(usize, u64)> = (0..tasks.len()).flat_map(|t| (0..seeds).map(move |s| (t, s))).collect();
    jobs.par_iter()
        .map(|&(t, s)| {
            let cfg = SmcConfig::new(particles, 0x5000 + 1000 * t as u64 + s);
            smc_run(program, &tasks[t].constraint, guide, &cfg, tasks[t].start).unwrap().score
        })
        .collect()
}

fn median(v: &[f64]) -> f64 {
    ngpm::bench::median(v)
}

fn c5_speedup(shared: &mut Shared) -> Verdict {
    let program = chain_program();
    let test = chain_test_tasks();
    let guide = chain_guide(shared, 500);
    let g10 = median(&scores(&program, &test, Some(&guide), 10, EVAL_SEEDS));
    let u10 = median(&scores(&program, &test, None, 10, EVAL_SEEDS));
    let u60 = median(&scores(&program, &test, None, 60, EVAL_SEEDS));
    (
        g10 >= u10 + 0.10 && g10 >= u60 - 0.05,
        format!(
            "median similarity guided N=10 {g10:.4}, unguided N=10 {u10:.4} (need +0.10, margin {:+.4}), unguided N=60 {u60:.4} (need -0.05, margin {:+.4})",
            g10 - u10 - 0.10,
            g10 - u60 + 0.05
        ),
    )
}

fn c6_mixture_ablation(_: &mut Shared) -> Verdict {
    let program = chain_program();
    let train_tasks = shape_tasks(&synth_corpus(SynthKind::Plus, TRAIN_TARGETS, 0x9105, DESK, DESK));
    let test = shape_tasks(&synth_corpus(SynthKind::Plus, HELD_OUT_TARGETS, 0x7e58, DESK, DESK));
    let examples = generate(&program, &train_tasks, 500, 200, 0xda7b);
    let k4 = train(&program, &train_tasks, &examples, 4, true, 0x7a2);
    let k1 = train(&program, &train_tasks, &examples, 1, true, 0x7a2);
    let m4 = median(&scores(&program, &test, Some(&k4), 10, 20));
    let m1 = median(&scores(&program, &test, Some(&k1), 10, 20));
    (m4 >= m1, format!("median similarity K=4 {m4:.4}, K=1 {m1:.4}, gap {:+.4} (>= 0)", m4 - m1))
}

fn c7_dataset_size(shared: &mut Shared) -> Verdict {
    let program = chain_program();
    let test = chain_test_tasks();
    let g1 = chain_guide(shared, 1000);
    let g2 = chain_guide(shared, 2000);
    let m1 = median(&scores(&program, &test, Some(&g1), 10, EVAL_SEEDS));
    let m2 = median(&scores(&program, &test, Some(&g2), 10, EVAL_SEEDS));
    (
        m1 >= 0.95 * m2,
        format!("median similarity 1000 examples {m1:.4}, 2000 examples {m2:.4}, ratio {:.4} (>= 0.95)", m1 / m2),
    )
}

fn c10_circuit(_: &mut Shared) -> Verdict {
    let program = VineProgram::new(VineConfig::default()).unwrap();
    let constraint = CircuitConstraint::new(DESK, DESK);
    let tasks = vec![ngpm::cli::circuit_task(constraint)];
    let examples = generate(&program, &tasks, 200, 100, 0xda7c);
    let guide = train(&program, &tasks, &examples, 4, false, 0x7a3);
    let g = median(&scores(&program, &tasks, Some(&guide), 15, 50));
    let u = median(&scores(&program, &tasks, None, 15, 50));
    (g >= u, format!("median circuit score guided {g:.4}, unguided {u:.4}, margin {:+.4} (>= 0)", g - u))
}

// ---------------------------------------------------------------- 8

fn random_mask(rng: &mut StreamRng, w: usize, h: usize, density: f64) -> Canvas {
    let mut c = Canvas::new(w, h, 1);
    for y in 0..h {
        for x in 0..w {
            if rng.uniform() < density {
                c.set(x, y, 1.0);
            }
        }
    }
    c
}

/// Sobel edge at (x, y) with clamp-to-edge sampling, written out longhand.
fn edge_oracle(c: &Canvas, x: usize, y: usize) -> bool {
    let v = |dx: i64, dy: i64| {
        let xx = (x as i64 + dx).clamp(0, c.width() as i64 - 1) as usize;
        let yy = (y as i64 + dy).clamp(0, c.height() as i64 - 1) as usize;
        c.get(xx, yy, 0)
    };
    let gx = (v(1, -1) + 2.0 * v(1, 0) + v(1, 1) - v(-1, -1) - 2.0 * v(-1, 0) - v(-1, 1)) / 8.0;
    let gy = (v(-1, 1) + 2.0 * v(0, 1) + v(1, 1) - v(-1, -1) - 2.0 * v(0, -1) - v(1, -1)) / 8.0;
    (gx * gx + gy * gy).sqrt() > DEFAULT_EDGE_THRESHOLD
}

fn sim_oracle(img: &Canvas, target: &Canvas) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for y in 0..target.height() {
        for x in 0..target.width() {
            let t = target.get(x, y, 0);
            let w = if t == 0.0 || edge_oracle(target, x, y) { 1.0 } else { W_FILLED };
            den += w;
            if (img.get(x, y, 0) > 0.0) == (t > 0.0) {
                num += w;
            }
        }
    }
    num / den
}

fn c8_likelihood_fidelity(_: &mut Shared) -> Verdict {
    let mut rng = StreamRng::new(0xc8, &[]);
    let mut worst: f64 = 0.0;
    let mut checks = 0usize;
    let mut note = |a: f64, b: f64| {
        worst = worst.max((a - b).abs());
        checks += 1;
    };
    for trial in 0..40 {
        let w = 4 + rng.below(13);
        let h = 4 + rng.below(13);
        // blocky targets give interior pixels as well as edges
        let mut target = Canvas::new(w, h, 1);
        let (x0, y0) = (rng.below(w / 2), rng.below(h / 2));
        let (x1, y1) = (x0 + 2 + rng.below(w - x0 - 1), y0 + 2 + rng.below(h - y0 - 1));
        for y in y0..y1.min(h) {
            for x in x0..x1.min(w) {
                target.set(x, y, 1.0);
            }
        }
        if trial % 3 == 0 {
            let noise = random_mask(&mut rng, w, h, 0.15);
            for i in 0..w * h {
                if noise.at(i) > 0.0 {
                    target.set(i % w, i / w, 1.0);
                }
            }
        }
        let density = rng.range(0.1, 0.7);
        let img = random_mask(&mut rng, w, h, density);
        let edges = sobel_edge_mask(&target, DEFAULT_EDGE_THRESHOLD).unwrap();
        for y in 0..h {
            for x in 0..w {
                assert_eq!(edges.get(x, y), edge_oracle(&target, x, y));
            }
        }
        // sim and the w(p) weighting
        note(sim(&img, &target, &edges, W_FILLED).unwrap(), sim_oracle(&img, &target));
        // normalization against the empty image
        let c = ShapeConstraint::new(target.clone()).unwrap();
        let s0 = sim_oracle(&Canvas::new(w, h, 1), &target);
        let norm = (sim_oracle(&img, &target) - s0) / (1.0 - s0);
        note(c.normalized_similarity(&img).unwrap(), norm);
        note(c.normalized_similarity(&target).unwrap(), 1.0);
        // shape Gaussian log density
        let lp = -0.5 * ((norm - 1.0) / SIGMA_SHAPE).powi(2) - (SIGMA_SHAPE * (2.0 * PI).sqrt()).ln();
        note(shape_log_likelihood(&img, &c).unwrap(), lp);
        // edge and fill densities
        let (mut e, mut f) = (0usize, 0.0);
        for y in 0..h {
            for x in 0..w {
                e += usize::from(edge_oracle(&img, x, y));
                f += img.get(x, y, 0);
            }
        }
        let (ed, fd) = (e as f64 / (w * h) as f64, f / (w * h) as f64);
        note(edge_density(&img).unwrap(), ed);
        note(fill_density(&img).unwrap(), fd);
        // eta relative error and the circuit log density
        let tau = rng.range(0.2, 0.8);
        let eta = (fd - tau).abs() / tau;
        note(relative_error(fd, tau).unwrap(), eta);
        let mut cc = CircuitConstraint::new(w, h);
        cc.tau = tau;
        let drawn = 50 + rng.below(50) as u64;
        let oob = rng.below(drawn as usize) as u64;
        let score = ed * (1.0 - eta) * (1.0 - cc.oob_weight * oob as f64 / drawn as f64);
        let clp = gaussian_logpdf(score, 1.0, cc.sigma);
        let direct = -0.5 * ((score - 1.0) / cc.sigma).powi(2) - (cc.sigma * (2.0 * PI).sqrt()).ln();
        note(clp, direct);
        note(circuit_log_likelihood(&img, oob, drawn, &cc).unwrap(), direct);
    }
    (worst < 1e-9, format!("{checks} checks on <= 16x16 instances, max abs error {worst:.2e} (< 1e-9)"))
}

// ---------------------------------------------------------------- 9

fn c9_determinism(_: &mut Shared) -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().display().to_string();
    let code = ngpm::cli::run(["ngpm", "--seed", "11", "--out", out.as_str(), "selftest"]);
    (code == 0, format!("selftest exit code {code} (artifacts of two reruns compared byte for byte)"))
}
