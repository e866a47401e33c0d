//! Random-choice records, traces and the line-oriented trace file format.

use std::fmt;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::guide::mixture::MixtureParams;
use crate::rng::Entropy;

/// ln(sqrt(2 pi))
pub const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Log density of N(mean, stddev) at `x`.
pub fn gaussian_logpdf(x: f64, mean: f64, stddev: f64) -> f64 {
    let z = (x - mean) / stddev;
    -0.5 * z * z - stddev.ln() - LN_SQRT_2PI
}

/// Static identifier of a lexical random-choice site.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SiteId(pub u32);

impl fmt::Display for SiteId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ChoiceAddress {
    pub site: SiteId,
    /// How many times this site was hit earlier in the same execution.
    pub instance: u32,
}

impl fmt::Display for ChoiceAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "site {}#{}", self.site, self.instance)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChoiceKind {
    Gaussian,
    Flip,
}

impl ChoiceKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ChoiceKind::Gaussian => "gaussian",
            ChoiceKind::Flip => "flip",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "gaussian" => Some(ChoiceKind::Gaussian),
            "flip" => Some(ChoiceKind::Flip),
            _ => None,
        }
    }
}

/// A prior distribution as written in the program text.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DistributionSpec {
    Gaussian { mean: f64, stddev: f64 },
    Flip { p: f64 },
}

impl DistributionSpec {
    pub fn kind(&self) -> ChoiceKind {
        match self {
            DistributionSpec::Gaussian { .. } => ChoiceKind::Gaussian,
            DistributionSpec::Flip { .. } => ChoiceKind::Flip,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            DistributionSpec::Gaussian { mean, stddev } => {
                if !(stddev > 0.0 && stddev.is_finite()) || !mean.is_finite() {
                    return Err(Error::ParameterDomain(format!(
                        "gaussian({mean}, {stddev}) needs finite mean and stddev > 0"
                    )));
                }
            }
            DistributionSpec::Flip { p } => {
                if !(0.0..=1.0).contains(&p) {
                    return Err(Error::ParameterDomain(format!(
                        "flip({p}) needs probability in [0, 1]"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn log_prob(&self, value: f64) -> f64 {
        match *self {
            DistributionSpec::Gaussian { mean, stddev } => gaussian_logpdf(value, mean, stddev),
            DistributionSpec::Flip { p } => {
                if value != 0.0 {
                    p.ln()
                } else {
                    (1.0 - p).ln()
                }
            }
        }
    }

    pub fn params(&self) -> Vec<f64> {
        match *self {
            DistributionSpec::Gaussian { mean, stddev } => vec![mean, stddev],
            DistributionSpec::Flip { p } => vec![p],
        }
    }

    fn from_params(kind: ChoiceKind, params: &[f64]) -> Option<Self> {
        match (kind, params) {
            (ChoiceKind::Gaussian, &[mean, stddev]) => {
                Some(DistributionSpec::Gaussian { mean, stddev })
            }
            (ChoiceKind::Flip, &[p]) => Some(DistributionSpec::Flip { p }),
            _ => None,
        }
    }

    fn draw(&self, entropy: &mut dyn Entropy) -> f64 {
        match *self {
            DistributionSpec::Gaussian { mean, stddev } => mean + stddev * entropy.std_normal(),
            DistributionSpec::Flip { p } => {
                if entropy.uniform() < p {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Replacement distribution supplied by a guide.
#[derive(Clone, Debug, PartialEq)]
pub enum Proposal {
    /// `p` and `q = 1 - p` are carried separately so both tails keep precision.
    Flip { p: f64, q: f64 },
    Mixture(MixtureParams),
}

impl Proposal {
    pub fn kind(&self) -> ChoiceKind {
        match self {
            Proposal::Flip { .. } => ChoiceKind::Flip,
            Proposal::Mixture(_) => ChoiceKind::Gaussian,
        }
    }

    pub fn log_prob(&self, value: f64) -> f64 {
        match self {
            Proposal::Flip { p, q } => {
                if value != 0.0 {
                    p.ln()
                } else {
                    q.ln()
                }
            }
            Proposal::Mixture(m) => m.logpdf(value),
        }
    }

    /// Draws in the same order as the prior (gaussian draw first, flip uniform
    /// first) so a proposal equal to the prior consumes identical entropy.
    pub fn draw(&self, entropy: &mut dyn Entropy) -> f64 {
        match self {
            Proposal::Flip { p, .. } => {
                if entropy.uniform() < *p {
                    1.0
                } else {
                    0.0
                }
            }
            Proposal::Mixture(m) => m.sample(entropy),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sampled {
    pub value: f64,
    pub prior_logp: f64,
    pub proposal_logp: Option<f64>,
}

/// Draws one choice from `proposal` if given, otherwise from `spec`, and
/// evaluates both log densities at the drawn value.
pub fn sample_choice(
    spec: &DistributionSpec,
    proposal: Option<&Proposal>,
    entropy: &mut dyn Entropy,
) -> Result<Sampled> {
    spec.validate()?;
    match proposal {
        None => {
            let value = spec.draw(entropy);
            Ok(Sampled {
                value,
                prior_logp: spec.log_prob(value),
                proposal_logp: None,
            })
        }
        Some(prop) => {
            if prop.kind() != spec.kind() {
                return Err(Error::ParameterDomain(format!(
                    "{} proposal for a {} choice",
                    prop.kind().as_str(),
                    spec.kind().as_str()
                )));
            }
            let value = prop.draw(entropy);
            Ok(Sampled {
                value,
                prior_logp: spec.log_prob(value),
                proposal_logp: Some(prop.log_prob(value)),
            })
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChoiceRecord {
    pub address: ChoiceAddress,
    pub prior: DistributionSpec,
    /// Flips store 0 or 1.
    pub value: f64,
    pub prior_logp: f64,
    pub guide_logp: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trace {
    pub choices: Vec<ChoiceRecord>,
    pub total_prior_logp: f64,
}

impl Trace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, record: ChoiceRecord) {
        self.total_prior_logp += record.prior_logp;
        self.choices.push(record);
    }

    pub fn len(&self) -> usize {
        self.choices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.choices.is_empty()
    }

    /// Content hash over the serialized form.
    pub fn hash_hex(&self) -> String {
        use sha2::{Digest, Sha256};
        let text = write_trace(&TraceHeader::default(), self);
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

/// log P_M(x): the sum of per-choice prior log densities.
pub fn score_trace(trace: &Trace) -> f64 {
    trace.choices.iter().map(|c| c.prior_logp).sum()
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TraceHeader {
    pub program: String,
    pub seed: u64,
}

const TRACE_MAGIC: &str = "ngpm-trace 1";

/// Serializes a trace. Reals use Rust's shortest round-trip decimal form.
///
/// ```text
/// ngpm-trace 1
/// program chain
/// seed 7
/// choices 2
/// 0 0 gaussian 0.12 -0.9 0 0.39269908169872414
/// 1 0 flip 1 -0.6931471805599453 0.5
/// ```
///
/// Each choice line is `site_id instance_index kind value prior_logp`
/// followed by the prior parameters and, when present, `g=<guide_logp>`.
pub fn write_trace(header: &TraceHeader, trace: &Trace) -> String {
    let mut out = String::with_capacity(64 + 48 * trace.len());
    let _ = writeln!(out, "{TRACE_MAGIC}");
    let _ = writeln!(out, "program {}", header.program);
    let _ = writeln!(out, "seed {}", header.seed);
    let _ = writeln!(out, "choices {}", trace.len());
    for c in &trace.choices {
        let _ = write!(
            out,
            "{} {} {} {:?} {:?}",
            c.address.site.0,
            c.address.instance,
            c.prior.kind().as_str(),
            c.value,
            c.prior_logp
        );
        for p in c.prior.params() {
            let _ = write!(out, " {p:?}");
        }
        if let Some(g) = c.guide_logp {
            let _ = write!(out, " g={g:?}");
        }
        out.push('\n');
    }
    out
}

fn parse_f64(tok: &str, ctx: &str) -> Result<f64> {
    tok.parse::<f64>()
        .map_err(|e| Error::parse(ctx, format!("bad real {tok:?}: {e}")))
}

pub fn read_trace(text: &str) -> Result<(TraceHeader, Trace)> {
    let mut lines = text.lines();
    let ctx = "trace";
    if lines.next() != Some(TRACE_MAGIC) {
        return Err(Error::parse(ctx, "missing trace header"));
    }
    let mut header = TraceHeader::default();
    let mut expected = None;
    let mut trace = Trace::new();
    for (lineno, line) in lines.enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks[0] {
            "program" => header.program = toks.get(1).unwrap_or(&"").to_string(),
            "seed" => {
                header.seed = toks
                    .get(1)
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| Error::parse(ctx, "bad seed line"))?;
            }
            "choices" => {
                expected = Some(
                    toks.get(1)
                        .and_then(|s| s.parse::<usize>().ok())
                        .ok_or_else(|| Error::parse(ctx, "bad choices line"))?,
                );
            }
            _ => {
                let lctx = format!("trace line {}", lineno + 2);
                if toks.len() < 6 {
                    return Err(Error::parse(lctx, "too few fields"));
                }
                let site = toks[0]
                    .parse::<u32>()
                    .map_err(|_| Error::parse(&lctx, "bad site id"))?;
                let instance = toks[1]
                    .parse::<u32>()
                    .map_err(|_| Error::parse(&lctx, "bad instance index"))?;
                let kind = ChoiceKind::parse(toks[2])
                    .ok_or_else(|| Error::parse(&lctx, "unknown choice kind"))?;
                let value = parse_f64(toks[3], &lctx)?;
                let prior_logp = parse_f64(toks[4], &lctx)?;
                let mut params = Vec::new();
                let mut guide_logp = None;
                for tok in &toks[5..] {
                    if let Some(g) = tok.strip_prefix("g=") {
                        guide_logp = Some(parse_f64(g, &lctx)?);
                    } else {
                        params.push(parse_f64(tok, &lctx)?);
                    }
                }
                let prior = DistributionSpec::from_params(kind, &params)
                    .ok_or_else(|| Error::parse(&lctx, "wrong parameter count"))?;
                trace.push(ChoiceRecord {
                    address: ChoiceAddress {
                        site: SiteId(site),
                        instance,
                    },
                    prior,
                    value,
                    prior_logp,
                    guide_logp,
                });
            }
        }
    }
    if let Some(n) = expected {
        if n != trace.len() {
            return Err(Error::parse(
                ctx,
                format!("header announces {n} choices, found {}", trace.len()),
            ));
        }
    }
    Ok((header, trace))
}
