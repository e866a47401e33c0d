//! Mixture-of-Gaussians and Bernoulli heads.

use crate::error::{Error, Result};
use crate::guide::network::{GuideNetwork, Head};
use crate::rng::Entropy;
use crate::trace::{gaussian_logpdf, DistributionSpec, Proposal};

/// Stddev logits are clamped to this range before `exp`.
pub const STDDEV_LOGIT_CLAMP: f64 = 10.0;
/// Flip logits are clamped to this range so neither tail underflows to zero.
pub const FLIP_LOGIT_CLAMP: f64 = 40.0;

#[derive(Clone, Debug, PartialEq)]
pub struct MixtureParams {
    pub weights: Vec<f64>,
    /// `ln weights`, kept separately so K = 1 has an exact zero.
    pub log_weights: Vec<f64>,
    pub means: Vec<f64>,
    pub stddevs: Vec<f64>,
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    if xs.len() == 1 {
        return m;
    }
    m + xs.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}

impl MixtureParams {
    pub fn single(mean: f64, stddev: f64) -> Self {
        MixtureParams {
            weights: vec![1.0],
            log_weights: vec![0.0],
            means: vec![mean],
            stddevs: vec![stddev],
        }
    }

    /// Builds from weights that need not be normalized.
    pub fn new(weights: &[f64], means: &[f64], stddevs: &[f64]) -> Result<Self> {
        let k = weights.len();
        if k == 0 || means.len() != k || stddevs.len() != k {
            return Err(Error::Dimension("mixture component lists differ in length".into()));
        }
        if weights.iter().any(|&w| !(w >= 0.0)) || stddevs.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::ParameterDomain("mixture weights must be >= 0 and stddevs > 0".into()));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::ParameterDomain("mixture weights sum to zero".into()));
        }
        let weights: Vec<f64> = weights.iter().map(|w| w / total).collect();
        Ok(MixtureParams {
            log_weights: weights.iter().map(|w| w.ln()).collect(),
            weights,
            means: means.to_vec(),
            stddevs: stddevs.to_vec(),
        })
    }

    pub fn k(&self) -> usize {
        self.weights.len()
    }

    fn component_logs(&self, v: f64) -> Vec<f64> {
        (0..self.k())
            .map(|k| self.log_weights[k] + gaussian_logpdf(v, self.means[k], self.stddevs[k]))
            .collect()
    }

    pub fn logpdf(&self, v: f64) -> f64 {
        log_sum_exp(&self.component_logs(v))
    }

    /// Draws the gaussian variate first, then the component index (only
    /// when K > 1), so a one-component mixture consumes entropy like the prior.
    pub fn sample(&self, entropy: &mut dyn Entropy) -> f64 {
        let z = entropy.std_normal();
        let k = if self.k() > 1 {
            let u = entropy.uniform();
            let mut acc = 0.0;
            let mut chosen = self.k() - 1;
            for (i, w) in self.weights.iter().enumerate() {
                acc += w;
                if u < acc {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            0
        };
        self.means[k] + self.stddevs[k] * z
    }
}

/// Flip probability `p0 / (p0 + (1 - p0) e^-r)` and its complement.
fn flip_probs(p0: f64, raw: f64) -> (f64, f64) {
    if raw == 0.0 {
        return (p0, 1.0 - p0);
    }
    let r = raw.clamp(-FLIP_LOGIT_CLAMP, FLIP_LOGIT_CLAMP);
    let a = p0;
    let b = (1.0 - p0) * (-r).exp();
    (a / (a + b), b / (a + b))
}

/// Maps raw network outputs to a proposal, anchored on the prior at the call.
///
/// Flip: one logit, offset from the prior's log-odds. K-component mixture:
/// raw layout `[logits; K][means; K][log-stddevs; K]`, with
/// `mean = prior_mean + prior_sd * raw` and `sd = prior_sd * exp(raw)`.
pub fn bound_outputs(raw: &[f64], head: Head, prior: &DistributionSpec) -> Result<Proposal> {
    match (head, *prior) {
        (Head::Flip, DistributionSpec::Flip { p }) => {
            if raw.len() != 1 {
                return Err(Error::Dimension(format!("flip head with {} outputs", raw.len())));
            }
            let (p, q) = flip_probs(p, raw[0]);
            Ok(Proposal::Flip { p, q })
        }
        (Head::Mixture { k }, DistributionSpec::Gaussian { mean, stddev }) => {
            if raw.len() != 3 * k {
                return Err(Error::Dimension(format!(
                    "{k}-component head with {} outputs",
                    raw.len()
                )));
            }
            let logits = &raw[..k];
            let lse = log_sum_exp(logits);
            let log_weights: Vec<f64> = logits.iter().map(|a| a - lse).collect();
            let weights = log_weights.iter().map(|l| l.exp()).collect();
            let means = raw[k..2 * k].iter().map(|m| mean + stddev * m).collect();
            let stddevs = raw[2 * k..]
                .iter()
                .map(|s| stddev * s.clamp(-STDDEV_LOGIT_CLAMP, STDDEV_LOGIT_CLAMP).exp())
                .collect();
            Ok(Proposal::Mixture(MixtureParams {
                weights,
                log_weights,
                means,
                stddevs,
            }))
        }
        _ => Err(Error::ParameterDomain(format!(
            "{head:?} head cannot guide a {} choice",
            prior.kind().as_str()
        ))),
    }
}

/// Log density of `value` under the bounded proposal and its gradient with
/// respect to the raw outputs.
pub fn raw_logpdf_grad(raw: &[f64], head: Head, prior: &DistributionSpec, value: f64) -> Result<(f64, Vec<f64>)> {
    let proposal = bound_outputs(raw, head, prior)?;
    match (&proposal, *prior) {
        (Proposal::Flip { p, q }, _) => {
            let clamped = raw[0].abs() > FLIP_LOGIT_CLAMP;
            let (logp, d) = if value != 0.0 { (p.ln(), *q) } else { (q.ln(), -p) };
            Ok((logp, vec![if clamped { 0.0 } else { d }]))
        }
        (Proposal::Mixture(m), DistributionSpec::Gaussian { stddev: scale, .. }) => {
            let k = m.k();
            let logs = m.component_logs(value);
            let logp = log_sum_exp(&logs);
            let mut grad = vec![0.0; 3 * k];
            for j in 0..k {
                let r = (logs[j] - logp).exp();
                let (mu, sd) = (m.means[j], m.stddevs[j]);
                let dz = (value - mu) / sd;
                grad[j] = r - m.weights[j];
                grad[k + j] = r * dz / sd * scale;
                if raw[2 * k + j].abs() <= STDDEV_LOGIT_CLAMP {
                    grad[2 * k + j] = r * (dz * dz - 1.0);
                }
            }
            Ok((logp, grad))
        }
        _ => unreachable!("bound_outputs matched head and prior kinds"),
    }
}

/// `log p(value | bound(net(x)))` and its gradient over the network's flat
/// parameters.
pub fn guide_logpdf_grad(
    net: &GuideNetwork,
    x: &[f64],
    prior: &DistributionSpec,
    value: f64,
) -> Result<(f64, Vec<f64>)> {
    let mut grad = vec![0.0; net.num_params()];
    let logp = net.accumulate_logpdf_grad(x, prior, value, &mut grad)?;
    Ok((logp, grad))
}
