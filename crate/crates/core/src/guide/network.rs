//! One-hidden-layer tanh MLP with manual backpropagation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::guide::mixture::raw_logpdf_grad;
use crate::rng::StreamRng;
use crate::trace::{DistributionSpec, SiteId};

/// Output head of a site network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Head {
    Flip,
    Mixture { k: usize },
}

impl Head {
    pub fn num_outputs(self) -> usize {
        match self {
            Head::Flip => 1,
            Head::Mixture { k } => 3 * k,
        }
    }
}

/// Flat parameter layout: `W1 (hidden x inputs)`, `b1`, `W2 (outputs x hidden)`, `b2`,
/// matrices row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GuideNetwork {
    pub site: SiteId,
    pub inputs: usize,
    pub hidden: usize,
    pub head: Head,
    pub params: Vec<f64>,
}

impl GuideNetwork {
    /// Zero-initialized network with `floor(inputs / 2)` hidden units.
    pub fn zeros(site: SiteId, inputs: usize, head: Head) -> Self {
        let hidden = inputs / 2;
        let n = hidden * inputs + hidden + head.num_outputs() * hidden + head.num_outputs();
        GuideNetwork {
            site,
            inputs,
            hidden,
            head,
            params: vec![0.0; n],
        }
    }

    /// Weights uniform in `±1/sqrt(fan_in)`, biases zero.
    pub fn init(site: SiteId, inputs: usize, head: Head, rng: &mut StreamRng) -> Self {
        let mut net = Self::zeros(site, inputs, head);
        let (h, n, o) = (net.hidden, net.inputs, net.outputs());
        if n > 0 {
            let a = 1.0 / (n as f64).sqrt();
            for w in &mut net.params[..h * n] {
                *w = rng.range(-a, a);
            }
        }
        if h > 0 {
            let a = 1.0 / (h as f64).sqrt();
            let w2 = h * n + h;
            for w in &mut net.params[w2..w2 + o * h] {
                *w = rng.range(-a, a);
            }
        }
        net
    }

    pub fn outputs(&self) -> usize {
        self.head.num_outputs()
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    fn offsets(&self) -> (usize, usize, usize) {
        let b1 = self.hidden * self.inputs;
        let w2 = b1 + self.hidden;
        let b2 = w2 + self.outputs() * self.hidden;
        (b1, w2, b2)
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.inputs {
            return Err(Error::Dimension(format!(
                "site {} network takes {} features, got {}",
                self.site,
                self.inputs,
                x.len()
            )));
        }
        Ok(())
    }

    /// Hidden activations and raw outputs.
    fn forward_full(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (b1, w2, b2) = self.offsets();
        let p = &self.params;
        let n = self.inputs;
        let hidden: Vec<f64> = (0..self.hidden)
            .map(|j| {
                let row = &p[j * n..(j + 1) * n];
                let s: f64 = row.iter().zip(x).map(|(w, v)| w * v).sum();
                (s + p[b1 + j]).tanh()
            })
            .collect();
        let out = (0..self.outputs())
            .map(|o| {
                let row = &p[w2 + o * self.hidden..w2 + (o + 1) * self.hidden];
                let s: f64 = row.iter().zip(&hidden).map(|(w, h)| w * h).sum();
                s + p[b2 + o]
            })
            .collect();
        (hidden, out)
    }

    /// `W2 tanh(W1 x + b1) + b2`.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(self.forward_full(x).1)
    }

    /// Adds `d(loss)/d(params)` to `grad` given `d(loss)/d(raw outputs)`.
    fn backward(&self, x: &[f64], hidden: &[f64], d_out: &[f64], grad: &mut [f64]) {
        let (b1, w2, b2) = self.offsets();
        let (n, h) = (self.inputs, self.hidden);
        let mut d_hidden = vec![0.0; h];
        for (o, &d) in d_out.iter().enumerate() {
            grad[b2 + o] += d;
            if d == 0.0 {
                continue;
            }
            let row = w2 + o * h;
            for j in 0..h {
                grad[row + j] += d * hidden[j];
                d_hidden[j] += d * self.params[row + j];
            }
        }
        for j in 0..h {
            let d = d_hidden[j] * (1.0 - hidden[j] * hidden[j]);
            grad[b1 + j] += d;
            if d == 0.0 {
                continue;
            }
            for (g, v) in grad[j * n..(j + 1) * n].iter_mut().zip(x) {
                *g += d * v;
            }
        }
    }

    /// Log density of `value` under the bounded head and accumulates its
    /// gradient into `grad`.
    pub fn accumulate_logpdf_grad(
        &self,
        x: &[f64],
        prior: &DistributionSpec,
        value: f64,
        grad: &mut [f64],
    ) -> Result<f64> {
        self.check_input(x)?;
        let (hidden, raw) = self.forward_full(x);
        let (logp, d_raw) = raw_logpdf_grad(&raw, self.head, prior, value)?;
        self.backward(x, &hidden, &d_raw, grad);
        Ok(logp)
    }
}
