//! Per-site network collection and JSON checkpoints.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::exec::SiteDecl;
use crate::guide::features::FeatureSet;
use crate::guide::network::{GuideNetwork, Head};
use crate::rng::StreamRng;
use crate::trace::{ChoiceKind, SiteId};

const CHECKPOINT_FORMAT: &str = "ngpm-guide/1";
const STREAM_INIT: u64 = 0x1417;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GuideConfig {
    pub features: FeatureSet,
    /// Mixture components for gaussian sites.
    pub mixture_k: usize,
    /// Canvas channels seen by the window features.
    pub channels: usize,
    /// Whether target-image windows are available to the networks.
    pub has_target: bool,
    pub init_seed: u64,
}

impl GuideConfig {
    pub fn head_for(&self, kind: ChoiceKind) -> Head {
        match kind {
            ChoiceKind::Flip => Head::Flip,
            ChoiceKind::Gaussian => Head::Mixture { k: self.mixture_k },
        }
    }

    pub fn inputs_for(&self, decl: &SiteDecl) -> usize {
        self.features.len(decl.args.len(), self.channels, self.has_target)
    }
}

/// One network per site id, created on first use.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterStore {
    pub config: GuideConfig,
    pub networks: BTreeMap<SiteId, GuideNetwork>,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    config: GuideConfig,
    networks: Vec<GuideNetwork>,
}

impl ParameterStore {
    pub fn new(config: GuideConfig) -> Result<Self> {
        if config.mixture_k == 0 {
            return Err(Error::Config("mixture needs at least one component".into()));
        }
        if config.channels == 0 {
            return Err(Error::Config("feature windows need at least one channel".into()));
        }
        Ok(ParameterStore {
            config,
            networks: BTreeMap::new(),
        })
    }

    /// Store with a freshly initialized network for every declared site.
    pub fn for_sites(config: GuideConfig, sites: &[SiteDecl]) -> Result<Self> {
        let mut store = Self::new(config)?;
        for decl in sites {
            store.ensure(decl);
        }
        Ok(store)
    }

    /// Single-component networks with a zero output layer: every proposal
    /// equals the prior at the call, bit for bit.
    pub fn prior_equivalent(config: GuideConfig, sites: &[SiteDecl]) -> Result<Self> {
        let config = GuideConfig { mixture_k: 1, ..config };
        let mut store = Self::new(config)?;
        for decl in sites {
            let net = GuideNetwork::zeros(decl.id, config.inputs_for(decl), config.head_for(decl.kind));
            store.networks.insert(decl.id, net);
        }
        Ok(store)
    }

    /// Returns the site's network, creating it if this is its first use.
    /// Initial weights depend only on the seed and site id.
    pub fn ensure(&mut self, decl: &SiteDecl) -> &GuideNetwork {
        let config = self.config;
        self.networks.entry(decl.id).or_insert_with(|| {
            let mut rng = StreamRng::new(config.init_seed, &[STREAM_INIT, u64::from(decl.id.0)]);
            GuideNetwork::init(decl.id, config.inputs_for(decl), config.head_for(decl.kind), &mut rng)
        })
    }

    pub fn get(&self, site: SiteId) -> Option<&GuideNetwork> {
        self.networks.get(&site)
    }

    pub fn num_params(&self) -> usize {
        self.networks.values().map(|n| n.num_params()).sum()
    }

    pub fn to_json(&self) -> String {
        let ck = Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            config: self.config,
            networks: self.networks.values().cloned().collect(),
        };
        serde_json::to_string_pretty(&ck).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::parse("checkpoint", format!("unknown format {:?}", ck.format)));
        }
        let mut store = Self::new(ck.config)?;
        for net in ck.networks {
            let expected = GuideNetwork::zeros(net.site, net.inputs, net.head).num_params();
            if net.params.len() != expected || net.hidden != net.inputs / 2 {
                return Err(Error::parse(
                    "checkpoint",
                    format!("site {} has inconsistent dimensions", net.site),
                ));
            }
            store.networks.insert(net.site, net);
        }
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// sha256 of the serialized checkpoint.
    pub fn hash_hex(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }
}
