use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub bytes_per_ms: f64,
    pub latency_ms: f64,
}

impl Link {
    pub fn transfer_ms(&self, bytes: u64) -> f64 {
        self.latency_ms + bytes as f64 / self.bytes_per_ms
    }
}

/// Clouds and the symmetric links between them. Used only to account
/// simulated communication time; nothing is actually sent.
#[derive(Debug, Clone, PartialEq)]
pub struct CloudTopology {
    clouds: Vec<String>,
    /// Keyed by `(min, max)` cloud index.
    links: BTreeMap<(usize, usize), Link>,
}

impl CloudTopology {
    /// Every pair of distinct clouds gets `inter`; a cloud talking to itself
    /// gets `intra`.
    pub fn uniform(clouds: Vec<String>, intra: Link, inter: Link) -> Result<Self> {
        if clouds.is_empty() {
            return Err(Error::invalid("topology needs at least one cloud"));
        }
        let mut links = BTreeMap::new();
        for a in 0..clouds.len() {
            for b in a..clouds.len() {
                links.insert((a, b), if a == b { intra } else { inter });
            }
        }
        let topo = Self { clouds, links };
        topo.validate()?;
        Ok(topo)
    }

    /// Single cloud with a fast local link.
    pub fn single() -> Self {
        Self::uniform(vec!["local".into()], DEFAULT_INTRA, DEFAULT_INTER).expect("valid defaults")
    }

    pub fn set_link(&mut self, a: &str, b: &str, link: Link) -> Result<()> {
        let (ia, ib) = (self.index(a)?, self.index(b)?);
        self.links.insert((ia.min(ib), ia.max(ib)), link);
        self.validate()
    }

    fn validate(&self) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        for c in &self.clouds {
            if !seen.insert(c) {
                return Err(Error::invalid(format!("duplicate cloud id `{c}`")));
            }
        }
        for link in self.links.values() {
            if !(link.bytes_per_ms > 0.0 && link.bytes_per_ms.is_finite()) {
                return Err(Error::invalid("link rates must be positive"));
            }
            if !(link.latency_ms >= 0.0 && link.latency_ms.is_finite()) {
                return Err(Error::invalid("link latency must be non-negative"));
            }
        }
        Ok(())
    }

    fn index(&self, cloud: &str) -> Result<usize> {
        self.clouds
            .iter()
            .position(|c| c == cloud)
            .ok_or_else(|| Error::invalid(format!("unknown cloud `{cloud}`")))
    }

    pub fn clouds(&self) -> &[String] {
        &self.clouds
    }

    /// The aggregator lives in the first cloud.
    pub fn aggregator_cloud(&self) -> &str {
        &self.clouds[0]
    }

    /// Round-robin placement of node `i`.
    pub fn cloud_for_node(&self, node: usize) -> &str {
        &self.clouds[node % self.clouds.len()]
    }

    pub fn link(&self, a: &str, b: &str) -> Result<Link> {
        let (ia, ib) = (self.index(a)?, self.index(b)?);
        Ok(self.links[&(ia.min(ib), ia.max(ib))])
    }
}

/// 1 GB/s, 0.5 ms.
pub const DEFAULT_INTRA: Link = Link { bytes_per_ms: 1.0e6, latency_ms: 0.5 };
/// 100 Mbit/s, 20 ms.
pub const DEFAULT_INTER: Link = Link { bytes_per_ms: 1.25e4, latency_ms: 20.0 };
