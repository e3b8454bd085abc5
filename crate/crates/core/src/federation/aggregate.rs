use crate::error::{Error, Result};
use crate::model::ModelParams;

/// One node's contribution to an aggregation round.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeUpdate {
    pub node_id: usize,
    pub params: ModelParams,
    /// Local sample count `N_i`.
    pub samples: u64,
}

/// Error-free transformation: `a + b = s + e` exactly.
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    let e = (a - (s - bb)) + (b - bb);
    (s, e)
}

/// Error-free transformation: `a * b = p + e` exactly.
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

/// Double-double accumulator.
#[derive(Clone, Copy, Default)]
struct DoubleDouble {
    hi: f64,
    lo: f64,
}

impl DoubleDouble {
    fn add_product(&mut self, a: f64, b: f64) {
        let (p, pe) = two_prod(a, b);
        let (s, se) = two_sum(self.hi, p);
        let lo = self.lo + se + pe;
        let (hi, lo) = two_sum(s, lo);
        self.hi = hi;
        self.lo = lo;
    }

    fn div(self, d: f64) -> f64 {
        let q = self.hi / d;
        let r = (-q).mul_add(d, self.hi);
        q + (r + self.lo) / d
    }
}

/// Sample-weighted mean `sum_i (N_i / N) w_i` with `N = sum_i N_i`.
///
/// Updates are summed in ascending `node_id` order regardless of input order,
/// and `sum_i N_i w_i` is accumulated in double-double precision before the
/// single division by `N`, so identical inputs aggregate to themselves.
pub fn fedavg_aggregate(updates: &[NodeUpdate]) -> Result<ModelParams> {
    let first = updates.first().ok_or_else(|| Error::invalid("no updates to aggregate"))?;
    let arch = first.params.arch();
    for u in updates {
        if u.params.arch() != arch {
            return Err(Error::invalid(format!("node {} has a different architecture", u.node_id)));
        }
        if u.samples == 0 {
            return Err(Error::invalid(format!("node {} reported zero samples", u.node_id)));
        }
    }
    let mut ordered: Vec<&NodeUpdate> = updates.iter().collect();
    ordered.sort_by_key(|u| u.node_id);
    if ordered.windows(2).any(|w| w[0].node_id == w[1].node_id) {
        return Err(Error::invalid("duplicate node id in updates"));
    }
    let total: u64 = ordered.iter().map(|u| u.samples).sum();
    let mut acc = vec![DoubleDouble::default(); arch.param_count()];
    for u in &ordered {
        let weight = u.samples as f64;
        for (a, &w) in acc.iter_mut().zip(u.params.values()) {
            a.add_product(weight, w);
        }
    }
    ModelParams::new(arch, acc.into_iter().map(|a| a.div(total as f64)).collect())
}
