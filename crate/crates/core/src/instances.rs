//! Problem instances (means plus a set system), allocation vectors, the
//! canonical and random instance families, and the JSON instance format.

use itertools::Itertools;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Slack on `Σ σ_i² <= 1`.
pub const BUDGET_SLACK: f64 = 1e-9;
const MAX_SUBSETS: u64 = 1_000_000;
const MAX_RESAMPLES: usize = 10_000;

/// `n` non-negative means and `m >= 1` non-empty sorted index sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "InstanceRepr", into = "InstanceRepr")]
pub struct Instance {
    n: usize,
    means: Vec<f64>,
    sets: Vec<Vec<usize>>,
}

// Field order here fixes the key order of the written document.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InstanceRepr {
    n: usize,
    means: Vec<f64>,
    sets: Vec<Vec<usize>>,
}

impl TryFrom<InstanceRepr> for Instance {
    type Error = Error;
    fn try_from(r: InstanceRepr) -> Result<Self> {
        Instance::new(r.n, r.means, r.sets)
    }
}

impl From<Instance> for InstanceRepr {
    fn from(i: Instance) -> Self {
        InstanceRepr {
            n: i.n,
            means: i.means,
            sets: i.sets,
        }
    }
}

impl Instance {
    pub fn new(n: usize, means: Vec<f64>, sets: Vec<Vec<usize>>) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("n", "must be positive"));
        }
        if means.len() != n {
            return Err(Error::invalid(
                "means",
                format!("has {} entries, expected n = {n}", means.len()),
            ));
        }
        for (i, &m) in means.iter().enumerate() {
            if !(m.is_finite() && m >= 0.0) {
                return Err(Error::invalid(
                    format!("means[{i}]"),
                    format!("must be finite and non-negative, got {m}"),
                ));
            }
        }
        if sets.is_empty() {
            return Err(Error::invalid("sets", "need at least one set"));
        }
        for (j, set) in sets.iter().enumerate() {
            if set.is_empty() {
                return Err(Error::invalid(format!("sets[{j}]"), "must be non-empty"));
            }
            for (k, &i) in set.iter().enumerate() {
                if i >= n {
                    return Err(Error::invalid(
                        format!("sets[{j}][{k}]"),
                        format!("index {i} out of range for n = {n}"),
                    ));
                }
                if k > 0 && set[k - 1] >= i {
                    return Err(Error::invalid(
                        format!("sets[{j}][{k}]"),
                        "set must be sorted ascending without duplicates",
                    ));
                }
            }
        }
        Ok(Instance { n, means, sets })
    }

    /// Single set covering every variable.
    pub fn single_set(means: Vec<f64>) -> Result<Self> {
        let n = means.len();
        Self::new(n, means, vec![(0..n).collect()])
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.sets.len()
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn sets(&self) -> &[Vec<usize>] {
        &self.sets
    }

    pub fn with_means(self, means: Vec<f64>) -> Result<Self> {
        Self::new(self.n, means, self.sets)
    }

    /// Keeps the sets satisfying `keep`; `None` when nothing survives.
    pub fn filter_sets(&self, keep: impl Fn(&[usize]) -> bool) -> Option<Instance> {
        let sets: Vec<Vec<usize>> = self.sets.iter().filter(|s| keep(s)).cloned().collect();
        if sets.is_empty() {
            None
        } else {
            Some(Instance {
                n: self.n,
                means: self.means.clone(),
                sets,
            })
        }
    }

    /// `Σ_j max_{i∈S_j} μ_i`: the objective with every variance at zero.
    pub fn deterministic_objective(&self) -> f64 {
        self.sets
            .iter()
            .map(|s| {
                s.iter()
                    .map(|&i| self.means[i])
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .sum()
    }
}

/// Standard deviations under the budget `Σ σ_i² <= 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "AllocationRepr", into = "AllocationRepr")]
pub struct AllocationVector {
    stddevs: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct AllocationRepr {
    stddevs: Vec<f64>,
}

impl TryFrom<AllocationRepr> for AllocationVector {
    type Error = Error;
    fn try_from(r: AllocationRepr) -> Result<Self> {
        AllocationVector::new(r.stddevs)
    }
}

impl From<AllocationVector> for AllocationRepr {
    fn from(a: AllocationVector) -> Self {
        AllocationRepr { stddevs: a.stddevs }
    }
}

impl AllocationVector {
    pub fn new(stddevs: Vec<f64>) -> Result<Self> {
        for (i, &s) in stddevs.iter().enumerate() {
            if !(s.is_finite() && s >= 0.0) {
                return Err(Error::invalid(
                    format!("stddevs[{i}]"),
                    format!("must be finite and non-negative, got {s}"),
                ));
            }
        }
        let used: f64 = stddevs.iter().map(|s| s * s).sum();
        if used > 1.0 + BUDGET_SLACK {
            return Err(Error::invalid(
                "stddevs",
                format!("sum of squares {used} exceeds the unit budget"),
            ));
        }
        Ok(AllocationVector { stddevs })
    }

    pub fn zeros(n: usize) -> Self {
        AllocationVector {
            stddevs: vec![0.0; n],
        }
    }

    /// From variances `σ_i²`.
    pub fn from_variances(variances: &[f64]) -> Result<Self> {
        Self::new(variances.iter().map(|v| v.max(0.0).sqrt()).collect())
    }

    pub fn len(&self) -> usize {
        self.stddevs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stddevs.is_empty()
    }

    pub fn stddevs(&self) -> &[f64] {
        &self.stddevs
    }

    pub fn variances(&self) -> Vec<f64> {
        self.stddevs.iter().map(|s| s * s).collect()
    }

    pub fn budget_used(&self) -> f64 {
        self.stddevs.iter().map(|s| s * s).sum()
    }

    pub fn support_size(&self) -> usize {
        self.stddevs.iter().filter(|&&s| s > 0.0).count()
    }
}

/// Bipartite Erdős–Rényi set system: each `(variable, set)` membership is
/// drawn independently with probability `p`. Empty sets are redrawn.
pub fn erdos_renyi_instance(n: usize, m: usize, p: f64, seed: u64) -> Result<Instance> {
    if n == 0 {
        return Err(Error::invalid("n", "must be positive"));
    }
    if m == 0 {
        return Err(Error::invalid("m", "must be positive"));
    }
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::invalid("p", format!("must lie in (0, 1], got {p}")));
    }
    let mut rng = rng::rng_for(seed, "erdos-renyi", 0);
    let mut sets = Vec::with_capacity(m);
    let mut resampled = 0usize;
    for j in 0..m {
        let mut attempts = 0;
        let set = loop {
            attempts += 1;
            let set: Vec<usize> = (0..n).filter(|_| rng.random::<f64>() < p).collect();
            if !set.is_empty() {
                break set;
            }
            if attempts >= MAX_RESAMPLES {
                return Err(Error::invalid(
                    "p",
                    format!("set {j} stayed empty after {MAX_RESAMPLES} draws (n = {n}, p = {p})"),
                ));
            }
        };
        if attempts > 1 {
            log::debug!("erdos-renyi set {j}: redrawn {} times", attempts - 1);
        }
        resampled += attempts - 1;
        sets.push(set);
    }
    if resampled > 0 {
        log::info!(
            "erdos-renyi (n={n}, m={m}, p={p}, seed={seed}): {resampled} empty sets redrawn"
        );
    }
    Instance::new(n, vec![0.0; n], sets)
}

/// `S_j = {j, j+1 mod n}` with every mean equal to `mu`.
pub fn cycle_instance(n: usize, mu: f64) -> Result<Instance> {
    if n < 3 {
        return Err(Error::invalid("n", format!("cycle needs n >= 3, got {n}")));
    }
    let sets = (0..n)
        .map(|j| {
            let (a, b) = (j, (j + 1) % n);
            vec![a.min(b), a.max(b)]
        })
        .collect();
    Instance::new(n, vec![mu; n], sets)
}

pub fn binomial(n: usize, k: usize) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k) as u64;
    let n = n as u64;
    let mut acc: u64 = 1;
    for i in 0..k {
        acc = match acc.checked_mul(n - i) {
            Some(v) => v / (i + 1),
            None => return u64::MAX,
        };
    }
    acc
}

/// Every `k`-subset of `{0, …, n-1}` as a set, zero means.
pub fn complete_k_subsets_instance(n: usize, k: usize) -> Result<Instance> {
    if n == 0 {
        return Err(Error::invalid("n", "must be positive"));
    }
    if k == 0 || k > n {
        return Err(Error::invalid(
            "k",
            format!("must lie in [1, {n}], got {k}"),
        ));
    }
    let count = binomial(n, k);
    if count > MAX_SUBSETS {
        return Err(Error::BudgetExceeded {
            what: "complete k-subset instance",
            required: count,
            budget: MAX_SUBSETS,
        });
    }
    let sets = (0..n).combinations(k).collect();
    Instance::new(n, vec![0.0; n], sets)
}

/// Compact JSON with keys `n`, `means`, `sets` in that order and
/// shortest round-trip floats, followed by a newline.
pub fn serialize_instance(inst: &Instance) -> Vec<u8> {
    let mut out = serde_json::to_vec(inst).expect("instance serialization is infallible");
    out.push(b'\n');
    out
}

pub fn parse_instance(bytes: &[u8]) -> Result<Instance> {
    let de = &mut serde_json::Deserializer::from_slice(bytes);
    let repr: InstanceRepr = serde_path_to_error::deserialize(de).map_err(|e| Error::Schema {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })?;
    Instance::try_from(repr)
}
