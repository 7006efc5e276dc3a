//! Allocation algorithms: grid-search approximation schemes for a single set
//! (independent and correlated), the logarithmic greedy for set systems, the
//! fixed-variance submodular greedy, an exhaustive grid oracle and the
//! uniform baseline.

use std::cmp::Ordering;
use std::time::{Duration, Instant};

use itertools::Itertools;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian_oracle::{
    self, graph_objective, graph_objective_correlated, graph_objective_on_bank, CovarianceSpec,
    Estimate, EstimatorConfig, Factor, Method, FACTOR_RANK_TOL, PSD_TOL,
};
use crate::instances::{binomial, AllocationVector, Instance, BUDGET_SLACK};
use crate::rng::{self, NormalBank};

pub const DEFAULT_GRID_BUDGET: u64 = 10_000_000;
pub const DEFAULT_CORRELATED_BUDGET: u64 = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    PtasIndependent,
    PtasCorrelated,
    LogApproxGraph,
    LogApproxGraphCorrelated,
    BruteForceGrid,
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Allocation {
    Independent(AllocationVector),
    Correlated(CovarianceSpec),
}

impl Allocation {
    pub fn support_size(&self) -> usize {
        match self {
            Allocation::Independent(a) => a.support_size(),
            Allocation::Correlated(c) => c.variances().iter().filter(|&&v| v > 0.0).count(),
        }
    }
}

/// Result of a solver run. Serialized key order follows field order;
/// `elapsed` is not serialized so reports are reproducible byte for byte.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveReport {
    pub algorithm: Algorithm,
    pub allocation: Allocation,
    pub objective: Estimate,
    pub eps: Option<f64>,
    pub grid_step: Option<f64>,
    pub support_size: usize,
    /// Candidate allocations evaluated during the search.
    pub candidates: u64,
    pub seed: u64,
    pub config: EstimatorConfig,
    #[serde(skip)]
    pub elapsed: Duration,
}

impl SolveReport {
    fn new(
        algorithm: Algorithm,
        allocation: Allocation,
        objective: Estimate,
        cfg: &EstimatorConfig,
        started: Instant,
    ) -> Self {
        SolveReport {
            algorithm,
            support_size: allocation.support_size(),
            allocation,
            objective,
            eps: None,
            grid_step: None,
            candidates: 0,
            seed: cfg.seed,
            config: *cfg,
            elapsed: started.elapsed(),
        }
    }

    /// Re-evaluates the objective at the reported allocation under the
    /// report's own configuration.
    pub fn reevaluate(&self, inst: &Instance) -> Result<Estimate> {
        match &self.allocation {
            Allocation::Independent(a) => graph_objective(inst, a, &self.config),
            Allocation::Correlated(c) => graph_objective_correlated(inst, c, &self.config),
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct PtasOptions {
    /// Defaults to `eps^3`.
    pub grid_step: Option<f64>,
    /// Defaults to [`DEFAULT_GRID_BUDGET`] or [`DEFAULT_CORRELATED_BUDGET`].
    pub node_budget: Option<u64>,
}

/// Objective evaluation during a search: deterministic when the config is,
/// otherwise Monte Carlo on one fixed sample matrix shared by all candidates.
enum Search {
    Exact(EstimatorConfig),
    Bank(NormalBank),
}

fn search_rows(cfg: &EstimatorConfig) -> usize {
    (cfg.mc_samples / 10).max(1000)
}

fn search_bank(cfg: &EstimatorConfig, dim: usize) -> NormalBank {
    NormalBank::generate(
        rng::derive_seed(cfg.seed, "search", 0),
        search_rows(cfg),
        dim,
    )
}

impl Search {
    fn new(inst: &Instance, cfg: &EstimatorConfig) -> Self {
        if cfg.method == Method::MonteCarlo {
            Search::Bank(search_bank(cfg, inst.n()))
        } else {
            Search::Exact(*cfg)
        }
    }

    /// `Σ_{j∈sets} E[max_{i∈S_j} X_i]`.
    fn sets_value(&self, inst: &Instance, sets: &[usize], stddevs: &[f64]) -> Result<f64> {
        match self {
            Search::Exact(cfg) => {
                let (mut mb, mut sb) = (Vec::new(), Vec::new());
                let mut total = 0.0;
                for &j in sets {
                    total +=
                        gaussian_oracle::set_objective(inst, j, stddevs, cfg, &mut mb, &mut sb)?
                            .value;
                }
                Ok(total)
            }
            Search::Bank(bank) => {
                let means = inst.means();
                let all = inst.sets();
                Ok(bank
                    .moments(|z| {
                        sets.iter()
                            .map(|&j| {
                                all[j]
                                    .iter()
                                    .map(|&i| means[i] + stddevs[i] * z[i])
                                    .fold(f64::NEG_INFINITY, f64::max)
                            })
                            .sum()
                    })
                    .mean)
            }
        }
    }

    fn total(&self, inst: &Instance, stddevs: &[f64]) -> Result<f64> {
        let all: Vec<usize> = (0..inst.m()).collect();
        self.sets_value(inst, &all, stddevs)
    }
}

fn check_step(step: f64) -> Result<()> {
    if !(step > 0.0 && step <= 1.0) {
        return Err(Error::invalid(
            "grid_step",
            format!("must lie in (0, 1], got {step}"),
        ));
    }
    Ok(())
}

fn check_eps(eps: f64) -> Result<()> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::invalid(
            "eps",
            format!("must lie in (0, 1), got {eps}"),
        ));
    }
    Ok(())
}

/// Maximum support size `⌊1/ε²⌋`.
pub fn support_bound(eps: f64) -> usize {
    (1.0 / (eps * eps) + 1e-9).floor() as usize
}

/// Largest `Q` with `Q·step² <= 1` (up to the budget slack): grid vectors
/// `σ = q·step` are feasible iff `Σ q_i² <= Q`.
fn square_units(step: f64) -> u64 {
    ((1.0 + BUDGET_SLACK) / (step * step)).floor() as u64
}

/// `counts[s]` = number of vectors of `s` positive integers with
/// `Σ q_i² <= q_max`, for `s <= s_max`. `None` when the table is too
/// expensive to build.
fn positive_square_counts(s_max: usize, q_max: u64) -> Option<Vec<u64>> {
    let q = q_max as usize;
    let root = (q_max as f64).sqrt().floor() as usize;
    if (s_max as f64) * (q as f64 + 1.0) * (root as f64 + 1.0) > 2e9 {
        return None;
    }
    // exact[t]: vectors with Σq² = t exactly.
    let mut exact = vec![0u64; q + 1];
    exact[0] = 1;
    let mut counts = vec![1u64];
    for _ in 1..=s_max {
        let mut next = vec![0u64; q + 1];
        for (t, &w) in exact.iter().enumerate() {
            if w == 0 {
                continue;
            }
            for r in 1..=root {
                let u = t + r * r;
                if u > q {
                    break;
                }
                next[u] = next[u].saturating_add(w);
            }
        }
        exact = next;
        counts.push(exact.iter().fold(0u64, |a, &b| a.saturating_add(b)));
    }
    Some(counts)
}

/// Lattice-volume estimate used only when the exact table is out of reach.
fn positive_square_estimate(s: usize, q_max: u64) -> f64 {
    let r = (q_max as f64).sqrt();
    let half = s as f64 / 2.0;
    std::f64::consts::PI.powf(half) * r.powi(s as i32)
        / libm::tgamma(half + 1.0)
        / 2f64.powi(s as i32)
}

/// Grid candidates over supports of size `<= s_max` drawn from `members`.
fn grid_size(members: usize, s_max: usize, q_max: u64) -> u64 {
    let s_max = s_max.min(members);
    match positive_square_counts(s_max, q_max) {
        Some(counts) => counts.iter().enumerate().fold(0u64, |a, (s, &c)| {
            a.saturating_add(binomial(members, s).saturating_mul(c))
        }),
        None => (0..=s_max)
            .map(|s| binomial(members, s) as f64 * positive_square_estimate(s, q_max))
            .sum::<f64>()
            .min(u64::MAX as f64) as u64,
    }
}

/// Calls `f` on every vector of `len` positive integers with `Σ q² <= q_max`,
/// in lexicographic order. Stops at the first error.
fn for_each_positive<E>(
    len: usize,
    q_max: u64,
    f: &mut impl FnMut(&[u64]) -> std::result::Result<(), E>,
) -> std::result::Result<(), E> {
    fn rec<E>(
        q: &mut Vec<u64>,
        len: usize,
        left: u64,
        f: &mut impl FnMut(&[u64]) -> std::result::Result<(), E>,
    ) -> std::result::Result<(), E> {
        if q.len() == len {
            return f(q);
        }
        let mut r = 1;
        while r * r <= left {
            q.push(r);
            rec(q, len, left - r * r, f)?;
            q.pop();
            r += 1;
        }
        Ok(())
    }
    rec(&mut Vec::with_capacity(len), len, q_max, f)
}

#[derive(Debug, Clone)]
struct Best<C> {
    value: f64,
    // Position in the sequential enumeration order, for tie-breaking.
    order: (usize, u64),
    candidate: C,
}

fn better<C>(a: Best<C>, b: Best<C>) -> Best<C> {
    match a.value.total_cmp(&b.value) {
        Ordering::Greater => a,
        Ordering::Less => b,
        Ordering::Equal => {
            if a.order <= b.order {
                a
            } else {
                b
            }
        }
    }
}

fn reduce_best<C: Send>(parts: Vec<Result<Option<Best<C>>>>) -> Result<Option<Best<C>>> {
    let mut best: Option<Best<C>> = None;
    for p in parts {
        if let Some(b) = p? {
            best = Some(match best {
                None => b,
                Some(a) => better(a, b),
            });
        }
    }
    Ok(best)
}

/// All supports of size `<= s_max` from `members`, by size then
/// lexicographically.
fn supports(members: &[usize], s_max: usize) -> Vec<Vec<usize>> {
    (0..=s_max.min(members.len()))
        .flat_map(|s| members.iter().copied().combinations(s))
        .collect()
}

/// Exhaustive search over `σ = q·step` supported on subsets of `members`
/// of size `<= s_max`. Returns the best stddev vector, its search value
/// and the number of candidates.
fn sigma_grid_search(
    inst: &Instance,
    members: &[usize],
    s_max: usize,
    step: f64,
    budget: u64,
    search: &Search,
    what: &'static str,
) -> Result<(Vec<f64>, u64)> {
    let q_max = square_units(step);
    let required = grid_size(members.len(), s_max, q_max);
    if required > budget {
        return Err(Error::BudgetExceeded {
            what,
            required,
            budget,
        });
    }
    let n = inst.n();
    let supports = supports(members, s_max);
    let parts: Vec<Result<Option<Best<Vec<f64>>>>> = supports
        .par_iter()
        .enumerate()
        .map(|(si, support)| {
            let mut sigma = vec![0.0; n];
            let mut best: Option<Best<Vec<f64>>> = None;
            let mut idx = 0u64;
            for_each_positive(support.len(), q_max, &mut |q: &[u64]| -> Result<()> {
                for (&i, &qi) in support.iter().zip(q) {
                    sigma[i] = qi as f64 * step;
                }
                let value = search.total(inst, &sigma)?;
                let cand = Best {
                    value,
                    order: (si, idx),
                    candidate: sigma.clone(),
                };
                idx += 1;
                best = Some(match best.take() {
                    None => cand,
                    Some(b) => better(b, cand),
                });
                Ok(())
            })?;
            Ok(best)
        })
        .collect();
    let best = reduce_best(parts)?.expect("the zero vector is always a candidate");
    Ok((best.candidate, required))
}

fn finish_independent(
    inst: &Instance,
    stddevs: Vec<f64>,
    cfg: &EstimatorConfig,
) -> Result<(AllocationVector, Estimate)> {
    let alloc = AllocationVector::new(stddevs)?;
    let objective = graph_objective(inst, &alloc, cfg)?;
    Ok((alloc, objective))
}

fn single_set(inst: &Instance) -> Result<&[usize]> {
    if inst.m() != 1 {
        return Err(Error::invalid(
            "instance",
            format!("single-set solver needs m = 1, got m = {}", inst.m()),
        ));
    }
    Ok(&inst.sets()[0])
}

/// Grid search over standard deviations that are multiples of the grid
/// step, on supports of at most `⌊1/ε²⌋` variables of the single set.
pub fn ptas_independent(
    inst: &Instance,
    eps: f64,
    opts: PtasOptions,
    cfg: &EstimatorConfig,
) -> Result<SolveReport> {
    let started = Instant::now();
    cfg.validate()?;
    check_eps(eps)?;
    let members = single_set(inst)?;
    let step = opts.grid_step.unwrap_or(eps * eps * eps);
    check_step(step)?;
    let k = support_bound(eps);
    let search = Search::new(inst, cfg);
    let (sigma, candidates) = sigma_grid_search(
        inst,
        members,
        k,
        step,
        opts.node_budget.unwrap_or(DEFAULT_GRID_BUDGET),
        &search,
        "independent grid search",
    )?;
    let (alloc, objective) = finish_independent(inst, sigma, cfg)?;
    let mut report = SolveReport::new(
        Algorithm::PtasIndependent,
        Allocation::Independent(alloc),
        objective,
        cfg,
        started,
    );
    report.eps = Some(eps);
    report.grid_step = Some(step);
    report.candidates = candidates;
    Ok(report)
}

/// Exhaustive search over all `σ = q·step` with `Σ σ_i² <= 1`.
pub fn brute_force_grid(
    inst: &Instance,
    grid_step: f64,
    cfg: &EstimatorConfig,
) -> Result<SolveReport> {
    brute_force_grid_with_budget(inst, grid_step, DEFAULT_GRID_BUDGET, cfg)
}

pub fn brute_force_grid_with_budget(
    inst: &Instance,
    grid_step: f64,
    budget: u64,
    cfg: &EstimatorConfig,
) -> Result<SolveReport> {
    let started = Instant::now();
    cfg.validate()?;
    check_step(grid_step)?;
    let members: Vec<usize> = (0..inst.n()).collect();
    let search = Search::new(inst, cfg);
    let (sigma, candidates) = sigma_grid_search(
        inst,
        &members,
        inst.n(),
        grid_step,
        budget,
        &search,
        "brute-force grid",
    )?;
    let (alloc, objective) = finish_independent(inst, sigma, cfg)?;
    let mut report = SolveReport::new(
        Algorithm::BruteForceGrid,
        Allocation::Independent(alloc),
        objective,
        cfg,
        started,
    );
    report.grid_step = Some(grid_step);
    report.candidates = candidates;
    Ok(report)
}

/// Diagonal unit vectors `d` (positive, `Σ d <= t_max`) in lexicographic order.
fn diagonals(len: usize, t_max: u64) -> Vec<Vec<u64>> {
    fn rec(d: &mut Vec<u64>, len: usize, left: u64, out: &mut Vec<Vec<u64>>) {
        if d.len() == len {
            out.push(d.clone());
            return;
        }
        for v in 1..=left {
            d.push(v);
            rec(d, len, left - v, out);
            d.pop();
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::with_capacity(len), len, t_max, &mut out);
    out
}

/// Largest `o` with `o <= sqrt(a·b)`.
fn cs_bound(a: u64, b: u64) -> u64 {
    let mut r = ((a * b) as f64).sqrt().floor() as u64;
    while (r + 1) * (r + 1) <= a * b {
        r += 1;
    }
    while r * r > a * b {
        r -= 1;
    }
    r
}

fn off_diagonal_count(d: &[u64]) -> u64 {
    let mut c: u64 = 1;
    for i in 0..d.len() {
        for j in i + 1..d.len() {
            c = c.saturating_mul(2 * cs_bound(d[i], d[j]) + 1);
        }
    }
    c
}

/// Grid search over covariance matrices with entries on the grid, supports
/// of at most `⌊1/ε²⌋` variables, trace at most one and Cauchy–Schwarz
/// feasible off-diagonals; non-PSD candidates are skipped. Candidates are
/// compared by Monte Carlo on one shared sample matrix and the winner is
/// re-estimated under `cfg`.
pub fn ptas_correlated(
    inst: &Instance,
    eps: f64,
    opts: PtasOptions,
    cfg: &EstimatorConfig,
) -> Result<SolveReport> {
    let started = Instant::now();
    cfg.validate()?;
    if matches!(cfg.method, Method::ClosedForm | Method::Quadrature) {
        return Err(Error::invalid(
            "method",
            "correlated search is estimated by Monte Carlo only",
        ));
    }
    check_eps(eps)?;
    let members = single_set(inst)?;
    let step = opts.grid_step.unwrap_or(eps * eps * eps);
    check_step(step)?;
    let budget = opts.node_budget.unwrap_or(DEFAULT_CORRELATED_BUDGET);
    let k = support_bound(eps);
    let t_max = ((1.0 + BUDGET_SLACK) / step).floor() as u64;
    let n = inst.n();

    let supports = supports(members, k);
    let mut required: u64 = 0;
    let mut plans = Vec::with_capacity(supports.len());
    for support in supports {
        let diags = diagonals(support.len(), t_max);
        for d in &diags {
            required = required.saturating_add(off_diagonal_count(d));
        }
        if required > budget {
            return Err(Error::BudgetExceeded {
                what: "correlated grid search",
                required: grid_size_correlated(members.len(), k, t_max),
                budget,
            });
        }
        plans.push((support, diags));
    }

    let bank = search_bank(cfg, n);
    let parts: Vec<Result<Option<Best<Vec<f64>>>>> = plans
        .par_iter()
        .enumerate()
        .map(|(si, (support, diags))| {
            let s = support.len();
            let pairs: Vec<(usize, usize)> = (0..s).tuple_combinations().collect();
            let mut best: Option<Best<Vec<f64>>> = None;
            let mut idx = 0u64;
            let mut matrix = vec![0.0; n * n];
            for d in diags {
                let bounds: Vec<i64> = pairs
                    .iter()
                    .map(|&(a, b)| cs_bound(d[a], d[b]) as i64)
                    .collect();
                let mut off: Vec<i64> = bounds.iter().map(|&b| -b).collect();
                loop {
                    matrix.iter_mut().for_each(|x| *x = 0.0);
                    for (a, &i) in support.iter().enumerate() {
                        matrix[i * n + i] = d[a] as f64 * step;
                    }
                    for (p, &(a, b)) in pairs.iter().enumerate() {
                        let (i, j) = (support[a], support[b]);
                        let v = off[p] as f64 * step;
                        matrix[i * n + j] = v;
                        matrix[j * n + i] = v;
                    }
                    let order = (si, idx);
                    idx += 1;
                    if pairs.is_empty() || gaussian_oracle::min_eigenvalue(&matrix, n) >= PSD_TOL {
                        let factor = Factor::pivoted_cholesky(&matrix, n, FACTOR_RANK_TOL)?;
                        let value = graph_objective_on_bank(inst, &factor, &bank).value;
                        let cand = Best {
                            value,
                            order,
                            candidate: matrix.clone(),
                        };
                        best = Some(match best.take() {
                            None => cand,
                            Some(b) => better(b, cand),
                        });
                    }
                    if !advance(&mut off, &bounds) {
                        break;
                    }
                }
            }
            Ok(best)
        })
        .collect();
    let best = reduce_best(parts)?.expect("the zero matrix is always a candidate");
    let spec = CovarianceSpec::from_flat(inst.means().to_vec(), best.candidate)?;
    let objective = graph_objective_correlated(inst, &spec, cfg)?;
    let mut report = SolveReport::new(
        Algorithm::PtasCorrelated,
        Allocation::Correlated(spec),
        objective,
        cfg,
        started,
    );
    report.eps = Some(eps);
    report.grid_step = Some(step);
    report.candidates = required;
    Ok(report)
}

/// Odometer step over `[-bounds[p], bounds[p]]`; false once it wraps.
fn advance(off: &mut [i64], bounds: &[i64]) -> bool {
    for p in (0..off.len()).rev() {
        if off[p] < bounds[p] {
            off[p] += 1;
            return true;
        }
        off[p] = -bounds[p];
    }
    false
}

/// Total correlated candidate count, saturating.
fn grid_size_correlated(members: usize, k: usize, t_max: u64) -> u64 {
    let mut total: u64 = 0;
    for s in 0..=k.min(members) {
        let per: u64 = diagonals(s, t_max)
            .iter()
            .fold(0u64, |a, d| a.saturating_add(off_diagonal_count(d)));
        total = total.saturating_add(binomial(members, s).saturating_mul(per));
        if total == u64::MAX {
            break;
        }
    }
    total
}

/// For each variable, the sets containing it.
fn memberships(inst: &Instance) -> Vec<Vec<usize>> {
    let mut of = vec![Vec::new(); inst.n()];
    for (j, set) in inst.sets().iter().enumerate() {
        for &i in set {
            of[i].push(j);
        }
    }
    of
}

/// Index with the largest gain, lowest index on ties.
fn argmax(gains: &[(usize, f64)]) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for &(i, g) in gains {
        if best.is_none_or(|(_, bg)| g > bg) {
            best = Some((i, g));
        }
    }
    best
}

/// Marginal gains of raising each listed zero-variance variable to `sigma`.
fn marginal_gains(
    inst: &Instance,
    of: &[Vec<usize>],
    stddevs: &[f64],
    set_values: &[f64],
    sigma: f64,
    search: &Search,
) -> Result<Vec<(usize, f64)>> {
    (0..inst.n())
        .into_par_iter()
        .filter(|&i| stddevs[i] == 0.0)
        .map(|i| {
            let mut trial = stddevs.to_vec();
            trial[i] = sigma;
            let mut gain = 0.0;
            for &j in &of[i] {
                gain += search.sets_value(inst, &[j], &trial)? - set_values[j];
            }
            Ok((i, gain))
        })
        .collect()
}

fn per_set_values(inst: &Instance, stddevs: &[f64], search: &Search) -> Result<Vec<f64>> {
    (0..inst.m())
        .map(|j| search.sets_value(inst, &[j], stddevs))
        .collect()
}

/// Runs the logarithmic greedy and returns the chosen stddevs (on all `n`
/// variables) or `None` when every set is a singleton.
fn log_approx_sigma(inst: &Instance, cfg: &EstimatorConfig) -> Result<Option<(Vec<f64>, u64)>> {
    let Some(work) = inst.filter_sets(|s| s.len() > 1) else {
        return Ok(None);
    };
    let n = work.n();
    let search = Search::new(&work, cfg);
    let of = memberships(&work);
    let rounds = usize::BITS - 1 - n.leading_zeros();
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut evaluated = 0u64;
    for k in 0..=rounds {
        let sigma = 0.5f64.powi(k as i32);
        let count = 4usize.saturating_pow(k).min(n);
        let mut stddevs = vec![0.0; n];
        let mut set_values = per_set_values(&work, &stddevs, &search)
            .map_err(|e| e.context(format!("round {k}")))?;
        for step in 0..count {
            let gains = marginal_gains(&work, &of, &stddevs, &set_values, sigma, &search)
                .map_err(|e| e.context(format!("round {k}, step {step}")))?;
            evaluated += gains.len() as u64;
            let Some((i, _)) = argmax(&gains) else { break };
            stddevs[i] = sigma;
            for &j in &of[i] {
                set_values[j] = search
                    .sets_value(&work, &[j], &stddevs)
                    .map_err(|e| e.context(format!("round {k}, step {step}")))?;
            }
        }
        let value: f64 = set_values.iter().sum();
        log::debug!("log-approx round {k}: sigma {sigma}, {count} variables, objective {value}");
        if best.as_ref().is_none_or(|(bv, _)| value > *bv) {
            best = Some((value, stddevs));
        }
    }
    Ok(best.map(|(_, s)| (s, evaluated)))
}

/// Logarithmic-approximation greedy for set systems. Singleton sets are
/// dropped during the search and re-included in the reported objective.
pub fn log_approx_graph(inst: &Instance, cfg: &EstimatorConfig) -> Result<SolveReport> {
    let started = Instant::now();
    cfg.validate()?;
    let (sigma, candidates) = log_approx_sigma(inst, cfg)?.unwrap_or((vec![0.0; inst.n()], 0));
    let (alloc, objective) = finish_independent(inst, sigma, cfg)?;
    let mut report = SolveReport::new(
        Algorithm::LogApproxGraph,
        Allocation::Independent(alloc),
        objective,
        cfg,
        started,
    );
    report.candidates = candidates;
    Ok(report)
}

/// The same greedy, reported as a diagonal covariance and evaluated with the
/// correlated estimator.
pub fn log_approx_graph_correlated(inst: &Instance, cfg: &EstimatorConfig) -> Result<SolveReport> {
    let started = Instant::now();
    cfg.validate()?;
    let (sigma, candidates) = log_approx_sigma(inst, cfg)?.unwrap_or((vec![0.0; inst.n()], 0));
    let variances: Vec<f64> = sigma.iter().map(|s| s * s).collect();
    let spec = CovarianceSpec::diagonal(inst.means().to_vec(), &variances)?;
    let objective = graph_objective_correlated(inst, &spec, cfg)?;
    let mut report = SolveReport::new(
        Algorithm::LogApproxGraphCorrelated,
        Allocation::Correlated(spec),
        objective,
        cfg,
        started,
    );
    report.candidates = candidates;
    Ok(report)
}

/// Greedy maximization of the objective over index sets of at most
/// `cardinality` variables, each at variance `variance_level`. Stops early
/// when no addition has positive gain. Returns the chosen indices (sorted)
/// and the objective at the resulting allocation.
pub fn greedy_fixed_variance(
    inst: &Instance,
    variance_level: f64,
    cardinality: usize,
    cfg: &EstimatorConfig,
) -> Result<(Vec<usize>, Estimate)> {
    cfg.validate()?;
    if !(variance_level > 0.0 && variance_level.is_finite()) {
        return Err(Error::invalid(
            "variance_level",
            format!("must be positive, got {variance_level}"),
        ));
    }
    if cardinality as f64 * variance_level > 1.0 + BUDGET_SLACK {
        return Err(Error::invalid(
            "cardinality",
            format!("{cardinality} variables at variance {variance_level} exceed the unit budget"),
        ));
    }
    let sigma = variance_level.sqrt();
    let search = Search::new(inst, cfg);
    let of = memberships(inst);
    let mut stddevs = vec![0.0; inst.n()];
    let mut set_values = per_set_values(inst, &stddevs, &search)?;
    let mut chosen = Vec::with_capacity(cardinality);
    for _ in 0..cardinality {
        let gains = marginal_gains(inst, &of, &stddevs, &set_values, sigma, &search)?;
        match argmax(&gains) {
            Some((i, g)) if g > 0.0 => {
                stddevs[i] = sigma;
                chosen.push(i);
                for &j in &of[i] {
                    set_values[j] = search.sets_value(inst, &[j], &stddevs)?;
                }
            }
            _ => break,
        }
    }
    chosen.sort_unstable();
    let alloc = AllocationVector::new(stddevs)?;
    let estimate = graph_objective(inst, &alloc, cfg)?;
    Ok((chosen, estimate))
}

/// `σ_i = 1/√n` for every variable.
pub fn uniform_allocation(inst: &Instance) -> AllocationVector {
    let n = inst.n();
    AllocationVector::new(vec![1.0 / (n as f64).sqrt(); n])
        .expect("the uniform allocation meets the budget")
}

pub fn solve_uniform(inst: &Instance, cfg: &EstimatorConfig) -> Result<SolveReport> {
    let started = Instant::now();
    cfg.validate()?;
    let alloc = uniform_allocation(inst);
    let objective = graph_objective(inst, &alloc, cfg)?;
    let mut report = SolveReport::new(
        Algorithm::Uniform,
        Allocation::Independent(alloc),
        objective,
        cfg,
        started,
    );
    report.candidates = 1;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::cycle_instance;
    use approx::assert_abs_diff_eq;

    const PHI0: f64 = 0.398_942_280_401_432_7;

    fn q() -> EstimatorConfig {
        EstimatorConfig::default()
    }

    #[test]
    fn positive_square_counts_match_enumeration() {
        let counts = positive_square_counts(4, 30).unwrap();
        for (s, &c) in counts.iter().enumerate() {
            let mut seen = 0u64;
            for_each_positive::<()>(s, 30, &mut |_| {
                seen += 1;
                Ok(())
            })
            .unwrap();
            assert_eq!(seen, c, "s = {s}");
        }
        assert_eq!(counts[1], 5);
    }

    #[test]
    fn support_bound_floor() {
        assert_eq!(support_bound(0.5), 4);
        assert_eq!(support_bound(0.35), 8);
        assert_eq!(support_bound(0.7), 2);
        assert_eq!(support_bound(1.0 / 3.0), 9);
    }

    #[test]
    fn ptas_two_zero_mean() {
        let inst = Instance::single_set(vec![0.0, 0.0]).unwrap();
        let r = ptas_independent(&inst, 0.5, PtasOptions::default(), &q()).unwrap();
        assert_abs_diff_eq!(r.objective.value, PHI0, epsilon = 1e-3);
        let Allocation::Independent(a) = &r.allocation else {
            panic!()
        };
        assert!(a.budget_used() > 0.98);
    }

    #[test]
    fn ptas_single_variable() {
        let inst = Instance::single_set(vec![2.5]).unwrap();
        let r = ptas_independent(&inst, 0.5, PtasOptions::default(), &q()).unwrap();
        assert_eq!(r.objective.value, 2.5);
    }

    #[test]
    fn ptas_three_zero_mean() {
        let inst = Instance::single_set(vec![0.0; 3]).unwrap();
        let r = ptas_independent(&inst, 0.5, PtasOptions::default(), &q()).unwrap();
        // Uniform σ² = 1/3 is off the σ grid, so the grid optimum sits below it.
        let uniform = 1.5 / std::f64::consts::PI.sqrt() / 3f64.sqrt();
        assert!(r.objective.value >= uniform - 0.5);
        let b = brute_force_grid(&inst, 0.125, &q()).unwrap();
        assert_eq!(r.objective.value, b.objective.value);
        assert_abs_diff_eq!(r.objective.value, 0.473_545_277_7, epsilon = 1e-9);
    }

    #[test]
    fn ptas_rejects_bad_arguments() {
        let inst = Instance::single_set(vec![0.0; 3]).unwrap();
        assert!(ptas_independent(&inst, 1.0, PtasOptions::default(), &q()).is_err());
        let cyc = cycle_instance(3, 0.0).unwrap();
        assert!(ptas_independent(&cyc, 0.5, PtasOptions::default(), &q()).is_err());
        let tight = PtasOptions {
            grid_step: Some(0.01),
            node_budget: Some(1000),
        };
        assert!(matches!(
            ptas_independent(&inst, 0.5, tight, &q()),
            Err(Error::BudgetExceeded { .. })
        ));
    }

    #[test]
    fn ptas_and_brute_force_coincide_when_support_is_unrestricted() {
        let inst = Instance::single_set(vec![0.3, 0.0, 0.7]).unwrap();
        let p = ptas_independent(&inst, 0.5, PtasOptions::default(), &q()).unwrap();
        let b = brute_force_grid(&inst, 0.125, &q()).unwrap();
        assert_eq!(p.objective.value, b.objective.value);
        assert_eq!(p.candidates, b.candidates);
    }

    #[test]
    fn brute_force_cycle_is_uniform() {
        let inst = cycle_instance(4, 0.0).unwrap();
        let r = brute_force_grid(&inst, 0.25, &q()).unwrap();
        assert_abs_diff_eq!(
            r.objective.value,
            (4.0 / std::f64::consts::PI).sqrt(),
            epsilon = 1e-9
        );
    }

    #[test]
    fn brute_force_pair_and_single() {
        let inst = Instance::single_set(vec![0.0, 0.0]).unwrap();
        let r = brute_force_grid(&inst, 0.5, &q()).unwrap();
        assert_abs_diff_eq!(r.objective.value, PHI0, epsilon = 1e-12);
        let inst = Instance::new(2, vec![0.4, 0.1], vec![vec![0]]).unwrap();
        let r = brute_force_grid(&inst, 0.5, &q()).unwrap();
        assert_eq!(r.objective.value, 0.4);
    }

    #[test]
    fn brute_force_budget_reports_count() {
        let inst = cycle_instance(3, 0.0).unwrap();
        match brute_force_grid_with_budget(&inst, 0.25, 10, &q()) {
            Err(Error::BudgetExceeded { required, .. }) => {
                let full = brute_force_grid(&inst, 0.25, &q()).unwrap();
                assert_eq!(required, full.candidates);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn ptas_correlated_finds_anticorrelation() {
        let inst = Instance::single_set(vec![0.0, 0.0]).unwrap();
        let opts = PtasOptions {
            grid_step: Some(0.25),
            node_budget: None,
        };
        let cfg = EstimatorConfig::monte_carlo(200_000, 0);
        let r = ptas_correlated(&inst, 0.7, opts, &cfg).unwrap();
        let Allocation::Correlated(c) = &r.allocation else {
            panic!()
        };
        assert_eq!(c.get(0, 1), -0.5);
        assert_eq!(c.get(0, 0), 0.5);
        assert!(r.objective.value >= 0.564_189_6 - r.objective.half_width);
    }

    #[test]
    fn ptas_correlated_single_variable() {
        let inst = Instance::single_set(vec![1.5]).unwrap();
        let cfg = EstimatorConfig::monte_carlo(10_000, 3);
        let r = ptas_correlated(&inst, 0.7, PtasOptions::default(), &cfg).unwrap();
        assert_abs_diff_eq!(
            r.objective.value,
            1.5,
            epsilon = 5.0 * r.objective.half_width.max(1e-12)
        );
    }

    #[test]
    fn log_approx_cycle_is_uniform() {
        let inst = cycle_instance(4, 0.0).unwrap();
        let r = log_approx_graph(&inst, &q()).unwrap();
        assert_abs_diff_eq!(
            r.objective.value,
            std::f64::consts::FRAC_2_SQRT_PI,
            epsilon = 1e-9
        );
        let Allocation::Independent(a) = &r.allocation else {
            panic!()
        };
        assert!(a.stddevs().iter().all(|&s| s == 0.5));
    }

    #[test]
    fn log_approx_pair_and_singletons() {
        let inst = Instance::single_set(vec![0.0, 0.0]).unwrap();
        let r = log_approx_graph(&inst, &q()).unwrap();
        assert!(r.objective.value >= PHI0 - 1e-9);
        let inst = Instance::new(
            3,
            vec![0.2, 0.5, 0.9],
            vec![vec![0], vec![1], vec![2], vec![1]],
        )
        .unwrap();
        let r = log_approx_graph(&inst, &q()).unwrap();
        assert_eq!(r.objective.value, 0.2 + 0.5 + 0.9 + 0.5);
        assert_eq!(r.support_size, 0);
    }

    #[test]
    fn log_approx_correlated_matches_independent() {
        let inst = cycle_instance(4, 0.0).unwrap();
        let cfg = EstimatorConfig::monte_carlo(200_000, 1);
        let r = log_approx_graph_correlated(&inst, &cfg).unwrap();
        let target = std::f64::consts::FRAC_2_SQRT_PI;
        assert!((r.objective.value - target).abs() <= 3.0 * r.objective.half_width);
    }

    #[test]
    fn greedy_examples() {
        let inst = Instance::single_set(vec![0.0; 3]).unwrap();
        let (chosen, e) = greedy_fixed_variance(&inst, 1.0, 1, &q()).unwrap();
        assert_eq!(chosen.len(), 1);
        assert_abs_diff_eq!(e.value, PHI0, epsilon = 1e-12);

        let inst = Instance::new(3, vec![0.3, 0.1, 0.2], vec![vec![0], vec![1, 2]]).unwrap();
        let (chosen, e) = greedy_fixed_variance(&inst, 1.0, 0, &q()).unwrap();
        assert!(chosen.is_empty());
        assert_eq!(e.value, 0.3 + 0.2);
        let (chosen, _) = greedy_fixed_variance(&inst, 1.0, 1, &q()).unwrap();
        assert!(chosen == vec![1] || chosen == vec![2]);
        assert!(greedy_fixed_variance(&inst, 0.6, 2, &q()).is_err());
    }

    #[test]
    fn uniform_examples() {
        let a = uniform_allocation(&cycle_instance(4, 0.0).unwrap());
        assert!(a.stddevs().iter().all(|&s| s == 0.5));
        let a = uniform_allocation(&Instance::single_set(vec![0.0]).unwrap());
        assert_eq!(a.stddevs(), &[1.0]);
        let a = uniform_allocation(&cycle_instance(7, 0.0).unwrap());
        assert_abs_diff_eq!(a.budget_used(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn reports_are_deterministic() {
        let inst = cycle_instance(5, 0.1).unwrap();
        let cfg = EstimatorConfig::monte_carlo(20_000, 9);
        let a = serde_json::to_string(&log_approx_graph(&inst, &cfg).unwrap()).unwrap();
        let b = serde_json::to_string(&log_approx_graph(&inst, &cfg).unwrap()).unwrap();
        assert_eq!(a, b);
    }
}
