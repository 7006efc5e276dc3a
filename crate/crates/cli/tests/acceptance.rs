//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails.

use std::f64::consts::PI;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::Rng;
use varalloc::analysis::{self, Claim};
use varalloc::instances::{erdos_renyi_instance, AllocationVector, Instance};
use varalloc::rng::{derive_seed, rng_for};
use varalloc::solvers::{self, PtasOptions};
use varalloc::{
    cycle_instance, expected_max_independent, expected_max_pair, expected_max_with_floor,
    graph_objective, EstimatorConfig, GaussianVector,
};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

const SQRT_4_OVER_PI: f64 = std::f64::consts::FRAC_2_SQRT_PI;

fn oracle_exactness() -> Outcome {
    let mut rng = rng_for(0, "acceptance-oracle", 0);
    let quad = EstimatorConfig::quadrature();
    let mut worst_sigmas: f64 = 0.0;
    let mut worst_quad: f64 = 0.0;
    let mut failures = 0;
    for t in 0..100u64 {
        let mc =
            EstimatorConfig::monte_carlo(10_000_000, derive_seed(0, "acceptance-oracle-mc", t));
        let (exact, v) = if t % 2 == 0 {
            let mu = rng.random_range(-2.0..2.0);
            let sigma = rng.random_range(0.05..2.0);
            // Within three standard deviations, so some samples land on each side.
            let floor = mu + sigma * rng.random_range(-3.0..3.0);
            let v = GaussianVector::new(vec![mu, floor], vec![sigma, 0.0]).map_err(err)?;
            (expected_max_with_floor(mu, sigma, floor).map_err(err)?, v)
        } else {
            let (m1, m2) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            let (s1, s2) = (rng.random_range(0.0..2.0), rng.random_range(0.05..2.0));
            let v = GaussianVector::new(vec![m1, m2], vec![s1, s2]).map_err(err)?;
            (expected_max_pair(m1, s1, m2, s2).map_err(err)?, v)
        };
        let est = expected_max_independent(&v, &mc).map_err(err)?;
        let diff = (est.value - exact).abs();
        worst_sigmas = worst_sigmas.max(diff / est.half_width);
        if diff > 3.0 * est.half_width {
            failures += 1;
        }
        let q = expected_max_independent(&v, &quad).map_err(err)?.value;
        worst_quad = worst_quad.max((q - exact).abs());
    }
    check(
        failures == 0 && worst_quad <= 1e-7,
        format!(
            "100 inputs, worst |MC - exact| = {worst_sigmas:.2} half-widths (limit 3), worst |quad - exact| = {worst_quad:.1e} (limit 1e-7)"
        ),
    )
}

fn cycle_optimum() -> Outcome {
    let quad = EstimatorConfig::quadrature();
    let mut parts = Vec::new();
    let mut ok = true;
    for n in [3usize, 4, 6] {
        let inst = cycle_instance(n, 0.0).map_err(err)?;
        let uniform = solvers::uniform_allocation(&inst);
        let value = graph_objective(&inst, &uniform, &quad).map_err(err)?.value;
        let target = n as f64 * (1.0 / (2.0 * PI)).sqrt() * (2.0 / n as f64).sqrt();
        let brute =
            solvers::brute_force_grid(&inst, 0.25, &EstimatorConfig::default()).map_err(err)?;
        let gain = brute.objective.value - value;
        ok &= (value - target).abs() <= 1e-6 && gain <= 1e-6;
        parts.push(format!(
            "n={n}: {value:.7} vs {target:.7}, grid gain {gain:.1e}"
        ));
    }
    check(ok, parts.join("; "))
}

fn ptas_containment() -> Outcome {
    let cfg = EstimatorConfig::default();
    let mut rng = rng_for(0, "acceptance-ptas", 0);
    let mut worst = f64::INFINITY;
    let mut runs = 0;
    for &eps in &[0.35, 0.5] {
        for n in 1..=4usize {
            for _ in 0..3 {
                let means: Vec<f64> = (0..n).map(|_| rng.random()).collect();
                let inst = Instance::single_set(means).map_err(err)?;
                let step = eps * eps * eps;
                let ptas = solvers::ptas_independent(&inst, eps, PtasOptions::default(), &cfg)
                    .map_err(err)?;
                let brute = solvers::brute_force_grid(&inst, step, &cfg).map_err(err)?;
                worst = worst.min(ptas.objective.value - brute.objective.value);
                runs += 1;
            }
        }
    }
    check(
        worst >= -1e-6,
        format!("{runs} instances (n <= 4, eps in {{0.35, 0.5}}), min(ptas - brute) = {worst:.1e} (limit -1e-6)"),
    )
}

fn correlated_dominance() -> Outcome {
    let inst = Instance::single_set(vec![0.0, 0.0]).map_err(err)?;
    let opts = PtasOptions {
        grid_step: Some(0.25),
        node_budget: None,
    };
    let r = solvers::ptas_correlated(&inst, 0.7, opts, &EstimatorConfig::default()).map_err(err)?;
    let target = 0.564_189_6;
    check(
        r.objective.value >= target - r.objective.half_width,
        format!(
            "objective {:.7} +/- {:.1e} vs {target} ({} candidates)",
            r.objective.value, r.objective.half_width, r.candidates
        ),
    )
}

fn greedy_guarantee() -> Outcome {
    use itertools::Itertools;
    let cfg = EstimatorConfig::default();
    let factor = 1.0 - (-1.0f64).exp();
    let mut rng = rng_for(0, "acceptance-greedy", 0);
    let mut violations = 0;
    let mut worst_ratio = f64::INFINITY;
    for t in 0..50u64 {
        let n = rng.random_range(3..=10usize);
        let m = rng.random_range(1..=12usize);
        let p = rng.random_range(0.2..0.7);
        let inst = erdos_renyi_instance(n, m, p, derive_seed(0, "acceptance-greedy-instance", t))
            .map_err(err)?;
        let c = rng.random_range(1..=n.min(4));
        let level = 1.0 / c as f64;
        let (_, greedy) = solvers::greedy_fixed_variance(&inst, level, c, &cfg).map_err(err)?;
        let mut best = f64::NEG_INFINITY;
        for subset in (0..n).combinations(c) {
            let mut s = vec![0.0; n];
            subset.iter().for_each(|&i| s[i] = level.sqrt());
            let alloc = AllocationVector::new(s).map_err(err)?;
            best = best.max(graph_objective(&inst, &alloc, &cfg).map_err(err)?.value);
        }
        if greedy.value < factor * best - greedy.half_width {
            violations += 1;
        }
        if best > 0.0 {
            worst_ratio = worst_ratio.min(greedy.value / best);
        }
    }
    check(
        violations == 0,
        format!("50 instances, {violations} violations, worst greedy/exhaustive = {worst_ratio:.4} (bound {factor:.4})"),
    )
}

fn log_approx_sanity() -> Outcome {
    let inst = cycle_instance(4, 0.0).map_err(err)?;
    let exact = solvers::log_approx_graph(&inst, &EstimatorConfig::default()).map_err(err)?;
    let mc = solvers::log_approx_graph(&inst, &EstimatorConfig::monte_carlo(2_000_000, 0))
        .map_err(err)?;
    let exact_ok =
        (exact.objective.value - SQRT_4_OVER_PI).abs() <= exact.objective.half_width + 1e-9;
    let mc_ok = (mc.objective.value - SQRT_4_OVER_PI).abs() <= mc.objective.half_width;
    let singles = Instance::new(
        4,
        vec![0.1, 0.7, 0.25, 1.5],
        vec![vec![0], vec![1], vec![2], vec![3]],
    )
    .map_err(err)?;
    let r = solvers::log_approx_graph(&singles, &EstimatorConfig::monte_carlo(10_000, 0))
        .map_err(err)?;
    let sum = 0.1 + 0.7 + 0.25 + 1.5;
    check(
        exact_ok && mc_ok && r.objective.value == sum,
        format!(
            "cycle-4 exact {:.7}, Monte Carlo {:.5} +/- {:.1e} vs {SQRT_4_OVER_PI:.7}; singletons {} vs {sum}",
            exact.objective.value, mc.objective.value, mc.objective.half_width, r.objective.value
        ),
    )
}

fn inequality_suite() -> Outcome {
    let mut parts = Vec::new();
    let mut ok = true;
    for claim in [
        Claim::Lipschitz,
        Claim::MaxFloorBound,
        Claim::Var2Approx,
        Claim::CorrelationGap,
        Claim::SubmodularG,
        Claim::MaxInequalities,
    ] {
        let r = claim.run_default(0).map_err(err)?;
        ok &= r.passed();
        parts.push(format!("{} {}/{}", claim.name(), r.violations, r.trials));
    }
    check(ok, format!("violations/trials: {}", parts.join(", ")))
}

fn concavity() -> Outcome {
    let table = analysis::concavity_sweep(8, &EstimatorConfig::default()).map_err(err)?;
    let mut worst = f64::NEG_INFINITY;
    let mut curves = 0;
    for stat in table.statistics() {
        if stat.starts_with("f:corr") {
            continue;
        }
        let f: Vec<f64> = table.series(stat).iter().map(|r| r.1).collect();
        worst = analysis::concavity_margins(&f)
            .into_iter()
            .fold(worst, f64::max);
        curves += 1;
    }
    check(
        worst <= analysis::CONCAVITY_TOL,
        format!("{curves} curves at n=8, largest f(k)+f(k-2)-2f(k-1) = {worst:.2e} (limit 1e-6)"),
    )
}

fn concentration() -> Outcome {
    let p: Vec<f64> = (1..=8).map(|i| i as f64 / 8.0).collect();
    let seeds: Vec<u64> = (0..20).map(|i| derive_seed(0, "instance", i)).collect();
    let table = analysis::concentration_profile(8, 32, &p, &seeds, &EstimatorConfig::default())
        .map_err(err)?;
    let counts = table.series("count");
    let mut inversions = 0;
    let mut unexplained = 0;
    for w in counts.windows(2) {
        if w[1].1 > w[0].1 {
            inversions += 1;
            if w[1].1 - w[0].1 > w[0].2 + w[1].2 {
                unexplained += 1;
            }
        }
    }
    let shown: Vec<String> = counts.iter().map(|c| format!("{:.2}", c.1)).collect();
    check(
        inversions <= 1 && unexplained == 0,
        format!(
            "counts over p = 1/8..1: [{}], {inversions} inversions ({unexplained} beyond CI)",
            shown.join(", ")
        ),
    )
}

fn chaining_scaling() -> Outcome {
    let r = Claim::EpsContribution.run_default(0).map_err(err)?;
    let fitted: Vec<String> = r.details.iter().map(|d| format!("{:.3}", d.lhs)).collect();
    let ratio = r.statistic.unwrap_or(f64::INFINITY);
    check(
        ratio <= analysis::CHAINING_RATIO_LIMIT,
        format!(
            "C(eps) for eps = 1/2..1/16: [{}], max/min = {ratio:.3} (limit 2)",
            fitted.join(", ")
        ),
    )
}

fn run_cli(dir: &Path, args: &[&str]) -> Result<Vec<u8>, String> {
    let out = dir.join("out");
    let status = Command::new(env!("CARGO_BIN_EXE_varalloc"))
        .current_dir(dir)
        .args(args)
        .arg("--out")
        .arg(&out)
        .status()
        .map_err(err)?;
    if !status.success() {
        return Err(format!("`{}` exited with {status}", args.join(" ")));
    }
    std::fs::read(&out).map_err(err)
}

fn reproducibility() -> Outcome {
    let dir = tempfile::tempdir().map_err(err)?;
    let d = dir.path();
    let setup: [&[&str]; 2] = [
        &["generate", "cycle", "--n", "4", "--mu", "0.5"],
        &[
            "generate",
            "erdos-renyi",
            "--n",
            "6",
            "--m",
            "5",
            "--p",
            "0.4",
            "--seed",
            "3",
        ],
    ];
    std::fs::write(d.join("cycle.json"), run_cli(d, setup[0])?).map_err(err)?;
    std::fs::write(d.join("er.json"), run_cli(d, setup[1])?).map_err(err)?;
    std::fs::write(
        d.join("pair.json"),
        b"{\"n\":2,\"means\":[0,0],\"sets\":[[0,1]]}",
    )
    .map_err(err)?;
    std::fs::write(
        d.join("report.json"),
        run_cli(
            d,
            &[
                "solve",
                "log-approx",
                "--in",
                "er.json",
                "--method",
                "monte_carlo",
                "--mc-samples",
                "20000",
            ],
        )?,
    )
    .map_err(err)?;
    let commands: Vec<&[&str]> = vec![
        setup[0],
        setup[1],
        &["generate", "complete-k", "--n", "5", "--k", "3"],
        &["solve", "uniform", "--in", "cycle.json"],
        &["solve", "ptas-ind", "--in", "pair.json", "--eps", "0.5"],
        &[
            "solve",
            "ptas-corr",
            "--in",
            "pair.json",
            "--eps",
            "0.7",
            "--grid-step",
            "0.25",
            "--mc-samples",
            "50000",
            "--seed",
            "7",
        ],
        &[
            "solve",
            "log-approx",
            "--in",
            "er.json",
            "--method",
            "monte_carlo",
            "--mc-samples",
            "20000",
        ],
        &[
            "solve",
            "log-approx",
            "--in",
            "er.json",
            "--correlated",
            "--mc-samples",
            "20000",
        ],
        &[
            "solve",
            "brute-force",
            "--in",
            "cycle.json",
            "--grid-step",
            "0.25",
        ],
        &["evaluate", "--in", "er.json", "--alloc", "report.json"],
        &["verify", "correlation-gap", "--seed", "5"],
        &["sweep", "concavity", "--n", "5", "--mc-samples", "20000"],
        &[
            "sweep",
            "concentration",
            "--n",
            "5",
            "--m",
            "6",
            "--seeds",
            "3",
            "--seed",
            "2",
        ],
    ];
    let mut differing = Vec::new();
    for args in &commands {
        if run_cli(d, args)? != run_cli(d, args)? {
            differing.push(args.join(" "));
        }
    }
    check(
        differing.is_empty(),
        if differing.is_empty() {
            format!(
                "{} commands run twice, outputs byte-identical",
                commands.len()
            )
        } else {
            format!("outputs differ for: {}", differing.join("; "))
        },
    )
}

fn main() {
    let criteria: [Criterion; 11] = [
        ("oracle exactness", oracle_exactness),
        ("cycle optimum", cycle_optimum),
        ("ptas containment", ptas_containment),
        ("correlated dominance", correlated_dominance),
        ("greedy guarantee", greedy_guarantee),
        ("log-approx sanity", log_approx_sanity),
        ("inequality suite", inequality_suite),
        ("concavity", concavity),
        ("concentration", concentration),
        ("chaining-bound scaling", chaining_scaling),
        ("cli reproducibility", reproducibility),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let outcome = f();
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS [{:>2}] {name}: {detail} ({secs:.1}s)", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL [{:>2}] {name}: {detail} ({secs:.1}s)", i + 1);
            }
        }
    }
    println!(
        "acceptance: {} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
