//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so the lines are always printed.

use std::time::{Duration, Instant};

use rand::Rng;

use clusterboot::asymptotics::ks_to_normal;
use clusterboot::bootstrap::{
    analytic_moments, enumerate_bootstrap, run_bootstrap, BootstrapOptions, IntervalKind,
    SchemeTag, Statistic,
};
use clusterboot::estimators::{between_mean_variance, summarize};
use clusterboot::model::{
    generate_sample, subsample_sizes, ClusterDataset, DesignParams, DistFamily, TruthParams,
};
use clusterboot::montecarlo::{
    exact_scheme_comparison, rate_table, run_experiment, scheme_comparison, write_metric_csv,
    ExperimentConfig,
};
use clusterboot::numeric::sort_floats;
use clusterboot::rng::substream;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

fn d0() -> ClusterDataset {
    ClusterDataset::from_values(vec![vec![1.0, 3.0], vec![2.0, 6.0]]).unwrap()
}

/// D0 followed by five random datasets with `K <= 3` and `n_k <= 3`.
fn tiny_datasets() -> Vec<ClusterDataset> {
    let mut rng = substream(2024, &[]);
    let mut out = vec![d0()];
    for _ in 0..5 {
        let k = rng.random_range(2..=3);
        let values = (0..k)
            .map(|_| {
                let n = rng.random_range(2..=3);
                (0..n).map(|_| rng.random_range(-5.0..5.0)).collect()
            })
            .collect();
        out.push(ClusterDataset::from_values(values).unwrap());
    }
    out
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut checks = 0;
    for data in tiny_datasets() {
        let summary = summarize(&data).unwrap();
        let k = summary.k() as f64;
        let between = between_mean_variance(&summary).unwrap();
        let intra: f64 = summary
            .sizes
            .iter()
            .zip(&summary.variances)
            .map(|(&n, &v)| v / n as f64)
            .sum::<f64>()
            / (k * k);
        for scheme in SchemeTag::ALL {
            let law = enumerate_bootstrap(&data, scheme, BootstrapOptions::default()).unwrap();
            let closed = analytic_moments(&summary, scheme);
            worst = worst.max((law.total_probability() - 1.0).abs());
            for stat in [Statistic::MuN, Statistic::MuPrimeK] {
                worst = worst.max(rel_err(law.mean(stat), closed.mean(stat)));
                checks += 1;
                if let Some(v) = closed.variance(stat) {
                    worst = worst.max(rel_err(law.variance(stat), v));
                    checks += 1;
                }
            }
            if scheme == SchemeTag::B3Cluster {
                let residual =
                    law.variance(Statistic::MuPrimeK) - (k - 1.0) / (k * k) * between - intra;
                worst = worst.max(residual.abs() / intra);
                checks += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    outcome(
        worst <= 1e-10 && elapsed < Duration::from_secs(10),
        format!(
            "enumeration vs closed forms on 6 tiny datasets: {checks} checks, max rel err {worst:.2e}, {:.2} s",
            elapsed.as_secs_f64()
        ),
    )
}

/// Balanced design with `K = 50`, `n_k = 4`.
fn balanced_50x4() -> DesignParams {
    let design = DesignParams::balanced(50, 0.25, 1.5);
    assert!(subsample_sizes(&design).unwrap().iter().all(|&n| n == 4));
    design
}

fn criterion_2() -> (Outcome, Vec<u8>) {
    let start = Instant::now();
    let config = ExperimentConfig::new(
        TruthParams::gaussian(1.0, 1.0, 1.0),
        vec![balanced_50x4()],
        10_000,
        1,
        20,
    )
    .with_schemes(&[]);
    let report = run_experiment(&config).unwrap();
    let g = &report.grid[0];
    let mut pass = true;
    let mut parts = Vec::new();
    for name in ["mu_hat_N", "mu_hat_prime_K", "sigma2_hat", "gamma_hat"] {
        let e = g.estimator(name).unwrap();
        let z = e.z_score().unwrap();
        pass &= z.abs() <= 3.0;
        parts.push(format!("{name} {:.4} (z {z:+.2})", e.mean));
    }
    let elapsed = start.elapsed();
    pass &= elapsed < Duration::from_secs(60);
    (
        outcome(
            pass,
            format!("{}, {:.1} s", parts.join(", "), elapsed.as_secs_f64()),
        ),
        serde_json::to_vec_pretty(&report).unwrap(),
    )
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let config = ExperimentConfig::new(
        TruthParams::gaussian(1.0, 1.0, 1.0),
        vec![balanced_50x4()],
        100_000,
        1,
        30,
    )
    .with_schemes(&[]);
    let report = run_experiment(&config).unwrap();
    let g = &report.grid[0];
    let r_n = g.variance("mu_hat_N").unwrap().ratio.unwrap();
    let r_p = g.variance("mu_hat_prime_K").unwrap().ratio.unwrap();
    let elapsed = start.elapsed();
    let inside = |r: f64| (0.95..=1.05).contains(&r);
    outcome(
        inside(r_n) && inside(r_p) && elapsed < Duration::from_secs(300),
        format!(
            "Var(mu_hat_N)/S2_N = {r_n:.4}, Var(mu_hat'_K)/S'2_K = {r_p:.4}, {:.1} s",
            elapsed.as_secs_f64()
        ),
    )
}

fn ks_of(mut values: Vec<f64>) -> f64 {
    sort_floats(&mut values);
    ks_to_normal(&values).unwrap()
}

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let gaussian = TruthParams::gaussian(0.0, 1.0, 1.0);
    let design = DesignParams::new(200, 0.4, vec![1.0, 2.0]);
    let mut pass = true;
    let mut parts = Vec::new();

    let cfg = ExperimentConfig::new(gaussian.clone(), vec![design.clone()], 5_000, 1, 41)
        .with_schemes(&[]);
    let g = run_experiment(&cfg).unwrap().grid.remove(0);
    let ks_t = g.normality("t_N").unwrap().ks_to_normal.unwrap();
    let cov = g.normal_coverage[0].1.coverage.unwrap();
    pass &= ks_t < 0.03 && (0.93..=0.97).contains(&cov);
    parts.push(format!(
        "t_N KS {ks_t:.4} (<0.03), normal coverage {cov:.3}"
    ));

    let cfg = ExperimentConfig::new(gaussian.clone(), vec![design.clone()], 10_000, 1, 42)
        .with_schemes(&[]);
    let g = run_experiment(&cfg).unwrap().grid.remove(0);
    let critical = 1.63 / 100.0;
    let ks_intra = g.normality("t_intra").unwrap().ks_to_normal.unwrap();
    let ks_inter = g.normality("t_inter").unwrap().ks_to_normal.unwrap();
    pass &= ks_intra < critical && ks_inter < critical;
    parts.push(format!(
        "t_intra KS {ks_intra:.4}, t_inter KS {ks_inter:.4} (<{critical:.4})"
    ));

    let mut skewed = gaussian.clone();
    skewed.effect_dist = DistFamily::ShiftedExponential;
    let grid = [25, 50, 100, 200]
        .iter()
        .map(|&k| DesignParams::new(k, 0.4, vec![1.0, 2.0]))
        .collect();
    let cfg = ExperimentConfig::new(skewed, grid, 10_000, 1, 43).with_schemes(&[]);
    let ks: Vec<f64> = run_experiment(&cfg)
        .unwrap()
        .grid
        .iter()
        .map(|g| g.normality("t_N").unwrap().ks_to_normal.unwrap())
        .collect();
    let inversions = ks.windows(2).filter(|w| w[1] > w[0]).count();
    pass &= inversions <= 1;
    parts.push(format!(
        "t_N KS along K=25..200 (skewed effects) {:?} with {inversions} inversion(s)",
        ks.iter().map(|d| format!("{d:.4}")).collect::<Vec<_>>()
    ));

    let data = generate_sample(&gaussian, &design, 44).unwrap().dataset;
    let summary = summarize(&data).unwrap();
    let b = 100_000;
    let opts = BootstrapOptions::default();
    let mut cond = Vec::new();
    for scheme in SchemeTag::ALL {
        let run = run_bootstrap(&data, scheme, b, 45, opts).unwrap();
        let closed = analytic_moments(&summary, scheme);
        let stat = scheme.target();
        let center = closed.mean(stat);
        let values: Vec<f64> = match scheme {
            SchemeTag::B2Individuals | SchemeTag::B3Cluster => {
                let sd = closed.variance(stat).unwrap().sqrt();
                run.stats
                    .iter()
                    .map(|r| (r.value(stat) - center) / sd)
                    .collect()
            }
            SchemeTag::B1Uniform | SchemeTag::B1Weighted => run
                .stats
                .iter()
                .map(|r| (r.value(stat) - center) / r.scale)
                .collect(),
        };
        let d = ks_of(values);
        pass &= d < 0.02;
        cond.push(format!("{} {d:.4}", scheme.short_name()));
    }
    parts.push(format!(
        "conditional KS at B=1e5: {} (<0.02)",
        cond.join(", ")
    ));

    let elapsed = start.elapsed();
    pass &= elapsed < Duration::from_secs(600);
    parts.push(format!("{:.1} s", elapsed.as_secs_f64()));
    outcome(pass, parts.join("; "))
}

fn criterion_5_config() -> ExperimentConfig {
    ExperimentConfig::new(
        TruthParams::gaussian(0.0, 1.0, 4.0),
        vec![DesignParams::balanced(100, 0.4, 0.5)],
        2_000,
        999,
        50,
    )
}

fn criterion_5() -> (Outcome, Vec<u8>) {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for data in tiny_datasets() {
        let rows = exact_scheme_comparison(&data, BootstrapOptions::default()).unwrap();
        let b3 = rows
            .iter()
            .find(|r| r.scheme == SchemeTag::B3Cluster)
            .unwrap();
        worst = worst.max(rel_err(b3.excess_over_b1u, b3.intra_mu_prime_K));
        let b1u = rows
            .iter()
            .find(|r| r.scheme == SchemeTag::B1Uniform)
            .unwrap();
        worst = worst.max((b1u.ratio_to_b1u_target - 1.0).abs());
    }
    let comparison = scheme_comparison(&criterion_5_config()).unwrap();
    let b3 = comparison.row(100, SchemeTag::B3Cluster).unwrap();
    let cov = b3.coverage_bootstrap_t.unwrap();
    let mut csv = Vec::new();
    write_metric_csv(&comparison.metric_rows(), &mut csv).unwrap();
    let pass = worst <= 1e-10 && cov - 0.95 >= 0.02;
    (
        outcome(
            pass,
            format!(
                "B3 excess over B1-uniform = intra variance, max rel err {worst:.2e}; \
                 B3 bootstrap-t coverage {cov:.4} at K=100, R=2000 (needs >= 0.97); \
                 variance ratio to target {:.3}; {:.1} s",
                b3.ratio_to_target,
                start.elapsed().as_secs_f64()
            ),
        ),
        csv,
    )
}

fn criterion_6() -> Outcome {
    let start = Instant::now();
    let mut truth = TruthParams::gaussian(0.0, 1.0, 4.0);
    truth.effect_dist = DistFamily::ShiftedExponential;
    truth.noise_dist = DistFamily::ShiftedExponential;
    let grid = [25, 50, 100, 200]
        .iter()
        .map(|&k| DesignParams::new(k, 0.4, vec![1.0, 2.0]))
        .collect();
    let config = ExperimentConfig::new(truth, grid, 10_000, 999, 60);
    let table = rate_table(&config).unwrap();
    let rows: Vec<String> = table
        .rows
        .iter()
        .map(|r| {
            format!(
                "K={} scaled {:.2} <= {:.2}, |F-Phi| {:.4} -> {:.4}",
                r.k,
                r.scaled_average,
                r.bound.scaled,
                r.quantile_checks
                    .iter()
                    .map(|q| q.uncorrected_error)
                    .sum::<f64>(),
                r.quantile_checks
                    .iter()
                    .map(|q| q.corrected_error)
                    .sum::<f64>(),
            )
        })
        .collect();
    let elapsed = start.elapsed();
    let improved = table.improved_points();
    outcome(
        table.all_within_bound() && improved >= 3 && elapsed < Duration::from_secs(1800),
        format!(
            "{}; corrected quantile better at {improved}/4 grid points; {:.1} s",
            rows.join("; "),
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_7() -> Outcome {
    let start = Instant::now();
    let config = ExperimentConfig::new(
        TruthParams::gaussian(1.0, 1.0, 1.0),
        vec![DesignParams::new(100, 0.4, vec![1.0, 2.0])],
        2_000,
        999,
        70,
    )
    .with_schemes(&[SchemeTag::B1Weighted, SchemeTag::B2Individuals]);
    let report = run_experiment(&config).unwrap();
    let g = &report.grid[0];
    let cov = |s: SchemeTag| {
        g.scheme(s)
            .unwrap()
            .coverage_of(IntervalKind::BootstrapT)
            .unwrap()
            .coverage
            .unwrap()
    };
    let w = cov(SchemeTag::B1Weighted);
    let b2 = cov(SchemeTag::B2Individuals);
    let inside = |c: f64| (0.93..=0.97).contains(&c);
    outcome(
        inside(w) && inside(b2),
        format!(
            "bootstrap-t coverage: B1 weighted for mu {w:.4}, B2 for the conditional mean {b2:.4} \
             (target 0.95 +/- 0.02); {:.1} s",
            start.elapsed().as_secs_f64()
        ),
    )
}

fn criterion_8(first_c2: &[u8], first_c5: &[u8]) -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(3)
        .build()
        .unwrap();
    let (again_c2, again_c5) = pool.install(|| (criterion_2().1, criterion_5().1));
    let mut identical = true;
    for (name, a, b) in [
        ("c2.json", first_c2, again_c2.as_slice()),
        ("c5.csv", first_c5, again_c5.as_slice()),
    ] {
        let pa = dir.path().join(format!("first-{name}"));
        let pb = dir.path().join(format!("second-{name}"));
        std::fs::write(&pa, a).unwrap();
        std::fs::write(&pb, b).unwrap();
        identical &= std::fs::read(&pa).unwrap() == std::fs::read(&pb).unwrap();
    }
    outcome(
        identical,
        format!(
            "criterion 2 report and criterion 5 table re-run on a 3-thread pool: {} ({} + {} bytes); {:.1} s",
            if identical { "byte-identical" } else { "DIFFERENT" },
            first_c2.len(),
            first_c5.len(),
            start.elapsed().as_secs_f64()
        ),
    )
}

fn main() {
    // Honour `cargo test -- --list` and name filters from the libtest CLI.
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let filters: Vec<&String> = args.iter().filter(|a| !a.starts_with('-')).collect();
    if !filters.is_empty() && !filters.iter().any(|f| "acceptance".contains(f.as_str())) {
        return;
    }

    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut report = |id: usize, name: &'static str, o: Outcome| {
        println!(
            "criterion {id} [{}] {name}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        results.push((id, name, o));
    };
    report(1, "enumeration-exact bootstrap moments", criterion_1());
    let (c2, c2_bytes) = criterion_2();
    report(2, "estimator unbiasedness", c2);
    report(3, "variance formulas", criterion_3());
    report(4, "normality", criterion_4());
    let (c5, c5_bytes) = criterion_5();
    report(5, "two-stage bootstrap inconsistency", c5);
    report(6, "second-order behaviour", criterion_6());
    report(7, "bootstrap-t coverage", criterion_7());
    report(8, "determinism", criterion_8(&c2_bytes, &c5_bytes));

    let failed: Vec<usize> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    println!(
        "acceptance: {} of {} criteria passed",
        results.len() - failed.len(),
        results.len()
    );
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
