//! Acceptance gate. Each criterion runs its registered experiment at full
//! scale and prints one line; the process exits nonzero if any criterion
//! fails. Runs without the libtest harness so the lines are never captured.

use pathctrl_cli::config::{DpConfig, GridConfig, ModelConfig};
use pathctrl_cli::{ExperimentConfig, Registry, RunReport};

/// Wall-clock budget per penalty level for the representation check.
const SECONDS_PER_LEVEL: f64 = 60.0;

fn config(experiment: &str, out: &tempfile::TempDir) -> ExperimentConfig {
    let mut c = ExperimentConfig::new(experiment);
    c.output = out.path().join(experiment);
    c
}

fn fine_benchmark(c: &mut ExperimentConfig) {
    c.grid = Some(GridConfig {
        t_start: 0.0,
        t_end: 1.0,
        n_steps: 50,
    });
    c.paths = Some(100_000);
    c.dp = DpConfig {
        space_points: Some(201),
        quad_nodes: Some(7),
        level_step: None,
    };
}

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(reports: &[RunReport]) -> Verdict {
    let failures: Vec<String> = reports
        .iter()
        .flat_map(|r| {
            r.outcome
                .failures()
                .into_iter()
                .map(move |c| format!("{}/{}: {}", r.manifest.experiment, c.name, c.detail))
        })
        .collect();
    let checks: usize = reports.iter().map(|r| r.outcome.checks.len()).sum();
    let time: f64 = reports.iter().map(|r| r.manifest.wall_time_s).sum();
    Verdict {
        passed: failures.is_empty(),
        detail: if failures.is_empty() {
            format!("{checks} checks in {time:.1} s")
        } else {
            failures.join("; ")
        },
    }
}

fn run(registry: &Registry, cfg: ExperimentConfig) -> RunReport {
    registry.run(&cfg).unwrap_or_else(|e| panic!("{}: {e}", cfg.experiment))
}

fn criterion_1(r: &Registry, out: &tempfile::TempDir) -> Verdict {
    let mut c = config("grid_dp", out);
    fine_benchmark(&mut c);
    c.penalty_ladder = Some(vec![1.0, 4.0, 16.0]);
    let report = run(r, c);
    let per_level = report.manifest.wall_time_s / 3.0;
    let mut v = verdict(std::slice::from_ref(&report));
    if per_level > SECONDS_PER_LEVEL {
        v.passed = false;
        v.detail = format!("{}; {per_level:.1} s per level exceeds {SECONDS_PER_LEVEL} s", v.detail);
    } else {
        v.detail = format!("{}; {per_level:.1} s per level", v.detail);
    }
    v
}

fn criterion_2(r: &Registry, out: &tempfile::TempDir) -> Verdict {
    let mut c = config("penalty_ladder", out);
    fine_benchmark(&mut c);
    c.penalty_ladder = Some(vec![0.0, 1.0, 2.0, 4.0, 8.0, 16.0]);
    verdict(&[run(r, c)])
}

fn criterion_3(r: &Registry, out: &tempfile::TempDir) -> Verdict {
    let reports: Vec<RunReport> = ["toy1d", "transaction"]
        .into_iter()
        .map(|m| {
            let mut c = config("weak_strong", out);
            c.output = out.path().join(format!("weak_strong_{m}"));
            c.model = Some(ModelConfig::named(m));
            c.paths = Some(100_000);
            c.replicates = Some(3);
            run(r, c)
        })
        .collect();
    verdict(&reports)
}

fn criterion_4(r: &Registry, out: &tempfile::TempDir) -> Verdict {
    let mut c = config("convex_order", out);
    c.paths = Some(100_000);
    c.p_ladder = Some(vec![2.0, 8.0]);
    verdict(&[run(r, c)])
}

fn criterion_5(r: &Registry, out: &tempfile::TempDir) -> Verdict {
    let mut c = config("degenerate_ladder", out);
    c.p_ladder = Some(vec![2.0, 4.0, 8.0, 16.0]);
    c.replicates = Some(3);
    verdict(&[run(r, c)])
}

fn criterion_6(r: &Registry, out: &tempfile::TempDir) -> Verdict {
    verdict(&[run(r, config("transaction_demo", out))])
}

fn criterion_7(r: &Registry, out: &tempfile::TempDir) -> Verdict {
    verdict(&[run(r, config("facelift", out))])
}

fn criterion_8(r: &Registry, out: &tempfile::TempDir) -> Verdict {
    verdict(&[run(r, config("regularity", out))])
}

fn criterion_9(r: &Registry, out: &tempfile::TempDir) -> Verdict {
    verdict(&[run(r, config("unit_exactness", out))])
}

fn criterion_10(r: &Registry, out: &tempfile::TempDir) -> Verdict {
    verdict(&[run(r, config("dpp_residual", out))])
}

fn main() {
    let registry = Registry::with_builtin();
    let out = tempfile::tempdir().unwrap();
    type Criterion = fn(&Registry, &tempfile::TempDir) -> Verdict;
    let criteria: [(&str, Criterion); 10] = [
        ("representation: LSMC Y0(n) vs grid DP v^n", criterion_1),
        ("monotone penalization and singular limit", criterion_2),
        ("strong/weak equivalence", criterion_3),
        ("convex order of perturbed chains", criterion_4),
        ("degenerate ladder over p", criterion_5),
        ("transaction-model algebra", criterion_6),
        ("face-lift suite", criterion_7),
        ("regularity", criterion_8),
        ("unit exactness", criterion_9),
        ("DPP residual", criterion_10),
    ];
    let mut failed = Vec::new();
    for (i, (name, check)) in criteria.iter().enumerate() {
        let v = check(&registry, &out);
        println!("[{}] criterion {:>2} {name}: {}", if v.passed { "PASS" } else { "FAIL" }, i + 1, v.detail);
        if !v.passed {
            failed.push(i + 1);
        }
    }
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
