//! Acceptance gate: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails. Runs as a plain binary so the lines always print.
//!
//! Criteria 6-8 train real models and take a few minutes on one core.

use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::Instant;

use conlearn_harness::config::{ConfigFile, Overrides};
use conlearn_harness::grid::{run_grid, single_cell, GridOutcome};
use conlearn_harness::record::Record;
use conlearn_harness::selftest;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn load(name: &str) -> ConfigFile {
    ConfigFile::load(&configs().join(name)).expect("shipped config parses")
}

fn quiet(_: &conlearn_harness::config::RunConfig, _: &conlearn_harness::runner::RunResult) {}

fn baseline_overrides() -> Overrides {
    Overrides {
        loss: Some("none".into()),
        mechanism: Some("none".into()),
        ..Overrides::default()
    }
}

/// Runs one config's `[method]` cell over its seeds.
fn run_cell(file: &ConfigFile, o: &Overrides) -> (GridOutcome, f64) {
    let (cell, seeds) = file.to_runs(o).expect("valid cell");
    let t = Instant::now();
    let out = run_grid(&single_cell(cell, seeds), 1, &quiet).expect("grid runs");
    (out, t.elapsed().as_secs_f64())
}

fn aggregate(out: &GridOutcome) -> &Record {
    out.records.iter().find(|r| r.is_aggregate()).expect("aggregate row")
}

struct Line {
    id: u32,
    name: &'static str,
    passed: bool,
    detail: String,
}

fn from_selftest(id: u32, r: selftest::CheckReport) -> Line {
    Line {
        id,
        name: r.name,
        passed: r.passed,
        detail: format!("{} in {:.2}s (limit {:.0}s)", r.detail, r.seconds, r.budget_seconds),
    }
}

struct SteBaseline {
    main: f64,
    violation: f64,
}

fn ste_baseline(lines: &mut Vec<Line>) -> SteBaseline {
    let (out, secs) = run_cell(&load("ste_baseline.toml"), &Overrides::default());
    let agg = aggregate(&out);
    let ok = out.failures() == 0 && agg.main_metric > 0.60 && agg.violation_rate > 0.15 && secs < 600.0;
    lines.push(Line {
        id: 6,
        name: "ste baseline band",
        passed: ok,
        detail: format!(
            "token acc {:.4} (> 0.60), violation {:.4} (> 0.15), {} seeds, {secs:.0}s (limit 600s)",
            agg.main_metric,
            agg.violation_rate,
            out.runs.len()
        ),
    });
    SteBaseline {
        main: agg.main_metric,
        violation: agg.violation_rate,
    }
}

fn ste_injection(base: &SteBaseline) -> Line {
    let (out, secs) = run_cell(&load("ste_best.toml"), &Overrides::default());
    let agg = aggregate(&out);
    let reduction = 1.0 - agg.violation_rate / base.violation;
    let ok = out.failures() == 0 && reduction >= 0.30 && agg.main_metric >= base.main - 0.05 && secs < 1800.0;
    Line {
        id: 7,
        name: "ste real + sampling-10 + proj-both",
        passed: ok,
        detail: format!(
            "violation {:.4} vs {:.4} ({:.1}% lower, need 30%), token acc {:.4} vs {:.4} (floor {:.4}), {secs:.0}s (limit 1800s)",
            agg.violation_rate,
            base.violation,
            100.0 * reduction,
            agg.main_metric,
            base.main,
            base.main - 0.05
        ),
    }
}

fn hier_psl() -> Line {
    let file = load("hierlabel_psl.toml");
    let t = Instant::now();
    let (base, _) = run_cell(&file, &baseline_overrides());
    let (con, _) = run_cell(&file, &Overrides::default());
    let secs = t.elapsed().as_secs_f64();
    let (b, c) = (aggregate(&base), aggregate(&con));
    let reduction = 1.0 - c.violation_rate / b.violation_rate;
    let gap = (c.main_metric - b.main_metric).abs();
    let ok = base.failures() + con.failures() == 0
        && reduction >= 0.50
        && gap <= 0.03
        && secs < 300.0
        && con.runs.len() == 5;
    Line {
        id: 8,
        name: "hierlabel soft + exhaustive + static",
        passed: ok,
        detail: format!(
            "violation {:.4} vs {:.4} ({:.1}% lower, need 50%), subset acc {:.4} vs {:.4} (gap {gap:.4}, limit 0.03), {secs:.1}s (limit 300s)",
            c.violation_rate,
            b.violation_rate,
            100.0 * reduction,
            c.main_metric,
            b.main_metric
        ),
    }
}

fn monotone_trace() -> Line {
    let grid = load("monotone_grid.toml").to_grid(&Overrides::default()).expect("valid grid");
    let out = run_grid(&grid, 1, &quiet).expect("grid runs");
    let mut bad = Vec::new();
    let mut steps = 0;
    for r in &out.runs {
        let l = &r.result.trace.lambdas;
        steps += l.len();
        let starts_at_zero = l.first() == Some(&0.0);
        let monotone = l.windows(2).all(|w| w[1] >= w[0]);
        if !starts_at_zero || !monotone || r.result.status.label() != "ok" {
            let c = &grid.cells[r.cell];
            bad.push(format!("{} {} seed {}", c.method.loss_label(), c.method.strategy_label(), r.seed));
        }
    }
    let finals: Vec<f64> = out.runs.iter().map(|r| r.result.lambda_final).collect();
    let grew = finals.iter().any(|&l| l > 0.0);
    Line {
        id: 9,
        name: "monotone lambda trace",
        passed: bad.is_empty() && grew && !out.runs.is_empty(),
        detail: if bad.is_empty() {
            format!(
                "{} runs, {steps} recorded weights, all start at 0 and never decrease; final lambda up to {:.4}",
                out.runs.len(),
                finals.iter().copied().fold(0.0, f64::max)
            )
        } else {
            format!("violations in {}", bad.join(", "))
        },
    }
}

/// Every column except the cell identity and the wall clock.
fn comparable(r: &Record) -> String {
    let mut r = r.clone();
    r.loss_type.clear();
    r.strategy.clear();
    r.k = 0;
    r.mechanism.clear();
    r.wall_seconds = 0.0;
    let mut buf = Vec::new();
    conlearn_harness::record::write_csv(&mut buf, &r.hbeta.iter().map(|(b, _)| *b).collect::<Vec<_>>(), &[r])
        .expect("in-memory write");
    String::from_utf8(buf).expect("utf8")
}

fn degeneration() -> Line {
    let static_zero = Overrides {
        loss: Some("real".into()),
        strategy: Some("sampling-5".into()),
        mechanism: Some("static".into()),
        seeds: Some(vec![1, 2]),
        ..Overrides::default()
    };
    let mut checked = 0;
    let mut bad = Vec::new();
    let cases: [(&str, &str, Option<&str>); 4] = [
        ("hierlabel", "[data]\ndim = 10\n", None),
        ("pairrel", "", None),
        ("bio", "", None),
        ("ste", "[train]\nlabeled = 1500\n", Some("binary")),
    ];
    for (task, extra, loss) in cases {
        let text = format!("task = \"{task}\"\n[method]\nlambda_con = 0.0\n{extra}");
        let file = ConfigFile::parse(&text).expect("valid config");
        let mut o = static_zero.clone();
        if let Some(l) = loss {
            o.loss = Some(l.into());
        }
        let (con, _) = run_cell(&file, &o);
        let mut bo = baseline_overrides();
        bo.seeds = o.seeds.clone();
        let (base, _) = run_cell(&file, &bo);
        for (a, b) in con.records.iter().zip(&base.records) {
            checked += 1;
            if comparable(a) != comparable(b) {
                bad.push(format!("{task} seed {}", a.seed));
            }
        }
    }
    Line {
        id: 10,
        name: "static zero weight equals baseline",
        passed: bad.is_empty() && checked == 12,
        detail: if bad.is_empty() {
            format!("{checked} CSV rows identical across 4 tasks (identity columns and wall_seconds excluded)")
        } else {
            format!("rows differ: {}", bad.join(", "))
        },
    }
}

/// CSV text with the `wall_seconds` column removed.
fn without_wall(path: &Path) -> Vec<u8> {
    let mut rd = csv::Reader::from_path(path).expect("csv readable");
    let head = rd.headers().expect("header").clone();
    let skip = head.iter().position(|h| h == "wall_seconds").expect("wall_seconds column");
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(head.iter().enumerate().filter(|(i, _)| *i != skip).map(|(_, v)| v))
        .expect("write");
    for rec in rd.records() {
        let rec = rec.expect("row");
        w.write_record(rec.iter().enumerate().filter(|(i, _)| *i != skip).map(|(_, v)| v))
            .expect("write");
    }
    w.into_inner().expect("flush")
}

fn determinism() -> Line {
    let tmp = std::env::temp_dir().join(format!("conlearn-acceptance-{}", std::process::id()));
    let cfg = configs().join("hierlabel_grid.toml");
    let mut outputs = Vec::new();
    for (run, workers) in [("a", "1"), ("b", "2")] {
        let dir = tmp.join(run);
        let status = Command::new(env!("CARGO_BIN_EXE_conlearn"))
            .args(["grid", cfg.to_str().expect("utf8 path"), "--no-plots", "--workers", workers])
            .arg("--out-dir")
            .arg(&dir)
            .stderr(std::process::Stdio::null())
            .status()
            .expect("binary runs");
        outputs.push((status.success(), dir.join("hierlabel_grid.csv")));
    }
    let ok_runs = outputs.iter().all(|(s, p)| *s && p.exists());
    let (same, rows) = if ok_runs {
        let a = without_wall(&outputs[0].1);
        let b = without_wall(&outputs[1].1);
        (a == b, a.iter().filter(|&&c| c == b'\n').count().saturating_sub(1))
    } else {
        (false, 0)
    };
    let _ = std::fs::remove_dir_all(&tmp);
    Line {
        id: 11,
        name: "grid determinism",
        passed: ok_runs && same && rows > 0,
        detail: format!("hierlabel grid run twice (1 and 2 workers): {rows} rows, byte-identical without wall_seconds: {same}"),
    }
}

fn main() -> ExitCode {
    let mut lines = Vec::new();
    let report = |l: Line, lines: &mut Vec<Line>| {
        println!(
            "criterion {:>2} {} {}: {}",
            l.id,
            if l.passed { "PASS" } else { "FAIL" },
            l.name,
            l.detail
        );
        lines.push(l);
    };
    report(from_selftest(1, selftest::gradient_check()), &mut lines);
    report(from_selftest(2, selftest::boundary_soundness()), &mut lines);
    report(from_selftest(3, selftest::projection_algebra()), &mut lines);
    report(from_selftest(4, selftest::reinforce_oracle()), &mut lines);
    report(from_selftest(5, selftest::hbeta_exactness()), &mut lines);

    let mut six = Vec::new();
    let base = ste_baseline(&mut six);
    for l in six {
        report(l, &mut lines);
    }
    report(ste_injection(&base), &mut lines);
    report(hier_psl(), &mut lines);
    report(monotone_trace(), &mut lines);
    report(degeneration(), &mut lines);
    report(determinism(), &mut lines);

    let failed = lines.iter().filter(|l| !l.passed).count();
    println!("acceptance: {} of {} criteria passed", lines.len() - failed, lines.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
