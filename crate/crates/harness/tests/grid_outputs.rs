use std::path::{Path, PathBuf};
use std::process::Command;

use conlearn_harness::config::{ConfigFile, GridConfig, Overrides, RunConfig};
use conlearn_harness::grid::{run_grid, GridOutcome};
use conlearn_harness::plot::{chart, emit_plots};
use conlearn_harness::record::{read_csv, top_n_by, write_csv, Record};
use conlearn_harness::runner::RunResult;
use conlearn_harness::HarnessError;

const SMALL_HIER: &str = r#"
task = "hierlabel"
seeds = [1, 2, 3]
betas = [0.3, 1.0, 3.0]

[train]
epochs = 2
labeled = 60
unlabeled = 60
test = 120

[data]
dim = 10

[grid]
loss = ["soft"]
strategy = ["exhaustive"]
mechanism = ["static", "proj-both"]
"#;

fn quiet(_: &RunConfig, _: &RunResult) {}

fn grid(text: &str) -> GridConfig {
    ConfigFile::parse(text).unwrap().to_grid(&Overrides::default()).unwrap()
}

fn run(text: &str) -> (GridConfig, GridOutcome) {
    let g = grid(text);
    let out = run_grid(&g, 1, &quiet).unwrap();
    (g, out)
}

fn csv_bytes(betas: &[f64], records: &[Record]) -> Vec<u8> {
    let mut buf = Vec::new();
    write_csv(&mut buf, betas, records).unwrap();
    buf
}

fn scratch_dir(name: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("conlearn-test-{name}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&d);
    d
}

fn population_std(xs: &[f64]) -> f64 {
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64).sqrt()
}

#[test]
fn two_cells_three_seeds_give_six_runs_and_two_aggregates() {
    let (g, out) = run(SMALL_HIER);
    assert_eq!(g.cells.len(), 2);
    assert_eq!(out.runs.len(), 6);
    assert_eq!(out.records.len(), 8);
    let seeds: Vec<&str> = out.records.iter().map(|r| r.seed.as_str()).collect();
    assert_eq!(seeds, ["1", "2", "3", "AGG", "1", "2", "3", "AGG"]);
    assert_eq!(out.failures(), 0);

    let (betas, back) = read_csv(csv_bytes(&g.betas, &out.records).as_slice()).unwrap();
    assert_eq!(betas, vec![0.3, 1.0, 3.0]);
    assert_eq!(back.iter().filter(|r| r.is_aggregate()).count(), 2);
}

#[test]
fn aggregate_rows_recompute_from_run_rows() {
    let (g, out) = run(SMALL_HIER);
    let (_, rows) = read_csv(csv_bytes(&g.betas, &out.records).as_slice()).unwrap();
    for agg in rows.iter().filter(|r| r.is_aggregate()) {
        let runs: Vec<&Record> = rows
            .iter()
            .filter(|r| !r.is_aggregate() && r.cell_key() == agg.cell_key())
            .collect();
        assert_eq!(runs.len(), 3);
        let mut columns: Vec<(f64, f64, Vec<f64>)> = vec![
            (agg.main_metric, agg.std.as_ref().unwrap()[0], runs.iter().map(|r| r.main_metric).collect()),
            (agg.violation_rate, agg.std.as_ref().unwrap()[1], runs.iter().map(|r| r.violation_rate).collect()),
        ];
        for (i, &(b, h)) in agg.hbeta.iter().enumerate() {
            let vals = runs.iter().map(|r| r.hbeta_at(b).unwrap()).collect();
            columns.push((h, agg.std.as_ref().unwrap()[2 + i], vals));
        }
        for (mean, std, vals) in columns {
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            assert!((mean - m).abs() <= 1e-12, "mean {mean} vs {m}");
            assert!((std - population_std(&vals)).abs() <= 1e-12, "std {std}");
        }
    }
}

#[test]
fn top_five_is_derivable_from_the_csv_alone() {
    let (g, out) = run(SMALL_HIER);
    let (_, rows) = read_csv(csv_bytes(&g.betas, &out.records).as_slice()).unwrap();
    for beta in [0.3, 1.0, 3.0] {
        let top = top_n_by(&rows, beta, 5, &|r| r.mechanism.clone());
        for (mechanism, picked) in top {
            let mut expected: Vec<&Record> = rows
                .iter()
                .filter(|r| r.is_aggregate() && r.mechanism == mechanism)
                .collect();
            expected.sort_by(|a, b| b.hbeta_at(beta).unwrap().total_cmp(&a.hbeta_at(beta).unwrap()));
            expected.truncate(5);
            assert_eq!(picked, expected);
        }
    }
}

#[test]
fn plots_one_file_per_task_and_beta_with_csv_values() {
    let (g, out) = run(SMALL_HIER);
    let dir = scratch_dir("plots");
    let paths = emit_plots(&out.records, &g.betas, &dir).unwrap();
    assert_eq!(paths.len(), 3);
    for (p, beta) in paths.iter().zip([0.3, 1.0, 3.0]) {
        let svg = std::fs::read_to_string(p).unwrap();
        for agg in out.records.iter().filter(|r| r.is_aggregate()) {
            let v = agg.hbeta_at(beta).unwrap();
            assert!(svg.contains(&format!("data-value=\"{v}\"")), "{} lacks {v}", p.display());
        }
    }
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn single_record_draws_a_single_bar() {
    let (_, out) = run(SMALL_HIER);
    let one = vec![out.records[3].clone()];
    let svg = chart("hierlabel", 1.0, &one);
    assert_eq!(svg.matches("class=\"bar\"").count(), 1);
    let v = one[0].hbeta_at(1.0).unwrap();
    assert!(svg.contains(&format!("data-value=\"{v}\"")));
}

#[test]
fn empty_results_write_no_plots() {
    let dir = scratch_dir("empty");
    assert!(emit_plots(&[], &[1.0], &dir).unwrap().is_empty());
    assert!(!dir.exists() || std::fs::read_dir(&dir).unwrap().next().is_none());
}

#[test]
fn repeated_grids_match_apart_from_wall_time() {
    let g = grid(SMALL_HIER);
    let blank = |mut recs: Vec<Record>| {
        for r in &mut recs {
            r.wall_seconds = 0.0;
        }
        csv_bytes(&g.betas, &recs)
    };
    let a = blank(run_grid(&g, 1, &quiet).unwrap().records);
    let b = blank(run_grid(&g, 3, &quiet).unwrap().records);
    assert_eq!(a, b);
}

#[test]
fn invalid_configs_fail_before_training() {
    let bad = [
        "task = \"hierlabel\"\n[method]\nloss = \"binary\"\nstrategy = \"exhaustive\"\nmechanism = \"static\"\n",
        "task = \"ste\"\n[method]\nloss = \"soft\"\nstrategy = \"top1\"\nmechanism = \"static\"\n",
        "task = \"hierlabel\"\nbetas = [0.0]\n",
        "task = \"hierlabel\"\n[train]\nlr = -1.0\n",
        "task = \"nosuchtask\"\n",
        "task = \"hierlabel\"\n[method]\nmechanism = \"sometimes\"\nloss = \"soft\"\n",
        "task = \"hierlabel\"\nunknown_key = 3\n",
    ];
    for text in bad {
        let err = ConfigFile::parse(text).and_then(|f| f.to_runs(&Overrides::default()));
        assert!(matches!(err, Err(HarnessError::Config(_))), "accepted: {text}");
    }
}

#[test]
fn cli_rejects_invalid_config_without_writing_results() {
    let dir = scratch_dir("cli-bad");
    std::fs::create_dir_all(&dir).unwrap();
    let cfg = dir.join("bad.toml");
    std::fs::write(&cfg, "task = \"ste\"\n[method]\nloss = \"soft\"\nmechanism = \"static\"\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_conlearn"))
        .arg("run")
        .arg(&cfg)
        .env("CONLEARN_OUT_DIR", dir.join("out"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("configuration error"));
    assert!(!dir.join("out").exists());
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn cli_run_writes_csv_named_after_config_into_env_out_dir() {
    let dir = scratch_dir("cli-run");
    std::fs::create_dir_all(&dir).unwrap();
    let cfg = dir.join("tiny.toml");
    std::fs::write(&cfg, SMALL_HIER).unwrap();
    let out_dir = dir.join("results");
    let status = Command::new(env!("CARGO_BIN_EXE_conlearn"))
        .args(["run", cfg.to_str().unwrap(), "--seeds", "4,5", "--loss", "soft", "--strategy", "top1", "--mechanism", "proj-con"])
        .env("CONLEARN_OUT_DIR", &out_dir)
        .stderr(std::process::Stdio::null())
        .status()
        .unwrap();
    assert!(status.success());
    let (_, rows) = read_csv(std::fs::File::open(out_dir.join("tiny.csv")).unwrap()).unwrap();
    let seeds: Vec<&str> = rows.iter().map(|r| r.seed.as_str()).collect();
    assert_eq!(seeds, ["4", "5", "AGG"]);
    assert!(rows.iter().all(|r| r.mechanism == "proj-con" && r.strategy == "top1"));
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn over_capacity_run_is_recorded_as_failed_and_the_grid_continues() {
    // 460 positions x 9 tags exceeds the exhaustive cap on the first batch.
    let text = r#"
task = "bio"
seeds = [1]

[train]
epochs = 1
batch_size = 4
labeled = 4
unlabeled = 0
test = 4

[data]
min_len = 460
max_len = 460

[grid]
baseline = true
loss = ["soft"]
strategy = ["exhaustive"]
mechanism = ["static"]
"#;
    let (_, out) = run(text);
    assert_eq!(out.failures(), 1);
    let failed = out.records.iter().find(|r| r.mechanism == "static" && !r.is_aggregate()).unwrap();
    assert!(failed.status.starts_with("failed"), "{}", failed.status);
    assert!(failed.status.contains("4096"), "{}", failed.status);
    assert!(failed.main_metric.is_nan() && failed.violation_rate.is_nan());
    let baseline = out.records.iter().find(|r| r.mechanism == "none" && !r.is_aggregate()).unwrap();
    assert_eq!(baseline.status, "ok");
    assert!(baseline.main_metric.is_finite());
}

#[test]
fn shipped_configs_all_resolve() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        let file = ConfigFile::load(&path).unwrap();
        if path.file_stem().unwrap().to_str().unwrap().ends_with("_grid") {
            assert!(!file.to_grid(&Overrides::default()).unwrap().cells.is_empty());
        } else {
            file.to_runs(&Overrides::default()).unwrap();
        }
        n += 1;
    }
    assert_eq!(n, 8);
}
