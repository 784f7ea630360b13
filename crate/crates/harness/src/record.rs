//! Result rows, per-cell aggregation, and the CSV format.
//!
//! One header, one row per run, one `AGG` row per cell. Aggregate rows
//! average over successful seeds and fill the trailing `*_std` columns with
//! the population standard deviation; run rows leave them empty.

use std::io::{Read, Write};

use conlearn::metrics::hbeta;

use crate::config::CellConfig;
use crate::error::{HarnessError, Result};
use crate::runner::{RunResult, RunStatus};

pub const AGG: &str = "AGG";

/// One CSV row, either a single run or a cell aggregate.
#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub task: String,
    pub loss_type: String,
    pub strategy: String,
    pub k: usize,
    pub mechanism: String,
    pub logic: String,
    /// Seed number, or `AGG`.
    pub seed: String,
    pub main_metric: f64,
    pub violation_rate: f64,
    /// `(β, Hβ)` in the order of the cell's β list.
    pub hbeta: Vec<(f64, f64)>,
    pub lambda_final: f64,
    pub steps: u64,
    pub wall_seconds: f64,
    pub status: String,
    /// Population standard deviations of main metric, violation rate, and
    /// each Hβ (aggregate rows only).
    pub std: Option<Vec<f64>>,
}

impl Record {
    pub fn is_aggregate(&self) -> bool {
        self.seed == AGG
    }

    /// Identifies the cell a row belongs to.
    pub fn cell_key(&self) -> (String, String, String, usize, String, String) {
        (
            self.task.clone(),
            self.loss_type.clone(),
            self.strategy.clone(),
            self.k,
            self.mechanism.clone(),
            self.logic.clone(),
        )
    }

    pub fn hbeta_at(&self, beta: f64) -> Option<f64> {
        self.hbeta.iter().find(|(b, _)| *b == beta).map(|(_, h)| *h)
    }
}

/// Hβ of a main metric and a violation rate, scoring satisfaction `1 − violation`.
pub fn hbeta_scores(main: f64, violation: f64, betas: &[f64]) -> Vec<(f64, f64)> {
    betas
        .iter()
        .map(|&b| {
            let h = if main.is_finite() && violation.is_finite() {
                hbeta(main.clamp(0.0, 1.0), (1.0 - violation).clamp(0.0, 1.0), b).unwrap_or(f64::NAN)
            } else {
                f64::NAN
            };
            (b, h)
        })
        .collect()
}

pub fn run_record(cell: &CellConfig, seed: u64, r: &RunResult) -> Record {
    Record {
        task: cell.task.to_string(),
        loss_type: cell.method.loss_label(),
        strategy: cell.method.strategy_label(),
        k: cell.method.k(),
        mechanism: cell.method.mechanism_label(),
        logic: cell.logic.to_string(),
        seed: seed.to_string(),
        main_metric: r.main_metric,
        violation_rate: r.violation_rate,
        hbeta: hbeta_scores(r.main_metric, r.violation_rate, &cell.betas),
        lambda_final: r.lambda_final,
        steps: r.steps,
        wall_seconds: r.wall_seconds,
        status: r.status.label(),
        std: None,
    }
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Aggregate row over a cell's run rows. Only successful runs contribute.
pub fn aggregate(runs: &[Record]) -> Result<Record> {
    let first = runs
        .first()
        .ok_or_else(|| HarnessError::Results("cannot aggregate zero runs".into()))?;
    let ok: Vec<&Record> = runs.iter().filter(|r| r.status == RunStatus::Ok.label()).collect();
    let col = |f: &dyn Fn(&Record) -> f64| ok.iter().map(|r| f(r)).collect::<Vec<f64>>();
    let (main, main_sd) = mean_std(&col(&|r| r.main_metric));
    let (vio, vio_sd) = mean_std(&col(&|r| r.violation_rate));
    let mut std = vec![main_sd, vio_sd];
    let mut hb = Vec::with_capacity(first.hbeta.len());
    for (i, &(b, _)) in first.hbeta.iter().enumerate() {
        let (m, s) = mean_std(&col(&|r| r.hbeta[i].1));
        hb.push((b, m));
        std.push(s);
    }
    let (lambda, _) = mean_std(&col(&|r| r.lambda_final));
    let status = if ok.len() == runs.len() {
        RunStatus::Ok.label()
    } else {
        format!("partial {}/{}", ok.len(), runs.len())
    };
    Ok(Record {
        seed: AGG.into(),
        main_metric: main,
        violation_rate: vio,
        hbeta: hb,
        lambda_final: lambda,
        steps: runs.iter().map(|r| r.steps).sum(),
        wall_seconds: runs.iter().map(|r| r.wall_seconds).sum(),
        status,
        std: Some(std),
        ..first.clone()
    })
}

fn beta_label(b: f64) -> String {
    format!("{b}")
}

pub fn header(betas: &[f64]) -> Vec<String> {
    let mut h: Vec<String> = ["task", "loss_type", "strategy", "k", "mechanism", "logic", "seed", "main_metric", "violation_rate"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    h.extend(betas.iter().map(|b| format!("hbeta_{}", beta_label(*b))));
    h.extend(["lambda_final", "steps", "wall_seconds", "status", "main_metric_std", "violation_rate_std"].map(String::from));
    h.extend(betas.iter().map(|b| format!("hbeta_{}_std", beta_label(*b))));
    h
}

fn num(x: f64) -> String {
    format!("{x}")
}

fn row(r: &Record) -> Vec<String> {
    let mut v = vec![
        r.task.clone(),
        r.loss_type.clone(),
        r.strategy.clone(),
        r.k.to_string(),
        r.mechanism.clone(),
        r.logic.clone(),
        r.seed.clone(),
        num(r.main_metric),
        num(r.violation_rate),
    ];
    v.extend(r.hbeta.iter().map(|(_, h)| num(*h)));
    v.push(num(r.lambda_final));
    v.push(r.steps.to_string());
    v.push(format!("{:.3}", r.wall_seconds));
    v.push(r.status.clone());
    match &r.std {
        Some(s) => v.extend(s.iter().map(|x| num(*x))),
        None => v.extend(std::iter::repeat_n(String::new(), 2 + r.hbeta.len())),
    }
    v
}

pub fn write_csv<W: Write>(out: W, betas: &[f64], records: &[Record]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header(betas))?;
    for r in records {
        if r.hbeta.len() != betas.len() {
            return Err(HarnessError::Results("record has a different beta list than the header".into()));
        }
        w.write_record(row(r))?;
    }
    w.flush()?;
    Ok(())
}

fn parse_f64(s: &str, what: &str) -> Result<f64> {
    s.parse::<f64>()
        .map_err(|_| HarnessError::Results(format!("{what}: {s:?} is not a number")))
}

/// Reads a results file written by [`write_csv`].
pub fn read_csv<R: Read>(input: R) -> Result<(Vec<f64>, Vec<Record>)> {
    let mut rd = csv::Reader::from_reader(input);
    let head: Vec<String> = rd.headers()?.iter().map(String::from).collect();
    let betas: Vec<f64> = head
        .iter()
        .filter(|h| h.starts_with("hbeta_") && !h.ends_with("_std"))
        .map(|h| parse_f64(&h["hbeta_".len()..], "beta column"))
        .collect::<Result<_>>()?;
    if head != header(&betas) {
        return Err(HarnessError::Results("unexpected header".into()));
    }
    let nb = betas.len();
    let mut out = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let f = |i: usize| rec.get(i).unwrap_or("");
        let hb = (0..nb)
            .map(|j| Ok((betas[j], parse_f64(f(9 + j), "hbeta")?)))
            .collect::<Result<Vec<_>>>()?;
        let base = 9 + nb;
        let std = if f(base + 4).is_empty() {
            None
        } else {
            Some((0..2 + nb).map(|j| parse_f64(f(base + 4 + j), "std")).collect::<Result<Vec<_>>>()?)
        };
        out.push(Record {
            task: f(0).into(),
            loss_type: f(1).into(),
            strategy: f(2).into(),
            k: f(3).parse().map_err(|_| HarnessError::Results(format!("bad k {:?}", f(3))))?,
            mechanism: f(4).into(),
            logic: f(5).into(),
            seed: f(6).into(),
            main_metric: parse_f64(f(7), "main_metric")?,
            violation_rate: parse_f64(f(8), "violation_rate")?,
            hbeta: hb,
            lambda_final: parse_f64(f(base), "lambda_final")?,
            steps: f(base + 1)
                .parse()
                .map_err(|_| HarnessError::Results(format!("bad steps {:?}", f(base + 1))))?,
            wall_seconds: parse_f64(f(base + 2), "wall_seconds")?,
            status: f(base + 3).into(),
            std,
        });
    }
    Ok((betas, out))
}

/// The `n` best aggregate rows by Hβ at `beta` for each distinct value of
/// `key`, best first. Ties keep file order.
pub fn top_n_by<'a>(records: &'a [Record], beta: f64, n: usize, key: &dyn Fn(&Record) -> String) -> Vec<(String, Vec<&'a Record>)> {
    let mut groups: Vec<(String, Vec<&Record>)> = Vec::new();
    for r in records.iter().filter(|r| r.is_aggregate() && r.mechanism != "none") {
        let k = key(r);
        match groups.iter_mut().find(|(g, _)| *g == k) {
            Some((_, v)) => v.push(r),
            None => groups.push((k, vec![r])),
        }
    }
    for (_, v) in &mut groups {
        let score = |r: &Record| r.hbeta_at(beta).filter(|h| h.is_finite()).unwrap_or(f64::NEG_INFINITY);
        v.sort_by(|a, b| score(b).total_cmp(&score(a)));
        v.truncate(n);
    }
    groups
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(seed: &str, main: f64, vio: f64) -> Record {
        Record {
            task: "ste".into(),
            loss_type: "real".into(),
            strategy: "sampling-10".into(),
            k: 10,
            mechanism: "proj-both".into(),
            logic: "goedel".into(),
            seed: seed.into(),
            main_metric: main,
            violation_rate: vio,
            hbeta: hbeta_scores(main, vio, &[0.3, 1.0, 3.0]),
            lambda_final: 1.0,
            steps: 10,
            wall_seconds: 0.5,
            status: "ok".into(),
            std: None,
        }
    }

    #[test]
    fn aggregate_uses_population_std() {
        let runs = vec![rec("1", 0.6, 0.2), rec("2", 0.8, 0.4)];
        let a = aggregate(&runs).unwrap();
        assert!((a.main_metric - 0.7).abs() < 1e-12);
        assert!((a.std.as_ref().unwrap()[0] - 0.1).abs() < 1e-12);
        let h1 = (runs[0].hbeta[1].1 + runs[1].hbeta[1].1) / 2.0;
        assert!((a.hbeta[1].1 - h1).abs() < 1e-12);
        assert_eq!(a.steps, 20);
    }

    #[test]
    fn csv_round_trips() {
        let runs = vec![rec("1", 0.6, 0.2), rec("2", 0.8, 0.4)];
        let mut all = runs.clone();
        all.push(aggregate(&runs).unwrap());
        let mut buf = Vec::new();
        write_csv(&mut buf, &[0.3, 1.0, 3.0], &all).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("task,loss_type,strategy,k,mechanism,logic,seed,main_metric,violation_rate,hbeta_0.3,hbeta_1,hbeta_3,lambda_final,steps,wall_seconds,status,"));
        let (betas, back) = read_csv(buf.as_slice()).unwrap();
        assert_eq!(betas, vec![0.3, 1.0, 3.0]);
        assert_eq!(back, all);
    }

    #[test]
    fn failed_runs_are_excluded_from_aggregates() {
        let mut bad = rec("3", f64::NAN, f64::NAN);
        bad.status = "failed: numeric".into();
        let a = aggregate(&[rec("1", 0.6, 0.2), bad]).unwrap();
        assert_eq!(a.status, "partial 1/2");
        assert!((a.main_metric - 0.6).abs() < 1e-15);
    }

    #[test]
    fn top_selection_orders_by_hbeta() {
        let mut a = rec(AGG, 0.5, 0.5);
        let mut b = rec(AGG, 0.9, 0.1);
        a.strategy = "top1".into();
        b.strategy = "sampling-3".into();
        let recs = vec![a, b];
        let top = top_n_by(&recs, 1.0, 5, &|r| r.mechanism.clone());
        assert_eq!(top.len(), 1);
        assert_eq!(top[0].1[0].strategy, "sampling-3");
    }
}
