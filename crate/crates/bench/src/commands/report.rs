use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use qsynth_core::train::{EvalRow, METRICS_CSV_HEADER};

use super::csv_f;
use super::run::RUN_META;
use crate::manifest::Manifest;
use crate::stats::mean_ci;
use crate::svg::{line_chart, Series};
use crate::CliError;

pub const SUMMARY_CSV_HEADER: &str = "config,runs,final_step,success_mean,success_ci_low,success_ci_high,fidelity_mean,fidelity_ci_low,fidelity_ci_high,rcd_mean,ep_len_mean";
pub const SERIES_CSV_HEADER: &str = "step,mean,ci_low,ci_high,count";

const METRICS: [(&str, fn(&EvalRow) -> f64); 4] = [
    ("success_rate", |r| r.success_rate),
    ("mean_fidelity", |r| r.mean_fidelity),
    ("mean_rcd", |r| r.mean_rcd),
    ("mean_ep_len", |r| r.mean_ep_len),
];

#[derive(Debug, Clone, PartialEq)]
pub struct ReportOutcome {
    pub out: PathBuf,
    /// Configuration label and number of runs, in output order.
    pub configs: Vec<(String, usize)>,
}

fn find_metas(dir: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)?.map(|e| e.map(|e| e.path())).collect::<Result<_, _>>()?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            find_metas(&p, out)?;
        } else if p.file_name().is_some_and(|n| n == RUN_META) {
            out.push(p);
        }
    }
    Ok(())
}

fn parse_meta(text: &str) -> BTreeMap<String, String> {
    text.lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect()
}

fn read_metrics(path: &Path) -> Result<Vec<EvalRow>, CliError> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let header = rdr
        .headers()
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        .iter()
        .collect::<Vec<_>>()
        .join(",");
    if header != METRICS_CSV_HEADER {
        return Err(CliError::Config(format!(
            "{}: incompatible schema `{header}` (expected `{METRICS_CSV_HEADER}`)",
            path.display()
        )));
    }
    let bad = |line: usize, e: &dyn std::fmt::Display| CliError::Config(format!("{}:{line}: {e}", path.display()));
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| bad(i + 2, &e))?;
        let f = |k: usize| rec[k].parse::<f64>().map_err(|e| bad(i + 2, &e));
        rows.push(EvalRow {
            step: rec[0].parse().map_err(|e| bad(i + 2, &e))?,
            mean_fidelity: f(1)?,
            success_rate: f(2)?,
            mean_rcd: f(3)?,
            mean_ep_len: f(4)?,
            seed: rec[5].parse().map_err(|e| bad(i + 2, &e))?,
        });
    }
    Ok(rows)
}

fn slug(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
        .collect()
}

/// Merges the runs found under `dirs` into summary tables, per-metric
/// series and SVG charts in `out`.
pub fn cmd_report(dirs: &[PathBuf], out: &Path) -> Result<ReportOutcome, CliError> {
    if dirs.is_empty() {
        return Err(CliError::Config("report needs at least one run directory".into()));
    }
    let mut groups: BTreeMap<String, Vec<(u64, Vec<EvalRow>)>> = BTreeMap::new();
    let mut seeds = Vec::new();
    for d in dirs {
        if !d.is_dir() {
            return Err(CliError::Config(format!("{} is not a directory", d.display())));
        }
        let mut metas = Vec::new();
        find_metas(d, &mut metas)?;
        if metas.is_empty() {
            return Err(CliError::Config(format!("no runs found under {}", d.display())));
        }
        for m in metas {
            let meta = parse_meta(&std::fs::read_to_string(&m)?);
            let get = |k: &str| meta.get(k).cloned().unwrap_or_default();
            let label = format!(
                "{} n={} lambda={} target={} lr={}",
                get("mode"),
                get("n"),
                get("lambda"),
                get("target"),
                get("lr")
            );
            let seed: u64 = get("seed").parse().unwrap_or(0);
            let rows = read_metrics(&m.with_file_name("metrics.csv"))?;
            seeds.push(seed);
            groups.entry(label).or_default().push((seed, rows));
        }
    }
    std::fs::create_dir_all(out.join("series"))?;
    std::fs::create_dir_all(out.join("charts"))?;

    let mut csv = format!("{SUMMARY_CSV_HEADER}\n");
    let mut table = vec![[
        "config".to_string(),
        "runs".into(),
        "step".into(),
        "success (95% CI)".into(),
        "fidelity".into(),
        "RCD %".into(),
    ]];
    let mut configs = Vec::new();
    let mut charts: BTreeMap<&str, Vec<Series>> = BTreeMap::new();
    for (label, runs) in &groups {
        let finals: Vec<&EvalRow> = runs.iter().filter_map(|(_, r)| r.last()).collect();
        let s = mean_ci(&finals.iter().map(|r| r.success_rate).collect::<Vec<_>>());
        let f = mean_ci(&finals.iter().map(|r| r.mean_fidelity).collect::<Vec<_>>());
        let rcd = mean_ci(&finals.iter().map(|r| r.mean_rcd).collect::<Vec<_>>()).mean;
        let len = mean_ci(&finals.iter().map(|r| r.mean_ep_len).collect::<Vec<_>>()).mean;
        let step = finals.iter().map(|r| r.step).max().unwrap_or(0);
        let _ = writeln!(
            csv,
            "{label},{},{step},{},{},{},{},{},{},{},{}",
            runs.len(),
            csv_f(s.mean),
            csv_f(s.ci_low),
            csv_f(s.ci_high),
            csv_f(f.mean),
            csv_f(f.ci_low),
            csv_f(f.ci_high),
            csv_f(rcd),
            csv_f(len)
        );
        let flag = if s.degenerate() { " (single run)" } else { "" };
        table.push([
            label.clone(),
            runs.len().to_string(),
            step.to_string(),
            format!("{:.3} [{:.3}, {:.3}]{flag}", s.mean, s.ci_low, s.ci_high),
            format!("{:.4}", f.mean),
            format!("{:.1}", rcd),
        ]);
        configs.push((label.clone(), runs.len()));

        for (metric, get) in METRICS {
            let mut by_step: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
            for (_, rows) in runs {
                for r in rows {
                    by_step.entry(r.step).or_default().push(get(r));
                }
            }
            let mut series = format!("{SERIES_CSV_HEADER}\n");
            let mut pts = Vec::new();
            for (step, xs) in &by_step {
                let m = mean_ci(xs);
                let _ = writeln!(series, "{step},{},{},{},{}", csv_f(m.mean), csv_f(m.ci_low), csv_f(m.ci_high), m.count);
                pts.push((*step as f64, m.mean, m.ci_low, m.ci_high));
            }
            std::fs::write(out.join("series").join(format!("{}__{metric}.csv", slug(label))), series)?;
            charts.entry(metric).or_default().push(Series { label: label.clone(), points: pts });
        }
    }
    for (metric, series) in &charts {
        let svg = line_chart(metric, "env steps", metric, series);
        std::fs::write(out.join("charts").join(format!("{metric}.svg")), svg)?;
    }
    std::fs::write(out.join("summary.csv"), csv)?;
    std::fs::write(out.join("summary.txt"), render_table(&table))?;
    let inputs = dirs.iter().map(|d| format!("input = {}\n", d.display())).collect::<String>();
    Manifest::new("report", inputs, seeds, None).write(out)?;
    Ok(ReportOutcome { out: out.to_path_buf(), configs })
}

fn render_table(rows: &[[String; 6]]) -> String {
    let mut widths = [0usize; 6];
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.chars().count());
        }
    }
    let mut s = String::new();
    for (i, r) in rows.iter().enumerate() {
        let cells: Vec<String> = r.iter().zip(widths).map(|(c, w)| format!("{c:<w$}")).collect();
        let _ = writeln!(s, "{}", cells.join("  ").trim_end());
        if i == 0 {
            let _ = writeln!(s, "{}", widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("  "));
        }
    }
    s
}
