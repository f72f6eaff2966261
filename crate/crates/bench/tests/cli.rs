use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use qsynth_bench::commands::{self, Options, Suite, BENCH_CSV_HEADER, LANDSCAPE_AGG_HEADER, LANDSCAPE_TIDY_HEADER};
use qsynth_bench::config::ExperimentConfig;
use qsynth_bench::manifest::{blob_hash, Manifest, MANIFEST_NAME};
use qsynth_core::refine::BASELINE_CSV_HEADER;

const SMALL: &str = "[run]\nrepetitions = 3\nseed = 7\neval_every = 256\neval_targets = 10\n\
[env]\nn = 2\nlambda = 1\n[ppo]\nhorizon = 64\nenv_count = 4\nminibatch_size = 32\ntotal_steps = 512\n";

fn qsynth(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qsynth")).args(args).output().unwrap()
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("exp.cfg");
    std::fs::write(&p, text).unwrap();
    p
}

fn read(p: impl AsRef<Path>) -> String {
    std::fs::read_to_string(p.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", p.as_ref().display()))
}

fn small(text: &str) -> ExperimentConfig {
    ExperimentConfig::parse(text).unwrap()
}

fn opts(out: &Path) -> Options {
    Options { out: Some(out.to_path_buf()), seed: None, deterministic: true }
}

fn column(csv: &str, name: &str) -> Vec<String> {
    let mut lines = csv.lines();
    let idx = lines.next().unwrap().split(',').position(|h| h == name).unwrap();
    lines.map(|l| l.split(',').nth(idx).unwrap().to_string()).collect()
}

#[test]
fn invalid_config_exits_2_with_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[run]\nrepetitions = zero\n");
    let o = qsynth(&["train", "--config", cfg.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));

    let cfg = write_config(dir.path(), "[run]\nrepetitions = 0\n");
    assert_eq!(qsynth(&["train", "--config", cfg.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(qsynth(&["train", "--config", "/nonexistent/x.cfg"]).status.code(), Some(2));
    assert_eq!(qsynth(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn train_seeds_rerun_and_output_dir() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out_a = dir.path().join("missing/nested/a");
    let out_b = dir.path().join("b");
    for out in [&out_a, &out_b] {
        let o = qsynth(&["train", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--deterministic"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert!(out_a.is_dir());
    let runs = read(out_a.join("runs.csv"));
    assert_eq!(column(&runs, "seed"), ["7", "8", "9"]);
    for k in 0..3 {
        assert!(out_a.join(format!("rep_{k}/metrics.csv")).is_file());
        assert!(out_a.join(format!("rep_{k}/checkpoints")).is_dir());
    }
    for f in ["runs.csv", "rep_0/metrics.csv", "rep_1/metrics_det.csv", "rep_2/updates.csv", "rep_2/episodes.csv"] {
        assert_eq!(read(out_a.join(f)), read(out_b.join(f)), "{f}");
    }
    let m: Manifest = Manifest::read(&out_a.join(MANIFEST_NAME)).unwrap();
    assert_eq!(m.seeds, vec![7, 8, 9]);
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(&SMALL.replace("repetitions = 3", "repetitions = 1"));
    let o = Options { seed: Some(40), ..opts(dir.path()) };
    let out = commands::cmd_train(cfg, &o).unwrap();
    assert_eq!(column(&read(out.join("runs.csv")), "seed"), ["40"]);
}

#[test]
fn manifest_lists_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let out = commands::cmd_train(small(SMALL), &opts(dir.path())).unwrap();
    let m = Manifest::read(&out.join(MANIFEST_NAME)).unwrap();
    let mut on_disk = Vec::new();
    let mut stack = vec![out.clone()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().unwrap() != MANIFEST_NAME {
                on_disk.push(p.strip_prefix(&out).unwrap().to_string_lossy().replace('\\', "/"));
            }
        }
    }
    on_disk.sort();
    let mut listed: Vec<String> = m.files.iter().map(|f| f.path.clone()).collect();
    listed.sort();
    assert_eq!(listed, on_disk);
    for f in &m.files {
        assert_eq!(blob_hash(&std::fs::read(out.join(&f.path)).unwrap()), f.blob_sha256);
    }
}

#[test]
fn report_summarises_and_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let run = commands::cmd_train(small(SMALL), &opts(&dir.path().join("run"))).unwrap();
    let r1 = commands::cmd_report(&[run.clone()], &dir.path().join("r1")).unwrap();
    let r2 = commands::cmd_report(&[run], &dir.path().join("r2")).unwrap();
    let summary = read(r1.out.join("summary.csv"));
    assert_eq!(summary.lines().count(), 2, "one config cell");
    for (lo, mid, hi) in ["success", "fidelity"].iter().flat_map(|m| {
        let f = |s: &str| column(&summary, &format!("{m}_{s}"));
        f("ci_low").into_iter().zip(f("mean")).zip(f("ci_high")).map(|((a, b), c)| (a, b, c)).collect::<Vec<_>>()
    }) {
        let (lo, mid, hi): (f64, f64, f64) = (lo.parse().unwrap(), mid.parse().unwrap(), hi.parse().unwrap());
        assert!(lo <= mid + 1e-12 && mid <= hi + 1e-12, "{lo} {mid} {hi}");
    }
    let series = read(r1.out.join("series").read_dir().unwrap().next().unwrap().unwrap().path());
    for l in series.lines().skip(1) {
        let v: Vec<f64> = l.split(',').map(|x| x.parse().unwrap()).collect();
        assert!(v[2] <= v[1] + 1e-12 && v[1] <= v[3] + 1e-12);
    }
    for f in ["summary.csv", "summary.txt"] {
        assert_eq!(read(r1.out.join(f)), read(r2.out.join(f)));
    }
    assert!(r1.out.join("charts").read_dir().unwrap().count() > 0);
}

#[test]
fn report_rejects_empty_and_mismatched_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    let o = qsynth(&["report", empty.to_str().unwrap(), "--out", dir.path().join("r").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(commands::cmd_report(&[], &dir.path().join("r")).is_err());

    let run = commands::cmd_train(small(&SMALL.replace("repetitions = 3", "repetitions = 1")), &opts(&dir.path().join("run"))).unwrap();
    let m = run.join("rep_0/metrics.csv");
    std::fs::write(&m, read(&m).replacen("step,", "steps,", 1)).unwrap();
    let err = commands::cmd_report(&[run], &dir.path().join("r")).unwrap_err();
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn replay_reproduces_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let run = dir.path().join("run");
    assert!(qsynth(&["train", "--config", cfg.to_str().unwrap(), "--out", run.to_str().unwrap()]).status.success());
    let manifest = run.join(MANIFEST_NAME);
    let o = qsynth(&["replay", manifest.to_str().unwrap(), "--out", dir.path().join("again").to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let m = run.join("rep_1/metrics.csv");
    std::fs::write(&m, read(&m) + "\n").unwrap();
    let o = qsynth(&["replay", manifest.to_str().unwrap(), "--out", dir.path().join("third").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn landscape_cells_and_aggregates() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(&format!(
        "{}[sweep]\nlambda_list = 1, 2\nn_list = 2\n",
        SMALL.replace("repetitions = 3", "repetitions = 2")
    ));
    let (out, cells) = commands::cmd_landscape(cfg, &opts(dir.path())).unwrap();
    assert_eq!(cells.len(), 2);
    let tidy = read(out.join("landscape_tidy.csv"));
    let agg = read(out.join("landscape.csv"));
    assert_eq!(tidy.lines().count(), 1 + 4);
    assert_eq!(agg.lines().count(), 1 + 2);
    let finals: Vec<f64> = column(&tidy, "final_success_rate").iter().map(|x| x.parse().unwrap()).collect();
    let means: Vec<f64> = column(&agg, "success_mean").iter().map(|x| x.parse().unwrap()).collect();
    for (c, m) in means.iter().enumerate() {
        let expect = (finals[2 * c] + finals[2 * c + 1]) / 2.0;
        assert!((m - expect).abs() <= 1e-12);
    }
    assert!(column(&tidy, "wall_clock_seconds").iter().all(|w| w.parse::<f64>().unwrap() > 0.0));
}

#[test]
fn baseline_default_and_rerun() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::default();
    assert_eq!(cfg.baseline.targets, 10);
    assert_eq!(cfg.baseline.steps, 300);
    let (a, ra) = commands::cmd_baseline(cfg.clone(), &opts(&dir.path().join("a"))).unwrap();
    let (b, rb) = commands::cmd_baseline(cfg, &opts(&dir.path().join("b"))).unwrap();
    assert_eq!(ra.rows.len(), 10);
    assert_eq!(read(a.join("baseline.csv")), read(b.join("baseline.csv")));
    assert_eq!(ra.mean().to_bits(), rb.mean().to_bits());
}

#[test]
fn bell_suite_targets_are_definitional() {
    let r = std::f64::consts::FRAC_1_SQRT_2;
    let expected = [[r, 0.0, 0.0, r], [r, 0.0, 0.0, -r], [0.0, r, r, 0.0], [0.0, r, -r, 0.0]];
    let got: Vec<Vec<f64>> = Suite::Bell
        .targets()
        .iter()
        .map(|t| commands::target_state(t, 2).unwrap().unwrap().amps().iter().map(|a| {
            assert_eq!(a.im, 0.0);
            a.re
        }).collect())
        .collect();
    assert_eq!(got.len(), 4);
    for (g, e) in got.iter().zip(expected) {
        for (x, y) in g.iter().zip(e) {
            assert!((x - y).abs() < 1e-15);
        }
    }
    let basis: Vec<String> = Suite::Basis.targets().iter().map(|t| t.to_string()).collect();
    assert_eq!(basis, ["basis:00", "basis:01", "basis:10", "basis:11"]);
}

#[test]
fn single_repetition_flags_degenerate_ci() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(&SMALL.replace("repetitions = 3", "repetitions = 1").replace("total_steps = 512", "total_steps = 256"));
    let (out, rows) = commands::cmd_bench(Suite::Basis, cfg, &opts(dir.path()), None).unwrap();
    assert_eq!(rows.len(), 4);
    let csv = read(out.join("bench_basis.csv"));
    assert_eq!(csv.lines().next().unwrap(), BENCH_CSV_HEADER);
    assert!(column(&csv, "ci_degenerate").iter().all(|d| d == "true"));
    assert!(column(&csv, "reps").iter().all(|d| d == "1"));
}

#[test]
fn csv_headers_are_stable() {
    let dir = tempfile::tempdir().unwrap();
    let out = commands::cmd_train(small(&SMALL.replace("repetitions = 3", "repetitions = 1")), &opts(dir.path())).unwrap();
    let first = |p: PathBuf| read(p).lines().next().unwrap().to_string();
    assert_eq!(
        first(out.join("runs.csv")),
        "run_id,seed,final_step,final_success_rate,final_mean_fidelity,final_mean_rcd,final_mean_ep_len,det_success_rate"
    );
    assert_eq!(first(out.join("timing.csv")), "run_id,wall_clock_seconds");
    assert_eq!(first(out.join("rep_0/metrics.csv")), "step,mean_fidelity,success_rate,mean_rcd,mean_ep_len,seed");
    assert_eq!(first(out.join("rep_0/updates.csv")), "step,policy_loss,value_loss,entropy,approx_kl,clip_fraction,grad_norm");
    assert_eq!(first(out.join("rep_0/episodes.csv")), "step,env,final_fidelity,success,length,rcd,target_seed");
    assert_eq!(BENCH_CSV_HEADER, "suite,target,reps,success_mean,success_ci_low,success_ci_high,ci_degenerate,mean_fidelity,mean_rcd");
    assert_eq!(
        LANDSCAPE_TIDY_HEADER,
        "mode,n,lambda,lr,rep,seed,final_success_rate,final_mean_fidelity,final_mean_rcd,wall_clock_seconds"
    );
    assert_eq!(
        LANDSCAPE_AGG_HEADER,
        "mode,n,lambda,lr,reps,success_mean,success_ci_low,success_ci_high,rcd_mean,rcd_ci_low,rcd_ci_high,fidelity_mean,wall_clock_mean"
    );
    assert_eq!(BASELINE_CSV_HEADER, "target_id,seed,initial_fidelity,final_fidelity,steps_used");
    let report = commands::cmd_report(&[out], &dir.path().join("rep")).unwrap();
    assert_eq!(
        first(report.out.join("summary.csv")),
        "config,runs,final_step,success_mean,success_ci_low,success_ci_high,fidelity_mean,fidelity_ci_low,fidelity_ci_high,rcd_mean,ep_len_mean"
    );
}

#[test]
fn targets_export_feeds_training() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("targets.txt");
    let o = qsynth(&["targets", "export", "--count", "5", "--file", file.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = SMALL
        .replace("repetitions = 3", "repetitions = 1")
        .replace("eval_targets = 10", &format!("eval_targets = {}", file.display()));
    let out = commands::cmd_train(small(&text), &opts(&dir.path().join("run"))).unwrap();
    let m = Manifest::read(&out.join(MANIFEST_NAME)).unwrap();
    assert_eq!(m.corpus.unwrap().blob_sha256, blob_hash(&std::fs::read(&file).unwrap()));
}
