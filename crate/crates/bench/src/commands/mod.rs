//! The CLI verbs. Every verb writes into an output directory that ends up
//! with a `config.resolved` file and a `manifest.json`.

mod report;
mod run;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use qsynth_core::env::{read_corpus, target_from_seed, write_corpus, CorpusEntry, EnvConfig, TargetSpec};
use qsynth_core::policy::PolicyParams;
use qsynth_core::refine::{classical_baseline, BaselineConfig, BaselineReport};
use qsynth_core::sim::StateVector;
use qsynth_core::train::evaluate;

use crate::config::{BellState, EvalTargets, ExperimentConfig, Mode, TargetChoice};
use crate::manifest::{blob_hash, CorpusRef, Manifest, MANIFEST_NAME};
use crate::stats::mean_ci;
use crate::CliError;

pub use report::{cmd_report, ReportOutcome, SUMMARY_CSV_HEADER, SERIES_CSV_HEADER};
pub use run::{RunSpec, RunSummary, EPISODES_CSV_HEADER, RUNS_CSV_HEADER, TIMING_CSV_HEADER, UPDATES_CSV_HEADER};

pub const BENCH_CSV_HEADER: &str =
    "suite,target,reps,success_mean,success_ci_low,success_ci_high,ci_degenerate,mean_fidelity,mean_rcd";
pub const LANDSCAPE_TIDY_HEADER: &str =
    "mode,n,lambda,lr,rep,seed,final_success_rate,final_mean_fidelity,final_mean_rcd,wall_clock_seconds";
pub const LANDSCAPE_AGG_HEADER: &str = "mode,n,lambda,lr,reps,success_mean,success_ci_low,success_ci_high,rcd_mean,rcd_ci_low,rcd_ci_high,fidelity_mean,wall_clock_mean";
pub const RESOLVED_CONFIG: &str = "config.resolved";

/// Command-line overrides shared by all verbs.
#[derive(Debug, Clone, Default)]
pub struct Options {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    /// Forces a single worker thread.
    pub deterministic: bool,
}

impl Options {
    pub fn threads(&self) -> usize {
        if self.deterministic {
            return 1;
        }
        let avail = std::thread::available_parallelism().map_or(1, |n| n.get());
        std::env::var("QSYNTH_THREADS")
            .ok()
            .and_then(|v| v.parse::<usize>().ok())
            .filter(|n| *n > 0)
            .map_or(avail, |n| n.min(avail.max(1)).max(1))
    }
}

pub fn load_config(path: Option<&Path>, opts: &Options) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            ExperimentConfig::parse(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(out) = &opts.out {
        cfg.output_dir = out.clone();
    }
    if let Some(seed) = opts.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

pub fn target_state(choice: &TargetChoice, n: usize) -> Result<Option<StateVector>, CliError> {
    let r = std::f64::consts::FRAC_1_SQRT_2;
    let state = match choice {
        TargetChoice::Generated => return Ok(None),
        TargetChoice::Basis(bits) => {
            let idx = usize::from_str_radix(bits, 2).map_err(|e| CliError::Config(e.to_string()))?;
            StateVector::basis(n, idx)?
        }
        TargetChoice::Bell(b) => {
            let (i, j, sign) = match b {
                BellState::PhiPlus => (0, 3, 1.0),
                BellState::PhiMinus => (0, 3, -1.0),
                BellState::PsiPlus => (1, 2, 1.0),
                BellState::PsiMinus => (1, 2, -1.0),
            };
            let mut amps = vec![Complex64::new(0.0, 0.0); 4];
            amps[i] = Complex64::new(r, 0.0);
            amps[j] = Complex64::new(sign * r, 0.0);
            StateVector::from_amplitudes(amps)?
        }
    };
    Ok(Some(state))
}

/// Resolved inputs shared by the runs of one invocation.
pub struct Context {
    pub cfg: ExperimentConfig,
    pub out: PathBuf,
    pub threads: usize,
    corpus: Option<(Vec<TargetSpec>, CorpusRef)>,
}

impl Context {
    pub fn new(mut cfg: ExperimentConfig, opts: &Options) -> Result<Self, CliError> {
        if let Some(out) = &opts.out {
            cfg.output_dir = out.clone();
        }
        if let Some(seed) = opts.seed {
            cfg.seed = seed;
        }
        cfg.validate()?;
        let corpus = match &cfg.eval_targets {
            EvalTargets::Count(_) => None,
            EvalTargets::Corpus(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
                let entries = read_corpus(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
                if entries.is_empty() {
                    return Err(CliError::Config(format!("{}: empty corpus", p.display())));
                }
                let hash = blob_hash(text.as_bytes());
                Some((
                    entries.into_iter().map(|e| e.target).collect(),
                    CorpusRef { path: p.display().to_string(), blob_sha256: hash },
                ))
            }
        };
        let out = cfg.output_dir.clone();
        std::fs::create_dir_all(&out)?;
        Ok(Context { cfg, out, threads: opts.threads(), corpus })
    }

    fn seeds(&self) -> Vec<u64> {
        (0..self.cfg.repetitions as u64).map(|k| self.cfg.seed + k).collect()
    }

    /// Writes `config.resolved` and the manifest; call after all artifacts.
    fn finish(&self, command: &str, seeds: Vec<u64>) -> Result<Manifest, CliError> {
        std::fs::write(self.out.join(RESOLVED_CONFIG), self.cfg.to_text())?;
        let corpus = self.corpus.as_ref().map(|(_, r)| r.clone());
        Ok(Manifest::new(command, self.cfg.to_text(), seeds, corpus).write(&self.out)?)
    }
}

fn csv_f(x: f64) -> String {
    format!("{x}")
}

pub fn cmd_train(cfg: ExperimentConfig, opts: &Options) -> Result<PathBuf, CliError> {
    if cfg.mode == Mode::Baseline {
        return Err(CliError::Config("mode = baseline is run with the `baseline` verb".into()));
    }
    let ctx = Context::new(cfg, opts)?;
    let specs: Vec<RunSpec> = ctx
        .seeds()
        .into_iter()
        .enumerate()
        .map(|(k, seed)| RunSpec::new(&ctx.cfg, format!("rep_{k}"), seed))
        .collect();
    let runs = run::execute_all(&ctx, &specs)?;
    run::write_run_tables(&ctx.out, &runs)?;
    ctx.finish("train", ctx.seeds())?;
    Ok(ctx.out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Basis,
    Bell,
}

impl Suite {
    pub fn name(self) -> &'static str {
        match self {
            Suite::Basis => "basis",
            Suite::Bell => "bell",
        }
    }

    pub fn targets(self) -> Vec<TargetChoice> {
        match self {
            Suite::Basis => ["00", "01", "10", "11"].iter().map(|b| TargetChoice::Basis(b.to_string())).collect(),
            Suite::Bell => BellState::ALL.into_iter().map(TargetChoice::Bell).collect(),
        }
    }
}

/// Per-target success statistics of a benchmark suite.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub target: TargetChoice,
    pub successes: Vec<f64>,
    pub fidelities: Vec<f64>,
    pub rcds: Vec<f64>,
}

fn slug(t: &TargetChoice) -> String {
    t.to_string().replace(':', "_").replace('+', "plus").replace('-', "minus")
}

pub fn cmd_bench(suite: Suite, cfg: ExperimentConfig, opts: &Options, checkpoint: Option<&Path>) -> Result<(PathBuf, Vec<BenchRow>), CliError> {
    if cfg.env.n != 2 {
        return Err(CliError::Config("benchmark suites are two-qubit: set env.n = 2".into()));
    }
    if !matches!(cfg.mode, Mode::OneStage | Mode::TwoStage | Mode::A2c) {
        return Err(CliError::Config("benchmarks need a training mode".into()));
    }
    let ctx = Context::new(cfg, opts)?;
    let mut rows = Vec::new();
    let command;
    let seeds;
    if let Some(path) = checkpoint {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let policy = PolicyParams::from_checkpoint(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        for t in suite.targets() {
            let spec = RunSpec { target: t.clone(), ..RunSpec::new(&ctx.cfg, slug(&t), ctx.cfg.seed) };
            let run = run::run_config(&ctx, &spec)?;
            if policy.shape() != &run.policy_shape() {
                return Err(CliError::Config("checkpoint shape does not match the configured mode and n".into()));
            }
            let row = evaluate(&policy, &run, 0, false)?;
            rows.push(BenchRow {
                target: t,
                successes: vec![row.success_rate],
                fidelities: vec![row.mean_fidelity],
                rcds: vec![row.mean_rcd],
            });
        }
        command = format!("bench {} --checkpoint {}", suite.name(), path.display());
        seeds = vec![ctx.cfg.seed];
    } else {
        let targets = suite.targets();
        let specs: Vec<RunSpec> = targets
            .iter()
            .flat_map(|t| {
                let ctx = &ctx;
                ctx.seeds().into_iter().enumerate().map(move |(k, seed)| RunSpec {
                    target: t.clone(),
                    ..RunSpec::new(&ctx.cfg, format!("{}/rep_{k}", slug(t)), seed)
                })
            })
            .collect();
        let runs = run::execute_all(&ctx, &specs)?;
        run::write_run_tables(&ctx.out, &runs)?;
        for t in targets {
            let mine: Vec<&RunSummary> = runs.iter().filter(|r| r.spec.target == t).collect();
            rows.push(BenchRow {
                successes: mine.iter().map(|r| r.final_success()).collect(),
                fidelities: mine.iter().map(|r| r.final_row().map_or(f64::NAN, |x| x.mean_fidelity)).collect(),
                rcds: mine.iter().map(|r| r.final_row().map_or(f64::NAN, |x| x.mean_rcd)).collect(),
                target: t,
            });
        }
        command = format!("bench {}", suite.name());
        seeds = ctx.seeds();
    }
    let mut csv = format!("{BENCH_CSV_HEADER}\n");
    for r in &rows {
        let s = mean_ci(&r.successes);
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{}",
            suite.name(),
            r.target,
            s.count,
            csv_f(s.mean),
            csv_f(s.ci_low),
            csv_f(s.ci_high),
            s.degenerate(),
            csv_f(mean_ci(&r.fidelities).mean),
            csv_f(mean_ci(&r.rcds).mean)
        );
    }
    std::fs::write(ctx.out.join(format!("bench_{}.csv", suite.name())), csv)?;
    ctx.finish(&command, seeds)?;
    Ok((ctx.out, rows))
}

/// One cell of a landscape sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub n: usize,
    pub lambda: usize,
    pub lr: f64,
    pub success: Vec<f64>,
    pub rcd: Vec<f64>,
    pub fidelity: Vec<f64>,
    pub wall: Vec<f64>,
}

pub fn cmd_landscape(cfg: ExperimentConfig, opts: &Options) -> Result<(PathBuf, Vec<Cell>), CliError> {
    if cfg.mode == Mode::Baseline {
        return Err(CliError::Config("landscape needs a training mode".into()));
    }
    let ctx = Context::new(cfg, opts)?;
    let lrs: Vec<Option<f64>> = if ctx.cfg.mode == Mode::A2c {
        ctx.cfg.lr_list.iter().map(|x| Some(*x)).collect()
    } else {
        vec![None]
    };
    let mut specs = Vec::new();
    for &n in &ctx.cfg.n_list {
        for &lambda in &ctx.cfg.lambda_list {
            for lr in &lrs {
                for (k, seed) in ctx.seeds().into_iter().enumerate() {
                    let lr_tag = lr.map_or(String::new(), |x| format!("_lr{x:e}"));
                    let mut s = RunSpec::new(&ctx.cfg, format!("n{n}_l{lambda}{lr_tag}/rep_{k}"), seed);
                    s.n = n;
                    s.lambda = lambda;
                    s.lr = lr.unwrap_or(s.lr);
                    if let TargetChoice::Basis(b) = &s.target {
                        if b.len() != n {
                            return Err(CliError::Config(format!("basis target `{b}` does not fit n = {n}")));
                        }
                    }
                    specs.push((s, k));
                }
            }
        }
    }
    let only: Vec<RunSpec> = specs.iter().map(|(s, _)| s.clone()).collect();
    let runs = run::execute_all(&ctx, &only)?;
    run::write_run_tables(&ctx.out, &runs)?;

    let mut tidy = format!("{LANDSCAPE_TIDY_HEADER}\n");
    let mut cells: Vec<Cell> = Vec::new();
    for ((spec, k), r) in specs.iter().zip(&runs) {
        let fin = r.final_row();
        let (succ, fid, rcd) = fin.map_or((f64::NAN, f64::NAN, f64::NAN), |x| (x.success_rate, x.mean_fidelity, x.mean_rcd));
        let _ = writeln!(
            tidy,
            "{},{},{},{},{},{},{},{},{},{}",
            spec.mode.name(),
            spec.n,
            spec.lambda,
            csv_f(spec.lr),
            k,
            spec.seed,
            csv_f(succ),
            csv_f(fid),
            csv_f(rcd),
            csv_f(r.wall_clock)
        );
        let pos = cells.iter().position(|c| c.n == spec.n && c.lambda == spec.lambda && c.lr == spec.lr);
        let cell = match pos {
            Some(i) => &mut cells[i],
            None => {
                cells.push(Cell { n: spec.n, lambda: spec.lambda, lr: spec.lr, success: vec![], rcd: vec![], fidelity: vec![], wall: vec![] });
                cells.last_mut().unwrap()
            }
        };
        cell.success.push(succ);
        cell.rcd.push(rcd);
        cell.fidelity.push(fid);
        cell.wall.push(r.wall_clock);
    }
    let mut agg = format!("{LANDSCAPE_AGG_HEADER}\n");
    for c in &cells {
        let s = mean_ci(&c.success);
        let d = mean_ci(&c.rcd);
        let _ = writeln!(
            agg,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            ctx.cfg.mode.name(),
            c.n,
            c.lambda,
            csv_f(c.lr),
            s.count,
            csv_f(s.mean),
            csv_f(s.ci_low),
            csv_f(s.ci_high),
            csv_f(d.mean),
            csv_f(d.ci_low),
            csv_f(d.ci_high),
            csv_f(mean_ci(&c.fidelity).mean),
            csv_f(mean_ci(&c.wall).mean)
        );
    }
    std::fs::write(ctx.out.join("landscape_tidy.csv"), tidy)?;
    std::fs::write(ctx.out.join("landscape.csv"), agg)?;
    ctx.finish("landscape", ctx.seeds())?;
    Ok((ctx.out, cells))
}

/// The seeded targets used by `baseline`: seeds `seed, seed+1, …`.
pub fn baseline_targets(cfg: &ExperimentConfig) -> Result<Vec<(u64, TargetSpec)>, CliError> {
    (0..cfg.baseline.targets as u64)
        .map(|i| {
            let seed = cfg.seed + i;
            Ok((seed, target_from_seed(&cfg.env, seed)?))
        })
        .collect()
}

pub fn cmd_baseline(cfg: ExperimentConfig, opts: &Options) -> Result<(PathBuf, BaselineReport), CliError> {
    if cfg.baseline.targets == 0 {
        return Err(CliError::Config("baseline.targets must be positive".into()));
    }
    let ctx = Context::new(cfg, opts)?;
    let targets = baseline_targets(&ctx.cfg)?;
    let bcfg = BaselineConfig {
        steps: ctx.cfg.baseline.steps,
        lr: ctx.cfg.baseline.lr,
        seed: ctx.cfg.seed,
        init: ctx.cfg.baseline.init,
    };
    let specs: Vec<TargetSpec> = targets.iter().map(|(_, t)| t.clone()).collect();
    let report = classical_baseline(&specs, &bcfg)?;
    std::fs::write(ctx.out.join("baseline.csv"), report.to_csv())?;
    std::fs::write(
        ctx.out.join("baseline_summary.txt"),
        format!(
            "targets = {}\nsteps = {}\nmean_final_fidelity = {}\nmin_final_fidelity = {}\n",
            report.rows.len(),
            bcfg.steps,
            report.mean(),
            report.min()
        ),
    )?;
    ctx.finish("baseline", targets.iter().map(|(s, _)| *s).collect())?;
    Ok((ctx.out, report))
}

/// Writes `count` generated targets (seeds `seed, seed+1, …`) to `path`.
pub fn cmd_targets_export(cfg: &ExperimentConfig, count: usize, path: &Path) -> Result<(), CliError> {
    let env = EnvConfig { ..cfg.env.clone() };
    let entries = (0..count as u64)
        .map(|i| {
            let seed = cfg.seed + i;
            Ok(CorpusEntry { seed, target: target_from_seed(&env, seed)? })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, write_corpus(&entries)?)?;
    Ok(())
}

/// Outcome of re-running a directory from its manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayOutcome {
    pub compared: Vec<String>,
    pub mismatched: Vec<String>,
}

fn is_metric_file(path: &str) -> bool {
    let name = path.rsplit('/').next().unwrap_or(path);
    name.starts_with("metrics") && name.ends_with(".csv") || name == "baseline.csv"
}

/// Re-executes the command recorded in `manifest` into `out` in
/// single-threaded mode and compares every metrics CSV byte for byte.
pub fn cmd_replay(manifest: &Path, out: &Path) -> Result<ReplayOutcome, CliError> {
    let m = Manifest::read(manifest).map_err(|e| CliError::Config(format!("{}: {e}", manifest.display())))?;
    let src = manifest.parent().unwrap_or(Path::new("."));
    let mut cfg = ExperimentConfig::parse(&m.config)?;
    if let Some(c) = &m.corpus {
        let text = std::fs::read(&c.path).map_err(|e| CliError::Config(format!("corpus {}: {e}", c.path)))?;
        if blob_hash(&text) != c.blob_sha256 {
            return Err(CliError::Config(format!("corpus {} changed since the run", c.path)));
        }
    }
    cfg.output_dir = out.to_path_buf();
    let opts = Options { out: None, seed: None, deterministic: true };
    let words: Vec<&str> = m.command.split_whitespace().collect();
    match words.as_slice() {
        ["train"] => {
            cmd_train(cfg, &opts)?;
        }
        ["landscape"] => {
            cmd_landscape(cfg, &opts)?;
        }
        ["baseline"] => {
            cmd_baseline(cfg, &opts)?;
        }
        ["bench", suite, rest @ ..] => {
            let suite = match *suite {
                "basis" => Suite::Basis,
                "bell" => Suite::Bell,
                s => return Err(CliError::Config(format!("unknown suite `{s}` in manifest"))),
            };
            let ckpt = match rest {
                [] => None,
                ["--checkpoint", p] => Some(PathBuf::from(p)),
                _ => return Err(CliError::Config(format!("cannot replay `{}`", m.command))),
            };
            cmd_bench(suite, cfg, &opts, ckpt.as_deref())?;
        }
        _ => return Err(CliError::Config(format!("cannot replay `{}`", m.command))),
    }
    let mut compared = Vec::new();
    let mut mismatched = Vec::new();
    for f in m.files.iter().filter(|f| is_metric_file(&f.path)) {
        compared.push(f.path.clone());
        let fresh = std::fs::read(out.join(&f.path)).ok();
        let original = std::fs::read(src.join(&f.path)).ok();
        let ok = match (&fresh, &original) {
            (Some(a), Some(b)) => a == b && blob_hash(a) == f.blob_sha256,
            (Some(a), None) => blob_hash(a) == f.blob_sha256,
            _ => false,
        };
        if !ok {
            mismatched.push(f.path.clone());
        }
    }
    Ok(ReplayOutcome { compared, mismatched })
}

/// Reads a manifest next to `dir`, if present.
pub fn read_manifest(dir: &Path) -> Option<Manifest> {
    Manifest::read(&dir.join(MANIFEST_NAME)).ok()
}
