use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use qsynth_core::env::EnvConfig;
use qsynth_core::train::{
    metrics_csv, train, A2cConfig, Algo, EpisodeRecord, EvalConfig, EvalRow, MetricsSink, PpoConfig, RunConfig,
    Strategy, TargetMode, UpdateStats,
};
use rayon::prelude::*;

use super::{csv_f, target_state, Context};
use crate::config::{ExperimentConfig, Mode, TargetChoice};
use crate::CliError;

pub const RUNS_CSV_HEADER: &str =
    "run_id,seed,final_step,final_success_rate,final_mean_fidelity,final_mean_rcd,final_mean_ep_len,det_success_rate";
pub const TIMING_CSV_HEADER: &str = "run_id,wall_clock_seconds";
pub const UPDATES_CSV_HEADER: &str = "step,policy_loss,value_loss,entropy,approx_kl,clip_fraction,grad_norm";
pub const EPISODES_CSV_HEADER: &str = "step,env,final_fidelity,success,length,rcd,target_seed";
pub const RUN_META: &str = "run.meta";

/// One training run within an invocation.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    /// Relative directory of the run's artifacts.
    pub run_id: String,
    pub mode: Mode,
    pub n: usize,
    pub lambda: usize,
    pub target: TargetChoice,
    pub seed: u64,
    /// Learning rate of the configured algorithm.
    pub lr: f64,
}

impl RunSpec {
    pub fn new(cfg: &ExperimentConfig, run_id: String, seed: u64) -> Self {
        RunSpec {
            run_id,
            mode: cfg.mode,
            n: cfg.env.n,
            lambda: cfg.env.lambda,
            target: cfg.target.clone(),
            seed,
            lr: if cfg.mode == Mode::A2c { cfg.a2c.lr } else { cfg.ppo.lr },
        }
    }

    fn meta(&self) -> String {
        format!(
            "run_id = {}\nmode = {}\nn = {}\nlambda = {}\ntarget = {}\nseed = {}\nlr = {}\n",
            self.run_id,
            self.mode.name(),
            self.n,
            self.lambda,
            self.target,
            self.seed,
            self.lr
        )
    }
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub spec: RunSpec,
    pub rows: Vec<EvalRow>,
    pub det_rows: Vec<EvalRow>,
    pub steps: usize,
    pub wall_clock: f64,
}

impl RunSummary {
    pub fn final_row(&self) -> Option<&EvalRow> {
        self.rows.last()
    }

    pub fn final_success(&self) -> f64 {
        self.final_row().map_or(f64::NAN, |r| r.success_rate)
    }
}

pub fn run_config(ctx: &Context, spec: &RunSpec) -> Result<RunConfig, CliError> {
    let cfg = &ctx.cfg;
    let env = EnvConfig { n: spec.n, lambda: spec.lambda, ..cfg.env.clone() };
    let count = match cfg.eval_targets {
        crate::config::EvalTargets::Count(k) => k,
        crate::config::EvalTargets::Corpus(_) => 0,
    };
    let (target, episodes) = match (&spec.target, &ctx.corpus) {
        (TargetChoice::Generated, Some((ts, r))) => {
            if ts.iter().any(|t| t.state.num_qubits() != spec.n) {
                return Err(CliError::Config(format!("corpus {} does not match n = {}", r.path, spec.n)));
            }
            (TargetMode::Corpus(ts.clone()), ts.len())
        }
        (TargetChoice::Generated, None) => (TargetMode::Generated, count),
        (t, _) => (TargetMode::Fixed(target_state(t, spec.n)?.expect("fixed target")), count),
    };
    let (algo, strategy) = match spec.mode {
        Mode::OneStage => (Algo::Ppo(PpoConfig { seed: spec.seed, lr: spec.lr, ..cfg.ppo.clone() }), Strategy::OneStage),
        Mode::TwoStage => (
            Algo::Ppo(PpoConfig { seed: spec.seed, lr: spec.lr, ..cfg.ppo.clone() }),
            Strategy::TwoStage(cfg.refine.clone()),
        ),
        Mode::A2c => (Algo::A2c(A2cConfig { seed: spec.seed, lr: spec.lr, ..cfg.a2c.clone() }), Strategy::OneStage),
        Mode::Baseline => return Err(CliError::Config("baseline mode does not train a policy".into())),
    };
    let run = RunConfig {
        env,
        algo,
        strategy,
        target,
        eval: EvalConfig { every_steps: cfg.eval_every, episodes },
        checkpoint_every: (cfg.checkpoint_every > 0).then_some(cfg.checkpoint_every),
        checkpoint_dir: Some(ctx.out.join(&spec.run_id).join("checkpoints")),
    };
    run.validate().map_err(|e| CliError::Config(e.to_string()))?;
    Ok(run)
}

#[derive(Default)]
struct FileSink {
    updates: String,
    episodes: String,
}

impl MetricsSink for FileSink {
    fn on_episode(&mut self, step: usize, e: &EpisodeRecord) {
        let seed = e.target_seed.map_or(String::new(), |s| s.to_string());
        let _ = writeln!(
            self.episodes,
            "{step},{},{},{},{},{},{seed}",
            e.env_index,
            csv_f(e.final_fidelity),
            e.success as u8,
            e.length,
            csv_f(e.rcd)
        );
    }

    fn on_update(&mut self, step: usize, s: &UpdateStats) {
        let _ = writeln!(
            self.updates,
            "{step},{},{},{},{},{},{}",
            csv_f(s.policy_loss),
            csv_f(s.value_loss),
            csv_f(s.entropy),
            csv_f(s.approx_kl),
            csv_f(s.clip_fraction),
            csv_f(s.grad_norm)
        );
    }
}

fn execute_run(ctx: &Context, spec: &RunSpec) -> Result<RunSummary, CliError> {
    let dir = ctx.out.join(&spec.run_id);
    std::fs::create_dir_all(&dir)?;
    let run = run_config(ctx, spec)?;
    let mut sink = FileSink::default();
    let t0 = Instant::now();
    let out = train(&run, &mut sink).map_err(|e| CliError::Runtime(format!("run {}: {e}", spec.run_id)))?;
    let wall_clock = t0.elapsed().as_secs_f64();
    std::fs::write(dir.join("metrics.csv"), metrics_csv(&out.rows))?;
    std::fs::write(dir.join("metrics_det.csv"), metrics_csv(&out.det_rows))?;
    std::fs::write(dir.join("updates.csv"), format!("{UPDATES_CSV_HEADER}\n{}", sink.updates))?;
    std::fs::write(dir.join("episodes.csv"), format!("{EPISODES_CSV_HEADER}\n{}", sink.episodes))?;
    std::fs::write(dir.join(RUN_META), spec.meta())?;
    eprintln!(
        "{}: seed {} steps {} final success {:.3} ({:.1}s)",
        spec.run_id,
        spec.seed,
        out.steps,
        out.rows.last().map_or(f64::NAN, |r| r.success_rate),
        wall_clock
    );
    Ok(RunSummary { spec: spec.clone(), rows: out.rows, det_rows: out.det_rows, steps: out.steps, wall_clock })
}

/// Runs every spec on a pool of `ctx.threads` workers. Results come back
/// in spec order regardless of scheduling.
pub fn execute_all(ctx: &Context, specs: &[RunSpec]) -> Result<Vec<RunSummary>, CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(ctx.threads)
        .build()
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    pool.install(|| specs.par_iter().map(|s| execute_run(ctx, s)).collect())
}

pub fn write_run_tables(out: &Path, runs: &[RunSummary]) -> Result<(), CliError> {
    let mut runs_csv = format!("{RUNS_CSV_HEADER}\n");
    let mut timing = format!("{TIMING_CSV_HEADER}\n");
    for r in runs {
        let f = r.final_row();
        let g = |x: fn(&EvalRow) -> f64| f.map_or(f64::NAN, x);
        let _ = writeln!(
            runs_csv,
            "{},{},{},{},{},{},{},{}",
            r.spec.run_id,
            r.spec.seed,
            f.map_or(0, |x| x.step),
            csv_f(g(|x| x.success_rate)),
            csv_f(g(|x| x.mean_fidelity)),
            csv_f(g(|x| x.mean_rcd)),
            csv_f(g(|x| x.mean_ep_len)),
            csv_f(r.det_rows.last().map_or(f64::NAN, |x| x.success_rate))
        );
        let _ = writeln!(timing, "{},{}", r.spec.run_id, csv_f(r.wall_clock));
    }
    std::fs::write(out.join("runs.csv"), runs_csv)?;
    std::fs::write(out.join("timing.csv"), timing)?;
    Ok(())
}
