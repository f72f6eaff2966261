//! Line-oriented experiment configuration: `[section]` headers and
//! `key = value` lines, `#` comments.

use std::fmt::{self, Write as _};
use std::path::PathBuf;
use std::str::FromStr;

use qsynth_core::env::EnvConfig;
use qsynth_core::refine::{AngleInit, RefineConfig};
use qsynth_core::train::{A2cConfig, PpoConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub msg: String,
}

impl ConfigError {
    fn at(line: usize, msg: impl Into<String>) -> Self {
        ConfigError { line: Some(line), msg: msg.into() }
    }

    pub fn general(msg: impl Into<String>) -> Self {
        ConfigError { line: None, msg: msg.into() }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}", self.msg),
            None => f.write_str(&self.msg),
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    OneStage,
    TwoStage,
    A2c,
    Baseline,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::OneStage => "one-stage",
            Mode::TwoStage => "two-stage",
            Mode::A2c => "a2c",
            Mode::Baseline => "baseline",
        }
    }
}

impl FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "one-stage" => Ok(Mode::OneStage),
            "two-stage" => Ok(Mode::TwoStage),
            "a2c" => Ok(Mode::A2c),
            "baseline" => Ok(Mode::Baseline),
            _ => Err(format!("unknown mode `{s}` (one-stage, two-stage, a2c, baseline)")),
        }
    }
}

/// Which states the agent is asked to prepare.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TargetChoice {
    Generated,
    /// Computational basis state written most-significant qubit first.
    Basis(String),
    Bell(BellState),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BellState {
    PhiPlus,
    PhiMinus,
    PsiPlus,
    PsiMinus,
}

impl BellState {
    pub const ALL: [BellState; 4] = [BellState::PhiPlus, BellState::PhiMinus, BellState::PsiPlus, BellState::PsiMinus];

    pub fn name(self) -> &'static str {
        match self {
            BellState::PhiPlus => "phi+",
            BellState::PhiMinus => "phi-",
            BellState::PsiPlus => "psi+",
            BellState::PsiMinus => "psi-",
        }
    }
}

impl fmt::Display for TargetChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TargetChoice::Generated => f.write_str("generated"),
            TargetChoice::Basis(b) => write!(f, "basis:{b}"),
            TargetChoice::Bell(b) => write!(f, "bell:{}", b.name()),
        }
    }
}

impl FromStr for TargetChoice {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        if s == "generated" {
            return Ok(TargetChoice::Generated);
        }
        if let Some(bits) = s.strip_prefix("basis:") {
            if bits.is_empty() || !bits.chars().all(|c| c == '0' || c == '1') {
                return Err(format!("basis label `{bits}` must be a bit string"));
            }
            return Ok(TargetChoice::Basis(bits.to_string()));
        }
        if let Some(b) = s.strip_prefix("bell:") {
            return BellState::ALL
                .into_iter()
                .find(|x| x.name() == b)
                .map(TargetChoice::Bell)
                .ok_or_else(|| format!("unknown Bell state `{b}` (phi+, phi-, psi+, psi-)"));
        }
        Err(format!("unknown target `{s}` (generated, basis:<bits>, bell:<name>)"))
    }
}

/// Held-out evaluation set: a count of generated targets or a corpus file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EvalTargets {
    Count(usize),
    Corpus(PathBuf),
}

impl fmt::Display for EvalTargets {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EvalTargets::Count(k) => write!(f, "{k}"),
            EvalTargets::Corpus(p) => write!(f, "{}", p.display()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineSettings {
    pub targets: usize,
    pub steps: usize,
    pub lr: f64,
    pub init: AngleInit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub repetitions: usize,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub eval_every: usize,
    pub eval_targets: EvalTargets,
    pub checkpoint_every: usize,
    pub env: EnvConfig,
    pub target: TargetChoice,
    pub ppo: PpoConfig,
    pub a2c: A2cConfig,
    pub refine: RefineConfig,
    pub lambda_list: Vec<usize>,
    pub n_list: Vec<usize>,
    pub lr_list: Vec<f64>,
    pub baseline: BaselineSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            mode: Mode::OneStage,
            repetitions: 3,
            seed: 0,
            output_dir: PathBuf::from("runs"),
            eval_every: 20_000,
            eval_targets: EvalTargets::Count(100),
            checkpoint_every: 0,
            env: EnvConfig::new(2, 2, 1000),
            target: TargetChoice::Generated,
            ppo: PpoConfig::default(),
            a2c: A2cConfig::default(),
            refine: RefineConfig::default(),
            lambda_list: vec![1, 2, 3],
            n_list: vec![2, 3],
            lr_list: A2cConfig::LR_GRID.to_vec(),
            baseline: BaselineSettings {
                targets: 10,
                steps: 300,
                lr: 0.1,
                init: AngleInit::Uniform,
            },
        }
    }
}

fn parse_list<T: FromStr>(v: &str) -> Result<Vec<T>, String> {
    v.split(',')
        .map(|x| x.trim().parse::<T>().map_err(|_| format!("bad list element `{}`", x.trim())))
        .collect()
}

fn parse_bool(v: &str) -> Result<bool, String> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(format!("expected a boolean, got `{v}`")),
    }
}

fn num<T: FromStr>(v: &str) -> Result<T, String> {
    v.parse().map_err(|_| format!("cannot parse `{v}` as a number"))
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ")
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = ExperimentConfig::default();
        let mut section = String::new();
        let mut seen = std::collections::HashSet::new();
        let mut ppo_lr_set = false;
        for (i, raw) in text.lines().enumerate() {
            let ln = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| ConfigError::at(ln, "unterminated section header"))?
                    .trim();
                if !SECTIONS.contains(&name) {
                    return Err(ConfigError::at(ln, format!("unknown section [{name}]")));
                }
                section = name.to_string();
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| ConfigError::at(ln, "expected `key = value`"))?;
            let (key, value) = (key.trim(), value.trim());
            if section.is_empty() {
                return Err(ConfigError::at(ln, "key outside of any section"));
            }
            if !seen.insert(format!("{section}.{key}")) {
                return Err(ConfigError::at(ln, format!("duplicate key {section}.{key}")));
            }
            if section == "ppo" && key == "lr" {
                ppo_lr_set = true;
            }
            cfg.set(&section, key, value).map_err(|m| ConfigError::at(ln, m))?;
        }
        if cfg.mode == Mode::TwoStage && !ppo_lr_set {
            cfg.ppo.lr = PpoConfig::two_stage().lr;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, section: &str, key: &str, v: &str) -> Result<(), String> {
        match (section, key) {
            ("run", "mode") => self.mode = v.parse()?,
            ("run", "repetitions") => self.repetitions = num(v)?,
            ("run", "seed") => self.seed = num(v)?,
            ("run", "output_dir") => self.output_dir = PathBuf::from(v),
            ("run", "eval_every") => self.eval_every = num(v)?,
            ("run", "eval_targets") => {
                self.eval_targets = match v.parse::<usize>() {
                    Ok(k) => EvalTargets::Count(k),
                    Err(_) => EvalTargets::Corpus(PathBuf::from(v)),
                }
            }
            ("run", "checkpoint_every") => self.checkpoint_every = num(v)?,
            ("env", "n") => self.env.n = num(v)?,
            ("env", "lambda") => self.env.lambda = num(v)?,
            ("env", "epsilon") => self.env.epsilon = num(v)?,
            ("env", "terminal_bonus") => self.env.terminal_bonus = num(v)?,
            ("env", "reward_clip") => self.env.reward_clip = num(v)?,
            ("env", "eval_seed") => self.env.seed = num(v)?,
            ("env", "target") => self.target = v.parse()?,
            ("ppo", "lr") => self.ppo.lr = num(v)?,
            ("ppo", "clip_ratio") => self.ppo.clip_ratio = num(v)?,
            ("ppo", "gamma") => self.ppo.gamma = num(v)?,
            ("ppo", "gae_lambda") => self.ppo.gae_lambda = num(v)?,
            ("ppo", "epochs") => self.ppo.epochs = num(v)?,
            ("ppo", "minibatch_size") => self.ppo.minibatch_size = num(v)?,
            ("ppo", "entropy_coef") => self.ppo.entropy_coef = num(v)?,
            ("ppo", "value_coef") => self.ppo.value_coef = num(v)?,
            ("ppo", "horizon") => self.ppo.horizon = num(v)?,
            ("ppo", "env_count") => self.ppo.env_count = num(v)?,
            ("ppo", "total_steps") => self.ppo.total_steps = num(v)?,
            ("ppo", "max_grad_norm") => self.ppo.max_grad_norm = opt_num(v)?,
            ("ppo", "normalize_rewards") => self.ppo.normalize_rewards = parse_bool(v)?,
            ("a2c", "lr") => self.a2c.lr = num(v)?,
            ("a2c", "gamma") => self.a2c.gamma = num(v)?,
            ("a2c", "gae_lambda") => self.a2c.gae_lambda = num(v)?,
            ("a2c", "n_steps") => self.a2c.n_steps = num(v)?,
            ("a2c", "env_count") => self.a2c.env_count = num(v)?,
            ("a2c", "entropy_coef") => self.a2c.entropy_coef = num(v)?,
            ("a2c", "value_coef") => self.a2c.value_coef = num(v)?,
            ("a2c", "total_steps") => self.a2c.total_steps = num(v)?,
            ("a2c", "max_grad_norm") => self.a2c.max_grad_norm = opt_num(v)?,
            ("refine", "max_steps") => self.refine.max_steps = num(v)?,
            ("refine", "lr") => self.refine.lr = num(v)?,
            ("refine", "tol") => self.refine.tol = num(v)?,
            ("refine", "patience") => self.refine.patience = num(v)?,
            ("sweep", "lambda_list") => self.lambda_list = parse_list(v)?,
            ("sweep", "n_list") => self.n_list = parse_list(v)?,
            ("sweep", "lr_list") => self.lr_list = parse_list(v)?,
            ("baseline", "targets") => self.baseline.targets = num(v)?,
            ("baseline", "steps") => self.baseline.steps = num(v)?,
            ("baseline", "lr") => self.baseline.lr = num(v)?,
            ("baseline", "init") => {
                self.baseline.init = match v {
                    "uniform" => AngleInit::Uniform,
                    "zero" => AngleInit::Zero,
                    _ => return Err(format!("unknown init `{v}` (uniform, zero)")),
                }
            }
            _ => return Err(format!("unknown key `{key}` in [{section}]")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let err = |m: String| Err(ConfigError::general(m));
        if self.repetitions == 0 {
            return err("run.repetitions must be at least 1".into());
        }
        if let Err(e) = self.env.validate() {
            return err(format!("env: {e}"));
        }
        if let Err(e) = self.ppo.validate() {
            return err(format!("ppo: {e}"));
        }
        if let Err(e) = self.a2c.validate() {
            return err(format!("a2c: {e}"));
        }
        match &self.eval_targets {
            EvalTargets::Count(0) => return err("run.eval_targets must be positive".into()),
            EvalTargets::Corpus(p) if !p.is_file() => {
                return err(format!("corpus file {} does not exist", p.display()))
            }
            EvalTargets::Corpus(_) if self.target != TargetChoice::Generated => {
                return err("a corpus requires env.target = generated".into())
            }
            _ => {}
        }
        match &self.target {
            TargetChoice::Basis(b) if b.len() != self.env.n => {
                return err(format!("basis label `{b}` does not have {} qubits", self.env.n))
            }
            TargetChoice::Bell(_) if self.env.n != 2 => return err("Bell targets need env.n = 2".into()),
            _ => {}
        }
        if self.lambda_list.is_empty() || self.n_list.is_empty() || self.lr_list.is_empty() {
            return err("sweep lists must not be empty".into());
        }
        if self.lr_list.iter().any(|lr| !(*lr > 0.0)) {
            return err("sweep.lr_list entries must be positive".into());
        }
        Ok(())
    }

    /// Every setting in parseable form; `parse(to_text(c)) == c`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let opt = |v: Option<f64>| v.map_or("none".to_string(), |x| x.to_string());
        let _ = writeln!(s, "[run]");
        let _ = writeln!(s, "mode = {}", self.mode.name());
        let _ = writeln!(s, "repetitions = {}", self.repetitions);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "output_dir = {}", self.output_dir.display());
        let _ = writeln!(s, "eval_every = {}", self.eval_every);
        let _ = writeln!(s, "eval_targets = {}", self.eval_targets);
        let _ = writeln!(s, "checkpoint_every = {}", self.checkpoint_every);
        let e = &self.env;
        let _ = writeln!(s, "\n[env]");
        let _ = writeln!(s, "n = {}\nlambda = {}\nepsilon = {}", e.n, e.lambda, e.epsilon);
        let _ = writeln!(s, "terminal_bonus = {}\nreward_clip = {}", e.terminal_bonus, e.reward_clip);
        let _ = writeln!(s, "eval_seed = {}\ntarget = {}", e.seed, self.target);
        let p = &self.ppo;
        let _ = writeln!(s, "\n[ppo]");
        let _ = writeln!(s, "lr = {}\nclip_ratio = {}\ngamma = {}\ngae_lambda = {}", p.lr, p.clip_ratio, p.gamma, p.gae_lambda);
        let _ = writeln!(s, "epochs = {}\nminibatch_size = {}", p.epochs, p.minibatch_size);
        let _ = writeln!(s, "entropy_coef = {}\nvalue_coef = {}", p.entropy_coef, p.value_coef);
        let _ = writeln!(s, "horizon = {}\nenv_count = {}\ntotal_steps = {}", p.horizon, p.env_count, p.total_steps);
        let _ = writeln!(s, "max_grad_norm = {}\nnormalize_rewards = {}", opt(p.max_grad_norm), p.normalize_rewards);
        let a = &self.a2c;
        let _ = writeln!(s, "\n[a2c]");
        let _ = writeln!(s, "lr = {}\ngamma = {}\ngae_lambda = {}\nn_steps = {}", a.lr, a.gamma, a.gae_lambda, a.n_steps);
        let _ = writeln!(s, "env_count = {}\nentropy_coef = {}\nvalue_coef = {}", a.env_count, a.entropy_coef, a.value_coef);
        let _ = writeln!(s, "total_steps = {}\nmax_grad_norm = {}", a.total_steps, opt(a.max_grad_norm));
        let r = &self.refine;
        let _ = writeln!(s, "\n[refine]");
        let _ = writeln!(s, "max_steps = {}\nlr = {}\ntol = {}\npatience = {}", r.max_steps, r.lr, r.tol, r.patience);
        let _ = writeln!(s, "\n[sweep]");
        let _ = writeln!(s, "lambda_list = {}", join(&self.lambda_list));
        let _ = writeln!(s, "n_list = {}", join(&self.n_list));
        let _ = writeln!(s, "lr_list = {}", join(&self.lr_list));
        let b = &self.baseline;
        let _ = writeln!(s, "\n[baseline]");
        let _ = writeln!(s, "targets = {}\nsteps = {}\nlr = {}", b.targets, b.steps, b.lr);
        let _ = writeln!(
            s,
            "init = {}",
            match b.init {
                AngleInit::Uniform => "uniform",
                AngleInit::Zero => "zero",
            }
        );
        s
    }
}

fn opt_num(v: &str) -> Result<Option<f64>, String> {
    if v == "none" {
        Ok(None)
    } else {
        num(v).map(Some)
    }
}

const SECTIONS: [&str; 7] = ["run", "env", "ppo", "a2c", "refine", "sweep", "baseline"];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let mut c = ExperimentConfig::default();
        c.ppo.lr = 3.3e-4;
        c.ppo.max_grad_norm = None;
        c.target = TargetChoice::Bell(BellState::PsiMinus);
        c.lambda_list = vec![4, 5];
        c.env.epsilon = 0.1 + 0.2;
        let back = ExperimentConfig::parse(&c.to_text()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn diagnostics_carry_line_numbers() {
        let e = ExperimentConfig::parse("[run]\nmode = one-stage\n\nrepetitions = x\n").unwrap_err();
        assert_eq!(e.line, Some(4));
        let e = ExperimentConfig::parse("[ppo]\nlr = 1e-3\nfoo = 1\n").unwrap_err();
        assert_eq!(e.line, Some(3));
        assert!(e.msg.contains("foo"));
        let e = ExperimentConfig::parse("[nope]\n").unwrap_err();
        assert_eq!(e.line, Some(1));
        let e = ExperimentConfig::parse("n = 2\n").unwrap_err();
        assert_eq!(e.line, Some(1));
        let e = ExperimentConfig::parse("[env]\nn = 2\nn = 3\n").unwrap_err();
        assert_eq!(e.line, Some(3));
        let e = ExperimentConfig::parse("[env]\nn 2\n").unwrap_err();
        assert_eq!(e.line, Some(2));
    }

    #[test]
    fn semantic_errors() {
        assert!(ExperimentConfig::parse("[run]\nrepetitions = 0\n").is_err());
        assert!(ExperimentConfig::parse("[ppo]\nclip_ratio = 1.5\n").is_err());
        assert!(ExperimentConfig::parse("[run]\neval_targets = /no/such/file\n").is_err());
        assert!(ExperimentConfig::parse("[env]\nn = 3\ntarget = bell:phi+\n").is_err());
        assert!(ExperimentConfig::parse("[env]\ntarget = basis:0\n").is_err());
    }

    #[test]
    fn two_stage_lowers_default_lr() {
        let c = ExperimentConfig::parse("[run]\nmode = two-stage\n").unwrap();
        assert_eq!(c.ppo.lr, 1e-4);
        let c = ExperimentConfig::parse("[run]\nmode = two-stage\n[ppo]\nlr = 0.01\n").unwrap();
        assert_eq!(c.ppo.lr, 0.01);
        assert_eq!(ExperimentConfig::parse("").unwrap().ppo.lr, 5e-4);
    }

    #[test]
    fn comments_and_targets() {
        let c = ExperimentConfig::parse("# top\n[env]  # trailing\ntarget = basis:01\n").unwrap();
        assert_eq!(c.target, TargetChoice::Basis("01".into()));
        assert!("bell:xx".parse::<TargetChoice>().is_err());
    }
}
