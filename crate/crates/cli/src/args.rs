use std::ops::Range;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gridpriv_core::dp_mechanism::PrivacyParams;
use gridpriv_core::opf_core::ObjectiveArm;
use gridpriv_core::restoration::RestorationConfig;
use gridpriv_nlp::SolverOptions;

#[derive(Debug, Parser)]
#[command(
    name = "gridpriv",
    version,
    about = "Differentially private release of power network parameters"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Perturb a case and restore a feasible, faithful release.
    Obfuscate(ObfuscateArgs),
    /// Solve the AC-OPF of a case and print the result as JSON.
    Solve(SolveArgs),
    /// Run every case in a directory over a range of seeds.
    Batch(BatchArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Arm {
    Cost,
    Loss,
}

impl From<Arm> for ObjectiveArm {
    fn from(a: Arm) -> Self {
        match a {
            Arm::Cost => ObjectiveArm::Cost,
            Arm::Loss => ObjectiveArm::Loss,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ArmChoice {
    Cost,
    Loss,
    Both,
}

impl ArmChoice {
    pub fn arms(self) -> Vec<ObjectiveArm> {
        match self {
            ArmChoice::Cost => vec![ObjectiveArm::Cost],
            ArmChoice::Loss => vec![ObjectiveArm::Loss],
            ArmChoice::Both => vec![ObjectiveArm::Cost, ObjectiveArm::Loss],
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct PrivacyArgs {
    /// Indistinguishability distance (p.u.).
    #[arg(long, default_value_t = 0.01)]
    pub alpha: f64,
    /// Allowed relative deviation from the baseline grid loss.
    #[arg(long, default_value_t = 0.5)]
    pub beta: f64,
    /// Privacy budget.
    #[arg(long, default_value_t = 1.0)]
    pub epsilon: f64,
    /// Width factor of the per-level admittance boxes.
    #[arg(long, default_value_t = 30.0)]
    pub lambda: f64,
}

impl PrivacyArgs {
    pub fn params(&self) -> anyhow::Result<PrivacyParams> {
        let p = PrivacyParams {
            alpha: self.alpha,
            beta: self.beta,
            epsilon: self.epsilon,
            lambda: self.lambda,
        };
        p.validate()?;
        Ok(p)
    }
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub privacy: PrivacyArgs,
    /// Wall-clock budget per run, in seconds.
    #[arg(long = "timeout-s", default_value_t = 600.0)]
    pub timeout_s: f64,
    /// Baseline grid loss (p.u.); skips the baseline OPF solve.
    #[arg(long = "l-star")]
    pub l_star: Option<f64>,
    /// Output directory.
    #[arg(long = "out-dir", env = "GRIDPRIV_OUT_DIR", default_value = ".")]
    pub out_dir: PathBuf,
    /// Also pull the line-charging susceptance toward its noisy value.
    #[arg(long)]
    pub shunt_term: bool,
}

impl RunArgs {
    pub fn restoration(&self) -> anyhow::Result<RestorationConfig> {
        let defaults = RestorationConfig::default();
        Ok(RestorationConfig {
            shunt_in_objective: self.shunt_term,
            solver: SolverOptions {
                timeout_s: timeout(self.timeout_s)?,
                ..defaults.solver
            },
        })
    }

    pub fn l_star(&self) -> anyhow::Result<Option<f64>> {
        match self.l_star {
            Some(v) if !(v.is_finite() && v >= 0.0) => {
                anyhow::bail!("--l-star must be a finite non-negative loss")
            }
            v => Ok(v),
        }
    }
}

pub fn timeout(t: f64) -> anyhow::Result<f64> {
    anyhow::ensure!(t > 0.0 && !t.is_nan(), "--timeout-s must be positive");
    Ok(t)
}

#[derive(Debug, Args)]
pub struct ObfuscateArgs {
    /// Matpower case file.
    pub case: PathBuf,
    #[command(flatten)]
    pub run: RunArgs,
    /// Noise seed; drawn from the operating system when omitted.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Objective of the baseline OPF that fixes the target loss.
    #[arg(long, value_enum, default_value_t = Arm::Cost)]
    pub objective: Arm,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    /// Matpower case file.
    pub case: PathBuf,
    #[arg(long, value_enum, default_value_t = Arm::Cost)]
    pub objective: Arm,
    #[arg(long = "timeout-s", default_value_t = 600.0)]
    pub timeout_s: f64,
}

#[derive(Debug, Args)]
pub struct BatchArgs {
    /// Directory of Matpower case files.
    pub case_dir: PathBuf,
    #[command(flatten)]
    pub run: RunArgs,
    /// Half-open seed range `A..B`.
    #[arg(long, default_value = "0..100", value_parser = parse_seed_range)]
    pub seeds: Range<u64>,
    #[arg(long, value_enum, default_value_t = ArmChoice::Both)]
    pub objective: ArmChoice,
    /// Parallel runs; defaults to the number of available cores.
    #[arg(long)]
    pub workers: Option<usize>,
}

pub fn parse_seed_range(s: &str) -> Result<Range<u64>, String> {
    let (a, b) = s
        .split_once("..")
        .ok_or_else(|| format!("expected A..B, got {s:?}"))?;
    let a: u64 = a.trim().parse().map_err(|e| format!("bad start {a:?}: {e}"))?;
    let b: u64 = b.trim().parse().map_err(|e| format!("bad end {b:?}: {e}"))?;
    if a >= b {
        return Err(format!("empty seed range {s:?}"));
    }
    Ok(a..b)
}
