use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mcast_core::equilibrium::{Schedule, SearchOptions};
use mcast_core::mechanism::{MechanismParams, Rebate, Variant};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(
    name = "mcast",
    version,
    about = "Multicast rate allocation mechanisms"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(tag = "command", rename_all = "lowercase")]
pub enum Command {
    /// Solve the welfare problem and report the KKT certificate.
    Solve(SolveArgs),
    /// Construct the equilibrium candidate and certify it.
    Certify(CertifyArgs),
    /// Run best-response dynamics and write the trajectory.
    Dynamics(DynamicsArgs),
    /// Evaluate allocation and taxes at a given message profile.
    Evaluate(EvaluateArgs),
}

impl Command {
    pub fn out(&self) -> &PathBuf {
        match self {
            Command::Solve(a) => &a.out,
            Command::Certify(a) => &a.out,
            Command::Dynamics(a) => &a.out,
            Command::Evaluate(a) => &a.out,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum VariantArg {
    Wbb,
    Sbb,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RebateArg {
    Others,
    Published,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleArg {
    GaussSeidel,
    Jacobi,
}

impl From<ScheduleArg> for Schedule {
    fn from(s: ScheduleArg) -> Self {
        match s {
            ScheduleArg::GaussSeidel => Schedule::GaussSeidel,
            ScheduleArg::Jacobi => Schedule::Jacobi,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum StartArg {
    /// The KKT-constructed candidate.
    Ne,
    Zero,
    /// The profile given by `--profile`.
    Profile,
}

/// Inclusive seed range written `a..b`, or a single seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SeedRange {
    pub first: u64,
    pub last: u64,
}

impl FromStr for SeedRange {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parse = |t: &str| {
            t.trim()
                .parse::<u64>()
                .map_err(|e| format!("bad seed `{t}`: {e}"))
        };
        let (first, last) = match s.split_once("..") {
            Some((a, b)) => (parse(a)?, parse(b.trim_start_matches('='))?),
            None => {
                let v = parse(s)?;
                (v, v)
            }
        };
        if first > last {
            return Err(format!("empty seed range {s}"));
        }
        Ok(Self { first, last })
    }
}

impl SeedRange {
    pub fn seeds(&self) -> Vec<u64> {
        (self.first..=self.last).collect()
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct MechanismArgs {
    #[arg(long, value_enum, default_value_t = VariantArg::Wbb)]
    pub variant: VariantArg,
    /// How the strongly budget balanced rebate prices the others' demands.
    #[arg(long, value_enum, default_value_t = RebateArg::Others)]
    pub redistribution: RebateArg,
    #[arg(long, default_value_t = 1e-2)]
    pub eta: f64,
    #[arg(long, default_value_t = 1e-2)]
    pub xi: f64,
    #[arg(long, default_value_t = 1e-2)]
    pub zeta: f64,
}

impl MechanismArgs {
    pub fn params(&self) -> MechanismParams {
        MechanismParams {
            eta: self.eta,
            xi: self.xi,
            zeta: self.zeta,
            variant: match self.variant {
                VariantArg::Wbb => Variant::Wbb,
                VariantArg::Sbb => Variant::Sbb,
            },
            rebate: match self.redistribution {
                RebateArg::Others => Rebate::Others,
                RebateArg::Published => Rebate::Published,
            },
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SearchArgs {
    /// Certification threshold; defaults to 1e-6 times the largest optimal valuation.
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Seed of the deviation search.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Utility evaluations per restart and agent.
    #[arg(long, default_value_t = 1000)]
    pub budget: usize,
    #[arg(long, default_value_t = 8)]
    pub restarts: usize,
}

impl SearchArgs {
    pub fn options(&self) -> SearchOptions {
        SearchOptions {
            budget: self.budget,
            restarts: self.restarts,
            seed: self.seed,
            only: None,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct SolveArgs {
    #[arg(long)]
    pub instance: PathBuf,
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
    /// Fail with exit code 4 unless A4 holds at the optimum.
    #[arg(long)]
    pub require_a4: bool,
    #[arg(long, default_value = "mcast-out")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct CertifyArgs {
    #[arg(long, required_unless_present = "seeds", conflicts_with = "seeds")]
    pub instance: Option<PathBuf>,
    /// Sweep A4-filtered random desk instances instead of one file.
    #[arg(long)]
    pub seeds: Option<SeedRange>,
    #[command(flatten)]
    pub mechanism: MechanismArgs,
    #[command(flatten)]
    pub search: SearchArgs,
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
    /// Extra joint halvings allowed when a gain survives the curvature check.
    #[arg(long, default_value_t = 8)]
    pub retries: usize,
    #[arg(long, default_value = "mcast-out")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct DynamicsArgs {
    #[arg(long)]
    pub instance: PathBuf,
    #[command(flatten)]
    pub mechanism: MechanismArgs,
    #[command(flatten)]
    pub search: SearchArgs,
    #[arg(long, value_enum, default_value_t = StartArg::Zero)]
    pub start: StartArg,
    #[arg(long, required_if_eq("start", "profile"))]
    pub profile: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ScheduleArg::GaussSeidel)]
    pub schedule: ScheduleArg,
    #[arg(long, default_value_t = 100)]
    pub rounds: usize,
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
    #[arg(long, default_value = "mcast-out")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub instance: PathBuf,
    #[arg(long)]
    pub profile: PathBuf,
    #[command(flatten)]
    pub mechanism: MechanismArgs,
    #[arg(long, default_value = "mcast-out")]
    pub out: PathBuf,
}
