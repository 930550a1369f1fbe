//! Equilibria of the induced message game.
//!
//! The candidate equilibrium is read off the KKT certificate: demands equal
//! the optimal rates, first quotes equal the member multipliers and second
//! quotes predict the successor. Certification is numerical: a multi-start
//! coordinate search looks for a profitable unilateral deviation of every
//! agent, and a candidate is an `epsilon`-equilibrium when none beats
//! `epsilon`.

mod curvature;
mod dynamics;
mod gradient;
mod lemmas;
mod pipeline;
mod search;

use serde::Serialize;
use thiserror::Error;

use crate::centralized::{DualCertificate, PrimalSolution, SolverError};
use crate::mechanism::{
    allocate, check_profile, MechanismError, MechanismParams, Message, MessageProfile, PricePair,
    Variant,
};
use crate::model::{ModelError, NetworkInstance};
use crate::parallel::Exec;

pub use curvature::{
    auto_shrink, curvature_check, AgentCurvature, CurvatureReport, ShrinkReport, ShrinkStep, Side,
    SideHessian, SHRINK_FLOOR,
};
pub use dynamics::{br_dynamics, trajectory_csv, AgentStep, RoundRecord, Schedule, Trajectory};
pub use gradient::{demand_slope, near_kink, rate_slope};
pub use lemmas::{lemma_suite, LemmaReport};
pub use pipeline::{
    a4_desk_instance, certify_instance, desk_instance, CertifyAttempt, PipelineOptions, Settled,
    MAX_DESK_DRAWS,
};
pub use search::{best_response, coordinates, BestResponse, Coordinate, SearchOptions};

#[derive(Debug, Error)]
pub enum EquilibriumError {
    #[error("A4 fails at the optimum: active groups per link {0:?}")]
    A4Violated(Vec<usize>),
    #[error("scaling factor at the candidate is {0}, expected 1")]
    ScaleMismatch(f64),
    #[error(transparent)]
    Mechanism(#[from] MechanismError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("search budget must be positive")]
    EmptyBudget,
    #[error("dynamics need at least one round")]
    NoRounds,
    #[error("every probed direction of agent {0} crosses a kink")]
    KinkEverywhere(usize),
    #[error("mechanism constants reached the floor {floor:e} without passing the {check} check")]
    Degenerate { floor: f64, check: &'static str },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Source {
    KktConstructed,
    Dynamics,
    User,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateNE {
    pub profile: MessageProfile,
    pub source: Source,
    pub params: MechanismParams,
}

/// Tolerance on `|r - 1|` at the constructed profile.
pub const SCALE_TOLERANCE: f64 = 1e-6;

/// `y = x*`, `q1 = mu*`, `q2 = successor's mu*` and, under strong budget
/// balance, `rho = r(y)`.
pub fn construct_ne(
    instance: &NetworkInstance,
    primal: &PrimalSolution,
    dual: &DualCertificate,
    params: &MechanismParams,
) -> Result<CandidateNE, EquilibriumError> {
    if !dual.residuals.a4.holds {
        return Err(EquilibriumError::A4Violated(
            dual.residuals.a4.active_groups.clone(),
        ));
    }
    let messages: Vec<Message> = instance
        .agents()
        .iter()
        .enumerate()
        .map(|(a, agent)| Message {
            y: primal.x[a],
            q: (0..agent.route.len())
                .map(|h| {
                    let (_, succ) = instance.neighbours(a, h);
                    let succ_hop = instance
                        .hop_index(succ, agent.route[h].link)
                        .expect("successor uses link");
                    PricePair {
                        q1: dual.mu[a][h].max(0.0),
                        q2: dual.mu[succ][succ_hop].max(0.0),
                    }
                })
                .collect(),
            rho: None,
        })
        .collect();
    let mut profile = MessageProfile { messages };
    let r = allocate(instance, &profile.demands()).r;
    if (r - 1.0).abs() > SCALE_TOLERANCE {
        return Err(EquilibriumError::ScaleMismatch(r));
    }
    if params.variant == Variant::Sbb {
        for m in &mut profile.messages {
            m.rho = Some(r);
        }
    }
    check_profile(instance, &profile, params)?;
    Ok(CandidateNE {
        profile,
        source: Source::KktConstructed,
        params: *params,
    })
}

/// Certification threshold: `1e-6` times the largest optimal valuation.
pub fn default_epsilon(instance: &NetworkInstance, primal: &PrimalSolution) -> f64 {
    let scale = instance
        .agents()
        .iter()
        .zip(&primal.x)
        .map(|(a, &x)| a.valuation.value(x))
        .fold(0.0, f64::max);
    1e-6 * scale
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CertificationReport {
    /// Best deviation gain found per agent, over all restarts.
    pub gains: Vec<f64>,
    /// Utility evaluations spent per agent.
    pub evaluations: Vec<usize>,
    pub epsilon: f64,
    pub certified: bool,
}

impl CertificationReport {
    pub fn max_gain(&self) -> f64 {
        self.gains.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

pub fn certify_ne(
    instance: &NetworkInstance,
    candidate: &CandidateNE,
    epsilon: f64,
    opts: &SearchOptions,
    exec: Exec,
) -> Result<CertificationReport, EquilibriumError> {
    check_profile(instance, &candidate.profile, &candidate.params)?;
    let results = exec.map(instance.num_agents(), |a| {
        best_response(instance, &candidate.profile, a, &candidate.params, opts)
    });
    let mut gains = Vec::with_capacity(results.len());
    let mut evaluations = Vec::with_capacity(results.len());
    for r in results {
        let r = r?;
        gains.push(r.gain);
        evaluations.push(r.evaluations);
    }
    let certified = gains.iter().all(|&g| g <= epsilon);
    Ok(CertificationReport {
        gains,
        evaluations,
        epsilon,
        certified,
    })
}
