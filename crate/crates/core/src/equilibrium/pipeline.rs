//! Solve, construct, shrink and certify in one call.

use serde::Serialize;

use super::curvature::{auto_shrink, ShrinkReport, SHRINK_FLOOR};
use super::lemmas::{lemma_suite, LemmaReport};
use super::search::SearchOptions;
use super::{
    certify_ne, construct_ne, default_epsilon, CandidateNE, CertificationReport, EquilibriumError,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::centralized::{check_a4, solve_cp, DualCertificate, PrimalSolution};
use crate::mechanism::{allocate, MechanismParams, Variant};
use crate::model::{random_instance, GeneratorConfig, ModelError, NetworkInstance};
use crate::parallel::Exec;

/// Random instance of desk size: two to four groups of one to three
/// members (so `N <= 12`) over one to six links.
pub fn desk_instance(seed: u64) -> Result<NetworkInstance, ModelError> {
    draw_desk(&mut ChaCha8Rng::seed_from_u64(seed))
}

fn draw_desk(rng: &mut ChaCha8Rng) -> Result<NetworkInstance, ModelError> {
    random_instance(&GeneratorConfig {
        seed: rng.gen(),
        groups: rng.gen_range(2..=4),
        max_group_size: 3,
        links: rng.gen_range(1..=6),
        density: 0.6,
    })
}

/// Upper bound on redraws in [`a4_desk_instance`].
pub const MAX_DESK_DRAWS: usize = 64;

/// The first instance in the desk stream of `seed` whose optimum satisfies
/// A4, with the number of rejected draws. The first draw is
/// `desk_instance(seed)`.
pub fn a4_desk_instance(seed: u64, tol: f64) -> Result<(NetworkInstance, usize), EquilibriumError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut last = Vec::new();
    for rejected in 0..MAX_DESK_DRAWS {
        let instance = draw_desk(&mut rng)?;
        let (primal, _) = solve_cp(&instance, tol)?;
        let a4 = check_a4(&instance, &primal);
        if a4.holds {
            return Ok((instance, rejected));
        }
        last = a4.active_groups;
    }
    Err(EquilibriumError::A4Violated(last))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOptions {
    pub params: MechanismParams,
    pub tol: f64,
    /// Defaults to `1e-6` times the largest optimal valuation.
    pub epsilon: Option<f64>,
    pub search: SearchOptions,
    /// Extra joint halvings of the constants allowed when the curvature
    /// check passes but the deviation search still finds a gain.
    pub certify_retries: usize,
    pub exec: Exec,
}

impl PipelineOptions {
    pub fn new(variant: Variant) -> Self {
        Self {
            params: MechanismParams::new(variant),
            tol: 1e-10,
            epsilon: None,
            search: SearchOptions::default(),
            certify_retries: 8,
            exec: Exec::Parallel,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CertifyAttempt {
    pub eta: f64,
    pub xi: f64,
    pub zeta: f64,
    pub max_gain: f64,
    pub certified: bool,
}

#[derive(Debug, Clone)]
pub struct Settled {
    pub primal: PrimalSolution,
    pub dual: DualCertificate,
    /// Carries the constants that were finally used.
    pub candidate: CandidateNE,
    /// Curvature halvings of the last attempt.
    pub shrink: ShrinkReport,
    pub attempts: Vec<CertifyAttempt>,
    pub certification: CertificationReport,
    pub lemmas: LemmaReport,
    /// `max |x(y) - x*|` at the candidate.
    pub allocation_error: f64,
}

impl Settled {
    pub fn certified(&self) -> bool {
        self.certification.certified
    }
}

pub fn certify_instance(
    instance: &NetworkInstance,
    opts: &PipelineOptions,
) -> Result<Settled, EquilibriumError> {
    let (primal, dual) = solve_cp(instance, opts.tol)?;
    let mut candidate = construct_ne(instance, &primal, &dual, &opts.params)?;
    let epsilon = opts
        .epsilon
        .unwrap_or_else(|| default_epsilon(instance, &primal));
    let mut attempts = Vec::new();
    loop {
        let shrink = auto_shrink(instance, &candidate)?;
        candidate.params = shrink.params;
        let certification = certify_ne(instance, &candidate, epsilon, &opts.search, opts.exec)?;
        let p = candidate.params;
        attempts.push(CertifyAttempt {
            eta: p.eta,
            xi: p.xi,
            zeta: p.zeta,
            max_gain: certification.max_gain(),
            certified: certification.certified,
        });
        let exhausted = attempts.len() > opts.certify_retries
            || p.eta.max(p.xi).max(p.zeta) * 0.5 < SHRINK_FLOOR;
        if certification.certified || exhausted {
            let lemmas = lemma_suite(instance, &candidate)?;
            let x = allocate(instance, &candidate.profile.demands()).x;
            let allocation_error = x
                .iter()
                .zip(&primal.x)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            return Ok(Settled {
                primal,
                dual,
                candidate,
                shrink,
                attempts,
                certification,
                lemmas,
                allocation_error,
            });
        }
        candidate.params = MechanismParams {
            eta: p.eta * 0.5,
            xi: p.xi * 0.5,
            zeta: p.zeta * 0.5,
            ..p
        };
    }
}
