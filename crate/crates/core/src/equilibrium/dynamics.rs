//! Best-response dynamics. Trajectories are recorded, not assumed to converge.

use std::fmt::Write as _;

use serde::Serialize;

use super::search::{best_response, SearchOptions};
use super::EquilibriumError;
use crate::mechanism::{evaluate, Allocation, MechanismParams, MessageProfile};
use crate::model::NetworkInstance;
use crate::parallel::Exec;

/// Relative slack allowed on capacity and group-maximum constraints when
/// flagging a round's allocation as feasible.
const FEASIBILITY_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Schedule {
    /// Agents respond one after another to the latest profile.
    GaussSeidel,
    /// All agents respond to the same profile; moves are applied together.
    Jacobi,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgentStep {
    pub y: f64,
    pub x: f64,
    pub t: f64,
    /// Gain the agent's best response offered during the round.
    pub gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundRecord {
    pub round: usize,
    /// State after the round's moves.
    pub agents: Vec<AgentStep>,
    pub total_tax: f64,
    pub max_gain: f64,
    pub feasible: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub rounds: Vec<RoundRecord>,
    pub profile: MessageProfile,
    /// True when the last round found no gain above epsilon.
    pub fixed_point: bool,
}

fn feasible(instance: &NetworkInstance, alloc: &Allocation) -> bool {
    let offsets = instance.group_link_offsets();
    let links_ok = (0..instance.num_links()).all(|l| {
        let c = instance.capacity(l);
        alloc.link_load(instance, l) <= c * (1.0 + FEASIBILITY_SLACK)
    });
    let members_ok = instance.agents().iter().enumerate().all(|(a, agent)| {
        alloc.x[a] >= 0.0
            && agent
                .route
                .iter()
                .zip(instance.placements(a))
                .all(|(hop, p)| {
                    let m = alloc.m[offsets[hop.link] + p.slot];
                    hop.alpha * alloc.x[a] <= m * (1.0 + FEASIBILITY_SLACK)
                })
    });
    links_ok && members_ok
}

#[allow(clippy::too_many_arguments)]
pub fn br_dynamics(
    instance: &NetworkInstance,
    initial: &MessageProfile,
    params: &MechanismParams,
    schedule: Schedule,
    rounds: usize,
    epsilon: f64,
    opts: &SearchOptions,
    exec: Exec,
) -> Result<Trajectory, EquilibriumError> {
    if rounds == 0 {
        return Err(EquilibriumError::NoRounds);
    }
    evaluate(instance, initial, params)?;
    let n = instance.num_agents();
    let mut profile = initial.clone();
    let mut records = Vec::new();
    let mut fixed_point = false;
    for round in 1..=rounds {
        let opts = SearchOptions {
            seed: opts.seed.wrapping_add(round as u64),
            ..opts.clone()
        };
        let mut gains = vec![0.0; n];
        match schedule {
            Schedule::GaussSeidel => {
                for (a, gain) in gains.iter_mut().enumerate() {
                    let br = best_response(instance, &profile, a, params, &opts)?;
                    *gain = br.gain;
                    if br.gain > epsilon {
                        profile.messages[a] = br.message;
                    }
                }
            }
            Schedule::Jacobi => {
                let moves = exec.map(n, |a| best_response(instance, &profile, a, params, &opts));
                for (a, br) in moves.into_iter().enumerate() {
                    let br = br?;
                    gains[a] = br.gain;
                    if br.gain > epsilon {
                        profile.messages[a] = br.message;
                    }
                }
            }
        }
        let outcome = evaluate(instance, &profile, params)?;
        let max_gain = gains.iter().copied().fold(0.0, f64::max);
        records.push(RoundRecord {
            round,
            agents: (0..n)
                .map(|a| AgentStep {
                    y: profile.messages[a].y,
                    x: outcome.allocation.x[a],
                    t: outcome.taxes[a].total,
                    gain: gains[a],
                })
                .collect(),
            total_tax: outcome.total_tax,
            max_gain,
            feasible: feasible(instance, &outcome.allocation),
        });
        if max_gain <= epsilon {
            fixed_point = true;
            break;
        }
    }
    Ok(Trajectory {
        rounds: records,
        profile,
        fixed_point,
    })
}

/// One row per agent per round.
pub fn trajectory_csv(instance: &NetworkInstance, trajectory: &Trajectory) -> String {
    let mut out = String::from("round,agent,y,x,t,gain,feasible\n");
    for rec in &trajectory.rounds {
        for (a, s) in rec.agents.iter().enumerate() {
            let _ = writeln!(
                out,
                "{},{},{:e},{:e},{:e},{:e},{}",
                rec.round,
                instance.agent(a).id,
                s.y,
                s.x,
                s.t,
                s.gain,
                rec.feasible
            );
        }
    }
    out
}
