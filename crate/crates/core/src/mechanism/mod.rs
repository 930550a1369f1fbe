//! Message-to-outcome maps of the two mechanisms.
//!
//! Every agent `ki` reports a demand `y`, two prices `(q1, q2)` per link on
//! its route and, under strong budget balance, a guess `rho` of the scaling
//! factor. [`allocate`] scales the demands onto the capacity boundary and the
//! tax functions charge a neighbour's quoted price plus penalty terms that
//! vanish exactly when the quotes agree and the constraints are
//! complementary. All maps here are pure.

mod allocation;
mod io;
mod tax;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{AgentId, NetworkInstance};

pub use allocation::{allocate, group_maxima, link_scaling, Allocation, GroupMaxima, LinkBound};
pub use io::{outcome_to_json, profile_from_json, profile_to_json};
pub use tax::{
    evaluate, group_prices, rate_and_tax, tax_sbb, tax_wbb, utility, AgentTax, GroupPrices,
    Outcome, TaxTerms,
};

#[derive(Debug, Error, PartialEq)]
pub enum MechanismError {
    #[error("mechanism constants must be finite and positive: {0}")]
    InvalidParams(String),
    #[error("profile has {got} messages for {expected} agents")]
    ProfileSize { expected: usize, got: usize },
    #[error("message of agent {agent} quotes {got} price pairs for a route of {expected} links")]
    RouteShape {
        agent: AgentId,
        expected: usize,
        got: usize,
    },
    #[error("message of agent {0} has a negative or non-finite component")]
    InvalidComponent(AgentId),
    #[error("strong budget balance needs a rho signal from agent {0}")]
    MissingRho(AgentId),
    #[error("strong budget balance needs at least two agents on link `{0}`")]
    LonelyLink(String),
    #[error("malformed profile document: {0}")]
    Parse(String),
    #[error("profile refers to unknown agent `{0}`")]
    UnknownAgent(String),
    #[error("profile has no message for agent {0}")]
    MissingAgent(AgentId),
    #[error("message of agent {agent} quotes unknown or off-route link `{link}`")]
    UnknownLink { agent: AgentId, link: String },
}

/// The two prices an agent quotes on one link. `q1` is its own price for
/// the group; `q2` predicts its successor's `q1`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PricePair {
    pub q1: f64,
    pub q2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub y: f64,
    /// One pair per link, aligned with the agent's route.
    pub q: Vec<PricePair>,
    pub rho: Option<f64>,
}

impl Message {
    /// The zero message for an agent with `hops` links.
    pub fn zero(hops: usize, with_rho: bool) -> Self {
        Self {
            y: 0.0,
            q: vec![PricePair::default(); hops],
            rho: with_rho.then_some(0.0),
        }
    }
}

/// Messages indexed like [`NetworkInstance::agents`].
#[derive(Debug, Clone, PartialEq)]
pub struct MessageProfile {
    pub messages: Vec<Message>,
}

impl MessageProfile {
    pub fn zero(instance: &NetworkInstance, variant: Variant) -> Self {
        Self {
            messages: instance
                .agents()
                .iter()
                .map(|a| Message::zero(a.route.len(), variant == Variant::Sbb))
                .collect(),
        }
    }

    pub fn demands(&self) -> Vec<f64> {
        self.messages.iter().map(|m| m.y).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Weak budget balance: taxes go to the seller.
    Wbb,
    /// Strong budget balance: taxes are redistributed among the agents.
    Sbb,
}

/// How the redistribution term of the strongly budget balanced tax prices
/// the other agents' demands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Rebate {
    /// Each other agent's demand is priced at the `q2` of its predecessor
    /// (the group mean `w_bar` for a lone group member). Pays back every
    /// agent's price term exactly whenever `rho = r`, but the rebate then
    /// depends on the recipient's own quotes, so the recipient can inflate it.
    Published,
    /// Each other agent's demand is priced at that agent's own `q1`. No
    /// recipient's own message enters its rebate, and at equilibrium the
    /// value equals the price charged.
    Others,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MechanismParams {
    pub eta: f64,
    pub xi: f64,
    pub zeta: f64,
    pub variant: Variant,
    pub rebate: Rebate,
}

impl MechanismParams {
    pub fn new(variant: Variant) -> Self {
        Self {
            eta: 1e-2,
            xi: 1e-2,
            zeta: 1e-2,
            variant,
            rebate: Rebate::Others,
        }
    }

    pub fn check(&self) -> Result<(), MechanismError> {
        for (name, v) in [("eta", self.eta), ("xi", self.xi), ("zeta", self.zeta)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(MechanismError::InvalidParams(format!("{name} = {v}")));
            }
        }
        Ok(())
    }
}

/// Checks shapes and signs of a profile against the instance and variant.
pub fn check_profile(
    instance: &NetworkInstance,
    profile: &MessageProfile,
    params: &MechanismParams,
) -> Result<(), MechanismError> {
    params.check()?;
    if profile.messages.len() != instance.num_agents() {
        return Err(MechanismError::ProfileSize {
            expected: instance.num_agents(),
            got: profile.messages.len(),
        });
    }
    let ok = |v: f64| v.is_finite() && v >= 0.0;
    for (agent, msg) in instance.agents().iter().zip(&profile.messages) {
        if msg.q.len() != agent.route.len() {
            return Err(MechanismError::RouteShape {
                agent: agent.id,
                expected: agent.route.len(),
                got: msg.q.len(),
            });
        }
        if !ok(msg.y)
            || msg.q.iter().any(|p| !ok(p.q1) || !ok(p.q2))
            || msg.rho.is_some_and(|r| !ok(r))
        {
            return Err(MechanismError::InvalidComponent(agent.id));
        }
        if params.variant == Variant::Sbb && msg.rho.is_none() {
            return Err(MechanismError::MissingRho(agent.id));
        }
    }
    if params.variant == Variant::Sbb {
        for l in 0..instance.num_links() {
            if instance.usage(l).agents.len() < 2 {
                return Err(MechanismError::LonelyLink(instance.links()[l].id.clone()));
            }
        }
    }
    Ok(())
}
