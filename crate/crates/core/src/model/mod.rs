//! Network, agent and valuation data model.
//!
//! A [`NetworkInstance`] is immutable once built: the derived per-link views
//! (groups present on a link, the within-group member order used for the
//! cyclic neighbour relation) are computed at construction and shared
//! read-only by every later stage.

mod io;
mod random;
mod validate;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use io::{instance_from_json, instance_to_json};
pub use random::{random_instance, GeneratorConfig};
pub use validate::{validate, ValidationReport, Violation};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("malformed instance document: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("instance has no links")]
    NoLinks,
    #[error("duplicate link id `{0}`")]
    DuplicateLink(String),
    #[error("duplicate agent {0}")]
    DuplicateAgent(AgentId),
    #[error("agent {0} has an empty route")]
    EmptyRoute(AgentId),
    #[error("agent {agent} references unknown link `{link}`")]
    UnknownLink { agent: AgentId, link: String },
    #[error("agent {agent} lists link `{link}` more than once")]
    RepeatedHop { agent: AgentId, link: String },
    #[error("group {group} has no members on link `{link}`")]
    UnknownGroupLink { group: u32, link: String },
    #[error("invalid generator arguments: {0}")]
    InvalidGenerator(String),
    #[error("route sampling exhausted after {0} attempts without satisfying A3")]
    SamplingExhausted(usize),
}

/// Agent `ki`: member `i` of multicast group `k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AgentId {
    pub group: u32,
    pub member: u32,
}

impl AgentId {
    pub fn new(group: u32, member: u32) -> Self {
        Self { group, member }
    }
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.group, self.member)
    }
}

impl FromStr for AgentId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (k, i) = s
            .split_once('.')
            .ok_or_else(|| format!("agent key `{s}` is not of the form k.i"))?;
        let group = k.parse().map_err(|_| format!("bad group in `{s}`"))?;
        let member = i.parse().map_err(|_| format!("bad member in `{s}`"))?;
        Ok(Self { group, member })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Link {
    pub id: String,
    pub capacity: f64,
}

/// Strictly increasing, strictly concave valuation with `v(0) = 0` and a
/// finite slope at the origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", deny_unknown_fields)]
pub enum Valuation {
    /// `a * ln(1 + b x)`
    LogSat { a: f64, b: f64 },
    /// `a * (1 - exp(-b x))`
    ExpSat { a: f64, b: f64 },
}

impl Valuation {
    pub fn params(&self) -> (f64, f64) {
        match *self {
            Valuation::LogSat { a, b } | Valuation::ExpSat { a, b } => (a, b),
        }
    }

    pub fn has_valid_params(&self) -> bool {
        let (a, b) = self.params();
        a.is_finite() && b.is_finite() && a > 0.0 && b > 0.0
    }

    pub fn value(&self, x: f64) -> f64 {
        match *self {
            Valuation::LogSat { a, b } => a * (b * x).ln_1p(),
            Valuation::ExpSat { a, b } => -a * (-b * x).exp_m1(),
        }
    }

    /// `v(to) - v(from)` without the cancellation of subtracting two
    /// nearly equal saturated values.
    pub fn increment(&self, from: f64, to: f64) -> f64 {
        match *self {
            Valuation::LogSat { a, b } => a * (b * (to - from) / (1.0 + b * from)).ln_1p(),
            Valuation::ExpSat { a, b } => -a * (-b * from).exp() * (-b * (to - from)).exp_m1(),
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        match *self {
            Valuation::LogSat { a, b } => a * b / (1.0 + b * x),
            Valuation::ExpSat { a, b } => a * b * (-b * x).exp(),
        }
    }

    pub fn second_derivative(&self, x: f64) -> f64 {
        match *self {
            Valuation::LogSat { a, b } => {
                let d = 1.0 + b * x;
                -a * b * b / (d * d)
            }
            Valuation::ExpSat { a, b } => -a * b * b * (-b * x).exp(),
        }
    }

    /// `v'(0) = a b`.
    pub fn slope_at_origin(&self) -> f64 {
        let (a, b) = self.params();
        a * b
    }
}

/// One link on an agent's route with its QoS weight `alpha`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hop {
    pub link: usize,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Agent {
    pub id: AgentId,
    pub valuation: Valuation,
    pub route: Vec<Hop>,
}

/// Members of one group on one link, in the within-group link order.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupOnLink {
    pub group: u32,
    /// Agent indices sorted by ascending member index.
    pub members: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LinkUsage {
    /// Groups using the link, ascending by group id.
    pub groups: Vec<GroupOnLink>,
    /// Every agent using the link, ascending by agent index.
    pub agents: Vec<usize>,
}

/// Where a hop of an agent's route sits inside the link's usage view.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Placement {
    /// Index into `LinkUsage::groups`.
    pub slot: usize,
    /// Position of the agent in that group's member order.
    pub position: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkInstance {
    links: Vec<Link>,
    agents: Vec<Agent>,
    usage: Vec<LinkUsage>,
    placements: Vec<Vec<Placement>>,
}

impl NetworkInstance {
    /// Builds an instance and derives the per-link views. Agents are stored
    /// sorted by `(group, member)`, which fixes every index used downstream.
    pub fn new(links: Vec<Link>, mut agents: Vec<Agent>) -> Result<Self, ModelError> {
        if links.is_empty() {
            return Err(ModelError::NoLinks);
        }
        for (i, link) in links.iter().enumerate() {
            if links[..i].iter().any(|other| other.id == link.id) {
                return Err(ModelError::DuplicateLink(link.id.clone()));
            }
        }
        agents.sort_by_key(|a| a.id);
        for pair in agents.windows(2) {
            if pair[0].id == pair[1].id {
                return Err(ModelError::DuplicateAgent(pair[0].id));
            }
        }
        for agent in &agents {
            if agent.route.is_empty() {
                return Err(ModelError::EmptyRoute(agent.id));
            }
            for (h, hop) in agent.route.iter().enumerate() {
                if hop.link >= links.len() {
                    return Err(ModelError::UnknownLink {
                        agent: agent.id,
                        link: hop.link.to_string(),
                    });
                }
                if agent.route[..h].iter().any(|other| other.link == hop.link) {
                    return Err(ModelError::RepeatedHop {
                        agent: agent.id,
                        link: links[hop.link].id.clone(),
                    });
                }
            }
        }

        let mut usage = vec![LinkUsage::default(); links.len()];
        for (a, agent) in agents.iter().enumerate() {
            for hop in &agent.route {
                let view = &mut usage[hop.link];
                view.agents.push(a);
                match view.groups.iter_mut().find(|g| g.group == agent.id.group) {
                    Some(g) => g.members.push(a),
                    None => view.groups.push(GroupOnLink {
                        group: agent.id.group,
                        members: vec![a],
                    }),
                }
            }
        }
        // Agents are visited in (group, member) order, so member lists and the
        // group list are already ascending.

        let placements = agents
            .iter()
            .enumerate()
            .map(|(a, agent)| {
                agent
                    .route
                    .iter()
                    .map(|hop| {
                        let view = &usage[hop.link];
                        let slot = view
                            .groups
                            .iter()
                            .position(|g| g.group == agent.id.group)
                            .expect("agent registered on its own link");
                        let position = view.groups[slot]
                            .members
                            .iter()
                            .position(|&m| m == a)
                            .expect("agent registered in its group");
                        Placement { slot, position }
                    })
                    .collect()
            })
            .collect();

        Ok(Self {
            links,
            agents,
            usage,
            placements,
        })
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn agents(&self) -> &[Agent] {
        &self.agents
    }

    pub fn num_links(&self) -> usize {
        self.links.len()
    }

    pub fn num_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn agent(&self, a: usize) -> &Agent {
        &self.agents[a]
    }

    pub fn agent_index(&self, id: AgentId) -> Option<usize> {
        self.agents.binary_search_by_key(&id, |a| a.id).ok()
    }

    pub fn link_index(&self, id: &str) -> Option<usize> {
        self.links.iter().position(|l| l.id == id)
    }

    pub fn capacity(&self, l: usize) -> f64 {
        self.links[l].capacity
    }

    pub fn usage(&self, l: usize) -> &LinkUsage {
        &self.usage[l]
    }

    pub fn placements(&self, a: usize) -> &[Placement] {
        &self.placements[a]
    }

    /// `K^l`, the number of groups on link `l`.
    pub fn groups_on_link(&self, l: usize) -> usize {
        self.usage[l].groups.len()
    }

    /// Total number of `(group, link)` pairs, i.e. the dimension of `m`.
    pub fn num_group_links(&self) -> usize {
        self.usage.iter().map(|u| u.groups.len()).sum()
    }

    /// Offset of link `l`'s groups inside a flattened `(group, link)` vector.
    pub fn group_link_offsets(&self) -> Vec<usize> {
        let mut offsets = Vec::with_capacity(self.links.len());
        let mut acc = 0;
        for u in &self.usage {
            offsets.push(acc);
            acc += u.groups.len();
        }
        offsets
    }

    /// Cyclic predecessor and successor of agent `a` on its `h`-th hop.
    /// Both equal `a` when the agent is alone in its group on that link.
    pub fn neighbours(&self, a: usize, h: usize) -> (usize, usize) {
        let link = self.agents[a].route[h].link;
        let p = self.placements[a][h];
        let members = &self.usage[link].groups[p.slot].members;
        let g = members.len();
        let pred = members[(p.position + g - 1) % g];
        let succ = members[(p.position + 1) % g];
        (pred, succ)
    }

    /// Route position of link `l` for agent `a`, if the agent uses it.
    pub fn hop_index(&self, a: usize, l: usize) -> Option<usize> {
        self.agents[a].route.iter().position(|h| h.link == l)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum OrderError {
    #[error("member {0} is not in this group on this link")]
    NotAMember(u32),
    #[error("singleton group on link: member {0} has no distinct neighbour")]
    Singleton(u32),
}

/// The ordering `g_k^l` of group `k`'s members on link `l`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupOrder {
    pub members: Vec<u32>,
}

impl GroupOrder {
    /// 1-based rank `g_k^l(i)`.
    pub fn rank(&self, member: u32) -> Option<usize> {
        self.members
            .iter()
            .position(|&m| m == member)
            .map(|p| p + 1)
    }

    /// Inverse map `(g_k^l)^{-1}`.
    pub fn member_at(&self, rank: usize) -> Option<u32> {
        rank.checked_sub(1)
            .and_then(|p| self.members.get(p).copied())
    }

    pub fn successor(&self, member: u32) -> Result<u32, OrderError> {
        self.step(member, 1)
    }

    pub fn predecessor(&self, member: u32) -> Result<u32, OrderError> {
        self.step(member, self.members.len() - 1)
    }

    fn step(&self, member: u32, by: usize) -> Result<u32, OrderError> {
        let pos = self
            .members
            .iter()
            .position(|&m| m == member)
            .ok_or(OrderError::NotAMember(member))?;
        if self.members.len() == 1 {
            return Err(OrderError::Singleton(member));
        }
        Ok(self.members[(pos + by) % self.members.len()])
    }
}

/// Members of `G_k^l` in ascending member order.
pub fn group_link_order(
    instance: &NetworkInstance,
    group: u32,
    link: usize,
) -> Result<GroupOrder, ModelError> {
    let unknown = || ModelError::UnknownGroupLink {
        group,
        link: instance
            .links
            .get(link)
            .map_or_else(|| link.to_string(), |l| l.id.clone()),
    };
    let view = instance.usage.get(link).ok_or_else(unknown)?;
    let g = view
        .groups
        .iter()
        .find(|g| g.group == group)
        .ok_or_else(unknown)?;
    Ok(GroupOrder {
        members: g
            .members
            .iter()
            .map(|&a| instance.agents[a].id.member)
            .collect(),
    })
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    pub fn log(a: f64, b: f64) -> Valuation {
        Valuation::LogSat { a, b }
    }

    pub fn agent(group: u32, member: u32, valuation: Valuation, route: &[(usize, f64)]) -> Agent {
        Agent {
            id: AgentId::new(group, member),
            valuation,
            route: route
                .iter()
                .map(|&(link, alpha)| Hop { link, alpha })
                .collect(),
        }
    }

    pub fn links(caps: &[f64]) -> Vec<Link> {
        caps.iter()
            .enumerate()
            .map(|(i, &c)| Link {
                id: format!("l{}", i + 1),
                capacity: c,
            })
            .collect()
    }

    /// One link of capacity 10 shared by two singleton groups with `LogSat(1,1)`.
    pub fn symmetric() -> NetworkInstance {
        NetworkInstance::new(
            links(&[10.0]),
            vec![
                agent(1, 1, log(1.0, 1.0), &[(0, 1.0)]),
                agent(2, 1, log(1.0, 1.0), &[(0, 1.0)]),
            ],
        )
        .unwrap()
    }
}
