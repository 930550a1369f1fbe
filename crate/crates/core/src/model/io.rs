//! Instance file format.
//!
//! ```json
//! { "links":  [{ "id": "l1", "capacity": 10.0 }],
//!   "agents": [{ "group": 1, "member": 1,
//!                "valuation": { "family": "LogSat", "a": 1.0, "b": 1.0 },
//!                "route": [{ "link": "l1", "alpha": 1.0 }] }] }
//! ```
//!
//! Link ids may be strings or integers on input; they are written back as
//! strings. Output uses sorted keys so that re-serialising a parsed document
//! reproduces it byte for byte.

use serde::{Deserialize, Serialize};

use super::{Agent, AgentId, Hop, Link, ModelError, NetworkInstance, Valuation};

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum LinkKey {
    Text(String),
    Number(u64),
}

impl LinkKey {
    fn into_string(self) -> String {
        match self {
            LinkKey::Text(s) => s,
            LinkKey::Number(n) => n.to_string(),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LinkIn {
    id: LinkKey,
    capacity: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct HopIn {
    link: LinkKey,
    alpha: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AgentIn {
    group: u32,
    member: u32,
    valuation: Valuation,
    route: Vec<HopIn>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct InstanceIn {
    links: Vec<LinkIn>,
    agents: Vec<AgentIn>,
}

#[derive(Serialize)]
struct LinkOut<'a> {
    capacity: f64,
    id: &'a str,
}

#[derive(Serialize)]
struct HopOut<'a> {
    alpha: f64,
    link: &'a str,
}

#[derive(Serialize)]
struct AgentOut<'a> {
    group: u32,
    member: u32,
    route: Vec<HopOut<'a>>,
    valuation: Valuation,
}

#[derive(Serialize)]
struct InstanceOut<'a> {
    agents: Vec<AgentOut<'a>>,
    links: Vec<LinkOut<'a>>,
}

pub fn instance_from_json(text: &str) -> Result<NetworkInstance, ModelError> {
    let doc: InstanceIn = serde_json::from_str(text)?;
    let links: Vec<Link> = doc
        .links
        .into_iter()
        .map(|l| Link {
            id: l.id.into_string(),
            capacity: l.capacity,
        })
        .collect();
    let mut agents = Vec::with_capacity(doc.agents.len());
    for a in doc.agents {
        let id = AgentId::new(a.group, a.member);
        let mut route = Vec::with_capacity(a.route.len());
        for hop in a.route {
            let name = hop.link.into_string();
            let link =
                links
                    .iter()
                    .position(|l| l.id == name)
                    .ok_or_else(|| ModelError::UnknownLink {
                        agent: id,
                        link: name.clone(),
                    })?;
            route.push(Hop {
                link,
                alpha: hop.alpha,
            });
        }
        agents.push(Agent {
            id,
            valuation: a.valuation,
            route,
        });
    }
    NetworkInstance::new(links, agents)
}

/// Canonical pretty-printed JSON with sorted keys.
pub fn instance_to_json(instance: &NetworkInstance) -> String {
    let doc = InstanceOut {
        agents: instance
            .agents()
            .iter()
            .map(|a| AgentOut {
                group: a.id.group,
                member: a.id.member,
                route: a
                    .route
                    .iter()
                    .map(|h| HopOut {
                        alpha: h.alpha,
                        link: &instance.links()[h.link].id,
                    })
                    .collect(),
                valuation: a.valuation,
            })
            .collect(),
        links: instance
            .links()
            .iter()
            .map(|l| LinkOut {
                capacity: l.capacity,
                id: &l.id,
            })
            .collect(),
    };
    // Round-trip through `Value` so nested maps (the tagged valuation) are
    // emitted with sorted keys as well.
    let value = serde_json::to_value(&doc).expect("instance serialises");
    serde_json::to_string_pretty(&value).expect("value serialises")
}

#[cfg(test)]
mod tests {
    use super::*;

    const SYM: &str = r#"{
        "links": [{"id": 1, "capacity": 10}],
        "agents": [
            {"group": 1, "member": 1, "valuation": {"family": "LogSat", "a": 1, "b": 1},
             "route": [{"link": 1, "alpha": 1}]},
            {"group": 2, "member": 1, "valuation": {"family": "ExpSat", "a": 2, "b": 0.5},
             "route": [{"link": "1", "alpha": 1.5}]}
        ]
    }"#;

    #[test]
    fn parses_numeric_and_string_link_ids() {
        let inst = instance_from_json(SYM).unwrap();
        assert_eq!(inst.num_links(), 1);
        assert_eq!(inst.links()[0].id, "1");
        assert_eq!(inst.agent(1).route[0].alpha, 1.5);
        assert_eq!(
            inst.agent(1).valuation,
            Valuation::ExpSat { a: 2.0, b: 0.5 }
        );
    }

    #[test]
    fn canonical_output_is_a_fixed_point() {
        let inst = instance_from_json(SYM).unwrap();
        let once = instance_to_json(&inst);
        let twice = instance_to_json(&instance_from_json(&once).unwrap());
        assert_eq!(once, twice);
        let agents_at = once.find("\"agents\"").unwrap();
        let links_at = once.find("\"links\"").unwrap();
        assert!(agents_at < links_at);
    }

    #[test]
    fn rejects_unknown_links_and_fields() {
        let bad_link = SYM.replace("\"link\": 1,", "\"link\": 7,");
        assert!(matches!(
            instance_from_json(&bad_link),
            Err(ModelError::UnknownLink { .. })
        ));
        let extra = SYM.replace("\"capacity\": 10", "\"capacity\": 10, \"cost\": 3");
        assert!(matches!(
            instance_from_json(&extra),
            Err(ModelError::Parse(_))
        ));
        assert!(matches!(instance_from_json("{"), Err(ModelError::Parse(_))));
    }
}
