//! Profile and outcome documents.
//!
//! ```json
//! { "1.1": { "y": 5.0, "q": { "l1": [0.1667, 0.1667] }, "rho": 1.0 } }
//! ```

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{AgentTax, LinkBound, MechanismError, Message, MessageProfile, Outcome, PricePair};
use crate::model::{AgentId, NetworkInstance};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MessageDoc {
    q: BTreeMap<String, [f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rho: Option<f64>,
    y: f64,
}

pub fn profile_from_json(
    instance: &NetworkInstance,
    text: &str,
) -> Result<MessageProfile, MechanismError> {
    let doc: BTreeMap<String, MessageDoc> =
        serde_json::from_str(text).map_err(|e| MechanismError::Parse(e.to_string()))?;
    let mut slots: Vec<Option<Message>> = vec![None; instance.num_agents()];
    for (label, entry) in doc {
        let a = label
            .parse::<AgentId>()
            .ok()
            .and_then(|id| instance.agent_index(id))
            .ok_or_else(|| MechanismError::UnknownAgent(label.clone()))?;
        let agent = instance.agent(a);
        let mut q = vec![None; agent.route.len()];
        for (link, [q1, q2]) in entry.q {
            let h = instance
                .link_index(&link)
                .and_then(|l| instance.hop_index(a, l))
                .ok_or_else(|| MechanismError::UnknownLink {
                    agent: agent.id,
                    link: link.clone(),
                })?;
            q[h] = Some(PricePair { q1, q2 });
        }
        let q: Vec<PricePair> = q.iter().flatten().copied().collect();
        if q.len() != agent.route.len() {
            return Err(MechanismError::RouteShape {
                agent: agent.id,
                expected: agent.route.len(),
                got: q.len(),
            });
        }
        slots[a] = Some(Message {
            y: entry.y,
            q,
            rho: entry.rho,
        });
    }
    let messages = slots
        .into_iter()
        .enumerate()
        .map(|(a, m)| m.ok_or(MechanismError::MissingAgent(instance.agent(a).id)))
        .collect::<Result<_, _>>()?;
    Ok(MessageProfile { messages })
}

pub fn profile_to_json(instance: &NetworkInstance, profile: &MessageProfile) -> String {
    let doc: BTreeMap<String, MessageDoc> = instance
        .agents()
        .iter()
        .zip(&profile.messages)
        .map(|(agent, msg)| {
            let q = agent
                .route
                .iter()
                .zip(&msg.q)
                .map(|(hop, p)| (instance.links()[hop.link].id.clone(), [p.q1, p.q2]))
                .collect();
            (
                agent.id.to_string(),
                MessageDoc {
                    q,
                    rho: msg.rho,
                    y: msg.y,
                },
            )
        })
        .collect();
    serde_json::to_string_pretty(&doc).expect("profile serialises")
}

#[derive(Serialize)]
struct TaxOut<'a> {
    links: BTreeMap<String, &'a super::TaxTerms>,
    rho_term: f64,
    total: f64,
}

#[derive(Serialize)]
struct OutcomeOut<'a> {
    m: BTreeMap<String, BTreeMap<u32, f64>>,
    n: BTreeMap<String, BTreeMap<u32, f64>>,
    r: f64,
    r_per_link: BTreeMap<String, LinkBound>,
    #[serde(skip_serializing_if = "Option::is_none")]
    rho_bar: Option<BTreeMap<String, f64>>,
    taxes: BTreeMap<String, TaxOut<'a>>,
    total_tax: f64,
    utilities: BTreeMap<String, f64>,
    w: BTreeMap<String, BTreeMap<u32, f64>>,
    w_bar: BTreeMap<String, BTreeMap<u32, f64>>,
    x: BTreeMap<String, f64>,
}

/// Pretty JSON with the outcome's per-link maps keyed by link id and group.
pub fn outcome_to_json(instance: &NetworkInstance, outcome: &Outcome) -> String {
    let offsets = instance.group_link_offsets();
    let link_id = |l: usize| instance.links()[l].id.clone();
    let per_group = |values: &[f64]| -> BTreeMap<String, BTreeMap<u32, f64>> {
        (0..instance.num_links())
            .map(|l| {
                let inner = instance
                    .usage(l)
                    .groups
                    .iter()
                    .enumerate()
                    .map(|(s, g)| (g.group, values[offsets[l] + s]))
                    .collect();
                (link_id(l), inner)
            })
            .collect()
    };
    let per_agent = |values: &[f64]| -> BTreeMap<String, f64> {
        instance
            .agents()
            .iter()
            .zip(values)
            .map(|(a, &v)| (a.id.to_string(), v))
            .collect()
    };
    let alloc = &outcome.allocation;
    let taxes = instance
        .agents()
        .iter()
        .zip(&outcome.taxes)
        .map(|(agent, t): (_, &AgentTax)| {
            let links = agent
                .route
                .iter()
                .zip(&t.links)
                .map(|(hop, terms)| (link_id(hop.link), terms))
                .collect();
            (
                agent.id.to_string(),
                TaxOut {
                    links,
                    rho_term: t.rho_term,
                    total: t.total,
                },
            )
        })
        .collect();
    let doc = OutcomeOut {
        m: per_group(&alloc.m),
        n: per_group(&alloc.maxima.n),
        r: alloc.r,
        r_per_link: alloc
            .r_per_link
            .iter()
            .enumerate()
            .map(|(l, b)| (link_id(l), *b))
            .collect(),
        rho_bar: outcome.rho_bar.as_deref().map(per_agent),
        taxes,
        total_tax: outcome.total_tax,
        utilities: per_agent(&outcome.utilities),
        w: per_group(&outcome.prices.w),
        w_bar: per_group(&outcome.prices.w_bar),
        x: per_agent(&alloc.x),
    };
    let value = serde_json::to_value(&doc).expect("outcome serialises");
    serde_json::to_string_pretty(&value).expect("value serialises")
}

#[cfg(test)]
mod tests {
    use super::super::{evaluate, MechanismParams, Variant};
    use super::*;
    use crate::model::fixtures::symmetric;

    const PROFILE: &str = r#"{
        "1.1": {"y": 4, "q": {"l1": [0.5, 0.25]}, "rho": 1},
        "2.1": {"y": 6, "q": {"l1": [0.2, 0.1]}, "rho": 0.5}
    }"#;

    #[test]
    fn profile_round_trip() {
        let inst = symmetric();
        let p = profile_from_json(&inst, PROFILE).unwrap();
        assert_eq!(p.messages[1].y, 6.0);
        assert_eq!(p.messages[0].q[0], PricePair { q1: 0.5, q2: 0.25 });
        assert_eq!(p.messages[1].rho, Some(0.5));
        let text = profile_to_json(&inst, &p);
        assert_eq!(profile_from_json(&inst, &text).unwrap(), p);
    }

    #[test]
    fn profile_errors() {
        let inst = symmetric();
        let missing = r#"{"1.1": {"y": 4, "q": {"l1": [0.5, 0.25]}}}"#;
        assert!(matches!(
            profile_from_json(&inst, missing),
            Err(MechanismError::MissingAgent(_))
        ));
        let stranger = PROFILE.replace("2.1", "3.1");
        assert!(matches!(
            profile_from_json(&inst, &stranger),
            Err(MechanismError::UnknownAgent(_))
        ));
        let off_route = PROFILE.replace("\"l1\": [0.2", "\"l9\": [0.2");
        assert!(matches!(
            profile_from_json(&inst, &off_route),
            Err(MechanismError::UnknownLink { .. })
        ));
        assert!(matches!(
            profile_from_json(&inst, "[]"),
            Err(MechanismError::Parse(_))
        ));
    }

    #[test]
    fn outcome_export_marks_unbounded_links() {
        let inst = symmetric();
        let p = MessageProfile::zero(&inst, Variant::Wbb);
        let out = evaluate(&inst, &p, &MechanismParams::new(Variant::Wbb)).unwrap();
        let v: serde_json::Value = serde_json::from_str(&outcome_to_json(&inst, &out)).unwrap();
        assert_eq!(v["r_per_link"]["l1"], "unbounded");
        assert_eq!(v["x"]["2.1"], 0.0);
        assert!(v.get("rho_bar").is_none());
        let p = profile_from_json(&inst, PROFILE).unwrap();
        let out = evaluate(&inst, &p, &MechanismParams::new(Variant::Sbb)).unwrap();
        let v: serde_json::Value = serde_json::from_str(&outcome_to_json(&inst, &out)).unwrap();
        assert_eq!(v["r_per_link"]["l1"]["bounded"], 1.0);
        assert_eq!(v["rho_bar"]["1.1"], 0.5);
        assert!(v["taxes"]["1.1"]["links"]["l1"]["payment"].is_number());
    }
}
