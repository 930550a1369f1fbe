use std::collections::BTreeMap;

use serde::Serialize;

use super::{DualCertificate, KktReport, PrimalSolution, TieSet};
use crate::model::NetworkInstance;

#[derive(Serialize)]
struct TieOut {
    group: u32,
    link: String,
    members: Vec<String>,
}

#[derive(Serialize)]
struct SolutionOut<'a> {
    lambda: BTreeMap<String, f64>,
    m: BTreeMap<String, BTreeMap<u32, f64>>,
    mu: BTreeMap<String, BTreeMap<String, f64>>,
    residuals: &'a KktReport,
    ties: Vec<TieOut>,
    welfare: f64,
    x: BTreeMap<String, f64>,
}

/// Pretty JSON with maps keyed by link id and `"k.i"` agent labels.
pub fn solution_to_json(
    instance: &NetworkInstance,
    primal: &PrimalSolution,
    dual: &DualCertificate,
) -> String {
    let link_id = |l: usize| instance.links()[l].id.clone();
    let label = |a: usize| instance.agent(a).id.to_string();
    let offsets = instance.group_link_offsets();

    let mut m = BTreeMap::new();
    let mut lambda = BTreeMap::new();
    let mut mu: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    for l in 0..instance.num_links() {
        let per_group = instance
            .usage(l)
            .groups
            .iter()
            .enumerate()
            .map(|(slot, g)| (g.group, primal.m[offsets[l] + slot]))
            .collect();
        m.insert(link_id(l), per_group);
        lambda.insert(link_id(l), dual.lambda[l]);
        mu.insert(link_id(l), BTreeMap::new());
    }
    for (a, agent) in instance.agents().iter().enumerate() {
        for (h, hop) in agent.route.iter().enumerate() {
            mu.get_mut(&link_id(hop.link))
                .expect("link registered")
                .insert(label(a), dual.mu[a][h]);
        }
    }
    let doc = SolutionOut {
        lambda,
        m,
        mu,
        residuals: &dual.residuals,
        ties: dual
            .ties
            .iter()
            .map(|t: &TieSet| TieOut {
                group: t.group,
                link: link_id(t.link),
                members: t.members.iter().map(|&a| label(a)).collect(),
            })
            .collect(),
        welfare: primal.welfare(instance),
        x: (0..instance.num_agents())
            .map(|a| (label(a), primal.x[a]))
            .collect(),
    };
    let value = serde_json::to_value(&doc).expect("solution serialises");
    serde_json::to_string_pretty(&value).expect("value serialises")
}

#[cfg(test)]
mod tests {
    use super::super::solve_cp;
    use super::*;
    use crate::model::fixtures::symmetric;

    #[test]
    fn export_is_keyed_by_labels() {
        let inst = symmetric();
        let (p, d) = solve_cp(&inst, 1e-8).unwrap();
        let text = solution_to_json(&inst, &p, &d);
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert!((v["x"]["1.1"].as_f64().unwrap() - 5.0).abs() < 1e-8);
        assert!((v["lambda"]["l1"].as_f64().unwrap() - 1.0 / 6.0).abs() < 1e-8);
        assert!(v["m"]["l1"]["2"].is_number());
        assert!(v["mu"]["l1"]["2.1"].is_number());
        assert_eq!(v["residuals"]["a4"]["holds"], true);
        assert_eq!(text, solution_to_json(&inst, &p, &d));
    }
}
