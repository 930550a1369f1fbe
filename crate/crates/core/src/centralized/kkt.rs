use serde::Serialize;

use super::{DualCertificate, PrimalSolution};
use crate::model::NetworkInstance;

/// Relative threshold for counting a rate as strictly positive in A4.
pub const A4_POSITIVITY: f64 = 1e-9;

/// Maximum violation of each KKT block.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KktReport {
    pub primal_feas: f64,
    pub dual_feas: f64,
    pub comp_slack: f64,
    pub stationarity: f64,
    pub a4: A4Check,
}

impl KktReport {
    pub fn max_residual(&self) -> f64 {
        self.primal_feas
            .max(self.dual_feas)
            .max(self.comp_slack)
            .max(self.stationarity)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct A4Check {
    pub holds: bool,
    /// `|S^l(x)|` per link.
    pub active_groups: Vec<usize>,
}

/// Counts, per link, the groups with at least one member whose rate exceeds
/// `1e-9 c^l`.
pub fn check_a4(instance: &NetworkInstance, primal: &PrimalSolution) -> A4Check {
    let active_groups: Vec<usize> = (0..instance.num_links())
        .map(|l| {
            let threshold = A4_POSITIVITY * instance.capacity(l);
            instance
                .usage(l)
                .groups
                .iter()
                .filter(|g| g.members.iter().any(|&a| primal.x[a] > threshold))
                .count()
        })
        .collect();
    A4Check {
        holds: active_groups.iter().all(|&s| s >= 2),
        active_groups,
    }
}

pub fn kkt_residuals(
    instance: &NetworkInstance,
    primal: &PrimalSolution,
    dual: &DualCertificate,
) -> KktReport {
    let offsets = instance.group_link_offsets();
    let x = &primal.x;
    let m = &primal.m;

    let mut primal_feas = x.iter().fold(0.0_f64, |acc, &v| acc.max(-v));
    let mut dual_feas = dual.lambda.iter().fold(0.0_f64, |acc, &v| acc.max(-v));
    let mut comp_slack = 0.0_f64;
    let mut stationarity = 0.0_f64;

    for l in 0..instance.num_links() {
        let k_l = instance.groups_on_link(l);
        let used: f64 = m[offsets[l]..offsets[l] + k_l].iter().sum();
        let gap = used - instance.capacity(l);
        primal_feas = primal_feas.max(gap);
        comp_slack = comp_slack.max((dual.lambda[l] * gap).abs());
        for g in &instance.usage(l).groups {
            let price_sum: f64 = g
                .members
                .iter()
                .map(|&a| dual.mu[a][instance.hop_index(a, l).expect("member uses link")])
                .sum();
            stationarity = stationarity.max((dual.lambda[l] - price_sum).abs());
        }
    }

    for (a, agent) in instance.agents().iter().enumerate() {
        let mut charged = 0.0;
        for (h, hop) in agent.route.iter().enumerate() {
            let p = instance.placements(a)[h];
            let mk = m[offsets[hop.link] + p.slot];
            let excess = hop.alpha * x[a] - mk;
            let mu = dual.mu[a][h];
            primal_feas = primal_feas.max(excess);
            dual_feas = dual_feas.max(-mu);
            comp_slack = comp_slack.max((mu * excess).abs());
            charged += mu * hop.alpha;
        }
        let slope = agent.valuation.derivative(x[a].max(0.0));
        let violation = if x[a] > 0.0 {
            (slope - charged).abs()
        } else {
            (slope - charged).max(0.0)
        };
        stationarity = stationarity.max(violation);
    }

    KktReport {
        primal_feas,
        dual_feas,
        comp_slack,
        stationarity,
        a4: check_a4(instance, primal),
    }
}
