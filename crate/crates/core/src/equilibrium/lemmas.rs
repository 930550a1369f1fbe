//! The equilibrium characterisation, evaluated as numbers at a profile.

use serde::Serialize;

use super::{CandidateNE, EquilibriumError};
use crate::mechanism::{evaluate, Variant};
use crate::model::NetworkInstance;

/// Maximum violation of each property. Every entry is nonnegative.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LemmaReport {
    /// `max |w_k^l - wbar_-k^l|` over links with two or more groups.
    pub equal_prices: f64,
    /// `max |q2_ki - q1_ke|` with `ke` the successor.
    pub neighbour_prices: f64,
    /// Largest negative part of any quote.
    pub dual_feas: f64,
    /// Largest `q1 (m - alpha x)` and `wbar (c - sum m)` product.
    pub comp_slack: f64,
    /// `|v'(x) - sum alpha q1|` where `x > 0`, and the positive part of
    /// `v'(0) - sum alpha q1` where `x = 0`.
    pub stationarity: f64,
    /// Largest `v(0) - u`, floored at zero.
    pub ir: f64,
    /// `-min(0, sum t)` under weak budget balance.
    pub wbb: Option<f64>,
    /// `|sum t|` under strong budget balance.
    pub sbb: Option<f64>,
    /// `max |rho - r|` under strong budget balance.
    pub rho_consensus: Option<f64>,
}

impl LemmaReport {
    pub fn max_violation(&self) -> f64 {
        [
            self.equal_prices,
            self.neighbour_prices,
            self.dual_feas,
            self.comp_slack,
            self.stationarity,
            self.ir,
        ]
        .into_iter()
        .chain(self.wbb)
        .chain(self.sbb)
        .chain(self.rho_consensus)
        .fold(0.0, f64::max)
    }
}

pub fn lemma_suite(
    instance: &NetworkInstance,
    candidate: &CandidateNE,
) -> Result<LemmaReport, EquilibriumError> {
    let profile = &candidate.profile;
    let params = &candidate.params;
    let out = evaluate(instance, profile, params)?;
    let alloc = &out.allocation;
    let offsets = instance.group_link_offsets();

    let mut equal_prices: f64 = 0.0;
    let mut comp_slack: f64 = 0.0;
    for l in 0..instance.num_links() {
        let groups = instance.groups_on_link(l);
        let slack = instance.capacity(l) - alloc.link_load(instance, l);
        for s in 0..groups {
            let k = offsets[l] + s;
            if groups >= 2 {
                equal_prices = equal_prices.max((out.prices.w[k] - out.prices.w_bar[k]).abs());
            }
            comp_slack = comp_slack.max((out.prices.w_bar[k] * slack).abs());
        }
    }

    let mut neighbour_prices: f64 = 0.0;
    let mut dual_feas: f64 = 0.0;
    let mut stationarity: f64 = 0.0;
    let mut ir: f64 = 0.0;
    for (a, agent) in instance.agents().iter().enumerate() {
        let msg = &profile.messages[a];
        let mut priced = 0.0;
        for (h, hop) in agent.route.iter().enumerate() {
            let q = msg.q[h];
            let (_, succ) = instance.neighbours(a, h);
            if succ != a {
                let succ_q1 = profile.messages[succ].q
                    [instance.hop_index(succ, hop.link).expect("uses link")]
                .q1;
                neighbour_prices = neighbour_prices.max((q.q2 - succ_q1).abs());
            }
            dual_feas = dual_feas.max(-q.q1).max(-q.q2);
            let m = alloc.m[offsets[hop.link] + instance.placements(a)[h].slot];
            comp_slack = comp_slack.max((q.q1 * (m - hop.alpha * alloc.x[a])).abs());
            priced += hop.alpha * q.q1;
        }
        let x = alloc.x[a];
        let gap = agent.valuation.derivative(x) - priced;
        stationarity = stationarity.max(if x > 0.0 { gap.abs() } else { gap.max(0.0) });
        ir = ir.max(agent.valuation.value(0.0) - out.utilities[a]);
    }

    let sbb = params.variant == Variant::Sbb;
    Ok(LemmaReport {
        equal_prices,
        neighbour_prices,
        dual_feas,
        comp_slack,
        stationarity,
        ir,
        wbb: (!sbb).then(|| (-out.total_tax).max(0.0)),
        sbb: sbb.then(|| out.total_tax.abs()),
        rho_consensus: sbb.then(|| {
            profile
                .messages
                .iter()
                .map(|m| (m.rho.unwrap_or(0.0) - alloc.r).abs())
                .fold(0.0, f64::max)
        }),
    })
}
