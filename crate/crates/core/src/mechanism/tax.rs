use serde::Serialize;

use super::allocation::{allocate, Allocation};
use super::{check_profile, MechanismError, MechanismParams, MessageProfile, Rebate, Variant};
use crate::model::NetworkInstance;

/// Group prices `w_k^l = sum_i q1_ki^l` and the mean `w_bar_{-k}^l` over the
/// other groups on the link, both flattened by group-link offsets.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupPrices {
    pub w: Vec<f64>,
    pub w_bar: Vec<f64>,
}

pub fn group_prices(instance: &NetworkInstance, profile: &MessageProfile) -> GroupPrices {
    let offsets = instance.group_link_offsets();
    let mut w = vec![0.0; instance.num_group_links()];
    let mut w_bar = vec![0.0; instance.num_group_links()];
    for l in 0..instance.num_links() {
        let groups = &instance.usage(l).groups;
        let base = offsets[l];
        for (slot, g) in groups.iter().enumerate() {
            w[base + slot] = g
                .members
                .iter()
                .map(|&a| {
                    profile.messages[a].q[instance.hop_index(a, l).expect("member uses link")].q1
                })
                .sum();
        }
        let total: f64 = w[base..base + groups.len()].iter().sum();
        let others = (groups.len() - 1) as f64;
        for slot in 0..groups.len() {
            w_bar[base + slot] = (total - w[base + slot]) / others;
        }
    }
    GroupPrices { w, w_bar }
}

/// Tax of one agent on one link, term by term.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct TaxTerms {
    /// `x alpha p`, with `p` the predecessor's `q2` (or `w_bar` when alone).
    pub payment: f64,
    /// `(q2 - successor's q1)^2`; zero for a lone group member.
    pub neighbour: f64,
    /// `(w_k - w_bar)^2`.
    pub group_gap: f64,
    /// `eta p (q1 - p)(m_k - alpha x)`.
    pub member_slack: f64,
    /// `xi w_bar (w_k - w_bar)(c - sum m)`.
    pub link_slack: f64,
    /// Redistribution paid back under strong budget balance.
    pub rebate: f64,
}

impl TaxTerms {
    /// Everything except the rebate.
    pub fn charges(&self) -> f64 {
        self.payment + self.neighbour + self.group_gap + self.member_slack + self.link_slack
    }

    pub fn total(&self) -> f64 {
        self.charges() - self.rebate
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgentTax {
    /// Aligned with the agent's route.
    pub links: Vec<TaxTerms>,
    /// `zeta (rho - r)^2`; zero under weak budget balance.
    pub rho_term: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub allocation: Allocation,
    pub prices: GroupPrices,
    /// Mean of the other agents' `rho`, under strong budget balance only.
    pub rho_bar: Option<Vec<f64>>,
    pub taxes: Vec<AgentTax>,
    pub utilities: Vec<f64>,
    pub total_tax: f64,
}

/// Mean of every other agent's `rho`, summed without the agent's own so
/// that it is bitwise independent of it.
fn rho_bar(profile: &MessageProfile, a: usize) -> f64 {
    let sum: f64 = profile
        .messages
        .iter()
        .enumerate()
        .filter(|&(b, _)| b != a)
        .map(|(_, m)| m.rho.unwrap_or(0.0))
        .sum();
    sum / (profile.messages.len() - 1) as f64
}

fn rho_bars(profile: &MessageProfile) -> Vec<f64> {
    (0..profile.messages.len())
        .map(|a| rho_bar(profile, a))
        .collect()
}

struct Context<'a> {
    inst: &'a NetworkInstance,
    profile: &'a MessageProfile,
    params: &'a MechanismParams,
    alloc: &'a Allocation,
    prices: &'a GroupPrices,
    offsets: Vec<usize>,
}

impl Context<'_> {
    fn q(&self, a: usize, l: usize) -> super::PricePair {
        self.profile.messages[a].q[self.inst.hop_index(a, l).expect("agent uses link")]
    }

    /// Price at which agent `a`'s demand on hop `h` is charged.
    fn charged_price(&self, a: usize, h: usize) -> f64 {
        let l = self.inst.agent(a).route[h].link;
        let slot = self.inst.placements(a)[h].slot;
        let (pred, _) = self.inst.neighbours(a, h);
        if pred == a {
            self.prices.w_bar[self.offsets[l] + slot]
        } else {
            self.q(pred, l).q2
        }
    }

    fn rebate_price(&self, b: usize, l: usize) -> f64 {
        let h = self.inst.hop_index(b, l).expect("agent uses link");
        match self.params.rebate {
            Rebate::Published => self.charged_price(b, h),
            Rebate::Others => self.q(b, l).q1,
        }
    }

    fn terms(&self, a: usize, h: usize, rho_bar: Option<f64>) -> TaxTerms {
        let agent = self.inst.agent(a);
        let hop = agent.route[h];
        let l = hop.link;
        let k = self.offsets[l] + self.inst.placements(a)[h].slot;
        let x = self.alloc.x[a];
        let own = self.profile.messages[a].q[h];
        let (_, succ) = self.inst.neighbours(a, h);
        let (w, w_bar) = (self.prices.w[k], self.prices.w_bar[k]);
        let p = self.charged_price(a, h);
        let neighbour = if succ == a {
            0.0
        } else {
            let d = own.q2 - self.q(succ, l).q1;
            d * d
        };
        let link_gap = self.inst.capacity(l) - self.alloc.link_load(self.inst, l);
        let rebate = match rho_bar {
            Some(rb) => {
                let users = &self.inst.usage(l).agents;
                let sum: f64 = users
                    .iter()
                    .filter(|&&b| b != a)
                    .map(|&b| {
                        let alpha = self.inst.agent(b).route
                            [self.inst.hop_index(b, l).expect("uses link")]
                        .alpha;
                        alpha * self.rebate_price(b, l) * self.profile.messages[b].y
                    })
                    .sum();
                rb / (users.len() - 1) as f64 * sum
            }
            None => 0.0,
        };
        TaxTerms {
            payment: x * hop.alpha * p,
            neighbour,
            group_gap: (w - w_bar) * (w - w_bar),
            member_slack: self.params.eta * p * (own.q1 - p) * (self.alloc.m[k] - hop.alpha * x),
            link_slack: self.params.xi * w_bar * (w - w_bar) * link_gap,
            rebate,
        }
    }

    fn agent_tax(&self, a: usize, rho_bar: Option<f64>) -> AgentTax {
        let links: Vec<TaxTerms> = (0..self.inst.agent(a).route.len())
            .map(|h| self.terms(a, h, rho_bar))
            .collect();
        let rho_term = match (self.params.variant, self.profile.messages[a].rho) {
            (Variant::Sbb, Some(rho)) => {
                self.params.zeta * (rho - self.alloc.r) * (rho - self.alloc.r)
            }
            _ => 0.0,
        };
        let total = links.iter().map(TaxTerms::total).sum::<f64>() + rho_term;
        AgentTax {
            links,
            rho_term,
            total,
        }
    }
}

/// Allocation, prices, taxes and utilities for a whole profile.
pub fn evaluate(
    instance: &NetworkInstance,
    profile: &MessageProfile,
    params: &MechanismParams,
) -> Result<Outcome, MechanismError> {
    check_profile(instance, profile, params)?;
    let allocation = allocate(instance, &profile.demands());
    let prices = group_prices(instance, profile);
    let rho_bar = (params.variant == Variant::Sbb).then(|| rho_bars(profile));
    let ctx = Context {
        inst: instance,
        profile,
        params,
        alloc: &allocation,
        prices: &prices,
        offsets: instance.group_link_offsets(),
    };
    let taxes: Vec<AgentTax> = (0..instance.num_agents())
        .map(|a| ctx.agent_tax(a, rho_bar.as_ref().map(|rb| rb[a])))
        .collect();
    let utilities = taxes
        .iter()
        .enumerate()
        .map(|(a, t)| instance.agent(a).valuation.value(allocation.x[a]) - t.total)
        .collect();
    let total_tax = taxes.iter().map(|t| t.total).sum();
    Ok(Outcome {
        allocation,
        prices,
        rho_bar,
        taxes,
        utilities,
        total_tax,
    })
}

pub fn tax_wbb(
    instance: &NetworkInstance,
    profile: &MessageProfile,
    params: &MechanismParams,
) -> Result<Vec<AgentTax>, MechanismError> {
    let params = MechanismParams {
        variant: Variant::Wbb,
        ..*params
    };
    Ok(evaluate(instance, profile, &params)?.taxes)
}

pub fn tax_sbb(
    instance: &NetworkInstance,
    profile: &MessageProfile,
    params: &MechanismParams,
) -> Result<Vec<AgentTax>, MechanismError> {
    let params = MechanismParams {
        variant: Variant::Sbb,
        ..*params
    };
    Ok(evaluate(instance, profile, &params)?.taxes)
}

/// `u_ki = v_ki(x_ki) - t_ki`. Skips shape checks; callers evaluating many
/// nearby profiles validate once.
pub fn utility(
    instance: &NetworkInstance,
    profile: &MessageProfile,
    params: &MechanismParams,
    agent: usize,
) -> f64 {
    let (x, t) = rate_and_tax(instance, profile, params, agent);
    instance.agent(agent).valuation.value(x) - t.total
}

/// `x_ki` and the itemised tax of one agent, without shape checks.
pub fn rate_and_tax(
    instance: &NetworkInstance,
    profile: &MessageProfile,
    params: &MechanismParams,
    agent: usize,
) -> (f64, AgentTax) {
    let allocation = allocate(instance, &profile.demands());
    let prices = group_prices(instance, profile);
    let rho_bar = (params.variant == Variant::Sbb).then(|| rho_bar(profile, agent));
    let ctx = Context {
        inst: instance,
        profile,
        params,
        alloc: &allocation,
        prices: &prices,
        offsets: instance.group_link_offsets(),
    };
    (allocation.x[agent], ctx.agent_tax(agent, rho_bar))
}

#[cfg(test)]
mod tests {
    use super::super::{Message, PricePair};
    use super::*;
    use crate::model::fixtures::*;

    fn msg(y: f64, q: &[(f64, f64)], rho: Option<f64>) -> Message {
        Message {
            y,
            q: q.iter().map(|&(q1, q2)| PricePair { q1, q2 }).collect(),
            rho,
        }
    }

    /// One link shared by a two-member group and a three-member group.
    fn two_groups() -> NetworkInstance {
        NetworkInstance::new(
            links(&[10.0]),
            vec![
                agent(1, 1, log(1.0, 1.0), &[(0, 1.0)]),
                agent(1, 2, log(1.0, 1.0), &[(0, 1.0)]),
                agent(2, 1, log(1.0, 1.0), &[(0, 1.0)]),
                agent(2, 2, log(1.0, 1.0), &[(0, 1.0)]),
                agent(2, 3, log(1.0, 1.0), &[(0, 1.0)]),
            ],
        )
        .unwrap()
    }

    #[test]
    fn group_price_means() {
        let inst = two_groups();
        let profile = MessageProfile {
            messages: vec![
                msg(1.0, &[(1.0, 0.0)], None),
                msg(1.0, &[(2.0, 0.0)], None),
                msg(1.0, &[(1.0, 0.0)], None),
                msg(1.0, &[(1.0, 0.0)], None),
                msg(1.0, &[(3.0, 0.0)], None),
            ],
        };
        let p = group_prices(&inst, &profile);
        assert_eq!(p.w, vec![3.0, 5.0]);
        assert_eq!(p.w_bar, vec![5.0, 3.0]);

        let three = NetworkInstance::new(
            links(&[10.0]),
            vec![
                agent(1, 1, log(1.0, 1.0), &[(0, 1.0)]),
                agent(2, 1, log(1.0, 1.0), &[(0, 1.0)]),
                agent(3, 1, log(1.0, 1.0), &[(0, 1.0)]),
            ],
        )
        .unwrap();
        let profile = MessageProfile {
            messages: [2.0, 4.0, 6.0]
                .iter()
                .map(|&q| msg(1.0, &[(q, 0.0)], None))
                .collect(),
        };
        assert_eq!(group_prices(&three, &profile).w_bar[0], 5.0);
        let zero = MessageProfile::zero(&three, Variant::Wbb);
        assert_eq!(group_prices(&three, &zero).w_bar, vec![0.0; 3]);
    }

    #[test]
    fn consensus_prices_leave_only_payment() {
        let inst = two_groups();
        let p = 0.3;
        // Each group's total equals the other group's: 2p = 3 p'.
        let (q_a, q_b) = (p * 1.5, p);
        let profile = MessageProfile {
            messages: vec![
                msg(4.0, &[(q_a, q_a)], None),
                msg(4.0, &[(q_a, q_a)], None),
                msg(6.0, &[(q_b, q_b)], None),
                msg(6.0, &[(q_b, q_b)], None),
                msg(6.0, &[(q_b, q_b)], None),
            ],
        };
        let params = MechanismParams::new(Variant::Wbb);
        let out = evaluate(&inst, &profile, &params).unwrap();
        for (a, t) in out.taxes.iter().enumerate() {
            let q = if a < 2 { q_a } else { q_b };
            assert!(
                (t.total - out.allocation.x[a] * q).abs() < 1e-15,
                "agent {a}"
            );
        }
    }

    #[test]
    fn neighbour_term_is_squared_mismatch() {
        let inst = two_groups();
        let mut profile = MessageProfile::zero(&inst, Variant::Wbb);
        profile.messages[0].q[0].q2 = 3.0;
        profile.messages[1].q[0].q1 = 1.0;
        let taxes = tax_wbb(&inst, &profile, &MechanismParams::new(Variant::Wbb)).unwrap();
        assert_eq!(taxes[0].links[0].neighbour, 4.0);
    }

    #[test]
    fn pinned_rho_cancels_zeta_term() {
        let inst = symmetric();
        let profile = MessageProfile {
            messages: vec![
                msg(4.0, &[(0.5, 0.1)], Some(1.0)),
                msg(6.0, &[(0.2, 0.4)], Some(1.0)),
            ],
        };
        let taxes = tax_sbb(&inst, &profile, &MechanismParams::new(Variant::Sbb)).unwrap();
        assert!(taxes.iter().all(|t| t.rho_term == 0.0));
    }

    #[test]
    fn utility_matches_evaluate() {
        let inst = two_groups();
        let profile = MessageProfile {
            messages: (0..5)
                .map(|a| msg(1.0 + a as f64, &[(0.1 * a as f64, 0.3)], Some(0.9)))
                .collect(),
        };
        for variant in [Variant::Wbb, Variant::Sbb] {
            let params = MechanismParams::new(variant);
            let out = evaluate(&inst, &profile, &params).unwrap();
            for a in 0..5 {
                assert!((utility(&inst, &profile, &params, a) - out.utilities[a]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn shape_errors() {
        let inst = symmetric();
        let params = MechanismParams::new(Variant::Sbb);
        let wbb = MessageProfile::zero(&inst, Variant::Wbb);
        assert!(matches!(
            evaluate(&inst, &wbb, &params),
            Err(MechanismError::MissingRho(_))
        ));
        let mut bad = MessageProfile::zero(&inst, Variant::Sbb);
        bad.messages[1].y = -1.0;
        assert!(matches!(
            evaluate(&inst, &bad, &params),
            Err(MechanismError::InvalidComponent(_))
        ));
        bad.messages[1].q.push(PricePair::default());
        bad.messages[1].y = 1.0;
        assert!(matches!(
            evaluate(&inst, &bad, &params),
            Err(MechanismError::RouteShape { .. })
        ));
        let params = MechanismParams { eta: 0.0, ..params };
        assert!(matches!(
            evaluate(&inst, &MessageProfile::zero(&inst, Variant::Sbb), &params),
            Err(MechanismError::InvalidParams(_))
        ));
    }

    #[test]
    fn sbb_needs_two_agents_per_link() {
        // Link 2 is used by agent 1.1 alone.
        let inst = NetworkInstance::new(
            links(&[10.0, 5.0]),
            vec![
                agent(1, 1, log(1.0, 1.0), &[(0, 1.0), (1, 1.0)]),
                agent(2, 1, log(1.0, 1.0), &[(0, 1.0)]),
            ],
        )
        .unwrap();
        let profile = MessageProfile::zero(&inst, Variant::Sbb);
        assert!(matches!(
            evaluate(&inst, &profile, &MechanismParams::new(Variant::Sbb)),
            Err(MechanismError::LonelyLink(_))
        ));
    }
}
