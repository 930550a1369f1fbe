//! One-sided derivatives of utility in the agent's own demand.
//!
//! `x_ki = r y_ki` with `r = min_l r^l`, so
//! `beta = dx/dy = r + y dr/dy`. On the binding link `q`, `dr/dy` is zero
//! unless the agent sets its group maximum there, in which case it is
//! `-c alpha / (sum n)^2` with two or more demanding groups and
//! `-c alpha / (n + 1)^2` for a lone demanding group.

use crate::mechanism::{
    allocate, group_prices, Allocation, LinkBound, MechanismParams, MessageProfile, Variant,
};
use crate::model::NetworkInstance;

use super::Side;

/// Whether agent `a` sets its group's maximum on its `h`-th hop when its
/// demand moves to the given side.
fn drives(instance: &NetworkInstance, y: &[f64], a: usize, h: usize, side: Side) -> bool {
    let hop = instance.agent(a).route[h];
    let slot = instance.placements(a)[h].slot;
    let own = hop.alpha * y[a];
    let other = instance.usage(hop.link).groups[slot]
        .members
        .iter()
        .filter(|&&b| b != a)
        .map(|&b| {
            instance.agent(b).route[instance.hop_index(b, hop.link).expect("uses link")].alpha
                * y[b]
        })
        .fold(f64::NEG_INFINITY, f64::max);
    match side {
        Side::Right => own >= other,
        Side::Left => own > other,
    }
}

/// `dr/dy_a` on one side.
fn scale_slope(
    instance: &NetworkInstance,
    alloc: &Allocation,
    y: &[f64],
    a: usize,
    side: Side,
) -> f64 {
    let offsets = instance.group_link_offsets();
    let mut slopes = Vec::new();
    for (l, bound) in alloc.r_per_link.iter().enumerate() {
        let LinkBound::Bounded(rl) = *bound else {
            continue;
        };
        if rl != alloc.r {
            continue;
        }
        let mut d = 0.0;
        if let Some(h) = instance.hop_index(a, l) {
            if drives(instance, y, a, h, side) {
                let alpha = instance.agent(a).route[h].alpha;
                let c = instance.capacity(l);
                let active = &alloc.maxima.active[l];
                d = if active.len() >= 2 {
                    let total: f64 = active.iter().map(|s| alloc.maxima.n[offsets[l] + s]).sum();
                    -c * alpha / (total * total)
                } else {
                    let n = alloc.maxima.n[offsets[l] + active[0]];
                    -c * alpha / ((n + 1.0) * (n + 1.0))
                };
            }
        }
        slopes.push(d);
    }
    match side {
        Side::Right => slopes.iter().copied().fold(f64::INFINITY, f64::min),
        Side::Left => slopes.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    }
}

/// `beta = dx_a/dy_a` on one side, at a profile with `y_a > 0`.
pub fn rate_slope(instance: &NetworkInstance, y: &[f64], a: usize, side: Side) -> f64 {
    let alloc = allocate(instance, y);
    alloc.r + y[a] * scale_slope(instance, &alloc, y, a, side)
}

/// Analytic one-sided `d u_a / d y_a`, at a profile with `y_a > 0`.
pub fn demand_slope(
    instance: &NetworkInstance,
    profile: &MessageProfile,
    params: &MechanismParams,
    a: usize,
    side: Side,
) -> f64 {
    slope_terms(instance, profile, params, a, side).0
}

/// The slope and the sum of the absolute values of its terms, which bounds
/// its rounding error.
pub(super) fn slope_terms(
    instance: &NetworkInstance,
    profile: &MessageProfile,
    params: &MechanismParams,
    a: usize,
    side: Side,
) -> (f64, f64) {
    let y = profile.demands();
    let alloc = allocate(instance, &y);
    let prices = group_prices(instance, profile);
    let offsets = instance.group_link_offsets();
    let dr = scale_slope(instance, &alloc, &y, a, side);
    let beta = alloc.r + y[a] * dr;
    let agent = instance.agent(a);
    let msg = &profile.messages[a];

    let mut terms = vec![agent.valuation.derivative(alloc.x[a]) * beta];
    for (h, hop) in agent.route.iter().enumerate() {
        let l = hop.link;
        let slot = instance.placements(a)[h].slot;
        let k = offsets[l] + slot;
        let (w, w_bar) = (prices.w[k], prices.w_bar[k]);
        let (pred, _) = instance.neighbours(a, h);
        let p = if pred == a {
            w_bar
        } else {
            profile.messages[pred].q[instance.hop_index(pred, l).expect("uses link")].q2
        };
        let own_dn = if drives(instance, &y, a, h, side) {
            hop.alpha
        } else {
            0.0
        };
        let dm_own = alloc.maxima.n[k] * dr + alloc.r * own_dn;
        let dm_total: f64 = (0..instance.groups_on_link(l))
            .map(|s| alloc.maxima.n[offsets[l] + s] * dr)
            .sum::<f64>()
            + alloc.r * own_dn;
        terms.push(-hop.alpha * p * beta);
        terms.push(-params.eta * p * (msg.q[h].q1 - p) * (dm_own - hop.alpha * beta));
        terms.push(params.xi * w_bar * (w - w_bar) * dm_total);
    }
    if params.variant == Variant::Sbb {
        terms.push(2.0 * params.zeta * (msg.rho.unwrap_or(0.0) - alloc.r) * dr);
    }
    (terms.iter().sum(), terms.iter().map(|t| t.abs()).sum())
}

/// Whether `y_a` lies within relative distance `margin` of a point where
/// the utility is not differentiable in `y_a`: zero demand, a tie for the
/// group maximum, or a tie for the binding link.
pub fn near_kink(instance: &NetworkInstance, y: &[f64], a: usize, margin: f64) -> bool {
    if y[a] <= margin * y[a].abs().max(1.0) {
        return true;
    }
    let agent = instance.agent(a);
    for (h, hop) in agent.route.iter().enumerate() {
        let slot = instance.placements(a)[h].slot;
        let own = hop.alpha * y[a];
        for &b in &instance.usage(hop.link).groups[slot].members {
            if b == a {
                continue;
            }
            let other =
                instance.agent(b).route[instance.hop_index(b, hop.link).expect("uses link")].alpha
                    * y[b];
            if (own - other).abs() <= margin * own {
                return true;
            }
        }
    }
    let alloc = allocate(instance, y);
    let mut r: Vec<f64> = alloc
        .r_per_link
        .iter()
        .map(|b| b.value())
        .filter(|v| v.is_finite())
        .collect();
    r.sort_by(f64::total_cmp);
    r.len() >= 2 && r[1] - r[0] <= margin * r[0]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures::*;

    #[test]
    fn shared_link_slope_matches_closed_form() {
        // r = c / (y1 + y2): beta_1 = r^2 y2 / c.
        let inst = symmetric();
        let y = [4.0, 6.0];
        let beta = rate_slope(&inst, &y, 0, Side::Right);
        assert!((beta - 6.0 / 10.0).abs() < 1e-15);
        assert_eq!(beta, rate_slope(&inst, &y, 0, Side::Left));
    }

    #[test]
    fn lone_demanding_group_uses_the_tweaked_branch() {
        // Only group 1 demands: r = c / (y + 1), beta = c / (y + 1)^2.
        let inst = symmetric();
        let beta = rate_slope(&inst, &[3.0, 0.0], 0, Side::Right);
        assert!((beta - 10.0 / 16.0).abs() < 1e-15);
    }

    #[test]
    fn tie_has_two_sides() {
        let inst = NetworkInstance::new(
            links(&[10.0]),
            vec![
                agent(1, 1, log(1.0, 1.0), &[(0, 1.0)]),
                agent(1, 2, log(1.0, 1.0), &[(0, 1.0)]),
                agent(2, 1, log(1.0, 1.0), &[(0, 1.0)]),
            ],
        )
        .unwrap();
        let y = [5.0, 5.0, 5.0];
        assert!(near_kink(&inst, &y, 0, 1e-6));
        assert!((rate_slope(&inst, &y, 0, Side::Left) - 1.0).abs() < 1e-15);
        assert!((rate_slope(&inst, &y, 0, Side::Right) - 0.5).abs() < 1e-15);
    }
}
