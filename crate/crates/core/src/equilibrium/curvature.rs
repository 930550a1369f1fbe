//! Local concavity of each agent's utility in its own message.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::Serialize;

use super::gradient::slope_terms;
use super::search::{coordinates, Coordinate};
use super::{CandidateNE, EquilibriumError};
use crate::mechanism::{allocate, rate_and_tax, MechanismParams, MessageProfile};
use crate::model::NetworkInstance;

/// Smallest value the halving loop lets `eta`, `xi` and `zeta` reach.
pub const SHRINK_FLOOR: f64 = 1e-8;

const RELATIVE_STEP: f64 = 1e-4;
/// Relative disagreement between the step-`h` and step-`h/2` Hessians
/// beyond which a kink is taken to lie inside the stencil.
const KINK_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SideHessian {
    pub side: Side,
    /// False when the stencil straddles a kink; such a side is not judged.
    pub clean: bool,
    pub max_eigenvalue: f64,
    pub negative_definite: bool,
    /// Row-major, in the order of `AgentCurvature::coordinates`.
    pub entries: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgentCurvature {
    pub agent: usize,
    pub coordinates: Vec<Coordinate>,
    pub sides: Vec<SideHessian>,
    /// Diagonal entries for the price coordinates, from the clean sides.
    pub price_diagonal: Vec<f64>,
    pub passes: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurvatureReport {
    pub agents: Vec<AgentCurvature>,
    pub passes: bool,
}

fn hessian<F: FnMut(&[f64]) -> f64>(f: &mut F, base: &[f64], steps: &[f64]) -> DMatrix<f64> {
    let d = base.len();
    let mut h = DMatrix::zeros(d, d);
    let f0 = f(base);
    let mut p = base.to_vec();
    let probe = |p: &mut Vec<f64>, moves: &[(usize, f64)], f: &mut F| {
        for &(i, s) in moves {
            p[i] = base[i] + s * steps[i];
        }
        let v = f(p);
        for &(i, _) in moves {
            p[i] = base[i];
        }
        v
    };
    for i in 0..d {
        let fp = probe(&mut p, &[(i, 1.0)], f);
        let fm = probe(&mut p, &[(i, -1.0)], f);
        h[(i, i)] = (fp - 2.0 * f0 + fm) / (steps[i] * steps[i]);
        for j in 0..i {
            let pp = probe(&mut p, &[(i, 1.0), (j, 1.0)], f);
            let pm = probe(&mut p, &[(i, 1.0), (j, -1.0)], f);
            let mp = probe(&mut p, &[(i, -1.0), (j, 1.0)], f);
            let mm = probe(&mut p, &[(i, -1.0), (j, -1.0)], f);
            let v = (pp - pm - mp + mm) / (4.0 * steps[i] * steps[j]);
            h[(i, j)] = v;
            h[(j, i)] = v;
        }
    }
    h
}

/// Demand row from central differences of the analytic demand slope `g`,
/// with the rounding floor of each entry. A saturated valuation has demand
/// curvature far below what second differences of the utility resolve,
/// while the slope keeps it to relative precision.
fn demand_row<G: FnMut(&[f64]) -> (f64, f64)>(
    g: &mut G,
    base: &[f64],
    steps: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let mut p = base.to_vec();
    let mut row = Vec::with_capacity(base.len());
    let mut noise = Vec::with_capacity(base.len());
    for j in 0..base.len() {
        p[j] = base[j] + steps[j];
        let (gp, mp) = g(&p);
        p[j] = base[j] - steps[j];
        let (gm, mm) = g(&p);
        p[j] = base[j];
        row.push((gp - gm) / (2.0 * steps[j]));
        noise.push(16.0 * f64::EPSILON * (mp + mm) / steps[j]);
    }
    (row, noise)
}

fn hessian_with_demand_row<F, G>(
    f: &mut F,
    g: &mut G,
    base: &[f64],
    steps: &[f64],
) -> (DMatrix<f64>, Vec<f64>)
where
    F: FnMut(&[f64]) -> f64,
    G: FnMut(&[f64]) -> (f64, f64),
{
    let mut h = hessian(f, base, steps);
    let (row, noise) = demand_row(g, base, steps);
    for (j, v) in row.into_iter().enumerate() {
        h[(0, j)] = v;
        h[(j, 0)] = v;
    }
    (h, noise)
}

/// Negative definiteness of `H` judged on `D H D` with
/// `D = diag(1 / sqrt(-H_ii))`. The congruence preserves the inertia and
/// brings every diagonal to `-1`, so tiny curvature in one coordinate is not
/// swamped by the eigensolver's absolute error on the others.
fn negative_definite(h: &DMatrix<f64>) -> bool {
    if h.diagonal().iter().any(|&d| d >= 0.0 || !d.is_finite()) {
        return false;
    }
    let scale = h.diagonal().map(|d| 1.0 / (-d).sqrt());
    let scaled = DMatrix::from_fn(h.nrows(), h.ncols(), |i, j| h[(i, j)] * scale[i] * scale[j]);
    SymmetricEigen::new(scaled).eigenvalues.max() < 0.0
}

/// Entrywise agreement relative to `sqrt(|H_ii H_jj|)`, so a kink that only
/// moves a tiny diagonal entry is still caught. `noise` is the rounding
/// floor of each fine entry.
fn agrees(coarse: &DMatrix<f64>, fine: &DMatrix<f64>, noise: &DMatrix<f64>) -> bool {
    let d = coarse.nrows();
    (0..d).all(|i| {
        (0..d).all(|j| {
            let size = (coarse[(i, i)] * coarse[(j, j)])
                .abs()
                .max((fine[(i, i)] * fine[(j, j)]).abs())
                .sqrt();
            (coarse[(i, j)] - fine[(i, j)]).abs() <= KINK_TOLERANCE * size + noise[(i, j)]
        })
    })
}

fn agent_curvature(
    instance: &NetworkInstance,
    profile: &MessageProfile,
    params: &MechanismParams,
    a: usize,
) -> Result<AgentCurvature, EquilibriumError> {
    let coords = coordinates(instance, a, params.variant);
    let msg = &profile.messages[a];
    let values: Vec<f64> = coords.iter().map(|c| c.get(msg)).collect();
    let steps: Vec<f64> = values
        .iter()
        .map(|v| RELATIVE_STEP * v.abs().max(1.0))
        .collect();

    // Utility relative to the candidate, term by term: a saturated valuation
    // has curvature far below the rounding error of `v` itself, and a term
    // that does not move along a coordinate then cancels exactly instead of
    // absorbing the small ones.
    let valuation = &instance.agent(a).valuation;
    let (x0, tax0) = rate_and_tax(instance, profile, params, a);
    let mut work = profile.clone();
    let mut f = |p: &[f64]| {
        let m = &mut work.messages[a];
        for (c, &v) in coords.iter().zip(p) {
            c.set(m, v);
        }
        let (x, tax) = rate_and_tax(instance, &work, params, a);
        let change: f64 = tax
            .links
            .iter()
            .zip(&tax0.links)
            .map(|(t, t0)| {
                (t.payment - t0.payment)
                    + (t.neighbour - t0.neighbour)
                    + (t.group_gap - t0.group_gap)
                    + (t.member_slack - t0.member_slack)
                    + (t.link_slack - t0.link_slack)
                    - (t.rebate - t0.rebate)
            })
            .sum();
        valuation.increment(x0, x) - change - tax.rho_term
    };

    // Each probe carries rounding of order `eps` times the magnitude of the
    // tax terms it differences; the fine stencil divides that by `h^2 / 4`.
    let magnitude = tax0
        .links
        .iter()
        .map(|t| {
            t.payment.abs()
                + t.neighbour
                + t.group_gap
                + t.member_slack.abs()
                + t.link_slack.abs()
                + t.rebate.abs()
        })
        .sum::<f64>()
        + tax0.rho_term;
    let noise = DMatrix::from_fn(steps.len(), steps.len(), |i, j| {
        64.0 * f64::EPSILON * magnitude / (steps[i] * steps[j])
    });
    let mut slope_work = profile.clone();
    let mut g = |p: &[f64], side: Side| {
        let m = &mut slope_work.messages[a];
        for (c, &v) in coords.iter().zip(p) {
            c.set(m, v);
        }
        slope_terms(instance, &slope_work, params, a, side)
    };

    let mut sides = Vec::new();
    for side in [Side::Left, Side::Right] {
        // The demand is probed strictly on one side of its current value.
        // Quotes and the signal enter the tax polynomially, so their stencil
        // may cross zero without meeting a kink.
        if side == Side::Left && values[0] < 3.0 * steps[0] {
            continue;
        }
        let mut base = values.clone();
        let s = if side == Side::Left { -1.0 } else { 1.0 };
        base[0] += 2.0 * s * steps[0];
        // Keep the signal on the scaling factor at the shifted demand: an
        // offset `rho - r` of order `h` adds `2 zeta (rho - r) r''` to the
        // demand curvature, which can outweigh a saturated valuation.
        if let Some(i) = coords.iter().position(|c| *c == Coordinate::Rho) {
            let mut y = profile.demands();
            y[a] = base[0];
            base[i] = allocate(instance, &y).r;
        }
        let mut g = |p: &[f64]| g(p, side);
        let (coarse, coarse_noise) = hessian_with_demand_row(&mut f, &mut g, &base, &steps);
        let half: Vec<f64> = steps.iter().map(|s| 0.5 * s).collect();
        let (fine, fine_noise) = hessian_with_demand_row(&mut f, &mut g, &base, &half);
        let mut noise = noise.clone();
        for j in 0..steps.len() {
            let v = coarse_noise[j] + fine_noise[j];
            noise[(0, j)] = v;
            noise[(j, 0)] = v;
        }
        let clean = agrees(&coarse, &fine, &noise);
        sides.push(SideHessian {
            side,
            clean,
            max_eigenvalue: SymmetricEigen::new(fine.clone()).eigenvalues.max(),
            negative_definite: negative_definite(&fine),
            entries: fine.transpose().iter().copied().collect(),
        });
    }
    if !sides.iter().any(|s| s.clean) {
        return Err(EquilibriumError::KinkEverywhere(a));
    }
    let d = coords.len();
    let price_diagonal = sides
        .iter()
        .filter(|s| s.clean)
        .flat_map(|s| {
            coords
                .iter()
                .enumerate()
                .filter(|(_, c)| matches!(c, Coordinate::Quote1(_) | Coordinate::Quote2(_)))
                .map(move |(i, _)| s.entries[i * d + i])
        })
        .collect();
    let passes = sides
        .iter()
        .filter(|s| s.clean)
        .all(|s| s.negative_definite);
    Ok(AgentCurvature {
        agent: a,
        coordinates: coords,
        sides,
        price_diagonal,
        passes,
    })
}

/// Finite-difference Hessian of every agent's utility in its own message,
/// at the candidate, with the candidate's mechanism constants.
pub fn curvature_check(
    instance: &NetworkInstance,
    candidate: &CandidateNE,
) -> Result<CurvatureReport, EquilibriumError> {
    let agents = (0..instance.num_agents())
        .map(|a| agent_curvature(instance, &candidate.profile, &candidate.params, a))
        .collect::<Result<Vec<_>, _>>()?;
    let passes = agents.iter().all(|a| a.passes);
    Ok(CurvatureReport { agents, passes })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ShrinkStep {
    pub eta: f64,
    pub xi: f64,
    pub zeta: f64,
    pub passes: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShrinkReport {
    pub params: MechanismParams,
    pub steps: Vec<ShrinkStep>,
    pub curvature: CurvatureReport,
}

/// Halves `eta`, `xi` and `zeta` together until the curvature check passes.
pub fn auto_shrink(
    instance: &NetworkInstance,
    candidate: &CandidateNE,
) -> Result<ShrinkReport, EquilibriumError> {
    let mut cand = candidate.clone();
    let mut steps = Vec::new();
    loop {
        let report = curvature_check(instance, &cand)?;
        let p = cand.params;
        steps.push(ShrinkStep {
            eta: p.eta,
            xi: p.xi,
            zeta: p.zeta,
            passes: report.passes,
        });
        if report.passes {
            return Ok(ShrinkReport {
                params: p,
                steps,
                curvature: report,
            });
        }
        if p.eta.max(p.xi).max(p.zeta) * 0.5 < SHRINK_FLOOR {
            return Err(EquilibriumError::Degenerate {
                floor: SHRINK_FLOOR,
                check: "curvature",
            });
        }
        cand.params = MechanismParams {
            eta: p.eta * 0.5,
            xi: p.xi * 0.5,
            zeta: p.zeta * 0.5,
            ..p
        };
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::centralized::solve_cp;
    use crate::equilibrium::construct_ne;
    use crate::mechanism::Variant;
    use crate::model::fixtures::*;

    #[test]
    fn symmetric_candidate_is_locally_concave() {
        let inst = symmetric();
        let (p, d) = solve_cp(&inst, 1e-10).unwrap();
        for variant in [Variant::Wbb, Variant::Sbb] {
            let ne = construct_ne(&inst, &p, &d, &MechanismParams::new(variant)).unwrap();
            let report = curvature_check(&inst, &ne).unwrap();
            assert!(report.passes);
            for a in &report.agents {
                assert_eq!(a.sides.len(), 2);
                for &v in &a.price_diagonal {
                    assert!((v + 2.0).abs() < 1e-4, "{v}");
                }
            }
        }
    }
}
