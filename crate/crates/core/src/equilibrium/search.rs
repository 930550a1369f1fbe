use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::EquilibriumError;
use crate::mechanism::{utility, MechanismParams, Message, MessageProfile, Variant};
use crate::model::NetworkInstance;

/// One scalar component of an agent's own message.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Coordinate {
    Demand,
    /// `q1` on the given route position.
    Quote1(usize),
    /// `q2` on the given route position.
    Quote2(usize),
    Rho,
}

impl Coordinate {
    pub fn get(self, m: &Message) -> f64 {
        match self {
            Coordinate::Demand => m.y,
            Coordinate::Quote1(h) => m.q[h].q1,
            Coordinate::Quote2(h) => m.q[h].q2,
            Coordinate::Rho => m.rho.unwrap_or(0.0),
        }
    }

    pub fn set(self, m: &mut Message, v: f64) {
        match self {
            Coordinate::Demand => m.y = v,
            Coordinate::Quote1(h) => m.q[h].q1 = v,
            Coordinate::Quote2(h) => m.q[h].q2 = v,
            Coordinate::Rho => m.rho = Some(v),
        }
    }
}

/// Coordinates that enter agent `a`'s utility. `q2` on a link where the
/// agent is alone in its group is never read and is left out.
pub fn coordinates(instance: &NetworkInstance, a: usize, variant: Variant) -> Vec<Coordinate> {
    let route = &instance.agent(a).route;
    let mut out = vec![Coordinate::Demand];
    out.extend((0..route.len()).map(Coordinate::Quote1));
    out.extend(
        (0..route.len())
            .filter(|&h| instance.neighbours(a, h).1 != a)
            .map(Coordinate::Quote2),
    );
    if variant == Variant::Sbb {
        out.push(Coordinate::Rho);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOptions {
    /// Utility evaluations per restart.
    pub budget: usize,
    /// Starts in total: the current message, the zero message and random ones.
    pub restarts: usize,
    pub seed: u64,
    /// Restrict the search to these coordinates.
    pub only: Option<Vec<Coordinate>>,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self {
            budget: 1000,
            restarts: 8,
            seed: 0,
            only: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BestResponse {
    pub message: Message,
    pub utility: f64,
    /// Improvement over the current message; never negative.
    pub gain: f64,
    pub evaluations: usize,
}

const GOLDEN_STEPS: usize = 12;
const INV_PHI: f64 = 0.618_033_988_749_894_9;

struct Objective<'a> {
    inst: &'a NetworkInstance,
    params: &'a MechanismParams,
    work: MessageProfile,
    agent: usize,
    evals: usize,
}

impl Objective<'_> {
    fn eval(&mut self, m: &Message) -> f64 {
        self.evals += 1;
        self.work.messages[self.agent].clone_from(m);
        utility(self.inst, &self.work, self.params, self.agent)
    }
}

/// Multi-start coordinate ascent on the agent's own message.
///
/// Each coordinate is line-searched by golden section separately on each
/// side of its current value, so a kink at the current point (for example
/// where the agent's weighted demand ties its group maximum) cannot hide an
/// improving one-sided direction. Only strict improvements are accepted.
pub fn best_response(
    instance: &NetworkInstance,
    profile: &MessageProfile,
    agent: usize,
    params: &MechanismParams,
    opts: &SearchOptions,
) -> Result<BestResponse, EquilibriumError> {
    if opts.budget == 0 || opts.restarts == 0 {
        return Err(EquilibriumError::EmptyBudget);
    }
    let coords = opts
        .only
        .clone()
        .unwrap_or_else(|| coordinates(instance, agent, params.variant));
    let mut obj = Objective {
        inst: instance,
        params,
        work: profile.clone(),
        agent,
        evals: 0,
    };
    let current = profile.messages[agent].clone();
    let base = obj.eval(&current);

    let route = &instance.agent(agent).route;
    let demand_cap = route
        .iter()
        .map(|h| instance.capacity(h.link) / h.alpha)
        .fold(f64::INFINITY, f64::min)
        .max(current.y);
    let price_cap = profile
        .messages
        .iter()
        .flat_map(|m| m.q.iter().flat_map(|p| [p.q1, p.q2]))
        .fold(instance.agent(agent).valuation.slope_at_origin(), f64::max);
    let mut rng = ChaCha8Rng::seed_from_u64(
        opts.seed ^ (agent as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15),
    );

    let mut best = (current.clone(), base);
    for restart in 0..opts.restarts {
        let start = match restart {
            0 => current.clone(),
            1 => {
                let mut m = current.clone();
                for &c in &coords {
                    c.set(&mut m, 0.0);
                }
                m
            }
            _ => {
                let mut m = current.clone();
                for &c in &coords {
                    let hi = match c {
                        Coordinate::Demand => 2.0 * demand_cap,
                        Coordinate::Quote1(_) | Coordinate::Quote2(_) => 2.0 * price_cap,
                        Coordinate::Rho => 2.0,
                    };
                    c.set(&mut m, rng.gen_range(0.0..hi));
                }
                m
            }
        };
        let found = ascend(&mut obj, start, &coords, opts.budget);
        if found.1 > best.1 {
            best = found;
        }
    }
    Ok(BestResponse {
        gain: (best.1 - base).max(0.0),
        utility: best.1,
        message: best.0,
        evaluations: obj.evals,
    })
}

fn ascend(
    obj: &mut Objective<'_>,
    start: Message,
    coords: &[Coordinate],
    budget: usize,
) -> (Message, f64) {
    let stop = obj.evals + budget;
    let mut cur = start;
    let mut f = obj.eval(&cur);
    let scale = |v: f64| v.abs().max(1.0);
    let mut widths: Vec<f64> = coords.iter().map(|c| scale(c.get(&cur))).collect();
    while obj.evals < stop {
        let mut moved = false;
        for (j, &c) in coords.iter().enumerate() {
            let v = c.get(&cur);
            let mut improved = false;
            for side in [-1.0, 1.0] {
                if obj.evals + GOLDEN_STEPS + 2 > stop {
                    break;
                }
                let far = (v + side * widths[j]).max(0.0);
                if far == v {
                    continue;
                }
                let (t, ft) = golden(obj, &cur, c, v, far);
                if ft > f {
                    c.set(&mut cur, t);
                    f = ft;
                    improved = true;
                    break;
                }
            }
            if improved {
                moved = true;
            } else {
                widths[j] *= 0.5;
            }
        }
        let exhausted = coords
            .iter()
            .zip(&widths)
            .all(|(c, w)| *w <= 1e-13 * scale(c.get(&cur)));
        if exhausted || (!moved && obj.evals + GOLDEN_STEPS + 2 > stop) {
            break;
        }
    }
    (cur, f)
}

/// Golden-section maximisation of coordinate `c` over the segment from the
/// current value `v` (exclusive) to `far` (inclusive).
fn golden(obj: &mut Objective<'_>, base: &Message, c: Coordinate, v: f64, far: f64) -> (f64, f64) {
    let mut trial = base.clone();
    let mut at = |obj: &mut Objective<'_>, t: f64| {
        c.set(&mut trial, t);
        obj.eval(&trial)
    };
    let (mut a, mut b) = (v, far);
    let mut x1 = b - INV_PHI * (b - a);
    let mut x2 = a + INV_PHI * (b - a);
    let mut f1 = at(obj, x1);
    let mut f2 = at(obj, x2);
    for _ in 0..GOLDEN_STEPS {
        if f1 >= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - INV_PHI * (b - a);
            f1 = at(obj, x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + INV_PHI * (b - a);
            f2 = at(obj, x2);
        }
    }
    let f_far = at(obj, far);
    [(x1, f1), (x2, f2), (far, f_far)]
        .into_iter()
        .fold(
            (v, f64::NEG_INFINITY),
            |acc, p| if p.1 > acc.1 { p } else { acc },
        )
}
