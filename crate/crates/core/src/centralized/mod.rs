//! Welfare-maximizing allocation and its KKT certificate.
//!
//! The program is solved on the lifted `(x, m)` variables, where `m_k^l`
//! stands in for the weighted maximum rate of group `k` on link `l`:
//!
//! ```text
//! max  sum v_ki(x_ki)
//! s.t. x_ki >= 0,   sum_k m_k^l <= c^l,   alpha_ki^l x_ki <= m_k^l
//! ```
//!
//! A log-barrier Newton method follows the central path; multipliers are
//! read off as `barrier weight / slack`, which satisfies the `m`-stationarity
//! block (`lambda^l = sum_i mu_ki^l`) exactly at every centred point.

mod export;
mod kkt;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::model::{validate, NetworkInstance, ValidationReport};

pub use export::solution_to_json;
pub use kkt::{check_a4, kkt_residuals, A4Check, KktReport, A4_POSITIVITY};

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("instance violates modelling assumptions")]
    InvalidInstance(ValidationReport),
    #[error("tolerance must be positive, got {0}")]
    InvalidTolerance(f64),
    #[error("starting point is not strictly interior")]
    InfeasibleStart,
    #[error("no convergence: KKT residual {residual:.3e} after {newton_steps} Newton steps")]
    NonConvergence { residual: f64, newton_steps: usize },
}

/// Rates `x` (indexed by agent) and lifted group maxima `m` (flattened by
/// [`NetworkInstance::group_link_offsets`]).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrimalSolution {
    pub x: Vec<f64>,
    pub m: Vec<f64>,
}

impl PrimalSolution {
    /// `m_k^l` for the group in `slot` of link `l`.
    pub fn group_max(&self, instance: &NetworkInstance, l: usize, slot: usize) -> f64 {
        self.m[instance.group_link_offsets()[l] + slot]
    }

    pub fn welfare(&self, instance: &NetworkInstance) -> f64 {
        welfare(instance, &self.x)
    }
}

pub fn welfare(instance: &NetworkInstance, x: &[f64]) -> f64 {
    instance
        .agents()
        .iter()
        .zip(x)
        .map(|(a, &xa)| a.valuation.value(xa))
        .sum()
}

/// Members of a group that share the group maximum on a link. With more than
/// one member the split of `lambda^l` among their `mu` need not be unique.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TieSet {
    pub link: usize,
    pub group: u32,
    pub members: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DualCertificate {
    /// `lambda^l` per link.
    pub lambda: Vec<f64>,
    /// `mu_ki^l` per agent, aligned with the agent's route.
    pub mu: Vec<Vec<f64>>,
    pub residuals: KktReport,
    pub ties: Vec<TieSet>,
}

#[derive(Debug, Clone)]
pub struct SolveOptions {
    pub tol: f64,
    /// Strictly interior starting point; defaults to [`default_start`].
    pub start: Option<PrimalSolution>,
    pub max_newton_steps: usize,
}

impl SolveOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self {
            tol,
            start: None,
            max_newton_steps: 5000,
        }
    }
}

/// `m_k^l = c^l / (2 K^l)` and `x_ki = min_l m_k^l / (2 alpha_ki^l)`.
pub fn default_start(instance: &NetworkInstance) -> PrimalSolution {
    let offsets = instance.group_link_offsets();
    let mut m = vec![0.0; instance.num_group_links()];
    for l in 0..instance.num_links() {
        let k_l = instance.groups_on_link(l);
        for slot in 0..k_l {
            m[offsets[l] + slot] = instance.capacity(l) / (2.0 * k_l as f64);
        }
    }
    let x = (0..instance.num_agents())
        .map(|a| {
            instance
                .agent(a)
                .route
                .iter()
                .zip(instance.placements(a))
                .map(|(hop, p)| m[offsets[hop.link] + p.slot] / (2.0 * hop.alpha))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    PrimalSolution { x, m }
}

pub fn solve_cp(
    instance: &NetworkInstance,
    tol: f64,
) -> Result<(PrimalSolution, DualCertificate), SolverError> {
    solve_cp_with(instance, &SolveOptions::with_tol(tol))
}

pub fn solve_cp_with(
    instance: &NetworkInstance,
    opts: &SolveOptions,
) -> Result<(PrimalSolution, DualCertificate), SolverError> {
    let report = validate(instance);
    if !report.is_ok() {
        return Err(SolverError::InvalidInstance(report));
    }
    if !(opts.tol > 0.0 && opts.tol.is_finite()) {
        return Err(SolverError::InvalidTolerance(opts.tol));
    }
    let start = opts
        .start
        .clone()
        .unwrap_or_else(|| default_start(instance));
    let probe = Barrier::new(instance, 1.0);
    if probe.slacks(&probe.pack(&start)).is_none() {
        return Err(SolverError::InfeasibleStart);
    }
    // With saturated valuations every marginal value at the optimum can be
    // tiny, and an absolute tolerance then certifies points with slack
    // capacity. Loose solves find the size of the largest marginal value;
    // below `RESCALE_BELOW` the objective is divided by it.
    let loose = SolveOptions {
        tol: opts.tol.max(LOOSE_TOL),
        ..opts.clone()
    };
    let mut scale = 1.0;
    for _ in 0..MAX_RESCALES {
        let (primal, _) = solve_scaled(instance, &loose, &start, scale)?;
        let marginal = instance
            .agents()
            .iter()
            .zip(&primal.x)
            .map(|(a, &x)| a.valuation.derivative(x))
            .fold(0.0, f64::max);
        let next = if marginal < RESCALE_BELOW {
            marginal
        } else {
            1.0
        };
        if next >= 0.5 * scale && next <= 2.0 * scale {
            break;
        }
        scale = next;
    }
    solve_scaled(instance, opts, &start, scale)
}

const LOOSE_TOL: f64 = 1e-6;
const RESCALE_BELOW: f64 = 1e-2;
const MAX_RESCALES: usize = 4;

/// Barrier path for `max sum v / scale`; residuals must reach `tol * scale`.
fn solve_scaled(
    instance: &NetworkInstance,
    opts: &SolveOptions,
    start: &PrimalSolution,
    scale: f64,
) -> Result<(PrimalSolution, DualCertificate), SolverError> {
    let barrier = Barrier::new(instance, scale);
    let mut z = barrier.pack(start);
    let target = opts.tol * scale;
    let mut tau = 1.0;
    let mut newton_steps = 0;
    let mut last_residual = f64::INFINITY;
    while tau > 1e-18 {
        newton_steps += barrier.centre(&mut z, tau, opts.max_newton_steps - newton_steps);
        if newton_steps >= opts.max_newton_steps {
            break;
        }
        // Complementary slackness sits at `tau` on the central path; the
        // extra two decades keep primal slacks (`tau / multiplier`) small too.
        if tau <= 1e-2 * opts.tol * (1.0 + 1e-9) {
            let (primal, dual) = barrier.certificate(&z, tau);
            last_residual = dual.residuals.max_residual();
            if last_residual <= target {
                return Ok((primal, dual));
            }
        }
        tau *= 0.1;
    }
    Err(SolverError::NonConvergence {
        residual: last_residual,
        newton_steps,
    })
}

/// Log-barrier objective on the packed vector `z = (x, m)`.
struct Barrier<'a> {
    inst: &'a NetworkInstance,
    offsets: Vec<usize>,
    n: usize,
    /// Valuations are divided by this.
    scale: f64,
}

struct Slacks {
    /// `c^l - sum_k m_k^l`
    link: Vec<f64>,
    /// `m_k^l - alpha x_ki`, aligned with routes.
    member: Vec<Vec<f64>>,
}

impl<'a> Barrier<'a> {
    fn new(inst: &'a NetworkInstance, scale: f64) -> Self {
        Self {
            inst,
            offsets: inst.group_link_offsets(),
            n: inst.num_agents(),
            scale,
        }
    }

    fn dim(&self) -> usize {
        self.n + self.inst.num_group_links()
    }

    fn pack(&self, p: &PrimalSolution) -> Vec<f64> {
        p.x.iter().chain(&p.m).copied().collect()
    }

    fn m_index(&self, a: usize, h: usize) -> usize {
        let hop = self.inst.agent(a).route[h];
        self.n + self.offsets[hop.link] + self.inst.placements(a)[h].slot
    }

    fn slacks(&self, z: &[f64]) -> Option<Slacks> {
        if z[..self.n].iter().any(|&x| !(x > 0.0)) {
            return None;
        }
        let mut link = Vec::with_capacity(self.inst.num_links());
        for l in 0..self.inst.num_links() {
            let k_l = self.inst.groups_on_link(l);
            let base = self.n + self.offsets[l];
            let s = self.inst.capacity(l) - z[base..base + k_l].iter().sum::<f64>();
            if !(s > 0.0) {
                return None;
            }
            link.push(s);
        }
        let mut member = Vec::with_capacity(self.n);
        for a in 0..self.n {
            let route = &self.inst.agent(a).route;
            let mut row = Vec::with_capacity(route.len());
            for (h, hop) in route.iter().enumerate() {
                let s = z[self.m_index(a, h)] - hop.alpha * z[a];
                if !(s > 0.0) {
                    return None;
                }
                row.push(s);
            }
            member.push(row);
        }
        Some(Slacks { link, member })
    }

    /// `f(to) - f(from)`, summed term by term so that nearby iterates do
    /// not lose the difference to cancellation.
    fn change(&self, from: &[f64], to: &[f64], tau: f64) -> Option<f64> {
        let s1 = self.slacks(to)?;
        let s0 = self.slacks(from).expect("interior");
        let log_ratio = |a: f64, b: f64| ((b - a) / a).ln_1p();
        let mut f = 0.0;
        for a in 0..self.n {
            f -= self.inst.agent(a).valuation.increment(from[a], to[a]) / self.scale;
            f -= tau * log_ratio(from[a], to[a]);
        }
        for (a, b) in s0.link.iter().zip(&s1.link) {
            f -= tau * log_ratio(*a, *b);
        }
        for (a, b) in s0.member.iter().flatten().zip(s1.member.iter().flatten()) {
            f -= tau * log_ratio(*a, *b);
        }
        Some(f)
    }

    fn gradient_hessian(&self, z: &[f64], tau: f64, s: &Slacks) -> (DVector<f64>, DMatrix<f64>) {
        let d = self.dim();
        let mut g = DVector::zeros(d);
        let mut hm = DMatrix::zeros(d, d);
        for a in 0..self.n {
            let v = &self.inst.agent(a).valuation;
            g[a] = -v.derivative(z[a]) / self.scale - tau / z[a];
            hm[(a, a)] = -v.second_derivative(z[a]) / self.scale + tau / (z[a] * z[a]);
            for (h, hop) in self.inst.agent(a).route.iter().enumerate() {
                let sm = s.member[a][h];
                let j = self.m_index(a, h);
                let w = tau / (sm * sm);
                g[a] += tau * hop.alpha / sm;
                g[j] -= tau / sm;
                hm[(a, a)] += w * hop.alpha * hop.alpha;
                hm[(a, j)] -= w * hop.alpha;
                hm[(j, a)] -= w * hop.alpha;
                hm[(j, j)] += w;
            }
        }
        for l in 0..self.inst.num_links() {
            let k_l = self.inst.groups_on_link(l);
            let base = self.n + self.offsets[l];
            let sl = s.link[l];
            let w = tau / (sl * sl);
            for i in 0..k_l {
                g[base + i] += tau / sl;
                for j in 0..k_l {
                    hm[(base + i, base + j)] += w;
                }
            }
        }
        (g, hm)
    }

    /// Damped Newton centring at barrier weight `tau`; returns steps taken.
    fn centre(&self, z: &mut Vec<f64>, tau: f64, budget: usize) -> usize {
        let mut steps = 0;
        while steps < budget {
            let s = self.slacks(z).expect("iterate stays interior");
            let (g, h) = self.gradient_hessian(z, tau, &s);
            let dir = match h.clone().cholesky() {
                Some(ch) => ch.solve(&(-&g)),
                None => match h.lu().solve(&(-&g)) {
                    Some(d) => d,
                    None => break,
                },
            };
            steps += 1;
            let decrement = -g.dot(&dir);
            if !(decrement > 1e-22) {
                break;
            }
            let mut t = self.max_step(z, dir.as_slice());
            let mut accepted = false;
            let trusted = t == 1.0 && decrement < 1e-12;
            while t > 1e-16 {
                let trial: Vec<f64> = z.iter().zip(dir.iter()).map(|(a, b)| a + t * b).collect();
                if trial == *z {
                    break;
                }
                if let Some(df) = self.change(z, &trial, tau) {
                    // Near the centre the decrease drops below rounding noise;
                    // a full Newton step is then taken on trust.
                    if df <= -0.25 * t * decrement || trusted {
                        *z = trial;
                        accepted = true;
                        break;
                    }
                }
                t *= 0.5;
            }
            // One trusted step lands at rounding level by quadratic convergence.
            if !accepted || trusted {
                break;
            }
        }
        steps
    }

    /// Largest step in `(0, 1]` keeping every slack above 1% of its value.
    fn max_step(&self, z: &[f64], dir: &[f64]) -> f64 {
        let mut t: f64 = 1.0;
        let mut limit = |value: f64, rate: f64| {
            if rate < 0.0 {
                t = t.min(-0.99 * value / rate);
            }
        };
        for a in 0..self.n {
            limit(z[a], dir[a]);
            for (h, hop) in self.inst.agent(a).route.iter().enumerate() {
                let j = self.m_index(a, h);
                limit(z[j] - hop.alpha * z[a], dir[j] - hop.alpha * dir[a]);
            }
        }
        for l in 0..self.inst.num_links() {
            let base = self.n + self.offsets[l];
            let k_l = self.inst.groups_on_link(l);
            let used: f64 = z[base..base + k_l].iter().sum();
            let rate: f64 = dir[base..base + k_l].iter().sum();
            limit(self.inst.capacity(l) - used, -rate);
        }
        t
    }

    fn certificate(&self, z: &[f64], tau: f64) -> (PrimalSolution, DualCertificate) {
        let s = self.slacks(z).expect("interior");
        let lambda: Vec<f64> = s.link.iter().map(|sl| self.scale * tau / sl).collect();
        let mu: Vec<Vec<f64>> = s
            .member
            .iter()
            .map(|row| row.iter().map(|sm| self.scale * tau / sm).collect())
            .collect();
        let mut x = z[..self.n].to_vec();
        for (a, xa) in x.iter_mut().enumerate() {
            // Rates this far below the agent's capacity scale sit on the
            // nonnegativity boundary.
            let scale = self
                .inst
                .agent(a)
                .route
                .iter()
                .map(|hop| self.inst.capacity(hop.link) / hop.alpha)
                .fold(f64::INFINITY, f64::min);
            if *xa < A4_POSITIVITY * scale {
                *xa = 0.0;
            }
        }
        let primal = PrimalSolution {
            x,
            m: z[self.n..].to_vec(),
        };
        let (lambda, mu) = self.polish(&primal, lambda, mu);
        let mut dual = DualCertificate {
            lambda,
            mu,
            residuals: KktReport {
                primal_feas: 0.0,
                dual_feas: 0.0,
                comp_slack: 0.0,
                stationarity: 0.0,
                a4: check_a4(self.inst, &primal),
            },
            ties: tie_sets(self.inst, &primal),
        };
        dual.residuals = kkt_residuals(self.inst, &primal, &dual);
        (primal, dual)
    }
}

impl Barrier<'_> {
    /// Small correction of `(lambda, mu)` so that the stationarity equations
    /// hold to rounding.
    ///
    /// `tau / slack` loses digits once slacks approach the spacing of the
    /// iterates themselves. The correction is the minimum-norm change in the
    /// metric weighted by the current multipliers, which keeps near-zero
    /// multipliers near zero.
    fn polish(
        &self,
        primal: &PrimalSolution,
        lambda: Vec<f64>,
        mu: Vec<Vec<f64>>,
    ) -> (Vec<f64>, Vec<Vec<f64>>) {
        let nl = lambda.len();
        let mut mu_index = Vec::with_capacity(self.n);
        let mut acc = nl;
        for row in &mu {
            mu_index.push(acc);
            acc += row.len();
        }
        let dim = acc;
        let mut z0 = DVector::zeros(dim);
        for (l, &v) in lambda.iter().enumerate() {
            z0[l] = v;
        }
        for (a, row) in mu.iter().enumerate() {
            for (h, &v) in row.iter().enumerate() {
                z0[mu_index[a] + h] = v;
            }
        }

        let mut rows: Vec<(Vec<(usize, f64)>, f64)> = Vec::new();
        for a in 0..self.n {
            if primal.x[a] > 0.0 {
                let agent = self.inst.agent(a);
                let coeffs = agent
                    .route
                    .iter()
                    .enumerate()
                    .map(|(h, hop)| (mu_index[a] + h, hop.alpha))
                    .collect();
                rows.push((coeffs, agent.valuation.derivative(primal.x[a])));
            }
        }
        for l in 0..nl {
            for g in &self.inst.usage(l).groups {
                let mut coeffs = vec![(l, 1.0)];
                for &a in &g.members {
                    let h = self.inst.hop_index(a, l).expect("member uses link");
                    coeffs.push((mu_index[a] + h, -1.0));
                }
                rows.push((coeffs, 0.0));
            }
        }

        // Normalised so the SVD cutoff is relative to the price scale.
        let weights: Vec<f64> = z0.iter().map(|v| (v / self.scale).powi(2)).collect();
        let r = rows.len();
        let mut awa = DMatrix::zeros(r, r);
        let mut rhs = DVector::zeros(r);
        for (i, (ci, bi)) in rows.iter().enumerate() {
            rhs[i] = bi - ci.iter().map(|&(j, c)| c * z0[j]).sum::<f64>();
            for (k, (ck, _)) in rows.iter().enumerate() {
                let mut v = 0.0;
                for &(j, c) in ci {
                    for &(j2, c2) in ck {
                        if j == j2 {
                            v += c * c2 * weights[j];
                        }
                    }
                }
                awa[(i, k)] = v;
            }
        }
        // Jacobi scaling: a row whose multipliers are all tiny would otherwise
        // fall below the SVD cutoff and keep its stationarity residual.
        let d = DVector::from_iterator(
            r,
            (0..r).map(|i| {
                let v = awa[(i, i)];
                if v > 0.0 {
                    1.0 / v.sqrt()
                } else {
                    1.0
                }
            }),
        );
        let scaled = DMatrix::from_fn(r, r, |i, k| awa[(i, k)] * d[i] * d[k]);
        let Ok(u) = scaled.svd(true, true).solve(&rhs.component_mul(&d), 1e-14) else {
            return (lambda, mu);
        };
        let nu = u.component_mul(&d);
        let mut z = z0;
        for (i, (ci, _)) in rows.iter().enumerate() {
            for &(j, c) in ci {
                z[j] += weights[j] * c * nu[i];
            }
        }
        let lambda = (0..nl).map(|l| z[l]).collect();
        let mu = mu
            .iter()
            .enumerate()
            .map(|(a, row)| (0..row.len()).map(|h| z[mu_index[a] + h]).collect())
            .collect();
        (lambda, mu)
    }
}

fn tie_sets(inst: &NetworkInstance, primal: &PrimalSolution) -> Vec<TieSet> {
    let mut ties = Vec::new();
    for l in 0..inst.num_links() {
        for g in &inst.usage(l).groups {
            let weighted: Vec<(usize, f64)> = g
                .members
                .iter()
                .map(|&a| {
                    let h = inst.hop_index(a, l).expect("member uses link");
                    (a, inst.agent(a).route[h].alpha * primal.x[a])
                })
                .collect();
            let top = weighted.iter().map(|w| w.1).fold(0.0, f64::max);
            if top <= 0.0 {
                continue;
            }
            let members: Vec<usize> = weighted
                .iter()
                .filter(|w| top - w.1 <= 1e-7 * top)
                .map(|w| w.0)
                .collect();
            if members.len() >= 2 {
                ties.push(TieSet {
                    link: l,
                    group: g.group,
                    members,
                });
            }
        }
    }
    ties
}
