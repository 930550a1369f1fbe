use mcast_core::centralized::{solve_cp, solve_cp_with, PrimalSolution, SolveOptions};
use mcast_core::model::{
    random_instance, Agent, AgentId, GeneratorConfig, Hop, Link, NetworkInstance, Valuation,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn log_agent(group: u32, member: u32, a: f64, route: &[(usize, f64)]) -> Agent {
    Agent {
        id: AgentId::new(group, member),
        valuation: Valuation::LogSat { a, b: 1.0 },
        route: route
            .iter()
            .map(|&(link, alpha)| Hop { link, alpha })
            .collect(),
    }
}

fn one_link(capacity: f64, agents: Vec<Agent>) -> NetworkInstance {
    NetworkInstance::new(
        vec![Link {
            id: "l1".into(),
            capacity,
        }],
        agents,
    )
    .unwrap()
}

/// Welfare along the capacity line `m1 + m2 = 6`, both group-1 members at
/// `m1`: `ln(1+m1) + 2 ln(1+m1) + ln(1+m2)`.
fn multicast_oracle() -> f64 {
    let welfare = |m1: f64| 3.0 * (1.0 + m1).ln() + (7.0 - m1).ln();
    let steps = 6000;
    let best = (0..=steps)
        .map(|i| 6.0 * i as f64 / steps as f64)
        .max_by(|a, b| welfare(*a).total_cmp(&welfare(*b)))
        .unwrap();
    // First-order condition 3/(1+m1) = 1/(1+m2), decreasing in m1.
    let foc = |m1: f64| 3.0 / (1.0 + m1) - 1.0 / (7.0 - m1);
    let (mut lo, mut hi) = ((best - 0.01).max(0.0), (best + 0.01).min(6.0));
    assert!(foc(lo) > 0.0 && foc(hi) < 0.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if foc(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn multicast_instance() -> NetworkInstance {
    one_link(
        6.0,
        vec![
            log_agent(1, 1, 1.0, &[(0, 1.0)]),
            log_agent(1, 2, 2.0, &[(0, 1.0)]),
            log_agent(2, 1, 1.0, &[(0, 1.0)]),
        ],
    )
}

#[test]
fn multicast_group_shares_its_maximum() {
    let inst = multicast_instance();
    let m1 = multicast_oracle();
    let (p, d) = solve_cp(&inst, 1e-9).unwrap();
    assert!((p.x[0] - m1).abs() < 1e-6, "{:?} vs {m1}", p.x);
    assert!((p.x[1] - m1).abs() < 1e-6);
    assert!((p.x[2] - (6.0 - m1)).abs() < 1e-6);
    let lambda = 1.0 / (7.0 - m1);
    assert!((d.lambda[0] - lambda).abs() < 1e-6);
    assert!((d.mu[0][0] - 1.0 / (1.0 + m1)).abs() < 1e-6);
    assert!((d.mu[1][0] - 2.0 / (1.0 + m1)).abs() < 1e-6);
    assert!(d.residuals.a4.holds);
    assert_eq!(d.ties.len(), 1);
    assert_eq!(d.ties[0].members, vec![0, 1]);
}

fn sweep_instance(seed: u64) -> NetworkInstance {
    random_instance(&GeneratorConfig {
        seed,
        groups: 2 + seed as usize % 3,
        max_group_size: 3,
        links: 1 + seed as usize % 6,
        density: 0.5,
    })
    .unwrap()
}

#[test]
fn random_instances_meet_tolerance() {
    for seed in 0..60 {
        let inst = sweep_instance(seed);
        let (p, d) = solve_cp(&inst, 1e-8).unwrap_or_else(|e| panic!("seed {seed}: {e}"));
        assert!(
            d.residuals.max_residual() <= 1e-8,
            "seed {seed}: {:?}",
            d.residuals
        );
        assert!(d.lambda.iter().all(|&v| v >= 0.0));
        // Some link is tight: otherwise scaling x up would stay feasible.
        let slack = (0..inst.num_links())
            .map(|l| {
                let used: f64 = inst
                    .usage(l)
                    .groups
                    .iter()
                    .enumerate()
                    .map(|(s, _)| p.group_max(&inst, l, s))
                    .sum();
                (inst.capacity(l) - used) / inst.capacity(l)
            })
            .fold(f64::INFINITY, f64::min);
        assert!(slack <= 1e-8, "seed {seed}: slack {slack}");
    }
}

/// Rates one agent's route bottleneck allows, used to build interior starts.
fn skewed_start(inst: &NetworkInstance, rng: &mut ChaCha8Rng) -> PrimalSolution {
    let offsets = inst.group_link_offsets();
    let mut m = vec![0.0; inst.num_group_links()];
    for l in 0..inst.num_links() {
        let k = inst.groups_on_link(l);
        let shares: Vec<f64> = (0..k).map(|_| rng.gen_range(0.1..1.0)).collect();
        let total: f64 = shares.iter().sum();
        for (s, share) in shares.iter().enumerate() {
            m[offsets[l] + s] = 0.9 * inst.capacity(l) * share / total;
        }
    }
    let x = (0..inst.num_agents())
        .map(|a| {
            let cap = inst
                .agent(a)
                .route
                .iter()
                .zip(inst.placements(a))
                .map(|(hop, pl)| m[offsets[hop.link] + pl.slot] / hop.alpha)
                .fold(f64::INFINITY, f64::min);
            cap * rng.gen_range(0.05..0.95)
        })
        .collect();
    PrimalSolution { x, m }
}

#[test]
fn optimum_does_not_depend_on_start() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for seed in 0..20 {
        let inst = sweep_instance(seed);
        let (a, _) = solve_cp(&inst, 1e-9).unwrap();
        let mut opts = SolveOptions::with_tol(1e-9);
        opts.start = Some(skewed_start(&inst, &mut rng));
        let (b, _) = solve_cp_with(&inst, &opts).unwrap();
        let gap =
            a.x.iter()
                .zip(&b.x)
                .map(|(u, v)| (u - v).abs())
                .fold(0.0, f64::max);
        assert!(gap <= 1e-6, "seed {seed}: {gap}");
    }
}

#[test]
fn optimum_beats_random_feasible_points() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for seed in 0..10 {
        let inst = sweep_instance(seed);
        let (p, _) = solve_cp(&inst, 1e-9).unwrap();
        let best = p.welfare(&inst);
        let mut accepted = 0;
        while accepted < 100 {
            // Rejection-sample a box containing the feasible set.
            let x: Vec<f64> = (0..inst.num_agents())
                .map(|a| {
                    let hi = inst
                        .agent(a)
                        .route
                        .iter()
                        .map(|h| inst.capacity(h.link) / h.alpha)
                        .fold(f64::INFINITY, f64::min);
                    rng.gen_range(0.0..hi)
                })
                .collect();
            let feasible = (0..inst.num_links()).all(|l| {
                let used: f64 = inst
                    .usage(l)
                    .groups
                    .iter()
                    .map(|g| {
                        g.members
                            .iter()
                            .map(|&a| {
                                inst.agent(a).route[inst.hop_index(a, l).unwrap()].alpha * x[a]
                            })
                            .fold(0.0, f64::max)
                    })
                    .sum();
                used <= inst.capacity(l)
            });
            if feasible {
                accepted += 1;
                let w = mcast_core::centralized::welfare(&inst, &x);
                assert!(best >= w - 1e-9, "seed {seed}: {best} < {w}");
            }
        }
    }
}
