use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Agent, AgentId, Hop, Link, ModelError, NetworkInstance, Valuation};

const ROUTE_ATTEMPTS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneratorConfig {
    pub seed: u64,
    /// Number of multicast groups `K`.
    pub groups: usize,
    pub max_group_size: usize,
    /// Number of links `L`.
    pub links: usize,
    /// Probability that a given link is on a given agent's route.
    pub density: f64,
}

/// Samples an instance that satisfies A3 on every link.
///
/// Capacities are drawn from `[5, 50]`, weights from `[0.5, 2]` and both
/// valuation parameters from `[0.5, 5]`. Only routes are resampled when a
/// draw leaves some link with fewer than two groups.
pub fn random_instance(cfg: &GeneratorConfig) -> Result<NetworkInstance, ModelError> {
    if cfg.groups < 2 {
        return Err(ModelError::InvalidGenerator(
            "need at least two groups".into(),
        ));
    }
    if cfg.links < 1 || cfg.max_group_size < 1 {
        return Err(ModelError::InvalidGenerator(
            "need at least one link and one member per group".into(),
        ));
    }
    if !(cfg.density > 0.0 && cfg.density <= 1.0) {
        return Err(ModelError::InvalidGenerator(
            "density must lie in (0, 1]".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let links: Vec<Link> = (0..cfg.links)
        .map(|l| Link {
            id: format!("l{}", l + 1),
            capacity: rng.gen_range(5.0..=50.0),
        })
        .collect();
    let mut members = Vec::new();
    for k in 0..cfg.groups {
        let size = rng.gen_range(1..=cfg.max_group_size);
        for i in 0..size {
            let a = rng.gen_range(0.5..=5.0);
            let b = rng.gen_range(0.5..=5.0);
            let valuation = if rng.gen_bool(0.5) {
                Valuation::LogSat { a, b }
            } else {
                Valuation::ExpSat { a, b }
            };
            members.push((AgentId::new(k as u32 + 1, i as u32 + 1), valuation));
        }
    }

    for _ in 0..ROUTE_ATTEMPTS {
        let routes: Vec<Vec<Hop>> = members
            .iter()
            .map(|_| sample_route(&mut rng, cfg.links, cfg.density))
            .collect();
        if satisfies_a3(&members, &routes, cfg.links) {
            let agents = members
                .iter()
                .zip(routes)
                .map(|(&(id, valuation), route)| Agent {
                    id,
                    valuation,
                    route,
                })
                .collect();
            return NetworkInstance::new(links, agents);
        }
    }
    Err(ModelError::SamplingExhausted(ROUTE_ATTEMPTS))
}

fn sample_route(rng: &mut ChaCha8Rng, links: usize, density: f64) -> Vec<Hop> {
    let mut route: Vec<Hop> = (0..links)
        .filter(|_| rng.gen_bool(density))
        .map(|link| Hop { link, alpha: 0.0 })
        .collect();
    if route.is_empty() {
        route.push(Hop {
            link: rng.gen_range(0..links),
            alpha: 0.0,
        });
    }
    for hop in &mut route {
        hop.alpha = rng.gen_range(0.5..=2.0);
    }
    route
}

fn satisfies_a3(members: &[(AgentId, Valuation)], routes: &[Vec<Hop>], links: usize) -> bool {
    (0..links).all(|l| {
        let mut groups: Vec<u32> = members
            .iter()
            .zip(routes)
            .filter(|(_, r)| r.iter().any(|h| h.link == l))
            .map(|((id, _), _)| id.group)
            .collect();
        groups.dedup();
        groups.len() >= 2
    })
}

#[cfg(test)]
mod tests {
    use super::super::validate;
    use super::*;

    fn cfg(
        seed: u64,
        groups: usize,
        max_group_size: usize,
        links: usize,
        density: f64,
    ) -> GeneratorConfig {
        GeneratorConfig {
            seed,
            groups,
            max_group_size,
            links,
            density,
        }
    }

    #[test]
    fn generated_instance_validates() {
        let inst = random_instance(&cfg(1, 3, 2, 2, 0.8)).unwrap();
        assert!(validate(&inst).is_ok());
    }

    #[test]
    fn same_seed_same_instance() {
        let a = random_instance(&cfg(7, 4, 3, 5, 0.5)).unwrap();
        let b = random_instance(&cfg(7, 4, 3, 5, 0.5)).unwrap();
        assert_eq!(a, b);
        let c = random_instance(&cfg(8, 4, 3, 5, 0.5)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn minimal_instance_has_two_singletons_on_one_link() {
        let inst = random_instance(&cfg(2, 2, 1, 1, 1.0)).unwrap();
        assert_eq!(inst.num_links(), 1);
        assert_eq!(inst.num_agents(), 2);
        assert_eq!(inst.groups_on_link(0), 2);
        assert!(inst.usage(0).groups.iter().all(|g| g.members.len() == 1));
    }

    #[test]
    fn every_link_is_used_by_two_groups() {
        for seed in 0..40 {
            let inst = random_instance(&cfg(
                seed,
                2 + (seed as usize % 3),
                3,
                1 + seed as usize % 6,
                0.4,
            ))
            .unwrap();
            for l in 0..inst.num_links() {
                assert!(inst.groups_on_link(l) >= 2, "seed {seed} link {l}");
            }
            for a in inst.agents() {
                let (va, vb) = a.valuation.params();
                assert!((0.5..=5.0).contains(&va) && (0.5..=5.0).contains(&vb));
                assert!(a.route.iter().all(|h| (0.5..=2.0).contains(&h.alpha)));
            }
            assert!(inst
                .links()
                .iter()
                .all(|l| (5.0..=50.0).contains(&l.capacity)));
        }
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(random_instance(&cfg(1, 1, 2, 2, 0.5)).is_err());
        assert!(random_instance(&cfg(1, 2, 2, 0, 0.5)).is_err());
        assert!(random_instance(&cfg(1, 2, 2, 2, 0.0)).is_err());
    }
}
