use serde::Serialize;

use super::{AgentId, NetworkInstance};

/// A violated modelling assumption.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    /// Valuation parameters outside the strictly increasing, strictly
    /// concave, finite-slope family (A1/A2).
    ValuationParams {
        agent: AgentId,
        a: f64,
        b: f64,
    },
    /// Fewer than two groups share the link (A3).
    TooFewGroups {
        link: String,
        groups: usize,
    },
    NonPositiveCapacity {
        link: String,
        capacity: f64,
    },
    NonPositiveWeight {
        agent: AgentId,
        link: String,
        alpha: f64,
    },
}

impl Violation {
    pub fn assumption(&self) -> &'static str {
        match self {
            Violation::ValuationParams { .. } => "A1",
            Violation::TooFewGroups { .. } => "A3",
            Violation::NonPositiveCapacity { .. } | Violation::NonPositiveWeight { .. } => {
                "positivity"
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks the assumptions that can be decided from the instance alone.
/// A4 depends on the optimum and is checked by the centralized solver.
pub fn validate(instance: &NetworkInstance) -> ValidationReport {
    let mut violations = Vec::new();
    for agent in instance.agents() {
        if !agent.valuation.has_valid_params() {
            let (a, b) = agent.valuation.params();
            violations.push(Violation::ValuationParams {
                agent: agent.id,
                a,
                b,
            });
        }
        for hop in &agent.route {
            if !(hop.alpha > 0.0 && hop.alpha.is_finite()) {
                violations.push(Violation::NonPositiveWeight {
                    agent: agent.id,
                    link: instance.links()[hop.link].id.clone(),
                    alpha: hop.alpha,
                });
            }
        }
    }
    for (l, link) in instance.links().iter().enumerate() {
        if !(link.capacity > 0.0 && link.capacity.is_finite()) {
            violations.push(Violation::NonPositiveCapacity {
                link: link.id.clone(),
                capacity: link.capacity,
            });
        }
        let groups = instance.groups_on_link(l);
        if groups < 2 {
            violations.push(Violation::TooFewGroups {
                link: link.id.clone(),
                groups,
            });
        }
    }
    ValidationReport { violations }
}

#[cfg(test)]
mod tests {
    use super::super::fixtures::*;
    use super::*;

    #[test]
    fn single_group_link_violates_a3() {
        let inst = NetworkInstance::new(
            links(&[10.0]),
            vec![
                agent(1, 1, log(1.0, 1.0), &[(0, 1.0)]),
                agent(1, 2, log(1.0, 1.0), &[(0, 1.0)]),
            ],
        )
        .unwrap();
        let report = validate(&inst);
        assert_eq!(
            report.violations,
            vec![Violation::TooFewGroups {
                link: "l1".into(),
                groups: 1
            }]
        );
        assert_eq!(report.violations[0].assumption(), "A3");
    }

    #[test]
    fn zero_capacity_is_a_positivity_violation() {
        let inst = NetworkInstance::new(
            links(&[0.0]),
            vec![
                agent(1, 1, log(1.0, 1.0), &[(0, 1.0)]),
                agent(2, 1, log(1.0, 1.0), &[(0, 1.0)]),
            ],
        )
        .unwrap();
        let report = validate(&inst);
        assert!(!report.is_ok());
        assert!(report.violations.iter().any(
            |v| matches!(v, Violation::NonPositiveCapacity { capacity, .. } if *capacity == 0.0)
        ));
    }

    #[test]
    fn two_links_three_groups_unit_weights_is_clean() {
        let inst = NetworkInstance::new(
            links(&[10.0, 10.0]),
            vec![
                agent(1, 1, log(1.0, 1.0), &[(0, 1.0)]),
                agent(2, 1, log(1.0, 1.0), &[(0, 1.0), (1, 1.0)]),
                agent(3, 1, log(1.0, 1.0), &[(1, 1.0)]),
            ],
        )
        .unwrap();
        assert!(validate(&inst).is_ok());
    }

    #[test]
    fn bad_weights_and_params_are_reported() {
        let inst = NetworkInstance::new(
            links(&[10.0]),
            vec![
                agent(1, 1, log(-1.0, 1.0), &[(0, 1.0)]),
                agent(2, 1, log(1.0, 1.0), &[(0, 0.0)]),
            ],
        )
        .unwrap();
        let kinds: Vec<_> = validate(&inst)
            .violations
            .iter()
            .map(|v| v.assumption())
            .collect();
        assert_eq!(kinds, vec!["A1", "positivity"]);
    }
}
