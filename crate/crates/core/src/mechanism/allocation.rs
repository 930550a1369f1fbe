use serde::Serialize;

use crate::model::NetworkInstance;

/// Weighted group maxima `n_k^l = max_i alpha_ki^l y_ki`, flattened by
/// [`NetworkInstance::group_link_offsets`], and `|S^l(y)|` per link.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupMaxima {
    pub n: Vec<f64>,
    /// Slots of the groups with a strictly positive demand, per link.
    pub active: Vec<Vec<usize>>,
}

pub fn group_maxima(instance: &NetworkInstance, y: &[f64]) -> GroupMaxima {
    let offsets = instance.group_link_offsets();
    let mut n = vec![0.0; instance.num_group_links()];
    let mut active = Vec::with_capacity(instance.num_links());
    for l in 0..instance.num_links() {
        let mut on = Vec::new();
        for (slot, g) in instance.usage(l).groups.iter().enumerate() {
            let mut top = 0.0_f64;
            let mut any = false;
            for &a in &g.members {
                let h = instance.hop_index(a, l).expect("member uses link");
                top = top.max(instance.agent(a).route[h].alpha * y[a]);
                any |= y[a] > 0.0;
            }
            n[offsets[l] + slot] = top;
            if any {
                on.push(slot);
            }
        }
        active.push(on);
    }
    GroupMaxima { n, active }
}

/// Per-link bound on the scaling factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum LinkBound {
    Bounded(f64),
    /// No group demands anything on the link.
    Unbounded,
}

impl LinkBound {
    pub fn value(self) -> f64 {
        match self {
            LinkBound::Bounded(r) => r,
            LinkBound::Unbounded => f64::INFINITY,
        }
    }
}

/// `r^l`: `c / sum_k n_k` with two or more demanding groups, and the tweaked
/// `c/n - c/(n(n+1)) = c/(n+1)` with one, so a lone group can never take
/// the whole link.
pub fn link_scaling(instance: &NetworkInstance, maxima: &GroupMaxima, l: usize) -> LinkBound {
    let base = instance.group_link_offsets()[l];
    let c = instance.capacity(l);
    match maxima.active[l].as_slice() {
        [] => LinkBound::Unbounded,
        [only] => LinkBound::Bounded(c / (maxima.n[base + only] + 1.0)),
        slots => {
            let total: f64 = slots.iter().map(|s| maxima.n[base + s]).sum();
            LinkBound::Bounded(c / total)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Allocation {
    /// `min_l r^l`, or 0 for the all-zero demand.
    pub r: f64,
    pub r_per_link: Vec<LinkBound>,
    pub maxima: GroupMaxima,
    /// `m_k^l = r n_k^l`, flattened like `maxima.n`.
    pub m: Vec<f64>,
    pub x: Vec<f64>,
}

impl Allocation {
    /// `sum_k m_k^l`.
    pub fn link_load(&self, instance: &NetworkInstance, l: usize) -> f64 {
        let base = instance.group_link_offsets()[l];
        self.m[base..base + instance.groups_on_link(l)].iter().sum()
    }
}

pub fn allocate(instance: &NetworkInstance, y: &[f64]) -> Allocation {
    let maxima = group_maxima(instance, y);
    let r_per_link: Vec<LinkBound> = (0..instance.num_links())
        .map(|l| link_scaling(instance, &maxima, l))
        .collect();
    let r = r_per_link
        .iter()
        .map(|b| b.value())
        .fold(f64::INFINITY, f64::min);
    // Every agent has a route, so all links are unbounded only when y = 0.
    let r = if r.is_finite() { r } else { 0.0 };
    Allocation {
        r,
        m: maxima.n.iter().map(|n| r * n).collect(),
        x: y.iter().map(|v| r * v).collect(),
        r_per_link,
        maxima,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures::*;

    fn pair_group() -> NetworkInstance {
        NetworkInstance::new(
            links(&[10.0]),
            vec![
                agent(1, 1, log(1.0, 1.0), &[(0, 1.0)]),
                agent(1, 2, log(1.0, 1.0), &[(0, 2.0)]),
                agent(2, 1, log(1.0, 1.0), &[(0, 1.0)]),
            ],
        )
        .unwrap()
    }

    #[test]
    fn maxima_are_weighted() {
        let inst = pair_group();
        assert_eq!(group_maxima(&inst, &[4.0, 3.0, 1.0]).n, vec![6.0, 1.0]);
        assert_eq!(group_maxima(&inst, &[5.0, 2.0, 1.0]).n, vec![5.0, 1.0]);
        let zero = group_maxima(&inst, &[0.0; 3]);
        assert_eq!(zero.n, vec![0.0, 0.0]);
        assert!(zero.active[0].is_empty());
    }

    #[test]
    fn scaling_branches() {
        let inst = NetworkInstance::new(
            links(&[12.0]),
            vec![
                agent(1, 1, log(1.0, 1.0), &[(0, 1.0)]),
                agent(2, 1, log(1.0, 1.0), &[(0, 1.0)]),
            ],
        )
        .unwrap();
        let two = group_maxima(&inst, &[4.0, 8.0]);
        assert_eq!(link_scaling(&inst, &two, 0), LinkBound::Bounded(1.0));
        let one = group_maxima(&inst, &[3.0, 0.0]);
        assert_eq!(link_scaling(&inst, &one, 0), LinkBound::Bounded(3.0));
        let n = 3.0_f64;
        assert!((12.0 / n - 12.0 / (n * (n + 1.0)) - 3.0).abs() < 1e-15);
        let none = group_maxima(&inst, &[0.0, 0.0]);
        assert_eq!(link_scaling(&inst, &none, 0), LinkBound::Unbounded);
    }

    #[test]
    fn zero_demand_allocates_nothing() {
        let out = allocate(&symmetric(), &[0.0, 0.0]);
        assert_eq!(out.x, vec![0.0, 0.0]);
        assert_eq!(out.m, vec![0.0, 0.0]);
        assert_eq!(out.r, 0.0);
    }

    #[test]
    fn two_demands_fill_the_link() {
        let inst = symmetric();
        let out = allocate(&inst, &[4.0, 6.0]);
        assert_eq!(out.r, 1.0);
        assert_eq!(out.x, vec![4.0, 6.0]);
        assert_eq!(out.link_load(&inst, 0), 10.0);
    }

    #[test]
    fn tightest_link_sets_the_scale() {
        // Link 1 carries groups 1 and 2, link 2 carries groups 2 and 3.
        let inst = NetworkInstance::new(
            links(&[10.0, 8.0]),
            vec![
                agent(1, 1, log(1.0, 1.0), &[(0, 1.0)]),
                agent(2, 1, log(1.0, 1.0), &[(0, 1.0), (1, 1.0)]),
                agent(3, 1, log(1.0, 1.0), &[(1, 1.0)]),
            ],
        )
        .unwrap();
        let out = allocate(&inst, &[6.0, 4.0, 12.0]);
        assert_eq!(
            out.r_per_link,
            vec![LinkBound::Bounded(1.0), LinkBound::Bounded(0.5)]
        );
        assert_eq!(out.r, 0.5);
        assert_eq!(out.x, vec![3.0, 2.0, 6.0]);
    }
}
