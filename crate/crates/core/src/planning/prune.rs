use std::cmp::Ordering;

use microlp::{ComparisonOp, OptimizationDirection, Problem};

use super::{canonical_cmp, lex_cmp, AlphaFunction, AlphaSet, Partial};

/// Minimum advantage a table must have somewhere on the simplex to survive
/// LP pruning. Removing a table whose best advantage is below this changes the
/// value function by at most this amount.
pub const LP_MARGIN: f64 = 1e-11;

pub(crate) trait Tabled {
    fn table(&self) -> &[f64];
    fn canonical(&self, other: &Self) -> Ordering;
}

impl Tabled for AlphaFunction {
    fn table(&self) -> &[f64] {
        &self.values
    }

    fn canonical(&self, other: &Self) -> Ordering {
        canonical_cmp(self, other)
    }
}

impl Tabled for Partial {
    fn table(&self) -> &[f64] {
        &self.values
    }

    fn canonical(&self, other: &Self) -> Ordering {
        lex_cmp(&self.values, &other.values).then_with(|| self.choices.cmp(&other.choices))
    }
}

/// `a >= b` at every entry.
fn covers(a: &[f64], b: &[f64]) -> bool {
    a.iter().zip(b).all(|(x, y)| x >= y)
}

fn pointwise<T: Tabled>(mut items: Vec<T>) -> Vec<T> {
    items.sort_by(T::canonical);
    let mut kept: Vec<T> = Vec::with_capacity(items.len());
    'candidates: for candidate in items {
        for k in &kept {
            if covers(k.table(), candidate.table()) {
                continue 'candidates;
            }
        }
        // anything the candidate covers is now strictly dominated
        kept.retain(|k| !covers(candidate.table(), k.table()));
        kept.push(candidate);
    }
    kept.sort_by(T::canonical);
    kept
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Largest `delta` such that some belief `b` has
/// `<candidate, b> >= <w, b> + delta` for every `w` in `rivals`, with the
/// witness belief. `None` when the solver fails.
fn advantage(candidate: &[f64], rivals: &[&[f64]]) -> Option<(f64, Vec<f64>)> {
    let mut problem = Problem::new(OptimizationDirection::Maximize);
    let belief: Vec<_> = (0..candidate.len()).map(|_| problem.add_var(0.0, (0.0, 1.0))).collect();
    let delta = problem.add_var(1.0, (f64::NEG_INFINITY, f64::INFINITY));
    for rival in rivals {
        let mut terms: Vec<_> = belief
            .iter()
            .zip(candidate.iter().zip(rival.iter()))
            .map(|(&v, (c, r))| (v, c - r))
            .collect();
        terms.push((delta, -1.0));
        problem.add_constraint(terms.as_slice(), ComparisonOp::Ge, 0.0);
    }
    let simplex: Vec<_> = belief.iter().map(|&v| (v, 1.0)).collect();
    problem.add_constraint(simplex.as_slice(), ComparisonOp::Eq, 1.0);
    let solution = problem.solve().ok()?.into_solution().ok()?;
    let witness = belief.iter().map(|&v| solution.var_value(v)).collect();
    Some((solution.var_value(delta), witness))
}

fn best_at<T: Tabled>(items: &[T], belief: &[f64]) -> usize {
    let mut best = 0;
    let mut best_value = f64::NEG_INFINITY;
    for (i, item) in items.iter().enumerate() {
        let v = dot(item.table(), belief);
        if v > best_value {
            best = i;
            best_value = v;
        }
    }
    best
}

/// Lark's filter: keep only tables that are the unique best by more than
/// [`LP_MARGIN`] somewhere on the simplex. Input is pointwise-pruned first.
fn lark<T: Tabled>(items: Vec<T>) -> Vec<T> {
    let mut frontier = pointwise(items);
    if frontier.len() <= 1 {
        return frontier;
    }
    let width = frontier[0].table().len();
    let mut kept: Vec<T> = Vec::new();

    // the best table at each simplex vertex is always needed
    for k in 0..width {
        if frontier.is_empty() {
            break;
        }
        let mut vertex = vec![0.0; width];
        vertex[k] = 1.0;
        let pick = best_at(&frontier, &vertex);
        let value = frontier[pick].table()[k];
        if kept.iter().all(|w| w.table()[k] < value) {
            kept.push(frontier.remove(pick));
        }
    }

    while !frontier.is_empty() {
        let rivals: Vec<&[f64]> = kept.iter().map(Tabled::table).collect();
        match advantage(frontier[0].table(), &rivals) {
            Some((delta, _)) if delta <= LP_MARGIN => {
                frontier.remove(0);
            }
            Some((_, witness)) => {
                let pick = best_at(&frontier, &witness);
                kept.push(frontier.remove(pick));
            }
            // solver trouble: keep the table rather than risk a wrong drop
            None => kept.push(frontier.remove(0)),
        }
    }
    kept.sort_by(T::canonical);
    kept
}

pub(crate) fn prune_partials(items: Vec<Partial>) -> Vec<Partial> {
    pointwise(items)
}

pub(crate) fn prune_partials_lp(items: Vec<Partial>) -> Vec<Partial> {
    lark(items)
}

/// Drops exact duplicates and pointwise-dominated tables. Never changes
/// `value_at` at any belief.
pub fn prune_pointwise(set: &AlphaSet) -> AlphaSet {
    let alphas = pointwise(set.alphas.clone());
    AlphaSet::new(set.stage, set.states, set.domains, alphas).expect("pruning keeps at least one table")
}

/// Pointwise pruning followed by LP dominance pruning.
pub fn prune_lp(set: &AlphaSet) -> AlphaSet {
    let alphas = lark(set.alphas.clone());
    AlphaSet::new(set.stage, set.states, set.domains, alphas).expect("pruning keeps at least one table")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::belief::JointBelief;
    use crate::planning::value_at;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn alpha(values: Vec<f64>, action: usize) -> AlphaFunction {
        AlphaFunction {
            values,
            action,
            successors: Vec::new(),
        }
    }

    fn random_belief(rng: &mut ChaCha8Rng, n: usize) -> JointBelief {
        let w: Vec<f64> = (0..n).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
        let s: f64 = w.iter().sum();
        JointBelief::new(n, 1, w.iter().map(|x| x / s).collect()).unwrap()
    }

    #[test]
    fn identical_tables_leave_one_survivor() {
        let set = AlphaSet::new(0, 2, 1, vec![alpha(vec![1.0, 2.0], 1), alpha(vec![1.0, 2.0], 0)]).unwrap();
        assert_eq!(set.len(), 1);
        assert_eq!(set.get(0).action, 0);
        assert_eq!(prune_pointwise(&set).len(), 1);
    }

    #[test]
    fn constant_offset_is_dominated() {
        let set = AlphaSet::new(0, 3, 1, vec![alpha(vec![1.0, 5.0, -2.0], 0), alpha(vec![0.0, 4.0, -3.0], 1)]).unwrap();
        let pruned = prune_pointwise(&set);
        assert_eq!(pruned.len(), 1);
        assert_eq!(pruned.get(0).values, vec![1.0, 5.0, -2.0]);
    }

    #[test]
    fn pruning_never_changes_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let alphas = (0..20)
                .map(|i| alpha((0..4).map(|_| rng.gen_range(-5.0..5.0)).collect(), i % 3))
                .collect();
            let set = AlphaSet::new(0, 4, 1, alphas).unwrap();
            let pointwise = prune_pointwise(&set);
            let lp = prune_lp(&set);
            assert!(lp.len() <= pointwise.len());
            for _ in 0..100 {
                let b = random_belief(&mut rng, 4);
                let v = value_at(&set, &b).unwrap().0;
                assert!((value_at(&pointwise, &b).unwrap().0 - v).abs() <= 1e-12);
                assert!((value_at(&lp, &b).unwrap().0 - v).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn re_adding_a_dominated_table_keeps_values() {
        let base = vec![alpha(vec![0.0, 3.0], 0), alpha(vec![3.0, 0.0], 1)];
        let mut with_extra = base.clone();
        with_extra.push(alpha(vec![-1.0, 2.0], 2));
        let a = AlphaSet::new(0, 2, 1, base).unwrap();
        let b = AlphaSet::new(0, 2, 1, with_extra).unwrap();
        for w in [0.0, 0.2, 0.5, 0.9, 1.0] {
            let belief = JointBelief::new(2, 1, vec![w, 1.0 - w]).unwrap();
            assert_eq!(value_at(&a, &belief).unwrap().0, value_at(&b, &belief).unwrap().0);
        }
        assert_eq!(prune_pointwise(&b), a);
    }

    #[test]
    fn lp_drops_tables_below_the_upper_surface() {
        // (1, 1) is never better than max((3, 0), (0, 3)) but is not
        // pointwise dominated by either.
        let set = AlphaSet::new(
            0,
            2,
            1,
            vec![alpha(vec![3.0, 0.0], 0), alpha(vec![0.0, 3.0], 1), alpha(vec![1.0, 1.0], 2)],
        )
        .unwrap();
        assert_eq!(prune_pointwise(&set).len(), 3);
        let lp = prune_lp(&set);
        assert_eq!(lp.len(), 2);
        assert!(lp.alphas().iter().all(|a| a.action != 2));
    }
}
