//! Stochastic shift interventions.
//!
//! A shift on a discrete variable `X` with `m` values is a row-stochastic
//! `m x m` matrix `A`. Entry `A[i][j]` is the probability that value `i` is
//! remapped to value `j`, so a distribution `p` over `dom(X)` becomes
//! `p'_j = sum_i A[i][j] * p_i` (that is, `A^T p`).
//!
//! A [`DomainSpec`] bundles one shift per affected variable and describes a
//! whole environment configuration; variables it does not mention keep their
//! original mechanism. Shifts only ever act on transition factors.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::model::{CausalPomdp, ConditionalTable, ModelError};

/// Row-sum tolerance when a matrix is constructed from input.
pub const ROW_TOLERANCE: f64 = 1e-12;
/// Row-sum tolerance for matrices produced by arithmetic.
pub const ARITHMETIC_TOLERANCE: f64 = 1e-9;
/// Normalization tolerance for probability vectors.
pub const VECTOR_TOLERANCE: f64 = 1e-9;

/// Name given to the implicit identity domain.
pub const BASE_DOMAIN: &str = "base";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ShiftError {
    #[error("size mismatch: expected {expected}, got {actual}")]
    SizeMismatch { expected: usize, actual: usize },
    #[error("shift matrix must have at least one row")]
    Empty,
    #[error("row {row} has {len} entries in a {size}x{size} matrix")]
    NotSquare { row: usize, len: usize, size: usize },
    #[error("entry ({row}, {col}) = {value} is not a probability")]
    EntryOutOfRange { row: usize, col: usize, value: f64 },
    #[error("row {row} sums to {sum}, expected 1")]
    RowNotStochastic { row: usize, sum: f64 },
    #[error("target distribution sums to {sum}, expected 1")]
    NotNormalized { sum: f64 },
    #[error("domain set is empty")]
    EmptyDomainSet,
    #[error("duplicate domain name `{0}`")]
    DuplicateDomain(String),
    #[error("unknown domain `{0}`")]
    UnknownDomain(String),
    #[error("domain `{domain}`: {source}")]
    Binding {
        domain: String,
        #[source]
        source: ModelError,
    },
    #[error("domain `{domain}` shifts `{variable}` with a {actual}x{actual} matrix, variable has {expected} values")]
    BindingSize {
        domain: String,
        variable: String,
        expected: usize,
        actual: usize,
    },
}

/// Row-stochastic matrix of a stochastic shift intervention.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftMatrix {
    size: usize,
    entries: Vec<f64>,
}

impl ShiftMatrix {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, ShiftError> {
        let size = rows.len();
        if size == 0 {
            return Err(ShiftError::Empty);
        }
        let mut entries = Vec::with_capacity(size * size);
        for (row, values) in rows.iter().enumerate() {
            if values.len() != size {
                return Err(ShiftError::NotSquare {
                    row,
                    len: values.len(),
                    size,
                });
            }
            entries.extend_from_slice(values);
        }
        Self::checked(size, entries, ROW_TOLERANCE)
    }

    fn checked(size: usize, entries: Vec<f64>, tolerance: f64) -> Result<Self, ShiftError> {
        for (row, values) in entries.chunks_exact(size).enumerate() {
            for (col, &value) in values.iter().enumerate() {
                if !(0.0..=1.0).contains(&value) {
                    return Err(ShiftError::EntryOutOfRange { row, col, value });
                }
            }
            let sum: f64 = values.iter().sum();
            if (sum - 1.0).abs() > tolerance {
                return Err(ShiftError::RowNotStochastic { row, sum });
            }
        }
        Ok(ShiftMatrix { size, entries })
    }

    /// The identity intervention on a variable with `m` values.
    pub fn identity(m: usize) -> Result<Self, ShiftError> {
        if m == 0 {
            return Err(ShiftError::Empty);
        }
        let mut entries = vec![0.0; m * m];
        for i in 0..m {
            entries[i * m + i] = 1.0;
        }
        Ok(ShiftMatrix { size: m, entries })
    }

    /// Constant-row matrix sending every distribution to `target`.
    ///
    /// The result does not depend on the starting distribution: every row is
    /// `target`, so `A^T p = target * sum(p) = target`.
    pub fn to_target(target: &[f64]) -> Result<Self, ShiftError> {
        if target.is_empty() {
            return Err(ShiftError::Empty);
        }
        let sum: f64 = target.iter().sum();
        if (sum - 1.0).abs() > VECTOR_TOLERANCE || target.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(ShiftError::NotNormalized { sum });
        }
        let entries = target.iter().copied().cycle().take(target.len() * target.len()).collect();
        Ok(ShiftMatrix {
            size: target.len(),
            entries,
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, from: usize, to: usize) -> f64 {
        self.entries[from * self.size + to]
    }

    pub fn row(&self, from: usize) -> &[f64] {
        &self.entries[from * self.size..(from + 1) * self.size]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.entries.chunks_exact(self.size).map(<[f64]>::to_vec).collect()
    }

    pub fn is_identity(&self) -> bool {
        (0..self.size).all(|i| (0..self.size).all(|j| self.get(i, j) == if i == j { 1.0 } else { 0.0 }))
    }

    /// `p'_j = sum_i A[i][j] p_i`.
    pub fn apply(&self, p: &[f64]) -> Result<Vec<f64>, ShiftError> {
        if p.len() != self.size {
            return Err(ShiftError::SizeMismatch {
                expected: self.size,
                actual: p.len(),
            });
        }
        Ok(self.apply_unchecked(p))
    }

    pub(crate) fn apply_unchecked(&self, p: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.size];
        for (i, &pi) in p.iter().enumerate() {
            for (o, &a) in out.iter_mut().zip(self.row(i)) {
                *o += a * pi;
            }
        }
        out
    }

    /// Shift equivalent to applying `self` and then `next`: the matrix product
    /// `self * next`.
    pub fn then(&self, next: &ShiftMatrix) -> Result<ShiftMatrix, ShiftError> {
        if next.size != self.size {
            return Err(ShiftError::SizeMismatch {
                expected: self.size,
                actual: next.size,
            });
        }
        let n = self.size;
        let mut entries = vec![0.0; n * n];
        for i in 0..n {
            for k in 0..n {
                let a = self.get(i, k);
                for j in 0..n {
                    entries[i * n + j] += a * next.get(k, j);
                }
            }
        }
        // clamp rounding excursions just above 1
        entries.iter_mut().for_each(|e| *e = e.min(1.0));
        Self::checked(n, entries, ARITHMETIC_TOLERANCE)
    }
}

pub fn apply_shift(shift: &ShiftMatrix, p: &[f64]) -> Result<Vec<f64>, ShiftError> {
    shift.apply(p)
}

pub fn shift_to_target(target: &[f64]) -> Result<ShiftMatrix, ShiftError> {
    ShiftMatrix::to_target(target)
}

pub fn identity_shift(m: usize) -> Result<ShiftMatrix, ShiftError> {
    ShiftMatrix::identity(m)
}

/// Applies `shift` to every conditional distribution of `table`.
pub fn shifted_cpt(table: &ConditionalTable, shift: &ShiftMatrix) -> Result<ConditionalTable, ShiftError> {
    if table.arity() != shift.size() {
        return Err(ShiftError::SizeMismatch {
            expected: shift.size(),
            actual: table.arity(),
        });
    }
    let rows: Vec<Vec<f64>> = table.distributions().map(|d| shift.apply_unchecked(d)).collect();
    Ok(ConditionalTable::from_rows(table.arity(), &rows))
}

/// A named environment configuration: a shift per affected variable.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainSpec {
    name: String,
    shifts: BTreeMap<String, ShiftMatrix>,
}

impl DomainSpec {
    /// Domain leaving every mechanism unchanged.
    pub fn identity(name: impl Into<String>) -> Self {
        DomainSpec {
            name: name.into(),
            shifts: BTreeMap::new(),
        }
    }

    pub fn with_shift(mut self, variable: impl Into<String>, shift: ShiftMatrix) -> Self {
        self.shifts.insert(variable.into(), shift);
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn shift_for(&self, variable: &str) -> Option<&ShiftMatrix> {
        self.shifts.get(variable)
    }

    pub fn shifts(&self) -> impl Iterator<Item = (&str, &ShiftMatrix)> {
        self.shifts.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// True when every shift is the identity (or there are none).
    pub fn is_identity(&self) -> bool {
        self.shifts.values().all(ShiftMatrix::is_identity)
    }

    /// Checks that every shifted variable exists and sizes agree.
    pub fn check_against(&self, model: &CausalPomdp) -> Result<(), ShiftError> {
        for (var, shift) in &self.shifts {
            let i = model.variable_index(var).map_err(|source| ShiftError::Binding {
                domain: self.name.clone(),
                source,
            })?;
            let expected = model.variables()[i].values.len();
            if shift.size() != expected {
                return Err(ShiftError::BindingSize {
                    domain: self.name.clone(),
                    variable: var.clone(),
                    expected,
                    actual: shift.size(),
                });
            }
        }
        Ok(())
    }

    /// Per-variable shifts in declared variable order (`None` = identity).
    pub fn bind<'a>(&'a self, model: &CausalPomdp) -> Result<Vec<Option<&'a ShiftMatrix>>, ShiftError> {
        self.check_against(model)?;
        Ok(model
            .variables()
            .iter()
            .map(|v| self.shifts.get(&v.name))
            .collect())
    }
}

/// Ordered, non-empty set of domains with unique names.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainSet {
    domains: Vec<DomainSpec>,
}

impl DomainSet {
    pub fn new(model: &CausalPomdp, domains: Vec<DomainSpec>) -> Result<Self, ShiftError> {
        if domains.is_empty() {
            return Err(ShiftError::EmptyDomainSet);
        }
        let mut seen = BTreeSet::new();
        for d in &domains {
            if !seen.insert(d.name()) {
                return Err(ShiftError::DuplicateDomain(d.name().to_string()));
            }
            d.check_against(model)?;
        }
        Ok(DomainSet { domains })
    }

    /// The single identity domain.
    pub fn base_only(model: &CausalPomdp) -> Self {
        Self::new(model, vec![DomainSpec::identity(BASE_DOMAIN)]).expect("identity domain is valid")
    }

    /// Every domain available for `model`: the implicit identity domain
    /// `base` (unless the file declares its own `base`), followed by the
    /// declared domains in file order.
    pub fn catalog(model: &CausalPomdp) -> Self {
        let declared = model.declared_domains();
        let mut domains = Vec::with_capacity(declared.len() + 1);
        if !declared.iter().any(|d| d.name() == BASE_DOMAIN) {
            domains.push(DomainSpec::identity(BASE_DOMAIN));
        }
        domains.extend(declared.iter().cloned());
        Self::new(model, domains).expect("declared domains were validated at load")
    }

    /// Resolves `"all"` or a comma-separated list of names against the
    /// model's catalog, keeping the order given.
    pub fn select(model: &CausalPomdp, selector: &str) -> Result<Self, ShiftError> {
        let catalog = Self::catalog(model);
        if selector.trim() == "all" {
            return Ok(catalog);
        }
        let mut picked = Vec::new();
        for name in selector.split(',').map(str::trim).filter(|n| !n.is_empty()) {
            let d = catalog
                .get(name)
                .ok_or_else(|| ShiftError::UnknownDomain(name.to_string()))?;
            picked.push(d.clone());
        }
        Self::new(model, picked)
    }

    pub fn len(&self) -> usize {
        self.domains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.domains.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, DomainSpec> {
        self.domains.iter()
    }

    pub fn get(&self, name: &str) -> Option<&DomainSpec> {
        self.domains.iter().find(|d| d.name() == name)
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.domains.iter().position(|d| d.name() == name)
    }

    pub fn names(&self) -> Vec<&str> {
        self.domains.iter().map(DomainSpec::name).collect()
    }

    pub fn contains_identity(&self) -> bool {
        self.domains.iter().any(DomainSpec::is_identity)
    }
}

impl std::ops::Index<usize> for DomainSet {
    type Output = DomainSpec;

    fn index(&self, index: usize) -> &DomainSpec {
        &self.domains[index]
    }
}

impl<'a> IntoIterator for &'a DomainSet {
    type Item = &'a DomainSpec;
    type IntoIter = std::slice::Iter<'a, DomainSpec>;

    fn into_iter(self) -> Self::IntoIter {
        self.domains.iter()
    }
}

/// True iff the two domains induce the same transition kernel up to `tol`
/// for every `(s, a, s')`.
pub fn kernels_equal(
    model: &CausalPomdp,
    first: &DomainSpec,
    second: &DomainSpec,
    tol: f64,
) -> Result<bool, ModelError> {
    let states = model.enumerate_states();
    for a in 0..model.action_count() {
        for s in &states {
            for next in &states {
                let p = model.transition_prob(s, a, next, first)?;
                let q = model.transition_prob(s, a, next, second)?;
                if (p - q).abs() > tol {
                    return Ok(false);
                }
            }
        }
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use proptest::prelude::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn remapping_example() {
        let a = ShiftMatrix::from_rows(&[
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.5, 0.5, 0.0],
        ])
        .unwrap();
        let out = apply_shift(&a, &[1.0 / 3.0; 3]).unwrap();
        assert!(close(&out, &[0.5, 0.5, 0.0], 1e-12));
    }

    #[test]
    fn both_coin_shifts_give_three_quarters() {
        let a = ShiftMatrix::from_rows(&[vec![1.0, 0.0], vec![0.5, 0.5]]).unwrap();
        let b = ShiftMatrix::from_rows(&[vec![0.5, 0.5], vec![1.0, 0.0]]).unwrap();
        assert_ne!(a, b);
        assert!(close(&a.apply(&[0.5, 0.5]).unwrap(), &[0.75, 0.25], 1e-12));
        assert!(close(&b.apply(&[0.5, 0.5]).unwrap(), &[0.75, 0.25], 1e-12));
    }

    #[test]
    fn identity_is_exact() {
        let id = identity_shift(3).unwrap();
        let p = [0.1, 0.2, 0.7];
        assert_eq!(id.apply(&p).unwrap(), p.to_vec());
        assert_eq!(identity_shift(2).unwrap().to_rows(), vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert_eq!(identity_shift(0), Err(ShiftError::Empty));

        let tiger = fixtures::tiger();
        let z = tiger.variable_index("Z").unwrap();
        let cpt = tiger.conditional_table(z, 0);
        assert_eq!(&shifted_cpt(cpt, &id.clone()).err(), &Some(ShiftError::SizeMismatch { expected: 3, actual: 2 }));
        assert_eq!(&shifted_cpt(cpt, &identity_shift(2).unwrap()).unwrap(), cpt);
    }

    #[test]
    fn target_construction() {
        let a = shift_to_target(&[0.2, 0.8]).unwrap();
        assert_eq!(a.to_rows(), vec![vec![0.2, 0.8], vec![0.2, 0.8]]);
        assert!(close(&a.apply(&[0.5, 0.5]).unwrap(), &[0.2, 0.8], 1e-15));

        let point = shift_to_target(&[1.0, 0.0, 0.0]).unwrap();
        for p in [[0.0, 0.0, 1.0], [0.3, 0.3, 0.4]] {
            assert!(close(&point.apply(&p).unwrap(), &[1.0, 0.0, 0.0], 1e-15));
        }

        let p = [0.25, 0.5, 0.25];
        let fixed = shift_to_target(&p).unwrap();
        assert!(close(&fixed.apply(&p).unwrap(), &p, 1e-15));

        assert!(matches!(shift_to_target(&[0.5, 0.6]), Err(ShiftError::NotNormalized { .. })));
    }

    #[test]
    fn dimension_mismatch() {
        let a = identity_shift(2).unwrap();
        assert_eq!(
            a.apply(&[1.0, 0.0, 0.0]),
            Err(ShiftError::SizeMismatch { expected: 2, actual: 3 })
        );
    }

    #[test]
    fn construction_rejects_bad_rows() {
        assert!(matches!(
            ShiftMatrix::from_rows(&[vec![0.5, 0.5], vec![0.5]]),
            Err(ShiftError::NotSquare { row: 1, .. })
        ));
        assert!(matches!(
            ShiftMatrix::from_rows(&[vec![0.5, 0.5], vec![0.5, 0.5 + 1e-10]]),
            Err(ShiftError::RowNotStochastic { row: 1, .. })
        ));
        assert!(matches!(
            ShiftMatrix::from_rows(&[vec![1.5, -0.5], vec![0.5, 0.5]]),
            Err(ShiftError::EntryOutOfRange { .. })
        ));
    }

    #[test]
    fn tiger_sensor_cpt_shift() {
        let tiger = fixtures::tiger();
        let z = tiger.variable_index("Z").unwrap();
        let degraded = fixtures::degraded_sensor();
        let shifted = shifted_cpt(tiger.conditional_table(z, 0), degraded.shift_for("Z").unwrap()).unwrap();
        assert!(close(shifted.distribution(0), &[0.64, 0.36], 1e-12));
        assert!(close(shifted.distribution(1), &[0.36, 0.64], 1e-12));
    }

    #[test]
    fn uniform_columns_are_fixed_by_doubly_stochastic_shift() {
        let tiger = fixtures::tiger();
        let z = tiger.variable_index("Z").unwrap();
        let open = tiger.action_index("open-left").unwrap();
        let cpt = tiger.conditional_table(z, open);
        let shifted = shifted_cpt(cpt, fixtures::degraded_sensor().shift_for("Z").unwrap()).unwrap();
        for d in shifted.distributions() {
            assert!(close(d, &[0.5, 0.5], 1e-15));
        }
    }

    #[test]
    fn kernel_equality() {
        let coin = fixtures::coin();
        let set = DomainSet::catalog(&coin);
        assert_eq!(set.names(), ["base", "keep-heads", "swap-tails"]);
        assert!(kernels_equal(&coin, &set[1], &set[2], 1e-12).unwrap());
        assert!(!kernels_equal(&coin, &set[0], &set[1], 1e-12).unwrap());
        let base = DomainSpec::identity("base");
        assert!(kernels_equal(&coin, &base, &base, 0.0).unwrap());

        let tiger = fixtures::tiger();
        assert!(!kernels_equal(&tiger, &base, &fixtures::degraded_sensor(), 1e-6).unwrap());
    }

    #[test]
    fn domain_set_selection() {
        let tiger = fixtures::tiger();
        let all = DomainSet::select(&tiger, "all").unwrap();
        assert_eq!(all.names(), ["base", "degraded"]);
        assert!(all.contains_identity());
        let only = DomainSet::select(&tiger, "degraded").unwrap();
        assert!(!only.contains_identity());
        assert_eq!(
            DomainSet::select(&tiger, "nope"),
            Err(ShiftError::UnknownDomain("nope".into()))
        );
        assert_eq!(DomainSet::new(&tiger, vec![]), Err(ShiftError::EmptyDomainSet));
        assert!(matches!(
            DomainSet::select(&tiger, "base,base"),
            Err(ShiftError::DuplicateDomain(_))
        ));
        let wrong = DomainSpec::identity("w").with_shift("H", identity_shift(3).unwrap());
        assert!(matches!(
            DomainSet::new(&tiger, vec![wrong]),
            Err(ShiftError::BindingSize { .. })
        ));
    }

    fn simplex(n: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.001f64..1.0, n).prop_map(|w| {
            let s: f64 = w.iter().sum();
            w.into_iter().map(|x| x / s).collect()
        })
    }

    fn stochastic(n: usize) -> impl Strategy<Value = ShiftMatrix> {
        prop::collection::vec(simplex(n), n).prop_map(move |rows| {
            let mut entries: Vec<f64> = rows.into_iter().flatten().collect();
            entries.iter_mut().for_each(|e| *e = e.min(1.0));
            ShiftMatrix::checked(n, entries, ARITHMETIC_TOLERANCE).unwrap()
        })
    }

    fn matrix_and_vector() -> impl Strategy<Value = (ShiftMatrix, Vec<f64>)> {
        (1usize..7).prop_flat_map(|n| (stochastic(n), simplex(n)))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn apply_stays_on_simplex((a, p) in matrix_and_vector()) {
            let out = a.apply(&p).unwrap();
            prop_assert!(out.iter().all(|&x| x >= 0.0));
            prop_assert!((out.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }
    }

    proptest! {
        #[test]
        fn composition_is_row_stochastic(
            (a, b) in (1usize..7).prop_flat_map(|n| (stochastic(n), stochastic(n)))
        ) {
            let c = a.then(&b).unwrap();
            for i in 0..c.size() {
                prop_assert!((c.row(i).iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            }
        }

        #[test]
        fn target_is_reached_from_any_start(
            (start, target) in (2usize..7).prop_flat_map(|n| (simplex(n), simplex(n)))
        ) {
            let out = shift_to_target(&target).unwrap().apply(&start).unwrap();
            prop_assert!(close(&out, &target, 1e-12));
        }
    }
}
