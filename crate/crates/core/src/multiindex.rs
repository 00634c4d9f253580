//! Multi-indices, structured index sets and intrinsic weights.
//!
//! A [`MultiIndex`] is a finitely supported exponent sequence indexed by
//! 1-based dimensions. An [`IndexSet`] is a finite, duplicate-free
//! collection of multi-indices kept in the canonical enumeration order:
//! total order `‖ν‖₁` ascending, ties broken by descending lexicographic
//! comparison of the dense exponent vectors (so `e_1` precedes `e_2`, and
//! `2e_1` precedes `e_1 + e_2`).

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Finitely supported multi-index. Stored as `(dimension, exponent)` pairs
/// sorted by dimension, with no zero exponents.
#[derive(Clone, PartialEq, Eq, Hash, Default)]
pub struct MultiIndex {
    entries: Vec<(u32, u32)>,
}

impl MultiIndex {
    pub fn zero() -> Self {
        Self::default()
    }

    /// `k · e_j` (1-based `j`).
    pub fn unit(j: u32, k: u32) -> Self {
        assert!(j >= 1, "dimensions are 1-based");
        if k == 0 {
            Self::zero()
        } else {
            Self { entries: vec![(j, k)] }
        }
    }

    /// Build from a dense exponent vector: `dense[0]` is the exponent of dimension 1.
    pub fn from_dense(dense: &[u32]) -> Self {
        let entries = dense
            .iter()
            .enumerate()
            .filter(|(_, &k)| k > 0)
            .map(|(i, &k)| (i as u32 + 1, k))
            .collect();
        Self { entries }
    }

    /// Build from sparse `(dimension, exponent)` pairs in any order.
    pub fn from_pairs<I: IntoIterator<Item = (u32, u32)>>(pairs: I) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (j, k) in pairs {
            if j == 0 {
                return Err(Error::domain("multi-index dimensions are 1-based"));
            }
            if map.insert(j, k).is_some() {
                return Err(Error::domain(format!("dimension {j} given twice")));
            }
        }
        Ok(Self {
            entries: map.into_iter().filter(|&(_, k)| k > 0).collect(),
        })
    }

    pub fn is_zero(&self) -> bool {
        self.entries.is_empty()
    }

    /// Exponent in dimension `j` (1-based).
    pub fn get(&self, j: u32) -> u32 {
        match self.entries.binary_search_by_key(&j, |&(d, _)| d) {
            Ok(pos) => self.entries[pos].1,
            Err(_) => 0,
        }
    }

    /// Nonzero `(dimension, exponent)` pairs in increasing dimension.
    pub fn iter(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        self.entries.iter().copied()
    }

    pub fn support(&self) -> impl Iterator<Item = u32> + '_ {
        self.entries.iter().map(|&(j, _)| j)
    }

    pub fn support_len(&self) -> usize {
        self.entries.len()
    }

    /// `‖ν‖₁`.
    pub fn order(&self) -> u64 {
        self.entries.iter().map(|&(_, k)| k as u64).sum()
    }

    /// Largest active dimension, 0 for the zero index.
    pub fn max_dim(&self) -> u32 {
        self.entries.last().map_or(0, |&(j, _)| j)
    }

    pub fn to_dense(&self, dims: usize) -> Vec<u32> {
        let mut out = vec![0; dims];
        for &(j, k) in &self.entries {
            if (j as usize) <= dims {
                out[j as usize - 1] = k;
            }
        }
        out
    }

    /// `ν - e_j`, or `None` when `ν_j = 0`.
    pub fn decrement(&self, j: u32) -> Option<Self> {
        let pos = self.entries.binary_search_by_key(&j, |&(d, _)| d).ok()?;
        let mut entries = self.entries.clone();
        if entries[pos].1 == 1 {
            entries.remove(pos);
        } else {
            entries[pos].1 -= 1;
        }
        Some(Self { entries })
    }

    /// `ν + e_j`.
    pub fn increment(&self, j: u32) -> Self {
        assert!(j >= 1, "dimensions are 1-based");
        let mut entries = self.entries.clone();
        match entries.binary_search_by_key(&j, |&(d, _)| d) {
            Ok(pos) => entries[pos].1 += 1,
            Err(pos) => entries.insert(pos, (j, 1)),
        }
        Self { entries }
    }

    /// Componentwise `self ≤ other`.
    pub fn le(&self, other: &Self) -> bool {
        self.entries.iter().all(|&(j, k)| other.get(j) >= k)
    }

    /// `∏ (ν_k + 1)`, saturating.
    pub fn box_product(&self) -> u64 {
        self.entries
            .iter()
            .fold(1u64, |acc, &(_, k)| acc.saturating_mul(k as u64 + 1))
    }

    /// `u_ν² = ∏ (2ν_k + 1)`, exact.
    pub fn intrinsic_weight_sq(&self) -> u64 {
        self.entries
            .iter()
            .fold(1u64, |acc, &(_, k)| acc.saturating_mul(2 * k as u64 + 1))
    }

    /// `u_ν = ∏ √(2ν_k + 1)`, which is also `‖Ψ_ν‖_∞`.
    pub fn intrinsic_weight(&self) -> f64 {
        self.entries
            .iter()
            .map(|&(_, k)| ((2 * k + 1) as f64).sqrt())
            .product()
    }

    /// Descending lexicographic comparison of the dense vectors.
    fn dense_lex_desc(&self, other: &Self) -> Ordering {
        let (a, b) = (&self.entries, &other.entries);
        let (mut i, mut k) = (0, 0);
        loop {
            match (a.get(i), b.get(k)) {
                (None, None) => return Ordering::Equal,
                // `self` has a nonzero exponent where `other` is zero: self sorts first.
                (Some(_), None) => return Ordering::Less,
                (None, Some(_)) => return Ordering::Greater,
                (Some(&(ja, ea)), Some(&(jb, eb))) => match ja.cmp(&jb) {
                    Ordering::Less => return Ordering::Less,
                    Ordering::Greater => return Ordering::Greater,
                    Ordering::Equal => match eb.cmp(&ea) {
                        Ordering::Equal => {
                            i += 1;
                            k += 1;
                        }
                        ord => return ord,
                    },
                },
            }
        }
    }
}

impl Ord for MultiIndex {
    fn cmp(&self, other: &Self) -> Ordering {
        self.order()
            .cmp(&other.order())
            .then_with(|| self.dense_lex_desc(other))
    }
}

impl PartialOrd for MultiIndex {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Debug for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.entries.is_empty() {
            return write!(f, "0");
        }
        let parts: Vec<String> = self.entries.iter().map(|(j, k)| format!("{j}:{k}")).collect();
        write!(f, "{{{}}}", parts.join(","))
    }
}

impl Serialize for MultiIndex {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let map: BTreeMap<String, u32> = self.entries.iter().map(|&(j, k)| (j.to_string(), k)).collect();
        map.serialize(s)
    }
}

impl<'de> Deserialize<'de> for MultiIndex {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let map = BTreeMap::<String, u32>::deserialize(d)?;
        let mut pairs = Vec::with_capacity(map.len());
        for (key, k) in map {
            let j: u32 = key.parse().map_err(serde::de::Error::custom)?;
            pairs.push((j, k));
        }
        MultiIndex::from_pairs(pairs).map_err(serde::de::Error::custom)
    }
}

/// Positive weights aligned with an [`IndexSet`] enumeration.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightVector {
    values: Vec<f64>,
    /// Exact `u_ν²` when every squared weight is an integer.
    squares: Option<Vec<u64>>,
}

impl WeightVector {
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if let Some(bad) = values.iter().find(|&&u| !(u >= 1.0) || !u.is_finite()) {
            return Err(Error::domain(format!("weights must be finite and >= 1, got {bad}")));
        }
        Ok(Self { values, squares: None })
    }

    pub fn uniform(n: usize) -> Self {
        Self {
            values: vec![1.0; n],
            squares: Some(vec![1; n]),
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn exact_squares(&self) -> Option<&[u64]> {
        self.squares.as_deref()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn squared(&self, i: usize) -> f64 {
        match &self.squares {
            Some(sq) => sq[i] as f64,
            None => self.values[i] * self.values[i],
        }
    }
}

/// Finite set of multi-indices in canonical order.
#[derive(Clone)]
pub struct IndexSet {
    members: Vec<MultiIndex>,
    lookup: HashMap<MultiIndex, usize>,
    ambient_dim: usize,
}

impl IndexSet {
    /// Sorts into canonical order and drops duplicates.
    pub fn new<I: IntoIterator<Item = MultiIndex>>(indices: I) -> Self {
        let mut members: Vec<MultiIndex> = indices.into_iter().collect();
        members.sort();
        members.dedup();
        let ambient_dim = members.iter().map(|nu| nu.max_dim() as usize).max().unwrap_or(0);
        let lookup = members.iter().cloned().enumerate().map(|(i, nu)| (nu, i)).collect();
        Self {
            members,
            lookup,
            ambient_dim,
        }
    }

    /// Declare a larger ambient dimension than the largest active coordinate.
    pub fn with_ambient_dim(mut self, d: usize) -> Result<Self> {
        if d < self.ambient_dim {
            return Err(Error::dim(format!(
                "ambient dimension {d} below largest active coordinate {}",
                self.ambient_dim
            )));
        }
        self.ambient_dim = d;
        Ok(self)
    }

    pub fn singleton_zero() -> Self {
        Self::new([MultiIndex::zero()])
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn ambient_dim(&self) -> usize {
        self.ambient_dim
    }

    pub fn iter(&self) -> std::slice::Iter<'_, MultiIndex> {
        self.members.iter()
    }

    pub fn members(&self) -> &[MultiIndex] {
        &self.members
    }

    pub fn get(&self, i: usize) -> &MultiIndex {
        &self.members[i]
    }

    pub fn position(&self, nu: &MultiIndex) -> Option<usize> {
        self.lookup.get(nu).copied()
    }

    pub fn contains(&self, nu: &MultiIndex) -> bool {
        self.lookup.contains_key(nu)
    }

    pub fn is_subset_of(&self, other: &IndexSet) -> bool {
        self.members.iter().all(|nu| other.contains(nu))
    }

    /// Subset selected by positions, re-sorted canonically.
    pub fn select(&self, positions: &[usize]) -> IndexSet {
        IndexSet::new(positions.iter().map(|&i| self.members[i].clone()))
            .with_ambient_dim(self.ambient_dim)
            .expect("subset cannot raise the ambient dimension")
    }

    /// Downward closed: every `μ ≤ ν` with `ν ∈ S` is in `S`. Checking the
    /// immediate predecessors `ν - e_j` suffices by induction.
    pub fn is_lower(&self) -> bool {
        self.members.iter().all(|nu| {
            nu.support()
                .all(|j| nu.decrement(j).is_some_and(|mu| self.contains(&mu)))
        })
    }

    /// Lower, and `e_j ∈ S` forces `e_1, …, e_j ∈ S`.
    pub fn is_anchored(&self) -> bool {
        if !self.is_lower() {
            return false;
        }
        self.members.iter().all(|nu| {
            if nu.support_len() == 1 && nu.order() == 1 {
                let j = nu.max_dim();
                (1..j).all(|i| self.contains(&MultiIndex::unit(i, 1)))
            } else {
                true
            }
        })
    }

    /// `m(S) = max ‖ν‖₁`.
    pub fn max_order(&self) -> Result<u64> {
        self.members.iter().map(MultiIndex::order).max().ok_or(Error::EmptySet)
    }

    /// Largest single-coordinate exponent.
    pub fn max_degree(&self) -> u32 {
        self.members
            .iter()
            .flat_map(|nu| nu.iter().map(|(_, k)| k))
            .max()
            .unwrap_or(0)
    }

    /// `u_ν = ∏ √(2ν_k+1)` aligned with the enumeration.
    pub fn intrinsic_weights(&self) -> WeightVector {
        WeightVector {
            values: self.members.iter().map(MultiIndex::intrinsic_weight).collect(),
            squares: Some(self.members.iter().map(MultiIndex::intrinsic_weight_sq).collect()),
        }
    }

    /// `|S|_u = Σ u_ν²`.
    pub fn weighted_cardinality(&self, u: &WeightVector) -> Result<f64> {
        if u.len() != self.len() {
            return Err(Error::dim(format!(
                "weight vector of length {} for a set of size {}",
                u.len(),
                self.len()
            )));
        }
        Ok(match self.weighted_cardinality_exact(u)? {
            Some(exact) => exact as f64,
            None => (0..u.len()).map(|i| u.squared(i)).sum(),
        })
    }

    /// Exact integer `|S|_u` when the weights carry exact squares.
    pub fn weighted_cardinality_exact(&self, u: &WeightVector) -> Result<Option<u128>> {
        if u.len() != self.len() {
            return Err(Error::dim("weight vector not aligned with index set"));
        }
        Ok(u.exact_squares().map(|sq| sq.iter().map(|&x| x as u128).sum()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.members).expect("multi-index serialization is infallible")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let members: Vec<MultiIndex> = serde_json::from_str(s)?;
        Ok(Self::new(members))
    }

    /// SHA-256 of the JSON serialization, hex encoded.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }
}

impl fmt::Debug for IndexSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("IndexSet")
            .field("len", &self.members.len())
            .field("ambient_dim", &self.ambient_dim)
            .field("members", &self.members)
            .finish()
    }
}

impl PartialEq for IndexSet {
    fn eq(&self, other: &Self) -> bool {
        self.members == other.members
    }
}

impl<'a> IntoIterator for &'a IndexSet {
    type Item = &'a MultiIndex;
    type IntoIter = std::slice::Iter<'a, MultiIndex>;
    fn into_iter(self) -> Self::IntoIter {
        self.members.iter()
    }
}

/// Implicit hyperbolic cross `{ν : ∏_{k≤dims}(ν_k+1) ≤ order, ν_k = 0 for k > dims}`.
///
/// With `dims = order - 1` this is `Λ^HCI_order`; restricting `dims` gives the
/// hyperbolic cross of the same order in fewer variables.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HyperbolicCross {
    pub order: u64,
    pub dims: u32,
}

impl HyperbolicCross {
    pub fn new(order: u64, dims: u32) -> Result<Self> {
        if order < 1 {
            return Err(Error::domain("hyperbolic cross order must be >= 1"));
        }
        Ok(Self { order, dims })
    }

    /// `Λ^HCI_n`, supported on the first `n - 1` dimensions.
    pub fn infinite_dim(n: u64) -> Result<Self> {
        Self::new(n, n.saturating_sub(1) as u32)
    }

    pub fn contains(&self, nu: &MultiIndex) -> bool {
        nu.max_dim() <= self.dims && nu.box_product() <= self.order
    }

    /// Visit every member as sparse pairs, without allocation per member.
    /// Enumeration is recursive with the remaining product budget, so the cost
    /// is proportional to the output size.
    pub fn for_each<F: FnMut(&[(u32, u32)])>(&self, mut f: F) {
        let mut stack: Vec<(u32, u32)> = Vec::with_capacity(64);
        f(&stack);
        Self::visit(1, self.dims, self.order, &mut stack, &mut f);
    }

    fn visit<F: FnMut(&[(u32, u32)])>(
        first: u32,
        dims: u32,
        budget: u64,
        stack: &mut Vec<(u32, u32)>,
        f: &mut F,
    ) {
        if budget < 2 {
            return;
        }
        for j in first..=dims {
            let mut k = 1u32;
            while (k as u64 + 1) <= budget {
                stack.push((j, k));
                f(stack);
                Self::visit(j + 1, dims, budget / (k as u64 + 1), stack, f);
                stack.pop();
                k += 1;
            }
        }
    }

    /// Exact cardinality by dynamic programming over (budget, dimensions).
    pub fn count(&self) -> u128 {
        let mut memo = HashMap::new();
        Self::count_rec(self.order, self.dims, &mut memo)
    }

    fn count_rec(budget: u64, dims: u32, memo: &mut HashMap<(u64, u32), u128>) -> u128 {
        if dims == 0 || budget < 2 {
            return 1;
        }
        if let Some(&c) = memo.get(&(budget, dims)) {
            return c;
        }
        let mut total = 0u128;
        let mut k = 0u64;
        while k < budget {
            total += Self::count_rec(budget / (k + 1), dims - 1, memo);
            k += 1;
        }
        memo.insert((budget, dims), total);
        total
    }

    /// Largest `‖ν‖₁`, attained by `(order - 1)e_1` since (a+1)(b+1) ≥ a+b+1.
    pub fn max_order(&self) -> u64 {
        if self.dims == 0 {
            return 0;
        }
        self.order - 1
    }

    pub fn materialize(&self) -> IndexSet {
        let mut members = Vec::new();
        self.for_each(|pairs| members.push(MultiIndex { entries: pairs.to_vec() }));
        IndexSet::new(members)
            .with_ambient_dim(self.dims as usize)
            .expect("members never exceed the declared dimensions")
    }

    /// Streaming lower/anchored check against the membership predicate, for
    /// orders whose materialization would not fit in memory.
    pub fn check_structure(&self) -> StructureReport {
        let mut report = StructureReport {
            count: 0,
            lower: true,
            anchored: true,
            max_order: 0,
        };
        let order = self.order;
        let dims = self.dims;
        let member = |pairs: &[(u32, u32)]| {
            pairs.last().is_none_or(|&(j, _)| j <= dims)
                && pairs.iter().fold(1u64, |acc, &(_, k)| acc.saturating_mul(k as u64 + 1)) <= order
        };
        let mut scratch: Vec<(u32, u32)> = Vec::with_capacity(64);
        self.for_each(|pairs| {
            report.count += 1;
            let ord: u64 = pairs.iter().map(|&(_, k)| k as u64).sum();
            report.max_order = report.max_order.max(ord);
            for i in 0..pairs.len() {
                scratch.clear();
                scratch.extend_from_slice(pairs);
                if scratch[i].1 == 1 {
                    scratch.remove(i);
                } else {
                    scratch[i].1 -= 1;
                }
                if !member(&scratch) {
                    report.lower = false;
                }
            }
            if pairs.len() == 1 && pairs[0].1 == 1 && pairs[0].0 > 1 && !member(&[(pairs[0].0 - 1, 1)]) {
                report.anchored = false;
            }
        });
        report.anchored &= report.lower;
        report
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StructureReport {
    pub count: u128,
    pub lower: bool,
    pub anchored: bool,
    pub max_order: u64,
}

/// Materialized `Λ^HCI_n`.
pub fn hyperbolic_cross(n: u64) -> Result<IndexSet> {
    Ok(HyperbolicCross::infinite_dim(n)?.materialize())
}

/// Minimal monotone majorant `b̃_i = sup_{j ≥ i} |b_j|` and its `ℓ^p` norm.
/// The tail beyond the given entries is taken to be zero.
pub fn monotone_majorant(b: &[f64], p: f64) -> Result<(Vec<f64>, f64)> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::domain(format!("p must lie in (0, 1], got {p}")));
    }
    let mut out = vec![0.0; b.len()];
    let mut running = 0.0f64;
    for (i, &v) in b.iter().enumerate().rev() {
        running = running.max(v.abs());
        out[i] = running;
    }
    let norm = out.iter().map(|v| v.powf(p)).sum::<f64>().powf(1.0 / p);
    Ok((out, norm))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(dense: &[&[u32]]) -> IndexSet {
        IndexSet::new(dense.iter().map(|d| MultiIndex::from_dense(d)))
    }

    #[test]
    fn lower_examples() {
        assert!(set(&[&[0]]).is_lower());
        assert!(set(&[&[0], &[1, 0], &[0, 1], &[1, 1]]).is_lower());
        assert!(!set(&[&[0], &[1, 1]]).is_lower());
    }

    #[test]
    fn anchored_examples() {
        assert!(set(&[&[0], &[1]]).is_anchored());
        assert!(!set(&[&[0], &[0, 1]]).is_anchored());
        assert!(set(&[&[0], &[1, 0], &[0, 1], &[1, 1]]).is_anchored());
    }

    #[test]
    fn canonical_order() {
        let s = set(&[&[1, 1], &[0, 1], &[2, 0], &[0], &[1, 0], &[0, 2]]);
        let expect: Vec<MultiIndex> = [&[0u32][..], &[1, 0], &[0, 1], &[2, 0], &[1, 1], &[0, 2]]
            .iter()
            .map(|d| MultiIndex::from_dense(d))
            .collect();
        assert_eq!(s.members(), &expect[..]);
    }

    #[test]
    fn hyperbolic_cross_small() {
        let s = hyperbolic_cross(1).unwrap();
        assert_eq!(s.len(), 1);
        assert!(s.get(0).is_zero());

        let s = hyperbolic_cross(4).unwrap();
        assert_eq!(s.len(), 13);
        assert_eq!(s.max_order().unwrap(), 3);
        assert!(s.is_lower() && s.is_anchored());
        assert_eq!(HyperbolicCross::infinite_dim(4).unwrap().count(), 13);
    }

    #[test]
    fn intrinsic_weight_values() {
        assert_eq!(MultiIndex::zero().intrinsic_weight(), 1.0);
        let nu = MultiIndex::from_dense(&[1, 2]);
        assert!((nu.intrinsic_weight() - 15f64.sqrt()).abs() < 1e-14);
        assert_eq!(nu.intrinsic_weight_sq(), 15);
        assert!((MultiIndex::unit(1, 3).intrinsic_weight() - 7f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn weighted_cardinality_line() {
        let s = IndexSet::new((0..3).map(|j| MultiIndex::unit(1, j)));
        let u = s.intrinsic_weights();
        assert_eq!(s.weighted_cardinality(&u).unwrap(), 9.0);
        assert_eq!(IndexSet::singleton_zero().weighted_cardinality(&WeightVector::uniform(1)).unwrap(), 1.0);
    }

    #[test]
    fn weighted_cardinality_misaligned() {
        let s = hyperbolic_cross(4).unwrap();
        assert!(s.weighted_cardinality(&WeightVector::uniform(3)).is_err());
    }

    #[test]
    fn max_order_empty_is_error() {
        assert!(matches!(IndexSet::new([]).max_order(), Err(Error::EmptySet)));
    }

    #[test]
    fn majorant_examples() {
        let (m, _) = monotone_majorant(&[1.0, 0.5, 0.25], 1.0).unwrap();
        assert_eq!(m, vec![1.0, 0.5, 0.25]);
        let (m, _) = monotone_majorant(&[0.0, 1.0, 0.5], 1.0).unwrap();
        assert_eq!(m, vec![1.0, 1.0, 0.5]);
        let (m, norm) = monotone_majorant(&[0.5, 1.0, 0.0], 1.0).unwrap();
        assert_eq!(m, vec![1.0, 1.0, 0.0]);
        assert_eq!(norm, 2.0);
        assert!(monotone_majorant(&[1.0], 1.5).is_err());
    }

    #[test]
    fn json_shape() {
        let s = set(&[&[0], &[0, 2]]);
        assert_eq!(s.to_json(), r#"[{},{"2":2}]"#);
        assert_eq!(IndexSet::from_json(&s.to_json()).unwrap(), s);
    }

    #[test]
    fn ambient_dim_declared() {
        let s = set(&[&[0], &[0, 1]]);
        assert_eq!(s.ambient_dim(), 2);
        assert!(s.clone().with_ambient_dim(1).is_err());
        assert_eq!(s.with_ambient_dim(5).unwrap().ambient_dim(), 5);
    }

    #[test]
    fn from_pairs_rejects_dim_zero() {
        assert!(MultiIndex::from_pairs([(0, 1)]).is_err());
        assert!(MultiIndex::from_pairs([(1, 1), (1, 2)]).is_err());
        assert_eq!(MultiIndex::from_pairs([(2, 0), (1, 3)]).unwrap(), MultiIndex::unit(1, 3));
    }
}
