//! Bidder valuations over bundles of items.
//!
//! Every class is normalized (`v(∅) = 0`) and monotone. Single-good games use
//! one-item additive valuations, see [`Valuation::scalar`].

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{input, Error, Result};

/// Largest item count accepted by [`ItemSet`].
pub const MAX_ITEMS: usize = 32;
/// Largest item count for explicit value tables.
pub const MAX_TABLE_ITEMS: usize = 12;
/// Largest item count for the permutation-based XOS conversion (`m!` clauses).
pub const MAX_XOS_CONVERSION_ITEMS: usize = 6;

const TOL: f64 = 1e-12;

/// A bundle of item indices, stored as a bit mask.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default, PartialOrd, Ord)]
pub struct ItemSet(u32);

impl ItemSet {
    pub const EMPTY: ItemSet = ItemSet(0);

    pub fn from_bits(bits: u32) -> Self {
        ItemSet(bits)
    }

    pub fn bits(self) -> u32 {
        self.0
    }

    pub fn singleton(item: usize) -> Self {
        assert!(item < MAX_ITEMS, "item index {item} out of range");
        ItemSet(1 << item)
    }

    /// All items `0..m`.
    pub fn full(m: usize) -> Self {
        assert!(m <= MAX_ITEMS, "too many items: {m}");
        if m == MAX_ITEMS {
            ItemSet(u32::MAX)
        } else {
            ItemSet((1u32 << m) - 1)
        }
    }

    /// Builds a set from indices, rejecting duplicates and indices `>= m`.
    pub fn from_items(items: &[usize], m: usize) -> Result<Self> {
        if m > MAX_ITEMS {
            return input(format!("at most {MAX_ITEMS} items are supported, got {m}"));
        }
        let mut bits = 0u32;
        for &j in items {
            if j >= m {
                return input(format!("item index {j} out of range for {m} items"));
            }
            if bits & (1 << j) != 0 {
                return input(format!("duplicate item index {j}"));
            }
            bits |= 1 << j;
        }
        Ok(ItemSet(bits))
    }

    pub fn contains(self, item: usize) -> bool {
        item < MAX_ITEMS && self.0 & (1 << item) != 0
    }

    pub fn with(self, item: usize) -> Self {
        ItemSet(self.0 | (1 << item))
    }

    pub fn without(self, item: usize) -> Self {
        ItemSet(self.0 & !(1 << item))
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn is_subset_of(self, other: ItemSet) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn union(self, other: ItemSet) -> Self {
        ItemSet(self.0 | other.0)
    }

    pub fn intersection(self, other: ItemSet) -> Self {
        ItemSet(self.0 & other.0)
    }

    /// True when every member is `< m`.
    pub fn fits(self, m: usize) -> bool {
        self.is_subset_of(ItemSet::full(m))
    }

    pub fn iter(self) -> impl Iterator<Item = usize> {
        let mut bits = self.0;
        std::iter::from_fn(move || {
            if bits == 0 {
                return None;
            }
            let j = bits.trailing_zeros() as usize;
            bits &= bits - 1;
            Some(j)
        })
    }

    /// Every subset of `0..m`, in increasing bit order.
    pub fn all(m: usize) -> impl Iterator<Item = ItemSet> {
        assert!(m < MAX_ITEMS, "cannot enumerate subsets of {m} items");
        (0u32..(1u32 << m)).map(ItemSet)
    }

    /// Every subset of `self` (including `∅` and `self`).
    pub fn subsets(self) -> impl Iterator<Item = ItemSet> {
        let full = self.0;
        let mut next = Some(0u32);
        std::iter::from_fn(move || {
            let cur = next?;
            next = if cur == full {
                None
            } else {
                Some((cur.wrapping_sub(full)) & full)
            };
            Some(ItemSet(cur))
        })
    }
}

impl fmt::Debug for ItemSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter()).finish()
    }
}

impl Serialize for ItemSet {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_seq(self.iter())
    }
}

impl<'de> Deserialize<'de> for ItemSet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let items = Vec::<usize>::deserialize(d)?;
        ItemSet::from_items(&items, MAX_ITEMS).map_err(serde::de::Error::custom)
    }
}

/// A set function over items `0..m`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "class", rename_all = "snake_case", try_from = "ValuationRepr")]
pub enum Valuation {
    Additive {
        weights: Vec<f64>,
    },
    UnitDemand {
        item_values: Vec<f64>,
    },
    /// Pointwise maximum of additive clauses; every clause has one weight per item.
    Xos {
        clauses: Vec<Vec<f64>>,
    },
    SingleMinded {
        items: usize,
        bundle: ItemSet,
        worth: f64,
    },
    /// Explicit value per subset, indexed by the subset's bit mask.
    Table {
        items: usize,
        values: Vec<f64>,
    },
}

#[derive(Deserialize)]
#[serde(tag = "class", rename_all = "snake_case", deny_unknown_fields)]
enum ValuationRepr {
    Additive { weights: Vec<f64> },
    UnitDemand { item_values: Vec<f64> },
    Xos { clauses: Vec<Vec<f64>> },
    SingleMinded { items: usize, bundle: ItemSet, worth: f64 },
    Table { items: usize, values: Vec<f64> },
}

impl TryFrom<ValuationRepr> for Valuation {
    type Error = Error;

    fn try_from(r: ValuationRepr) -> Result<Self> {
        let v = match r {
            ValuationRepr::Additive { weights } => Valuation::Additive { weights },
            ValuationRepr::UnitDemand { item_values } => Valuation::UnitDemand { item_values },
            ValuationRepr::Xos { clauses } => Valuation::Xos { clauses },
            ValuationRepr::SingleMinded {
                items,
                bundle,
                worth,
            } => Valuation::SingleMinded {
                items,
                bundle,
                worth,
            },
            ValuationRepr::Table { items, values } => Valuation::Table { items, values },
        };
        v.validate()?;
        Ok(v)
    }
}

fn check_nonneg(xs: &[f64], what: &str) -> Result<()> {
    match xs.iter().position(|x| !x.is_finite() || *x < 0.0) {
        Some(k) => input(format!("{what}[{k}] = {} must be finite and >= 0", xs[k])),
        None => Ok(()),
    }
}

/// A witness that decreasing marginal values fail: with `small ⊆ large` and
/// `item ∉ large`, adding `item` to `large` is worth more than adding it to `small`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MarginalViolation {
    pub small: ItemSet,
    pub large: ItemSet,
    pub item: usize,
}

impl Valuation {
    /// One-item valuation used by the single-good formats.
    pub fn scalar(value: f64) -> Self {
        Valuation::Additive {
            weights: vec![value],
        }
    }

    pub fn additive(weights: Vec<f64>) -> Result<Self> {
        let v = Valuation::Additive { weights };
        v.validate()?;
        Ok(v)
    }

    pub fn unit_demand(item_values: Vec<f64>) -> Result<Self> {
        let v = Valuation::UnitDemand { item_values };
        v.validate()?;
        Ok(v)
    }

    pub fn xos(clauses: Vec<Vec<f64>>) -> Result<Self> {
        let v = Valuation::Xos { clauses };
        v.validate()?;
        Ok(v)
    }

    pub fn single_minded(items: usize, bundle: ItemSet, worth: f64) -> Result<Self> {
        let v = Valuation::SingleMinded {
            items,
            bundle,
            worth,
        };
        v.validate()?;
        Ok(v)
    }

    pub fn table(items: usize, values: Vec<f64>) -> Result<Self> {
        let v = Valuation::Table { items, values };
        v.validate()?;
        Ok(v)
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.item_count();
        if m == 0 || m > MAX_ITEMS {
            return input(format!("item count must be in 1..={MAX_ITEMS}, got {m}"));
        }
        match self {
            Valuation::Additive { weights } => check_nonneg(weights, "weights"),
            Valuation::UnitDemand { item_values } => check_nonneg(item_values, "item_values"),
            Valuation::Xos { clauses } => {
                if clauses.is_empty() {
                    return input("XOS valuation needs at least one clause");
                }
                for (l, c) in clauses.iter().enumerate() {
                    if c.len() != m {
                        return input(format!("clause {l} has {} weights, expected {m}", c.len()));
                    }
                    check_nonneg(c, &format!("clauses[{l}]"))?;
                }
                Ok(())
            }
            Valuation::SingleMinded { items, bundle, worth } => {
                if bundle.is_empty() || !bundle.fits(*items) {
                    return input(format!("bundle {bundle:?} must be nonempty and within {items} items"));
                }
                check_nonneg(&[*worth], "worth")
            }
            Valuation::Table { items, values } => {
                if *items > MAX_TABLE_ITEMS {
                    return input(format!("tables support at most {MAX_TABLE_ITEMS} items, got {items}"));
                }
                if values.len() != 1 << items {
                    return input(format!("table for {items} items needs {} values, got {}", 1 << items, values.len()));
                }
                check_nonneg(values, "values")?;
                if values[0] != 0.0 {
                    return input("table value of the empty set must be 0");
                }
                for s in ItemSet::all(*items) {
                    for j in (0..*items).filter(|&j| !s.contains(j)) {
                        let t = s.with(j);
                        if values[t.bits() as usize] < values[s.bits() as usize] - TOL {
                            return input(format!("table is not monotone: v({t:?}) < v({s:?})"));
                        }
                    }
                }
                Ok(())
            }
        }
    }

    pub fn item_count(&self) -> usize {
        match self {
            Valuation::Additive { weights } => weights.len(),
            Valuation::UnitDemand { item_values } => item_values.len(),
            Valuation::Xos { clauses } => clauses.first().map_or(0, Vec::len),
            Valuation::SingleMinded { items, .. } | Valuation::Table { items, .. } => *items,
        }
    }

    /// Value of bundle `s`.
    pub fn value(&self, s: ItemSet) -> Result<f64> {
        let m = self.item_count();
        if !s.fits(m) {
            return input(format!("bundle {s:?} out of range for {m} items"));
        }
        Ok(self.eval(s))
    }

    /// Value of a bundle already known to fit the item count.
    pub(crate) fn eval(&self, s: ItemSet) -> f64 {
        match self {
            Valuation::Additive { weights } => s.iter().map(|j| weights[j]).sum(),
            Valuation::UnitDemand { item_values } => {
                s.iter().map(|j| item_values[j]).fold(0.0, f64::max)
            }
            Valuation::Xos { clauses } => clauses
                .iter()
                .map(|c| clause_sum(c, s))
                .fold(0.0, f64::max),
            Valuation::SingleMinded { bundle, worth, .. } => {
                if bundle.is_subset_of(s) {
                    *worth
                } else {
                    0.0
                }
            }
            Valuation::Table { values, .. } => values[s.bits() as usize],
        }
    }

    /// Value of the single item `j`, `v({j})`.
    pub fn item_value(&self, j: usize) -> f64 {
        self.eval(ItemSet::singleton(j))
    }

    /// Largest single-item value; the natural bid cap.
    pub fn max_item_value(&self) -> f64 {
        (0..self.item_count()).map(|j| self.item_value(j)).fold(0.0, f64::max)
    }

    /// The value of a one-item valuation.
    pub fn scalar_value(&self) -> Result<f64> {
        if self.item_count() != 1 {
            return input(format!("expected a single-item valuation, got {} items", self.item_count()));
        }
        Ok(self.eval(ItemSet::singleton(0)))
    }

    pub fn is_xos_class(&self) -> bool {
        matches!(self, Valuation::Additive { .. } | Valuation::UnitDemand { .. } | Valuation::Xos { .. })
    }

    /// Same set function as an explicit table.
    pub fn to_table(&self) -> Result<Valuation> {
        let m = self.item_count();
        if m > MAX_TABLE_ITEMS {
            return input(format!("cannot tabulate {m} items (max {MAX_TABLE_ITEMS})"));
        }
        let values = ItemSet::all(m).map(|s| self.eval(s)).collect();
        Ok(Valuation::Table { items: m, values })
    }

    /// First violation of decreasing marginal values found by exhaustive
    /// search over `S ⊆ T`, `j ∉ T`; `None` if the function is submodular.
    pub fn submodularity_violation(&self) -> Result<Option<MarginalViolation>> {
        let m = self.item_count();
        if m > MAX_TABLE_ITEMS {
            return input(format!("exhaustive submodularity check limited to {MAX_TABLE_ITEMS} items"));
        }
        let scale = 1.0 + ItemSet::all(m).map(|s| self.eval(s)).fold(0.0, f64::max);
        for large in ItemSet::all(m) {
            for item in (0..m).filter(|&j| !large.contains(j)) {
                let big_gain = self.eval(large.with(item)) - self.eval(large);
                for small in large.subsets() {
                    let small_gain = self.eval(small.with(item)) - self.eval(small);
                    if big_gain > small_gain + TOL * scale {
                        return Ok(Some(MarginalViolation { small, large, item }));
                    }
                }
            }
        }
        Ok(None)
    }

    pub fn is_submodular(&self) -> Result<bool> {
        Ok(self.submodularity_violation()?.is_none())
    }

    /// Additive clauses whose pointwise maximum is this valuation.
    ///
    /// Additive valuations give one clause, unit-demand valuations one
    /// singleton clause per item, tables go through [`submodular_to_xos`].
    /// Single-minded valuations have complements and are rejected.
    pub fn to_xos(&self) -> Result<Valuation> {
        match self {
            Valuation::Additive { weights } => Ok(Valuation::Xos {
                clauses: vec![weights.clone()],
            }),
            Valuation::UnitDemand { item_values } => {
                let m = item_values.len();
                let clauses = (0..m)
                    .map(|l| (0..m).map(|j| if j == l { item_values[j] } else { 0.0 }).collect())
                    .collect();
                Ok(Valuation::Xos { clauses })
            }
            Valuation::Xos { .. } => Ok(self.clone()),
            Valuation::Table { .. } => submodular_to_xos(self),
            Valuation::SingleMinded { .. } => {
                input("single-minded valuations are not complement-free")
            }
        }
    }

    pub fn clauses(&self) -> Option<&[Vec<f64>]> {
        match self {
            Valuation::Xos { clauses } => Some(clauses),
            _ => None,
        }
    }

    /// Index of the clause attaining the value of `s`; lowest index wins ties.
    pub fn maximizing_clause(&self, s: ItemSet) -> Result<usize> {
        let Some(clauses) = self.clauses() else {
            return input("maximizing_clause needs an XOS valuation");
        };
        if !s.fits(self.item_count()) {
            return input(format!("bundle {s:?} out of range"));
        }
        let sums: Vec<f64> = clauses.iter().map(|c| clause_sum(c, s)).collect();
        let best = sums.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let tol = TOL * (1.0 + best.abs());
        Ok(sums.iter().position(|&x| x >= best - tol).unwrap_or(0))
    }

    /// Multiplies every value by `t`.
    pub fn scaled(&self, t: f64) -> Valuation {
        let scale = |xs: &[f64]| xs.iter().map(|x| x * t).collect::<Vec<_>>();
        match self {
            Valuation::Additive { weights } => Valuation::Additive { weights: scale(weights) },
            Valuation::UnitDemand { item_values } => Valuation::UnitDemand {
                item_values: scale(item_values),
            },
            Valuation::Xos { clauses } => Valuation::Xos {
                clauses: clauses.iter().map(|c| scale(c)).collect(),
            },
            Valuation::SingleMinded { items, bundle, worth } => Valuation::SingleMinded {
                items: *items,
                bundle: *bundle,
                worth: worth * t,
            },
            Valuation::Table { items, values } => Valuation::Table {
                items: *items,
                values: scale(values),
            },
        }
    }
}

pub(crate) fn clause_sum(weights: &[f64], s: ItemSet) -> f64 {
    s.iter().map(|j| weights[j]).sum()
}

/// Converts a monotone submodular set function into XOS form with one
/// additive clause per item ordering; clause `π` gives item `j` its marginal
/// value over the items preceding it in `π`.
pub fn submodular_to_xos(f: &Valuation) -> Result<Valuation> {
    let m = f.item_count();
    if m > MAX_XOS_CONVERSION_ITEMS {
        return input(format!(
            "XOS conversion enumerates m! orderings; at most {MAX_XOS_CONVERSION_ITEMS} items, got {m}"
        ));
    }
    let table = f.to_table()?;
    table.validate()?;
    if let Some(MarginalViolation { small, large, item }) = table.submodularity_violation()? {
        return Err(Error::NotSubmodular { small, large, item });
    }
    let mut order: Vec<usize> = (0..m).collect();
    let mut clauses = Vec::new();
    loop {
        let mut weights = vec![0.0; m];
        let mut prefix = ItemSet::EMPTY;
        for &j in &order {
            weights[j] = table.eval(prefix.with(j)) - table.eval(prefix);
            prefix = prefix.with(j);
        }
        clauses.push(weights);
        if !next_permutation(&mut order) {
            break;
        }
    }
    Ok(Valuation::Xos { clauses })
}

fn next_permutation(xs: &mut [usize]) -> bool {
    let Some(i) = xs.windows(2).rposition(|w| w[0] < w[1]) else {
        return false;
    };
    let j = xs.iter().rposition(|&x| x > xs[i]).expect("pivot has a successor");
    xs.swap(i, j);
    xs[i + 1..].reverse();
    true
}
