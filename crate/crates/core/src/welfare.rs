//! Welfare-maximizing allocations.
//!
//! Every solver returns the same optimum when several exist: the owner vector
//! (item 0 first, "nobody" ordered before player 0) that is lexicographically
//! smallest among allocations within `1e-9·max(1, OPT)` of the optimum.

use crate::error::{input, Error, Result};
use crate::valuation::{ItemSet, Valuation};

/// `(n+1)^m` assignments above this are refused by the brute-force solver.
pub const MAX_ASSIGNMENTS: u64 = 10_000_000;

#[derive(Clone, Debug, PartialEq)]
pub struct OptResult {
    pub welfare: f64,
    pub bundles: Vec<ItemSet>,
}

impl OptResult {
    /// Owner of `item`, if any.
    pub fn owner(&self, item: usize) -> Option<usize> {
        self.bundles.iter().position(|b| b.contains(item))
    }

    /// Single-item winner.
    pub fn winner(&self) -> Option<usize> {
        self.owner(0)
    }

    fn from_owners(owners: &[Option<usize>], n: usize, welfare: f64) -> Self {
        let mut bundles = vec![ItemSet::EMPTY; n];
        for (j, o) in owners.iter().enumerate() {
            if let Some(i) = o {
                bundles[*i] = bundles[*i].with(j);
            }
        }
        OptResult { welfare, bundles }
    }
}

fn tolerance(w: f64) -> f64 {
    1e-9 * w.abs().max(1.0)
}

fn check_values(values: &[f64]) -> Result<()> {
    match values.iter().position(|x| !x.is_finite() || *x < 0.0) {
        Some(k) => input(format!("value {} of player {k} must be finite and >= 0", values[k])),
        None => Ok(()),
    }
}

/// Highest value wins; the lowest index among ties.
pub fn opt_single_item(values: &[f64]) -> Result<OptResult> {
    if values.is_empty() {
        return input("empty valuation profile");
    }
    check_values(values)?;
    let mut w = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[w] {
            w = i;
        }
    }
    Ok(OptResult::from_owners(&[Some(w)], values.len(), values[w]))
}

/// Maximum-weight assignment on a square matrix (Hungarian method with
/// potentials). Returns the column assigned to each row.
fn hungarian_max(w: &[Vec<f64>]) -> Vec<usize> {
    let n = w.len();
    let inf = f64::INFINITY;
    // 1-based arrays; column 0 is the virtual root
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = -w[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_to_col = vec![0; n];
    for j in 1..=n {
        if p[j] > 0 {
            row_to_col[p[j] - 1] = j - 1;
        }
    }
    row_to_col
}

/// Best matching value between the given rows and columns of `values`.
fn matching_value(values: &[Vec<f64>], rows: &[usize], cols: &[usize]) -> f64 {
    let k = rows.len().max(cols.len());
    if rows.is_empty() || cols.is_empty() {
        return 0.0;
    }
    let mut w = vec![vec![0.0; k]; k];
    for (a, &r) in rows.iter().enumerate() {
        for (b, &c) in cols.iter().enumerate() {
            w[a][b] = values[r][c];
        }
    }
    let assign = hungarian_max(&w);
    rows.iter()
        .enumerate()
        .filter(|&(a, _)| assign[a] < cols.len())
        .map(|(a, &r)| values[r][cols[assign[a]]])
        .sum()
}

/// Maximum-weight matching of unit-demand players (`values[i][j]`) to items.
pub fn opt_matching(values: &[Vec<f64>], items: usize) -> Result<OptResult> {
    let n = values.len();
    if n == 0 || items == 0 {
        return input("matching needs at least one player and one item");
    }
    for row in values {
        if row.len() != items {
            return input(format!("unit-demand row has {} values, expected {items}", row.len()));
        }
        check_values(row)?;
    }
    let all_rows: Vec<usize> = (0..n).collect();
    let all_cols: Vec<usize> = (0..items).collect();
    let best = matching_value(values, &all_rows, &all_cols);
    let tol = tolerance(best);

    // Fix owners item by item, keeping the smallest choice that still
    // completes to an optimum.
    let mut owners: Vec<Option<usize>> = Vec::with_capacity(items);
    let mut taken = vec![false; n];
    let mut fixed = 0.0;
    for j in 0..items {
        let rest: Vec<usize> = (j + 1..items).collect();
        let mut chosen = None;
        for cand in std::iter::once(None).chain((0..n).filter(|&i| !taken[i]).map(Some)) {
            let gain = cand.map_or(0.0, |i| values[i][j]);
            let free: Vec<usize> = (0..n).filter(|&i| !taken[i] && Some(i) != cand).collect();
            let total = fixed + gain + matching_value(values, &free, &rest);
            if total >= best - tol {
                chosen = Some(cand);
                fixed += gain;
                break;
            }
        }
        let cand = chosen.expect("an optimal completion always exists");
        if let Some(i) = cand {
            taken[i] = true;
        }
        owners.push(cand);
    }
    Ok(OptResult::from_owners(&owners, n, fixed))
}

fn check_profile(values: &[Valuation], items: usize) -> Result<()> {
    if values.is_empty() {
        return input("empty valuation profile");
    }
    if let Some(i) = values.iter().position(|v| v.item_count() != items) {
        return input(format!(
            "player {i} values {} items, expected {items}",
            values[i].item_count()
        ));
    }
    Ok(())
}

/// Exhaustive search over every assignment of items to players or to nobody.
pub fn opt_brute_force(values: &[Valuation], items: usize) -> Result<OptResult> {
    check_profile(values, items)?;
    let n = values.len();
    let radix = n as u64 + 1;
    let total = (0..items).try_fold(1u64, |acc, _| acc.checked_mul(radix));
    let total = match total {
        Some(t) if t <= MAX_ASSIGNMENTS => t,
        _ => {
            return Err(Error::Resource(format!(
                "{radix}^{items} assignments exceed the limit of {MAX_ASSIGNMENTS}"
            )))
        }
    };
    // digit 0 = nobody, d = player d−1; item 0 is the most significant digit
    let welfare_of = |code: u64, bundles: &mut Vec<ItemSet>| -> f64 {
        bundles.iter_mut().for_each(|b| *b = ItemSet::EMPTY);
        let mut c = code;
        for j in (0..items).rev() {
            let d = (c % radix) as usize;
            c /= radix;
            if d > 0 {
                bundles[d - 1] = bundles[d - 1].with(j);
            }
        }
        values.iter().zip(bundles.iter()).map(|(v, &b)| v.eval(b)).sum()
    };
    let mut bundles = vec![ItemSet::EMPTY; n];
    let mut best = f64::NEG_INFINITY;
    for code in 0..total {
        best = best.max(welfare_of(code, &mut bundles));
    }
    let tol = tolerance(best);
    for code in 0..total {
        let w = welfare_of(code, &mut bundles);
        if w >= best - tol {
            return Ok(OptResult { welfare: w, bundles });
        }
    }
    unreachable!("the maximum is attained")
}

fn additive_opt(values: &[Valuation], items: usize) -> OptResult {
    let owners: Vec<Option<usize>> = (0..items)
        .map(|j| {
            let mut best: Option<usize> = None;
            for (i, v) in values.iter().enumerate() {
                let w = v.item_value(j);
                if w > best.map_or(0.0, |b| values[b].item_value(j)) {
                    best = Some(i);
                }
            }
            best
        })
        .collect();
    let welfare = owners
        .iter()
        .enumerate()
        .filter_map(|(j, o)| o.map(|i| values[i].item_value(j)))
        .sum();
    OptResult::from_owners(&owners, values.len(), welfare)
}

/// OPT for any profile: single item, matching for unit-demand players,
/// per-item maxima for additive players, brute force otherwise.
pub fn opt_allocation(values: &[Valuation], items: usize) -> Result<OptResult> {
    check_profile(values, items)?;
    if items == 1 {
        let scalars: Vec<f64> = values.iter().map(|v| v.eval(ItemSet::singleton(0))).collect();
        return opt_single_item(&scalars);
    }
    if values.iter().all(|v| matches!(v, Valuation::Additive { .. })) {
        return Ok(additive_opt(values, items));
    }
    if values.iter().all(|v| matches!(v, Valuation::UnitDemand { .. })) {
        let rows: Vec<Vec<f64>> = values
            .iter()
            .map(|v| (0..items).map(|j| v.item_value(j)).collect())
            .collect();
        return opt_matching(&rows, items);
    }
    opt_brute_force(values, items)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use rand::Rng;

    fn ud(rows: &[Vec<f64>]) -> Vec<Valuation> {
        rows.iter().map(|r| Valuation::unit_demand(r.clone()).unwrap()).collect()
    }

    #[test]
    fn single_item_cases() {
        let r = opt_single_item(&[0.8, 1.0]).unwrap();
        assert_eq!((r.welfare, r.winner()), (1.0, Some(1)));
        let r = opt_single_item(&[0.01, 1.0]).unwrap();
        assert_eq!(r.welfare, 1.0);
        assert_eq!(opt_single_item(&[0.5, 0.5, 0.5]).unwrap().winner(), Some(0));
        assert_eq!(opt_single_item(&[0.0, 0.0]).unwrap().winner(), Some(0));
        assert!(opt_single_item(&[]).is_err());
    }

    #[test]
    fn matching_all_ones() {
        for n in 1..=6 {
            let r = opt_matching(&vec![vec![1.0; n]; n], n).unwrap();
            assert!((r.welfare - n as f64).abs() < 1e-12);
            for j in 0..n {
                assert_eq!(r.owner(j), Some(j));
            }
        }
    }

    #[test]
    fn matching_rectangular() {
        let r = opt_matching(&[vec![5.0, 1.0, 0.0]], 3).unwrap();
        assert_eq!(r.welfare, 5.0);
        assert_eq!(r.bundles, vec![ItemSet::singleton(0)]);
        let r = opt_matching(&[vec![3.0], vec![4.0], vec![1.0]], 1).unwrap();
        assert_eq!((r.welfare, r.winner()), (4.0, Some(1)));
    }

    fn perm_oracle(values: &[Vec<f64>]) -> f64 {
        // 3×3: all six bijections
        let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        perms
            .iter()
            .map(|p| (0..3).map(|i| values[i][p[i]]).sum::<f64>())
            .fold(f64::MIN, f64::max)
    }

    #[test]
    fn matching_matches_permutation_oracle() {
        let mut rng = seeded(11);
        for _ in 0..300 {
            let v: Vec<Vec<f64>> = (0..3).map(|_| (0..3).map(|_| rng.gen_range(0..10) as f64).collect()).collect();
            assert_eq!(opt_matching(&v, 3).unwrap().welfare, perm_oracle(&v));
        }
    }

    #[test]
    fn brute_force_cases() {
        let add = vec![
            Valuation::additive(vec![1.0, 4.0, 2.0]).unwrap(),
            Valuation::additive(vec![3.0, 2.0, 2.0]).unwrap(),
        ];
        let r = opt_brute_force(&add, 3).unwrap();
        assert_eq!(r.welfare, 9.0);
        assert_eq!(r.bundles, vec![ItemSet::from_bits(0b110), ItemSet::singleton(0)]);
        assert_eq!(opt_allocation(&add, 3).unwrap(), r);

        let sm = vec![
            Valuation::single_minded(2, ItemSet::full(2), 3.0).unwrap(),
            Valuation::additive(vec![2.0, 2.0]).unwrap(),
        ];
        let r = opt_allocation(&sm, 2).unwrap();
        assert_eq!(r.welfare, 4.0);
        assert_eq!(r.bundles, vec![ItemSet::EMPTY, ItemSet::full(2)]);
    }

    #[test]
    fn brute_force_resource_limit() {
        let v = vec![Valuation::additive(vec![1.0; 12]).unwrap(); 3];
        assert!(matches!(opt_brute_force(&v, 12), Err(Error::Resource(_))));
    }

    #[test]
    fn matching_agrees_with_brute_force() {
        let mut rng = seeded(5);
        for _ in 0..1000 {
            let n = rng.gen_range(1..=4);
            let m = rng.gen_range(1..=4);
            let rows: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..m).map(|_| rng.gen_range(0..6) as f64 * 0.5).collect())
                .collect();
            let a = opt_matching(&rows, m).unwrap();
            let b = opt_brute_force(&ud(&rows), m).unwrap();
            assert!((a.welfare - b.welfare).abs() < 1e-9, "{rows:?}");
            assert_eq!(a.bundles, b.bundles, "{rows:?}");
        }
    }

    #[test]
    fn scaling_covariance() {
        let mut rng = seeded(8);
        for _ in 0..100 {
            let rows: Vec<Vec<f64>> = (0..3).map(|_| (0..3).map(|_| rng.gen_range(0..5) as f64).collect()).collect();
            let t = rng.gen_range(1..8) as f64 * 0.25;
            let scaled: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|x| x * t).collect()).collect();
            let a = opt_allocation(&ud(&rows), 3).unwrap();
            let b = opt_allocation(&ud(&scaled), 3).unwrap();
            assert!((b.welfare - t * a.welfare).abs() < 1e-9);
            assert_eq!(a.bundles, b.bundles);
        }
    }

    #[test]
    fn welfare_equals_bundle_values() {
        let mut rng = seeded(2);
        for _ in 0..100 {
            let v: Vec<Valuation> = (0..3)
                .map(|_| Valuation::xos((0..2).map(|_| (0..3).map(|_| rng.gen::<f64>()).collect()).collect()).unwrap())
                .collect();
            let r = opt_allocation(&v, 3).unwrap();
            let direct: f64 = v.iter().zip(&r.bundles).map(|(v, &b)| v.eval(b)).sum();
            assert!((r.welfare - direct).abs() < 1e-12);
            for x in 0..3 {
                for y in x + 1..3 {
                    assert!(r.bundles[x].intersection(r.bundles[y]).is_empty());
                }
            }
        }
    }
}
