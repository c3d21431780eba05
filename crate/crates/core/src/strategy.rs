//! Bidding strategies: closed-form bid functions, a mixed one-item strategy
//! and tabulated grid strategies.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::auction::PlayerBid;
use crate::error::{input, Result};
use crate::rng::Rng;
use crate::valuation::Valuation;

const DOMAIN_TOL: f64 = 1e-12;

/// Deterministic value-to-bid maps, applied item by item.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "function", rename_all = "snake_case", deny_unknown_fields)]
pub enum BidFunction {
    /// `b = slope·v`.
    Linear { slope: f64 },
    /// `b = (4/3v)(1 − √(1 − 3v²/4))` on `[0, 1]`.
    VickreyWeak,
    /// `b = (4/3v)(√(1 + 3v²/4) − 1)` on `[0, 2]`.
    VickreyStrong,
    Truthful,
    Constant { bid: f64 },
}

impl BidFunction {
    pub fn bid(&self, v: f64) -> Result<f64> {
        match self {
            BidFunction::Linear { slope } => Ok(slope * v),
            BidFunction::Truthful => Ok(v),
            BidFunction::Constant { bid } => Ok(*bid),
            // Rationalized forms: v/(1 + √(1 ∓ 3v²/4)) equals the printed
            // expression and is finite at v = 0.
            BidFunction::VickreyWeak => {
                if !(0.0..=1.0 + DOMAIN_TOL).contains(&v) {
                    return input(format!("weak bidder's value {v} is outside [0, 1]"));
                }
                let mut r = 1.0 - 0.75 * v * v;
                if r < 0.0 && r > -DOMAIN_TOL {
                    r = 0.0;
                }
                Ok(v / (1.0 + r.sqrt()))
            }
            BidFunction::VickreyStrong => {
                if !(0.0..=2.0 + DOMAIN_TOL).contains(&v) {
                    return input(format!("strong bidder's value {v} is outside [0, 2]"));
                }
                Ok(v / (1.0 + (1.0 + 0.75 * v * v).sqrt()))
            }
        }
    }
}

/// Value-indexed table of bid distributions for single-good games.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridEntry {
    pub value: f64,
    pub bids: Vec<f64>,
    pub probs: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridStrategy {
    pub entries: Vec<GridEntry>,
}

impl GridStrategy {
    /// Pure strategy bidding `bids[k]` at `values[k]`.
    pub fn pure(values: &[f64], bids: &[f64]) -> Self {
        GridStrategy {
            entries: values
                .iter()
                .zip(bids)
                .map(|(&value, &b)| GridEntry {
                    value,
                    bids: vec![b],
                    probs: vec![1.0],
                })
                .collect(),
        }
    }

    fn entry(&self, v: f64) -> Result<&GridEntry> {
        match self.entries.iter().find(|e| (e.value - v).abs() <= 1e-9) {
            Some(e) => Ok(e),
            None => input(format!("grid strategy is undefined at value {v}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Strategy {
    ClosedForm {
        #[serde(flatten)]
        function: BidFunction,
    },
    /// Enters one of `items` items uniformly at random and bids `x` with
    /// CDF `F(x) = x/(1 − x)` on `[0, 1/2]`, regardless of value.
    RandomItem { items: usize },
    Grid(GridStrategy),
}

/// Inverse of `F(x) = x/(1 − x)`.
fn random_item_quantile(u: f64) -> f64 {
    u / (1.0 + u)
}

/// CDF of the bid in [`Strategy::RandomItem`].
pub fn random_item_cdf(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else if x >= 0.5 {
        1.0
    } else {
        x / (1.0 - x)
    }
}

impl Strategy {
    pub fn closed(function: BidFunction) -> Self {
        Strategy::ClosedForm { function }
    }

    pub fn is_pure(&self) -> bool {
        match self {
            Strategy::ClosedForm { .. } => true,
            Strategy::RandomItem { .. } => false,
            Strategy::Grid(g) => g.entries.iter().all(|e| e.bids.len() == 1),
        }
    }

    pub fn validate(&self, items: usize) -> Result<()> {
        match self {
            Strategy::RandomItem { items: k } if *k != items => {
                input(format!("random-item strategy over {k} items used in a {items}-item game"))
            }
            Strategy::Grid(g) => {
                if items != 1 {
                    return input("grid strategies are defined for single-good games only");
                }
                for e in &g.entries {
                    if e.bids.len() != e.probs.len() || e.bids.is_empty() {
                        return input(format!("grid entry at {} needs matching bids and probs", e.value));
                    }
                    if e.bids.iter().any(|b| !(b.is_finite() && *b >= 0.0)) {
                        return input(format!("grid entry at {} has a negative bid", e.value));
                    }
                    let total: f64 = e.probs.iter().sum();
                    if e.probs.iter().any(|p| *p < 0.0) || (total - 1.0).abs() > 1e-12 {
                        return input(format!("grid entry at {} probabilities must sum to 1", e.value));
                    }
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Deterministic weighted actions. Continuous mixtures are represented
    /// by `resolution` mid-quantile atoms per item.
    pub fn atoms(&self, v: &Valuation, items: usize, resolution: usize) -> Result<Vec<(PlayerBid, f64)>> {
        match self {
            Strategy::ClosedForm { function } => {
                let bids = (0..items)
                    .map(|j| function.bid(v.item_value(j)))
                    .collect::<Result<Vec<_>>>()?;
                Ok(vec![(PlayerBid::vector(bids), 1.0)])
            }
            Strategy::RandomItem { items: k } => {
                let w = 1.0 / (k * resolution) as f64;
                Ok((0..*k)
                    .flat_map(|j| {
                        (0..resolution).map(move |r| {
                            let u = (r as f64 + 0.5) / resolution as f64;
                            (PlayerBid::on_item(*k, j, random_item_quantile(u)), w)
                        })
                    })
                    .collect())
            }
            Strategy::Grid(g) => {
                let e = g.entry(v.item_value(0))?;
                Ok(e.bids
                    .iter()
                    .zip(&e.probs)
                    .filter(|(_, p)| **p > 0.0)
                    .map(|(&b, &p)| (PlayerBid::scalar(b), p))
                    .collect())
            }
        }
    }

    pub fn atom_count(&self, resolution: usize) -> Option<usize> {
        match self {
            Strategy::ClosedForm { .. } => Some(1),
            Strategy::RandomItem { items } => Some(items * resolution),
            Strategy::Grid(g) => g.entries.iter().map(|e| e.bids.len()).max(),
        }
    }

    pub fn sample(&self, v: &Valuation, items: usize, rng: &mut Rng) -> Result<PlayerBid> {
        match self {
            Strategy::ClosedForm { .. } => Ok(self.atoms(v, items, 1)?.remove(0).0),
            Strategy::RandomItem { items: k } => {
                let j = rng.gen_range(0..*k);
                let u: f64 = rng.gen();
                Ok(PlayerBid::on_item(*k, j, random_item_quantile(u)))
            }
            Strategy::Grid(g) => {
                let e = g.entry(v.item_value(0))?;
                let mut u: f64 = rng.gen();
                for (&b, &p) in e.bids.iter().zip(&e.probs) {
                    if u < p {
                        return Ok(PlayerBid::scalar(b));
                    }
                    u -= p;
                }
                Ok(PlayerBid::scalar(*e.bids.last().expect("nonempty entry")))
            }
        }
    }
}

/// `s(v) = (n − 1)v/n`, the symmetric equilibrium of the first-price auction
/// with `n` bidders and uniform values.
pub fn symmetric_uniform_fpa_bne(n: usize) -> Result<Strategy> {
    if n < 2 {
        return input(format!("symmetric equilibrium needs n >= 2, got {n}"));
    }
    Ok(Strategy::closed(BidFunction::Linear {
        slope: (n - 1) as f64 / n as f64,
    }))
}

/// Equilibrium of the two-bidder first-price auction with values
/// `U[0,1]` (weak) and `U[0,2]` (strong).
pub fn vickrey_asymmetric_bne() -> (Strategy, Strategy) {
    (
        Strategy::closed(BidFunction::VickreyWeak),
        Strategy::closed(BidFunction::VickreyStrong),
    )
}

/// Mixed equilibrium of the two-bidder, two-item first-price game with
/// unit-demand values of 1.
pub fn bad_example_mixed_strategy() -> Strategy {
    Strategy::RandomItem { items: 2 }
}
