//! Simultaneous composition of single-good auctions, proxy valuations and
//! composed deviation rules.

use serde::{Deserialize, Serialize};

use crate::auction::{product_grid, AuctionFormat, BidGrid, BidProfile, Mechanism, Outcome, Allocation, PlayerBid};
use crate::error::{input, Error, Result};
use crate::smoothness::{self, CaseSet, DeviationDist, DeviationRule, ProductDist, SmoothnessParams, SmoothnessReport, VerifyOptions};
use crate::valuation::{ItemSet, Valuation};
use crate::welfare::{self, OptResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SingleItemFormat {
    FirstPrice,
    SecondPrice,
    AllPay,
}

impl SingleItemFormat {
    pub fn format(self) -> AuctionFormat {
        match self {
            SingleItemFormat::FirstPrice => AuctionFormat::FirstPrice,
            SingleItemFormat::SecondPrice => AuctionFormat::SecondPrice,
            SingleItemFormat::AllPay => AuctionFormat::AllPay,
        }
    }
}

/// Item `j` is sold by `constituents[j]`; every player bids in every auction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComposedFormat {
    pub constituents: Vec<SingleItemFormat>,
}

pub fn compose(formats: &[AuctionFormat]) -> Result<ComposedFormat> {
    if formats.is_empty() || formats.len() > 32 {
        return input(format!("composition needs 1..=32 auctions, got {}", formats.len()));
    }
    let constituents = formats
        .iter()
        .map(|f| match f {
            AuctionFormat::FirstPrice => Ok(SingleItemFormat::FirstPrice),
            AuctionFormat::SecondPrice => Ok(SingleItemFormat::SecondPrice),
            AuctionFormat::AllPay => Ok(SingleItemFormat::AllPay),
            other => input(format!("{other:?} is not a single-item auction")),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ComposedFormat { constituents })
}

/// Winner of column `j` (lowest index on ties) and the price she pays.
fn column(bids: &BidProfile, j: usize) -> (usize, f64) {
    let mut w = 0;
    for i in 1..bids.players() {
        if bids.bid(i, j) > bids.bid(w, j) {
            w = i;
        }
    }
    let second = (0..bids.players())
        .filter(|&i| i != w)
        .map(|i| bids.bid(i, j))
        .fold(0.0, f64::max);
    (w, second)
}

impl ComposedFormat {
    pub fn validate(&self) -> Result<()> {
        if self.constituents.is_empty() || self.constituents.len() > 32 {
            return input("composition needs 1..=32 auctions");
        }
        Ok(())
    }
}

impl Mechanism for ComposedFormat {
    fn items(&self) -> usize {
        self.constituents.len()
    }

    fn check_profile(&self, bids: &BidProfile) -> Result<()> {
        if bids.items() != self.items() {
            return input(format!("profile has {} items, composition has {}", bids.items(), self.items()));
        }
        Ok(())
    }

    fn outcome(&self, bids: &BidProfile) -> Result<Outcome> {
        self.check_profile(bids)?;
        let n = bids.players();
        let mut bundles = vec![ItemSet::EMPTY; n];
        let mut payments = vec![0.0; n];
        for (j, c) in self.constituents.iter().enumerate() {
            let (w, second) = column(bids, j);
            bundles[w] = bundles[w].with(j);
            match c {
                SingleItemFormat::FirstPrice => payments[w] += bids.bid(w, j),
                SingleItemFormat::SecondPrice => payments[w] += second,
                SingleItemFormat::AllPay => {
                    for (i, p) in payments.iter_mut().enumerate() {
                        *p += bids.bid(i, j);
                    }
                }
            }
        }
        Ok(Outcome {
            allocation: Allocation::Bundles(bundles),
            payments,
        })
    }

    fn utility_with(&self, bids: &BidProfile, i: usize, action: &PlayerBid, v: &Valuation) -> f64 {
        let mut won = ItemSet::EMPTY;
        let mut paid = 0.0;
        for (j, c) in self.constituents.iter().enumerate() {
            let x = action.bids[j];
            let mut wins = true;
            let mut other = 0.0f64;
            for k in (0..bids.players()).filter(|&k| k != i) {
                let b = bids.bid(k, j);
                if b > x || (b == x && k < i) {
                    wins = false;
                }
                other = other.max(b);
            }
            if wins {
                won = won.with(j);
            }
            paid += match c {
                SingleItemFormat::FirstPrice if wins => x,
                SingleItemFormat::SecondPrice if wins => other,
                SingleItemFormat::AllPay => x,
                _ => 0.0,
            };
        }
        v.eval(won) - paid
    }

    fn winning_bid_sum(&self, bids: &BidProfile) -> Result<f64> {
        self.check_profile(bids)?;
        Ok((0..self.items()).map(|j| bids.bid(column(bids, j).0, j)).sum())
    }

    fn action_space(&self, grid: &BidGrid) -> Result<Vec<PlayerBid>> {
        product_grid(&grid.points(), self.items())
    }

    fn opt(&self, values: &[Valuation]) -> Result<OptResult> {
        welfare::opt_allocation(values, self.items())
    }

    fn constituent(&self, j: usize) -> Result<AuctionFormat> {
        match self.constituents.get(j) {
            Some(c) => Ok(c.format()),
            None => input(format!("item {j} out of range")),
        }
    }
}

/// Per player, the additive clause of her XOS representation that attains
/// the value of her bundle in `opt` (all zeros for an empty bundle).
pub fn proxy_profile(values: &[Valuation], opt: &OptResult) -> Result<Vec<Valuation>> {
    if values.len() != opt.bundles.len() {
        return input("allocation and profile sizes differ");
    }
    values
        .iter()
        .zip(&opt.bundles)
        .map(|(v, &bundle)| {
            if !v.is_xos_class() {
                return input("proxy valuations need XOS-class valuations");
            }
            let m = v.item_count();
            if bundle.is_empty() {
                return Valuation::additive(vec![0.0; m]);
            }
            let xos = v.to_xos()?;
            let clauses = xos.clauses().expect("to_xos returns clauses");
            let l = xos.maximizing_clause(bundle)?;
            Valuation::additive(clauses[l].clone())
        })
        .collect()
}

/// Applies `constituents[j]` to item `j` of the proxy profile, independently
/// across items. Each constituent sees only scalar proxy values.
pub fn composed_deviation(
    f: &dyn Mechanism,
    constituents: &[DeviationRule],
    values: &[Valuation],
    i: usize,
) -> Result<DeviationDist> {
    let m = f.items();
    if constituents.len() != m {
        return Err(Error::InvalidDeviation(format!(
            "{} constituent rules for {m} items",
            constituents.len()
        )));
    }
    if f.one_item_bids() {
        return Err(Error::InvalidDeviation(
            "composed deviations bid in every auction".into(),
        ));
    }
    let opt = f.opt(values)?;
    let proxy = proxy_profile(values, &opt)?;
    let mut bids = Vec::with_capacity(m);
    for (j, rule) in constituents.iter().enumerate() {
        let single = f.constituent(j)?;
        let scalars: Vec<Valuation> = proxy.iter().map(|p| Valuation::scalar(p.item_value(j))).collect();
        let d = rule.deviation(&single, &scalars, i)?;
        match d.components.as_slice() {
            [(p, _)] => bids.push(p.bids[0]),
            _ => {
                return Err(Error::InvalidDeviation(
                    "constituent rules must not be mixtures".into(),
                ))
            }
        }
    }
    Ok(DeviationDist::pure(ProductDist {
        bids,
        entered: ItemSet::full(m),
    }))
}

/// Smoothness check of a composition under the composed deviation rule.
pub fn verify_composed_smoothness(
    composed: &ComposedFormat,
    constituents: &[DeviationRule],
    params: &SmoothnessParams,
    cases: &CaseSet,
    opts: &VerifyOptions,
) -> Result<SmoothnessReport> {
    composed.validate()?;
    let rule = DeviationRule::Composed {
        constituents: constituents.to_vec(),
    };
    smoothness::verify_smoothness(composed, &rule, params, cases, opts)
}
