//! Auction formats: action spaces, outcome and payment rules, utilities,
//! revenue and social welfare.
//!
//! Ties go to the lowest player index. In the single-good formats the good is
//! allocated even when every bid is zero (to player 0 at price 0).

use std::io;

use serde::{Deserialize, Serialize};

use crate::error::{input, Error, Result};
use crate::valuation::{ItemSet, Valuation};
use crate::welfare::{self, OptResult};

/// Bid-vector grids larger than this are refused.
pub const MAX_ACTIONS: usize = 10_000_000;

/// Per-item payment rule of a simultaneous auction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemRule {
    FirstPrice,
    SecondPrice,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AuctionFormat {
    /// Highest bidder wins and pays her bid.
    FirstPrice,
    /// Highest bidder wins and pays the second-highest bid.
    SecondPrice,
    /// Highest bidder wins; everyone pays her bid.
    AllPay,
    /// The project is funded iff the bids cover `cost`; funded bids are collected.
    PublicGood { cost: f64 },
    /// Each item sold independently by `rule`. With `one_item_bids` every
    /// player enters the auction of at most one item.
    SimultaneousItems {
        items: usize,
        rule: ItemRule,
        #[serde(default)]
        one_item_bids: bool,
    },
}

/// Who received what.
#[derive(Clone, Debug, PartialEq)]
pub enum Allocation {
    Winner(usize),
    Funded(bool),
    Bundles(Vec<ItemSet>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Outcome {
    pub allocation: Allocation,
    pub payments: Vec<f64>,
}

impl Outcome {
    pub fn revenue(&self) -> f64 {
        self.payments.iter().sum()
    }

    /// Bundle received by player `i` (single-good formats use item 0).
    pub fn bundle(&self, i: usize) -> ItemSet {
        match &self.allocation {
            Allocation::Winner(w) if *w == i => ItemSet::singleton(0),
            Allocation::Winner(_) => ItemSet::EMPTY,
            Allocation::Funded(_) => ItemSet::EMPTY,
            Allocation::Bundles(b) => b[i],
        }
    }
}

/// One player's action: a bid per item plus the items she enters.
#[derive(Clone, Debug, PartialEq)]
pub struct PlayerBid {
    pub bids: Vec<f64>,
    pub entered: ItemSet,
}

impl PlayerBid {
    pub fn scalar(bid: f64) -> Self {
        PlayerBid {
            bids: vec![bid],
            entered: ItemSet::singleton(0),
        }
    }

    /// Bids on every item.
    pub fn vector(bids: Vec<f64>) -> Self {
        let entered = ItemSet::full(bids.len());
        PlayerBid { bids, entered }
    }

    /// Enters only `item`, bidding `bid` there.
    pub fn on_item(items: usize, item: usize, bid: f64) -> Self {
        let mut bids = vec![0.0; items];
        bids[item] = bid;
        PlayerBid {
            bids,
            entered: ItemSet::singleton(item),
        }
    }

    pub fn total(&self) -> f64 {
        self.entered.iter().map(|j| self.bids[j]).sum()
    }
}

/// Bids of every player on every item, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct BidProfile {
    items: usize,
    bids: Vec<f64>,
    entered: Vec<ItemSet>,
}

fn check_bid(b: f64) -> Result<()> {
    if !b.is_finite() || b < 0.0 {
        return input(format!("bid {b} must be finite and >= 0"));
    }
    Ok(())
}

impl BidProfile {
    /// One bid per player for a single-good format.
    pub fn scalar(bids: &[f64]) -> Result<Self> {
        Self::from_players(&bids.iter().map(|&b| PlayerBid::scalar(b)).collect::<Vec<_>>())
    }

    /// Full bid vectors, one row per player.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::from_players(&rows.into_iter().map(PlayerBid::vector).collect::<Vec<_>>())
    }

    pub fn from_players(players: &[PlayerBid]) -> Result<Self> {
        let Some(first) = players.first() else {
            return input("bid profile needs at least one player");
        };
        let items = first.bids.len();
        if items == 0 {
            return input("bid profile needs at least one item");
        }
        let mut bids = Vec::with_capacity(players.len() * items);
        let mut entered = Vec::with_capacity(players.len());
        for (i, p) in players.iter().enumerate() {
            if p.bids.len() != items {
                return input(format!("player {i} bids on {} items, expected {items}", p.bids.len()));
            }
            if !p.entered.fits(items) {
                return input(format!("player {i} enters items outside 0..{items}"));
            }
            for &b in &p.bids {
                check_bid(b)?;
            }
            bids.extend_from_slice(&p.bids);
            entered.push(p.entered);
        }
        Ok(BidProfile { items, bids, entered })
    }

    pub fn players(&self) -> usize {
        self.entered.len()
    }

    pub fn items(&self) -> usize {
        self.items
    }

    pub fn bid(&self, i: usize, j: usize) -> f64 {
        self.bids[i * self.items + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.bids[i * self.items..(i + 1) * self.items]
    }

    pub fn entered(&self, i: usize) -> ItemSet {
        self.entered[i]
    }

    pub fn player(&self, i: usize) -> PlayerBid {
        PlayerBid {
            bids: self.row(i).to_vec(),
            entered: self.entered[i],
        }
    }

    pub fn set_player(&mut self, i: usize, action: &PlayerBid) {
        debug_assert_eq!(action.bids.len(), self.items);
        let m = self.items;
        self.bids[i * m..(i + 1) * m].copy_from_slice(&action.bids);
        self.entered[i] = action.entered;
    }

    /// Writes `player,item,bid` rows; items a player did not enter are omitted.
    pub fn write_csv<W: io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["player", "item", "bid"])?;
        for i in 0..self.players() {
            for j in self.entered[i].iter() {
                out.serialize((i, j, self.bid(i, j)))?;
            }
        }
        out.flush()?;
        Ok(())
    }

    /// Reads rows written by [`BidProfile::write_csv`] for `items` items.
    pub fn read_csv<R: io::Read>(r: R, items: usize) -> Result<Self> {
        let mut rows: Vec<(usize, usize, f64)> = Vec::new();
        for rec in csv::Reader::from_reader(r).deserialize() {
            rows.push(rec?);
        }
        let players = rows.iter().map(|r| r.0 + 1).max().unwrap_or(0);
        let mut out: Vec<PlayerBid> = (0..players)
            .map(|_| PlayerBid {
                bids: vec![0.0; items],
                entered: ItemSet::EMPTY,
            })
            .collect();
        for (i, j, b) in rows {
            if j >= items {
                return input(format!("item {j} out of range for {items} items"));
            }
            if out[i].entered.contains(j) {
                return input(format!("duplicate row for player {i}, item {j}"));
            }
            out[i].bids[j] = b;
            out[i].entered = out[i].entered.with(j);
        }
        Self::from_players(&out)
    }
}

/// Finite bid grid `{0, δ, 2δ, …, cap}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BidGrid {
    pub step: f64,
    pub cap: f64,
}

impl BidGrid {
    pub fn new(step: f64, cap: f64) -> Result<Self> {
        if !(step.is_finite() && step > 0.0 && cap.is_finite() && cap > 0.0) {
            return input(format!("bid grid needs step > 0 and cap > 0, got ({step}, {cap})"));
        }
        Ok(BidGrid { step, cap })
    }

    pub fn len(&self) -> usize {
        (self.cap / self.step + 1e-9).floor() as usize + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Grid points, snapped to a 1e-12 lattice so that `k·δ` compares equal
    /// to the decimal it denotes.
    pub fn points(&self) -> Vec<f64> {
        (0..self.len()).map(|k| snap(k as f64 * self.step)).collect()
    }

    /// Same step with a different cap.
    pub fn capped(&self, cap: f64) -> BidGrid {
        BidGrid { step: self.step, cap }
    }
}

pub(crate) fn snap(x: f64) -> f64 {
    (x * 1e12).round() / 1e12
}

/// Highest entered bidder on `item` among `players` (lowest index on ties),
/// with the best competing entered bid.
fn item_winner(bids: &BidProfile, item: usize) -> (Option<usize>, f64) {
    let mut winner: Option<usize> = None;
    let mut top = f64::NEG_INFINITY;
    let mut second = 0.0f64;
    for i in 0..bids.players() {
        if !bids.entered(i).contains(item) {
            continue;
        }
        let b = bids.bid(i, item);
        if b > top {
            if winner.is_some() {
                second = second.max(top);
            }
            winner = Some(i);
            top = b;
        } else {
            second = second.max(b);
        }
    }
    (winner, second)
}

/// Anything that maps bid profiles to outcomes with quasi-linear utilities.
pub trait Mechanism: Sync {
    fn items(&self) -> usize;

    fn check_profile(&self, bids: &BidProfile) -> Result<()>;

    fn outcome(&self, bids: &BidProfile) -> Result<Outcome>;

    /// Utility of player `i` with valuation `v` when she plays `action` and
    /// everyone else plays as in `bids`.
    fn utility_with(&self, bids: &BidProfile, i: usize, action: &PlayerBid, v: &Valuation) -> f64;

    fn utility(&self, bids: &BidProfile, i: usize, v: &Valuation) -> f64 {
        self.utility_with(bids, i, &bids.player(i), v)
    }

    fn revenue(&self, bids: &BidProfile) -> Result<f64> {
        Ok(self.outcome(bids)?.revenue())
    }

    /// Sum over allocated goods of the winner's own bid.
    fn winning_bid_sum(&self, bids: &BidProfile) -> Result<f64>;

    /// Sum of utilities plus revenue.
    fn social_welfare(&self, bids: &BidProfile, values: &[Valuation]) -> Result<f64> {
        if values.len() != bids.players() {
            return input(format!("{} valuations for {} players", values.len(), bids.players()));
        }
        let total: f64 = values
            .iter()
            .enumerate()
            .map(|(i, v)| self.utility(bids, i, v))
            .sum();
        Ok(total + self.revenue(bids)?)
    }

    /// The action space restricted to a grid.
    fn action_space(&self, grid: &BidGrid) -> Result<Vec<PlayerBid>>;

    /// Welfare-maximizing outcome.
    fn opt(&self, values: &[Valuation]) -> Result<OptResult>;

    /// `v_i({j})` caps used by no-overbidding checks.
    fn item_values(&self, v: &Valuation) -> Vec<f64> {
        (0..self.items()).map(|j| v.item_value(j)).collect()
    }

    /// Whether each player may enter at most one item.
    fn one_item_bids(&self) -> bool {
        false
    }

    /// Single-good format that sells item `j`, when the mechanism is a
    /// product of per-item auctions.
    fn constituent(&self, j: usize) -> Result<AuctionFormat>;

    /// The format itself when the mechanism is a plain single-good auction.
    fn as_single_good(&self) -> Option<AuctionFormat> {
        None
    }
}

impl AuctionFormat {
    pub fn validate(&self) -> Result<()> {
        match self {
            AuctionFormat::PublicGood { cost } if !(cost.is_finite() && *cost >= 0.0) => {
                input(format!("public good cost must be >= 0, got {cost}"))
            }
            AuctionFormat::SimultaneousItems { items, .. } if *items == 0 || *items > 32 => {
                input(format!("simultaneous auction needs 1..=32 items, got {items}"))
            }
            _ => Ok(()),
        }
    }

    pub fn is_single_good(&self) -> bool {
        !matches!(self, AuctionFormat::SimultaneousItems { .. })
    }

    /// `SW_raw` per the utilities-plus-revenue accounting, and
    /// `SW_net = SW_raw − c·funded` which also charges the project cost.
    pub fn public_good_welfare(&self, bids: &BidProfile, values: &[Valuation]) -> Result<(f64, f64)> {
        let AuctionFormat::PublicGood { cost } = self else {
            return input("public_good_welfare needs a public-good format");
        };
        let raw = self.social_welfare(bids, values)?;
        let funded = matches!(self.outcome(bids)?.allocation, Allocation::Funded(true));
        Ok((raw, if funded { raw - cost } else { raw }))
    }
}

impl Mechanism for AuctionFormat {
    fn items(&self) -> usize {
        match self {
            AuctionFormat::SimultaneousItems { items, .. } => *items,
            _ => 1,
        }
    }

    fn check_profile(&self, bids: &BidProfile) -> Result<()> {
        if bids.items() != self.items() {
            return input(format!("profile has {} items, format expects {}", bids.items(), self.items()));
        }
        if let AuctionFormat::SimultaneousItems { one_item_bids: true, .. } = self {
            if let Some(i) = (0..bids.players()).find(|&i| bids.entered(i).len() > 1) {
                return input(format!("player {i} enters more than one item"));
            }
        }
        Ok(())
    }

    fn outcome(&self, bids: &BidProfile) -> Result<Outcome> {
        self.check_profile(bids)?;
        let n = bids.players();
        let mut payments = vec![0.0; n];
        let allocation = match self {
            AuctionFormat::FirstPrice | AuctionFormat::SecondPrice | AuctionFormat::AllPay => {
                let mut winner = 0;
                for i in 1..n {
                    if bids.bid(i, 0) > bids.bid(winner, 0) {
                        winner = i;
                    }
                }
                match self {
                    AuctionFormat::FirstPrice => payments[winner] = bids.bid(winner, 0),
                    AuctionFormat::SecondPrice => {
                        payments[winner] = (0..n)
                            .filter(|&i| i != winner)
                            .map(|i| bids.bid(i, 0))
                            .fold(0.0, f64::max);
                    }
                    _ => {
                        for (i, p) in payments.iter_mut().enumerate() {
                            *p = bids.bid(i, 0);
                        }
                    }
                }
                Allocation::Winner(winner)
            }
            AuctionFormat::PublicGood { cost } => {
                let total: f64 = (0..n).map(|i| bids.bid(i, 0)).sum();
                let funded = total >= *cost;
                if funded {
                    for (i, p) in payments.iter_mut().enumerate() {
                        *p = bids.bid(i, 0);
                    }
                }
                Allocation::Funded(funded)
            }
            AuctionFormat::SimultaneousItems { items, rule, .. } => {
                let mut bundles = vec![ItemSet::EMPTY; n];
                for j in 0..*items {
                    if let (Some(w), second) = item_winner(bids, j) {
                        bundles[w] = bundles[w].with(j);
                        payments[w] += match rule {
                            ItemRule::FirstPrice => bids.bid(w, j),
                            ItemRule::SecondPrice => second,
                        };
                    }
                }
                Allocation::Bundles(bundles)
            }
        };
        Ok(Outcome { allocation, payments })
    }

    fn utility_with(&self, bids: &BidProfile, i: usize, action: &PlayerBid, v: &Valuation) -> f64 {
        let n = bids.players();
        match self {
            AuctionFormat::FirstPrice | AuctionFormat::SecondPrice | AuctionFormat::AllPay => {
                let x = action.bids[0];
                let mut wins = true;
                let mut other = 0.0f64;
                for j in (0..n).filter(|&j| j != i) {
                    let b = bids.bid(j, 0);
                    if b > x || (b == x && j < i) {
                        wins = false;
                    }
                    other = other.max(b);
                }
                let value = if wins { v.item_value(0) } else { 0.0 };
                match self {
                    AuctionFormat::FirstPrice => {
                        if wins {
                            value - x
                        } else {
                            0.0
                        }
                    }
                    AuctionFormat::SecondPrice => {
                        if wins {
                            value - other
                        } else {
                            0.0
                        }
                    }
                    _ => value - x,
                }
            }
            AuctionFormat::PublicGood { cost } => {
                let x = action.bids[0];
                let total = x + (0..n).filter(|&j| j != i).map(|j| bids.bid(j, 0)).sum::<f64>();
                if total >= *cost {
                    v.item_value(0) - x
                } else {
                    0.0
                }
            }
            AuctionFormat::SimultaneousItems { items, rule, .. } => {
                let mut won = ItemSet::EMPTY;
                let mut paid = 0.0;
                for item in action.entered.iter().filter(|&j| j < *items) {
                    let x = action.bids[item];
                    let mut wins = true;
                    let mut other = 0.0f64;
                    for j in (0..n).filter(|&j| j != i && bids.entered(j).contains(item)) {
                        let b = bids.bid(j, item);
                        if b > x || (b == x && j < i) {
                            wins = false;
                            break;
                        }
                        other = other.max(b);
                    }
                    if wins {
                        won = won.with(item);
                        paid += match rule {
                            ItemRule::FirstPrice => x,
                            ItemRule::SecondPrice => other,
                        };
                    }
                }
                v.eval(won) - paid
            }
        }
    }

    fn winning_bid_sum(&self, bids: &BidProfile) -> Result<f64> {
        let outcome = self.outcome(bids)?;
        Ok(match &outcome.allocation {
            Allocation::Winner(w) => bids.bid(*w, 0),
            Allocation::Funded(_) => outcome.revenue(),
            Allocation::Bundles(b) => b
                .iter()
                .enumerate()
                .map(|(i, s)| s.iter().map(|j| bids.bid(i, j)).sum::<f64>())
                .sum(),
        })
    }

    fn action_space(&self, grid: &BidGrid) -> Result<Vec<PlayerBid>> {
        let points = grid.points();
        match self {
            AuctionFormat::SimultaneousItems {
                items,
                one_item_bids: true,
                ..
            } => Ok((0..*items)
                .flat_map(|j| points.iter().map(move |&b| PlayerBid::on_item(*items, j, b)))
                .collect()),
            AuctionFormat::SimultaneousItems { items, .. } => product_grid(&points, *items),
            _ => Ok(points.into_iter().map(PlayerBid::scalar).collect()),
        }
    }

    fn opt(&self, values: &[Valuation]) -> Result<OptResult> {
        match self {
            AuctionFormat::PublicGood { .. } => {
                input("no welfare optimum is defined for the public-good format")
            }
            _ => welfare::opt_allocation(values, self.items()),
        }
    }

    fn one_item_bids(&self) -> bool {
        matches!(self, AuctionFormat::SimultaneousItems { one_item_bids: true, .. })
    }

    fn constituent(&self, j: usize) -> Result<AuctionFormat> {
        if j >= self.items() {
            return input(format!("item {j} out of range"));
        }
        match self {
            AuctionFormat::SimultaneousItems { rule: ItemRule::FirstPrice, .. } => Ok(AuctionFormat::FirstPrice),
            AuctionFormat::SimultaneousItems { rule: ItemRule::SecondPrice, .. } => Ok(AuctionFormat::SecondPrice),
            AuctionFormat::PublicGood { .. } => input("the public-good format has no item auctions"),
            single => Ok(*single),
        }
    }

    fn as_single_good(&self) -> Option<AuctionFormat> {
        self.is_single_good().then_some(*self)
    }
}

/// Every bid vector over `items` items with entries from `points`.
pub fn product_grid(points: &[f64], items: usize) -> Result<Vec<PlayerBid>> {
    let k = points.len();
    let total = (0..items).try_fold(1usize, |acc, _| acc.checked_mul(k));
    match total {
        Some(t) if t <= MAX_ACTIONS => {}
        _ => {
            return Err(Error::Resource(format!(
                "{k}^{items} bid vectors exceed the limit of {MAX_ACTIONS}"
            )))
        }
    }
    let mut out = Vec::new();
    let mut idx = vec![0usize; items];
    loop {
        out.push(PlayerBid::vector(idx.iter().map(|&x| points[x]).collect()));
        let mut pos = items;
        loop {
            if pos == 0 {
                return Ok(out);
            }
            pos -= 1;
            idx[pos] += 1;
            if idx[pos] < k {
                break;
            }
            idx[pos] = 0;
        }
    }
}

/// Value each player derives from her part of the outcome.
pub fn allocation_value(outcome: &Outcome, values: &[Valuation]) -> f64 {
    match &outcome.allocation {
        Allocation::Funded(true) => values.iter().map(|v| v.item_value(0)).sum(),
        Allocation::Funded(false) => 0.0,
        _ => values
            .iter()
            .enumerate()
            .map(|(i, v)| v.eval(outcome.bundle(i)))
            .sum(),
    }
}
