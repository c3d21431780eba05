//! Smoothness certificates: deviation rules and a numerical check of
//! `Σ_i E[u_i(a*_i, a_−i)] ≥ λ·OPT(v) − μ·R(a)` over supplied cases.
//!
//! `R` is revenue in strong mode and the sum of winning bids in weak mode.

use std::io;

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::auction::{AuctionFormat, BidGrid, BidProfile, Mechanism, PlayerBid, MAX_ACTIONS};
use crate::composition;
use crate::error::{input, Error, Result};
use crate::prior::{Prior, ValuationProfile, DEFAULT_QUADRATURE_POINTS};
use crate::rng::{derive_seed, seeded, Rng};
use crate::valuation::{ItemSet, Valuation};

/// `1 − 1/e`.
pub const ONE_MINUS_INV_E: f64 = 1.0 - 0.367_879_441_171_442_33;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    /// Revenue on the right-hand side.
    Strong,
    /// Sum of winning bids on the right-hand side; action cases must not overbid.
    Weak,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessParams {
    pub lambda: f64,
    pub mu: f64,
    #[serde(default)]
    pub mode: Mode,
}

impl SmoothnessParams {
    pub fn new(lambda: f64, mu: f64, mode: Mode) -> Result<Self> {
        let p = SmoothnessParams { lambda, mu, mode };
        p.validate()?;
        Ok(p)
    }

    pub fn strong(lambda: f64, mu: f64) -> Result<Self> {
        Self::new(lambda, mu, Mode::Strong)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return input(format!("lambda must be >= 0, got {}", self.lambda));
        }
        if !(self.mu.is_finite() && self.mu >= 1.0) {
            return input(format!("mu must be >= 1, got {}", self.mu));
        }
        Ok(())
    }

    /// Welfare guarantee implied by the certificate: `λ/μ`, or `λ/(1+μ)` in weak mode.
    pub fn poa_bound(&self) -> Result<f64> {
        self.validate()?;
        match self.mode {
            Mode::Strong if self.lambda > self.mu => {
                input(format!("lambda {} exceeds mu {}", self.lambda, self.mu))
            }
            Mode::Strong => Ok(self.lambda / self.mu),
            Mode::Weak => Ok(self.lambda / (1.0 + self.mu)),
        }
    }
}

/// Distribution of a single bid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "snake_case")]
pub enum ScalarDist {
    Point { bid: f64 },
    /// Density `1/(v − b)` on `[0, (1 − 1/e)v]`.
    Optimized { value: f64 },
    Uniform { hi: f64 },
}

impl ScalarDist {
    pub fn point(bid: f64) -> Self {
        ScalarDist::Point { bid }
    }

    pub fn is_point(&self) -> bool {
        match self {
            ScalarDist::Point { .. } => true,
            ScalarDist::Optimized { value } => *value == 0.0,
            ScalarDist::Uniform { hi } => *hi == 0.0,
        }
    }

    pub fn sample(&self, rng: &mut Rng) -> f64 {
        match self {
            ScalarDist::Point { bid } => *bid,
            // inverse CDF of ln(v/(v − b))
            ScalarDist::Optimized { value } => value * (1.0 - (-rng.gen::<f64>()).exp()),
            ScalarDist::Uniform { hi } => hi * rng.gen::<f64>(),
        }
    }

    fn point_value(&self) -> f64 {
        match self {
            ScalarDist::Point { bid } => *bid,
            _ => 0.0,
        }
    }

    /// `(P(X > p), E[X·1{X > p}])` for `p ≥ 0`.
    pub fn upper_tail(&self, p: f64) -> (f64, f64) {
        match *self {
            ScalarDist::Point { bid } if bid > p => (1.0, bid),
            ScalarDist::Point { .. } => (0.0, 0.0),
            ScalarDist::Optimized { value } => {
                let top = ONE_MINUS_INV_E * value;
                if p >= top {
                    return (0.0, 0.0);
                }
                // F(b) = ln(v/(v − b)), and ∫ b/(v − b) db = −b − v·ln(v − b)
                let q = 1.0 - (value / (value - p)).ln();
                (q.max(0.0), p - top + value * ((value - p) / (value - top)).ln())
            }
            ScalarDist::Uniform { hi } if p < hi => ((hi - p) / hi, (hi * hi - p * p) / (2.0 * hi)),
            ScalarDist::Uniform { .. } => (0.0, 0.0),
        }
    }

    pub fn support_top(&self) -> f64 {
        match self {
            ScalarDist::Point { bid } => *bid,
            ScalarDist::Optimized { value } => ONE_MINUS_INV_E * value,
            ScalarDist::Uniform { hi } => *hi,
        }
    }
}

/// Independent per-item bids on the entered items.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProductDist {
    pub bids: Vec<ScalarDist>,
    pub entered: ItemSet,
}

impl ProductDist {
    pub fn single(d: ScalarDist) -> Self {
        ProductDist {
            bids: vec![d],
            entered: ItemSet::singleton(0),
        }
    }

    pub fn is_point(&self) -> bool {
        self.bids.iter().all(ScalarDist::is_point)
    }

    pub fn sample(&self, rng: &mut Rng) -> PlayerBid {
        PlayerBid {
            bids: self.bids.iter().map(|d| d.sample(rng)).collect(),
            entered: self.entered,
        }
    }

    fn point(&self) -> PlayerBid {
        PlayerBid {
            bids: self.bids.iter().map(ScalarDist::point_value).collect(),
            entered: self.entered,
        }
    }
}

/// A deviation `D*_i`: a finite mixture of product distributions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviationDist {
    pub components: Vec<(ProductDist, f64)>,
}

impl DeviationDist {
    pub fn pure(p: ProductDist) -> Self {
        DeviationDist {
            components: vec![(p, 1.0)],
        }
    }

    pub fn is_exact(&self) -> bool {
        self.components.iter().all(|(p, _)| p.is_point())
    }

    /// Weighted actions when every component is a point mass.
    pub fn point_actions(&self) -> Option<Vec<(PlayerBid, f64)>> {
        self.is_exact()
            .then(|| self.components.iter().map(|(p, w)| (p.point(), *w)).collect())
    }

    pub fn sample(&self, rng: &mut Rng) -> PlayerBid {
        if self.components.len() == 1 {
            return self.components[0].0.sample(rng);
        }
        let k = WeightedIndex::new(self.components.iter().map(|c| c.1))
            .expect("positive weights")
            .sample(rng);
        self.components[k].0.sample(rng)
    }
}

/// Deviation rules. Private rules depend on the deviator's own type only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "camelCase")]
pub enum DeviationRule {
    /// Bid half the value.
    HalfValueFpa,
    /// Random bid with density `1/(v − b)` on `[0, (1 − 1/e)v]`.
    OptimizedFpa,
    /// The highest-value player bids uniformly on `[0, v_max]`, the rest bid 0.
    AllPayTop,
    /// Half value on the item assigned by the optimal matching, 0 elsewhere.
    SimFpaOptItem,
    /// The optimized random bid on the item assigned by the optimal matching.
    SimFpaOptimizedItem,
    /// Draws the others' types from an independent prior and applies `inner`.
    BayesianSampled { inner: Box<DeviationRule>, prior: Prior },
    /// One rule per item applied to proxy item values.
    Composed { constituents: Vec<DeviationRule> },
}

/// Catalog lookup by name.
pub fn builtin_deviation(name: &str) -> Result<DeviationRule> {
    match name {
        "halfValueFpa" => Ok(DeviationRule::HalfValueFpa),
        "optimizedFpa" => Ok(DeviationRule::OptimizedFpa),
        "allPayTop" => Ok(DeviationRule::AllPayTop),
        "simFpaOptItem" => Ok(DeviationRule::SimFpaOptItem),
        "simFpaOptimizedItem" => Ok(DeviationRule::SimFpaOptimizedItem),
        other => Err(Error::UnknownDeviation(other.to_string())),
    }
}

fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidDeviation(msg.into()))
}

fn single_good(f: &dyn Mechanism, rule: &str) -> Result<()> {
    if f.items() != 1 {
        return invalid(format!("{rule} needs a single-good format, got {} items", f.items()));
    }
    Ok(())
}

fn on_item(f: &dyn Mechanism, item: Option<usize>, d: ScalarDist) -> ProductDist {
    let m = f.items();
    let mut bids = vec![ScalarDist::point(0.0); m];
    let entered = match item {
        Some(j) => {
            bids[j] = d;
            if f.one_item_bids() {
                ItemSet::singleton(j)
            } else {
                ItemSet::full(m)
            }
        }
        None if f.one_item_bids() => ItemSet::EMPTY,
        None => ItemSet::full(m),
    };
    ProductDist { bids, entered }
}

impl DeviationRule {
    pub fn is_private(&self) -> bool {
        matches!(
            self,
            DeviationRule::HalfValueFpa | DeviationRule::OptimizedFpa | DeviationRule::BayesianSampled { .. }
        )
    }

    /// Wraps a full-profile rule into a private one by sampling the others'
    /// types from `prior`, which must be independent.
    pub fn bayesian_sampled(inner: DeviationRule, prior: Prior) -> Result<Self> {
        if !prior.is_independent() {
            return invalid("sampled deviations need an independent prior");
        }
        prior.validate()?;
        Ok(DeviationRule::BayesianSampled {
            inner: Box::new(inner),
            prior,
        })
    }

    /// `D*_i(v)` for the given format and valuation profile.
    pub fn deviation(&self, f: &dyn Mechanism, values: &[Valuation], i: usize) -> Result<DeviationDist> {
        if i >= values.len() {
            return input(format!("player {i} out of range"));
        }
        let vi = &values[i];
        Ok(match self {
            DeviationRule::HalfValueFpa => {
                single_good(f, "halfValueFpa")?;
                DeviationDist::pure(ProductDist::single(ScalarDist::point(vi.item_value(0) / 2.0)))
            }
            DeviationRule::OptimizedFpa => {
                single_good(f, "optimizedFpa")?;
                DeviationDist::pure(ProductDist::single(ScalarDist::Optimized {
                    value: vi.item_value(0),
                }))
            }
            DeviationRule::AllPayTop => {
                single_good(f, "allPayTop")?;
                let mut top = 0;
                for (k, v) in values.iter().enumerate() {
                    if v.item_value(0) > values[top].item_value(0) {
                        top = k;
                    }
                }
                let d = if i == top {
                    ScalarDist::Uniform { hi: vi.item_value(0) }
                } else {
                    ScalarDist::point(0.0)
                };
                DeviationDist::pure(ProductDist::single(d))
            }
            DeviationRule::SimFpaOptItem | DeviationRule::SimFpaOptimizedItem => {
                if !values.iter().all(|v| matches!(v, Valuation::UnitDemand { .. })) {
                    return invalid("matching-based deviations need unit-demand valuations");
                }
                let opt = f.opt(values)?;
                let item = opt.bundles[i].iter().next();
                let value = item.map_or(0.0, |j| vi.item_value(j));
                let d = match self {
                    DeviationRule::SimFpaOptItem => ScalarDist::point(value / 2.0),
                    _ => ScalarDist::Optimized { value },
                };
                DeviationDist::pure(on_item(f, item, d))
            }
            DeviationRule::BayesianSampled { inner, prior } => {
                if !prior.is_independent() {
                    return invalid("sampled deviations need an independent prior");
                }
                if prior.players() != values.len() {
                    return input(format!("prior has {} players, profile {}", prior.players(), values.len()));
                }
                let mut components = Vec::new();
                for (profile, w) in prior.conditional_profiles(i, vi, DEFAULT_QUADRATURE_POINTS) {
                    if w <= 0.0 {
                        continue;
                    }
                    for (c, p) in inner.deviation(f, &profile, i)?.components {
                        merge(&mut components, c, w * p);
                    }
                }
                DeviationDist { components }
            }
            DeviationRule::Composed { constituents } => composition::composed_deviation(f, constituents, values, i)?,
        })
    }
}

fn merge(components: &mut Vec<(ProductDist, f64)>, c: ProductDist, w: f64) {
    match components.iter_mut().find(|(x, _)| *x == c) {
        Some(entry) => entry.1 += w,
        None => components.push((c, w)),
    }
}

/// Valuation profiles paired with the action profiles to test against them.
#[derive(Clone, Debug, PartialEq)]
pub struct CaseGroup {
    pub values: ValuationProfile,
    pub actions: Vec<BidProfile>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CaseSet {
    /// Name of the generator, reported alongside the results.
    pub generator: String,
    pub groups: Vec<CaseGroup>,
}

/// Every profile with one entry per player drawn from `options`.
pub fn profiles<T: Clone>(options: &[T], n: usize) -> Result<Vec<Vec<T>>> {
    let total = (0..n).try_fold(1usize, |a, _| a.checked_mul(options.len()));
    match total {
        Some(t) if t <= MAX_ACTIONS => {}
        _ => return Err(Error::Resource(format!("{}^{n} profiles exceed {MAX_ACTIONS}", options.len()))),
    }
    let mut out: Vec<Vec<T>> = vec![Vec::with_capacity(n)];
    for _ in 0..n {
        out = out
            .into_iter()
            .flat_map(|p| {
                options.iter().map(move |o| {
                    let mut q = p.clone();
                    q.push(o.clone());
                    q
                })
            })
            .collect();
    }
    Ok(out)
}

impl CaseSet {
    /// Every valuation profile against every action profile.
    pub fn product(generator: &str, valuations: Vec<ValuationProfile>, actions: Vec<BidProfile>) -> Self {
        CaseSet {
            generator: generator.to_string(),
            groups: valuations
                .into_iter()
                .map(|values| CaseGroup {
                    values,
                    actions: actions.clone(),
                })
                .collect(),
        }
    }

    /// Each valuation profile against all grid profiles in which nobody
    /// bids above `v_i({j})` on any item.
    pub fn no_overbidding(generator: &str, f: &dyn Mechanism, valuations: Vec<ValuationProfile>, grid: &BidGrid) -> Result<Self> {
        let space = f.action_space(grid)?;
        let groups = valuations
            .into_iter()
            .map(|values| {
                let per_player: Vec<Vec<PlayerBid>> = values
                    .iter()
                    .map(|v| space.iter().filter(|a| !overbids(f, a, v)).cloned().collect())
                    .collect();
                let actions = cartesian(&per_player)?
                    .into_iter()
                    .map(|p| BidProfile::from_players(&p))
                    .collect::<Result<Vec<_>>>()?;
                Ok(CaseGroup { values, actions })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(CaseSet {
            generator: generator.to_string(),
            groups,
        })
    }

    pub fn len(&self) -> usize {
        self.groups.iter().map(|g| g.actions.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn cartesian(lists: &[Vec<PlayerBid>]) -> Result<Vec<Vec<PlayerBid>>> {
    let total = lists.iter().try_fold(1usize, |a, l| a.checked_mul(l.len()));
    match total {
        Some(t) if t <= MAX_ACTIONS => {}
        _ => return Err(Error::Resource(format!("action profiles exceed {MAX_ACTIONS}"))),
    }
    let mut out: Vec<Vec<PlayerBid>> = vec![Vec::new()];
    for l in lists {
        out = out
            .into_iter()
            .flat_map(|p| {
                l.iter().map(move |a| {
                    let mut q = p.clone();
                    q.push(a.clone());
                    q
                })
            })
            .collect();
    }
    Ok(out)
}

fn overbids(f: &dyn Mechanism, a: &PlayerBid, v: &Valuation) -> bool {
    let caps = f.item_values(v);
    a.entered.iter().any(|j| a.bids[j] > caps[j] + 1e-12)
}

/// Acceptance floor for each case.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "floor", rename_all = "snake_case")]
pub enum Floor {
    /// `−1e−9` for exact cases and `−3·stderr` for sampled ones.
    Default,
    Absolute { value: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct VerifyOptions {
    /// Deviation draws per player and valuation profile.
    pub samples: usize,
    pub seed: u64,
    pub floor: Floor,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            samples: 10_000,
            seed: 0,
            floor: Floor::Default,
        }
    }
}

pub const EXACT_FLOOR: f64 = -1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct CaseRow {
    pub case_id: usize,
    pub valuation_hash: String,
    pub action_hash: String,
    pub lhs: f64,
    pub opt: f64,
    pub rev: f64,
    pub margin: f64,
    pub stderr: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Witness {
    pub case_id: usize,
    pub values: ValuationProfile,
    pub actions: BidProfile,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SmoothnessReport {
    pub generator: String,
    pub seed: u64,
    pub params: SmoothnessParams,
    pub rows: Vec<CaseRow>,
    pub min_margin: f64,
    /// Case attaining `min_margin`.
    pub witness: Option<Witness>,
    pub witness_stderr: f64,
    pub failures: usize,
    pub pass: bool,
}

pub fn short_hash(text: &str) -> String {
    let digest = Sha256::digest(text.as_bytes());
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

fn action_key(b: &BidProfile) -> String {
    (0..b.players())
        .flat_map(|i| b.entered(i).iter().map(move |j| (i, j)))
        .map(|(i, j)| format!("{i}:{j}:{:?}", b.bid(i, j)))
        .collect::<Vec<_>>()
        .join(",")
}

fn check_action(f: &dyn Mechanism, a: &PlayerBid, i: usize) -> Result<()> {
    if a.bids.len() != f.items() || !a.entered.fits(f.items()) {
        return invalid(format!("player {i}'s deviation has the wrong dimension"));
    }
    if a.bids.iter().any(|b| !(b.is_finite() && *b >= 0.0)) {
        return invalid(format!("player {i}'s deviation has a negative bid"));
    }
    if f.one_item_bids() && a.entered.len() > 1 {
        return invalid(format!("player {i}'s deviation enters more than one item"));
    }
    Ok(())
}

enum PlayerDev {
    Exact(Vec<(PlayerBid, f64)>),
    /// Continuous bids in a highest-bid single-good auction, integrated in
    /// closed form against the top opposing bid.
    Closed(AuctionFormat, Vec<(ProductDist, f64)>),
    Sampled(Vec<PlayerBid>),
}

fn closed_form(f: &dyn Mechanism, d: &DeviationDist) -> Option<AuctionFormat> {
    let fmt = f.as_single_good()?;
    let priced = matches!(fmt, AuctionFormat::FirstPrice | AuctionFormat::SecondPrice | AuctionFormat::AllPay);
    let scalar = d.components.iter().all(|(c, _)| c.bids.len() == 1 && c.entered.contains(0));
    (priced && scalar).then_some(fmt)
}

fn closed_utility(fmt: AuctionFormat, b: &BidProfile, i: usize, c: &ProductDist, v: &Valuation) -> f64 {
    if c.is_point() {
        // ties depend on indices, so points go through the mechanism
        return fmt.utility_with(b, i, &c.point(), v);
    }
    let d = c.bids[0];
    let p = (0..b.players()).filter(|&j| j != i).map(|j| b.bid(j, 0)).fold(0.0, f64::max);
    let (q, paid) = d.upper_tail(p);
    let v = v.item_value(0);
    match fmt {
        AuctionFormat::FirstPrice => v * q - paid,
        AuctionFormat::SecondPrice => (v - p) * q,
        _ => v * q - d.upper_tail(0.0).1,
    }
}

struct GroupResult {
    rows: Vec<(usize, f64, f64, f64, f64, f64)>,
}

/// Checks the smoothness inequality on every case; sampled deviations reuse
/// the same draws across the action cases of one valuation profile.
pub fn verify_smoothness(
    f: &dyn Mechanism,
    rule: &DeviationRule,
    params: &SmoothnessParams,
    cases: &CaseSet,
    opts: &VerifyOptions,
) -> Result<SmoothnessReport> {
    params.validate()?;
    if opts.samples < 2 {
        return input("smoothness checks need at least 2 samples");
    }
    let results = cases
        .groups
        .par_iter()
        .enumerate()
        .map(|(g, group)| evaluate_group(f, rule, params, group, g, opts))
        .collect::<Result<Vec<_>>>()?;

    let mut rows: Vec<CaseRow> = Vec::with_capacity(cases.len());
    let mut best: Option<(usize, usize, usize)> = None;
    let mut case_id = 0;
    for (g, (group, res)) in cases.groups.iter().zip(results).enumerate() {
        let vhash = short_hash(&serde_json::to_string(&group.values)?);
        for (a, lhs, opt, rev, margin, stderr) in res.rows {
            let floor = match opts.floor {
                Floor::Absolute { value } => value,
                Floor::Default if stderr > 0.0 => -3.0 * stderr,
                Floor::Default => EXACT_FLOOR,
            };
            if best.is_none_or(|(_, _, r)| margin < rows[r].margin) {
                best = Some((g, a, rows.len()));
            }
            rows.push(CaseRow {
                case_id,
                valuation_hash: vhash.clone(),
                action_hash: short_hash(&action_key(&group.actions[a])),
                lhs,
                opt,
                rev,
                margin,
                stderr,
                pass: margin >= floor,
            });
            case_id += 1;
        }
    }
    let failures = rows.iter().filter(|r| !r.pass).count();
    let (min_margin, witness, witness_stderr) = match best {
        Some((g, a, r)) => (
            rows[r].margin,
            Some(Witness {
                case_id: rows[r].case_id,
                values: cases.groups[g].values.clone(),
                actions: cases.groups[g].actions[a].clone(),
            }),
            rows[r].stderr,
        ),
        None => (f64::INFINITY, None, 0.0),
    };
    Ok(SmoothnessReport {
        generator: cases.generator.clone(),
        seed: opts.seed,
        params: *params,
        rows,
        min_margin,
        witness,
        witness_stderr,
        failures,
        pass: failures == 0,
    })
}

fn evaluate_group(
    f: &dyn Mechanism,
    rule: &DeviationRule,
    params: &SmoothnessParams,
    group: &CaseGroup,
    g: usize,
    opts: &VerifyOptions,
) -> Result<GroupResult> {
    let values = &group.values;
    let n = values.len();
    let opt = f.opt(values)?.welfare;
    let mut rng = seeded(derive_seed(opts.seed, &[g as u64]));
    let mut devs = Vec::with_capacity(n);
    for i in 0..n {
        let d = rule.deviation(f, values, i)?;
        let dev = match (d.point_actions(), closed_form(f, &d)) {
            (Some(actions), _) => PlayerDev::Exact(actions),
            (None, Some(fmt)) => PlayerDev::Closed(fmt, d.components),
            (None, None) => PlayerDev::Sampled((0..opts.samples).map(|_| d.sample(&mut rng)).collect()),
        };
        match &dev {
            PlayerDev::Exact(a) => a.iter().try_for_each(|(x, _)| check_action(f, x, i))?,
            PlayerDev::Closed(..) => {}
            PlayerDev::Sampled(a) => a.iter().try_for_each(|x| check_action(f, x, i))?,
        }
        devs.push(dev);
    }
    let sampled = devs.iter().any(|d| matches!(d, PlayerDev::Sampled(_)));
    let mut rows = Vec::with_capacity(group.actions.len());
    let mut per_sample = vec![0.0; if sampled { opts.samples } else { 0 }];
    for (a, b) in group.actions.iter().enumerate() {
        if b.players() != n {
            return input(format!("action case has {} players, valuations {n}", b.players()));
        }
        f.check_profile(b)?;
        if params.mode == Mode::Weak {
            if let Some(i) = (0..n).find(|&i| overbids(f, &b.player(i), &values[i])) {
                return input(format!("weak-mode action case overbids for player {i}"));
            }
        }
        let mut exact = 0.0;
        per_sample.iter_mut().for_each(|x| *x = 0.0);
        for (i, d) in devs.iter().enumerate() {
            match d {
                PlayerDev::Exact(actions) => {
                    exact += actions.iter().map(|(x, w)| w * f.utility_with(b, i, x, &values[i])).sum::<f64>();
                }
                PlayerDev::Closed(fmt, components) => {
                    exact += components
                        .iter()
                        .map(|(c, w)| w * closed_utility(*fmt, b, i, c, &values[i]))
                        .sum::<f64>();
                }
                PlayerDev::Sampled(draws) => {
                    for (s, x) in draws.iter().enumerate() {
                        per_sample[s] += f.utility_with(b, i, x, &values[i]);
                    }
                }
            }
        }
        let (mean, stderr) = if sampled {
            let k = per_sample.len() as f64;
            let m = per_sample.iter().sum::<f64>() / k;
            let var = per_sample.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (k - 1.0);
            (m, (var / k).sqrt())
        } else {
            (0.0, 0.0)
        };
        let lhs = exact + mean;
        let rev = match params.mode {
            Mode::Strong => f.revenue(b)?,
            Mode::Weak => f.winning_bid_sum(b)?,
        };
        let margin = lhs - params.lambda * opt + params.mu * rev;
        rows.push((a, lhs, opt, rev, margin, stderr));
    }
    Ok(GroupResult { rows })
}

impl SmoothnessReport {
    /// CSV columns: case_id, valuation_hash, action_hash, lhs, opt, rev, margin, stderr.
    pub fn write_csv<W: io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["case_id", "valuation_hash", "action_hash", "lhs", "opt", "rev", "margin", "stderr"])?;
        for r in &self.rows {
            out.write_record([
                r.case_id.to_string(),
                r.valuation_hash.clone(),
                r.action_hash.clone(),
                r.lhs.to_string(),
                r.opt.to_string(),
                r.rev.to_string(),
                r.margin.to_string(),
                r.stderr.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Scalar valuation profiles over a value grid.
pub fn scalar_profiles(points: &[f64], n: usize) -> Result<Vec<ValuationProfile>> {
    let vals: Vec<Valuation> = points.iter().map(|&v| Valuation::scalar(v)).collect();
    profiles(&vals, n)
}

/// Every bid profile of `n` players over the format's grid actions.
pub fn grid_profiles(f: &dyn Mechanism, grid: &BidGrid, n: usize) -> Result<Vec<BidProfile>> {
    let space = f.action_space(grid)?;
    profiles(&space, n)?
        .into_iter()
        .map(|p| BidProfile::from_players(&p))
        .collect()
}
