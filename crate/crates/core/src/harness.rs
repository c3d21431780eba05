//! Experiment configs, instance PoA estimation, and suite runs with CSV output.
//!
//! A config file holds one experiment object or `{"experiments": [...]}`.
//! Field names are listed in `docs/schema.md`.

use std::collections::HashSet;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::auction::{AuctionFormat, BidGrid, BidProfile, Mechanism, PlayerBid};
use crate::composition::{compose, verify_composed_smoothness};
use crate::equilibria::{default_grid, epsilon_bne_check, format_action, EvalOptions};
use crate::error::{input, Error, Result};
use crate::learning::{learner_grid, run_repeated, welfare_vs_bound, Algorithm, RunOptions};
use crate::prior::{valuation_list, Prior, ValuationProfile, DEFAULT_QUADRATURE_POINTS};
use crate::rng::{derive_seed, seeded};
use crate::smoothness::{
    grid_profiles, profiles, verify_smoothness, CaseSet, DeviationRule, Floor, SmoothnessParams,
    SmoothnessReport, VerifyOptions,
};
use crate::strategy::Strategy;
use crate::valuation::Valuation;

/// Exhaustive PoA evaluation kicks in automatically up to this many atoms.
pub const EXHAUSTIVE_ATOMS: usize = 1_000_000;
/// Hard cap when exhaustive evaluation is forced.
pub const MAX_FORCED_ATOMS: usize = 10_000_000;
/// Label used for every PoA number the harness reports.
pub const POA_LABEL: &str = "instance PoA";

const CHUNK: usize = 4096;
const DEFAULT_RESOLUTION: usize = 1000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Poa,
    EqCheck,
    SmoothCheck,
    Learn,
    ComposeCheck,
}

impl Kind {
    pub fn name(self) -> &'static str {
        match self {
            Kind::Poa => "poa",
            Kind::EqCheck => "eq_check",
            Kind::SmoothCheck => "smooth_check",
            Kind::Learn => "learn",
            Kind::ComposeCheck => "compose_check",
        }
    }

    fn default_comparison(self) -> Comparison {
        match self {
            Kind::Poa => Comparison::Approx,
            Kind::EqCheck | Kind::Learn => Comparison::AtMost,
            Kind::SmoothCheck | Kind::ComposeCheck => Comparison::AtLeast,
        }
    }
}

/// How an estimate is held against `bound ± tolerance`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Comparison {
    AtLeast,
    AtMost,
    Approx,
}

impl Comparison {
    pub fn holds(self, estimate: f64, bound: f64, tolerance: f64) -> bool {
        match self {
            Comparison::AtLeast => estimate >= bound - tolerance,
            Comparison::AtMost => estimate <= bound + tolerance,
            Comparison::Approx => (estimate - bound).abs() <= tolerance,
        }
    }
}

/// One strategy for everyone, or one per player.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StrategySpec {
    PerPlayer(Vec<Strategy>),
    Shared(Strategy),
}

impl StrategySpec {
    pub fn for_players(&self, n: usize) -> Result<Vec<Strategy>> {
        match self {
            StrategySpec::Shared(s) => Ok(vec![s.clone(); n]),
            StrategySpec::PerPlayer(v) if v.len() == n => Ok(v.clone()),
            StrategySpec::PerPlayer(v) => input(format!("{} strategies for {n} players", v.len())),
        }
    }
}

/// Valuation profiles (every combination of `valuations` over `players`)
/// crossed with bid-grid action profiles.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseSpec {
    #[serde(deserialize_with = "valuation_list")]
    pub valuations: Vec<Valuation>,
    pub players: usize,
    pub bid_step: f64,
    /// Keep only action profiles in which nobody overbids.
    #[serde(default)]
    pub no_overbidding: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnSpec {
    /// Fixed valuation of each player.
    #[serde(deserialize_with = "valuation_list")]
    pub valuations: ValuationProfile,
    pub bid_step: f64,
    #[serde(default)]
    pub learner: Algorithm,
    /// Independent runs, each with its own derived seed.
    #[serde(default = "one")]
    pub runs: usize,
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Experiment {
    pub id: String,
    pub kind: Kind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<AuctionFormat>,
    /// Single-good formats of a composition (`compose_check` only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constituents: Option<Vec<AuctionFormat>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior: Option<Prior>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strategy: Option<StrategySpec>,
    pub samples: usize,
    pub seed: u64,
    pub bound: f64,
    pub tolerance: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comparison: Option<Comparison>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bid_step: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quadrature: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolution: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deviation: Option<DeviationRule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub smoothness: Option<SmoothnessParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cases: Option<CaseSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learning: Option<LearnSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub floor: Option<Floor>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub exhaustive: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Suite {
    pub experiments: Vec<Experiment>,
}

/// Command-line overrides applied to every experiment before it runs.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub samples: Option<usize>,
    pub exhaustive: bool,
}

fn require<'a, T>(field: &'a Option<T>, name: &str, kind: Kind) -> Result<&'a T> {
    field
        .as_ref()
        .ok_or_else(|| Error::Input(format!("`{name}` is required for kind {}", kind.name())))
}

impl Experiment {
    pub fn comparison(&self) -> Comparison {
        self.comparison.unwrap_or(self.kind.default_comparison())
    }

    /// SHA-256 of the canonical JSON form, first 16 hex digits.
    pub fn config_hash(&self) -> String {
        let text = serde_json::to_string(self).expect("experiments serialize");
        let digest = Sha256::digest(text.as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.check().map_err(|e| match e {
            Error::Input(m) => Error::Input(format!("experiment `{}`: {m}", self.id)),
            other => other,
        })
    }

    fn check(&self) -> Result<()> {
        let k = self.kind;
        if self.id.is_empty() {
            return input("empty id");
        }
        if self.samples < 1 {
            return input("samples must be >= 1");
        }
        if !(self.tolerance.is_finite() && self.tolerance > 0.0) {
            return input(format!("tolerance must be > 0, got {}", self.tolerance));
        }
        if !self.bound.is_finite() {
            return input("bound must be finite");
        }
        if let Some(f) = &self.format {
            f.validate()?;
        }
        if let Some(p) = &self.prior {
            p.validate()?;
        }
        if let Some(s) = &self.smoothness {
            s.validate()?;
            s.poa_bound()?;
        }
        match k {
            Kind::Poa | Kind::EqCheck => {
                let f = require(&self.format, "format", k)?;
                let prior = require(&self.prior, "prior", k)?;
                let strategies = require(&self.strategy, "strategy", k)?.for_players(prior.players())?;
                for s in &strategies {
                    s.validate(f.items())?;
                }
                if k == Kind::EqCheck {
                    positive(*require(&self.bid_step, "bid_step", k)?, "bid_step")?;
                }
            }
            Kind::SmoothCheck => {
                require(&self.format, "format", k)?;
                require(&self.deviation, "deviation", k)?;
                require(&self.smoothness, "smoothness", k)?;
                check_cases(require(&self.cases, "cases", k)?)?;
            }
            Kind::ComposeCheck => {
                if self.format.is_none() && self.constituents.is_none() {
                    return input("`format` or `constituents` is required for kind compose_check");
                }
                match require(&self.deviation, "deviation", k)? {
                    DeviationRule::Composed { .. } => {}
                    _ => return input("compose_check needs a `composed` deviation rule"),
                }
                require(&self.smoothness, "smoothness", k)?;
                check_cases(require(&self.cases, "cases", k)?)?;
            }
            Kind::Learn => {
                let f = require(&self.format, "format", k)?;
                require(&self.smoothness, "smoothness", k)?;
                let l = require(&self.learning, "learning", k)?;
                positive(l.bid_step, "learning.bid_step")?;
                if l.runs < 1 {
                    return input("learning.runs must be >= 1");
                }
                for v in &l.valuations {
                    v.validate()?;
                    if v.item_count() != f.items() {
                        return input("learning valuations do not match the format's items");
                    }
                }
            }
        }
        Ok(())
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(samples) = o.samples {
            self.samples = samples;
        }
        self.exhaustive |= o.exhaustive;
    }
}

fn positive(x: f64, name: &str) -> Result<()> {
    if !(x.is_finite() && x > 0.0) {
        return input(format!("{name} must be > 0"));
    }
    Ok(())
}

fn check_cases(c: &CaseSpec) -> Result<()> {
    positive(c.bid_step, "cases.bid_step")?;
    if c.players < 1 || c.valuations.is_empty() {
        return input("cases need at least one player and one valuation");
    }
    c.valuations.iter().try_for_each(Valuation::validate)
}

fn config_error(e: serde_path_to_error::Error<serde_json::Error>) -> Error {
    let path = e.path().to_string();
    let inner = e.into_inner();
    let text = inner.to_string();
    let message = match text.rsplit_once(" at line ") {
        Some((m, _)) => m.to_string(),
        None => text,
    };
    Error::Config {
        path,
        line: inner.line(),
        column: inner.column(),
        message,
    }
}

fn deserialize<T: DeserializeOwned>(text: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(config_error)
}

impl Suite {
    /// Parses a suite, or a single experiment, and validates every entry.
    pub fn parse(text: &str) -> Result<Suite> {
        let value: serde_json::Value = deserialize(text)?;
        let suite = if value.get("experiments").is_some() {
            deserialize::<Suite>(text)?
        } else {
            Suite {
                experiments: vec![deserialize::<Experiment>(text)?],
            }
        };
        suite.validate()?;
        Ok(suite)
    }

    pub fn load(path: &Path) -> Result<Suite> {
        Suite::parse(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.experiments.is_empty() {
            return input("suite has no experiments");
        }
        let mut seen = HashSet::new();
        for e in &self.experiments {
            if !seen.insert(e.id.as_str()) {
                return input(format!("duplicate experiment id `{}`", e.id));
            }
            e.validate()?;
        }
        Ok(())
    }

    pub fn apply(&mut self, o: &Overrides) {
        self.experiments.iter_mut().for_each(|e| e.apply(o));
    }
}

/// Ratio-of-means estimate of `E[SW]/E[OPT]` for one prior and strategy profile.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PoaEstimate {
    pub welfare: f64,
    pub welfare_stderr: f64,
    pub opt: f64,
    pub opt_stderr: f64,
    pub ratio: f64,
    /// Delta-method standard error of the ratio.
    pub ratio_stderr: f64,
    /// Draws, or atoms in exhaustive mode.
    pub samples: usize,
    pub exhaustive: bool,
}

#[derive(Clone, Copy, Default)]
struct Moments {
    n: f64,
    sw: f64,
    opt: f64,
    sw2: f64,
    opt2: f64,
    cross: f64,
}

impl Moments {
    fn push(&mut self, sw: f64, opt: f64) {
        self.n += 1.0;
        self.sw += sw;
        self.opt += opt;
        self.sw2 += sw * sw;
        self.opt2 += opt * opt;
        self.cross += sw * opt;
    }

    fn merge(mut self, o: Moments) -> Moments {
        self.n += o.n;
        self.sw += o.sw;
        self.opt += o.opt;
        self.sw2 += o.sw2;
        self.opt2 += o.opt2;
        self.cross += o.cross;
        self
    }

    fn estimate(&self) -> PoaEstimate {
        let n = self.n;
        let (y, x) = (self.sw / n, self.opt / n);
        let ratio = if x > 0.0 { y / x } else { 1.0 };
        let (mut sy, mut sx, mut r_se) = (0.0, 0.0, 0.0);
        if n >= 2.0 {
            let c = n / (n - 1.0);
            let vyy = ((self.sw2 / n - y * y) * c).max(0.0);
            let vxx = ((self.opt2 / n - x * x) * c).max(0.0);
            let vxy = (self.cross / n - x * y) * c;
            sy = (vyy / n).sqrt();
            sx = (vxx / n).sqrt();
            if x > 0.0 {
                let v = (vyy - 2.0 * ratio * vxy + ratio * ratio * vxx).max(0.0);
                r_se = (v / n).sqrt() / x;
            }
        }
        PoaEstimate {
            welfare: y,
            welfare_stderr: sy,
            opt: x,
            opt_stderr: sx,
            ratio,
            ratio_stderr: r_se,
            samples: n as usize,
            exhaustive: false,
        }
    }
}

fn check_poa_inputs(f: &dyn Mechanism, prior: &Prior, strategies: &[Strategy]) -> Result<()> {
    prior.validate()?;
    if strategies.len() != prior.players() {
        return input(format!("{} strategies for {} players", strategies.len(), prior.players()));
    }
    strategies.iter().try_for_each(|s| s.validate(f.items()))
}

/// Draws valuations from the prior and actions from the strategies, and
/// accumulates welfare and OPT. Draws are split into fixed chunks with
/// derived seeds, so the result does not depend on the thread count.
pub fn poa_estimate(
    f: &dyn Mechanism,
    prior: &Prior,
    strategies: &[Strategy],
    samples: usize,
    seed: u64,
) -> Result<PoaEstimate> {
    check_poa_inputs(f, prior, strategies)?;
    if samples < 1 {
        return input("samples must be >= 1");
    }
    let m = f.items();
    let chunks = samples.div_ceil(CHUNK);
    let parts = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = seeded(derive_seed(seed, &[c as u64]));
            let mut acc = Moments::default();
            for _ in 0..CHUNK.min(samples - c * CHUNK) {
                let v = prior.sample(&mut rng);
                let actions = strategies
                    .iter()
                    .zip(&v)
                    .map(|(s, vi)| s.sample(vi, m, &mut rng))
                    .collect::<Result<Vec<_>>>()?;
                let b = BidProfile::from_players(&actions)?;
                acc.push(f.social_welfare(&b, &v)?, f.opt(&v)?.welfare);
            }
            Ok(acc)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(parts.into_iter().fold(Moments::default(), Moments::merge).estimate())
}

/// Joint atoms the exhaustive evaluator would visit, when the prior and all
/// strategies have finite support.
pub fn exhaustive_size(prior: &Prior, strategies: &[Strategy]) -> Option<usize> {
    let atoms = prior.atom_count()?;
    strategies.iter().try_fold(atoms, |acc, s| match s {
        Strategy::RandomItem { .. } => None,
        _ => acc.checked_mul(s.atom_count(1)?),
    })
}

fn weighted_actions(
    strategies: &[Strategy],
    v: &[Valuation],
    m: usize,
    resolution: usize,
) -> Result<Vec<(Vec<PlayerBid>, f64)>> {
    let mut out: Vec<(Vec<PlayerBid>, f64)> = vec![(Vec::new(), 1.0)];
    for (s, vi) in strategies.iter().zip(v) {
        let atoms = s.atoms(vi, m, resolution)?;
        let mut next = Vec::with_capacity(out.len() * atoms.len());
        for (prefix, p) in &out {
            for (a, q) in &atoms {
                let mut row = prefix.clone();
                row.push(a.clone());
                next.push((row, p * q));
            }
        }
        out = next;
    }
    Ok(out)
}

/// Exact expectations over the prior's atoms and the strategies' atoms.
/// Uniform marginals use `quadrature` nodes and continuous mixtures
/// `resolution` atoms per item.
pub fn poa_exhaustive(
    f: &dyn Mechanism,
    prior: &Prior,
    strategies: &[Strategy],
    quadrature: usize,
    resolution: usize,
) -> Result<PoaEstimate> {
    check_poa_inputs(f, prior, strategies)?;
    let m = f.items();
    let size = strategies
        .iter()
        .fold(prior.discretized_size(quadrature), |acc, s| {
            acc.saturating_mul(s.atom_count(resolution).unwrap_or(usize::MAX))
        });
    if size > MAX_FORCED_ATOMS {
        return Err(Error::Resource(format!(
            "{size} atoms exceed the exhaustive limit of {MAX_FORCED_ATOMS}"
        )));
    }
    let table = prior.discretized(quadrature);
    let parts = table
        .par_iter()
        .map(|(v, w)| {
            let opt = f.opt(v)?.welfare;
            let mut sw = 0.0;
            let mut count = 0;
            for (actions, p) in weighted_actions(strategies, v, m, resolution)? {
                sw += p * f.social_welfare(&BidProfile::from_players(&actions)?, v)?;
                count += 1;
            }
            Ok((w * sw, w * opt, count))
        })
        .collect::<Result<Vec<_>>>()?;
    let (welfare, opt, count) = parts
        .into_iter()
        .fold((0.0, 0.0, 0), |a, b| (a.0 + b.0, a.1 + b.1, a.2 + b.2));
    Ok(PoaEstimate {
        welfare,
        welfare_stderr: 0.0,
        opt,
        opt_stderr: 0.0,
        ratio: if opt > 0.0 { welfare / opt } else { 1.0 },
        ratio_stderr: 0.0,
        samples: count,
        exhaustive: true,
    })
}

/// Outcome of one experiment: the CSV row plus replay metadata.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunRecord {
    pub experiment: String,
    pub kind: Kind,
    pub config_hash: String,
    pub seed: u64,
    pub samples: usize,
    pub estimate: f64,
    pub stderr: f64,
    pub bound: f64,
    pub tolerance: f64,
    pub comparison: Comparison,
    pub pass: bool,
    /// Kind-specific numbers behind the estimate.
    pub details: serde_json::Value,
    pub error: Option<String>,
}

struct Measured {
    estimate: f64,
    stderr: f64,
    samples: usize,
    /// Extra conditions beyond the bound comparison.
    ok: bool,
    details: serde_json::Value,
}

/// Runs one experiment. Errors inside the run become a failing record.
pub fn run_experiment(e: &Experiment) -> RunRecord {
    let comparison = e.comparison();
    let mut rec = RunRecord {
        experiment: e.id.clone(),
        kind: e.kind,
        config_hash: e.config_hash(),
        seed: e.seed,
        samples: e.samples,
        estimate: f64::NAN,
        stderr: f64::NAN,
        bound: e.bound,
        tolerance: e.tolerance,
        comparison,
        pass: false,
        details: serde_json::Value::Null,
        error: None,
    };
    match e.validate().and_then(|_| measure(e)) {
        Ok(m) => {
            rec.estimate = m.estimate;
            rec.stderr = m.stderr;
            rec.samples = m.samples;
            rec.pass = m.ok && comparison.holds(m.estimate, e.bound, e.tolerance);
            rec.details = m.details;
        }
        Err(err) => rec.error = Some(err.to_string()),
    }
    rec
}

/// Runs every experiment concurrently; records come back sorted by id.
pub fn run_suite(suite: &Suite) -> Vec<RunRecord> {
    let mut out: Vec<RunRecord> = suite.experiments.par_iter().map(run_experiment).collect();
    out.sort_by(|a, b| a.experiment.cmp(&b.experiment));
    out
}

fn measure(e: &Experiment) -> Result<Measured> {
    match e.kind {
        Kind::Poa => measure_poa(e),
        Kind::EqCheck => measure_eq(e),
        Kind::SmoothCheck | Kind::ComposeCheck => measure_smooth(e),
        Kind::Learn => measure_learn(e),
    }
}

fn game(e: &Experiment) -> Result<(AuctionFormat, Prior, Vec<Strategy>)> {
    let f = *require(&e.format, "format", e.kind)?;
    let prior = require(&e.prior, "prior", e.kind)?.clone();
    let strategies = require(&e.strategy, "strategy", e.kind)?.for_players(prior.players())?;
    Ok((f, prior, strategies))
}

fn measure_poa(e: &Experiment) -> Result<Measured> {
    let (f, prior, strategies) = game(e)?;
    let quadrature = e.quadrature.unwrap_or(DEFAULT_QUADRATURE_POINTS);
    let resolution = e.resolution.unwrap_or(DEFAULT_RESOLUTION);
    let auto = exhaustive_size(&prior, &strategies).is_some_and(|n| n <= EXHAUSTIVE_ATOMS);
    let est = if e.exhaustive || auto {
        poa_exhaustive(&f, &prior, &strategies, quadrature, resolution)?
    } else {
        poa_estimate(&f, &prior, &strategies, e.samples, e.seed)?
    };
    let within = est.ratio >= 0.0 && est.ratio <= 1.0 + 3.0 * est.ratio_stderr + 1e-12;
    Ok(Measured {
        estimate: est.ratio,
        stderr: est.ratio_stderr,
        samples: est.samples,
        ok: within,
        details: json!({ "label": POA_LABEL, "estimate": est }),
    })
}

fn measure_eq(e: &Experiment) -> Result<Measured> {
    let (f, prior, strategies) = game(e)?;
    let grid = default_grid(&prior, *require(&e.bid_step, "bid_step", e.kind)?)?;
    let defaults = EvalOptions::default();
    let opts = EvalOptions {
        quadrature: e.quadrature.unwrap_or(defaults.quadrature),
        resolution: e.resolution.unwrap_or(defaults.resolution),
        samples: e.samples,
        seed: e.seed,
        max_scenarios: if e.exhaustive { MAX_FORCED_ATOMS } else { defaults.max_scenarios },
        monte_carlo: false,
    };
    let report = epsilon_bne_check(&f, &strategies, &prior, &grid, &opts)?;
    let worst = report
        .rows
        .iter()
        .find(|r| r.regret == report.epsilon)
        .map(|r| json!({ "player": r.player, "value": r.value, "best_deviation": format_action(&r.best_deviation) }));
    Ok(Measured {
        estimate: report.epsilon,
        stderr: report.stderr,
        samples: e.samples,
        ok: true,
        details: json!({ "types_checked": report.rows.len(), "grid_points": grid.len(), "worst": worst }),
    })
}

/// Builds the case set described by `plan` for format `f`.
pub fn build_cases(f: &dyn Mechanism, plan: &CaseSpec, generator: &str) -> Result<CaseSet> {
    check_cases(plan)?;
    let valuations = profiles(&plan.valuations, plan.players)?;
    let cap = plan.valuations.iter().map(Valuation::max_item_value).fold(0.0, f64::max);
    let grid = BidGrid::new(plan.bid_step, if cap > 0.0 { cap } else { plan.bid_step })?;
    if plan.no_overbidding {
        CaseSet::no_overbidding(generator, f, valuations, &grid)
    } else {
        Ok(CaseSet::product(generator, valuations, grid_profiles(f, &grid, plan.players)?))
    }
}

fn measure_smooth(e: &Experiment) -> Result<Measured> {
    let params = *require(&e.smoothness, "smoothness", e.kind)?;
    let rule = require(&e.deviation, "deviation", e.kind)?;
    let plan = require(&e.cases, "cases", e.kind)?;
    let opts = VerifyOptions {
        samples: e.samples.max(2),
        seed: e.seed,
        floor: e.floor.unwrap_or(Floor::Default),
    };
    let report: SmoothnessReport = if e.kind == Kind::ComposeCheck {
        let formats = match (&e.constituents, &e.format) {
            (Some(c), _) => c.clone(),
            (None, Some(f)) => (0..f.items()).map(|j| f.constituent(j)).collect::<Result<_>>()?,
            (None, None) => return input("`format` or `constituents` is required for kind compose_check"),
        };
        let composed = compose(&formats)?;
        let DeviationRule::Composed { constituents } = rule else {
            return input("compose_check needs a `composed` deviation rule");
        };
        let cases = build_cases(&composed, plan, &e.id)?;
        verify_composed_smoothness(&composed, constituents, &params, &cases, &opts)?
    } else {
        let f = *require(&e.format, "format", e.kind)?;
        let cases = build_cases(&f, plan, &e.id)?;
        verify_smoothness(&f, rule, &params, &cases, &opts)?
    };
    // a failed certificate guarantees nothing
    let certified = if report.pass { params.poa_bound()? } else { 0.0 };
    Ok(Measured {
        estimate: certified,
        stderr: report.witness_stderr,
        samples: opts.samples,
        ok: report.pass,
        details: json!({
            "cases": report.rows.len(),
            "failures": report.failures,
            "min_margin": report.min_margin,
            "witness_case": report.witness.as_ref().map(|w| w.case_id),
            "lambda": params.lambda,
            "mu": params.mu,
            "mode": params.mode,
        }),
    })
}

fn measure_learn(e: &Experiment) -> Result<Measured> {
    let f = *require(&e.format, "format", e.kind)?;
    let params = *require(&e.smoothness, "smoothness", e.kind)?;
    let plan = require(&e.learning, "learning", e.kind)?;
    let n = plan.valuations.len();
    let algorithms: Vec<Algorithm> = vec![plan.learner.clone(); n];
    let runs = (0..plan.runs)
        .into_par_iter()
        .map(|r| {
            let grids = plan
                .valuations
                .iter()
                .map(|v| learner_grid(&f, v, plan.bid_step))
                .collect::<Result<Vec<_>>>()?;
            let seed = derive_seed(e.seed, &[r as u64]);
            let opts = RunOptions {
                horizon: e.samples,
                seed,
                resample: None,
            };
            let seq = run_repeated(&f, &plan.valuations, grids, &algorithms, &opts)?;
            Ok((seed, welfare_vs_bound(&f, &seq, &params)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let worst = runs
        .iter()
        .flat_map(|(_, w)| w.regrets.iter().copied())
        .fold(f64::NEG_INFINITY, f64::max);
    let details: Vec<_> = runs
        .iter()
        .map(|(seed, w)| {
            json!({
                "seed": seed,
                "average_welfare": w.average_welfare,
                "opt": w.opt,
                "corrected_bound": w.corrected_bound,
                "regrets": w.regrets,
                "pass": w.pass,
            })
        })
        .collect();
    Ok(Measured {
        estimate: worst,
        stderr: 0.0,
        samples: e.samples,
        ok: runs.iter().all(|(_, w)| w.pass),
        details: json!({ "runs": details }),
    })
}

/// CSV columns: experiment, seed, samples, estimate, stderr, bound, tolerance, pass.
pub fn write_results<W: io::Write>(w: W, records: &[RunRecord]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["experiment", "seed", "samples", "estimate", "stderr", "bound", "tolerance", "pass"])?;
    for r in records {
        out.write_record([
            r.experiment.clone(),
            r.seed.to_string(),
            r.samples.to_string(),
            r.estimate.to_string(),
            r.stderr.to_string(),
            r.bound.to_string(),
            r.tolerance.to_string(),
            r.pass.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// `<csv path>.meta.json`.
pub fn meta_path(csv: &Path) -> PathBuf {
    let mut name = csv.as_os_str().to_owned();
    name.push(".meta.json");
    PathBuf::from(name)
}

/// Replay metadata: config hash, seed, comparison and details per experiment.
pub fn write_meta<W: io::Write>(w: W, records: &[RunRecord]) -> Result<()> {
    let meta = json!({ "label": POA_LABEL, "experiments": records });
    serde_json::to_writer_pretty(w, &meta)?;
    Ok(())
}

/// Writes the CSV and its metadata sidecar.
pub fn persist(csv: &Path, records: &[RunRecord]) -> Result<()> {
    write_results(fs::File::create(csv)?, records)?;
    write_meta(fs::File::create(meta_path(csv))?, records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prior::Marginal;
    use crate::strategy::{bad_example_mixed_strategy, BidFunction};

    fn uniform2() -> Prior {
        Prior::independent(vec![Marginal::Uniform { lo: 0.0, hi: 1.0 }; 2]).unwrap()
    }

    fn half() -> Strategy {
        Strategy::closed(BidFunction::Linear { slope: 0.5 })
    }

    fn poa_experiment() -> Experiment {
        Experiment {
            id: "fpa".into(),
            kind: Kind::Poa,
            format: Some(AuctionFormat::FirstPrice),
            constituents: None,
            prior: Some(uniform2()),
            strategy: Some(StrategySpec::Shared(half())),
            samples: 20_000,
            seed: 3,
            bound: 1.0,
            tolerance: 0.01,
            comparison: None,
            bid_step: None,
            quadrature: None,
            resolution: None,
            deviation: None,
            smoothness: None,
            cases: None,
            learning: None,
            floor: None,
            exhaustive: false,
        }
    }

    #[test]
    fn symmetric_first_price_is_efficient() {
        let est = poa_estimate(&AuctionFormat::FirstPrice, &uniform2(), &[half(), half()], 50_000, 1).unwrap();
        assert!((est.ratio - 1.0).abs() < 1e-12);
        assert!((est.opt - 2.0 / 3.0).abs() < 0.01);
    }

    #[test]
    fn bad_example_ratio() {
        let v = Valuation::unit_demand(vec![1.0, 1.0]).unwrap();
        let prior = Prior::point(vec![v.clone(), v]);
        let f = AuctionFormat::SimultaneousItems {
            items: 2,
            rule: crate::auction::ItemRule::FirstPrice,
            one_item_bids: false,
        };
        let s = bad_example_mixed_strategy();
        let est = poa_estimate(&f, &prior, &[s.clone(), s], 40_000, 9).unwrap();
        assert!((est.welfare - 1.5).abs() < 0.02, "{}", est.welfare);
        assert!((est.ratio - 0.75).abs() < 0.01);
    }

    #[test]
    fn exhaustive_matches_a_hand_sum() {
        // values 1 or 3 each w.p. 1/2, truthful second price: SW = OPT always
        let m = Marginal::Discrete {
            support: vec![1.0, 3.0],
            weights: vec![0.5, 0.5],
        };
        let prior = Prior::independent(vec![m.clone(), m]).unwrap();
        let s = Strategy::closed(BidFunction::Truthful);
        let est = poa_exhaustive(&AuctionFormat::SecondPrice, &prior, &[s.clone(), s], 0, 1).unwrap();
        assert!((est.opt - 2.5).abs() < 1e-12);
        assert_eq!(est.ratio, 1.0);
        assert_eq!(est.samples, 4);

        // constant bids 0: player 0 always wins, E[SW] = E[v_0] = 2, E[OPT] = 2.5
        let prior = Prior::independent(vec![
            Marginal::Discrete {
                support: vec![1.0, 3.0],
                weights: vec![0.5, 0.5],
            };
            2
        ])
        .unwrap();
        let zero = Strategy::closed(BidFunction::Constant { bid: 0.0 });
        let est = poa_exhaustive(&AuctionFormat::FirstPrice, &prior, &[zero.clone(), zero], 0, 1).unwrap();
        assert!((est.ratio - 0.8).abs() < 1e-12);
    }

    #[test]
    fn sampled_estimate_converges_to_exhaustive() {
        let m = Marginal::Discrete {
            support: vec![0.2, 0.5, 1.0],
            weights: vec![0.3, 0.3, 0.4],
        };
        let prior = Prior::independent(vec![m.clone(), m]).unwrap();
        let s = [Strategy::closed(BidFunction::Constant { bid: 0.1 }), half()];
        let exact = poa_exhaustive(&AuctionFormat::FirstPrice, &prior, &s, 0, 1).unwrap();
        let est = poa_estimate(&AuctionFormat::FirstPrice, &prior, &s, 100_000, 5).unwrap();
        assert!((est.ratio - exact.ratio).abs() < 4.0 * est.ratio_stderr + 1e-9);
        assert!(est.ratio_stderr > 0.0);
    }

    #[test]
    fn estimate_is_thread_count_independent() {
        let s = [Strategy::closed(BidFunction::Constant { bid: 0.3 }), half()];
        let a = poa_estimate(&AuctionFormat::FirstPrice, &uniform2(), &s, 10_000, 4).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool
            .install(|| poa_estimate(&AuctionFormat::FirstPrice, &uniform2(), &s, 10_000, 4))
            .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn undefined_strategy_is_an_error() {
        let grid = Strategy::Grid(crate::strategy::GridStrategy::pure(&[0.5], &[0.2]));
        let r = poa_estimate(&AuctionFormat::FirstPrice, &uniform2(), &[grid.clone(), grid], 10, 0);
        assert!(r.is_err());
    }

    #[test]
    fn auto_exhaustive_on_finite_games() {
        let m = Marginal::Discrete {
            support: vec![1.0],
            weights: vec![1.0],
        };
        let prior = Prior::independent(vec![m.clone(), m]).unwrap();
        assert_eq!(exhaustive_size(&prior, &[half(), half()]), Some(1));
        assert_eq!(exhaustive_size(&uniform2(), &[half(), half()]), None);
        let mut e = poa_experiment();
        e.prior = Some(prior);
        let rec = run_experiment(&e);
        assert!(rec.details["estimate"]["exhaustive"].as_bool().unwrap());
        assert_eq!(rec.stderr, 0.0);
        assert!(rec.pass);
    }

    #[test]
    fn tampered_bound_fails() {
        let mut e = poa_experiment();
        assert!(run_experiment(&e).pass);
        e.bound = 0.5;
        let rec = run_experiment(&e);
        assert!(!rec.pass);
        assert!(rec.error.is_none());
    }

    #[test]
    fn comparisons() {
        assert!(Comparison::AtLeast.holds(0.95, 1.0, 0.06));
        assert!(!Comparison::AtLeast.holds(0.9, 1.0, 0.06));
        assert!(Comparison::AtMost.holds(0.011, 0.0, 0.02));
        assert!(!Comparison::Approx.holds(1.2, 1.0, 0.1));
    }

    #[test]
    fn parse_errors_carry_location() {
        let text = "{\n  \"id\": \"x\",\n  \"kind\": \"poa\",\n  \"samples\": \"many\"\n}";
        match Suite::parse(text) {
            Err(Error::Config { path, line, .. }) => {
                assert_eq!(path, "samples");
                assert_eq!(line, 4);
            }
            other => panic!("expected a config error, got {other:?}"),
        }
        let text = r#"{"experiments": [{"id": "a", "kind": "poa", "samples": 1, "seed": 0, "bound": 1, "tolerance": 0.1, "colour": 1}]}"#;
        match Suite::parse(text) {
            Err(Error::Config { path, .. }) => assert_eq!(path, "experiments[0].colour"),
            other => panic!("expected a config error, got {other:?}"),
        }
    }

    #[test]
    fn semantic_errors_name_the_experiment() {
        let text = r#"{"id": "a", "kind": "poa", "samples": 1, "seed": 0, "bound": 1, "tolerance": 0.1}"#;
        let err = Suite::parse(text).unwrap_err().to_string();
        assert!(err.contains("`a`") && err.contains("format"), "{err}");
        let text = r#"{"id": "a", "kind": "poa", "samples": 0, "seed": 0, "bound": 1, "tolerance": 0.1}"#;
        assert!(Suite::parse(text).is_err());
    }

    #[test]
    fn config_round_trip_and_hash() {
        let e = poa_experiment();
        let text = serde_json::to_string_pretty(&Suite { experiments: vec![e.clone()] }).unwrap();
        let back = Suite::parse(&text).unwrap();
        assert_eq!(back.experiments[0], e);
        assert_eq!(back.experiments[0].config_hash(), e.config_hash());
        let mut other = e.clone();
        other.seed += 1;
        assert_ne!(other.config_hash(), e.config_hash());
    }

    #[test]
    fn suite_rows_sorted_and_replayable() {
        let mut b = poa_experiment();
        b.id = "b".into();
        let mut a = poa_experiment();
        a.id = "a".into();
        a.samples = 5000;
        let suite = Suite { experiments: vec![b, a] };
        let first = run_suite(&suite);
        assert_eq!(first[0].experiment, "a");
        let mut x = Vec::new();
        let mut y = Vec::new();
        write_results(&mut x, &first).unwrap();
        write_results(&mut y, &run_suite(&suite)).unwrap();
        assert_eq!(x, y);
        let text = String::from_utf8(x).unwrap();
        assert!(text.starts_with("experiment,seed,samples,estimate,stderr,bound,tolerance,pass\n"));
    }

    #[test]
    fn persist_writes_the_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let csv = dir.path().join("out.csv");
        let recs = run_suite(&Suite { experiments: vec![poa_experiment()] });
        persist(&csv, &recs).unwrap();
        let meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(meta_path(&csv)).unwrap()).unwrap();
        assert_eq!(meta["label"], POA_LABEL);
        assert_eq!(meta["experiments"][0]["config_hash"], recs[0].config_hash);
    }

    #[test]
    fn overrides_apply() {
        let mut s = Suite { experiments: vec![poa_experiment()] };
        s.apply(&Overrides {
            seed: Some(99),
            samples: Some(7),
            exhaustive: true,
        });
        assert_eq!(s.experiments[0].seed, 99);
        assert_eq!(s.experiments[0].samples, 7);
        assert!(s.experiments[0].exhaustive);
    }
}
