//! Expected utilities against strategy profiles, best responses on a bid
//! grid, ε-equilibrium checks and pure-equilibrium enumeration.

use std::io;

use rayon::prelude::*;

use crate::auction::{BidGrid, BidProfile, Mechanism, PlayerBid};
use crate::error::{input, Error, Result};
use crate::prior::{Prior, DEFAULT_QUADRATURE_POINTS};
use crate::rng::{derive_seed, seeded};
use crate::strategy::{GridStrategy, Strategy};
use crate::valuation::{ItemSet, Valuation};

/// Joint profiles above this are refused by [`pure_ne_enumerate`].
pub const MAX_JOINT_PROFILES: u64 = 10_000_000;

#[derive(Clone, Debug, PartialEq)]
pub struct EvalOptions {
    /// Nodes per uniform marginal.
    pub quadrature: usize,
    /// Atoms per item for continuous mixed strategies.
    pub resolution: usize,
    /// Draws used when exact enumeration is too large or disabled.
    pub samples: usize,
    pub seed: u64,
    /// Largest opponent-scenario table evaluated exactly.
    pub max_scenarios: usize,
    /// Always sample, even when exact enumeration is possible.
    pub monte_carlo: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            quadrature: DEFAULT_QUADRATURE_POINTS,
            resolution: 1000,
            samples: 10_000,
            seed: 0,
            max_scenarios: 200_000,
            monte_carlo: false,
        }
    }
}

/// A mean with its Monte Carlo standard error (zero for exact values).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
}

fn check_game(f: &dyn Mechanism, strategies: &[Strategy], prior: &Prior) -> Result<()> {
    prior.validate()?;
    if strategies.len() != prior.players() {
        return input(format!(
            "{} strategies for {} players",
            strategies.len(),
            prior.players()
        ));
    }
    for s in strategies {
        s.validate(f.items())?;
    }
    Ok(())
}

fn placeholder(items: usize) -> PlayerBid {
    PlayerBid {
        bids: vec![0.0; items],
        entered: ItemSet::EMPTY,
    }
}

/// Weighted bid profiles of the opponents of `i` (slot `i` is a placeholder).
fn scenarios(
    f: &dyn Mechanism,
    i: usize,
    vi: &Valuation,
    strategies: &[Strategy],
    prior: &Prior,
    opts: &EvalOptions,
) -> Result<Vec<(BidProfile, f64)>> {
    let m = f.items();
    let mut out = Vec::new();
    for (profile, w) in prior.conditional_profiles(i, vi, opts.quadrature) {
        let mut partial: Vec<(Vec<PlayerBid>, f64)> = vec![(Vec::with_capacity(profile.len()), w)];
        for (j, vj) in profile.iter().enumerate() {
            let atoms = if j == i {
                vec![(placeholder(m), 1.0)]
            } else {
                strategies[j].atoms(vj, m, opts.resolution)?
            };
            let mut next = Vec::with_capacity(partial.len() * atoms.len());
            for (actions, p) in &partial {
                for (a, q) in &atoms {
                    let mut acts = actions.clone();
                    acts.push(a.clone());
                    next.push((acts, p * q));
                }
            }
            partial = next;
        }
        for (actions, p) in partial {
            out.push((BidProfile::from_players(&actions)?, p));
        }
    }
    Ok(out)
}

fn scenario_count(i: usize, strategies: &[Strategy], prior: &Prior, opts: &EvalOptions) -> usize {
    strategies
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != i)
        .map(|(_, s)| s.atom_count(opts.resolution).unwrap_or(usize::MAX))
        .fold(prior.conditional_size(i, opts.quadrature), |a, b| a.saturating_mul(b))
}

/// Expected utility of player `i` with type `vi` for each candidate action,
/// against the others' strategies under the prior conditioned on `vi`.
pub fn candidate_utilities(
    f: &dyn Mechanism,
    i: usize,
    vi: &Valuation,
    candidates: &[PlayerBid],
    strategies: &[Strategy],
    prior: &Prior,
    opts: &EvalOptions,
) -> Result<Vec<Estimate>> {
    let exact = !opts.monte_carlo && scenario_count(i, strategies, prior, opts) <= opts.max_scenarios;
    if exact {
        let table = scenarios(f, i, vi, strategies, prior, opts)?;
        return Ok(candidates
            .iter()
            .map(|a| Estimate {
                mean: table.iter().map(|(b, w)| w * f.utility_with(b, i, a, vi)).sum(),
                stderr: 0.0,
            })
            .collect());
    }
    if opts.samples < 2 {
        return input("Monte Carlo evaluation needs at least 2 samples");
    }
    let m = f.items();
    let mut rng = seeded(opts.seed);
    let mut sum = vec![0.0; candidates.len()];
    let mut sq = vec![0.0; candidates.len()];
    for _ in 0..opts.samples {
        let profile = prior.sample_conditional(i, vi, &mut rng)?;
        let mut actions = Vec::with_capacity(profile.len());
        for (j, vj) in profile.iter().enumerate() {
            actions.push(if j == i {
                placeholder(m)
            } else {
                strategies[j].sample(vj, m, &mut rng)?
            });
        }
        let b = BidProfile::from_players(&actions)?;
        for (k, a) in candidates.iter().enumerate() {
            let u = f.utility_with(&b, i, a, vi);
            sum[k] += u;
            sq[k] += u * u;
        }
    }
    let n = opts.samples as f64;
    Ok(sum
        .iter()
        .zip(&sq)
        .map(|(s, q)| {
            let mean = s / n;
            let var = ((q / n - mean * mean) * n / (n - 1.0)).max(0.0);
            Estimate {
                mean,
                stderr: (var / n).sqrt(),
            }
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct BestResponse {
    pub action: PlayerBid,
    pub utility: f64,
    pub stderr: f64,
    /// Estimated utility of every grid action, in grid order.
    pub utilities: Vec<Estimate>,
}

fn argmax(est: &[Estimate]) -> usize {
    let mut best = 0;
    for (k, e) in est.iter().enumerate() {
        if e.mean > est[best].mean {
            best = k;
        }
    }
    best
}

/// Best grid action of player `i` with type `vi`; the first maximizer wins ties.
pub fn best_response(
    f: &dyn Mechanism,
    i: usize,
    vi: &Valuation,
    strategies: &[Strategy],
    prior: &Prior,
    grid: &BidGrid,
    opts: &EvalOptions,
) -> Result<BestResponse> {
    check_game(f, strategies, prior)?;
    let candidates = f.action_space(grid)?;
    let utilities = candidate_utilities(f, i, vi, &candidates, strategies, prior, opts)?;
    let k = argmax(&utilities);
    Ok(BestResponse {
        action: candidates[k].clone(),
        utility: utilities[k].mean,
        stderr: utilities[k].stderr,
        utilities,
    })
}

/// Bid grid capped at the largest single-item value any player can have.
pub fn default_grid(prior: &Prior, step: f64) -> Result<BidGrid> {
    let cap = (0..prior.players())
        .map(|i| prior.max_item_value(i))
        .fold(0.0, f64::max);
    BidGrid::new(step, if cap > 0.0 { cap } else { step })
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegretRow {
    pub player: usize,
    pub value: Valuation,
    /// Probability of this type under the (discretized) marginal.
    pub weight: f64,
    pub equilibrium_utility: f64,
    pub best_deviation: PlayerBid,
    pub deviation_utility: f64,
    pub regret: f64,
    pub stderr: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EqReport {
    pub rows: Vec<RegretRow>,
    /// Largest regret over all rows.
    pub epsilon: f64,
    /// Standard error of the row attaining `epsilon`.
    pub stderr: f64,
}

/// Compact text form of an action: `b` for one item, `j:b` pairs otherwise.
pub fn format_action(a: &PlayerBid) -> String {
    if a.bids.len() == 1 {
        return format!("{}", a.bids[0]);
    }
    a.entered
        .iter()
        .map(|j| format!("{j}:{}", a.bids[j]))
        .collect::<Vec<_>>()
        .join(" ")
}

fn format_value(v: &Valuation) -> String {
    if v.item_count() == 1 {
        format!("{}", v.item_value(0))
    } else {
        serde_json::to_string(v).expect("valuations serialize")
    }
}

impl EqReport {
    /// CSV columns: player, value, best_deviation, regret, stderr.
    pub fn write_csv<W: io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["player", "value", "best_deviation", "regret", "stderr"])?;
        for r in &self.rows {
            out.write_record([
                r.player.to_string(),
                format_value(&r.value),
                format_action(&r.best_deviation),
                r.regret.to_string(),
                r.stderr.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Regret of every type of every player against the best grid deviation.
/// Types are the marginal's atoms, or quadrature nodes for uniform marginals.
pub fn epsilon_bne_check(
    f: &dyn Mechanism,
    strategies: &[Strategy],
    prior: &Prior,
    grid: &BidGrid,
    opts: &EvalOptions,
) -> Result<EqReport> {
    check_game(f, strategies, prior)?;
    let m = f.items();
    let candidates = f.action_space(grid)?;
    let tasks: Vec<(usize, usize, Valuation, f64)> = (0..prior.players())
        .flat_map(|i| {
            prior
                .type_points(i, opts.quadrature)
                .into_iter()
                .enumerate()
                .map(move |(k, (v, w))| (i, k, v, w))
        })
        .filter(|t| t.3 > 0.0)
        .collect();
    let rows = tasks
        .par_iter()
        .map(|(i, k, vi, weight)| {
            let own = strategies[*i].atoms(vi, m, opts.resolution)?;
            let mut all = candidates.clone();
            all.extend(own.iter().map(|(a, _)| a.clone()));
            let local = EvalOptions {
                seed: derive_seed(opts.seed, &[*i as u64, *k as u64]),
                ..opts.clone()
            };
            let est = candidate_utilities(f, *i, vi, &all, strategies, prior, &local)?;
            let (grid_est, own_est) = est.split_at(candidates.len());
            let eq = own_est.iter().zip(&own).map(|(e, (_, p))| p * e.mean).sum::<f64>();
            let eq_se = own_est.iter().zip(&own).map(|(e, (_, p))| p * e.stderr).sum::<f64>();
            let best = argmax(grid_est);
            let dev = grid_est[best];
            Ok(RegretRow {
                player: *i,
                value: vi.clone(),
                weight: *weight,
                equilibrium_utility: eq,
                best_deviation: candidates[best].clone(),
                deviation_utility: dev.mean,
                regret: (dev.mean - eq).max(0.0),
                stderr: (dev.stderr * dev.stderr + eq_se * eq_se).sqrt(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let worst = rows
        .iter()
        .enumerate()
        .fold(None::<usize>, |acc, (k, r)| match acc {
            Some(b) if rows[b].regret >= r.regret => Some(b),
            _ => Some(k),
        });
    let (epsilon, stderr) = worst.map_or((0.0, 0.0), |k| (rows[k].regret, rows[k].stderr));
    Ok(EqReport { rows, epsilon, stderr })
}

fn decode(mut code: u64, k: u64, digits: &mut [usize]) {
    for d in digits.iter_mut().rev() {
        *d = (code % k) as usize;
        code /= k;
    }
}

/// Every grid profile at which no player has a strictly better grid action,
/// for fixed valuations. Profiles are returned in lexicographic order of
/// action indices (player 0 most significant).
pub fn pure_ne_enumerate(f: &dyn Mechanism, values: &[Valuation], grid: &BidGrid) -> Result<Vec<BidProfile>> {
    const TOL: f64 = 1e-12;
    let n = values.len();
    if n == 0 {
        return input("no players");
    }
    if let Some(i) = values.iter().position(|v| v.item_count() != f.items()) {
        return input(format!("player {i} values {} items, format has {}", values[i].item_count(), f.items()));
    }
    let actions = f.action_space(grid)?;
    let k = actions.len() as u64;
    let total = (0..n).try_fold(1u64, |a, _| a.checked_mul(k));
    let total = match total {
        Some(t) if t <= MAX_JOINT_PROFILES => t,
        _ => {
            return Err(Error::Resource(format!(
                "{k}^{n} grid profiles exceed the limit of {MAX_JOINT_PROFILES}"
            )))
        }
    };
    let others = total / k;
    let build = |digits: &[usize]| -> BidProfile {
        let acts: Vec<PlayerBid> = digits.iter().map(|&d| actions[d].clone()).collect();
        BidProfile::from_players(&acts).expect("grid actions are valid")
    };
    // best[i][r]: best utility of i when the others play index r
    let best: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..others)
                .into_par_iter()
                .map(|r| {
                    let mut rest = vec![0usize; n - 1];
                    decode(r, k, &mut rest);
                    let mut digits = rest.clone();
                    digits.insert(i, 0);
                    let b = build(&digits);
                    actions
                        .iter()
                        .map(|a| f.utility_with(&b, i, a, &values[i]))
                        .fold(f64::NEG_INFINITY, f64::max)
                })
                .collect()
        })
        .collect();
    let found: Vec<u64> = (0..total)
        .into_par_iter()
        .filter(|&code| {
            let mut digits = vec![0usize; n];
            decode(code, k, &mut digits);
            let b = build(&digits);
            (0..n).all(|i| {
                let r = digits
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| *j != i)
                    .fold(0u64, |acc, (_, &d)| acc * k + d as u64);
                f.utility(&b, i, &values[i]) >= best[i][r as usize] - TOL
            })
        })
        .collect();
    Ok(found
        .into_iter()
        .map(|code| {
            let mut digits = vec![0usize; n];
            decode(code, k, &mut digits);
            build(&digits)
        })
        .collect())
}

/// Pure grid strategies of one player: a bid index per type.
fn type_assignments(types: usize, bids: usize) -> Option<usize> {
    (0..types).try_fold(1usize, |a, _| a.checked_mul(bids))
}

/// Every profile of pure grid strategies (one grid bid per type) whose
/// regret is at most `epsilon` at every type, on a finite single-good prior.
/// Profiles come back in lexicographic order of bid indices, player 0 first.
pub fn grid_bne_enumerate(
    f: &dyn Mechanism,
    prior: &Prior,
    grid: &BidGrid,
    epsilon: f64,
) -> Result<Vec<(Vec<Strategy>, EqReport)>> {
    prior.validate()?;
    if f.items() != 1 {
        return input("grid strategy enumeration needs a single-good format");
    }
    if !prior.is_finite() {
        return input("grid strategy enumeration needs a finite prior");
    }
    let bids = grid.points();
    let types: Vec<Vec<f64>> = (0..prior.players())
        .map(|i| {
            prior
                .type_points(i, 0)
                .into_iter()
                .map(|(v, _)| v.scalar_value())
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let counts: Vec<usize> = types
        .iter()
        .map(|t| type_assignments(t.len(), bids.len()))
        .collect::<Option<_>>()
        .ok_or_else(|| Error::Resource("strategy space overflows".into()))?;
    let total = counts.iter().try_fold(1u64, |a, &c| a.checked_mul(c as u64));
    let total = match total {
        Some(t) if t <= MAX_JOINT_PROFILES => t,
        _ => {
            return Err(Error::Resource(format!(
                "strategy profiles exceed the limit of {MAX_JOINT_PROFILES}"
            )))
        }
    };
    let opts = EvalOptions::default();
    let strategy = |i: usize, mut code: usize| -> Strategy {
        let mut chosen = vec![0.0; types[i].len()];
        for b in chosen.iter_mut().rev() {
            *b = bids[code % bids.len()];
            code /= bids.len();
        }
        Strategy::Grid(GridStrategy::pure(&types[i], &chosen))
    };
    let found = (0..total)
        .into_par_iter()
        .map(|mut code| {
            let mut strategies = vec![Strategy::closed(crate::strategy::BidFunction::Truthful); counts.len()];
            for i in (0..counts.len()).rev() {
                strategies[i] = strategy(i, (code % counts[i] as u64) as usize);
                code /= counts[i] as u64;
            }
            let report = epsilon_bne_check(f, &strategies, prior, grid, &opts)?;
            Ok((report.epsilon <= epsilon + 1e-12).then_some((strategies, report)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(found.into_iter().flatten().collect())
}
