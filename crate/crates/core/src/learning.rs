//! Repeated play with full-information no-regret learners, external regret
//! and the regret-corrected welfare bound.

use std::io;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::auction::{BidGrid, BidProfile, Mechanism, PlayerBid};
use crate::error::{input, Error, Result};
use crate::prior::{Prior, ValuationProfile};
use crate::rng::{derive_seed, seeded, Rng};
use crate::smoothness::SmoothnessParams;
use crate::valuation::Valuation;

/// Largest action grid a single learner may use.
pub const MAX_LEARNER_ACTIONS: usize = 10_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "algorithm", rename_all = "snake_case")]
pub enum Algorithm {
    /// Hedge with learning rate `eta`, default `√(ln K / T)`.
    MultiplicativeWeights {
        #[serde(default)]
        eta: Option<f64>,
    },
    RegretMatching,
}

impl Default for Algorithm {
    fn default() -> Self {
        Algorithm::MultiplicativeWeights { eta: None }
    }
}

/// One player's learning state over `k` actions.
#[derive(Clone, Debug)]
pub struct Learner {
    algorithm: Algorithm,
    eta: f64,
    /// Log-weights (MW) or cumulative regrets (regret matching).
    state: Vec<f64>,
    probs: Vec<f64>,
}

impl Learner {
    pub fn new(algorithm: &Algorithm, k: usize, horizon: usize) -> Result<Self> {
        if k == 0 {
            return input("learner needs at least one action");
        }
        if horizon == 0 {
            return input("horizon must be >= 1");
        }
        let eta = match algorithm {
            Algorithm::MultiplicativeWeights { eta: Some(e) } => {
                if !(e.is_finite() && *e > 0.0) {
                    return input(format!("learning rate must be > 0, got {e}"));
                }
                *e
            }
            Algorithm::MultiplicativeWeights { eta: None } => ((k as f64).ln() / horizon as f64).sqrt(),
            Algorithm::RegretMatching => 0.0,
        };
        Ok(Learner {
            algorithm: algorithm.clone(),
            eta,
            state: vec![0.0; k],
            probs: vec![1.0 / k as f64; k],
        })
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probs
    }

    pub fn sample(&self, rng: &mut Rng) -> usize {
        let mut u: f64 = rng.gen();
        for (k, p) in self.probs.iter().enumerate() {
            if u < *p {
                return k;
            }
            u -= p;
        }
        self.probs.iter().rposition(|p| *p > 0.0).unwrap_or(0)
    }

    /// Full-information update with normalized rewards for every action and
    /// the reward of the action actually played.
    pub fn update(&mut self, rewards: &[f64], played: f64) {
        match self.algorithm {
            Algorithm::MultiplicativeWeights { .. } => {
                for (s, r) in self.state.iter_mut().zip(rewards) {
                    *s += self.eta * r;
                }
                let top = self.state.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for (p, s) in self.probs.iter_mut().zip(&self.state) {
                    *p = (s - top).exp();
                    total += *p;
                }
                self.probs.iter_mut().for_each(|p| *p /= total);
            }
            Algorithm::RegretMatching => {
                for (s, r) in self.state.iter_mut().zip(rewards) {
                    *s += r - played;
                }
                let total: f64 = self.state.iter().map(|s| s.max(0.0)).sum();
                let k = self.probs.len() as f64;
                for (p, s) in self.probs.iter_mut().zip(&self.state) {
                    *p = if total > 0.0 { s.max(0.0) / total } else { 1.0 / k };
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunOptions {
    pub horizon: usize,
    pub seed: u64,
    /// Draw fresh valuations from this prior every round instead of keeping
    /// the given ones fixed.
    pub resample: Option<Prior>,
}

/// Record of `T` rounds of play.
#[derive(Clone, Debug, PartialEq)]
pub struct PlaySequence {
    /// One profile when valuations are fixed, otherwise one per round.
    pub values: Vec<ValuationProfile>,
    pub grids: Vec<Vec<PlayerBid>>,
    /// `actions[t][i]` indexes `grids[i]`.
    pub actions: Vec<Vec<usize>>,
    pub utilities: Vec<Vec<f64>>,
}

impl PlaySequence {
    pub fn rounds(&self) -> usize {
        self.actions.len()
    }

    pub fn players(&self) -> usize {
        self.grids.len()
    }

    pub fn values_at(&self, t: usize) -> &ValuationProfile {
        if self.values.len() == 1 {
            &self.values[0]
        } else {
            &self.values[t]
        }
    }

    pub fn profile(&self, t: usize) -> Result<BidProfile> {
        let acts: Vec<PlayerBid> = self.actions[t]
            .iter()
            .enumerate()
            .map(|(i, &a)| self.grids[i][a].clone())
            .collect();
        BidProfile::from_players(&acts)
    }

    /// CSV columns: round, player, action, utility.
    pub fn write_log<W: io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["round", "player", "action", "utility"])?;
        for (t, (acts, us)) in self.actions.iter().zip(&self.utilities).enumerate() {
            for (i, (a, u)) in acts.iter().zip(us).enumerate() {
                out.serialize((t, i, a, u))?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

/// Grid actions of a learner whose bids are capped at her own largest
/// single-item value.
pub fn learner_grid(f: &dyn Mechanism, v: &Valuation, step: f64) -> Result<Vec<PlayerBid>> {
    let cap = v.max_item_value();
    let actions = if cap <= 0.0 {
        f.action_space(&BidGrid::new(step, step)?)?
            .into_iter()
            .filter(|a| a.bids.iter().all(|b| *b == 0.0))
            .collect()
    } else {
        f.action_space(&BidGrid::new(step, cap)?)?
    };
    if actions.len() > MAX_LEARNER_ACTIONS {
        return Err(Error::Resource(format!(
            "{} actions exceed the learner limit of {MAX_LEARNER_ACTIONS}",
            actions.len()
        )));
    }
    Ok(actions)
}

fn max_value(values: &[Valuation]) -> f64 {
    values.iter().map(|v| v.eval(crate::valuation::ItemSet::full(v.item_count()))).fold(0.0, f64::max)
}

/// Runs the learners against each other for `opts.horizon` rounds.
pub fn run_repeated(
    f: &dyn Mechanism,
    values: &[Valuation],
    grids: Vec<Vec<PlayerBid>>,
    algorithms: &[Algorithm],
    opts: &RunOptions,
) -> Result<PlaySequence> {
    let n = values.len();
    if grids.len() != n || algorithms.len() != n {
        return input(format!("{n} players need {n} grids and {n} learners"));
    }
    if let Some(i) = grids.iter().position(|g| g.len() > MAX_LEARNER_ACTIONS) {
        return Err(Error::Resource(format!("player {i}'s grid exceeds {MAX_LEARNER_ACTIONS} actions")));
    }
    if let Some(p) = &opts.resample {
        p.validate()?;
        if p.players() != n {
            return input("resampling prior has the wrong number of players");
        }
    }
    let mut learners = grids
        .iter()
        .zip(algorithms)
        .map(|(g, a)| Learner::new(a, g.len(), opts.horizon))
        .collect::<Result<Vec<_>>>()?;
    let mut rngs: Vec<Rng> = (0..n).map(|i| seeded(derive_seed(opts.seed, &[i as u64]))).collect();
    let mut value_rng = seeded(derive_seed(opts.seed, &[u64::MAX]));

    let mut seq = PlaySequence {
        values: vec![values.to_vec()],
        grids,
        actions: Vec::with_capacity(opts.horizon),
        utilities: Vec::with_capacity(opts.horizon),
    };
    if opts.resample.is_some() {
        seq.values.clear();
    }
    let mut rewards: Vec<f64> = Vec::new();
    for _ in 0..opts.horizon {
        let round_values = match &opts.resample {
            Some(p) => {
                let v = p.sample(&mut value_rng);
                seq.values.push(v.clone());
                v
            }
            None => values.to_vec(),
        };
        let scale = max_value(&round_values).max(f64::MIN_POSITIVE);
        let acts: Vec<usize> = learners.iter().zip(rngs.iter_mut()).map(|(l, r)| l.sample(r)).collect();
        let players: Vec<PlayerBid> = acts.iter().enumerate().map(|(i, &a)| seq.grids[i][a].clone()).collect();
        let b = BidProfile::from_players(&players)?;
        f.check_profile(&b)?;
        let us: Vec<f64> = (0..n).map(|i| f.utility(&b, i, &round_values[i])).collect();
        for (i, l) in learners.iter_mut().enumerate() {
            rewards.clear();
            rewards.extend(seq.grids[i].iter().map(|a| f.utility_with(&b, i, a, &round_values[i]) / scale));
            l.update(&rewards, us[i] / scale);
        }
        seq.actions.push(acts);
        seq.utilities.push(us);
    }
    Ok(seq)
}

/// `max_{a'} (1/T) Σ_t [u_i(a', a^t_−i) − u_i(a^t)]`, recomputed exactly.
pub fn external_regret(f: &dyn Mechanism, seq: &PlaySequence, i: usize) -> Result<f64> {
    let t_total = seq.rounds();
    if t_total == 0 {
        return input("empty play sequence");
    }
    let grid = &seq.grids[i];
    let mut gains = vec![0.0; grid.len()];
    let mut realized = 0.0;
    for t in 0..t_total {
        let b = seq.profile(t)?;
        let v = &seq.values_at(t)[i];
        realized += f.utility(&b, i, v);
        for (g, a) in gains.iter_mut().zip(grid) {
            *g += f.utility_with(&b, i, a, v);
        }
    }
    let best = gains.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok((best - realized) / t_total as f64)
}

pub fn average_welfare(f: &dyn Mechanism, seq: &PlaySequence) -> Result<f64> {
    let mut total = 0.0;
    for t in 0..seq.rounds() {
        total += f.social_welfare(&seq.profile(t)?, seq.values_at(t))?;
    }
    Ok(total / seq.rounds().max(1) as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct WelfareReport {
    pub average_welfare: f64,
    /// Mean of OPT over the rounds (OPT itself for fixed valuations).
    pub opt: f64,
    /// Guarantee times OPT.
    pub bound: f64,
    pub regrets: Vec<f64>,
    /// `bound − Σ_i max(regret_i, 0)`.
    pub corrected_bound: f64,
    pub pass: bool,
}

/// Checks `avgSW ≥ ratio·OPT − Σ_i max(regret_i, 0)` with the ratio implied
/// by the smoothness parameters.
pub fn welfare_vs_bound(f: &dyn Mechanism, seq: &PlaySequence, params: &SmoothnessParams) -> Result<WelfareReport> {
    let ratio = params.poa_bound()?;
    let average_welfare = average_welfare(f, seq)?;
    let opt = if seq.values.len() == 1 {
        f.opt(&seq.values[0])?.welfare
    } else {
        let mut total = 0.0;
        for v in &seq.values {
            total += f.opt(v)?.welfare;
        }
        total / seq.values.len() as f64
    };
    let regrets = (0..seq.players())
        .map(|i| external_regret(f, seq, i))
        .collect::<Result<Vec<_>>>()?;
    let bound = ratio * opt;
    let corrected_bound = bound - regrets.iter().map(|r| r.max(0.0)).sum::<f64>();
    Ok(WelfareReport {
        average_welfare,
        opt,
        bound,
        corrected_bound,
        pass: average_welfare >= corrected_bound - 1e-12,
        regrets,
    })
}

/// Summary CSV: seed, T, avgSW, OPT, bound, regret_1..regret_n.
pub fn write_summary<W: io::Write>(w: W, rows: &[(u64, usize, WelfareReport)]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let n = rows.first().map_or(0, |r| r.2.regrets.len());
    let mut header = vec!["seed".to_string(), "T".into(), "avgSW".into(), "OPT".into(), "bound".into()];
    header.extend((1..=n).map(|i| format!("regret_{i}")));
    out.write_record(&header)?;
    for (seed, t, r) in rows {
        let mut rec = vec![seed.to_string(), t.to_string(), r.average_welfare.to_string(), r.opt.to_string(), r.bound.to_string()];
        rec.extend(r.regrets.iter().map(|x| x.to_string()));
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}
