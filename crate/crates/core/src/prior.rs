//! Type distributions: independent products of marginals or a correlated joint.

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng as _;
use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{input, Result};
use crate::rng::{seeded, Rng};
use crate::valuation::Valuation;

pub type ValuationProfile = Vec<Valuation>;

const SUM_TOL: f64 = 1e-12;

/// Default number of nodes used to integrate a uniform marginal.
pub const DEFAULT_QUADRATURE_POINTS: usize = 101;

/// Distribution of one player's type.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Marginal {
    /// Scalar value drawn uniformly from `[lo, hi]`.
    Uniform { lo: f64, hi: f64 },
    /// Scalar value with finite support.
    Discrete { support: Vec<f64>, weights: Vec<f64> },
    /// Finite support over general valuations.
    Valuations {
        support: Vec<Valuation>,
        weights: Vec<f64>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Prior {
    Independent {
        per_player: Vec<Marginal>,
    },
    Correlated {
        #[serde(deserialize_with = "profiles")]
        support: Vec<ValuationProfile>,
        probabilities: Vec<f64>,
    },
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ValueSpec {
    Scalar(f64),
    Full(Valuation),
}

/// Accepts bare numbers as one-item valuations.
fn profiles<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<ValuationProfile>, D::Error> {
    let raw = Vec::<Vec<ValueSpec>>::deserialize(d)?;
    Ok(raw
        .into_iter()
        .map(|p| {
            p.into_iter()
                .map(|x| match x {
                    ValueSpec::Scalar(v) => Valuation::scalar(v),
                    ValueSpec::Full(v) => v,
                })
                .collect()
        })
        .collect())
}

/// Accepts bare numbers as one-item valuations.
pub(crate) fn valuation_list<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<Valuation>, D::Error> {
    Ok(Vec::<ValueSpec>::deserialize(d)?
        .into_iter()
        .map(|x| match x {
            ValueSpec::Scalar(v) => Valuation::scalar(v),
            ValueSpec::Full(v) => v,
        })
        .collect())
}

fn check_probabilities(p: &[f64], what: &str) -> Result<()> {
    if p.is_empty() {
        return input(format!("{what}: empty support"));
    }
    if p.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return input(format!("{what}: probabilities must be finite and >= 0"));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > SUM_TOL {
        return input(format!("{what}: probabilities sum to {total}, expected 1"));
    }
    Ok(())
}

/// Trapezoid nodes and weights on `[lo, hi]`.
pub fn uniform_nodes(lo: f64, hi: f64, points: usize) -> Vec<(f64, f64)> {
    assert!(points >= 2, "need at least two quadrature nodes");
    let h = (hi - lo) / (points - 1) as f64;
    let w = 1.0 / (points - 1) as f64;
    (0..points)
        .map(|k| {
            let weight = if k == 0 || k == points - 1 { w / 2.0 } else { w };
            (lo + h * k as f64, weight)
        })
        .collect()
}

impl Marginal {
    pub fn validate(&self) -> Result<()> {
        match self {
            Marginal::Uniform { lo, hi } => {
                if !(lo.is_finite() && hi.is_finite() && *lo >= 0.0 && lo < hi) {
                    return input(format!("uniform marginal needs 0 <= lo < hi, got [{lo}, {hi}]"));
                }
                Ok(())
            }
            Marginal::Discrete { support, weights } => {
                if support.len() != weights.len() {
                    return input("discrete marginal: support and weights differ in length");
                }
                if support.iter().any(|v| !v.is_finite() || *v < 0.0) {
                    return input("discrete marginal: values must be finite and >= 0");
                }
                check_probabilities(weights, "discrete marginal")
            }
            Marginal::Valuations { support, weights } => {
                if support.len() != weights.len() {
                    return input("valuation marginal: support and weights differ in length");
                }
                for v in support {
                    v.validate()?;
                }
                check_probabilities(weights, "valuation marginal")
            }
        }
    }

    pub fn sample(&self, rng: &mut Rng) -> Valuation {
        match self {
            Marginal::Uniform { lo, hi } => Valuation::scalar(lo + (hi - lo) * rng.gen::<f64>()),
            Marginal::Discrete { support, weights } => {
                let k = WeightedIndex::new(weights).expect("validated weights").sample(rng);
                Valuation::scalar(support[k])
            }
            Marginal::Valuations { support, weights } => {
                let k = WeightedIndex::new(weights).expect("validated weights").sample(rng);
                support[k].clone()
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        !matches!(self, Marginal::Uniform { .. })
    }

    /// Weighted support points: exact atoms, or trapezoid nodes for a uniform.
    pub fn points(&self, quadrature: usize) -> Vec<(Valuation, f64)> {
        match self {
            Marginal::Uniform { lo, hi } => uniform_nodes(*lo, *hi, quadrature)
                .into_iter()
                .map(|(x, w)| (Valuation::scalar(x), w))
                .collect(),
            Marginal::Discrete { support, weights } => support
                .iter()
                .zip(weights)
                .map(|(x, w)| (Valuation::scalar(*x), *w))
                .collect(),
            Marginal::Valuations { support, weights } => {
                support.iter().cloned().zip(weights.iter().copied()).collect()
            }
        }
    }

    pub fn max_item_value(&self) -> f64 {
        match self {
            Marginal::Uniform { hi, .. } => *hi,
            Marginal::Discrete { support, .. } => support.iter().copied().fold(0.0, f64::max),
            Marginal::Valuations { support, .. } => {
                support.iter().map(Valuation::max_item_value).fold(0.0, f64::max)
            }
        }
    }

    pub fn mean_scalar(&self) -> Option<f64> {
        match self {
            Marginal::Uniform { lo, hi } => Some((lo + hi) / 2.0),
            Marginal::Discrete { support, weights } => {
                Some(support.iter().zip(weights).map(|(x, w)| x * w).sum())
            }
            Marginal::Valuations { .. } => None,
        }
    }
}

impl Prior {
    pub fn independent(per_player: Vec<Marginal>) -> Result<Self> {
        let p = Prior::Independent { per_player };
        p.validate()?;
        Ok(p)
    }

    pub fn correlated(support: Vec<ValuationProfile>, probabilities: Vec<f64>) -> Result<Self> {
        let p = Prior::Correlated {
            support,
            probabilities,
        };
        p.validate()?;
        Ok(p)
    }

    /// Point mass on one profile.
    pub fn point(profile: ValuationProfile) -> Self {
        Prior::Correlated {
            support: vec![profile],
            probabilities: vec![1.0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Prior::Independent { per_player } => {
                if per_player.is_empty() {
                    return input("prior needs at least one player");
                }
                per_player.iter().try_for_each(Marginal::validate)
            }
            Prior::Correlated {
                support,
                probabilities,
            } => {
                if support.len() != probabilities.len() {
                    return input("correlated prior: support and probabilities differ in length");
                }
                check_probabilities(probabilities, "correlated prior")?;
                let n = support[0].len();
                if n == 0 {
                    return input("correlated prior: empty profile");
                }
                for (k, profile) in support.iter().enumerate() {
                    if profile.len() != n {
                        return input(format!("correlated prior: atom {k} has {} players, expected {n}", profile.len()));
                    }
                    profile.iter().try_for_each(Valuation::validate)?;
                }
                Ok(())
            }
        }
    }

    pub fn players(&self) -> usize {
        match self {
            Prior::Independent { per_player } => per_player.len(),
            Prior::Correlated { support, .. } => support[0].len(),
        }
    }

    pub fn is_independent(&self) -> bool {
        matches!(self, Prior::Independent { .. })
    }

    /// Finite support (no uniform marginals).
    pub fn is_finite(&self) -> bool {
        match self {
            Prior::Independent { per_player } => per_player.iter().all(Marginal::is_finite),
            Prior::Correlated { .. } => true,
        }
    }

    /// Number of joint atoms if the support is finite.
    pub fn atom_count(&self) -> Option<usize> {
        match self {
            Prior::Independent { per_player } => per_player.iter().try_fold(1usize, |acc, m| match m {
                Marginal::Uniform { .. } => None,
                Marginal::Discrete { support, .. } => acc.checked_mul(support.len()),
                Marginal::Valuations { support, .. } => acc.checked_mul(support.len()),
            }),
            Prior::Correlated { support, .. } => Some(support.len()),
        }
    }

    pub fn sample(&self, rng: &mut Rng) -> ValuationProfile {
        match self {
            Prior::Independent { per_player } => per_player.iter().map(|m| m.sample(rng)).collect(),
            Prior::Correlated {
                support,
                probabilities,
            } => {
                let k = WeightedIndex::new(probabilities).expect("validated").sample(rng);
                support[k].clone()
            }
        }
    }

    /// Deterministic draw for a fixed seed.
    pub fn sample_profile(&self, seed: u64) -> ValuationProfile {
        self.sample(&mut seeded(seed))
    }

    /// Joint atoms with probabilities, for finite priors.
    pub fn atoms(&self) -> Option<Vec<(ValuationProfile, f64)>> {
        match self {
            Prior::Independent { per_player } => {
                if !self.is_finite() {
                    return None;
                }
                let lists: Vec<_> = per_player.iter().map(|m| m.points(0)).collect();
                Some(product(&lists))
            }
            Prior::Correlated {
                support,
                probabilities,
            } => Some(support.iter().cloned().zip(probabilities.iter().copied()).collect()),
        }
    }

    /// Joint atoms, with uniform marginals replaced by `quadrature` nodes.
    pub fn discretized(&self, quadrature: usize) -> Vec<(ValuationProfile, f64)> {
        match self {
            Prior::Independent { per_player } => {
                let lists: Vec<_> = per_player.iter().map(|m| m.points(quadrature)).collect();
                product(&lists)
            }
            Prior::Correlated { .. } => self.atoms().expect("correlated priors are finite"),
        }
    }

    /// Size of [`Prior::discretized`] without building it.
    pub fn discretized_size(&self, quadrature: usize) -> usize {
        match self {
            Prior::Independent { per_player } => per_player.iter().fold(1usize, |acc, m| {
                let k = match m {
                    Marginal::Uniform { .. } => quadrature,
                    Marginal::Discrete { support, .. } => support.len(),
                    Marginal::Valuations { support, .. } => support.len(),
                };
                acc.saturating_mul(k)
            }),
            Prior::Correlated { support, .. } => support.len(),
        }
    }

    /// Weighted type points of player `i`: atoms of the marginal, or
    /// quadrature nodes for uniform marginals.
    pub fn type_points(&self, i: usize, quadrature: usize) -> Vec<(Valuation, f64)> {
        match self {
            Prior::Independent { per_player } => per_player[i].points(quadrature),
            Prior::Correlated {
                support,
                probabilities,
            } => {
                let mut out: Vec<(Valuation, f64)> = Vec::new();
                for (profile, p) in support.iter().zip(probabilities) {
                    match out.iter_mut().find(|(v, _)| *v == profile[i]) {
                        Some(entry) => entry.1 += p,
                        None => out.push((profile[i].clone(), *p)),
                    }
                }
                out
            }
        }
    }

    /// Weighted profiles of the other players given player `i` has type `vi`;
    /// slot `i` of each returned profile holds `vi`. Uniform marginals are
    /// discretized with `quadrature` nodes. Correlated priors condition on
    /// the atoms whose `i`-th entry equals `vi`.
    pub fn conditional_profiles(&self, i: usize, vi: &Valuation, quadrature: usize) -> Vec<(ValuationProfile, f64)> {
        match self {
            Prior::Independent { per_player } => {
                let lists: Vec<_> = per_player
                    .iter()
                    .enumerate()
                    .map(|(j, m)| if j == i { vec![(vi.clone(), 1.0)] } else { m.points(quadrature) })
                    .collect();
                product(&lists)
            }
            Prior::Correlated {
                support,
                probabilities,
            } => {
                let matching: Vec<_> = support
                    .iter()
                    .zip(probabilities)
                    .filter(|(profile, _)| profile[i] == *vi)
                    .collect();
                let mass: f64 = matching.iter().map(|(_, p)| **p).sum();
                matching
                    .into_iter()
                    .filter(|(_, p)| **p > 0.0)
                    .map(|(profile, p)| (profile.clone(), p / mass))
                    .collect()
            }
        }
    }

    /// Number of conditional profiles `conditional_profiles` would return.
    pub fn conditional_size(&self, i: usize, quadrature: usize) -> usize {
        match self {
            Prior::Independent { per_player } => per_player
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, m)| m.points(quadrature).len())
                .fold(1usize, |a, b| a.saturating_mul(b)),
            Prior::Correlated { support, .. } => support.len(),
        }
    }

    /// Draws the other players' types conditional on player `i` having `vi`.
    pub fn sample_conditional(&self, i: usize, vi: &Valuation, rng: &mut Rng) -> Result<ValuationProfile> {
        match self {
            Prior::Independent { per_player } => Ok(per_player
                .iter()
                .enumerate()
                .map(|(j, m)| if j == i { vi.clone() } else { m.sample(rng) })
                .collect()),
            Prior::Correlated { .. } => {
                let cond = self.conditional_profiles(i, vi, 0);
                if cond.is_empty() {
                    return input(format!("type {vi:?} has zero probability for player {i}"));
                }
                let k = WeightedIndex::new(cond.iter().map(|(_, p)| *p))
                    .expect("positive mass")
                    .sample(rng);
                Ok(cond[k].0.clone())
            }
        }
    }

    pub fn max_item_value(&self, i: usize) -> f64 {
        match self {
            Prior::Independent { per_player } => per_player[i].max_item_value(),
            Prior::Correlated { support, .. } => {
                support.iter().map(|p| p[i].max_item_value()).fold(0.0, f64::max)
            }
        }
    }
}

fn product(lists: &[Vec<(Valuation, f64)>]) -> Vec<(ValuationProfile, f64)> {
    let mut out: Vec<(ValuationProfile, f64)> = vec![(Vec::with_capacity(lists.len()), 1.0)];
    for list in lists {
        let mut next = Vec::with_capacity(out.len() * list.len());
        for (profile, p) in &out {
            for (v, w) in list {
                let mut prof = profile.clone();
                prof.push(v.clone());
                next.push((prof, p * w));
            }
        }
        out = next;
    }
    out
}
