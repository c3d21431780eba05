#![allow(dead_code)]

use poa_core::rng::Rng;
use poa_core::valuation::{ItemSet, Valuation};
use rand::Rng as _;

/// `v(S) = Σ_k min(c_k, Σ_{j∈S} w_kj)`: a sum of budget-capped additive
/// functions, hence monotone submodular.
pub fn random_submodular(m: usize, rng: &mut Rng) -> Valuation {
    let terms: Vec<(f64, Vec<f64>)> = (0..2)
        .map(|_| (rng.gen_range(0.3..1.5), (0..m).map(|_| rng.gen::<f64>()).collect()))
        .collect();
    let values = ItemSet::all(m)
        .map(|s| {
            terms
                .iter()
                .map(|(cap, w)| s.iter().map(|j| w[j]).sum::<f64>().min(*cap))
                .sum()
        })
        .collect();
    Valuation::table(m, values).unwrap()
}

/// Unit-demand values on a `step` lattice in `[0, 1]`.
pub fn lattice_unit_demand(m: usize, step: f64, rng: &mut Rng) -> Valuation {
    let levels = (1.0 / step).round() as u32;
    Valuation::unit_demand((0..m).map(|_| rng.gen_range(0..=levels) as f64 * step).collect()).unwrap()
}

pub fn random_unit_demand(m: usize, rng: &mut Rng) -> Valuation {
    Valuation::unit_demand((0..m).map(|_| rng.gen::<f64>()).collect()).unwrap()
}
