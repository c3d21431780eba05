//! One test per acceptance criterion. Each prints a single PASS/FAIL line;
//! run with `--nocapture` to see them.

mod common;

use poa_core::auction::{
    allocation_value, Allocation, AuctionFormat, BidGrid, BidProfile, ItemRule, Mechanism, PlayerBid,
};
use poa_core::composition::{compose, verify_composed_smoothness};
use poa_core::equilibria::{
    candidate_utilities, default_grid, epsilon_bne_check, grid_bne_enumerate, pure_ne_enumerate, EvalOptions,
};
use poa_core::harness::{poa_estimate, poa_exhaustive};
use poa_core::learning::{learner_grid, run_repeated, welfare_vs_bound, Algorithm, RunOptions};
use poa_core::prior::{Marginal, Prior};
use poa_core::rng::seeded;
use poa_core::smoothness::{
    grid_profiles, scalar_profiles, verify_smoothness, CaseGroup, CaseSet, DeviationRule, Mode, SmoothnessParams,
    VerifyOptions, ONE_MINUS_INV_E,
};
use poa_core::strategy::{bad_example_mixed_strategy, symmetric_uniform_fpa_bne, vickrey_asymmetric_bne, BidFunction};
use poa_core::valuation::{submodular_to_xos, ItemSet, Valuation};
use poa_core::welfare::{opt_brute_force, opt_matching};
use poa_core::Error;
use rand::Rng as _;

use common::{lattice_unit_demand, random_submodular, random_unit_demand};

fn report(n: u32, name: &str, pass: bool, detail: String) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    println!("criterion {n:>2} {verdict} {name}: {detail}");
    assert!(pass, "criterion {n} ({name}) failed: {detail}");
}

fn uniform(hi: f64) -> Marginal {
    Marginal::Uniform { lo: 0.0, hi }
}

fn sim_fpa(items: usize) -> AuctionFormat {
    AuctionFormat::SimultaneousItems {
        items,
        rule: ItemRule::FirstPrice,
        one_item_bids: false,
    }
}

fn value_grid() -> Vec<f64> {
    (0..=10).map(|k| k as f64 / 10.0).collect()
}

#[test]
fn c01_symmetric_first_price_efficiency() {
    let prior = Prior::independent(vec![uniform(1.0), uniform(1.0)]).unwrap();
    let s = symmetric_uniform_fpa_bne(2).unwrap();
    let strategies = [s.clone(), s];
    let grid = default_grid(&prior, 0.005).unwrap();
    let opts = EvalOptions {
        quadrature: 101,
        ..EvalOptions::default()
    };
    let eq = epsilon_bne_check(&AuctionFormat::FirstPrice, &strategies, &prior, &grid, &opts).unwrap();
    let poa = poa_estimate(&AuctionFormat::FirstPrice, &prior, &strategies, 100_000, 1).unwrap();
    let pass = eq.epsilon <= 0.01 && (poa.ratio - 1.0).abs() <= 0.01;
    report(
        1,
        "symmetric first-price efficiency",
        pass,
        format!(
            "max regret {:.2e} over {} types (<= 0.01), instance PoA {:.4} ± {:.1e}",
            eq.epsilon,
            eq.rows.len(),
            poa.ratio,
            poa.ratio_stderr
        ),
    );
}

#[test]
fn c02_asymmetric_vickrey_instance() {
    let prior = Prior::independent(vec![uniform(1.0), uniform(2.0)]).unwrap();
    let (weak, strong) = vickrey_asymmetric_bne();
    let strategies = [weak, strong];
    let grid = default_grid(&prior, 0.005).unwrap();
    let opts = EvalOptions {
        quadrature: 101,
        ..EvalOptions::default()
    };
    let eq = epsilon_bne_check(&AuctionFormat::FirstPrice, &strategies, &prior, &grid, &opts).unwrap();

    let mut top: f64 = 0.0;
    let mut in_range = true;
    for (player, hi) in [(0usize, 1.0), (1, 2.0)] {
        for k in 0..=2000 {
            let v = hi * k as f64 / 2000.0;
            let b = strategies[player]
                .atoms(&Valuation::scalar(v), 1, 1)
                .unwrap()[0]
                .0
                .bids[0];
            in_range &= (0.0..=2.0 / 3.0 + 1e-12).contains(&b);
            top = top.max(b);
        }
    }
    let poa = poa_estimate(&AuctionFormat::FirstPrice, &prior, &strategies, 100_000, 2).unwrap();
    let floor = ONE_MINUS_INV_E - 0.01;
    let pass = eq.epsilon <= 0.02 && in_range && poa.ratio < 1.0 && poa.ratio >= floor;
    report(
        2,
        "asymmetric Vickrey instance",
        pass,
        format!(
            "max regret {:.2e} (<= 0.02), bids in [0, {top:.6}], instance PoA {:.4} ± {:.1e} in [{floor:.4}, 1)",
            eq.epsilon, poa.ratio, poa.ratio_stderr
        ),
    );
}

#[test]
fn c03_bad_example_mixed_equilibrium() {
    let f = sim_fpa(2);
    let v = Valuation::unit_demand(vec![1.0, 1.0]).unwrap();
    let values = vec![v.clone(), v.clone()];
    let s = bad_example_mixed_strategy();
    let samples = 100_000;
    let mut rng = seeded(3);
    let mut welfare = 0.0;
    let mut allocated = [0usize; 2];
    for _ in 0..samples {
        let actions = [s.sample(&v, 2, &mut rng).unwrap(), s.sample(&v, 2, &mut rng).unwrap()];
        let b = BidProfile::from_players(&actions).unwrap();
        welfare += f.social_welfare(&b, &values).unwrap();
        let o = f.outcome(&b).unwrap();
        let Allocation::Bundles(bundles) = &o.allocation else {
            panic!("simultaneous items allocate bundles")
        };
        for (j, count) in allocated.iter_mut().enumerate() {
            if bundles.iter().any(|s| s.contains(j)) {
                *count += 1;
            }
        }
    }
    let welfare = welfare / samples as f64;
    let freq = allocated.map(|c| c as f64 / samples as f64);

    let prior = Prior::point(values.clone());
    let candidates: Vec<PlayerBid> = (0..2)
        .flat_map(|j| (0..=10).map(move |k| PlayerBid::on_item(2, j, k as f64 * 0.05)))
        .collect();
    let opts = EvalOptions {
        samples,
        seed: 4,
        monte_carlo: true,
        ..EvalOptions::default()
    };
    let utilities = candidate_utilities(&f, 0, &v, &candidates, &[s.clone(), s], &prior, &opts).unwrap();
    let lo = utilities.iter().map(|e| e.mean).fold(f64::INFINITY, f64::min);
    let hi = utilities.iter().map(|e| e.mean).fold(f64::NEG_INFINITY, f64::max);

    let pass = (welfare - 1.5).abs() <= 0.02 && freq.iter().all(|p| (p - 0.75).abs() <= 0.01) && hi - lo <= 0.01;
    report(
        3,
        "mixed equilibrium of the two-item example",
        pass,
        format!(
            "welfare {welfare:.4} (1.5 ± 0.02), allocation frequency {:.4}/{:.4} (0.75 ± 0.01), pure-bid utilities in [{lo:.4}, {hi:.4}]",
            freq[0], freq[1]
        ),
    );
}

#[test]
fn c04_smoothness_certificates() {
    let points = value_grid();
    let valuations = scalar_profiles(&points, 2).unwrap();
    let grid = BidGrid::new(0.1, 1.0).unwrap();
    let opts = VerifyOptions::default();

    let fpa = AuctionFormat::FirstPrice;
    let cases = CaseSet::product("11x11", valuations.clone(), grid_profiles(&fpa, &grid, 2).unwrap());
    let half = verify_smoothness(&fpa, &DeviationRule::HalfValueFpa, &SmoothnessParams::strong(0.5, 1.0).unwrap(), &cases, &opts)
        .unwrap();
    let optimized = verify_smoothness(
        &fpa,
        &DeviationRule::OptimizedFpa,
        &SmoothnessParams::strong(ONE_MINUS_INV_E, 1.0).unwrap(),
        &cases,
        &opts,
    )
    .unwrap();
    let all_pay = AuctionFormat::AllPay;
    let cases = CaseSet::product("11x11", valuations, grid_profiles(&all_pay, &grid, 2).unwrap());
    let top = verify_smoothness(&all_pay, &DeviationRule::AllPayTop, &SmoothnessParams::strong(0.5, 1.0).unwrap(), &cases, &opts)
        .unwrap();

    let pass = half.pass && half.min_margin >= -1e-9 && optimized.pass && top.pass;
    report(
        4,
        "smoothness certificates",
        pass,
        format!(
            "halfValue (1/2,1): {} cases, min margin {:.2e}; optimized (1-1/e,1): {} failures, min margin {:.2e} (se {:.1e}); allPayTop (1/2,1): {} failures, min margin {:.2e} (se {:.1e})",
            half.rows.len(),
            half.min_margin,
            optimized.failures,
            optimized.min_margin,
            optimized.witness_stderr,
            top.failures,
            top.min_margin,
            top.witness_stderr
        ),
    );
}

#[test]
fn c05_composition() {
    let composed = compose(&[AuctionFormat::FirstPrice, AuctionFormat::FirstPrice]).unwrap();
    let levels = [0.0, 0.5, 1.0];
    let options: Vec<Valuation> = levels
        .iter()
        .flat_map(|&a| levels.iter().map(move |&b| Valuation::unit_demand(vec![a, b]).unwrap()))
        .collect();
    let valuations = poa_core::smoothness::profiles(&options, 2).unwrap();
    let grid = BidGrid::new(0.1, 1.0).unwrap();
    let cases = CaseSet::product("unit-demand", valuations, grid_profiles(&composed, &grid, 2).unwrap());
    let half = verify_composed_smoothness(
        &composed,
        &[DeviationRule::HalfValueFpa, DeviationRule::HalfValueFpa],
        &SmoothnessParams::strong(0.5, 1.0).unwrap(),
        &cases,
        &VerifyOptions::default(),
    )
    .unwrap();

    let composed3 = compose(&[AuctionFormat::FirstPrice; 3]).unwrap();
    let mut rng = seeded(5);
    let mut groups = Vec::new();
    for _ in 0..200 {
        let values: Vec<Valuation> = (0..2)
            .map(|_| submodular_to_xos(&random_submodular(3, &mut rng)).unwrap())
            .collect();
        let mut actions = vec![BidProfile::from_rows(vec![vec![0.0; 3]; 2]).unwrap()];
        for _ in 0..25 {
            let rows = values
                .iter()
                .map(|v| (0..3).map(|_| (rng.gen::<f64>() * v.max_item_value() * 10.0).round() / 10.0).collect())
                .collect();
            actions.push(BidProfile::from_rows(rows).unwrap());
        }
        groups.push(CaseGroup { values, actions });
    }
    let cases = CaseSet {
        generator: "random submodular m=3".into(),
        groups,
    };
    let optimized = verify_composed_smoothness(
        &composed3,
        &[DeviationRule::OptimizedFpa, DeviationRule::OptimizedFpa, DeviationRule::OptimizedFpa],
        &SmoothnessParams::strong(ONE_MINUS_INV_E, 1.0).unwrap(),
        &cases,
        &VerifyOptions::default(),
    )
    .unwrap();
    let pass = half.pass && optimized.pass;
    report(
        5,
        "composition",
        pass,
        format!(
            "unit-demand (1/2,1): {} cases, min margin {:.2e}; submodular (1-1/e,1): {} cases, {} failures, min margin {:.2e} (se {:.1e})",
            half.rows.len(),
            half.min_margin,
            optimized.rows.len(),
            optimized.failures,
            optimized.min_margin,
            optimized.witness_stderr
        ),
    );
}

#[test]
fn c06_pure_equilibria_are_near_optimal() {
    let f = sim_fpa(2);
    let delta = 0.1;
    let grid = BidGrid::new(delta, 1.0).unwrap();
    let mut instances = vec![
        vec![Valuation::unit_demand(vec![1.0, 0.5]).unwrap(), Valuation::unit_demand(vec![0.6, 0.9]).unwrap()],
        vec![Valuation::unit_demand(vec![1.0, 1.0]).unwrap(), Valuation::unit_demand(vec![1.0, 1.0]).unwrap()],
        vec![Valuation::unit_demand(vec![0.8, 0.3]).unwrap(), Valuation::unit_demand(vec![0.7, 0.2]).unwrap()],
    ];
    let mut rng = seeded(6);
    for _ in 0..7 {
        instances.push((0..2).map(|_| lattice_unit_demand(2, delta, &mut rng)).collect());
    }
    let mut equilibria = 0;
    let mut worst_gap: f64 = f64::NEG_INFINITY;
    for values in &instances {
        let opt = f.opt(values).unwrap().welfare;
        for b in pure_ne_enumerate(&f, values, &grid).unwrap() {
            equilibria += 1;
            worst_gap = worst_gap.max(opt - f.social_welfare(&b, values).unwrap());
        }
    }
    let pass = equilibria > 0 && worst_gap <= 2.0 * delta + 1e-12;
    report(
        6,
        "pure equilibria are near optimal",
        pass,
        format!(
            "{equilibria} equilibria over {} instances, largest OPT - SW = {worst_gap:.3} (<= {})",
            instances.len(),
            2.0 * delta
        ),
    );
}

fn learning_runs(f: &AuctionFormat, values: &[Valuation], step: f64, params: &SmoothnessParams) -> (f64, bool, f64) {
    let algorithms = vec![Algorithm::default(); values.len()];
    let mut worst_regret = f64::NEG_INFINITY;
    let mut all_pass = true;
    let mut worst_slack = f64::INFINITY;
    for seed in 0..20 {
        let grids = values.iter().map(|v| learner_grid(f, v, step).unwrap()).collect();
        let opts = RunOptions {
            horizon: 10_000,
            seed,
            resample: None,
        };
        let seq = run_repeated(f, values, grids, &algorithms, &opts).unwrap();
        let w = welfare_vs_bound(f, &seq, params).unwrap();
        worst_regret = w.regrets.iter().copied().fold(worst_regret, f64::max);
        all_pass &= w.pass;
        worst_slack = worst_slack.min(w.average_welfare - w.corrected_bound);
    }
    (worst_regret, all_pass, worst_slack)
}

#[test]
fn c07_learning_bound() {
    let all_pay = AuctionFormat::AllPay;
    let values = [Valuation::scalar(1.0), Valuation::scalar(0.5)];
    let (r1, ok1, s1) = learning_runs(&all_pay, &values, 0.05, &SmoothnessParams::strong(0.5, 1.0).unwrap());

    let f = sim_fpa(2);
    let values = [
        Valuation::unit_demand(vec![1.0, 0.5]).unwrap(),
        Valuation::unit_demand(vec![0.5, 1.0]).unwrap(),
    ];
    let (r2, ok2, s2) = learning_runs(&f, &values, 0.1, &SmoothnessParams::strong(ONE_MINUS_INV_E, 1.0).unwrap());

    let pass = r1 <= 0.02 && ok1 && r2 <= 0.02 && ok2;
    report(
        7,
        "no-regret learning bound",
        pass,
        format!(
            "all-pay: max regret {r1:.4}, min welfare slack {s1:.4}; two-item first-price: max regret {r2:.4}, min welfare slack {s2:.4} (20 seeds, T = 10^4)"
        ),
    );
}

#[test]
fn c08_correlated_prior_robustness() {
    let s = |a: f64, b: f64| vec![Valuation::scalar(a), Valuation::scalar(b)];
    let prior = Prior::correlated(
        vec![s(0.4, 0.6), s(0.4, 1.0), s(1.0, 0.6), s(1.0, 1.0)],
        vec![0.1, 0.4, 0.4, 0.1],
    )
    .unwrap();
    let f = AuctionFormat::FirstPrice;
    let grid = BidGrid::new(0.1, 1.0).unwrap();

    // the private deviation certifies the bound on every profile in the support
    let support: Vec<Vec<Valuation>> = prior.atoms().unwrap().into_iter().map(|(v, _)| v).collect();
    let cases = CaseSet::product("support", support, grid_profiles(&f, &grid, 2).unwrap());
    let cert = verify_smoothness(
        &f,
        &DeviationRule::OptimizedFpa,
        &SmoothnessParams::strong(ONE_MINUS_INV_E, 1.0).unwrap(),
        &cases,
        &VerifyOptions::default(),
    )
    .unwrap();

    let equilibria = grid_bne_enumerate(&f, &prior, &grid, 0.01).unwrap();
    let mut worst = f64::INFINITY;
    let mut opt = 0.0;
    for (strategies, _) in &equilibria {
        let est = poa_exhaustive(&f, &prior, strategies, 0, 1).unwrap();
        assert!(est.exhaustive);
        worst = worst.min(est.welfare);
        opt = est.opt;
    }
    let target = ONE_MINUS_INV_E * opt - 0.05;
    let pass = cert.pass && !equilibria.is_empty() && worst >= target;
    report(
        8,
        "correlated prior robustness",
        pass,
        format!(
            "{} grid 0.01-equilibria, lowest E[SW] {worst:.4} vs (1-1/e)E[OPT] - 0.05 = {target:.4}; certificate on support: {} failures",
            equilibria.len(),
            cert.failures
        ),
    );
}

#[test]
fn c09_second_price_overbidding_pathology() {
    let f = AuctionFormat::SecondPrice;
    let values = [Valuation::scalar(0.01), Valuation::scalar(1.0)];
    let grid = BidGrid::new(0.01, 1.0).unwrap();
    let target = BidProfile::scalar(&[1.0, 0.0]).unwrap();
    let is_ne = pure_ne_enumerate(&f, &values, &grid).unwrap().contains(&target);
    let sw = f.social_welfare(&target, &values).unwrap();
    let opt = f.opt(&values).unwrap().welfare;

    // weak mode refuses the overbidding profile and certifies the others
    let weak = SmoothnessParams::new(0.5, 1.0, Mode::Weak).unwrap();
    let with_overbid = CaseSet::product("pathology", vec![values.to_vec()], vec![target.clone()]);
    let refused = matches!(
        verify_smoothness(&f, &DeviationRule::HalfValueFpa, &weak, &with_overbid, &VerifyOptions::default()),
        Err(Error::Input(_))
    );
    let honest = CaseSet::no_overbidding("no overbidding", &f, vec![values.to_vec()], &grid).unwrap();
    let cert = verify_smoothness(&f, &DeviationRule::HalfValueFpa, &weak, &honest, &VerifyOptions::default()).unwrap();
    let bound = weak.poa_bound().unwrap();

    let pass = is_ne && (sw - 0.01).abs() < 1e-12 && (opt - 1.0).abs() < 1e-12 && refused && cert.pass && sw < bound * opt;
    report(
        9,
        "second-price overbidding pathology",
        pass,
        format!(
            "(1, 0) is a pure NE: {is_ne}, SW {sw} vs OPT {opt} (below the weak-mode guarantee {bound}); overbidding case refused: {refused}; {} no-overbidding cases certified",
            cert.rows.len()
        ),
    );
}

fn accounting_gap(f: &dyn Mechanism, b: &BidProfile, values: &[Valuation]) -> f64 {
    let o = f.outcome(b).unwrap();
    let direct = match &o.allocation {
        Allocation::Funded(funded) => {
            if *funded {
                values.iter().map(|v| v.item_value(0)).sum()
            } else {
                0.0
            }
        }
        _ => (0..values.len())
            .map(|i| values[i].value(o.bundle(i)).unwrap())
            .sum::<f64>(),
    };
    let via_utilities: f64 = (0..values.len()).map(|i| f.utility(b, i, &values[i])).sum::<f64>() + o.revenue();
    assert!((allocation_value(&o, values) - direct).abs() < 1e-12);
    (via_utilities - direct).abs()
}

#[test]
fn c10_oracle_suites() {
    let mut rng = seeded(10);

    let mut xos_mismatch: f64 = 0.0;
    for k in 0..200 {
        let m = 1 + k % 5;
        let v = random_submodular(m, &mut rng);
        assert!(v.is_submodular().unwrap());
        let x = submodular_to_xos(&v).unwrap();
        for s in ItemSet::all(m) {
            xos_mismatch = xos_mismatch.max((x.value(s).unwrap() - v.value(s).unwrap()).abs());
        }
    }

    let mut matching_mismatches = 0;
    for _ in 0..1000 {
        let n = rng.gen_range(1..=4);
        let m = rng.gen_range(1..=4);
        let values: Vec<Valuation> = (0..n).map(|_| random_unit_demand(m, &mut rng)).collect();
        let table: Vec<Vec<f64>> = values.iter().map(|v| (0..m).map(|j| v.item_value(j)).collect()).collect();
        let a = opt_matching(&table, m).unwrap();
        let b = opt_brute_force(&values, m).unwrap();
        if (a.welfare - b.welfare).abs() > 1e-9 || a.bundles != b.bundles {
            matching_mismatches += 1;
        }
    }

    let composed = compose(&[AuctionFormat::FirstPrice, AuctionFormat::SecondPrice, AuctionFormat::AllPay]).unwrap();
    let formats: Vec<(String, Box<dyn Mechanism>)> = vec![
        ("first_price".into(), Box::new(AuctionFormat::FirstPrice)),
        ("second_price".into(), Box::new(AuctionFormat::SecondPrice)),
        ("all_pay".into(), Box::new(AuctionFormat::AllPay)),
        ("public_good".into(), Box::new(AuctionFormat::PublicGood { cost: 0.7 })),
        ("sim_fp".into(), Box::new(sim_fpa(3))),
        (
            "sim_sp".into(),
            Box::new(AuctionFormat::SimultaneousItems {
                items: 3,
                rule: ItemRule::SecondPrice,
                one_item_bids: false,
            }),
        ),
        (
            "sim_fp_one_item".into(),
            Box::new(AuctionFormat::SimultaneousItems {
                items: 3,
                rule: ItemRule::FirstPrice,
                one_item_bids: true,
            }),
        ),
        ("composed".into(), Box::new(composed)),
    ];
    let mut identity_gap: f64 = 0.0;
    let mut profiles = 0;
    for (name, f) in &formats {
        let m = f.items();
        let one_item = name == "sim_fp_one_item";
        for _ in 0..10_000 {
            let n = rng.gen_range(1..=4);
            let values: Vec<Valuation> = (0..n)
                .map(|_| match (m, rng.gen_range(0..3)) {
                    (1, _) => Valuation::scalar(rng.gen()),
                    (_, 0) => Valuation::additive((0..m).map(|_| rng.gen()).collect()).unwrap(),
                    (_, 1) => random_unit_demand(m, &mut rng),
                    _ => random_submodular(m, &mut rng),
                })
                .collect();
            let players: Vec<PlayerBid> = (0..n)
                .map(|_| {
                    // coarse bids so that ties occur
                    let bids: Vec<f64> = (0..m).map(|_| (rng.gen::<f64>() * 4.0).round() / 4.0).collect();
                    if one_item {
                        PlayerBid::on_item(m, rng.gen_range(0..m), bids[0])
                    } else {
                        PlayerBid::vector(bids)
                    }
                })
                .collect();
            let b = BidProfile::from_players(&players).unwrap();
            identity_gap = identity_gap.max(accounting_gap(f.as_ref(), &b, &values));
            profiles += 1;
        }
    }

    let pass = xos_mismatch <= 1e-12 && matching_mismatches == 0 && identity_gap <= 1e-12;
    report(
        10,
        "oracle suites",
        pass,
        format!(
            "XOS conversion max error {xos_mismatch:.1e} on 200 tables; matching vs brute force: {matching_mismatches} mismatches in 1000; accounting identity max gap {identity_gap:.1e} on {profiles} profiles"
        ),
    );
}

#[test]
fn strategies_bid_within_closed_form_ranges() {
    // used by criterion 2; kept separate so a failure is easy to read
    for v in [0.0, 0.3, 1.0] {
        assert!(BidFunction::VickreyWeak.bid(v).unwrap() <= 2.0 / 3.0 + 1e-12);
        assert!(BidFunction::VickreyStrong.bid(2.0 * v).unwrap() <= 2.0 / 3.0 + 1e-12);
    }
}
