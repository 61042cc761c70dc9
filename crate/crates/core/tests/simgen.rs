use proptest::prelude::*;
use sbjgm::linalg::min_eigenvalue;
use sbjgm::simgen::{generate_networks, simulate};
use sbjgm::{SimDesign, Setting, Topology};

const TOPOLOGIES: [Topology; 3] = [Topology::PowerLaw, Topology::NearestNeighbor, Topology::ErdosRenyi];

#[test]
fn every_generated_precision_is_positive_definite() {
    for seed in 0..1000u64 {
        let topology = TOPOLOGIES[seed as usize % 3];
        let setting = [Setting::S1, Setting::S2, Setting::S3][(seed / 3) as usize % 3];
        let design = SimDesign::new(2 + (seed as usize % 2), 30, topology, setting, seed).unwrap();
        let nets = generate_networks(&design).unwrap();
        for o in &nets.omega {
            assert!(min_eigenvalue(o) > 0.0, "seed {seed}");
        }
    }
}

#[test]
fn default_design_censors_about_a_fifth() {
    let rates: Vec<f64> = (0..100u64)
        .map(|seed| {
            let design = SimDesign::new(2, 100, Topology::PowerLaw, Setting::S1, seed).unwrap();
            let d = simulate(&design).unwrap().dataset;
            assert_eq!((d.n(), d.p()), (300, 100));
            d.delta.iter().filter(|&&v| v == 0).count() as f64 / d.n() as f64
        })
        .collect();
    let mean = rates.iter().sum::<f64>() / rates.len() as f64;
    assert!((0.15..=0.25).contains(&mean) && (mean - 0.2).abs() < 0.01, "mean censoring {mean}");
    // With n = 300 the per-replicate fraction has sd near 0.023.
    let inside = rates.iter().filter(|r| (0.15..=0.25).contains(*r)).count();
    assert!(inside >= 95, "{inside} of 100 replicates inside [0.15, 0.25]");
}

#[test]
fn predictor_means_are_near_zero() {
    for seed in 0..20u64 {
        let design = SimDesign::new(2, 20, Topology::ErdosRenyi, Setting::S2, seed).unwrap();
        let sim = simulate(&design).unwrap();
        for k in 0..2 {
            let rows: Vec<usize> = (0..sim.dataset.n()).filter(|&i| sim.truth.labels[i] == k).collect();
            let nk = rows.len() as f64;
            for j in 0..20 {
                let col: Vec<f64> = rows.iter().map(|&i| sim.dataset.x[(i, j)]).collect();
                let mean = col.iter().sum::<f64>() / nk;
                let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (nk - 1.0)).sqrt();
                assert!(mean.abs() < 4.0 * sd / nk.sqrt(), "seed {seed} group {k} column {j}");
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn shared_blocks_agree_and_sizes_match(seed in 0u64..10_000, t in 0usize..3, s in 0usize..3, k in 2usize..4) {
        let setting = [Setting::S1, Setting::S2, Setting::S3][s];
        let mut design = SimDesign::new(k, 30, TOPOLOGIES[t], setting, seed).unwrap();
        design.sizes = (0..k).map(|i| 20 + 5 * i).collect();
        let sim = simulate(&design).unwrap();
        for (kk, &size) in design.sizes.iter().enumerate() {
            prop_assert_eq!(sim.truth.labels.iter().filter(|&&l| l == kk).count(), size);
        }
        // The first `shared` blocks of three predictors carry identical edges and signs.
        let block = 30 / design.n_subnets;
        let shared_cols = design.shared_subnets * block;
        let o = &sim.truth.omega;
        for kk in 1..k {
            for j in 0..shared_cols {
                for l in 0..shared_cols {
                    if j != l {
                        prop_assert_eq!(o[0][(j, l)] != 0.0, o[kk][(j, l)] != 0.0);
                        prop_assert_eq!(o[0][(j, l)].signum(), o[kk][(j, l)].signum());
                    }
                }
            }
        }
        let again = simulate(&design).unwrap();
        prop_assert_eq!(sim.dataset.t, again.dataset.t);
        prop_assert_eq!(sim.dataset.x, again.dataset.x);
    }
}
