//! Generated datasets against their design: effect covariance, censoring
//! rate and failures at every location.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use spatial_aft::kernels::{build_correlation_matrix, KernelParams, Topology};
use spatial_aft::simulate::{draw_effects, generate_dataset, SimulationSettings, TruthParams};
use statrs::distribution::{ContinuousCDF, Normal};
use spatial_aft::topology::{build_location_map, GridSpec, Relabeling};

#[test]
fn physical_effect_covariance_matches_kernel() {
    let g = GridSpec::new(5, 5).unwrap();
    let map = build_location_map(g, Relabeling::Folded).unwrap();
    let truth = TruthParams {
        sigma_v2: 0.5,
        ..TruthParams::default()
    };
    let p = KernelParams::new(truth.nu_r_p, truth.nu_c_p, truth.kappa_v, truth.sigma_v2, Topology::EuclideanGrid).unwrap();
    let sigma = build_correlation_matrix(&map, &p).unwrap().covariance();
    let reps = 2000;
    let m = map.len();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let draws: Vec<Vec<f64>> = (0..reps).map(|_| draw_effects(&map, &truth, &mut rng).unwrap().0).collect();
    let n = reps as f64;
    let mut z = Vec::new();
    for i in 0..m {
        for j in 0..=i {
            // Zero-mean field, so the covariance estimate uses the known mean.
            let est = draws.iter().map(|v| v[i] * v[j]).sum::<f64>() / n;
            let se = ((sigma[(i, i)] * sigma[(j, j)] + sigma[(i, j)].powi(2)) / n).sqrt();
            z.push(((est - sigma[(i, j)]) / se).abs());
        }
    }
    // Hundreds of correlated entries are compared at once, so a lone 3-SE
    // excursion is expected. Require 3-SE agreement for at least 99% of the
    // entries and no entry beyond the Bonferroni bound at family-wise 0.001.
    let bonferroni = Normal::standard().inverse_cdf(1.0 - 0.001 / (2.0 * z.len() as f64));
    let beyond_3se = z.iter().filter(|&&v| v > 3.0).count();
    assert!(beyond_3se * 100 <= z.len(), "{beyond_3se} of {} entries beyond 3 SE", z.len());
    let worst = z.iter().copied().fold(0.0, f64::max);
    assert!(worst < bonferroni, "largest deviation {worst} SE exceeds {bonferroni}");
}

#[test]
fn presets_hit_censoring_target_with_failures_everywhere() {
    for (n, reps) in [(5, 52), (7, 52), (10, 52), (5, 152)] {
        for seed in 0..3 {
            let s = SimulationSettings::standard(GridSpec::new(n, n).unwrap(), reps, seed);
            let (d, man) = generate_dataset(&s).unwrap();
            assert_eq!(d.n_units(), n * n * reps);
            assert!((man.realized_censoring_rate - 0.5).abs() <= 0.05);
            assert!(d.times().iter().all(|t| *t > 0.0));
            let mut failures = vec![0usize; n * n];
            for (i, e) in d.events().iter().enumerate() {
                if *e {
                    failures[d.locations()[i]] += 1;
                } else {
                    assert_eq!(d.times()[i], man.censoring_time);
                }
            }
            assert!(failures.iter().all(|&f| f > 0));
        }
    }
}

#[test]
fn levels_are_balanced() {
    let s = SimulationSettings::standard(GridSpec::new(2, 2).unwrap(), 52, 1);
    let (d, _) = generate_dataset(&s).unwrap();
    for k in 1..4 {
        let count = (0..d.n_units()).filter(|&i| d.x(i)[k] == 1.0).count();
        assert_eq!(count, 52);
    }
}
