use std::sync::Arc;

use vrjp_core::experiments::{localization_experiment, LocalizationConfig, SummaryStats};
use vrjp_core::stats::chi_square_homogeneity;
use vrjp_core::{init_sim, make_named_graph, run, Graph, Horizon, ReinforcementSpec, SimConfig};

fn localization(g: Graph, start: usize, seed: u64, horizon: f64, replicas: usize) -> LocalizationConfig {
    LocalizationConfig {
        sim: SimConfig::uniform(Arc::new(g), ReinforcementSpec::power(3.0), 1.0, start).with_seed(seed),
        replicas,
        horizon,
        share_min: 0.9,
        stall_max: 1e-3,
        pass_fraction: 0.95,
    }
}

fn in_pool(threads: usize, cfg: &LocalizationConfig) -> SummaryStats {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .unwrap()
        .install(|| localization_experiment(cfg).unwrap())
}

fn bits(s: &SummaryStats) -> Vec<u64> {
    s.estimates
        .iter()
        .map(|e| e.value)
        .chain(s.outcomes.iter().flatten().copied())
        .map(f64::to_bits)
        .collect()
}

#[test]
fn summaries_are_bit_exact_across_runs_and_pools() {
    let cfg = localization(make_named_graph("path", &[5]).unwrap(), 2, 7, 200.0, 24);
    let one = in_pool(1, &cfg);
    let again = in_pool(1, &cfg);
    let two = in_pool(2, &cfg);
    let four = in_pool(4, &cfg);
    assert_eq!(bits(&one), bits(&again));
    assert_eq!(bits(&one), bits(&two));
    assert_eq!(bits(&one), bits(&four));
    assert_eq!(one, four);
}

#[test]
fn seed_changes_the_sample() {
    let a = localization_experiment(&localization(make_named_graph("path", &[5]).unwrap(), 2, 7, 200.0, 8)).unwrap();
    let b = localization_experiment(&localization(make_named_graph("path", &[5]).unwrap(), 2, 8, 200.0, 8)).unwrap();
    assert_ne!(a.config_hash, b.config_hash);
    assert_ne!(bits(&a), bits(&b));
}

#[test]
fn trajectory_replays_from_its_config() {
    let g = Arc::new(make_named_graph("cycle", &[6]).unwrap());
    let cfg = SimConfig::uniform(g, ReinforcementSpec::power(2.0), 1.5, 0).with_seed(3).with_replica(9);
    let a = run(&mut init_sim(cfg.clone()).unwrap(), Horizon::Jumps(500)).unwrap();
    let b = run(&mut init_sim(cfg).unwrap(), Horizon::Jumps(500)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn localization_is_invariant_under_relabeling() {
    let g = make_named_graph("path", &[5]).unwrap();
    let perm = [3, 0, 4, 1, 2];
    let relabeled = g.relabel(&perm);
    let n = 300;
    let a = localization_experiment(&localization(g, 2, 101, 1e3, n)).unwrap();
    let b = localization_experiment(&localization(relabeled, perm[2], 202, 1e3, n)).unwrap();

    let mut counts_a = [0u64; 5];
    let mut counts_b = [0u64; 5];
    for row in &a.outcomes {
        counts_a[row[0] as usize] += 1;
    }
    for row in &b.outcomes {
        let v = perm.iter().position(|&p| p == row[0] as usize).unwrap();
        counts_b[v] += 1;
    }
    let (_, p) = chi_square_homogeneity(&counts_a, &counts_b);
    assert!(p > 1e-3, "dominant-vertex laws differ: {counts_a:?} vs {counts_b:?}, p={p}");

    let fa = a.get("pass_fraction").unwrap();
    let fb = b.get("pass_fraction").unwrap();
    let se = fa.se.unwrap().hypot(fb.se.unwrap()).max(1.0 / n as f64);
    assert!((fa.value - fb.value).abs() <= 4.0 * se, "{} vs {}", fa.value, fb.value);
}
