use mipt_core::cluster::{ClusterState, EngineStats};
use mipt_core::ensembles::{EnsembleConfig, Sampler};

fn run(cfg: &EnsembleConfig, seed: u64, realizations: u64) -> EngineStats {
    let sampler = Sampler::new(cfg, seed).unwrap();
    let mut state = ClusterState::new(cfg.num_sites());
    let mut total = EngineStats::default();
    for r in 0..realizations {
        state.reset();
        sampler.for_each_row(r, |row| state.advance_layer(row));
        let s = state.stats();
        total.layers += s.layers;
        total.site_layers += s.site_layers;
        total.find_steps += s.find_steps;
        total.merges += s.merges;
        total.peak_live = total.peak_live.max(s.peak_live);
    }
    total
}

#[test]
fn live_indices_stay_below_two_n_over_a_million_layers() {
    for p in [0.01, 0.5, 0.99] {
        for cfg in [EnsembleConfig::moc1d(16, 1_000_000, p), EnsembleConfig::moc2d(4, 1_000_000, p)] {
            let stats = run(&cfg, 9, 1);
            assert!(stats.layers >= 1_000_000);
            assert!(stats.peak_live <= 2 * cfg.num_sites(), "{cfg:?}: {}", stats.peak_live);
        }
    }
}

#[test]
fn per_site_work_does_not_grow_with_system_size() {
    let per_site = |n: usize, depth: usize, realizations: u64| {
        let s = run(&EnsembleConfig::moc1d(n, depth, 0.5), 3, realizations);
        (s.find_steps + s.merges + s.site_layers) as f64 / s.site_layers as f64
    };
    let small = per_site(256, 512, 8);
    let large = per_site(16384, 64, 1);
    assert!(large / small < 2.0, "{large} vs {small}");
}
