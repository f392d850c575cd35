mod common;

use common::props::*;
use common::{entropy_units, flood_fill_partition, mi_inclusion_exclusion, rows_of};
use mipt_core::analysis::{angle_average, chord_length, eta_1d, eta_2d, eta_intervals};
use mipt_core::cluster::{ClusterState, SurfacePartition};
use mipt_core::ensembles::{EnsembleConfig, Sampler};
use mipt_core::experiment::{HitAccumulator, Tally, TallyKey};
use mipt_core::measures::{evaluate, place_subregions_1d, Spacing};
use mipt_core::oracle::tableau_partition;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn engine_matches_flood_fill_and_index_rules((cfg, seed, r) in arb_ensemble(24, 24)) {
        check_engine_invariants(&cfg, seed, r)?;
    }

    #[test]
    fn measure_identities((partition, subs) in arb_measure_case(16)) {
        check_measure_identities(&partition, &subs)?;
    }

    #[test]
    fn entropy_of_complement_is_equal(partition in arb_partition(12), mask in 0u32..4096) {
        let inside: Vec<bool> = (0..12).map(|s| mask >> s & 1 == 1).collect();
        let outside: Vec<bool> = inside.iter().map(|b| !b).collect();
        prop_assert_eq!(entropy_units(&partition, &inside), entropy_units(&partition, &outside));
    }

    #[test]
    fn fit_is_scale_equivariant(
        alpha in 0.2..10.0f64,
        prefactor in 1e-3..10.0f64,
        c in 0.05..20.0f64,
        noise in prop::collection::vec(-0.2..0.2f64, 6),
        rel_err in 0.01..0.3f64,
    ) {
        let etas = [0.002, 0.005, 0.01, 0.03, 0.1, 0.25];
        let mut points = power_law_points(alpha, prefactor, &etas, rel_err);
        for (p, n) in points.iter_mut().zip(&noise) {
            p.rate *= 1.0 + n;
        }
        check_fit_equivariance(&points, c)?;
    }

    #[test]
    fn angle_average_recovers_radial_law(
        r2 in prop::sample::select(vec![1u32, 2, 5]),
        alpha in 0.5..3.0f64,
        log_eta in (0.02f64).ln()..(0.08f64).ln(),
    ) {
        check_angle_recovery(128, (r2 as f64).sqrt(), alpha, log_eta.exp())?;
    }

    #[test]
    fn eta_reduces_to_two_interval_cross_ratio(
        n in 32usize..1024,
        w1 in 1usize..8,
        w2 in 1usize..8,
        gap in 1usize..200,
        start in 0usize..1024,
    ) {
        prop_assume!(w1 + gap + w2 < n);
        let a = start % n;
        let b = (a + w1 + gap) % n;
        let eta = eta_intervals(&[a, b], &[w1, w2], n).unwrap();
        // points x1 < x2 < x3 < x4 around the ring
        let ch = |x: usize| chord_length(x as f64, n as f64);
        let expected = ch(w1) * ch(w2) / (ch(w1 + gap) * ch(gap + w2));
        prop_assert!((eta / expected - 1.0).abs() < 1e-10);
    }

    #[test]
    fn eta_2d_chord_symmetries(r in 0.5..4.0f64, x in 1.0..47.0f64, y in 0.0..47.0f64) {
        let l = 48.0;
        let e = eta_2d(r, x, y, l);
        prop_assert!((eta_2d(r, y, x, l) / e - 1.0).abs() < 1e-12);
        prop_assert!((eta_2d(r, l - x, y, l) / e - 1.0).abs() < 1e-9);
        prop_assert!((eta_2d(r, x, l - y, l) / e - 1.0).abs() < 1e-9);
    }

    #[test]
    fn translation_leaves_outcomes_unchanged(partition in arb_partition(20), shift in 0usize..20, d in 3usize..9) {
        let subs = place_subregions_1d(2, 2, Spacing::Fixed(d), 20).unwrap();
        let moved = SurfacePartition::from_clusters(
            20,
            partition.clusters.iter().map(|c| c.iter().map(|&s| (s + shift) % 20).collect()),
        );
        let moved_subs = mipt_core::measures::SubregionSet::new(
            subs.regions().iter().map(|r| r.iter().map(|&s| (s + shift) % 20).collect()).collect(),
            20,
            mipt_core::measures::Geometry::Custom,
        )
        .unwrap();
        prop_assert_eq!(evaluate(&partition, &subs), evaluate(&moved, &moved_subs));
        prop_assert!((eta_1d(&subs).unwrap() / eta_1d(&moved_subs).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tally_merge_is_commutative_with_identity(
        a in prop::collection::vec((0u64..5, 0u64..5, 0u64..50), 3),
        b in prop::collection::vec((0u64..5, 0u64..5, 0u64..50), 3),
    ) {
        let keys: Vec<TallyKey> = (2..5)
            .map(|d| TallyKey::of(
                mipt_core::ensembles::Family::Moc1d,
                &place_subregions_1d(2, 1, Spacing::Fixed(d), 16).unwrap(),
            ).unwrap())
            .collect();
        let build = |v: &[(u64, u64, u64)]| {
            let mut acc = HitAccumulator::new(keys.clone());
            for (t, &(g, i, m)) in acc.tallies.iter_mut().zip(v) {
                *t = Tally { gme_hits: g, indirect_hits: i, mi_sum: m, mi_sumsq: m * m, iterations: 10 };
            }
            acc
        };
        let (x, y) = (build(&a), build(&b));
        let mut xy = x.clone();
        xy.merge(&y).unwrap();
        let mut yx = y.clone();
        yx.merge(&x).unwrap();
        prop_assert_eq!(&xy, &yx);
        let mut with_empty = x.clone();
        with_empty.merge(&HitAccumulator::new(Vec::new())).unwrap();
        prop_assert_eq!(&with_empty, &x);
    }

    #[test]
    fn outcome_signs_never_change_the_partition(
        (cfg, seed, r) in arb_ensemble(10, 8),
        s1 in any::<u64>(),
        s2 in any::<u64>(),
    ) {
        let sampler = Sampler::new(&cfg, seed).unwrap();
        let a = tableau_partition(&sampler, r, s1).unwrap();
        let b = tableau_partition(&sampler, r, s2).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(a, flood_fill_partition(sampler.num_sites(), &rows_of(&sampler, r)));
    }
}

/// Worst relative change of the angle average over 16..=128 angles, against 4096.
fn angle_count_variation(r2: u32, alpha: f64, separation: f64) -> f64 {
    let r = (r2 as f64).sqrt();
    let grid = radial_grid(128, r, |e| e.powf(alpha / 2.0));
    let eta = (chord_length(2.0 * r, 128.0) / separation).powi(2);
    let fine = angle_average(&grid, r, eta, 4096).unwrap().rate;
    [16, 32, 64, 128]
        .iter()
        .map(|&n| (angle_average(&grid, r, eta, n).unwrap().rate / fine - 1.0).abs())
        .fold(0.0, f64::max)
}

#[test]
fn angle_average_is_stable_beyond_sixteen_angles() {
    for r2 in [1u32, 2, 5, 8] {
        for alpha in [1.0, 2.0, 4.0] {
            for separation in [16.0, 24.0, 32.0] {
                let v = angle_count_variation(r2, alpha, separation);
                assert!(v < 1e-3, "r2 {r2} alpha {alpha} separation {separation}: {v}");
            }
        }
        // steeper laws alias the interpolation kinks slightly more
        for separation in [16.0, 24.0, 32.0] {
            let v = angle_count_variation(r2, 6.0, separation);
            assert!(v < 2e-3, "r2 {r2} alpha 6 separation {separation}: {v}");
        }
    }
}

#[test]
fn inclusion_exclusion_examples() {
    // one cluster over both regions and the exterior
    let p = SurfacePartition::from_clusters(8, [vec![0, 3, 6], vec![1], vec![2], vec![4], vec![5], vec![7]]);
    let subs = place_subregions_1d(2, 1, Spacing::Fixed(3), 8).unwrap();
    assert_eq!(mi_inclusion_exclusion(&p, &subs), 1);
    assert_eq!(evaluate(&p, &subs).mi_units, 1);
    // confined cluster, even and odd k
    let p = SurfacePartition::from_clusters(8, [vec![0, 3], vec![1], vec![2], vec![4], vec![5], vec![6], vec![7]]);
    assert_eq!(mi_inclusion_exclusion(&p, &subs), 2);
    let subs3 = place_subregions_1d(3, 1, Spacing::Fixed(3), 8).unwrap();
    let p = SurfacePartition::from_clusters(8, [vec![0, 3, 6], vec![1], vec![2], vec![4], vec![5], vec![7]]);
    assert_eq!(mi_inclusion_exclusion(&p, &subs3), 0);
    assert_eq!(evaluate(&p, &subs3).mi_units, 0);
}

#[test]
fn engine_reuse_after_reset() {
    let sampler = Sampler::new(&EnsembleConfig::moc1d(20, 30, 0.5), 4).unwrap();
    let mut state = ClusterState::new(20);
    for r in 0..20 {
        state.reset();
        sampler.for_each_row(r, |row| state.advance_layer(row));
        assert_eq!(state.surface_partition(), flood_fill_partition(20, &rows_of(&sampler, r)));
    }
}
