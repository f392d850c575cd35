#![allow(dead_code, clippy::needless_range_loop)]

use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use proptest::test_runner::TestCaseError;

use mipt_core::analysis::{angle_average, eta_2d, fit_power_law, EtaPoint, RateGrid};
use mipt_core::cluster::{ClusterState, SurfacePartition};
use mipt_core::ensembles::{EnsembleConfig, LayerBonds, Sampler};
use mipt_core::measures::{evaluate, Geometry, RegionScanner, SubregionSet};

use super::{flood_fill_partition, mi_inclusion_exclusion, rows_of};

/// A small ensemble of any family with a seed and realization index.
pub fn arb_ensemble(max_sites: usize, max_depth: usize) -> impl Strategy<Value = (EnsembleConfig, u64, u64)> {
    let moc1d = (2..=max_sites, 1..=max_depth, 0.0..=1.0f64).prop_map(|(n, d, p)| EnsembleConfig::moc1d(n, d, p));
    let max_side = (1..).take_while(|l| l * l <= max_sites).last().unwrap_or(1).max(2);
    let moc2d = (2..=max_side, 1..=max_depth, 0.0..=1.0f64).prop_map(|(l, d, p)| EnsembleConfig::moc2d(l, d, p));
    let dyck = (1..=max_sites / 2, 1..=max_depth.div_ceil(3), 0.0..=1.0f64)
        .prop_map(|(h, d, p)| EnsembleConfig::dyck(2 * h, d, p));
    let max_level = (usize::BITS - 1 - max_sites.max(4).leading_zeros()) as usize;
    let hyperbolic = (2..=max_level, 0.0..=1.0f64, 0.0..=1.0f64)
        .prop_map(|(m, p, f)| EnsembleConfig::hyperbolic(1 << m, p, (1.0 - p) * f));
    (prop_oneof![moc1d, moc2d, dyck, hyperbolic], any::<u64>(), 0..1000u64)
}

/// Random partition of `n` sites.
pub fn arb_partition(n: usize) -> impl Strategy<Value = SurfacePartition> {
    prop::collection::vec(0..n as u32, n).prop_map(|labels| SurfacePartition::from_labels(&labels))
}

/// Random partition with `2..=4` disjoint nonempty subregions on `n` sites.
pub fn arb_measure_case(max_sites: usize) -> impl Strategy<Value = (SurfacePartition, SubregionSet)> {
    (4..=max_sites, 2..=4usize)
        .prop_flat_map(|(n, k)| {
            // few cluster labels so that clusters span several sites
            let labels = prop::collection::vec(0..(n as u32 / 2).max(2), n);
            // owner k means outside every region
            let owners = prop::collection::vec(0..=k, n);
            (Just(n), Just(k), labels, owners)
        })
        .prop_filter_map("every region needs a site", |(n, k, labels, owners)| {
            let mut regions = vec![Vec::new(); k];
            for (s, &o) in owners.iter().enumerate() {
                if o < k {
                    regions[o].push(s);
                }
            }
            let subs = SubregionSet::new(regions, n, Geometry::Custom).ok()?;
            Some((SurfacePartition::from_labels(&labels), subs))
        })
}

fn fail(msg: String) -> TestCaseError {
    TestCaseError::fail(msg)
}

/// Surface partition after each row equals the flood fill of the rows so far,
/// every index stays below `2N`, merges keep the smallest index, and cut sites
/// take the smallest free indices in site order.
pub fn check_engine_invariants(cfg: &EnsembleConfig, seed: u64, realization: u64) -> Result<(), TestCaseError> {
    let sampler = Sampler::new(cfg, seed).map_err(|e| fail(e.to_string()))?;
    let n = sampler.num_sites();
    let rows = rows_of(&sampler, realization);
    let mut state = ClusterState::new(n);
    for t in 0..rows.len() {
        let before: Vec<u32> = state.site_indices().to_vec();
        state.advance_layer(&rows[t]);
        let after = state.site_indices();
        check_row_indices(&before, after, &rows[t])?;
        let live: BTreeSet<u32> = after.iter().copied().collect();
        prop_assert_eq!(state.live_count(), live.len());
        prop_assert_eq!(state.free_count(), 2 * n - live.len());
        for &i in &live {
            prop_assert!(state.is_in_use(i));
        }
        // the flood fill is quadratic in depth, so check a few prefixes
        if t + 1 == rows.len() || t % 7 == 0 {
            let expected = flood_fill_partition(n, &rows[..=t]);
            let got = state.surface_partition();
            prop_assert_eq!(&got, &expected, "row {} of {:?}", t, cfg);
            let covered: usize = got.clusters.iter().map(Vec::len).sum();
            prop_assert_eq!(covered, n);
        }
    }
    prop_assert!(state.stats().peak_live <= 2 * n);
    Ok(())
}

/// Index bookkeeping of one row, from the indices before and after it.
fn check_row_indices(before: &[u32], after: &[u32], row: &LayerBonds) -> Result<(), TestCaseError> {
    let n = before.len();
    let cap = 2 * n as u32;
    prop_assert!(after.iter().all(|&i| i < cap), "index outside 0..2N");
    // merge components of this row
    let mut comp: Vec<usize> = (0..n).collect();
    fn root(comp: &mut [usize], mut a: usize) -> usize {
        while comp[a] != a {
            a = comp[a];
        }
        a
    }
    for &(i, j) in &row.intralayer {
        let (a, b) = (root(&mut comp, i as usize), root(&mut comp, j as usize));
        comp[a.max(b)] = a.min(b);
    }
    // clusters sharing an index before the row are already connected
    let mut by_index: BTreeMap<u32, usize> = BTreeMap::new();
    for s in 0..n {
        if let Some(&first) = by_index.get(&before[s]) {
            let (a, b) = (root(&mut comp, first), root(&mut comp, s));
            comp[a.max(b)] = a.min(b);
        } else {
            by_index.insert(before[s], s);
        }
    }
    let mut min_index: BTreeMap<usize, u32> = BTreeMap::new();
    for s in 0..n {
        let r = root(&mut comp, s);
        let e = min_index.entry(r).or_insert(u32::MAX);
        *e = (*e).min(before[s]);
    }
    let mut pre_route = vec![u32::MAX; n];
    let mut kept = BTreeSet::new();
    for s in 0..n {
        if row.interlayer_open[s] {
            pre_route[s] = min_index[&root(&mut comp, s)];
            kept.insert(pre_route[s]);
        }
    }
    let mut free = (0..cap).filter(|i| !kept.contains(i));
    for s in 0..n {
        if !row.interlayer_open[s] {
            pre_route[s] = free.next().ok_or_else(|| fail("index pool exhausted".into()))?;
        }
    }
    for s in 0..n {
        let src = row.routing.as_ref().map_or(s, |r| r[s] as usize);
        prop_assert_eq!(after[s], pre_route[src], "site {}", s);
    }
    Ok(())
}

/// Measure identities on one partition and subregion set.
pub fn check_measure_identities(partition: &SurfacePartition, subs: &SubregionSet) -> Result<(), TestCaseError> {
    let out = evaluate(partition, subs);
    prop_assert_eq!(out.mi_units as i64, mi_inclusion_exclusion(partition, subs));
    prop_assert!(!(out.gme_hit && out.indirect_hit));
    if out.gme_hit {
        prop_assert!(out.mi_units >= 1 || subs.k() % 2 == 1);
    }
    // region relabelling
    let k = subs.k();
    let reversed: Vec<usize> = (0..k).rev().collect();
    let rotated: Vec<usize> = (0..k).map(|i| (i + 1) % k).collect();
    for order in [reversed, rotated] {
        prop_assert_eq!(evaluate(partition, &subs.permuted(&order)), out);
    }
    // cluster relabelling, through the scanner
    let labels = partition.labels();
    let mut scanner = RegionScanner::new(labels.label_capacity());
    prop_assert_eq!(scanner.evaluate(&labels, k, subs.sites()), out);
    let cap = labels.label_capacity() as u32;
    let mut shuffled = labels.clone();
    for l in shuffled.labels.iter_mut() {
        *l = cap - 1 - *l;
    }
    shuffled.sizes.reverse();
    prop_assert_eq!(scanner.evaluate(&shuffled, k, subs.sites()), out);
    Ok(())
}

/// Synthetic power law sampled at `etas`.
pub fn power_law_points(alpha: f64, prefactor: f64, etas: &[f64], rel_err: f64) -> Vec<EtaPoint> {
    etas.iter()
        .map(|&eta| {
            let rate = prefactor * eta.powf(alpha / 2.0);
            EtaPoint::new(eta, rate, rate * rel_err)
        })
        .collect()
}

/// Scaling rates changes only the prefactor; scaling `eta` leaves the exponent.
pub fn check_fit_equivariance(points: &[EtaPoint], c: f64) -> Result<(), TestCaseError> {
    let window = (1e-9, 1e9);
    let base = fit_power_law(points, window).map_err(|e| fail(e.to_string()))?;
    let scaled_rates: Vec<EtaPoint> =
        points.iter().map(|p| EtaPoint { rate: p.rate * c, stderr: p.stderr * c, ..p.clone() }).collect();
    let r = fit_power_law(&scaled_rates, window).map_err(|e| fail(e.to_string()))?;
    prop_assert!((r.alpha - base.alpha).abs() < 1e-8, "{} vs {}", r.alpha, base.alpha);
    prop_assert!((r.prefactor / base.prefactor / c - 1.0).abs() < 1e-8);
    prop_assert!((r.alpha_err - base.alpha_err).abs() < 1e-8 * (1.0 + base.alpha_err));
    let scaled_eta: Vec<EtaPoint> = points.iter().map(|p| EtaPoint { eta: p.eta * c, ..p.clone() }).collect();
    let e = fit_power_law(&scaled_eta, window).map_err(|e| fail(e.to_string()))?;
    prop_assert!((e.alpha - base.alpha).abs() < 1e-8);
    let expected = base.prefactor * c.powf(-base.alpha / 2.0);
    prop_assert!((e.prefactor / expected - 1.0).abs() < 1e-7);
    Ok(())
}

/// Grid on which the rate depends on the displacement only through `eta`.
pub fn radial_grid(side: usize, radius: f64, rate: impl Fn(f64) -> f64) -> RateGrid {
    let mut grid = RateGrid::new(side, 1_000_000);
    let l = side as i64;
    for dx in 0..l {
        for dy in 0..l {
            if dx == 0 && dy == 0 {
                continue;
            }
            grid.set(dx, dy, rate(eta_2d(radius, dx as f64, dy as f64, side as f64)));
        }
    }
    grid
}

/// Angle average of a synthetic power law recovers the law within 5%.
pub fn check_angle_recovery(side: usize, radius: f64, alpha: f64, eta: f64) -> Result<(), TestCaseError> {
    let law = |e: f64| 0.3 * e.powf(alpha / 2.0);
    let grid = radial_grid(side, radius, law);
    let avg = angle_average(&grid, radius, eta, 64).map_err(|e| fail(e.to_string()))?;
    prop_assert_eq!(avg.angles_used, 64);
    let rel = (avg.rate / law(eta) - 1.0).abs();
    prop_assert!(rel < 0.05, "relative error {} at eta {} alpha {}", rel, eta, alpha);
    Ok(())
}
