#![allow(dead_code)]

pub mod props;

use std::collections::VecDeque;

use mipt_core::cluster::SurfacePartition;
use mipt_core::ensembles::{LayerBonds, Sampler};
use mipt_core::measures::SubregionSet;

/// All rows of one realization, materialized.
pub fn rows_of(sampler: &Sampler, realization: u64) -> Vec<LayerBonds> {
    let mut rows = Vec::new();
    sampler.for_each_row(realization, |row| rows.push(row.clone()));
    rows
}

/// Final-slice partition by breadth-first search on the full space-time graph.
///
/// Node `(t, s)` is site `s` before row `t`. Row `t` joins `(t, i)` and `(t, j)`
/// for each intralayer bond and `(t, src)` to `(t + 1, s)` when the interlayer
/// bond of `src = routing[s]` is open.
pub fn flood_fill_partition(n: usize, rows: &[LayerBonds]) -> SurfacePartition {
    let layers = rows.len() + 1;
    let node = |t: usize, s: usize| t * n + s;
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); layers * n];
    for (t, row) in rows.iter().enumerate() {
        for &(i, j) in &row.intralayer {
            adj[node(t, i as usize)].push(node(t, j as usize));
            adj[node(t, j as usize)].push(node(t, i as usize));
        }
        for s in 0..n {
            let src = row.routing.as_ref().map_or(s, |r| r[s] as usize);
            if row.interlayer_open[src] {
                adj[node(t, src)].push(node(t + 1, s));
                adj[node(t + 1, s)].push(node(t, src));
            }
        }
    }
    let mut comp = vec![usize::MAX; layers * n];
    let mut next = 0;
    for start in 0..layers * n {
        if comp[start] != usize::MAX {
            continue;
        }
        comp[start] = next;
        let mut queue = VecDeque::from([start]);
        while let Some(v) = queue.pop_front() {
            for &w in &adj[v] {
                if comp[w] == usize::MAX {
                    comp[w] = next;
                    queue.push_back(w);
                }
            }
        }
        next += 1;
    }
    let top = layers - 1;
    let labels: Vec<u32> = (0..n).map(|s| comp[node(top, s)] as u32).collect();
    SurfacePartition::from_labels(&labels)
}

/// Cat-state entropy of the union of `regions` in units of `ln 2`: the number of
/// clusters with sites both inside and outside the union.
pub fn entropy_units(partition: &SurfacePartition, inside: &[bool]) -> i64 {
    partition
        .clusters
        .iter()
        .filter(|c| {
            let n_in = c.iter().filter(|&&s| inside[s]).count();
            n_in > 0 && n_in < c.len()
        })
        .count() as i64
}

/// `k`-party mutual information by inclusion-exclusion over all subset entropies.
pub fn mi_inclusion_exclusion(partition: &SurfacePartition, subs: &SubregionSet) -> i64 {
    let k = subs.k();
    let mut total = 0i64;
    for mask in 1u32..(1 << k) {
        let mut inside = vec![false; subs.num_sites()];
        for (r, region) in subs.regions().iter().enumerate() {
            if mask >> r & 1 == 1 {
                for &s in region {
                    inside[s] = true;
                }
            }
        }
        let sign = if mask.count_ones() % 2 == 1 { 1 } else { -1 };
        total += sign * entropy_units(partition, &inside);
    }
    total
}
