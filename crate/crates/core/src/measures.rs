//! Entanglement observables of a cat-state product, evaluated on subregions.
//!
//! The final state of a measurement-only circuit is a product of cat states,
//! one per cluster surface. For subregions `A_1..A_k`:
//!
//! * a direct `k`-party GME hit is a cluster that touches every `A_i` and
//!   nothing outside their union;
//! * the `k`-party mutual information (in units of `ln 2`) gets `1` from every
//!   cluster touching all `A_i` and the exterior, and `2` (even `k`) or `0`
//!   (odd `k`) from every cluster touching all `A_i` and confined to them;
//! * an indirect hit has no direct hit, but the `A_i` are linked into one
//!   component by clusters confined to the union.

use serde::{Deserialize, Serialize};

use crate::cluster::{SurfaceLabels, SurfacePartition};
use crate::error::{Error, Result};

/// How a subregion set was laid out; carried into tallies and `eta`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Geometry {
    /// `k` intervals of `width` on a ring of `num_sites`, left endpoints at
    /// `i * spacing` (or `floor(i N / k)` for even spacing).
    Intervals { width: usize, spacing: Spacing, num_sites: usize },
    /// Disks of lattice points with squared distance `< radius_sq` around the
    /// corners of the square spanned by `(dx, dy)` on an `side x side` torus.
    Disks { radius_sq: u32, dx: i32, dy: i32, side: usize },
    /// Arbitrary site sets.
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Spacing {
    Even,
    Fixed(usize),
}

/// `k >= 2` pairwise-disjoint, sorted site sets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubregionSet {
    regions: Vec<Vec<usize>>,
    num_sites: usize,
    geometry: Geometry,
}

impl SubregionSet {
    pub fn new(regions: Vec<Vec<usize>>, num_sites: usize, geometry: Geometry) -> Result<Self> {
        if regions.len() < 2 {
            return Err(Error::InvalidGeometry(format!("need k >= 2 regions, got {}", regions.len())));
        }
        let mut owner = vec![usize::MAX; num_sites];
        let mut sorted = Vec::with_capacity(regions.len());
        for (r, mut region) in regions.into_iter().enumerate() {
            if region.is_empty() {
                return Err(Error::InvalidGeometry(format!("region {r} is empty")));
            }
            region.sort_unstable();
            region.dedup();
            for &s in &region {
                if s >= num_sites {
                    return Err(Error::InvalidGeometry(format!("site {s} outside 0..{num_sites}")));
                }
                if owner[s] != usize::MAX {
                    return Err(Error::InvalidGeometry(format!("regions {} and {r} overlap at site {s}", owner[s])));
                }
                owner[s] = r;
            }
            sorted.push(region);
        }
        Ok(Self { regions: sorted, num_sites, geometry })
    }

    pub fn k(&self) -> usize {
        self.regions.len()
    }

    pub fn regions(&self) -> &[Vec<usize>] {
        &self.regions
    }

    pub fn num_sites(&self) -> usize {
        self.num_sites
    }

    pub fn geometry(&self) -> Geometry {
        self.geometry
    }

    pub fn union_size(&self) -> usize {
        self.regions.iter().map(Vec::len).sum()
    }

    /// Same set with the region labels permuted (`order[i]` becomes region `i`).
    pub fn permuted(&self, order: &[usize]) -> Self {
        Self {
            regions: order.iter().map(|&i| self.regions[i].clone()).collect(),
            num_sites: self.num_sites,
            geometry: self.geometry,
        }
    }

    /// `(region, site)` pairs, for the fast scanner.
    pub fn sites(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.regions.iter().enumerate().flat_map(|(r, sites)| sites.iter().map(move |&s| (r, s)))
    }
}

/// `k` intervals of `width` on a ring of `num_sites`.
pub fn place_subregions_1d(k: usize, width: usize, spacing: Spacing, num_sites: usize) -> Result<SubregionSet> {
    if k < 2 {
        return Err(Error::InvalidGeometry("need k >= 2".into()));
    }
    if width == 0 || k * width > num_sites {
        return Err(Error::InvalidGeometry(format!("{k} intervals of width {width} do not fit on {num_sites} sites")));
    }
    let regions = (0..k)
        .map(|i| {
            let left = match spacing {
                Spacing::Even => i * num_sites / k,
                Spacing::Fixed(delta) => i * delta,
            };
            (0..width).map(|t| (left + t) % num_sites).collect()
        })
        .collect();
    SubregionSet::new(regions, num_sites, Geometry::Intervals { width, spacing, num_sites })
}

/// Lattice offsets strictly inside the circle of squared radius `radius_sq`.
pub fn disk_offsets(radius_sq: u32) -> Vec<(i32, i32)> {
    let r = (radius_sq as f64).sqrt().ceil() as i32;
    let mut pts = Vec::new();
    for j in -r..=r {
        for i in -r..=r {
            if ((i * i + j * j) as u32) < radius_sq {
                pts.push((i, j));
            }
        }
    }
    pts
}

/// Corner centres `(0,0), (x,y), (-y,x), (x-y, x+y)`, first `k` of them.
pub fn square_centers(k: usize, dx: i32, dy: i32) -> Vec<(i32, i32)> {
    [(0, 0), (dx, dy), (-dy, dx), (dx - dy, dx + dy)][..k].to_vec()
}

#[inline]
pub fn torus_site(x: i32, y: i32, side: usize) -> usize {
    let l = side as i32;
    (y.rem_euclid(l) * l + x.rem_euclid(l)) as usize
}

/// `k` in `2..=4` disks of squared radius `radius_sq` on an `side x side` torus.
pub fn place_subregions_2d(k: usize, radius_sq: u32, dx: i32, dy: i32, side: usize) -> Result<SubregionSet> {
    if !(2..=4).contains(&k) {
        return Err(Error::InvalidGeometry(format!("2D placement supports k in 2..=4, got {k}")));
    }
    if (dx * dx + dy * dy) as i64 <= 4 * radius_sq as i64 {
        return Err(Error::InvalidGeometry(format!("displacement ({dx},{dy}) too short for radius^2 {radius_sq}")));
    }
    let offsets = disk_offsets(radius_sq);
    if offsets.is_empty() {
        return Err(Error::InvalidGeometry("radius encloses no lattice point".into()));
    }
    let regions = square_centers(k, dx, dy)
        .into_iter()
        .map(|(cx, cy)| offsets.iter().map(|&(i, j)| torus_site(cx + i, cy + j, side)).collect())
        .collect();
    SubregionSet::new(regions, side * side, Geometry::Disks { radius_sq, dx, dy, side })
}

/// Per-realization observables for one subregion set.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MeasureOutcome {
    pub gme_hit: bool,
    /// `k`-party mutual information in units of `ln 2`.
    pub mi_units: u32,
    pub indirect_hit: bool,
}

impl MeasureOutcome {
    pub fn mi_nats(&self) -> f64 {
        self.mi_units as f64 * std::f64::consts::LN_2
    }
}

struct ClusterTouch {
    mask: u32,
    confined: bool,
}

fn touches(partition: &SurfacePartition, subs: &SubregionSet) -> Vec<ClusterTouch> {
    assert_eq!(partition.num_sites, subs.num_sites(), "partition and subregions disagree on N");
    assert!(subs.k() <= 32);
    let mut region_of = vec![usize::MAX; subs.num_sites()];
    for (r, s) in subs.sites() {
        region_of[s] = r;
    }
    partition
        .clusters
        .iter()
        .map(|cluster| {
            let mut mask = 0u32;
            let mut confined = true;
            for &s in cluster {
                match region_of[s] {
                    usize::MAX => confined = false,
                    r => mask |= 1 << r,
                }
            }
            ClusterTouch { mask, confined }
        })
        .collect()
}

fn full_mask(k: usize) -> u32 {
    if k >= 32 {
        u32::MAX
    } else {
        (1u32 << k) - 1
    }
}

/// Some cluster touches every region and nothing outside their union.
pub fn gme_hit(partition: &SurfacePartition, subs: &SubregionSet) -> bool {
    let all = full_mask(subs.k());
    touches(partition, subs).iter().any(|t| t.confined && t.mask == all)
}

/// `k`-party mutual information in units of `ln 2`.
pub fn mi_value(partition: &SurfacePartition, subs: &SubregionSet) -> u32 {
    let all = full_mask(subs.k());
    let even = subs.k().is_multiple_of(2);
    touches(partition, subs)
        .iter()
        .filter(|t| t.mask == all)
        .map(|t| match (t.confined, even) {
            (false, _) => 1,
            (true, true) => 2,
            (true, false) => 0,
        })
        .sum()
}

/// No direct hit, but clusters confined to the union link all regions.
pub fn indirect_gme_hit(partition: &SurfacePartition, subs: &SubregionSet) -> bool {
    let all = full_mask(subs.k());
    let touched = touches(partition, subs);
    if touched.iter().any(|t| t.confined && t.mask == all) {
        return false;
    }
    links_all(touched.iter().filter(|t| t.confined).map(|t| t.mask), all)
}

fn links_all(masks: impl Iterator<Item = u32> + Clone, all: u32) -> bool {
    let mut comp = 1u32;
    loop {
        let grown = masks.clone().filter(|m| m & comp != 0).fold(comp, |c, m| c | m);
        if grown == comp {
            return comp == all;
        }
        comp = grown;
    }
}

pub fn evaluate(partition: &SurfacePartition, subs: &SubregionSet) -> MeasureOutcome {
    MeasureOutcome {
        gme_hit: gme_hit(partition, subs),
        mi_units: mi_value(partition, subs),
        indirect_hit: indirect_gme_hit(partition, subs),
    }
}

/// Allocation-free evaluation of [`MeasureOutcome`] straight from site labels.
///
/// Cost is linear in the number of subregion sites: each touched cluster's
/// confinement is decided by comparing its size with the number of its sites
/// found inside the union.
#[derive(Debug, Clone, Default)]
pub struct RegionScanner {
    epoch: Vec<u32>,
    mask: Vec<u32>,
    inside: Vec<u32>,
    touched: Vec<u32>,
    confined_masks: Vec<u32>,
    current: u32,
}

impl RegionScanner {
    pub fn new(label_capacity: usize) -> Self {
        Self {
            epoch: vec![0; label_capacity],
            mask: vec![0; label_capacity],
            inside: vec![0; label_capacity],
            ..Default::default()
        }
    }

    fn next_epoch(&mut self, capacity: usize) {
        if self.epoch.len() < capacity {
            self.epoch.resize(capacity, 0);
            self.mask.resize(capacity, 0);
            self.inside.resize(capacity, 0);
        }
        if self.current == u32::MAX {
            self.epoch.iter_mut().for_each(|e| *e = 0);
            self.current = 0;
        }
        self.current += 1;
        self.touched.clear();
    }

    /// `sites` yields `(region, site)` for every site of every region; regions
    /// must be disjoint.
    pub fn evaluate(
        &mut self,
        labels: &SurfaceLabels,
        k: usize,
        sites: impl IntoIterator<Item = (usize, usize)>,
    ) -> MeasureOutcome {
        self.next_epoch(labels.label_capacity());
        for (r, s) in sites {
            let c = labels.labels[s] as usize;
            if self.epoch[c] != self.current {
                self.epoch[c] = self.current;
                self.mask[c] = 0;
                self.inside[c] = 0;
                self.touched.push(c as u32);
            }
            self.mask[c] |= 1 << r;
            self.inside[c] += 1;
        }
        let all = full_mask(k);
        let even = k.is_multiple_of(2);
        let mut out = MeasureOutcome::default();
        self.confined_masks.clear();
        for &c in &self.touched {
            let c = c as usize;
            let confined = self.inside[c] == labels.sizes[c];
            if self.mask[c] == all {
                if confined {
                    out.gme_hit = true;
                    out.mi_units += if even { 2 } else { 0 };
                } else {
                    out.mi_units += 1;
                }
            }
            if confined && self.mask[c].count_ones() >= 2 {
                self.confined_masks.push(self.mask[c]);
            }
        }
        if !out.gme_hit && !self.confined_masks.is_empty() {
            out.indirect_hit = links_all(self.confined_masks.iter().copied(), all);
        }
        out
    }
}
