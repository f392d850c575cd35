//! Rolling union-find over the current time-slice of the percolation model.
//!
//! Only the newest layer is kept. Every site carries a cluster index below
//! `2N`; merges inside a layer build merge trees rooted at the smallest index,
//! and at the end of the layer the trees are collapsed, indices that no longer
//! label any surviving site are released, and `X`-cut sites take the smallest
//! free indices.

use crate::ensembles::LayerBonds;

/// Work counters for the amortized-cost checks.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EngineStats {
    pub layers: u64,
    pub site_layers: u64,
    /// Parent links followed while tracing merge trees.
    pub find_steps: u64,
    /// Merge-tree roots reassigned.
    pub merges: u64,
    /// Highest number of simultaneously live indices seen.
    pub peak_live: usize,
}

#[derive(Debug, Clone)]
pub struct ClusterState {
    num_sites: usize,
    site_cluster: Vec<u32>,
    parent: Vec<u32>,
    /// Bitset over the `2N` indices; a clear bit is free.
    in_use: Vec<u64>,
    /// Merge-tree nodes whose parent link was changed this layer.
    dirty: Vec<u32>,
    cuts: Vec<u32>,
    scratch: Vec<u32>,
    stats: EngineStats,
}

impl ClusterState {
    /// Every site in its own cluster, indices `0..N` live, `N..2N` free.
    pub fn new(num_sites: usize) -> Self {
        assert!(num_sites >= 1, "need at least one site");
        let cap = 2 * num_sites;
        let mut st = Self {
            num_sites,
            site_cluster: vec![0; num_sites],
            parent: (0..cap as u32).collect(),
            in_use: vec![0; cap.div_ceil(64)],
            dirty: Vec::with_capacity(num_sites),
            cuts: Vec::with_capacity(num_sites),
            scratch: Vec::with_capacity(num_sites),
            stats: EngineStats::default(),
        };
        st.reset();
        st
    }

    pub fn num_sites(&self) -> usize {
        self.num_sites
    }

    /// Back to the initial state, keeping allocations; counters are cleared.
    pub fn reset(&mut self) {
        let n = self.num_sites;
        for (i, v) in self.site_cluster.iter_mut().enumerate() {
            *v = i as u32;
        }
        for (i, p) in self.parent.iter_mut().enumerate() {
            *p = i as u32;
        }
        self.dirty.clear();
        self.in_use.iter_mut().for_each(|w| *w = 0);
        for i in 0..n {
            self.in_use[i / 64] |= 1 << (i % 64);
        }
        self.stats = EngineStats { peak_live: n, ..Default::default() };
    }

    /// Upper bound on cluster indices, `C(N) = 2N`.
    pub fn index_capacity(&self) -> usize {
        2 * self.num_sites
    }

    pub fn stats(&self) -> EngineStats {
        self.stats
    }

    /// Cluster index stored for `site` (collapsed after every layer).
    pub fn site_index(&self, site: usize) -> u32 {
        self.site_cluster[site]
    }

    pub fn site_indices(&self) -> &[u32] {
        &self.site_cluster
    }

    pub fn parent(&self, index: u32) -> u32 {
        self.parent[index as usize]
    }

    pub fn is_in_use(&self, index: u32) -> bool {
        self.in_use[index as usize / 64] >> (index % 64) & 1 == 1
    }

    pub fn free_count(&self) -> usize {
        2 * self.num_sites - self.live_count()
    }

    pub fn live_count(&self) -> usize {
        self.in_use.iter().map(|w| w.count_ones() as usize).sum()
    }

    #[inline]
    fn find(&mut self, mut idx: u32) -> u32 {
        let parent = &mut self.parent;
        let mut steps = 0u64;
        while parent[idx as usize] != idx {
            let grand = parent[parent[idx as usize] as usize];
            parent[idx as usize] = grand;
            idx = grand;
            steps += 1;
        }
        self.stats.find_steps += steps;
        idx
    }

    /// Root of the merge tree holding `site`, without compressing paths.
    pub fn root_of_site(&self, site: usize) -> u32 {
        let mut idx = self.site_cluster[site];
        while self.parent[idx as usize] != idx {
            idx = self.parent[idx as usize];
        }
        idx
    }

    /// Join the clusters of two sites; the larger root hangs under the smaller.
    #[inline]
    pub fn merge(&mut self, i: usize, j: usize) {
        let a = self.find(self.site_cluster[i]);
        let b = self.find(self.site_cluster[j]);
        if a != b {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            self.parent[hi as usize] = lo;
            self.dirty.push(hi);
            self.stats.merges += 1;
        }
    }

    /// Apply one `ZZ` layer, its `X` cuts, and any interlayer routing.
    pub fn advance_layer(&mut self, bonds: &LayerBonds) {
        let n = self.num_sites;
        debug_assert_eq!(bonds.num_sites(), n);
        for &(i, j) in &bonds.intralayer {
            self.merge(i as usize, j as usize);
        }

        // point every changed node straight at its root, then collapse sites
        // with a single lookup
        for k in 0..self.dirty.len() {
            let d = self.dirty[k];
            let root = self.find(d);
            self.parent[d as usize] = root;
        }
        self.in_use.iter_mut().for_each(|w| *w = 0);
        self.cuts.clear();
        self.cuts.resize(n, 0);
        let mut n_cuts = 0;
        for s in 0..n {
            let root = self.parent[self.site_cluster[s] as usize];
            self.site_cluster[s] = root;
            let open = bonds.interlayer_open[s];
            self.in_use[root as usize / 64] |= (open as u64) << (root % 64);
            self.cuts[n_cuts] = s as u32;
            n_cuts += !open as usize;
        }
        // cut sites take the smallest free indices, in site order
        let mut word = 0;
        for c in 0..n_cuts {
            while self.in_use[word] == u64::MAX {
                word += 1;
            }
            let bit = (!self.in_use[word]).trailing_zeros();
            let fresh = word as u32 * 64 + bit;
            assert!((fresh as usize) < 2 * n, "cluster index pool exhausted: more than 2N live indices");
            self.in_use[word] |= 1 << bit;
            self.site_cluster[self.cuts[c] as usize] = fresh;
        }
        for &d in &self.dirty {
            self.parent[d as usize] = d;
        }
        self.dirty.clear();

        if let Some(routing) = &bonds.routing {
            self.scratch.clear();
            self.scratch.extend(routing.iter().map(|&src| self.site_cluster[src as usize]));
            std::mem::swap(&mut self.scratch, &mut self.site_cluster);
        }

        let live = self.live_count();
        self.stats.peak_live = self.stats.peak_live.max(live);
        self.stats.layers += 1;
        self.stats.site_layers += n as u64;
    }

    /// Group final-layer sites by cluster, clusters ordered by smallest site.
    pub fn surface_partition(&self) -> SurfacePartition {
        let mut slot = vec![u32::MAX; 2 * self.num_sites];
        let mut clusters: Vec<Vec<usize>> = Vec::new();
        for s in 0..self.num_sites {
            let root = self.root_of_site(s) as usize;
            if slot[root] == u32::MAX {
                slot[root] = clusters.len() as u32;
                clusters.push(Vec::new());
            }
            clusters[slot[root] as usize].push(s);
        }
        SurfacePartition { num_sites: self.num_sites, clusters }
    }

    /// Site labels and cluster sizes for the fast measurement path.
    pub fn surface_labels(&self, out: &mut SurfaceLabels) {
        out.labels.clear();
        out.labels.extend((0..self.num_sites).map(|s| self.root_of_site(s)));
        out.sizes.clear();
        out.sizes.resize(2 * self.num_sites, 0);
        for &l in &out.labels {
            out.sizes[l as usize] += 1;
        }
    }
}

/// Partition of the final layer into cluster surfaces; sites are 0-based,
/// clusters are sorted internally and ordered by their smallest site.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SurfacePartition {
    pub num_sites: usize,
    pub clusters: Vec<Vec<usize>>,
}

impl SurfacePartition {
    pub fn singletons(num_sites: usize) -> Self {
        Self { num_sites, clusters: (0..num_sites).map(|s| vec![s]).collect() }
    }

    /// Build from arbitrary groups, normalizing the order. Panics unless the
    /// groups are disjoint and cover `0..num_sites`.
    pub fn from_clusters(num_sites: usize, clusters: impl IntoIterator<Item = Vec<usize>>) -> Self {
        let mut clusters: Vec<Vec<usize>> = clusters
            .into_iter()
            .filter(|c| !c.is_empty())
            .map(|mut c| {
                c.sort_unstable();
                c
            })
            .collect();
        clusters.sort_unstable_by_key(|c| c[0]);
        let mut seen = vec![false; num_sites];
        for &s in clusters.iter().flatten() {
            assert!(s < num_sites && !seen[s], "site {s} repeated or out of range");
            seen[s] = true;
        }
        assert!(seen.iter().all(|&x| x), "partition does not cover every site");
        Self { num_sites, clusters }
    }

    /// Partition induced by per-site labels.
    pub fn from_labels(labels: &[u32]) -> Self {
        let mut groups: std::collections::BTreeMap<u32, Vec<usize>> = Default::default();
        for (s, &l) in labels.iter().enumerate() {
            groups.entry(l).or_default().push(s);
        }
        Self::from_clusters(labels.len(), groups.into_values())
    }

    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    pub fn labels(&self) -> SurfaceLabels {
        let mut labels = vec![0u32; self.num_sites];
        for (c, cluster) in self.clusters.iter().enumerate() {
            for &s in cluster {
                labels[s] = c as u32;
            }
        }
        let sizes = self.clusters.iter().map(|c| c.len() as u32).collect();
        SurfaceLabels { labels, sizes }
    }
}

/// Dense form of a surface partition: `labels[site]` indexes into `sizes`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SurfaceLabels {
    pub labels: Vec<u32>,
    pub sizes: Vec<u32>,
}

impl SurfaceLabels {
    pub fn num_sites(&self) -> usize {
        self.labels.len()
    }

    pub fn label_capacity(&self) -> usize {
        self.sizes.len()
    }
}
