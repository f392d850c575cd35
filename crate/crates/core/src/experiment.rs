//! Monte Carlo runs: configuration, per-geometry tallies, deterministic parallel
//! execution, checkpoints and result files.
//!
//! Realizations are processed in fixed chunks. Each chunk is simulated
//! sequentially by one worker, chunk results are combined by a fixed pairwise
//! tree, and batches are folded into the running total in order, so the output
//! never depends on the number of workers.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::{
    angle_average, check_exponent_relations, eta_of, fit_power_law, fss_extrapolate, EtaPoint, FitResult, FssEstimate,
    RateGrid, RelationReport,
};
use crate::cluster::{ClusterState, SurfaceLabels};
use crate::ensembles::{EnsembleConfig, Family, Sampler};
use crate::error::{Error, Result};
use crate::measures::{
    place_subregions_1d, place_subregions_2d, Geometry, MeasureOutcome, RegionScanner, Spacing, SubregionSet,
};
use crate::weighted::{convolve, write_graph_csv, WeightedGraphAccumulator};

/// Realizations simulated back to back by one worker.
pub const CHUNK: u64 = 64;
/// Chunks per batch when no checkpoint interval is configured.
const DEFAULT_BATCH_CHUNKS: u64 = 256;
pub const CHECKPOINT_VERSION: u32 = 1;
pub const TALLY_HEADER: &str = "family,k,width_or_radius,dx,dy,eta,hits,mi_sum_ln2,indirect_hits,iterations";

/// A family of subregion sets to measure on every realization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "lowercase")]
pub enum SubregionGrid {
    /// Intervals on the ring. Spacings are distances between consecutive left
    /// endpoints; `spacing_range` adds every valid spacing in `[lo, hi]`.
    Intervals {
        k: Vec<usize>,
        widths: Vec<usize>,
        #[serde(default)]
        spacings: Vec<usize>,
        #[serde(default)]
        spacing_range: Option<[usize; 2]>,
        #[serde(default)]
        even: bool,
    },
    /// Disks on the torus. `octant` adds every valid displacement with
    /// `0 <= dy <= dx <= octant`.
    Disks {
        k: Vec<usize>,
        radii_sq: Vec<u32>,
        #[serde(default)]
        displacements: Vec<[i32; 2]>,
        #[serde(default)]
        octant: Option<i32>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MeasureFlags {
    #[serde(default = "yes")]
    pub gme: bool,
    #[serde(default = "yes")]
    pub mi: bool,
    #[serde(default)]
    pub indirect: bool,
    #[serde(default)]
    pub weighted_graph: bool,
}

fn yes() -> bool {
    true
}

impl Default for MeasureFlags {
    fn default() -> Self {
        Self { gme: true, mi: true, indirect: false, weighted_graph: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightMeasure {
    Gme,
    Mi,
}

/// Space-time window of the weighted graph, around intervals placed at site 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedGraphConfig {
    pub k: usize,
    pub width: usize,
    pub spacing: usize,
    /// Extra sites on each side of the subregions.
    #[serde(default)]
    pub margin: usize,
    /// Number of final circuit layers kept.
    pub layers: usize,
    #[serde(default = "gme_measure")]
    pub measure: WeightMeasure,
}

fn gme_measure() -> WeightMeasure {
    WeightMeasure::Gme
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    /// Fallback `eta` window for every `k`.
    #[serde(default = "default_window")]
    pub window: (f64, f64),
    #[serde(default)]
    pub gme_windows: BTreeMap<usize, (f64, f64)>,
    #[serde(default)]
    pub mi_windows: BTreeMap<usize, (f64, f64)>,
    #[serde(default = "default_angles")]
    pub num_angles: usize,
    /// `eta` samples per 2D angle-averaged curve.
    #[serde(default = "default_eta_samples")]
    pub eta_samples: usize,
}

fn default_window() -> (f64, f64) {
    (1e-3, 0.3)
}

fn default_angles() -> usize {
    64
}

fn default_eta_samples() -> usize {
    16
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            window: default_window(),
            gme_windows: BTreeMap::new(),
            mi_windows: BTreeMap::new(),
            num_angles: default_angles(),
            eta_samples: default_eta_samples(),
        }
    }
}

impl FitConfig {
    pub fn gme_window(&self, k: usize) -> (f64, f64) {
        self.gme_windows.get(&k).copied().unwrap_or(self.window)
    }

    pub fn mi_window(&self, k: usize) -> (f64, f64) {
        self.mi_windows.get(&k).copied().unwrap_or(self.window)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub ensemble: EnsembleConfig,
    #[serde(default)]
    pub subregions: Vec<SubregionGrid>,
    pub iterations: u64,
    /// Evenly spread translations of every subregion set measured per realization.
    #[serde(default = "one")]
    pub translations: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "one")]
    pub workers: usize,
    #[serde(default)]
    pub measures: MeasureFlags,
    #[serde(default)]
    pub weighted_graph: Option<WeightedGraphConfig>,
    /// Realizations between checkpoints; none are written when absent.
    #[serde(default)]
    pub checkpoint_every: Option<u64>,
    #[serde(default)]
    pub fit: FitConfig,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

fn one() -> usize {
    1
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.ensemble.validate().map_err(|e| Error::InvalidConfig(e.to_string()))?;
        if self.iterations == 0 {
            return Err(Error::InvalidConfig("iterations must be at least 1".into()));
        }
        if self.translations == 0 || self.translations > self.ensemble.num_sites() {
            return Err(Error::InvalidConfig(format!("translations must lie in 1..={}", self.ensemble.num_sites())));
        }
        if self.workers == 0 {
            return Err(Error::InvalidConfig("workers must be at least 1".into()));
        }
        if self.checkpoint_every == Some(0) {
            return Err(Error::InvalidConfig("checkpoint_every must be positive".into()));
        }
        if self.measures.weighted_graph {
            if self.ensemble.family != Family::Moc1d {
                return Err(Error::InvalidConfig("weighted graphs need the moc1d family".into()));
            }
            let Some(wg) = &self.weighted_graph else {
                return Err(Error::InvalidConfig("weighted_graph flag set without a weighted_graph block".into()));
            };
            if wg.layers == 0 || wg.layers > self.ensemble.depth {
                return Err(Error::InvalidConfig(format!("weighted graph needs 1..={} layers", self.ensemble.depth)));
            }
            place_subregions_1d(wg.k, wg.width, Spacing::Fixed(wg.spacing), self.ensemble.num_sites())
                .map_err(|e| Error::InvalidConfig(e.to_string()))?;
        }
        self.geometries().map_err(|e| Error::InvalidConfig(e.to_string()))?;
        Ok(())
    }

    /// Every subregion set of the grid, placed at the origin.
    pub fn geometries(&self) -> Result<Vec<SubregionSet>> {
        let n = self.ensemble.num_sites();
        let mut out = Vec::new();
        for grid in &self.subregions {
            match grid {
                SubregionGrid::Intervals { k, widths, spacings, spacing_range, even } => {
                    if self.ensemble.family == Family::Moc2d {
                        return Err(Error::InvalidGeometry("intervals need a ring geometry".into()));
                    }
                    for &k in k {
                        for &w in widths {
                            if *even {
                                out.push(place_subregions_1d(k, w, Spacing::Even, n)?);
                            }
                            for &d in spacings {
                                out.push(place_subregions_1d(k, w, Spacing::Fixed(d), n)?);
                            }
                            if let Some([lo, hi]) = spacing_range {
                                for d in *lo..=*hi {
                                    if d >= w && (k - 1) * d + w <= n {
                                        out.push(place_subregions_1d(k, w, Spacing::Fixed(d), n)?);
                                    }
                                }
                            }
                        }
                    }
                }
                SubregionGrid::Disks { k, radii_sq, displacements, octant } => {
                    let Some(side) = self.ensemble.side() else {
                        return Err(Error::InvalidGeometry("disks need the moc2d family".into()));
                    };
                    for &k in k {
                        for &r2 in radii_sq {
                            for &[dx, dy] in displacements {
                                out.push(place_subregions_2d(k, r2, dx, dy, side)?);
                            }
                            if let Some(max) = octant {
                                let max = (*max).min(side as i32 / 2);
                                for dx in 0..=max {
                                    for dy in 0..=dx {
                                        if (dx * dx + dy * dy) as i64 > 4 * r2 as i64 {
                                            if let Ok(s) = place_subregions_2d(k, r2, dx, dy, side) {
                                                out.push(s);
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    /// Config fields that determine the tallies, for checkpoint matching.
    fn run_identity(&self) -> serde_json::Value {
        serde_json::json!({
            "ensemble": self.ensemble,
            "subregions": self.subregions,
            "translations": self.translations,
            "master_seed": self.master_seed,
            "measures": self.measures,
            "weighted_graph": self.weighted_graph,
        })
    }
}

/// Subregion shape parameter of a tally row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Shape {
    Width(usize),
    RadiusSq(u32),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TallyKey {
    pub family: Family,
    pub k: usize,
    pub shape: Shape,
    pub dx: i64,
    pub dy: i64,
    pub eta: f64,
}

impl TallyKey {
    pub fn of(family: Family, subs: &SubregionSet) -> Result<Self> {
        let (shape, dx, dy) = match subs.geometry() {
            Geometry::Intervals { width, spacing, num_sites } => {
                let d = match spacing {
                    Spacing::Even => num_sites / subs.k(),
                    Spacing::Fixed(d) => d,
                };
                (Shape::Width(width), d as i64, 0)
            }
            Geometry::Disks { radius_sq, dx, dy, .. } => (Shape::RadiusSq(radius_sq), dx as i64, dy as i64),
            Geometry::Custom => (Shape::Width(subs.regions()[0].len()), 0, 0),
        };
        Ok(Self { family, k: subs.k(), shape, dx, dy, eta: eta_of(subs)? })
    }
}

/// Integer event counts of one subregion geometry.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tally {
    pub gme_hits: u64,
    pub indirect_hits: u64,
    pub mi_sum: u64,
    pub mi_sumsq: u64,
    pub iterations: u64,
}

impl Tally {
    #[inline]
    pub fn record(&mut self, o: &MeasureOutcome, flags: &MeasureFlags) {
        self.iterations += 1;
        self.gme_hits += (flags.gme && o.gme_hit) as u64;
        self.indirect_hits += (flags.indirect && o.indirect_hit) as u64;
        if flags.mi {
            self.mi_sum += o.mi_units as u64;
            self.mi_sumsq += (o.mi_units as u64) * (o.mi_units as u64);
        }
    }

    pub fn add(&mut self, other: &Tally) {
        self.gme_hits += other.gme_hits;
        self.indirect_hits += other.indirect_hits;
        self.mi_sum += other.mi_sum;
        self.mi_sumsq += other.mi_sumsq;
        self.iterations += other.iterations;
    }
}

/// Mergeable tallies, one per geometry key, in a fixed order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct HitAccumulator {
    pub keys: Vec<TallyKey>,
    pub tallies: Vec<Tally>,
}

impl HitAccumulator {
    pub fn new(keys: Vec<TallyKey>) -> Self {
        let tallies = vec![Tally::default(); keys.len()];
        Self { keys, tallies }
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    /// Component-wise sum; an accumulator without keys is the identity.
    pub fn merge(&mut self, other: &HitAccumulator) -> Result<()> {
        if other.keys.is_empty() {
            return Ok(());
        }
        if self.keys.is_empty() {
            *self = other.clone();
            return Ok(());
        }
        if self.keys != other.keys {
            return Err(Error::KeyMismatch(format!("{} keys vs {} keys", self.keys.len(), other.keys.len())));
        }
        for (a, b) in self.tallies.iter_mut().zip(&other.tallies) {
            a.add(b);
        }
        Ok(())
    }

    pub fn rows(&self) -> Vec<TallyRow> {
        self.keys
            .iter()
            .zip(&self.tallies)
            .map(|(key, t)| TallyRow {
                family: key.family.name().to_string(),
                k: key.k,
                width_or_radius: match key.shape {
                    Shape::Width(w) => w as f64,
                    Shape::RadiusSq(r2) => (r2 as f64).sqrt(),
                },
                dx: key.dx,
                dy: key.dy,
                eta: key.eta,
                hits: t.gme_hits,
                mi_sum_ln2: t.mi_sum,
                indirect_hits: t.indirect_hits,
                iterations: t.iterations,
            })
            .collect()
    }
}

/// One line of the tally CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TallyRow {
    pub family: String,
    pub k: usize,
    pub width_or_radius: f64,
    pub dx: i64,
    pub dy: i64,
    pub eta: f64,
    pub hits: u64,
    pub mi_sum_ln2: u64,
    pub indirect_hits: u64,
    pub iterations: u64,
}

impl TallyRow {
    pub fn rate(&self) -> f64 {
        self.hits as f64 / self.iterations.max(1) as f64
    }

    /// Binomial error `sqrt(rate / iterations)`.
    pub fn rate_err(&self) -> f64 {
        (self.hits as f64).sqrt() / self.iterations.max(1) as f64
    }

    pub fn mi_rate(&self) -> f64 {
        self.mi_sum_ln2 as f64 / self.iterations.max(1) as f64
    }

    pub fn mi_err(&self) -> f64 {
        (self.mi_sum_ln2 as f64).sqrt() / self.iterations.max(1) as f64
    }

    pub fn radius_sq(&self) -> u32 {
        (self.width_or_radius * self.width_or_radius).round() as u32
    }
}

pub fn write_tallies_csv(rows: &[TallyRow], path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    if rows.is_empty() {
        w.write_record(TALLY_HEADER.split(','))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_tallies_csv(path: &Path) -> Result<Vec<TallyRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header.join(",") != TALLY_HEADER {
        return Err(Error::InvalidConfig(format!("unexpected tally header {:?}", header.join(","))));
    }
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Everything accumulated by a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunState {
    pub completed: u64,
    pub hits: HitAccumulator,
    #[serde(default)]
    pub weighted: Option<WeightedGraphAccumulator>,
}

impl RunState {
    fn merge(&mut self, other: &RunState) -> Result<()> {
        self.completed += other.completed;
        self.hits.merge(&other.hits)?;
        match (&mut self.weighted, &other.weighted) {
            (Some(a), Some(b)) => a.merge(b)?,
            (None, Some(b)) => self.weighted = Some(b.clone()),
            _ => {}
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    run: serde_json::Value,
    state: RunState,
}

pub fn write_checkpoint(cfg: &RunConfig, state: &RunState, path: &Path) -> Result<()> {
    let cp = Checkpoint {
        format: "mipt-checkpoint".into(),
        version: CHECKPOINT_VERSION,
        run: cfg.run_identity(),
        state: state.clone(),
    };
    let tmp = path.with_extension("json.tmp");
    std::fs::write(&tmp, serde_json::to_vec(&cp)?)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_checkpoint(cfg: &RunConfig, path: &Path) -> Result<RunState> {
    let cp: Checkpoint = serde_json::from_slice(&std::fs::read(path)?)?;
    if cp.format != "mipt-checkpoint" || cp.version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported checkpoint {} v{}", cp.format, cp.version)));
    }
    if cp.run != cfg.run_identity() {
        return Err(Error::Checkpoint("checkpoint belongs to a different run".into()));
    }
    if cp.state.completed > cfg.iterations {
        return Err(Error::Checkpoint(format!(
            "checkpoint holds {} realizations, more than the {} requested",
            cp.state.completed, cfg.iterations
        )));
    }
    Ok(cp.state)
}

/// How chunks are spread over threads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Executor {
    Sequential,
    #[cfg(feature = "parallel")]
    Parallel(usize),
}

impl Executor {
    pub fn for_workers(workers: usize) -> Self {
        #[cfg(feature = "parallel")]
        if workers > 1 {
            return Executor::Parallel(workers);
        }
        let _ = workers;
        Executor::Sequential
    }
}

struct Template {
    k: usize,
    /// `(region, a, b)`: site index (ring) or lattice coordinates (torus).
    sites: Vec<(u32, u32, u32)>,
}

struct WeightedPlan {
    cfg: WeightedGraphConfig,
    template: Template,
    first_layer: usize,
    first_site: usize,
    sites: usize,
    periodic: bool,
}

/// Immutable per-run context shared by all workers.
pub struct Simulation {
    cfg: RunConfig,
    sampler: Sampler,
    keys: Vec<TallyKey>,
    templates: Vec<Template>,
    origins: Vec<(u32, u32)>,
    side: Option<usize>,
    weighted: Option<WeightedPlan>,
}

impl Simulation {
    pub fn new(cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        let sampler = Sampler::new(&cfg.ensemble, cfg.master_seed)?;
        let side = cfg.ensemble.side();
        let n = cfg.ensemble.num_sites();
        let geoms = cfg.geometries()?;
        let keys = geoms.iter().map(|s| TallyKey::of(cfg.ensemble.family, s)).collect::<Result<Vec<_>>>()?;
        let templates = geoms.iter().map(|s| template(s, side)).collect();
        let origins = (0..cfg.translations)
            .map(|t| {
                let idx = t * n / cfg.translations;
                match side {
                    Some(l) => ((idx % l) as u32, (idx / l) as u32),
                    None => (idx as u32, 0),
                }
            })
            .collect();
        let weighted = match (&cfg.weighted_graph, cfg.measures.weighted_graph) {
            (Some(wg), true) => {
                let subs = place_subregions_1d(wg.k, wg.width, Spacing::Fixed(wg.spacing), n)?;
                let span = (wg.k - 1) * wg.spacing + wg.width + 2 * wg.margin;
                let (first_site, sites, periodic) =
                    if span >= n { (0, n, true) } else { ((n - wg.margin % n) % n, span, false) };
                Some(WeightedPlan {
                    cfg: wg.clone(),
                    template: template(&subs, None),
                    first_layer: cfg.ensemble.depth - wg.layers,
                    first_site,
                    sites,
                    periodic,
                })
            }
            _ => None,
        };
        Ok(Self { cfg: cfg.clone(), sampler, keys, templates, origins, side, weighted })
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn keys(&self) -> &[TallyKey] {
        &self.keys
    }

    fn empty_state(&self) -> RunState {
        RunState {
            completed: 0,
            hits: HitAccumulator::new(self.keys.clone()),
            weighted: self.weighted.as_ref().map(|w| WeightedGraphAccumulator::new(w.cfg.layers, w.sites, w.periodic)),
        }
    }

    /// Simulate realizations `range` in order on one thread.
    pub fn run_range(&self, range: std::ops::Range<u64>) -> Result<RunState> {
        let n = self.sampler.num_sites();
        let mut state = self.empty_state();
        let mut engine = ClusterState::new(n);
        let mut labels = SurfaceLabels::default();
        let mut scanner = RegionScanner::new(2 * n);
        let flags = self.cfg.measures;
        for r in range {
            engine.reset();
            self.sampler.for_each_row(r, |row| engine.advance_layer(row));
            engine.surface_labels(&mut labels);
            for &origin in &self.origins {
                for (g, tpl) in self.templates.iter().enumerate() {
                    let out = match self.side {
                        None => scanner.evaluate(&labels, tpl.k, ring_sites(tpl, origin.0, n)),
                        Some(l) => scanner.evaluate(&labels, tpl.k, torus_sites(tpl, origin, l)),
                    };
                    state.hits.tallies[g].record(&out, &flags);
                }
            }
            if let (Some(plan), Some(acc)) = (&self.weighted, state.weighted.as_mut()) {
                let out = scanner.evaluate(&labels, plan.template.k, ring_sites(&plan.template, 0, n));
                let measure = match plan.cfg.measure {
                    WeightMeasure::Gme => out.gme_hit as u8 as f64,
                    WeightMeasure::Mi => out.mi_units as f64,
                };
                if measure > 0.0 {
                    let raw = self.sampler.realization_weights(
                        r,
                        plan.first_layer,
                        plan.cfg.layers,
                        plan.first_site,
                        plan.sites,
                    );
                    acc.accumulate(&convolve(&raw), measure)?;
                } else {
                    acc.skip();
                }
            }
            state.completed += 1;
        }
        Ok(state)
    }

    /// Realizations `range`, split into chunks and combined by a fixed tree.
    pub fn run_batch(&self, range: std::ops::Range<u64>, exec: Executor) -> Result<RunState> {
        let chunks: Vec<std::ops::Range<u64>> =
            (range.start..range.end).step_by(CHUNK as usize).map(|s| s..(s + CHUNK).min(range.end)).collect();
        let parts: Vec<RunState> = match exec {
            Executor::Sequential => chunks.into_iter().map(|c| self.run_range(c)).collect::<Result<_>>()?,
            #[cfg(feature = "parallel")]
            Executor::Parallel(workers) => {
                use rayon::prelude::*;
                let pool = rayon::ThreadPoolBuilder::new()
                    .num_threads(workers)
                    .build()
                    .map_err(|e| Error::InvalidConfig(e.to_string()))?;
                pool.install(|| chunks.into_par_iter().map(|c| self.run_range(c)).collect::<Result<_>>())?
            }
        };
        tree_merge(parts).map(|s| s.unwrap_or_else(|| self.empty_state()))
    }

    /// Full run, resuming from and writing checkpoints when configured.
    pub fn run(&self, exec: Executor, checkpoint: Option<&Path>) -> Result<RunState> {
        let mut state = match checkpoint {
            Some(path) if path.exists() => read_checkpoint(&self.cfg, path)?,
            _ => self.empty_state(),
        };
        let batch =
            self.cfg.checkpoint_every.map(|m| m.div_ceil(CHUNK) * CHUNK).unwrap_or(DEFAULT_BATCH_CHUNKS * CHUNK);
        while state.completed < self.cfg.iterations {
            let start = state.completed;
            let end = (start + batch - start % batch).min(self.cfg.iterations);
            let part = self.run_batch(start..end, exec)?;
            state.merge(&part)?;
            if let (Some(path), Some(_)) = (checkpoint, self.cfg.checkpoint_every) {
                write_checkpoint(&self.cfg, &state, path)?;
            }
        }
        Ok(state)
    }
}

fn template(subs: &SubregionSet, side: Option<usize>) -> Template {
    let sites = subs
        .sites()
        .map(|(r, s)| match side {
            Some(l) => (r as u32, (s % l) as u32, (s / l) as u32),
            None => (r as u32, s as u32, 0),
        })
        .collect();
    Template { k: subs.k(), sites }
}

#[inline]
fn ring_sites(tpl: &Template, origin: u32, n: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
    tpl.sites.iter().map(move |&(r, a, _)| {
        let s = a as usize + origin as usize;
        (r as usize, if s >= n { s - n } else { s })
    })
}

#[inline]
fn torus_sites(tpl: &Template, origin: (u32, u32), l: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
    tpl.sites.iter().map(move |&(r, a, b)| {
        let x = a as usize + origin.0 as usize;
        let y = b as usize + origin.1 as usize;
        let x = if x >= l { x - l } else { x };
        let y = if y >= l { y - l } else { y };
        (r as usize, y * l + x)
    })
}

/// Pairwise merge `(0,1), (2,3), ...` repeated until one state is left.
fn tree_merge(mut parts: Vec<RunState>) -> Result<Option<RunState>> {
    while parts.len() > 1 {
        let mut next = Vec::with_capacity(parts.len().div_ceil(2));
        let mut it = parts.into_iter();
        while let Some(mut a) = it.next() {
            if let Some(b) = it.next() {
                a.merge(&b)?;
            }
            next.push(a);
        }
        parts = next;
    }
    Ok(parts.pop())
}

/// Fit of one curve, or the reason it could not be made.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    pub family: String,
    pub measure: String,
    pub k: usize,
    /// Width or radius; absent for fits pooled over all shapes.
    pub width_or_radius: Option<f64>,
    #[serde(flatten)]
    pub fit: Option<FitResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtrapolationRecord {
    pub measure: String,
    pub k: usize,
    #[serde(flatten)]
    pub estimate: FssEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub fits: Vec<FitRecord>,
    #[serde(default)]
    pub extrapolations: Vec<ExtrapolationRecord>,
    /// Geometries that never produced a direct hit.
    #[serde(default)]
    pub no_hit_geometries: usize,
    pub relation_checks: RelationReport,
}

fn record(family: &str, measure: &str, k: usize, shape: Option<f64>, fit: Result<FitResult>) -> FitRecord {
    let (fit, error) = match fit {
        Ok(f) => (Some(f), None),
        Err(e) => (None, Some(e.to_string())),
    };
    FitRecord { family: family.into(), measure: measure.into(), k, width_or_radius: shape, fit, error }
}

fn ring_points(rows: &[&TallyRow], mi: bool) -> Vec<EtaPoint> {
    rows.iter()
        .map(|r| {
            let (rate, err, hits) =
                if mi { (r.mi_rate(), r.mi_err(), r.mi_sum_ln2) } else { (r.rate(), r.rate_err(), r.hits) };
            EtaPoint {
                hits: Some(hits),
                k: r.k,
                tag: format!("{}", r.width_or_radius),
                ..EtaPoint::new(r.eta, rate, err)
            }
        })
        .collect()
}

/// Angle-averaged points of one `(k, radius)` series on an `side x side` torus.
pub fn torus_points(rows: &[&TallyRow], side: usize, mi: bool, window: (f64, f64), fit: &FitConfig) -> Vec<EtaPoint> {
    let Some(first) = rows.first() else {
        return Vec::new();
    };
    let iterations = first.iterations;
    let mut grid = RateGrid::new(side, iterations);
    for r in rows {
        let rate = if mi { r.mi_rate() } else { r.rate() };
        grid.set_symmetric(r.dx, r.dy, rate);
    }
    let radius = first.width_or_radius;
    let samples = fit.eta_samples.max(2);
    let (lo, hi) = (window.0.max(1e-12).ln(), window.1.ln());
    (0..samples)
        .filter_map(|i| {
            let eta = (lo + (hi - lo) * i as f64 / (samples - 1) as f64).exp();
            let avg = angle_average(&grid, radius, eta, fit.num_angles).ok()?;
            // drop averages over too few angles to be meaningful
            (avg.angles_used * 2 >= fit.num_angles && avg.rate > 0.0).then(|| EtaPoint {
                k: first.k,
                tag: format!("{radius}"),
                ..EtaPoint::new(eta, avg.rate, avg.stderr)
            })
        })
        .collect()
}

/// Fits of every `(k, shape)` series, pooled fits per `k`, relation checks.
///
/// `side` must be given for torus tallies.
pub fn fit_report(rows: &[TallyRow], fit: &FitConfig, side: Option<usize>) -> Result<FitReport> {
    let mut series: BTreeMap<(String, usize, u64), Vec<&TallyRow>> = BTreeMap::new();
    for r in rows {
        series.entry((r.family.clone(), r.k, r.width_or_radius.to_bits())).or_default().push(r);
    }
    let mut fits = Vec::new();
    let mut extrapolations = Vec::new();
    let mut gme_by_k: BTreeMap<usize, FitResult> = BTreeMap::new();
    let mut mi_by_k: BTreeMap<usize, FitResult> = BTreeMap::new();
    let torus = rows.iter().any(|r| r.family == Family::Moc2d.name());
    if torus && side.is_none() {
        return Err(Error::InvalidConfig("torus tallies need the lattice side length".into()));
    }
    for (measure, mi) in [("gme", false), ("mi", true)] {
        let mut pooled: BTreeMap<(String, usize), Vec<EtaPoint>> = BTreeMap::new();
        let mut per_radius: BTreeMap<usize, Vec<(f64, FitResult)>> = BTreeMap::new();
        for ((family, k, shape), rs) in &series {
            let window = if mi { fit.mi_window(*k) } else { fit.gme_window(*k) };
            let shape = f64::from_bits(*shape);
            let points = if family == Family::Moc2d.name() {
                torus_points(rs, side.unwrap_or(0), mi, window, fit)
            } else {
                ring_points(rs, mi)
            };
            let result = fit_power_law(&points, window);
            if let Ok(f) = &result {
                if family == Family::Moc2d.name() {
                    per_radius.entry(*k).or_default().push((shape, f.clone()));
                }
            }
            fits.push(record(family, measure, *k, Some(shape), result));
            pooled.entry((family.clone(), *k)).or_default().extend(points);
        }
        let by_k = if mi { &mut mi_by_k } else { &mut gme_by_k };
        if torus {
            for (k, radii) in per_radius {
                let est = fss_extrapolate(&radii)?;
                let err = radii.iter().map(|(_, f)| f.alpha_err).fold(est.spread, f64::max);
                by_k.insert(
                    k,
                    FitResult {
                        alpha: est.alpha,
                        alpha_err: err,
                        prefactor: f64::NAN,
                        window: radii[0].1.window,
                        chi2_per_dof: f64::NAN,
                        points: radii.len(),
                    },
                );
                extrapolations.push(ExtrapolationRecord { measure: measure.into(), k, estimate: est });
            }
        } else {
            for ((family, k), points) in pooled {
                let window = if mi { fit.mi_window(k) } else { fit.gme_window(k) };
                let result = fit_power_law(&points, window);
                if let Ok(f) = &result {
                    by_k.insert(k, f.clone());
                }
                fits.push(record(&family, measure, k, None, result));
            }
        }
    }
    Ok(FitReport {
        fits,
        extrapolations,
        no_hit_geometries: rows.iter().filter(|r| r.hits == 0).count(),
        relation_checks: check_exponent_relations(&gme_by_k, &mi_by_k),
    })
}

/// Paths written by [`run_experiment`].
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunOutputs {
    pub tallies: PathBuf,
    pub report: PathBuf,
    pub weighted: Vec<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

/// Simulate, then write `tallies.csv`, `fit_report.json` and, when enabled,
/// the weighted graph CSVs into `out_dir`.
pub fn run_experiment(cfg: &RunConfig, out_dir: &Path) -> Result<(RunState, RunOutputs)> {
    let sim = Simulation::new(cfg)?;
    std::fs::create_dir_all(out_dir)?;
    let checkpoint = cfg.checkpoint_every.map(|_| out_dir.join("checkpoint.json"));
    let state = sim.run(Executor::for_workers(cfg.workers), checkpoint.as_deref())?;
    let mut outputs = RunOutputs {
        tallies: out_dir.join("tallies.csv"),
        report: out_dir.join("fit_report.json"),
        checkpoint,
        ..Default::default()
    };
    let rows = state.hits.rows();
    write_tallies_csv(&rows, &outputs.tallies)?;
    let report = fit_report(&rows, &cfg.fit, cfg.ensemble.side())?;
    std::fs::write(&outputs.report, serde_json::to_string_pretty(&report)?)?;
    if let Some(acc) = &state.weighted {
        match acc.finalize() {
            Ok(graph) => {
                write_graph_csv(&graph, out_dir, "weighted")?;
                outputs.weighted = vec![out_dir.join("weighted_horizontal.csv"), out_dir.join("weighted_vertical.csv")];
            }
            Err(Error::NoHits) => {}
            Err(e) => return Err(e),
        }
    }
    Ok((state, outputs))
}
