//! Random measurement-only circuit families, emitted in their percolation form.
//!
//! A circuit layer of `ZZ` measurements followed by single-site `X` measurements
//! becomes one [`LayerBonds`]: an open intralayer bond for every applied `ZZ`,
//! and a closed interlayer bond for every site that was `X`-measured.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{CounterRng, LayerKey, Stream, Threshold};

/// Critical bond probability of cubic-lattice bond percolation.
pub const P_CRITICAL_2D: f64 = 0.248812;
/// Critical bond probability of square-lattice bond percolation.
pub const P_CRITICAL_1D: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    /// Periodic chain with alternating `ZZ` / `X` layers.
    Moc1d,
    /// Periodic square lattice with alternating `ZZ` / `X` layers.
    Moc2d,
    /// Tree-structured gates of size `2^m`.
    Hyperbolic,
    /// Brickwork of `ZZ,X,X,ZZ` composites and swaps.
    Dyck,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Moc1d => "moc1d",
            Family::Moc2d => "moc2d",
            Family::Hyperbolic => "hyperbolic",
            Family::Dyck => "dyck",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "moc1d" => Some(Family::Moc1d),
            "moc2d" => Some(Family::Moc2d),
            "hyperbolic" => Some(Family::Hyperbolic),
            "dyck" => Some(Family::Dyck),
            _ => None,
        }
    }
}

/// Parameters of one circuit ensemble.
///
/// `size` is the number of sites `N`, except for [`Family::Moc2d`] where it is the
/// side length `L` of the `L x L` torus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub family: Family,
    #[serde(alias = "num_sites", alias = "side_length")]
    pub size: usize,
    /// Number of `ZZ`+`X` layer pairs (unused by the hyperbolic family).
    #[serde(default)]
    pub depth: usize,
    pub prob: f64,
    /// Branching probability `q` of the hyperbolic family.
    #[serde(default)]
    pub aux_prob: Option<f64>,
}

impl EnsembleConfig {
    pub fn moc1d(num_sites: usize, depth: usize, prob: f64) -> Self {
        Self { family: Family::Moc1d, size: num_sites, depth, prob, aux_prob: None }
    }

    pub fn moc2d(side: usize, depth: usize, prob: f64) -> Self {
        Self { family: Family::Moc2d, size: side, depth, prob, aux_prob: None }
    }

    pub fn hyperbolic(num_sites: usize, p: f64, q: f64) -> Self {
        Self { family: Family::Hyperbolic, size: num_sites, depth: 0, prob: p, aux_prob: Some(q) }
    }

    pub fn dyck(num_sites: usize, depth: usize, prob: f64) -> Self {
        Self { family: Family::Dyck, size: num_sites, depth, prob, aux_prob: None }
    }

    pub fn num_sites(&self) -> usize {
        match self.family {
            Family::Moc2d => self.size * self.size,
            _ => self.size,
        }
    }

    /// Side length for the 2D lattice, `None` for ring geometries.
    pub fn side(&self) -> Option<usize> {
        (self.family == Family::Moc2d).then_some(self.size)
    }

    pub fn branching_prob(&self) -> f64 {
        self.aux_prob.unwrap_or(0.0)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidEnsemble(msg));
        if self.size == 0 {
            return bad("size must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.prob) || self.prob.is_nan() {
            return bad(format!("prob {} outside [0, 1]", self.prob));
        }
        match self.family {
            Family::Moc1d | Family::Moc2d => {
                if self.depth == 0 {
                    return bad("depth must be positive".into());
                }
            }
            Family::Hyperbolic => {
                let n = self.size;
                if !n.is_power_of_two() || n < 4 {
                    return bad(format!("hyperbolic circuit needs N = 2^n with n >= 2, got {n}"));
                }
                let q = self.branching_prob();
                if !(0.0..=1.0).contains(&q) {
                    return bad(format!("branching probability {q} outside [0, 1]"));
                }
                if self.prob + q > 1.0 + 1e-12 {
                    return bad(format!("p + q = {} exceeds 1", self.prob + q));
                }
            }
            Family::Dyck => {
                if self.depth == 0 {
                    return bad("depth must be positive".into());
                }
                if self.size < 2 || !self.size.is_multiple_of(2) {
                    return bad(format!("brickwork needs an even number of sites, got {}", self.size));
                }
            }
        }
        Ok(())
    }
}

/// One time-slice of the percolation model.
///
/// Semantics, in order: every intralayer bond merges its two sites, then every
/// site with a closed interlayer bond is cut from its past, then (if present)
/// `routing[s]` names the site whose cluster next-layer site `s` continues.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LayerBonds {
    pub intralayer: Vec<(u32, u32)>,
    pub interlayer_open: Vec<bool>,
    pub routing: Option<Vec<u32>>,
}

impl LayerBonds {
    pub fn new(num_sites: usize) -> Self {
        Self { intralayer: Vec::new(), interlayer_open: vec![true; num_sites], routing: None }
    }

    pub fn reset(&mut self, num_sites: usize) {
        self.intralayer.clear();
        self.interlayer_open.clear();
        self.interlayer_open.resize(num_sites, true);
        self.routing = None;
    }

    pub fn num_sites(&self) -> usize {
        self.interlayer_open.len()
    }

    pub fn cut_count(&self) -> usize {
        self.interlayer_open.iter().filter(|&&o| !o).count()
    }
}

/// Every lattice edge once, in bond-index order: `(s, s+1)` on the ring; on the
/// torus first `(s, s+x)` then `(s, s+y)` for every site `s = y*L + x`.
///
/// On small tori the wraparound produces parallel edges between the same pair
/// of sites; each stays a separate bond, so the count is always `2 L^2`.
pub fn lattice_edges(cfg: &EnsembleConfig) -> Vec<(u32, u32)> {
    match cfg.family {
        Family::Moc2d => {
            let l = cfg.size;
            let n = l * l;
            let mut edges = Vec::with_capacity(2 * n);
            for s in 0..n {
                let (x, y) = (s % l, s / l);
                edges.push((s as u32, (y * l + (x + 1) % l) as u32));
            }
            for s in 0..n {
                let (x, y) = (s % l, s / l);
                edges.push((s as u32, (((y + 1) % l) * l + x) as u32));
            }
            edges
        }
        _ => {
            let n = cfg.size;
            (0..n).map(|s| (s as u32, ((s + 1) % n) as u32)).collect()
        }
    }
}

/// Gate outcome of the hyperbolic circuit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GatePattern {
    /// `X` on the left half of the output.
    LeftTransmission,
    /// `X` on the right half of the output.
    RightTransmission,
    /// No `X` at all.
    Branching,
    /// `X` on the whole input.
    Reflection,
}

impl GatePattern {
    pub const ALL: [GatePattern; 4] = [
        GatePattern::LeftTransmission,
        GatePattern::RightTransmission,
        GatePattern::Branching,
        GatePattern::Reflection,
    ];

    fn draw(u: f64, p: f64, q: f64) -> Self {
        if u < 0.5 * p {
            GatePattern::LeftTransmission
        } else if u < p {
            GatePattern::RightTransmission
        } else if u < p + q {
            GatePattern::Branching
        } else {
            GatePattern::Reflection
        }
    }
}

/// One gate layer of the hyperbolic circuit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HyperbolicLayer {
    pub gate_size: usize,
    pub gates: Vec<GatePattern>,
}

/// Gate-level description of one hyperbolic realization, bottom layer first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HyperbolicRealization {
    pub num_sites: usize,
    pub offset: usize,
    pub layers: Vec<HyperbolicLayer>,
}

impl HyperbolicRealization {
    /// Lower every gate layer into two rows: the input cut of reflecting gates,
    /// then the `ZZ` chain of every gate with the transmission output cuts.
    pub fn to_layer_bonds(&self) -> Vec<LayerBonds> {
        let n = self.num_sites;
        let mut rows = Vec::with_capacity(2 * self.layers.len());
        for layer in &self.layers {
            let size = layer.gate_size;
            let half = size / 2;
            let site = |gate: usize, t: usize| (self.offset + gate * size + t) % n;
            let mut input_cut = LayerBonds::new(n);
            let mut chain = LayerBonds::new(n);
            for (g, pattern) in layer.gates.iter().enumerate() {
                for t in 0..size - 1 {
                    chain.intralayer.push((site(g, t) as u32, site(g, t + 1) as u32));
                }
                let cut = match pattern {
                    GatePattern::LeftTransmission => 0..half,
                    GatePattern::RightTransmission => half..size,
                    GatePattern::Branching => 0..0,
                    GatePattern::Reflection => {
                        for t in 0..size {
                            input_cut.interlayer_open[site(g, t)] = false;
                        }
                        0..0
                    }
                };
                for t in cut {
                    chain.interlayer_open[site(g, t)] = false;
                }
            }
            rows.push(input_cut);
            rows.push(chain);
        }
        rows
    }
}

const OFFSET_LAYER: u64 = u64::MAX;

/// Samples layers of a validated ensemble for any realization index.
#[derive(Debug, Clone)]
pub struct Sampler {
    cfg: EnsembleConfig,
    rng: CounterRng,
    edges: Vec<(u32, u32)>,
    bond: Threshold,
    keep: Threshold,
}

impl Sampler {
    pub fn new(cfg: &EnsembleConfig, master_seed: u64) -> Result<Self> {
        cfg.validate()?;
        let edges = match cfg.family {
            Family::Moc1d | Family::Moc2d => lattice_edges(cfg),
            _ => Vec::new(),
        };
        Ok(Self {
            cfg: cfg.clone(),
            rng: CounterRng::new(master_seed),
            edges,
            bond: Threshold::new(cfg.prob),
            // the interlayer bond survives unless X (probability 1 - p) fires
            keep: Threshold::new(cfg.prob),
        })
    }

    pub fn config(&self) -> &EnsembleConfig {
        &self.cfg
    }

    pub fn rng(&self) -> &CounterRng {
        &self.rng
    }

    pub fn num_sites(&self) -> usize {
        self.cfg.num_sites()
    }

    pub fn edges(&self) -> &[(u32, u32)] {
        &self.edges
    }

    /// Number of [`LayerBonds`] rows in one realization.
    pub fn rows_per_realization(&self) -> usize {
        match self.cfg.family {
            Family::Moc1d | Family::Moc2d => self.cfg.depth,
            Family::Hyperbolic => 2 * (self.cfg.size.trailing_zeros() as usize - 1),
            Family::Dyck => 3 * self.cfg.depth,
        }
    }

    fn bond_key(&self, realization: u64, layer: u64) -> LayerKey {
        self.rng.layer_key(Stream::Bonds, realization, layer)
    }

    /// One `ZZ`+`X` layer of the square-lattice families.
    pub fn moc_layer_into(&self, realization: u64, layer: u64, out: &mut LayerBonds) {
        let n = self.num_sites();
        out.reset(n);
        let key = self.bond_key(realization, layer);
        let buf = &mut out.intralayer;
        buf.resize(self.edges.len(), (0, 0));
        let mut len = 0;
        for (b, &(i, j)) in self.edges.iter().enumerate() {
            buf[len] = (i, j);
            len += (i != j && key.bernoulli(b as u64, self.bond)) as usize;
        }
        buf.truncate(len);
        let base = self.edges.len() as u64;
        for (s, open) in out.interlayer_open.iter_mut().enumerate() {
            *open = key.bernoulli(base + s as u64, self.keep);
        }
    }

    /// Whether the brickwork gate on pair `j` of `layer` is a `ZZ,X,X,ZZ` composite.
    pub fn dyck_gate_is_composite(&self, realization: u64, layer: u64, pair: usize) -> bool {
        self.bond_key(realization, layer).bernoulli(pair as u64, self.bond)
    }

    /// The three rows of one Dyck brickwork layer: `ZZ`+`X` on composite pairs,
    /// the second `ZZ` on composite pairs, then the crossing of swapped pairs.
    pub fn dyck_layer_into(&self, realization: u64, layer: u64, out: &mut [LayerBonds; 3]) {
        let n = self.cfg.size;
        for row in out.iter_mut() {
            row.reset(n);
        }
        let phase = (layer % 2) as usize;
        let key = self.bond_key(realization, layer);
        let mut routing: Vec<u32> = (0..n as u32).collect();
        for pair in 0..n / 2 {
            let a = (2 * pair + phase) % n;
            let b = (a + 1) % n;
            if key.bernoulli(pair as u64, self.bond) {
                out[0].intralayer.push((a as u32, b as u32));
                out[0].interlayer_open[a] = false;
                out[0].interlayer_open[b] = false;
                out[1].intralayer.push((a as u32, b as u32));
            } else {
                routing[a] = b as u32;
                routing[b] = a as u32;
            }
        }
        out[2].routing = Some(routing);
    }

    pub fn hyperbolic_realization(&self, realization: u64) -> HyperbolicRealization {
        let n = self.cfg.size;
        let levels = n.trailing_zeros() as usize;
        let (p, q) = (self.cfg.prob, self.cfg.branching_prob());
        let offset = (self.rng.u64_at(Stream::Gates, realization, OFFSET_LAYER, 0) % n as u64) as usize;
        let layers = (1..levels)
            .rev()
            .map(|m| {
                let gate_size = 1usize << m;
                let key = self.rng.layer_key(Stream::Gates, realization, m as u64);
                let gates = (0..n / gate_size).map(|g| GatePattern::draw(key.f64_at(g as u64), p, q)).collect();
                HyperbolicLayer { gate_size, gates }
            })
            .collect();
        HyperbolicRealization { num_sites: n, offset, layers }
    }

    /// Streams every row of one realization through `f`, reusing buffers.
    pub fn for_each_row(&self, realization: u64, mut f: impl FnMut(&LayerBonds)) {
        match self.cfg.family {
            Family::Moc1d | Family::Moc2d => {
                let mut row = LayerBonds::new(self.num_sites());
                for t in 0..self.cfg.depth as u64 {
                    self.moc_layer_into(realization, t, &mut row);
                    f(&row);
                }
            }
            Family::Dyck => {
                let n = self.cfg.size;
                let mut rows = [LayerBonds::new(n), LayerBonds::new(n), LayerBonds::new(n)];
                for t in 0..self.cfg.depth as u64 {
                    self.dyck_layer_into(realization, t, &mut rows);
                    for row in &rows {
                        f(row);
                    }
                }
            }
            Family::Hyperbolic => {
                for row in self.hyperbolic_realization(realization).to_layer_bonds() {
                    f(&row);
                }
            }
        }
    }

    /// Raw 0/1 bond openness of a MOC1D realization on a space-time window.
    ///
    /// Row `r` covers circuit layer `first_layer + r`; column `c` covers site
    /// `first_site + c` (mod N). `horizontal[r][c]` is the bond to the next site,
    /// `vertical[r][c]` the interlayer bond leaving that layer.
    pub fn realization_weights(
        &self,
        realization: u64,
        first_layer: usize,
        layers: usize,
        first_site: usize,
        sites: usize,
    ) -> RealizationWeights {
        assert_eq!(self.cfg.family, Family::Moc1d, "weights are defined for the 1D chain only");
        let n = self.cfg.size;
        let mut w = RealizationWeights::zeros(layers, sites, sites == n);
        let base = self.edges.len() as u64;
        for r in 0..layers {
            let key = self.bond_key(realization, (first_layer + r) as u64);
            for c in 0..sites {
                let s = ((first_site + c) % n) as u64;
                let h = n > 1 && key.bernoulli(s, self.bond);
                let v = key.bernoulli(base + s, self.keep);
                w.horizontal[r * sites + c] = h as u8 as f64;
                w.vertical[r * sites + c] = v as u8 as f64;
            }
        }
        w
    }
}

/// Per-edge weights on a space-time grid (row-major, `layers x sites`).
#[derive(Debug, Clone, PartialEq)]
pub struct RealizationWeights {
    pub layers: usize,
    pub sites: usize,
    /// Columns wrap around (the window covers the whole ring).
    pub periodic: bool,
    pub horizontal: Vec<f64>,
    pub vertical: Vec<f64>,
}

impl RealizationWeights {
    pub fn zeros(layers: usize, sites: usize, periodic: bool) -> Self {
        Self { layers, sites, periodic, horizontal: vec![0.0; layers * sites], vertical: vec![0.0; layers * sites] }
    }

    pub fn filled(layers: usize, sites: usize, periodic: bool, value: f64) -> Self {
        Self { layers, sites, periodic, horizontal: vec![value; layers * sites], vertical: vec![value; layers * sites] }
    }

    #[inline]
    pub fn idx(&self, layer: usize, site: usize) -> usize {
        layer * self.sites + site
    }
}

/// `n`-th Catalan number.
pub fn catalan(n: u32) -> f64 {
    let mut c = 1.0f64;
    for i in 0..n {
        c = c * 2.0 * (2.0 * i as f64 + 1.0) / (i as f64 + 2.0);
    }
    c.round()
}

/// Catalan-path law for the Dyck circuit at `p = 1/2`: the partner of a site
/// paired in the top layer sits `x` sites away with probability `C_{(x-1)/2} 2^-x`
/// (zero for even `x`), in the infinite-depth limit.
pub fn dyck_catalan_law(x: u32) -> f64 {
    if x.is_multiple_of(2) {
        return 0.0;
    }
    catalan((x - 1) / 2) * 0.5f64.powi(x as i32)
}

/// Exact probability, for depth `depth` and composite probability `p`, that the
/// string leaving a top-paired site in its pairing direction returns to the top
/// layer exactly `x` sites away. Sums over all gate-level paths; each gate on the
/// path is a turn with probability `p` and a swap with probability `1 - p`.
pub fn dyck_connection_probability(x: u32, p: f64, depth: usize) -> f64 {
    if x == 0 {
        return 0.0;
    }
    dyck_connection_distribution(x, p, depth)[x as usize]
}

/// [`dyck_connection_probability`] for every distance `0..=max_x` at once.
pub fn dyck_connection_distribution(max_x: u32, p: f64, depth: usize) -> Vec<f64> {
    let mut out = vec![0.0; max_x as usize + 1];
    // a path of x gates never goes deeper than x / 2 + 1
    let depth = depth.min(max_x as usize / 2 + 2);
    if depth == 0 {
        return out;
    }
    // at gate level h (1-based), entering going down / going up
    let mut down = vec![0.0f64; depth + 2];
    let mut up = vec![0.0f64; depth + 2];
    down[1] = 1.0;
    for slot in out.iter_mut().skip(1) {
        let mut next_down = vec![0.0f64; depth + 2];
        let mut next_up = vec![0.0f64; depth + 2];
        for h in 1..=depth {
            let (d, u) = (down[h], up[h]);
            if d == 0.0 && u == 0.0 {
                continue;
            }
            // leaving downward: swap while going down, or turn while going up
            let go_down = d * (1.0 - p) + u * p;
            let go_up = d * p + u * (1.0 - p);
            if h < depth {
                next_down[h + 1] += go_down;
            }
            if h == 1 {
                *slot += go_up;
            } else {
                next_up[h - 1] += go_up;
            }
        }
        down = next_down;
        up = next_up;
    }
    out
}

/// Lower-bound decay exponent `k log2(2/p)` of the hyperbolic circuit.
pub fn hyperbolic_exponent_bound(k: usize, p: f64) -> f64 {
    k as f64 * (2.0 / p).log2()
}

/// Lower bound on the probability that `k` sites spanning distance `x` form a
/// cat state in the hyperbolic circuit.
pub fn hyperbolic_probability_bound(k: usize, p: f64, q: f64, x: f64) -> f64 {
    let half_p_k = (0.5 * p).powi(k as i32);
    q.powi(k as i32 - 2) * (1.0 - p - q) * half_p_k / (2.0 - half_p_k) * x.powf(-hyperbolic_exponent_bound(k, p))
}
