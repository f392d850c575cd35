//! Brute-force stabilizer simulation of small measurement-only circuits.
//!
//! Used to certify that the percolation clusters are exactly the cat states
//! produced by the circuit. Qubits are capped at 64 so that a Pauli string fits
//! in a pair of `u64` masks.

use crate::cluster::{ClusterState, SurfacePartition};
use crate::ensembles::{EnsembleConfig, LayerBonds, Sampler};
use crate::error::{Error, Result};
use crate::rng::{CounterRng, LayerKey, Stream};

pub const MAX_QUBITS: usize = 64;

/// `i^phase * X^x Z^z`, qubit `q` on bit `q`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Pauli {
    pub x: u64,
    pub z: u64,
    pub phase: u8,
}

impl Pauli {
    pub fn x_on(q: usize) -> Self {
        Self { x: 1 << q, z: 0, phase: 0 }
    }

    pub fn zz_on(i: usize, j: usize) -> Self {
        Self { x: 0, z: (1 << i) | (1 << j), phase: 0 }
    }

    pub fn commutes_with(&self, other: &Pauli) -> bool {
        ((self.x & other.z) ^ (self.z & other.x)).count_ones().is_multiple_of(2)
    }

    /// `self * other`.
    pub fn times(&self, other: &Pauli) -> Pauli {
        let swap = (self.z & other.x).count_ones() as u8;
        Pauli { x: self.x ^ other.x, z: self.z ^ other.z, phase: (self.phase + other.phase + 2 * swap) % 4 }
    }

    /// `-1` sign of a Hermitian string written in `X^x Z^z` form with `Y = iXZ`.
    pub fn is_negative(&self) -> bool {
        let ys = (self.x & self.z).count_ones() as u8;
        (self.phase + 4 - ys % 4) % 4 == 2
    }
}

#[derive(Debug, Clone)]
pub struct Tableau {
    num_qubits: usize,
    gens: Vec<Pauli>,
    outcomes: LayerKey,
    draws: u64,
}

impl Tableau {
    /// Every qubit in `|+>`, random outcomes from a default key.
    pub fn plus_state(num_qubits: usize) -> Self {
        Self::with_outcomes(num_qubits, CounterRng::new(0).layer_key(Stream::Outcomes, 0, 0))
    }

    pub fn with_outcomes(num_qubits: usize, outcomes: LayerKey) -> Self {
        assert!((1..=MAX_QUBITS).contains(&num_qubits), "oracle supports 1..=64 qubits");
        Self { num_qubits, gens: (0..num_qubits).map(Pauli::x_on).collect(), outcomes, draws: 0 }
    }

    pub fn num_qubits(&self) -> usize {
        self.num_qubits
    }

    pub fn generators(&self) -> &[Pauli] {
        &self.gens
    }

    /// Projective measurement of a Hermitian Pauli; returns `true` for outcome `-1`.
    pub fn measure(&mut self, op: Pauli) -> bool {
        let anti: Vec<usize> = (0..self.gens.len()).filter(|&g| !self.gens[g].commutes_with(&op)).collect();
        let Some((&first, rest)) = anti.split_first() else {
            return self.determined_outcome(op);
        };
        let pivot = self.gens[first];
        for &g in rest {
            self.gens[g] = self.gens[g].times(&pivot);
        }
        let negative = self.outcomes.u64_at(self.draws) & 1 == 1;
        self.draws += 1;
        self.gens[first] = Pauli { phase: (op.phase + if negative { 2 } else { 0 }) % 4, ..op };
        negative
    }

    /// Sign of `op` in the stabilizer group, assuming it is a member.
    fn determined_outcome(&self, op: Pauli) -> bool {
        // solve op = prod of generators over GF(2) by elimination on 128-bit rows
        let mut rows: Vec<(u128, Pauli)> = self.gens.iter().map(|g| (pack(g), *g)).collect();
        let mut target = pack(&op);
        let mut product = Pauli { x: 0, z: 0, phase: 0 };
        let mut r = 0;
        for bit in (0..128).rev() {
            let Some(p) = (r..rows.len()).find(|&i| rows[i].0 >> bit & 1 == 1) else {
                continue;
            };
            rows.swap(r, p);
            for i in 0..rows.len() {
                if i != r && rows[i].0 >> bit & 1 == 1 {
                    rows[i] = (rows[i].0 ^ rows[r].0, rows[i].1.times(&rows[r].1));
                }
            }
            r += 1;
        }
        for (bits, g) in &rows {
            let lead = 127 - bits.leading_zeros();
            if *bits != 0 && target >> lead & 1 == 1 {
                target ^= bits;
                product = product.times(g);
            }
        }
        debug_assert_eq!(target, 0, "commuting operator outside the stabilizer group");
        // product equals op up to a sign
        (product.phase + 4 - op.phase) % 4 == 2
    }

    pub fn apply_x_measurement(&mut self, q: usize) -> bool {
        self.measure(Pauli::x_on(q))
    }

    pub fn apply_zz_measurement(&mut self, i: usize, j: usize) -> bool {
        assert_ne!(i, j, "ZZ needs two distinct qubits");
        self.measure(Pauli::zz_on(i, j))
    }

    /// Relabel qubits: new qubit `s` is old qubit `routing[s]`.
    pub fn permute(&mut self, routing: &[u32]) {
        let remap =
            |m: u64| -> u64 { routing.iter().enumerate().fold(0u64, |acc, (s, &src)| acc | ((m >> src) & 1) << s) };
        for g in &mut self.gens {
            g.x = remap(g.x);
            g.z = remap(g.z);
        }
    }

    /// Apply one percolation layer: its `ZZ` bonds, `X` on cut sites, then routing.
    pub fn apply_layer(&mut self, bonds: &LayerBonds) {
        for &(i, j) in &bonds.intralayer {
            if i != j {
                self.apply_zz_measurement(i as usize, j as usize);
            }
        }
        for (q, &open) in bonds.interlayer_open.iter().enumerate() {
            if !open {
                self.apply_x_measurement(q);
            }
        }
        if let Some(routing) = &bonds.routing {
            self.permute(routing);
        }
    }

    /// Rank of the generators over GF(2).
    pub fn rank(&self) -> usize {
        gf2_rank(self.gens.iter().map(pack).collect())
    }
}

fn pack(p: &Pauli) -> u128 {
    (p.x as u128) << 64 | p.z as u128
}

fn gf2_rank(mut rows: Vec<u128>) -> usize {
    let mut rank = 0;
    for bit in (0..128).rev() {
        let Some(p) = (rank..rows.len()).find(|&i| rows[i] >> bit & 1 == 1) else {
            continue;
        };
        rows.swap(rank, p);
        for i in 0..rows.len() {
            if i != rank && rows[i] >> bit & 1 == 1 {
                rows[i] ^= rows[rank];
            }
        }
        rank += 1;
    }
    rank
}

/// Read the cat-state partition off the stabilizer group.
///
/// The group must split into `X`-strings (one independent string per cluster)
/// and `Z` strings that are products of `ZZ` pairs inside clusters; anything
/// else is reported as [`Error::NotCatForm`].
pub fn extract_cat_partition(tab: &Tableau) -> Result<SurfacePartition> {
    let n = tab.num_qubits;
    let mut rows: Vec<u128> = tab.gens.iter().map(pack).collect();
    // reduced row echelon form, X block first
    let mut rank = 0;
    for bit in (0..128).rev() {
        let Some(p) = (rank..rows.len()).find(|&i| rows[i] >> bit & 1 == 1) else {
            continue;
        };
        rows.swap(rank, p);
        for i in 0..rows.len() {
            if i != rank && rows[i] >> bit & 1 == 1 {
                rows[i] ^= rows[rank];
            }
        }
        rank += 1;
    }
    if rank != n {
        return Err(Error::NotCatForm(format!("generators have rank {rank}, expected {n}")));
    }
    let x_rows: Vec<u128> = rows.iter().copied().filter(|r| r >> 64 != 0).collect();
    let z_rows: Vec<u64> = rows.iter().filter(|r| *r >> 64 == 0).map(|&r| r as u64).collect();
    // in reduced echelon form the Z pivots are already cleared from the X rows
    if let Some(r) = x_rows.iter().find(|r| **r as u64 != 0) {
        return Err(Error::NotCatForm(format!("mixed generator x={:#x} z={:#x}", r >> 64, *r as u64)));
    }
    let mut pattern = vec![0u64; n];
    for (b, r) in x_rows.iter().enumerate() {
        let xs = (r >> 64) as u64;
        for (q, pat) in pattern.iter_mut().enumerate() {
            *pat |= ((xs >> q) & 1) << b;
        }
    }
    if let Some(q) = pattern.iter().position(|&p| p == 0) {
        return Err(Error::NotCatForm(format!("qubit {q} carries no X support")));
    }
    let mut groups: std::collections::BTreeMap<u64, Vec<usize>> = Default::default();
    for (q, &p) in pattern.iter().enumerate() {
        groups.entry(p).or_default().push(q);
    }
    let partition = SurfacePartition::from_clusters(n, groups.into_values());
    if x_rows.len() != partition.len() || z_rows.len() != n - partition.len() {
        return Err(Error::NotCatForm(format!(
            "{} X rows and {} Z rows for {} clusters",
            x_rows.len(),
            z_rows.len(),
            partition.len()
        )));
    }
    for z in &z_rows {
        for cluster in &partition.clusters {
            let on = cluster.iter().filter(|&&q| z >> q & 1 == 1).count();
            if on % 2 == 1 {
                return Err(Error::NotCatForm(format!("Z string {z:#x} has odd weight on a cluster")));
            }
        }
    }
    Ok(partition)
}

/// Cluster partition of one realization from the union-find engine.
pub fn percolation_partition(sampler: &Sampler, realization: u64) -> SurfacePartition {
    let mut state = ClusterState::new(sampler.num_sites());
    sampler.for_each_row(realization, |row| state.advance_layer(row));
    state.surface_partition()
}

/// Cluster partition of one realization from the stabilizer simulation.
pub fn tableau_partition(sampler: &Sampler, realization: u64, outcome_seed: u64) -> Result<SurfacePartition> {
    let n = sampler.num_sites();
    if n > MAX_QUBITS {
        return Err(Error::InvalidEnsemble(format!("oracle supports at most {MAX_QUBITS} qubits, got {n}")));
    }
    let key = CounterRng::new(outcome_seed).layer_key(Stream::Outcomes, realization, 0);
    let mut tab = Tableau::with_outcomes(n, key);
    sampler.for_each_row(realization, |row| tab.apply_layer(row));
    extract_cat_partition(&tab)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct OracleReport {
    pub realizations: u64,
    pub matches: u64,
    /// Realizations whose partitions differ.
    pub mismatches: Vec<u64>,
    /// Realizations whose tableau was not a product of cat states.
    pub structural_errors: Vec<u64>,
}

impl OracleReport {
    pub fn passed(&self) -> bool {
        self.matches == self.realizations
    }
}

/// Compare both partitions on realizations `0..realizations`.
pub fn oracle_check(cfg: &EnsembleConfig, master_seed: u64, realizations: u64) -> Result<OracleReport> {
    let sampler = Sampler::new(cfg, master_seed)?;
    let mut report = OracleReport { realizations, ..Default::default() };
    for r in 0..realizations {
        let expected = percolation_partition(&sampler, r);
        match tableau_partition(&sampler, r, master_seed ^ 0x5eed) {
            Ok(p) if p == expected => report.matches += 1,
            Ok(_) => report.mismatches.push(r),
            Err(Error::NotCatForm(_)) => report.structural_errors.push(r),
            Err(e) => return Err(e),
        }
    }
    Ok(report)
}
