//! Cross-ratios, angle averaging, power-law fits and exponent checks.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::{Geometry, SubregionSet};

/// Points with fewer hits than this are left out of fits.
pub const MIN_FIT_HITS: u64 = 10;

/// Chord length `(N / pi) sin(pi x / N)` on a ring of circumference `n`.
pub fn chord_length(x: f64, n: f64) -> f64 {
    n / PI * (PI * x / n).sin()
}

/// Generalized cross-ratio of `k` intervals `[left_i, left_i + width_i)` on a
/// ring of `n` sites, with every length replaced by its chord.
pub fn eta_intervals(lefts: &[usize], widths: &[usize], n: usize) -> Result<f64> {
    let k = lefts.len();
    if k < 2 || widths.len() != k {
        return Err(Error::UndefinedEta(format!("need k >= 2 intervals, got {k}")));
    }
    let nf = n as f64;
    let ring = |a: usize, b: usize| -> f64 { chord_length(((a + n - b % n) % n) as f64, nf) };
    let mut log_w = 0.0;
    for &w in widths {
        log_w += chord_length(w as f64, nf).ln();
    }
    let mut log_xy = 0.0;
    for i in 0..k {
        for j in i + 1..k {
            let x = ring(lefts[i] % n, lefts[j]);
            let y = ring((lefts[i] + widths[i]) % n, lefts[j] + widths[j]);
            if x.abs() < 1e-12 || y.abs() < 1e-12 {
                return Err(Error::UndefinedEta(format!("intervals {i} and {j} share an endpoint")));
            }
            log_xy += x.ln() + y.ln();
        }
    }
    let kf = k as f64;
    Ok((2.0 / kf * log_w - 2.0 / (kf * (kf - 1.0)) * log_xy).exp())
}

/// [`eta_intervals`] for a set of contiguous arcs.
pub fn eta_1d(subs: &SubregionSet) -> Result<f64> {
    let n = subs.num_sites();
    let mut lefts = Vec::with_capacity(subs.k());
    let mut widths = Vec::with_capacity(subs.k());
    for region in subs.regions() {
        let member = |s: usize| region.binary_search(&s).is_ok();
        let starts: Vec<usize> = region.iter().copied().filter(|&s| !member((s + n - 1) % n)).collect();
        if starts.len() != 1 {
            return Err(Error::UndefinedEta("region is not a single arc of the ring".into()));
        }
        lefts.push(starts[0]);
        widths.push(region.len());
    }
    eta_intervals(&lefts, &widths, n)
}

/// `ch(2r)^2 / (ch(x)^2 + ch(y)^2)` with per-axis chords on an `l x l` torus.
pub fn eta_2d(r: f64, x: f64, y: f64, l: f64) -> f64 {
    let (cx, cy, cr) = (chord_length(x, l), chord_length(y, l), chord_length(2.0 * r, l));
    cr * cr / (cx * cx + cy * cy)
}

/// `eta` for any 1D or 2D subregion set.
pub fn eta_of(subs: &SubregionSet) -> Result<f64> {
    match subs.geometry() {
        Geometry::Disks { radius_sq, dx, dy, side } => {
            Ok(eta_2d((radius_sq as f64).sqrt(), dx as f64, dy as f64, side as f64))
        }
        _ => eta_1d(subs),
    }
}

/// Measured rate with its error at one value of `eta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EtaPoint {
    pub eta: f64,
    pub rate: f64,
    pub stderr: f64,
    /// Raw event count, if known; sparse points are dropped from fits.
    #[serde(default)]
    pub hits: Option<u64>,
    #[serde(default)]
    pub k: usize,
    #[serde(default)]
    pub tag: String,
}

impl EtaPoint {
    pub fn new(eta: f64, rate: f64, stderr: f64) -> Self {
        Self { eta, rate, stderr, hits: None, k: 0, tag: String::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub alpha: f64,
    pub alpha_err: f64,
    pub prefactor: f64,
    pub window: (f64, f64),
    pub chi2_per_dof: f64,
    pub points: usize,
}

/// Weighted least squares of `ln rate` against `ln eta`; `alpha` is twice the slope.
///
/// Weights are `(rate / stderr)^2`. If any usable point has zero error the fit is
/// unweighted and the slope error comes from the residual scatter; otherwise it
/// is inflated by `sqrt(chi2/dof)` when that exceeds one.
pub fn fit_power_law(points: &[EtaPoint], window: (f64, f64)) -> Result<FitResult> {
    if window.0.is_nan() || window.1.is_nan() || window.0 >= window.1 {
        return Err(Error::InvalidConfig(format!("empty fit window {window:?}")));
    }
    let usable: Vec<&EtaPoint> = points
        .iter()
        .filter(|p| p.eta >= window.0 && p.eta <= window.1 && p.eta > 0.0)
        .filter(|p| p.rate > 0.0 && p.hits.is_none_or(|h| h >= MIN_FIT_HITS))
        .collect();
    if usable.len() < 3 {
        return Err(Error::InsufficientPoints { usable: usable.len(), needed: 3 });
    }
    let weighted = usable.iter().all(|p| p.stderr > 0.0);
    let data: Vec<(f64, f64, f64)> = usable
        .iter()
        .map(|p| {
            let w = if weighted { (p.rate / p.stderr).powi(2) } else { 1.0 };
            (p.eta.ln(), p.rate.ln(), w)
        })
        .collect();
    let sw: f64 = data.iter().map(|d| d.2).sum();
    let mx = data.iter().map(|d| d.2 * d.0).sum::<f64>() / sw;
    let my = data.iter().map(|d| d.2 * d.1).sum::<f64>() / sw;
    let sxx: f64 = data.iter().map(|d| d.2 * (d.0 - mx).powi(2)).sum();
    if sxx <= 0.0 {
        return Err(Error::InsufficientPoints { usable: 1, needed: 3 });
    }
    let sxy: f64 = data.iter().map(|d| d.2 * (d.0 - mx) * (d.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let chi2: f64 = data.iter().map(|d| d.2 * (d.1 - intercept - slope * d.0).powi(2)).sum();
    let dof = (data.len() - 2) as f64;
    let chi2_per_dof = chi2 / dof;
    let scale = if weighted { chi2_per_dof.max(1.0) } else { chi2_per_dof };
    let slope_err = (scale / sxx).sqrt();
    Ok(FitResult {
        alpha: 2.0 * slope,
        alpha_err: 2.0 * slope_err,
        prefactor: intercept.exp(),
        window,
        chi2_per_dof,
        points: data.len(),
    })
}

/// Rates on the displacement grid of an `side x side` torus.
#[derive(Debug, Clone, PartialEq)]
pub struct RateGrid {
    pub side: usize,
    pub iterations: u64,
    rates: Vec<Option<f64>>,
}

impl RateGrid {
    pub fn new(side: usize, iterations: u64) -> Self {
        Self { side, iterations, rates: vec![None; side * side] }
    }

    fn slot(&self, dx: i64, dy: i64) -> usize {
        let l = self.side as i64;
        (dy.rem_euclid(l) * l + dx.rem_euclid(l)) as usize
    }

    pub fn set(&mut self, dx: i64, dy: i64, rate: f64) {
        let i = self.slot(dx, dy);
        self.rates[i] = Some(rate);
    }

    pub fn get(&self, dx: i64, dy: i64) -> Option<f64> {
        self.rates[self.slot(dx, dy)]
    }

    /// Fill every image of each displacement under the symmetries of the square.
    pub fn set_symmetric(&mut self, dx: i64, dy: i64, rate: f64) {
        for (a, b) in [(dx, dy), (dy, dx)] {
            for (sa, sb) in [(1, 1), (-1, 1), (1, -1), (-1, -1)] {
                self.set(sa * a, sb * b, rate);
            }
        }
    }

    pub fn measured(&self) -> usize {
        self.rates.iter().flatten().count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AngleAverage {
    pub rate: f64,
    pub stderr: f64,
    /// Angles that fell inside the measured region.
    pub angles_used: usize,
}

/// Inverse of the per-axis chord, if the chord is reachable.
fn inverse_chord(c: f64, l: f64) -> Option<f64> {
    let s = PI * c / l;
    (s.abs() <= 1.0).then(|| l / PI * s.asin())
}

/// Average of the bilinearly interpolated rate over `num_angles` directions at
/// fixed `eta`, for subregions of radius `radius`.
///
/// The error adds in quadrature the spread over angles and the mean over angles
/// of the interpolated shot noise `sum_ij w_ij sqrt(rate_ij / iterations)`.
pub fn angle_average(grid: &RateGrid, radius: f64, eta: f64, num_angles: usize) -> Result<AngleAverage> {
    if eta.is_nan() || eta <= 0.0 || num_angles == 0 {
        return Err(Error::OutsideMeasuredRegion);
    }
    let l = grid.side as f64;
    let big_c = chord_length(2.0 * radius, l) / eta.sqrt();
    let omega = grid.iterations.max(1) as f64;
    let mut values = Vec::with_capacity(num_angles);
    let mut noise = Vec::with_capacity(num_angles);
    'angles: for a in 0..num_angles {
        let theta = 2.0 * PI * a as f64 / num_angles as f64;
        let (Some(x), Some(y)) = (inverse_chord(big_c * theta.cos(), l), inverse_chord(big_c * theta.sin(), l)) else {
            continue;
        };
        let (x0, y0) = (x.floor(), y.floor());
        let (fx, fy) = (x - x0, y - y0);
        let (x0, y0) = (x0 as i64, y0 as i64);
        let mut value = 0.0;
        let mut shot = 0.0;
        for (ix, iy, w) in [
            (x0, y0, (1.0 - fx) * (1.0 - fy)),
            (x0 + 1, y0, fx * (1.0 - fy)),
            (x0, y0 + 1, (1.0 - fx) * fy),
            (x0 + 1, y0 + 1, fx * fy),
        ] {
            let Some(rate) = grid.get(ix, iy) else {
                continue 'angles;
            };
            value += w * rate;
            shot += w * (rate.max(0.0) / omega).sqrt();
        }
        values.push(value);
        noise.push(shot);
    }
    if values.is_empty() {
        return Err(Error::OutsideMeasuredRegion);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let shot = noise.iter().sum::<f64>() / n;
    Ok(AngleAverage { rate: mean, stderr: (var + shot * shot).sqrt(), angles_used: values.len() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FssEstimate {
    pub alpha: f64,
    /// Sample standard deviation of the averaged exponents.
    pub spread: f64,
    pub radii_used: Vec<f64>,
    /// Fewer than five radii were available.
    pub degraded: bool,
    /// `(radius, alpha, alpha_err)` for every radius supplied.
    pub series: Vec<(f64, f64, f64)>,
}

/// Average of the exponents fitted at the five largest radii.
pub fn fss_extrapolate(per_radius: &[(f64, FitResult)]) -> Result<FssEstimate> {
    if per_radius.is_empty() {
        return Err(Error::InsufficientPoints { usable: 0, needed: 1 });
    }
    let mut sorted: Vec<&(f64, FitResult)> = per_radius.iter().collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let series = sorted.iter().map(|(r, f)| (*r, f.alpha, f.alpha_err)).collect();
    let top = &sorted[sorted.len().saturating_sub(5)..];
    let n = top.len() as f64;
    let alpha = top.iter().map(|(_, f)| f.alpha).sum::<f64>() / n;
    let spread = if top.len() > 1 {
        (top.iter().map(|(_, f)| (f.alpha - alpha).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok(FssEstimate {
        alpha,
        spread,
        radii_used: top.iter().map(|(r, _)| *r).collect(),
        degraded: per_radius.len() < 5,
        series,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    /// `alpha_k >= alpha_k^MI`
    ClassicalDominance,
    /// `alpha_{k+1} >= alpha_k`
    Monotonicity,
    /// `alpha_k + alpha_l >= alpha_{k+l}`
    Subadditivity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationCheck {
    pub relation: Relation,
    pub parties: Vec<usize>,
    pub lhs: f64,
    pub rhs: f64,
    /// Combined one-sigma error of `lhs - rhs`.
    pub sigma: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationReport {
    pub checks: Vec<RelationCheck>,
    pub all_pass: bool,
}

/// A relation `lhs >= rhs` fails only if it is violated by more than `2 sigma`.
pub fn check_exponent_relations(gme: &BTreeMap<usize, FitResult>, mi: &BTreeMap<usize, FitResult>) -> RelationReport {
    let mut checks = Vec::new();
    let mut push = |relation, parties: Vec<usize>, lhs: f64, rhs: f64, sigma: f64| {
        checks.push(RelationCheck { relation, parties, lhs, rhs, sigma, pass: lhs - rhs >= -2.0 * sigma });
    };
    let hyp = |a: f64, b: f64| (a * a + b * b).sqrt();
    for (&k, g) in gme {
        if let Some(m) = mi.get(&k) {
            push(Relation::ClassicalDominance, vec![k], g.alpha, m.alpha, hyp(g.alpha_err, m.alpha_err));
        }
        if let Some(next) = gme.get(&(k + 1)) {
            push(Relation::Monotonicity, vec![k, k + 1], next.alpha, g.alpha, hyp(next.alpha_err, g.alpha_err));
        }
    }
    for (&k, a) in gme {
        for (&l, b) in gme.range(k..) {
            if let Some(sum) = gme.get(&(k + l)) {
                let left_err = if k == l { 2.0 * a.alpha_err } else { hyp(a.alpha_err, b.alpha_err) };
                push(
                    Relation::Subadditivity,
                    vec![k, l, k + l],
                    a.alpha + b.alpha,
                    sum.alpha,
                    hyp(left_err, sum.alpha_err),
                );
            }
        }
    }
    let all_pass = checks.iter().all(|c| c.pass);
    RelationReport { checks, all_pass }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::{place_subregions_1d, Spacing};

    fn fit(alpha: f64, err: f64) -> FitResult {
        FitResult { alpha, alpha_err: err, prefactor: 1.0, window: (0.0, 1.0), chi2_per_dof: 1.0, points: 5 }
    }

    #[test]
    fn chord_basics() {
        assert!((chord_length(256.0, 512.0) - 512.0 / PI).abs() < 1e-9);
        assert!(chord_length(0.0, 64.0).abs() < 1e-12);
        assert!(chord_length(64.0, 64.0).abs() < 1e-9);
        // relative deviation is about (pi x / N)^2 / 6
        for x in 1..=51 {
            let c = chord_length(x as f64, 512.0);
            let bound = (PI * x as f64 / 512.0).powi(2) / 6.0;
            assert!((x as f64 - c) / (x as f64) <= bound + 1e-12);
            if x <= 35 {
                assert!((c - x as f64).abs() / (x as f64) < 0.01);
            }
        }
    }

    #[test]
    fn eta_two_intervals() {
        let expected = (chord_length(4.0, 512.0) / chord_length(16.0, 512.0)).powi(2);
        let eta = eta_intervals(&[0, 16], &[4, 4], 512).unwrap();
        assert!((eta - expected).abs() < 1e-12);
        assert!((eta - 0.0625).abs() < 0.0625 * 5e-3);
        let swapped = eta_intervals(&[16, 0], &[4, 4], 512).unwrap();
        assert!((eta - swapped).abs() < 1e-15);
        assert!(eta_intervals(&[0, 0], &[4, 4], 512).is_err());
    }

    #[test]
    fn eta_from_subregion_set() {
        let subs = place_subregions_1d(2, 4, Spacing::Fixed(16), 512).unwrap();
        assert!((eta_1d(&subs).unwrap() - eta_intervals(&[0, 16], &[4, 4], 512).unwrap()).abs() < 1e-15);
        // an arc wrapping through site 0
        let wrapped =
            SubregionSet::new(vec![vec![510, 511, 0, 1], vec![14, 15, 16, 17]], 512, Geometry::Custom).unwrap();
        assert!((eta_1d(&wrapped).unwrap() - eta_intervals(&[510, 14], &[4, 4], 512).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn eta_2d_cases() {
        assert!((eta_2d(1.0, 4.0, 3.0, 1e7) - 0.16).abs() < 1e-9);
        let l = 64.0;
        let e = eta_2d(1.0, l / 2.0, 0.0, l);
        assert!((e - chord_length(2.0, l).powi(2) / (l / PI).powi(2)).abs() < 1e-12);
        assert!((eta_2d(2.0, 5.0, 9.0, l) - eta_2d(2.0, 9.0, 5.0, l)).abs() < 1e-15);
        assert!((eta_2d(2.0, 5.0, 9.0, l) - eta_2d(2.0, l - 5.0, 9.0, l)).abs() < 1e-12);
    }

    #[test]
    fn exact_power_law_fit() {
        let pts: Vec<EtaPoint> =
            (1..=10).map(|i| i as f64 * 0.03).map(|e| EtaPoint::new(e, 7.0 * e * e, 0.0)).collect();
        let f = fit_power_law(&pts, (0.0, 1.0)).unwrap();
        assert!((f.alpha - 4.0).abs() < 1e-10);
        assert!((f.prefactor - 7.0).abs() < 1e-9);
        assert!(f.chi2_per_dof < 1e-20);
    }

    #[test]
    fn fit_rejects_sparse_data() {
        let mut pts = vec![EtaPoint::new(0.1, 0.01, 0.001), EtaPoint::new(0.2, 0.04, 0.001)];
        assert!(matches!(fit_power_law(&pts, (0.0, 1.0)), Err(Error::InsufficientPoints { .. })));
        pts.push(EtaPoint::new(0.3, 0.0, 0.0));
        assert!(fit_power_law(&pts, (0.0, 1.0)).is_err());
        pts.push(EtaPoint { hits: Some(3), ..EtaPoint::new(0.4, 0.16, 0.01) });
        assert!(fit_power_law(&pts, (0.0, 1.0)).is_err());
    }

    #[test]
    fn constant_grid_average() {
        let mut g = RateGrid::new(16, 10_000);
        for x in 0..16 {
            for y in 0..16 {
                g.set(x, y, 0.04);
            }
        }
        let a = angle_average(&g, 1.0, 0.1, 64).unwrap();
        assert!((a.rate - 0.04).abs() < 1e-12);
        assert!((a.stderr - (0.04f64 / 10_000.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn unmeasured_region_is_excluded() {
        let g = RateGrid::new(16, 100);
        assert!(matches!(angle_average(&g, 1.0, 0.1, 32), Err(Error::OutsideMeasuredRegion)));
        let mut g = RateGrid::new(16, 100);
        g.set_symmetric(3, 1, 0.5);
        assert_eq!(g.measured(), 8);
        assert_eq!(g.get(-1, 3), Some(0.5));
        assert_eq!(g.get(13, 15), Some(0.5));
    }

    #[test]
    fn fss_average_of_largest_radii() {
        let fits: Vec<(f64, FitResult)> =
            [5.9, 6.0, 6.1, 6.2, 6.3, 6.4].iter().enumerate().map(|(i, &a)| (i as f64 + 1.0, fit(a, 0.1))).collect();
        let e = fss_extrapolate(&fits).unwrap();
        assert!((e.alpha - 6.2).abs() < 1e-12);
        assert!(!e.degraded);
        assert_eq!(e.radii_used, vec![2.0, 3.0, 4.0, 5.0, 6.0]);
        let e = fss_extrapolate(&fits[..2]).unwrap();
        assert!(e.degraded);
        assert!((e.alpha - 5.95).abs() < 1e-12);
    }

    #[test]
    fn table_values_satisfy_relations() {
        let gme: BTreeMap<usize, FitResult> =
            [(2, fit(4.01, 0.05)), (3, fit(6.2, 0.3)), (4, fit(8.2, 0.4)), (5, fit(10.1, 0.5))].into();
        let mi: BTreeMap<usize, FitResult> =
            [(2, fit(0.67, 0.05)), (3, fit(0.99, 0.05)), (4, fit(1.32, 0.05)), (5, fit(1.65, 0.05))].into();
        let r = check_exponent_relations(&gme, &mi);
        assert!(r.all_pass);
        assert!(r.checks.iter().any(|c| c.relation == Relation::Subadditivity && c.parties == vec![2, 2, 4]));
        assert!(r.checks.iter().any(|c| c.relation == Relation::Subadditivity && c.parties == vec![2, 3, 5]));
    }

    #[test]
    fn superadditive_exponents_fail() {
        let gme: BTreeMap<usize, FitResult> = [(2, fit(4.0, 0.05)), (4, fit(10.0, 0.05))].into();
        let r = check_exponent_relations(&gme, &BTreeMap::new());
        assert!(!r.all_pass);
        let gme: BTreeMap<usize, FitResult> = [(2, fit(4.0, 0.0)), (4, fit(8.0, 0.0))].into();
        assert!(check_exponent_relations(&gme, &BTreeMap::new()).all_pass);
    }
}
