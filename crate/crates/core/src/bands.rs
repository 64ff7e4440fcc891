//! Band sampling over the dual torus, gap detection, and classification of gap
//! edges as non-degenerate or failing one of the three conditions:
//! A (a single band attains the edge), B (finitely many attaining points) and
//! C (positive-definite Hessian at each of them).

use std::fmt::Write as _;

use nalgebra::{Matrix2, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fibre::{bloch_eigs_on, PlaneWaveBasis, PlaneWaveModel};
use crate::lattice::{DualLattice, Vec2};
use crate::linalg::EigenDecomposition;
use crate::par::par_map;

/// A periodic operator whose fibres can be diagonalized at any quasimomentum.
pub trait BlochModel: Sync {
    fn dual(&self) -> DualLattice;

    /// Spectral data of the fibre at `k`, values ascending.
    fn fibre(&self, k: &Vec2) -> Result<EigenDecomposition>;

    /// Fibre at `k` on a discretization frozen at `anchor`, so that nearby
    /// evaluations are smooth in `k` and eigenvectors are comparable.
    fn local_fibre(&self, _anchor: &Vec2, k: &Vec2) -> Result<EigenDecomposition> {
        self.fibre(k)
    }

    /// Typical energy; tolerances are relative to it.
    fn energy_scale(&self) -> f64;

    fn default_domain(&self) -> KDomain;

    /// Estimate of the discretization error of `λ_j(k)`.
    fn truncation_delta(&self, _k: &Vec2, _j: usize) -> Result<f64> {
        Ok(0.0)
    }
}

impl BlochModel for PlaneWaveModel {
    fn dual(&self) -> DualLattice {
        self.potential.dual().clone()
    }

    fn fibre(&self, k: &Vec2) -> Result<EigenDecomposition> {
        let sol = self.eigs(k)?;
        Ok(EigenDecomposition { values: sol.values, vectors: sol.vectors })
    }

    fn local_fibre(&self, anchor: &Vec2, k: &Vec2) -> Result<EigenDecomposition> {
        let basis = PlaneWaveBasis::new(self.potential.dual(), anchor, self.e_cut)?.at(k);
        let sol = bloch_eigs_on(&self.potential, &basis)?;
        Ok(EigenDecomposition { values: sol.values, vectors: sol.vectors })
    }

    fn energy_scale(&self) -> f64 {
        let d = self.potential.dual().min_norm();
        d * d + self.potential.sup_norm_bound()
    }

    fn default_domain(&self) -> KDomain {
        KDomain::torus(self.potential.dual())
    }

    fn truncation_delta(&self, k: &Vec2, j: usize) -> Result<f64> {
        self.cutoff_delta(k, j)
    }
}

/// A scalar band `λ(k)` given by a closure; a single-band model for probing
/// the edge machinery on synthetic profiles.
pub struct ProfileModel<F> {
    pub profile: F,
    pub dual: DualLattice,
    pub domain: KDomain,
    pub scale: f64,
}

impl<F: Fn(&Vec2) -> f64 + Sync> BlochModel for ProfileModel<F> {
    fn dual(&self) -> DualLattice {
        self.dual.clone()
    }

    fn fibre(&self, k: &Vec2) -> Result<EigenDecomposition> {
        Ok(EigenDecomposition {
            values: vec![(self.profile)(k)],
            vectors: crate::linalg::CMatrix::identity(1, 1),
        })
    }

    fn energy_scale(&self) -> f64 {
        self.scale
    }

    fn default_domain(&self) -> KDomain {
        self.domain.clone()
    }
}

/// A parallelogram of quasimomenta `origin + s·spans[0] + t·spans[1]`.
///
/// Half-open domains (`closed = false`) sample `s, t ∈ [0, 1)` and wrap at the
/// edges; closed domains sample `[0, 1]` inclusive and do not wrap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KDomain {
    pub origin: Vec2,
    pub spans: [Vec2; 2],
    pub closed: bool,
}

impl KDomain {
    /// The fundamental parallelogram of the dual torus.
    pub fn torus(dual: &DualLattice) -> Self {
        Self { origin: Vec2::zeros(), spans: [dual.generator(0), dual.generator(1)], closed: false }
    }

    /// The closed rectangle `[0, a] × [0, b]`.
    pub fn rectangle(a: f64, b: f64) -> Self {
        Self { origin: Vec2::zeros(), spans: [Vec2::new(a, 0.0), Vec2::new(0.0, b)], closed: true }
    }

    pub fn periodic(&self) -> bool {
        !self.closed
    }

    fn step(&self, n: usize) -> f64 {
        if self.closed {
            1.0 / (n.max(2) - 1) as f64
        } else {
            1.0 / n as f64
        }
    }

    pub fn point(&self, i: usize, j: usize, dims: [usize; 2]) -> Vec2 {
        let s = i as f64 * self.step(dims[0]);
        let t = j as f64 * self.step(dims[1]);
        self.origin + self.spans[0] * s + self.spans[1] * t
    }

    /// Largest spacing between adjacent grid points.
    pub fn cell_size(&self, dims: [usize; 2]) -> f64 {
        (self.spans[0].norm() * self.step(dims[0])).max(self.spans[1].norm() * self.step(dims[1]))
    }
}

/// Band values sampled on a regular grid, `i` varying fastest.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BandGrid {
    pub dims: [usize; 2],
    pub domain: KDomain,
    pub n_bands: usize,
    pub k_points: Vec<Vec2>,
    pub values: Vec<Vec<f64>>,
}

impl BandGrid {
    pub fn index(&self, i: usize, j: usize) -> usize {
        i + self.dims[0] * j
    }

    pub fn len(&self) -> usize {
        self.k_points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.k_points.is_empty()
    }

    /// `(min, max)` of band `j` over the grid.
    pub fn band_range(&self, j: usize) -> (f64, f64) {
        self.values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v[j]), hi.max(v[j])))
    }

    /// Grid neighbours of point `idx` in the 8-neighbourhood.
    pub fn neighbours(&self, idx: usize) -> Vec<usize> {
        let [n0, n1] = self.dims;
        let (i, j) = ((idx % n0) as i64, (idx / n0) as i64);
        let wrap = self.domain.periodic();
        let mut out = Vec::with_capacity(8);
        for dj in -1..=1i64 {
            for di in -1..=1i64 {
                if di == 0 && dj == 0 {
                    continue;
                }
                let (mut a, mut b) = (i + di, j + dj);
                if wrap {
                    a = a.rem_euclid(n0 as i64);
                    b = b.rem_euclid(n1 as i64);
                } else if a < 0 || b < 0 || a >= n0 as i64 || b >= n1 as i64 {
                    continue;
                }
                let nb = self.index(a as usize, b as usize);
                if nb != idx && !out.contains(&nb) {
                    out.push(nb);
                }
            }
        }
        out
    }

    /// CSV with header `k1,k2,lambda_0,...`; floats carry 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k1,k2");
        for j in 0..self.n_bands {
            let _ = write!(out, ",lambda_{j}");
        }
        out.push('\n');
        for (k, vals) in self.k_points.iter().zip(&self.values) {
            let _ = write!(out, "{:.16e},{:.16e}", k.x, k.y);
            for v in vals {
                let _ = write!(out, ",{v:.16e}");
            }
            out.push('\n');
        }
        out
    }
}

/// Samples the lowest `n_bands` bands on the model's default domain.
pub fn sample_bands(model: &dyn BlochModel, dims: [usize; 2], n_bands: usize) -> Result<BandGrid> {
    sample_bands_on(model, &model.default_domain(), dims, n_bands)
}

pub fn sample_bands_on(model: &dyn BlochModel, domain: &KDomain, dims: [usize; 2], n_bands: usize) -> Result<BandGrid> {
    if dims[0] == 0 || dims[1] == 0 || n_bands == 0 {
        return Err(Error::InvalidInput("grid dimensions and band count must be positive".into()));
    }
    let k_points: Vec<Vec2> =
        (0..dims[1]).flat_map(|j| (0..dims[0]).map(move |i| (i, j))).map(|(i, j)| domain.point(i, j, dims)).collect();
    let values = par_map(&k_points, |k| {
        let e = model.fibre(k)?;
        if e.values.len() < n_bands {
            return Err(Error::TooFewStates { requested: n_bands, available: e.values.len() });
        }
        Ok(e.values[..n_bands].to_vec())
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(BandGrid { dims, domain: domain.clone(), n_bands, k_points, values })
}

/// An open spectral gap `(lower, upper)` between bands `below_band` and `above_band`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gap {
    pub lower: f64,
    pub upper: f64,
    pub below_band: usize,
    pub above_band: usize,
}

impl Gap {
    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapReport {
    pub gaps: Vec<Gap>,
    /// Minimum of the lowest band.
    pub band_floor: f64,
}

/// Maximal intervals of width above `min_gap` between the sampled bands.
pub fn find_gaps(bg: &BandGrid, min_gap: f64) -> GapReport {
    let ranges: Vec<(f64, f64)> = (0..bg.n_bands).map(|j| bg.band_range(j)).collect();
    let mut gaps = Vec::new();
    let (mut top, mut top_band) = (ranges[0].1, 0);
    for (j, &(lo, hi)) in ranges.iter().enumerate().skip(1) {
        if lo - top > min_gap {
            gaps.push(Gap { lower: top, upper: lo, below_band: top_band, above_band: j });
        }
        if hi >= top {
            top = hi;
            top_band = j;
        }
    }
    GapReport { gaps, band_floor: ranges[0].0 }
}

/// Which end of a gap: `Upper` is attained by band minima, `Lower` by maxima.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeSide {
    Lower,
    Upper,
}

impl EdgeSide {
    pub fn extremum(self) -> Extremum {
        match self {
            EdgeSide::Upper => Extremum::Min,
            EdgeSide::Lower => Extremum::Max,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Extremum {
    Min,
    Max,
}

impl Extremum {
    fn sign(self) -> f64 {
        match self {
            Extremum::Min => 1.0,
            Extremum::Max => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Classification {
    #[serde(rename = "nondegenerate")]
    Nondegenerate,
    /// Two bands attain the edge at one point.
    #[serde(rename = "fails_A")]
    FailsA,
    /// The attaining set is curve-like.
    #[serde(rename = "fails_B")]
    FailsB,
    /// A Hessian is singular or of the wrong sign.
    #[serde(rename = "fails_C")]
    FailsC,
}

impl std::fmt::Display for Classification {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Classification::Nondegenerate => "nondegenerate",
            Classification::FailsA => "fails_A",
            Classification::FailsB => "fails_B",
            Classification::FailsC => "fails_C",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EdgeOptions {
    /// Defaults to `max(1e-8·scale, 3·cutoff-doubling delta)`.
    pub edge_tol: Option<f64>,
    /// Defaults to `1e-4·scale`.
    pub hess_tol: Option<f64>,
    pub refine: bool,
}

impl EdgeOptions {
    pub fn refined() -> Self {
        Self { refine: true, ..Self::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EdgePoint {
    pub k: Vec2,
    pub band: usize,
    pub value: f64,
    pub multiplicity: usize,
    pub cluster: usize,
    pub refined: bool,
    /// Distance from `value` to the nearest other eigenvalue.
    pub margin: f64,
    pub hessian: Option<[[f64; 2]; 2]>,
    pub hessian_eigenvalues: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterSummary {
    pub grid_points: usize,
    pub points: usize,
    pub diameter: f64,
    pub diameter_cells: f64,
}

/// Points where a band attains a gap edge, with their classification.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EdgeSet {
    pub edge_value: f64,
    pub which: EdgeSide,
    pub band: usize,
    pub edge_tol: f64,
    pub hess_tol: f64,
    pub grid_cell: f64,
    pub classification: Classification,
    pub points: Vec<EdgePoint>,
    pub clusters: Vec<ClusterSummary>,
    pub notes: Vec<String>,
}

/// Cluster diameters above this many grid cells mark a curve-like set.
pub const CURVE_CELLS: f64 = 3.0;

/// Locates and classifies the points where the sampled bands attain
/// `edge_value`.
///
/// Classification precedence is fails_B, then fails_A, then fails_C: a
/// curve-like set cannot be repaired point by point, so it is reported first.
pub fn edge_set(model: &dyn BlochModel, bg: &BandGrid, edge_value: f64, which: EdgeSide, opts: &EdgeOptions) -> Result<EdgeSet> {
    let scale = model.energy_scale();
    let ext = which.extremum();
    let sign = ext.sign();
    let band = (0..bg.n_bands)
        .min_by(|&a, &b| {
            let ea = extreme_of(bg, a, ext);
            let eb = extreme_of(bg, b, ext);
            (ea - edge_value).abs().total_cmp(&(eb - edge_value).abs())
        })
        .ok_or_else(|| Error::InvalidInput("empty band grid".into()))?;
    let hess_tol = opts.hess_tol.unwrap_or(1e-4 * scale);
    let mut notes = Vec::new();

    let mut edge_tol = opts.edge_tol.unwrap_or(1e-8 * scale);
    let grid_extreme_idx = (0..bg.len())
        .min_by(|&a, &b| (sign * bg.values[a][band]).total_cmp(&(sign * bg.values[b][band])))
        .expect("non-empty grid");
    if opts.edge_tol.is_none() {
        let delta = model.truncation_delta(&bg.k_points[grid_extreme_idx], band)?;
        edge_tol = edge_tol.max(3.0 * delta);
    }

    // Candidates: points at the edge, plus discrete local extrema that could
    // reach it between grid points.
    let val = |i: usize| bg.values[i][band];
    let candidates: Vec<usize> = (0..bg.len())
        .filter(|&i| {
            let v = val(i);
            if (v - edge_value).abs() <= edge_tol {
                return true;
            }
            if !opts.refine {
                return false;
            }
            let nbrs = bg.neighbours(i);
            let is_extremum = nbrs.iter().all(|&n| sign * (val(n) - v) >= 0.0);
            let variation = nbrs.iter().map(|&n| (val(n) - v).abs()).fold(0.0, f64::max);
            is_extremum && sign * (v - edge_value) <= variation + edge_tol
        })
        .collect();

    let clusters = connected_components(bg, &candidates);
    let dual = model.dual();
    let grid_cell = bg.domain.cell_size(bg.dims);

    // (cluster, k, value, refined)
    let mut pts: Vec<(usize, Vec2, f64, bool)> = Vec::new();
    for (c, members) in clusters.iter().enumerate() {
        let results = par_map(members, |&i| {
            let k0 = bg.k_points[i];
            if !opts.refine {
                return (k0, val(i), false, None);
            }
            match refine_extremum(model, &k0, band, ext, &RefineOptions::default()) {
                Ok(r) if r.converged => (r.k, r.value, true, None),
                Ok(r) => (r.k, r.value, true, Some(format!("refinement from grid point {i} stopped at |grad| = {:.3e}", r.grad_norm))),
                Err(e) => (k0, val(i), false, Some(format!("grid point {i} kept unrefined: {e}"))),
            }
        });
        for (k, v, refined, note) in results {
            notes.extend(note);
            pts.push((c, k, v, refined));
        }
    }

    let refined_edge = pts.iter().map(|p| sign * p.2).fold(sign * edge_value, f64::min) * sign;
    if (refined_edge - edge_value).abs() > edge_tol {
        notes.push(format!("edge value moved from {edge_value:.16e} to {refined_edge:.16e} by refinement"));
    }
    let edge_value = refined_edge;
    pts.retain(|p| (p.2 - edge_value).abs() <= edge_tol);

    let periodic = bg.domain.periodic();
    let distance = |a: &Vec2, b: &Vec2| point_distance(&dual, periodic, a, b);
    let dedupe = 1e-5 * dual.cell_diameter();
    let mut kept: Vec<(usize, Vec2, f64, bool)> = Vec::new();
    for p in pts {
        if !kept.iter().any(|q| distance(&q.1, &p.1) < dedupe) {
            kept.push(p);
        }
    }

    let mut summaries = Vec::new();
    let mut renumber = vec![usize::MAX; clusters.len()];
    for (c, members) in clusters.iter().enumerate() {
        let ks: Vec<&Vec2> = kept.iter().filter(|p| p.0 == c).map(|p| &p.1).collect();
        if ks.is_empty() {
            continue;
        }
        let mut diameter = 0.0f64;
        for (a, ka) in ks.iter().enumerate() {
            for kb in &ks[a + 1..] {
                diameter = diameter.max(distance(ka, kb));
            }
        }
        renumber[c] = summaries.len();
        summaries.push(ClusterSummary { grid_points: members.len(), points: ks.len(), diameter, diameter_cells: diameter / grid_cell });
    }

    let points = par_map(&kept, |(c, k, v, refined)| -> Result<EdgePoint> {
        let e = model.fibre(k)?;
        let multiplicity = e.values.iter().filter(|x| (**x - edge_value).abs() <= edge_tol).count().max(1);
        let margin = e.margin(band);
        let h = if margin > 1e-6 * scale {
            hessian(model, k, band, 1e-4 * dual.cell_diameter()).ok()
        } else {
            None
        };
        let k_out = if periodic { dual.canonical(k).0 } else { *k };
        Ok(EdgePoint {
            k: k_out,
            band,
            value: *v,
            multiplicity,
            cluster: renumber[*c],
            refined: *refined,
            margin,
            hessian: h.map(|m| [[m[(0, 0)], m[(0, 1)]], [m[(1, 0)], m[(1, 1)]]]),
            hessian_eigenvalues: h.map(|m| sorted_eigenvalues(&m)),
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    for p in &points {
        if p.multiplicity == 1 && p.margin < 10.0 * hess_tol {
            notes.push(format!("spectral margin {:.3e} at k = ({:.6}, {:.6}) is below 10·hess_tol", p.margin, p.k.x, p.k.y));
        }
    }

    let classification = if summaries.iter().any(|s| s.diameter_cells > CURVE_CELLS) {
        Classification::FailsB
    } else if points.iter().any(|p| p.multiplicity >= 2) {
        Classification::FailsA
    } else if points.iter().any(|p| p.hessian.map_or(true, |h| !hessian_definite(&to_matrix(&h), ext, hess_tol))) {
        Classification::FailsC
    } else {
        Classification::Nondegenerate
    };

    Ok(EdgeSet { edge_value, which, band, edge_tol, hess_tol, grid_cell, classification, points, clusters: summaries, notes })
}

fn extreme_of(bg: &BandGrid, j: usize, ext: Extremum) -> f64 {
    let (lo, hi) = bg.band_range(j);
    match ext {
        Extremum::Min => lo,
        Extremum::Max => hi,
    }
}

fn point_distance(dual: &DualLattice, periodic: bool, a: &Vec2, b: &Vec2) -> f64 {
    if !periodic {
        return (a - b).norm();
    }
    let f = dual.fractional(&(a - b));
    let base = Vec2::new(f.x - f.x.round(), f.y - f.y.round());
    let mut best = f64::INFINITY;
    for di in -1..=1 {
        for dj in -1..=1 {
            let g = dual.basis() * (base + Vec2::new(di as f64, dj as f64));
            best = best.min(g.norm());
        }
    }
    best
}

fn connected_components(bg: &BandGrid, members: &[usize]) -> Vec<Vec<usize>> {
    let mut in_set = vec![false; bg.len()];
    for &m in members {
        in_set[m] = true;
    }
    let mut seen = vec![false; bg.len()];
    let mut out = Vec::new();
    for &start in members {
        if seen[start] {
            continue;
        }
        seen[start] = true;
        let mut comp = vec![start];
        let mut head = 0;
        while head < comp.len() {
            let cur = comp[head];
            head += 1;
            for n in bg.neighbours(cur) {
                if in_set[n] && !seen[n] {
                    seen[n] = true;
                    comp.push(n);
                }
            }
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}

fn to_matrix(h: &[[f64; 2]; 2]) -> Matrix2<f64> {
    Matrix2::new(h[0][0], h[0][1], h[1][0], h[1][1])
}

fn sorted_eigenvalues(h: &Matrix2<f64>) -> [f64; 2] {
    let e = SymmetricEigen::new(*h).eigenvalues;
    [e[0].min(e[1]), e[0].max(e[1])]
}

/// Whether `h` is definite with the sign matching `ext` and every eigenvalue
/// at least `hess_tol` in magnitude.
pub fn hessian_definite(h: &Matrix2<f64>, ext: Extremum, hess_tol: f64) -> bool {
    sorted_eigenvalues(h).iter().all(|e| ext.sign() * e >= hess_tol)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefineOptions {
    /// Convergence threshold on `|∇λ|`; defaults to `1e-8·scale`.
    pub grad_tol: Option<f64>,
    pub max_iter: usize,
    pub min_overlap: f64,
}

impl Default for RefineOptions {
    fn default() -> Self {
        Self { grad_tol: None, max_iter: 30, min_overlap: 0.9 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RefinedPoint {
    pub k: Vec2,
    pub value: f64,
    /// Sorted index of the tracked band at the final point.
    pub band: usize,
    pub iterations: usize,
    pub grad_norm: f64,
    pub converged: bool,
}

/// Central fourth-order gradient of the sorted band `j`.
fn gradient(model: &dyn BlochModel, anchor: &Vec2, k: &Vec2, j: usize, h: f64) -> Result<Vec2> {
    let f = |d: Vec2| -> Result<f64> { Ok(model.local_fibre(anchor, &(k + d))?.values[j]) };
    let mut g = Vec2::zeros();
    for axis in 0..2 {
        let mut e = Vec2::zeros();
        e[axis] = h;
        g[axis] = (-f(e * 2.0)? + 8.0 * f(e)? - 8.0 * f(-e)? + f(-e * 2.0)?) / (12.0 * h);
    }
    Ok(g)
}

/// Nine-point second differences of the sorted band `j`.
fn hessian_raw(model: &dyn BlochModel, anchor: &Vec2, k: &Vec2, j: usize, h: f64, centre: f64) -> Result<Matrix2<f64>> {
    let f = |a: f64, b: f64| -> Result<f64> { Ok(model.local_fibre(anchor, &(k + Vec2::new(a, b)))?.values[j]) };
    let d11 = (f(h, 0.0)? - 2.0 * centre + f(-h, 0.0)?) / (h * h);
    let d22 = (f(0.0, h)? - 2.0 * centre + f(0.0, -h)?) / (h * h);
    let d12 = (f(h, h)? - f(h, -h)? - f(-h, h)? + f(-h, -h)?) / (4.0 * h * h);
    Ok(Matrix2::new(d11, d12, d12, d22))
}

/// Hessian of `λ_j` at `k` from nine-point central differences with one
/// Richardson step, `(4·D(h/2) − D(h))/3`.
pub fn hessian(model: &dyn BlochModel, k: &Vec2, j: usize, h: f64) -> Result<Matrix2<f64>> {
    let e = model.local_fibre(k, k)?;
    if j >= e.dim() {
        return Err(Error::IndexOutOfRange { index: j, len: e.dim() });
    }
    let margin = e.margin(j);
    if margin <= 1e-6 * model.energy_scale() {
        return Err(Error::NotSimple { band: j, margin });
    }
    let centre = e.values[j];
    let coarse = hessian_raw(model, k, k, j, h, centre)?;
    let fine = hessian_raw(model, k, k, j, h / 2.0, centre)?;
    let r = (fine * 4.0 - coarse) / 3.0;
    Ok((r + r.transpose()) * 0.5)
}

/// Polishes a grid extremum of band `j` by modified Newton iteration.
///
/// The band is followed by eigenvector overlap between iterates; the fibre
/// discretization is frozen at `k0` throughout.
pub fn refine_extremum(model: &dyn BlochModel, k0: &Vec2, j: usize, ext: Extremum, opts: &RefineOptions) -> Result<RefinedPoint> {
    let scale = model.energy_scale();
    let diam = model.dual().cell_diameter();
    let grad_tol = opts.grad_tol.unwrap_or(1e-8 * scale);
    let hess_tol = 1e-4 * scale;
    let (hg, hh) = (2e-4 * diam, 1e-3 * diam);
    let sign = ext.sign();
    let anchor = *k0;

    let e0 = model.local_fibre(&anchor, k0)?;
    if j >= e0.dim() {
        return Err(Error::IndexOutOfRange { index: j, len: e0.dim() });
    }
    let margin = e0.margin(j);
    if margin < 10.0 * hess_tol {
        return Err(Error::NotSimple { band: j, margin });
    }
    let mut x = *k0;
    let mut band = j;
    let mut value = e0.values[j];
    let mut vec = e0.vectors.column(j).into_owned();
    let mut iterations = 0;
    let mut g = gradient(model, &anchor, &x, band, hg)?;

    while iterations < opts.max_iter && g.norm() >= 1e-4 * grad_tol {
        iterations += 1;
        let h = hessian_raw(model, &anchor, &x, band, hh, value)? * sign;
        let eig = SymmetricEigen::new((h + h.transpose()) * 0.5);
        let floor = 1e-6 * scale;
        let mut step = Vec2::zeros();
        for i in 0..2 {
            let v = eig.eigenvectors.column(i).into_owned();
            step -= v * (v.dot(&(g * sign)) / eig.eigenvalues[i].abs().max(floor));
        }
        let cap = 0.05 * diam;
        if step.norm() > cap {
            step *= cap / step.norm();
        }
        let slope = sign * g.dot(&step);
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let xn = x + step * alpha;
            let en = model.local_fibre(&anchor, &xn)?;
            let (best, ov) = (0..en.dim())
                .map(|i| (i, en.vectors.column(i).dotc(&vec).norm()))
                .max_by(|a, b| a.1.total_cmp(&b.1))
                .expect("non-empty fibre");
            if ov < opts.min_overlap {
                if alpha * step.norm() < 1e-9 * diam {
                    return Err(Error::BandCrossing { overlap: ov });
                }
                alpha *= 0.5;
                continue;
            }
            let vn = en.values[best];
            if sign * (vn - value) <= 1e-4 * alpha * slope {
                accepted = Some((xn, best, vn, en.vectors.column(best).into_owned()));
                break;
            }
            alpha *= 0.5;
        }
        let Some((xn, bn, vn, vecn)) = accepted else { break };
        let moved = (xn - x).norm();
        x = xn;
        band = bn;
        value = vn;
        vec = vecn;
        g = gradient(model, &anchor, &x, band, hg)?;
        if moved < 1e-15 * diam {
            break;
        }
    }
    let grad_norm = g.norm();
    Ok(RefinedPoint { k: x, value, band, iterations, grad_norm, converged: grad_norm < grad_tol })
}

/// Order of vanishing `f(δ) ≈ c0·δ^α` from a log-log regression.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FlatnessReport {
    pub alpha: u32,
    pub c0: f64,
    pub slope: f64,
    pub residual: f64,
}

/// Fits `log f = log c0 + α log δ`; α is the nearest even integer to the
/// fitted slope and `c0` the geometric mean of `f/δ^α`.
pub fn flatness_order(samples: &[(f64, f64)]) -> Result<FlatnessReport> {
    if samples.len() < 2 {
        return Err(Error::InvalidInput("flatness fit needs at least two samples".into()));
    }
    if samples.iter().any(|&(d, f)| !(d > 0.0) || !(f > 0.0)) {
        return Err(Error::InvalidInput("flatness samples must be positive".into()));
    }
    let n = samples.len() as f64;
    let xs: Vec<f64> = samples.iter().map(|s| s.0.ln()).collect();
    let ys: Vec<f64> = samples.iter().map(|s| s.1.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidInput("flatness samples need distinct abscissae".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residual = (xs.iter().zip(&ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum::<f64>() / n).sqrt();
    let alpha = 2.0 * (slope / 2.0).round();
    if alpha < 2.0 || (slope - alpha).abs() > 0.2 || residual > 0.05 {
        return Err(Error::OrderAmbiguous { slope, residual });
    }
    let c0 = (ys.iter().zip(&xs).map(|(y, x)| y - alpha * x).sum::<f64>() / n).exp();
    Ok(FlatnessReport { alpha: alpha as u32, c0, slope, residual })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::Lattice2D;
    use crate::potential::FourierPotential;
    use approx::assert_relative_eq;

    fn free_model() -> PlaneWaveModel {
        PlaneWaveModel::new(FourierPotential::zero(Lattice2D::square(1.0).dual()), 120.0).unwrap()
    }

    fn quartic_model() -> ProfileModel<impl Fn(&Vec2) -> f64 + Sync> {
        ProfileModel {
            profile: |k: &Vec2| k.x.powi(4) + k.y * k.y,
            dual: Lattice2D::square(1.0).dual(),
            domain: KDomain { origin: Vec2::new(-0.5, -0.5), spans: [Vec2::new(1.0, 0.0), Vec2::new(0.0, 1.0)], closed: true },
            scale: 1.0,
        }
    }

    #[test]
    fn free_grid_minimum() {
        let bg = sample_bands(&free_model(), [11, 11], 3).unwrap();
        assert_eq!(bg.band_range(0).0, 0.0);
        assert_eq!(bg.k_points[0], Vec2::zeros());
        assert!(bg.values.iter().all(|v| v.windows(2).all(|w| w[0] <= w[1])));
    }

    #[test]
    fn free_operator_has_no_gaps() {
        let bg = sample_bands(&free_model(), [16, 16], 6).unwrap();
        let report = find_gaps(&bg, 1e-6);
        assert!(report.gaps.is_empty());
        assert_eq!(report.band_floor, 0.0);
    }

    #[test]
    fn huge_min_gap_gives_empty_report() {
        let w = FourierPotential::cosines(Lattice2D::square(1.0).dual(), &[([1, 0], 5.0), ([0, 1], 5.0)]);
        let model = PlaneWaveModel::new(w, 150.0).unwrap();
        let bg = sample_bands(&model, [12, 12], 3).unwrap();
        assert!(!find_gaps(&bg, 0.1).gaps.is_empty());
        assert!(find_gaps(&bg, 1e3).gaps.is_empty());
    }

    #[test]
    fn csv_layout() {
        let bg = sample_bands(&free_model(), [2, 2], 2).unwrap();
        let csv = bg.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "k1,k2,lambda_0,lambda_1");
        assert_eq!(lines.count(), 4);
    }

    #[test]
    fn free_bottom_is_nondegenerate() {
        let model = free_model();
        let bg = sample_bands(&model, [12, 12], 2).unwrap();
        let edges = edge_set(&model, &bg, 0.0, EdgeSide::Upper, &EdgeOptions::refined()).unwrap();
        assert_eq!(edges.classification, Classification::Nondegenerate);
        assert_eq!(edges.points.len(), 1);
        let h = edges.points[0].hessian.unwrap();
        assert_relative_eq!(h[0][0], 2.0, epsilon = 1e-6);
        assert_relative_eq!(h[1][1], 2.0, epsilon = 1e-6);
        assert!(h[0][1].abs() < 1e-6);
    }

    #[test]
    fn refine_free_minimum() {
        let r = refine_extremum(&free_model(), &Vec2::new(0.05, -0.03), 0, Extremum::Min, &RefineOptions::default()).unwrap();
        assert!(r.converged);
        assert!(r.k.norm() < 1e-9, "{:?}", r.k);
    }

    #[test]
    fn free_hessian() {
        let h = hessian(&free_model(), &Vec2::zeros(), 0, 1e-4 * 2.0 * PI_SQRT2).unwrap();
        assert!((h - Matrix2::identity() * 2.0).norm() < 1e-6);
    }

    const PI_SQRT2: f64 = std::f64::consts::PI * std::f64::consts::SQRT_2;

    #[test]
    fn quartic_hessian_flags_fails_c() {
        let model = quartic_model();
        let h = hessian(&model, &Vec2::zeros(), 0, 1e-3).unwrap();
        assert!(h[(0, 0)].abs() < 1e-5 && h[(0, 1)].abs() < 1e-9);
        assert_relative_eq!(h[(1, 1)], 2.0, epsilon = 1e-6);
        assert!(!hessian_definite(&h, Extremum::Min, 1e-4));
        let bg = sample_bands(&model, [21, 21], 1).unwrap();
        let edges = edge_set(&model, &bg, 0.0, EdgeSide::Upper, &EdgeOptions::refined()).unwrap();
        assert_eq!(edges.classification, Classification::FailsC);
    }

    #[test]
    fn flatness_examples() {
        let quad: Vec<_> = (0..8).map(|i| 1e-2 * 1.4f64.powi(i)).map(|d| (d, d * d)).collect();
        let r = flatness_order(&quad).unwrap();
        assert_eq!(r.alpha, 2);
        assert_relative_eq!(r.c0, 1.0, epsilon = 1e-12);
        let quartic: Vec<_> = (0..10).map(|i| 1e-3 * 10f64.powf(i as f64 / 9.0)).map(|d| (d, 3.0 * d.powi(4) * (1.0 + d))).collect();
        let r = flatness_order(&quartic).unwrap();
        assert_eq!(r.alpha, 4);
        assert_relative_eq!(r.c0, 3.0, max_relative = 0.02);
        let odd: Vec<_> = (1..8).map(|i| (i as f64 * 0.01, (i as f64 * 0.01).powi(3))).collect();
        assert!(matches!(flatness_order(&odd), Err(Error::OrderAmbiguous { .. })));
    }

    #[test]
    fn free_band_flatness_along_direction() {
        let model = free_model();
        let dir = Vec2::new(0.6, 0.8);
        let samples: Vec<_> = (0..6)
            .map(|i| 1e-3 * 2f64.powi(i))
            .map(|d| (d, model.fibre(&(dir * d)).unwrap().values[0]))
            .collect();
        let r = flatness_order(&samples).unwrap();
        assert_eq!(r.alpha, 2);
        assert_relative_eq!(r.c0, 1.0, epsilon = 1e-9);
    }
}
