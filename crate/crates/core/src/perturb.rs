//! Perturbations `H + ε(a·e_ν + ā·e_{−ν})`: coupling elements between folded
//! Bloch states, the second-order eigenvalue correction `Z`, its brute-force
//! supercell check, and the round-based degeneracy-removal pipeline.
//!
//! For a band `j` and shift ν the second-order correction is
//!
//! ```text
//! Z = Σ_± Σ_m |O_m^±|² / (λ_j(k) − λ_m(k±ν)),   O_m^± = Σ_θ ψ̂_j(θ;k)·conj(ψ̂_m(θ;k±ν))
//! ```
//!
//! split as `principal + r_term + r0_term` where `principal` keeps the two
//! `m = j` terms with unit numerators.

use nalgebra::Matrix2;
use num_complex::Complex64;
use serde::Serialize;

use crate::bands::{
    edge_set, find_gaps, flatness_order, sample_bands, BlochModel, Classification, EdgeOptions, EdgeSet, EdgeSide,
    Gap, GapReport, KDomain,
};
use crate::discrete::{CheckerboardModel, DoubledModel};
use crate::error::{Error, Result};
use crate::fibre::{bloch_eigs, bloch_eigs_on, overlap_coords, EigenSolution, PlaneWaveBasis, PlaneWaveModel};
use crate::lattice::{choose_shift, DualLattice, ShiftOptions, ShiftSpec, ShiftVector, SupercellMap, Vec2};
use crate::linalg::EigenDecomposition;
use crate::par::par_map;
use crate::potential::{make_shift_perturbation, single_mode, FourierPotential, PotentialSpec};

/// Energy differences below this times the energy scale count as resonant.
pub const RESONANCE_MARGIN: f64 = 1e-8;
/// Minimum eigenvector overlap for following a perturbed eigenvalue.
pub const TRACKING_OVERLAP: f64 = 0.8;

fn energy_scale(w: &FourierPotential) -> f64 {
    let d = w.dual().min_norm();
    d * d + w.sup_norm_bound()
}

/// `⟨(e_ν + e_{−ν}) ψ_{j₁}(κ+p_{l₁}), ψ_{j₂}(κ+p_{l₂})⟩` for the potential read
/// on the supercell described by `map`.
///
/// Only `l₂ = l₁±` (the representatives of `p_{l₁} ± ν`) give a non-zero value.
pub fn coupling_element(
    w: &FourierPotential,
    kappa: &Vec2,
    map: &SupercellMap,
    (j1, l1): (usize, usize),
    (j2, l2): (usize, usize),
    nu: &Vec2,
    e_cut: f64,
) -> Result<Complex64> {
    let fine = map.fine_dual();
    let coarse = map.coarse_dual();
    let m_nu = fine.integer_coords(nu).ok_or(Error::ShiftNotOnLattice)?;
    let r1 = map.rep_coords(l1)?;
    let r2 = map.rep_coords(l2)?;
    let mut value = Complex64::new(0.0, 0.0);
    let mut sols: Option<(EigenSolution, EigenSolution)> = None;
    for sgn in [1i64, -1] {
        let target = [r1[0] + sgn * m_nu[0], r1[1] + sgn * m_nu[1]];
        if map.index_of(target) != l2 {
            continue;
        }
        if sols.is_none() {
            let s1 = bloch_eigs(w, &(kappa + map.rep(l1)?), e_cut)?;
            let s2 = bloch_eigs(w, &(kappa + map.rep(l2)?), e_cut)?;
            sols = Some((s1, s2));
        }
        let (s1, s2) = sols.as_ref().expect("computed above");
        let gamma = fine.point([target[0] - r2[0], target[1] - r2[1]]);
        let g = coarse.integer_coords(&gamma).ok_or(Error::ShiftNotOnLattice)?;
        value += overlap_coords(s1, j1, s2, j2, g)?;
    }
    Ok(value)
}

/// The second-order correction and its split.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ZCorrection {
    pub k: Vec2,
    pub nu: ShiftSpec,
    pub band: usize,
    /// `Σ_± 1/(λ_j(k) − λ_j(k±ν))`.
    pub principal: f64,
    /// `Σ_± (|O_j^±|² − 1)/(λ_j(k) − λ_j(k±ν))`.
    pub r_term: f64,
    /// Other-band sum `Σ_± Σ_{m≠j} |O_m^±|²/(λ_j(k) − λ_m(k±ν))`.
    pub r0_term: f64,
    pub total: f64,
    /// The unsplit double sum, for the split identity.
    pub direct: f64,
    pub n_bands_used: usize,
    /// Missing overlap weight divided by the last retained denominator.
    pub tail_estimate: f64,
    /// Smallest `|λ_j(k) − λ_m(k±ν)|` over the retained states.
    pub min_denominator: f64,
}

/// Computes `Z` for band `j` at `k` using the lowest `n_bands` states at `k±ν`.
///
/// ν must not lie in `Γ†/2`: otherwise `k+ν ≡ k−ν` and the two couplings interfere.
pub fn second_order_z(w: &FourierPotential, k: &Vec2, nu: &ShiftVector, e_cut: f64, n_bands: usize, band: usize) -> Result<ZCorrection> {
    if nu.in_half_lattice() {
        return Err(Error::InvalidShift(format!("nu = {}/{} mu lies in the half dual lattice", nu.p_num, nu.p_den)));
    }
    let scale = energy_scale(w);
    let margin = RESONANCE_MARGIN * scale;
    let s0 = bloch_eigs(w, k, e_cut)?;
    if band >= s0.dim() {
        return Err(Error::TooFewStates { requested: band + 1, available: s0.dim() });
    }
    let own_margin = s0.values.len().gt(&1).then(|| EigenDecomposition { values: s0.values.clone(), vectors: s0.vectors.clone() }.margin(band));
    if let Some(m) = own_margin {
        if m < margin {
            return Err(Error::NotSimple { band, margin: m });
        }
    }
    let lam = s0.values[band];
    let (mut principal, mut r_term, mut r0_term, mut direct, mut tail) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let mut used = n_bands;
    let mut min_denominator = f64::INFINITY;
    for sgn in [1.0, -1.0] {
        let s = bloch_eigs(w, &(k + nu.value() * sgn), e_cut)?;
        if n_bands > s.dim() || band >= n_bands {
            return Err(Error::TooFewStates { requested: n_bands.max(band + 1), available: s.dim() });
        }
        used = used.min(s.dim());
        let mut weight = 0.0;
        for m in 0..n_bands {
            let o2 = overlap_coords(&s0, band, &s, m, [0, 0])?.norm_sqr();
            weight += o2;
            let denom = lam - s.values[m];
            min_denominator = min_denominator.min(denom.abs());
            if denom.abs() < margin && (m == band || o2 > 1e-20) {
                return Err(Error::DenominatorCollapse { numerator_band: m, gap: denom.abs() });
            }
            let term = o2 / denom;
            direct += term;
            if m == band {
                principal += 1.0 / denom;
                r_term += (o2 - 1.0) / denom;
            } else {
                r0_term += term;
            }
        }
        tail += (1.0 - weight).max(0.0) / (lam - s.values[n_bands - 1]);
    }
    Ok(ZCorrection {
        k: *k,
        nu: nu.spec(),
        band,
        principal,
        r_term,
        r0_term,
        total: principal + r_term + r0_term,
        direct,
        n_bands_used: used,
        tail_estimate: tail,
        min_denominator,
    })
}

/// `Z` summed over every state of the truncated fibres at `k±ν`.
pub fn second_order_z_full(w: &FourierPotential, k: &Vec2, nu: &ShiftVector, e_cut: f64, band: usize) -> Result<ZCorrection> {
    let n = [1.0, -1.0]
        .iter()
        .map(|s| PlaneWaveBasis::new(w.dual(), &(k + nu.value() * *s), e_cut).map(|b| b.len()))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .min()
        .expect("two bases");
    second_order_z(w, k, nu, e_cut, n, band)
}

/// Least-squares fit of `τ_ε − λ_j = Zε² + cε³` from supercell diagonalizations.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExpansionFit {
    pub band: usize,
    pub lambda: f64,
    pub eps: Vec<f64>,
    pub taus: Vec<f64>,
    /// Overlap of each tracked eigenvector with the unperturbed state.
    pub overlaps: Vec<f64>,
    pub z_fit: f64,
    pub cubic: f64,
    /// Largest absolute deviation of the data from the fitted curve.
    pub residual: f64,
    pub z_formula: f64,
    pub relative_error: f64,
    /// `τ_ε − λ − Z_formula·ε²` for each ε.
    pub z_residuals: Vec<f64>,
    pub agrees: bool,
    pub supercell_dim: usize,
}

/// Diagonalizes `H + ε(e_ν + e_{−ν})` on the lattice generated by `Γ†` and ν,
/// follows the eigenvalue continuing `λ_j(k)`, fits its ε-expansion, and
/// compares the fitted `Z` with [`second_order_z_full`].
pub fn verify_expansion(w: &FourierPotential, k: &Vec2, nu: &ShiftVector, eps_list: &[f64], e_cut: f64, band: usize) -> Result<ExpansionFit> {
    if eps_list.len() < 3 {
        return Err(Error::UnderdeterminedFit(eps_list.len()));
    }
    if eps_list.iter().any(|e| !(*e > 0.0)) {
        return Err(Error::InvalidInput("eps values must be positive".into()));
    }
    let z = second_order_z_full(w, k, nu, e_cut, band)?;
    let eps_max = eps_list.iter().copied().fold(0.0, f64::max);
    if eps_max >= z.min_denominator / 4.0 {
        return Err(Error::InvalidInput(format!(
            "eps = {eps_max:e} is not below a quarter of the smallest denominator {:e}",
            z.min_denominator
        )));
    }
    let coarse = w.dual();
    let fine = nu.refined_dual(coarse);
    let r = coarse.coordinates_in(&fine)?;
    let w_fine = w.refine_to(&fine)?;
    let v = make_shift_perturbation(nu, Complex64::new(1.0, 0.0), &fine)?;
    let s0 = bloch_eigs(w, k, e_cut)?;
    let lambda = s0.values[band];
    let basis = PlaneWaveBasis::new(&fine, k, e_cut)?;
    let mut psi = nalgebra::DVector::<Complex64>::zeros(basis.len());
    for (i, m) in s0.basis.coords().iter().enumerate() {
        let fm = [r[0][0] * m[0] + r[0][1] * m[1], r[1][0] * m[0] + r[1][1] * m[1]];
        let idx = basis.index_of(fm).ok_or_else(|| Error::InvalidInput("coarse basis not contained in supercell basis".into()))?;
        psi[idx] = s0.vectors[(i, band)];
    }

    let tracked = par_map(eps_list, |&eps| -> Result<(f64, f64)> {
        let pot = w_fine.add_scaled(&v, eps)?;
        let sol = bloch_eigs_on(&pot, &basis)?;
        let mut ranked: Vec<(usize, f64)> = (0..sol.dim()).map(|i| (i, sol.vectors.column(i).dotc(&psi).norm_sqr())).collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1));
        let (best, ov) = ranked[0];
        if ov < TRACKING_OVERLAP {
            return Err(Error::TrackingAmbiguous(format!("best overlap {ov:.3} at eps = {eps:e}")));
        }
        let tau = sol.values[best];
        if (tau - lambda).abs() > 2.0 * eps * v.sup_norm_bound() {
            return Err(Error::TrackingAmbiguous(format!("tracked eigenvalue moved by {:e} at eps = {eps:e}", (tau - lambda).abs())));
        }
        Ok((tau, ov))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let taus: Vec<f64> = tracked.iter().map(|t| t.0).collect();
    let overlaps: Vec<f64> = tracked.iter().map(|t| t.1).collect();

    // Normal equations for y = Z ε² + c ε³.
    let (mut a11, mut a12, mut a22, mut b1, mut b2) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (&e, &t) in eps_list.iter().zip(&taus) {
        let (p2, p3, y) = (e * e, e * e * e, t - lambda);
        a11 += p2 * p2;
        a12 += p2 * p3;
        a22 += p3 * p3;
        b1 += p2 * y;
        b2 += p3 * y;
    }
    let sol = Matrix2::new(a11, a12, a12, a22).lu().solve(&nalgebra::Vector2::new(b1, b2)).ok_or(Error::SingularSystem)?;
    let (z_fit, cubic) = (sol.x, sol.y);
    let residual = eps_list
        .iter()
        .zip(&taus)
        .map(|(&e, &t)| (t - lambda - z_fit * e * e - cubic * e * e * e).abs())
        .fold(0.0, f64::max);
    let z_residuals = eps_list.iter().zip(&taus).map(|(&e, &t)| t - lambda - z.total * e * e).collect();
    let relative_error = (z_fit - z.total).abs() / z.total.abs();
    let eps_min = eps_list.iter().copied().fold(f64::INFINITY, f64::min);
    let agrees = (z_fit - z.total).abs() <= (1e-3 * z.total.abs()).max(residual / (eps_min * eps_min));
    Ok(ExpansionFit {
        band,
        lambda,
        eps: eps_list.to_vec(),
        taus,
        overlaps,
        z_fit,
        cubic,
        residual,
        z_formula: z.total,
        relative_error,
        z_residuals,
        agrees,
        supercell_dim: basis.len(),
    })
}

/// Numerical versus predicted second derivative of the principal part of `Z`
/// along a direction in which the band vanishes to order α ≥ 4.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ZProbe {
    pub delta: f64,
    pub alpha: u32,
    pub c0: f64,
    pub numeric: f64,
    /// `−2·α(α+1)·δ^{−α−2} / c0`.
    pub predicted: f64,
    pub ratio: f64,
}

/// Probes `∂²/∂x² [1/(λ(x) − λ(x+δ)) + 1/(λ(x) − λ(x−δ))]` at `x = 0`.
///
/// `α` and `c0` come from a log-log fit of `λ(s) − λ(0)` over `s ∈ [δ/10, δ]`.
pub fn z_second_derivative_probe(profile: &dyn Fn(f64) -> f64, delta: f64) -> Result<ZProbe> {
    if !(delta > 0.0) {
        return Err(Error::InvalidInput("delta must be positive".into()));
    }
    let base = profile(0.0);
    let samples: Vec<(f64, f64)> = (0..10)
        .map(|i| delta * 10f64.powf(-(i as f64) / 9.0))
        .map(|s| (s, profile(s) - base))
        .collect();
    let flat = flatness_order(&samples)?;
    if flat.alpha < 4 {
        return Err(Error::QuadraticProfile { alpha: flat.alpha });
    }
    let p = |x: f64| {
        let l = profile(x);
        1.0 / (l - profile(x + delta)) + 1.0 / (l - profile(x - delta))
    };
    let h = 1e-3 * delta;
    let numeric = (p(h) - 2.0 * p(0.0) + p(-h)) / (h * h);
    let a = flat.alpha as f64;
    let predicted = -2.0 * a * (a + 1.0) * delta.powf(-a - 2.0) / flat.c0;
    Ok(ZProbe { delta, alpha: flat.alpha, c0: flat.c0, numeric, predicted, ratio: numeric / predicted })
}

/// Eigenvalues of band pairs closer than this times the energy scale form a cluster.
pub const CLUSTER_TOL: f64 = 1e-8;

fn splitting_value(sol: &EigenSolution, j1: usize, j2: usize, m: [i64; 2], a: Complex64) -> Result<Complex64> {
    let plus = overlap_coords(sol, j1, sol, j2, m)?;
    let minus = overlap_coords(sol, j1, sol, j2, [-m[0], -m[1]])?;
    Ok(a * plus + a.conj() * minus)
}

fn cluster_solution(w: &FourierPotential, k0: &Vec2, j1: usize, j2: usize, e_cut: f64) -> Result<EigenSolution> {
    let sol = bloch_eigs(w, k0, e_cut)?;
    let (Some(a), Some(b)) = (sol.values.get(j1), sol.values.get(j2)) else {
        return Err(Error::ClusterNotFound(j1, j2));
    };
    if j1 == j2 || (a - b).abs() > CLUSTER_TOL * energy_scale(w) {
        return Err(Error::ClusterNotFound(j1, j2));
    }
    Ok(sol)
}

/// Off-diagonal element, between two states of a degenerate cluster at `k0`,
/// of the perturbation `a·e_ν + ā·e_{−ν}` with ν ∈ Γ† given by its integer
/// coordinates `nu`.
pub fn splitting_coupling(w: &FourierPotential, k0: &Vec2, j1: usize, j2: usize, nu: [i64; 2], amplitude: Complex64, e_cut: f64) -> Result<Complex64> {
    let sol = cluster_solution(w, k0, j1, j2, e_cut)?;
    splitting_value(&sol, j1, j2, nu, amplitude)
}

/// A perturbation found by [`splitting_scan`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SplitChoice {
    pub nu: [i64; 2],
    pub amplitude: Complex64,
    pub value: Complex64,
}

/// Scans ν over `|m_i| ≤ max_m` (shortest first) and `a ∈ {1, i}` for the
/// first coupling with modulus above `split_tol`.
pub fn splitting_scan(w: &FourierPotential, k0: &Vec2, j1: usize, j2: usize, max_m: i64, e_cut: f64, split_tol: f64) -> Result<Option<SplitChoice>> {
    let sol = cluster_solution(w, k0, j1, j2, e_cut)?;
    let mut nus: Vec<[i64; 2]> = (-max_m..=max_m)
        .flat_map(|a| (-max_m..=max_m).map(move |b| [a, b]))
        .filter(|m| *m != [0, 0])
        .collect();
    nus.sort_by(|a, b| w.dual().point(*a).norm().total_cmp(&w.dual().point(*b).norm()).then(a.cmp(b)));
    for nu in nus {
        for amplitude in [Complex64::new(1.0, 0.0), Complex64::i()] {
            let value = splitting_value(&sol, j1, j2, nu, amplitude)?;
            if value.norm() > split_tol {
                return Ok(Some(SplitChoice { nu, amplitude, value }));
            }
        }
    }
    Ok(None)
}

/// Models the degeneracy-removal pipeline can act on.
#[derive(Debug, Clone, PartialEq)]
pub enum PipelineModel {
    PlaneWave(PlaneWaveModel),
    Checkerboard(CheckerboardModel),
    Doubled(DoubledModel),
}

impl PipelineModel {
    fn inner(&self) -> &dyn BlochModel {
        match self {
            PipelineModel::PlaneWave(m) => m,
            PipelineModel::Checkerboard(m) => m,
            PipelineModel::Doubled(m) => m,
        }
    }

    pub fn describe(&self) -> serde_json::Value {
        match self {
            PipelineModel::PlaneWave(m) => serde_json::json!({
                "kind": "plane_wave",
                "e_cut": m.e_cut,
                "potential": m.potential.to_spec(),
            }),
            PipelineModel::Checkerboard(m) => serde_json::json!({ "kind": "checkerboard", "v0": m.v0, "v1": m.v1 }),
            PipelineModel::Doubled(m) => serde_json::json!({ "kind": "doubled", "v": m.v, "eps": m.eps, "eps_lower": m.eps_lower }),
        }
    }

    pub fn potential_spec(&self) -> Option<PotentialSpec> {
        match self {
            PipelineModel::PlaneWave(m) => Some(m.potential.to_spec()),
            _ => None,
        }
    }
}

impl BlochModel for PipelineModel {
    fn dual(&self) -> DualLattice {
        self.inner().dual()
    }
    fn fibre(&self, k: &Vec2) -> Result<EigenDecomposition> {
        self.inner().fibre(k)
    }
    fn local_fibre(&self, anchor: &Vec2, k: &Vec2) -> Result<EigenDecomposition> {
        self.inner().local_fibre(anchor, k)
    }
    fn energy_scale(&self) -> f64 {
        self.inner().energy_scale()
    }
    fn default_domain(&self) -> KDomain {
        self.inner().default_domain()
    }
    fn truncation_delta(&self, k: &Vec2, j: usize) -> Result<f64> {
        self.inner().truncation_delta(k, j)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOptions {
    pub edge: EdgeSide,
    /// Defaults to 201×201 for discrete models and 24×24 for plane waves.
    pub grid: Option<[usize; 2]>,
    pub min_gap: f64,
    pub split_tol: f64,
    pub split_max_m: i64,
    /// Largest supercell basis the shift step may create.
    pub basis_cap: usize,
    /// Shift length bound; defaults to `min|γ|/200`.
    pub delta: Option<f64>,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self { edge: EdgeSide::Upper, grid: None, min_gap: 1e-6, split_tol: 1e-6, split_max_m: 3, basis_cap: 4000, delta: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineAction {
    /// Same-lattice coupling between two degenerate states.
    Split,
    /// Rational shift onto a refined lattice.
    Shift,
    /// Diagonal perturbation of the doubled-period model.
    DoubledDiagonal,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineRound {
    pub round: usize,
    pub epsilon: f64,
    pub action: PipelineAction,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nu: Option<ShiftSpec>,
    /// Integer coordinates of a same-lattice frequency.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub frequency: Option<[i64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub amplitude: Option<[f64; 2]>,
    pub classification_before: Classification,
    pub classification_after: Classification,
    pub edge_value_after: Option<f64>,
    pub gap_after: Option<Gap>,
    pub new_small_gaps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineTrace {
    pub version: u32,
    pub budget: f64,
    pub edge: EdgeSide,
    pub initial_classification: Classification,
    pub final_classification: Classification,
    pub rounds: Vec<PipelineRound>,
    /// Sum of `2ε` over the applied rounds, a bound on the added sup-norm.
    pub perturbation_norm: f64,
    pub outcome: String,
    pub model: serde_json::Value,
}

struct Snapshot {
    gaps: GapReport,
    gap: Option<Gap>,
    edges: Option<EdgeSet>,
}

fn overlap_len(a: &Gap, lo: f64, hi: f64) -> f64 {
    (a.upper.min(hi) - a.lower.max(lo)).max(0.0)
}

fn snapshot(model: &PipelineModel, target: (f64, f64), opts: &PipelineOptions) -> Result<Snapshot> {
    let dims = opts.grid.unwrap_or(match model {
        PipelineModel::PlaneWave(_) => [24, 24],
        _ => [201, 201],
    });
    let n_bands = match model {
        PipelineModel::PlaneWave(m) => {
            let sol = m.eigs(&Vec2::zeros())?;
            let above = sol.values.iter().filter(|v| **v < target.1 + (target.1 - target.0)).count();
            (above + 2).min(sol.dim())
        }
        PipelineModel::Checkerboard(_) => 2,
        PipelineModel::Doubled(_) => 4,
    };
    let bg = sample_bands(model, dims, n_bands)?;
    let gaps = find_gaps(&bg, opts.min_gap);
    let gap = gaps
        .gaps
        .iter()
        .filter(|g| overlap_len(g, target.0, target.1) > 0.0)
        .max_by(|a, b| overlap_len(a, target.0, target.1).total_cmp(&overlap_len(b, target.0, target.1)))
        .copied();
    let edges = match gap {
        Some(g) => {
            let value = match opts.edge {
                EdgeSide::Upper => g.upper,
                EdgeSide::Lower => g.lower,
            };
            Some(edge_set(model, &bg, value, opts.edge, &EdgeOptions::refined())?)
        }
        None => None,
    };
    Ok(Snapshot { gaps, gap, edges })
}

fn classification_of(s: &Snapshot) -> Classification {
    s.edges.as_ref().map_or(Classification::FailsB, |e| e.classification)
}

enum Step {
    Apply { model: PipelineModel, action: PipelineAction, nu: Option<ShiftSpec>, frequency: Option<[i64; 2]>, amplitude: Option<Complex64> },
    Stop(String),
}

fn plan_step(model: &PipelineModel, snap: &Snapshot, eps: f64, opts: &PipelineOptions) -> Result<Step> {
    let Some(edges) = snap.edges.as_ref() else {
        return Ok(Step::Stop("gap closed".into()));
    };
    let cls = edges.classification;
    let doubled = |d: DoubledModel| {
        let mut d = d;
        match opts.edge {
            EdgeSide::Upper => d.eps += eps,
            EdgeSide::Lower => d.eps_lower += eps,
        }
        Step::Apply { model: PipelineModel::Doubled(d), action: PipelineAction::DoubledDiagonal, nu: None, frequency: None, amplitude: None }
    };
    match (model, cls) {
        (PipelineModel::Doubled(d), Classification::FailsA | Classification::FailsB) => Ok(doubled(*d)),
        (PipelineModel::Checkerboard(c), Classification::FailsA | Classification::FailsB) => {
            if c.v0 != -c.v1 || c.v0 == 0.0 {
                return Ok(Step::Stop(format!(
                    "checkerboard with V0 = {}, V1 = {} has no doubled-period reduction (needs V0 = -V1 != 0)",
                    c.v0, c.v1
                )));
            }
            Ok(doubled(DoubledModel::new(c.v0.abs(), 0.0)?))
        }
        (PipelineModel::PlaneWave(m), Classification::FailsA) => {
            let Some(p) = edges.points.iter().find(|p| p.multiplicity >= 2) else {
                return Ok(Step::Stop("no multiple point found".into()));
            };
            let sol = m.eigs(&p.k)?;
            let tol = edges.edge_tol;
            let partner = (0..sol.dim()).find(|&i| i != p.band && (sol.values[i] - edges.edge_value).abs() <= tol);
            let Some(j2) = partner else {
                return Ok(Step::Stop("degenerate partner band not found".into()));
            };
            let (j1, j2) = (p.band.min(j2), p.band.max(j2));
            match splitting_scan(&m.potential, &p.k, j1, j2, opts.split_max_m, m.e_cut, opts.split_tol)? {
                Some(choice) => {
                    let v = single_mode(choice.nu, choice.amplitude, m.potential.dual())?;
                    let pot = m.potential.add_scaled(&v, eps)?;
                    Ok(Step::Apply {
                        model: PipelineModel::PlaneWave(PlaneWaveModel::new(pot, m.e_cut)?),
                        action: PipelineAction::Split,
                        nu: None,
                        frequency: Some(choice.nu),
                        amplitude: Some(choice.amplitude),
                    })
                }
                None => Ok(Step::Stop(format!("no splitting coupling above {:e} within |m| <= {}", opts.split_tol, opts.split_max_m))),
            }
        }
        (PipelineModel::PlaneWave(m), Classification::FailsC) => {
            let dual = m.potential.dual();
            let flat = edges
                .points
                .iter()
                .filter_map(|p| p.hessian.map(|h| Matrix2::new(h[0][0], h[0][1], h[1][0], h[1][1])))
                .map(|h| nalgebra::SymmetricEigen::new(h))
                .min_by(|a, b| a.eigenvalues.abs().min().total_cmp(&b.eigenvalues.abs().min()));
            let Some(eig) = flat else {
                return Ok(Step::Stop("no Hessian available at the edge points".into()));
            };
            let i = if eig.eigenvalues[0].abs() <= eig.eigenvalues[1].abs() { 0 } else { 1 };
            let direction: Vec2 = eig.eigenvectors.column(i).into_owned();
            let delta = opts.delta.unwrap_or(dual.min_norm() / 200.0);
            let s_points: Vec<Vec2> = edges.points.iter().map(|p| p.k).collect();
            let nu = choose_shift(&s_points, &direction, delta, dual, &ShiftOptions { angle_tol: 1e-3, ..ShiftOptions::default() })?;
            let base = PlaneWaveBasis::new(dual, &Vec2::zeros(), m.e_cut)?.len();
            let estimate = base.saturating_mul(nu.p_den as usize);
            if estimate > opts.basis_cap {
                return Ok(Step::Stop(format!(
                    "shift nu = {}/{} mu with mu = {:?} needs a supercell basis of about {estimate} plane waves (cap {})",
                    nu.p_num, nu.p_den, nu.mu, opts.basis_cap
                )));
            }
            let fine = nu.refined_dual(dual);
            let v = make_shift_perturbation(&nu, Complex64::new(1.0, 0.0), &fine)?;
            let pot = m.potential.refine_to(&fine)?.add_scaled(&v, eps)?;
            Ok(Step::Apply {
                model: PipelineModel::PlaneWave(PlaneWaveModel::new(pot, m.e_cut)?),
                action: PipelineAction::Shift,
                nu: Some(nu.spec()),
                frequency: None,
                amplitude: Some(Complex64::new(1.0, 0.0)),
            })
        }
        (_, Classification::Nondegenerate) => Ok(Step::Stop("nondegenerate".into())),
        (_, other) => Ok(Step::Stop(format!("no perturbation available for {other} in this model"))),
    }
}

/// Perturbs the model in rounds of size `ε_r = budget·2^{−r−1}` until the
/// chosen edge of `gap` is non-degenerate or `max_rounds` is used up.
pub fn remove_degeneracy(
    model: PipelineModel,
    gap: (f64, f64),
    budget: f64,
    max_rounds: usize,
    opts: &PipelineOptions,
) -> Result<(PipelineModel, PipelineTrace)> {
    if !(budget > 0.0) {
        return Err(Error::EmptyBudget);
    }
    if !(gap.1 - gap.0 > budget) {
        return Err(Error::InvalidInput(format!("gap width {} does not exceed the budget {budget}", gap.1 - gap.0)));
    }
    let mut current = model;
    let mut snap = snapshot(&current, gap, opts)?;
    let initial = classification_of(&snap);
    let mut rounds = Vec::new();
    let mut norm = 0.0;
    let mut outcome = None;
    for r in 0..max_rounds {
        let before = classification_of(&snap);
        if before == Classification::Nondegenerate {
            break;
        }
        let eps = budget * 0.5f64.powi(r as i32 + 1);
        match plan_step(&current, &snap, eps, opts)? {
            Step::Stop(reason) => {
                outcome = Some(reason);
                break;
            }
            Step::Apply { model, action, nu, frequency, amplitude } => {
                let target = snap.gap.map_or(gap, |g| (g.lower, g.upper));
                let next = snapshot(&model, target, opts)?;
                let new_small_gaps = next
                    .gaps
                    .gaps
                    .iter()
                    .filter(|g| !snap.gaps.gaps.iter().any(|o| overlap_len(o, g.lower, g.upper) > 0.0))
                    .count();
                norm += 2.0 * eps;
                rounds.push(PipelineRound {
                    round: r + 1,
                    epsilon: eps,
                    action,
                    nu,
                    frequency,
                    amplitude: amplitude.map(|a| [a.re, a.im]),
                    classification_before: before,
                    classification_after: classification_of(&next),
                    edge_value_after: next.edges.as_ref().map(|e| e.edge_value),
                    gap_after: next.gap,
                    new_small_gaps,
                });
                current = model;
                snap = next;
            }
        }
    }
    let final_classification = classification_of(&snap);
    let outcome = if final_classification == Classification::Nondegenerate {
        "nondegenerate".to_string()
    } else {
        outcome.unwrap_or_else(|| format!("max_rounds ({max_rounds}) exhausted"))
    };
    let trace = PipelineTrace {
        version: 1,
        budget,
        edge: opts.edge,
        initial_classification: initial,
        final_classification,
        rounds,
        perturbation_norm: norm,
        outcome,
        model: current.describe(),
    };
    Ok((current, trace))
}
