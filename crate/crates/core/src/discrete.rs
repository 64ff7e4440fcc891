//! Closed-form tight-binding models on `Z²`: the two-site checkerboard, its
//! n-site generalization, and the doubled-period four-site model with the
//! diagonal perturbation that makes its band edge non-degenerate.

use std::f64::consts::PI;

use nalgebra::Matrix2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::bands::{edge_set, sample_bands, BlochModel, Classification, EdgeOptions, EdgeSide, KDomain};
use crate::error::{Error, Result};
use crate::lattice::{DualLattice, Vec2};
use crate::linalg::{hermitian_eig, CMatrix, EigenDecomposition, HermitianMatrix};

fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

fn a_of(k: &Vec2) -> f64 {
    2.0 * k.x.cos()
}

fn b_of(k: &Vec2) -> f64 {
    2.0 * k.y.cos()
}

/// Two sublattices with onsite potentials `v0`, `v1` and unit hopping.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CheckerboardModel {
    pub v0: f64,
    pub v1: f64,
}

/// `[[V₀, a+b], [a+b, V₁]]` with `a = 2cos k₁`, `b = 2cos k₂`.
pub fn checkerboard_fibre(m: &CheckerboardModel, k: &Vec2) -> HermitianMatrix {
    let s = a_of(k) + b_of(k);
    HermitianMatrix::from_trusted(CMatrix::from_row_slice(2, 2, &[c(m.v0), c(s), c(s), c(m.v1)]))
}

/// The two spectral bands in closed form.
pub fn checkerboard_bands(m: &CheckerboardModel) -> [(f64, f64); 2] {
    let mid = (m.v0 + m.v1) / 2.0;
    let r = ((m.v0 - m.v1).powi(2) / 4.0 + 16.0).sqrt();
    [(mid - r, m.v0.min(m.v1)), (m.v0.max(m.v1), mid + r)]
}

/// Eigenvalues `(V₀+V₁)/2 ± √((V₀−V₁)²/4 + (a+b)²)`.
pub fn checkerboard_eigenvalues(m: &CheckerboardModel, k: &Vec2) -> [f64; 2] {
    let mid = (m.v0 + m.v1) / 2.0;
    let s = a_of(k) + b_of(k);
    let r = ((m.v0 - m.v1).powi(2) / 4.0 + s * s).sqrt();
    [mid - r, mid + r]
}

fn z2_dual() -> DualLattice {
    DualLattice::new(Matrix2::identity() * (2.0 * PI)).expect("square")
}

impl BlochModel for CheckerboardModel {
    fn dual(&self) -> DualLattice {
        z2_dual()
    }

    fn fibre(&self, k: &Vec2) -> Result<EigenDecomposition> {
        hermitian_eig(&checkerboard_fibre(self, k))
    }

    fn energy_scale(&self) -> f64 {
        self.v0.abs().max(self.v1.abs()) + 4.0
    }

    /// The fibre depends on `k` only through `cos k₁`, `cos k₂`.
    fn default_domain(&self) -> KDomain {
        KDomain::rectangle(PI, PI)
    }
}

/// A strip of `n ≥ 3` sites with onsite potentials `v` and hoppings `s + t`,
/// `s = e^{ik₁}`, `t = e^{ik₂}`, closed into a ring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NSiteModel {
    pub v: Vec<f64>,
}

impl NSiteModel {
    pub fn new(v: Vec<f64>) -> Result<Self> {
        if v.len() < 3 {
            return Err(Error::InvalidInput(format!("n-site model needs at least 3 sites, got {}", v.len())));
        }
        Ok(Self { v })
    }

    /// Set when `V₀ < V_j − 2` fails for some `j ≥ 1`; the edge at `V₀` is
    /// then not guaranteed.
    pub fn constraint_warning(&self) -> Option<String> {
        let bad: Vec<usize> = (1..self.v.len()).filter(|&j| self.v[0] >= self.v[j] - 2.0).collect();
        (!bad.is_empty()).then(|| format!("V0 < V_j - 2 violated for j in {bad:?}; the edge at V0 is not guaranteed"))
    }
}

/// The n-site fibre: `V_j` on the diagonal, `s+t` above it, `conj(s+t)` in the
/// corner `(0, n−1)`.
pub fn nsite_fibre(v: &[f64], k: &Vec2) -> Result<HermitianMatrix> {
    let n = v.len();
    if n < 3 {
        return Err(Error::InvalidInput(format!("n-site model needs at least 3 sites, got {n}")));
    }
    let st = Complex64::from_polar(1.0, k.x) + Complex64::from_polar(1.0, k.y);
    let mut h = CMatrix::zeros(n, n);
    for j in 0..n {
        h[(j, j)] = c(v[j]);
    }
    for j in 0..n - 1 {
        h[(j, j + 1)] = st;
        h[(j + 1, j)] = st.conj();
    }
    h[(0, n - 1)] = st.conj();
    h[(n - 1, 0)] = st;
    Ok(HermitianMatrix::from_trusted(h))
}

impl BlochModel for NSiteModel {
    fn dual(&self) -> DualLattice {
        z2_dual()
    }

    fn fibre(&self, k: &Vec2) -> Result<EigenDecomposition> {
        hermitian_eig(&nsite_fibre(&self.v, k)?)
    }

    fn energy_scale(&self) -> f64 {
        self.v.iter().fold(0.0f64, |m, x| m.max(x.abs())) + 4.0
    }

    fn default_domain(&self) -> KDomain {
        KDomain::torus(&z2_dual())
    }
}

/// The checkerboard with `V₀ = V`, `V₁ = −V` read on the doubled period, plus
/// the perturbation `diag(2ε, −2ε′, 0, 0)`.
///
/// `eps` moves the upper band's minimum off the degenerate curves; `eps_lower`
/// does the same for the lower band's maximum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DoubledModel {
    pub v: f64,
    pub eps: f64,
    #[serde(default)]
    pub eps_lower: f64,
}

impl DoubledModel {
    pub fn new(v: f64, eps: f64) -> Result<Self> {
        if !(v > 0.0) || !(eps >= 0.0) {
            return Err(Error::InvalidInput(format!("doubled model needs V > 0 and eps >= 0, got V = {v}, eps = {eps}")));
        }
        Ok(Self { v, eps, eps_lower: 0.0 })
    }
}

/// Rows `[V+2ε, a, 0, b]`, `[a, −V−2ε′, b, 0]`, `[0, b, V, a]`, `[b, 0, a, −V]`.
pub fn doubled_fibre(m: &DoubledModel, k: &Vec2) -> HermitianMatrix {
    let (a, b, v) = (a_of(k), b_of(k), m.v);
    #[rustfmt::skip]
    let rows = [
        v + 2.0 * m.eps, a, 0.0, b,
        a, -v - 2.0 * m.eps_lower, b, 0.0,
        0.0, b, v, a,
        b, 0.0, a, -v,
    ];
    HermitianMatrix::from_trusted(CMatrix::from_iterator(4, 4, rows.into_iter().map(c)).transpose())
}

/// Roots of `t² − 2ε(λ+V)t − 4a²b² = 0`, the reduction of
/// `det(H + B − λ) = 0` in the variable `t = λ² − V² − a² − b²`.
pub fn t_roots(m: &DoubledModel, k: &Vec2, lambda: f64) -> (f64, f64) {
    let (a, b) = (a_of(k), b_of(k));
    let p = m.eps * (lambda + m.v);
    let d = (p * p + 4.0 * a * a * b * b).sqrt();
    (p + d, p - d)
}

impl BlochModel for DoubledModel {
    /// Eigenvalues are invariant under `a → −a` and `b → −b` (conjugation by
    /// `diag(1,−1,−1,1)` and `diag(1,1,−1,−1)`), so they are `πZ²`-periodic.
    fn dual(&self) -> DualLattice {
        DualLattice::new(Matrix2::identity() * PI).expect("square")
    }

    fn fibre(&self, k: &Vec2) -> Result<EigenDecomposition> {
        hermitian_eig(&doubled_fibre(self, k))
    }

    fn energy_scale(&self) -> f64 {
        self.v + 4.0 + 2.0 * self.eps.max(self.eps_lower)
    }

    fn default_domain(&self) -> KDomain {
        KDomain::rectangle(PI, PI)
    }
}

/// Sorted index of the lowest eigenvalue of the upper band.
pub const DOUBLED_UPPER_BAND: usize = 2;

/// Location and curvature of the upper band's minimum.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MinReport {
    pub v: f64,
    pub eps: f64,
    pub classification: Classification,
    pub n_points: usize,
    pub k_star: Option<Vec2>,
    pub value: f64,
    /// `|k* − (π/2, π/2)|`.
    pub distance: Option<f64>,
    pub hessian: Option<[[f64; 2]; 2]>,
    pub hessian_eigenvalues: Option<[f64; 2]>,
    /// Expected curvature `4/V`.
    pub target_curvature: f64,
    pub localized: bool,
    pub positive_definite: bool,
    pub curvature_ok: bool,
    pub value_in_range: bool,
    pub passed: bool,
}

/// Samples the upper band on a 201×201 grid of `[0, π]²`, refines its minimum
/// and checks localization near `(π/2, π/2)`, positivity of the Hessian,
/// curvature within 20% of `4/V`, and the value range `[V − 2ε, V]`.
pub fn verify_nondegenerate_min(m: &DoubledModel) -> Result<MinReport> {
    verify_nondegenerate_min_on(m, [201, 201])
}

pub fn verify_nondegenerate_min_on(m: &DoubledModel, dims: [usize; 2]) -> Result<MinReport> {
    if !(m.v > 0.0) || !(m.eps >= 0.0) {
        return Err(Error::InvalidInput(format!("doubled model needs V > 0 and eps >= 0, got V = {}, eps = {}", m.v, m.eps)));
    }
    let bg = sample_bands(m, dims, 4)?;
    let edge = bg.band_range(DOUBLED_UPPER_BAND).0;
    let es = edge_set(m, &bg, edge, EdgeSide::Upper, &EdgeOptions::refined())?;
    let centre = Vec2::new(PI / 2.0, PI / 2.0);
    let single = (es.points.len() == 1).then(|| es.points[0].clone());
    let target = 4.0 / m.v;
    let k_star = single.as_ref().map(|p| p.k);
    let distance = k_star.map(|k| (k - centre).norm());
    let eigs = single.as_ref().and_then(|p| p.hessian_eigenvalues);
    let localized = distance.is_some_and(|d| d < 10.0 * m.eps / m.v);
    let positive_definite = eigs.is_some_and(|e| e[0] > 0.0);
    let curvature_ok = eigs.is_some_and(|e| e.iter().all(|x| (x - target).abs() <= 0.2 * target));
    let tol = 1e-9 * m.energy_scale();
    let value_in_range = es.edge_value >= m.v - 2.0 * m.eps - tol && es.edge_value <= m.v + tol;
    let passed = es.classification == Classification::Nondegenerate && localized && positive_definite && curvature_ok && value_in_range;
    Ok(MinReport {
        v: m.v,
        eps: m.eps,
        classification: es.classification,
        n_points: es.points.len(),
        k_star,
        value: es.edge_value,
        distance,
        hessian: single.as_ref().and_then(|p| p.hessian),
        hessian_eigenvalues: eigs,
        target_curvature: target,
        localized,
        positive_definite,
        curvature_ok,
        value_in_range,
        passed,
    })
}
