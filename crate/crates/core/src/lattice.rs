//! Period lattices, their duals, supercell folding and the choice of rational
//! shift vectors that keep the extremal set from gluing.
//!
//! Conventions: a lattice basis is a 2x2 matrix whose *columns* are the
//! generators. Dual bases satisfy `Bᵀ A = 2π I`. Integer coordinates of a dual
//! vector are always taken with respect to the dual basis columns.

use std::f64::consts::PI;

use nalgebra::{Matrix2, Vector2};
use num_integer::Integer;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec2 = Vector2<f64>;

/// Snap tolerance for canonical representatives at the wrap boundary.
pub const WRAP_SNAP: f64 = 1e-10;

/// Tolerance used when deciding that a real coordinate is an integer.
const INTEGER_TOL: f64 = 1e-9;

fn nondegenerate(basis: &Matrix2<f64>) -> bool {
    let scale = basis.column(0).norm().max(basis.column(1).norm());
    basis.determinant().abs() > 1e-12 * scale * scale && scale.is_finite()
}

fn nearest_integer(x: f64, tol: f64) -> Option<i64> {
    let r = x.round();
    ((x - r).abs() <= tol).then_some(r as i64)
}

/// A 2D Bravais lattice of periods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lattice2D {
    basis: Matrix2<f64>,
}

impl Lattice2D {
    /// Builds a lattice from a matrix whose columns are the generators.
    pub fn new(basis: Matrix2<f64>) -> Result<Self> {
        if !nondegenerate(&basis) {
            return Err(Error::SingularLattice);
        }
        Ok(Self { basis })
    }

    /// Builds a lattice from its generators given as rows (`rows[i]` is the
    /// i-th generator), the layout used by configuration files.
    pub fn from_generators(rows: [[f64; 2]; 2]) -> Result<Self> {
        Self::new(Matrix2::new(rows[0][0], rows[1][0], rows[0][1], rows[1][1]))
    }

    /// The square lattice `a·Z²`.
    pub fn square(a: f64) -> Self {
        Self::new(Matrix2::new(a, 0.0, 0.0, a)).expect("positive spacing")
    }

    pub fn basis(&self) -> &Matrix2<f64> {
        &self.basis
    }

    pub fn generators(&self) -> [[f64; 2]; 2] {
        let b = &self.basis;
        [[b[(0, 0)], b[(1, 0)]], [b[(0, 1)], b[(1, 1)]]]
    }

    /// The lattice `nΓ`.
    pub fn scaled(&self, n: u32) -> Result<Self> {
        if n == 0 {
            return Err(Error::ZeroSupercell);
        }
        Ok(Self { basis: self.basis * n as f64 })
    }

    /// Area of the fundamental cell.
    pub fn cell_area(&self) -> f64 {
        self.basis.determinant().abs()
    }

    pub fn dual(&self) -> DualLattice {
        dual_lattice(self).expect("validated on construction")
    }
}

/// Returns the dual lattice Γ† with `Bᵀ A = 2π I`.
pub fn dual_lattice(lat: &Lattice2D) -> Result<DualLattice> {
    let inv = lat.basis.try_inverse().ok_or(Error::SingularLattice)?;
    DualLattice::new(inv.transpose() * (2.0 * PI))
}

/// The lattice of frequencies θ with θ·γ ∈ 2πZ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Matrix2<f64>", into = "Matrix2<f64>")]
pub struct DualLattice {
    basis: Matrix2<f64>,
    inverse: Matrix2<f64>,
}

impl TryFrom<Matrix2<f64>> for DualLattice {
    type Error = Error;
    fn try_from(basis: Matrix2<f64>) -> Result<Self> {
        DualLattice::new(basis)
    }
}

impl From<DualLattice> for Matrix2<f64> {
    fn from(d: DualLattice) -> Self {
        d.basis
    }
}

impl DualLattice {
    /// Builds a dual lattice directly from its basis columns.
    pub fn new(basis: Matrix2<f64>) -> Result<Self> {
        if !nondegenerate(&basis) {
            return Err(Error::SingularLattice);
        }
        let inverse = basis.try_inverse().ok_or(Error::SingularLattice)?;
        Ok(Self { basis, inverse })
    }

    /// Dual basis given as rows (`rows[i]` is the i-th generator).
    pub fn from_generators(rows: [[f64; 2]; 2]) -> Result<Self> {
        Self::new(Matrix2::new(rows[0][0], rows[1][0], rows[0][1], rows[1][1]))
    }

    pub fn basis(&self) -> &Matrix2<f64> {
        &self.basis
    }

    pub fn generator(&self, i: usize) -> Vec2 {
        self.basis.column(i).into_owned()
    }

    pub fn generators(&self) -> [[f64; 2]; 2] {
        let b = &self.basis;
        [[b[(0, 0)], b[(1, 0)]], [b[(0, 1)], b[(1, 1)]]]
    }

    /// The direct lattice this is dual to.
    pub fn direct(&self) -> Lattice2D {
        Lattice2D::new(self.inverse.transpose() * (2.0 * PI)).expect("non-degenerate")
    }

    /// `m₁ b₁ + m₂ b₂`.
    pub fn point(&self, m: [i64; 2]) -> Vec2 {
        self.basis * Vec2::new(m[0] as f64, m[1] as f64)
    }

    /// Real coordinates of `v` with respect to the dual basis.
    pub fn fractional(&self, v: &Vec2) -> Vec2 {
        self.inverse * v
    }

    /// Integer coordinates of `v` if it is a lattice point.
    pub fn integer_coords(&self, v: &Vec2) -> Option<[i64; 2]> {
        let f = self.fractional(v);
        Some([nearest_integer(f.x, INTEGER_TOL)?, nearest_integer(f.y, INTEGER_TOL)?])
    }

    /// Canonical representative of `k` in the fundamental parallelogram.
    pub fn canonical(&self, k: &Vec2) -> QuasiMomentum {
        let f = self.fractional(k);
        let wrap = |x: f64| {
            let mut r = x - x.floor();
            if r >= 1.0 - WRAP_SNAP || r < WRAP_SNAP {
                r = 0.0;
            }
            r
        };
        QuasiMomentum(self.basis * Vec2::new(wrap(f.x), wrap(f.y)))
    }

    /// Whether `a - b` lies in the lattice (within `tol` in fractional units).
    pub fn congruent(&self, a: &Vec2, b: &Vec2, tol: f64) -> bool {
        let f = self.fractional(&(a - b));
        (f.x - f.x.round()).abs() <= tol && (f.y - f.y.round()).abs() <= tol
    }

    /// The lattice `Γ†/n`.
    pub fn refined(&self, n: u32) -> Result<DualLattice> {
        if n == 0 {
            return Err(Error::ZeroSupercell);
        }
        DualLattice::new(self.basis / n as f64)
    }

    /// Longest diagonal of the fundamental parallelogram.
    pub fn cell_diameter(&self) -> f64 {
        let (b1, b2) = (self.generator(0), self.generator(1));
        (b1 + b2).norm().max((b1 - b2).norm())
    }

    pub fn cell_area(&self) -> f64 {
        self.basis.determinant().abs()
    }

    /// Shortest non-zero lattice vector, as integer coordinates.
    pub fn shortest_vector(&self) -> [i64; 2] {
        // Lagrange–Gauss reduction on integer coordinates, then a small
        // neighbourhood search.
        let mut u = [1i64, 0];
        let mut v = [0i64, 1];
        let len = |m: [i64; 2]| self.point(m).norm_squared();
        loop {
            if len(u) > len(v) {
                std::mem::swap(&mut u, &mut v);
            }
            let (pu, pv) = (self.point(u), self.point(v));
            let q = (pu.dot(&pv) / pu.norm_squared()).round() as i64;
            if q == 0 {
                break;
            }
            let next = [v[0] - q * u[0], v[1] - q * u[1]];
            if len(next) >= len(v) {
                break;
            }
            v = next;
        }
        let mut best = u;
        for i in -2..=2i64 {
            for j in -2..=2i64 {
                if i == 0 && j == 0 {
                    continue;
                }
                let m = [i * u[0] + j * v[0], i * u[1] + j * v[1]];
                if len(m) < len(best) - 1e-12 * len(best) {
                    best = m;
                }
            }
        }
        best
    }

    pub fn min_norm(&self) -> f64 {
        self.point(self.shortest_vector()).norm()
    }

    /// Integer matrix `R` with `self = R · fine` in coordinates, i.e. the
    /// columns of `R` are the coordinates of this lattice's generators in the
    /// finer lattice. Fails if `fine` does not contain this lattice.
    pub fn coordinates_in(&self, fine: &DualLattice) -> Result<[[i64; 2]; 2]> {
        let r = fine.inverse * self.basis;
        let mut out = [[0i64; 2]; 2];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, entry) in row.iter_mut().enumerate() {
                *entry = nearest_integer(r[(i, j)], INTEGER_TOL).ok_or(Error::NonIntegerRefinement)?;
            }
        }
        Ok(out)
    }
}

/// A quasimomentum stored as its canonical representative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuasiMomentum(pub Vec2);

impl QuasiMomentum {
    pub fn vector(&self) -> Vec2 {
        self.0
    }
}

/// Data for re-reading a Γ-periodic operator as NΓ-periodic.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SupercellMap {
    n: u32,
    reps: Vec<[i64; 2]>,
    coarse: DualLattice,
    fine: DualLattice,
}

/// Builds the representatives `p_0 = 0, …, p_{n²-1}` of `Γ†/n` modulo Γ†.
///
/// Representatives are stored as integer coordinates in the fine dual basis,
/// `(i, j)` with `0 ≤ i, j < n`, ordered with `i` varying fastest.
pub fn supercell_map(lat: &Lattice2D, n: u32) -> Result<SupercellMap> {
    SupercellMap::new(&lat.dual(), n)
}

impl SupercellMap {
    pub fn new(coarse: &DualLattice, n: u32) -> Result<Self> {
        let fine = coarse.refined(n)?;
        let n_i = n as i64;
        let reps = (0..n_i).flat_map(|j| (0..n_i).map(move |i| [i, j])).collect();
        Ok(Self { n, reps, coarse: coarse.clone(), fine })
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    /// Number of representatives, `n²`.
    pub fn m(&self) -> usize {
        self.reps.len()
    }

    pub fn coarse_dual(&self) -> &DualLattice {
        &self.coarse
    }

    pub fn fine_dual(&self) -> &DualLattice {
        &self.fine
    }

    pub fn rep_coords(&self, l: usize) -> Result<[i64; 2]> {
        self.reps.get(l).copied().ok_or(Error::IndexOutOfRange { index: l, len: self.reps.len() })
    }

    pub fn rep(&self, l: usize) -> Result<Vec2> {
        Ok(self.fine.point(self.rep_coords(l)?))
    }

    /// Index of the representative congruent to the fine-lattice point `m`.
    pub fn index_of(&self, m: [i64; 2]) -> usize {
        let n = self.n as i64;
        (m[0].rem_euclid(n) + n * m[1].rem_euclid(n)) as usize
    }

    /// Splits `k = κ + p_l` with κ canonical on the fine dual torus.
    pub fn fold(&self, k: &QuasiMomentum) -> (QuasiMomentum, usize) {
        let kappa = self.fine.canonical(&k.0);
        let diff = self.fine.fractional(&(k.0 - kappa.0));
        let m = [diff.x.round() as i64, diff.y.round() as i64];
        (kappa, self.index_of(m))
    }

    /// Inverse of [`fold`](Self::fold): the canonical coarse quasimomentum `κ + p_l`.
    pub fn unfold(&self, kappa: &QuasiMomentum, l: usize) -> Result<QuasiMomentum> {
        Ok(self.coarse.canonical(&(kappa.0 + self.rep(l)?)))
    }
}

/// A rational shift `ν = (p_num / p_den) μ` with μ a primitive dual vector.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShiftVector {
    pub mu: [i64; 2],
    pub p_num: u64,
    pub p_den: u64,
    #[serde(skip)]
    value: Vec2,
}

/// Serialized form of a [`ShiftVector`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShiftSpec {
    pub mu: [i64; 2],
    pub p_num: u64,
    pub p_den: u64,
}

impl ShiftVector {
    pub fn new(mu: [i64; 2], p_num: u64, p_den: u64, dual: &DualLattice) -> Result<Self> {
        if mu == [0, 0] {
            return Err(Error::InvalidShift("mu must be non-zero".into()));
        }
        if p_num == 0 || p_den == 0 {
            return Err(Error::InvalidShift("p_num and p_den must be positive".into()));
        }
        if p_num.gcd(&p_den) != 1 {
            return Err(Error::InvalidShift(format!("{p_num}/{p_den} is not in lowest terms")));
        }
        if mu[0].gcd(&mu[1]) != 1 {
            return Err(Error::InvalidShift(format!("mu = {mu:?} is not primitive")));
        }
        let value = dual.point(mu) * (p_num as f64 / p_den as f64);
        Ok(Self { mu, p_num, p_den, value })
    }

    pub fn from_spec(spec: &ShiftSpec, dual: &DualLattice) -> Result<Self> {
        Self::new(spec.mu, spec.p_num, spec.p_den, dual)
    }

    pub fn spec(&self) -> ShiftSpec {
        ShiftSpec { mu: self.mu, p_num: self.p_num, p_den: self.p_den }
    }

    /// ν as a vector.
    pub fn value(&self) -> Vec2 {
        self.value
    }

    pub fn length(&self) -> f64 {
        self.value.norm()
    }

    /// Whether ν lies in Γ†/2 (so that κ+ν and κ−ν coincide modulo Γ†).
    pub fn in_half_lattice(&self) -> bool {
        self.p_den <= 2
    }

    /// The dual lattice generated by Γ† and ν.
    ///
    /// With `(μ, u)` a unimodular basis of Γ†, the refined lattice has basis
    /// `(μ/p_den, u)`; ν has coordinates `(p_num, 0)` in it.
    pub fn refined_dual(&self, dual: &DualLattice) -> DualLattice {
        let u = unimodular_complement(self.mu);
        let mu_vec = dual.point(self.mu) / self.p_den as f64;
        let u_vec = dual.point(u);
        DualLattice::new(Matrix2::from_columns(&[mu_vec, u_vec])).expect("unimodular completion")
    }
}

/// Integer vector `u` with `det[μ u] = 1`, for primitive μ.
fn unimodular_complement(mu: [i64; 2]) -> [i64; 2] {
    let eg = mu[0].extended_gcd(&mu[1]);
    // eg.x·m₀ + eg.y·m₁ = gcd = ±1; det[[m₀, u₀], [m₁, u₁]] = m₀u₁ − m₁u₀.
    let sign = eg.gcd.signum();
    [-eg.y * sign, eg.x * sign]
}

/// Options for [`choose_shift`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShiftOptions {
    /// Largest admissible angle (radians) between the requested direction and μ.
    pub angle_tol: f64,
    /// Denominator cap for continued-fraction approximations.
    pub max_denominator: i64,
}

impl Default for ShiftOptions {
    fn default() -> Self {
        Self { angle_tol: 1e-6, max_denominator: 1_000_000 }
    }
}

/// Continued-fraction convergents `(num, den)` of `x` with `den ≤ max_den`.
fn convergents(x: f64, max_den: i64) -> Vec<(i64, i64)> {
    let mut out = Vec::new();
    let (mut h0, mut h1) = (0i64, 1i64);
    let (mut k0, mut k1) = (1i64, 0i64);
    let mut r = x;
    for _ in 0..64 {
        let a = r.floor();
        if a.abs() > 1e15 {
            break;
        }
        let a = a as i64;
        let h2 = a * h1 + h0;
        let k2 = a * k1 + k0;
        if k2 > max_den {
            break;
        }
        out.push((h2, k2));
        (h0, h1, k0, k1) = (h1, h2, k1, k2);
        let frac = r - a as f64;
        if frac.abs() < 1e-15 {
            break;
        }
        r = 1.0 / frac;
    }
    out
}

/// Best rational `num/den` with `|x - num/den| ≤ tol`, if one exists below the cap.
fn rationalize(x: f64, tol: f64, max_den: i64) -> Option<(i64, i64)> {
    convergents(x, max_den).into_iter().find(|&(h, k)| (x - h as f64 / k as f64).abs() <= tol)
}

fn is_prime(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    if n % 2 == 0 {
        return n == 2;
    }
    let mut d = 3u64;
    while d * d <= n {
        if n % d == 0 {
            return false;
        }
        d += 2;
    }
    true
}

/// Shortest primitive dual vector μ pointing (within `angle_tol`) along `direction`.
pub fn rational_direction(direction: &Vec2, dual: &DualLattice, opts: &ShiftOptions) -> Result<[i64; 2]> {
    if !(direction.norm() > 0.0) || !direction.iter().all(|x| x.is_finite()) {
        return Err(Error::InvalidDirection);
    }
    let d = dual.fractional(direction);
    let swap = d.y.abs() > d.x.abs();
    let (major, minor) = if swap { (d.y, d.x) } else { (d.x, d.y) };
    let target = direction.normalize();
    for (h, k) in convergents(minor / major, opts.max_denominator) {
        let s = major.signum() as i64;
        let mu = if swap { [s * h, s * k] } else { [s * k, s * h] };
        let v = dual.point(mu);
        let angle = (v.normalize().dot(&target)).clamp(-1.0, 1.0).acos();
        if angle <= opts.angle_tol {
            return Ok(mu);
        }
    }
    Err(Error::NoRationalDirection { tol: opts.angle_tol })
}

/// Chooses ν = (p̃/p)μ of length in (δ/2, δ) along a rational approximation of
/// `direction` such that no two points of `s_points` become congruent modulo
/// the lattice generated by Γ† and ν.
///
/// p is the smallest prime above `100|μ|/δ` that does not divide any of the
/// denominators `n_js` with `k_j − k_s = (m_js/n_js) μ + θ`.
pub fn choose_shift(
    s_points: &[Vec2],
    direction: &Vec2,
    delta: f64,
    dual: &DualLattice,
    opts: &ShiftOptions,
) -> Result<ShiftVector> {
    let bound = dual.min_norm() / 100.0;
    if !(delta > 0.0) || delta >= bound {
        return Err(Error::DeltaTooLarge { delta, bound });
    }
    let mu = rational_direction(direction, dual, opts)?;
    let u = unimodular_complement(mu);
    let mu_len = dual.point(mu).norm();

    let mut denominators = Vec::new();
    for (j, kj) in s_points.iter().enumerate() {
        for (s, ks) in s_points.iter().enumerate().skip(j + 1) {
            let d = dual.fractional(&(kj - ks));
            // Coordinates of d in the unimodular basis (μ, u).
            let alpha = u[1] as f64 * d.x - u[0] as f64 * d.y;
            let beta = -(mu[1] as f64) * d.x + mu[0] as f64 * d.y;
            if nearest_integer(beta, INTEGER_TOL).is_none() {
                continue;
            }
            let frac = alpha - alpha.floor();
            if frac < INTEGER_TOL || frac > 1.0 - INTEGER_TOL {
                return Err(Error::PointsNotDistinct(j, s));
            }
            if let Some((_, den)) = rationalize(frac, INTEGER_TOL, opts.max_denominator) {
                denominators.push(den as u64);
            }
        }
    }

    let mut p = (100.0 * mu_len / delta).floor() as u64 + 1;
    while !(is_prime(p) && denominators.iter().all(|&n| n % p != 0)) {
        p += 1;
    }
    // Largest p̃ with p̃|μ|/p < δ; it exceeds δp/(2|μ|) > 50 because p > 100|μ|/δ.
    let mut p_num = (delta * p as f64 / mu_len).ceil() as u64 - 1;
    while p_num as f64 * mu_len / p as f64 >= delta {
        p_num -= 1;
    }
    ShiftVector::new(mu, p_num, p, dual)
}

/// Scans `k_i + nν ≡ k_j (mod Γ†)` for `i ≠ j` and `|n| ≤ n_max`; returns the
/// first gluing found as `(i, j, n)`.
pub fn find_gluing(s_points: &[Vec2], shift: &ShiftVector, dual: &DualLattice, n_max: i64) -> Option<(usize, usize, i64)> {
    let nu = dual.fractional(&shift.value());
    for (i, ki) in s_points.iter().enumerate() {
        for (j, kj) in s_points.iter().enumerate() {
            if i == j {
                continue;
            }
            let d = dual.fractional(&(ki - kj));
            for n in -n_max..=n_max {
                let x = d + nu * n as f64;
                if (x.x - x.x.round()).abs() < 1e-9 && (x.y - x.y.round()).abs() < 1e-9 {
                    return Some((i, j, n));
                }
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn hex() -> Lattice2D {
        Lattice2D::from_generators([[1.0, 0.0], [0.5, 3f64.sqrt() / 2.0]]).unwrap()
    }

    #[test]
    fn dual_of_identity_and_diagonal() {
        let d = Lattice2D::square(1.0).dual();
        assert_relative_eq!(*d.basis(), Matrix2::new(2.0 * PI, 0.0, 0.0, 2.0 * PI), epsilon = 1e-14);
        let d = Lattice2D::new(Matrix2::new(2.0, 0.0, 0.0, 1.0)).unwrap().dual();
        assert_relative_eq!(*d.basis(), Matrix2::new(PI, 0.0, 0.0, 2.0 * PI), epsilon = 1e-14);
    }

    #[test]
    fn hexagonal_biorthogonality() {
        let lat = hex();
        let d = lat.dual();
        let prod = d.basis().transpose() * lat.basis();
        assert_relative_eq!(prod, Matrix2::identity() * 2.0 * PI, epsilon = 1e-12);
        assert_relative_eq!(d.direct().basis(), lat.basis(), epsilon = 1e-12);
    }

    #[test]
    fn singular_lattice_rejected() {
        let err = Lattice2D::from_generators([[1.0, 2.0], [2.0, 4.0]]).unwrap_err();
        assert_eq!(err.to_string(), "singular lattice");
    }

    #[test]
    fn supercell_reps() {
        let lat = Lattice2D::square(1.0);
        let map = supercell_map(&lat, 2).unwrap();
        let reps: Vec<Vec2> = (0..map.m()).map(|l| map.rep(l).unwrap()).collect();
        let expect = [(0.0, 0.0), (PI, 0.0), (0.0, PI), (PI, PI)];
        for (r, e) in reps.iter().zip(expect) {
            assert_relative_eq!(*r, Vec2::new(e.0, e.1), epsilon = 1e-14);
        }
        assert_eq!(supercell_map(&lat, 1).unwrap().m(), 1);
        assert_eq!(supercell_map(&lat, 0).unwrap_err(), Error::ZeroSupercell);
    }

    #[test]
    fn supercell_reps_distinct_n3() {
        let lat = Lattice2D::square(1.0);
        let map = supercell_map(&lat, 3).unwrap();
        assert_eq!(map.m(), 9);
        let coarse = map.coarse_dual();
        for a in 0..9 {
            for b in 0..a {
                assert!(!coarse.congruent(&map.rep(a).unwrap(), &map.rep(b).unwrap(), 1e-9));
            }
        }
    }

    #[test]
    fn fold_examples() {
        let map = supercell_map(&Lattice2D::square(1.0), 2).unwrap();
        let k = map.coarse_dual().canonical(&Vec2::new(1.5 * PI, 0.2 * PI));
        let (kappa, l) = map.fold(&k);
        assert_relative_eq!(kappa.0, Vec2::new(0.5 * PI, 0.2 * PI), epsilon = 1e-12);
        assert_relative_eq!(map.rep(l).unwrap(), Vec2::new(PI, 0.0), epsilon = 1e-12);
        let (kappa, l) = map.fold(&QuasiMomentum(Vec2::zeros()));
        assert_eq!((kappa.0, l), (Vec2::zeros(), 0));
        assert!(map.unfold(&kappa, 4).is_err());
    }

    #[test]
    fn canonical_snaps_boundary() {
        let d = Lattice2D::square(1.0).dual();
        let k = d.canonical(&Vec2::new(2.0 * PI - 1e-12, -1e-13));
        assert_eq!(k.0, Vec2::zeros());
    }

    #[test]
    fn shortest_vector_on_skewed_basis() {
        let d = DualLattice::from_generators([[1.0, 0.0], [7.3, 0.5]]).unwrap();
        assert_relative_eq!(d.min_norm(), 0.34f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn refined_dual_contains_nu_and_coarse() {
        let dual = Lattice2D::square(1.0).dual();
        let nu = ShiftVector::new([1, 2], 3, 7, &dual).unwrap();
        let fine = nu.refined_dual(&dual);
        assert!(fine.integer_coords(&nu.value()).is_some());
        assert!(dual.coordinates_in(&fine).is_ok());
        assert_relative_eq!(fine.cell_area() * 7.0, dual.cell_area(), epsilon = 1e-9);
    }

    #[test]
    fn shift_singleton() {
        let dual = Lattice2D::square(1.0).dual();
        let nu = choose_shift(&[Vec2::new(0.3, 0.4)], &Vec2::new(1.0, 0.0), 0.05, &dual, &Default::default()).unwrap();
        assert_eq!(nu.mu, [1, 0]);
        assert!(nu.length() > 0.025 && nu.length() < 0.05);
    }

    #[test]
    fn shift_two_points_half_offset() {
        let dual = Lattice2D::square(1.0).dual();
        let pts = [Vec2::zeros(), Vec2::new(PI, PI)];
        let delta = 0.05;
        let nu = choose_shift(&pts, &Vec2::new(1.0, 1.0), delta, &dual, &Default::default()).unwrap();
        assert_eq!(nu.mu, [1, 1]);
        let mu_len = (8.0f64).sqrt() * PI;
        assert!(nu.p_den % 2 == 1 && is_prime(nu.p_den));
        assert!(nu.p_den as f64 > 100.0 * mu_len / delta);
        assert!(nu.length() > delta / 2.0 && nu.length() < delta);
        assert_eq!(find_gluing(&pts, &nu, &dual, 10 * nu.p_den as i64), None);
    }

    #[test]
    fn shift_errors() {
        let dual = Lattice2D::square(1.0).dual();
        let pts = [Vec2::zeros()];
        assert_eq!(choose_shift(&pts, &Vec2::zeros(), 0.01, &dual, &Default::default()).unwrap_err(), Error::InvalidDirection);
        assert!(matches!(
            choose_shift(&pts, &Vec2::new(1.0, 0.0), 0.5, &dual, &Default::default()),
            Err(Error::DeltaTooLarge { .. })
        ));
        let irrational = Vec2::new(1.0, 2f64.sqrt());
        let opts = ShiftOptions { angle_tol: 1e-12, max_denominator: 100 };
        assert!(matches!(
            choose_shift(&pts, &irrational, 0.01, &dual, &opts),
            Err(Error::NoRationalDirection { .. })
        ));
        let same = [Vec2::zeros(), Vec2::new(2.0 * PI, 0.0)];
        assert!(matches!(
            choose_shift(&same, &Vec2::new(1.0, 0.0), 0.01, &dual, &Default::default()),
            Err(Error::PointsNotDistinct(0, 1))
        ));
    }

    #[test]
    fn unimodular_completion() {
        for mu in [[1, 0], [0, 1], [3, 5], [-4, 7], [2, -9], [-1, -1]] {
            let u = unimodular_complement(mu);
            assert_eq!(mu[0] * u[1] - mu[1] * u[0], 1, "mu = {mu:?}");
        }
    }

    #[test]
    fn continued_fractions() {
        assert_eq!(rationalize(0.375, 1e-12, 1000), Some((3, 8)));
        assert_eq!(rationalize(-2.0 / 3.0, 1e-12, 1000), Some((-2, 3)));
        assert!(rationalize(2f64.sqrt(), 1e-12, 1000).is_none());
    }

    #[test]
    fn primes() {
        let small: Vec<u64> = (0..30).filter(|&n| is_prime(n)).collect();
        assert_eq!(small, vec![2, 3, 5, 7, 11, 13, 17, 19, 23, 29]);
        assert!(is_prime(1_000_000_007));
    }
}
