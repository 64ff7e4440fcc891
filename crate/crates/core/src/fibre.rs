//! Truncated plane-wave fibre operators `H(k)` and the supercell folding check.
//!
//! Normalization: the cell volume is set to one, so eigenvector coefficients
//! satisfy `Σ_θ ψ̂_j(θ) conj(ψ̂_m(θ)) = δ_jm`.

use nalgebra::DVector;
use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::lattice::{DualLattice, SupercellMap, Vec2};
use crate::linalg::{hermitian_eig, CMatrix, EigenDecomposition, HermitianMatrix};
use crate::potential::FourierPotential;

/// Plane waves `e_{θ+k}` with `|θ+k|² ≤ e_cut`, sorted by integer coordinates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlaneWaveBasis {
    pub k: Vec2,
    pub e_cut: f64,
    #[serde(skip)]
    dual: DualLattice,
    coords: Vec<[i64; 2]>,
}

impl PlaneWaveBasis {
    pub fn new(dual: &DualLattice, k: &Vec2, e_cut: f64) -> Result<Self> {
        if !(e_cut > 0.0) {
            return Err(Error::EmptyBasis { e_cut });
        }
        let inv = dual.basis().try_inverse().ok_or(Error::SingularLattice)?;
        let radius = e_cut.sqrt();
        let centre = inv * k;
        let mut coords = Vec::new();
        let reach = |i: usize| radius * inv.row(i).norm() + 1.0;
        let (lo0, hi0) = ((-centre.x - reach(0)).floor() as i64, (-centre.x + reach(0)).ceil() as i64);
        let (lo1, hi1) = ((-centre.y - reach(1)).floor() as i64, (-centre.y + reach(1)).ceil() as i64);
        for m0 in lo0..=hi0 {
            for m1 in lo1..=hi1 {
                if (dual.point([m0, m1]) + k).norm_squared() <= e_cut {
                    coords.push([m0, m1]);
                }
            }
        }
        if coords.is_empty() {
            return Err(Error::EmptyBasis { e_cut });
        }
        Ok(Self { k: *k, e_cut, dual: dual.clone(), coords })
    }

    /// The same frequency set evaluated at another quasimomentum.
    pub fn at(&self, k: &Vec2) -> Self {
        Self { k: *k, ..self.clone() }
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn coords(&self) -> &[[i64; 2]] {
        &self.coords
    }

    pub fn dual(&self) -> &DualLattice {
        &self.dual
    }

    pub fn index_of(&self, m: [i64; 2]) -> Option<usize> {
        self.coords.binary_search(&m).ok()
    }

    /// `θ + k` for row `i`.
    pub fn wavevector(&self, i: usize) -> Vec2 {
        self.dual.point(self.coords[i]) + self.k
    }
}

/// Builds `H(k)` on the ball `|θ+k|² ≤ e_cut` of the potential's dual lattice.
pub fn assemble_fibre(w: &FourierPotential, k: &Vec2, e_cut: f64) -> Result<(HermitianMatrix, PlaneWaveBasis)> {
    let basis = PlaneWaveBasis::new(w.dual(), k, e_cut)?;
    Ok((assemble_on(w, &basis)?, basis))
}

/// Builds `H(k)` on a prescribed basis.
pub fn assemble_on(w: &FourierPotential, basis: &PlaneWaveBasis) -> Result<HermitianMatrix> {
    if !w.is_real() {
        return Err(Error::InvalidInput("fibre assembly needs a real-valued potential".into()));
    }
    w.check_real()?;
    let n = basis.len();
    let mut h = CMatrix::zeros(n, n);
    for i in 0..n {
        h[(i, i)] = Complex64::new(basis.wavevector(i).norm_squared(), 0.0);
    }
    let coeffs: Vec<_> = w.iter().collect();
    for (i, mi) in basis.coords().iter().enumerate() {
        for &(d, wd) in &coeffs {
            if let Some(j) = basis.index_of([mi[0] - d[0], mi[1] - d[1]]) {
                h[(i, j)] += wd;
            }
        }
    }
    HermitianMatrix::new(h)
}

/// Spectral data of `H(k)`: ascending values and coefficient columns `ψ̂_j(θ; k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenSolution {
    pub basis: PlaneWaveBasis,
    pub values: Vec<f64>,
    pub vectors: CMatrix,
}

impl EigenSolution {
    pub fn k(&self) -> Vec2 {
        self.basis.k
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// Coefficient of plane wave `m` in eigenvector `j`; zero outside the basis.
    pub fn coeff(&self, j: usize, m: [i64; 2]) -> Complex64 {
        self.basis.index_of(m).map(|i| self.vectors[(i, j)]).unwrap_or_default()
    }

    pub fn column(&self, j: usize) -> DVector<Complex64> {
        self.vectors.column(j).into_owned()
    }

    pub fn to_json(&self) -> serde_json::Value {
        let vectors: Vec<Vec<[f64; 2]>> = (0..self.dim())
            .map(|j| self.vectors.column(j).iter().map(|c| [c.re, c.im]).collect())
            .collect();
        serde_json::json!({
            "k": [self.basis.k.x, self.basis.k.y],
            "e_cut": self.basis.e_cut,
            "thetas": self.basis.coords(),
            "values": self.values,
            "vectors": vectors,
        })
    }
}

/// Diagonalizes `H(k)`.
pub fn bloch_eigs(w: &FourierPotential, k: &Vec2, e_cut: f64) -> Result<EigenSolution> {
    let (h, basis) = assemble_fibre(w, k, e_cut)?;
    solve_on(h, basis)
}

/// Diagonalizes `H(k)` on a prescribed basis (the basis carries `k`).
pub fn bloch_eigs_on(w: &FourierPotential, basis: &PlaneWaveBasis) -> Result<EigenSolution> {
    solve_on(assemble_on(w, basis)?, basis.clone())
}

fn solve_on(h: HermitianMatrix, basis: PlaneWaveBasis) -> Result<EigenSolution> {
    let EigenDecomposition { values, vectors } = hermitian_eig(&h)?;
    Ok(EigenSolution { basis, values, vectors })
}

/// `Σ_θ ψ̂_j(θ; k_a) conj(ψ̂_m(θ + shift; k_b))` over the frequencies both
/// bases contain. `shift` must be a point of the common dual lattice.
pub fn overlap(sol_a: &EigenSolution, j: usize, sol_b: &EigenSolution, m: usize, shift: &Vec2) -> Result<Complex64> {
    let da = sol_a.basis.dual();
    let db = sol_b.basis.dual();
    if (da.basis() - db.basis()).norm() > 1e-12 * da.basis().norm() {
        return Err(Error::LatticeMismatch);
    }
    let s = da.integer_coords(shift).ok_or(Error::ShiftNotOnLattice)?;
    overlap_coords(sol_a, j, sol_b, m, s)
}

/// [`overlap`] with the shift given in integer coordinates.
pub fn overlap_coords(sol_a: &EigenSolution, j: usize, sol_b: &EigenSolution, m: usize, shift: [i64; 2]) -> Result<Complex64> {
    if j >= sol_a.dim() {
        return Err(Error::IndexOutOfRange { index: j, len: sol_a.dim() });
    }
    if m >= sol_b.dim() {
        return Err(Error::IndexOutOfRange { index: m, len: sol_b.dim() });
    }
    let mut sum = Complex64::new(0.0, 0.0);
    for (i, c) in sol_a.basis.coords().iter().enumerate() {
        if let Some(ib) = sol_b.basis.index_of([c[0] + shift[0], c[1] + shift[1]]) {
            sum += sol_a.vectors[(i, j)] * sol_b.vectors[(ib, m)].conj();
        }
    }
    Ok(sum)
}

/// Outcome of comparing the supercell spectrum with the merged shifted spectra.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SupercellReport {
    /// Largest distance between matched eigenvalues inside the window.
    pub distance: f64,
    /// Eigenvalues compared on each side.
    pub compared: usize,
    /// Upper end of the comparison window, `e_cut/2`.
    pub window: f64,
    pub supercell_dim: usize,
}

/// Compares `σ(H(κ))` for the potential read on `NΓ` with `⋃_l σ(H(κ + p_l))`.
pub fn supercell_consistency(w: &FourierPotential, kappa: &Vec2, map: &SupercellMap, e_cut: f64) -> Result<SupercellReport> {
    let window = e_cut / 2.0;
    let fine_w = w.refine_to(map.fine_dual())?;
    let fine = bloch_eigs(&fine_w, kappa, e_cut)?;
    let mut merged = Vec::new();
    for l in 0..map.m() {
        let sol = bloch_eigs(w, &(kappa + map.rep(l)?), e_cut)?;
        merged.extend(sol.values.into_iter().filter(|&v| v <= window));
    }
    merged.sort_by(f64::total_cmp);
    let supercell: Vec<f64> = fine.values.iter().copied().filter(|&v| v <= window).collect();
    let compared = supercell.len().min(merged.len());
    let mut distance = supercell.iter().zip(&merged).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    // Unmatched values can only sit at the window edge.
    for extra in supercell.iter().skip(compared).chain(merged.iter().skip(compared)) {
        distance = distance.max(window - extra);
    }
    Ok(SupercellReport { distance, compared, window, supercell_dim: fine.dim() })
}

/// A continuous operator `−Δ + W` truncated at a fixed energy cutoff.
#[derive(Debug, Clone, PartialEq)]
pub struct PlaneWaveModel {
    pub potential: FourierPotential,
    pub e_cut: f64,
}

impl PlaneWaveModel {
    pub fn new(potential: FourierPotential, e_cut: f64) -> Result<Self> {
        if !(e_cut > 0.0) {
            return Err(Error::EmptyBasis { e_cut });
        }
        Ok(Self { potential, e_cut })
    }

    pub fn eigs(&self, k: &Vec2) -> Result<EigenSolution> {
        bloch_eigs(&self.potential, k, self.e_cut)
    }

    /// `|λ_j(e_cut) − λ_j(2·e_cut)|` at `k`.
    pub fn cutoff_delta(&self, k: &Vec2, j: usize) -> Result<f64> {
        let a = self.eigs(k)?;
        let b = bloch_eigs(&self.potential, k, 2.0 * self.e_cut)?;
        match (a.values.get(j), b.values.get(j)) {
            (Some(x), Some(y)) => Ok((x - y).abs()),
            _ => Err(Error::TooFewStates { requested: j + 1, available: a.dim() }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{supercell_map, Lattice2D};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn z2() -> DualLattice {
        Lattice2D::square(1.0).dual()
    }

    fn free() -> FourierPotential {
        FourierPotential::zero(z2())
    }

    fn random_real(rng: &mut ChaCha8Rng) -> FourierPotential {
        let terms: Vec<_> = (0..4)
            .map(|_| ([rng.gen_range(-2..=2), rng.gen_range(-2..=2)], rng.gen_range(-1.0..1.0)))
            .filter(|(m, _)| *m != [0, 0])
            .collect();
        FourierPotential::cosines(z2(), &terms)
    }

    #[test]
    fn free_fibre_is_kinetic_diagonal() {
        let k = Vec2::new(0.3, -0.2);
        let (h, basis) = assemble_fibre(&free(), &k, 200.0).unwrap();
        for i in 0..basis.len() {
            for j in 0..basis.len() {
                let expect = if i == j { basis.wavevector(i).norm_squared() } else { 0.0 };
                assert_eq!(h.entries()[(i, j)], Complex64::new(expect, 0.0));
            }
            assert!(basis.wavevector(i).norm_squared() <= 200.0);
        }
        assert!(basis.coords().windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn cosine_couples_nearest_neighbours() {
        let w = FourierPotential::cosines(z2(), &[([1, 0], 1.0)]);
        let (h, basis) = assemble_fibre(&w, &Vec2::zeros(), 200.0).unwrap();
        for (i, a) in basis.coords().iter().enumerate() {
            for (j, b) in basis.coords().iter().enumerate() {
                if i == j {
                    continue;
                }
                let adjacent = a[1] == b[1] && (a[0] - b[0]).abs() == 1;
                assert_eq!(h.entries()[(i, j)].re, if adjacent { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn random_potential_fibre_is_hermitian() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let w = random_real(&mut rng);
            let k = Vec2::new(rng.gen_range(0.0..6.0), rng.gen_range(0.0..6.0));
            let (h, _) = assemble_fibre(&w, &k, 150.0).unwrap();
            let e = h.entries();
            assert!((e - e.adjoint()).norm() < 1e-14 * e.norm());
        }
    }

    #[test]
    fn empty_basis_is_an_error() {
        let err = assemble_fibre(&free(), &Vec2::new(PI, PI), 1.0).unwrap_err();
        assert!(matches!(err, Error::EmptyBasis { .. }));
    }

    #[test]
    fn free_spectrum_at_origin() {
        let sol = bloch_eigs(&free(), &Vec2::zeros(), 50.0).unwrap();
        assert_eq!(sol.values[0], 0.0);
        for v in &sol.values[1..5] {
            assert_relative_eq!(*v, 4.0 * PI * PI, epsilon = 1e-12);
        }
        let shifted = bloch_eigs(&free(), &Vec2::new(0.1, 0.0), 50.0).unwrap();
        assert_relative_eq!(shifted.values[0], 0.01, epsilon = 1e-15);
    }

    #[test]
    fn cutoff_convergence() {
        let w = FourierPotential::cosines(z2(), &[([1, 0], 1.0), ([0, 1], 1.0)]);
        let a = bloch_eigs(&w, &Vec2::zeros(), 200.0).unwrap().values[0];
        let b = bloch_eigs(&w, &Vec2::zeros(), 400.0).unwrap().values[0];
        assert!((a - b).abs() < 1e-8, "{a} vs {b}");
    }

    #[test]
    fn parseval() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let w = random_real(&mut rng);
        let sol = bloch_eigs(&w, &Vec2::new(1.0, 2.0), 200.0).unwrap();
        let g = sol.vectors.adjoint() * &sol.vectors;
        assert!((g - CMatrix::identity(sol.dim(), sol.dim())).norm() < 1e-10);
    }

    #[test]
    fn cutoff_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let w = random_real(&mut rng);
        let k = Vec2::new(0.4, 1.1);
        let mut prev: Option<Vec<f64>> = None;
        for e_cut in [80.0, 160.0, 320.0] {
            let vals = bloch_eigs(&w, &k, e_cut).unwrap().values;
            if let Some(p) = &prev {
                for (a, b) in vals.iter().zip(p) {
                    assert!(*a <= b + 1e-10);
                }
            }
            prev = Some(vals);
        }
    }

    #[test]
    fn free_overlaps() {
        let s0 = bloch_eigs(&free(), &Vec2::new(0.1, 0.0), 100.0).unwrap();
        assert_relative_eq!(overlap(&s0, 0, &s0, 0, &Vec2::zeros()).unwrap().norm(), 1.0, epsilon = 1e-14);
        let s1 = bloch_eigs(&free(), &Vec2::new(0.1 + PI / 3.0, 0.0), 100.0).unwrap();
        assert_relative_eq!(overlap(&s0, 0, &s1, 0, &Vec2::zeros()).unwrap().norm(), 1.0, epsilon = 1e-14);
        assert_eq!(overlap(&s0, 0, &s1, 0, &Vec2::new(0.5, 0.0)).unwrap_err(), Error::ShiftNotOnLattice);
        assert!(overlap(&s0, 9999, &s1, 0, &Vec2::zeros()).is_err());
    }

    #[test]
    fn overlaps_bounded_by_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let w = random_real(&mut rng);
        for _ in 0..100 {
            let ka = Vec2::new(rng.gen_range(0.0..6.3), rng.gen_range(0.0..6.3));
            let kb = Vec2::new(rng.gen_range(0.0..6.3), rng.gen_range(0.0..6.3));
            let a = bloch_eigs(&w, &ka, 60.0).unwrap();
            let b = bloch_eigs(&w, &kb, 60.0).unwrap();
            let j = rng.gen_range(0..a.dim().min(5));
            let m = rng.gen_range(0..b.dim().min(5));
            assert!(overlap(&a, j, &b, m, &Vec2::zeros()).unwrap().norm() <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn folding_identity() {
        let lat = Lattice2D::square(1.0);
        let map = supercell_map(&lat, 2).unwrap();
        let kappa = Vec2::new(0.3, 0.4);
        let free_report = supercell_consistency(&free(), &kappa, &map, 300.0).unwrap();
        assert!(free_report.distance < 1e-10);
        let w = FourierPotential::cosines(z2(), &[([1, 0], 1.0)]);
        let report = supercell_consistency(&w, &kappa, &map, 300.0).unwrap();
        assert!(report.distance < 1e-7, "{report:?}");
        assert!(report.compared > 10);
        let trivial = supercell_consistency(&w, &kappa, &supercell_map(&lat, 1).unwrap(), 300.0).unwrap();
        assert_eq!(trivial.distance, 0.0);
    }

    #[test]
    fn json_export() {
        let sol = bloch_eigs(&free(), &Vec2::zeros(), 50.0).unwrap();
        let v = sol.to_json();
        assert_eq!(v["values"].as_array().unwrap().len(), sol.dim());
    }
}
