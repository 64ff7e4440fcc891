//! Dense Hermitian eigensolver (cyclic Jacobi) and Schur-complement reduction.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;

/// Relative tolerance for Hermitian symmetry of input matrices.
pub const HERMITIAN_TOL: f64 = 1e-13;
/// Jacobi stops once the off-diagonal Frobenius norm is below this times ‖H‖_F.
pub const JACOBI_TOL: f64 = 1e-14;
pub const MAX_SWEEPS: usize = 30;
/// Relative distance of λ from σ(U₂₂) below which the resolvent is refused.
pub const RESOLVENT_MARGIN: f64 = 1e-8;

/// A square complex matrix known to be Hermitian.
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianMatrix {
    entries: CMatrix,
}

impl HermitianMatrix {
    /// Checks `H = H*` to `1e-13·‖H‖_F` and symmetrizes away the residue.
    pub fn new(entries: CMatrix) -> Result<Self> {
        if !entries.is_square() {
            return Err(Error::InvalidInput(format!("matrix is {}x{}", entries.nrows(), entries.ncols())));
        }
        let norm = entries.norm();
        let deviation = (&entries - entries.adjoint()).norm();
        if deviation > HERMITIAN_TOL * norm.max(f64::MIN_POSITIVE) {
            return Err(Error::NotHermitian { deviation });
        }
        let entries = (&entries + entries.adjoint()) * Complex64::new(0.5, 0.0);
        Ok(Self { entries })
    }

    /// Wraps a matrix that is Hermitian by construction.
    pub(crate) fn from_trusted(entries: CMatrix) -> Self {
        debug_assert!(entries.is_square());
        Self { entries }
    }

    pub fn from_fn(dim: usize, f: impl FnMut(usize, usize) -> Complex64) -> Result<Self> {
        Self::new(CMatrix::from_fn(dim, dim, f))
    }

    pub fn from_real(dim: usize, rows: &[f64]) -> Result<Self> {
        if rows.len() != dim * dim {
            return Err(Error::InvalidInput(format!("expected {} entries, got {}", dim * dim, rows.len())));
        }
        Self::from_fn(dim, |i, j| Complex64::new(rows[i * dim + j], 0.0))
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &CMatrix {
        &self.entries
    }

    pub fn into_inner(self) -> CMatrix {
        self.entries
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.entries.norm()
    }

    /// Principal submatrix on the given indices.
    pub fn submatrix(&self, rows: &[usize], cols: &[usize]) -> CMatrix {
        CMatrix::from_fn(rows.len(), cols.len(), |i, j| self.entries[(rows[i], cols[j])])
    }
}

/// Eigenvalues in ascending order with the matching orthonormal eigenvectors
/// as columns.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenDecomposition {
    pub values: Vec<f64>,
    pub vectors: CMatrix,
}

impl EigenDecomposition {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// `max_j ‖H v_j − λ_j v_j‖`.
    pub fn max_residual(&self, h: &HermitianMatrix) -> f64 {
        let hv = h.entries() * &self.vectors;
        (0..self.dim())
            .map(|j| (hv.column(j) - self.vectors.column(j) * Complex64::new(self.values[j], 0.0)).norm())
            .fold(0.0, f64::max)
    }

    /// `‖V*V − I‖_max`.
    pub fn orthonormality_defect(&self) -> f64 {
        let g = self.vectors.adjoint() * &self.vectors;
        let n = self.dim();
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g[(i, j)] - Complex64::new(target, 0.0)).norm());
            }
        }
        worst
    }

    /// Distance from `values[j]` to its nearest neighbour in the spectrum.
    pub fn margin(&self, j: usize) -> f64 {
        let below = j.checked_sub(1).map(|i| self.values[j] - self.values[i]);
        let above = self.values.get(j + 1).map(|v| v - self.values[j]);
        below.into_iter().chain(above).fold(f64::INFINITY, f64::min)
    }
}

fn off_norm_sq(a: &CMatrix) -> f64 {
    let n = a.nrows();
    let mut s = 0.0;
    for j in 0..n {
        for i in 0..n {
            if i != j {
                s += a[(i, j)].norm_sqr();
            }
        }
    }
    s
}

/// Eigen-decomposition of a Hermitian matrix by cyclic complex Jacobi.
///
/// The sweep order is fixed, so the result is a deterministic function of the
/// input. Eigenvectors inside a degenerate cluster are an arbitrary basis.
pub fn hermitian_eig(h: &HermitianMatrix) -> Result<EigenDecomposition> {
    let n = h.dim();
    let mut a = h.entries().clone();
    let mut v = CMatrix::identity(n, n);
    let norm = h.frobenius_norm();
    let threshold = (JACOBI_TOL * norm).powi(2);

    let mut converged = n <= 1 || off_norm_sq(&a) <= threshold;
    let mut sweep = 0;
    while !converged {
        if sweep == MAX_SWEEPS {
            return Err(Error::NoConvergence { sweeps: MAX_SWEEPS });
        }
        sweep += 1;
        for p in 0..n - 1 {
            for q in p + 1..n {
                let apq = a[(p, q)];
                let mag = apq.norm();
                if mag == 0.0 {
                    continue;
                }
                let app = a[(p, p)].re;
                let aqq = a[(q, q)].re;
                // Below the rounding level of both diagonal entries: drop it.
                let g = 100.0 * mag;
                if sweep > 3 && app.abs() + g == app.abs() && aqq.abs() + g == aqq.abs() {
                    a[(p, q)] = Complex64::new(0.0, 0.0);
                    a[(q, p)] = Complex64::new(0.0, 0.0);
                    continue;
                }
                let phase = apq / mag;
                let theta = (aqq - app) / (2.0 * mag);
                let t = if theta.abs() > 1e150 {
                    0.5 / theta
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                let e = phase.conj();
                for k in 0..n {
                    if k == p || k == q {
                        continue;
                    }
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    let new_kp = akp * c - e * akq * s;
                    let new_kq = akp * s + e * akq * c;
                    a[(k, p)] = new_kp;
                    a[(k, q)] = new_kq;
                    a[(p, k)] = new_kp.conj();
                    a[(q, k)] = new_kq.conj();
                }
                a[(p, p)] = Complex64::new(app - t * mag, 0.0);
                a[(q, q)] = Complex64::new(aqq + t * mag, 0.0);
                a[(p, q)] = Complex64::new(0.0, 0.0);
                a[(q, p)] = Complex64::new(0.0, 0.0);
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = vkp * c - e * vkq * s;
                    v[(k, q)] = vkp * s + e * vkq * c;
                }
            }
        }
        converged = off_norm_sq(&a) <= threshold;
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].re.total_cmp(&a[(j, j)].re));
    let values = order.iter().map(|&i| a[(i, i)].re).collect();
    let vectors = CMatrix::from_fn(n, n, |r, c| v[(r, order[c])]);
    Ok(EigenDecomposition { values, vectors })
}

/// Eigenvalues only.
pub fn hermitian_eigenvalues(h: &HermitianMatrix) -> Result<Vec<f64>> {
    Ok(hermitian_eig(h)?.values)
}

/// The Schur complement `E(λ) = (U₁₁−λ) − U₁₂(U₂₂−λ)⁻¹U₂₁` together with the
/// data needed to lift a kernel vector of `E(λ)` to an eigenvector of `H`.
#[derive(Debug, Clone)]
pub struct SchurComplement {
    pub lambda: f64,
    pub p1: Vec<usize>,
    pub p2: Vec<usize>,
    pub effective: CMatrix,
    /// `(U₂₂−λ)⁻¹U₂₁`.
    resolvent_u21: CMatrix,
}

impl SchurComplement {
    /// `w = (ψ, −(U₂₂−λ)⁻¹U₂₁ψ)` in the original index order.
    pub fn lift(&self, psi: &nalgebra::DVector<Complex64>) -> Result<nalgebra::DVector<Complex64>> {
        if psi.len() != self.p1.len() {
            return Err(Error::InvalidInput(format!("vector of length {} for block of size {}", psi.len(), self.p1.len())));
        }
        let phi = -(&self.resolvent_u21 * psi);
        let mut w = nalgebra::DVector::zeros(self.p1.len() + self.p2.len());
        for (i, &r) in self.p1.iter().enumerate() {
            w[r] = psi[i];
        }
        for (i, &r) in self.p2.iter().enumerate() {
            w[r] = phi[i];
        }
        Ok(w)
    }

    /// Hermitian part of the effective matrix (it is Hermitian up to roundoff).
    pub fn effective_hermitian(&self) -> HermitianMatrix {
        let e = &self.effective;
        HermitianMatrix::from_trusted((e + e.adjoint()) * Complex64::new(0.5, 0.0))
    }
}

/// Reduces `H − λ` to the block indexed by `p1_indices`.
pub fn schur_effective(h: &HermitianMatrix, p1_indices: &[usize], lambda: f64) -> Result<SchurComplement> {
    let n = h.dim();
    let mut p1 = p1_indices.to_vec();
    p1.sort_unstable();
    p1.dedup();
    if p1.len() != p1_indices.len() || p1.is_empty() {
        return Err(Error::InvalidInput("P1 must be a non-empty set of distinct indices".into()));
    }
    if let Some(&bad) = p1.iter().find(|&&i| i >= n) {
        return Err(Error::IndexOutOfRange { index: bad, len: n });
    }
    let p2: Vec<usize> = (0..n).filter(|i| p1.binary_search(i).is_err()).collect();
    let shift = |m: CMatrix| {
        let d = m.nrows();
        m - CMatrix::identity(d, d) * Complex64::new(lambda, 0.0)
    };
    let u11 = shift(h.submatrix(&p1, &p1));
    if p2.is_empty() {
        return Ok(SchurComplement { lambda, p1, p2, effective: u11, resolvent_u21: CMatrix::zeros(0, 0) });
    }
    let u22 = h.submatrix(&p2, &p2);
    let spectrum = hermitian_eigenvalues(&HermitianMatrix::from_trusted(u22.clone()))?;
    let distance = spectrum.iter().map(|s| (s - lambda).abs()).fold(f64::INFINITY, f64::min);
    if distance < RESOLVENT_MARGIN * h.frobenius_norm() {
        return Err(Error::ResolventSingular { lambda, distance });
    }
    let u12 = h.submatrix(&p1, &p2);
    let u21 = h.submatrix(&p2, &p1);
    let lu = shift(u22).lu();
    let resolvent_u21 = lu.solve(&u21).ok_or(Error::SingularSystem)?;
    let effective = u11 - u12 * &resolvent_u21;
    Ok(SchurComplement { lambda, p1, p2, effective, resolvent_u21 })
}
