//! Periodic potentials as finite Fourier series `W(x) = Σ w_θ e^{iθ·x}` on a
//! dual lattice.

use std::collections::BTreeMap;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{DualLattice, ShiftVector, Vec2};

/// Tolerance for the Hermitian symmetry `w_{−θ} = conj(w_θ)`.
pub const REALITY_TOL: f64 = 1e-14;

/// A trigonometric polynomial on a dual lattice, keyed by integer coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierPotential {
    dual: DualLattice,
    coeffs: BTreeMap<[i64; 2], Complex64>,
    real: bool,
}

impl FourierPotential {
    /// The zero potential, flagged real.
    pub fn zero(dual: DualLattice) -> Self {
        Self { dual, coeffs: BTreeMap::new(), real: true }
    }

    /// Builds a potential from `(m, w_m)` pairs; repeated keys are summed and
    /// exact zeros dropped. With `real` set the Hermitian symmetry is checked.
    pub fn from_coeffs(
        dual: DualLattice,
        coeffs: impl IntoIterator<Item = ([i64; 2], Complex64)>,
        real: bool,
    ) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (m, w) in coeffs {
            *map.entry(m).or_insert(Complex64::new(0.0, 0.0)) += w;
        }
        map.retain(|_, w| *w != Complex64::new(0.0, 0.0));
        let pot = Self { dual, coeffs: map, real };
        if real {
            pot.check_real()?;
        }
        Ok(pot)
    }

    /// `Σ_m amplitude_m · 2cos(θ_m·x)` for real amplitudes.
    pub fn cosines(dual: DualLattice, terms: &[([i64; 2], f64)]) -> Self {
        let coeffs = terms.iter().flat_map(|&(m, a)| {
            let a = Complex64::new(a, 0.0);
            [(m, a), ([-m[0], -m[1]], a)]
        });
        Self::from_coeffs(dual, coeffs, true).expect("cosines are real")
    }

    pub fn dual(&self) -> &DualLattice {
        &self.dual
    }

    pub fn is_real(&self) -> bool {
        self.real
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// `w_m`, zero when absent.
    pub fn coeff(&self, m: [i64; 2]) -> Complex64 {
        self.coeffs.get(&m).copied().unwrap_or_default()
    }

    /// Stored coefficients in lexicographic order of `m`.
    pub fn iter(&self) -> impl Iterator<Item = ([i64; 2], Complex64)> + '_ {
        self.coeffs.iter().map(|(m, w)| (*m, *w))
    }

    /// Verifies `w_{−m} = conj(w_m)` for every stored `m`.
    pub fn check_real(&self) -> Result<()> {
        for (&m, &w) in &self.coeffs {
            let partner = self.coeff([-m[0], -m[1]]);
            if (partner - w.conj()).norm() > REALITY_TOL * w.norm().max(1.0) {
                return Err(Error::NotRealValued(m));
            }
        }
        Ok(())
    }

    /// `Σ w_θ e^{iθ·x}`.
    pub fn evaluate(&self, x: &Vec2) -> Complex64 {
        self.coeffs
            .iter()
            .map(|(&m, &w)| w * Complex64::from_polar(1.0, self.dual.point(m).dot(x)))
            .sum()
    }

    /// Upper bound `Σ|w_θ| ≥ ‖W‖_∞`.
    pub fn sup_norm_bound(&self) -> f64 {
        self.coeffs.values().map(|w| w.norm()).sum()
    }

    /// Re-indexes the coefficients on a finer dual lattice containing this one.
    pub fn refine_to(&self, fine: &DualLattice) -> Result<Self> {
        let r = self.dual.coordinates_in(fine)?;
        let coeffs = self.coeffs.iter().map(|(&m, &w)| {
            ([r[0][0] * m[0] + r[0][1] * m[1], r[1][0] * m[0] + r[1][1] * m[1]], w)
        });
        Ok(Self { dual: fine.clone(), coeffs: coeffs.collect(), real: self.real })
    }

    /// Pointwise sum; both potentials must live on the same dual lattice.
    pub fn add(&self, other: &Self) -> Result<Self> {
        if !same_lattice(&self.dual, &other.dual) {
            return Err(Error::LatticeMismatch);
        }
        let merged = self.iter().chain(other.iter());
        let mut out = Self::from_coeffs(self.dual.clone(), merged, false)?;
        out.real = self.real && other.real;
        Ok(out)
    }

    /// `self + eps·other`.
    pub fn add_scaled(&self, other: &Self, eps: f64) -> Result<Self> {
        self.add(&other.scaled(eps))
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let coeffs = self.coeffs.iter().map(|(&m, &w)| (m, w * factor)).filter(|(_, w)| w.norm() > 0.0);
        Self { dual: self.dual.clone(), coeffs: coeffs.collect(), real: self.real }
    }

    pub fn to_spec(&self) -> PotentialSpec {
        PotentialSpec {
            dual_basis: Some(self.dual.generators()),
            real: self.real,
            coeffs: self.iter().map(|(m, w)| CoeffSpec { m, re: w.re, im: w.im }).collect(),
        }
    }
}

fn same_lattice(a: &DualLattice, b: &DualLattice) -> bool {
    let scale = a.basis().norm().max(b.basis().norm());
    (a.basis() - b.basis()).norm() <= 1e-12 * scale
}

/// The perturbation `a·e_ν + ā·e_{−ν}` on a dual lattice containing ν.
pub fn make_shift_perturbation(nu: &ShiftVector, amplitude: Complex64, fine_dual: &DualLattice) -> Result<FourierPotential> {
    let m = fine_dual.integer_coords(&nu.value()).ok_or(Error::ShiftNotOnLattice)?;
    single_mode(m, amplitude, fine_dual)
}

/// `a·e_θ + ā·e_{−θ}` for the lattice point with coordinates `m ≠ 0`.
pub fn single_mode(m: [i64; 2], amplitude: Complex64, dual: &DualLattice) -> Result<FourierPotential> {
    if m == [0, 0] {
        return Err(Error::InvalidShift("frequency must be non-zero".into()));
    }
    FourierPotential::from_coeffs(dual.clone(), [(m, amplitude), ([-m[0], -m[1]], amplitude.conj())], true)
}

/// One coefficient in a serialized potential.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoeffSpec {
    pub m: [i64; 2],
    pub re: f64,
    #[serde(default)]
    pub im: f64,
}

/// Serialized potential. `dual_basis` rows are dual generators; when absent
/// the dual of the configured lattice is used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dual_basis: Option<[[f64; 2]; 2]>,
    #[serde(default = "default_true")]
    pub real: bool,
    #[serde(default)]
    pub coeffs: Vec<CoeffSpec>,
}

fn default_true() -> bool {
    true
}

impl PotentialSpec {
    pub fn build(&self, default_dual: &DualLattice) -> Result<FourierPotential> {
        let dual = match self.dual_basis {
            Some(rows) => DualLattice::from_generators(rows)?,
            None => default_dual.clone(),
        };
        FourierPotential::from_coeffs(dual, self.coeffs.iter().map(|c| (c.m, Complex64::new(c.re, c.im))), self.real)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::Lattice2D;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn z2() -> DualLattice {
        Lattice2D::square(1.0).dual()
    }

    fn random_real(rng: &mut ChaCha8Rng, dual: DualLattice, terms: usize) -> FourierPotential {
        let mut c = Vec::new();
        for _ in 0..terms {
            let m = [rng.gen_range(-3..=3), rng.gen_range(-3..=3)];
            let w = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            if m == [0, 0] {
                c.push((m, Complex64::new(w.re, 0.0)));
            } else {
                c.push((m, w));
                c.push(([-m[0], -m[1]], w.conj()));
            }
        }
        FourierPotential::from_coeffs(dual, c, true).unwrap()
    }

    #[test]
    fn shift_perturbation_on_half_lattice() {
        let coarse = z2();
        let fine = coarse.refined(2).unwrap();
        let nu = ShiftVector::new([1, 0], 1, 2, &coarse).unwrap();
        let v = make_shift_perturbation(&nu, Complex64::new(1.0, 0.0), &fine).unwrap();
        assert_eq!(v.len(), 2);
        assert_eq!(v.coeff([1, 0]), Complex64::new(1.0, 0.0));
        assert_eq!(v.coeff([-1, 0]), Complex64::new(1.0, 0.0));
    }

    #[test]
    fn imaginary_amplitude_stays_real() {
        let fine = z2().refined(2).unwrap();
        let nu = ShiftVector::new([1, 0], 1, 2, &z2()).unwrap();
        let v = make_shift_perturbation(&nu, Complex64::i(), &fine).unwrap();
        assert_eq!(v.coeff([-1, 0]), -Complex64::i());
        for x in [0.1, 0.37, 0.8] {
            let val = v.evaluate(&Vec2::new(x, 0.2));
            assert!(val.im.abs() < 1e-15);
            assert_relative_eq!(val.re, -2.0 * (PI * x).sin(), epsilon = 1e-14);
        }
    }

    #[test]
    fn shift_sixth_lattice_coordinates() {
        let coarse = z2();
        let fine = coarse.refined(6).unwrap();
        let nu = ShiftVector::new([1, 0], 1, 6, &coarse).unwrap();
        assert_relative_eq!(nu.value(), Vec2::new(PI / 3.0, 0.0), epsilon = 1e-15);
        let v = make_shift_perturbation(&nu, Complex64::new(1.0, 0.0), &fine).unwrap();
        assert_eq!(v.iter().map(|(m, _)| m).collect::<Vec<_>>(), vec![[-1, 0], [1, 0]]);
        let err = make_shift_perturbation(&nu, Complex64::new(1.0, 0.0), &coarse.refined(4).unwrap()).unwrap_err();
        assert_eq!(err.to_string(), "shift not on dual lattice");
    }

    #[test]
    fn refine_scales_indices() {
        let p = FourierPotential::from_coeffs(z2(), [([1, 0], Complex64::new(1.0, 0.0))], false).unwrap();
        let fine = z2().refined(2).unwrap();
        let q = p.refine_to(&fine).unwrap();
        assert_eq!(q.coeff([2, 0]), Complex64::new(1.0, 0.0));
        assert_relative_eq!(q.dual().generator(0), Vec2::new(PI, 0.0), epsilon = 1e-15);
        assert_eq!(p.refine_to(&z2()).unwrap(), p);
        let bad = z2().refined(2).unwrap();
        assert_eq!(bad.clone(), bad);
        let coarser = DualLattice::new(*z2().basis() * 2.0).unwrap();
        assert_eq!(p.refine_to(&coarser).unwrap_err(), Error::NonIntegerRefinement);
    }

    #[test]
    fn refine_preserves_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = random_real(&mut rng, z2(), 6);
        let coarse = z2();
        let nu = ShiftVector::new([2, 1], 3, 7, &coarse).unwrap();
        for fine in [coarse.refined(3).unwrap(), nu.refined_dual(&coarse)] {
            let q = p.refine_to(&fine).unwrap();
            for _ in 0..100 {
                let x = Vec2::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
                assert!((p.evaluate(&x) - q.evaluate(&x)).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn evaluate_cosine() {
        let p = FourierPotential::cosines(z2(), &[([1, 0], 1.0)]);
        assert_relative_eq!(p.evaluate(&Vec2::zeros()).re, 2.0);
        assert!(p.evaluate(&Vec2::new(0.25, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn real_flag_gives_real_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = random_real(&mut rng, z2(), 8);
        for _ in 0..100 {
            let x = Vec2::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
            assert!(p.evaluate(&x).im.abs() < 1e-13);
            assert!(p.evaluate(&x).norm() <= p.sup_norm_bound() + 1e-12);
        }
    }

    #[test]
    fn non_real_rejected() {
        let err = FourierPotential::from_coeffs(z2(), [([1, 0], Complex64::new(1.0, 0.0))], true).unwrap_err();
        assert_eq!(err, Error::NotRealValued([1, 0]));
    }

    #[test]
    fn add_requires_same_lattice() {
        let a = FourierPotential::cosines(z2(), &[([1, 0], 1.0)]);
        let b = FourierPotential::cosines(z2().refined(2).unwrap(), &[([1, 0], 1.0)]);
        assert_eq!(a.add(&b).unwrap_err(), Error::LatticeMismatch);
        let c = a.add_scaled(&a, -1.0).unwrap();
        assert!(c.is_zero());
    }

    #[test]
    fn spec_round_trip() {
        let p = FourierPotential::cosines(z2(), &[([1, 0], 1.0), ([0, 1], 0.5)]);
        let json = serde_json::to_string(&p.to_spec()).unwrap();
        let spec: PotentialSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(spec.build(&z2()).unwrap(), p);
        let bare: PotentialSpec = serde_json::from_str(r#"{"coeffs":[{"m":[0,0],"re":1.5}]}"#).unwrap();
        assert_eq!(bare.build(&z2()).unwrap().coeff([0, 0]), Complex64::new(1.5, 0.0));
    }
}
