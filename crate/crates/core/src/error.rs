use thiserror::Error;

/// Errors produced by the band-structure and perturbation routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("singular lattice")]
    SingularLattice,
    #[error("supercell factor must be a positive integer")]
    ZeroSupercell,
    #[error("index {index} out of range (len {len})")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("delta exceeds lattice bound: delta = {delta}, bound = {bound}")]
    DeltaTooLarge { delta: f64, bound: f64 },
    #[error("direction must be a non-zero vector")]
    InvalidDirection,
    #[error("direction cannot be approximated by a rational dual direction within {tol}")]
    NoRationalDirection { tol: f64 },
    #[error("points {0} and {1} coincide modulo the dual lattice")]
    PointsNotDistinct(usize, usize),
    #[error("shift not on dual lattice")]
    ShiftNotOnLattice,
    #[error("invalid shift vector: {0}")]
    InvalidShift(String),
    #[error("non-integer refinement ratio")]
    NonIntegerRefinement,
    #[error("potentials live on different dual lattices")]
    LatticeMismatch,
    #[error("potential is not real-valued: w(-m) != conj(w(m)) at m = {0:?}")]
    NotRealValued([i64; 2]),
    #[error("matrix is not Hermitian (deviation {deviation:e})")]
    NotHermitian { deviation: f64 },
    #[error("Jacobi iteration did not converge after {sweeps} sweeps")]
    NoConvergence { sweeps: usize },
    #[error("resolvent singular: lambda = {lambda} is within {distance:e} of the complementary spectrum")]
    ResolventSingular { lambda: f64, distance: f64 },
    #[error("singular linear system")]
    SingularSystem,
    #[error("empty plane-wave basis: e_cut = {e_cut} is below every |theta + k|^2")]
    EmptyBasis { e_cut: f64 },
    #[error("requested {requested} bands but the fibre matrix has dimension {available}")]
    TooFewStates { requested: usize, available: usize },
    #[error("band crossing during refinement (best overlap {overlap:.3})")]
    BandCrossing { overlap: f64 },
    #[error("band {band} is not simple at the requested point (margin {margin:e})")]
    NotSimple { band: usize, margin: f64 },
    #[error("order ambiguous: log-log slope {slope:.4}, residual {residual:.3e}")]
    OrderAmbiguous { slope: f64, residual: f64 },
    #[error("flatness order {alpha} < 4 has no resonant correction; use the Hessian instead")]
    QuadraticProfile { alpha: u32 },
    #[error("denominator collapse: band {numerator_band} difference {gap:e} is below the resonance margin")]
    DenominatorCollapse { numerator_band: usize, gap: f64 },
    #[error("underdetermined fit: need at least 3 epsilon values, got {0}")]
    UnderdeterminedFit(usize),
    #[error("eigenvalue tracking ambiguous: {0}")]
    TrackingAmbiguous(String),
    #[error("no degenerate cluster containing bands {0} and {1} at the requested point")]
    ClusterNotFound(usize, usize),
    #[error("empty budget")]
    EmptyBudget,
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, Error>;
