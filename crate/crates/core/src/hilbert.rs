//! Composite Hilbert space of two multilevel ions and a truncated cavity
//! mode, plus the dense operator algebra the rest of the crate builds on.
//!
//! Subsystems are always ordered (ion 1, ion 2, cavity); a composite index is
//! `(i1 * d2 + i2) * dc + n` where `i1`, `i2` are positions of the level
//! labels within each ion's level list and `n` is the photon number.
//! Level labels are the physical names `0, 1, 2, 3`, not positions, so the
//! auxiliary level `2` can be added without renumbering anything.

use std::fmt;
use std::ops::{Add, Mul, Sub};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format;

pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

/// Largest composite dimension any constructor will produce.
pub const MAX_DIM: usize = 10_000;

pub type Level = u8;

/// The excited level coupled to the cavity.
pub const EXCITED: Level = 3;

pub(crate) const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
pub(crate) const ONE: C64 = C64 { re: 1.0, im: 0.0 };

/// Layout of the composite space.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HilbertSpec {
    ion_levels: [Vec<Level>; 2],
    /// `None` for the cavity-eliminated (ions only) space.
    fock_cutoff: Option<usize>,
}

impl HilbertSpec {
    pub fn new(ion1: Vec<Level>, ion2: Vec<Level>, fock_cutoff: Option<usize>) -> Result<Self> {
        for (k, levels) in [&ion1, &ion2].into_iter().enumerate() {
            if levels.is_empty() {
                return Err(Error::InvalidArgument(format!("ion {} has no levels", k + 1)));
            }
            for (a, &l) in levels.iter().enumerate() {
                if levels[..a].contains(&l) {
                    return Err(Error::InvalidArgument(format!(
                        "level label {l} repeated on ion {}",
                        k + 1
                    )));
                }
            }
        }
        if fock_cutoff == Some(0) {
            return Err(Error::InvalidArgument(
                "fock cutoff must be at least 1 (no cavity dynamics otherwise)".into(),
            ));
        }
        if fock_cutoff.is_some() && !(ion1.contains(&EXCITED) && ion2.contains(&EXCITED)) {
            return Err(Error::InvalidArgument(
                "level 3 must be present on both ions when the cavity is included".into(),
            ));
        }
        let dim = ion1
            .len()
            .checked_mul(ion2.len())
            .and_then(|d| d.checked_mul(fock_cutoff.map_or(1, |n| n + 1)))
            .unwrap_or(usize::MAX);
        if dim > MAX_DIM {
            return Err(Error::DimensionTooLarge {
                dim,
                limit: MAX_DIM,
                context: format!(
                    "{} x {} ion levels with fock cutoff {:?}",
                    ion1.len(),
                    ion2.len(),
                    fock_cutoff
                ),
            });
        }
        Ok(Self {
            ion_levels: [ion1, ion2],
            fock_cutoff,
        })
    }

    /// Two Λ ions `{0, 1, 3}` and a cavity truncated at `n_max` photons.
    pub fn lambda(n_max: usize) -> Result<Self> {
        Self::new(vec![0, 1, 3], vec![0, 1, 3], Some(n_max))
    }

    /// Two Λ ions without the cavity factor (dimension 9).
    pub fn lambda_ions() -> Self {
        Self::new(vec![0, 1, 3], vec![0, 1, 3], None).expect("static layout")
    }

    /// Ions carrying the auxiliary ground level `2` as well (dimension 16).
    pub fn auxiliary_ions() -> Self {
        Self::new(vec![0, 1, 2, 3], vec![0, 1, 2, 3], None).expect("static layout")
    }

    pub fn ion_levels(&self, ion: usize) -> &[Level] {
        &self.ion_levels[ion - 1]
    }

    pub fn fock_cutoff(&self) -> Option<usize> {
        self.fock_cutoff
    }

    pub fn has_cavity(&self) -> bool {
        self.fock_cutoff.is_some()
    }

    pub fn ion_dim(&self, ion: usize) -> usize {
        self.ion_levels[ion - 1].len()
    }

    pub fn cavity_dim(&self) -> usize {
        self.fock_cutoff.map_or(1, |n| n + 1)
    }

    pub fn ions_dim(&self) -> usize {
        self.ion_dim(1) * self.ion_dim(2)
    }

    pub fn dim(&self) -> usize {
        self.ions_dim() * self.cavity_dim()
    }

    /// Same ion levels, cavity factor dropped.
    pub fn ions_only(&self) -> HilbertSpec {
        HilbertSpec {
            ion_levels: self.ion_levels.clone(),
            fock_cutoff: None,
        }
    }

    pub fn with_fock_cutoff(&self, n_max: usize) -> Result<HilbertSpec> {
        let [a, b] = self.ion_levels.clone();
        HilbertSpec::new(a, b, Some(n_max))
    }

    pub fn contains_levels(&self, ion: usize, labels: &[Level]) -> bool {
        labels.iter().all(|l| self.ion_levels[ion - 1].contains(l))
    }

    pub fn level_index(&self, ion: usize, label: Level) -> Result<usize> {
        check_ion(ion)?;
        self.ion_levels[ion - 1]
            .iter()
            .position(|&l| l == label)
            .ok_or(Error::UnknownLevel { label, ion })
    }

    /// Composite index of `|l1, l2⟩ ⊗ |n⟩`.
    pub fn index(&self, l1: Level, l2: Level, photons: usize) -> Result<usize> {
        let i1 = self.level_index(1, l1)?;
        let i2 = self.level_index(2, l2)?;
        let n_max = self.fock_cutoff.unwrap_or(0);
        if photons > n_max {
            return Err(Error::InvalidArgument(format!(
                "photon number {photons} exceeds the fock cutoff {n_max}"
            )));
        }
        Ok((i1 * self.ion_dim(2) + i2) * self.cavity_dim() + photons)
    }

    /// Inverse of [`HilbertSpec::index`].
    pub fn labels(&self, index: usize) -> (Level, Level, usize) {
        let dc = self.cavity_dim();
        let n = index % dc;
        let ions = index / dc;
        let (i1, i2) = (ions / self.ion_dim(2), ions % self.ion_dim(2));
        (self.ion_levels[0][i1], self.ion_levels[1][i2], n)
    }
}

fn check_ion(ion: usize) -> Result<()> {
    if ion == 1 || ion == 2 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("ion index {ion} is not 1 or 2")))
    }
}

/// Dense complex square matrix with a provenance label.
#[derive(Clone, Debug, PartialEq)]
pub struct Operator {
    matrix: CMatrix,
    label: String,
}

impl Operator {
    pub fn new(matrix: CMatrix, label: impl Into<String>) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::DimensionMismatch(format!(
                "operator must be square, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        if matrix.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::InvalidArgument("operator has non-finite entries".into()));
        }
        Ok(Self {
            matrix,
            label: label.into(),
        })
    }

    pub(crate) fn from_matrix(matrix: CMatrix, label: impl Into<String>) -> Self {
        debug_assert!(matrix.is_square());
        Self {
            matrix,
            label: label.into(),
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self::from_matrix(CMatrix::identity(dim, dim), format!("I{dim}"))
    }

    pub fn zeros(dim: usize) -> Self {
        Self::from_matrix(CMatrix::zeros(dim, dim), format!("0{dim}"))
    }

    pub fn from_diagonal(diag: &[C64], label: impl Into<String>) -> Self {
        Self::from_matrix(CMatrix::from_diagonal(&CVector::from_column_slice(diag)), label)
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> CMatrix {
        self.matrix
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn get(&self, row: usize, col: usize) -> C64 {
        self.matrix[(row, col)]
    }

    pub fn adjoint(&self) -> Operator {
        Self::from_matrix(self.matrix.adjoint(), format!("({})^dag", self.label))
    }

    pub fn scale(&self, factor: impl Into<C64>) -> Operator {
        let f = factor.into();
        Self::from_matrix(&self.matrix * f, self.label.clone())
    }

    /// Largest entrywise deviation from Hermiticity, `max |A - A†|`.
    pub fn hermiticity_error(&self) -> f64 {
        max_abs_diff(&self.matrix, &self.matrix.adjoint())
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hermiticity_error() <= tol
    }

    /// Induced ∞-norm (max absolute row sum); bounds the spectral radius.
    pub fn row_sum_norm(&self) -> f64 {
        self.matrix
            .row_iter()
            .map(|r| r.iter().map(|z| z.norm()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn commutator(&self, other: &Operator) -> Result<Operator> {
        same_dim(self.dim(), other.dim(), "commutator")?;
        Ok(Self::from_matrix(
            &self.matrix * &other.matrix - &other.matrix * &self.matrix,
            format!("[{},{}]", self.label, other.label),
        ))
    }

    pub fn apply(&self, psi: &StateVector) -> Result<CVector> {
        same_dim(self.dim(), psi.dim(), "operator application")?;
        Ok(&self.matrix * psi.amplitudes())
    }

    /// `⟨a|A|b⟩`.
    pub fn matrix_element(&self, a: &StateVector, b: &StateVector) -> Result<C64> {
        Ok(a.amplitudes().dotc(&self.apply(b)?))
    }

    /// Real eigenvalues of a Hermitian operator in ascending order.
    pub fn eigenvalues_hermitian(&self) -> Result<Vec<f64>> {
        if !self.is_hermitian(1e-9 * self.row_sum_norm().max(1.0)) {
            return Err(Error::InvalidArgument(format!(
                "operator `{}` is not Hermitian",
                self.label
            )));
        }
        Ok(sorted_eigenvalues(&self.matrix))
    }

    /// One row per line, entries `re+imj` comma-separated, 17 significant digits.
    pub fn dump(&self) -> String {
        let mut out = String::with_capacity(self.dim() * self.dim() * 48);
        for r in 0..self.dim() {
            for c in 0..self.dim() {
                if c > 0 {
                    out.push(',');
                }
                out.push_str(&format::complex17(self.matrix[(r, c)]));
            }
            out.push('\n');
        }
        out
    }

    /// Read back a matrix written by [`Operator::dump`].
    pub fn parse_dump(text: &str, label: impl Into<String>) -> Result<Operator> {
        let rows: Vec<Vec<C64>> = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| l.split(',').map(format::parse_complex).collect())
            .collect::<Result<_>>()?;
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::DimensionMismatch("dump is not a square matrix".into()));
        }
        Operator::new(CMatrix::from_fn(n, n, |r, c| rows[r][c]), label)
    }
}

impl fmt::Display for Operator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({}x{})", self.label, self.dim(), self.dim())
    }
}

impl<'a> Add<&'a Operator> for &'a Operator {
    type Output = Operator;

    fn add(self, rhs: &'a Operator) -> Operator {
        assert_eq!(self.dim(), rhs.dim(), "operator dimensions differ");
        Operator::from_matrix(&self.matrix + &rhs.matrix, format!("{}+{}", self.label, rhs.label))
    }
}

impl<'a> Sub<&'a Operator> for &'a Operator {
    type Output = Operator;

    fn sub(self, rhs: &'a Operator) -> Operator {
        assert_eq!(self.dim(), rhs.dim(), "operator dimensions differ");
        Operator::from_matrix(&self.matrix - &rhs.matrix, format!("{}-{}", self.label, rhs.label))
    }
}

impl<'a> Mul<&'a Operator> for &'a Operator {
    type Output = Operator;

    fn mul(self, rhs: &'a Operator) -> Operator {
        assert_eq!(self.dim(), rhs.dim(), "operator dimensions differ");
        Operator::from_matrix(&self.matrix * &rhs.matrix, format!("{}*{}", self.label, rhs.label))
    }
}

/// Kronecker product `A ⊗ B`.
pub fn tensor(a: &Operator, b: &Operator) -> Result<Operator> {
    let dim = a.dim().saturating_mul(b.dim());
    if dim > MAX_DIM {
        return Err(Error::DimensionTooLarge {
            dim,
            limit: MAX_DIM,
            context: format!("tensor of {} and {}", a, b),
        });
    }
    Ok(Operator::from_matrix(
        a.matrix.kronecker(&b.matrix),
        format!("{}(x){}", a.label, b.label),
    ))
}

/// Cavity lowering operator on `n_max + 1` Fock states.
pub fn annihilation(n_max: usize) -> Result<Operator> {
    if n_max == 0 {
        return Err(Error::InvalidArgument(
            "annihilation operator needs n_max >= 1".into(),
        ));
    }
    let d = n_max + 1;
    let mut m = CMatrix::zeros(d, d);
    for n in 1..d {
        m[(n - 1, n)] = C64::new((n as f64).sqrt(), 0.0);
    }
    Ok(Operator::from_matrix(m, "a"))
}

/// `|i⟩⟨j|` on one ion, embedded as identity on the other ion and the cavity.
pub fn ion_transition(i: Level, j: Level, ion: usize, spec: &HilbertSpec) -> Result<Operator> {
    check_ion(ion)?;
    let (ri, rj) = (spec.level_index(ion, i)?, spec.level_index(ion, j)?);
    let d = spec.ion_dim(ion);
    let mut local = CMatrix::zeros(d, d);
    local[(ri, rj)] = ONE;
    let local = Operator::from_matrix(local, format!("sigma({i},{j})@ion{ion}"));
    embed(&local, ion, spec).map(|op| op.with_label(format!("sigma({i},{j})@ion{ion}")))
}

/// Lift a single-subsystem operator (`subsystem` 1, 2 = ions, 3 = cavity)
/// to the composite space.
pub fn embed(local: &Operator, subsystem: usize, spec: &HilbertSpec) -> Result<Operator> {
    let dims = [spec.ion_dim(1), spec.ion_dim(2), spec.cavity_dim()];
    if !(1..=3).contains(&subsystem) {
        return Err(Error::InvalidArgument(format!("no subsystem {subsystem}")));
    }
    if subsystem == 3 && !spec.has_cavity() {
        return Err(Error::InvalidArgument("space has no cavity factor".into()));
    }
    if local.dim() != dims[subsystem - 1] {
        return Err(Error::DimensionMismatch(format!(
            "local operator has dim {}, subsystem {subsystem} has dim {}",
            local.dim(),
            dims[subsystem - 1]
        )));
    }
    let factors: Vec<Operator> = (1..=3)
        .filter(|&k| k != 3 || spec.has_cavity())
        .map(|k| {
            if k == subsystem {
                local.clone()
            } else {
                Operator::identity(dims[k - 1])
            }
        })
        .collect();
    let mut out = factors[0].clone();
    for f in &factors[1..] {
        out = tensor(&out, f)?;
    }
    Ok(out.with_label(local.label.clone()))
}

/// Cavity `a` on the composite space.
pub fn cavity_annihilation(spec: &HilbertSpec) -> Result<Operator> {
    let n_max = spec
        .fock_cutoff()
        .ok_or_else(|| Error::InvalidArgument("space has no cavity factor".into()))?;
    embed(&annihilation(n_max)?, 3, spec)
}

/// `a†a` on the composite space.
pub fn photon_number(spec: &HilbertSpec) -> Result<Operator> {
    let a = cavity_annihilation(spec)?;
    Ok((&a.adjoint() * &a).with_label("n"))
}

/// Pure state on the composite space.
#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    amplitudes: CVector,
}

pub(crate) const NORM_TOLERANCE: f64 = 1e-9;

impl StateVector {
    /// Accepts only unit vectors (within 1e-9).
    pub fn new(amplitudes: CVector) -> Result<Self> {
        let norm = amplitudes.norm();
        if !norm.is_finite() || (norm - 1.0).abs() > NORM_TOLERANCE {
            return Err(Error::InvalidState(format!(
                "state vector norm is {norm}, expected 1"
            )));
        }
        Ok(Self { amplitudes })
    }

    /// Normalize an arbitrary nonzero vector.
    pub fn normalized(amplitudes: CVector) -> Result<Self> {
        let norm = amplitudes.norm();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(Error::InvalidState("cannot normalize a zero vector".into()));
        }
        Ok(Self {
            amplitudes: amplitudes / C64::new(norm, 0.0),
        })
    }

    pub(crate) fn from_raw(amplitudes: CVector) -> Self {
        Self { amplitudes }
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn amplitudes(&self) -> &CVector {
        &self.amplitudes
    }

    pub fn norm(&self) -> f64 {
        self.amplitudes.norm()
    }

    /// `⟨self|other⟩`.
    pub fn inner(&self, other: &StateVector) -> C64 {
        self.amplitudes.dotc(&other.amplitudes)
    }

    pub fn amplitude(&self, index: usize) -> C64 {
        self.amplitudes[index]
    }
}

/// `|l1, l2⟩ ⊗ |photons⟩`.
pub fn basis_state(l1: Level, l2: Level, photons: usize, spec: &HilbertSpec) -> Result<StateVector> {
    let idx = spec.index(l1, l2, photons)?;
    let mut v = CVector::zeros(spec.dim());
    v[idx] = ONE;
    Ok(StateVector::from_raw(v))
}

/// Normalized superposition `Σ c_k |l1, l2, n⟩_k`.
pub fn superposition(
    terms: &[(C64, (Level, Level, usize))],
    spec: &HilbertSpec,
) -> Result<StateVector> {
    let mut v = CVector::zeros(spec.dim());
    for &(c, (l1, l2, n)) in terms {
        v[spec.index(l1, l2, n)?] += c;
    }
    StateVector::normalized(v)
}

/// `(|30⟩ ± |03⟩)/√2` on the ions (vacuum cavity if present).
pub fn phi_state(plus: bool, spec: &HilbertSpec) -> Result<StateVector> {
    let s = if plus { 1.0 } else { -1.0 };
    superposition(
        &[(ONE, (3, 0, 0)), (C64::new(s, 0.0), (0, 3, 0))],
        spec,
    )
}

/// Density matrix with trace, Hermiticity and positivity invariants.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix {
    matrix: CMatrix,
}

pub const DENSITY_TOLERANCE: f64 = 1e-9;
pub const POSITIVITY_TOLERANCE: f64 = 1e-8;

impl DensityMatrix {
    /// Validates Hermiticity and unit trace within 1e-9 and a minimum
    /// eigenvalue of at least -1e-8.
    pub fn new(matrix: CMatrix) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::DimensionMismatch("density matrix must be square".into()));
        }
        let herm = max_abs_diff(&matrix, &matrix.adjoint());
        if herm.is_nan() || herm > DENSITY_TOLERANCE {
            return Err(Error::InvalidState(format!(
                "density matrix not Hermitian (deviation {herm:e})"
            )));
        }
        let tr = matrix.trace();
        if !((tr.re - 1.0).abs() <= DENSITY_TOLERANCE && tr.im.abs() <= DENSITY_TOLERANCE) {
            return Err(Error::InvalidState(format!("density matrix trace is {tr}")));
        }
        let rho = Self { matrix };
        let min = rho.min_eigenvalue();
        if min < -POSITIVITY_TOLERANCE {
            return Err(Error::InvalidState(format!(
                "density matrix has eigenvalue {min:e}"
            )));
        }
        Ok(rho)
    }

    pub(crate) fn from_raw(matrix: CMatrix) -> Self {
        Self { matrix }
    }

    pub fn from_pure(psi: &StateVector) -> Self {
        let v = psi.amplitudes();
        Self {
            matrix: v * v.adjoint(),
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> CMatrix {
        self.matrix
    }

    pub fn trace(&self) -> C64 {
        self.matrix.trace()
    }

    pub fn purity(&self) -> f64 {
        // Tr ρ² = Σ |ρ_ij|² for Hermitian ρ
        self.matrix.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn population(&self, index: usize) -> f64 {
        self.matrix[(index, index)].re
    }

    pub fn hermiticity_error(&self) -> f64 {
        max_abs_diff(&self.matrix, &self.matrix.adjoint())
    }

    pub fn min_eigenvalue(&self) -> f64 {
        sorted_eigenvalues(&hermitian_part(&self.matrix))
            .first()
            .copied()
            .unwrap_or(0.0)
    }

    /// `Tr(A ρ)`.
    pub fn expectation(&self, op: &Operator) -> Result<C64> {
        same_dim(self.dim(), op.dim(), "expectation value")?;
        Ok((op.matrix() * &self.matrix).trace())
    }

    /// Trace out the cavity, leaving the two-ion state.
    pub fn trace_out_cavity(&self, spec: &HilbertSpec) -> Result<DensityMatrix> {
        same_dim(self.dim(), spec.dim(), "partial trace")?;
        let dc = spec.cavity_dim();
        let di = spec.ions_dim();
        Ok(Self::from_raw(CMatrix::from_fn(di, di, |a, b| {
            (0..dc).map(|n| self.matrix[(a * dc + n, b * dc + n)]).sum()
        })))
    }
}

/// Anything that can be viewed as a density matrix; pure states are
/// promoted to projectors.
pub trait AsDensity {
    fn to_density(&self) -> DensityMatrix;
}

impl AsDensity for DensityMatrix {
    fn to_density(&self) -> DensityMatrix {
        self.clone()
    }
}

impl AsDensity for StateVector {
    fn to_density(&self) -> DensityMatrix {
        DensityMatrix::from_pure(self)
    }
}

pub(crate) fn same_dim(a: usize, b: usize, what: &str) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::DimensionMismatch(format!("{what}: {a} vs {b}")))
    }
}

pub(crate) fn max_abs_diff(a: &CMatrix, b: &CMatrix) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}

pub(crate) fn hermitian_part(m: &CMatrix) -> CMatrix {
    (m + m.adjoint()) * C64::new(0.5, 0.0)
}

/// Eigenvalues of a Hermitian matrix, ascending.
pub(crate) fn sorted_eigenvalues(m: &CMatrix) -> Vec<f64> {
    let mut ev: Vec<f64> = m
        .clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .collect();
    ev.sort_by(f64::total_cmp);
    ev
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn op(rows: &[&[C64]]) -> Operator {
        let n = rows.len();
        Operator::new(CMatrix::from_fn(n, n, |r, cc| rows[r][cc]), "test").unwrap()
    }

    #[test]
    fn tensor_identities() {
        let i6 = tensor(&Operator::identity(2), &Operator::identity(3)).unwrap();
        assert_eq!(i6.matrix(), Operator::identity(6).matrix());

        let d = Operator::from_diagonal(&[c(1.0, 0.0), c(2.0, 0.0)], "d");
        let out = tensor(&d, &Operator::identity(2)).unwrap();
        let expect = Operator::from_diagonal(
            &[c(1.0, 0.0), c(1.0, 0.0), c(2.0, 0.0), c(2.0, 0.0)],
            "e",
        );
        assert_eq!(out.matrix(), expect.matrix());
    }

    #[test]
    fn tensor_rejects_oversized_product() {
        let a = Operator::identity(101);
        let err = tensor(&a, &a).unwrap_err();
        assert!(matches!(err, Error::DimensionTooLarge { dim: 10201, .. }), "{err}");
    }

    #[test]
    fn mixed_product_rule() {
        // (A⊗B)(C⊗D) vs (AC)⊗(BD), the latter built by explicit 4x4 indexing
        let a = op(&[&[c(0.3, 0.1), c(-1.0, 0.2)], &[c(0.0, 0.7), c(0.5, -0.4)]]);
        let b = op(&[&[c(1.1, 0.0), c(0.2, 0.9)], &[c(-0.6, 0.3), c(0.0, -1.0)]]);
        let cc = op(&[&[c(0.8, -0.2), c(0.1, 0.1)], &[c(-0.3, 0.0), c(0.4, 0.6)]]);
        let d = op(&[&[c(0.0, 1.0), c(1.0, 0.0)], &[c(0.5, 0.5), c(-0.2, 0.3)]]);
        let lhs = &tensor(&a, &b).unwrap() * &tensor(&cc, &d).unwrap();
        let ac = a.matrix() * cc.matrix();
        let bd = b.matrix() * d.matrix();
        for r in 0..4 {
            for col in 0..4 {
                let oracle = ac[(r / 2, col / 2)] * bd[(r % 2, col % 2)];
                assert!((lhs.get(r, col) - oracle).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn annihilation_ladder() {
        let a = annihilation(2).unwrap();
        let two = CVector::from_column_slice(&[ZERO, ZERO, ONE]);
        let out = a.matrix() * two;
        assert!((out[1] - C64::new(2f64.sqrt(), 0.0)).norm() < 1e-15);
        assert_eq!(out[0], ZERO);
        assert_eq!(out[2], ZERO);

        let vac = CVector::from_column_slice(&[ONE, ZERO, ZERO]);
        assert!((a.matrix() * vac).iter().all(|z| *z == ZERO));

        assert!(annihilation(0).is_err());
    }

    #[test]
    fn truncated_commutator() {
        let n_max = 4;
        let a = annihilation(n_max).unwrap();
        let comm = a.commutator(&a.adjoint()).unwrap();
        for r in 0..=n_max {
            for col in 0..=n_max {
                let v = comm.get(r, col);
                if r != col {
                    assert_eq!(v, ZERO);
                } else if r < n_max {
                    assert!((v - ONE).norm() < 1e-14);
                } else {
                    // truncation: [a,a†] = -n_max at the top state
                    assert!((v - C64::new(-(n_max as f64), 0.0)).norm() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn number_spectrum() {
        let spec = HilbertSpec::lambda(3).unwrap();
        let n = photon_number(&spec).unwrap();
        let mut ev = n.eigenvalues_hermitian().unwrap();
        ev.dedup_by(|a, b| (*a - *b).abs() < 1e-10);
        assert_eq!(ev.len(), 4);
        for (k, e) in ev.iter().enumerate() {
            assert!((e - k as f64).abs() < 1e-10);
        }
    }

    #[test]
    fn ion_transition_algebra() {
        let spec = HilbertSpec::lambda(2).unwrap();
        let sum = [0, 1, 3]
            .iter()
            .map(|&l| ion_transition(l, l, 1, &spec).unwrap())
            .reduce(|a, b| &a + &b)
            .unwrap();
        assert_eq!(sum.matrix(), Operator::identity(spec.dim()).matrix());

        let s03 = ion_transition(0, 3, 1, &spec).unwrap();
        let s30 = ion_transition(3, 0, 1, &spec).unwrap();
        let s00 = ion_transition(0, 0, 1, &spec).unwrap();
        assert_eq!((&s03 * &s30).matrix(), s00.matrix());

        let other = ion_transition(0, 3, 2, &spec).unwrap();
        let comm = s03.commutator(&other).unwrap();
        assert!(comm.matrix().iter().all(|z| z.norm() == 0.0));

        match ion_transition(2, 0, 1, &spec) {
            Err(Error::UnknownLevel { label: 2, ion: 1 }) => {}
            other => panic!("expected unknown level, got {other:?}"),
        }
    }

    #[test]
    fn completeness_on_auxiliary_space() {
        let spec = HilbertSpec::auxiliary_ions();
        for ion in [1, 2] {
            let sum = [0, 1, 2, 3]
                .iter()
                .map(|&l| ion_transition(l, l, ion, &spec).unwrap())
                .reduce(|a, b| &a + &b)
                .unwrap();
            assert_eq!(sum.matrix(), Operator::identity(16).matrix());
        }
    }

    #[test]
    fn basis_states() {
        let spec = HilbertSpec::lambda(2).unwrap();
        let s = basis_state(0, 0, 0, &spec).unwrap();
        assert_eq!(s.norm(), 1.0);
        let a = basis_state(1, 0, 0, &spec).unwrap();
        let b = basis_state(0, 1, 0, &spec).unwrap();
        assert_eq!(a.inner(&b), ZERO);
        assert!(basis_state(0, 0, 3, &spec).is_err());

        let phi = phi_state(false, &spec).unwrap();
        assert!((phi.norm() - 1.0).abs() < 1e-15);
        let e30 = basis_state(3, 0, 0, &spec).unwrap();
        assert!((e30.inner(&phi).re - 0.5f64.sqrt()).abs() < 1e-15);

        for idx in 0..spec.dim() {
            let (l1, l2, n) = spec.labels(idx);
            assert_eq!(spec.index(l1, l2, n).unwrap(), idx);
        }
    }

    #[test]
    fn spec_validation() {
        assert!(HilbertSpec::new(vec![0, 0, 3], vec![0, 1, 3], Some(2)).is_err());
        assert!(HilbertSpec::new(vec![0, 1], vec![0, 1], Some(2)).is_err());
        assert!(HilbertSpec::lambda(0).is_err());
        assert!(matches!(
            HilbertSpec::lambda(2000),
            Err(Error::DimensionTooLarge { .. })
        ));
        assert_eq!(HilbertSpec::lambda(2).unwrap().dim(), 27);
        assert_eq!(HilbertSpec::lambda_ions().dim(), 9);
    }

    #[test]
    fn density_validation_and_partial_trace() {
        let spec = HilbertSpec::lambda(1).unwrap();
        let psi = superposition(&[(ONE, (1, 0, 0)), (ONE, (0, 0, 1))], &spec).unwrap();
        let rho = DensityMatrix::from_pure(&psi);
        assert!(DensityMatrix::new(rho.matrix().clone()).is_ok());
        let red = rho.trace_out_cavity(&spec).unwrap();
        assert!((red.trace() - ONE).norm() < 1e-15);
        assert!((red.purity() - 0.5).abs() < 1e-15);

        let mut bad = rho.matrix().clone();
        bad[(0, 0)] += C64::new(0.1, 0.0);
        assert!(DensityMatrix::new(bad).is_err());
    }

    #[test]
    fn dump_round_trip() {
        let spec = HilbertSpec::lambda(1).unwrap();
        let a = cavity_annihilation(&spec).unwrap();
        let h = (&a + &a.adjoint()).scale(C64::new(0.3, -0.0));
        let text = h.dump();
        assert_eq!(text.lines().count(), 18);
        let back = Operator::parse_dump(&text, "back").unwrap();
        assert_eq!(back.matrix(), h.matrix());
    }

    fn arb_op(dim: usize) -> impl Strategy<Value = Operator> {
        prop::collection::vec((-2.0f64..2.0, -2.0f64..2.0), dim * dim).prop_map(move |v| {
            let m = CMatrix::from_iterator(dim, dim, v.into_iter().map(|(r, i)| C64::new(r, i)));
            Operator::new(m, "arb").unwrap()
        })
    }

    proptest! {
        #[test]
        fn adjoint_is_involution(a in arb_op(3)) {
            let back = a.adjoint().adjoint();
            prop_assert_eq!(back.matrix(), a.matrix());
        }

        #[test]
        fn tensor_is_associative(a in arb_op(2), b in arb_op(2), c in arb_op(3)) {
            let left = tensor(&tensor(&a, &b).unwrap(), &c).unwrap();
            let right = tensor(&a, &tensor(&b, &c).unwrap()).unwrap();
            prop_assert!(max_abs_diff(left.matrix(), right.matrix()) < 1e-12);
        }
    }
}
