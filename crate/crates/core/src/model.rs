//! Hamiltonians and dissipators for every level of the model hierarchy:
//! the full ion–cavity system, the cavity-eliminated master equation, the
//! dispersive Hamiltonian on the nine two-ion states, the two-level gate
//! model, and the driven auxiliary-level model used by the geometric gate.
//!
//! Sign convention for the effective models: with Δ = ω_c − ω₃ + ω₀ > 0 the
//! virtual photon exchange lowers the excited-state manifold, so every
//! effective coupling carries the factor −g²Δ/(κ²+Δ²). This is the sign the
//! full Hamiltonian produces; the consistency tests against the full model
//! depend on it.

use std::f64::consts::{FRAC_1_SQRT_2, PI, SQRT_2};
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert::{
    basis_state, cavity_annihilation, ion_transition, phi_state, photon_number, CMatrix,
    HilbertSpec, Operator, StateVector,
};

/// Physical rates and frequencies, all in the same inverse-time unit
/// (conventionally g = 1).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    pub omega0: f64,
    pub omega3: f64,
    pub omega_c: f64,
    pub g: f64,
    /// Laser Rabi amplitude on the 1↔3 transition of ion 1.
    #[serde(rename = "Omega")]
    pub omega: f64,
    /// Cavity field decay rate; photons leave at 2κ.
    pub kappa: f64,
    /// Spontaneous emission rate per decay channel.
    pub tau: f64,
}

impl Default for SystemParams {
    fn default() -> Self {
        Self::with_detuning(50.0, 0.1 / 50.0)
    }
}

impl SystemParams {
    /// Rotating-frame shortcut: ω₀ = ω₃ = 0, ω_c = Δ, g = 1, no damping.
    pub fn with_detuning(delta: f64, omega: f64) -> Self {
        Self {
            omega0: 0.0,
            omega3: 0.0,
            omega_c: delta,
            g: 1.0,
            omega,
            kappa: 0.0,
            tau: 0.0,
        }
    }

    pub fn damped(mut self, kappa: f64, tau: f64) -> Self {
        self.kappa = kappa;
        self.tau = tau;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("omega0", self.omega0),
            ("omega3", self.omega3),
            ("omega_c", self.omega_c),
            ("g", self.g),
            ("Omega", self.omega),
            ("kappa", self.kappa),
            ("tau", self.tau),
        ];
        for (name, v) in fields {
            if !v.is_finite() {
                return Err(Error::InvalidArgument(format!("{name} is not finite")));
            }
        }
        if self.g <= 0.0 {
            return Err(Error::InvalidArgument("g must be positive".into()));
        }
        for (name, v) in [("kappa", self.kappa), ("tau", self.tau), ("Omega", self.omega)] {
            if v < 0.0 {
                return Err(Error::InvalidArgument(format!("{name} must be non-negative")));
            }
        }
        Ok(())
    }

    /// Δ = ω_c − ω₃ + ω₀.
    pub fn detuning(&self) -> f64 {
        self.omega_c - self.omega3 + self.omega0
    }

    /// g²Δ/(κ²+Δ²), the magnitude of the cavity-mediated level shift and
    /// exchange coupling.
    pub fn coherent_coefficient(&self) -> f64 {
        let d = self.detuning();
        self.g * self.g * d / (self.kappa * self.kappa + d * d)
    }

    /// 2g²κ/(κ²+Δ²), the rate of the collective decay channel left behind
    /// by eliminating the lossy cavity.
    pub fn collective_decay_rate(&self) -> f64 {
        let d = self.detuning();
        2.0 * self.g * self.g * self.kappa / (self.kappa * self.kappa + d * d)
    }

    /// g²/Δ.
    pub fn dispersive_coupling(&self) -> f64 {
        self.g * self.g / self.detuning()
    }

    /// Δ ≥ 10 g.
    pub fn dispersive(&self) -> bool {
        self.detuning() >= 10.0 * self.g
    }

    /// Δ ≥ 10 κ.
    pub fn cavity_safe(&self) -> bool {
        self.detuning() >= 10.0 * self.kappa
    }

    /// g²/Δ ≥ 10 τ.
    pub fn emission_safe(&self) -> bool {
        self.dispersive_coupling() >= 10.0 * self.tau
    }

    /// g²/Δ ≥ 10 Ω.
    pub fn rabi_slow(&self) -> bool {
        self.dispersive_coupling() >= 10.0 * self.omega
    }

    /// π√2/Ω, the time at which |10⟩ completes one Rabi cycle through |φ₋⟩.
    pub fn gate_time(&self) -> Result<f64> {
        gate_time(self.omega)
    }

    /// Largest dissipative rate appearing in the generators.
    pub fn max_rate(&self) -> f64 {
        (2.0 * self.kappa).max(2.0 * self.tau)
    }
}

pub fn gate_time(omega: f64) -> Result<f64> {
    if omega > 0.0 && omega.is_finite() {
        Ok(PI * SQRT_2 / omega)
    } else {
        Err(Error::InvalidArgument(format!(
            "gate time needs a positive Rabi amplitude, got {omega}"
        )))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Jump {
    pub operator: Operator,
    pub label: String,
}

/// Jump operators of a Lindblad dissipator, each entering as
/// `L ρ L† − ½{L†L, ρ}`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct JumpSet {
    jumps: Vec<Jump>,
}

impl JumpSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, operator: Operator, label: impl Into<String>) {
        if let Some(first) = self.jumps.first() {
            assert_eq!(first.operator.dim(), operator.dim(), "jump dimensions differ");
        }
        self.jumps.push(Jump {
            operator,
            label: label.into(),
        });
    }

    pub fn len(&self) -> usize {
        self.jumps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.jumps.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Jump> {
        self.jumps.iter()
    }

    pub fn extend(&mut self, other: JumpSet) {
        for j in other.jumps {
            self.push(j.operator, j.label);
        }
    }

    /// `Σ L†L`.
    pub fn decay_operator(&self, dim: usize) -> Operator {
        self.jumps.iter().fold(Operator::zeros(dim), |acc, j| {
            &acc + &(&j.operator.adjoint() * &j.operator)
        })
    }
}

fn require_lambda(spec: &HilbertSpec) -> Result<()> {
    for ion in [1, 2] {
        if !spec.contains_levels(ion, &[0, 1, 3]) {
            return Err(Error::InvalidArgument(format!(
                "ion {ion} needs levels {{0,1,3}}, has {:?}",
                spec.ion_levels(ion)
            )));
        }
    }
    Ok(())
}

fn nonzero_detuning(p: &SystemParams) -> Result<f64> {
    let d = p.detuning();
    if d == 0.0 {
        Err(Error::InvalidArgument(
            "detuning is zero; cavity elimination is singular".into(),
        ))
    } else {
        Ok(d)
    }
}

fn sigma(i: u8, j: u8, ion: usize, spec: &HilbertSpec) -> Result<Operator> {
    ion_transition(i, j, ion, spec)
}

fn sum(ops: &[Operator], dim: usize) -> Operator {
    ops.iter().fold(Operator::zeros(dim), |acc, o| &acc + o)
}

/// Bare energies ω₀(σ₀₀¹+σ₀₀²) + ω₃(σ₃₃¹+σ₃₃²) + ω_c a†a. Diagonal; the
/// interaction picture removes exactly these phases.
pub fn bare_hamiltonian(p: &SystemParams, spec: &HilbertSpec) -> Result<Operator> {
    require_lambda(spec)?;
    let d = spec.dim();
    let mut h = sum(&[sigma(0, 0, 1, spec)?, sigma(0, 0, 2, spec)?], d).scale(p.omega0);
    h = &h + &sum(&[sigma(3, 3, 1, spec)?, sigma(3, 3, 2, spec)?], d).scale(p.omega3);
    if spec.has_cavity() {
        h = &h + &photon_number(spec)?.scale(p.omega_c);
    }
    Ok(h.with_label("H0"))
}

/// The combined ion–cavity Hamiltonian, bare frequencies included:
///
/// ```text
/// H = ω₀(σ₀₀¹+σ₀₀²) + ω₃(σ₃₃¹+σ₃₃²) + ω_c a†a
///   + g a†(σ₀₃¹+σ₀₃²) + g a(σ₃₀¹+σ₃₀²) + Ω(σ₃₁¹+σ₁₃¹)
/// ```
pub fn full_hamiltonian(p: &SystemParams, spec: &HilbertSpec) -> Result<Operator> {
    p.validate()?;
    require_lambda(spec)?;
    if !spec.has_cavity() {
        return Err(Error::DimensionMismatch(
            "full Hamiltonian needs the cavity factor".into(),
        ));
    }
    let d = spec.dim();
    let a = cavity_annihilation(spec)?;
    let lower = sum(&[sigma(0, 3, 1, spec)?, sigma(0, 3, 2, spec)?], d);
    let coupling = &(&a.adjoint() * &lower) + &(&a * &lower.adjoint());
    let laser = &sigma(3, 1, 1, spec)? + &sigma(1, 3, 1, spec)?;
    let h = &(&bare_hamiltonian(p, spec)? + &coupling.scale(p.g)) + &laser.scale(p.omega);
    Ok(h.with_label("H_full"))
}

/// Spontaneous emission `√(2τ)σ₀₃ⁱ`, `√(2τ)σ₁₃ⁱ` for both ions.
pub fn atomic_jumps(p: &SystemParams, spec: &HilbertSpec) -> Result<JumpSet> {
    let mut set = JumpSet::new();
    if p.tau > 0.0 {
        let amp = (2.0 * p.tau).sqrt();
        for ion in [1, 2] {
            for lower in [0u8, 1] {
                set.push(
                    sigma(lower, 3, ion, spec)?.scale(amp),
                    format!("emission 3->{lower} ion{ion}"),
                );
            }
        }
    }
    Ok(set)
}

/// Cavity loss `√(2κ) a` followed by the four emission channels. Zero rates
/// drop their entries.
pub fn collect_jump_operators(p: &SystemParams, spec: &HilbertSpec) -> Result<JumpSet> {
    p.validate()?;
    require_lambda(spec)?;
    let mut set = JumpSet::new();
    if p.kappa > 0.0 && spec.has_cavity() {
        set.push(
            cavity_annihilation(spec)?.scale((2.0 * p.kappa).sqrt()),
            "cavity loss",
        );
    }
    set.extend(atomic_jumps(p, spec)?);
    Ok(set)
}

fn require_ions_only(spec: &HilbertSpec) -> Result<()> {
    if spec.has_cavity() {
        Err(Error::DimensionMismatch(
            "effective models act on the ions only; drop the cavity factor".into(),
        ))
    } else {
        Ok(())
    }
}

/// `σ₃₃¹ + σ₃₃² + σ₃₀¹σ₀₃² + σ₀₃¹σ₃₀²`: the operator structure of the
/// cavity-mediated shift and exchange.
pub fn exchange_operator(spec: &HilbertSpec) -> Result<Operator> {
    let d = spec.dim();
    let hop = &sigma(3, 0, 1, spec)? * &sigma(0, 3, 2, spec)?;
    Ok(sum(
        &[
            sigma(3, 3, 1, spec)?,
            sigma(3, 3, 2, spec)?,
            hop.adjoint(),
            hop,
        ],
        d,
    )
    .with_label("exchange"))
}

fn laser_term(p: &SystemParams, spec: &HilbertSpec) -> Result<Operator> {
    Ok((&sigma(3, 1, 1, spec)? + &sigma(1, 3, 1, spec)?).scale(p.omega))
}

/// Cavity-eliminated generator in the interaction picture, valid for an
/// initially empty cavity.
///
/// Coherent part: `−g²Δ/(κ²+Δ²)·(σ₃₃¹+σ₃₃²+σ₃₀¹σ₀₃²+σ₀₃¹σ₃₀²) + Ω(σ₃₁¹+σ₁₃¹)`.
/// Dissipation: the collective jump `√(2g²κ/(κ²+Δ²))·(σ₀₃¹+σ₀₃²)` plus the
/// unchanged spontaneous-emission jumps.
pub fn eliminated_generator(p: &SystemParams, spec: &HilbertSpec) -> Result<(Operator, JumpSet)> {
    p.validate()?;
    require_lambda(spec)?;
    require_ions_only(spec)?;
    nonzero_detuning(p)?;
    let h = &exchange_operator(spec)?.scale(-p.coherent_coefficient()) + &laser_term(p, spec)?;
    let mut jumps = JumpSet::new();
    let rate = p.collective_decay_rate();
    if rate > 0.0 {
        let collective = &sigma(0, 3, 1, spec)? + &sigma(0, 3, 2, spec)?;
        jumps.push(collective.scale(rate.sqrt()), "collective cavity decay");
    }
    jumps.extend(atomic_jumps(p, spec)?);
    Ok((h.with_label("H_eliminated"), jumps))
}

fn ket_bra(a: &StateVector, b: &StateVector) -> CMatrix {
    a.amplitudes() * b.amplitudes().adjoint()
}

/// Dispersive Hamiltonian in the basis {|00⟩,|01⟩,|10⟩,|11⟩,|31⟩,|13⟩,|33⟩,|φ±⟩}:
///
/// ```text
/// H = −(g²/Δ)(2|33⟩⟨33| + 2|φ₊⟩⟨φ₊| + |31⟩⟨31| + |13⟩⟨13|)
///   + Ω(|33⟩⟨13| + |31⟩⟨11| + |φ₊⟩⟨10|/√2 + |φ₋⟩⟨10|/√2) + h.c.
/// ```
///
/// Hermitian conjugates are added on the drive terms.
pub fn dispersive_hamiltonian(p: &SystemParams, spec: &HilbertSpec) -> Result<Operator> {
    p.validate()?;
    require_lambda(spec)?;
    require_ions_only(spec)?;
    nonzero_detuning(p)?;
    let ket = |a, b| basis_state(a, b, 0, spec);
    let (k33, k31, k13, k11, k10) = (ket(3, 3)?, ket(3, 1)?, ket(1, 3)?, ket(1, 1)?, ket(1, 0)?);
    let (plus, minus) = (phi_state(true, spec)?, phi_state(false, spec)?);

    let chi = p.dispersive_coupling();
    let shifts = ket_bra(&k33, &k33) * C64::from(2.0)
        + ket_bra(&plus, &plus) * C64::from(2.0)
        + ket_bra(&k31, &k31)
        + ket_bra(&k13, &k13);
    let drive = ket_bra(&k33, &k13)
        + ket_bra(&k31, &k11)
        + ket_bra(&plus, &k10) * C64::from(FRAC_1_SQRT_2)
        + ket_bra(&minus, &k10) * C64::from(FRAC_1_SQRT_2);
    let drive = (&drive + drive.adjoint()) * C64::from(p.omega);
    Ok(Operator::from_matrix(shifts * C64::from(-chi) + drive, "H_dispersive"))
}

/// Two-level gate model `(Ω/√2)(|φ₋⟩⟨10| + |10⟩⟨φ₋|)`.
pub fn reduced_hamiltonian(omega: f64, spec: &HilbertSpec) -> Result<Operator> {
    if !(omega > 0.0 && omega.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "reduced model needs Omega > 0, got {omega}"
        )));
    }
    require_lambda(spec)?;
    require_ions_only(spec)?;
    let minus = phi_state(false, spec)?;
    let k10 = basis_state(1, 0, 0, spec)?;
    let m = ket_bra(&minus, &k10);
    Ok(Operator::from_matrix(
        (&m + m.adjoint()) * C64::from(omega * FRAC_1_SQRT_2),
        "H_reduced",
    ))
}

/// Auxiliary-level model `(1/√2)(Ω₂|φ₋⟩⟨20| + Ω₁|φ₋⟩⟨10| + h.c.)`.
pub fn geometric_hamiltonian(omega1: C64, omega2: C64, spec: &HilbertSpec) -> Result<Operator> {
    require_ions_only(spec)?;
    if !spec.contains_levels(1, &[0, 1, 2, 3]) || !spec.contains_levels(2, &[0, 3]) {
        return Err(Error::InvalidArgument(
            "geometric model needs levels {0,1,2,3} on ion 1".into(),
        ));
    }
    let minus = phi_state(false, spec)?;
    let m = ket_bra(&minus, &basis_state(2, 0, 0, spec)?) * omega2
        + ket_bra(&minus, &basis_state(1, 0, 0, spec)?) * omega1;
    Ok(Operator::from_matrix(
        (&m + m.adjoint()) * C64::from(FRAC_1_SQRT_2),
        "H_geometric",
    ))
}

/// Drive pair that keeps `cos(θ/2)|10⟩ + sin(θ/2)e^{iφ}|20⟩` dark:
/// `Ω₁ = −Ω̄ sin(θ/2) e^{iφ}`, `Ω₂ = Ω̄ cos(θ/2)`.
pub fn dark_drive(theta: f64, phi: f64, omega_bar: f64) -> (C64, C64) {
    let (s, c) = (theta / 2.0).sin_cos();
    (
        C64::from_polar(-omega_bar * s, phi),
        C64::new(omega_bar * c, 0.0),
    )
}

/// `cos(θ/2)|10⟩ + sin(θ/2)e^{iφ}|20⟩`.
pub fn dark_state(theta: f64, phi: f64, spec: &HilbertSpec) -> Result<StateVector> {
    let (s, c) = (theta / 2.0).sin_cos();
    crate::hilbert::superposition(
        &[
            (C64::new(c, 0.0), (1, 0, 0)),
            (C64::from_polar(s, phi), (2, 0, 0)),
        ],
        spec,
    )
}

/// Named levels of the model hierarchy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Full,
    Eliminated,
    Dispersive,
    Reduced,
    Geometric,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::Full,
        ModelKind::Eliminated,
        ModelKind::Dispersive,
        ModelKind::Reduced,
        ModelKind::Geometric,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Full => "full",
            ModelKind::Eliminated => "eliminated",
            ModelKind::Dispersive => "dispersive",
            ModelKind::Reduced => "reduced",
            ModelKind::Geometric => "geometric",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown model `{s}`")))
    }
}

/// A model instantiated on its own space: Hamiltonian, jumps, and the
/// diagonal bare energies that define its interaction picture (empty for
/// models already written in that frame).
#[derive(Clone, Debug)]
pub struct ModelSystem {
    pub kind: ModelKind,
    pub spec: HilbertSpec,
    pub hamiltonian: Operator,
    pub jumps: JumpSet,
    pub frame_energies: Option<Vec<f64>>,
}

impl ModelSystem {
    /// `fock_cutoff` is used by the full model only. The geometric model is
    /// built at θ = 0 with Ω̄ = `p.omega`.
    pub fn build(kind: ModelKind, p: &SystemParams, fock_cutoff: usize) -> Result<Self> {
        p.validate()?;
        let ions = HilbertSpec::lambda_ions();
        let (spec, hamiltonian, jumps, frame_energies) = match kind {
            ModelKind::Full => {
                let spec = HilbertSpec::lambda(fock_cutoff)?;
                let h0 = bare_hamiltonian(p, &spec)?;
                let frame: Vec<f64> = (0..spec.dim()).map(|i| h0.get(i, i).re).collect();
                let frame = frame.iter().any(|&e| e != 0.0).then_some(frame);
                (
                    spec.clone(),
                    full_hamiltonian(p, &spec)?,
                    collect_jump_operators(p, &spec)?,
                    frame,
                )
            }
            ModelKind::Eliminated => {
                let (h, j) = eliminated_generator(p, &ions)?;
                (ions, h, j, None)
            }
            ModelKind::Dispersive => {
                let h = dispersive_hamiltonian(p, &ions)?;
                let j = atomic_jumps(p, &ions)?;
                (ions, h, j, None)
            }
            ModelKind::Reduced => {
                let h = reduced_hamiltonian(p.omega, &ions)?;
                (ions, h, JumpSet::new(), None)
            }
            ModelKind::Geometric => {
                let spec = HilbertSpec::auxiliary_ions();
                let (o1, o2) = dark_drive(0.0, 0.0, p.omega);
                (spec.clone(), geometric_hamiltonian(o1, o2, &spec)?, JumpSet::new(), None)
            }
        };
        Ok(Self {
            kind,
            spec,
            hamiltonian,
            jumps,
            frame_energies,
        })
    }

    pub fn is_closed(&self) -> bool {
        self.jumps.is_empty()
    }
}

/// Excitation number `a†a + σ₃₃¹ + σ₃₃²`, conserved by the full Hamiltonian
/// when the laser is off.
pub fn excitation_number(spec: &HilbertSpec) -> Result<Operator> {
    let d = spec.dim();
    let mut n = sum(&[sigma(3, 3, 1, spec)?, sigma(3, 3, 2, spec)?], d);
    if spec.has_cavity() {
        n = &n + &photon_number(spec)?;
    }
    Ok(n.with_label("N_exc"))
}
