//! Phase-gate protocol: run the four computational inputs through a model,
//! extract the 4×4 gate on the computational ⊗ vacuum subspace, score it
//! against diag(1, 1, −1, 1), and scan the score across parameter regimes.

use std::fmt::Write as _;

use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    evolve_master_observed, evolve_operator, evolve_schrodinger_observed,
    matrix_to_interaction_picture, state_to_interaction_picture, trace_distance, Hamiltonian,
    StepControl,
};
use crate::error::{Error, Result};
use crate::format;
use crate::hilbert::{superposition, CMatrix, DensityMatrix, Level, StateVector};
use crate::model::{gate_time, ModelKind, ModelSystem, SystemParams};

/// Computational basis in gate order |00⟩, |01⟩, |10⟩, |11⟩.
pub const COMPUTATIONAL: [(Level, Level); 4] = [(0, 0), (0, 1), (1, 0), (1, 1)];

/// A superposition of ion basis kets, always prepared with an empty cavity.
pub type IonInput = Vec<(C64, (Level, Level))>;

pub fn basis_input(l1: Level, l2: Level) -> IonInput {
    vec![(C64::from(1.0), (l1, l2))]
}

/// The four computational inputs and the uniform superposition |++⟩.
pub fn probe_inputs() -> Vec<IonInput> {
    let mut v: Vec<IonInput> = COMPUTATIONAL.iter().map(|&(a, b)| basis_input(a, b)).collect();
    v.push(COMPUTATIONAL.iter().map(|&k| (C64::from(0.5), k)).collect());
    v
}

/// diag(1, 1, −1, 1).
pub fn ideal_phase_gate() -> CMatrix {
    let mut u = CMatrix::identity(4, 4);
    u[(2, 2)] = C64::from(-1.0);
    u
}

/// `|Tr(ideal† · extracted)|² / 16`.
pub fn gate_fidelity(extracted: &CMatrix, ideal: &CMatrix) -> Result<f64> {
    if extracted.shape() != (4, 4) || ideal.shape() != (4, 4) {
        return Err(Error::DimensionMismatch(format!(
            "gate fidelity needs 4x4 matrices, got {:?} and {:?}",
            extracted.shape(),
            ideal.shape()
        )));
    }
    let u = ideal.adjoint() * ideal;
    if (u - CMatrix::identity(4, 4)).iter().any(|z| z.norm() > 1e-9) {
        return Err(Error::InvalidArgument("ideal gate is not unitary".into()));
    }
    let overlap = (ideal.adjoint() * extracted).trace();
    Ok(overlap.norm_sqr() / 16.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GateReport {
    pub model: ModelKind,
    pub params: SystemParams,
    /// Only meaningful for the full model.
    pub fock_cutoff: Option<usize>,
    pub t_gate: f64,
    pub dt: f64,
    pub steps: usize,
    /// Row i, column j: amplitude ⟨i|U|j⟩ in the interaction picture.
    #[serde(with = "format::complex_matrix")]
    pub extracted_gate: CMatrix,
    /// Population outside computational ⊗ vacuum at t_gate, per input.
    pub leakage: [f64; 4],
    pub fidelity: f64,
    /// arg of the |10⟩ → |10⟩ amplitude.
    pub phase_10: f64,
    pub max_trace_error: f64,
}

impl GateReport {
    pub fn infidelity(&self) -> f64 {
        1.0 - self.fidelity
    }

    pub fn to_json(&self) -> Result<String> {
        format::to_json(self)
    }
}

fn prepare(sys: &ModelSystem, input: &IonInput) -> Result<StateVector> {
    prepare_with_photons(sys, input, 0)
}

/// `input` on the ions, `photons` in the cavity (must be 0 without one).
pub fn prepare_with_photons(sys: &ModelSystem, input: &IonInput, photons: usize) -> Result<StateVector> {
    let terms: Vec<_> = input.iter().map(|&(c, (a, b))| (c, (a, b, photons))).collect();
    superposition(&terms, &sys.spec)
}

fn computational_indices(sys: &ModelSystem) -> Result<[usize; 4]> {
    let mut idx = [0; 4];
    for (k, &(a, b)) in COMPUTATIONAL.iter().enumerate() {
        idx[k] = sys.spec.index(a, b, 0)?;
    }
    Ok(idx)
}

fn frame_phase(sys: &ModelSystem, row: usize, col: usize, t: f64) -> C64 {
    match &sys.frame_energies {
        Some(e) => C64::from_polar(1.0, (e[row] - e[col]) * t),
        None => C64::from(1.0),
    }
}

fn check_gate_model(kind: ModelKind) -> Result<()> {
    if kind == ModelKind::Geometric {
        return Err(Error::InvalidArgument(
            "the geometric model is driven around a loop; use the berry task".into(),
        ));
    }
    Ok(())
}

fn resolve_t_gate(p: &SystemParams, t_gate: Option<f64>) -> Result<f64> {
    match t_gate {
        Some(t) if t > 0.0 && t.is_finite() => Ok(t),
        Some(t) => Err(Error::InvalidArgument(format!("t_gate must be positive, got {t}"))),
        None => gate_time(p.omega),
    }
}

/// Evolve the four computational inputs of `kind` for `t_gate`
/// (default π√2/Ω) and score the resulting gate.
///
/// Closed models integrate the Schrödinger equation. With dissipation the
/// amplitude column j is read from the coherence `|j⟩⟨00|` evolved under the
/// full Lindblad generator (|00⟩ is untouched by every coupling and jump, so
/// this is the no-jump amplitude), and leakage from the density matrix
/// `|j⟩⟨j|`.
pub fn extract_gate(
    kind: ModelKind,
    p: &SystemParams,
    fock_cutoff: usize,
    t_gate: Option<f64>,
    ctrl: &StepControl,
) -> Result<GateReport> {
    check_gate_model(kind)?;
    let t = resolve_t_gate(p, t_gate)?;
    let sys = ModelSystem::build(kind, p, fock_cutoff)?;
    let comp = computational_indices(&sys)?;
    let h = Hamiltonian::Constant(&sys.hamiltonian);
    let mut gate = CMatrix::zeros(4, 4);
    let mut leakage = [0.0; 4];
    let (dt, steps, max_trace_error);

    if sys.is_closed() {
        let runs: Vec<_> = COMPUTATIONAL
            .par_iter()
            .map(|&(a, b)| {
                let psi0 = prepare(&sys, &basis_input(a, b))?;
                evolve_schrodinger_observed(&psi0, h, t, ctrl, |_, _| {})
            })
            .collect::<Result<_>>()?;
        for (j, run) in runs.iter().enumerate() {
            let mut psi = run.final_state().amplitudes().clone();
            if let Some(e) = &sys.frame_energies {
                psi = state_to_interaction_picture(&psi, e, t);
            }
            for (i, &r) in comp.iter().enumerate() {
                gate[(i, j)] = psi[r];
            }
            let kept: f64 = comp.iter().map(|&r| psi[r].norm_sqr()).sum();
            leakage[j] = (psi.norm_squared() - kept).clamp(0.0, 1.0);
        }
        dt = runs[0].meta.dt;
        steps = runs[0].meta.steps;
        max_trace_error = runs.iter().map(|r| r.meta.max_trace_error).fold(0.0, f64::max);
    } else {
        let dim = sys.spec.dim();
        let zz = comp[0];
        // jobs 0..4 are coherences, 4..8 populations
        let runs: Vec<_> = (0..8)
            .into_par_iter()
            .map(|job| {
                let j = comp[job % 4];
                if job < 4 {
                    let mut x0 = CMatrix::zeros(dim, dim);
                    x0[(j, zz)] = C64::from(1.0);
                    let tr = evolve_operator(&x0, h, &sys.jumps, t, ctrl)?;
                    Ok((tr.final_state().clone(), tr.meta))
                } else {
                    let mut x0 = CMatrix::zeros(dim, dim);
                    x0[(j, j)] = C64::from(1.0);
                    let rho0 = DensityMatrix::new(x0)?;
                    let tr = evolve_master_observed(&rho0, h, &sys.jumps, t, ctrl, |_, _| {})?;
                    Ok((tr.final_state().matrix().clone(), tr.meta))
                }
            })
            .collect::<Result<_>>()?;
        for j in 0..4 {
            let (x, _) = &runs[j];
            for (i, &r) in comp.iter().enumerate() {
                gate[(i, j)] = x[(r, zz)] * frame_phase(&sys, r, zz, t);
            }
            let (rho, _) = &runs[4 + j];
            let kept: f64 = comp.iter().map(|&r| rho[(r, r)].re).sum();
            leakage[j] = (1.0 - kept).clamp(0.0, 1.0);
        }
        dt = runs[0].1.dt;
        steps = runs[0].1.steps;
        max_trace_error = runs[4..].iter().map(|r| r.1.max_trace_error).fold(0.0, f64::max);
    }

    let fidelity = gate_fidelity(&gate, &ideal_phase_gate())?.clamp(0.0, 1.0);
    Ok(GateReport {
        model: kind,
        params: *p,
        fock_cutoff: sys.spec.fock_cutoff(),
        t_gate: t,
        dt,
        steps,
        phase_10: gate[(2, 2)].arg(),
        extracted_gate: gate,
        leakage,
        fidelity,
        max_trace_error,
    })
}

/// Ion-reduced, interaction-picture states sampled along one run.
#[derive(Clone, Debug)]
pub struct IonTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<DensityMatrix>,
    /// Largest ⟨a†a⟩ over every integration step (0 without a cavity).
    pub peak_photons: f64,
    pub max_trace_error: f64,
    pub max_hermiticity_drift: f64,
    pub min_eigenvalue: f64,
}

fn photon_counts(sys: &ModelSystem) -> Vec<f64> {
    (0..sys.spec.dim()).map(|i| sys.spec.labels(i).2 as f64).collect()
}

/// Interaction-picture, cavity-traced state at time t.
pub fn to_ion_state(sys: &ModelSystem, rho: &CMatrix, t: f64) -> Result<DensityMatrix> {
    let framed = match &sys.frame_energies {
        Some(e) => matrix_to_interaction_picture(rho, e, t),
        None => rho.clone(),
    };
    DensityMatrix::from_raw(framed).trace_out_cavity(&sys.spec)
}

/// Evolve one input and return the ion-reduced state at every frame kept by
/// `ctrl` (use [`StepControl::frames`] for evenly spaced samples).
pub fn ion_trajectory(
    sys: &ModelSystem,
    input: &IonInput,
    t_final: f64,
    ctrl: &StepControl,
) -> Result<IonTrajectory> {
    let psi0 = prepare(sys, input)?;
    let n = photon_counts(sys);
    let mut peak: f64 = 0.0;
    let h = Hamiltonian::Constant(&sys.hamiltonian);
    let (times, raw, meta) = if sys.is_closed() {
        let tr = evolve_schrodinger_observed(&psi0, h, t_final, ctrl, |_, psi| {
            let p: f64 = psi.iter().zip(&n).map(|(a, k)| a.norm_sqr() * k).sum();
            peak = peak.max(p);
        })?;
        let raw: Vec<CMatrix> = tr
            .states
            .iter()
            .map(|s| s.amplitudes() * s.amplitudes().adjoint())
            .collect();
        (tr.times, raw, tr.meta)
    } else {
        let rho0 = DensityMatrix::from_pure(&psi0);
        let tr = evolve_master_observed(&rho0, h, &sys.jumps, t_final, ctrl, |_, rho| {
            let p: f64 = (0..rho.nrows()).map(|i| rho[(i, i)].re * n[i]).sum();
            peak = peak.max(p);
        })?;
        let raw: Vec<CMatrix> = tr.states.into_iter().map(|s| s.into_matrix()).collect();
        (tr.times, raw, tr.meta)
    };
    let mut min_eigenvalue = f64::INFINITY;
    let mut states = Vec::with_capacity(raw.len());
    for (t, rho) in times.iter().zip(&raw) {
        let full = DensityMatrix::from_raw(rho.clone());
        min_eigenvalue = min_eigenvalue.min(full.min_eigenvalue());
        states.push(to_ion_state(sys, rho, *t)?);
    }
    Ok(IonTrajectory {
        times,
        states,
        peak_photons: peak,
        max_trace_error: meta.max_trace_error,
        max_hermiticity_drift: meta.max_hermiticity_drift,
        min_eigenvalue,
    })
}

/// Largest ion-reduced trace distance between two models at time `t` over
/// [`probe_inputs`].
pub fn model_distance(a: &ModelSystem, b: &ModelSystem, t: f64, ctrl: &StepControl) -> Result<f64> {
    if a.spec.ion_levels(1) != b.spec.ion_levels(1) || a.spec.ion_levels(2) != b.spec.ion_levels(2) {
        return Err(Error::DimensionMismatch(format!(
            "models `{}` and `{}` act on different ion levels",
            a.kind, b.kind
        )));
    }
    let inputs = probe_inputs();
    let d: Vec<f64> = inputs
        .par_iter()
        .map(|input| {
            let ra = ion_trajectory(a, input, t, ctrl)?;
            let rb = ion_trajectory(b, input, t, ctrl)?;
            Ok(trace_distance(ra.final_state_matrix(), rb.final_state_matrix()))
        })
        .collect::<Result<_>>()?;
    Ok(d.into_iter().fold(0.0, f64::max))
}

impl IonTrajectory {
    fn final_state_matrix(&self) -> &CMatrix {
        self.states.last().expect("trajectory holds t = 0").matrix()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScanAxis {
    Delta,
    #[serde(rename = "kappa")]
    Kappa,
    #[serde(rename = "tau")]
    Tau,
    Omega,
    #[serde(rename = "fock_cutoff")]
    FockCutoff,
}

impl ScanAxis {
    pub fn name(self) -> &'static str {
        match self {
            ScanAxis::Delta => "Delta",
            ScanAxis::Kappa => "kappa",
            ScanAxis::Tau => "tau",
            ScanAxis::Omega => "Omega",
            ScanAxis::FockCutoff => "fock_cutoff",
        }
    }
}

/// One regime scan. With `omega_ratio` set, Ω is recomputed at every point
/// as `omega_ratio · g²/Δ`; with `t_gate` unset it is π√2/Ω per point.
#[derive(Clone, Debug, PartialEq)]
pub struct ScanPlan {
    pub axis: ScanAxis,
    pub values: Vec<f64>,
    pub base: SystemParams,
    pub fock_cutoff: usize,
    pub model: ModelKind,
    pub reference: Option<ModelKind>,
    pub omega_ratio: Option<f64>,
    pub t_gate: Option<f64>,
    pub ctrl: StepControl,
}

impl ScanPlan {
    pub fn validate(&self) -> Result<()> {
        check_gate_model(self.model)?;
        if let Some(r) = self.reference {
            check_gate_model(r)?;
        }
        if self.values.is_empty() {
            return Err(Error::InvalidArgument("scan values are empty".into()));
        }
        for (k, &v) in self.values.iter().enumerate() {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("scan value {v} is not positive")));
            }
            if k > 0 && v <= self.values[k - 1] {
                return Err(Error::InvalidArgument("scan values must be strictly increasing".into()));
            }
            if self.axis == ScanAxis::FockCutoff && v.fract() != 0.0 {
                return Err(Error::InvalidArgument(format!("fock cutoff {v} is not an integer")));
            }
        }
        if let Some(r) = self.omega_ratio {
            if !(r > 0.0 && r.is_finite()) {
                return Err(Error::InvalidArgument("omega_ratio must be positive".into()));
            }
        }
        Ok(())
    }

    /// Parameters and cutoff at one axis value.
    pub fn point(&self, value: f64) -> (SystemParams, usize) {
        let mut p = self.base;
        let mut cutoff = self.fock_cutoff;
        match self.axis {
            ScanAxis::Delta => p.omega_c = value + p.omega3 - p.omega0,
            ScanAxis::Kappa => p.kappa = value,
            ScanAxis::Tau => p.tau = value,
            ScanAxis::Omega => p.omega = value,
            ScanAxis::FockCutoff => cutoff = value as usize,
        }
        if let Some(r) = self.omega_ratio {
            p.omega = r * p.dispersive_coupling();
        }
        (p, cutoff)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScanRow {
    pub axis_value: f64,
    pub report: Option<GateReport>,
    /// Set when the plan names a reference model.
    pub ref_distance: Option<f64>,
    pub error: Option<String>,
}

impl ScanRow {
    pub fn ok(&self) -> bool {
        self.error.is_none()
    }
}

fn scan_point(plan: &ScanPlan, value: f64) -> Result<(GateReport, Option<f64>)> {
    let (p, cutoff) = plan.point(value);
    let report = extract_gate(plan.model, &p, cutoff, plan.t_gate, &plan.ctrl)?;
    let dist = match plan.reference {
        Some(r) => {
            let a = ModelSystem::build(plan.model, &p, cutoff)?;
            let b = ModelSystem::build(r, &p, cutoff)?;
            Some(model_distance(&a, &b, report.t_gate, &plan.ctrl)?)
        }
        None => None,
    };
    Ok((report, dist))
}

/// Run every point of the plan on a pool of `workers` threads. Rows come
/// back in input order; a failing point yields a failed row.
pub fn regime_scan(plan: &ScanPlan, workers: usize) -> Result<Vec<ScanRow>> {
    plan.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidState(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(|| {
        plan.values
            .par_iter()
            .map(|&v| match scan_point(plan, v) {
                Ok((report, ref_distance)) => ScanRow {
                    axis_value: v,
                    report: Some(report),
                    ref_distance,
                    error: None,
                },
                Err(e) => ScanRow {
                    axis_value: v,
                    report: None,
                    ref_distance: None,
                    error: Some(e.to_string()),
                },
            })
            .collect()
    }))
}

pub const SCAN_HEADER: &str = "axis_value,fidelity,leak00,leak01,leak10,leak11,phase_10,status";

/// Scan table as CSV. A `ref_distance` column is appended when
/// `with_reference` is set. Failed rows leave numeric fields empty.
pub fn scan_csv(rows: &[ScanRow], with_reference: bool) -> String {
    let mut out = String::from(SCAN_HEADER);
    if with_reference {
        out.push_str(",ref_distance");
    }
    out.push('\n');
    for row in rows {
        out.push_str(&format::sci17(row.axis_value));
        match &row.report {
            Some(r) if row.ok() => {
                for x in [r.fidelity, r.leakage[0], r.leakage[1], r.leakage[2], r.leakage[3], r.phase_10] {
                    let _ = write!(out, ",{}", format::sci17(x));
                }
                out.push_str(",ok");
            }
            _ => out.push_str(",,,,,,,failed"),
        }
        if with_reference {
            match row.ref_distance {
                Some(d) if row.ok() => {
                    let _ = write!(out, ",{}", format::sci17(d));
                }
                _ => out.push(','),
            }
        }
        out.push('\n');
    }
    out
}

/// Sum of |amplitude|² in each column, for unitarity accounting.
pub fn column_norms(gate: &CMatrix) -> [f64; 4] {
    let mut n = [0.0; 4];
    for (j, v) in n.iter_mut().enumerate() {
        *v = (0..4).map(|i| gate[(i, j)].norm_sqr()).sum();
    }
    n
}
