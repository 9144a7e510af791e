//! Geometric conditional phase gate: closed loops in the (θ, φ) control
//! plane, adiabatic transport of |10⟩ through the dark state of the
//! auxiliary-level Hamiltonian, and comparison of the accumulated phase with
//! the enclosed solid angle.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{evolve_schrodinger_observed, Hamiltonian, StepControl};
use crate::error::{Error, Result};
use crate::format;
use crate::hilbert::{basis_state, CVector, HilbertSpec, Level, Operator};
use crate::model::{dark_drive, geometric_hamiltonian};

/// Largest allowed jump between consecutive segment endpoints.
pub const CONTINUITY_TOLERANCE: f64 = 1e-12;

/// Speed profile of a segment in its own parameter s ∈ [0, 1].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    Linear,
    /// `sin²(πs/2)`: zero velocity at both ends.
    SineSquared,
}

impl Profile {
    fn shape(self, s: f64) -> f64 {
        match self {
            Profile::Linear => s,
            Profile::SineSquared => (FRAC_PI_2 * s).sin().powi(2),
        }
    }
}

/// Straight arc from `start` to `end` in (θ, φ), traversed in `duration`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start: (f64, f64),
    pub end: (f64, f64),
    pub duration: f64,
    pub profile: Profile,
}

impl Segment {
    pub fn at(&self, s: f64) -> (f64, f64) {
        let w = self.profile.shape(s.clamp(0.0, 1.0));
        (
            self.start.0 + (self.end.0 - self.start.0) * w,
            self.start.1 + (self.end.1 - self.start.1) * w,
        )
    }

    fn reversed(&self) -> Segment {
        Segment {
            start: self.end,
            end: self.start,
            ..*self
        }
    }
}

/// A closed control loop starting and ending at θ = 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoopPath {
    segments: Vec<Segment>,
}

impl LoopPath {
    pub fn new(segments: Vec<Segment>) -> Result<Self> {
        if segments.is_empty() {
            return Err(Error::InvalidArgument("loop has no segments".into()));
        }
        for (k, seg) in segments.iter().enumerate() {
            if !(seg.duration > 0.0 && seg.duration.is_finite()) {
                return Err(Error::InvalidArgument(format!("segment {k} has non-positive duration")));
            }
            for th in [seg.start.0, seg.end.0] {
                if !(0.0..=PI).contains(&th) {
                    return Err(Error::InvalidArgument(format!("segment {k}: θ = {th} outside [0, π]")));
                }
            }
            if !(seg.start.1.is_finite() && seg.end.1.is_finite()) {
                return Err(Error::InvalidArgument(format!("segment {k}: φ is not finite")));
            }
            if k > 0 {
                let prev = segments[k - 1].end;
                let gap = (prev.0 - seg.start.0).abs().max((prev.1 - seg.start.1).abs());
                if gap > CONTINUITY_TOLERANCE {
                    return Err(Error::InvalidArgument(format!(
                        "segments {} and {k} are {gap:e} apart",
                        k - 1
                    )));
                }
            }
        }
        let first = segments[0].start.0;
        let last = segments[segments.len() - 1].end.0;
        if first.abs() > CONTINUITY_TOLERANCE || last.abs() > CONTINUITY_TOLERANCE {
            return Err(Error::InvalidArgument(format!(
                "loop must start and end at θ = 0, got {first} and {last}"
            )));
        }
        Ok(Self { segments })
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn total_time(&self) -> f64 {
        self.segments.iter().map(|s| s.duration).sum()
    }

    /// Net φ advance divided by 2π.
    pub fn winding(&self) -> f64 {
        let start = self.segments[0].start.1;
        let end = self.segments[self.segments.len() - 1].end.1;
        (end - start) / TAU
    }

    /// (θ, φ) at time t, clamped to [0, T].
    pub fn at(&self, t: f64) -> (f64, f64) {
        let mut rest = t.max(0.0);
        for seg in &self.segments {
            if rest <= seg.duration {
                return seg.at(rest / seg.duration);
            }
            rest -= seg.duration;
        }
        let last = self.segments[self.segments.len() - 1];
        last.end
    }

    /// Same loop traversed backwards.
    pub fn reversed(&self) -> LoopPath {
        LoopPath {
            segments: self.segments.iter().rev().map(Segment::reversed).collect(),
        }
    }

    /// Same geometry with every duration scaled to a new total time.
    pub fn retimed(&self, total: f64) -> Result<LoopPath> {
        let f = total / self.total_time();
        LoopPath::new(
            self.segments
                .iter()
                .map(|s| Segment {
                    duration: s.duration * f,
                    ..*s
                })
                .collect(),
        )
    }

    /// Largest endpoint gap between consecutive segments, and between the
    /// θ values at the two ends of the loop.
    pub fn continuity_gap(&self) -> f64 {
        let inner = self
            .segments
            .windows(2)
            .map(|w| (w[0].end.0 - w[1].start.0).abs().max((w[0].end.1 - w[1].start.1).abs()))
            .fold(0.0, f64::max);
        let th0 = self.segments[0].start.0;
        let th1 = self.segments[self.segments.len() - 1].end.0;
        inner.max((th0 - th1).abs())
    }
}

/// Cap loop: ramp θ 0 → θ₀ at φ = 0, sweep φ through `windings`·2π at θ₀,
/// ramp θ back to 0. Each ramp takes `ramp_fraction`·T. All three segments
/// use the sine-squared profile, so the control velocity vanishes at every
/// join. Negative `windings` sweep backwards.
pub fn cap_loop(theta0: f64, windings: f64, total_time: f64, ramp_fraction: f64) -> Result<LoopPath> {
    if !(theta0 > 0.0 && theta0 < PI) {
        return Err(Error::InvalidArgument(format!("theta0 must lie in (0, π), got {theta0}")));
    }
    if !(ramp_fraction > 0.0 && ramp_fraction < 0.5) {
        return Err(Error::InvalidArgument(format!(
            "ramp_fraction must lie in (0, 1/2), got {ramp_fraction}"
        )));
    }
    if !(windings != 0.0 && windings.is_finite()) {
        return Err(Error::InvalidArgument("windings must be non-zero".into()));
    }
    if !(total_time > 0.0 && total_time.is_finite()) {
        return Err(Error::InvalidArgument(format!("T must be positive, got {total_time}")));
    }
    let ramp = ramp_fraction * total_time;
    let sweep = total_time - 2.0 * ramp;
    let phi_end = TAU * windings;
    LoopPath::new(vec![
        Segment {
            start: (0.0, 0.0),
            end: (theta0, 0.0),
            duration: ramp,
            profile: Profile::SineSquared,
        },
        Segment {
            start: (theta0, 0.0),
            end: (theta0, phi_end),
            duration: sweep,
            profile: Profile::SineSquared,
        },
        Segment {
            start: (theta0, phi_end),
            end: (0.0, phi_end),
            duration: ramp,
            profile: Profile::SineSquared,
        },
    ])
}

/// Single-winding cap loop.
pub fn standard_loop(theta0: f64, total_time: f64, ramp_fraction: f64) -> Result<LoopPath> {
    cap_loop(theta0, 1.0, total_time, ramp_fraction)
}

/// (Ω₁, Ω₂) keeping the dark state at the path point reached at time t.
pub fn drive_amplitudes(path: &LoopPath, t: f64, omega_bar: f64) -> (C64, C64) {
    let (theta, phi) = path.at(t);
    dark_drive(theta, phi, omega_bar)
}

/// Sampling density used by [`surface_integral`] when none is given.
pub const DEFAULT_SURFACE_SAMPLES: usize = 10_000;

/// `∮(1 − cos θ) dφ` by the composite trapezoid rule, with `samples`
/// points spread over the segments in proportion to their durations
/// (segment endpoints always included). Signed by the sweep direction.
pub fn surface_integral(path: &LoopPath, samples: usize) -> Result<f64> {
    if path.continuity_gap() > CONTINUITY_TOLERANCE {
        return Err(Error::InvalidArgument("path is not closed".into()));
    }
    let total = path.total_time();
    let mut sum = 0.0;
    for seg in path.segments() {
        let n = ((samples as f64 * seg.duration / total).ceil() as usize).max(2);
        let mut prev = seg.at(0.0);
        for k in 1..n {
            let cur = seg.at(k as f64 / (n - 1) as f64);
            let f = 0.5 * ((1.0 - prev.0.cos()) + (1.0 - cur.0.cos()));
            sum += f * (cur.1 - prev.1);
            prev = cur;
        }
    }
    Ok(sum)
}

/// Wrap an angle into (−π, π].
pub fn wrap_phase(x: f64) -> f64 {
    let y = x.rem_euclid(TAU);
    if y > PI {
        y - TAU
    } else {
        y
    }
}

/// Loop block of a scenario: a cap loop and its drive strength.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoopSpec {
    pub theta0: f64,
    pub windings: f64,
    #[serde(rename = "T")]
    pub total_time: f64,
    pub ramp_fraction: f64,
    #[serde(rename = "Omega_bar")]
    pub omega_bar: f64,
}

impl Default for LoopSpec {
    /// θ₀ = 2π/3, one winding, Ω̄ = 0.01, Ω̄T = 2000, ramps of T/4.
    fn default() -> Self {
        Self {
            theta0: 2.0 * PI / 3.0,
            windings: 1.0,
            total_time: 2.0e5,
            ramp_fraction: 0.25,
            omega_bar: 0.01,
        }
    }
}

impl LoopSpec {
    pub fn path(&self) -> Result<LoopPath> {
        cap_loop(self.theta0, self.windings, self.total_time, self.ramp_fraction)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.omega_bar > 0.0 && self.omega_bar.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "Omega_bar must be positive, got {}",
                self.omega_bar
            )));
        }
        self.path().map(|_| ())
    }
}

/// Phase and amplitude with which a decoupled input returns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReturnedInput {
    pub label: String,
    pub amplitude: f64,
    pub phase: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BerryReport {
    /// arg⟨10|ψ(T)⟩, wrapped to (−π, π].
    pub numeric_phase: f64,
    /// Enclosed solid angle ∮(1 − cos θ) dφ.
    pub surface_integral: f64,
    pub half_surface_integral: f64,
    /// ∫|⟨ψ|H|ψ⟩| dt.
    pub dynamical_phase_bound: f64,
    /// Population outside span{|10⟩, |20⟩} at T.
    pub adiabatic_leakage: f64,
    /// |⟨10|ψ(T)⟩|.
    pub return_amplitude: f64,
    /// max_t |⟨ψ|H|ψ⟩| / Ω̄.
    pub max_dark_energy: f64,
    pub decoupled: Vec<ReturnedInput>,
    #[serde(rename = "loop")]
    pub loop_spec: LoopSpec,
    pub winding: f64,
    pub dt: f64,
    pub steps: usize,
    pub warnings: Vec<String>,
}

impl BerryReport {
    pub fn to_json(&self) -> Result<String> {
        format::to_json(self)
    }
}

/// Ω̄T per unit |winding| below which a run is flagged as non-adiabatic.
pub const ADIABATIC_THRESHOLD: f64 = 100.0;

/// Geometric Hamiltonian along `path` at time t.
pub fn loop_hamiltonian(path: &LoopPath, omega_bar: f64, spec: &HilbertSpec, t: f64) -> Operator {
    let (o1, o2) = drive_amplitudes(path, t, omega_bar);
    geometric_hamiltonian(o1, o2, spec).expect("auxiliary-level space")
}

struct Transport {
    final_state: CVector,
    dynamical: f64,
    max_energy: f64,
    dt: f64,
    steps: usize,
}

fn transport(
    path: &LoopPath,
    omega_bar: f64,
    spec: &HilbertSpec,
    input: (Level, Level),
    ctrl: &StepControl,
) -> Result<Transport> {
    let psi0 = basis_state(input.0, input.1, 0, spec)?;
    let h = |t: f64| loop_hamiltonian(path, omega_bar, spec, t);
    let mut dynamical = 0.0;
    let mut max_energy: f64 = 0.0;
    let mut last: Option<(f64, f64)> = None;
    let tr = evolve_schrodinger_observed(&psi0, Hamiltonian::Driven(&h), path.total_time(), ctrl, |t, psi| {
        let m = h(t);
        let e = (psi.adjoint() * m.matrix() * psi)[(0, 0)].re.abs();
        max_energy = max_energy.max(e);
        if let Some((t0, e0)) = last {
            dynamical += 0.5 * (e0 + e) * (t - t0);
        }
        last = Some((t, e));
    })?;
    Ok(Transport {
        final_state: tr.final_state().amplitudes().clone(),
        dynamical,
        max_energy,
        dt: tr.meta.dt,
        steps: tr.meta.steps,
    })
}

/// Transport all four computational inputs around the loop and compare
/// the phase picked up by |10⟩ with the enclosed solid angle.
pub fn adiabatic_run(spec_loop: &LoopSpec, ctrl: &StepControl) -> Result<BerryReport> {
    spec_loop.validate()?;
    let path = spec_loop.path()?;
    adiabatic_run_path(&path, spec_loop.omega_bar, ctrl).map(|mut r| {
        r.loop_spec = *spec_loop;
        r
    })
}

/// [`adiabatic_run`] on an arbitrary closed path.
pub fn adiabatic_run_path(path: &LoopPath, omega_bar: f64, ctrl: &StepControl) -> Result<BerryReport> {
    if !(omega_bar > 0.0 && omega_bar.is_finite()) {
        return Err(Error::InvalidArgument(format!("Omega_bar must be positive, got {omega_bar}")));
    }
    let spec = HilbertSpec::auxiliary_ions();
    let inputs: [(Level, Level); 4] = [(1, 0), (0, 0), (0, 1), (1, 1)];
    let runs: Vec<Transport> = inputs
        .par_iter()
        .map(|&k| transport(path, omega_bar, &spec, k, ctrl))
        .collect::<Result<_>>()?;

    let i10 = spec.index(1, 0, 0)?;
    let i20 = spec.index(2, 0, 0)?;
    let main = &runs[0];
    let a10 = main.final_state[i10];
    let a20 = main.final_state[i20];
    let leakage = (main.final_state.norm_squared() - a10.norm_sqr() - a20.norm_sqr()).clamp(0.0, 1.0);

    let decoupled = inputs[1..]
        .iter()
        .zip(&runs[1..])
        .map(|(&(a, b), run)| {
            let amp = run.final_state[spec.index(a, b, 0).expect("computational label")];
            ReturnedInput {
                label: format!("{a}{b}"),
                amplitude: amp.norm(),
                phase: amp.arg(),
            }
        })
        .collect();

    let surface = surface_integral(path, DEFAULT_SURFACE_SAMPLES)?;
    let winding = path.winding();
    let mut warnings = Vec::new();
    let adiabaticity = omega_bar * path.total_time();
    if adiabaticity < ADIABATIC_THRESHOLD * winding.abs() {
        warnings.push(format!(
            "Omega_bar*T = {adiabaticity} is below {ADIABATIC_THRESHOLD} per winding; transport is not adiabatic"
        ));
    }
    let (theta0, _) = path.segments().iter().map(|s| s.end).fold((0.0, 0.0), |acc: (f64, f64), e| {
        if e.0 > acc.0 {
            e
        } else {
            acc
        }
    });
    Ok(BerryReport {
        numeric_phase: wrap_phase(a10.arg()),
        surface_integral: surface,
        half_surface_integral: 0.5 * surface,
        dynamical_phase_bound: main.dynamical,
        adiabatic_leakage: leakage,
        return_amplitude: a10.norm(),
        max_dark_energy: main.max_energy / omega_bar,
        decoupled,
        loop_spec: LoopSpec {
            theta0,
            windings: winding,
            total_time: path.total_time(),
            ramp_fraction: path.segments()[0].duration / path.total_time(),
            omega_bar,
        },
        winding,
        dt: main.dt,
        steps: main.steps,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::dark_state;
    use proptest::prelude::*;

    #[test]
    fn cap_areas() {
        for (theta0, area) in [(FRAC_PI_2, TAU), (2.0 * PI / 3.0, 3.0 * PI)] {
            let path = standard_loop(theta0, 100.0, 0.2).unwrap();
            let s = surface_integral(&path, DEFAULT_SURFACE_SAMPLES).unwrap();
            assert!((s - area).abs() < 1e-6, "{s} vs {area}");
        }
    }

    #[test]
    fn winding_and_reversal_scale_the_area() {
        let one = surface_integral(&cap_loop(1.0, 1.0, 10.0, 0.1).unwrap(), 1000).unwrap();
        let two = surface_integral(&cap_loop(1.0, 2.0, 10.0, 0.1).unwrap(), 1000).unwrap();
        let back = surface_integral(&cap_loop(1.0, 1.0, 10.0, 0.1).unwrap().reversed(), 1000).unwrap();
        assert!((two - 2.0 * one).abs() < 1e-12);
        assert!((back + one).abs() < 1e-12);
        let tiny = surface_integral(&standard_loop(1e-9, 10.0, 0.1).unwrap(), 1000).unwrap();
        assert!(tiny.abs() < 1e-15);
    }

    #[test]
    fn loop_closure() {
        let path = standard_loop(2.0, 50.0, 0.25).unwrap();
        assert!(path.continuity_gap() <= 1e-12);
        assert_eq!(path.at(0.0).0, 0.0);
        assert!(path.at(50.0).0.abs() < 1e-15);
        assert!((path.at(25.0).0 - 2.0).abs() < 1e-15);
        assert!((path.total_time() - 50.0).abs() < 1e-12);
        assert!(standard_loop(0.0, 1.0, 0.2).is_err());
        assert!(standard_loop(1.0, 1.0, 0.5).is_err());
        let open = LoopPath::new(vec![Segment {
            start: (0.0, 0.0),
            end: (1.0, 0.0),
            duration: 1.0,
            profile: Profile::Linear,
        }]);
        assert!(open.is_err());
    }

    #[test]
    fn drive_examples() {
        let path = standard_loop(FRAC_PI_2, 1.0, 0.2).unwrap();
        let (o1, o2) = drive_amplitudes(&path, 0.0, 0.3);
        assert_eq!(o1.norm(), 0.0);
        assert_eq!(o2, C64::from(0.3));
        let (o1, o2) = drive_amplitudes(&path, 0.2, 0.3);
        assert!((o1.norm() - 0.3 / 2f64.sqrt()).abs() < 1e-15);
        assert!((o2.norm() - 0.3 / 2f64.sqrt()).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn dark_state_along_loop(theta0 in 0.1f64..3.0, windings in -2.0f64..2.0, s in 0.0f64..1.0) {
            prop_assume!(windings.abs() > 0.05);
            let path = cap_loop(theta0, windings, 10.0, 0.2).unwrap();
            let spec = HilbertSpec::auxiliary_ions();
            let t = s * path.total_time();
            let (theta, phi) = path.at(t);
            let (o1, o2) = drive_amplitudes(&path, t, 0.7);
            if o2.norm() > 1e-12 {
                prop_assert!((o1.norm() / o2.norm() - (theta / 2.0).tan()).abs() < 1e-12 * (1.0 + (theta / 2.0).tan()));
            }
            let h = loop_hamiltonian(&path, 0.7, &spec, t);
            let d = dark_state(theta, phi, &spec).unwrap();
            let hd = h.apply(&d).unwrap();
            prop_assert!(hd.iter().all(|z| z.norm() < 1e-12));
        }
    }

    #[test]
    fn wrapping() {
        assert!((wrap_phase(3.0 * PI / 2.0) + FRAC_PI_2).abs() < 1e-15);
        assert_eq!(wrap_phase(PI), PI);
        assert_eq!(wrap_phase(-PI), PI);
        assert!(wrap_phase(0.1).abs() - 0.1 < 1e-15);
    }

    #[test]
    fn fast_loop_warns_and_leaks() {
        let spec = LoopSpec {
            total_time: 500.0,
            omega_bar: 0.1,
            ..LoopSpec::default()
        };
        let r = adiabatic_run(&spec, &StepControl::default()).unwrap();
        assert_eq!(r.warnings.len(), 1);
        for d in &r.decoupled {
            assert_eq!(d.amplitude, 1.0);
            assert_eq!(d.phase, 0.0);
        }
    }
}
