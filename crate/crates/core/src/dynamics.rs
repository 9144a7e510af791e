//! Fixed-step RK4 integration of the Schrödinger and Lindblad equations,
//! an eigendecomposition propagator used as an independent oracle, and
//! state-comparison metrics.
//!
//! Density matrices are integrated directly as matrices. After every step
//! the state is re-Hermitized and its trace checked; positivity is only
//! monitored, never projected.

use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::hilbert::{
    hermitian_part, same_dim, AsDensity, CMatrix, CVector, DensityMatrix,
    Operator, StateVector, ZERO,
};
use crate::model::JumpSet;

/// Default step is `DEFAULT_STEP_SCALE / max(‖H‖, rates)`.
pub const DEFAULT_STEP_SCALE: f64 = 0.05;

/// Abort threshold for |Tr ρ − 1| and |‖ψ‖ − 1|.
pub const DEFAULT_TRACE_TOLERANCE: f64 = 1e-6;

const I: C64 = C64 { re: 0.0, im: 1.0 };

#[derive(Clone, Debug, PartialEq)]
pub struct StepControl {
    /// Base step; `None` picks [`DEFAULT_STEP_SCALE`] over the generator scale.
    pub dt: Option<f64>,
    /// Keep every n-th step; 0 keeps only the endpoints.
    pub record_every: usize,
    /// When set, the step count is rounded up to a multiple of this and
    /// exactly this many evenly spaced frames (plus t = 0) are kept.
    /// Overrides `record_every`.
    pub frames: Option<usize>,
    pub trace_tolerance: f64,
    /// Re-run at dt/2 and report the largest change of any sampled state.
    pub richardson_check: bool,
}

impl Default for StepControl {
    fn default() -> Self {
        Self {
            dt: None,
            record_every: 0,
            frames: None,
            trace_tolerance: DEFAULT_TRACE_TOLERANCE,
            richardson_check: false,
        }
    }
}

impl StepControl {
    pub fn with_dt(dt: f64) -> Self {
        Self {
            dt: Some(dt),
            ..Self::default()
        }
    }

    pub fn frames(mut self, n: usize) -> Self {
        self.frames = Some(n);
        self
    }

    pub fn record_every(mut self, stride: usize) -> Self {
        self.record_every = stride;
        self
    }

    pub fn richardson(mut self, on: bool) -> Self {
        self.richardson_check = on;
        self
    }

    fn validate(&self) -> Result<()> {
        if let Some(dt) = self.dt {
            if !(dt > 0.0 && dt.is_finite()) {
                return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
            }
        }
        if self.trace_tolerance.is_nan() || self.trace_tolerance <= 0.0 {
            return Err(Error::InvalidArgument("trace tolerance must be positive".into()));
        }
        if self.frames == Some(0) {
            return Err(Error::InvalidArgument("frames must be at least 1".into()));
        }
        Ok(())
    }

    fn halved(&self) -> Self {
        Self {
            dt: self.dt.map(|d| d / 2.0),
            record_every: self.record_every * 2,
            richardson_check: false,
            ..self.clone()
        }
    }
}

/// Time grid actually used by a run.
#[derive(Clone, Copy, Debug)]
struct Grid {
    steps: usize,
    dt: f64,
    stride: usize,
}

impl Grid {
    fn new(t_final: f64, scale: f64, ctrl: &StepControl) -> Result<Self> {
        ctrl.validate()?;
        if !(t_final >= 0.0 && t_final.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "final time must be non-negative, got {t_final}"
            )));
        }
        if t_final == 0.0 {
            return Ok(Self {
                steps: 0,
                dt: 0.0,
                stride: 1,
            });
        }
        let base = ctrl.dt.unwrap_or(if scale > 0.0 {
            DEFAULT_STEP_SCALE / scale
        } else {
            t_final
        });
        let mut steps = (t_final / base).ceil().max(1.0) as usize;
        let stride = match ctrl.frames {
            Some(n) => {
                steps = steps.div_ceil(n) * n;
                steps / n
            }
            None if ctrl.record_every == 0 => steps,
            None => ctrl.record_every,
        };
        Ok(Self {
            steps,
            dt: t_final / steps as f64,
            stride,
        })
    }

    fn records(&self, step: usize) -> bool {
        step.is_multiple_of(self.stride) || step == self.steps
    }
}

/// Run diagnostics attached to a trajectory.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrajectoryMeta {
    pub generator: String,
    pub dt: f64,
    pub steps: usize,
    pub trace_tolerance: f64,
    /// Largest |Tr ρ − 1| (or |‖ψ‖ − 1|) seen after any step.
    pub max_trace_error: f64,
    /// Largest max|ρ − ρ†| before re-Hermitization.
    pub max_hermiticity_drift: f64,
    pub richardson_delta: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct Trajectory<S> {
    pub times: Vec<f64>,
    pub states: Vec<S>,
    pub meta: TrajectoryMeta,
}

impl<S> Trajectory<S> {
    pub fn final_state(&self) -> &S {
        self.states.last().expect("trajectory holds at least the initial state")
    }

    pub fn final_time(&self) -> f64 {
        *self.times.last().expect("trajectory holds at least t = 0")
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Hamiltonian supplied either once or as a callable sampled at the RK4
/// substage times t, t + dt/2, t + dt.
#[derive(Clone, Copy)]
pub enum Hamiltonian<'a> {
    Constant(&'a Operator),
    Driven(&'a (dyn Fn(f64) -> Operator + Sync)),
}

impl Hamiltonian<'_> {
    fn at(&self, t: f64) -> Operator {
        match self {
            Hamiltonian::Constant(h) => (*h).clone(),
            Hamiltonian::Driven(f) => f(t),
        }
    }

    fn dim(&self) -> usize {
        match self {
            Hamiltonian::Constant(h) => h.dim(),
            Hamiltonian::Driven(f) => f(0.0).dim(),
        }
    }

    fn label(&self) -> String {
        match self {
            Hamiltonian::Constant(h) => h.label().to_string(),
            Hamiltonian::Driven(f) => format!("{}(t)", f(0.0).label()),
        }
    }

    /// Largest row-sum norm over a coarse sample of [0, t_final].
    fn scale(&self, t_final: f64) -> f64 {
        match self {
            Hamiltonian::Constant(h) => h.row_sum_norm(),
            Hamiltonian::Driven(f) => (0..=16)
                .map(|k| f(t_final * k as f64 / 16.0).row_sum_norm())
                .fold(0.0, f64::max),
        }
    }
}

/// Nonzero entries of an operator, for the integrator's inner loop.
#[derive(Clone, Debug)]
struct Sparse {
    entries: Vec<(usize, usize, C64)>,
    /// Matrix dimension; every index is below it.
    bound: usize,
}

impl Sparse {
    fn new(m: &CMatrix) -> Self {
        let mut entries = Vec::new();
        for c in 0..m.ncols() {
            for r in 0..m.nrows() {
                let v = m[(r, c)];
                if v != ZERO {
                    entries.push((r, c, v));
                }
            }
        }
        Self {
            entries,
            bound: m.nrows().max(m.ncols()),
        }
    }

    /// out += factor · A x
    fn mul_vec_into(&self, x: &CVector, factor: C64, out: &mut CVector) {
        for &(r, c, a) in &self.entries {
            out[r] += factor * a * x[c];
        }
    }

    /// out = A X, column-major slices of an n×n matrix.
    fn left(&self, x: &[C64], out: &mut [C64], n: usize) {
        assert!(x.len() == n * n && out.len() == n * n && self.bound <= n);
        out.fill(ZERO);
        for (xc, oc) in x.chunks_exact(n).zip(out.chunks_exact_mut(n)) {
            for &(r, k, a) in &self.entries {
                // SAFETY: r, k < bound <= n = xc.len() = oc.len()
                unsafe { *oc.get_unchecked_mut(r) += a * *xc.get_unchecked(k) };
            }
        }
    }

    /// out += A X A†, summing over pairs of nonzeros.
    fn sandwich_add(&self, x: &[C64], out: &mut [C64], n: usize) {
        assert!(x.len() == n * n && out.len() == n * n && self.bound <= n);
        for &(r2, k2, a2) in &self.entries {
            let a2c = a2.conj();
            for &(r1, k1, a1) in &self.entries {
                // SAFETY: all indices < bound <= n
                unsafe { *out.get_unchecked_mut(r1 + r2 * n) += a1 * *x.get_unchecked(k1 + k2 * n) * a2c };
            }
        }
    }

    /// out += X A†
    fn right_adjoint_add(&self, x: &[C64], out: &mut [C64], n: usize) {
        assert!(x.len() == n * n && out.len() == n * n && self.bound <= n);
        for &(j, k, a) in &self.entries {
            let ac = a.conj();
            let xc = &x[k * n..(k + 1) * n];
            for (o, &v) in out[j * n..(j + 1) * n].iter_mut().zip(xc) {
                *o += v * ac;
            }
        }
    }
}

/// Lindblad generator split into the non-Hermitian effective Hamiltonian
/// K = H − (i/2)ΣL†L and the jump operators.
struct Liouvillian {
    k: Sparse,
    jumps: Vec<Sparse>,
    work: CMatrix,
    work2: CMatrix,
}

impl Liouvillian {
    fn new(h: &Operator, decay: &CMatrix, jumps: &[Sparse]) -> Self {
        let n = h.dim();
        let k = h.matrix() - decay * C64::new(0.0, 0.5);
        Self {
            k: Sparse::new(&k),
            jumps: jumps.to_vec(),
            work: CMatrix::zeros(n, n),
            work2: CMatrix::zeros(n, n),
        }
    }

    /// out = −i(Kρ − ρK†) + Σ LρL†, using Kρ = (ρK†)† for Hermitian ρ.
    fn apply_hermitian(&mut self, rho: &CMatrix, out: &mut CMatrix) {
        let n = rho.nrows();
        self.work.as_mut_slice().fill(ZERO);
        self.k.right_adjoint_add(rho.as_slice(), self.work.as_mut_slice(), n);
        let w = self.work.as_slice();
        let o = out.as_mut_slice();
        for c in 0..n {
            for r in 0..n {
                let rc = w[r + c * n];
                let cr = w[c + r * n];
                // −i (cr* − rc)
                o[r + c * n] = C64::new(-(cr.im + rc.im), rc.re - cr.re);
            }
        }
        self.add_jumps(rho, out);
    }

    /// Same generator for an arbitrary matrix, with KX = (X†K†)†.
    fn apply_general(&mut self, x: &CMatrix, out: &mut CMatrix) {
        let n = x.nrows();
        self.work2.copy_from(&x.adjoint());
        self.work.fill(ZERO);
        self.k.right_adjoint_add(self.work2.as_slice(), self.work.as_mut_slice(), n);
        self.work2.fill(ZERO);
        self.k.right_adjoint_add(x.as_slice(), self.work2.as_mut_slice(), n);
        let (w, w2) = (self.work.as_slice(), self.work2.as_slice());
        let o = out.as_mut_slice();
        for c in 0..n {
            for r in 0..n {
                // −i (KX) + i (XK†)
                o[r + c * n] = (w2[r + c * n] - w[c + r * n].conj()) * I;
            }
        }
        self.add_jumps(x, out);
    }

    fn add_jumps(&mut self, x: &CMatrix, out: &mut CMatrix) {
        let n = x.nrows();
        for l in &self.jumps {
            if l.entries.len() < 2 * n {
                l.sandwich_add(x.as_slice(), out.as_mut_slice(), n);
            } else {
                l.left(x.as_slice(), self.work.as_mut_slice(), n);
                l.right_adjoint_add(self.work.as_slice(), out.as_mut_slice(), n);
            }
        }
    }
}

fn compile_jumps(jumps: &JumpSet, dim: usize) -> Result<(Vec<Sparse>, CMatrix)> {
    let mut sparse = Vec::with_capacity(jumps.len());
    let mut decay = CMatrix::zeros(dim, dim);
    for j in jumps.iter() {
        same_dim(j.operator.dim(), dim, "jump operator")?;
        sparse.push(Sparse::new(j.operator.matrix()));
        decay += j.operator.matrix().adjoint() * j.operator.matrix();
    }
    Ok((sparse, decay))
}

fn jump_scale(jumps: &JumpSet) -> f64 {
    jumps
        .iter()
        .map(|j| (j.operator.matrix().adjoint() * j.operator.matrix()).iter().map(|z| z.norm()).fold(0.0, f64::max))
        .fold(0.0, f64::max)
}

/// `−i[H,ρ] + Σ_L (LρL† − ½{L†L, ρ})`, evaluated without assuming any
/// symmetry of the inputs.
pub fn lindblad_rhs(rho: &DensityMatrix, h: &Operator, jumps: &JumpSet) -> Result<CMatrix> {
    same_dim(rho.dim(), h.dim(), "lindblad_rhs")?;
    let r = rho.matrix();
    let mut out = (h.matrix() * r - r * h.matrix()) * (-I);
    for j in jumps.iter() {
        same_dim(j.operator.dim(), h.dim(), "lindblad_rhs jump")?;
        let l = j.operator.matrix();
        let ld = l.adjoint();
        let ldl = &ld * l;
        out += l * r * &ld - (&ldl * r + r * &ldl) * C64::new(0.5, 0.0);
    }
    Ok(out)
}

/// dst += a · src
fn add_scaled(dst: &mut [C64], a: C64, src: &[C64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += a * s;
    }
}

/// Replace x by (x + x†)/2 and return the largest |x − x†| entry before.
fn hermitize_in_place(x: &mut CMatrix) -> f64 {
    let n = x.nrows();
    let s = x.as_mut_slice();
    let mut drift: f64 = 0.0;
    for c in 0..n {
        for r in c..n {
            let a = s[r + c * n];
            let b = s[c + r * n];
            drift = drift.max((a - b.conj()).norm_sqr());
            let m = (a + b.conj()) * 0.5;
            s[r + c * n] = m;
            s[c + r * n] = m.conj();
        }
    }
    drift.sqrt()
}

fn check_finite_matrix(m: &CMatrix, t: f64) -> Result<()> {
    if m.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
        Ok(())
    } else {
        Err(Error::IntegrationAborted {
            time: t,
            reason: "non-finite entries".into(),
        })
    }
}

#[derive(Clone, Copy)]
enum MatrixMode {
    /// Density matrix: re-Hermitize and police the trace each step.
    Density,
    /// Arbitrary operator (coherences): finiteness checks only.
    Free,
}

fn integrate_matrix(
    x0: &CMatrix,
    h: Hamiltonian<'_>,
    jumps: &JumpSet,
    t_final: f64,
    ctrl: &StepControl,
    mode: MatrixMode,
    observe: &mut dyn FnMut(f64, &CMatrix),
) -> Result<Trajectory<CMatrix>> {
    let dim = x0.nrows();
    same_dim(dim, h.dim(), "initial state vs Hamiltonian")?;
    let (sparse_jumps, decay) = compile_jumps(jumps, dim)?;
    let grid = Grid::new(t_final, h.scale(t_final).max(jump_scale(jumps)), ctrl)?;

    let mut gen_const = match h {
        Hamiltonian::Constant(op) => Some(Liouvillian::new(op, &decay, &sparse_jumps)),
        Hamiltonian::Driven(_) => None,
    };
    let mut eval = |t: f64, x: &CMatrix, out: &mut CMatrix| {
        let mut fresh;
        let gen = match gen_const.as_mut() {
            Some(g) => g,
            None => {
                fresh = Liouvillian::new(&h.at(t), &decay, &sparse_jumps);
                &mut fresh
            }
        };
        match mode {
            MatrixMode::Density => gen.apply_hermitian(x, out),
            MatrixMode::Free => gen.apply_general(x, out),
        }
    };

    let mut meta = TrajectoryMeta {
        generator: h.label(),
        dt: grid.dt,
        steps: grid.steps,
        trace_tolerance: ctrl.trace_tolerance,
        ..Default::default()
    };
    let mut x = x0.clone();
    observe(0.0, &x);
    let mut times = vec![0.0];
    let mut states = vec![x.clone()];
    let z = || CMatrix::zeros(dim, dim);
    let (mut k1, mut k2, mut k3, mut k4, mut tmp) = (z(), z(), z(), z(), z());
    let dt = grid.dt;
    let half = C64::from(dt / 2.0);
    let full = C64::from(dt);
    let sixth = C64::from(dt / 6.0);
    let two = C64::from(2.0);

    for step in 1..=grid.steps {
        let t = (step - 1) as f64 * dt;
        eval(t, &x, &mut k1);
        tmp.copy_from(&x);
        add_scaled(tmp.as_mut_slice(), half, k1.as_slice());
        eval(t + dt / 2.0, &tmp, &mut k2);
        tmp.copy_from(&x);
        add_scaled(tmp.as_mut_slice(), half, k2.as_slice());
        eval(t + dt / 2.0, &tmp, &mut k3);
        tmp.copy_from(&x);
        add_scaled(tmp.as_mut_slice(), full, k3.as_slice());
        eval(t + dt, &tmp, &mut k4);
        k1 += &k4;
        k2 += &k3;
        add_scaled(k1.as_mut_slice(), two, k2.as_slice());
        add_scaled(x.as_mut_slice(), sixth, k1.as_slice());

        let t_now = step as f64 * dt;
        check_finite_matrix(&x, t_now)?;
        if let MatrixMode::Density = mode {
            let drift = hermitize_in_place(&mut x);
            meta.max_hermiticity_drift = meta.max_hermiticity_drift.max(drift);
            let err = (x.trace() - C64::from(1.0)).norm();
            meta.max_trace_error = meta.max_trace_error.max(err);
            if err > ctrl.trace_tolerance {
                return Err(Error::IntegrationAborted {
                    time: t_now,
                    reason: format!(
                        "trace drift {err:e} exceeds tolerance {:e}",
                        ctrl.trace_tolerance
                    ),
                });
            }
        }
        observe(t_now, &x);
        if grid.records(step) {
            times.push(t_now);
            states.push(x.clone());
        }
    }
    if let Some(last) = times.last_mut() {
        *last = t_final;
    }

    if ctrl.richardson_check && grid.steps > 0 {
        let fine_ctrl = StepControl {
            dt: Some(grid.dt / 2.0),
            frames: None,
            record_every: grid.stride * 2,
            ..ctrl.halved()
        };
        let fine = integrate_matrix(x0, h, jumps, t_final, &fine_ctrl, mode, &mut |_, _| {})?;
        meta.richardson_delta = Some(richardson_delta(&states, &fine.states, |a, b| {
            (a - b).norm()
        }));
    }

    Ok(Trajectory { times, states, meta })
}

fn richardson_delta<S>(coarse: &[S], fine: &[S], dist: impl Fn(&S, &S) -> f64) -> f64 {
    coarse
        .iter()
        .zip(fine)
        .map(|(a, b)| dist(a, b))
        .fold(0.0, f64::max)
}

/// Integrate the master equation from a valid density matrix.
pub fn evolve_master(
    rho0: &DensityMatrix,
    h: Hamiltonian<'_>,
    jumps: &JumpSet,
    t_final: f64,
    ctrl: &StepControl,
) -> Result<Trajectory<DensityMatrix>> {
    evolve_master_observed(rho0, h, jumps, t_final, ctrl, |_, _| {})
}

/// [`evolve_master`] with a callback invoked after every step (and at
/// t = 0) with the current time and density matrix.
pub fn evolve_master_observed(
    rho0: &DensityMatrix,
    h: Hamiltonian<'_>,
    jumps: &JumpSet,
    t_final: f64,
    ctrl: &StepControl,
    mut observe: impl FnMut(f64, &CMatrix),
) -> Result<Trajectory<DensityMatrix>> {
    DensityMatrix::new(rho0.matrix().clone())?;
    let traj = integrate_matrix(rho0.matrix(), h, jumps, t_final, ctrl, MatrixMode::Density, &mut observe)?;
    Ok(Trajectory {
        times: traj.times,
        states: traj.states.into_iter().map(DensityMatrix::from_raw).collect(),
        meta: traj.meta,
    })
}

/// Propagate an arbitrary operator (e.g. a coherence `|a⟩⟨b|`) under the
/// same Lindblad generator. No Hermiticity or trace policing.
pub fn evolve_operator(
    x0: &CMatrix,
    h: Hamiltonian<'_>,
    jumps: &JumpSet,
    t_final: f64,
    ctrl: &StepControl,
) -> Result<Trajectory<CMatrix>> {
    integrate_matrix(x0, h, jumps, t_final, ctrl, MatrixMode::Free, &mut |_, _| {})
}

/// RK4 on dψ/dt = −iH(t)ψ. The norm is never renormalized; drift beyond
/// the trace tolerance aborts.
pub fn evolve_schrodinger(
    psi0: &StateVector,
    h: Hamiltonian<'_>,
    t_final: f64,
    ctrl: &StepControl,
) -> Result<Trajectory<StateVector>> {
    evolve_schrodinger_observed(psi0, h, t_final, ctrl, |_, _| {})
}

/// [`evolve_schrodinger`] with a callback invoked after every step (and at
/// t = 0) with the current time and state.
pub fn evolve_schrodinger_observed(
    psi0: &StateVector,
    h: Hamiltonian<'_>,
    t_final: f64,
    ctrl: &StepControl,
    mut observe: impl FnMut(f64, &CVector),
) -> Result<Trajectory<StateVector>> {
    let dim = psi0.dim();
    same_dim(dim, h.dim(), "initial state vs Hamiltonian")?;
    if (psi0.norm() - 1.0).abs() > crate::hilbert::NORM_TOLERANCE {
        return Err(Error::InvalidState("initial state is not normalized".into()));
    }
    let grid = Grid::new(t_final, h.scale(t_final), ctrl)?;
    let constant = match h {
        Hamiltonian::Constant(op) => Some(Sparse::new(op.matrix())),
        Hamiltonian::Driven(_) => None,
    };
    let minus_i = -I;
    let eval = |t: f64, x: &CVector, out: &mut CVector| {
        out.fill(ZERO);
        match &constant {
            Some(s) => s.mul_vec_into(x, minus_i, out),
            None => {
                let m = h.at(t);
                out.gemv(minus_i, m.matrix(), x, ZERO);
            }
        }
    };

    let mut meta = TrajectoryMeta {
        generator: h.label(),
        dt: grid.dt,
        steps: grid.steps,
        trace_tolerance: ctrl.trace_tolerance,
        ..Default::default()
    };
    let mut x = psi0.amplitudes().clone();
    observe(0.0, &x);
    let mut times = vec![0.0];
    let mut states = vec![x.clone()];
    let z = || CVector::zeros(dim);
    let (mut k1, mut k2, mut k3, mut k4, mut tmp) = (z(), z(), z(), z(), z());
    let dt = grid.dt;
    let one = C64::from(1.0);

    for step in 1..=grid.steps {
        let t = (step - 1) as f64 * dt;
        eval(t, &x, &mut k1);
        tmp.copy_from(&x);
        tmp.axpy(C64::from(dt / 2.0), &k1, one);
        eval(t + dt / 2.0, &tmp, &mut k2);
        tmp.copy_from(&x);
        tmp.axpy(C64::from(dt / 2.0), &k2, one);
        eval(t + dt / 2.0, &tmp, &mut k3);
        tmp.copy_from(&x);
        tmp.axpy(C64::from(dt), &k3, one);
        eval(t + dt, &tmp, &mut k4);
        k1 += &k4;
        k2 += &k3;
        k1.axpy(C64::from(2.0), &k2, one);
        x.axpy(C64::from(dt / 6.0), &k1, one);

        let t_now = step as f64 * dt;
        if !x.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
            return Err(Error::IntegrationAborted {
                time: t_now,
                reason: "non-finite amplitudes".into(),
            });
        }
        let err = (x.norm() - 1.0).abs();
        meta.max_trace_error = meta.max_trace_error.max(err);
        if err > ctrl.trace_tolerance {
            return Err(Error::IntegrationAborted {
                time: t_now,
                reason: format!(
                    "norm drift {err:e} exceeds tolerance {:e}",
                    ctrl.trace_tolerance
                ),
            });
        }
        observe(t_now, &x);
        if grid.records(step) {
            times.push(t_now);
            states.push(x.clone());
        }
    }
    if let Some(last) = times.last_mut() {
        *last = t_final;
    }

    if ctrl.richardson_check && grid.steps > 0 {
        let fine_ctrl = StepControl {
            dt: Some(grid.dt / 2.0),
            frames: None,
            record_every: grid.stride * 2,
            ..ctrl.halved()
        };
        let fine = evolve_schrodinger(psi0, h, t_final, &fine_ctrl)?;
        let fine: Vec<CVector> = fine.states.into_iter().map(|s| s.amplitudes().clone()).collect();
        meta.richardson_delta = Some(richardson_delta(&states, &fine, |a, b| (a - b).norm()));
    }

    Ok(Trajectory {
        times,
        states: states.into_iter().map(StateVector::from_raw).collect(),
        meta,
    })
}

/// `exp(−iHt)` by Hermitian eigendecomposition.
pub fn propagator_oracle(h: &Operator, t: f64) -> Result<Operator> {
    let scale = h.row_sum_norm().max(1.0);
    if !h.is_hermitian(1e-12 * scale) {
        return Err(Error::InvalidArgument(format!(
            "propagator oracle needs a Hermitian operator; `{}` deviates by {:e}",
            h.label(),
            h.hermiticity_error()
        )));
    }
    let eig = hermitian_part(h.matrix()).symmetric_eigen();
    let v = &eig.eigenvectors;
    let phases = CVector::from_iterator(
        h.dim(),
        eig.eigenvalues.iter().map(|&l| C64::from_polar(1.0, -l * t)),
    );
    let u = v * CMatrix::from_diagonal(&phases) * v.adjoint();
    Ok(Operator::from_matrix(u, format!("exp(-i {} t)", h.label())))
}

/// Fidelity `(Tr√(√x y √x))²`, trace distance `½‖x − y‖₁`, and the purity
/// `Tr x²` of the first argument.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StateMetrics {
    pub fidelity: f64,
    pub trace_distance: f64,
    pub purity: f64,
}

pub fn state_metrics(x: &impl AsDensity, y: &impl AsDensity) -> Result<StateMetrics> {
    let (x, y) = (x.to_density(), y.to_density());
    same_dim(x.dim(), y.dim(), "state_metrics")?;
    for (name, s) in [("first", &x), ("second", &y)] {
        let tr = s.trace();
        if (tr - C64::from(1.0)).norm() > 1e-6 {
            return Err(Error::InvalidState(format!("{name} argument has trace {tr}")));
        }
    }
    let sqrt_x = matrix_sqrt_psd(x.matrix());
    let m = &sqrt_x * y.matrix() * &sqrt_x;
    let root_sum: f64 = hermitian_part(&m)
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .map(|&l| l.max(0.0).sqrt())
        .sum();
    Ok(StateMetrics {
        fidelity: (root_sum * root_sum).clamp(0.0, 1.0),
        trace_distance: trace_distance(x.matrix(), y.matrix()),
        purity: x.purity(),
    })
}

/// ½ Σ |eig(x − y)| for Hermitian arguments.
pub fn trace_distance(x: &CMatrix, y: &CMatrix) -> f64 {
    0.5 * hermitian_part(&(x - y))
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .map(|l| l.abs())
        .sum::<f64>()
}

fn matrix_sqrt_psd(m: &CMatrix) -> CMatrix {
    let eig = hermitian_part(m).symmetric_eigen();
    let v = &eig.eigenvectors;
    let d = CVector::from_iterator(
        m.nrows(),
        eig.eigenvalues.iter().map(|&l| C64::from(l.max(0.0).sqrt())),
    );
    v * CMatrix::from_diagonal(&d) * v.adjoint()
}

/// Remove bare-frequency phases: `ψ_I = e^{iH₀t}ψ` for diagonal H₀.
pub fn state_to_interaction_picture(psi: &CVector, energies: &[f64], t: f64) -> CVector {
    CVector::from_iterator(
        psi.len(),
        psi.iter()
            .zip(energies)
            .map(|(a, &e)| a * C64::from_polar(1.0, e * t)),
    )
}

/// `X_I = e^{iH₀t} X e^{−iH₀t}` for diagonal H₀.
pub fn matrix_to_interaction_picture(x: &CMatrix, energies: &[f64], t: f64) -> CMatrix {
    CMatrix::from_fn(x.nrows(), x.ncols(), |r, c| {
        x[(r, c)] * C64::from_polar(1.0, (energies[r] - energies[c]) * t)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::{basis_state, cavity_annihilation, max_abs_diff, HilbertSpec};
    use crate::model::{collect_jump_operators, full_hamiltonian, reduced_hamiltonian, SystemParams};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{PI, SQRT_2};

    fn random_hermitian(rng: &mut impl Rng, n: usize) -> CMatrix {
        let a = CMatrix::from_fn(n, n, |_, _| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
        hermitian_part(&a)
    }

    fn random_density(rng: &mut impl Rng, n: usize) -> DensityMatrix {
        let a = CMatrix::from_fn(n, n, |_, _| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
        let m = &a * a.adjoint();
        let tr = m.trace();
        DensityMatrix::new(hermitian_part(&(m / tr))).unwrap()
    }

    fn qubit(i: usize) -> StateVector {
        let mut v = CVector::zeros(2);
        v[i] = C64::from(1.0);
        StateVector::new(v).unwrap()
    }

    #[test]
    fn rhs_vanishes_without_generator() {
        let rho = DensityMatrix::from_pure(&qubit(0));
        let rhs = lindblad_rhs(&rho, &Operator::zeros(2), &JumpSet::new()).unwrap();
        assert!(rhs.iter().all(|z| *z == ZERO));
    }

    #[test]
    fn photon_loss_rate() {
        let spec = HilbertSpec::lambda(2).unwrap();
        let k = 0.37;
        let p = SystemParams::with_detuning(50.0, 0.0).damped(k, 0.0);
        let jumps = collect_jump_operators(&p, &spec).unwrap();
        let rho = DensityMatrix::from_pure(&basis_state(0, 0, 1, &spec).unwrap());
        let rhs = lindblad_rhs(&rho, &Operator::zeros(spec.dim()), &jumps).unwrap();
        let a = cavity_annihilation(&spec).unwrap();
        let n = (a.adjoint().matrix() * a.matrix() * rhs).trace();
        assert!((n.re + 2.0 * k).abs() < 1e-14);
    }

    #[test]
    fn rhs_is_hermitian_and_traceless() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let n = rng.gen_range(2..7);
            let rho = random_density(&mut rng, n);
            let h = Operator::new(random_hermitian(&mut rng, n), "H").unwrap();
            let mut jumps = JumpSet::new();
            for _ in 0..rng.gen_range(0..4) {
                let l = CMatrix::from_fn(n, n, |_, _| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
                jumps.push(Operator::new(l, "L").unwrap(), "L");
            }
            let rhs = lindblad_rhs(&rho, &h, &jumps).unwrap();
            let scale = rhs.iter().map(|z| z.norm()).fold(1.0, f64::max);
            assert!(rhs.trace().norm() <= 1e-12 * scale);
            assert!(max_abs_diff(&rhs, &rhs.adjoint()) <= 1e-12 * scale);
        }
    }

    #[test]
    fn fast_paths_match_reference_rhs() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 5;
        let rho = random_density(&mut rng, n);
        let h = Operator::new(random_hermitian(&mut rng, n), "H").unwrap();
        let mut jumps = JumpSet::new();
        for _ in 0..2 {
            let l = CMatrix::from_fn(n, n, |_, _| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
            jumps.push(Operator::new(l, "L").unwrap(), "L");
        }
        let reference = lindblad_rhs(&rho, &h, &jumps).unwrap();
        let (sparse, decay) = compile_jumps(&jumps, n).unwrap();
        let mut gen = Liouvillian::new(&h, &decay, &sparse);
        let mut out = CMatrix::zeros(n, n);
        gen.apply_hermitian(rho.matrix(), &mut out);
        assert!(max_abs_diff(&out, &reference) < 1e-13);
        gen.apply_general(rho.matrix(), &mut out);
        assert!(max_abs_diff(&out, &reference) < 1e-13);
    }

    #[test]
    fn unitary_channel_conserves_purity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = Operator::new(random_hermitian(&mut rng, 6) * C64::from(10.0), "H").unwrap();
        let t = 1e3 / h.row_sum_norm();
        let mut v = CVector::zeros(6);
        v[0] = C64::from(1.0);
        v[3] = C64::new(0.0, 1.0);
        let rho0 = DensityMatrix::from_pure(&StateVector::normalized(v).unwrap());
        let traj = evolve_master(&rho0, Hamiltonian::Constant(&h), &JumpSet::new(), t, &StepControl::default()).unwrap();
        // RK4 dissipates |z|^6/72 per step at z = ‖H‖dt = 0.05 over 2·10^4 steps
        assert!((traj.final_state().purity() - 1.0).abs() < 1e-5);
        let fine = evolve_master(&rho0, Hamiltonian::Constant(&h), &JumpSet::new(), t, &StepControl::with_dt(0.01 / h.row_sum_norm())).unwrap();
        assert!((fine.final_state().purity() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn two_level_decay_matches_exponential() {
        let tau: f64 = 0.5;
        let mut l = CMatrix::zeros(2, 2);
        l[(0, 1)] = C64::from((2.0 * tau).sqrt());
        let mut jumps = JumpSet::new();
        jumps.push(Operator::new(l, "s01").unwrap(), "decay");
        let rho0 = DensityMatrix::from_pure(&qubit(1));
        let t = 1.0 / tau;
        let traj = evolve_master(&rho0, Hamiltonian::Constant(&Operator::zeros(2)), &jumps, t, &StepControl::with_dt(1e-3)).unwrap();
        let p = traj.final_state().population(1);
        assert!((p - (-2.0 * tau * t).exp()).abs() < 1e-6, "{p}");
    }

    #[test]
    fn uncoupled_ions_stay_put() {
        let spec = HilbertSpec::lambda(2).unwrap();
        let p = SystemParams::with_detuning(50.0, 0.0).damped(0.5, 0.01);
        let h = full_hamiltonian(&p, &spec).unwrap();
        let jumps = collect_jump_operators(&p, &spec).unwrap();
        let rho0 = DensityMatrix::from_pure(&basis_state(1, 1, 0, &spec).unwrap());
        let traj = evolve_master(&rho0, Hamiltonian::Constant(&h), &jumps, 20.0, &StepControl::default()).unwrap();
        assert!(max_abs_diff(traj.final_state().matrix(), rho0.matrix()) < 1e-14);
    }

    #[test]
    fn schrodinger_trivial_and_gate() {
        let spec = HilbertSpec::lambda_ions();
        let psi0 = basis_state(1, 0, 0, &spec).unwrap();
        let traj = evolve_schrodinger(&psi0, Hamiltonian::Constant(&Operator::zeros(9)), 5.0, &StepControl::default()).unwrap();
        assert_eq!(traj.final_state(), &psi0);

        let om = 0.1;
        let h = reduced_hamiltonian(om, &spec).unwrap();
        let t = PI * SQRT_2 / om;
        let traj = evolve_schrodinger(&psi0, Hamiltonian::Constant(&h), t, &StepControl::default()).unwrap();
        let amp = psi0.inner(traj.final_state());
        assert!((amp - C64::from(-1.0)).norm() < 1e-7, "{amp}");
    }

    #[test]
    fn rabi_population_transfer() {
        let spec = HilbertSpec::lambda_ions();
        let om = 0.2;
        let h = reduced_hamiltonian(om, &spec).unwrap();
        let psi0 = basis_state(1, 0, 0, &spec).unwrap();
        let t_final = 2.0 * PI * SQRT_2 / om;
        let traj = evolve_schrodinger(&psi0, Hamiltonian::Constant(&h), t_final, &StepControl::default().frames(20)).unwrap();
        assert_eq!(traj.len(), 21);
        let minus = crate::hilbert::phi_state(false, &spec).unwrap();
        for (t, s) in traj.times.iter().zip(&traj.states).skip(1) {
            let p = minus.inner(s).norm_sqr();
            let expect = (om * t / SQRT_2).sin().powi(2);
            assert!((p - expect).abs() < 1e-7, "t={t}: {p} vs {expect}");
        }
    }

    #[test]
    fn oracle_basics() {
        let h = Operator::from_diagonal(&[C64::from(0.0), C64::from(1.7)], "d");
        assert!(max_abs_diff(propagator_oracle(&h, 0.0).unwrap().matrix(), &CMatrix::identity(2, 2)) < 1e-15);
        let u = propagator_oracle(&h, 0.9).unwrap();
        assert!((u.get(1, 1) - C64::from_polar(1.0, -1.7 * 0.9)).norm() < 1e-15);
        assert!((u.get(0, 0) - C64::from(1.0)).norm() < 1e-15);
        let nh = Operator::new(CMatrix::from_fn(2, 2, |r, c| C64::from((r * 2 + c) as f64)), "nh").unwrap();
        assert!(propagator_oracle(&nh, 1.0).is_err());
    }

    #[test]
    fn rk4_agrees_with_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let n = 48;
        let h = Operator::new(random_hermitian(&mut rng, n), "H").unwrap();
        let t = 10.0 / h.row_sum_norm();
        let mut v = CVector::from_fn(n, |_, _| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
        v /= C64::from(v.norm());
        let psi0 = StateVector::new(v).unwrap();
        let traj = evolve_schrodinger(&psi0, Hamiltonian::Constant(&h), t, &StepControl::with_dt(1e-3)).unwrap();
        let u = propagator_oracle(&h, t).unwrap();
        let exact = u.matrix() * psi0.amplitudes();
        assert!((traj.final_state().amplitudes() - exact).norm() < 1e-6);
        let unitarity = u.matrix().adjoint() * u.matrix() - CMatrix::identity(n, n);
        assert!(unitarity.iter().all(|z| z.norm() < 1e-10));
    }

    #[test]
    fn metrics_closed_forms() {
        let zero = qubit(0);
        let one = qubit(1);
        let m = state_metrics(&zero, &zero).unwrap();
        assert!((m.fidelity - 1.0).abs() < 1e-12 && m.trace_distance < 1e-12);
        let m = state_metrics(&zero, &one).unwrap();
        assert!(m.fidelity < 1e-12 && (m.trace_distance - 1.0).abs() < 1e-12);

        let mixed = DensityMatrix::new(CMatrix::identity(2, 2) * C64::from(0.5)).unwrap();
        let m = state_metrics(&mixed, &zero).unwrap();
        assert!((m.fidelity - 0.5).abs() < 1e-12);
        assert!((m.trace_distance - 0.5).abs() < 1e-12);
        assert!((m.purity - 0.5).abs() < 1e-12);

        let bad = DensityMatrix::from_raw(CMatrix::identity(2, 2));
        assert!(state_metrics(&bad, &zero).is_err());
    }

    #[test]
    fn trace_drift_aborts() {
        // a non-trace-preserving "jump" set: anti-Hermitian H makes Tr drift
        let mut h = CMatrix::zeros(2, 2);
        h[(1, 1)] = C64::new(0.0, -1.0);
        let h = Operator::new(h, "leaky").unwrap();
        let rho0 = DensityMatrix::from_pure(&qubit(1));
        let err = evolve_master(&rho0, Hamiltonian::Constant(&h), &JumpSet::new(), 1.0, &StepControl::with_dt(1e-2))
            .unwrap_err();
        assert!(matches!(err, Error::IntegrationAborted { .. }), "{err}");
        let err = evolve_schrodinger(&qubit(1), Hamiltonian::Constant(&h), 1.0, &StepControl::with_dt(1e-2))
            .unwrap_err();
        assert!(matches!(err, Error::IntegrationAborted { .. }), "{err}");
    }

    #[test]
    fn driven_generator_and_frames() {
        // σx drive with amplitude ramping linearly: exact rotation angle ∫Ω dt
        let drive = |t: f64| {
            let mut m = CMatrix::zeros(2, 2);
            m[(0, 1)] = C64::from(0.5 * t);
            m[(1, 0)] = C64::from(0.5 * t);
            Operator::from_matrix(m, "ramp")
        };
        let t_final = 2.0;
        let traj = evolve_schrodinger(&qubit(0), Hamiltonian::Driven(&drive), t_final, &StepControl::with_dt(1e-3).frames(4)).unwrap();
        assert_eq!(traj.times, vec![0.0, 0.5, 1.0, 1.5, 2.0]);
        // angle = ∫0.5 t dt = t²/4
        let angle: f64 = t_final * t_final / 4.0;
        assert!((traj.final_state().amplitude(0).norm() - angle.cos().abs()).abs() < 1e-10);
    }

    #[test]
    fn richardson_reports_small_change() {
        let spec = HilbertSpec::lambda_ions();
        let h = reduced_hamiltonian(0.3, &spec).unwrap();
        let psi0 = basis_state(1, 0, 0, &spec).unwrap();
        let traj = evolve_schrodinger(&psi0, Hamiltonian::Constant(&h), 10.0, &StepControl::default().frames(5).richardson(true)).unwrap();
        let d = traj.meta.richardson_delta.unwrap();
        assert!(d > 0.0 && d < 1e-7, "{d}");
    }

    #[test]
    fn interaction_picture_phases() {
        let e = [0.0, 2.0];
        let psi = CVector::from_column_slice(&[C64::from(1.0), C64::from_polar(1.0, -2.0 * 0.7)]);
        let out = state_to_interaction_picture(&psi, &e, 0.7);
        assert!((out[1] - C64::from(1.0)).norm() < 1e-15);
        let x = psi.clone() * psi.adjoint();
        let xi = matrix_to_interaction_picture(&x, &e, 0.7);
        assert!((xi[(1, 0)] - C64::from(1.0)).norm() < 1e-15);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn fidelity_symmetric_and_bounded(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_density(&mut rng, 3);
            let b = random_density(&mut rng, 3);
            let ab = state_metrics(&a, &b).unwrap();
            let ba = state_metrics(&b, &a).unwrap();
            prop_assert!((ab.fidelity - ba.fidelity).abs() < 1e-9);
            prop_assert!((0.0..=1.0).contains(&ab.fidelity));
            prop_assert!((ab.trace_distance - ba.trace_distance).abs() < 1e-12);
            // Fuchs–van de Graaf
            prop_assert!(1.0 - ab.fidelity.sqrt() <= ab.trace_distance + 1e-9);
            prop_assert!(ab.trace_distance <= (1.0 - ab.fidelity).sqrt() + 1e-9);
        }
    }
}
