//! Scenario configs: strict JSON parsing with key-path errors, canonical
//! re-emission, task dispatch, and deterministic artifact writing.

use std::f64::consts::FRAC_1_SQRT_2;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dynamics::{evolve_master, evolve_schrodinger, Hamiltonian, StepControl};
use crate::error::{Error, Result};
use crate::format;
use crate::gate::{
    basis_input, extract_gate, prepare_with_photons, regime_scan, scan_csv, to_ion_state, IonInput,
    ScanAxis, ScanPlan, COMPUTATIONAL,
};
use crate::geometric::{adiabatic_run, LoopSpec};
use crate::hilbert::{CMatrix, DensityMatrix, HilbertSpec, Level};
use crate::model::{gate_time, ModelKind, ModelSystem, SystemParams};

pub const TOOL_NAME: &str = "qcavity";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

pub const DEFAULT_DELTA: f64 = 50.0;
pub const DEFAULT_FOCK_CUTOFF: usize = 2;
pub const DEFAULT_FRAMES: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Dump,
    Simulate,
    Gate,
    Scan,
    Berry,
}

impl Task {
    pub const ALL: [Task; 5] = [Task::Dump, Task::Simulate, Task::Gate, Task::Scan, Task::Berry];

    pub fn name(self) -> &'static str {
        match self {
            Task::Dump => "dump",
            Task::Simulate => "simulate",
            Task::Gate => "gate",
            Task::Scan => "scan",
            Task::Berry => "berry",
        }
    }
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Task::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::config("task", format!("unknown task `{s}`")))
    }
}

/// Initial state for `simulate`: an ion label and a photon number.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InitialState {
    /// `"ab"` with level digits, `"++"`, `"phi+"` or `"phi-"`.
    pub state: String,
    pub photons: usize,
}

impl Default for InitialState {
    fn default() -> Self {
        Self {
            state: "10".into(),
            photons: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScanBlock {
    pub axis: ScanAxis,
    pub values: Vec<f64>,
    pub omega_ratio: Option<f64>,
    pub reference: Option<ModelKind>,
}

/// A validated scenario with every default filled in.
#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioConfig {
    pub task: Task,
    pub model: ModelKind,
    pub params: SystemParams,
    pub fock_cutoff: usize,
    /// `simulate` only.
    pub initial: Option<InitialState>,
    /// `simulate` only; defaults to `t_gate`.
    pub t_final: Option<f64>,
    /// `gate` and `simulate`; defaults to π√2/Ω. For `scan` a fixed time
    /// overriding the per-point default.
    pub t_gate: Option<f64>,
    /// `simulate` only.
    pub frames: Option<usize>,
    pub scan: Option<ScanBlock>,
    pub loop_spec: Option<LoopSpec>,
    pub dt: Option<f64>,
    pub output: Option<String>,
    pub seed: u64,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawParams {
    #[serde(skip_serializing_if = "Option::is_none")]
    omega0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    omega3: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    omega_c: Option<f64>,
    #[serde(rename = "Delta", skip_serializing_if = "Option::is_none")]
    delta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    g: Option<f64>,
    #[serde(rename = "Omega", skip_serializing_if = "Option::is_none")]
    omega: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    kappa: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    tau: Option<f64>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpec {
    #[serde(skip_serializing_if = "Option::is_none")]
    ion_levels: Option<[Vec<Level>; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    fock_cutoff: Option<usize>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInitial {
    #[serde(skip_serializing_if = "Option::is_none")]
    state: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    photons: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScan {
    axis: ScanAxis,
    values: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    omega_ratio: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    reference: Option<ModelKind>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLoop {
    #[serde(skip_serializing_if = "Option::is_none")]
    theta0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    windings: Option<f64>,
    #[serde(rename = "T", skip_serializing_if = "Option::is_none")]
    total_time: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ramp_fraction: Option<f64>,
    #[serde(rename = "Omega_bar", skip_serializing_if = "Option::is_none")]
    omega_bar: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    task: Task,
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<ModelKind>,
    #[serde(default)]
    params: RawParams,
    #[serde(default)]
    spec: RawSpec,
    #[serde(skip_serializing_if = "Option::is_none")]
    initial: Option<RawInitial>,
    #[serde(skip_serializing_if = "Option::is_none")]
    t_final: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    t_gate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    frames: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    scan: Option<RawScan>,
    #[serde(rename = "loop", skip_serializing_if = "Option::is_none")]
    loop_block: Option<RawLoop>,
    #[serde(skip_serializing_if = "Option::is_none")]
    dt: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    output: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

fn finite(path: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::config(path, "must be finite"))
    }
}

fn positive(path: &str, v: f64) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(Error::config(path, format!("must be positive, got {v}")))
    }
}

fn non_negative(path: &str, v: f64) -> Result<f64> {
    if v >= 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(Error::config(path, format!("must be non-negative, got {v}")))
    }
}

fn resolve_params(raw: &RawParams) -> Result<SystemParams> {
    let explicit = raw.omega0.is_some() || raw.omega3.is_some() || raw.omega_c.is_some();
    let (omega0, omega3, omega_c) = match raw.delta {
        Some(_) if explicit => {
            return Err(Error::config(
                "params.Delta",
                "derived, not settable together with omega0/omega3/omega_c",
            ))
        }
        Some(d) => (0.0, 0.0, finite("params.Delta", d)?),
        None if explicit => (
            finite("params.omega0", raw.omega0.unwrap_or(0.0))?,
            finite("params.omega3", raw.omega3.unwrap_or(0.0))?,
            finite("params.omega_c", raw.omega_c.unwrap_or(0.0))?,
        ),
        None => (0.0, 0.0, DEFAULT_DELTA),
    };
    let g = positive("params.g", raw.g.unwrap_or(1.0))?;
    let mut p = SystemParams {
        omega0,
        omega3,
        omega_c,
        g,
        omega: 0.0,
        kappa: non_negative("params.kappa", raw.kappa.unwrap_or(0.0))?,
        tau: non_negative("params.tau", raw.tau.unwrap_or(0.0))?,
    };
    if p.detuning() == 0.0 {
        return Err(Error::config("params", "detuning omega_c - omega3 + omega0 is zero"));
    }
    p.omega = match raw.omega {
        Some(o) => non_negative("params.Omega", o)?,
        None => 0.1 * p.dispersive_coupling().abs(),
    };
    Ok(p)
}

fn model_layout(model: ModelKind, fock_cutoff: usize) -> Result<HilbertSpec> {
    match model {
        ModelKind::Full => HilbertSpec::lambda(fock_cutoff),
        ModelKind::Geometric => Ok(HilbertSpec::auxiliary_ions()),
        _ => Ok(HilbertSpec::lambda_ions()),
    }
}

/// Ion superposition named by an initial-state label.
pub fn initial_input(label: &str) -> Result<IonInput> {
    let h = C64::from(FRAC_1_SQRT_2);
    match label {
        "++" => Ok(COMPUTATIONAL.iter().map(|&k| (C64::from(0.5), k)).collect()),
        "phi+" => Ok(vec![(h, (3, 0)), (h, (0, 3))]),
        "phi-" => Ok(vec![(h, (3, 0)), (-h, (0, 3))]),
        _ => {
            let digits: Vec<Level> = label
                .chars()
                .map(|c| c.to_digit(10).map(|d| d as Level))
                .collect::<Option<_>>()
                .filter(|d: &Vec<Level>| d.len() == 2)
                .ok_or_else(|| Error::config("initial.state", format!("unknown state label `{label}`")))?;
            Ok(basis_input(digits[0], digits[1]))
        }
    }
}

fn not_for(task: Task, path: &str, present: bool) -> Result<()> {
    if present {
        Err(Error::config(path, format!("not used by task {}", task.name())))
    } else {
        Ok(())
    }
}

fn parse_error(e: serde_path_to_error::Error<serde_json::Error>) -> Error {
    let path = e.path().to_string();
    let inner = e.into_inner();
    let path = if path == "." || path == "?" || path.is_empty() { "<root>".to_string() } else { path };
    Error::config(path, inner.to_string())
}

/// Parse and validate a scenario document. Unknown keys are rejected.
pub fn parse_config(text: &str) -> Result<ScenarioConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let raw: RawConfig = serde_path_to_error::deserialize(de).map_err(parse_error)?;
    resolve(raw)
}

fn resolve(raw: RawConfig) -> Result<ScenarioConfig> {
    let task = raw.task;
    let model = match (raw.model, task) {
        (Some(m), Task::Berry) if m != ModelKind::Geometric => {
            return Err(Error::config("model", "task berry runs the geometric model"))
        }
        (Some(ModelKind::Geometric), Task::Simulate | Task::Gate | Task::Scan) => {
            return Err(Error::config(
                "model",
                format!("the geometric model is only available to the berry and dump tasks, not {}", task.name()),
            ))
        }
        (Some(m), _) => m,
        (None, Task::Berry) => ModelKind::Geometric,
        (None, _) => return Err(Error::config("model", "missing; one of full, eliminated, dispersive, reduced, geometric")),
    };
    let params = resolve_params(&raw.params)?;
    let fock_cutoff = raw.spec.fock_cutoff.unwrap_or(DEFAULT_FOCK_CUTOFF);
    if fock_cutoff == 0 {
        return Err(Error::config("spec.fock_cutoff", "must be at least 1"));
    }
    let layout = model_layout(model, fock_cutoff).map_err(|e| Error::config("spec.fock_cutoff", e.to_string()))?;
    if let Some(levels) = &raw.spec.ion_levels {
        if levels[0] != layout.ion_levels(1) || levels[1] != layout.ion_levels(2) {
            return Err(Error::config(
                "spec.ion_levels",
                format!(
                    "model {model} uses levels {:?} and {:?}",
                    layout.ion_levels(1),
                    layout.ion_levels(2)
                ),
            ));
        }
    }

    let dt = raw.dt.map(|d| positive("dt", d)).transpose()?;
    let t_gate_raw = raw.t_gate.map(|t| positive("t_gate", t)).transpose()?;
    let needs_omega = |path: &str| -> Result<f64> {
        gate_time(params.omega).map_err(|_| Error::config(path, "needs params.Omega > 0 to default to pi*sqrt(2)/Omega"))
    };

    let mut cfg = ScenarioConfig {
        task,
        model,
        params,
        fock_cutoff,
        initial: None,
        t_final: None,
        t_gate: None,
        frames: None,
        scan: None,
        loop_spec: None,
        dt,
        output: raw.output,
        seed: raw.seed.unwrap_or(0),
    };

    not_for(task, "initial", raw.initial.is_some() && task != Task::Simulate)?;
    not_for(task, "t_final", raw.t_final.is_some() && task != Task::Simulate)?;
    not_for(task, "frames", raw.frames.is_some() && task != Task::Simulate)?;
    not_for(task, "scan", raw.scan.is_some() && task != Task::Scan)?;
    not_for(task, "loop", raw.loop_block.is_some() && task != Task::Berry)?;
    not_for(
        task,
        "t_gate",
        raw.t_gate.is_some() && !matches!(task, Task::Gate | Task::Simulate | Task::Scan),
    )?;

    match task {
        Task::Dump => {}
        Task::Simulate => {
            let ri = raw.initial.unwrap_or_default();
            let init = InitialState {
                state: ri.state.unwrap_or_else(|| InitialState::default().state),
                photons: ri.photons.unwrap_or(0),
            };
            let input = initial_input(&init.state)?;
            for &(_, (a, b)) in &input {
                layout
                    .index(a, b, 0)
                    .map_err(|e| Error::config("initial.state", e.to_string()))?;
            }
            let n_max = layout.fock_cutoff().unwrap_or(0);
            if init.photons > n_max {
                return Err(Error::config(
                    "initial.photons",
                    format!("{} exceeds the fock cutoff {n_max} of model {model}", init.photons),
                ));
            }
            cfg.t_gate = match t_gate_raw {
                Some(t) => Some(t),
                None if raw.t_final.is_none() => Some(needs_omega("t_final")?),
                None => gate_time(params.omega).ok(),
            };
            cfg.t_final = Some(match raw.t_final {
                Some(t) => non_negative("t_final", t)?,
                None => cfg.t_gate.expect("filled above"),
            });
            let frames = raw.frames.unwrap_or(DEFAULT_FRAMES);
            if frames == 0 {
                return Err(Error::config("frames", "must be at least 1"));
            }
            cfg.frames = Some(frames);
            cfg.initial = Some(init);
        }
        Task::Gate => {
            cfg.t_gate = Some(match t_gate_raw {
                Some(t) => t,
                None => needs_omega("t_gate")?,
            });
        }
        Task::Scan => {
            let s = raw.scan.ok_or_else(|| Error::config("scan", "missing; task scan needs a scan block"))?;
            if s.values.is_empty() {
                return Err(Error::config("scan.values", "empty"));
            }
            for (k, &v) in s.values.iter().enumerate() {
                let path = format!("scan.values[{k}]");
                positive(&path, v)?;
                if k > 0 && v <= s.values[k - 1] {
                    return Err(Error::config(path, "values must be strictly increasing"));
                }
                if s.axis == ScanAxis::FockCutoff && v.fract() != 0.0 {
                    return Err(Error::config(path, "fock cutoff must be an integer"));
                }
            }
            if let Some(r) = s.omega_ratio {
                positive("scan.omega_ratio", r)?;
            }
            if let Some(r) = s.reference {
                if r == ModelKind::Geometric {
                    return Err(Error::config("scan.reference", "the geometric model has no gate protocol"));
                }
            }
            cfg.t_gate = t_gate_raw;
            if cfg.t_gate.is_none() && s.omega_ratio.is_none() && s.axis != ScanAxis::Omega {
                needs_omega("params.Omega")?;
            }
            cfg.scan = Some(ScanBlock {
                axis: s.axis,
                values: s.values,
                omega_ratio: s.omega_ratio,
                reference: s.reference,
            });
        }
        Task::Berry => {
            let rl = raw.loop_block.unwrap_or_default();
            let d = LoopSpec::default();
            let l = LoopSpec {
                theta0: finite("loop.theta0", rl.theta0.unwrap_or(d.theta0))?,
                windings: finite("loop.windings", rl.windings.unwrap_or(d.windings))?,
                total_time: positive("loop.T", rl.total_time.unwrap_or(d.total_time))?,
                ramp_fraction: finite("loop.ramp_fraction", rl.ramp_fraction.unwrap_or(d.ramp_fraction))?,
                omega_bar: positive("loop.Omega_bar", rl.omega_bar.unwrap_or(d.omega_bar))?,
            };
            l.validate().map_err(|e| Error::config("loop", e.to_string()))?;
            cfg.loop_spec = Some(l);
        }
    }
    Ok(cfg)
}

impl ScenarioConfig {
    fn to_raw(&self) -> RawConfig {
        let p = &self.params;
        RawConfig {
            task: self.task,
            model: Some(self.model),
            params: RawParams {
                omega0: Some(p.omega0),
                omega3: Some(p.omega3),
                omega_c: Some(p.omega_c),
                delta: None,
                g: Some(p.g),
                omega: Some(p.omega),
                kappa: Some(p.kappa),
                tau: Some(p.tau),
            },
            spec: RawSpec {
                ion_levels: None,
                fock_cutoff: Some(self.fock_cutoff),
            },
            initial: self.initial.as_ref().map(|i| RawInitial {
                state: Some(i.state.clone()),
                photons: Some(i.photons),
            }),
            t_final: self.t_final,
            t_gate: self.t_gate,
            frames: self.frames,
            scan: self.scan.as_ref().map(|s| RawScan {
                axis: s.axis,
                values: s.values.clone(),
                omega_ratio: s.omega_ratio,
                reference: s.reference,
            }),
            loop_block: self.loop_spec.map(|l| RawLoop {
                theta0: Some(l.theta0),
                windings: Some(l.windings),
                total_time: Some(l.total_time),
                ramp_fraction: Some(l.ramp_fraction),
                omega_bar: Some(l.omega_bar),
            }),
            dt: self.dt,
            output: self.output.clone(),
            seed: Some(self.seed),
        }
    }

    /// Fully explicit JSON form; parsing it yields `self` again.
    pub fn canonical_json(&self) -> Result<String> {
        format::to_json(&self.to_raw())
    }

    /// SHA-256 of [`ScenarioConfig::canonical_json`] with `output` cleared,
    /// so the same physics hashes the same wherever it is written.
    pub fn hash(&self) -> Result<String> {
        let mut c = self.clone();
        c.output = None;
        Ok(sha256_hex(c.canonical_json()?.as_bytes()))
    }

    pub fn step_control(&self) -> StepControl {
        StepControl {
            dt: self.dt,
            ..StepControl::default()
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut s = String::with_capacity(64);
    for b in digest {
        let _ = write!(s, "{b:02x}");
    }
    s
}

/// One documented config key.
#[derive(Clone, Debug, Serialize)]
pub struct KeyDoc {
    pub key: &'static str,
    pub default: &'static str,
    pub doc: &'static str,
}

pub fn config_keys() -> Vec<KeyDoc> {
    let k = |key, default, doc| KeyDoc { key, default, doc };
    vec![
        k("task", "(required)", "one of dump, simulate, gate, scan, berry"),
        k("model", "geometric for berry, otherwise required", "one of full, eliminated, dispersive, reduced, geometric"),
        k("params.Delta", "50", "detuning shortcut: sets omega0 = omega3 = 0, omega_c = Delta; exclusive with omega0/omega3/omega_c"),
        k("params.omega0", "0", "frequency of level 0"),
        k("params.omega3", "0", "frequency of level 3"),
        k("params.omega_c", "0 (50 when no frequency is given)", "cavity frequency; detuning is omega_c - omega3 + omega0"),
        k("params.g", "1", "ion-cavity coupling, equal for both ions"),
        k("params.Omega", "0.1 g^2/Delta", "laser Rabi amplitude on the 1-3 transition of ion 1"),
        k("params.kappa", "0", "cavity field decay rate (photon loss at 2 kappa)"),
        k("params.tau", "0", "spontaneous emission rate per decay channel"),
        k("spec.fock_cutoff", "2", "largest photon number kept (full model)"),
        k("spec.ion_levels", "[[0,1,3],[0,1,3]] or [[0,1,2,3],[0,1,2,3]] for geometric", "optional; must match the model"),
        k("initial.state", "\"10\"", "simulate: two level digits, \"++\", \"phi+\" or \"phi-\""),
        k("initial.photons", "0", "simulate: initial photon number, at most spec.fock_cutoff"),
        k("t_final", "t_gate", "simulate: integration time"),
        k("t_gate", "pi*sqrt(2)/Omega", "gate/simulate: gate time; scan: fixed time for every point"),
        k("frames", "100", "simulate: number of evenly spaced output frames after t = 0"),
        k("scan.axis", "(required)", "one of Delta, kappa, tau, Omega, fock_cutoff"),
        k("scan.values", "(required)", "positive, strictly increasing axis values"),
        k("scan.omega_ratio", "none", "recompute Omega = omega_ratio * g^2/Delta at every point"),
        k("scan.reference", "none", "second model; adds a ref_distance column"),
        k("loop.theta0", "2.0943951023931957 (2 pi/3)", "berry: polar angle of the cap loop, in (0, pi)"),
        k("loop.windings", "1", "berry: number of phi sweeps; negative sweeps backwards"),
        k("loop.T", "200000", "berry: total loop time"),
        k("loop.ramp_fraction", "0.25", "berry: fraction of T spent on each theta ramp, in (0, 1/2)"),
        k("loop.Omega_bar", "0.01", "berry: drive magnitude"),
        k("dt", "0.05 / max(|H|, 2 kappa, 2 tau)", "RK4 step"),
        k("output", "qcavity-out", "output directory (--out overrides)"),
        k("seed", "0", "reserved; every pipeline is deterministic"),
    ]
}

/// Text printed by `qcavity config-reference`.
pub fn config_reference() -> String {
    let mut out = String::from("qcavity scenario config (JSON, unknown keys rejected)\n\n");
    for k in config_keys() {
        let _ = writeln!(out, "{}\n    default: {}\n    {}", k.key, k.default, k.doc);
    }
    out.push_str("\nexample:\n");
    out.push_str("{\"task\": \"gate\", \"model\": \"reduced\", \"params\": {\"Omega\": 0.05}}\n");
    out
}

/// One written artifact.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct OutputFile {
    pub name: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    task: Task,
    model: ModelKind,
    config_sha256: String,
    files: &'a [OutputFile],
}

#[derive(Clone, Debug)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    pub workers: usize,
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub files: Vec<OutputFile>,
    pub summary: String,
}

/// Write through a temporary file in the same directory, then rename.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(contents).map_err(|e| Error::io(tmp.path(), e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(tmp.path(), e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

fn labelled_matrix_dump(m: &CMatrix) -> String {
    crate::hilbert::Operator::new(m.clone(), "")
        .map(|o| o.dump())
        .unwrap_or_default()
}

fn dump_files(cfg: &ScenarioConfig) -> Result<(Vec<(String, String)>, String)> {
    let sys = ModelSystem::build(cfg.model, &cfg.params, cfg.fock_cutoff)?;
    let mut files = vec![("hamiltonian.txt".to_string(), sys.hamiltonian.dump())];
    for (k, j) in sys.jumps.iter().enumerate() {
        files.push((format!("jump_{k}.txt"), labelled_matrix_dump(j.operator.matrix())));
    }
    let mut basis = String::from("index,ion1,ion2,photons\n");
    for i in 0..sys.spec.dim() {
        let (a, b, n) = sys.spec.labels(i);
        let _ = writeln!(basis, "{i},{a},{b},{n}");
    }
    files.push(("basis.csv".into(), basis));
    let mut jumps = String::from("index,label\n");
    for (k, j) in sys.jumps.iter().enumerate() {
        let _ = writeln!(jumps, "{k},{}", j.label);
    }
    files.push(("jumps.csv".into(), jumps));
    let summary = format!(
        "dump: {} hamiltonian, dim {}, {} jump operators, hermiticity error {:e}",
        cfg.model,
        sys.spec.dim(),
        sys.jumps.len(),
        sys.hamiltonian.hermiticity_error()
    );
    Ok((files, summary))
}

/// Ion-label populations, photon number and ion purity per frame.
fn simulate_files(cfg: &ScenarioConfig) -> Result<(Vec<(String, String)>, String)> {
    let sys = ModelSystem::build(cfg.model, &cfg.params, cfg.fock_cutoff)?;
    let init = cfg.initial.as_ref().expect("validated simulate config");
    let psi0 = prepare_with_photons(&sys, &initial_input(&init.state)?, init.photons)?;
    let t_final = cfg.t_final.expect("validated simulate config");
    let ctrl = cfg.step_control().frames(cfg.frames.expect("validated simulate config"));
    let h = Hamiltonian::Constant(&sys.hamiltonian);
    let (times, states, meta) = if sys.is_closed() {
        let tr = evolve_schrodinger(&psi0, h, t_final, &ctrl)?;
        let states: Vec<CMatrix> = tr.states.iter().map(|s| s.amplitudes() * s.amplitudes().adjoint()).collect();
        (tr.times, states, tr.meta)
    } else {
        let tr = evolve_master(&DensityMatrix::from_pure(&psi0), h, &sys.jumps, t_final, &ctrl)?;
        let states = tr.states.into_iter().map(DensityMatrix::into_matrix).collect();
        (tr.times, states, tr.meta)
    };
    let ions = sys.spec.ions_only();
    let mut header = String::from("t");
    for i in 0..ions.dim() {
        let (a, b, _) = ions.labels(i);
        let _ = write!(header, ",P{a}{b}");
    }
    if sys.spec.has_cavity() {
        header.push_str(",n");
    }
    header.push_str(",purity\n");
    let mut csv = header;
    for (t, rho) in times.iter().zip(&states) {
        let ion = to_ion_state(&sys, rho, *t)?;
        csv.push_str(&format::sci17(*t));
        for i in 0..ions.dim() {
            let _ = write!(csv, ",{}", format::sci17(ion.population(i)));
        }
        if sys.spec.has_cavity() {
            let n: f64 = (0..sys.spec.dim()).map(|i| rho[(i, i)].re * sys.spec.labels(i).2 as f64).sum();
            let _ = write!(csv, ",{}", format::sci17(n));
        }
        let _ = writeln!(csv, ",{}", format::sci17(ion.purity()));
    }
    let summary = format!(
        "simulate: {} from |{}> with {} photons to t = {t_final}, {} steps of {:e}, max trace error {:e}",
        cfg.model, init.state, init.photons, meta.steps, meta.dt, meta.max_trace_error
    );
    Ok((vec![("trajectory.csv".into(), csv)], summary))
}

fn gate_files(cfg: &ScenarioConfig) -> Result<(Vec<(String, String)>, String)> {
    let r = extract_gate(cfg.model, &cfg.params, cfg.fock_cutoff, cfg.t_gate, &cfg.step_control())?;
    let summary = format!(
        "gate: {} fidelity {} phase_10 {} leakage {:?}",
        cfg.model, r.fidelity, r.phase_10, r.leakage
    );
    Ok((vec![("gate_report.json".into(), r.to_json()?)], summary))
}

pub fn scan_plan(cfg: &ScenarioConfig) -> Result<ScanPlan> {
    let s = cfg
        .scan
        .as_ref()
        .ok_or_else(|| Error::config("scan", "missing"))?;
    Ok(ScanPlan {
        axis: s.axis,
        values: s.values.clone(),
        base: cfg.params,
        fock_cutoff: cfg.fock_cutoff,
        model: cfg.model,
        reference: s.reference,
        omega_ratio: s.omega_ratio,
        t_gate: cfg.t_gate,
        ctrl: cfg.step_control(),
    })
}

fn scan_files(cfg: &ScenarioConfig, workers: usize) -> Result<(Vec<(String, String)>, String)> {
    let plan = scan_plan(cfg)?;
    let rows = regime_scan(&plan, workers)?;
    let failed = rows.iter().filter(|r| !r.ok()).count();
    let mut summary = format!(
        "scan: {} over {} ({} points, {failed} failed)",
        cfg.model,
        plan.axis.name(),
        rows.len()
    );
    for r in rows.iter().filter_map(|r| r.error.as_ref()) {
        let _ = write!(summary, "\n  failed point: {r}");
    }
    Ok((vec![("scan.csv".into(), scan_csv(&rows, plan.reference.is_some()))], summary))
}

fn berry_files(cfg: &ScenarioConfig) -> Result<(Vec<(String, String)>, String)> {
    let l = cfg.loop_spec.expect("validated berry config");
    let r = adiabatic_run(&l, &cfg.step_control())?;
    let mut summary = format!(
        "berry: numeric phase {} (half solid angle {}), return amplitude {}, dynamical bound {:e}",
        r.numeric_phase, r.half_surface_integral, r.return_amplitude, r.dynamical_phase_bound
    );
    for w in &r.warnings {
        let _ = write!(summary, "\n  warning: {w}");
    }
    Ok((vec![("berry_report.json".into(), r.to_json()?)], summary))
}

/// Compute every artifact of the task, then write them and `manifest.json`
/// into `opts.out_dir`.
pub fn run(cfg: &ScenarioConfig, opts: &RunOptions) -> Result<RunOutcome> {
    let workers = opts.workers.max(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidState(format!("cannot start worker pool: {e}")))?;
    let (files, summary) = pool.install(|| match cfg.task {
        Task::Dump => dump_files(cfg),
        Task::Simulate => simulate_files(cfg),
        Task::Gate => gate_files(cfg),
        Task::Scan => scan_files(cfg, workers),
        Task::Berry => berry_files(cfg),
    })?;

    fs::create_dir_all(&opts.out_dir).map_err(|e| Error::io(&opts.out_dir, e))?;
    let mut written = Vec::with_capacity(files.len() + 1);
    for (name, contents) in &files {
        write_atomic(&opts.out_dir.join(name), contents.as_bytes())?;
        written.push(OutputFile {
            name: name.clone(),
            sha256: sha256_hex(contents.as_bytes()),
            bytes: contents.len(),
        });
    }
    let config_text = cfg.canonical_json()?;
    write_atomic(&opts.out_dir.join("config.json"), config_text.as_bytes())?;
    written.push(OutputFile {
        name: "config.json".into(),
        sha256: sha256_hex(config_text.as_bytes()),
        bytes: config_text.len(),
    });
    let manifest = Manifest {
        tool: TOOL_NAME,
        version: TOOL_VERSION,
        task: cfg.task,
        model: cfg.model,
        config_sha256: cfg.hash()?,
        files: &written,
    };
    write_atomic(&opts.out_dir.join("manifest.json"), format::to_json(&manifest)?.as_bytes())?;
    Ok(RunOutcome {
        files: written,
        summary,
    })
}
