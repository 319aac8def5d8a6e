//! Scenario library, closed-loop runs, convergence studies and the text
//! artifacts written by the `evi` binary.
//!
//! A scenario file names a regulation problem, a design (a design file, an
//! inline design or a synthesis directive), initial states and a time grid.
//! A design file bundles a problem with its gains so it can be re-verified
//! on its own.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrator::{self, check_assumptions_with, AssumptionOptions, SimOptions, Trajectory};
use crate::linalg;
use crate::regulation::{
    self, compensator_weights, find_observer_gain, lyapunov_decrease_check, lyapunov_matrix,
    ClosedLoop, ClosedLoopKind, DesignVerification, RegulationProblem, RegulatorDesign, SYNTHESIS_MAX_ITER,
};
use crate::{Tolerances, DEFAULT_SEED};

struct Builtin {
    file: &'static str,
    text: &'static str,
}

const BUILTIN_SCENARIOS: &[(&str, Builtin)] = &[
    (
        "clipped_sine",
        Builtin {
            file: "clipped_sine.json",
            text: include_str!("../scenarios/clipped_sine.json"),
        },
    ),
    (
        "diode_circuit",
        Builtin {
            file: "diode_circuit.json",
            text: include_str!("../scenarios/diode_circuit.json"),
        },
    ),
    (
        "linear_ode",
        Builtin {
            file: "linear_ode.json",
            text: include_str!("../scenarios/linear_ode.json"),
        },
    ),
];

const BUILTIN_DESIGNS: &[(&str, Builtin)] = &[
    (
        "clipped_sine",
        Builtin {
            file: "clipped_sine.design.json",
            text: include_str!("../scenarios/clipped_sine.design.json"),
        },
    ),
    (
        "diode_circuit",
        Builtin {
            file: "diode_circuit.design.json",
            text: include_str!("../scenarios/diode_circuit.design.json"),
        },
    ),
];

/// Names of the scenarios shipped with the crate.
pub fn builtin_names() -> Vec<&'static str> {
    BUILTIN_SCENARIOS.iter().map(|(n, _)| *n).collect()
}

/// Names of the design files shipped with the crate.
pub fn builtin_design_names() -> Vec<&'static str> {
    BUILTIN_DESIGNS.iter().map(|(n, _)| *n).collect()
}

fn parse_json<T: for<'de> Deserialize<'de>>(text: &str, origin: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| {
        Error::Parse(format!("{origin}: line {} column {}: {e}", e.line(), e.column()))
    })
}

/// Optional stored numbers next to a design; `verify` recomputes them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub regulator_residual: f64,
    pub passivity_margin: f64,
    #[serde(default)]
    pub gamma_star: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignFile {
    pub name: String,
    pub problem: RegulationProblem,
    pub design: RegulatorDesign,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub certificate: Option<Certificate>,
}

impl DesignFile {
    pub fn from_json(text: &str, origin: &str) -> Result<Self> {
        parse_json(text, origin)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Loads a builtin design by name, or a design file from disk.
    pub fn load(name_or_path: &str) -> Result<Self> {
        if let Some((_, b)) = BUILTIN_DESIGNS.iter().find(|(n, b)| *n == name_or_path || b.file == name_or_path) {
            if !Path::new(name_or_path).exists() {
                return Self::from_json(b.text, b.file);
            }
        }
        let text = fs::read_to_string(name_or_path)?;
        Self::from_json(&text, name_or_path)
    }

    pub fn verify(&self) -> Result<DesignVerification> {
        regulation::verify_design(&self.problem, &self.design)
    }

    /// Fills in the certificate block from a fresh verification.
    pub fn certify(&mut self) -> Result<()> {
        let ver = self.verify()?;
        self.certificate = Some(Certificate {
            regulator_residual: ver.residuals.total(),
            passivity_margin: ver.passivity.map_or(f64::NAN, |p| p.margin),
            gamma_star: ver.gamma_star,
        });
        Ok(())
    }
}

/// Options of the synthesis directive.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthesisDirective {
    #[serde(default)]
    pub max_iter: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DesignSource {
    /// path of a design file, relative to the scenario file
    File(String),
    Synthesize { synthesize: SynthesisDirective },
    Inline(Box<RegulatorDesign>),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerKind {
    #[default]
    Static,
    Compensator,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Outputs {
    #[serde(default = "yes")]
    pub trajectory: bool,
    #[serde(default = "yes")]
    pub error: bool,
    #[serde(default = "yes")]
    pub report: bool,
}

impl Default for Outputs {
    fn default() -> Self {
        Outputs {
            trajectory: true,
            error: true,
            report: true,
        }
    }
}

/// Scenario file contents. `problem` may be omitted when the design is a
/// design file, whose problem is then used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub problem: Option<RegulationProblem>,
    pub design: DesignSource,
    #[serde(default)]
    pub controller: ControllerKind,
    pub x0: Vec<f64>,
    pub x_r0: Vec<f64>,
    pub horizon: f64,
    pub dt: f64,
    #[serde(default)]
    pub outputs: Outputs,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub study_dts: Option<Vec<f64>>,
}

/// A scenario whose design has been resolved and verified.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub description: String,
    pub problem: RegulationProblem,
    pub design: RegulatorDesign,
    pub verification: DesignVerification,
    pub controller: ControllerKind,
    pub x0: DVector<f64>,
    pub x_r0: DVector<f64>,
    pub horizon: f64,
    pub dt: f64,
    pub outputs: Outputs,
    pub study_dts: Option<Vec<f64>>,
}

fn load_design_reference(reference: &str, base: Option<&Path>) -> Result<DesignFile> {
    if let Some(dir) = base {
        let candidate = dir.join(reference);
        if candidate.exists() {
            let text = fs::read_to_string(&candidate)?;
            return DesignFile::from_json(&text, &candidate.display().to_string());
        }
    }
    DesignFile::load(reference)
}

fn synthesize(problem: &RegulationProblem, controller: ControllerKind, dir: &SynthesisDirective) -> Result<RegulatorDesign> {
    let sol = problem.solve_regulator_equations()?;
    if !sol.solvable() {
        return Err(Error::validation(
            "problem",
            format!("regulator equations have no solution: {}", sol.residuals),
        ));
    }
    let p = &problem.plant;
    let max_iter = dir.max_iter.unwrap_or(SYNTHESIS_MAX_ITER);
    let gain = regulation::find_passifying_gain_with(&p.a, &p.b, &p.g, &p.h, &p.j, max_iter)?;
    let n_ff = if problem.n_ext() > 0 {
        let ff = regulation::feedforward_match(&p.b, &problem.b_ext(), &sol.pi, &problem.b_r())?;
        if !ff.feasible {
            return Err(Error::validation(
                "problem",
                format!("external input cannot be matched: residual {:.3e}", ff.residual),
            ));
        }
        Some(ff.n)
    } else {
        None
    };
    let mut design = RegulatorDesign {
        pi: sol.pi,
        m_ff: sol.m_ff,
        k: gain.k,
        p: gain.p,
        // strictly inside the certified range
        gamma: 0.99 * gain.gamma,
        n_ff,
        l: None,
        p_hat: None,
        gamma_hat: None,
    };
    if controller == ControllerKind::Compensator {
        let (a_hat, c_hat, g_hat, h_hat, j_hat) = problem.observer_data();
        let obs = find_observer_gain(&a_hat, &c_hat, &g_hat, &h_hat, &j_hat, max_iter)?;
        design.l = Some(obs.l);
        design.p_hat = Some(obs.p_hat);
        design.gamma_hat = Some(obs.gamma_hat);
    }
    Ok(design)
}

impl Scenario {
    /// Parses, resolves and validates a scenario. `base` is the directory
    /// used to resolve a design-file reference.
    pub fn from_json(text: &str, origin: &str, base: Option<&Path>) -> Result<Self> {
        let spec: ScenarioSpec = parse_json(text, origin)?;
        Self::from_spec(spec, base)
    }

    pub fn from_spec(spec: ScenarioSpec, base: Option<&Path>) -> Result<Self> {
        let (problem, design) = match &spec.design {
            DesignSource::File(reference) => {
                let file = load_design_reference(reference, base)?;
                (spec.problem.clone().unwrap_or(file.problem), file.design)
            }
            DesignSource::Inline(d) => {
                let problem = spec
                    .problem
                    .clone()
                    .ok_or_else(|| Error::validation("problem", "required with an inline design"))?;
                (problem, (**d).clone())
            }
            DesignSource::Synthesize { synthesize: dir } => {
                let problem = spec
                    .problem
                    .clone()
                    .ok_or_else(|| Error::validation("problem", "required with a synthesis directive"))?;
                problem.validate()?;
                let design = synthesize(&problem, spec.controller, dir)?;
                (problem, design)
            }
        };
        problem.validate()?;
        let n = problem.n();
        let nr = problem.n_r();
        if design.pi.shape() != (n, nr) {
            return Err(Error::validation(
                "design.pi",
                format!("expected {n}x{nr}, got {}x{}", design.pi.nrows(), design.pi.ncols()),
            ));
        }
        if design.k.shape() != (problem.plant.b.ncols(), n) || design.m_ff.shape() != (problem.plant.b.ncols(), nr) {
            return Err(Error::validation("design", "gain dimensions do not match the plant"));
        }
        let h_res = &problem.exosystem.h_r - &problem.plant.h * &design.pi;
        let h_rel = h_res.norm() / problem.plant.h.norm().max(problem.exosystem.h_r.norm()).max(1.0);
        if h_rel > regulation::REGULATOR_TOL {
            return Err(Error::validation(
                "exosystem.h_r",
                format!("H_r differs from H Pi: relative residual {h_rel:.3e}"),
            ));
        }
        let verification = regulation::verify_design(&problem, &design)?;
        if !verification.passed() {
            return Err(Error::validation("design", verification.failures.join("; ")));
        }
        if spec.x0.len() != n {
            return Err(Error::validation("x0", format!("expected {n} components, got {}", spec.x0.len())));
        }
        if spec.x_r0.len() != nr {
            return Err(Error::validation("x_r0", format!("expected {nr} components, got {}", spec.x_r0.len())));
        }
        if !(spec.dt > 0.0) || !(spec.horizon > 0.0) {
            return Err(Error::validation("dt", "dt and horizon must be positive"));
        }
        let scenario = Scenario {
            name: spec.name,
            description: spec.description,
            problem,
            design,
            verification,
            controller: spec.controller,
            x0: DVector::from_vec(spec.x0),
            x_r0: DVector::from_vec(spec.x_r0),
            horizon: spec.horizon,
            dt: spec.dt,
            outputs: spec.outputs,
            study_dts: spec.study_dts,
        };
        scenario.check_initial_state()?;
        Ok(scenario)
    }

    /// Builtin name, or a path to a scenario file.
    pub fn load(name_or_path: &str) -> Result<Self> {
        if let Some((_, b)) = BUILTIN_SCENARIOS.iter().find(|(n, _)| *n == name_or_path) {
            return Self::from_json(b.text, b.file, None);
        }
        let path = Path::new(name_or_path);
        if !path.exists() {
            return Err(Error::UnknownScenario(name_or_path.to_string()));
        }
        let text = fs::read_to_string(path)?;
        Self::from_json(&text, name_or_path, path.parent())
    }

    pub fn closed_loop(&self) -> Result<ClosedLoop> {
        match self.controller {
            ControllerKind::Static => self.problem.static_closed_loop(&self.design),
            ControllerKind::Compensator => self.problem.compensator_closed_loop(&self.design),
        }
    }

    /// The initial closed-loop state must be admissible after at most one
    /// application of the jump map.
    fn check_initial_state(&self) -> Result<()> {
        let cl = self.closed_loop()?;
        let x = cl.initial_state(&self.x0, &self.x_r0);
        let tol = Tolerances::default();
        let xp = integrator::jump_map(&cl.system, 0.0, &x)?;
        let eta = cl.system.static_multiplier(0.0, &xp, tol.algebraic)?;
        let v = cl.system.constraint_value(0.0, &xp, &eta);
        let viol = cl.system.moving_set.cone.membership_violation(&v);
        if viol > tol.trajectory {
            return Err(Error::validation(
                "x0",
                format!("initial state not admissible after one jump: violation {viol:.3e}"),
            ));
        }
        Ok(())
    }

    /// Storage matrix for the regulation error: `P` for the static loop,
    /// `blkdiag(α P, β P̂)` for the compensator.
    pub fn lyapunov_weight(&self) -> Result<DMatrix<f64>> {
        match self.controller {
            ControllerKind::Static => Ok(self.design.p.clone()),
            ControllerKind::Compensator => {
                let (alpha, beta) = compensator_weights(&self.design, &self.problem.plant.b)?;
                let p_hat = self.design.p_hat.as_ref().expect("checked by compensator_weights");
                Ok(lyapunov_matrix(&[(&self.design.p, alpha), (p_hat, beta)]))
            }
        }
    }

    /// Storage certificate for the assumption checks on the closed loop,
    /// built from `P` and `Πᵀ P Π` on the exosystem blocks.
    pub fn closed_loop_certificate(&self) -> DMatrix<f64> {
        let p = &self.design.p;
        let mut p_r = self.design.pi.transpose() * p * &self.design.pi;
        if !(linalg::min_eig_sym(&p_r) > 0.0) {
            p_r = DMatrix::identity(self.problem.n_r(), self.problem.n_r());
        }
        let p_r = linalg::symmetrize(&p_r);
        match self.controller {
            ControllerKind::Static => linalg::block_diag(&[p, &p_r]),
            ControllerKind::Compensator => linalg::block_diag(&[p, p, &p_r, &p_r]),
        }
    }
}

/// Overrides applied on top of the scenario's own grid.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub dt: Option<f64>,
    pub horizon: Option<f64>,
    pub seed: u64,
    pub tol: Tolerances,
    /// number of random states used by the sampled assumption checks
    pub assumption_samples: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            dt: None,
            horizon: None,
            seed: DEFAULT_SEED,
            tol: Tolerances::default(),
            assumption_samples: 200,
        }
    }
}

/// Closed-loop simulation of a scenario plus everything derived from it.
#[derive(Debug, Clone)]
pub struct ScenarioRun {
    pub name: String,
    pub dt: f64,
    pub horizon: f64,
    pub closed_loop: ClosedLoop,
    pub trajectory: Trajectory,
    /// regulation error `e = E X` per sample
    pub errors: Vec<DVector<f64>>,
    /// tracking output `C x − C_r x_r` per sample
    pub tracking: Vec<DVector<f64>>,
    /// input correction `u_η = E_u η` per sample, when the plant declares
    /// an input map
    pub input_corrections: Option<Vec<DVector<f64>>>,
    /// `⟨η − η_r, v − v_r⟩` per sample
    pub cross_terms: Vec<f64>,
    pub report: Vec<(String, String)>,
}

impl ScenarioRun {
    pub fn report_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.report {
            let _ = writeln!(s, "{k}: {v}");
        }
        s
    }

    pub fn report_value(&self, key: &str) -> Option<&str> {
        self.report.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn plant_states(&self) -> Vec<DVector<f64>> {
        self.trajectory.states.iter().map(|x| self.closed_loop.plant_state(x)).collect()
    }

    pub fn exo_states(&self) -> Vec<DVector<f64>> {
        self.trajectory.states.iter().map(|x| self.closed_loop.exo_state(x)).collect()
    }

    /// Writes `t, e1..em, w1..wp, [u_eta1..], jump_flag`.
    pub fn write_error_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let m = self.errors.first().map_or(0, |e| e.len());
        let p = self.tracking.first().map_or(0, |w| w.len());
        let mut header = vec!["t".to_string()];
        header.extend((1..=m).map(|i| format!("e{i}")));
        header.extend((1..=p).map(|i| format!("w{i}")));
        if let Some(u) = &self.input_corrections {
            header.extend((1..=u.first().map_or(0, |x| x.len())).map(|i| format!("u_eta{i}")));
        }
        header.push("jump_flag".into());
        writeln!(out, "{}", header.join(","))?;
        for k in 0..self.trajectory.len() {
            let mut row = vec![linalg::fmt17(self.trajectory.times[k])];
            row.extend(self.errors[k].iter().map(|&v| linalg::fmt17(v)));
            row.extend(self.tracking[k].iter().map(|&v| linalg::fmt17(v)));
            if let Some(u) = &self.input_corrections {
                row.extend(u[k].iter().map(|&v| linalg::fmt17(v)));
            }
            row.push(if self.trajectory.jump_flags[k] { "1" } else { "0" }.into());
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }

    /// Writes the requested artifacts into `dir` and returns their paths.
    pub fn write_outputs(&self, dir: &Path, outputs: Outputs) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        if outputs.trajectory {
            let path = dir.join("trajectory.csv");
            let mut w = BufWriter::new(fs::File::create(&path)?);
            self.trajectory.write_csv(&mut w)?;
            w.flush()?;
            written.push(path);
        }
        if outputs.error {
            let path = dir.join("error.csv");
            let mut w = BufWriter::new(fs::File::create(&path)?);
            self.write_error_csv(&mut w)?;
            w.flush()?;
            written.push(path);
        }
        if outputs.report {
            let path = dir.join("report.txt");
            fs::write(&path, self.report_text())?;
            written.push(path);
        }
        Ok(written)
    }
}

fn sci(x: f64) -> String {
    format!("{x:.6e}")
}

/// Simulates the closed loop of a scenario and assembles the report.
pub fn simulate_scenario(sc: &Scenario, opts: &RunOptions) -> Result<ScenarioRun> {
    let dt = opts.dt.unwrap_or(sc.dt);
    let horizon = opts.horizon.unwrap_or(sc.horizon);
    let cl = sc.closed_loop()?;
    let sys = &cl.system;
    let x0 = cl.initial_state(&sc.x0, &sc.x_r0);
    let sim_opts = SimOptions {
        t0: 0.0,
        tol: opts.tol,
    };
    let tr = integrator::simulate_with(sys, &x0, horizon, dt, &sim_opts)?;

    let p = &sc.problem.plant;
    let c_r = &sc.problem.exosystem.c_r;
    let errors: Vec<DVector<f64>> = tr.states.iter().map(|x| cl.error(x)).collect();
    let tracking: Vec<DVector<f64>> = tr
        .states
        .iter()
        .map(|x| &p.c * cl.plant_state(x) - c_r * cl.exo_state(x))
        .collect();
    let input_corrections = p
        .input_map
        .as_ref()
        .map(|e| tr.multipliers.iter().map(|lam| e * cl.plant_multiplier(lam)).collect::<Vec<_>>());
    let cross_terms: Vec<f64> = (0..tr.len())
        .map(|k| {
            let lam = &tr.multipliers[k];
            let v = &tr.constraint_values[k];
            let d = cl.ds;
            let dv = v.rows(0, d) - v.rows(v.len() - d, d);
            (cl.plant_multiplier(lam) - cl.exo_multiplier(lam)).dot(&dv)
        })
        .collect();

    let weight = sc.lyapunov_weight()?;
    let lyap = lyapunov_decrease_check(&errors, &tr.jump_flags, &weight, opts.tol.trajectory);

    let cone = &sys.moving_set.cone;
    let max_violation = tr
        .constraint_values
        .iter()
        .map(|v| cone.membership_violation(v))
        .fold(0.0, f64::max);

    let assumption_opts = AssumptionOptions {
        samples: opts.assumption_samples,
        seed: opts.seed,
        tol: opts.tol.algebraic,
        ..AssumptionOptions::default()
    };
    let assumptions = check_assumptions_with(sys, &sc.closed_loop_certificate(), &assumption_opts)?;

    let mut report: Vec<(String, String)> = vec![
        ("scenario".into(), sc.name.clone()),
        (
            "controller".into(),
            match cl.kind {
                ClosedLoopKind::Static => "static".into(),
                ClosedLoopKind::Compensator => "compensator".into(),
            },
        ),
        ("dt".into(), sci(dt)),
        ("horizon".into(), sci(horizon)),
        ("samples".into(), tr.len().to_string()),
        ("seed".into(), opts.seed.to_string()),
    ];
    report.extend(sc.verification.lines().into_iter().filter(|(k, _)| k != "verdict"));
    for (k, v) in assumptions.lines() {
        report.push((k, v));
    }
    report.push(("assumptions_passed".into(), assumptions.all_passed().to_string()));
    report.push(("max_constraint_violation".into(), sci(max_violation)));
    report.push(("max_cp_residual".into(), sci(tr.max_residual(sys))));
    report.push(("jumps".into(), tr.jumps.len().to_string()));
    report.push((
        "initial_jump".into(),
        tr.jumps.first().is_some_and(|j| j.t == 0.0).to_string(),
    ));
    report.push(("lipschitz_estimate".into(), sci(tr.lipschitz)));
    let final_w = tracking.last().map_or(0.0, |w| w.amax());
    let final_e = errors.last().map_or(0.0, |e| e.norm());
    report.push(("terminal_tracking_error".into(), sci(final_w)));
    report.push(("terminal_regulation_error".into(), sci(final_e)));
    report.push(("max_cross_term".into(), sci(cross_terms.iter().copied().fold(f64::NEG_INFINITY, f64::max))));
    report.push(("lyapunov_monotone".into(), lyap.monotone.to_string()));
    report.push(("lyapunov_worst_increase".into(), sci(lyap.worst_increase)));
    report.push(("lyapunov_worst_jump_increase".into(), sci(lyap.worst_jump_increase)));
    if let Some(u) = &input_corrections {
        let max_u = u.iter().map(|x| x.amax()).fold(0.0, f64::max);
        report.push(("max_input_correction".into(), sci(max_u)));
    }

    Ok(ScenarioRun {
        name: sc.name.clone(),
        dt,
        horizon,
        closed_loop: cl,
        trajectory: tr,
        errors,
        tracking,
        input_corrections,
        cross_terms,
        report,
    })
}

/// Loads, simulates and writes the artifacts of one scenario into
/// `out_dir/<name>`.
pub fn run_scenario(name_or_path: &str, opts: &RunOptions, out_dir: &Path) -> Result<ScenarioRun> {
    let sc = Scenario::load(name_or_path)?;
    let run = simulate_scenario(&sc, opts)?;
    run.write_outputs(&out_dir.join(&sc.name), sc.outputs)?;
    Ok(run)
}

/// Terminal-state errors against a refined reference and the fitted order.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceTable {
    /// strictly decreasing
    pub dts: Vec<f64>,
    pub errors: Vec<f64>,
    pub reference_dt: f64,
    /// time at which the errors are measured
    pub sample_time: f64,
    /// least-squares slope of `log error` against `log dt`
    pub order: f64,
}

impl ConvergenceTable {
    pub fn lines(&self) -> Vec<(String, String)> {
        let mut out = vec![
            ("reference_dt".into(), sci(self.reference_dt)),
            ("sample_time".into(), sci(self.sample_time)),
        ];
        for (dt, e) in self.dts.iter().zip(&self.errors) {
            out.push((format!("error_dt_{dt:e}"), sci(*e)));
        }
        out.push(("fitted_order".into(), format!("{:.4}", self.order)));
        out
    }

    pub fn text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.lines() {
            let _ = writeln!(s, "{k}: {v}");
        }
        s
    }
}

fn is_multiple(x: f64, base: f64) -> Option<usize> {
    let r = x / base;
    let k = r.round();
    ((r - k).abs() <= 1e-9 * r.max(1.0) && k >= 1.0).then_some(k as usize)
}

fn lcm(a: usize, b: usize) -> usize {
    fn gcd(a: usize, b: usize) -> usize {
        if b == 0 { a } else { gcd(b, a % b) }
    }
    a / gcd(a, b) * b
}

fn fitted_order(dts: &[f64], errors: &[f64]) -> f64 {
    let xs: Vec<f64> = dts.iter().map(|d| d.ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

/// Runs the scenario at each `dt` and at `min(dt) / 4`, then compares the
/// closed-loop states at the last time that lies on every grid and is not
/// an event sample in any run.
pub fn convergence_study(sc: &Scenario, dts: &[f64], opts: &RunOptions) -> Result<ConvergenceTable> {
    if dts.len() < 3 {
        return Err(Error::validation("dts", format!("need at least 3 step sizes, got {}", dts.len())));
    }
    let mut dts = dts.to_vec();
    dts.sort_by(|a, b| b.total_cmp(a));
    if dts.windows(2).any(|w| w[0] == w[1]) || dts.iter().any(|d| !(*d > 0.0)) {
        return Err(Error::validation("dts", "step sizes must be positive and distinct"));
    }
    let dt_min = *dts.last().expect("nonempty");
    let ratios: Vec<usize> = dts
        .iter()
        .map(|d| is_multiple(*d, dt_min).ok_or_else(|| Error::validation("dts", format!("{d} is not a multiple of {dt_min}"))))
        .collect::<Result<_>>()?;
    let horizon = opts.horizon.unwrap_or(sc.horizon);
    let dt_ref = dt_min / 4.0;
    let cl = sc.closed_loop()?;
    let x0 = cl.initial_state(&sc.x0, &sc.x_r0);
    let sim_opts = SimOptions { t0: 0.0, tol: opts.tol };
    let reference = integrator::simulate_with(&cl.system, &x0, horizon, dt_ref, &sim_opts)?;
    let runs: Vec<Trajectory> = dts
        .iter()
        .map(|&dt| integrator::simulate_with(&cl.system, &x0, horizon, dt, &sim_opts))
        .collect::<Result<_>>()?;

    // indices in units of dt_min; multiples of the lcm lie on every grid
    let coarse = ratios.iter().fold(1, |acc, &r| lcm(acc, r));
    let steps_min = is_multiple(horizon, dt_min)
        .ok_or_else(|| Error::validation("horizon", format!("{horizon} is not a multiple of {dt_min}")))?;
    let mut chosen = None;
    let mut k = steps_min - steps_min % coarse;
    loop {
        let flagged = reference.jump_flags[4 * k]
            || runs.iter().zip(&ratios).any(|(tr, &r)| tr.jump_flags[k / r]);
        if !flagged && k > 0 {
            chosen = Some(k);
            break;
        }
        if k < coarse {
            break;
        }
        k -= coarse;
    }
    let k = chosen.ok_or_else(|| Error::validation("dts", "no common sample outside jumps"))?;
    let x_ref = &reference.states[4 * k];
    let errors: Vec<f64> = runs
        .iter()
        .zip(&ratios)
        .map(|(tr, &r)| (&tr.states[k / r] - x_ref).norm())
        .collect();
    if errors.iter().any(|e| !(*e > 0.0)) {
        return Err(Error::validation(
            "dts",
            "a run matches the reference exactly; the error norm cannot be fitted",
        ));
    }
    Ok(ConvergenceTable {
        order: fitted_order(&dts, &errors),
        dts,
        errors,
        reference_dt: dt_ref,
        sample_time: reference.times[4 * k],
    })
}

/// Loads and re-verifies a design file or builtin design.
pub fn verify_design_file(name_or_path: &str) -> Result<DesignVerification> {
    DesignFile::load(name_or_path)?.verify()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_load_and_verify() {
        for name in builtin_names() {
            let sc = Scenario::load(name).unwrap();
            assert!(sc.verification.passed(), "{name}");
        }
        for name in builtin_design_names() {
            assert!(verify_design_file(name).unwrap().passed(), "{name}");
        }
    }

    #[test]
    fn design_file_round_trip() {
        let mut file = DesignFile::load("clipped_sine").unwrap();
        file.certify().unwrap();
        let text = file.to_json().unwrap();
        let back = DesignFile::from_json(&text, "memory").unwrap();
        assert_eq!(back, file);
    }

    #[test]
    fn broken_constraint_embedding_is_refused() {
        let mut spec: ScenarioSpec = serde_json::from_str(BUILTIN_SCENARIOS[0].1.text).unwrap();
        let mut problem = DesignFile::load("clipped_sine").unwrap().problem;
        problem.exosystem.h_r[(0, 1)] = -0.5;
        spec.problem = Some(problem);
        let err = Scenario::from_spec(spec, None).unwrap_err();
        match err {
            Error::Validation { field, message } => {
                assert_eq!(field, "exosystem.h_r");
                assert!(message.contains("5.000e-1") || message.contains("residual"), "{message}");
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn parse_errors_carry_position() {
        let err = Scenario::from_json("{\n  \"name\": 3\n}", "bad.json", None).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("bad.json") && msg.contains("line 2"), "{msg}");
    }

    #[test]
    fn study_rejects_bad_grids() {
        let sc = Scenario::load("linear_ode").unwrap();
        let opts = RunOptions::default();
        assert!(convergence_study(&sc, &[0.004, 0.002], &opts).is_err());
        assert!(convergence_study(&sc, &[0.005, 0.002, 0.001], &opts).is_ok());
        assert!(convergence_study(&sc, &[0.0025, 0.002, 0.001], &opts).is_err());
    }

    #[test]
    fn fitted_order_of_exact_power_law() {
        let dts = [0.4, 0.2, 0.1];
        let errs: Vec<f64> = dts.iter().map(|d| 3.0 * d * d).collect();
        assert!((fitted_order(&dts, &errs) - 2.0).abs() < 1e-12);
    }
}
