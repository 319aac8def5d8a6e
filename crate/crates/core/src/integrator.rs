//! Catching-up time stepping for
//!
//! ```text
//! ẋ = A x + B u + F x_r + B_ext f_ext + f(t, x) + G η
//! v = H x + J η + h(t),      K ∋ v ⟂ η ∈ K*
//! ```
//!
//! together with the jump rule for offsets of bounded variation and the
//! matrix tests for well-posedness.

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{normal_cone_residual, MovingSet, Regularity};
use crate::lcp::{least_norm_complementarity, solve_cone_complementarity};
use crate::linalg;
use crate::signal::VectorSignal;
use crate::Tolerances;

/// Drift callback `f(t, x)`.
pub type DriftFn = Arc<dyn Fn(f64, &DVector<f64>) -> DVector<f64> + Send + Sync>;

/// Nonlinear drift with its global Lipschitz modulus in `x`.
#[derive(Clone)]
pub struct Drift {
    pub f: DriftFn,
    pub lipschitz: f64,
}

impl fmt::Debug for Drift {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Drift").field("lipschitz", &self.lipschitz).finish_non_exhaustive()
    }
}

/// System data. Input, exogenous and external channels default to width
/// zero; add them with the `with_*` builders.
#[derive(Debug, Clone)]
pub struct EviSystem {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub f: DMatrix<f64>,
    pub g: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub j: DMatrix<f64>,
    pub b_ext: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub c_r: DMatrix<f64>,
    pub moving_set: MovingSet,
    pub u: VectorSignal,
    pub x_r: VectorSignal,
    pub f_ext: VectorSignal,
    pub drift: Option<Drift>,
    lipschitz_modulus: Option<f64>,
}

impl EviSystem {
    pub fn new(
        a: DMatrix<f64>,
        g: DMatrix<f64>,
        h: DMatrix<f64>,
        j: DMatrix<f64>,
        moving_set: MovingSet,
    ) -> Result<Self> {
        let n = a.nrows();
        let sys = EviSystem {
            b: DMatrix::zeros(n, 0),
            f: DMatrix::zeros(n, 0),
            b_ext: DMatrix::zeros(n, 0),
            c: DMatrix::zeros(0, n),
            c_r: DMatrix::zeros(0, 0),
            u: VectorSignal::zeros(0),
            x_r: VectorSignal::zeros(0),
            f_ext: VectorSignal::zeros(0),
            drift: None,
            lipschitz_modulus: None,
            a,
            g,
            h,
            j,
            moving_set,
        };
        sys.validate()?;
        Ok(sys)
    }

    pub fn with_input(mut self, b: DMatrix<f64>, u: VectorSignal) -> Result<Self> {
        self.b = b;
        self.u = u;
        self.validate()?;
        Ok(self)
    }

    pub fn with_exogenous(mut self, f: DMatrix<f64>, x_r: VectorSignal) -> Result<Self> {
        self.f = f;
        self.x_r = x_r;
        self.validate()?;
        Ok(self)
    }

    pub fn with_external(mut self, b_ext: DMatrix<f64>, f_ext: VectorSignal) -> Result<Self> {
        self.b_ext = b_ext;
        self.f_ext = f_ext;
        self.validate()?;
        Ok(self)
    }

    pub fn with_regulated_output(mut self, c: DMatrix<f64>, c_r: DMatrix<f64>) -> Result<Self> {
        self.c = c;
        self.c_r = c_r;
        self.validate()?;
        Ok(self)
    }

    pub fn with_drift(mut self, drift: Drift) -> Self {
        self.drift = Some(drift);
        self
    }

    pub fn with_lipschitz_modulus(mut self, rho: f64) -> Self {
        self.lipschitz_modulus = Some(rho);
        self
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn ds(&self) -> usize {
        self.moving_set.dim()
    }

    /// `ρ`: the stored value, or `‖A‖` plus the drift modulus.
    pub fn lipschitz_modulus(&self) -> f64 {
        self.lipschitz_modulus.unwrap_or_else(|| {
            linalg::op_norm(&self.a) + self.drift.as_ref().map_or(0.0, |d| d.lipschitz)
        })
    }

    /// Step-size hint `0.1 / ρ`.
    pub fn suggested_dt(&self) -> Option<f64> {
        let rho = self.lipschitz_modulus();
        (rho > 0.0).then(|| 0.1 / rho)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        let ds = self.ds();
        let check = |name: &str, m: &DMatrix<f64>, r: usize, c: Option<usize>| -> Result<()> {
            if m.nrows() != r || c.is_some_and(|c| m.ncols() != c) {
                let want = match c {
                    Some(c) => format!("{r}x{c}"),
                    None => format!("{r}x*"),
                };
                return Err(Error::dim(format!("system matrix {name}"), want, format!("{}x{}", m.nrows(), m.ncols())));
            }
            Ok(())
        };
        check("A", &self.a, n, Some(n))?;
        check("B", &self.b, n, Some(self.u.dim()))?;
        check("F", &self.f, n, Some(self.x_r.dim()))?;
        check("G", &self.g, n, Some(ds))?;
        check("H", &self.h, ds, Some(n))?;
        check("J", &self.j, ds, Some(ds))?;
        check("B_ext", &self.b_ext, n, Some(self.f_ext.dim()))?;
        check("C", &self.c, self.c.nrows(), Some(n))?;
        check("C_r", &self.c_r, self.c.nrows(), Some(self.c_r.ncols()))?;
        if self.c_r.ncols() != 0 && self.c_r.ncols() != self.x_r.dim() && self.x_r.dim() != 0 {
            return Err(Error::dim("system matrix C_r columns", self.x_r.dim(), self.c_r.ncols()));
        }
        self.moving_set.validate()
    }

    /// `B u + F x_r + B_ext f_ext` with signals taken as left limits at `t`.
    fn forcing_left(&self, t: f64) -> DVector<f64> {
        let mut out = DVector::zeros(self.n());
        if self.u.dim() > 0 {
            out += &self.b * self.u.eval_left(t);
        }
        if self.x_r.dim() > 0 {
            out += &self.f * self.x_r.eval_left(t);
        }
        if self.f_ext.dim() > 0 {
            out += &self.b_ext * self.f_ext.eval_left(t);
        }
        out
    }

    /// Times in `(t0, t1]` where some signal jumps.
    pub fn event_times(&self, t0: f64, t1: f64) -> Vec<f64> {
        let mut ev: Vec<f64> = [&self.moving_set.offset, &self.u, &self.x_r, &self.f_ext]
            .iter()
            .flat_map(|s| s.breakpoints(t0, t1))
            .collect();
        ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
        ev.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * b.abs().max(1.0));
        ev
    }

    /// Static multiplier set at `(t, x)`: least-norm `η` with
    /// `K ∋ H x + J η + h(t) ⟂ η ∈ K*`.
    pub fn static_multiplier(&self, t: f64, x: &DVector<f64>, tol: f64) -> Result<DVector<f64>> {
        let q = &self.h * x + self.moving_set.offset_at(t);
        least_norm_complementarity(&self.moving_set.cone, &self.j, &q, tol)
    }

    pub fn constraint_value(&self, t: f64, x: &DVector<f64>, eta: &DVector<f64>) -> DVector<f64> {
        &self.h * x + &self.j * eta + self.moving_set.offset_at(t)
    }
}

/// Per-`dt` cache of `W = (I − dt A)⁻¹`, `W G` and the step LCP matrix.
#[derive(Debug, Clone)]
pub struct Stepper<'a> {
    sys: &'a EviSystem,
    dt: f64,
    w: DMatrix<f64>,
    wg: DMatrix<f64>,
    m_step: DMatrix<f64>,
    tol: f64,
}

impl<'a> Stepper<'a> {
    pub fn new(sys: &'a EviSystem, dt: f64, tol: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::StepRejected {
                dt,
                reason: "step must be positive and finite".into(),
            });
        }
        let n = sys.n();
        let lhs = DMatrix::identity(n, n) - &sys.a * dt;
        let w = lhs.clone().lu().try_inverse().ok_or_else(|| Error::StepRejected {
            dt,
            reason: "I − dt·A is singular".into(),
        })?;
        let cond = linalg::op_norm(&lhs) * linalg::op_norm(&w);
        if !cond.is_finite() || cond > 1e14 {
            return Err(Error::StepRejected {
                dt,
                reason: format!("I − dt·A is numerically singular (condition {cond:.2e})"),
            });
        }
        let wg = &w * &sys.g;
        let m_step = &sys.j + &sys.h * &wg * dt;
        Ok(Stepper {
            sys,
            dt,
            w,
            wg,
            m_step,
            tol,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// One step from `(t, x)` to `t + dt`; signals enter as left limits at
    /// `t + dt`, so a jump exactly at the end of the step is left to
    /// [`jump_map`].
    pub fn step(&self, t: f64, x: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        let sys = self.sys;
        let dt = self.dt;
        let t1 = t + dt;
        let mut rhs = x + sys.forcing_left(t1) * dt;
        if let Some(d) = &sys.drift {
            rhs += (d.f)(t, x) * dt;
        }
        let xhat = &self.w * rhs;
        let q = &sys.h * &xhat + sys.moving_set.offset.eval_left(t1);
        let eta = solve_cone_complementarity(&sys.moving_set.cone, &self.m_step, &q, self.tol)
            .map_err(|e| Error::Simulation { t: t1, source: Box::new(e) })?;
        let x_next = xhat + &self.wg * &eta * dt;
        Ok((x_next, eta))
    }
}

/// One catching-up step; see [`Stepper::step`].
pub fn step(sys: &EviSystem, t: f64, x: &DVector<f64>, dt: f64) -> Result<(DVector<f64>, DVector<f64>)> {
    Stepper::new(sys, dt, Tolerances::default().algebraic)?.step(t, x)
}

/// Post-jump state at `t`.
///
/// An admissible `x⁻` (the static problem at `(t, x⁻)` has a multiplier) is
/// returned unchanged. Otherwise the unit-atom problem
/// `x⁺ = x⁻ + G λ`, `K ∋ H x⁺ + J λ + h(t) ⟂ λ ∈ K*` is solved, which for
/// `G = H = I`, `J = 0` is the projection of `x⁻` onto `S(t)`.
pub fn jump_map(sys: &EviSystem, t: f64, x_minus: &DVector<f64>) -> Result<DVector<f64>> {
    jump_map_tol(sys, t, x_minus, Tolerances::default().algebraic)
}

pub fn jump_map_tol(sys: &EviSystem, t: f64, x_minus: &DVector<f64>, tol: f64) -> Result<DVector<f64>> {
    if x_minus.len() != sys.n() {
        return Err(Error::dim("jump_map state", sys.n(), x_minus.len()));
    }
    let h = sys.moving_set.check_nonempty(t)?;
    let q = &sys.h * x_minus + &h;
    let cone = &sys.moving_set.cone;
    if solve_cone_complementarity(cone, &sys.j, &q, tol).is_ok() {
        return Ok(x_minus.clone());
    }
    let m = &sys.h * &sys.g + &sys.j;
    let lambda = solve_cone_complementarity(cone, &m, &q, tol).map_err(|e| Error::Jump {
        t,
        reason: e.to_string(),
    })?;
    Ok(x_minus + &sys.g * lambda)
}

#[derive(Debug, Clone, PartialEq)]
pub struct JumpRecord {
    pub t: f64,
    pub x_minus: DVector<f64>,
    pub x_plus: DVector<f64>,
}

/// Sampled solution on a uniform grid. Samples are right limits: at a jump
/// time the stored state is `x⁺`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub multipliers: Vec<DVector<f64>>,
    /// `v = H x + J η + h(t)`
    pub constraint_values: Vec<DVector<f64>>,
    pub offsets: Vec<DVector<f64>>,
    /// set on samples where an event (signal jump) was processed
    pub jump_flags: Vec<bool>,
    pub jumps: Vec<JumpRecord>,
    /// Lipschitz constant between jumps, see [`lipschitz_estimate`]
    pub lipschitz: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_state(&self) -> &DVector<f64> {
        self.states.last().expect("nonempty trajectory")
    }

    /// Largest cone-CP residual over all samples, with the residual of
    /// `(v − h, η)` taken against the offset stored with each sample.
    pub fn max_residual(&self, sys: &EviSystem) -> f64 {
        (0..self.len())
            .map(|k| {
                let v = &self.constraint_values[k] - &self.offsets[k];
                normal_cone_residual(&sys.moving_set.cone, &v, &self.multipliers[k], &self.offsets[k])
            })
            .fold(0.0, f64::max)
    }

    /// Writes `t, x1..xn, eta1..etad, v1..vd, jump_flag`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let n = self.states.first().map_or(0, |x| x.len());
        let d = self.multipliers.first().map_or(0, |e| e.len());
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|i| format!("x{i}")));
        header.extend((1..=d).map(|i| format!("eta{i}")));
        header.extend((1..=d).map(|i| format!("v{i}")));
        header.push("jump_flag".into());
        writeln!(out, "{}", header.join(","))?;
        for k in 0..self.len() {
            let mut row = vec![linalg::fmt17(self.times[k])];
            row.extend(self.states[k].iter().map(|&v| linalg::fmt17(v)));
            row.extend(self.multipliers[k].iter().map(|&v| linalg::fmt17(v)));
            row.extend(self.constraint_values[k].iter().map(|&v| linalg::fmt17(v)));
            row.push(if self.jump_flags[k] { "1" } else { "0" }.into());
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimOptions {
    pub t0: f64,
    pub tol: Tolerances,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            t0: 0.0,
            tol: Tolerances::default(),
        }
    }
}

pub fn simulate(sys: &EviSystem, x0: &DVector<f64>, t_end: f64, dt: f64) -> Result<Trajectory> {
    simulate_with(sys, x0, t_end, dt, &SimOptions::default())
}

/// Integrates on the grid `t0 + k·dt`. Signal jumps are snapped to the
/// nearest grid point, where the jump map is applied and the multiplier is
/// recomputed against the right-limit offset.
pub fn simulate_with(sys: &EviSystem, x0: &DVector<f64>, t_end: f64, dt: f64, opts: &SimOptions) -> Result<Trajectory> {
    sys.validate()?;
    if x0.len() != sys.n() {
        return Err(Error::dim("initial state", sys.n(), x0.len()));
    }
    let t0 = opts.t0;
    let span = t_end - t0;
    let steps_f = span / dt;
    let steps = steps_f.round();
    if !(span >= 0.0) || (steps - steps_f).abs() > 1e-6 {
        return Err(Error::StepRejected {
            dt,
            reason: format!("horizon {span} is not a multiple of dt"),
        });
    }
    let steps = steps as usize;
    let tol = opts.tol.algebraic;
    let stepper = Stepper::new(sys, dt, tol)?;

    let mut event_idx: Vec<usize> = sys
        .event_times(t0, t_end)
        .into_iter()
        .map(|e| ((e - t0) / dt).round() as usize)
        .filter(|&k| k >= 1 && k <= steps)
        .collect();
    event_idx.dedup();
    let mut next_event = event_idx.into_iter().peekable();

    let mut tr = Trajectory {
        times: Vec::with_capacity(steps + 1),
        states: Vec::with_capacity(steps + 1),
        multipliers: Vec::with_capacity(steps + 1),
        constraint_values: Vec::with_capacity(steps + 1),
        offsets: Vec::with_capacity(steps + 1),
        jump_flags: Vec::with_capacity(steps + 1),
        jumps: Vec::new(),
        lipschitz: 0.0,
    };
    let wrap = |t: f64, e: Error| match e {
        Error::Simulation { .. } => e,
        other => Error::Simulation { t, source: Box::new(other) },
    };

    let x_init = jump_map_tol(sys, t0, x0, tol).map_err(|e| wrap(t0, e))?;
    let initial_jump = x_init != *x0;
    if initial_jump {
        tr.jumps.push(JumpRecord {
            t: t0,
            x_minus: x0.clone(),
            x_plus: x_init.clone(),
        });
    }
    let eta0 = sys.static_multiplier(t0, &x_init, tol).map_err(|e| wrap(t0, e))?;
    push_sample(&mut tr, sys, t0, x_init, eta0, initial_jump);

    for k in 1..=steps {
        let t_prev = tr.times[k - 1];
        let t = t0 + k as f64 * dt;
        let x_prev = tr.states[k - 1].clone();
        let (mut x, mut eta) = stepper.step(t_prev, &x_prev).map_err(|e| wrap(t, e))?;
        let is_event = next_event.peek() == Some(&k);
        if is_event {
            next_event.next();
            let x_plus = jump_map_tol(sys, t, &x, tol).map_err(|e| wrap(t, e))?;
            tr.jumps.push(JumpRecord {
                t,
                x_minus: x.clone(),
                x_plus: x_plus.clone(),
            });
            x = x_plus;
            eta = sys.static_multiplier(t, &x, tol).map_err(|e| wrap(t, e))?;
        }
        push_sample(&mut tr, sys, t, x, eta, is_event);
    }
    tr.lipschitz = lipschitz_estimate(&tr);
    Ok(tr)
}

fn push_sample(tr: &mut Trajectory, sys: &EviSystem, t: f64, x: DVector<f64>, eta: DVector<f64>, flag: bool) {
    let h = sys.moving_set.offset_at(t);
    let v = &sys.h * &x + &sys.j * &eta + &h;
    tr.times.push(t);
    tr.states.push(x);
    tr.multipliers.push(eta);
    tr.constraint_values.push(v);
    tr.offsets.push(h);
    tr.jump_flags.push(flag);
}

/// Largest `|x_{k} − x_{k−1}| / (t_k − t_{k−1})` over consecutive samples,
/// skipping intervals that end on an event sample.
pub fn lipschitz_estimate(traj: &Trajectory) -> f64 {
    (1..traj.len())
        .filter(|&k| !traj.jump_flags[k])
        .map(|k| (&traj.states[k] - &traj.states[k - 1]).norm() / (traj.times[k] - traj.times[k - 1]))
        .fold(0.0, f64::max)
}

/// Outcome of one matrix test with the number behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub passed: bool,
    pub margin: f64,
}

impl Check {
    fn new(passed: bool, margin: f64) -> Self {
        Check { passed, margin }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (margin {:.6e})", if self.passed { "pass" } else { "fail" }, self.margin)
    }
}

/// Well-posedness checks. A3 and A4 are sampled, hence non-exhaustive.
#[derive(Debug, Clone, PartialEq)]
pub struct AssumptionReport {
    /// min eigenvalue of `(J + Jᵀ)/2`
    pub a1_j_psd: Check,
    /// largest `‖(PG − Hᵀ) b‖` over a kernel basis of `J + Jᵀ`
    pub a1_kernel_inclusion: Check,
    /// kernel vector of `J + Jᵀ` not annihilated by `PG − Hᵀ`
    pub a1_witness: Option<DVector<f64>>,
    /// `ρ − ‖A‖`
    pub a2_lipschitz: Check,
    /// largest sampled min-slack `min R(Hx + h(t))` (positive passes); `+∞`
    /// when `J` is positive definite
    pub a3_constraint_qualification: Check,
    /// fraction of admissible samples whose least-norm multiplier failed
    pub a4_range_intersection: Check,
    /// `rank [H J] − rank H`
    pub a5_range_inclusion: Check,
    /// sampled rate of change of `h` minus the declared bound; `None` for
    /// BV offsets or when no bound is declared
    pub a5_variation: Option<Check>,
    pub samples: usize,
    pub certificate_p: DMatrix<f64>,
}

impl AssumptionReport {
    pub fn all_passed(&self) -> bool {
        self.a1_j_psd.passed
            && self.a1_kernel_inclusion.passed
            && self.a2_lipschitz.passed
            && self.a3_constraint_qualification.passed
            && self.a4_range_intersection.passed
            && self.a5_range_inclusion.passed
            && self.a5_variation.as_ref().is_none_or(|c| c.passed)
    }

    pub fn lines(&self) -> Vec<(String, String)> {
        let mut out = vec![
            ("a1_j_psd".into(), self.a1_j_psd.to_string()),
            ("a1_kernel_inclusion".into(), self.a1_kernel_inclusion.to_string()),
            ("a2_lipschitz".into(), self.a2_lipschitz.to_string()),
            (
                "a3_constraint_qualification".into(),
                format!("{} [sampled, {} samples]", self.a3_constraint_qualification, self.samples),
            ),
            (
                "a4_range_intersection".into(),
                format!("{} [sampled, {} samples]", self.a4_range_intersection, self.samples),
            ),
            ("a5_range_inclusion".into(), self.a5_range_inclusion.to_string()),
        ];
        if let Some(w) = &self.a1_witness {
            let s: Vec<String> = w.iter().map(|v| format!("{v:.6e}")).collect();
            out.push(("a1_witness".into(), s.join(" ")));
        }
        out.push((
            "a5_variation".into(),
            self.a5_variation.as_ref().map_or("not applicable".into(), |c| c.to_string()),
        ));
        out
    }
}

#[derive(Debug, Clone)]
pub struct AssumptionOptions {
    pub samples: usize,
    /// states are drawn uniformly from `[−box_radius, box_radius]^n`
    pub box_radius: f64,
    /// times at which the offset-dependent tests are evaluated
    pub times: Vec<f64>,
    pub seed: u64,
    pub tol: f64,
}

impl Default for AssumptionOptions {
    fn default() -> Self {
        AssumptionOptions {
            samples: 200,
            box_radius: 2.0,
            times: vec![0.0],
            seed: crate::DEFAULT_SEED,
            tol: Tolerances::default().algebraic,
        }
    }
}

pub fn check_assumptions(sys: &EviSystem, p: &DMatrix<f64>) -> Result<AssumptionReport> {
    check_assumptions_with(sys, p, &AssumptionOptions::default())
}

pub fn check_assumptions_with(sys: &EviSystem, p: &DMatrix<f64>, opts: &AssumptionOptions) -> Result<AssumptionReport> {
    sys.validate()?;
    let n = sys.n();
    let ds = sys.ds();
    let tol = opts.tol;
    if p.shape() != (n, n) {
        return Err(Error::dim("certificate P", format!("{n}x{n}"), format!("{}x{}", p.nrows(), p.ncols())));
    }
    let asym = linalg::asymmetry(p);
    if asym > tol * p.amax().max(1.0) {
        return Err(Error::NotSymmetric { name: "P", asymmetry: asym });
    }
    let min_p = linalg::min_eig_sym(p);
    if !(min_p > 0.0) {
        return Err(Error::NotPositiveDefinite { name: "P", min_eig: min_p });
    }

    let j_scale = sys.j.amax().max(1.0);
    let min_j = if ds == 0 { 0.0 } else { linalg::min_eig_sym(&sys.j) };
    let a1_j_psd = Check::new(min_j >= -tol * j_scale, min_j);

    let s = &sys.j + sys.j.transpose();
    let ker = linalg::sym_kernel_basis(&s, 1e-10 * s.amax().max(1.0));
    let pg_h = p * &sys.g - sys.h.transpose();
    let mut worst = 0.0;
    let mut witness = None;
    for col in ker.column_iter() {
        let r = (&pg_h * col).norm();
        if r > worst {
            worst = r;
            witness = Some(col.into_owned());
        }
    }
    let kscale = (p * &sys.g).amax().max(sys.h.amax()).max(1.0);
    let kernel_ok = worst <= tol * kscale;
    let a1_kernel_inclusion = Check::new(kernel_ok, worst);
    let a1_witness = if kernel_ok { None } else { witness };

    let norm_a = linalg::op_norm(&sys.a);
    let rho = sys.lipschitz_modulus();
    let a2_lipschitz = Check::new(rho >= norm_a * (1.0 - 1e-12), rho - norm_a);

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let r = sys.moving_set.cone.faces()?.into_owned();
    let times = if opts.times.is_empty() { vec![0.0] } else { opts.times.clone() };

    // A3: a strictly feasible H x for every sampled t, or J ≻ 0
    let j_pd = ds > 0 && min_j > tol * j_scale;
    let h_pinv = linalg::pinv(&sys.h, linalg::RANK_RCOND);
    let r_pinv = linalg::pinv(&r, linalg::RANK_RCOND);
    let mut worst_best_slack = f64::INFINITY;
    for &t in &times {
        let h = sys.moving_set.offset_at(t);
        let slack = |x: &DVector<f64>| -> f64 {
            if r.nrows() == 0 {
                f64::INFINITY
            } else {
                (&r * (&sys.h * x + &h)).min()
            }
        };
        let target = &r_pinv * DVector::from_element(r.nrows(), 1.0) - &h;
        let mut best = slack(&(&h_pinv * &target));
        for _ in 0..opts.samples {
            let x = DVector::from_fn(n, |_, _| rng.random_range(-opts.box_radius..=opts.box_radius));
            best = best.max(slack(&x));
        }
        worst_best_slack = worst_best_slack.min(best);
    }
    let a3 = if j_pd {
        Check::new(true, f64::INFINITY)
    } else {
        Check::new(worst_best_slack > 0.0, worst_best_slack)
    };

    // A4: wherever a multiplier exists, the least-norm one must work
    let mut admissible = 0usize;
    let mut failures = 0usize;
    for &t in &times {
        let h = sys.moving_set.offset_at(t);
        let anchor = &h_pinv * (&r_pinv * DVector::from_element(r.nrows(), 1.0) - &h);
        for k in 0..opts.samples {
            let noise = DVector::from_fn(n, |_, _| rng.random_range(-opts.box_radius..=opts.box_radius));
            let x = if k % 2 == 0 { noise } else { &anchor + noise * 0.1 };
            let q = &sys.h * &x + &h;
            if solve_cone_complementarity(&sys.moving_set.cone, &sys.j, &q, tol).is_ok() {
                admissible += 1;
                if least_norm_complementarity(&sys.moving_set.cone, &sys.j, &q, tol).is_err() {
                    failures += 1;
                }
            }
        }
    }
    let a4 = Check::new(
        admissible > 0 && failures == 0,
        if admissible == 0 { 1.0 } else { failures as f64 / admissible as f64 },
    );

    let hj = linalg::block(&[&[&sys.h, &sys.j]]);
    let rank_gap = linalg::rank(&hj, linalg::RANK_RCOND) as f64 - linalg::rank(&sys.h, linalg::RANK_RCOND) as f64;
    let a5_range_inclusion = Check::new(rank_gap == 0.0, rank_gap);

    let set = &sys.moving_set;
    let a5_variation = match (set.regularity, set.variation_bound) {
        (Regularity::AbsolutelyContinuous, Some(bound)) => {
            let t_lo = times.iter().cloned().fold(f64::INFINITY, f64::min);
            let t_hi = times.iter().cloned().fold(f64::NEG_INFINITY, f64::max).max(t_lo + 1.0);
            let grid: Vec<f64> = (0..=opts.samples.max(2)).map(|k| t_lo + (t_hi - t_lo) * k as f64 / opts.samples.max(2) as f64).collect();
            let rate = set.sampled_variation_rate(&grid);
            Some(Check::new(rate <= bound * (1.0 + 1e-9) + tol, rate - bound))
        }
        _ => None,
    };

    Ok(AssumptionReport {
        a1_j_psd,
        a1_kernel_inclusion,
        a1_witness,
        a2_lipschitz,
        a3_constraint_qualification: a3,
        a4_range_intersection: a4,
        a5_range_inclusion,
        a5_variation,
        samples: opts.samples * times.len(),
        certificate_p: p.clone(),
    })
}
