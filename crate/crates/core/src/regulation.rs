//! Output regulation: regulator equations, strict-passivity certificates,
//! gain synthesis by alternating projections, the viability controller and
//! the static and dynamic closed loops.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{MovingSet, PolyhedralCone};
use crate::integrator::EviSystem;
use crate::lcp::{lemke_solve, LcpProblem, LcpStatus};
use crate::linalg::{self, serde_matrix};
use crate::signal::VectorSignal;
use crate::Tolerances;

/// Relative residual accepted for the regulator equations.
pub const REGULATOR_TOL: f64 = 1e-10;
/// Default iteration budget for [`find_passifying_gain`].
pub const SYNTHESIS_MAX_ITER: usize = 5000;

fn zeros_if_none(m: &Option<DMatrix<f64>>, r: usize, c: usize) -> DMatrix<f64> {
    m.clone().unwrap_or_else(|| DMatrix::zeros(r, c))
}

fn rel_residual(r: &DMatrix<f64>, scale: f64) -> f64 {
    if r.is_empty() {
        0.0
    } else {
        r.norm() / scale.max(1.0)
    }
}

/// Per-equation residuals of `Π A_r = A Π + B M + F`, `C Π = C_r`,
/// `H Π = H_r`, each relative to the size of the data involved.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegulatorResiduals {
    pub internal_model: f64,
    pub output: f64,
    pub constraint: f64,
}

impl RegulatorResiduals {
    pub fn total(&self) -> f64 {
        self.internal_model + self.output + self.constraint
    }

    pub fn accepted(&self) -> bool {
        self.total() <= REGULATOR_TOL
    }
}

impl fmt::Display for RegulatorResiduals {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "PiA_r-APi-BM-F {:.3e}, C_r-CPi {:.3e}, H_r-HPi {:.3e}",
            self.internal_model, self.output, self.constraint
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegulatorSolution {
    pub pi: DMatrix<f64>,
    pub m_ff: DMatrix<f64>,
    pub residuals: RegulatorResiduals,
}

impl RegulatorSolution {
    pub fn solvable(&self) -> bool {
        self.residuals.accepted()
    }
}

#[allow(clippy::too_many_arguments)]
pub fn regulator_residuals(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    f: &DMatrix<f64>,
    a_r: &DMatrix<f64>,
    c: &DMatrix<f64>,
    c_r: &DMatrix<f64>,
    h: &DMatrix<f64>,
    h_r: &DMatrix<f64>,
    pi: &DMatrix<f64>,
    m_ff: &DMatrix<f64>,
) -> RegulatorResiduals {
    let scale_a = a.norm().max(a_r.norm()).max(b.norm()).max(f.norm()) * pi.norm().max(1.0);
    RegulatorResiduals {
        internal_model: rel_residual(&(pi * a_r - a * pi - b * m_ff - f), scale_a.max(m_ff.norm())),
        output: rel_residual(&(c_r - c * pi), c.norm().max(c_r.norm()) * pi.norm().max(1.0)),
        constraint: rel_residual(&(h_r - h * pi), h.norm().max(h_r.norm()) * pi.norm().max(1.0)),
    }
}

/// Minimum-norm least-squares solution of the regulator equations, stacked
/// as one linear system in `(vec Π, vec M)`.
#[allow(clippy::too_many_arguments)]
pub fn solve_regulator_equations(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    f: &DMatrix<f64>,
    a_r: &DMatrix<f64>,
    c: &DMatrix<f64>,
    c_r: &DMatrix<f64>,
    h: &DMatrix<f64>,
    h_r: &DMatrix<f64>,
) -> Result<RegulatorSolution> {
    let n = a.nrows();
    let r = a_r.nrows();
    let m = b.ncols();
    let expect = |name: &str, mat: &DMatrix<f64>, rows: usize, cols: usize| -> Result<()> {
        if mat.shape() != (rows, cols) {
            return Err(Error::dim(
                format!("regulator equations: {name}"),
                format!("{rows}x{cols}"),
                format!("{}x{}", mat.nrows(), mat.ncols()),
            ));
        }
        Ok(())
    };
    expect("A", a, n, n)?;
    expect("B", b, n, m)?;
    expect("F", f, n, r)?;
    expect("A_r", a_r, r, r)?;
    expect("C", c, c.nrows(), n)?;
    expect("C_r", c_r, c.nrows(), r)?;
    expect("H", h, h.nrows(), n)?;
    expect("H_r", h_r, h.nrows(), r)?;

    let i_n = DMatrix::identity(n, n);
    let i_r = DMatrix::identity(r, r);
    let np = n * r;
    let nm = m * r;
    let rows_a = n * r;
    let rows_c = c.nrows() * r;
    let rows_h = h.nrows() * r;
    let mut sys = DMatrix::zeros(rows_a + rows_c + rows_h, np + nm);
    // vec(Π A_r − A Π) − vec(B M) = vec F
    let blk = linalg::kron(&a_r.transpose(), &i_n) - linalg::kron(&i_r, a);
    sys.view_mut((0, 0), (rows_a, np)).copy_from(&blk);
    sys.view_mut((0, np), (rows_a, nm)).copy_from(&(-linalg::kron(&i_r, b)));
    sys.view_mut((rows_a, 0), (rows_c, np)).copy_from(&linalg::kron(&i_r, c));
    sys.view_mut((rows_a + rows_c, 0), (rows_h, np)).copy_from(&linalg::kron(&i_r, h));
    let mut rhs = DVector::zeros(rows_a + rows_c + rows_h);
    rhs.rows_mut(0, rows_a).copy_from(&linalg::vec_of(f));
    rhs.rows_mut(rows_a, rows_c).copy_from(&linalg::vec_of(c_r));
    rhs.rows_mut(rows_a + rows_c, rows_h).copy_from(&linalg::vec_of(h_r));

    let sol = linalg::lstsq(&sys, &rhs);
    let pi = linalg::unvec(&sol.as_slice()[..np], n, r);
    let m_ff = linalg::unvec(&sol.as_slice()[np..], m, r);
    let residuals = regulator_residuals(a, b, f, a_r, c, c_r, h, h_r, &pi, &m_ff);
    Ok(RegulatorSolution { pi, m_ff, residuals })
}

/// `[[AᵀP + PA + γP, PG − Hᵀ], [GᵀP − H, −(J + Jᵀ)]]`.
pub fn passivity_block(
    a: &DMatrix<f64>,
    g: &DMatrix<f64>,
    h: &DMatrix<f64>,
    j: &DMatrix<f64>,
    p: &DMatrix<f64>,
    gamma: f64,
) -> DMatrix<f64> {
    let tl = a.transpose() * p + p * a + p * gamma;
    let tr = p * g - h.transpose();
    let br = -(j + j.transpose());
    linalg::symmetrize(&linalg::block(&[&[&tl, &tr], &[&tr.transpose(), &br]]))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PassivityCheck {
    pub feasible: bool,
    /// largest eigenvalue of the passivity block
    pub margin: f64,
    /// smallest eigenvalue of `P`
    pub p_min_eig: f64,
}

impl fmt::Display for PassivityCheck {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} (margin {:.6e}, min eig P {:.6e})",
            if self.feasible { "feasible" } else { "infeasible" },
            self.margin,
            self.p_min_eig
        )
    }
}

fn check_dims_quadruple(a: &DMatrix<f64>, g: &DMatrix<f64>, h: &DMatrix<f64>, j: &DMatrix<f64>, p: &DMatrix<f64>) -> Result<()> {
    let n = a.nrows();
    let d = g.ncols();
    if !a.is_square() || g.nrows() != n || h.shape() != (d, n) || j.shape() != (d, d) || p.shape() != (n, n) {
        return Err(Error::dim(
            "passivity quadruple",
            format!("A {n}x{n}, G {n}x{d}, H {d}x{n}, J {d}x{d}, P {n}x{n}"),
            format!(
                "A {:?}, G {:?}, H {:?}, J {:?}, P {:?}",
                a.shape(),
                g.shape(),
                h.shape(),
                j.shape(),
                p.shape()
            ),
        ));
    }
    Ok(())
}

/// Evaluates the strict-passivity LMI for `(A, G, H, J)` with storage `P`
/// and rate `γ`. The test passes when `P ≻ 0` and the block's largest
/// eigenvalue is at most `tol · max(1, ‖block‖)`.
pub fn check_strict_passivity(
    a: &DMatrix<f64>,
    g: &DMatrix<f64>,
    h: &DMatrix<f64>,
    j: &DMatrix<f64>,
    p: &DMatrix<f64>,
    gamma: f64,
) -> Result<PassivityCheck> {
    check_strict_passivity_tol(a, g, h, j, p, gamma, Tolerances::default().algebraic)
}

pub fn check_strict_passivity_tol(
    a: &DMatrix<f64>,
    g: &DMatrix<f64>,
    h: &DMatrix<f64>,
    j: &DMatrix<f64>,
    p: &DMatrix<f64>,
    gamma: f64,
    tol: f64,
) -> Result<PassivityCheck> {
    check_dims_quadruple(a, g, h, j, p)?;
    let asym = linalg::asymmetry(p);
    if asym > 1e-12 * p.amax().max(1.0) {
        return Err(Error::NotSymmetric { name: "P", asymmetry: asym });
    }
    let blockm = passivity_block(a, g, h, j, p, gamma);
    let margin = linalg::max_eig_sym(&blockm);
    let p_min_eig = linalg::min_eig_sym(p);
    let scale = linalg::op_norm(&blockm).max(1.0);
    Ok(PassivityCheck {
        feasible: p_min_eig > 0.0 && gamma >= 0.0 && margin <= tol * scale,
        margin,
        p_min_eig,
    })
}

/// Largest `γ` for which the block is numerically negative semidefinite
/// (largest eigenvalue at most `min(1e-12 · ‖block‖, 1e-9)`, floored at
/// the roundoff level of the block), by doubling and bisection. `None`
/// when even `γ = 0` fails or `P` is not positive definite.
pub fn max_passivity_rate(
    a: &DMatrix<f64>,
    g: &DMatrix<f64>,
    h: &DMatrix<f64>,
    j: &DMatrix<f64>,
    p: &DMatrix<f64>,
) -> Result<Option<f64>> {
    check_dims_quadruple(a, g, h, j, p)?;
    if !(linalg::min_eig_sym(p) > 0.0) {
        return Ok(None);
    }
    let ok = |gamma: f64| {
        let b = passivity_block(a, g, h, j, p, gamma);
        let scale = linalg::op_norm(&b).max(1.0);
        // absolute 1e-9, but never below the eigenvalue roundoff of the block
        let tol = (1e-12 * scale).min(1e-9).max(16.0 * f64::EPSILON * scale);
        linalg::max_eig_sym(&b) <= tol
    };
    if !ok(0.0) {
        return Ok(None);
    }
    let mut lo = 0.0;
    let mut hi = 1.0;
    while ok(hi) {
        lo = hi;
        hi *= 2.0;
        if hi > 1e12 {
            return Ok(Some(lo));
        }
    }
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if ok(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-14 * hi {
            break;
        }
    }
    Ok(Some(lo))
}

/// An LMI `L(X, Y) ⪯ 0` that is affine in a symmetric `X` and a free `Y`,
/// stored as `L(0,0)` plus the images of the unit directions.
struct AffineLmi {
    nx: usize,
    y_shape: (usize, usize),
    dim: usize,
    /// strictness is imposed on the leading `top × top` block
    top: usize,
    l0: DMatrix<f64>,
    dirs: Vec<DMatrix<f64>>,
}

impl AffineLmi {
    fn new(nx: usize, y_shape: (usize, usize), top: usize, f: impl Fn(&DMatrix<f64>, &DMatrix<f64>) -> DMatrix<f64>) -> Self {
        let x0 = DMatrix::zeros(nx, nx);
        let y0 = DMatrix::zeros(y_shape.0, y_shape.1);
        let l0 = f(&x0, &y0);
        let mut dirs = Vec::with_capacity(nx * nx + y_shape.0 * y_shape.1);
        for k in 0..nx * nx {
            let mut x = x0.clone();
            x[(k % nx, k / nx)] = 1.0;
            dirs.push(f(&x, &y0) - &l0);
        }
        for k in 0..y_shape.0 * y_shape.1 {
            let mut y = y0.clone();
            y[(k % y_shape.0, k / y_shape.0)] = 1.0;
            dirs.push(f(&x0, &y) - &l0);
        }
        AffineLmi {
            nx,
            y_shape,
            dim: l0.nrows(),
            top,
            l0,
            dirs,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct ApOptions {
    max_iter: usize,
    /// strictness margin on the leading block and on `range(J + Jᵀ)`
    delta: f64,
    /// lower bound `X ⪰ ε I`
    eps: f64,
}

/// Alternating projections between the affine set
/// `{S = −L(X, Y) − δ D, T = X − ε I, X = Xᵀ, off-diagonal · ker = 0}` and
/// `{S ⪰ 0, T ⪰ 0}`. Returns `(X, Y)` as soon as `accept` approves the
/// current affine iterate.
fn alternating_projections(
    lmi: &AffineLmi,
    opts: ApOptions,
    mut accept: impl FnMut(&DMatrix<f64>, &DMatrix<f64>) -> bool,
) -> std::result::Result<(DMatrix<f64>, DMatrix<f64>, usize), (usize, f64)> {
    let nx = lmi.nx;
    let nxx = nx * nx;
    let ny = lmi.y_shape.0 * lmi.y_shape.1;
    let d = lmi.dim;
    let ns = d * d;
    let nvar = nxx + ny + ns + nxx;
    let off_s = nxx + ny;
    let off_t = off_s + ns;

    // kernel of the constant trailing block
    let br = lmi.l0.view((lmi.top, lmi.top), (d - lmi.top, d - lmi.top)).into_owned();
    let br_scale = br.amax().max(1.0);
    let ker = linalg::sym_kernel_basis(&br, 1e-10 * br_scale);
    let range_proj = DMatrix::identity(d - lmi.top, d - lmi.top) - &ker * ker.transpose();
    let mut strict = DMatrix::zeros(d, d);
    strict.view_mut((0, 0), (lmi.top, lmi.top)).fill_with_identity();
    strict.view_mut((lmi.top, lmi.top), (d - lmi.top, d - lmi.top)).copy_from(&range_proj);

    let nsym = nx * (nx.saturating_sub(1)) / 2;
    let nker = lmi.top * ker.ncols();
    let nrows = ns + nxx + nsym + nker;
    let mut a = DMatrix::zeros(nrows, nvar);
    let mut b = DVector::zeros(nrows);

    // S + L(z) = −L0 − δ D
    for (k, dir) in lmi.dirs.iter().enumerate() {
        a.view_mut((0, k), (ns, 1)).copy_from(&linalg::vec_of(dir));
    }
    for i in 0..ns {
        a[(i, off_s + i)] = 1.0;
    }
    b.rows_mut(0, ns).copy_from(&(-linalg::vec_of(&lmi.l0) - linalg::vec_of(&strict) * opts.delta));
    // T − X = −ε I
    for i in 0..nxx {
        a[(ns + i, off_t + i)] = 1.0;
        a[(ns + i, i)] = -1.0;
    }
    b.rows_mut(ns, nxx).copy_from(&(-linalg::vec_of(&DMatrix::identity(nx, nx)) * opts.eps));
    // X symmetric
    let mut row = ns + nxx;
    for c in 0..nx {
        for r in (c + 1)..nx {
            a[(row, r + c * nx)] = 1.0;
            a[(row, c + r * nx)] = -1.0;
            row += 1;
        }
    }
    // (off-diagonal block) · ker = 0
    if nker > 0 {
        let off = |m: &DMatrix<f64>| m.view((0, lmi.top), (lmi.top, d - lmi.top)) * &ker;
        for (k, dir) in lmi.dirs.iter().enumerate() {
            a.view_mut((row, k), (nker, 1)).copy_from(&linalg::vec_of(&off(dir)));
        }
        b.rows_mut(row, nker).copy_from(&(-linalg::vec_of(&off(&lmi.l0))));
    }

    let a_pinv = linalg::pinv(&a, 1e-12);
    let project_affine = |z: &DVector<f64>| -> DVector<f64> { z - &a_pinv * (&a * z - &b) };
    let psd_clip = |v: &[f64], k: usize| -> DVector<f64> {
        let m = linalg::symmetrize(&linalg::unvec(v, k, k));
        let e = m.symmetric_eigen();
        let clipped = &e.eigenvectors * DMatrix::from_diagonal(&e.eigenvalues.map(|x| x.max(0.0))) * e.eigenvectors.transpose();
        linalg::vec_of(&clipped)
    };
    let extract = |z: &DVector<f64>| {
        let x = linalg::symmetrize(&linalg::unvec(&z.as_slice()[..nxx], nx, nx));
        let y = linalg::unvec(&z.as_slice()[nxx..nxx + ny], lmi.y_shape.0, lmi.y_shape.1);
        (x, y)
    };

    let mut z = project_affine(&DVector::zeros(nvar));
    let mut gap = f64::INFINITY;
    for it in 1..=opts.max_iter {
        let mut w = z.clone();
        let s = psd_clip(&z.as_slice()[off_s..off_t], d);
        let t = psd_clip(&z.as_slice()[off_t..], nx);
        w.rows_mut(off_s, ns).copy_from(&s);
        w.rows_mut(off_t, nxx).copy_from(&t);
        gap = (&w - &z).norm();
        z = project_affine(&w);
        if it % 10 == 0 || gap < 1e-13 {
            let (x, y) = extract(&z);
            if accept(&x, &y) {
                return Ok((x, y, it));
            }
        }
    }
    Err((opts.max_iter, gap))
}

/// A certified state-feedback design for `(A + BK, G, H, J)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PassifyingGain {
    pub k: DMatrix<f64>,
    pub p: DMatrix<f64>,
    /// largest certified rate for the returned `(K, P)`
    pub gamma: f64,
    pub iterations: usize,
}

/// Searches `K`, `P ≻ 0`, `γ > 0` making `(A + BK, G, H, J)` strictly
/// passive. Works in `Q = P⁻¹`, `Y = K Q`, where the LMI reads
/// `[[AQ + QAᵀ + BY + YᵀBᵀ + γQ, G − QHᵀ], [·, −(J + Jᵀ)]] ⪯ 0`.
pub fn find_passifying_gain(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    g: &DMatrix<f64>,
    h: &DMatrix<f64>,
    j: &DMatrix<f64>,
) -> Result<PassifyingGain> {
    find_passifying_gain_with(a, b, g, h, j, SYNTHESIS_MAX_ITER)
}

pub fn find_passifying_gain_with(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    g: &DMatrix<f64>,
    h: &DMatrix<f64>,
    j: &DMatrix<f64>,
    max_iter: usize,
) -> Result<PassifyingGain> {
    let n = a.nrows();
    let m = b.ncols();
    check_dims_quadruple(a, g, h, j, &DMatrix::identity(n, n))?;
    if b.nrows() != n {
        return Err(Error::dim("input matrix B rows", n, b.nrows()));
    }
    let scale = linalg::op_norm(a).max(1.0);
    let mut diagnostics = Vec::new();
    let mut total = 0;
    for gamma in [0.1 * scale, 0.01 * scale, 1e-3 * scale] {
        let lmi = AffineLmi::new(n, (m, n), n, |q, y| {
            let tl = a * q + q * a.transpose() + b * y + y.transpose() * b.transpose() + q * gamma;
            let tr = g - q * h.transpose();
            let br = -(j + j.transpose());
            linalg::block(&[&[&tl, &tr], &[&tr.transpose(), &br]])
        });
        let opts = ApOptions {
            max_iter,
            delta: 1e-3 * scale,
            eps: 1e-3,
        };
        let mut found = None;
        let res = alternating_projections(&lmi, opts, |q, y| {
            let Some(p) = q.clone().try_inverse() else { return false };
            let p = linalg::symmetrize(&p);
            let k = y * &p;
            let acl = a + b * &k;
            match max_passivity_rate(&acl, g, h, j, &p) {
                Ok(Some(gs)) if gs > 0.0 => {
                    found = Some((k, p, gs));
                    true
                }
                _ => false,
            }
        });
        match res {
            Ok((_, _, it)) => {
                let (k, p, gamma) = found.expect("accepted iterate");
                return Ok(PassifyingGain {
                    k,
                    p,
                    gamma,
                    iterations: total + it,
                });
            }
            Err((it, gap)) => {
                total += it;
                diagnostics.push(format!("gamma {gamma:.3e}: projection gap {gap:.3e}"));
            }
        }
    }
    Err(Error::Synthesis {
        iterations: total,
        diagnostics: diagnostics.join("; "),
    })
}

/// A certified injection gain for the observer quadruple
/// `(Â − LĈ, Ĝ, Ĥ, Ĵ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObserverGain {
    pub l: DMatrix<f64>,
    pub p_hat: DMatrix<f64>,
    pub gamma_hat: f64,
    pub iterations: usize,
}

/// Searches `L` and `P̂` with the LMI in the variables `(P̂, Z = P̂ L)`:
/// `[[ÂᵀP̂ + P̂Â − ĈᵀZᵀ − ZĈ + γP̂, P̂Ĝ − Ĥᵀ], [·, −(Ĵ + Ĵᵀ)]] ⪯ 0`.
pub fn find_observer_gain(
    a_hat: &DMatrix<f64>,
    c_hat: &DMatrix<f64>,
    g_hat: &DMatrix<f64>,
    h_hat: &DMatrix<f64>,
    j_hat: &DMatrix<f64>,
    max_iter: usize,
) -> Result<ObserverGain> {
    let n = a_hat.nrows();
    let p = c_hat.nrows();
    check_dims_quadruple(a_hat, g_hat, h_hat, j_hat, &DMatrix::identity(n, n))?;
    if c_hat.ncols() != n {
        return Err(Error::dim("observer output matrix columns", n, c_hat.ncols()));
    }
    let scale = linalg::op_norm(a_hat).max(1.0);
    let mut diagnostics = Vec::new();
    let mut total = 0;
    for gamma in [0.1 * scale, 0.01 * scale, 1e-3 * scale] {
        let lmi = AffineLmi::new(n, (n, p), n, |x, z| {
            let tl = a_hat.transpose() * x + x * a_hat - c_hat.transpose() * z.transpose() - z * c_hat + x * gamma;
            let tr = x * g_hat - h_hat.transpose();
            let br = -(j_hat + j_hat.transpose());
            linalg::block(&[&[&tl, &tr], &[&tr.transpose(), &br]])
        });
        let opts = ApOptions {
            max_iter,
            delta: 1e-3 * scale,
            eps: 1e-3,
        };
        let mut found = None;
        let res = alternating_projections(&lmi, opts, |x, z| {
            let Some(xi) = x.clone().try_inverse() else { return false };
            let l = xi * z;
            let acl = a_hat - &l * c_hat;
            match max_passivity_rate(&acl, g_hat, h_hat, j_hat, x) {
                Ok(Some(gs)) if gs > 0.0 => {
                    found = Some((l, x.clone(), gs));
                    true
                }
                _ => false,
            }
        });
        match res {
            Ok((_, _, it)) => {
                let (l, p_hat, gamma_hat) = found.expect("accepted iterate");
                return Ok(ObserverGain {
                    l,
                    p_hat,
                    gamma_hat,
                    iterations: total + it,
                });
            }
            Err((it, gap)) => {
                total += it;
                diagnostics.push(format!("gamma {gamma:.3e}: projection gap {gap:.3e}"));
            }
        }
    }
    Err(Error::Synthesis {
        iterations: total,
        diagnostics: diagnostics.join("; "),
    })
}

/// Gains and certificates of a regulator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegulatorDesign {
    #[serde(with = "serde_matrix")]
    pub pi: DMatrix<f64>,
    #[serde(with = "serde_matrix")]
    pub m_ff: DMatrix<f64>,
    #[serde(with = "serde_matrix")]
    pub k: DMatrix<f64>,
    #[serde(with = "serde_matrix")]
    pub p: DMatrix<f64>,
    pub gamma: f64,
    /// feedforward `N` on the external input
    #[serde(default, with = "serde_matrix::opt", skip_serializing_if = "Option::is_none")]
    pub n_ff: Option<DMatrix<f64>>,
    /// observer injection gain `(L₀; L₁)`
    #[serde(default, with = "serde_matrix::opt", skip_serializing_if = "Option::is_none")]
    pub l: Option<DMatrix<f64>>,
    #[serde(default, with = "serde_matrix::opt", skip_serializing_if = "Option::is_none")]
    pub p_hat: Option<DMatrix<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_hat: Option<f64>,
}

/// `u = K x + (M − K Π) x_r`.
pub fn static_control(design: &RegulatorDesign, x: &DVector<f64>, x_r: &DVector<f64>) -> DVector<f64> {
    &design.k * x + (&design.m_ff - &design.k * &design.pi) * x_r
}

/// Input correction keeping `y = H x + h(t)` in `K`.
///
/// Zero when `y` is interior (every face slack above `act_tol`). On the
/// active faces `A` it solves `0 ≤ α ⟂ R_A ẏ ≥ 0` with
/// `ẏ = H(A x + B u_reg + B u_η + F x_r) + ḣ` and `u_η = (R_A H B)ᵀ α`.
/// For the orthant, `η = R_Aᵀ α` is the multiplier of the closed loop with
/// `G = B (HB)ᵀ` and `u_η = (HB)ᵀ η`.
pub fn viability_control(
    sys: &EviSystem,
    x: &DVector<f64>,
    u_reg: &DVector<f64>,
    x_r: &DVector<f64>,
    t: f64,
    act_tol: f64,
) -> Result<DVector<f64>> {
    let du = sys.b.ncols();
    if u_reg.len() != du {
        return Err(Error::dim("viability_control u_reg", du, u_reg.len()));
    }
    let r = sys.moving_set.cone.faces()?.into_owned();
    let h_t = sys.moving_set.offset_at(t);
    let y = &sys.h * x + &h_t;
    let slack = &r * &y;
    let active: Vec<usize> = (0..r.nrows()).filter(|&i| slack[i] <= act_tol).collect();
    if active.is_empty() {
        return Ok(DVector::zeros(du));
    }
    let ra = r.select_rows(&active);
    let drift = &sys.a * x + &sys.b * u_reg + if sys.f.ncols() > 0 { &sys.f * x_r } else { DVector::zeros(sys.n()) };
    let ydot0 = &sys.h * drift + sys.moving_set.offset.derivative(t);
    let e = &ra * &sys.h * &sys.b;
    let prob = LcpProblem::new(&e * e.transpose(), &ra * ydot0)?;
    let sol = lemke_solve(&prob);
    match sol.status {
        LcpStatus::Solved => Ok(e.transpose() * sol.z),
        status => Err(Error::Lcp {
            status: status.to_string(),
            hint: "the active block of HB does not yield a solvable LCP; positive definiteness of HB guarantees a unique solution".into(),
        }),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeedforwardMatch {
    pub n: DMatrix<f64>,
    pub residual: f64,
    pub feasible: bool,
}

/// Least-squares `N` with `B N + B_ext = Π B_r`.
pub fn feedforward_match(
    b: &DMatrix<f64>,
    b_ext: &DMatrix<f64>,
    pi: &DMatrix<f64>,
    b_r: &DMatrix<f64>,
) -> Result<FeedforwardMatch> {
    if b.nrows() != b_ext.nrows() || pi.nrows() != b.nrows() || pi.ncols() != b_r.nrows() || b_ext.ncols() != b_r.ncols() {
        return Err(Error::dim(
            "feedforward match",
            format!("B {}x*, B_ext {}x{}", pi.nrows(), pi.nrows(), b_r.ncols()),
            format!("B {:?}, B_ext {:?}, Pi {:?}, B_r {:?}", b.shape(), b_ext.shape(), pi.shape(), b_r.shape()),
        ));
    }
    let target = pi * b_r - b_ext;
    let n = linalg::pinv(b, linalg::RANK_RCOND) * &target;
    let scale = target.norm().max(b_ext.norm()).max(1.0);
    let residual = rel_residual(&(b * &n - target), scale);
    Ok(FeedforwardMatch {
        feasible: residual <= REGULATOR_TOL,
        n,
        residual,
    })
}

/// Plant data `ẋ = A x + B u + F x_r + G η + B_ext f_ext`,
/// `v = H x + J η + h`, `w = C x − C_r x_r`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plant {
    #[serde(with = "serde_matrix")]
    pub a: DMatrix<f64>,
    #[serde(with = "serde_matrix")]
    pub b: DMatrix<f64>,
    #[serde(default, with = "serde_matrix::opt", skip_serializing_if = "Option::is_none")]
    pub f: Option<DMatrix<f64>>,
    #[serde(with = "serde_matrix")]
    pub g: DMatrix<f64>,
    #[serde(with = "serde_matrix")]
    pub h: DMatrix<f64>,
    #[serde(with = "serde_matrix")]
    pub j: DMatrix<f64>,
    #[serde(default, with = "serde_matrix::opt", skip_serializing_if = "Option::is_none")]
    pub b_ext: Option<DMatrix<f64>>,
    #[serde(with = "serde_matrix")]
    pub c: DMatrix<f64>,
    /// `E` with `G = B E`: the multiplier acts through the input as
    /// `u_η = E η` (set-valued viability control)
    #[serde(default, with = "serde_matrix::opt", skip_serializing_if = "Option::is_none")]
    pub input_map: Option<DMatrix<f64>>,
}

/// Reference generator `ẋ_r = A_r x_r + G_r η_r + B_r f_ext`,
/// `v_r = H_r x_r + J_r η_r + h`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exosystem {
    #[serde(with = "serde_matrix")]
    pub a_r: DMatrix<f64>,
    #[serde(with = "serde_matrix")]
    pub g_r: DMatrix<f64>,
    #[serde(with = "serde_matrix")]
    pub h_r: DMatrix<f64>,
    #[serde(with = "serde_matrix")]
    pub j_r: DMatrix<f64>,
    #[serde(default, with = "serde_matrix::opt", skip_serializing_if = "Option::is_none")]
    pub b_r: Option<DMatrix<f64>>,
    #[serde(with = "serde_matrix")]
    pub c_r: DMatrix<f64>,
}

/// Plant, exosystem and the shared moving set `S(t) = K − h(t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegulationProblem {
    pub plant: Plant,
    pub exosystem: Exosystem,
    pub cone: PolyhedralCone,
    pub offset: VectorSignal,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f_ext: Option<VectorSignal>,
}

impl RegulationProblem {
    pub fn n(&self) -> usize {
        self.plant.a.nrows()
    }

    pub fn n_r(&self) -> usize {
        self.exosystem.a_r.nrows()
    }

    pub fn ds(&self) -> usize {
        self.cone.dim()
    }

    pub fn n_ext(&self) -> usize {
        self.f_ext.as_ref().map_or(0, |s| s.dim())
    }

    pub fn f(&self) -> DMatrix<f64> {
        zeros_if_none(&self.plant.f, self.n(), self.n_r())
    }

    pub fn b_ext(&self) -> DMatrix<f64> {
        zeros_if_none(&self.plant.b_ext, self.n(), self.n_ext())
    }

    pub fn b_r(&self) -> DMatrix<f64> {
        zeros_if_none(&self.exosystem.b_r, self.n_r(), self.n_ext())
    }

    pub fn f_ext_signal(&self) -> VectorSignal {
        self.f_ext.clone().unwrap_or_else(|| VectorSignal::zeros(0))
    }

    pub fn validate(&self) -> Result<()> {
        let (n, nr, ds, ne) = (self.n(), self.n_r(), self.ds(), self.n_ext());
        let p = &self.plant;
        let e = &self.exosystem;
        let du = p.b.ncols();
        let dw = p.c.nrows();
        let checks: [(&str, &DMatrix<f64>, usize, usize); 13] = [
            ("plant.a", &p.a, n, n),
            ("plant.b", &p.b, n, du),
            ("plant.f", &self.f(), n, nr),
            ("plant.g", &p.g, n, ds),
            ("plant.h", &p.h, ds, n),
            ("plant.j", &p.j, ds, ds),
            ("plant.b_ext", &self.b_ext(), n, ne),
            ("plant.c", &p.c, dw, n),
            ("exosystem.a_r", &e.a_r, nr, nr),
            ("exosystem.g_r", &e.g_r, nr, ds),
            ("exosystem.h_r", &e.h_r, ds, nr),
            ("exosystem.j_r", &e.j_r, ds, ds),
            ("exosystem.b_r", &self.b_r(), nr, ne),
        ];
        for (name, m, r, c) in checks {
            if m.shape() != (r, c) {
                return Err(Error::validation(
                    name,
                    format!("expected {r}x{c}, got {}x{}", m.nrows(), m.ncols()),
                ));
            }
        }
        if e.c_r.shape() != (dw, nr) {
            return Err(Error::validation(
                "exosystem.c_r",
                format!("expected {dw}x{nr}, got {}x{}", e.c_r.nrows(), e.c_r.ncols()),
            ));
        }
        if let Some(em) = &p.input_map {
            if em.shape() != (du, ds) {
                return Err(Error::validation("plant.input_map", format!("expected {du}x{ds}, got {:?}", em.shape())));
            }
            let res = (&p.b * em - &p.g).amax();
            if res > 1e-12 * p.g.amax().max(1.0) {
                return Err(Error::validation("plant.input_map", format!("G differs from B·E by {res:.3e}")));
            }
        }
        self.cone.validate()?;
        if self.offset.dim() != ds {
            return Err(Error::validation("offset", format!("expected {ds} components, got {}", self.offset.dim())));
        }
        Ok(())
    }

    pub fn regulator_residuals(&self, design: &RegulatorDesign) -> RegulatorResiduals {
        regulator_residuals(
            &self.plant.a,
            &self.plant.b,
            &self.f(),
            &self.exosystem.a_r,
            &self.plant.c,
            &self.exosystem.c_r,
            &self.plant.h,
            &self.exosystem.h_r,
            &design.pi,
            &design.m_ff,
        )
    }

    pub fn solve_regulator_equations(&self) -> Result<RegulatorSolution> {
        solve_regulator_equations(
            &self.plant.a,
            &self.plant.b,
            &self.f(),
            &self.exosystem.a_r,
            &self.plant.c,
            &self.exosystem.c_r,
            &self.plant.h,
            &self.exosystem.h_r,
        )
    }

    fn moving_set(&self, copies: usize) -> Result<MovingSet> {
        let cones: Vec<&PolyhedralCone> = (0..copies).map(|_| &self.cone).collect();
        let cone = PolyhedralCone::product(&cones)?;
        let mut offset = VectorSignal(Vec::new());
        for _ in 0..copies {
            offset = offset.concat(&self.offset);
        }
        MovingSet::new(cone, offset)
    }

    /// The exosystem alone as an EVI.
    pub fn exosystem_system(&self) -> Result<EviSystem> {
        let e = &self.exosystem;
        let sys = EviSystem::new(e.a_r.clone(), e.g_r.clone(), e.h_r.clone(), e.j_r.clone(), self.moving_set(1)?)?;
        if self.n_ext() > 0 {
            sys.with_external(self.b_r(), self.f_ext_signal())
        } else {
            Ok(sys)
        }
    }

    /// Closed loop under `u = K x + (M − KΠ) x_r + N f_ext`, simulated
    /// jointly with the exosystem: state `(x, x_r)`, multipliers `(η, η_r)`.
    pub fn static_closed_loop(&self, design: &RegulatorDesign) -> Result<ClosedLoop> {
        self.validate()?;
        let (n, nr) = (self.n(), self.n_r());
        let p = &self.plant;
        let e = &self.exosystem;
        let kpi = &design.m_ff - &design.k * &design.pi;
        let a_cl = linalg::block(&[
            &[&(&p.a + &p.b * &design.k), &(&p.b * &kpi + self.f())],
            &[&DMatrix::zeros(nr, n), &e.a_r],
        ]);
        let g_cl = linalg::block_diag(&[&p.g, &e.g_r]);
        let h_cl = linalg::block_diag(&[&p.h, &e.h_r]);
        let j_cl = linalg::block_diag(&[&p.j, &e.j_r]);
        let mut sys = EviSystem::new(a_cl, g_cl, h_cl, j_cl, self.moving_set(2)?)?;
        if self.n_ext() > 0 {
            let n_ff = design.n_ff.clone().unwrap_or_else(|| DMatrix::zeros(p.b.ncols(), self.n_ext()));
            let b_ext_cl = linalg::block(&[&[&(self.b_ext() + &p.b * n_ff)], &[&self.b_r()]]);
            sys = sys.with_external(b_ext_cl, self.f_ext_signal())?;
        }
        let mut error_map = DMatrix::zeros(n, n + nr);
        error_map.view_mut((0, 0), (n, n)).fill_with_identity();
        error_map.view_mut((0, n), (n, nr)).copy_from(&(-&design.pi));
        Ok(ClosedLoop {
            kind: ClosedLoopKind::Static,
            n,
            n_r: nr,
            ds: self.ds(),
            system: sys,
            error_map,
        })
    }

    /// `Â = [[A, F], [0, A_r]]`, `Ĉ = [C, −C_r]`, `Ĝ`, `Ĥ`, `Ĵ` block diagonal.
    pub fn observer_data(&self) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
        let p = &self.plant;
        let e = &self.exosystem;
        let a_hat = linalg::block(&[&[&p.a, &self.f()], &[&DMatrix::zeros(self.n_r(), self.n()), &e.a_r]]);
        let c_hat = linalg::block(&[&[&p.c, &(-&e.c_r)]]);
        let g_hat = linalg::block_diag(&[&p.g, &e.g_r]);
        let h_hat = linalg::block_diag(&[&p.h, &e.h_r]);
        let j_hat = linalg::block_diag(&[&p.j, &e.j_r]);
        (a_hat, c_hat, g_hat, h_hat, j_hat)
    }

    /// Plant, estimator `(x̂, x̂_r)` and exosystem under
    /// `u = K x̂ + (M − KΠ) x̂_r + N f_ext`: state `(x, x̂, x̂_r, x_r)` on the
    /// product set `S × S × S × S`.
    pub fn compensator_closed_loop(&self, design: &RegulatorDesign) -> Result<ClosedLoop> {
        self.validate()?;
        let (n, nr) = (self.n(), self.n_r());
        let dw = self.plant.c.nrows();
        let l = design
            .l
            .as_ref()
            .ok_or_else(|| Error::validation("design.l", "compensator needs an injection gain"))?;
        if l.shape() != (n + nr, dw) {
            return Err(Error::dim("injection gain L", format!("{}x{dw}", n + nr), format!("{}x{}", l.nrows(), l.ncols())));
        }
        let p = &self.plant;
        let e = &self.exosystem;
        let l0 = l.rows(0, n).into_owned();
        let l1 = l.rows(n, nr).into_owned();
        let (a, b, c, c_r, f) = (&p.a, &p.b, &p.c, &e.c_r, self.f());
        let bk = b * &design.k;
        let bw = b * (&design.m_ff - &design.k * &design.pi);
        let z_rn = DMatrix::zeros(nr, n);
        let z_rr = DMatrix::zeros(nr, nr);
        let a_cl = linalg::block(&[
            &[a, &bk, &bw, &f],
            &[&(&l0 * c), &(a - &l0 * c + &bk), &(&f + &l0 * c_r + &bw), &(-&l0 * c_r)],
            &[&(&l1 * c), &(-&l1 * c), &(&e.a_r + &l1 * c_r), &(-&l1 * c_r)],
            &[&z_rn, &z_rn, &z_rr, &e.a_r],
        ]);
        let g_cl = linalg::block_diag(&[&p.g, &p.g, &e.g_r, &e.g_r]);
        let h_cl = linalg::block_diag(&[&p.h, &p.h, &e.h_r, &e.h_r]);
        let j_cl = linalg::block_diag(&[&p.j, &p.j, &e.j_r, &e.j_r]);
        let mut sys = EviSystem::new(a_cl, g_cl, h_cl, j_cl, self.moving_set(4)?)?;
        if self.n_ext() > 0 {
            let n_ff = design.n_ff.clone().unwrap_or_else(|| DMatrix::zeros(b.ncols(), self.n_ext()));
            let drive = self.b_ext() + b * n_ff;
            let b_ext_cl = linalg::block(&[&[&drive], &[&drive], &[&self.b_r()], &[&self.b_r()]]);
            sys = sys.with_external(b_ext_cl, self.f_ext_signal())?;
        }
        let total = 2 * n + 2 * nr;
        let mut error_map = DMatrix::zeros(2 * n + nr, total);
        error_map.view_mut((0, 0), (n, n)).fill_with_identity();
        error_map.view_mut((0, 2 * n + nr), (n, nr)).copy_from(&(-&design.pi));
        error_map.view_mut((n, 0), (n, n)).fill_with_identity();
        error_map.view_mut((n, n), (n, n)).copy_from(&(-DMatrix::identity(n, n)));
        error_map.view_mut((2 * n, n + n), (nr, nr)).copy_from(&(-DMatrix::identity(nr, nr)));
        error_map.view_mut((2 * n, 2 * n + nr), (nr, nr)).fill_with_identity();
        Ok(ClosedLoop {
            kind: ClosedLoopKind::Compensator,
            n,
            n_r: nr,
            ds: self.ds(),
            system: sys,
            error_map,
        })
    }

    /// Quadruple `(A + BK, [G  ΠG_r], [H; H], [[J, J_r], [J, J_r]])`.
    pub fn stacked_quadruple(&self, design: &RegulatorDesign) -> [DMatrix<f64>; 4] {
        let p = &self.plant;
        let e = &self.exosystem;
        let a_t = &p.a + &p.b * &design.k;
        let g_t = linalg::block(&[&[&p.g, &(&design.pi * &e.g_r)]]);
        let h_t = linalg::block(&[&[&p.h], &[&p.h]]);
        let j_t = linalg::block(&[&[&p.j, &e.j_r], &[&p.j, &e.j_r]]);
        [a_t, g_t, h_t, j_t]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClosedLoopKind {
    Static,
    Compensator,
}

/// Closed loop as an autonomous EVI together with the regulation-error map
/// `e = E X`. The plant state is always the leading `n` components and the
/// exosystem state the trailing `n_r`.
#[derive(Debug, Clone)]
pub struct ClosedLoop {
    pub kind: ClosedLoopKind,
    pub system: EviSystem,
    pub error_map: DMatrix<f64>,
    pub n: usize,
    pub n_r: usize,
    pub ds: usize,
}

impl ClosedLoop {
    pub fn plant_state(&self, xcl: &DVector<f64>) -> DVector<f64> {
        xcl.rows(0, self.n).into_owned()
    }

    pub fn exo_state(&self, xcl: &DVector<f64>) -> DVector<f64> {
        xcl.rows(xcl.len() - self.n_r, self.n_r).into_owned()
    }

    pub fn plant_multiplier(&self, lam: &DVector<f64>) -> DVector<f64> {
        lam.rows(0, self.ds).into_owned()
    }

    pub fn exo_multiplier(&self, lam: &DVector<f64>) -> DVector<f64> {
        lam.rows(lam.len() - self.ds, self.ds).into_owned()
    }

    pub fn initial_state(&self, x0: &DVector<f64>, x_r0: &DVector<f64>) -> DVector<f64> {
        match self.kind {
            ClosedLoopKind::Static => linalg::vstack(x0, x_r0),
            // the estimator starts at the origin
            ClosedLoopKind::Compensator => {
                let est = DVector::zeros(self.n + self.n_r);
                linalg::vstack(&linalg::vstack(x0, &est), x_r0)
            }
        }
    }

    pub fn error(&self, xcl: &DVector<f64>) -> DVector<f64> {
        &self.error_map * xcl
    }
}

/// Weights `(α, β)` for `V = α e_xᵀ P e_x + β e_ξᵀ P̂ e_ξ` with
/// `α γ σ_min(P) > 1` and `β γ̂ σ_min(P̂) > α² χ²`, `χ = ‖P B W‖`,
/// `W = [−K, M − KΠ]`.
pub fn compensator_weights(
    design: &RegulatorDesign,
    b: &DMatrix<f64>,
) -> Result<(f64, f64)> {
    let p_hat = design
        .p_hat
        .as_ref()
        .ok_or_else(|| Error::validation("design.p_hat", "observer certificate missing"))?;
    let gamma_hat = design
        .gamma_hat
        .ok_or_else(|| Error::validation("design.gamma_hat", "observer rate missing"))?;
    let sp = linalg::min_eig_sym(&design.p);
    let sph = linalg::min_eig_sym(p_hat);
    if !(sp > 0.0 && sph > 0.0 && design.gamma > 0.0 && gamma_hat > 0.0) {
        return Err(Error::validation("design", "certificates must be positive definite with positive rates"));
    }
    let w = linalg::block(&[&[&(-&design.k), &(&design.m_ff - &design.k * &design.pi)]]);
    let chi = linalg::op_norm(&(&design.p * b * w));
    let alpha = 2.0 / (design.gamma * sp);
    let beta = 2.0 * (alpha * chi).powi(2).max(1.0) / (gamma_hat * sph);
    Ok((alpha, beta))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LyapunovCheck {
    pub monotone: bool,
    /// largest `V(e_k) − V(e_{k−1})` over all consecutive samples
    pub worst_increase: f64,
    /// largest increase across samples flagged as jumps
    pub worst_jump_increase: f64,
}

/// Evaluates `V(e) = eᵀ Q e` along sampled errors; monotone when every
/// increment, jumps included, is at most `tol`.
pub fn lyapunov_decrease_check(errors: &[DVector<f64>], jump_flags: &[bool], q: &DMatrix<f64>, tol: f64) -> LyapunovCheck {
    let v: Vec<f64> = errors.iter().map(|e| e.dot(&(q * e))).collect();
    let mut worst = 0.0f64;
    let mut worst_jump = 0.0f64;
    for k in 1..v.len() {
        let inc = v[k] - v[k - 1];
        worst = worst.max(inc);
        if jump_flags.get(k).copied().unwrap_or(false) {
            worst_jump = worst_jump.max(inc);
        }
    }
    LyapunovCheck {
        monotone: worst <= tol,
        worst_increase: worst,
        worst_jump_increase: worst_jump,
    }
}

/// Weighted Lyapunov matrix `blkdiag(w₁ P₁, w₂ P₂, …)`.
pub fn lyapunov_matrix(blocks: &[(&DMatrix<f64>, f64)]) -> DMatrix<f64> {
    let scaled: Vec<DMatrix<f64>> = blocks.iter().map(|(p, w)| *p * *w).collect();
    let refs: Vec<&DMatrix<f64>> = scaled.iter().collect();
    linalg::block_diag(&refs)
}

/// Result of re-verifying a design against its problem data.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignVerification {
    pub residuals: RegulatorResiduals,
    pub p_symmetric: bool,
    pub p_min_eig: f64,
    pub passivity: Option<PassivityCheck>,
    pub gamma_star: Option<f64>,
    pub stacked: Option<PassivityCheck>,
    pub feedforward: Option<FeedforwardMatch>,
    pub observer: Option<PassivityCheck>,
    pub failures: Vec<String>,
}

impl DesignVerification {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn lines(&self) -> Vec<(String, String)> {
        let mut out = vec![
            ("regulator_residual".into(), format!("{:.6e}", self.residuals.total())),
            ("regulator_residuals".into(), self.residuals.to_string()),
            ("p_symmetric".into(), self.p_symmetric.to_string()),
            ("p_min_eig".into(), format!("{:.6e}", self.p_min_eig)),
        ];
        if let Some(c) = &self.passivity {
            out.push(("passivity".into(), c.to_string()));
            out.push(("passivity_margin".into(), format!("{:.6e}", c.margin)));
        }
        out.push((
            "gamma_star".into(),
            self.gamma_star.map_or("none".into(), |g| format!("{g:.6e}")),
        ));
        if let Some(c) = &self.stacked {
            out.push(("stacked_passivity".into(), c.to_string()));
        }
        if let Some(f) = &self.feedforward {
            out.push(("feedforward_residual".into(), format!("{:.6e}", f.residual)));
        }
        if let Some(c) = &self.observer {
            out.push(("observer_passivity".into(), c.to_string()));
        }
        out.push(("verdict".into(), if self.passed() { "pass".into() } else { "fail".into() }));
        for f in &self.failures {
            out.push(("failure".into(), f.clone()));
        }
        out
    }
}

/// Re-runs every residual and LMI test of a design. The stacked-quadruple
/// LMI is reported but not required: with `J = J_r = 0` it is degenerate
/// and reduces to `P [G ΠG_r] = [Hᵀ Hᵀ]`.
pub fn verify_design(problem: &RegulationProblem, design: &RegulatorDesign) -> Result<DesignVerification> {
    problem.validate()?;
    let mut failures = Vec::new();
    let residuals = problem.regulator_residuals(design);
    if !residuals.accepted() {
        failures.push(format!("regulator equations not satisfied: {residuals}"));
    }
    let n = problem.n();
    if design.p.shape() != (n, n) {
        return Err(Error::dim("design.p", format!("{n}x{n}"), format!("{:?}", design.p.shape())));
    }
    let asym = linalg::asymmetry(&design.p);
    let p_symmetric = asym <= 1e-12 * design.p.amax().max(1.0);
    let p_min_eig = linalg::min_eig_sym(&design.p);
    if !p_symmetric {
        failures.push(format!("P is not symmetric (asymmetry {asym:.3e})"));
    }
    if !(p_min_eig > 0.0) {
        failures.push(format!("P is not positive definite: min eigenvalue {p_min_eig:.6e}"));
    }
    let p = &problem.plant;
    let a_cl = &p.a + &p.b * &design.k;
    let (passivity, gamma_star, stacked) = if p_symmetric {
        let chk = check_strict_passivity(&a_cl, &p.g, &p.h, &p.j, &design.p, design.gamma)?;
        if !chk.feasible {
            failures.push(format!(
                "strict passivity LMI fails at gamma {}: block max eigenvalue {:.6e} (not negative semidefinite)",
                design.gamma, chk.margin
            ));
        }
        let gs = max_passivity_rate(&a_cl, &p.g, &p.h, &p.j, &design.p)?;
        let [at, gt, ht, jt] = problem.stacked_quadruple(design);
        let st = check_strict_passivity(&at, &gt, &ht, &jt, &design.p, 0.0)?;
        (Some(chk), gs, Some(st))
    } else {
        (None, None, None)
    };
    let feedforward = if problem.n_ext() > 0 {
        let ff = feedforward_match(&p.b, &problem.b_ext(), &design.pi, &problem.b_r())?;
        if let Some(nd) = &design.n_ff {
            let res = (&p.b * nd + problem.b_ext() - &design.pi * problem.b_r()).norm();
            if res > REGULATOR_TOL * problem.b_ext().norm().max(1.0) {
                failures.push(format!("feedforward condition BN + B_ext = Pi B_r violated by {res:.3e}"));
            }
        } else if !ff.feasible {
            failures.push(format!("no feedforward N exists (residual {:.3e})", ff.residual));
        }
        Some(ff)
    } else {
        None
    };
    let observer = match (&design.l, &design.p_hat, design.gamma_hat) {
        (Some(l), Some(ph), Some(gh)) => {
            let (a_hat, c_hat, g_hat, h_hat, j_hat) = problem.observer_data();
            let chk = check_strict_passivity(&(a_hat - l * c_hat), &g_hat, &h_hat, &j_hat, ph, gh)?;
            if !chk.feasible {
                failures.push(format!("observer passivity LMI fails: margin {:.6e}", chk.margin));
            }
            Some(chk)
        }
        _ => None,
    };
    Ok(DesignVerification {
        residuals,
        p_symmetric,
        p_min_eig,
        passivity,
        gamma_star,
        stacked,
        feedforward,
        observer,
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::MovingSet;
    use crate::signal::ScalarSignal;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn m(r: usize, c: usize, x: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(r, c, x)
    }

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(x)
    }

    #[test]
    fn identity_embedding() {
        let a = m(2, 2, &[0.0, 1.0, -3.0, -1.0]);
        let b = m(2, 1, &[0.0, 1.0]);
        let c = m(1, 2, &[1.0, 0.0]);
        let h = m(1, 2, &[0.0, 1.0]);
        let sol = solve_regulator_equations(&a, &b, &DMatrix::zeros(2, 2), &a, &c, &c, &h, &h).unwrap();
        assert!((&sol.pi - DMatrix::identity(2, 2)).amax() < 1e-12);
        assert!(sol.m_ff.amax() < 1e-12);
        assert!(sol.solvable());
    }

    #[test]
    fn passivity_trivial_example() {
        let a = -DMatrix::identity(2, 2);
        let g = DMatrix::identity(2, 2);
        let chk = check_strict_passivity(&a, &g, &g, &DMatrix::zeros(2, 2), &DMatrix::identity(2, 2), 1.0).unwrap();
        assert!(chk.feasible);
        assert_eq!(chk.margin, 0.0);
        let bad = m(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(check_strict_passivity(&a, &g, &g, &DMatrix::zeros(2, 2), &bad, 1.0).is_err());
        let indefinite = m(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(!check_strict_passivity(&a, &g, &g, &DMatrix::zeros(2, 2), &indefinite, 1.0).unwrap().feasible);
    }

    #[test]
    fn bisection_finds_rate() {
        // A = −I, P = I: block top-left (−2 + γ) I
        let a = -DMatrix::identity(2, 2);
        let g = DMatrix::zeros(2, 1);
        let h = DMatrix::zeros(1, 2);
        let j = m(1, 1, &[1.0]);
        let gs = max_passivity_rate(&a, &g, &h, &j, &DMatrix::identity(2, 2)).unwrap().unwrap();
        assert!((gs - 2.0).abs() < 1e-10);
    }

    #[test]
    fn static_control_examples() {
        let design = RegulatorDesign {
            pi: DMatrix::identity(2, 2),
            m_ff: m(1, 2, &[-2.0, 1.0]),
            k: m(1, 2, &[-2.0, -2.0]),
            p: m(2, 2, &[2.0, 0.0, 0.0, 1.0]),
            gamma: 0.2,
            n_ff: None,
            l: None,
            p_hat: None,
            gamma_hat: None,
        };
        let u = static_control(&design, &v(&[1.0, 0.0]), &v(&[0.0, 1.0]));
        assert_eq!(u, v(&[1.0]));
        let xr = v(&[0.3, -0.7]);
        let u = static_control(&design, &(&design.pi * &xr), &xr);
        assert!((u - &design.m_ff * &xr).amax() < 1e-15);
    }

    fn clipped_plant_system() -> EviSystem {
        let set = MovingSet::new(PolyhedralCone::orthant(2), VectorSignal::constant(&[1.0, 1.0])).unwrap();
        EviSystem::new(
            m(2, 2, &[-0.1, 1.0, 0.0, 0.0]),
            m(2, 2, &[0.0, 0.0, -1.0, 1.0]),
            m(2, 2, &[0.0, -1.0, 0.0, 1.0]),
            DMatrix::zeros(2, 2),
            set,
        )
        .unwrap()
        .with_input(m(2, 1, &[0.0, 1.0]), VectorSignal::zeros(1))
        .unwrap()
    }

    #[test]
    fn viability_control_cases() {
        let sys = clipped_plant_system();
        let xr = DVector::zeros(0);
        // interior
        let u = viability_control(&sys, &v(&[0.0, 0.2]), &v(&[5.0]), &xr, 0.0, 1e-9).unwrap();
        assert_eq!(u, v(&[0.0]));
        // on x2 = 1 pushing outward: the correction cancels u_reg
        let u = viability_control(&sys, &v(&[0.0, 1.0]), &v(&[0.7]), &xr, 0.0, 1e-9).unwrap();
        assert!((u[0] + 0.7).abs() < 1e-12);
        // on x2 = 1 pushing inward: no correction
        let u = viability_control(&sys, &v(&[0.0, 1.0]), &v(&[-0.7]), &xr, 0.0, 1e-9).unwrap();
        assert_eq!(u, v(&[0.0]));
    }

    #[test]
    fn feedforward_cases() {
        let b = m(2, 1, &[0.0, -1000.0]);
        let pi = m(2, 1, &[1.0, 0.0]);
        let b_r = m(1, 1, &[0.1]);
        let b_ext = m(2, 1, &[0.1, 0.0]);
        let ff = feedforward_match(&b, &b_ext, &pi, &b_r).unwrap();
        assert!(ff.feasible);
        assert!(ff.n.amax() < 1e-15);
        let ff = feedforward_match(&DMatrix::zeros(2, 1), &m(2, 1, &[0.3, 0.0]), &pi, &b_r).unwrap();
        assert!(!ff.feasible);
    }

    #[test]
    fn synthesis_already_passive() {
        let a = -DMatrix::identity(2, 2);
        let b = m(2, 1, &[0.0, 1.0]);
        let g = m(2, 1, &[1.0, 0.0]);
        let h = g.transpose();
        let out = find_passifying_gain(&a, &b, &g, &h, &DMatrix::zeros(1, 1)).unwrap();
        let chk = check_strict_passivity(&(&a + &b * &out.k), &g, &h, &DMatrix::zeros(1, 1), &out.p, out.gamma).unwrap();
        assert!(chk.feasible && out.gamma > 0.0);
    }

    #[test]
    fn synthesis_clipped_sine_plant() {
        let a = m(2, 2, &[-0.1, 1.0, 0.0, 0.0]);
        let b = m(2, 1, &[0.0, 1.0]);
        let g = m(2, 2, &[0.0, 0.0, -1.0, 1.0]);
        let h = m(2, 2, &[0.0, -1.0, 0.0, 1.0]);
        let j = DMatrix::zeros(2, 2);
        let out = find_passifying_gain(&a, &b, &g, &h, &j).unwrap();
        let chk = check_strict_passivity(&(&a + &b * &out.k), &g, &h, &j, &out.p, out.gamma).unwrap();
        assert!(chk.feasible, "{chk}");
        assert!(chk.margin <= 1e-12 * linalg::op_norm(&out.p).max(1.0));
    }

    #[test]
    fn synthesis_on_instances_built_backwards() {
        let mut rng = ChaCha8Rng::seed_from_u64(crate::DEFAULT_SEED);
        let mut total = 0;
        let mut certified = 0;
        for _ in 0..20 {
            let n = rng.random_range(2..=4);
            let mu = rng.random_range(1..=2usize);
            let ds = rng.random_range(1..=2usize);
            let mut rnd = |r: usize, c: usize| DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0));
            let l = rnd(n, n);
            let p0 = &l * l.transpose() + DMatrix::identity(n, n);
            let s = rnd(n, n);
            let skew = &s - s.transpose();
            let p0_inv = p0.clone().try_inverse().unwrap();
            // A_cl = P0⁻¹ (skew − I) gives A_clᵀ P0 + P0 A_cl = −2 I
            let a_cl = &p0_inv * (skew - DMatrix::identity(n, n));
            let b = rnd(n, mu);
            let k0 = rnd(mu, n);
            let a = &a_cl - &b * k0;
            let h = rnd(ds, n);
            let g = &p0_inv * h.transpose();
            let jn = rnd(ds, ds);
            let j = &jn * jn.transpose() * 0.5;
            total += 1;
            if let Ok(out) = find_passifying_gain(&a, &b, &g, &h, &j) {
                let chk = check_strict_passivity(&(&a + &b * &out.k), &g, &h, &j, &out.p, out.gamma).unwrap();
                if chk.feasible {
                    certified += 1;
                }
            }
        }
        assert!(certified * 10 >= total * 9, "{certified}/{total}");
    }

    #[test]
    fn observer_synthesis_on_detectable_instance() {
        // Â = [[0, 1], [-1, 0]], Ĉ = [1, 0]; no constraint coupling
        let a_hat = m(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        let c_hat = m(1, 2, &[1.0, 0.0]);
        let g = DMatrix::zeros(2, 1);
        let h = DMatrix::zeros(1, 2);
        let j = m(1, 1, &[1.0]);
        let out = find_observer_gain(&a_hat, &c_hat, &g, &h, &j, 5000).unwrap();
        let chk = check_strict_passivity(&(&a_hat - &out.l * &c_hat), &g, &h, &j, &out.p_hat, out.gamma_hat).unwrap();
        assert!(chk.feasible);
    }

    fn clipped_sine_problem() -> RegulationProblem {
        let h = m(2, 2, &[0.0, -1.0, 0.0, 1.0]);
        let g = m(2, 2, &[0.0, 0.0, -1.0, 1.0]);
        RegulationProblem {
            plant: Plant {
                a: m(2, 2, &[-0.1, 1.0, 0.0, 0.0]),
                b: m(2, 1, &[0.0, 1.0]),
                f: None,
                g: g.clone(),
                h: h.clone(),
                j: DMatrix::zeros(2, 2),
                b_ext: None,
                c: m(1, 2, &[1.0, 0.0]),
                input_map: Some(m(1, 2, &[-1.0, 1.0])),
            },
            exosystem: Exosystem {
                a_r: m(2, 2, &[-0.1, 1.0, -2.0, 1.0]),
                g_r: g,
                h_r: h,
                j_r: DMatrix::zeros(2, 2),
                b_r: None,
                c_r: m(1, 2, &[1.0, 0.0]),
            },
            cone: PolyhedralCone::orthant(2),
            offset: VectorSignal::constant(&[1.0, 1.0]),
            f_ext: None,
        }
    }

    fn clipped_sine_design() -> RegulatorDesign {
        RegulatorDesign {
            pi: DMatrix::identity(2, 2),
            m_ff: m(1, 2, &[-2.0, 1.0]),
            k: m(1, 2, &[-2.0, -2.0]),
            p: m(2, 2, &[2.0, 0.0, 0.0, 1.0]),
            gamma: 0.2,
            n_ff: None,
            l: None,
            p_hat: None,
            gamma_hat: None,
        }
    }

    #[test]
    fn clipped_sine_regulator_and_certificate() {
        let prob = clipped_sine_problem();
        prob.validate().unwrap();
        let sol = prob.solve_regulator_equations().unwrap();
        assert!((&sol.pi - DMatrix::identity(2, 2)).amax() < 1e-10);
        assert!((&sol.m_ff - m(1, 2, &[-2.0, 1.0])).amax() < 1e-10);
        assert!(sol.solvable());
        let d = clipped_sine_design();
        let p = &prob.plant;
        let acl = &p.a + &p.b * &d.k;
        assert!(check_strict_passivity(&acl, &p.g, &p.h, &p.j, &d.p, 0.2).unwrap().feasible);
        let gs = max_passivity_rate(&acl, &p.g, &p.h, &p.j, &d.p).unwrap().unwrap();
        assert!((gs - 0.2).abs() < 1e-8, "{gs}");
        let ver = verify_design(&prob, &d).unwrap();
        assert!(ver.passed(), "{:?}", ver.failures);
        assert!(ver.stacked.unwrap().feasible);
    }

    #[test]
    fn clipped_sine_observer_problem_is_well_formed() {
        let prob = clipped_sine_problem();
        let (a_hat, c_hat, g_hat, h_hat, j_hat) = prob.observer_data();
        assert_eq!(a_hat.shape(), (4, 4));
        assert_eq!(c_hat, m(1, 4, &[1.0, 0.0, -1.0, 0.0]));
        assert_eq!(g_hat.shape(), (4, 4));
        assert_eq!(h_hat.shape(), (4, 4));
        assert_eq!(j_hat, DMatrix::zeros(4, 4));
    }

    fn circuit_problem() -> RegulationProblem {
        RegulationProblem {
            plant: Plant {
                a: m(2, 2, &[-10.0, -1.0, 1e5, 0.0]),
                b: m(2, 1, &[0.0, -1000.0]),
                f: None,
                g: m(2, 1, &[0.1, 0.0]),
                h: m(1, 2, &[-10.0, 0.0]),
                j: m(1, 1, &[0.1]),
                b_ext: Some(m(2, 1, &[0.1, 0.0])),
                c: m(1, 2, &[1.0, 0.0]),
                input_map: None,
            },
            exosystem: Exosystem {
                a_r: m(1, 1, &[-10.0]),
                g_r: m(1, 1, &[0.1]),
                h_r: m(1, 1, &[-10.0]),
                j_r: m(1, 1, &[0.1]),
                b_r: Some(m(1, 1, &[0.1])),
                c_r: m(1, 1, &[1.0]),
            },
            cone: PolyhedralCone::orthant(1),
            offset: VectorSignal(vec![ScalarSignal::floor(0.1, 10.0, 0.0)]),
            f_ext: Some(VectorSignal(vec![ScalarSignal::floor(1.0, 10.0, 0.0)])),
        }
    }

    #[test]
    fn circuit_regulator_and_certificate() {
        let prob = circuit_problem();
        prob.validate().unwrap();
        let sol = prob.solve_regulator_equations().unwrap();
        assert!((&sol.pi - m(2, 1, &[1.0, 0.0])).amax() < 1e-9);
        assert!((sol.m_ff[(0, 0)] - 100.0).abs() < 1e-6);
        assert!(sol.solvable(), "{}", sol.residuals);
        let d = RegulatorDesign {
            pi: sol.pi,
            m_ff: sol.m_ff,
            k: m(1, 2, &[-1000.0, 5.0]),
            p: m(2, 2, &[2240.9, -4.4029, -4.4029, 0.0137]),
            gamma: 0.0,
            n_ff: Some(DMatrix::zeros(1, 1)),
            l: None,
            p_hat: None,
            gamma_hat: None,
        };
        let p = &prob.plant;
        let acl = &p.a + &p.b * &d.k;
        let chk = check_strict_passivity(&acl, &p.g, &p.h, &p.j, &d.p, 0.0).unwrap();
        assert!(chk.feasible);
        assert!((chk.margin + 0.1409).abs() < 1e-3, "{}", chk.margin);
        assert!(max_passivity_rate(&acl, &p.g, &p.h, &p.j, &d.p).unwrap().unwrap() > 0.0);
        let ver = verify_design(&prob, &d).unwrap();
        assert!(ver.passed(), "{:?}", ver.failures);
        assert!(ver.feedforward.unwrap().feasible);
    }

    #[test]
    fn verify_rejects_indefinite_p() {
        let prob = clipped_sine_problem();
        let mut d = clipped_sine_design();
        d.p[(1, 1)] = -1.0;
        let ver = verify_design(&prob, &d).unwrap();
        assert!(!ver.passed());
        assert!(ver.failures.iter().any(|f| f.contains("not positive definite")));
    }

    #[test]
    fn static_loop_error_dynamics() {
        let prob = clipped_sine_problem();
        let d = clipped_sine_design();
        let cl = prob.static_closed_loop(&d).unwrap();
        assert_eq!(cl.system.n(), 4);
        let x = cl.initial_state(&v(&[0.5, -0.5]), &v(&[0.0, 0.5]));
        assert_eq!(cl.error(&x), v(&[0.5, -1.0]));
    }

    fn mat_strategy(r: usize, c: usize) -> impl proptest::strategy::Strategy<Value = DMatrix<f64>> {
        use proptest::prelude::*;
        proptest::collection::vec(-1.0f64..1.0, r * c).prop_map(move |d| DMatrix::from_vec(r, c, d))
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(32))]

        #[test]
        fn regulator_equations_recover_planted_solution(
            a in mat_strategy(3, 3),
            b in mat_strategy(3, 2),
            a_r in mat_strategy(2, 2),
            pi in mat_strategy(3, 2),
            mm in mat_strategy(2, 2),
            c in mat_strategy(1, 3),
            h in mat_strategy(2, 3),
        ) {
            let f = &pi * &a_r - &a * &pi - &b * &mm;
            let sol = solve_regulator_equations(&a, &b, &f, &a_r, &c, &(&c * &pi), &h, &(&h * &pi)).unwrap();
            proptest::prop_assert!(sol.residuals.total() < 1e-10, "{}", sol.residuals);
        }

        #[test]
        fn synthesized_gains_are_certified(
            a in mat_strategy(2, 2),
            b in mat_strategy(2, 1),
            h in mat_strategy(1, 2),
            jd in 0.0f64..1.0,
        ) {
            let g = h.transpose();
            let j = m(1, 1, &[jd]);
            if let Ok(out) = find_passifying_gain_with(&a, &b, &g, &h, &j, 500) {
                let chk = check_strict_passivity(&(&a + &b * &out.k), &g, &h, &j, &out.p, out.gamma).unwrap();
                proptest::prop_assert!(chk.feasible && out.gamma > 0.0, "{}", chk);
            }
        }
    }

    #[test]
    fn lyapunov_check_cases() {
        let zero = vec![DVector::zeros(2); 5];
        let q = DMatrix::identity(2, 2);
        let c = lyapunov_decrease_check(&zero, &[false; 5], &q, 1e-6);
        assert!(c.monotone);
        assert_eq!(c.worst_increase, 0.0);
        let growing: Vec<DVector<f64>> = (0..5).map(|k| v(&[k as f64, 0.0])).collect();
        assert!(!lyapunov_decrease_check(&growing, &[false; 5], &q, 1e-6).monotone);
    }
}
