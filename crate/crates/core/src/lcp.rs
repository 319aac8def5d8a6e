//! Linear complementarity: find `z ≥ 0` with `w = M z + q ≥ 0`, `⟨z, w⟩ = 0`.

use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::geometry::{normal_cone_residual, ConeCpInstance, PolyhedralCone};
use crate::linalg;

/// Largest dimension accepted by [`brute_force_lcp`].
pub const BRUTE_FORCE_MAX_DIM: usize = 16;
/// [`solve_cone_complementarity`] falls back to enumeration up to this size
/// when Lemke's method terminates on a ray.
const FALLBACK_MAX_DIM: usize = 10;
const PIVOT_CAP_CEILING: usize = 100_000;
const PIVOT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct LcpProblem {
    pub m: DMatrix<f64>,
    pub q: DVector<f64>,
}

impl LcpProblem {
    pub fn new(m: DMatrix<f64>, q: DVector<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::dim("LCP matrix", "square", format!("{}x{}", m.nrows(), m.ncols())));
        }
        if m.nrows() != q.len() {
            return Err(Error::dim("LCP vector q", m.nrows(), q.len()));
        }
        if m.iter().chain(q.iter()).any(|v| !v.is_finite()) {
            return Err(Error::validation("lcp", "non-finite entry in M or q"));
        }
        Ok(LcpProblem { m, q })
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }

    /// Plain-text form: the dimension, then `M` row by row, then `q`.
    pub fn to_text(&self) -> String {
        let d = self.dim();
        let mut out = format!("{d}\n");
        for i in 0..d {
            let row: Vec<String> = (0..d).map(|j| linalg::fmt17(self.m[(i, j)])).collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
        let q: Vec<String> = self.q.iter().map(|&v| linalg::fmt17(v)).collect();
        out.push_str(&q.join(" "));
        out.push('\n');
        out
    }

    /// Parses [`to_text`](Self::to_text) output; blank lines and lines
    /// starting with `#` are ignored.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut tokens = text
            .lines()
            .filter(|l| !l.trim_start().starts_with('#'))
            .flat_map(str::split_whitespace);
        let d: usize = tokens
            .next()
            .ok_or_else(|| Error::Parse("empty LCP file".into()))?
            .parse()
            .map_err(|e| Error::Parse(format!("dimension: {e}")))?;
        let mut num = |what: &str, k: usize| -> Result<f64> {
            let tok = tokens
                .next()
                .ok_or_else(|| Error::Parse(format!("missing {what} entry {k}")))?;
            tok.parse()
                .map_err(|e| Error::Parse(format!("{what} entry {k} `{tok}`: {e}")))
        };
        let mut m = DMatrix::zeros(d, d);
        for k in 0..d * d {
            m[(k / d, k % d)] = num("M", k)?;
        }
        let mut q = DVector::zeros(d);
        for k in 0..d {
            q[k] = num("q", k)?;
        }
        if tokens.next().is_some() {
            return Err(Error::Parse("trailing tokens after q".into()));
        }
        LcpProblem::new(m, q)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LcpStatus {
    Solved,
    RayTermination,
    Infeasible,
}

impl fmt::Display for LcpStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LcpStatus::Solved => "solved",
            LcpStatus::RayTermination => "ray_termination",
            LcpStatus::Infeasible => "infeasible",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LcpSolution {
    pub z: DVector<f64>,
    pub w: DVector<f64>,
    pub status: LcpStatus,
    /// `|⟨z, w⟩|`
    pub complementarity_residual: f64,
    pub pivots: usize,
    pub diagnostics: Option<String>,
}

impl LcpSolution {
    fn unsolved(p: &LcpProblem, status: LcpStatus, pivots: usize, diagnostics: String) -> Self {
        LcpSolution {
            z: DVector::zeros(p.dim()),
            w: p.q.clone(),
            status,
            complementarity_residual: f64::NAN,
            pivots,
            diagnostics: Some(diagnostics),
        }
    }

    fn from_z(p: &LcpProblem, z: DVector<f64>, pivots: usize) -> Self {
        let mut w = &p.m * &z + &p.q;
        // on the support of z, w vanishes up to the roundoff of forming Mz + q
        let roundoff = 64.0 * f64::EPSILON * problem_scale(p) * (1.0 + z.amax()) * p.dim() as f64;
        for i in 0..w.len() {
            if z[i] > 0.0 && w[i].abs() <= roundoff {
                w[i] = 0.0;
            }
        }
        LcpSolution {
            complementarity_residual: z.dot(&w).abs(),
            z,
            w,
            status: LcpStatus::Solved,
            pivots,
            diagnostics: None,
        }
    }

    pub fn is_solved(&self) -> bool {
        self.status == LcpStatus::Solved
    }

    /// Largest violation among `w = Mz + q`, `z ≥ 0`, `w ≥ 0` and `⟨z, w⟩ = 0`.
    pub fn certificate_residual(&self, p: &LcpProblem) -> f64 {
        if self.z.is_empty() {
            return 0.0;
        }
        let eq = (&p.m * &self.z + &p.q - &self.w).amax();
        eq.max(-self.z.min())
            .max(-self.w.min())
            .max(self.z.dot(&self.w).abs())
            .max(0.0)
    }
}

/// Scale used to turn absolute tolerances into relative ones.
fn problem_scale(p: &LcpProblem) -> f64 {
    p.m.amax().max(p.q.amax()).max(1.0)
}

#[derive(Debug, Clone, Default)]
pub struct LemkeOptions {
    /// Covering vector `e > 0`; all ones when absent.
    pub covering: Option<DVector<f64>>,
    /// Pivot budget; `min(d·2^d, 100000)` when absent.
    pub max_pivots: Option<usize>,
}

pub fn lemke_solve(p: &LcpProblem) -> LcpSolution {
    lemke_solve_with(p, &LemkeOptions::default())
}

/// Lemke's complementary pivoting with a lexicographic ratio test.
///
/// The tableau is `I w − M z − e z₀ = q`. Columns `0..d` are `w`, `d..2d`
/// are `z`, `2d` is `z₀` and the last column is the right-hand side. The
/// `w` block of the tableau always holds `B⁻¹`, which provides the
/// lexicographic tie-break.
pub fn lemke_solve_with(p: &LcpProblem, opts: &LemkeOptions) -> LcpSolution {
    let d = p.dim();
    if d == 0 || p.q.min() >= 0.0 {
        return LcpSolution::from_z(p, DVector::zeros(d), 0);
    }
    let cap = opts.max_pivots.unwrap_or_else(|| {
        if d >= 17 {
            PIVOT_CAP_CEILING
        } else {
            (d << d).clamp(4, PIVOT_CAP_CEILING)
        }
    });
    let e = opts.covering.clone().unwrap_or_else(|| DVector::from_element(d, 1.0));
    let z0 = 2 * d;
    let rhs = 2 * d + 1;
    let mut tab = DMatrix::zeros(d, 2 * d + 2);
    for i in 0..d {
        tab[(i, i)] = 1.0;
        for j in 0..d {
            tab[(i, d + j)] = -p.m[(i, j)];
        }
        tab[(i, z0)] = -e[i];
        tab[(i, rhs)] = p.q[i];
    }
    let mut basis: Vec<usize> = (0..d).collect();

    // z₀ enters; the row with the most negative q/e leaves.
    let mut row = 0;
    let mut best = f64::INFINITY;
    for i in 0..d {
        let r = p.q[i] / e[i];
        if r < best {
            best = r;
            row = i;
        }
    }
    pivot(&mut tab, row, z0);
    let mut leaving = basis[row];
    basis[row] = z0;
    let mut pivots = 1;

    loop {
        let entering = complement(leaving, d);
        let Some(r) = lex_ratio_row(&tab, entering, &basis, d, z0) else {
            return LcpSolution::unsolved(
                p,
                LcpStatus::RayTermination,
                pivots,
                format!("secondary ray on entering variable {} after {pivots} pivots", var_name(entering, d)),
            );
        };
        pivot(&mut tab, r, entering);
        leaving = basis[r];
        basis[r] = entering;
        pivots += 1;
        if leaving == z0 {
            break;
        }
        if pivots >= cap {
            return LcpSolution::unsolved(
                p,
                LcpStatus::Infeasible,
                pivots,
                format!("pivot cap {cap} reached without z0 leaving; possible cycling"),
            );
        }
    }

    let mut z = DVector::zeros(d);
    for (i, &b) in basis.iter().enumerate() {
        if (d..2 * d).contains(&b) {
            z[b - d] = tab[(i, rhs)].max(0.0);
        }
    }
    LcpSolution::from_z(p, polish(p, z), pivots)
}

fn complement(var: usize, d: usize) -> usize {
    if var < d {
        var + d
    } else {
        var - d
    }
}

fn var_name(var: usize, d: usize) -> String {
    match var {
        v if v < d => format!("w{}", v + 1),
        v if v < 2 * d => format!("z{}", v - d + 1),
        _ => "z0".into(),
    }
}

fn pivot(tab: &mut DMatrix<f64>, r: usize, c: usize) {
    let pv = tab[(r, c)];
    tab.row_mut(r).scale_mut(1.0 / pv);
    let prow = tab.row(r).into_owned();
    for i in 0..tab.nrows() {
        if i != r {
            let f = tab[(i, c)];
            if f != 0.0 {
                let updated = tab.row(i) - &prow * f;
                tab.row_mut(i).copy_from(&updated);
            }
        }
    }
}

/// Minimum-ratio row for the entering column; ties are broken by preferring
/// `z₀`, then lexicographically on `B⁻¹` rows scaled by the pivot entry.
fn lex_ratio_row(tab: &DMatrix<f64>, col: usize, basis: &[usize], d: usize, z0: usize) -> Option<usize> {
    let rhs = tab.ncols() - 1;
    let scale = tab.column(col).amax().max(1.0);
    let cands: Vec<usize> = (0..d).filter(|&i| tab[(i, col)] > PIVOT_TOL * scale).collect();
    if cands.is_empty() {
        return None;
    }
    let key = |i: usize, k: usize| -> f64 {
        let c = tab[(i, col)];
        if k == 0 {
            tab[(i, rhs)] / c
        } else {
            tab[(i, k - 1)] / c
        }
    };
    let min_ratio = cands.iter().map(|&i| key(i, 0)).fold(f64::INFINITY, f64::min);
    let eq_tol = 1e-12 * min_ratio.abs().max(1.0);
    let mut tied: Vec<usize> = cands
        .into_iter()
        .filter(|&i| key(i, 0) <= min_ratio + eq_tol)
        .collect();
    if let Some(&i) = tied.iter().find(|&&i| basis[i] == z0) {
        return Some(i);
    }
    for k in 1..=d {
        if tied.len() == 1 {
            break;
        }
        let m = tied.iter().map(|&i| key(i, k)).fold(f64::INFINITY, f64::min);
        let tol = 1e-12 * m.abs().max(1.0);
        tied.retain(|&i| key(i, k) <= m + tol);
    }
    tied.first().copied()
}

/// Re-solves `M_αα z_α = −q_α` on the support found by pivoting to strip
/// accumulated round-off; keeps the pivoting result if the refined point
/// is worse.
fn polish(p: &LcpProblem, z: DVector<f64>) -> DVector<f64> {
    let supp: Vec<usize> = (0..z.len()).filter(|&i| z[i] > 0.0).collect();
    if supp.is_empty() {
        return z;
    }
    let maa = p.m.select_rows(&supp).select_columns(&supp);
    let qa = DVector::from_iterator(supp.len(), supp.iter().map(|&i| p.q[i]));
    let za = linalg::lstsq(&maa, &(-qa));
    let mut refined = DVector::zeros(z.len());
    for (k, &i) in supp.iter().enumerate() {
        refined[i] = za[k].max(0.0);
    }
    let a = LcpSolution::from_z(p, z.clone(), 0).certificate_residual(p);
    let b = LcpSolution::from_z(p, refined.clone(), 0).certificate_residual(p);
    if b <= a {
        refined
    } else {
        z
    }
}

/// Exhaustive oracle: tries every support `α ⊆ {1..d}` in increasing
/// bitmask order, solving `M_αα z_α = −q_α` and keeping the first candidate
/// with `z ≥ 0`, `w ≥ 0`.
pub fn brute_force_lcp(p: &LcpProblem) -> Result<LcpSolution> {
    let d = p.dim();
    if d > BRUTE_FORCE_MAX_DIM {
        return Err(Error::EnumerationCap {
            what: "brute-force LCP dimension",
            dim: d,
            cap: BRUTE_FORCE_MAX_DIM,
        });
    }
    let tol = 1e-10 * problem_scale(p);
    for mask in 0u32..(1u32 << d) {
        let supp: Vec<usize> = (0..d).filter(|i| mask & (1 << i) != 0).collect();
        let mut z = DVector::zeros(d);
        if !supp.is_empty() {
            let maa = p.m.select_rows(&supp).select_columns(&supp);
            let qa = DVector::from_iterator(supp.len(), supp.iter().map(|&i| p.q[i]));
            let za = linalg::lstsq(&maa, &(-qa));
            if za.min() < -tol {
                continue;
            }
            for (k, &i) in supp.iter().enumerate() {
                z[i] = za[k].max(0.0);
            }
        }
        let w = &p.m * &z + &p.q;
        let ok = (0..d).all(|i| {
            if mask & (1 << i) != 0 {
                w[i].abs() <= tol
            } else {
                w[i] >= -tol
            }
        });
        if ok {
            return Ok(LcpSolution::from_z(p, z, mask as usize));
        }
    }
    Ok(LcpSolution::unsolved(
        p,
        LcpStatus::Infeasible,
        1 << d,
        "no complementary support yields a feasible point".into(),
    ))
}

/// Solves `K ∋ J η + q ⟂ η ∈ K*` by the substitution `η = Rᵀ α`, which turns
/// it into `LCP(R J Rᵀ, R q)`; for the orthant this is `LCP(J, q)` directly.
pub fn solve_cone_complementarity(
    cone: &PolyhedralCone,
    j: &DMatrix<f64>,
    q: &DVector<f64>,
    tol: f64,
) -> Result<DVector<f64>> {
    let d = cone.dim();
    if j.shape() != (d, d) || q.len() != d {
        return Err(Error::dim("cone complementarity", d, q.len()));
    }
    let r = cone.faces()?;
    if r.nrows() == 0 {
        return Ok(DVector::zeros(d));
    }
    let orthant = cone.is_orthant();
    let problem = if orthant {
        LcpProblem::new(j.clone(), q.clone())?
    } else {
        LcpProblem::new(r.as_ref() * j * r.transpose(), r.as_ref() * q)?
    };
    let mut sol = lemke_solve(&problem);
    if !sol.is_solved() && problem.dim() <= FALLBACK_MAX_DIM {
        let bf = brute_force_lcp(&problem)?;
        if bf.is_solved() {
            sol = bf;
        }
    }
    if !sol.is_solved() {
        return Err(Error::Lcp {
            status: sol.status.to_string(),
            hint: format!(
                "{}; constraint qualification (A3) or range condition (A4) likely fails",
                sol.diagnostics.unwrap_or_default()
            ),
        });
    }
    let eta = if orthant { sol.z } else { r.transpose() * sol.z };
    let v = j * &eta + q;
    let scale = q.amax().max(eta.amax()).max(j.amax()).max(1.0);
    let res = normal_cone_residual(cone, &v, &eta, &DVector::zeros(d));
    if res > tol * scale {
        return Err(Error::Lcp {
            status: "inaccurate".into(),
            hint: format!("cone-CP residual {res:.3e} exceeds tolerance after solve"),
        });
    }
    Ok(eta)
}

/// `η` with `K ∋ H x + J η + h(t) ⟂ η ∈ K*`.
pub fn solve_cone_cp(inst: &ConeCpInstance, x: &DVector<f64>, t: f64) -> Result<DVector<f64>> {
    solve_cone_cp_tol(inst, x, t, crate::Tolerances::default().algebraic)
}

pub fn solve_cone_cp_tol(inst: &ConeCpInstance, x: &DVector<f64>, t: f64, tol: f64) -> Result<DVector<f64>> {
    inst.validate()?;
    if x.len() != inst.h_mat.ncols() {
        return Err(Error::dim("cone CP state", inst.h_mat.ncols(), x.len()));
    }
    let q = &inst.h_mat * x + inst.offset.eval(t);
    solve_cone_complementarity(&inst.cone, &inst.j_mat, &q, tol)
}

/// Orthogonal projector onto `range(J + Jᵀ)` with eigenvalue cutoff
/// `1e-10 · max(1, ‖J + Jᵀ‖)`.
pub fn range_projector(j: &DMatrix<f64>) -> DMatrix<f64> {
    let s = j + j.transpose();
    let cutoff = 1e-10 * s.amax().max(1.0);
    linalg::sym_range_projector(&s, cutoff)
}

/// The least-norm element of the multiplier set: any solution projected
/// onto `range(J + Jᵀ)`, which does not depend on the solution picked.
pub fn least_norm_complementarity(
    cone: &PolyhedralCone,
    j: &DMatrix<f64>,
    q: &DVector<f64>,
    tol: f64,
) -> Result<DVector<f64>> {
    let eta = solve_cone_complementarity(cone, j, q, tol)?;
    let lam = range_projector(j) * eta;
    let v = j * &lam + q;
    let scale = q.amax().max(lam.amax()).max(1.0);
    let res = normal_cone_residual(cone, &v, &lam, &DVector::zeros(cone.dim()));
    if res > tol * scale {
        return Err(Error::Lcp {
            status: "range_projection_failed".into(),
            hint: format!(
                "projection onto range(J + Jᵀ) has residual {res:.3e}; range condition (A4) is violated"
            ),
        });
    }
    Ok(lam)
}

pub fn least_norm_eta(inst: &ConeCpInstance, x: &DVector<f64>, t: f64) -> Result<DVector<f64>> {
    inst.validate()?;
    if x.len() != inst.h_mat.ncols() {
        return Err(Error::dim("cone CP state", inst.h_mat.ncols(), x.len()));
    }
    let q = &inst.h_mat * x + inst.offset.eval(t);
    least_norm_complementarity(&inst.cone, &inst.j_mat, &q, crate::Tolerances::default().algebraic)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::VectorSignal;
    use proptest::prelude::*;

    fn p(d: usize, m: &[f64], q: &[f64]) -> LcpProblem {
        LcpProblem::new(DMatrix::from_row_slice(d, d, m), DVector::from_row_slice(q)).unwrap()
    }

    fn assert_certificate(prob: &LcpProblem, s: &LcpSolution) {
        assert!(s.is_solved(), "{:?}", s.status);
        assert!(s.certificate_residual(prob) <= 1e-9 * problem_scale(prob));
    }

    #[test]
    fn trivial_examples() {
        let a = p(2, &[3.0, -7.0, 2.0, 0.0], &[1.0, 0.5]);
        let s = lemke_solve(&a);
        assert_eq!(s.z, DVector::zeros(2));
        assert_eq!(s.w, a.q);

        let b = p(1, &[1.0], &[-2.0]);
        let s = lemke_solve(&b);
        assert_certificate(&b, &s);
        assert_eq!(s.z[0], 2.0);
        assert_eq!(s.w[0], 0.0);
        assert_eq!(brute_force_lcp(&b).unwrap().z[0], 2.0);

        let c = p(1, &[0.0], &[-1.0]);
        assert_eq!(brute_force_lcp(&c).unwrap().status, LcpStatus::Infeasible);
        assert_eq!(lemke_solve(&c).status, LcpStatus::RayTermination);
    }

    #[test]
    fn nonsymmetric_example() {
        let prob = p(2, &[0.0, -1.0, 1.0, 1.0], &[1.0, -1.0]);
        let bf = brute_force_lcp(&prob).unwrap();
        assert!(bf.certificate_residual(&prob) <= 1e-12);
        // regression value: support {2}, z = (0, 1), w = (0, 0)
        assert_eq!(bf.z, DVector::from_row_slice(&[0.0, 1.0]));
        let lk = lemke_solve(&prob);
        assert_certificate(&prob, &lk);
    }

    #[test]
    fn text_round_trip_is_bit_exact() {
        let prob = p(2, &[0.1, 1.0 / 3.0, -2.5e-17, 7.0], &[std::f64::consts::PI, -1e300]);
        let back = LcpProblem::from_text(&prob.to_text()).unwrap();
        assert_eq!(back, prob);
        assert!(LcpProblem::from_text("2\n1 2 3 4\n5").is_err());
    }

    #[test]
    fn cone_cp_inactive_and_clipped_sine() {
        let inst = ConeCpInstance::new(
            DMatrix::identity(2, 2),
            DMatrix::zeros(2, 2),
            VectorSignal::zeros(2),
            PolyhedralCone::orthant(2),
        )
        .unwrap();
        let eta = solve_cone_cp(&inst, &DVector::from_row_slice(&[1.0, 0.0]), 0.0).unwrap();
        assert_eq!(eta, DVector::zeros(2));

        let cs = ConeCpInstance::new(
            DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 0.0, 1.0]),
            DMatrix::zeros(2, 2),
            VectorSignal::constant(&[1.0, 1.0]),
            PolyhedralCone::orthant(2),
        )
        .unwrap();
        let x = DVector::from_row_slice(&[0.0, 1.0]);
        let eta = solve_cone_cp(&cs, &x, 0.0).unwrap();
        assert_eq!(eta[1], 0.0);
        assert!(eta[0] >= 0.0);
        assert_eq!(least_norm_eta(&cs, &x, 0.0).unwrap(), DVector::zeros(2));
    }

    #[test]
    fn cone_cp_on_general_cone() {
        // K = {y1 ≥ 0, y1 + y2 ≥ 0}, J = I: unique solution of a strongly
        // monotone problem, checked against the oracle on the reduced LCP
        let r = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 1.0]);
        let cone = PolyhedralCone::from_faces(r.clone());
        let q = DVector::from_row_slice(&[-1.0, -0.5]);
        let j = DMatrix::identity(2, 2);
        let eta = solve_cone_complementarity(&cone, &j, &q, 1e-9).unwrap();
        let red = LcpProblem::new(&r * &j * r.transpose(), &r * &q).unwrap();
        let bf = brute_force_lcp(&red).unwrap();
        assert!((r.transpose() * bf.z - &eta).norm() < 1e-10);
    }

    #[test]
    fn least_norm_on_singular_j() {
        // J = diag(0, 1) on the orthant with H = I, x = (0, -1): the first
        // multiplier is free in [0, ∞), the second is forced to 1
        let inst = ConeCpInstance::new(
            DMatrix::identity(2, 2),
            DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]),
            VectorSignal::zeros(2),
            PolyhedralCone::orthant(2),
        )
        .unwrap();
        let x = DVector::from_row_slice(&[0.0, -1.0]);
        let lam = least_norm_eta(&inst, &x, 0.0).unwrap();
        assert!((lam - DVector::from_row_slice(&[0.0, 1.0])).norm() < 1e-10);
        // positive definite J: the unique solution
        let pd = ConeCpInstance::new(
            DMatrix::identity(2, 2),
            DMatrix::from_row_slice(2, 2, &[2.0, 1.0, -1.0, 1.0]),
            VectorSignal::zeros(2),
            PolyhedralCone::orthant(2),
        )
        .unwrap();
        let x = DVector::from_row_slice(&[-1.0, -1.0]);
        let a = solve_cone_cp(&pd, &x, 0.0).unwrap();
        let b = least_norm_eta(&pd, &x, 0.0).unwrap();
        assert!((a - b).norm() < 1e-12);
    }

    fn psd_instance() -> impl Strategy<Value = LcpProblem> {
        (1usize..=6).prop_flat_map(|d| {
            (
                proptest::collection::vec(-2.0f64..2.0, d * d),
                proptest::collection::vec(-2.0f64..2.0, d * d),
                proptest::collection::vec(-2.0f64..2.0, d),
                1usize..=d,
            )
                .prop_map(move |(a, s, q, rank)| {
                    let a = DMatrix::from_row_slice(d, d, &a).rows(0, rank).into_owned();
                    let s = DMatrix::from_row_slice(d, d, &s);
                    let m = a.transpose() * a + (&s - s.transpose()) * 0.5;
                    LcpProblem::new(m, DVector::from_vec(q)).unwrap()
                })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn lemke_agrees_with_oracle(prob in psd_instance()) {
            let lk = lemke_solve(&prob);
            let bf = brute_force_lcp(&prob).unwrap();
            prop_assert_eq!(lk.is_solved(), bf.is_solved());
            if lk.is_solved() {
                prop_assert!(lk.certificate_residual(&prob) <= 1e-9 * problem_scale(&prob));
            }
        }

        #[test]
        fn spd_solution_is_unique(d in 1usize..=8, seed in proptest::collection::vec(-1.0f64..1.0, 80)) {
            let a = DMatrix::from_fn(d, d, |i, j| seed[(i * d + j) % 64]);
            let m = a.transpose() * &a + DMatrix::identity(d, d) * 0.5;
            let q = DVector::from_fn(d, |i, _| seed[64 + i]);
            let prob = LcpProblem::new(m, q).unwrap();
            let lk = lemke_solve(&prob);
            let bf = brute_force_lcp(&prob).unwrap();
            prop_assert!(lk.is_solved() && bf.is_solved());
            prop_assert!((&lk.z - &bf.z).amax() <= 1e-10);
            let s_lk: Vec<bool> = lk.z.iter().map(|&v| v > 1e-12).collect();
            let s_bf: Vec<bool> = bf.z.iter().map(|&v| v > 1e-12).collect();
            prop_assert_eq!(s_lk, s_bf);
        }

        #[test]
        fn multiplier_differences_lie_in_kernel(
            b in proptest::collection::vec(-1.0f64..1.0, 6),
            h in proptest::collection::vec(-1.0f64..1.0, 9),
            x in proptest::collection::vec(-1.0f64..1.0, 3),
        ) {
            // J = BᵀB (rank ≤ 2) on R₊³; all oracle solutions of the LCP
            // differ by kernel directions of J + Jᵀ
            let bm = DMatrix::from_row_slice(2, 3, &b);
            let j = bm.transpose() * bm;
            let hm = DMatrix::from_row_slice(3, 3, &h);
            let q = hm * DVector::from_row_slice(&x);
            let prob = LcpProblem::new(j.clone(), q).unwrap();
            let sols = all_solutions(&prob);
            let s = &j + j.transpose();
            for a in &sols {
                for c in &sols {
                    prop_assert!((&s * (a - c)).amax() <= 1e-8);
                }
            }
        }
    }

    /// Every support-enumeration solution, not only the first.
    fn all_solutions(p: &LcpProblem) -> Vec<DVector<f64>> {
        let d = p.dim();
        let mut out = Vec::new();
        for mask in 0u32..(1u32 << d) {
            let supp: Vec<usize> = (0..d).filter(|i| mask & (1 << i) != 0).collect();
            let mut z = DVector::zeros(d);
            if !supp.is_empty() {
                let maa = p.m.select_rows(&supp).select_columns(&supp);
                let qa = DVector::from_iterator(supp.len(), supp.iter().map(|&i| p.q[i]));
                let za = linalg::lstsq(&maa, &(-qa));
                for (k, &i) in supp.iter().enumerate() {
                    z[i] = za[k];
                }
            }
            let s = LcpSolution::from_z(p, z, 0);
            if s.certificate_residual(p) <= 1e-10 {
                out.push(s.z);
            }
        }
        out
    }
}
