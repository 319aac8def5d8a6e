//! Polyhedral cones, translated moving sets `S(t) = K − h(t)`, projections
//! and normal-cone tests.

use std::borrow::Cow;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, serde_matrix};
use crate::signal::VectorSignal;

/// Projection uses active-set enumeration up to this many face rows.
pub const ENUMERATION_MAX_FACES: usize = 12;
/// Face/generator conversion is attempted up to this ambient dimension.
pub const DUAL_FACE_CAP: usize = 8;

const DYKSTRA_MAX_SWEEPS: usize = 200_000;

/// A closed convex cone `{y : R y ≥ 0}`, optionally with generators `G`
/// such that the cone equals `{G λ : λ ≥ 0}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolyhedralCone {
    dim: usize,
    #[serde(default, with = "serde_matrix::opt", skip_serializing_if = "Option::is_none")]
    face_matrix: Option<DMatrix<f64>>,
    #[serde(default, with = "serde_matrix::opt", skip_serializing_if = "Option::is_none")]
    generator_matrix: Option<DMatrix<f64>>,
}

impl PolyhedralCone {
    /// Cone in face form; rows of `r` are inward normals.
    pub fn from_faces(r: DMatrix<f64>) -> Self {
        PolyhedralCone {
            dim: r.ncols(),
            face_matrix: Some(r),
            generator_matrix: None,
        }
    }

    /// Cone generated by the columns of `g`.
    pub fn from_generators(g: DMatrix<f64>) -> Self {
        PolyhedralCone {
            dim: g.nrows(),
            face_matrix: None,
            generator_matrix: Some(g),
        }
    }

    pub fn with_generators(mut self, g: DMatrix<f64>) -> Result<Self> {
        if g.nrows() != self.dim {
            return Err(Error::dim("cone generators", self.dim, g.nrows()));
        }
        self.generator_matrix = Some(g);
        Ok(self)
    }

    pub fn orthant(dim: usize) -> Self {
        PolyhedralCone {
            dim,
            face_matrix: Some(DMatrix::identity(dim, dim)),
            generator_matrix: Some(DMatrix::identity(dim, dim)),
        }
    }

    /// The whole space `ℝ^dim` (no faces).
    pub fn full_space(dim: usize) -> Self {
        let mut gens = DMatrix::zeros(dim, 2 * dim);
        for i in 0..dim {
            gens[(i, 2 * i)] = 1.0;
            gens[(i, 2 * i + 1)] = -1.0;
        }
        PolyhedralCone {
            dim,
            face_matrix: Some(DMatrix::zeros(0, dim)),
            generator_matrix: Some(gens),
        }
    }

    /// Cartesian product `K₁ × K₂ × …` (block-diagonal face matrix).
    pub fn product(cones: &[&PolyhedralCone]) -> Result<Self> {
        let faces: Vec<Cow<DMatrix<f64>>> = cones.iter().map(|c| c.faces()).collect::<Result<_>>()?;
        let refs: Vec<&DMatrix<f64>> = faces.iter().map(|f| f.as_ref()).collect();
        let mut r = linalg::block_diag(&refs);
        // block_diag of zero-row blocks still needs the right column count
        let dim: usize = cones.iter().map(|c| c.dim).sum();
        if r.ncols() != dim {
            r = DMatrix::zeros(0, dim);
        }
        let mut out = PolyhedralCone::from_faces(r);
        if cones.iter().all(|c| c.generator_matrix.is_some()) {
            let gens: Vec<&DMatrix<f64>> = cones
                .iter()
                .map(|c| c.generator_matrix.as_ref().unwrap())
                .collect();
            out.generator_matrix = Some(linalg::block_diag(&gens));
        }
        Ok(out)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn generator_matrix(&self) -> Option<&DMatrix<f64>> {
        self.generator_matrix.as_ref()
    }

    pub fn face_matrix(&self) -> Option<&DMatrix<f64>> {
        self.face_matrix.as_ref()
    }

    /// Face matrix, converting from generator form when needed.
    pub fn faces(&self) -> Result<Cow<'_, DMatrix<f64>>> {
        match (&self.face_matrix, &self.generator_matrix) {
            (Some(r), _) => Ok(Cow::Borrowed(r)),
            (None, Some(g)) => {
                // {y : ⟨y, d⟩ ≥ 0 for all generators d of the dual} = cone(G);
                // the dual has face matrix Gᵀ.
                Ok(Cow::Owned(extreme_rays(&g.transpose())?.transpose()))
            }
            (None, None) => Err(Error::validation("cone", "neither face nor generator form present")),
        }
    }

    pub fn is_orthant(&self) -> bool {
        matches!(&self.face_matrix, Some(r) if r.nrows() == self.dim && *r == DMatrix::identity(self.dim, self.dim))
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(r) = &self.face_matrix {
            if r.ncols() != self.dim {
                return Err(Error::dim("cone face matrix columns", self.dim, r.ncols()));
            }
        }
        if let Some(g) = &self.generator_matrix {
            if g.nrows() != self.dim {
                return Err(Error::dim("cone generator rows", self.dim, g.nrows()));
            }
        }
        if self.face_matrix.is_none() && self.generator_matrix.is_none() {
            return Err(Error::validation("cone", "neither face nor generator form present"));
        }
        Ok(())
    }

    /// `max(0, −min R y)`.
    pub fn membership_violation(&self, y: &DVector<f64>) -> f64 {
        let r = self.faces().expect("validated cone");
        if r.nrows() == 0 {
            return 0.0;
        }
        (-(r.as_ref() * y).min()).max(0.0)
    }

    pub fn contains(&self, y: &DVector<f64>, tol: f64) -> bool {
        self.membership_violation(y) <= tol
    }

    /// Distance from `eta` to the dual cone `K* = {Rᵀ α : α ≥ 0}`.
    pub fn dual_violation(&self, eta: &DVector<f64>) -> f64 {
        if self.is_orthant() {
            return eta.map(|e| e.min(0.0)).norm();
        }
        let r = self.faces().expect("validated cone");
        if r.nrows() == 0 {
            return eta.norm();
        }
        let rt = r.transpose();
        let alpha = nnls(&rt, eta);
        (&rt * alpha - eta).norm()
    }

    /// Euclidean projection onto the cone.
    pub fn project(&self, z: &DVector<f64>) -> DVector<f64> {
        let r = self.faces().expect("validated cone");
        if r.nrows() == 0 || self.contains(z, 0.0) {
            return z.clone();
        }
        if self.is_orthant() {
            return z.map(|v| v.max(0.0));
        }
        if r.nrows() <= ENUMERATION_MAX_FACES {
            project_active_set(&r, z)
        } else {
            project_dykstra(&r, z)
        }
    }

    /// Generators of the cone (extreme rays plus ± lineality directions).
    pub fn generators(&self) -> Result<Cow<'_, DMatrix<f64>>> {
        match &self.generator_matrix {
            Some(g) => Ok(Cow::Borrowed(g)),
            None => {
                let r = self.face_matrix.as_ref().expect("validated cone");
                Ok(Cow::Owned(extreme_rays(r)?))
            }
        }
    }
}

/// Result of [`dual_cone`]; `face_form_recovered` is false when the dimension
/// exceeded [`DUAL_FACE_CAP`] and only the generator form is available.
#[derive(Debug, Clone)]
pub struct DualCone {
    pub cone: PolyhedralCone,
    pub face_form_recovered: bool,
}

/// Dual cone `K* = {η : ⟨η, v⟩ ≥ 0 ∀ v ∈ K}`.
pub fn dual_cone(cone: &PolyhedralCone) -> Result<DualCone> {
    cone.validate()?;
    let dim = cone.dim;
    let dual_generators = cone.face_matrix.as_ref().map(|r| r.transpose());
    let dual_faces = match &cone.generator_matrix {
        Some(g) => Some(g.transpose()),
        None if dim <= DUAL_FACE_CAP => Some(extreme_rays(cone.face_matrix.as_ref().unwrap())?.transpose()),
        None => None,
    };
    let dual_generators = match dual_generators {
        Some(g) => Some(g),
        // generator-only input: faces of K, transposed
        None => Some(cone.faces()?.transpose()),
    };
    let face_form_recovered = dual_faces.is_some();
    Ok(DualCone {
        cone: PolyhedralCone {
            dim,
            face_matrix: dual_faces,
            generator_matrix: dual_generators,
        },
        face_form_recovered,
    })
}

/// Extreme rays and lineality directions of `{y : R y ≥ 0}` as columns.
pub fn extreme_rays(r: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = r.ncols();
    if d > DUAL_FACE_CAP {
        return Err(Error::EnumerationCap {
            what: "face/generator conversion dimension",
            dim: d,
            cap: DUAL_FACE_CAP,
        });
    }
    let tol = 1e-10 * r.amax().max(1.0);
    let lineality = linalg::kernel_basis(r, linalg::RANK_RCOND);
    let l = lineality.ncols();
    let mut rays: Vec<DVector<f64>> = Vec::new();
    for j in 0..l {
        let v = lineality.column(j).into_owned();
        rays.push(-&v);
        rays.push(v);
    }
    if l < d {
        let k = d - l - 1;
        let m = r.nrows();
        for subset in combinations(m, k) {
            let mut rows: Vec<DVector<f64>> = subset.iter().map(|&i| r.row(i).transpose()).collect();
            rows.extend((0..l).map(|j| lineality.column(j).into_owned()));
            let sys = if rows.is_empty() {
                DMatrix::zeros(0, d)
            } else {
                DMatrix::from_columns(&rows).transpose()
            };
            let null = linalg::kernel_basis(&sys, linalg::RANK_RCOND);
            if null.ncols() != 1 {
                continue;
            }
            let n = null.column(0).into_owned();
            for cand in [n.clone(), -n] {
                if (r * &cand).min() >= -tol {
                    let c = cand.normalize();
                    if !rays.iter().any(|x| (x - &c).norm() < 1e-8) {
                        rays.push(c);
                    }
                }
            }
        }
    }
    Ok(if rays.is_empty() {
        DMatrix::zeros(d, 0)
    } else {
        DMatrix::from_columns(&rays)
    })
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            if n - i < k - cur.len() {
                break;
            }
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    if k <= n {
        rec(0, n, k, &mut Vec::with_capacity(k), &mut out);
    }
    out
}

/// Exact projection onto `{y : R y ≥ 0}` by enumerating active face sets.
fn project_active_set(r: &DMatrix<f64>, z: &DVector<f64>) -> DVector<f64> {
    let m = r.nrows();
    let scale = z.norm().max(1.0) * r.amax().max(1.0);
    let tol = 1e-11 * scale;
    let mut best: Option<(f64, DVector<f64>)> = None;
    for mask in 1u32..(1u32 << m) {
        let active: Vec<usize> = (0..m).filter(|i| mask & (1 << i) != 0).collect();
        if active.len() > z.len() {
            continue;
        }
        // a KKT point always has linearly independent active normals, so
        // dependent subsets can be skipped
        let ra = r.select_rows(&active);
        let svd = ra.transpose().svd(true, true);
        let smax = svd.singular_values.max();
        if svd.singular_values.min() <= linalg::RANK_RCOND * smax {
            continue;
        }
        // R_Aᵀ = V Σ Uᵀ: y removes the span of the normals, μ = −U Σ⁻¹ Vᵀ z
        let v = svd.u.as_ref().expect("requested");
        let u = svd.v_t.as_ref().expect("requested").transpose();
        let coeff = v.transpose() * z;
        let mu = -(u * coeff.component_div(&svd.singular_values));
        if mu.min() < -tol {
            continue;
        }
        let y = z - v * coeff;
        if (r * &y).min() < -tol || (&ra * &y).amax() > tol {
            continue;
        }
        let dist = (&y - z).norm();
        if best.as_ref().is_none_or(|(d, _)| dist < *d) {
            best = Some((dist, y));
        }
    }
    best.map(|(_, y)| y).unwrap_or_else(|| project_dykstra(r, z))
}

/// Dykstra's alternating projections over the half-spaces `rᵢ·y ≥ 0`.
fn project_dykstra(r: &DMatrix<f64>, z: &DVector<f64>) -> DVector<f64> {
    let m = r.nrows();
    let norms: Vec<f64> = (0..m).map(|i| r.row(i).norm_squared()).collect();
    let mut y = z.clone();
    let mut corr = vec![DVector::zeros(z.len()); m];
    for _ in 0..DYKSTRA_MAX_SWEEPS {
        let prev = y.clone();
        for i in 0..m {
            if norms[i] == 0.0 {
                continue;
            }
            let w = &y + &corr[i];
            let ri = r.row(i).transpose();
            let s = ri.dot(&w);
            let p = if s < 0.0 { &w - &ri * (s / norms[i]) } else { w.clone() };
            corr[i] = &w - &p;
            y = p;
        }
        if (&y - &prev).norm() <= 1e-15 * z.norm().max(1.0) {
            break;
        }
    }
    y
}

/// Lawson–Hanson non-negative least squares: `argmin ‖E α − f‖, α ≥ 0`.
pub fn nnls(e: &DMatrix<f64>, f: &DVector<f64>) -> DVector<f64> {
    let n = e.ncols();
    let mut x = DVector::zeros(n);
    let mut passive = vec![false; n];
    let tol = 1e-12 * e.amax().max(1.0) * f.norm().max(1.0);
    for _ in 0..(3 * n + 10) {
        let w = e.transpose() * (f - e * &x);
        let cand = (0..n)
            .filter(|&j| !passive[j] && w[j] > tol)
            .max_by(|&a, &b| w[a].partial_cmp(&w[b]).unwrap());
        let Some(j) = cand else { break };
        passive[j] = true;
        loop {
            let idx: Vec<usize> = (0..n).filter(|&k| passive[k]).collect();
            let ep = e.select_columns(&idx);
            let zp = linalg::lstsq(&ep, f);
            if zp.iter().all(|&v| v > 0.0) {
                x.fill(0.0);
                for (a, &k) in idx.iter().enumerate() {
                    x[k] = zp[a];
                }
                break;
            }
            let mut alpha = f64::INFINITY;
            for (a, &k) in idx.iter().enumerate() {
                if zp[a] <= 0.0 {
                    alpha = alpha.min(x[k] / (x[k] - zp[a]));
                }
            }
            for (a, &k) in idx.iter().enumerate() {
                x[k] += alpha * (zp[a] - x[k]);
                if x[k] <= 1e-15 {
                    x[k] = 0.0;
                    passive[k] = false;
                }
            }
            if !passive.iter().any(|&p| p) {
                break;
            }
        }
    }
    x
}

/// Regularity class of the offset signal `h`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regularity {
    AbsolutelyContinuous,
    RightContinuousBv,
}

/// `S(t) = K − h(t) = {z : z + h(t) ∈ K}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MovingSet {
    pub cone: PolyhedralCone,
    pub offset: VectorSignal,
    pub regularity: Regularity,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variation_bound: Option<f64>,
}

impl MovingSet {
    /// Builds a moving set, inferring the regularity class from the signal.
    pub fn new(cone: PolyhedralCone, offset: VectorSignal) -> Result<Self> {
        let regularity = if offset.is_continuous() {
            Regularity::AbsolutelyContinuous
        } else {
            Regularity::RightContinuousBv
        };
        let variation_bound = offset.lipschitz_bound();
        let set = MovingSet {
            cone,
            offset,
            regularity,
            variation_bound,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn fixed(cone: PolyhedralCone) -> Self {
        let d = cone.dim();
        MovingSet {
            cone,
            offset: VectorSignal::zeros(d),
            regularity: Regularity::AbsolutelyContinuous,
            variation_bound: Some(0.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.cone.validate()?;
        if self.offset.dim() != self.cone.dim() {
            return Err(Error::dim("moving-set offset", self.cone.dim(), self.offset.dim()));
        }
        if self.regularity == Regularity::AbsolutelyContinuous && !self.offset.is_continuous() {
            return Err(Error::validation(
                "moving_set.regularity",
                "offset signal has jumps but regularity is absolutely_continuous",
            ));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.cone.dim()
    }

    pub fn offset_at(&self, t: f64) -> DVector<f64> {
        self.offset.eval(t)
    }

    /// `S(t)` is a translate of a cone, so nonemptiness reduces to `h(t)`
    /// being finite (`−h(t) ∈ S(t)` always).
    pub fn check_nonempty(&self, t: f64) -> Result<DVector<f64>> {
        let h = self.offset_at(t);
        if h.iter().all(|v| v.is_finite()) {
            Ok(h)
        } else {
            Err(Error::Infeasible {
                t,
                reason: "offset h(t) is not finite".into(),
            })
        }
    }

    pub fn contains(&self, t: f64, v: &DVector<f64>, tol: f64) -> bool {
        self.cone.contains(&(v + self.offset_at(t)), tol)
    }

    /// Largest sampled ratio `|h(t₂) − h(t₁)| / |t₂ − t₁|` on consecutive
    /// sample times; compare with `variation_bound`.
    pub fn sampled_variation_rate(&self, times: &[f64]) -> f64 {
        times
            .windows(2)
            .filter(|w| w[1] > w[0])
            .map(|w| (self.offset.eval(w[1]) - self.offset.eval(w[0])).norm() / (w[1] - w[0]))
            .fold(0.0, f64::max)
    }
}

/// `argmin_{v ∈ S(t)} |x − v|²`.
pub fn project_onto_set(set: &MovingSet, t: f64, x: &DVector<f64>) -> Result<DVector<f64>> {
    if x.len() != set.dim() {
        return Err(Error::dim("project_onto_set point", set.dim(), x.len()));
    }
    let h = set.check_nonempty(t)?;
    let y = set.cone.project(&(x + &h));
    Ok(y - h)
}

/// Components of the cone-complementarity residual for `η ∈ −N_{K−h}(v)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualParts {
    /// violation of `v + h ∈ K`
    pub primal: f64,
    /// distance of `η` to `K*`
    pub dual: f64,
    /// `|⟨η, v + h⟩|`
    pub complementarity: f64,
}

impl ResidualParts {
    pub fn max(&self) -> f64 {
        self.primal.max(self.dual).max(self.complementarity)
    }

    /// Residual with the empty-normal-cone convention: `+∞` when `v + h`
    /// lies outside `K` by more than `tol`.
    pub fn extended(&self, tol: f64) -> f64 {
        if self.primal > tol {
            f64::INFINITY
        } else {
            self.max()
        }
    }
}

pub fn normal_cone_residual_parts(
    cone: &PolyhedralCone,
    v: &DVector<f64>,
    eta: &DVector<f64>,
    h: &DVector<f64>,
) -> ResidualParts {
    let y = v + h;
    ResidualParts {
        primal: cone.membership_violation(&y),
        dual: cone.dual_violation(eta),
        complementarity: eta.dot(&y).abs(),
    }
}

/// `max(violation of v + h ∈ K, violation of η ∈ K*, |⟨η, v + h⟩|)`; zero
/// exactly when `η ∈ −N_{K−h}(v)`.
pub fn normal_cone_residual(
    cone: &PolyhedralCone,
    v: &DVector<f64>,
    eta: &DVector<f64>,
    h: &DVector<f64>,
) -> f64 {
    normal_cone_residual_parts(cone, v, eta, h).max()
}

/// Lower estimate of the Hausdorff distance between `S(t1)` and `S(t2)`.
///
/// Sample points of each set (its apex `−h` plus points along projected
/// sampling directions) are projected onto the other set. The direction
/// sequence is deterministic and nested in `n_dirs`, so the estimate is
/// nondecreasing in `n_dirs`. Because both sets are translates of the same
/// cone, the apex already realises the supremum.
pub fn hausdorff_estimate(set: &MovingSet, t1: f64, t2: f64, n_dirs: usize) -> Result<f64> {
    let h1 = set.check_nonempty(t1)?;
    let h2 = set.check_nonempty(t2)?;
    let d = set.dim();
    let scale = (&h1 - &h2).norm().max(1.0);
    let dirs = sample_directions(d, n_dirs);
    let one_sided = |ha: &DVector<f64>, hb: &DVector<f64>| {
        // points of K − ha, distance to K − hb
        let dist = |p: &DVector<f64>| {
            let y = p + hb;
            (set.cone.project(&y) - y).norm()
        };
        let apex = -ha;
        let mut best = dist(&apex);
        for u in &dirs {
            let g = set.cone.project(u);
            if g.norm() > 0.0 {
                best = best.max(dist(&(&apex + g * scale)));
            }
        }
        best
    };
    Ok(one_sided(&h1, &h2).max(one_sided(&h2, &h1)))
}

/// `±e_i` first, then seeded Gaussian directions.
fn sample_directions(d: usize, n: usize) -> Vec<DVector<f64>> {
    let mut out = Vec::with_capacity(n);
    for i in 0..(2 * d).min(n) {
        let mut e = DVector::zeros(d);
        e[i / 2] = if i % 2 == 0 { 1.0 } else { -1.0 };
        out.push(e);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    while out.len() < n {
        let v = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let nv = v.norm();
        if nv > 0.0 {
            out.push(v / nv);
        }
    }
    out
}

/// Data of a cone complementarity constraint
/// `K ∋ H x + J η + h(t) ⟂ η ∈ K*`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConeCpInstance {
    #[serde(with = "serde_matrix")]
    pub h_mat: DMatrix<f64>,
    #[serde(with = "serde_matrix")]
    pub j_mat: DMatrix<f64>,
    pub offset: VectorSignal,
    pub cone: PolyhedralCone,
}

impl ConeCpInstance {
    pub fn new(h_mat: DMatrix<f64>, j_mat: DMatrix<f64>, offset: VectorSignal, cone: PolyhedralCone) -> Result<Self> {
        let inst = ConeCpInstance {
            h_mat,
            j_mat,
            offset,
            cone,
        };
        inst.validate()?;
        Ok(inst)
    }

    pub fn from_set(h_mat: DMatrix<f64>, j_mat: DMatrix<f64>, set: &MovingSet) -> Result<Self> {
        Self::new(h_mat, j_mat, set.offset.clone(), set.cone.clone())
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.cone.dim();
        if self.h_mat.nrows() != d {
            return Err(Error::dim("cone CP: rows of H", d, self.h_mat.nrows()));
        }
        if self.j_mat.shape() != (d, d) {
            return Err(Error::dim("cone CP: shape of J", format!("{d}x{d}"), format!("{:?}", self.j_mat.shape())));
        }
        if self.offset.dim() != d {
            return Err(Error::dim("cone CP: offset", d, self.offset.dim()));
        }
        self.cone.validate()
    }

    pub fn dim(&self) -> usize {
        self.cone.dim()
    }

    /// Residual of a candidate multiplier at `(t, x)`.
    pub fn residual(&self, x: &DVector<f64>, t: f64, eta: &DVector<f64>) -> f64 {
        let v = &self.h_mat * x + &self.j_mat * eta;
        normal_cone_residual(&self.cone, &v, eta, &self.offset.eval(t))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(x)
    }

    fn m(r: usize, c: usize, x: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(r, c, x)
    }

    #[test]
    fn projection_examples() {
        let set = MovingSet::fixed(PolyhedralCone::orthant(2));
        assert_eq!(project_onto_set(&set, 0.0, &v(&[1.0, 2.0])).unwrap(), v(&[1.0, 2.0]));
        let set1 = MovingSet::fixed(PolyhedralCone::orthant(1));
        assert_eq!(project_onto_set(&set1, 0.0, &v(&[-1.0])).unwrap(), v(&[0.0]));
        // half-space y1 + y2 ≥ 0: closed form z − min(0, a·z)/|a|² a
        let half = MovingSet::fixed(PolyhedralCone::from_faces(m(1, 2, &[1.0, 1.0])));
        let p = project_onto_set(&half, 0.0, &v(&[-2.0, 0.0])).unwrap();
        assert!((p - v(&[-1.0, 1.0])).norm() < 1e-14);
    }

    #[test]
    fn projection_with_offset() {
        let set = MovingSet::new(PolyhedralCone::orthant(2), VectorSignal::constant(&[1.0, -1.0])).unwrap();
        // S = {z1 ≥ -1, z2 ≥ 1}
        let p = project_onto_set(&set, 0.0, &v(&[-3.0, 0.0])).unwrap();
        assert!((p - v(&[-1.0, 1.0])).norm() < 1e-14);
    }

    #[test]
    fn dykstra_matches_enumeration() {
        let r = m(3, 3, &[1.0, 0.2, 0.0, 0.0, 1.0, -0.5, 0.3, 0.3, 1.0]);
        let z = v(&[-1.0, 0.5, -2.0]);
        let a = project_active_set(&r, &z);
        let b = project_dykstra(&r, &z);
        assert!((a - b).norm() < 1e-9);
    }

    #[test]
    fn residual_examples() {
        let k1 = PolyhedralCone::orthant(1);
        let z1 = v(&[0.0]);
        assert_eq!(normal_cone_residual(&k1, &v(&[0.0]), &v(&[3.0]), &z1), 0.0);
        assert_eq!(normal_cone_residual(&k1, &v(&[1.0]), &v(&[1.0]), &z1), 1.0);
        let k2 = PolyhedralCone::orthant(2);
        assert_eq!(normal_cone_residual(&k2, &v(&[0.0, 2.0]), &v(&[5.0, 0.0]), &v(&[0.0, 0.0])), 0.0);
        let parts = normal_cone_residual_parts(&k1, &v(&[-1.0]), &v(&[0.0]), &z1);
        assert_eq!(parts.extended(1e-9), f64::INFINITY);
    }

    #[test]
    fn residual_on_general_cone_uses_dual_distance() {
        // K = {y1 ≥ 0, y1 + y2 ≥ 0}; K* = cone{(1,0), (1,1)}
        let k = PolyhedralCone::from_faces(m(2, 2, &[1.0, 0.0, 1.0, 1.0]));
        assert!(k.dual_violation(&v(&[2.0, 1.0])) < 1e-12);
        // (0, 1) is at distance 1/√2 from the ray (1,1)
        assert!((k.dual_violation(&v(&[0.0, 1.0])) - 0.5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn dual_cone_examples() {
        let d = dual_cone(&PolyhedralCone::orthant(3)).unwrap();
        assert!(d.cone.is_orthant());
        let full = dual_cone(&PolyhedralCone::from_faces(DMatrix::zeros(0, 2))).unwrap();
        assert!(full.face_form_recovered);
        // {0}: every nonzero vector violates membership
        assert!(!full.cone.contains(&v(&[1e-3, 0.0]), 1e-9));
        assert!(full.cone.contains(&v(&[0.0, 0.0]), 0.0));
        let k = PolyhedralCone::from_faces(m(2, 2, &[1.0, 0.0, 1.0, 1.0]));
        let dk = dual_cone(&k).unwrap().cone;
        let g = dk.generator_matrix().unwrap();
        assert_eq!(*g, m(2, 2, &[1.0, 1.0, 0.0, 1.0]));
        for col in g.column_iter() {
            assert!(dk.contains(&col.into_owned(), 1e-12));
        }
    }

    #[test]
    fn face_form_cap_flags_generator_only() {
        let k = PolyhedralCone::from_faces(DMatrix::identity(9, 9) + DMatrix::from_element(9, 9, 0.01));
        let d = dual_cone(&k).unwrap();
        assert!(!d.face_form_recovered);
        assert!(d.cone.face_matrix().is_none());
    }

    #[test]
    fn extreme_rays_of_half_plane() {
        let rays = extreme_rays(&m(1, 2, &[1.0, 1.0])).unwrap();
        // lineality ±(1,−1)/√2 and the ray (1,1)/√2
        assert_eq!(rays.ncols(), 3);
    }

    #[test]
    fn hausdorff_examples() {
        let same = MovingSet::fixed(PolyhedralCone::orthant(2));
        assert_eq!(hausdorff_estimate(&same, 0.0, 1.0, 8).unwrap(), 0.0);
        let ramp = MovingSet::new(
            PolyhedralCone::orthant(1),
            VectorSignal(vec![crate::signal::ScalarSignal::Ramp { slope: 1.0, start: 0.0 }]),
        )
        .unwrap();
        assert!((hausdorff_estimate(&ramp, 0.0, 1.0, 4).unwrap() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn bv_regularity_inferred() {
        let s = MovingSet::new(
            PolyhedralCone::orthant(1),
            VectorSignal(vec![crate::signal::ScalarSignal::floor(0.1, 10.0, 0.0)]),
        )
        .unwrap();
        assert_eq!(s.regularity, Regularity::RightContinuousBv);
        let mut bad = s.clone();
        bad.regularity = Regularity::AbsolutelyContinuous;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn hausdorff_of_translated_orthant() {
        let set = MovingSet::new(
            PolyhedralCone::orthant(2),
            VectorSignal(vec![
                crate::signal::ScalarSignal::Ramp { slope: 0.3, start: 0.0 },
                crate::signal::ScalarSignal::Ramp { slope: -0.4, start: 0.0 },
            ]),
        )
        .unwrap();
        // S(1) = R₊² − (0.3, −0.4); the second coordinate dominates the gap
        let mut prev = 0.0;
        for n in [1, 2, 4, 16, 64] {
            let est = hausdorff_estimate(&set, 0.0, 1.0, n).unwrap();
            assert!(est >= prev);
            prev = est;
        }
        assert!((prev - 0.4).abs() < 1e-12, "{prev}");
    }

    fn faces_strategy() -> impl Strategy<Value = DMatrix<f64>> {
        (1usize..=4, 1usize..=5).prop_flat_map(|(n, m)| {
            proptest::collection::vec(-1.0f64..1.0, m * n).prop_map(move |d| DMatrix::from_row_slice(m, n, &d))
        })
    }

    fn vec_for(n: usize, seed: u64, spread: f64) -> DVector<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DVector::from_fn(n, |_, _| rng.random_range(-spread..spread))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn normal_cone_is_monotone(r in faces_strategy(), s1 in any::<u64>(), s2 in any::<u64>(), sh in any::<u64>()) {
            let n = r.ncols();
            let cone = PolyhedralCone::from_faces(r);
            let h = vec_for(n, sh, 1.0);
            // Moreau pairs in K − h: v = P(z), η = v − z has −η ∈ N(v)
            let pair = |seed: u64| {
                let z = vec_for(n, seed, 3.0);
                let v = cone.project(&(&z + &h)) - &h;
                let eta = &v - &z;
                (v, eta)
            };
            let (v1, e1) = pair(s1);
            let (v2, e2) = pair(s2);
            prop_assert!(normal_cone_residual(&cone, &v1, &e1, &h) <= 1e-9);
            prop_assert!(normal_cone_residual(&cone, &v2, &e2, &h) <= 1e-9);
            prop_assert!((&e2 - &e1).dot(&(&v1 - &v2)) >= -1e-9);
        }

        #[test]
        fn projection_is_idempotent(r in faces_strategy(), seed in any::<u64>()) {
            let n = r.ncols();
            let h = vec_for(n, seed ^ 1, 1.0);
            let set = MovingSet::new(PolyhedralCone::from_faces(r), VectorSignal::constant(h.as_slice())).unwrap();
            let x = vec_for(n, seed, 3.0);
            let p = project_onto_set(&set, 0.0, &x).unwrap();
            let pp = project_onto_set(&set, 0.0, &p).unwrap();
            prop_assert!((&p - &pp).amax() <= 1e-9);
            prop_assert!(set.cone.membership_violation(&(&p + &h)) <= 1e-9);
        }
    }

    #[test]
    fn translate_hausdorff_bound_with_fitted_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(crate::DEFAULT_SEED);
        for _ in 0..5 {
            let n = rng.random_range(2..=3);
            let m = rng.random_range(1..=4);
            let r = DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0));
            let cone = PolyhedralCone::from_faces(r);
            let pair_ratio = |rng: &mut ChaCha8Rng| {
                let h1: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
                let h2: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
                let sig = VectorSignal(
                    (0..n)
                        .map(|i| crate::signal::ScalarSignal::PiecewiseLinear {
                            points: vec![[0.0, h1[i]], [1.0, h2[i]]],
                        })
                        .collect(),
                );
                let set = MovingSet::new(cone.clone(), sig).unwrap();
                let dh = (DVector::from_vec(h1) - DVector::from_vec(h2)).norm();
                (hausdorff_estimate(&set, 0.0, 1.0, 32).unwrap(), dh)
            };
            let mut c_k = 0.0f64;
            for _ in 0..200 {
                let (est, dh) = pair_ratio(&mut rng);
                c_k = c_k.max(est / dh);
            }
            // the constant of a translated cone never exceeds one
            assert!(c_k <= 1.0 + 1e-12, "{c_k}");
            let c_k = 1.05 * c_k;
            for _ in 0..100 {
                let (est, dh) = pair_ratio(&mut rng);
                assert!(est <= c_k * dh + 1e-12, "{est} > {c_k} * {dh}");
            }
        }
    }

    #[test]
    fn dual_generators_pair_nonnegatively() {
        let mut rng = ChaCha8Rng::seed_from_u64(crate::DEFAULT_SEED);
        let mut pairs = 0;
        while pairs < 1000 {
            let n = rng.random_range(1..=4);
            let m = rng.random_range(1..=5);
            let r = DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0));
            let cone = PolyhedralCone::from_faces(r);
            let gens = cone.generators().unwrap().into_owned();
            let dual = dual_cone(&cone).unwrap().cone;
            let dgens = dual.generators().unwrap().into_owned();
            for _ in 0..20 {
                if gens.ncols() == 0 || dgens.ncols() == 0 {
                    break;
                }
                let g = gens.column(rng.random_range(0..gens.ncols()));
                let e = dgens.column(rng.random_range(0..dgens.ncols()));
                assert!(g.dot(&e) >= -1e-9);
                pairs += 1;
            }
            // K** ⊇ K: every generator of K lies in the dual of the dual
            let bidual = dual_cone(&dual).unwrap().cone;
            for g in gens.column_iter() {
                assert!(bidual.membership_violation(&g.into_owned()) <= 1e-9);
            }
        }
    }
}
