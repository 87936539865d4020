//! Clarke subdifferential machinery on the manifold: minimum-norm point of
//! the projected-gradient hull, criticality, the two nondegeneracy conditions,
//! quadratic index and stratified handle classification.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::csfun::{CsFunction, IndexSet, Selector};
use crate::error::{Error, Result};
use crate::geometry::{null_space_basis, numerical_rank, Manifold, TangentBasis};

/// Criticality tolerance for polished points.
pub const DEFAULT_CRIT_TOL: f64 = 1e-8;
/// Criticality tolerance for raw sampled candidates.
pub const RAW_CRIT_TOL: f64 = 1e-5;
/// Eigenvalues of the restricted Hessian below this magnitude mean the
/// critical point is degenerate rather than a sign to be rounded.
pub const DEFAULT_ND2_TOL: f64 = 1e-7;
/// A simplex weight below this is reported as a boundary multiplier.
pub const BOUNDARY_LAMBDA_TOL: f64 = 1e-10;

/// Convex weights over an active index set.
#[derive(Debug, Clone, Serialize)]
pub struct SimplexWeights {
    pub indices: IndexSet,
    pub lambda: Vec<f64>,
}

impl SimplexWeights {
    pub fn new(indices: IndexSet, lambda: Vec<f64>) -> Result<Self> {
        if indices.len() != lambda.len() {
            return Err(Error::Precondition(
                "weight vector length differs from index set".into(),
            ));
        }
        let sum: f64 = lambda.iter().sum();
        if (sum - 1.0).abs() > 1e-10 {
            return Err(Error::InternalConsistency(format!(
                "simplex weights sum to {sum}, expected 1"
            )));
        }
        if lambda.iter().any(|&l| l < -1e-12) {
            return Err(Error::InternalConsistency(
                "negative simplex weight".into(),
            ));
        }
        Ok(SimplexWeights { indices, lambda })
    }

    /// Weight attached to selection `i`, zero when `i` is not in the set.
    pub fn weight_of(&self, i: usize) -> f64 {
        self.indices
            .iter()
            .position(|j| j == i)
            .map_or(0.0, |pos| self.lambda[pos])
    }
}

/// Minimizer of `|sum lambda_i v_i|` over the simplex.
#[derive(Debug, Clone)]
pub struct MinNormPoint {
    /// Weights over the input vectors (zeros off the optimal support).
    pub lambda: DVector<f64>,
    /// The combination `sum lambda_i v_i`.
    pub point: DVector<f64>,
    pub norm: f64,
    /// Wolfe optimality gap `p.p - min_i v_i.p`, clamped at zero.
    pub optimality_gap: f64,
}

/// Minimum-norm point in the convex hull of `vectors`.
///
/// Solved exactly by enumerating supports: for each subset the equality-
/// constrained minimizer over its affine hull is a linear solve, and the
/// global optimum is the best feasible one. Exponential in the number of
/// vectors, which is at most the number of selections (three in every
/// shipped scenario).
pub fn min_norm_in_hull(vectors: &[DVector<f64>]) -> Result<MinNormPoint> {
    if vectors.is_empty() {
        return Err(Error::Precondition("empty vector list".into()));
    }
    let dim = vectors[0].len();
    if vectors.iter().any(|v| v.len() != dim) {
        return Err(Error::Precondition("vectors of mixed dimension".into()));
    }
    if vectors
        .iter()
        .any(|v| v.iter().any(|x| !x.is_finite()))
    {
        return Err(Error::Precondition("non-finite vector entries".into()));
    }
    let k = vectors.len();
    if k > 20 {
        return Err(Error::Precondition(format!(
            "support enumeration over {k} vectors is infeasible"
        )));
    }
    let mut best: Option<(DVector<f64>, DVector<f64>, f64)> = None;
    for mask in 1u32..(1 << k) {
        let support: Vec<usize> = (0..k).filter(|i| mask & (1 << i) != 0).collect();
        let s = support.len();
        // Minimize |V (lambda0 + N z)| with lambda0 uniform on the support and
        // N spanning the zero-sum directions, so the sum constraint holds by
        // construction.
        let mut v_s = DMatrix::zeros(dim, s);
        for (col, &i) in support.iter().enumerate() {
            v_s.column_mut(col).copy_from(&vectors[i]);
        }
        let lambda0 = DVector::from_element(s, 1.0 / s as f64);
        let lambda_s = if s == 1 {
            lambda0
        } else {
            let mut n_mat = DMatrix::zeros(s, s - 1);
            for col in 0..s - 1 {
                n_mat[(col, col)] = 1.0;
                n_mat[(col + 1, col)] = -1.0;
            }
            let a = &v_s * &n_mat;
            let b = -(&v_s * &lambda0);
            let z = a
                .svd(true, true)
                .solve(&b, 1e-13)
                .map_err(|e| Error::InternalConsistency(e.to_string()))?;
            lambda0 + n_mat * z
        };
        if lambda_s.iter().any(|&l| l < -1e-12) {
            continue;
        }
        let point = &v_s * &lambda_s;
        let norm = point.norm();
        if best.as_ref().is_none_or(|(_, _, n)| norm < *n) {
            let mut lambda = DVector::zeros(k);
            for (col, &i) in support.iter().enumerate() {
                lambda[i] = lambda_s[col].max(0.0);
            }
            best = Some((lambda, point, norm));
        }
    }
    let (lambda, point, norm) =
        best.ok_or_else(|| Error::InternalConsistency("no feasible support".into()))?;
    let worst_inner = vectors
        .iter()
        .map(|v| v.dot(&point))
        .fold(f64::INFINITY, f64::min);
    let optimality_gap = (point.dot(&point) - worst_inner).max(0.0);
    Ok(MinNormPoint {
        lambda,
        point,
        norm,
        optimality_gap,
    })
}

/// Outcome of the intrinsic criticality test at a point.
#[derive(Debug, Clone)]
pub struct CriticalityVerdict {
    /// `|sum lambda_i P grad f_i|` at the optimum, `P` the tangent projection.
    pub min_norm_value: f64,
    pub weights: SimplexWeights,
    /// Constraint multipliers recovered by least squares from
    /// `sum lambda_i grad f_i + sum mu_k grad g_k = 0`.
    pub multipliers: DVector<f64>,
    pub is_critical: bool,
    pub optimality_gap: f64,
    /// Some weight sits on the simplex boundary (below 1e-10); the minimizing
    /// weights may then not be unique.
    pub boundary_multiplier: bool,
}

/// Clarke criticality of `f` on `manifold` at the on-manifold point `x`:
/// whether zero lies in the convex hull of the tangentially projected active
/// gradients, within `crit_tol`.
pub fn criticality(
    f: &CsFunction,
    manifold: &Manifold,
    x: &DVector<f64>,
    crit_tol: f64,
) -> Result<CriticalityVerdict> {
    let active = f.active_set(x)?;
    criticality_for_subset(f, manifold, x, &active.indices, crit_tol)
}

/// Criticality with the active set supplied by the caller (the search knows
/// which subset it is solving for).
pub fn criticality_for_subset(
    f: &CsFunction,
    manifold: &Manifold,
    x: &DVector<f64>,
    j: &IndexSet,
    crit_tol: f64,
) -> Result<CriticalityVerdict> {
    let basis = manifold.tangent_basis(x)?;
    let projected: Vec<DVector<f64>> = j
        .iter()
        .map(|i| Ok(basis.coords(&f.selection(i).gradient(x)?)))
        .collect::<Result<_>>()?;
    let mnp = min_norm_in_hull(&projected)?;
    let lambda: Vec<f64> = mnp.lambda.iter().cloned().collect();
    let weights = SimplexWeights::new(j.clone(), lambda)?;

    // Recover mu from the ambient stationarity equation.
    let ambient_combo = combination_of_gradients(f, x, &weights)?;
    let jac_t = manifold.constraint_jacobian(x)?.transpose();
    let multipliers = jac_t
        .clone()
        .svd(true, true)
        .solve(&(-&ambient_combo), 1e-13)
        .map_err(|e| Error::InternalConsistency(e.to_string()))?;

    let boundary_multiplier =
        weights.indices.len() > 1 && weights.lambda.iter().any(|&l| l < BOUNDARY_LAMBDA_TOL);
    Ok(CriticalityVerdict {
        min_norm_value: mnp.norm,
        weights,
        multipliers,
        is_critical: mnp.norm <= crit_tol,
        optimality_gap: mnp.optimality_gap,
        boundary_multiplier,
    })
}

/// `sum lambda_i grad f_i(x)` in ambient coordinates.
pub fn combination_of_gradients(
    f: &CsFunction,
    x: &DVector<f64>,
    weights: &SimplexWeights,
) -> Result<DVector<f64>> {
    let mut combo = DVector::zeros(f.ambient_dim());
    for (pos, i) in weights.indices.iter().enumerate() {
        combo += weights.lambda[pos] * f.selection(i).gradient(x)?;
    }
    Ok(combo)
}

/// One leave-one-out failure of ND1.
#[derive(Debug, Clone, Serialize)]
pub struct Nd1Failure {
    /// The index that was left out.
    pub left_out: usize,
    pub rank: usize,
    pub expected_rank: usize,
}

/// ND1 with witnesses: for each `i` in `J`, the projected gradients of the
/// remaining active selections together with the constraint gradients must
/// have full column rank.
#[derive(Debug, Clone, Serialize)]
pub struct Nd1Report {
    pub ok: bool,
    pub failures: Vec<Nd1Failure>,
}

pub fn check_nd1(
    f: &CsFunction,
    manifold: &Manifold,
    x: &DVector<f64>,
    j: &IndexSet,
) -> Result<Nd1Report> {
    let basis = manifold.tangent_basis(x)?;
    let jac = manifold.constraint_jacobian(x)?;
    let c = manifold.num_constraints();
    let n = manifold.ambient_dim();
    let mut failures = Vec::new();
    for left_out in j.iter() {
        let kept: Vec<usize> = j.iter().filter(|&i| i != left_out).collect();
        let mut cols = DMatrix::zeros(n, kept.len() + c);
        for (col, &i) in kept.iter().enumerate() {
            let grad = f.selection(i).gradient(x)?;
            cols.column_mut(col).copy_from(&basis.project(&grad));
        }
        for k in 0..c {
            cols.column_mut(kept.len() + k)
                .copy_from(&jac.row(k).transpose());
        }
        let expected = kept.len() + c;
        let rank = numerical_rank(&cols, 1e-8);
        if rank != expected {
            failures.push(Nd1Failure {
                left_out,
                rank,
                expected_rank: expected,
            });
        }
    }
    Ok(Nd1Report {
        ok: failures.is_empty(),
        failures,
    })
}

/// Nondegeneracy of a critical point and the quadratic index when defined.
#[derive(Debug, Clone, Serialize)]
pub struct NondegeneracyReport {
    pub nd1_ok: bool,
    pub nd2_ok: bool,
    /// Present exactly when both conditions hold.
    pub quadratic_index: Option<usize>,
    /// Eigenvalues of the restricted Lagrangian Hessian, ascending.
    pub restricted_hessian_eigenvalues: Vec<f64>,
    /// Dimension of the common kernel of the active differentials inside the
    /// tangent space.
    pub hat_tangent_dim: usize,
    pub nd1_failures: Vec<Nd1Failure>,
}

/// Ambient Hessian of the Lagrangian `sum lambda_i f_i + sum mu_k g_k`.
///
/// The constraint curvature terms are what make the intrinsic second-order
/// theory come out right for an embedded level-set manifold.
pub fn lagrangian_hessian(
    f: &CsFunction,
    manifold: &Manifold,
    x: &DVector<f64>,
    weights: &SimplexWeights,
    multipliers: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    let n = manifold.ambient_dim();
    let mut h = DMatrix::zeros(n, n);
    for (pos, i) in weights.indices.iter().enumerate() {
        h += weights.lambda[pos] * f.selection(i).jet2(x)?.hessian;
    }
    for (k, g) in manifold.constraints().iter().enumerate() {
        h += multipliers[k] * g.jet2(x)?.hessian;
    }
    Ok(h)
}

/// Orthonormal basis of the restricted space: tangent vectors annihilated by
/// every active gradient difference. At a critical point this equals the
/// common kernel of the active differentials on the manifold.
pub fn hat_tangent_basis(
    f: &CsFunction,
    manifold: &Manifold,
    x: &DVector<f64>,
    j: &IndexSet,
) -> Result<TangentBasis> {
    let c = manifold.num_constraints();
    let n = manifold.ambient_dim();
    let mut rows = DMatrix::zeros(c + j.len().saturating_sub(1), n);
    let jac = manifold.constraint_jacobian(x)?;
    rows.view_mut((0, 0), (c, n)).copy_from(&jac);
    let indices: Vec<usize> = j.iter().collect();
    if indices.len() > 1 {
        let g0 = f.selection(indices[0]).gradient(x)?;
        for (row, &i) in indices[1..].iter().enumerate() {
            let d = f.selection(i).gradient(x)? - &g0;
            rows.row_mut(c + row).copy_from(&d.transpose());
        }
    }
    let basis = null_space_basis(&rows, rows.nrows()).ok_or_else(|| {
        Error::RankDeficient(format!(
            "active gradient differences with constraints lose rank at stratum {j}"
        ))
    })?;
    Ok(TangentBasis {
        point: x.clone(),
        basis,
    })
}

/// Restricted second-order analysis at a critical point (ND2 and the
/// quadratic index). Errors when the verdict is not critical or ND1 fails.
pub fn quadratic_index(
    f: &CsFunction,
    manifold: &Manifold,
    x: &DVector<f64>,
    verdict: &CriticalityVerdict,
    nd2_tol: f64,
) -> Result<NondegeneracyReport> {
    if !verdict.is_critical {
        return Err(Error::Precondition(
            "quadratic index requested at a non-critical point".into(),
        ));
    }
    let nd1 = check_nd1(f, manifold, x, &verdict.weights.indices)?;
    if !nd1.ok {
        return Err(Error::Precondition(format!(
            "ND1 fails at the point ({} leave-one-out sets lose rank)",
            nd1.failures.len()
        )));
    }
    nondegeneracy_with_nd1(f, manifold, x, verdict, nd2_tol, nd1)
}

/// Like [`quadratic_index`] but never errors on nondegeneracy failure: the
/// report carries `nd1_ok`/`nd2_ok` flags instead, which is what the search
/// pipeline attaches to candidate records.
pub fn nondegeneracy_report(
    f: &CsFunction,
    manifold: &Manifold,
    x: &DVector<f64>,
    verdict: &CriticalityVerdict,
    nd2_tol: f64,
) -> Result<NondegeneracyReport> {
    let nd1 = check_nd1(f, manifold, x, &verdict.weights.indices)?;
    if !nd1.ok {
        return Ok(NondegeneracyReport {
            nd1_ok: false,
            nd2_ok: false,
            quadratic_index: None,
            restricted_hessian_eigenvalues: Vec::new(),
            hat_tangent_dim: 0,
            nd1_failures: nd1.failures,
        });
    }
    nondegeneracy_with_nd1(f, manifold, x, verdict, nd2_tol, nd1)
}

fn nondegeneracy_with_nd1(
    f: &CsFunction,
    manifold: &Manifold,
    x: &DVector<f64>,
    verdict: &CriticalityVerdict,
    nd2_tol: f64,
    nd1: Nd1Report,
) -> Result<NondegeneracyReport> {
    let hat = hat_tangent_basis(f, manifold, x, &verdict.weights.indices)?;
    let d = hat.dim();
    if d == 0 {
        // Zero-dimensional restricted space: vacuously regular, index zero.
        return Ok(NondegeneracyReport {
            nd1_ok: true,
            nd2_ok: true,
            quadratic_index: Some(0),
            restricted_hessian_eigenvalues: Vec::new(),
            hat_tangent_dim: 0,
            nd1_failures: nd1.failures,
        });
    }
    let h = lagrangian_hessian(f, manifold, x, &verdict.weights, &verdict.multipliers)?;
    let mut restricted = hat.basis.transpose() * h * &hat.basis;
    let sym = 0.5 * (&restricted + restricted.transpose());
    restricted = sym;
    let mut eigenvalues: Vec<f64> = restricted
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .cloned()
        .collect();
    eigenvalues.sort_by(f64::total_cmp);
    let nd2_ok = eigenvalues.iter().all(|e| e.abs() > nd2_tol);
    let quadratic_index = if nd2_ok {
        Some(eigenvalues.iter().filter(|&&e| e < 0.0).count())
    } else {
        None
    };
    Ok(NondegeneracyReport {
        nd1_ok: true,
        nd2_ok,
        quadratic_index,
        restricted_hessian_eigenvalues: eigenvalues,
        hat_tangent_dim: d,
        nd1_failures: nd1.failures,
    })
}

/// Stratified handle kind, named by how many strata the handle meets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum HandleKind {
    Smooth,
    Bisected,
    Trisected,
}

impl HandleKind {
    pub fn from_active_count(count: usize) -> Result<HandleKind> {
        match count {
            1 => Ok(HandleKind::Smooth),
            2 => Ok(HandleKind::Bisected),
            3 => Ok(HandleKind::Trisected),
            other => Err(Error::Precondition(format!(
                "handle classification covers 1..3 active selections, got {other}"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            HandleKind::Smooth => "smooth",
            HandleKind::Bisected => "bisected",
            HandleKind::Trisected => "trisected",
        }
    }
}

/// Handle attached at a nondegenerate critical point.
#[derive(Debug, Clone, Serialize)]
pub struct HandleClass {
    pub kind: HandleKind,
    /// Dimension of the attached handle's core.
    pub total_index: usize,
    /// Number of active selections minus one.
    pub k_param: usize,
    /// Quadratic index of the restricted Hessian.
    pub m_param: usize,
}

/// Classify the handle attached at a nondegenerate critical point.
///
/// For the max selector the total index equals the quadratic index; for the
/// min selector the normal form contributes an extra `k` descending
/// directions. On a 4-manifold with max selector, indices above 3 (bisected)
/// or 2 (trisected) are impossible, so exceeding them means an upstream
/// misclassification and is reported as an internal-consistency error.
pub fn classify_handle(
    selector: Selector,
    manifold_dim: usize,
    j: &IndexSet,
    report: &NondegeneracyReport,
) -> Result<HandleClass> {
    let m_param = report.quadratic_index.ok_or_else(|| {
        Error::Precondition("handle classification needs a nondegenerate critical point".into())
    })?;
    let kind = HandleKind::from_active_count(j.len())?;
    let k_param = j.len() - 1;
    let total_index = match selector {
        Selector::Max => m_param,
        Selector::Min => m_param + k_param,
    };
    if manifold_dim == 4 && selector == Selector::Max {
        let bound = match kind {
            HandleKind::Smooth => 4,
            HandleKind::Bisected => 3,
            HandleKind::Trisected => 2,
        };
        if total_index > bound {
            return Err(Error::InternalConsistency(format!(
                "{} handle with total index {total_index} exceeds bound {bound}",
                kind.name()
            )));
        }
    }
    Ok(HandleClass {
        kind,
        total_index,
        k_param,
        m_param,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::SmoothMap;

    fn v(coords: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(coords)
    }

    fn sphere(dim: usize) -> Manifold {
        let terms: Vec<String> = (1..=dim).map(|i| format!("x{i}^2")).collect();
        let g = SmoothMap::parse(&format!("{}-1", terms.join("+")), dim).unwrap();
        Manifold::new(dim, vec![g], vec![-1.2; dim], vec![1.2; dim]).unwrap()
    }

    fn coords_cs(dim: usize, m: usize, selector: Selector) -> CsFunction {
        let maps = (1..=m)
            .map(|i| SmoothMap::parse(&format!("x{i}"), dim).unwrap())
            .collect();
        CsFunction::new(maps, selector).unwrap()
    }

    #[test]
    fn singleton_hull() {
        let got = min_norm_in_hull(&[v(&[1.0, 0.0])]).unwrap();
        assert_eq!(got.lambda, v(&[1.0]));
        assert!((got.norm - 1.0).abs() < 1e-14);
    }

    #[test]
    fn symmetric_pair_contains_origin() {
        let got = min_norm_in_hull(&[v(&[1.0, 0.0]), v(&[-1.0, 0.0])]).unwrap();
        assert!(got.norm < 1e-14);
        assert!((got.lambda[0] - 0.5).abs() < 1e-12);
        assert!((got.lambda[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn orthogonal_pair_midpoint() {
        let got = min_norm_in_hull(&[v(&[1.0, 0.0]), v(&[0.0, 1.0])]).unwrap();
        assert!((got.lambda[0] - 0.5).abs() < 1e-12);
        assert!((got.lambda[1] - 0.5).abs() < 1e-12);
        assert!((got.point - v(&[0.5, 0.5])).norm() < 1e-12);
        assert!((got.norm - 0.5f64.sqrt()).abs() < 1e-12);
        assert!(got.optimality_gap < 1e-12);
    }

    #[test]
    fn trisected_point_is_critical_with_uniform_weights() {
        let m = sphere(5);
        let f = coords_cs(5, 3, Selector::Max);
        let s3 = (1.0f64 / 3.0).sqrt();
        let x = v(&[-s3, -s3, -s3, 0.0, 0.0]);
        let x = m.project(&x).unwrap();
        let verdict = criticality(&f, &m, &x, DEFAULT_CRIT_TOL).unwrap();
        assert!(verdict.is_critical, "min_norm = {}", verdict.min_norm_value);
        for l in &verdict.weights.lambda {
            assert!((l - 1.0 / 3.0).abs() < 1e-9, "lambda = {:?}", verdict.weights.lambda);
        }
        assert!(!verdict.boundary_multiplier);
    }

    #[test]
    fn pole_is_critical_with_unit_weight_and_half_multiplier() {
        let m = sphere(5);
        let f = coords_cs(5, 3, Selector::Max);
        let x = v(&[1.0, 0.0, 0.0, 0.0, 0.0]);
        let verdict = criticality(&f, &m, &x, DEFAULT_CRIT_TOL).unwrap();
        assert!(verdict.is_critical);
        assert_eq!(verdict.weights.indices, IndexSet::new(vec![1]));
        assert_eq!(verdict.weights.lambda, vec![1.0]);
        // grad f1 + mu * grad g = e1 + mu * 2 e1 = 0 at the pole.
        assert!((verdict.multipliers[0] + 0.5).abs() < 1e-10);
    }

    #[test]
    fn generic_point_is_not_critical() {
        let m = sphere(5);
        let f = coords_cs(5, 3, Selector::Max);
        let x = m.project(&v(&[0.9, 0.1, 0.1, 0.2, 0.2])).unwrap();
        let verdict = criticality(&f, &m, &x, DEFAULT_CRIT_TOL).unwrap();
        assert!(!verdict.is_critical);
        assert!(verdict.min_norm_value > 0.01);
    }

    #[test]
    fn min_norm_recomputable_from_verdict_fields() {
        let m = sphere(5);
        let f = coords_cs(5, 3, Selector::Max);
        let x = m.project(&v(&[0.7, 0.65, 0.2, 0.1, 0.1])).unwrap();
        let verdict = criticality(&f, &m, &x, DEFAULT_CRIT_TOL).unwrap();
        let basis = m.tangent_basis(&x).unwrap();
        let combo = combination_of_gradients(&f, &x, &verdict.weights).unwrap();
        let recomputed = basis.coords(&combo).norm();
        assert!((recomputed - verdict.min_norm_value).abs() < 1e-9);
    }

    #[test]
    fn nd1_holds_on_triple_stratum_and_fails_on_duplicates() {
        let m = sphere(5);
        let f = coords_cs(5, 3, Selector::Max);
        let s3 = (1.0f64 / 3.0).sqrt();
        let x = m.project(&v(&[-s3, -s3, -s3, 0.0, 0.0])).unwrap();
        let j = IndexSet::new(vec![1, 2, 3]);
        assert!(check_nd1(&f, &m, &x, &j).unwrap().ok);

        // Duplicate selections: at the critical point e1 both projected
        // gradients vanish, so every leave-one-out set loses rank.
        let dup = CsFunction::new(
            vec![
                SmoothMap::parse("x1", 5).unwrap(),
                SmoothMap::parse("x1", 5).unwrap(),
            ],
            Selector::Max,
        )
        .unwrap();
        let pole = v(&[1.0, 0.0, 0.0, 0.0, 0.0]);
        let j2 = IndexSet::new(vec![1, 2]);
        let report = check_nd1(&dup, &m, &pole, &j2).unwrap();
        assert!(!report.ok);
        assert_eq!(report.failures.len(), 2);
    }

    #[test]
    fn nd1_vacuous_for_single_active_selection() {
        let m = sphere(5);
        let f = coords_cs(5, 3, Selector::Max);
        let x = v(&[1.0, 0.0, 0.0, 0.0, 0.0]);
        assert!(check_nd1(&f, &m, &x, &IndexSet::new(vec![1])).unwrap().ok);
    }

    #[test]
    fn quadratic_indices_on_s4_fixture() {
        let m = sphere(5);
        let f = coords_cs(5, 3, Selector::Max);
        let s3 = (1.0f64 / 3.0).sqrt();
        let r2 = 0.5f64.sqrt();
        let cases: [(Vec<f64>, usize, usize); 4] = [
            (vec![-s3, -s3, -s3, 0.0, 0.0], 2, 0),
            (vec![s3, s3, s3, 0.0, 0.0], 2, 2),
            (vec![r2, r2, 0.0, 0.0, 0.0], 3, 3),
            (vec![1.0, 0.0, 0.0, 0.0, 0.0], 4, 4),
        ];
        for (coords, hat_dim, index) in cases {
            let x = m.project(&v(&coords)).unwrap();
            let verdict = criticality(&f, &m, &x, DEFAULT_CRIT_TOL).unwrap();
            assert!(verdict.is_critical, "{coords:?}");
            let report = quadratic_index(&f, &m, &x, &verdict, DEFAULT_ND2_TOL).unwrap();
            assert_eq!(report.hat_tangent_dim, hat_dim, "{coords:?}");
            assert!(report.nd2_ok, "{coords:?}: {:?}", report.restricted_hessian_eigenvalues);
            assert_eq!(report.quadratic_index, Some(index), "{coords:?}");
        }
    }

    #[test]
    fn degenerate_torus_point_fails_nd2() {
        // max{x1^2+x2^2, x3^2+x4^2} on S^3: every point of the half-level
        // torus is critical with a singular restricted Hessian.
        let m = sphere(4);
        let f = CsFunction::new(
            vec![
                SmoothMap::parse("x1^2+x2^2", 4).unwrap(),
                SmoothMap::parse("x3^2+x4^2", 4).unwrap(),
            ],
            Selector::Max,
        )
        .unwrap();
        let h = 0.5f64.sqrt();
        let x = v(&[h, 0.0, h, 0.0]);
        let verdict = criticality(&f, &m, &x, DEFAULT_CRIT_TOL).unwrap();
        assert!(verdict.is_critical);
        let report = nondegeneracy_report(&f, &m, &x, &verdict, DEFAULT_ND2_TOL).unwrap();
        assert!(report.nd1_ok);
        assert!(!report.nd2_ok);
        assert_eq!(report.quadratic_index, None);
    }

    #[test]
    fn quadratic_index_rejects_noncritical_input() {
        let m = sphere(5);
        let f = coords_cs(5, 3, Selector::Max);
        let x = m.project(&v(&[0.9, 0.1, 0.1, 0.2, 0.2])).unwrap();
        let verdict = criticality(&f, &m, &x, DEFAULT_CRIT_TOL).unwrap();
        assert!(quadratic_index(&f, &m, &x, &verdict, DEFAULT_ND2_TOL).is_err());
    }

    #[test]
    fn handle_classes_follow_selector_rule() {
        let report = |hat: usize, index: usize| NondegeneracyReport {
            nd1_ok: true,
            nd2_ok: true,
            quadratic_index: Some(index),
            restricted_hessian_eigenvalues: vec![0.5; hat],
            hat_tangent_dim: hat,
            nd1_failures: Vec::new(),
        };
        let tri = classify_handle(
            Selector::Max,
            4,
            &IndexSet::new(vec![1, 2, 3]),
            &report(2, 0),
        )
        .unwrap();
        assert_eq!(tri.kind, HandleKind::Trisected);
        assert_eq!(tri.total_index, 0);

        let bi = classify_handle(
            Selector::Max,
            4,
            &IndexSet::new(vec![1, 2]),
            &report(3, 3),
        )
        .unwrap();
        assert_eq!(bi.kind, HandleKind::Bisected);
        assert_eq!(bi.total_index, 3);

        // Min selector adds k descending directions.
        let dual = classify_handle(
            Selector::Min,
            4,
            &IndexSet::new(vec![1, 2, 3]),
            &report(2, 0),
        )
        .unwrap();
        assert_eq!(dual.total_index, 2);
        assert_eq!(dual.k_param, 2);
        assert_eq!(dual.m_param, 0);
    }

    #[test]
    fn handle_bound_violation_is_internal_error() {
        let report = NondegeneracyReport {
            nd1_ok: true,
            nd2_ok: true,
            quadratic_index: Some(3),
            restricted_hessian_eigenvalues: vec![-1.0; 3],
            hat_tangent_dim: 3,
            nd1_failures: Vec::new(),
        };
        let err = classify_handle(Selector::Max, 4, &IndexSet::new(vec![1, 2, 3]), &report)
            .unwrap_err();
        assert!(matches!(err, Error::InternalConsistency(_)));
    }

    #[test]
    fn scaling_selections_preserves_criticality() {
        let m = sphere(5);
        let scaled: Vec<SmoothMap> = (1..=3)
            .map(|i| SmoothMap::parse(&format!("7.5*x{i}"), 5).unwrap())
            .collect();
        let f = CsFunction::new(scaled, Selector::Max).unwrap();
        let s3 = (1.0f64 / 3.0).sqrt();
        let x = m.project(&v(&[-s3, -s3, -s3, 0.0, 0.0])).unwrap();
        let verdict = criticality(&f, &m, &x, DEFAULT_CRIT_TOL).unwrap();
        assert!(verdict.is_critical);
        for l in &verdict.weights.lambda {
            assert!((l - 1.0 / 3.0).abs() < 1e-9);
        }
    }
}
