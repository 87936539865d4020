//! Constraint-defined manifolds `M = {x : g_1(x) = ... = g_c(x) = 0}` in
//! ambient Euclidean space: Gauss-Newton projection, orthonormal tangent
//! bases, and deterministic box-sample-project point sampling.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::expr::SmoothMap;

/// Default residual tolerance for a point to count as on-manifold.
pub const DEFAULT_ON_MANIFOLD_TOL: f64 = 1e-10;

/// Relative singular-value threshold below which a constraint Jacobian is
/// treated as rank-deficient.
const RANK_TOL: f64 = 1e-10;

/// Derive an independent RNG for (`seed`, `stream`, `index`).
///
/// All randomness in the crate flows through this splitter: a module draws
/// stream `stream` of the scenario seed, and each independent task within the
/// module takes its own `index`. Work can therefore be sharded across workers
/// without changing any outcome.
pub fn rng_stream(seed: u64, stream: &str, index: u64) -> ChaCha8Rng {
    // FNV-1a over the stream label, then mixed with seed and index.
    let mut h: u64 = 0xcbf29ce484222325;
    for b in stream.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    let mut rng_seed = [0u8; 32];
    rng_seed[0..8].copy_from_slice(&seed.to_le_bytes());
    rng_seed[8..16].copy_from_slice(&h.to_le_bytes());
    rng_seed[16..24].copy_from_slice(&index.to_le_bytes());
    ChaCha8Rng::from_seed(rng_seed)
}

/// Orthonormal basis of the tangent space at a point of the manifold.
#[derive(Debug, Clone)]
pub struct TangentBasis {
    pub point: DVector<f64>,
    /// Columns are pairwise orthonormal and orthogonal to every constraint
    /// gradient; there are `n - c` of them.
    pub basis: DMatrix<f64>,
}

impl TangentBasis {
    /// Project an ambient vector onto the tangent space (ambient coordinates).
    pub fn project(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.basis * (self.basis.transpose() * v)
    }

    /// Coordinates of the tangential part of `v` in this basis.
    pub fn coords(&self, v: &DVector<f64>) -> DVector<f64> {
        self.basis.transpose() * v
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }
}

/// A level-set manifold: ambient dimension, constraint fields and a bounding
/// box used for sampling. Immutable after construction.
#[derive(Debug, Clone)]
pub struct Manifold {
    dim: usize,
    constraints: Vec<SmoothMap>,
    lower: DVector<f64>,
    upper: DVector<f64>,
    on_manifold_tol: f64,
    max_project_iter: usize,
}

impl Manifold {
    pub fn new(
        dim: usize,
        constraints: Vec<SmoothMap>,
        lower: Vec<f64>,
        upper: Vec<f64>,
    ) -> Result<Self> {
        if constraints.is_empty() || constraints.len() >= dim {
            return Err(Error::Scenario(format!(
                "need 1..n constraints, have {} with ambient dimension {dim}",
                constraints.len()
            )));
        }
        if constraints.iter().any(|g| g.dim() != dim) {
            return Err(Error::Scenario(
                "constraint dimension does not match ambient dimension".into(),
            ));
        }
        if lower.len() != dim || upper.len() != dim {
            return Err(Error::Scenario("bounding box dimension mismatch".into()));
        }
        if lower.iter().zip(&upper).any(|(lo, hi)| lo >= hi) {
            return Err(Error::Scenario(
                "bounding box must have lower < upper in every coordinate".into(),
            ));
        }
        Ok(Manifold {
            dim,
            constraints,
            lower: DVector::from_vec(lower),
            upper: DVector::from_vec(upper),
            on_manifold_tol: DEFAULT_ON_MANIFOLD_TOL,
            max_project_iter: 50,
        })
    }

    pub fn with_tolerance(mut self, tol: f64) -> Self {
        self.on_manifold_tol = tol;
        self
    }

    pub fn ambient_dim(&self) -> usize {
        self.dim
    }

    /// Intrinsic dimension `n - c`.
    pub fn manifold_dim(&self) -> usize {
        self.dim - self.constraints.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.constraints.len()
    }

    pub fn constraints(&self) -> &[SmoothMap] {
        &self.constraints
    }

    pub fn on_manifold_tol(&self) -> f64 {
        self.on_manifold_tol
    }

    pub fn bounds(&self) -> (&DVector<f64>, &DVector<f64>) {
        (&self.lower, &self.upper)
    }

    /// Largest constraint residual at `x`.
    pub fn residual(&self, x: &DVector<f64>) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for g in &self.constraints {
            worst = worst.max(g.value(x)?.abs());
        }
        Ok(worst)
    }

    pub fn is_on_manifold(&self, x: &DVector<f64>) -> Result<bool> {
        Ok(self.residual(x)? <= self.on_manifold_tol)
    }

    /// Stacked constraint Jacobian, `c x n`, rows are gradients.
    pub fn constraint_jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        jacobian_of(&self.constraints, x)
    }

    /// Project `x0` onto the manifold by Gauss-Newton on `g(x) = 0`.
    pub fn project(&self, x0: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_within_double_box(x0)?;
        gauss_newton_project(
            &self.constraints,
            &[],
            x0,
            self.on_manifold_tol,
            self.max_project_iter,
        )
    }

    /// Project onto the intersection of the manifold with extra level
    /// constraints (each `extra` map driven to zero alongside `g`).
    pub fn project_with(&self, extra: &[SmoothMap], x0: &DVector<f64>) -> Result<DVector<f64>> {
        gauss_newton_project(
            &self.constraints,
            extra,
            x0,
            self.on_manifold_tol,
            self.max_project_iter,
        )
    }

    /// Orthonormal basis of the null space of the constraint Jacobian at an
    /// on-manifold point.
    pub fn tangent_basis(&self, x: &DVector<f64>) -> Result<TangentBasis> {
        if !self.is_on_manifold(x)? {
            return Err(Error::Precondition(format!(
                "tangent basis requested off-manifold (residual {:.3e})",
                self.residual(x)?
            )));
        }
        let jac = self.constraint_jacobian(x)?;
        let basis = null_space_basis(&jac, self.constraints.len()).ok_or_else(|| {
            Error::RankDeficient(format!(
                "constraint Jacobian of [{}] is rank-deficient at the query point",
                self.constraints
                    .iter()
                    .map(|g| g.src())
                    .collect::<Vec<_>>()
                    .join(", ")
            ))
        })?;
        Ok(TangentBasis {
            point: x.clone(),
            basis,
        })
    }

    /// Draw one box point from `rng` and project it; `Ok(None)` when the draw
    /// failed to converge (caller decides whether to retry).
    fn sample_one(&self, rng: &mut ChaCha8Rng) -> Option<DVector<f64>> {
        let draw = DVector::from_fn(self.dim, |i, _| {
            rng.random_range(self.lower[i]..self.upper[i])
        });
        match self.project(&draw) {
            Ok(x) => {
                // Full-rank Jacobian required for the point to be usable.
                let jac = self.constraint_jacobian(&x).ok()?;
                if numerical_rank(&jac, RANK_TOL) == self.constraints.len() {
                    Some(x)
                } else {
                    None
                }
            }
            Err(_) => None,
        }
    }

    /// Deterministic on-manifold sample of `count` points.
    ///
    /// Attempt `k` uses `rng_stream(seed, "geometry.sample", k)`, so the
    /// sequence of accepted points is independent of how attempts are sharded.
    pub fn sample_points(&self, count: usize, seed: u64) -> Result<Vec<DVector<f64>>> {
        let mut points = Vec::with_capacity(count);
        let limit = 100 * count.max(1);
        let mut attempt = 0;
        while points.len() < count && attempt < limit {
            let mut rng = rng_stream(seed, "geometry.sample", attempt as u64);
            if let Some(x) = self.sample_one(&mut rng) {
                points.push(x);
            }
            attempt += 1;
        }
        if points.len() < count {
            return Err(Error::SamplingExhausted {
                got: points.len(),
                want: count,
                attempts: attempt,
            });
        }
        Ok(points)
    }

    /// Start points must lie within the bounding box scaled by two about its
    /// center.
    fn check_within_double_box(&self, x0: &DVector<f64>) -> Result<()> {
        for i in 0..self.dim {
            let center = 0.5 * (self.lower[i] + self.upper[i]);
            let half = 0.5 * (self.upper[i] - self.lower[i]);
            if (x0[i] - center).abs() > 2.0 * half {
                return Err(Error::Precondition(format!(
                    "start point coordinate {} = {} lies outside twice the bounding box",
                    i + 1,
                    x0[i]
                )));
            }
        }
        Ok(())
    }
}

/// Stack gradients of `maps` into a `(len x n)` Jacobian.
pub fn jacobian_of(maps: &[SmoothMap], x: &DVector<f64>) -> Result<DMatrix<f64>> {
    let n = x.len();
    let mut jac = DMatrix::zeros(maps.len(), n);
    for (k, map) in maps.iter().enumerate() {
        let grad = map.gradient(x)?;
        jac.row_mut(k).copy_from(&grad.transpose());
    }
    Ok(jac)
}

/// Number of singular values above `tol * largest`.
pub fn numerical_rank(mat: &DMatrix<f64>, tol: f64) -> usize {
    if mat.nrows() == 0 || mat.ncols() == 0 {
        return 0;
    }
    let sv = mat.clone().singular_values();
    let largest = sv.max();
    if largest == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > tol * largest).count()
}

/// Orthonormal basis of the null space of `jac` (columns), or `None` when
/// the row rank differs from `expected_rank`.
pub fn null_space_basis(jac: &DMatrix<f64>, expected_rank: usize) -> Option<DMatrix<f64>> {
    let n = jac.ncols();
    let svd = jac.clone().svd(false, true);
    let v_t = svd.v_t.as_ref().expect("requested V^T");
    let sv = &svd.singular_values;
    let largest = sv.iter().cloned().fold(0.0f64, f64::max);
    let rank = if largest == 0.0 {
        0
    } else {
        sv.iter().filter(|&&s| s > RANK_TOL * largest).count()
    };
    if rank != expected_rank {
        return None;
    }
    // Rows rank..n of V^T span the null space; nalgebra's thin SVD only
    // carries min(r, c) rows, so complete the basis by projection when needed.
    if v_t.nrows() >= n {
        let mut basis = DMatrix::zeros(n, n - rank);
        for (col, row) in (rank..n).enumerate() {
            basis.column_mut(col).copy_from(&v_t.row(row).transpose());
        }
        Some(basis)
    } else {
        // Complement of the row space: project coordinate axes and
        // orthonormalize (modified Gram-Schmidt).
        let mut range_cols: Vec<DVector<f64>> = (0..rank)
            .map(|r| v_t.row(r).transpose())
            .collect();
        let mut basis: Vec<DVector<f64>> = Vec::with_capacity(n - rank);
        for axis in 0..n {
            if basis.len() == n - rank {
                break;
            }
            let mut v = DVector::zeros(n);
            v[axis] = 1.0;
            for u in range_cols.iter().chain(basis.iter()) {
                let dot = u.dot(&v);
                v -= dot * u;
            }
            let norm = v.norm();
            if norm > 1e-8 {
                v /= norm;
                // Second orthogonalization pass for numerical hygiene.
                for u in range_cols.iter().chain(basis.iter()) {
                    let dot = u.dot(&v);
                    v -= dot * u;
                }
                v /= v.norm();
                basis.push(v);
            }
        }
        if basis.len() != n - rank {
            return None;
        }
        range_cols.clear();
        let mut out = DMatrix::zeros(n, n - rank);
        for (i, b) in basis.iter().enumerate() {
            out.column_mut(i).copy_from(b);
        }
        Some(out)
    }
}

/// Gauss-Newton iteration driving every map in `primary` and `extra` to zero.
///
/// Uses the minimum-norm step `-J^T (J J^T)^{-1} r`; fails on rank deficiency
/// along the path or when `max_iter` is exhausted.
pub fn gauss_newton_project(
    primary: &[SmoothMap],
    extra: &[SmoothMap],
    x0: &DVector<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<DVector<f64>> {
    let n = x0.len();
    let total = primary.len() + extra.len();
    let mut x = x0.clone();
    let mut residuals = DVector::zeros(total);
    for iter in 0..max_iter {
        let mut jac = DMatrix::zeros(total, n);
        for (k, map) in primary.iter().chain(extra.iter()).enumerate() {
            let (value, grad) = map.value_gradient(&x)?;
            residuals[k] = value;
            jac.row_mut(k).copy_from(&grad.transpose());
        }
        let worst = residuals.amax();
        if worst <= tol {
            return Ok(x);
        }
        // Solve (J J^T) y = r, step = -J^T y.
        let gram = &jac * jac.transpose();
        let chol = gram.clone().cholesky();
        let y = match chol {
            Some(ch) => ch.solve(&residuals),
            None => {
                // Rank check to give the more precise error.
                if numerical_rank(&jac, RANK_TOL) < total {
                    return Err(Error::RankDeficient(format!(
                        "constraint Jacobian rank-deficient after {iter} Gauss-Newton steps"
                    )));
                }
                gram.svd(true, true)
                    .solve(&residuals, 1e-14)
                    .map_err(|e| Error::RankDeficient(e.to_string()))?
            }
        };
        let step = -(jac.transpose() * y);
        if !step.iter().all(|s| s.is_finite()) {
            return Err(Error::RankDeficient(
                "non-finite Gauss-Newton step".into(),
            ));
        }
        x += step;
    }
    Err(Error::ProjectionDiverged {
        iterations: max_iter,
        residual: residuals.amax(),
    })
}
