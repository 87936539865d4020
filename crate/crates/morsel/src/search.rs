//! Exhaustive critical-point search: per-active-set multistart Newton on the
//! KKT-type system, dedupe, polish, nondegeneracy attachment, and detection
//! of suspected non-isolated critical sets.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::Serialize;

use crate::csfun::{CsFunction, IndexSet};
use crate::error::{Error, Result};
use crate::geometry::{rng_stream, Manifold};
use crate::nonsmooth::{
    classify_handle, criticality_for_subset, nondegeneracy_report, CriticalityVerdict,
    HandleClass, NondegeneracyReport, SimplexWeights,
};

/// Multistart search configuration.
#[derive(Debug, Clone, Serialize)]
pub struct SearchConfig {
    pub starts_per_subset: usize,
    pub seed: u64,
    /// Ambient distance below which converged solutions merge into one record.
    pub dedupe_radius: f64,
    /// A same-value cluster wider than this is a suspected non-isolated set.
    pub degenerate_cluster_diameter: f64,
    /// Minimum number of distinct converged locations before a wide cluster
    /// counts as a continuum rather than a symmetric orbit of isolated points.
    pub degenerate_count_min: usize,
    pub newton_max_iter: usize,
    pub max_backtracks: usize,
    /// Convergence threshold on the max-norm of the KKT residual.
    pub newton_tol: f64,
    /// Criticality tolerance applied to polished records.
    pub crit_tol: f64,
    pub nd2_tol: f64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            starts_per_subset: 200,
            seed: 0,
            dedupe_radius: 1e-6,
            degenerate_cluster_diameter: 1e-2,
            degenerate_count_min: 10,
            newton_max_iter: 50,
            max_backtracks: 30,
            newton_tol: 1e-11,
            crit_tol: 1e-8,
            nd2_tol: 1e-7,
        }
    }
}

impl SearchConfig {
    fn validate(&self) -> Result<()> {
        if self.starts_per_subset == 0
            || self.newton_max_iter == 0
            || self.dedupe_radius <= 0.0
            || self.degenerate_cluster_diameter <= 0.0
        {
            return Err(Error::Scenario(
                "search configuration needs positive counts and radii".into(),
            ));
        }
        Ok(())
    }
}

/// A fully verified critical point.
#[derive(Debug, Clone)]
pub struct CriticalPointRecord {
    pub x: DVector<f64>,
    pub active: IndexSet,
    pub weights: SimplexWeights,
    pub multipliers: DVector<f64>,
    pub value: f64,
    pub nondegeneracy: NondegeneracyReport,
    /// Present when the point is nondegenerate.
    pub handle: Option<HandleClass>,
    /// Number of converged starts merged into this record.
    pub cluster_size: usize,
    /// Max-norm of the KKT residual recomputed from the stored fields.
    pub residual: f64,
}

impl CriticalPointRecord {
    pub fn is_nondegenerate(&self) -> bool {
        self.nondegeneracy.nd1_ok && self.nondegeneracy.nd2_ok
    }
}

/// How a suspected non-isolated critical set manifests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DegenerateKind {
    /// Converged solutions spread over a positive-dimensional set of points.
    PointContinuum,
    /// Solutions collapse to one point at which every active projected
    /// gradient vanishes, so the simplex weights are a free parameter.
    WeightContinuum,
}

/// A suspected non-isolated critical set.
#[derive(Debug, Clone, Serialize)]
pub struct DegenerateSetFlag {
    pub kind: DegenerateKind,
    pub active: IndexSet,
    pub value: f64,
    /// Distinct converged locations in the cluster.
    pub distinct_count: usize,
    /// Diameter of the cluster in joint (point, weights) space.
    pub diameter: f64,
    /// A few member points, for reporting.
    pub representatives: Vec<Vec<f64>>,
}

/// Per-subset convergence accounting.
#[derive(Debug, Clone, Serialize)]
pub struct SubsetDiagnostics {
    pub subset: IndexSet,
    pub starts: usize,
    pub converged: usize,
    pub kept: usize,
    pub rejected: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SearchDiagnostics {
    pub per_subset: Vec<SubsetDiagnostics>,
    pub polish_discards: BTreeMap<String, usize>,
}

/// Everything the search produces.
#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub records: Vec<CriticalPointRecord>,
    pub degenerate_flags: Vec<DegenerateSetFlag>,
    pub diagnostics: SearchDiagnostics,
}

/// One converged, filtered multistart solution (before dedupe).
#[derive(Debug, Clone)]
pub struct RawSolution {
    pub x: DVector<f64>,
    pub active: IndexSet,
    pub lambda: DVector<f64>,
    pub mu: DVector<f64>,
    pub value: f64,
    pub residual: f64,
}

/// KKT residual of the active-set system at `(x, lambda, mu)`:
/// stationarity (n entries), equal values within `J` (|J|-1), constraints
/// (c), and the weight-sum constraint (1).
pub fn kkt_residual(
    f: &CsFunction,
    manifold: &Manifold,
    j: &IndexSet,
    x: &DVector<f64>,
    lambda: &DVector<f64>,
    mu: &DVector<f64>,
) -> Result<DVector<f64>> {
    let n = manifold.ambient_dim();
    let c = manifold.num_constraints();
    let indices: Vec<usize> = j.iter().collect();
    if lambda.len() != indices.len() || mu.len() != c {
        return Err(Error::Precondition(
            "kkt residual called with mismatched sizes".into(),
        ));
    }
    let mut res = DVector::zeros(n + indices.len() - 1 + c + 1);
    let mut stationarity = DVector::zeros(n);
    let mut values = Vec::with_capacity(indices.len());
    for (pos, &i) in indices.iter().enumerate() {
        let (value, grad) = f.selection(i).value_gradient(x)?;
        stationarity += lambda[pos] * grad;
        values.push(value);
    }
    for (k, g) in manifold.constraints().iter().enumerate() {
        let (value, grad) = g.value_gradient(x)?;
        stationarity += mu[k] * grad;
        res[n + indices.len() - 1 + k] = value;
    }
    res.rows_mut(0, n).copy_from(&stationarity);
    for pos in 1..indices.len() {
        res[n + pos - 1] = values[pos] - values[0];
    }
    res[n + indices.len() - 1 + c] = lambda.sum() - 1.0;
    Ok(res)
}

/// Jacobian of [`kkt_residual`] with respect to `(x, lambda, mu)`.
fn kkt_jacobian(
    f: &CsFunction,
    manifold: &Manifold,
    j: &IndexSet,
    x: &DVector<f64>,
    lambda: &DVector<f64>,
    mu: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    let n = manifold.ambient_dim();
    let c = manifold.num_constraints();
    let indices: Vec<usize> = j.iter().collect();
    let s = indices.len();
    let rows = n + s - 1 + c + 1;
    let cols = n + s + c;
    let mut jac = DMatrix::zeros(rows, cols);

    let mut grads = Vec::with_capacity(s);
    let mut hess_combo = DMatrix::zeros(n, n);
    for (pos, &i) in indices.iter().enumerate() {
        let jet = f.selection(i).jet2(x)?;
        hess_combo += lambda[pos] * &jet.hessian;
        grads.push(jet.gradient);
    }
    let mut g_grads = Vec::with_capacity(c);
    for (k, g) in manifold.constraints().iter().enumerate() {
        let jet = g.jet2(x)?;
        hess_combo += mu[k] * &jet.hessian;
        g_grads.push(jet.gradient);
    }

    jac.view_mut((0, 0), (n, n)).copy_from(&hess_combo);
    for (pos, grad) in grads.iter().enumerate() {
        jac.view_mut((0, n + pos), (n, 1)).copy_from(grad);
    }
    for (k, grad) in g_grads.iter().enumerate() {
        jac.view_mut((0, n + s + k), (n, 1)).copy_from(grad);
    }
    for pos in 1..s {
        let diff = (&grads[pos] - &grads[0]).transpose();
        jac.view_mut((n + pos - 1, 0), (1, n)).copy_from(&diff);
    }
    for (k, grad) in g_grads.iter().enumerate() {
        jac.view_mut((n + s - 1 + k, 0), (1, n))
            .copy_from(&grad.transpose());
    }
    for pos in 0..s {
        jac[(rows - 1, n + pos)] = 1.0;
    }
    Ok(jac)
}

enum NewtonOutcome {
    Converged {
        x: DVector<f64>,
        lambda: DVector<f64>,
        mu: DVector<f64>,
        residual: f64,
    },
    Failed(&'static str),
}

/// Damped Newton on the square KKT system from a given start.
#[allow(clippy::too_many_arguments)]
fn newton_solve(
    f: &CsFunction,
    manifold: &Manifold,
    j: &IndexSet,
    mut x: DVector<f64>,
    mut lambda: DVector<f64>,
    mut mu: DVector<f64>,
    cfg: &SearchConfig,
    tol: f64,
    max_iter: usize,
) -> Result<NewtonOutcome> {
    let n = manifold.ambient_dim();
    let s = j.len();
    let mut res = match kkt_residual(f, manifold, j, &x, &lambda, &mu) {
        Ok(r) => r,
        Err(Error::Domain { .. }) => return Ok(NewtonOutcome::Failed("domain_error")),
        Err(e) => return Err(e),
    };
    for _ in 0..max_iter {
        if res.amax() <= tol {
            return Ok(NewtonOutcome::Converged {
                x,
                lambda,
                mu,
                residual: res.amax(),
            });
        }
        let jac = match kkt_jacobian(f, manifold, j, &x, &lambda, &mu) {
            Ok(jm) => jm,
            Err(Error::Domain { .. }) => return Ok(NewtonOutcome::Failed("domain_error")),
            Err(e) => return Err(e),
        };
        let neg = -&res;
        let step = match jac.clone().lu().solve(&neg) {
            Some(step) if step.iter().all(|v| v.is_finite()) => step,
            _ => match jac.svd(true, true).solve(&neg, 1e-13) {
                Ok(step) if step.iter().all(|v| v.is_finite()) => step,
                _ => return Ok(NewtonOutcome::Failed("singular_system")),
            },
        };
        // Backtracking on the residual norm.
        let base_norm = res.norm();
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..=cfg.max_backtracks {
            let x_t = &x + t * step.rows(0, n);
            let lambda_t = &lambda + t * step.rows(n, s);
            let mu_t = &mu + t * step.rows(n + s, mu.len());
            match kkt_residual(f, manifold, j, &x_t, &lambda_t, &mu_t) {
                Ok(r) if r.norm() < base_norm => {
                    x = x_t;
                    lambda = lambda_t;
                    mu = mu_t;
                    res = r;
                    accepted = true;
                    break;
                }
                Ok(_) | Err(Error::Domain { .. }) => t *= 0.5,
                Err(e) => return Err(e),
            }
        }
        if !accepted {
            return Ok(NewtonOutcome::Failed("stalled"));
        }
    }
    if res.amax() <= tol {
        Ok(NewtonOutcome::Converged {
            residual: res.amax(),
            x,
            lambda,
            mu,
        })
    } else {
        Ok(NewtonOutcome::Failed("no_convergence"))
    }
}

fn least_squares_mu(
    f: &CsFunction,
    manifold: &Manifold,
    j: &IndexSet,
    x: &DVector<f64>,
    lambda: &DVector<f64>,
) -> Result<DVector<f64>> {
    let mut combo = DVector::zeros(manifold.ambient_dim());
    for (pos, i) in j.iter().enumerate() {
        combo += lambda[pos] * f.selection(i).gradient(x)?;
    }
    let jac_t = manifold.constraint_jacobian(x)?.transpose();
    jac_t
        .svd(true, true)
        .solve(&(-combo), 1e-13)
        .map_err(|e| Error::InternalConsistency(e.to_string()))
}

/// Run the multistart sweep and return the raw converged solutions plus
/// diagnostics. Exposed separately so degeneracy detection can be tested on
/// the pre-dedupe stream.
pub fn multistart_raw(
    f: &CsFunction,
    manifold: &Manifold,
    cfg: &SearchConfig,
) -> Result<(Vec<RawSolution>, SearchDiagnostics)> {
    cfg.validate()?;
    let m = f.num_selections();
    let subsets = IndexSet::nonempty_subsets(m);
    let mut raws: Vec<RawSolution> = Vec::new();
    let mut per_subset = Vec::new();
    for (subset_idx, j) in subsets.iter().enumerate() {
        let mut diag = SubsetDiagnostics {
            subset: j.clone(),
            starts: cfg.starts_per_subset,
            converged: 0,
            kept: 0,
            rejected: BTreeMap::new(),
        };
        for start in 0..cfg.starts_per_subset {
            let stream_index = (subset_idx * cfg.starts_per_subset + start) as u64;
            let mut rng = rng_stream(cfg.seed, "search.start", stream_index);
            match run_one_start(f, manifold, j, cfg, &mut rng)? {
                StartOutcome::Kept(raw) => {
                    diag.converged += 1;
                    diag.kept += 1;
                    raws.push(raw);
                }
                StartOutcome::Converged(reason) => {
                    diag.converged += 1;
                    *diag.rejected.entry(reason.to_string()).or_insert(0) += 1;
                }
                StartOutcome::Failed(reason) => {
                    *diag.rejected.entry(reason.to_string()).or_insert(0) += 1;
                }
            }
        }
        per_subset.push(diag);
    }
    sort_raws(&mut raws);
    Ok((
        raws,
        SearchDiagnostics {
            per_subset,
            polish_discards: BTreeMap::new(),
        },
    ))
}

enum StartOutcome {
    Kept(RawSolution),
    /// Converged but filtered out.
    Converged(&'static str),
    Failed(&'static str),
}

fn run_one_start(
    f: &CsFunction,
    manifold: &Manifold,
    j: &IndexSet,
    cfg: &SearchConfig,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<StartOutcome> {
    let n = manifold.ambient_dim();
    let (lower, upper) = manifold.bounds();
    // Projected box draw; a couple of retries from the same stream.
    let mut x0 = None;
    for _ in 0..5 {
        let draw = DVector::from_fn(n, |i, _| rng.random_range(lower[i]..upper[i]));
        if let Ok(x) = manifold.project(&draw) {
            x0 = Some(x);
            break;
        }
    }
    let Some(x0) = x0 else {
        return Ok(StartOutcome::Failed("no_start_point"));
    };
    // Uniform draw from the open simplex.
    let mut lambda = DVector::from_fn(j.len(), |_, _| -(rng.random_range(1e-12..1.0f64)).ln());
    lambda /= lambda.sum();
    let mu = least_squares_mu(f, manifold, j, &x0, &lambda)?;

    match newton_solve(
        f,
        manifold,
        j,
        x0,
        lambda,
        mu,
        cfg,
        cfg.newton_tol,
        cfg.newton_max_iter,
    )? {
        NewtonOutcome::Failed(reason) => Ok(StartOutcome::Failed(reason)),
        NewtonOutcome::Converged {
            x,
            lambda,
            mu,
            residual,
        } => {
            if lambda.iter().any(|&l| l < -1e-10) {
                return Ok(StartOutcome::Converged("negative_lambda"));
            }
            if manifold.residual(&x)? > manifold.on_manifold_tol() {
                return Ok(StartOutcome::Converged("off_manifold"));
            }
            let active = f.active_set(&x)?;
            if active.indices != *j {
                return Ok(StartOutcome::Converged("active_set_mismatch"));
            }
            let value = f.value(&x)?;
            Ok(StartOutcome::Kept(RawSolution {
                x,
                active: active.indices,
                lambda,
                mu,
                value,
                residual,
            }))
        }
    }
}

fn sort_raws(raws: &mut [RawSolution]) {
    raws.sort_by(|a, b| {
        a.active
            .len()
            .cmp(&b.active.len())
            .then_with(|| a.active.as_slice().cmp(b.active.as_slice()))
            .then_with(|| a.value.total_cmp(&b.value))
            .then_with(|| lex_cmp(&a.x, &b.x))
    });
}

fn lex_cmp(a: &DVector<f64>, b: &DVector<f64>) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b.iter()) {
        let ord = x.total_cmp(y);
        if ord != std::cmp::Ordering::Equal {
            return ord;
        }
    }
    std::cmp::Ordering::Equal
}

/// Joint distance in (point, weights) space; weight spread separates
/// continua of multipliers (duplicate-gradient degeneracies) from genuine
/// point clusters.
fn joint_distance(a: &RawSolution, b: &RawSolution) -> f64 {
    let dx = (&a.x - &b.x).norm_squared();
    let dl = (&a.lambda - &b.lambda).norm_squared();
    (dx + dl).sqrt()
}

/// Every active projected gradient is (numerically) zero at `x`, which makes
/// the simplex weights a free parameter: the critical set is a continuum in
/// the joint (point, weights) space even when the point itself is isolated.
fn weights_unpinned(
    f: &CsFunction,
    manifold: &Manifold,
    j: &IndexSet,
    x: &DVector<f64>,
) -> Result<bool> {
    if j.len() < 2 {
        return Ok(false);
    }
    let basis = manifold.tangent_basis(x)?;
    for i in j.iter() {
        let grad = f.selection(i).gradient(x)?;
        if basis.coords(&grad).norm() > 1e-5 {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Detect suspected non-isolated critical sets among the raw solutions.
///
/// Solutions are grouped by active set and (merged) critical value. A group
/// spreading over many distinct locations, each hit by few starts, across a
/// diameter above the configured threshold is one flag (a point continuum).
/// A group that collapses spatially but whose active projected gradients all
/// vanish is also one flag (a weight continuum). Tight repeats of a healthy
/// location — isolated points, symmetric orbits — never qualify.
pub fn detect_degenerate_sets(
    f: &CsFunction,
    manifold: &Manifold,
    raws: &[RawSolution],
    cfg: &SearchConfig,
) -> Result<(Vec<DegenerateSetFlag>, Vec<RawSolution>)> {
    let mut flags = Vec::new();
    let mut survivors = Vec::new();
    let mut idx = 0;
    while idx < raws.len() {
        // Group: same active set, values chained within 1e-9.
        let mut end = idx + 1;
        while end < raws.len()
            && raws[end].active == raws[idx].active
            && (raws[end].value - raws[end - 1].value).abs() <= 1e-9
        {
            end += 1;
        }
        let group = &raws[idx..end];
        // Distinct locations within the group (greedy, joint metric).
        let mut reps: Vec<&RawSolution> = Vec::new();
        let mut multiplicity: Vec<usize> = Vec::new();
        for raw in group {
            match reps
                .iter()
                .position(|r| joint_distance(r, raw) <= cfg.dedupe_radius)
            {
                Some(pos) => multiplicity[pos] += 1,
                None => {
                    reps.push(raw);
                    multiplicity.push(1);
                }
            }
        }
        let mut diameter = 0.0f64;
        for (i, a) in reps.iter().enumerate() {
            for b in reps.iter().skip(i + 1) {
                diameter = diameter.max(joint_distance(a, b));
            }
        }
        let mean_multiplicity = group.len() as f64 / reps.len() as f64;
        let is_continuum = reps.len() >= cfg.degenerate_count_min
            && diameter > cfg.degenerate_cluster_diameter
            && mean_multiplicity < 3.0;
        if is_continuum {
            flags.push(DegenerateSetFlag {
                kind: DegenerateKind::PointContinuum,
                active: raws[idx].active.clone(),
                value: raws[idx].value,
                distinct_count: reps.len(),
                diameter,
                representatives: reps
                    .iter()
                    .take(5)
                    .map(|r| r.x.iter().cloned().collect())
                    .collect(),
            });
            idx = end;
            continue;
        }
        // Sub-cluster spatially and test each location for unpinned weights.
        let mut sub_reps: Vec<&RawSolution> = Vec::new();
        let mut sub_members: Vec<Vec<&RawSolution>> = Vec::new();
        for raw in group {
            match sub_reps
                .iter()
                .position(|r| (&r.x - &raw.x).norm() <= 100.0 * cfg.dedupe_radius)
            {
                Some(pos) => sub_members[pos].push(raw),
                None => {
                    sub_reps.push(raw);
                    sub_members.push(vec![raw]);
                }
            }
        }
        for (rep, members) in sub_reps.iter().zip(&sub_members) {
            if weights_unpinned(f, manifold, &rep.active, &rep.x)? {
                let mut diam = 0.0f64;
                for (i, a) in members.iter().enumerate() {
                    for b in members.iter().skip(i + 1) {
                        diam = diam.max(joint_distance(a, b));
                    }
                }
                flags.push(DegenerateSetFlag {
                    kind: DegenerateKind::WeightContinuum,
                    active: rep.active.clone(),
                    value: rep.value,
                    distinct_count: members.len(),
                    diameter: diam,
                    representatives: vec![rep.x.iter().cloned().collect()],
                });
            } else {
                survivors.extend(members.iter().map(|r| (*r).clone()));
            }
        }
        idx = end;
    }
    Ok((flags, survivors))
}

/// Enumerate the critical set of `f` on `manifold`.
///
/// For each nonempty active set the KKT system is solved from
/// `starts_per_subset` random starts; converged solutions are filtered,
/// screened for non-isolated sets, deduped by ambient distance, polished and
/// fully re-verified. Deterministic for a fixed seed.
pub fn find_critical_points(
    f: &CsFunction,
    manifold: &Manifold,
    cfg: &SearchConfig,
) -> Result<SearchOutcome> {
    let (raws, mut diagnostics) = multistart_raw(f, manifold, cfg)?;
    let (degenerate_flags, survivors) = detect_degenerate_sets(f, manifold, &raws, cfg)?;

    // Dedupe by ambient distance within each active set.
    let mut clusters: Vec<(RawSolution, usize)> = Vec::new();
    for raw in survivors {
        match clusters.iter_mut().find(|(rep, _)| {
            rep.active == raw.active && (&rep.x - &raw.x).norm() <= cfg.dedupe_radius
        }) {
            Some((_, count)) => *count += 1,
            None => clusters.push((raw, 1)),
        }
    }

    let mut records = Vec::new();
    for (raw, cluster_size) in clusters {
        match polish_and_verify(f, manifold, raw, cluster_size, cfg)? {
            Ok(record) => records.push(record),
            Err(reason) => {
                *diagnostics
                    .polish_discards
                    .entry(reason.to_string())
                    .or_insert(0) += 1;
            }
        }
    }
    records.sort_by(|a, b| {
        a.active
            .len()
            .cmp(&b.active.len())
            .then_with(|| a.active.as_slice().cmp(b.active.as_slice()))
            .then_with(|| a.value.total_cmp(&b.value))
            .then_with(|| lex_cmp(&a.x, &b.x))
    });
    Ok(SearchOutcome {
        records,
        degenerate_flags,
        diagnostics,
    })
}

/// Polish one deduped representative and build its verified record, or give
/// the reason it must be discarded.
fn polish_and_verify(
    f: &CsFunction,
    manifold: &Manifold,
    raw: RawSolution,
    cluster_size: usize,
    cfg: &SearchConfig,
) -> Result<std::result::Result<CriticalPointRecord, &'static str>> {
    let j = raw.active.clone();
    let polished = newton_solve(
        f,
        manifold,
        &j,
        raw.x.clone(),
        raw.lambda.clone(),
        raw.mu.clone(),
        cfg,
        1e-13,
        25,
    )?;
    let (x, _lambda, _mu) = match polished {
        NewtonOutcome::Converged { x, lambda, mu, .. } => (x, lambda, mu),
        // Already at newton_tol; keep the raw point if extra polish stalls.
        NewtonOutcome::Failed(_) => (raw.x.clone(), raw.lambda.clone(), raw.mu.clone()),
    };

    if manifold.residual(&x)? > manifold.on_manifold_tol() {
        return Ok(Err("off_manifold_after_polish"));
    }
    let active = f.active_set(&x)?;
    if active.indices != j {
        return Ok(Err("active_set_changed_after_polish"));
    }
    // Canonical weights and multipliers from the min-norm solve.
    let verdict: CriticalityVerdict = criticality_for_subset(f, manifold, &x, &j, cfg.crit_tol)?;
    if !verdict.is_critical {
        return Ok(Err("criticality_reverify_failed"));
    }
    let lambda_vec = DVector::from_vec(verdict.weights.lambda.clone());
    let residual = kkt_residual(f, manifold, &j, &x, &lambda_vec, &verdict.multipliers)?.amax();
    if residual > 1e-9 {
        return Ok(Err("residual_above_polish_tolerance"));
    }
    let nondegeneracy = nondegeneracy_report(f, manifold, &x, &verdict, cfg.nd2_tol)?;
    // Handles are classified for up to three active selections; a bound
    // violation there is a genuine internal error and propagates.
    let handle = if nondegeneracy.nd1_ok && nondegeneracy.nd2_ok && j.len() <= 3 {
        Some(classify_handle(
            f.selector(),
            manifold.manifold_dim(),
            &j,
            &nondegeneracy,
        )?)
    } else {
        None
    };
    let value = f.value(&x)?;
    Ok(Ok(CriticalPointRecord {
        x,
        active: j,
        weights: verdict.weights,
        multipliers: verdict.multipliers,
        value,
        nondegeneracy,
        handle,
        cluster_size,
        residual,
    }))
}

/// Sorted distinct critical values of the records and flags, merged within
/// 1e-9.
pub fn critical_values(
    records: &[CriticalPointRecord],
    flags: &[DegenerateSetFlag],
) -> Vec<f64> {
    let mut values: Vec<f64> = records
        .iter()
        .map(|r| r.value)
        .chain(flags.iter().map(|f| f.value))
        .collect();
    values.sort_by(f64::total_cmp);
    let mut merged: Vec<f64> = Vec::new();
    for v in values {
        if merged.last().is_none_or(|last| (v - last).abs() > 1e-9) {
            merged.push(v);
        }
    }
    merged
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::csfun::Selector;
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

    fn fast_cfg(seed: u64) -> SearchConfig {
        SearchConfig {
            starts_per_subset: 60,
            seed,
            ..SearchConfig::default()
        }
    }

    #[test]
    fn residual_vanishes_at_exact_critical_point() {
        let m = sphere(5);
        let f = coords_cs(5, 3, Selector::Max);
        let s3 = (1.0f64 / 3.0).sqrt();
        let x = v(&[-s3, -s3, -s3, 0.0, 0.0]);
        let j = IndexSet::new(vec![1, 2, 3]);
        let lambda = v(&[1.0 / 3.0; 3]);
        // Stationarity: (1/3)e_i sum + mu * 2x = 0 componentwise on 1..3.
        let mu = v(&[(1.0 / 3.0) / (2.0 * s3)]);
        let res = kkt_residual(&f, &m, &j, &x, &lambda, &mu).unwrap();
        assert!(res.amax() < 1e-12, "residual {:?}", res);
    }

    #[test]
    fn perturbed_point_has_small_but_nonzero_residual() {
        let m = sphere(5);
        let f = coords_cs(5, 3, Selector::Max);
        let s3 = (1.0f64 / 3.0).sqrt();
        let mut x = v(&[-s3, -s3, -s3, 0.0, 0.0]);
        let mut rng = rng_stream(5, "test.perturb", 0);
        for i in 0..5 {
            x[i] += 1e-3 * rng.random_range(-1.0..1.0f64);
        }
        let j = IndexSet::new(vec![1, 2, 3]);
        let lambda = v(&[1.0 / 3.0; 3]);
        let mu = v(&[(1.0 / 3.0) / (2.0 * s3)]);
        let res = kkt_residual(&f, &m, &j, &x, &lambda, &mu).unwrap().norm();
        assert!((1e-4..1e-1).contains(&res), "residual norm {res}");
    }

    #[test]
    fn zero_lambda_vector_breaks_sum_row() {
        let m = sphere(4);
        let f = coords_cs(4, 2, Selector::Max);
        let j = IndexSet::new(vec![1, 2]);
        let x = v(&[1.0, 0.0, 0.0, 0.0]);
        let lambda = v(&[0.0, 0.0]);
        let mu = v(&[0.0]);
        let res = kkt_residual(&f, &m, &j, &x, &lambda, &mu).unwrap();
        assert_eq!(res[res.len() - 1], -1.0);
    }

    #[test]
    fn s3_linear_has_exactly_four_records() {
        let m = sphere(4);
        let f = coords_cs(4, 2, Selector::Max);
        let outcome = find_critical_points(&f, &m, &fast_cfg(3)).unwrap();
        assert!(outcome.degenerate_flags.is_empty());
        assert_eq!(outcome.records.len(), 4);
        let r = 0.5f64.sqrt();
        let expected = [
            v(&[1.0, 0.0, 0.0, 0.0]),
            v(&[0.0, 1.0, 0.0, 0.0]),
            v(&[-r, -r, 0.0, 0.0]),
            v(&[r, r, 0.0, 0.0]),
        ];
        for e in &expected {
            assert!(
                outcome.records.iter().any(|rec| (&rec.x - e).norm() < 1e-8),
                "missing critical point {e:?}"
            );
        }
        for rec in &outcome.records {
            assert!(rec.is_nondegenerate());
            assert!(rec.residual <= 1e-9);
        }
    }

    #[test]
    fn s4_fixture_finds_all_eight_records() {
        let m = sphere(5);
        let f = coords_cs(5, 3, Selector::Max);
        let outcome = find_critical_points(&f, &m, &fast_cfg(17)).unwrap();
        assert_eq!(outcome.records.len(), 8, "{:?}", outcome.diagnostics);
        assert!(outcome.degenerate_flags.is_empty());
        let values = critical_values(&outcome.records, &outcome.degenerate_flags);
        let s3 = (1.0f64 / 3.0).sqrt();
        let expected = [-s3, s3, 0.5f64.sqrt(), 1.0];
        assert_eq!(values.len(), 4);
        for (got, want) in values.iter().zip(expected) {
            assert!((got - want).abs() < 1e-10, "value {got} vs {want}");
        }
    }

    #[test]
    fn degenerate_torus_is_flagged_not_recorded() {
        let m = sphere(4);
        let f = CsFunction::new(
            vec![
                SmoothMap::parse("x1^2+x2^2", 4).unwrap(),
                SmoothMap::parse("x3^2+x4^2", 4).unwrap(),
            ],
            Selector::Max,
        )
        .unwrap();
        let outcome = find_critical_points(&f, &m, &fast_cfg(7)).unwrap();
        let torus_flags: Vec<_> = outcome
            .degenerate_flags
            .iter()
            .filter(|fl| fl.active == IndexSet::new(vec![1, 2]))
            .collect();
        assert_eq!(torus_flags.len(), 1, "flags: {:?}", outcome.degenerate_flags);
        assert!((torus_flags[0].value - 0.5).abs() < 1e-9);
        assert!(torus_flags[0].diameter > 0.5);
        // No records may survive on the half level.
        assert!(outcome
            .records
            .iter()
            .all(|r| (r.value - 0.5).abs() > 1e-6));
    }

    #[test]
    fn duplicate_gradient_continuum_is_flagged() {
        // max{x1, x1 + x3^2} on S^3: at the pole e1 both selections tie and
        // both projected gradients vanish, so the weights are a free
        // parameter. The flag must be raised and no record produced there.
        let m = sphere(4);
        let f = CsFunction::new(
            vec![
                SmoothMap::parse("x1", 4).unwrap(),
                SmoothMap::parse("x1+x3^2", 4).unwrap(),
            ],
            Selector::Max,
        )
        .unwrap();
        let cfg = fast_cfg(29);
        let (raws, _) = multistart_raw(&f, &m, &cfg).unwrap();
        let (flags, survivors) = detect_degenerate_sets(&f, &m, &raws, &cfg).unwrap();
        assert!(
            flags
                .iter()
                .any(|fl| fl.kind == DegenerateKind::WeightContinuum
                    && (fl.value - 1.0).abs() < 1e-6),
            "expected a weight-continuum flag at value 1, got {flags:?} from {} raws",
            raws.len()
        );
        // The genuine isolated critical points of f2 = x1 + x3^2 survive.
        assert!(survivors
            .iter()
            .all(|r| r.active == IndexSet::new(vec![2])));
    }

    #[test]
    fn symmetric_pair_of_isolated_points_is_not_flagged() {
        // max of a single selection x3^2 on S^2: isolated nondegenerate
        // maxima at both poles share value 1, plus a degenerate equator.
        let m = sphere(3);
        let f = CsFunction::new(vec![SmoothMap::parse("x3^2", 3).unwrap()], Selector::Max)
            .unwrap();
        let outcome = find_critical_points(&f, &m, &fast_cfg(41)).unwrap();
        let poles: Vec<_> = outcome
            .records
            .iter()
            .filter(|r| (r.value - 1.0).abs() < 1e-9)
            .collect();
        assert_eq!(poles.len(), 2, "both poles must be separate records");
        // The equator (value 0) is a continuum and must be flagged.
        assert!(outcome
            .degenerate_flags
            .iter()
            .any(|fl| fl.value.abs() < 1e-9));
    }

    #[test]
    fn search_is_deterministic() {
        let m = sphere(4);
        let f = coords_cs(4, 2, Selector::Max);
        let a = find_critical_points(&f, &m, &fast_cfg(11)).unwrap();
        let b = find_critical_points(&f, &m, &fast_cfg(11)).unwrap();
        assert_eq!(a.records.len(), b.records.len());
        for (ra, rb) in a.records.iter().zip(&b.records) {
            assert_eq!(ra.x, rb.x);
            assert_eq!(ra.cluster_size, rb.cluster_size);
        }
    }

    #[test]
    fn empty_records_give_empty_values() {
        assert!(critical_values(&[], &[]).is_empty());
    }
}
