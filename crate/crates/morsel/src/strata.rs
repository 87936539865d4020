//! Stratification reports: stratum census with dimension estimates and
//! frontier observations, fiber sampling with connected-component counts,
//! the trisection-hypothesis check, and the handle census with its
//! order-three symmetry verdict.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::Serialize;

use crate::csfun::{CsFunction, IndexSet, Selector};
use crate::error::{Error, Result};
use crate::expr::{Expr, SmoothMap};
use crate::geometry::{rng_stream, Manifold};
use crate::nonsmooth::{hat_tangent_basis, HandleKind};
use crate::search::{CriticalPointRecord, DegenerateSetFlag};

/// Treat a domain error as a rejected sample; propagate anything else.
fn skip_domain<T>(result: Result<T>) -> Result<Option<T>> {
    match result {
        Ok(value) => Ok(Some(value)),
        Err(Error::Domain { .. }) => Ok(None),
        Err(other) => Err(other),
    }
}

/// Knobs for the stratum census.
#[derive(Debug, Clone, Serialize)]
pub struct CensusConfig {
    /// Points classified in the whole-manifold pass.
    pub samples: usize,
    /// Samples drawn directly on each singular stratum.
    pub stratum_samples: usize,
    pub seed: u64,
    /// Points at which the local dimension is estimated, per stratum.
    pub anchors_per_stratum: usize,
    /// Neighbors entering each local PCA.
    pub knn: usize,
    /// Radius of the ball sampled around each anchor.
    pub pca_ball_radius: f64,
    /// Accepted local samples collected around each anchor.
    pub pca_local_samples: usize,
    /// Consecutive-eigenvalue ratio that counts as a decisive gap.
    pub eigen_gap_threshold: f64,
    /// Below this many samples a stratum's dimension is not guessed.
    pub min_stratum_samples: usize,
    pub frontier_probes: usize,
    pub frontier_step: f64,
}

impl Default for CensusConfig {
    fn default() -> Self {
        CensusConfig {
            samples: 4000,
            stratum_samples: 200,
            seed: 0,
            anchors_per_stratum: 20,
            knn: 20,
            pca_ball_radius: 0.02,
            pca_local_samples: 60,
            eigen_gap_threshold: 1e3,
            min_stratum_samples: 50,
            frontier_probes: 10,
            frontier_step: 1e-3,
        }
    }
}

/// Census entry for one nonempty stratum.
#[derive(Debug, Clone, Serialize)]
pub struct StratumInfo {
    pub stratum: IndexSet,
    /// Samples of this stratum seen across both passes.
    pub sample_count: usize,
    pub f_min: f64,
    pub f_max: f64,
    /// `(n - c) - (|J| - 1)`.
    pub expected_dim: usize,
    /// Modal local-PCA estimate; `None` when data was insufficient.
    pub estimated_dim: Option<usize>,
    pub anchors_tested: usize,
    /// Anchors whose eigen-gap met the threshold.
    pub anchors_with_gap: usize,
    /// Smallest decisive eigen-gap seen (capped for serialization).
    pub min_gap: Option<f64>,
}

/// Observed perturb-and-project transition from a boundary stratum into one
/// of the strata it bounds.
#[derive(Debug, Clone, Serialize)]
pub struct FrontierObservation {
    /// The higher-codimension stratum the probe started on.
    pub from: IndexSet,
    /// The stratum whose closure was approached.
    pub to: IndexSet,
    pub probes: usize,
    pub successes: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct StratumCensus {
    pub strata: Vec<StratumInfo>,
    /// Classified sample counts of the skeleta `X^i`, `i = 0..m`.
    pub skeleton_counts: Vec<usize>,
    pub frontier: Vec<FrontierObservation>,
    pub classify_samples: usize,
}

impl StratumCensus {
    pub fn stratum(&self, j: &IndexSet) -> Option<&StratumInfo> {
        self.strata.iter().find(|s| s.stratum == *j)
    }

    /// Estimated range of `f` over all census samples.
    pub fn value_range(&self) -> Option<(f64, f64)> {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for s in &self.strata {
            lo = lo.min(s.f_min);
            hi = hi.max(s.f_max);
        }
        (lo <= hi).then_some((lo, hi))
    }
}

/// Equal-value maps `f_i - f_j0` cutting the closure of stratum `J` out of
/// the manifold.
pub fn stratum_equations(f: &CsFunction, j: &IndexSet) -> Vec<SmoothMap> {
    let indices: Vec<usize> = j.iter().collect();
    let mut maps = Vec::new();
    if indices.len() > 1 {
        let base = f.selection(indices[0]).expr().clone();
        for &i in &indices[1..] {
            let expr = Expr::Sub(
                Box::new(f.selection(i).expr().clone()),
                Box::new(base.clone()),
            );
            maps.push(SmoothMap::from_expr(expr, f.ambient_dim()));
        }
    }
    maps
}

/// Draw points lying on stratum `J` (exactly: active set equals `J`).
///
/// Attempt `k` uses stream `"strata.sample.<label>"` index `k`, so the result
/// is deterministic and shardable.
pub fn sample_stratum(
    f: &CsFunction,
    manifold: &Manifold,
    j: &IndexSet,
    count: usize,
    seed: u64,
) -> Result<Vec<DVector<f64>>> {
    let equations = stratum_equations(f, j);
    let stream = format!("strata.sample.{}", j.label());
    let (lower, upper) = manifold.bounds();
    let n = manifold.ambient_dim();
    let mut points = Vec::with_capacity(count);
    let limit = 100 * count.max(1);
    for attempt in 0..limit {
        if points.len() >= count {
            break;
        }
        let mut rng = rng_stream(seed, &stream, attempt as u64);
        let draw = DVector::from_fn(n, |i, _| rng.random_range(lower[i]..upper[i]));
        let Ok(x) = manifold.project_with(&equations, &draw) else {
            continue;
        };
        let Some(active) = skip_domain(f.active_set(&x))? else {
            continue;
        };
        if active.indices == *j {
            points.push(x);
        }
    }
    Ok(points)
}

/// Local PCA around `anchor`: sample the stratum inside a small ball, take
/// the k nearest neighbors, and look for a decisive eigen-gap.
fn estimate_dimension_at(
    f: &CsFunction,
    manifold: &Manifold,
    j: &IndexSet,
    anchor: &DVector<f64>,
    cfg: &CensusConfig,
    anchor_index: usize,
) -> Result<Option<(usize, f64)>> {
    let equations = stratum_equations(f, j);
    let n = manifold.ambient_dim();
    let h = cfg.pca_ball_radius;
    let stream = format!("strata.pca.{}", j.label());
    let mut local: Vec<DVector<f64>> = vec![anchor.clone()];
    let budget = 80 * cfg.pca_local_samples;
    for attempt in 0..budget {
        if local.len() > cfg.pca_local_samples {
            break;
        }
        let mut rng = rng_stream(
            cfg.seed,
            &stream,
            (anchor_index * budget + attempt) as u64,
        );
        let draw = DVector::from_fn(n, |i, _| anchor[i] + rng.random_range(-h..h));
        let Ok(x) = manifold.project_with(&equations, &draw) else {
            continue;
        };
        let Some(active) = skip_domain(f.active_set(&x))? else {
            continue;
        };
        if (&x - anchor).norm() <= h && active.indices == *j {
            local.push(x);
        }
    }
    if local.len() < cfg.knn + 1 {
        return Ok(None);
    }
    // k nearest neighbors of the anchor.
    let mut by_dist: Vec<(f64, usize)> = local
        .iter()
        .enumerate()
        .map(|(i, x)| ((x - anchor).norm(), i))
        .collect();
    by_dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let neighbors: Vec<&DVector<f64>> = by_dist
        .iter()
        .take(cfg.knn + 1)
        .map(|&(_, i)| &local[i])
        .collect();

    let mut mean = DVector::zeros(n);
    for p in &neighbors {
        mean += *p;
    }
    mean /= neighbors.len() as f64;
    let mut cov = DMatrix::zeros(n, n);
    for p in &neighbors {
        let d = *p - &mean;
        cov += &d * d.transpose();
    }
    cov /= neighbors.len() as f64;
    let mut eigen: Vec<f64> = cov.symmetric_eigen().eigenvalues.iter().cloned().collect();
    eigen.sort_by(|a, b| b.total_cmp(a));

    // A zero-dimensional stratum collapses every neighbor onto the anchor.
    if eigen[0] <= 1e-16 {
        return Ok(Some((0, 1e12)));
    }
    // First decisive gap scanning from the largest eigenvalue: deeper gaps
    // (curvature floor against projection noise) do not matter.
    for d in 0..n - 1 {
        let ratio = eigen[d] / eigen[d + 1].max(1e-300);
        if ratio >= cfg.eigen_gap_threshold {
            return Ok(Some((d + 1, ratio.min(1e12))));
        }
    }
    Ok(None)
}

/// Direction from a boundary-stratum point toward the interior of stratum
/// `to`, tangent to `to`'s defining equations.
fn frontier_direction(
    f: &CsFunction,
    manifold: &Manifold,
    x: &DVector<f64>,
    from: &IndexSet,
    to: &IndexSet,
) -> Result<DVector<f64>> {
    let n = manifold.ambient_dim();
    let mut raw = DVector::zeros(n);
    for i in to.iter() {
        raw += f.selection(i).gradient(x)? / to.len() as f64;
    }
    let dropped: Vec<usize> = from.iter().filter(|i| !to.contains(*i)).collect();
    for &i in &dropped {
        raw -= f.selection(i).gradient(x)? / dropped.len() as f64;
    }
    if f.selector() == Selector::Min {
        raw = -raw;
    }
    let basis = hat_tangent_basis(f, manifold, x, to)?;
    Ok(basis.project(&raw))
}

/// Perturb-and-project from stratum `from` toward stratum `to`; true when
/// the probe lands on `to`.
pub fn frontier_probe(
    f: &CsFunction,
    manifold: &Manifold,
    x: &DVector<f64>,
    from: &IndexSet,
    to: &IndexSet,
    step: f64,
) -> Result<bool> {
    let dir = frontier_direction(f, manifold, x, from, to)?;
    let norm = dir.norm();
    if norm < 1e-12 {
        return Ok(false);
    }
    let equations = stratum_equations(f, to);
    let mut scale = step;
    for _ in 0..4 {
        let start = x + (scale / norm) * &dir;
        if let Ok(moved) = manifold.project_with(&equations, &start) {
            if f.active_set(&moved)?.indices == *to {
                return Ok(true);
            }
        }
        scale *= 0.5;
    }
    Ok(false)
}

/// Build the stratum census: classify a whole-manifold sample, sample each
/// singular stratum directly, estimate dimensions by local PCA and record
/// frontier transitions.
pub fn stratum_census(
    f: &CsFunction,
    manifold: &Manifold,
    cfg: &CensusConfig,
) -> Result<StratumCensus> {
    let m = f.num_selections();
    let classify = manifold.sample_points(cfg.samples, cfg.seed)?;
    let mut per_stratum: BTreeMap<IndexSet, Vec<DVector<f64>>> = BTreeMap::new();
    let mut skeleton_counts = vec![0usize; m + 1];
    for x in classify {
        let j = f.stratum_of(&x)?;
        // X^i contains the points with |I_f| >= m - i + 1.
        for (i, count) in skeleton_counts.iter_mut().enumerate() {
            if j.len() + i > m {
                *count += 1;
            }
        }
        per_stratum.entry(j).or_default().push(x);
    }
    // Direct sampling of every candidate singular stratum.
    for j in IndexSet::nonempty_subsets(m) {
        if j.len() < 2 {
            continue;
        }
        let direct = sample_stratum(f, manifold, &j, cfg.stratum_samples, cfg.seed)?;
        if !direct.is_empty() {
            per_stratum.entry(j).or_default().extend(direct);
        }
    }

    let mut strata = Vec::new();
    for (j, points) in &per_stratum {
        let mut f_min = f64::INFINITY;
        let mut f_max = f64::NEG_INFINITY;
        for x in points {
            let v = f.value(x)?;
            f_min = f_min.min(v);
            f_max = f_max.max(v);
        }
        let expected_dim = manifold.manifold_dim() - (j.len() - 1);
        let mut anchors_tested = 0;
        let mut anchors_with_gap = 0;
        let mut dim_votes: BTreeMap<usize, usize> = BTreeMap::new();
        let mut min_gap: Option<f64> = None;
        if points.len() >= cfg.min_stratum_samples {
            let stride = (points.len() / cfg.anchors_per_stratum).max(1);
            for (anchor_index, anchor) in points
                .iter()
                .step_by(stride)
                .take(cfg.anchors_per_stratum)
                .enumerate()
            {
                anchors_tested += 1;
                if let Some((dim, gap)) =
                    estimate_dimension_at(f, manifold, j, anchor, cfg, anchor_index)?
                {
                    if gap >= cfg.eigen_gap_threshold {
                        anchors_with_gap += 1;
                        *dim_votes.entry(dim).or_insert(0) += 1;
                        min_gap = Some(min_gap.map_or(gap, |g: f64| g.min(gap)));
                    }
                }
            }
        }
        let estimated_dim = dim_votes
            .iter()
            .max_by_key(|(_, &count)| count)
            .map(|(&dim, _)| dim);
        strata.push(StratumInfo {
            stratum: j.clone(),
            sample_count: points.len(),
            f_min,
            f_max,
            expected_dim,
            estimated_dim,
            anchors_tested,
            anchors_with_gap,
            min_gap,
        });
    }
    strata.sort_by(|a, b| {
        a.stratum
            .len()
            .cmp(&b.stratum.len())
            .then_with(|| a.stratum.as_slice().cmp(b.stratum.as_slice()))
    });

    // Frontier observations: from each singular stratum toward each stratum
    // it contains in its closure relation.
    let mut frontier = Vec::new();
    for info in &strata {
        let from = &info.stratum;
        if from.len() < 2 {
            continue;
        }
        let Some(points) = per_stratum.get(from) else {
            continue;
        };
        for to in IndexSet::nonempty_subsets(m) {
            if to == *from || !to.is_subset_of(from) {
                continue;
            }
            let mut successes = 0;
            let probes = cfg.frontier_probes.min(points.len());
            for x in points.iter().take(probes) {
                if frontier_probe(f, manifold, x, from, &to, cfg.frontier_step)? {
                    successes += 1;
                }
            }
            if probes > 0 {
                frontier.push(FrontierObservation {
                    from: from.clone(),
                    to,
                    probes,
                    successes,
                });
            }
        }
    }

    Ok(StratumCensus {
        strata,
        skeleton_counts,
        frontier,
        classify_samples: cfg.samples,
    })
}

// ---------------------------------------------------------------------------
// Fibers
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct FiberConfig {
    /// Target number of accepted fiber points (an upper bound; acceptance
    /// saturates once the fiber is evenly covered).
    pub samples: usize,
    pub seed: u64,
    /// Graph radius as a multiple of the median nearest-neighbor distance.
    pub epsilon_factor: f64,
    /// Absolute override for the graph radius.
    pub epsilon_override: Option<f64>,
    /// Minimum-separation scale for the even-coverage thinning, relative to
    /// the pilot-derived spacing. Zero disables thinning.
    ///
    /// Component counts of an epsilon-graph are only stable across a window
    /// of epsilon when the cloud has no density holes, so accepted points
    /// keep a minimum pairwise distance and sampling continues until the
    /// fiber is saturated.
    pub min_separation_factor: f64,
    /// Projection attempts per requested sample.
    pub attempt_budget: usize,
}

impl Default for FiberConfig {
    fn default() -> Self {
        FiberConfig {
            samples: 2000,
            seed: 0,
            epsilon_factor: 3.0,
            epsilon_override: None,
            min_separation_factor: 1.0,
            attempt_budget: 30,
        }
    }
}

/// Sparse cell grid for fixed-radius neighbor queries in ambient dimension.
struct SpatialGrid {
    cell: f64,
    cells: std::collections::HashMap<u64, Vec<usize>>,
}

impl SpatialGrid {
    fn new(cell: f64) -> Self {
        SpatialGrid {
            cell,
            cells: std::collections::HashMap::new(),
        }
    }

    fn key_of(&self, x: &DVector<f64>) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        for v in x.iter() {
            let c = (v / self.cell).floor() as i64;
            for b in c.to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        }
        h
    }

    fn key_of_cell(&self, coords: &[i64]) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        for c in coords {
            for b in c.to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        }
        h
    }

    fn insert(&mut self, x: &DVector<f64>, index: usize) {
        let key = self.key_of(x);
        self.cells.entry(key).or_default().push(index);
    }

    /// Indices of stored points possibly within one cell radius of `x`
    /// (callers re-check true distances; hash collisions only add work).
    fn neighbor_candidates(&self, x: &DVector<f64>, out: &mut Vec<usize>) {
        self.neighbor_candidates_within(x, 1, out);
    }

    /// Candidates within `rings` cells of `x` in every coordinate.
    fn neighbor_candidates_within(&self, x: &DVector<f64>, rings: i64, out: &mut Vec<usize>) {
        out.clear();
        let n = x.len();
        let base: Vec<i64> = x.iter().map(|v| (v / self.cell).floor() as i64).collect();
        let mut offsets = vec![-rings; n];
        loop {
            let coords: Vec<i64> = base
                .iter()
                .zip(&offsets)
                .map(|(b, o)| b + o)
                .collect();
            if let Some(bucket) = self.cells.get(&self.key_of_cell(&coords)) {
                out.extend_from_slice(bucket);
            }
            // Advance the offset counter.
            let mut pos = 0;
            loop {
                if pos == n {
                    return;
                }
                offsets[pos] += 1;
                if offsets[pos] <= rings {
                    break;
                }
                offsets[pos] = -rings;
                pos += 1;
            }
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ComponentStability {
    pub factor: f64,
    pub components: usize,
}

/// A sampled fiber with its component census.
#[derive(Debug, Clone, Serialize)]
pub struct FiberCensus {
    pub level: f64,
    pub sample_count: usize,
    pub per_stratum_counts: Vec<(IndexSet, usize)>,
    pub components: usize,
    pub epsilon: f64,
    pub median_nn_distance: f64,
    /// Component counts at 2x, 3x and 4x the median NN distance.
    pub stability: Vec<ComponentStability>,
    /// `None` when no critical values were supplied for comparison.
    pub is_regular: Option<bool>,
    #[serde(skip)]
    pub points: Vec<DVector<f64>>,
    #[serde(skip)]
    pub point_strata: Vec<IndexSet>,
}

/// Sample the fiber `f = level` and count its connected components via an
/// epsilon-neighborhood graph.
///
/// `range` is the estimated value range of `f` (levels outside it are
/// rejected, which distinguishes a bad level from a sampling failure);
/// `critical_values`, when given, classifies the level as regular/critical.
pub fn fiber_census(
    f: &CsFunction,
    manifold: &Manifold,
    level: f64,
    range: (f64, f64),
    critical_values: Option<&[f64]>,
    cfg: &FiberConfig,
) -> Result<FiberCensus> {
    let range_tol = 1e-9 * (1.0 + range.0.abs().max(range.1.abs()));
    if level < range.0 - range_tol || level > range.1 + range_tol {
        return Err(Error::LevelOutOfRange {
            level,
            min: range.0,
            max: range.1,
        });
    }
    let n = manifold.ambient_dim();
    let (lower, upper) = manifold.bounds();
    let stream = format!("fiber.sample.{level}");
    let value_tol = 1e-9;
    let limit = cfg.attempt_budget.max(1) * cfg.samples.max(1);

    // `f_i = level` equations, one per selection, built once.
    let level_eqs: Vec<[SmoothMap; 1]> = (1..=f.num_selections())
        .map(|i| {
            [SmoothMap::from_expr(
                Expr::Sub(
                    Box::new(f.selection(i).expr().clone()),
                    Box::new(Expr::Const(level)),
                ),
                n,
            )]
        })
        .collect();

    // One projection attempt: guess the winning sheet at the raw draw, drive
    // it to the level along the manifold, reclassify, retarget once per
    // selection if the winner changed. `near` biases the draw into a small
    // box around an existing point, which fills coverage holes quickly.
    let try_draw = |attempt: usize, near: Option<(&DVector<f64>, f64)>| -> Result<Option<DVector<f64>>> {
        let mut rng = rng_stream(cfg.seed, &stream, attempt as u64);
        let draw = match near {
            Some((center, radius)) => DVector::from_fn(n, |i, _| {
                (center[i] + rng.random_range(-radius..radius)).clamp(lower[i], upper[i])
            }),
            None => DVector::from_fn(n, |i, _| rng.random_range(lower[i]..upper[i])),
        };
        let Ok(guess) = f.active_set(&draw) else {
            return Ok(None);
        };
        let mut target = guess.indices.as_slice()[0];
        let mut current = draw;
        for _ in 0..f.num_selections() {
            let Ok(x) = manifold.project_with(&level_eqs[target - 1], &current) else {
                return Ok(None);
            };
            let Some(value) = skip_domain(f.value(&x))? else {
                return Ok(None);
            };
            if (value - level).abs() <= value_tol {
                return Ok(Some(x));
            }
            let active = f.active_set(&x)?.indices.as_slice()[0];
            if active == target {
                return Ok(None);
            }
            target = active;
            current = x;
        }
        Ok(None)
    };

    // Pilot phase: raw accepted points fix the length scale of the fiber.
    let pilot_target = (cfg.samples / 10).clamp(200, 2000).min(cfg.samples);
    let mut pilot: Vec<DVector<f64>> = Vec::with_capacity(pilot_target);
    let mut attempt = 0;
    while pilot.len() < pilot_target && attempt < limit {
        if let Some(x) = try_draw(attempt, None)? {
            pilot.push(x);
        }
        attempt += 1;
    }
    if pilot.is_empty() {
        return Err(Error::SamplingExhausted {
            got: 0,
            want: cfg.samples,
            attempts: attempt,
        });
    }

    let mut points: Vec<DVector<f64>> = Vec::with_capacity(cfg.samples);
    if cfg.min_separation_factor > 0.0 && pilot.len() >= 10 && cfg.samples > pilot.len() {
        // Estimate the fiber volume from the pilot's median NN distance
        // (inverting the Poisson nearest-neighbor law), then choose the
        // separation radius whose saturated packing lands near the requested
        // count. Sampling continues past the count until acceptance stalls:
        // component counts of an epsilon-graph are only stable across an
        // epsilon window when the cloud has no coverage holes.
        let fiber_dim = manifold.manifold_dim().saturating_sub(1).max(1);
        let pilot_med = median_nn_distance(&pilot);
        let unit_ball = unit_ball_volume(fiber_dim);
        let volume_est =
            pilot.len() as f64 * unit_ball * pilot_med.powi(fiber_dim as i32) / 2f64.ln();
        let r_min = cfg.min_separation_factor
            * (volume_est / (1.37 * cfg.samples as f64)).powf(1.0 / fiber_dim as f64);
        let hard_cap = 3 * cfg.samples;
        let mut grid = SpatialGrid::new(r_min.max(1e-12));
        let mut candidates = Vec::new();
        let mut keep = |x: DVector<f64>, points: &mut Vec<DVector<f64>>, grid: &mut SpatialGrid| -> bool {
            grid.neighbor_candidates(&x, &mut candidates);
            if candidates
                .iter()
                .all(|&i| (&points[i] - &x).norm() > r_min)
            {
                grid.insert(&x, points.len());
                points.push(x);
                true
            } else {
                false
            }
        };
        for x in pilot {
            keep(x, &mut points, &mut grid);
        }
        // Alternate global draws with refills near kept points (holes are
        // adjacent to kept points, so refills saturate them quickly).
        let mut last_accept = attempt;
        while points.len() < hard_cap && attempt < limit {
            let stall_window = (points.len() / 2).max(5_000);
            if attempt - last_accept > stall_window {
                break;
            }
            let near = if attempt % 2 == 1 {
                let mut rng = rng_stream(cfg.seed, "fiber.refill", attempt as u64);
                let pick = rng.random_range(0..points.len());
                Some((points[pick].clone(), 2.5 * r_min))
            } else {
                None
            };
            if let Some(x) = try_draw(attempt, near.as_ref().map(|(c, r)| (c, *r)))? {
                if keep(x, &mut points, &mut grid) {
                    last_accept = attempt;
                }
            }
            attempt += 1;
        }
    } else {
        points = pilot;
        while points.len() < cfg.samples && attempt < limit {
            if let Some(x) = try_draw(attempt, None)? {
                points.push(x);
            }
            attempt += 1;
        }
    }

    let mut point_strata: Vec<IndexSet> = Vec::with_capacity(points.len());
    for x in &points {
        point_strata.push(f.stratum_of(x)?);
    }

    let mut counts: BTreeMap<IndexSet, usize> = BTreeMap::new();
    for j in &point_strata {
        *counts.entry(j.clone()).or_insert(0) += 1;
    }
    let median_nn = median_nn_distance(&points);
    let epsilon = cfg
        .epsilon_override
        .unwrap_or(cfg.epsilon_factor * median_nn);
    let components = count_components(&points, epsilon);
    let stability = [2.0, 3.0, 4.0]
        .iter()
        .map(|&factor| ComponentStability {
            factor,
            components: count_components(&points, factor * median_nn),
        })
        .collect();
    let is_regular =
        critical_values.map(|values| values.iter().all(|&cv| (cv - level).abs() > 1e-6));
    Ok(FiberCensus {
        level,
        sample_count: points.len(),
        per_stratum_counts: counts.into_iter().collect(),
        components,
        epsilon,
        median_nn_distance: median_nn,
        stability,
        is_regular,
        points,
        point_strata,
    })
}

/// Volume of the unit ball in `d` dimensions.
fn unit_ball_volume(d: usize) -> f64 {
    match d {
        0 => 1.0,
        1 => 2.0,
        2 => std::f64::consts::PI,
        _ => 2.0 * std::f64::consts::PI / d as f64 * unit_ball_volume(d - 2),
    }
}

/// Median of the nearest-neighbor distances of a point cloud.
///
/// Large clouds are handled through a cell grid scaled by a subsample
/// estimate; the ring search is exact, so the result matches the brute-force
/// answer.
pub fn median_nn_distance(points: &[DVector<f64>]) -> f64 {
    let n = points.len();
    if n < 2 {
        return 0.0;
    }
    if n <= 4000 {
        return median_nn_brute(points);
    }
    // Scale estimate from a strided subsample.
    let stride = n / 2000;
    let subsample: Vec<DVector<f64>> = points.iter().step_by(stride.max(1)).cloned().collect();
    let cell = median_nn_brute(&subsample).max(1e-12);
    let mut grid = SpatialGrid::new(cell);
    for (i, x) in points.iter().enumerate() {
        grid.insert(x, i);
    }
    let mut nn: Vec<f64> = Vec::with_capacity(n);
    let mut candidates = Vec::new();
    for (i, p) in points.iter().enumerate() {
        let mut rings = 1;
        let best = loop {
            grid.neighbor_candidates_within(p, rings, &mut candidates);
            let mut best = f64::INFINITY;
            for &k in &candidates {
                if k != i {
                    best = best.min((&points[k] - p).norm_squared());
                }
            }
            let best = best.sqrt();
            // A neighbor inside `rings` cells is certainly the nearest once
            // it is closer than the guaranteed search radius.
            if best <= rings as f64 * cell {
                break best;
            }
            rings += 1;
        };
        nn.push(best);
    }
    nn.sort_by(f64::total_cmp);
    nn[nn.len() / 2]
}

fn median_nn_brute(points: &[DVector<f64>]) -> f64 {
    let mut nn: Vec<f64> = Vec::with_capacity(points.len());
    for (i, p) in points.iter().enumerate() {
        let mut best = f64::INFINITY;
        for (k, q) in points.iter().enumerate() {
            if i != k {
                best = best.min((p - q).norm_squared());
            }
        }
        nn.push(best.sqrt());
    }
    nn.sort_by(f64::total_cmp);
    nn[nn.len() / 2]
}

/// Connected components of the epsilon-neighborhood graph (union-find over
/// a cell grid, so large clouds stay cheap).
pub fn count_components(points: &[DVector<f64>], epsilon: f64) -> usize {
    let n = points.len();
    if n == 0 {
        return 0;
    }
    if epsilon <= 0.0 {
        return n;
    }
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    let mut parent: Vec<usize> = (0..n).collect();
    let mut grid = SpatialGrid::new(epsilon);
    for (i, x) in points.iter().enumerate() {
        grid.insert(x, i);
    }
    let eps2 = epsilon * epsilon;
    let mut candidates = Vec::new();
    for (i, x) in points.iter().enumerate() {
        grid.neighbor_candidates(x, &mut candidates);
        for &k in &candidates {
            if k < i && (&points[k] - x).norm_squared() <= eps2 {
                let (ri, rk) = (find(&mut parent, i), find(&mut parent, k));
                if ri != rk {
                    parent[ri.max(rk)] = ri.min(rk);
                }
            }
        }
    }
    (0..n).filter(|&i| find(&mut parent, i) == i).count()
}

// ---------------------------------------------------------------------------
// Trisection check
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct ChecklistItem {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Verdict of the critical-point-profile check that certifies an induced
/// trisection.
#[derive(Debug, Clone, Serialize)]
pub struct TrisectionVerdict {
    pub applies: bool,
    pub g: Option<usize>,
    pub k: Option<usize>,
    pub checklist: Vec<ChecklistItem>,
    /// The verdict is evidence under a search budget, not a global proof.
    pub evidence: String,
}

fn restriction_index_histogram(
    records: &[CriticalPointRecord],
    j: &IndexSet,
) -> BTreeMap<usize, usize> {
    let mut hist = BTreeMap::new();
    for r in records.iter().filter(|r| r.active == *j) {
        if let Some(m_param) = r.nondegeneracy.quadratic_index {
            *hist.entry(m_param).or_insert(0) += 1;
        }
    }
    hist
}

fn push_check(
    checklist: &mut Vec<ChecklistItem>,
    applies: &mut bool,
    name: &str,
    passed: bool,
    detail: String,
) {
    checklist.push(ChecklistItem {
        name: name.to_string(),
        passed,
        detail,
    });
    *applies &= passed;
}

/// Check the exact per-stratum critical-point profile that makes the three
/// closed regular strata a trisection of a 4-manifold.
///
/// The profile is stated for restrictions of the selection to the strata;
/// with a min selector the dual profile (indices reflected through the
/// stratum dimension) certifies the same decomposition via the negated
/// selection.
pub fn trisection_check(
    records: &[CriticalPointRecord],
    flags: &[DegenerateSetFlag],
    manifold_dim: usize,
    num_selections: usize,
    selector: Selector,
    starts_per_subset: usize,
) -> TrisectionVerdict {
    let mut checklist = Vec::new();
    let mut applies = true;

    push_check(
        &mut checklist,
        &mut applies,
        "manifold_dimension",
        manifold_dim == 4,
        format!("ambient manifold dimension is {manifold_dim}, need 4"),
    );
    push_check(
        &mut checklist,
        &mut applies,
        "three_selections",
        num_selections == 3,
        format!("{num_selections} selections, need 3"),
    );
    push_check(
        &mut checklist,
        &mut applies,
        "no_degenerate_sets",
        flags.is_empty(),
        format!("{} degenerate-set flags", flags.len()),
    );
    let degenerate = records.iter().filter(|r| !r.is_nondegenerate()).count();
    push_check(
        &mut checklist,
        &mut applies,
        "all_records_nondegenerate",
        degenerate == 0,
        format!("{degenerate} degenerate records"),
    );
    if !applies {
        return TrisectionVerdict {
            applies: false,
            g: None,
            k: None,
            checklist,
            evidence: evidence_note(starts_per_subset),
        };
    }

    // Expected restriction-index profile per stratum kind.
    let (reg_single, reg_counted) = match selector {
        Selector::Max => (4usize, 3usize),
        Selector::Min => (0, 1),
    };
    let (pair_single, pair_counted) = match selector {
        Selector::Max => (3usize, 2usize),
        Selector::Min => (0, 1),
    };

    let mut k_values = Vec::new();
    for i in 1..=3 {
        let j = IndexSet::singleton(i);
        let hist = restriction_index_histogram(records, &j);
        let singles = hist.get(&reg_single).copied().unwrap_or(0);
        let counted = hist.get(&reg_counted).copied().unwrap_or(0);
        let extras: usize = hist
            .iter()
            .filter(|(&idx, _)| idx != reg_single && idx != reg_counted)
            .map(|(_, &c)| c)
            .sum();
        let ok = singles == 1 && extras == 0;
        push_check(
            &mut checklist,
            &mut applies,
            &format!("regular_stratum_{i}_profile"),
            ok,
            format!(
                "indices {hist:?}: need one of index {reg_single}, k of index {reg_counted}, none other"
            ),
        );
        k_values.push(counted);
    }
    let k_consistent = k_values.windows(2).all(|w| w[0] == w[1]);
    push_check(
        &mut checklist,
        &mut applies,
        "k_agreement",
        k_consistent,
        format!("index-{reg_counted} counts per regular stratum: {k_values:?}"),
    );

    let mut g_values = Vec::new();
    for (a, b) in [(1, 2), (1, 3), (2, 3)] {
        let j = IndexSet::new(vec![a, b]);
        let hist = restriction_index_histogram(records, &j);
        let singles = hist.get(&pair_single).copied().unwrap_or(0);
        let counted = hist.get(&pair_counted).copied().unwrap_or(0);
        let extras: usize = hist
            .iter()
            .filter(|(&idx, _)| idx != pair_single && idx != pair_counted)
            .map(|(_, &c)| c)
            .sum();
        let ok = singles == 1 && extras == 0;
        push_check(
            &mut checklist,
            &mut applies,
            &format!("pair_stratum_{a}{b}_profile"),
            ok,
            format!(
                "indices {hist:?}: need one of index {pair_single}, g of index {pair_counted}, none other"
            ),
        );
        g_values.push(counted);
    }
    let g_consistent = g_values.windows(2).all(|w| w[0] == w[1]);
    push_check(
        &mut checklist,
        &mut applies,
        "g_agreement",
        g_consistent,
        format!("index-{pair_counted} counts per pair stratum: {g_values:?}"),
    );

    let (g, k) = (g_values[0], k_values[0]);
    if applies {
        push_check(
            &mut checklist,
            &mut applies,
            "k_at_most_g",
            k <= g,
            format!("(g, k) = ({g}, {k})"),
        );
    }
    TrisectionVerdict {
        applies,
        g: applies.then_some(g),
        k: applies.then_some(k),
        checklist,
        evidence: evidence_note(starts_per_subset),
    }
}

fn evidence_note(starts_per_subset: usize) -> String {
    format!(
        "critical-point profile verified against multistart search with {starts_per_subset} \
         starts per active set; absence of further critical points is not certified globally"
    )
}

// ---------------------------------------------------------------------------
// Handle census
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct HandleCensusEntry {
    pub kind: HandleKind,
    pub total_index: usize,
    pub count: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct TemplateComparison {
    pub g: usize,
    pub k: usize,
    pub matches: bool,
    pub mismatches: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SymmetryVerdict {
    pub applicable: bool,
    pub order_three: bool,
    pub detail: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct HandleCensus {
    pub counts: Vec<HandleCensusEntry>,
    pub template: Option<TemplateComparison>,
    pub symmetry: SymmetryVerdict,
}

/// Count handles per (kind, index), compare against the order-three template
/// when a `(g, k)` verdict is available, and judge the triple symmetry.
///
/// The template is stated for the max selector; a min selector builds the
/// same decomposition from the other end, so its handles follow the
/// index-reflected template.
pub fn handle_census(
    records: &[CriticalPointRecord],
    selector: Selector,
    trisection: Option<(usize, usize)>,
) -> HandleCensus {
    let mut counts: BTreeMap<(HandleKind, usize), usize> = BTreeMap::new();
    for r in records {
        if let Some(handle) = &r.handle {
            *counts
                .entry((handle.kind, handle.total_index))
                .or_insert(0) += 1;
        }
    }
    let count_entries: Vec<HandleCensusEntry> = counts
        .iter()
        .map(|(&(kind, total_index), &count)| HandleCensusEntry {
            kind,
            total_index,
            count,
        })
        .collect();

    let template = trisection.map(|(g, k)| {
        let reflect = |idx: usize| match selector {
            Selector::Max => idx,
            Selector::Min => 4 - idx,
        };
        let mut expected: BTreeMap<(HandleKind, usize), usize> = BTreeMap::new();
        expected.insert((HandleKind::Trisected, reflect(0)), 1);
        if g > 0 {
            expected.insert((HandleKind::Trisected, reflect(1)), 2 * g);
            expected.insert((HandleKind::Bisected, reflect(2)), 3 * g);
        }
        expected.insert((HandleKind::Trisected, reflect(2)), 1);
        expected.insert((HandleKind::Bisected, reflect(3)), 3);
        if k > 0 {
            expected.insert((HandleKind::Smooth, reflect(3)), 3 * k);
        }
        expected.insert((HandleKind::Smooth, reflect(4)), 3);
        let mut mismatches = Vec::new();
        for (&(kind, idx), &want) in &expected {
            let got = counts.get(&(kind, idx)).copied().unwrap_or(0);
            if got != want {
                mismatches.push(format!(
                    "{} index-{idx}: have {got}, template wants {want}",
                    kind.name()
                ));
            }
        }
        for (&(kind, idx), &got) in &counts {
            if !expected.contains_key(&(kind, idx)) {
                mismatches.push(format!(
                    "{} index-{idx}: have {got}, template wants none",
                    kind.name()
                ));
            }
        }
        TemplateComparison {
            g,
            k,
            matches: mismatches.is_empty(),
            mismatches,
        }
    });

    // Order-three symmetry: smooth and bisected handles must split into
    // balanced orbits across the three regular strata and the three pair
    // strata per index.
    let symmetry = if records.is_empty() {
        SymmetryVerdict {
            applicable: false,
            order_three: false,
            detail: vec!["no records".into()],
        }
    } else {
        let mut per_stratum: BTreeMap<(IndexSet, usize), usize> = BTreeMap::new();
        for r in records {
            if let Some(handle) = &r.handle {
                if handle.kind != HandleKind::Trisected {
                    *per_stratum
                        .entry((r.active.clone(), handle.total_index))
                        .or_insert(0) += 1;
                }
            }
        }
        let mut detail = Vec::new();
        let mut ok = true;
        let mut grouped: BTreeMap<(usize, usize), Vec<(IndexSet, usize)>> = BTreeMap::new();
        for ((j, idx), count) in &per_stratum {
            grouped
                .entry((j.len(), *idx))
                .or_default()
                .push((j.clone(), *count));
        }
        for ((size, idx), members) in &grouped {
            let all_equal = members.windows(2).all(|w| w[0].1 == w[1].1);
            let full_orbit = members.len() == 3;
            if !(all_equal && full_orbit) {
                ok = false;
                let labels: Vec<String> = members
                    .iter()
                    .map(|(j, c)| format!("{j}:{c}"))
                    .collect();
                detail.push(format!(
                    "handles of index {idx} on size-{size} strata are not a balanced orbit: {}",
                    labels.join(", ")
                ));
            }
        }
        if ok {
            detail.push("bisected and smooth handles form balanced orbits of three".into());
        }
        SymmetryVerdict {
            applicable: true,
            order_three: ok,
            detail,
        }
    };

    HandleCensus {
        counts: count_entries,
        template,
        symmetry,
    }
}
