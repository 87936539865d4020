//! Whole-scenario analysis: orchestrates validation, census, search and the
//! topological verdicts into one machine-readable report, plus the
//! derivative-check table backing the CLI.
//!
//! Reports serialize with a fixed field order and no maps keyed by floats,
//! so two runs at the same seed produce byte-identical JSON.

use nalgebra::DVector;
use serde::Serialize;

use crate::csfun::{CsValidation, IndexSet, Selector};
use crate::error::{Error, Result};
use crate::expr::SmoothMap;
use crate::geometry::rng_stream;
use crate::nonsmooth::{HandleKind, Nd1Failure};
use crate::scenario::Scenario;
use crate::search::{
    critical_values, find_critical_points, CriticalPointRecord, DegenerateSetFlag,
    SearchDiagnostics,
};
use crate::strata::{
    handle_census, stratum_census, trisection_check, FiberCensus, HandleCensus, StratumCensus,
    TrisectionVerdict,
};
use rand::Rng;

/// Scenario header echoed into the report.
#[derive(Debug, Clone, Serialize)]
pub struct ScenarioSummary {
    pub name: String,
    pub dimension: usize,
    pub manifold_dim: usize,
    pub selector: Selector,
    pub selections: Vec<String>,
    pub constraints: Vec<String>,
    pub seed: u64,
}

/// JSON shape of one critical point.
#[derive(Debug, Clone, Serialize)]
pub struct CriticalPointReport {
    pub point: Vec<f64>,
    pub stratum: IndexSet,
    pub value: f64,
    pub weights: Vec<f64>,
    pub multipliers: Vec<f64>,
    pub residual: f64,
    pub cluster_size: usize,
    pub nd1_ok: bool,
    pub nd2_ok: bool,
    pub quadratic_index: Option<usize>,
    pub hat_tangent_dim: usize,
    pub restricted_hessian_eigenvalues: Vec<f64>,
    pub nd1_failures: Vec<Nd1Failure>,
    pub handle: Option<HandleReport>,
}

#[derive(Debug, Clone, Serialize)]
pub struct HandleReport {
    pub kind: HandleKind,
    pub total_index: usize,
    pub k_param: usize,
    pub m_param: usize,
}

impl CriticalPointReport {
    fn from_record(r: &CriticalPointRecord) -> Self {
        CriticalPointReport {
            point: r.x.iter().cloned().collect(),
            stratum: r.active.clone(),
            value: r.value,
            weights: r.weights.lambda.clone(),
            multipliers: r.multipliers.iter().cloned().collect(),
            residual: r.residual,
            cluster_size: r.cluster_size,
            nd1_ok: r.nondegeneracy.nd1_ok,
            nd2_ok: r.nondegeneracy.nd2_ok,
            quadratic_index: r.nondegeneracy.quadratic_index,
            hat_tangent_dim: r.nondegeneracy.hat_tangent_dim,
            restricted_hessian_eigenvalues: r
                .nondegeneracy
                .restricted_hessian_eigenvalues
                .clone(),
            nd1_failures: r.nondegeneracy.nd1_failures.clone(),
            handle: r.handle.as_ref().map(|h| HandleReport {
                kind: h.kind,
                total_index: h.total_index,
                k_param: h.k_param,
                m_param: h.m_param,
            }),
        }
    }
}

/// The full analysis output.
#[derive(Debug, Clone, Serialize)]
pub struct AnalysisReport {
    pub scenario: ScenarioSummary,
    pub validation: CsValidation,
    pub census: StratumCensus,
    pub critical_points: Vec<CriticalPointReport>,
    pub critical_values: Vec<f64>,
    pub degenerate_sets: Vec<DegenerateSetFlag>,
    pub handle_census: HandleCensus,
    pub trisection: TrisectionVerdict,
    /// True when every located critical point is nondegenerate and no
    /// non-isolated critical set was flagged.
    pub cs_morse: bool,
    pub diagnostics: SearchDiagnostics,
}

impl AnalysisReport {
    /// Canonical JSON bytes of the report (pretty, trailing newline).
    pub fn to_json(&self) -> String {
        let mut text =
            serde_json::to_string_pretty(self).expect("report serialization cannot fail");
        text.push('\n');
        text
    }
}

/// Run the full pipeline on a validated scenario.
///
/// `seed` overrides the scenario seed when given (the CLI's `--seed` flag).
/// Validation failures are errors; the CLI maps them to exit code 2, and
/// internal-consistency failures to exit code 3.
pub fn analyze(scenario: &Scenario, seed: Option<u64>) -> Result<AnalysisReport> {
    let seed = seed.unwrap_or(scenario.seed);
    let (f, manifold) = scenario.build()?;

    let validation = f.validate_cs(&manifold, scenario.validation_probes, seed)?;
    if !validation.is_valid() {
        return Err(Error::Scenario(format!(
            "selection is not a valid continuous-selection function: {} affine-independence \
             violations at {} probes",
            validation.violations.len(),
            validation.probes
        )));
    }

    let census = stratum_census(&f, &manifold, &scenario.census_config(seed))?;
    let search_cfg = scenario.search_config(seed);
    let outcome = find_critical_points(&f, &manifold, &search_cfg)?;
    let values = critical_values(&outcome.records, &outcome.degenerate_flags);
    let trisection = trisection_check(
        &outcome.records,
        &outcome.degenerate_flags,
        manifold.manifold_dim(),
        f.num_selections(),
        f.selector(),
        search_cfg.starts_per_subset,
    );
    let handles = handle_census(
        &outcome.records,
        f.selector(),
        trisection.g.zip(trisection.k),
    );
    let cs_morse = outcome.degenerate_flags.is_empty()
        && outcome.records.iter().all(|r| r.is_nondegenerate());

    Ok(AnalysisReport {
        scenario: ScenarioSummary {
            name: scenario.name.clone(),
            dimension: scenario.dimension,
            manifold_dim: manifold.manifold_dim(),
            selector: scenario.selector,
            selections: scenario.selections.clone(),
            constraints: scenario.constraints.clone(),
            seed,
        },
        validation,
        census,
        critical_points: outcome
            .records
            .iter()
            .map(CriticalPointReport::from_record)
            .collect(),
        critical_values: values,
        degenerate_sets: outcome.degenerate_flags,
        handle_census: handles,
        trisection,
        cs_morse,
        diagnostics: outcome.diagnostics,
    })
}

/// Fiber summary as emitted by the fibers command.
#[derive(Debug, Clone, Serialize)]
pub struct FiberSummary {
    pub level: f64,
    pub sample_count: usize,
    pub components: usize,
    pub epsilon: f64,
    pub median_nn_distance: f64,
    pub stability: Vec<(f64, usize)>,
    pub is_regular: Option<bool>,
    pub per_stratum_counts: Vec<(String, usize)>,
}

impl FiberSummary {
    pub fn from_census(census: &FiberCensus) -> Self {
        FiberSummary {
            level: census.level,
            sample_count: census.sample_count,
            components: census.components,
            epsilon: census.epsilon,
            median_nn_distance: census.median_nn_distance,
            stability: census
                .stability
                .iter()
                .map(|s| (s.factor, s.components))
                .collect(),
            is_regular: census.is_regular,
            per_stratum_counts: census
                .per_stratum_counts
                .iter()
                .map(|(j, c)| (j.label(), *c))
                .collect(),
        }
    }
}

/// CSV point cloud of a sampled fiber: `x1..xn`, dash-joined stratum label,
/// level.
pub fn fiber_csv(census: &FiberCensus, dimension: usize) -> String {
    let mut out = String::new();
    for i in 1..=dimension {
        out.push_str(&format!("x{i},"));
    }
    out.push_str("stratum,level\n");
    for (x, stratum) in census.points.iter().zip(&census.point_strata) {
        for v in x.iter() {
            out.push_str(&format!("{v},"));
        }
        out.push_str(&format!("{},{}\n", stratum.label(), census.level));
    }
    out
}

/// Place `count` levels at midpoints of the regular intervals between
/// consecutive critical values, allocating proportionally to interval length.
pub fn grid_levels(critical_values: &[f64], count: usize) -> Vec<f64> {
    if critical_values.len() < 2 || count == 0 {
        return Vec::new();
    }
    let intervals: Vec<(f64, f64)> = critical_values
        .windows(2)
        .map(|w| (w[0], w[1]))
        .filter(|(a, b)| b - a > 1e-9)
        .collect();
    if intervals.is_empty() {
        return Vec::new();
    }
    let total: f64 = intervals.iter().map(|(a, b)| b - a).sum();
    // Largest-remainder allocation with at least the exact total.
    let mut alloc: Vec<usize> = intervals
        .iter()
        .map(|(a, b)| ((b - a) / total * count as f64).floor() as usize)
        .collect();
    let mut assigned: usize = alloc.iter().sum();
    let mut remainders: Vec<(f64, usize)> = intervals
        .iter()
        .enumerate()
        .map(|(i, (a, b))| {
            let exact = (b - a) / total * count as f64;
            (exact - exact.floor(), i)
        })
        .collect();
    remainders.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));
    let mut cursor = 0;
    while assigned < count {
        alloc[remainders[cursor % remainders.len()].1] += 1;
        assigned += 1;
        cursor += 1;
    }
    let mut levels = Vec::with_capacity(count);
    for ((a, b), n) in intervals.iter().zip(alloc) {
        for j in 0..n {
            levels.push(a + (b - a) * (j as f64 + 0.5) / n as f64);
        }
    }
    levels.sort_by(f64::total_cmp);
    levels
}

// ---------------------------------------------------------------------------
// Derivative check
// ---------------------------------------------------------------------------

/// One row of the derivative-check table.
#[derive(Debug, Clone, Serialize)]
pub struct DerivativeCheckRow {
    pub expression: String,
    pub points_tested: usize,
    pub max_rel_gradient_error: f64,
    pub max_rel_hessian_error: f64,
    pub pass: bool,
    /// Central differences left the domain somewhere and one-sided steps
    /// were used instead.
    pub step_clipped: bool,
}

/// Compare evaluated gradients and Hessians against central finite
/// differences at sampled box points. Gradient steps use 1e-5; Hessian steps
/// use 2e-4 (the larger step keeps the difference quotient above roundoff).
/// Relative errors are measured against `max(1, scale)` of the compared
/// object.
///
/// Near a domain edge the quotient itself becomes unreliable, so every
/// estimate is cross-checked at half the step; entries where the two
/// disagree (or where a stepped point leaves the domain and a one-sided
/// quotient had to be used) are clipped out of the comparison and the row is
/// marked, matching the contract "pass with a warning on step clipping".
pub fn derivative_check(
    map: &SmoothMap,
    lower: &[f64],
    upper: &[f64],
    points: usize,
    seed: u64,
    tol: f64,
) -> Result<DerivativeCheckRow> {
    let n = map.dim();
    let grad_step = 1e-5;
    let hess_step = 2e-4;
    let mut max_grad_err = 0.0f64;
    let mut max_hess_err = 0.0f64;
    let mut tested = 0;
    let mut clipped = false;
    let mut attempt = 0u64;
    while tested < points && attempt < 50 * points as u64 {
        let mut rng = rng_stream(seed, "derivcheck", attempt);
        attempt += 1;
        let x = DVector::from_fn(n, |i, _| rng.random_range(lower[i]..upper[i]));
        let Ok(jet) = map.jet2(&x) else {
            continue;
        };
        tested += 1;

        let value_at = |x: &DVector<f64>| map.value(x);
        let grad_scale = jet.gradient.amax().max(1.0);
        for i in 0..n {
            let full = central_difference(&value_at, &x, i, grad_step);
            let half = central_difference(&value_at, &x, i, grad_step / 2.0);
            match (full, half) {
                (Some((fd1, c1)), Some((fd2, c2))) => {
                    if c1 || c2 || (fd1 - fd2).abs() / grad_scale > 0.5 * tol {
                        clipped = true;
                        continue;
                    }
                    max_grad_err = max_grad_err.max((jet.gradient[i] - fd2).abs() / grad_scale);
                }
                _ => clipped = true,
            }
        }
        let hess_scale = jet.hessian.amax().max(1.0);
        for i in 0..n {
            for k in i..n {
                let full = second_difference(&value_at, &x, i, k, hess_step);
                let half = second_difference(&value_at, &x, i, k, hess_step / 2.0);
                match (full, half) {
                    (Some(fd1), Some(fd2)) => {
                        if (fd1 - fd2).abs() / hess_scale > 0.5 * tol {
                            clipped = true;
                            continue;
                        }
                        max_hess_err =
                            max_hess_err.max((jet.hessian[(i, k)] - fd2).abs() / hess_scale);
                    }
                    _ => clipped = true,
                }
            }
        }
    }
    if tested == 0 {
        return Err(Error::Scenario(format!(
            "no in-domain points found for `{}`",
            map.src()
        )));
    }
    Ok(DerivativeCheckRow {
        expression: map.src().to_string(),
        points_tested: tested,
        max_rel_gradient_error: max_grad_err,
        max_rel_hessian_error: max_hess_err,
        pass: max_grad_err <= tol && max_hess_err <= tol,
        step_clipped: clipped,
    })
}

/// Central difference with a one-sided fallback when a stepped point leaves
/// the domain; returns the estimate and whether it fell back.
fn central_difference<F>(value: &F, x: &DVector<f64>, i: usize, h: f64) -> Option<(f64, bool)>
where
    F: Fn(&DVector<f64>) -> Result<f64>,
{
    let mut plus = x.clone();
    plus[i] += h;
    let mut minus = x.clone();
    minus[i] -= h;
    match (value(&plus), value(&minus)) {
        (Ok(fp), Ok(fm)) => Some(((fp - fm) / (2.0 * h), false)),
        (Ok(fp), Err(_)) => {
            // One-sided: (f(x+h) - f(x)) / h.
            let f0 = value(x).ok()?;
            Some(((fp - f0) / h, true))
        }
        (Err(_), Ok(fm)) => {
            let f0 = value(x).ok()?;
            Some(((f0 - fm) / h, true))
        }
        (Err(_), Err(_)) => None,
    }
}

fn second_difference<F>(value: &F, x: &DVector<f64>, i: usize, k: usize, h: f64) -> Option<f64>
where
    F: Fn(&DVector<f64>) -> Result<f64>,
{
    if i == k {
        let f0 = value(x).ok()?;
        let mut plus = x.clone();
        plus[i] += h;
        let mut minus = x.clone();
        minus[i] -= h;
        let fp = value(&plus).ok()?;
        let fm = value(&minus).ok()?;
        Some((fp - 2.0 * f0 + fm) / (h * h))
    } else {
        let mut pp = x.clone();
        pp[i] += h;
        pp[k] += h;
        let mut pm = x.clone();
        pm[i] += h;
        pm[k] -= h;
        let mut mp = x.clone();
        mp[i] -= h;
        mp[k] += h;
        let mut mm = x.clone();
        mm[i] -= h;
        mm[k] -= h;
        let fpp = value(&pp).ok()?;
        let fpm = value(&pm).ok()?;
        let fmp = value(&mp).ok()?;
        let fmm = value(&mm).ok()?;
        Some((fpp - fpm - fmp + fmm) / (4.0 * h * h))
    }
}

/// JSON Schema for the analysis report, shipped next to every `report.json`.
pub const REPORT_SCHEMA: &str = include_str!("report_schema.json");
