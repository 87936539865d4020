//! Continuous selections `f = max{f_1..f_m}` (or `min`) of smooth fields:
//! values, active index sets, stratum membership and validation of the
//! affine-independence condition on active gradients.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::SmoothMap;
use crate::geometry::{numerical_rank, Manifold};

/// Default absolute tolerance deciding which selections are active.
pub const DEFAULT_ACTIVE_TOL: f64 = 1e-8;

/// Which selection wins.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Selector {
    Max,
    Min,
}

impl fmt::Display for Selector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Selector::Max => write!(f, "max"),
            Selector::Min => write!(f, "min"),
        }
    }
}

/// Sorted set of selection indices, one-based as in reports (`{1..m}`).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(transparent)]
pub struct IndexSet(Vec<usize>);

impl IndexSet {
    pub fn new(mut indices: Vec<usize>) -> Self {
        indices.sort_unstable();
        indices.dedup();
        IndexSet(indices)
    }

    pub fn singleton(i: usize) -> Self {
        IndexSet(vec![i])
    }

    /// All nonempty subsets of `{1..m}`, ordered by size then lexicographic.
    pub fn nonempty_subsets(m: usize) -> Vec<IndexSet> {
        let mut subsets: Vec<IndexSet> = (1u32..(1 << m))
            .map(|mask| {
                IndexSet((1..=m).filter(|i| mask & (1 << (i - 1)) != 0).collect())
            })
            .collect();
        subsets.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.0.cmp(&b.0)));
        subsets
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.0.binary_search(&i).is_ok()
    }

    pub fn is_subset_of(&self, other: &IndexSet) -> bool {
        self.0.iter().all(|i| other.contains(*i))
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().copied()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    /// Dash-joined label, e.g. `1-2-3`, used in CSV exports.
    pub fn label(&self) -> String {
        self.0
            .iter()
            .map(|i| i.to_string())
            .collect::<Vec<_>>()
            .join("-")
    }
}

impl fmt::Display for IndexSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (pos, i) in self.0.iter().enumerate() {
            if pos > 0 {
                write!(f, ",")?;
            }
            write!(f, "{i}")?;
        }
        write!(f, "}}")
    }
}

/// Active selections at a query point.
#[derive(Debug, Clone)]
pub struct ActiveSet {
    /// Indices within `active_tol` of the selected value.
    pub indices: IndexSet,
    /// All m selection values at the point.
    pub values: Vec<f64>,
    /// Smallest margin `|f(x) - f_j(x)|` over inactive `j`; `None` when every
    /// selection is active.
    pub witness_gap: Option<f64>,
    /// True when some inactive margin is within 10x of the tolerance, so the
    /// classification is close to a tie.
    pub ambiguous: bool,
}

/// One probe that violated affine independence during validation.
#[derive(Debug, Clone, Serialize)]
pub struct CsViolation {
    pub point: Vec<f64>,
    pub active: IndexSet,
    pub rank: usize,
    pub expected_rank: usize,
}

/// Outcome of sampling-based validation of the CS condition.
#[derive(Debug, Clone, Serialize)]
pub struct CsValidation {
    pub probes: usize,
    /// Probes where at least two selections were active.
    pub multi_active_probes: usize,
    pub violations: Vec<CsViolation>,
    /// Worst (largest) condition number of the gradient-difference matrix
    /// observed over valid probes; `None` if no multi-active probe was seen.
    pub worst_conditioning: Option<f64>,
}

impl CsValidation {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// A continuous selection of smooth fields under a max or min selector.
#[derive(Debug, Clone)]
pub struct CsFunction {
    selections: Vec<SmoothMap>,
    selector: Selector,
    active_tol: f64,
}

impl CsFunction {
    pub fn new(selections: Vec<SmoothMap>, selector: Selector) -> Result<Self> {
        if selections.is_empty() {
            return Err(Error::Scenario("need at least one selection".into()));
        }
        let dim = selections[0].dim();
        if selections.iter().any(|s| s.dim() != dim) {
            return Err(Error::Scenario(
                "selections must share the ambient dimension".into(),
            ));
        }
        Ok(CsFunction {
            selections,
            selector,
            active_tol: DEFAULT_ACTIVE_TOL,
        })
    }

    pub fn with_active_tol(mut self, tol: f64) -> Self {
        self.active_tol = tol;
        self
    }

    pub fn selections(&self) -> &[SmoothMap] {
        &self.selections
    }

    pub fn selection(&self, index: usize) -> &SmoothMap {
        &self.selections[index - 1]
    }

    pub fn num_selections(&self) -> usize {
        self.selections.len()
    }

    pub fn selector(&self) -> Selector {
        self.selector
    }

    pub fn active_tol(&self) -> f64 {
        self.active_tol
    }

    pub fn ambient_dim(&self) -> usize {
        self.selections[0].dim()
    }

    fn select(&self, values: &[f64]) -> f64 {
        match self.selector {
            Selector::Max => values.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            Selector::Min => values.iter().cloned().fold(f64::INFINITY, f64::min),
        }
    }

    /// All selection values at `x`.
    pub fn selection_values(&self, x: &DVector<f64>) -> Result<Vec<f64>> {
        self.selections.iter().map(|s| s.value(x)).collect()
    }

    /// `max` (resp. `min`) of the selection values.
    pub fn value(&self, x: &DVector<f64>) -> Result<f64> {
        Ok(self.select(&self.selection_values(x)?))
    }

    /// Active index set at `x` with the given tolerance.
    ///
    /// For max/min selections every active selection is essentially active
    /// (its coincidence set has interior arbitrarily close by), so this one
    /// computation serves both notions.
    pub fn active_set_with_tol(&self, x: &DVector<f64>, tol: f64) -> Result<ActiveSet> {
        let values = self.selection_values(x)?;
        let selected = self.select(&values);
        let mut indices = Vec::new();
        let mut witness_gap: Option<f64> = None;
        for (i, &v) in values.iter().enumerate() {
            let margin = (selected - v).abs();
            if margin <= tol {
                indices.push(i + 1);
            } else {
                witness_gap = Some(witness_gap.map_or(margin, |g: f64| g.min(margin)));
            }
        }
        let ambiguous = witness_gap.is_some_and(|g| g <= 10.0 * tol);
        Ok(ActiveSet {
            indices: IndexSet::new(indices),
            values,
            witness_gap,
            ambiguous,
        })
    }

    pub fn active_set(&self, x: &DVector<f64>) -> Result<ActiveSet> {
        self.active_set_with_tol(x, self.active_tol)
    }

    /// The stratum of `x` is named by its active index set.
    pub fn stratum_of(&self, x: &DVector<f64>) -> Result<IndexSet> {
        Ok(self.active_set(x)?.indices)
    }

    /// Gradients of the selections named by `J` (one-based), as columns.
    pub fn active_gradients(&self, x: &DVector<f64>, j: &IndexSet) -> Result<DMatrix<f64>> {
        let n = self.ambient_dim();
        let mut cols = DMatrix::zeros(n, j.len());
        for (col, i) in j.iter().enumerate() {
            let grad = self.selection(i).gradient(x)?;
            cols.column_mut(col).copy_from(&grad);
        }
        Ok(cols)
    }

    /// Matrix of gradient differences `grad f_j - grad f_j0` for `j` in `J`
    /// past the first; affine independence of the active gradients is linear
    /// independence of these columns.
    pub fn gradient_differences(&self, x: &DVector<f64>, j: &IndexSet) -> Result<DMatrix<f64>> {
        let grads = self.active_gradients(x, j)?;
        let n = self.ambient_dim();
        let k = j.len();
        let mut diff = DMatrix::zeros(n, k.saturating_sub(1));
        for col in 1..k {
            let d = grads.column(col) - grads.column(0);
            diff.column_mut(col - 1).copy_from(&d);
        }
        Ok(diff)
    }

    /// Sample `probe_count` points of `m` and check affine independence of
    /// active gradients at each. Violations are report entries, not errors.
    pub fn validate_cs(
        &self,
        manifold: &Manifold,
        probe_count: usize,
        seed: u64,
    ) -> Result<CsValidation> {
        let points = manifold.sample_points(probe_count, seed)?;
        let mut violations = Vec::new();
        let mut worst_conditioning: Option<f64> = None;
        let mut multi = 0usize;
        for x in &points {
            let active = self.active_set(x)?;
            if active.indices.len() < 2 {
                continue;
            }
            multi += 1;
            let diff = self.gradient_differences(x, &active.indices)?;
            let expected = active.indices.len() - 1;
            let rank = numerical_rank(&diff, 1e-8);
            if rank != expected {
                violations.push(CsViolation {
                    point: x.iter().cloned().collect(),
                    active: active.indices.clone(),
                    rank,
                    expected_rank: expected,
                });
                continue;
            }
            let sv = diff.singular_values();
            let cond = sv.max() / sv[sv.len() - 1];
            worst_conditioning =
                Some(worst_conditioning.map_or(cond, |w: f64| w.max(cond)));
        }
        Ok(CsValidation {
            probes: points.len(),
            multi_active_probes: multi,
            violations,
            worst_conditioning,
        })
    }
}
