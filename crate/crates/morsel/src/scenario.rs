//! Scenario files: a TOML description of the manifold, the selection
//! functions, the selector and all tolerances and budgets. The five built-in
//! fixtures ship embedded so library users and tests can run them without
//! touching the filesystem.

use serde::Deserialize;

use crate::csfun::{CsFunction, Selector};
use crate::error::{Error, Result};
use crate::expr::SmoothMap;
use crate::geometry::Manifold;
use crate::search::SearchConfig;
use crate::strata::{CensusConfig, FiberConfig};

/// Tolerances block; every field has the library default.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    pub active_tol: f64,
    pub crit_tol: f64,
    pub nd2_tol: f64,
    pub on_manifold_tol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            active_tol: 1e-8,
            crit_tol: 1e-8,
            nd2_tol: 1e-7,
            on_manifold_tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchSettings {
    pub starts_per_subset: usize,
    pub dedupe_radius: f64,
    pub degenerate_cluster_diameter: f64,
    pub degenerate_count_min: usize,
    pub newton_max_iter: usize,
}

impl Default for SearchSettings {
    fn default() -> Self {
        let d = SearchConfig::default();
        SearchSettings {
            starts_per_subset: d.starts_per_subset,
            dedupe_radius: d.dedupe_radius,
            degenerate_cluster_diameter: d.degenerate_cluster_diameter,
            degenerate_count_min: d.degenerate_count_min,
            newton_max_iter: d.newton_max_iter,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CensusSettings {
    pub samples: usize,
    pub stratum_samples: usize,
    pub anchors_per_stratum: usize,
    pub knn: usize,
    pub pca_ball_radius: f64,
    pub pca_local_samples: usize,
    pub eigen_gap_threshold: f64,
    pub min_stratum_samples: usize,
    pub frontier_probes: usize,
    pub frontier_step: f64,
}

impl Default for CensusSettings {
    fn default() -> Self {
        let d = CensusConfig::default();
        CensusSettings {
            samples: d.samples,
            stratum_samples: d.stratum_samples,
            anchors_per_stratum: d.anchors_per_stratum,
            knn: d.knn,
            pca_ball_radius: d.pca_ball_radius,
            pca_local_samples: d.pca_local_samples,
            eigen_gap_threshold: d.eigen_gap_threshold,
            min_stratum_samples: d.min_stratum_samples,
            frontier_probes: d.frontier_probes,
            frontier_step: d.frontier_step,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FiberSettings {
    pub samples: usize,
    pub epsilon_factor: f64,
    pub min_separation_factor: f64,
    pub attempt_budget: usize,
}

impl Default for FiberSettings {
    fn default() -> Self {
        let d = FiberConfig::default();
        FiberSettings {
            samples: d.samples,
            epsilon_factor: d.epsilon_factor,
            min_separation_factor: d.min_separation_factor,
            attempt_budget: d.attempt_budget,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    name: String,
    dimension: usize,
    selector: Selector,
    selections: Vec<String>,
    constraints: Vec<String>,
    #[serde(default)]
    seed: u64,
    bounds: RawBounds,
    #[serde(default)]
    tolerances: Tolerances,
    #[serde(default)]
    search: SearchSettings,
    #[serde(default)]
    census: CensusSettings,
    #[serde(default)]
    fibers: FiberSettings,
    #[serde(default = "default_validation_probes")]
    validation_probes: usize,
}

fn default_validation_probes() -> usize {
    2000
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBounds {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

/// A fully validated scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub dimension: usize,
    pub selector: Selector,
    pub selections: Vec<String>,
    pub constraints: Vec<String>,
    pub seed: u64,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub tolerances: Tolerances,
    pub search: SearchSettings,
    pub census: CensusSettings,
    pub fibers: FiberSettings,
    pub validation_probes: usize,
}

impl Scenario {
    /// Parse and validate scenario TOML. Syntax errors carry line/column.
    pub fn from_toml_str(text: &str) -> Result<Scenario> {
        let raw: RawScenario = toml::from_str(text).map_err(|e| {
            let location = e
                .span()
                .map(|span| {
                    let (line, column) = line_column(text, span.start);
                    format!(" at line {line} column {column}")
                })
                .unwrap_or_default();
            Error::Scenario(format!("{}{location}", e.message()))
        })?;
        Scenario::from_raw(raw)
    }

    pub fn from_path(path: &std::path::Path) -> Result<Scenario> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Scenario(format!("cannot read {}: {e}", path.display())))?;
        Scenario::from_toml_str(&text)
    }

    fn from_raw(raw: RawScenario) -> Result<Scenario> {
        if raw.dimension == 0 {
            return Err(Error::Scenario("dimension must be at least 1".into()));
        }
        if raw.selections.is_empty() {
            return Err(Error::Scenario("need at least one selection".into()));
        }
        if raw.constraints.is_empty() {
            return Err(Error::Scenario("need at least one constraint".into()));
        }
        for (what, sources) in [("selection", &raw.selections), ("constraint", &raw.constraints)]
        {
            for src in sources {
                SmoothMap::parse(src, raw.dimension)
                    .map_err(|e| Error::Scenario(format!("{what} `{src}` is invalid: {e}")))?;
            }
        }
        if raw.bounds.lower.len() != raw.dimension || raw.bounds.upper.len() != raw.dimension {
            return Err(Error::Scenario(format!(
                "bounds must have {} entries",
                raw.dimension
            )));
        }
        let t = &raw.tolerances;
        if !(t.active_tol > 0.0 && t.crit_tol > 0.0 && t.nd2_tol > 0.0 && t.on_manifold_tol > 0.0)
        {
            return Err(Error::Scenario("tolerances must be positive".into()));
        }
        Ok(Scenario {
            name: raw.name,
            dimension: raw.dimension,
            selector: raw.selector,
            selections: raw.selections,
            constraints: raw.constraints,
            seed: raw.seed,
            lower: raw.bounds.lower,
            upper: raw.bounds.upper,
            tolerances: raw.tolerances,
            search: raw.search,
            census: raw.census,
            fibers: raw.fibers,
            validation_probes: raw.validation_probes,
        })
    }

    /// Instantiate the manifold and the selection function.
    pub fn build(&self) -> Result<(CsFunction, Manifold)> {
        let constraints: Vec<SmoothMap> = self
            .constraints
            .iter()
            .map(|src| SmoothMap::parse(src, self.dimension))
            .collect::<Result<_>>()?;
        let selections: Vec<SmoothMap> = self
            .selections
            .iter()
            .map(|src| SmoothMap::parse(src, self.dimension))
            .collect::<Result<_>>()?;
        let manifold = Manifold::new(
            self.dimension,
            constraints,
            self.lower.clone(),
            self.upper.clone(),
        )?
        .with_tolerance(self.tolerances.on_manifold_tol);
        let f = CsFunction::new(selections, self.selector)?
            .with_active_tol(self.tolerances.active_tol);
        Ok((f, manifold))
    }

    pub fn search_config(&self, seed: u64) -> SearchConfig {
        SearchConfig {
            starts_per_subset: self.search.starts_per_subset,
            seed,
            dedupe_radius: self.search.dedupe_radius,
            degenerate_cluster_diameter: self.search.degenerate_cluster_diameter,
            degenerate_count_min: self.search.degenerate_count_min,
            newton_max_iter: self.search.newton_max_iter,
            max_backtracks: 30,
            newton_tol: 1e-11,
            crit_tol: self.tolerances.crit_tol,
            nd2_tol: self.tolerances.nd2_tol,
        }
    }

    pub fn census_config(&self, seed: u64) -> CensusConfig {
        CensusConfig {
            samples: self.census.samples,
            stratum_samples: self.census.stratum_samples,
            seed,
            anchors_per_stratum: self.census.anchors_per_stratum,
            knn: self.census.knn,
            pca_ball_radius: self.census.pca_ball_radius,
            pca_local_samples: self.census.pca_local_samples,
            eigen_gap_threshold: self.census.eigen_gap_threshold,
            min_stratum_samples: self.census.min_stratum_samples,
            frontier_probes: self.census.frontier_probes,
            frontier_step: self.census.frontier_step,
        }
    }

    pub fn fiber_config(&self, seed: u64) -> FiberConfig {
        FiberConfig {
            samples: self.fibers.samples,
            seed,
            epsilon_factor: self.fibers.epsilon_factor,
            epsilon_override: None,
            min_separation_factor: self.fibers.min_separation_factor,
            attempt_budget: self.fibers.attempt_budget,
        }
    }

    /// Names of the built-in fixtures.
    pub fn builtin_names() -> &'static [&'static str] {
        &["s3_quadratic", "s3_linear", "s4_max3", "s4_min3", "s2_bridge"]
    }

    /// One of the built-in fixtures, by name.
    pub fn builtin(name: &str) -> Result<Scenario> {
        let text = match name {
            "s3_quadratic" => include_str!(concat!(
                env!("CARGO_MANIFEST_DIR"),
                "/../../fixtures/s3_quadratic.toml"
            )),
            "s3_linear" => include_str!(concat!(
                env!("CARGO_MANIFEST_DIR"),
                "/../../fixtures/s3_linear.toml"
            )),
            "s4_max3" => include_str!(concat!(
                env!("CARGO_MANIFEST_DIR"),
                "/../../fixtures/s4_max3.toml"
            )),
            "s4_min3" => include_str!(concat!(
                env!("CARGO_MANIFEST_DIR"),
                "/../../fixtures/s4_min3.toml"
            )),
            "s2_bridge" => include_str!(concat!(
                env!("CARGO_MANIFEST_DIR"),
                "/../../fixtures/s2_bridge.toml"
            )),
            other => {
                return Err(Error::Scenario(format!(
                    "unknown builtin scenario `{other}`"
                )))
            }
        };
        Scenario::from_toml_str(text)
    }
}

fn line_column(text: &str, offset: usize) -> (usize, usize) {
    let mut line = 1;
    let mut column = 1;
    for (i, ch) in text.char_indices() {
        if i >= offset {
            break;
        }
        if ch == '\n' {
            line += 1;
            column = 1;
        } else {
            column += 1;
        }
    }
    (line, column)
}
