//! Scenario-driven command line for nonsmooth Morse analysis.
//!
//! Exit codes: 0 on success, 2 on validation failure (unreadable or invalid
//! scenario, bad levels), 3 on an internal-consistency error. Errors are
//! also emitted as JSON on stderr.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use morsel::report::{
    analyze, derivative_check, fiber_csv, grid_levels, FiberSummary, REPORT_SCHEMA,
};
use morsel::scenario::Scenario;
use morsel::search::{critical_values, find_critical_points};
use morsel::strata::fiber_census;
use morsel::Error;

#[derive(Parser)]
#[command(
    name = "morsel",
    version,
    about = "Nonsmooth Morse analysis of max/min selections on constraint-defined manifolds"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full analysis and write report.json and schema.json.
    Analyze {
        /// Scenario file (TOML).
        file: PathBuf,
        /// Output directory for report.json and schema.json.
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Override the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Sample fibers of the selection and export CSV point clouds plus a
    /// JSON summary.
    Fibers {
        /// Scenario file (TOML).
        file: PathBuf,
        /// Comma-separated levels to sample.
        #[arg(
            long,
            value_delimiter = ',',
            allow_negative_numbers = true,
            conflicts_with = "grid"
        )]
        levels: Option<Vec<f64>>,
        /// Place this many levels at regular-interval midpoints.
        #[arg(long)]
        grid: Option<usize>,
        /// Override the per-fiber sample target.
        #[arg(long)]
        samples: Option<usize>,
        /// Output directory for fiber_<t>.csv and fibers.json.
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Override the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Compare evaluated derivatives against finite differences.
    CheckDerivatives {
        /// Scenario file (TOML).
        file: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Analyze { file, out, seed } => cmd_analyze(&file, &out, seed),
        Command::Fibers {
            file,
            levels,
            grid,
            samples,
            out,
            seed,
        } => cmd_fibers(&file, levels, grid, samples, &out, seed),
        Command::CheckDerivatives { file } => cmd_check_derivatives(&file),
    };
    match result {
        Ok(code) => code,
        Err(err) => {
            let kind = match &err {
                Error::InternalConsistency(_) => "internal_consistency",
                _ => "validation",
            };
            eprintln!(
                "{}",
                serde_json::json!({ "error": { "kind": kind, "message": err.to_string() } })
            );
            match err {
                Error::InternalConsistency(_) => ExitCode::from(3),
                _ => ExitCode::from(2),
            }
        }
    }
}

fn write_out(dir: &Path, name: &str, contents: &str) -> Result<(), Error> {
    std::fs::create_dir_all(dir)
        .map_err(|e| Error::Scenario(format!("cannot create {}: {e}", dir.display())))?;
    let path = dir.join(name);
    std::fs::write(&path, contents)
        .map_err(|e| Error::Scenario(format!("cannot write {}: {e}", path.display())))
}

fn cmd_analyze(file: &Path, out: &Path, seed: Option<u64>) -> Result<ExitCode, Error> {
    let scenario = Scenario::from_path(file)?;
    let report = analyze(&scenario, seed)?;
    let json = report.to_json();
    write_out(out, "report.json", &json)?;
    write_out(out, "schema.json", REPORT_SCHEMA)?;
    print!("{json}");
    Ok(ExitCode::SUCCESS)
}

fn cmd_fibers(
    file: &Path,
    levels: Option<Vec<f64>>,
    grid: Option<usize>,
    samples: Option<usize>,
    out: &Path,
    seed: Option<u64>,
) -> Result<ExitCode, Error> {
    let scenario = Scenario::from_path(file)?;
    let seed = seed.unwrap_or(scenario.seed);
    let (f, manifold) = scenario.build()?;

    // Critical values tag levels as regular/critical and place grid levels.
    let outcome = find_critical_points(&f, &manifold, &scenario.search_config(seed))?;
    let values = critical_values(&outcome.records, &outcome.degenerate_flags);

    // Value range estimate from an on-manifold sample.
    let mut range = (f64::INFINITY, f64::NEG_INFINITY);
    for x in manifold.sample_points(2000, seed)? {
        let v = f.value(&x)?;
        range.0 = range.0.min(v);
        range.1 = range.1.max(v);
    }

    let levels = match (levels, grid) {
        (Some(levels), _) if !levels.is_empty() => levels,
        (_, Some(k)) => {
            let levels = grid_levels(&values, k);
            if levels.is_empty() {
                return Err(Error::Scenario(
                    "no regular intervals available for --grid placement".into(),
                ));
            }
            levels
        }
        _ => {
            return Err(Error::Scenario(
                "provide --levels a,b,c or --grid k".into(),
            ))
        }
    };

    let mut fiber_cfg = scenario.fiber_config(seed);
    if let Some(samples) = samples {
        fiber_cfg.samples = samples;
    }
    let mut summaries = Vec::new();
    for &level in &levels {
        let census = fiber_census(&f, &manifold, level, range, Some(&values), &fiber_cfg)?;
        write_out(
            out,
            &format!("fiber_{level}.csv"),
            &fiber_csv(&census, scenario.dimension),
        )?;
        summaries.push(FiberSummary::from_census(&census));
    }
    let summary_json = format!(
        "{}\n",
        serde_json::to_string_pretty(&summaries).expect("summary serialization cannot fail")
    );
    write_out(out, "fibers.json", &summary_json)?;
    print!("{summary_json}");
    Ok(ExitCode::SUCCESS)
}

fn cmd_check_derivatives(file: &Path) -> Result<ExitCode, Error> {
    let scenario = Scenario::from_path(file)?;
    let mut rows = Vec::new();
    for src in scenario.constraints.iter().chain(&scenario.selections) {
        let map = morsel::SmoothMap::parse(src, scenario.dimension)?;
        rows.push(derivative_check(
            &map,
            &scenario.lower,
            &scenario.upper,
            20,
            scenario.seed,
            1e-6,
        )?);
    }
    println!(
        "{:<32} {:>8} {:>14} {:>14} {:>7} {:>8}",
        "expression", "points", "grad rel err", "hess rel err", "status", "clipped"
    );
    let mut all_pass = true;
    for row in &rows {
        all_pass &= row.pass;
        println!(
            "{:<32} {:>8} {:>14.3e} {:>14.3e} {:>7} {:>8}",
            row.expression,
            row.points_tested,
            row.max_rel_gradient_error,
            row.max_rel_hessian_error,
            if row.pass { "pass" } else { "FAIL" },
            if row.step_clipped { "yes" } else { "no" }
        );
    }
    if all_pass {
        Ok(ExitCode::SUCCESS)
    } else {
        Err(Error::Scenario(
            "derivative check failed for at least one expression".into(),
        ))
    }
}
