//! Shared test oracles. Everything here recomputes expected values through
//! routes independent of the library code under test: plain value
//! evaluations drive the finite differences, and the simplex grid search
//! never touches the active-set solver.
#![allow(dead_code)] // each integration test binary uses its own subset

use morsel::csfun::{CsFunction, IndexSet, Selector};
use morsel::expr::{Expr, Func, SmoothMap};
use morsel::geometry::Manifold;
use morsel::search::CriticalPointRecord;
use morsel::strata::stratum_equations;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn v(coords: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(coords)
}

pub fn sphere(dim: usize) -> Manifold {
    let terms: Vec<String> = (1..=dim).map(|i| format!("x{i}^2")).collect();
    let g = SmoothMap::parse(&format!("{}-1", terms.join("+")), dim).unwrap();
    Manifold::new(dim, vec![g], vec![-1.2; dim], vec![1.2; dim]).unwrap()
}

pub fn coords_cs(dim: usize, m: usize, selector: Selector) -> CsFunction {
    let maps = (1..=m)
        .map(|i| SmoothMap::parse(&format!("x{i}"), dim).unwrap())
        .collect();
    CsFunction::new(maps, selector).unwrap()
}

// ---------------------------------------------------------------------------
// Finite-difference oracle
// ---------------------------------------------------------------------------

/// Central-difference gradient, step `h`.
pub fn fd_gradient(map: &SmoothMap, x: &DVector<f64>, h: f64) -> DVector<f64> {
    let n = x.len();
    DVector::from_fn(n, |i, _| {
        let mut plus = x.clone();
        plus[i] += h;
        let mut minus = x.clone();
        minus[i] -= h;
        (map.value(&plus).unwrap() - map.value(&minus).unwrap()) / (2.0 * h)
    })
}

/// Richardson-extrapolated central-difference Hessian: two central
/// quotients at `h` and `h/2` combined to cancel the quadratic truncation
/// term, which keeps the oracle below 1e-6 even for deeply nested
/// compositions with large fourth derivatives.
pub fn fd_hessian_refined(map: &SmoothMap, x: &DVector<f64>, h: f64) -> DMatrix<f64> {
    let coarse = fd_hessian(map, x, h);
    let fine = fd_hessian(map, x, h / 2.0);
    (4.0 * fine - coarse) / 3.0
}

/// Central-difference Hessian, step `h`.
pub fn fd_hessian(map: &SmoothMap, x: &DVector<f64>, h: f64) -> DMatrix<f64> {
    let n = x.len();
    let f0 = map.value(x).unwrap();
    DMatrix::from_fn(n, n, |i, k| {
        if i == k {
            let mut plus = x.clone();
            plus[i] += h;
            let mut minus = x.clone();
            minus[i] -= h;
            (map.value(&plus).unwrap() - 2.0 * f0 + map.value(&minus).unwrap()) / (h * h)
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
            (map.value(&pp).unwrap() - map.value(&pm).unwrap() - map.value(&mp).unwrap()
                + map.value(&mm).unwrap())
                / (4.0 * h * h)
        }
    })
}

// ---------------------------------------------------------------------------
// Expression corpus
// ---------------------------------------------------------------------------

/// Random expression over `dim` variables whose value, gradient and Hessian
/// stay well scaled on `[-1.5, 1.5]^dim` (log/sqrt/div arguments are kept
/// away from their domain edges).
pub fn random_expr(rng: &mut ChaCha8Rng, dim: usize, depth: usize) -> Expr {
    if depth == 0 {
        return if rng.random_bool(0.6) {
            Expr::Var(rng.random_range(0..dim))
        } else {
            Expr::Const((rng.random_range(-20i32..=20) as f64) / 10.0)
        };
    }
    match rng.random_range(0..10) {
        0 => Expr::Add(
            Box::new(random_expr(rng, dim, depth - 1)),
            Box::new(random_expr(rng, dim, depth - 1)),
        ),
        1 => Expr::Sub(
            Box::new(random_expr(rng, dim, depth - 1)),
            Box::new(random_expr(rng, dim, depth - 1)),
        ),
        2 => Expr::Mul(
            Box::new(random_expr(rng, dim, depth - 1)),
            Box::new(random_expr(rng, dim, depth - 1)),
        ),
        3 => Expr::Neg(Box::new(random_expr(rng, dim, depth - 1))),
        4 => Expr::Pow(
            Box::new(bounded_expr(rng, dim, depth - 1)),
            rng.random_range(2..=3),
        ),
        5 => Expr::Call(Func::Sin, Box::new(bounded_expr(rng, dim, depth - 1))),
        6 => Expr::Call(Func::Cos, Box::new(bounded_expr(rng, dim, depth - 1))),
        7 => Expr::Call(Func::Exp, Box::new(bounded_expr(rng, dim, depth - 1))),
        8 => Expr::Call(Func::Log, Box::new(positive_expr(rng, dim, depth - 1))),
        _ => Expr::Div(
            Box::new(random_expr(rng, dim, depth - 1)),
            Box::new(positive_expr(rng, dim, depth - 1)),
        ),
    }
}

/// Subexpression with values in roughly [-1, 1]: a sine of anything.
fn bounded_expr(rng: &mut ChaCha8Rng, dim: usize, depth: usize) -> Expr {
    Expr::Call(Func::Sin, Box::new(random_expr(rng, dim, depth)))
}

/// Subexpression bounded away from zero: `2.5 + sin(...)` or a sqrt of it.
fn positive_expr(rng: &mut ChaCha8Rng, dim: usize, depth: usize) -> Expr {
    let base = Expr::Add(
        Box::new(Expr::Const(2.5)),
        Box::new(bounded_expr(rng, dim, depth)),
    );
    if rng.random_bool(0.3) {
        Expr::Call(Func::Sqrt, Box::new(base))
    } else {
        base
    }
}

pub fn random_point(rng: &mut ChaCha8Rng, dim: usize) -> DVector<f64> {
    DVector::from_fn(dim, |_, _| rng.random_range(-1.5..1.5))
}

// ---------------------------------------------------------------------------
// Simplex grid oracle
// ---------------------------------------------------------------------------

/// Brute-force minimizer of `|sum lambda_i v_i|` over the simplex grid with
/// the given step, for up to three vectors. Returns the minimal norm.
pub fn grid_min_norm(vectors: &[DVector<f64>], step: f64) -> f64 {
    let k = vectors.len();
    assert!((1..=3).contains(&k), "grid oracle covers 1..3 vectors");
    // Precomputed Gram matrix keeps the inner loop dimension-free.
    let mut gram = [[0.0f64; 3]; 3];
    for i in 0..k {
        for j in 0..k {
            gram[i][j] = vectors[i].dot(&vectors[j]);
        }
    }
    let steps = (1.0 / step).round() as usize;
    let mut best = f64::INFINITY;
    match k {
        1 => best = gram[0][0],
        2 => {
            for a in 0..=steps {
                let l1 = a as f64 * step;
                let l2 = 1.0 - l1;
                let q = l1 * l1 * gram[0][0] + 2.0 * l1 * l2 * gram[0][1] + l2 * l2 * gram[1][1];
                best = best.min(q);
            }
        }
        _ => {
            for a in 0..=steps {
                let l1 = a as f64 * step;
                for b in 0..=(steps - a) {
                    let l2 = b as f64 * step;
                    let l3 = 1.0 - l1 - l2;
                    let q = l1 * l1 * gram[0][0]
                        + l2 * l2 * gram[1][1]
                        + l3 * l3 * gram[2][2]
                        + 2.0 * l1 * l2 * gram[0][1]
                        + 2.0 * l1 * l3 * gram[0][2]
                        + 2.0 * l2 * l3 * gram[1][2];
                    best = best.min(q);
                }
            }
        }
    }
    best.max(0.0).sqrt()
}

// ---------------------------------------------------------------------------
// Restricted-index oracle
// ---------------------------------------------------------------------------

/// Classical Morse index of the restriction of `f` to the stratum of a
/// critical point, computed by finite differences through a Gauss-Newton
/// chart: `h(u) = f(project(x0 + B u))` with `B` an orthonormal basis of the
/// stratum's tangent space. Independent of the analytic Hessian route.
pub fn fd_restricted_index(
    f: &CsFunction,
    manifold: &Manifold,
    record: &CriticalPointRecord,
) -> usize {
    let basis = morsel::nonsmooth::hat_tangent_basis(f, manifold, &record.x, &record.active)
        .expect("stratum tangent basis");
    let d = basis.dim();
    if d == 0 {
        return 0;
    }
    let equations = stratum_equations(f, &record.active);
    let chart = |u: &DVector<f64>| -> f64 {
        let ambient = &record.x + &basis.basis * u;
        let projected = manifold
            .project_with(&equations, &ambient)
            .expect("chart projection");
        f.value(&projected).expect("value on stratum")
    };
    let h = 1e-4;
    let f0 = chart(&DVector::zeros(d));
    let hess = DMatrix::from_fn(d, d, |i, k| {
        if i == k {
            let mut plus = DVector::zeros(d);
            plus[i] = h;
            let mut minus = DVector::zeros(d);
            minus[i] = -h;
            (chart(&plus) - 2.0 * f0 + chart(&minus)) / (h * h)
        } else {
            let mut pp = DVector::zeros(d);
            pp[i] = h;
            pp[k] = h;
            let mut pm = DVector::zeros(d);
            pm[i] = h;
            pm[k] = -h;
            let mut mp = DVector::zeros(d);
            mp[i] = -h;
            mp[k] = h;
            let mut mm = DVector::zeros(d);
            mm[i] = -h;
            mm[k] = -h;
            (chart(&pp) - chart(&pm) - chart(&mp) + chart(&mm)) / (4.0 * h * h)
        }
    });
    let sym = 0.5 * (&hess + hess.transpose());
    sym.symmetric_eigen()
        .eigenvalues
        .iter()
        .filter(|&&e| e < -1e-3)
        .count()
}

/// Sorted canonical key of a record set, for set-level comparisons.
pub fn record_set_key(records: &[CriticalPointRecord]) -> Vec<(IndexSet, Vec<i64>)> {
    let mut keys: Vec<(IndexSet, Vec<i64>)> = records
        .iter()
        .map(|r| {
            (
                r.active.clone(),
                r.x.iter().map(|c| (c / 1e-7).round() as i64).collect(),
            )
        })
        .collect();
    keys.sort();
    keys
}
