//! Shared fixtures: the running example, seeded random polynomial systems,
//! and invariant systems built by scrambling a parallel system with a known
//! polynomial feedback.
#![allow(dead_code)]

use ctrlinv::expr::parse_expr;
use ctrlinv::geometry::{AffineSystem, ChartSpec, VectorFieldExpr};
use ctrlinv::synthesis::{apply_symbolic, SymbolicFeedback};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

pub fn system(n: usize, k: usize, bounds: &[(f64, f64)], f: &[&str], gs: &[&[&str]]) -> AffineSystem {
    AffineSystem::new(
        ChartSpec::new(n, k, bounds).unwrap(),
        VectorFieldExpr::parse(f, n).unwrap(),
        gs.iter().map(|g| VectorFieldExpr::parse(g, n).unwrap()).collect(),
    )
    .unwrap()
}

/// `f = (x1 x2 + x3) ∂3`, `g1 = (1 + x1²) ∂3` on `[-1,1]² × [-1,5]`, `D = span{∂1, ∂2}`.
pub fn running() -> AffineSystem {
    system(
        3,
        2,
        &[(-1.0, 1.0), (-1.0, 1.0), (-1.0, 5.0)],
        &["0", "0", "x1*x2 + x3"],
        &[&["0", "0", "1 + x1^2"]],
    )
}

pub const RUNNING_JSON: &str = r#"{
  "n": 3,
  "k": 2,
  "box": [[-1, 1], [-1, 1], [-1, 5]],
  "drift": ["0", "0", "x1*x2 + x3"],
  "controls": [["0", "0", "1 + x1^2"]],
  "simulation": {"pairs": [[[0, 0, 1], [0.3, -0.2, 1]]]}
}"#;

pub fn cube(n: usize) -> Vec<(f64, f64)> {
    vec![(-1.0, 1.0); n]
}

pub fn rng(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}

/// A polynomial in the variables `vars` (one-based) with `terms` monomials
/// of total degree at most `degree`. The absolute coefficients sum to
/// `scale`, so `|p| <= scale` on the unit cube.
pub fn random_poly(r: &mut StdRng, vars: &[usize], degree: u32, terms: usize, scale: f64) -> String {
    if vars.is_empty() || terms == 0 {
        return format!("{scale}");
    }
    let raw: Vec<f64> = (0..terms).map(|_| r.random_range(0.2..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let mut out = Vec::new();
    for c in raw {
        let coef = scale * c / total * if r.random_bool(0.5) { 1.0 } else { -1.0 };
        let deg = r.random_range(0..=degree);
        let mut mono = format!("{coef:.6}");
        for _ in 0..deg {
            mono.push_str(&format!("*x{}", vars[r.random_range(0..vars.len())]));
        }
        out.push(format!("({mono})"));
    }
    out.join(" + ")
}

pub fn refs(v: &[String]) -> Vec<&str> {
    v.iter().map(String::as_str).collect()
}

pub fn all_vars(n: usize) -> Vec<usize> {
    (1..=n).collect()
}

/// A random polynomial system on `[-1,1]^n`, not invariant in general.
pub fn random_system(seed: u64, n: usize, k: usize, m: usize) -> AffineSystem {
    let mut r = rng(seed);
    let vars = all_vars(n);
    let field = |r: &mut StdRng| -> Vec<String> {
        (0..n).map(|_| random_poly(r, &vars, 3, 4, 1.0)).collect()
    };
    let f = field(&mut r);
    let gs: Vec<Vec<String>> = (0..m).map(|_| field(&mut r)).collect();
    let gs_ref: Vec<Vec<&str>> = gs.iter().map(|g| refs(g)).collect();
    let gs_slices: Vec<&[&str]> = gs_ref.iter().map(Vec::as_slice).collect();
    system(n, k, &cube(n), &refs(&f), &gs_slices)
}

pub fn random_vector_field(r: &mut StdRng, n: usize, nonzero: std::ops::Range<usize>, degree: u32) -> VectorFieldExpr {
    let vars = all_vars(n);
    VectorFieldExpr::new(
        (0..n)
            .map(|i| {
                if nonzero.contains(&i) {
                    parse_expr(&random_poly(r, &vars, degree, 3, 1.0), n).unwrap()
                } else {
                    parse_expr("0", n).unwrap()
                }
            })
            .collect(),
    )
}

/// An invariant system with its parallel origin and the scrambling feedback.
pub struct Scrambled {
    pub name: String,
    pub parallel: AffineSystem,
    pub scramble: SymbolicFeedback,
    pub system: AffineSystem,
}

/// Start from a system whose quotient components depend only on the
/// transversal coordinates (so it is already parallel), then apply a
/// polynomial feedback with `β0 = I + small`. The result is controlled
/// invariant by construction. Requires `m <= n - k`.
pub fn scrambled(seed: u64, n: usize, k: usize, m: usize) -> Scrambled {
    assert!(m <= n - k);
    let mut r = rng(seed);
    let all = all_vars(n);
    let transversal: Vec<usize> = (k + 1..=n).collect();
    let leaf: Vec<usize> = (1..=k).collect();
    let mut drift = Vec::new();
    for i in 0..n {
        drift.push(if i < k {
            random_poly(&mut r, &all, 2, 3, 0.5)
        } else {
            random_poly(&mut r, &transversal, 2, 3, 0.5)
        });
    }
    let mut controls = Vec::new();
    for j in 0..m {
        let mut g = Vec::new();
        for i in 0..n {
            g.push(if i < k {
                random_poly(&mut r, &all, 2, 2, 0.5)
            } else if i == k + j {
                format!("1 + {}", random_poly(&mut r, &transversal, 2, 2, 0.15))
            } else {
                random_poly(&mut r, &transversal, 2, 2, 0.15)
            });
        }
        controls.push(g);
    }
    let g_refs: Vec<Vec<&str>> = controls.iter().map(|g| refs(g)).collect();
    let g_slices: Vec<&[&str]> = g_refs.iter().map(Vec::as_slice).collect();
    let parallel = system(n, k, &cube(n), &refs(&drift), &g_slices);

    // α0 carries an explicit leaf term so the scrambled drift is far from
    // parallel; β0 stays diagonally dominant on the cube.
    let alpha: Vec<String> = (0..m)
        .map(|j| {
            format!(
                "0.8*x{} + {}",
                leaf[j % k],
                random_poly(&mut r, &all, 2, 3, 0.5)
            )
        })
        .collect();
    let beta: Vec<Vec<String>> = (0..m)
        .map(|i| {
            (0..m)
                .map(|j| {
                    let p = random_poly(&mut r, &all, 2, 2, 0.15);
                    if i == j {
                        format!("1 + {p}")
                    } else {
                        p
                    }
                })
                .collect()
        })
        .collect();
    let a_refs = refs(&alpha);
    let b_refs: Vec<Vec<&str>> = beta.iter().map(|b| refs(b)).collect();
    let b_slices: Vec<&[&str]> = b_refs.iter().map(Vec::as_slice).collect();
    let scramble = SymbolicFeedback::parse(&a_refs, &b_slices, n).unwrap();
    let system = apply_symbolic(&parallel, &scramble).unwrap();
    Scrambled {
        name: format!("scrambled(seed={seed}, n={n}, k={k}, m={m})"),
        parallel,
        scramble,
        system,
    }
}

/// The constructed invariant fixtures used across suites.
pub fn scrambled_suite() -> Vec<Scrambled> {
    vec![
        scrambled(11, 3, 1, 1),
        scrambled(12, 3, 1, 2),
        scrambled(13, 3, 2, 1),
        scrambled(14, 4, 2, 2),
        scrambled(15, 4, 1, 3),
        scrambled(16, 4, 2, 1),
    ]
}

/// Uniform random points in the chart box, reproducible from `seed`.
pub fn random_points(seed: u64, chart: &ChartSpec, count: usize) -> Vec<Vec<f64>> {
    let mut r = rng(seed);
    (0..count)
        .map(|_| {
            chart
                .lower()
                .iter()
                .zip(chart.upper())
                .map(|(&a, &b)| r.random_range(a..=b))
                .collect()
        })
        .collect()
}
