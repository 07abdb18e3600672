mod common;

use common::*;
use ctrlinv::geometry::{lie_bracket, VectorFieldExpr};
use proptest::prelude::*;

fn fields(seed: u64, n: usize, count: usize) -> Vec<VectorFieldExpr> {
    let mut r = rng(seed);
    (0..count).map(|_| random_vector_field(&mut r, n, 0..n, 2)).collect()
}

fn max_abs(v: &VectorFieldExpr, points: &[Vec<f64>]) -> f64 {
    points
        .iter()
        .flat_map(|q| v.eval(q).unwrap())
        .fold(0.0, |a: f64, x| a.max(x.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn bracket_is_antisymmetric(seed in 0u64..10_000, n in 2usize..5) {
        let v = fields(seed, n, 2);
        let s = lie_bracket(&v[0], &v[1]).unwrap().add(&lie_bracket(&v[1], &v[0]).unwrap());
        let chart = ctrlinv::geometry::ChartSpec::new(n, 1, &cube(n)).unwrap();
        prop_assert!(max_abs(&s, &random_points(seed, &chart, 20)) <= 1e-12);
    }

    #[test]
    fn bracket_satisfies_jacobi(seed in 0u64..10_000, n in 2usize..4) {
        let v = fields(seed, n, 3);
        let b = |x: &VectorFieldExpr, y: &VectorFieldExpr| lie_bracket(x, y).unwrap();
        let s = b(&v[0], &b(&v[1], &v[2]))
            .add(&b(&v[1], &b(&v[2], &v[0])))
            .add(&b(&v[2], &b(&v[0], &v[1])));
        let chart = ctrlinv::geometry::ChartSpec::new(n, 1, &cube(n)).unwrap();
        prop_assert!(max_abs(&s, &random_points(seed, &chart, 20)) <= 1e-10);
    }
}

#[test]
fn coordinate_fields_commute() {
    let a = VectorFieldExpr::coordinate(3, 0);
    let b = VectorFieldExpr::coordinate(3, 2);
    let c = lie_bracket(&a, &b).unwrap();
    assert!(c.components().iter().all(|e| e.is_zero()));
}

#[test]
fn bracket_of_running_fields() {
    let f = VectorFieldExpr::parse(&["0", "0", "x1*x2 + x3"], 3).unwrap();
    let d1 = VectorFieldExpr::coordinate(3, 0);
    let c = lie_bracket(&d1, &f).unwrap();
    assert_eq!(c.eval(&[0.3, -0.7, 2.0]).unwrap(), vec![0.0, 0.0, -0.7]);
}
