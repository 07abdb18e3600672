//! Reduction of a constant distribution to a flat chart by a linear change
//! of coordinates `x = T y`, where the first `k` columns of `T` span `D`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::{AffineSystem, ChartSpec, PointwiseSystem, VectorFieldExpr};
use crate::error::{Error, Result};
use crate::expr::ScalarExpr;
use crate::linalg::{numerical_rank, RANK_REL_TOL};

/// How the distribution `D` is supplied.
#[derive(Clone, Debug, PartialEq)]
pub enum DistributionSpec {
    /// `span{∂/∂x1, …, ∂/∂xk}`.
    Flat,
    /// Span of `k` constant vectors in the original coordinates.
    Constant(Vec<Vec<f64>>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Flattening {
    k: usize,
    t: DMatrix<f64>,
    t_inv: DMatrix<f64>,
    identity: bool,
}

impl Flattening {
    pub fn new(spec: &DistributionSpec, n: usize, k: usize) -> Result<Self> {
        let vectors = match spec {
            DistributionSpec::Flat => {
                return Ok(Flattening {
                    k,
                    t: DMatrix::identity(n, n),
                    t_inv: DMatrix::identity(n, n),
                    identity: true,
                })
            }
            DistributionSpec::Constant(v) => v,
        };
        if vectors.len() != k {
            return Err(Error::Distribution(format!(
                "expected {k} spanning vectors, found {}",
                vectors.len()
            )));
        }
        let mut cols: Vec<DVector<f64>> = Vec::with_capacity(n);
        for (i, v) in vectors.iter().enumerate() {
            if v.len() != n {
                return Err(Error::Distribution(format!(
                    "spanning vector {} has {} entries, expected {n}",
                    i + 1,
                    v.len()
                )));
            }
            cols.push(DVector::from_column_slice(v));
        }
        if numerical_rank(&DMatrix::from_columns(&cols), RANK_REL_TOL) != k {
            return Err(Error::Distribution(format!(
                "spanning vectors do not have rank {k}"
            )));
        }
        for j in 0..n {
            if cols.len() == n {
                break;
            }
            let mut trial = cols.clone();
            trial.push(DVector::from_fn(n, |r, _| if r == j { 1.0 } else { 0.0 }));
            if numerical_rank(&DMatrix::from_columns(&trial), RANK_REL_TOL) == trial.len() {
                cols = trial;
            }
        }
        let t = DMatrix::from_columns(&cols);
        let t_inv = t
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Distribution("basis completion failed".into()))?;
        let identity = t == DMatrix::identity(n, n);
        Ok(Flattening {
            k,
            t,
            t_inv,
            identity,
        })
    }

    pub fn is_identity(&self) -> bool {
        self.identity
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.t
    }

    pub fn n(&self) -> usize {
        self.t.nrows()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Original coordinates of chart point `y`.
    pub fn to_original(&self, y: &[f64]) -> Vec<f64> {
        (&self.t * DVector::from_column_slice(y)).iter().copied().collect()
    }

    /// Chart coordinates of original point `x`.
    pub fn to_chart(&self, x: &[f64]) -> Vec<f64> {
        (&self.t_inv * DVector::from_column_slice(x)).iter().copied().collect()
    }

    /// Original-coordinate vector of chart tangent vector `v`.
    pub fn push_vector(&self, v: &[f64]) -> Vec<f64> {
        self.to_original(v)
    }

    /// Chart-coordinate vector of original tangent vector `v`.
    pub fn pull_vector(&self, v: &[f64]) -> Vec<f64> {
        self.to_chart(v)
    }

    /// Express a field given in original coordinates in the flat chart:
    /// `Ỹ(y) = T⁻¹ X(T y)`.
    pub fn reduce_field(&self, x: &VectorFieldExpr) -> VectorFieldExpr {
        if self.identity {
            return x.clone();
        }
        let n = self.n();
        let subs: Vec<ScalarExpr> = (0..n)
            .map(|i| {
                (0..n).fold(ScalarExpr::zero(), |acc, j| {
                    acc + ScalarExpr::constant(self.t[(i, j)]) * ScalarExpr::var(j)
                })
            })
            .collect();
        let composed: Vec<ScalarExpr> = x
            .components()
            .iter()
            .map(|c| c.substitute(&|i| Some(subs[i].clone())))
            .collect();
        VectorFieldExpr::new(
            (0..n)
                .map(|r| {
                    (0..n).fold(ScalarExpr::zero(), |acc, i| {
                        acc + ScalarExpr::constant(self.t_inv[(r, i)]) * composed[i].clone()
                    })
                })
                .collect(),
        )
    }

    /// Chart box in `y` coordinates: the bounding box of the image of the
    /// original box, shrunk uniformly until it maps back inside the original
    /// box. Exact for coordinate permutations.
    pub fn reduce_chart(&self, bounds: &[(f64, f64)], base_point: &[f64]) -> Result<ChartSpec> {
        let n = self.n();
        if self.identity {
            return ChartSpec::with_base_point(n, self.k, bounds, base_point);
        }
        if bounds.len() != n {
            return Err(Error::Dimension {
                expected: n,
                found: bounds.len(),
                context: "chart box axes",
            });
        }
        let corners = |b: &[(f64, f64)]| -> Vec<Vec<f64>> {
            (0..1usize << n)
                .map(|mask| {
                    (0..n)
                        .map(|i| if mask >> i & 1 == 1 { b[i].1 } else { b[i].0 })
                        .collect()
                })
                .collect()
        };
        let mut ybox = vec![(f64::INFINITY, f64::NEG_INFINITY); n];
        for c in corners(bounds) {
            for (i, v) in self.to_chart(&c).into_iter().enumerate() {
                ybox[i].0 = ybox[i].0.min(v);
                ybox[i].1 = ybox[i].1.max(v);
            }
        }
        let mut scale: f64 = 1.0;
        for c in corners(&ybox) {
            for (i, v) in self.to_original(&c).into_iter().enumerate() {
                let (a, b) = bounds[i];
                let tol = 1e-12 * (b - a);
                if v > b + tol {
                    scale = scale.min(b / v);
                } else if v < a - tol {
                    scale = scale.min(a / v);
                }
            }
        }
        if !(scale > 0.0) {
            return Err(Error::Chart(
                "box must contain the origin to change coordinates".into(),
            ));
        }
        let ybox: Vec<(f64, f64)> = ybox
            .into_iter()
            .map(|(a, b)| (clean(a * scale), clean(b * scale)))
            .collect();
        let yp: Vec<f64> = self.to_chart(base_point).into_iter().map(clean).collect();
        ChartSpec::with_base_point(n, self.k, &ybox, &yp)
    }

    pub fn reduce_system(
        &self,
        bounds: &[(f64, f64)],
        base_point: &[f64],
        drift: &VectorFieldExpr,
        controls: &[VectorFieldExpr],
    ) -> Result<AffineSystem> {
        let chart = self.reduce_chart(bounds, base_point)?;
        AffineSystem::new(
            chart,
            self.reduce_field(drift),
            controls.iter().map(|g| self.reduce_field(g)).collect(),
        )
    }
}

fn clean(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() < 1e-14 * r.abs().max(1.0) {
        r
    } else {
        v
    }
}

/// A pointwise system given in original coordinates, viewed through a
/// flattening.
pub struct FlattenedSystem {
    inner: Arc<dyn PointwiseSystem>,
    flattening: Flattening,
    chart: ChartSpec,
}

impl FlattenedSystem {
    /// `inner` lives on the original coordinates; its own chart is ignored
    /// apart from dimension.
    pub fn new(
        inner: Arc<dyn PointwiseSystem>,
        flattening: Flattening,
        bounds: &[(f64, f64)],
        base_point: &[f64],
    ) -> Result<Self> {
        let chart = flattening.reduce_chart(bounds, base_point)?;
        Ok(FlattenedSystem {
            inner,
            flattening,
            chart,
        })
    }

    pub fn flattening(&self) -> &Flattening {
        &self.flattening
    }
}

impl PointwiseSystem for FlattenedSystem {
    fn chart(&self) -> &ChartSpec {
        &self.chart
    }

    fn num_controls(&self) -> usize {
        self.inner.num_controls()
    }

    fn drift_at(&self, q: &[f64]) -> Result<Vec<f64>> {
        let x = self.flattening.to_original(q);
        Ok(self.flattening.pull_vector(&self.inner.drift_at(&x)?))
    }

    fn control_at(&self, i: usize, q: &[f64]) -> Result<Vec<f64>> {
        let x = self.flattening.to_original(q);
        Ok(self.flattening.pull_vector(&self.inner.control_at(i, &x)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn permutation_keeps_box_exact() {
        let fl = Flattening::new(&DistributionSpec::Constant(vec![vec![0.0, 1.0]]), 2, 1).unwrap();
        let chart = fl.reduce_chart(&[(-1.0, 1.0), (-2.0, 3.0)], &[0.0, 0.0]).unwrap();
        assert_eq!(chart.bounds(), vec![(-2.0, 3.0), (-1.0, 1.0)]);
        let g = VectorFieldExpr::parse(&["x1^2", "0"], 2).unwrap();
        let gy = fl.reduce_field(&g);
        // in chart coordinates g = y2^2 ∂/∂y2
        assert!(gy.component(0).is_zero());
        assert_eq!(gy.component(1).eval(&[0.7, -0.5]).unwrap(), 0.25);
    }

    #[test]
    fn skew_distribution_reduces_to_flat() {
        let fl = Flattening::new(&DistributionSpec::Constant(vec![vec![1.0, 1.0, 0.0]]), 3, 1)
            .unwrap();
        // X = ∂1 + ∂2 spans D, so its reduction is ∂/∂y1
        let x = VectorFieldExpr::parse(&["1", "1", "0"], 3).unwrap();
        let y = fl.reduce_field(&x);
        let v = y.eval(&[0.1, 0.2, 0.3]).unwrap();
        assert!((v[0] - 1.0).abs() < 1e-15 && v[1].abs() < 1e-15 && v[2].abs() < 1e-15);
        let chart = fl.reduce_chart(&[(-1.0, 1.0); 3], &[0.0; 3]).unwrap();
        for mask in 0..8usize {
            let c: Vec<f64> = (0..3)
                .map(|i| if mask >> i & 1 == 1 { chart.upper()[i] } else { chart.lower()[i] })
                .collect();
            let x = fl.to_original(&c);
            assert!(x.iter().all(|v| v.abs() <= 1.0 + 1e-12));
        }
    }

    #[test]
    fn rank_deficient_vectors_rejected() {
        let spec = DistributionSpec::Constant(vec![vec![1.0, 0.0, 0.0], vec![2.0, 0.0, 0.0]]);
        assert!(Flattening::new(&spec, 3, 2).is_err());
    }
}
