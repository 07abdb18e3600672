//! Uniform tensor grids over a chart box.

use crate::error::{Error, Result};
use crate::geometry::ChartSpec;

pub const DEFAULT_NODES_PER_AXIS: usize = 9;

/// Uniform tensor grid. Nodes are numbered row-major with the last axis
/// varying fastest. Leaf axes always contain the slice coordinate.
#[derive(Clone, Debug, PartialEq)]
pub struct GridSpec {
    axes: Vec<Vec<f64>>,
    strides: Vec<usize>,
    slice_index: Vec<usize>,
}

impl GridSpec {
    pub fn uniform(chart: &ChartSpec, nodes_per_axis: usize) -> Result<Self> {
        Self::with_counts(chart, &vec![nodes_per_axis; chart.n()])
    }

    pub fn with_counts(chart: &ChartSpec, counts: &[usize]) -> Result<Self> {
        if counts.len() != chart.n() {
            return Err(Error::Dimension {
                expected: chart.n(),
                found: counts.len(),
                context: "grid node counts",
            });
        }
        let mut axes = Vec::with_capacity(chart.n());
        let mut slice_index = Vec::with_capacity(chart.k());
        for (i, (&count, (a, b))) in counts.iter().zip(chart.bounds()).enumerate() {
            if count < 2 {
                return Err(Error::Grid(format!("axis x{} needs at least 2 nodes", i + 1)));
            }
            let h = (b - a) / (count - 1) as f64;
            let mut axis: Vec<f64> = (0..count).map(|j| a + h * j as f64).collect();
            axis[count - 1] = b;
            if i < chart.k() {
                let s = chart.slice()[i];
                let j = ((s - a) / h).round() as usize;
                if j >= count || (axis[j] - s).abs() > 1e-9 * h {
                    return Err(Error::Grid(format!(
                        "slice coordinate x{} = {s} is not a node of the {count}-node axis on [{a}, {b}]",
                        i + 1
                    )));
                }
                axis[j] = s;
                slice_index.push(j);
            }
            axes.push(axis);
        }
        let mut strides = vec![1; axes.len()];
        for i in (0..axes.len().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * axes[i + 1].len();
        }
        Ok(GridSpec {
            axes,
            strides,
            slice_index,
        })
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(Vec::len).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn counts(&self) -> Vec<usize> {
        self.axes.iter().map(Vec::len).collect()
    }

    pub fn axis(&self, i: usize) -> &[f64] {
        &self.axes[i]
    }

    pub fn spacing(&self, i: usize) -> f64 {
        self.axes[i][1] - self.axes[i][0]
    }

    /// Index of the slice coordinate on leaf axis `i`.
    pub fn slice_index(&self, i: usize) -> usize {
        self.slice_index[i]
    }

    pub fn multi_index(&self, flat: usize) -> Vec<usize> {
        self.strides
            .iter()
            .zip(&self.axes)
            .map(|(&s, axis)| (flat / s) % axis.len())
            .collect()
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.strides).map(|(i, s)| i * s).sum()
    }

    pub fn node_at(&self, idx: &[usize]) -> Vec<f64> {
        idx.iter().zip(&self.axes).map(|(&i, a)| a[i]).collect()
    }

    pub fn node(&self, flat: usize) -> Vec<f64> {
        self.node_at(&self.multi_index(flat))
    }

    pub fn nodes(&self) -> impl Iterator<Item = Vec<f64>> + '_ {
        (0..self.len()).map(move |i| self.node(i))
    }

    /// True when the node has no neighbour missing along any of `axes`.
    pub fn is_interior(&self, flat: usize, axes: &[usize]) -> bool {
        let idx = self.multi_index(flat);
        axes.iter()
            .all(|&a| idx[a] > 0 && idx[a] + 1 < self.axes[a].len())
    }

    pub fn nearest_node(&self, q: &[f64]) -> usize {
        let idx: Vec<usize> = q
            .iter()
            .zip(&self.axes)
            .map(|(&x, axis)| {
                let h = axis[1] - axis[0];
                (((x - axis[0]) / h).round().max(0.0) as usize).min(axis.len() - 1)
            })
            .collect();
        self.flat_index(&idx)
    }

    /// Multilinear interpolation of vector-valued node data. Points outside
    /// the grid are clamped to the boundary cell (linear extrapolation).
    pub fn interpolate(&self, values: &[Vec<f64>], q: &[f64]) -> Vec<f64> {
        debug_assert_eq!(values.len(), self.len());
        let width = values.first().map_or(0, Vec::len);
        self.interpolate_with(width, |i| &values[i], q)
    }

    pub fn interpolate_with<'a>(
        &self,
        width: usize,
        get: impl Fn(usize) -> &'a [f64],
        q: &[f64],
    ) -> Vec<f64> {
        let n = self.dim();
        let mut base = Vec::with_capacity(n);
        let mut frac = Vec::with_capacity(n);
        for (axis, &x) in self.axes.iter().zip(q) {
            let h = axis[1] - axis[0];
            let cell = (((x - axis[0]) / h).floor().max(0.0) as usize).min(axis.len() - 2);
            base.push(cell);
            frac.push((x - axis[cell]) / h);
        }
        let mut out = vec![0.0; width];
        for mask in 0..(1usize << n) {
            let mut w = 1.0;
            let mut flat = 0;
            for a in 0..n {
                let up = mask >> a & 1 == 1;
                w *= if up { frac[a] } else { 1.0 - frac[a] };
                flat += (base[a] + up as usize) * self.strides[a];
            }
            if w != 0.0 {
                for (o, v) in out.iter_mut().zip(get(flat)) {
                    *o += w * v;
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chart() -> ChartSpec {
        ChartSpec::new(3, 2, &[(-1.0, 1.0), (-1.0, 1.0), (-1.0, 5.0)]).unwrap()
    }

    #[test]
    fn indexing_round_trips() {
        let g = GridSpec::uniform(&chart(), 5).unwrap();
        assert_eq!(g.len(), 125);
        for flat in [0, 7, 63, 124] {
            assert_eq!(g.flat_index(&g.multi_index(flat)), flat);
        }
        assert_eq!(g.node(0), vec![-1.0, -1.0, -1.0]);
        assert_eq!(g.node(124), vec![1.0, 1.0, 5.0]);
        assert_eq!(g.slice_index(0), 2);
        assert_eq!(g.axis(0)[2], 0.0);
    }

    #[test]
    fn slice_must_be_a_node() {
        let c = ChartSpec::new(2, 1, &[(-1.0, 2.0), (-1.0, 1.0)]).unwrap();
        assert!(GridSpec::uniform(&c, 9).is_err());
        assert!(GridSpec::uniform(&c, 4).is_ok());
        assert!(GridSpec::uniform(&chart(), 1).is_err());
    }

    #[test]
    fn interpolation_is_exact_for_multilinear_data() {
        let g = GridSpec::uniform(&chart(), 5).unwrap();
        let f = |q: &[f64]| vec![1.0 + 2.0 * q[0] - q[1] * q[2] + 0.5 * q[0] * q[1] * q[2]];
        let vals: Vec<Vec<f64>> = g.nodes().map(|q| f(&q)).collect();
        for q in [[0.1, -0.3, 2.2], [0.99, 0.01, -0.7], [-1.0, 1.0, 5.0]] {
            let got = g.interpolate(&vals, &q)[0];
            assert!((got - f(&q)[0]).abs() < 1e-12, "{got} vs {:?}", f(&q));
        }
    }
}
