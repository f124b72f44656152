//! Tensor-product interpolated maps `x -> x + D(x)` sampled on a grid.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::smooth_map::{Jet, MapError, SmoothMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    Linear,
    /// Cubic Catmull-Rom (local cubic Hermite with centred slopes).
    #[default]
    CatmullRom,
}

impl Interpolation {
    fn width(self) -> usize {
        match self {
            Interpolation::Linear => 2,
            Interpolation::CatmullRom => 4,
        }
    }

    /// Weights and their first and second derivatives in `t`.
    fn weights(self, t: f64) -> [[f64; 4]; 3] {
        match self {
            Interpolation::Linear => [[1.0 - t, t, 0.0, 0.0], [-1.0, 1.0, 0.0, 0.0], [0.0; 4]],
            Interpolation::CatmullRom => {
                let (t2, t3) = (t * t, t * t * t);
                [
                    [
                        0.5 * (-t3 + 2.0 * t2 - t),
                        0.5 * (3.0 * t3 - 5.0 * t2 + 2.0),
                        0.5 * (-3.0 * t3 + 4.0 * t2 + t),
                        0.5 * (t3 - t2),
                    ],
                    [
                        0.5 * (-3.0 * t2 + 4.0 * t - 1.0),
                        0.5 * (9.0 * t2 - 10.0 * t),
                        0.5 * (-9.0 * t2 + 8.0 * t + 1.0),
                        0.5 * (3.0 * t2 - 2.0 * t),
                    ],
                    [
                        0.5 * (-6.0 * t + 4.0),
                        0.5 * (18.0 * t - 10.0),
                        0.5 * (-18.0 * t + 8.0),
                        0.5 * (6.0 * t - 2.0),
                    ],
                ]
            }
        }
    }
}

/// One grid axis. Periodic axes have `len` nodes covering a full turn;
/// box axes carry one ghost node beyond each end of the requested range.
#[derive(Debug, Clone, Serialize)]
pub struct Axis {
    pub origin: f64,
    pub step: f64,
    pub len: usize,
    pub periodic: bool,
}

impl Axis {
    pub fn periodic(len: usize) -> Self {
        Axis { origin: 0.0, step: std::f64::consts::TAU / len as f64, len, periodic: true }
    }

    /// `points` nodes spanning `[lo, hi]` plus the two ghosts.
    pub fn bounded(lo: f64, hi: f64, points: usize) -> Self {
        let step = (hi - lo) / (points.max(2) - 1) as f64;
        Axis { origin: lo - step, step, len: points.max(2) + 2, periodic: false }
    }

    pub fn node(&self, i: usize) -> f64 {
        self.origin + i as f64 * self.step
    }

    /// First stencil index and local coordinate of `x`.
    fn locate(&self, x: f64, width: usize) -> (isize, f64) {
        let s = (x - self.origin) / self.step;
        let mut i = s.floor() as isize;
        if !self.periodic {
            let back = (width / 2 - 1) as isize;
            i = i.clamp(back, self.len as isize - width as isize + back);
        }
        (i - (width / 2 - 1) as isize, s - i as f64)
    }

    fn wrap(&self, i: isize) -> usize {
        if self.periodic {
            i.rem_euclid(self.len as isize) as usize
        } else {
            i as usize
        }
    }
}

/// `phi(x) = x + D(x)`, with the displacement `D` stored at grid nodes.
#[derive(Debug, Clone, Serialize)]
pub struct GridMap {
    axes: Vec<Axis>,
    interpolation: Interpolation,
    #[serde(skip)]
    strides: Vec<usize>,
    #[serde(skip)]
    data: Vec<f64>,
}

impl GridMap {
    /// `displacements` holds one `m`-vector per node, last axis fastest.
    pub fn new(axes: Vec<Axis>, interpolation: Interpolation, displacements: Vec<f64>) -> Self {
        let m = axes.len();
        let mut strides = vec![1; m];
        for a in (0..m.saturating_sub(1)).rev() {
            strides[a] = strides[a + 1] * axes[a + 1].len;
        }
        let total: usize = axes.iter().map(|a| a.len).product();
        assert_eq!(displacements.len(), total * m, "one displacement vector per node");
        GridMap { axes, interpolation, strides, data: displacements }
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn interpolation(&self) -> Interpolation {
        self.interpolation
    }

    pub fn node_count(&self) -> usize {
        self.axes.iter().map(|a| a.len).product()
    }

    /// Coordinates of node `flat`.
    pub fn node_coords(&self, flat: usize) -> Vec<f64> {
        self.axes
            .iter()
            .zip(&self.strides)
            .map(|(a, s)| a.node((flat / s) % a.len))
            .collect()
    }

    /// Coordinates of all nodes in storage order.
    pub fn nodes(axes: &[Axis]) -> Vec<Vec<f64>> {
        let total: usize = axes.iter().map(|a| a.len).product();
        let mut out = Vec::with_capacity(total);
        let mut idx = vec![0usize; axes.len()];
        for _ in 0..total {
            out.push(axes.iter().zip(&idx).map(|(a, &i)| a.node(i)).collect());
            for a in (0..axes.len()).rev() {
                idx[a] += 1;
                if idx[a] < axes[a].len {
                    break;
                }
                idx[a] = 0;
            }
        }
        out
    }

    fn check(&self, x: &[f64]) -> Result<(), MapError> {
        if x.len() != self.axes.len() {
            return Err(MapError::DimensionMismatch { expected: self.axes.len(), got: x.len() });
        }
        Ok(())
    }

    /// Displacement and, up to `order`, its first and second derivatives.
    fn interpolate(&self, x: &[f64], order: usize) -> (Vec<f64>, DMatrix<f64>, Vec<DMatrix<f64>>) {
        let m = self.axes.len();
        let width = self.interpolation.width();
        let mut starts = Vec::with_capacity(m);
        let mut w = Vec::with_capacity(m);
        for (a, &xa) in self.axes.iter().zip(x) {
            let (start, t) = a.locate(xa, width);
            let mut ws = self.interpolation.weights(t);
            for v in &mut ws[1] {
                *v /= a.step;
            }
            for v in &mut ws[2] {
                *v /= a.step * a.step;
            }
            starts.push(start);
            w.push(ws);
        }
        let mut value = vec![0.0; m];
        let mut jac = DMatrix::zeros(m, m);
        let mut second = vec![DMatrix::zeros(m, m); if order >= 2 { m } else { 0 }];
        let mut offs = vec![0usize; m];
        let combos = width.pow(m as u32);
        for _ in 0..combos {
            let mut flat = 0;
            for a in 0..m {
                flat += self.axes[a].wrap(starts[a] + offs[a] as isize) * self.strides[a];
            }
            let node = &self.data[flat * m..(flat + 1) * m];
            let base: f64 = (0..m).map(|a| w[a][0][offs[a]]).product();
            for i in 0..m {
                value[i] += base * node[i];
            }
            if order >= 1 {
                for k in 0..m {
                    let wk: f64 = (0..m).map(|a| w[a][usize::from(a == k)][offs[a]]).product();
                    for i in 0..m {
                        jac[(i, k)] += wk * node[i];
                    }
                    if order >= 2 {
                        for j in 0..m {
                            let wkj: f64 = (0..m)
                                .map(|a| {
                                    let d = usize::from(a == k) + usize::from(a == j);
                                    w[a][d][offs[a]]
                                })
                                .product();
                            for i in 0..m {
                                second[k][(i, j)] += wkj * node[i];
                            }
                        }
                    }
                }
            }
            for a in (0..m).rev() {
                offs[a] += 1;
                if offs[a] < width {
                    break;
                }
                offs[a] = 0;
            }
        }
        (value, jac, second)
    }
}

impl SmoothMap for GridMap {
    fn dim(&self) -> usize {
        self.axes.len()
    }

    fn value(&self, x: &[f64]) -> Result<Vec<f64>, MapError> {
        self.check(x)?;
        let (d, _, _) = self.interpolate(x, 0);
        Ok(x.iter().zip(d).map(|(a, b)| a + b).collect())
    }

    fn jet(&self, x: &[f64]) -> Result<Jet, MapError> {
        self.check(x)?;
        let (d, dd, second) = self.interpolate(x, 2);
        let m = self.dim();
        Ok(Jet {
            value: x.iter().zip(d).map(|(a, b)| a + b).collect(),
            jacobian: DMatrix::identity(m, m) + dd,
            second,
        })
    }

    fn jacobian(&self, x: &[f64]) -> Result<DMatrix<f64>, MapError> {
        self.check(x)?;
        let (_, dd, _) = self.interpolate(x, 1);
        let m = self.dim();
        Ok(DMatrix::identity(m, m) + dd)
    }
}
