//! Tensor-product Gauss–Legendre quadrature over rectangular cells.

use std::f64::consts::PI;

/// Nodes and weights of the `n`-point Gauss–Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "quadrature needs at least one point");
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, d) = legendre(n, z);
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(n, z);
        let wi = 2.0 / ((1.0 - z * z) * d * d);
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    if n % 2 == 1 {
        x[n / 2] = 0.0;
    }
    (x, w)
}

/// `P_n(z)` and `P_n'(z)` by the three-term recurrence.
fn legendre(n: usize, z: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = z;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * z * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (z * p1 - p0) / (z * z - 1.0);
    (p1, d)
}

/// Quadrature rule on a cell given as per-axis `[lo, hi]` intervals.
///
/// Points are stored axis-major (`points[i][axis]`) with time on axis 0, and
/// the last axis varies fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadratureRule {
    pub counts: Vec<usize>,
    pub points: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    /// Tensor Gauss–Legendre rule over `bounds`, `counts[a]` points on axis `a`.
    pub fn tensor(counts: &[usize], bounds: &[(f64, f64)]) -> Self {
        assert_eq!(counts.len(), bounds.len());
        let axes: Vec<(Vec<f64>, Vec<f64>)> = counts
            .iter()
            .zip(bounds)
            .map(|(&n, &(lo, hi))| {
                let (x, w) = gauss_legendre(n);
                let half = 0.5 * (hi - lo);
                let mid = 0.5 * (hi + lo);
                (
                    x.iter().map(|&xi| mid + half * xi).collect(),
                    w.iter().map(|&wi| half * wi).collect(),
                )
            })
            .collect();
        let total: usize = counts.iter().product();
        let mut points = Vec::with_capacity(total);
        let mut weights = Vec::with_capacity(total);
        let mut idx = vec![0usize; counts.len()];
        for _ in 0..total {
            points.push(idx.iter().enumerate().map(|(a, &i)| axes[a].0[i]).collect());
            weights.push(idx.iter().enumerate().map(|(a, &i)| axes[a].1[i]).product());
            for a in (0..counts.len()).rev() {
                idx[a] += 1;
                if idx[a] < counts[a] {
                    break;
                }
                idx[a] = 0;
            }
        }
        Self {
            counts: counts.to_vec(),
            points,
            weights,
        }
    }

    /// Rule on the unit cube `[0, 1]^d`.
    pub fn unit(counts: &[usize]) -> Self {
        Self::tensor(counts, &vec![(0.0, 1.0); counts.len()])
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn integrate(&self, f: impl Fn(&[f64]) -> f64) -> f64 {
        self.points
            .iter()
            .zip(&self.weights)
            .map(|(p, w)| w * f(p))
            .sum()
    }
}
