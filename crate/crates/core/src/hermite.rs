//! Tensor-product cubic Hermite interpolation on rectangular space-time cells.
//!
//! A cell has `2^D` corner nodes (`D` = number of space-time axes). Corner
//! `c` sits at `lo + bit_a(c)·h` on axis `a`. Each node carries, per field
//! component, the mixed derivatives `∂^m q` for every subset `m` of axes, so
//! the basis has `4^D` monomials `Π u_a^{e_a}` with `e_a ≤ 3`.

use std::sync::OnceLock;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::lagrangian::{Jet, Layout};

const MASKS_ODE: [usize; 2] = [0b0, 0b1];
const MASKS_1D: [usize; 4] = [0b00, 0b01, 0b10, 0b11];
// q, q_t, q_x, q_y, q_xt, q_yt, q_xy, q_xyt
const MASKS_2D: [usize; 8] = [0b000, 0b001, 0b010, 0b100, 0b011, 0b101, 0b110, 0b111];

/// Monomial basis for one field component on the unit cube.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HermiteBasis {
    layout: Layout,
}

impl HermiteBasis {
    pub fn new(layout: Layout) -> Self {
        Self { layout }
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn axes(&self) -> usize {
        self.layout.axes()
    }

    pub fn nodes(&self) -> usize {
        1 << self.axes()
    }

    /// Per-node derivative masks in storage order (bit 0 = t, 1 = x, 2 = y).
    pub fn masks(&self) -> &'static [usize] {
        match self.axes() {
            1 => &MASKS_ODE,
            2 => &MASKS_1D,
            _ => &MASKS_2D,
        }
    }

    /// Monomials per component; equals the degrees of freedom per component.
    pub fn size(&self) -> usize {
        1 << (2 * self.axes())
    }

    /// Entries of the node data vector (all nodes and components).
    pub fn data_len(&self) -> usize {
        self.size() * self.layout.field_dim()
    }

    /// Exponent of axis `a` in monomial `e` (constant first, axis 0 fastest).
    pub fn exponent(e: usize, a: usize) -> usize {
        (e >> (2 * a)) & 3
    }

    /// Fit matrix on the unit cube: row `(node, mask)`, column monomial.
    pub fn fit_matrix(&self) -> DMatrix<f64> {
        let d = self.axes();
        let masks = self.masks();
        let n = self.size();
        DMatrix::from_fn(n, n, |row, col| {
            let node = row / masks.len();
            let mask = masks[row % masks.len()];
            (0..d)
                .map(|a| {
                    let u = ((node >> a) & 1) as f64;
                    let order = (mask >> a) & 1;
                    mono_deriv(Self::exponent(col, a), u, order)
                })
                .product()
        })
    }

    fn inverse(&self) -> &'static DMatrix<f64> {
        static CACHE: [OnceLock<DMatrix<f64>>; 3] = [OnceLock::new(), OnceLock::new(), OnceLock::new()];
        CACHE[self.axes() - 1].get_or_init(|| {
            self.fit_matrix()
                .lu()
                .try_inverse()
                .expect("unit-cube Hermite fit matrix is nonsingular")
        })
    }

    /// Derivatives of every monomial at a unit-cube point: row `k` holds the
    /// value (`k = 0`), first partials (`1 + a`) and second partials
    /// (`1 + D + pair`).
    pub fn derivative_rows(&self, u: &[f64]) -> Vec<Vec<f64>> {
        let d = self.axes();
        let pairs = self.layout.pairs();
        let mut rows = vec![vec![0.0; self.size()]; 1 + d + pairs];
        for e in 0..self.size() {
            let mut order = [0usize; 3];
            let eval = |ord: &[usize; 3]| -> f64 {
                (0..d)
                    .map(|a| mono_deriv(Self::exponent(e, a), u[a], ord[a]))
                    .product()
            };
            rows[0][e] = eval(&order);
            for a in 0..d {
                order[a] = 1;
                rows[1 + a][e] = eval(&order);
                order[a] = 0;
            }
            for b in 0..d {
                for a in 0..=b {
                    order[a] += 1;
                    order[b] += 1;
                    rows[1 + d + Layout::pair(a, b)][e] = eval(&order);
                    order[a] = 0;
                    order[b] = 0;
                }
            }
        }
        rows
    }

    /// Linear map from one component's physical node data to its physical
    /// jet entries at unit-cube point `u` of a cell with edge lengths `h`.
    pub fn stencil(&self, u: &[f64], h: &[f64]) -> Vec<Vec<f64>> {
        let d = self.axes();
        let inv = self.inverse();
        let masks = self.masks();
        let n = self.size();
        let data_scale: Vec<f64> = (0..n)
            .map(|j| {
                let m = masks[j % masks.len()];
                (0..d).filter(|a| (m >> a) & 1 == 1).map(|a| h[a]).product()
            })
            .collect();
        let rows = self.derivative_rows(u);
        rows.iter()
            .enumerate()
            .map(|(k, row)| {
                let jet_scale = match k {
                    0 => 1.0,
                    k if k <= d => 1.0 / h[k - 1],
                    k => {
                        let (a, b) = pair_axes(k - 1 - d);
                        1.0 / (h[a] * h[b])
                    }
                };
                (0..n)
                    .map(|j| {
                        let s: f64 = (0..n).map(|e| row[e] * inv[(e, j)]).sum();
                        s * data_scale[j] * jet_scale
                    })
                    .collect()
            })
            .collect()
    }
}

/// Inverse of [`Layout::pair`].
pub fn pair_axes(p: usize) -> (usize, usize) {
    let mut b = 0;
    while (b + 1) * (b + 2) / 2 <= p {
        b += 1;
    }
    (p - b * (b + 1) / 2, b)
}

/// `d^order/du^order u^e`.
fn mono_deriv(e: usize, u: f64, order: usize) -> f64 {
    match order {
        0 => u.powi(e as i32),
        1 if e >= 1 => e as f64 * u.powi(e as i32 - 1),
        2 if e >= 2 => (e * (e - 1)) as f64 * u.powi(e as i32 - 2),
        _ => 0.0,
    }
}

/// A fitted Hermite interpolant on one cell.
#[derive(Clone, Debug, PartialEq)]
pub struct HermitePatch {
    pub basis: HermiteBasis,
    /// Corner coordinates in node order.
    pub nodes: Vec<Vec<f64>>,
    /// Node data, node-major, then derivative mask, then component.
    pub data: Vec<f64>,
    /// Coefficients per component over the unit-cube monomials.
    pub theta: Vec<Vec<f64>>,
    pub lo: Vec<f64>,
    pub size: Vec<f64>,
}

/// Index of `(node, mask position, component)` in a node data vector.
pub fn data_index(basis: &HermiteBasis, node: usize, mask_pos: usize, comp: usize) -> usize {
    (node * basis.masks().len() + mask_pos) * basis.layout().field_dim() + comp
}

/// Fits the Hermite interpolant to corner data.
pub fn fit_hermite(nodes: &[Vec<f64>], data: &[f64], basis: &HermiteBasis) -> Result<HermitePatch> {
    let d = basis.axes();
    if nodes.len() != basis.nodes() || nodes.iter().any(|x| x.len() != d) {
        return Err(Error::DimensionMismatch(format!(
            "expected {} nodes with {} coordinates",
            basis.nodes(),
            d
        )));
    }
    if data.len() != basis.data_len() {
        return Err(Error::DimensionMismatch(format!(
            "expected {} node data entries, got {}",
            basis.data_len(),
            data.len()
        )));
    }
    let fail = |reason: &str| Error::FitFailure {
        reason: reason.to_string(),
        coords: nodes.to_vec(),
    };
    let lo = nodes[0].clone();
    let hi: Vec<f64> = (0..d).map(|a| nodes[1 << a][a]).collect();
    let size: Vec<f64> = (0..d).map(|a| hi[a] - lo[a]).collect();
    if size.iter().any(|&h| !(h.is_finite() && h > 0.0)) {
        return Err(fail("degenerate cell"));
    }
    for (c, x) in nodes.iter().enumerate() {
        for a in 0..d {
            let expect = if (c >> a) & 1 == 1 { hi[a] } else { lo[a] };
            if (x[a] - expect).abs() > 1e-9 * size[a] {
                return Err(fail("nodes do not form a rectangular cell"));
            }
        }
    }
    let inv = basis.inverse();
    let masks = basis.masks();
    let dq = basis.layout().field_dim();
    let n = basis.size();
    let theta = (0..dq)
        .map(|c| {
            let rhs: Vec<f64> = (0..n)
                .map(|j| {
                    let m = masks[j % masks.len()];
                    let s: f64 = (0..d).filter(|a| (m >> a) & 1 == 1).map(|a| size[a]).product();
                    data[j * dq + c] * s
                })
                .collect();
            (0..n)
                .map(|e| (0..n).map(|j| inv[(e, j)] * rhs[j]).sum())
                .collect()
        })
        .collect();
    Ok(HermitePatch {
        basis: *basis,
        nodes: nodes.to_vec(),
        data: data.to_vec(),
        theta,
        lo,
        size,
    })
}

/// Corner coordinates of the cell `[lo, lo + h]` in node order.
pub fn cell_nodes(lo: &[f64], h: &[f64]) -> Vec<Vec<f64>> {
    let d = lo.len();
    (0..1usize << d)
        .map(|c| {
            (0..d)
                .map(|a| lo[a] + if (c >> a) & 1 == 1 { h[a] } else { 0.0 })
                .collect()
        })
        .collect()
}

impl HermitePatch {
    fn unit_coords(&self, point: &[f64]) -> Result<Vec<f64>> {
        if point.len() != self.lo.len() {
            return Err(Error::DimensionMismatch(format!(
                "point has {} coordinates, cell has {}",
                point.len(),
                self.lo.len()
            )));
        }
        let u: Vec<f64> = (0..point.len())
            .map(|a| (point[a] - self.lo[a]) / self.size[a])
            .collect();
        if u.iter().any(|&v| !(-1e-9..=1.0 + 1e-9).contains(&v)) {
            return Err(Error::OutsidePatch {
                point: point.to_vec(),
            });
        }
        Ok(u)
    }
}

/// Evaluates the interpolant and its partials up to second order.
pub fn eval_patch(patch: &HermitePatch, point: &[f64]) -> Result<Jet> {
    let u = patch.unit_coords(point)?;
    let basis = patch.basis;
    let layout = basis.layout();
    let d = basis.axes();
    let dq = layout.field_dim();
    let rows = basis.derivative_rows(&u);
    let mut first = vec![0.0; layout.slots()];
    let mut second = vec![0.0; layout.pairs() * dq];
    for c in 0..dq {
        let theta = &patch.theta[c];
        let dot = |row: &Vec<f64>| -> f64 { row.iter().zip(theta).map(|(r, t)| r * t).sum() };
        first[layout.slot(0, c)] = dot(&rows[0]);
        for a in 0..d {
            first[layout.slot(1 + a, c)] = dot(&rows[1 + a]) / patch.size[a];
        }
        for p in 0..layout.pairs() {
            let (a, b) = pair_axes(p);
            second[p * dq + c] = dot(&rows[1 + d + p]) / (patch.size[a] * patch.size[b]);
        }
    }
    Ok(Jet {
        layout,
        first,
        second: Some(second),
        coord: point.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn layouts() -> [Layout; 4] {
        [Layout::ode(1), Layout::ode(2), Layout::wave(1), Layout::wave(2)]
    }

    #[test]
    fn pair_axes_inverts_pair() {
        for b in 0..3 {
            for a in 0..=b {
                assert_eq!(pair_axes(Layout::pair(a, b)), (a, b));
            }
        }
    }

    #[test]
    fn constant_data_gives_constant_coefficients() {
        for layout in layouts() {
            let basis = HermiteBasis::new(layout);
            let mut data = vec![0.0; basis.data_len()];
            for node in 0..basis.nodes() {
                for c in 0..layout.field_dim() {
                    data[data_index(&basis, node, 0, c)] = 1.0;
                }
            }
            let nodes = cell_nodes(&vec![0.3; basis.axes()], &vec![0.7; basis.axes()]);
            let p = fit_hermite(&nodes, &data, &basis).unwrap();
            for th in &p.theta {
                assert!((th[0] - 1.0).abs() < 1e-14);
                assert!(th[1..].iter().all(|v| v.abs() < 1e-13));
            }
        }
    }

    #[test]
    fn reproduces_random_node_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for layout in layouts() {
            let basis = HermiteBasis::new(layout);
            for _ in 0..20 {
                let lo: Vec<f64> = (0..basis.axes()).map(|_| rng.gen_range(-5.0..5.0)).collect();
                let h: Vec<f64> = (0..basis.axes()).map(|_| rng.gen_range(0.01..2.0)).collect();
                let data: Vec<f64> = (0..basis.data_len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let nodes = cell_nodes(&lo, &h);
                let p = fit_hermite(&nodes, &data, &basis).unwrap();
                for (ni, x) in nodes.iter().enumerate() {
                    let jet = eval_patch(&p, x).unwrap();
                    for c in 0..layout.field_dim() {
                        assert!((jet.value(c) - data[data_index(&basis, ni, 0, c)]).abs() < 1e-9);
                        for a in 0..basis.axes() {
                            let pos = basis.masks().iter().position(|&m| m == 1 << a).unwrap();
                            let want = data[data_index(&basis, ni, pos, c)];
                            assert!((jet.d(a, c) - want).abs() < 1e-9 * want.abs().max(1.0));
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn reproduces_polynomials_in_span() {
        // g = t³x³ on [0.2, 0.9] × [−0.4, 0.1]
        let basis = HermiteBasis::new(Layout::wave(1));
        let nodes = cell_nodes(&[0.2, -0.4], &[0.7, 0.5]);
        let mut data = vec![0.0; 16];
        for (ni, x) in nodes.iter().enumerate() {
            let (t, y) = (x[0], x[1]);
            data[data_index(&basis, ni, 0, 0)] = t.powi(3) * y.powi(3);
            data[data_index(&basis, ni, 1, 0)] = 3.0 * t * t * y.powi(3);
            data[data_index(&basis, ni, 2, 0)] = 3.0 * t.powi(3) * y * y;
            data[data_index(&basis, ni, 3, 0)] = 9.0 * t * t * y * y;
        }
        let p = fit_hermite(&nodes, &data, &basis).unwrap();
        for i in 0..=10 {
            for j in 0..=10 {
                let t = 0.2 + 0.07 * i as f64;
                let y = -0.4 + 0.05 * j as f64;
                let jet = eval_patch(&p, &[t, y]).unwrap();
                assert!((jet.value(0) - t.powi(3) * y.powi(3)).abs() < 1e-10);
                assert!((jet.dd(0, 1, 0).unwrap() - 9.0 * t * t * y * y).abs() < 1e-9);
                assert!((jet.dd(1, 1, 0).unwrap() - 6.0 * t.powi(3) * y).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn quadratic_in_time_has_constant_curvature() {
        let basis = HermiteBasis::new(Layout::ode(1));
        let nodes = cell_nodes(&[1.0], &[0.5]);
        let data = [1.0, 2.0, 2.25, 3.0];
        let p = fit_hermite(&nodes, &data, &basis).unwrap();
        for i in 0..=10 {
            let jet = eval_patch(&p, &[1.0 + 0.05 * i as f64]).unwrap();
            assert!((jet.dd(0, 0, 0).unwrap() - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn plane_wave_jet_on_small_cell() {
        // Cubic Hermite: values and first partials are O(h⁴)/O(h³) accurate,
        // second partials only O(h²).
        let (k, w) = (1.0, 0.05f64.sqrt());
        let q = |t: f64, x: f64| (k * x - w * t).sin();
        let basis = HermiteBasis::new(Layout::wave(1));
        let nodes = cell_nodes(&[0.3, 0.1], &[0.1, 0.1]);
        let mut data = vec![0.0; 16];
        for (ni, x) in nodes.iter().enumerate() {
            let (s, c) = ((k * x[1] - w * x[0]).sin(), (k * x[1] - w * x[0]).cos());
            data[data_index(&basis, ni, 0, 0)] = s;
            data[data_index(&basis, ni, 1, 0)] = -w * c;
            data[data_index(&basis, ni, 2, 0)] = k * c;
            data[data_index(&basis, ni, 3, 0)] = k * w * s;
        }
        let p = fit_hermite(&nodes, &data, &basis).unwrap();
        let (t, x) = (0.337, 0.162);
        let jet = eval_patch(&p, &[t, x]).unwrap();
        let ph = k * x - w * t;
        assert!((jet.value(0) - q(t, x)).abs() < 1e-6);
        assert!((jet.d(0, 0) + w * ph.cos()).abs() < 1e-6);
        assert!((jet.d(1, 0) - k * ph.cos()).abs() < 1e-6);
        assert!((jet.dd(0, 0, 0).unwrap() + w * w * ph.sin()).abs() < 1e-6);
        assert!((jet.dd(1, 1, 0).unwrap() + k * k * ph.sin()).abs() < 1e-4);
    }

    #[test]
    fn rejects_degenerate_and_outside() {
        let basis = HermiteBasis::new(Layout::wave(1));
        let mut nodes = cell_nodes(&[0.0, 0.0], &[1.0, 1.0]);
        nodes[1] = nodes[0].clone();
        let err = fit_hermite(&nodes, &[0.0; 16], &basis).unwrap_err();
        assert!(matches!(err, Error::FitFailure { .. }));
        let nodes = cell_nodes(&[0.0, 0.0], &[1.0, 1.0]);
        let p = fit_hermite(&nodes, &[0.0; 16], &basis).unwrap();
        assert!(eval_patch(&p, &[0.5, 1.0 + 1e-10]).is_ok());
        assert!(matches!(
            eval_patch(&p, &[0.5, 1.01]),
            Err(Error::OutsidePatch { .. })
        ));
    }

    #[test]
    fn unit_cell_condition_numbers_are_pinned() {
        let pinned = [
            (Layout::ode(1), COND_ODE),
            (Layout::wave(1), COND_1D),
            (Layout::wave(2), COND_2D),
        ];
        for (layout, want) in pinned {
            let svd = HermiteBasis::new(layout).fit_matrix().svd(false, false);
            let s = svd.singular_values;
            let cond = s.max() / s.min();
            assert!((cond - want).abs() / want < 0.01, "{layout:?}: {cond}");
        }
    }

    const COND_ODE: f64 = 23.781824827630977;
    const COND_1D: f64 = 565.5751921321196;
    const COND_2D: f64 = 13450.410146139702;
}
