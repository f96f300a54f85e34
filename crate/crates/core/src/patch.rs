//! Euler–Lagrange residual and patch error on Hermite cells.
//!
//! The residual is obtained from one evaluation of the density on nested
//! dual numbers: the outer layer differentiates with respect to the jet slots,
//! the inner layer carries total derivatives along each space-time axis.
//! Seeding the scalar type with [`Hyper`] variables over the jet then yields
//! the exact gradient and Hessian of `R` with respect to the jet.

use crate::autodiff::{taylor_len, taylor_table, Dual, Hyper, Scalar, Taylor4};
use crate::error::{Error, Result};
use crate::hermite::{eval_patch, fit_hermite, HermiteBasis};
use crate::lagrangian::{dispatch_layout, Jet, LagrangianDensity, Layout};
use crate::quadrature::QuadratureRule;

/// Residual for up to two field components; unused entries are zero.
pub(crate) fn residual_generic<L, S, const P: usize, const D: usize>(
    density: &L,
    first: &[S],
    second: &[S],
    coord: &[f64],
) -> [S; 2]
where
    L: LagrangianDensity,
    S: Scalar,
{
    let layout = density.layout();
    let dq = layout.field_dim();
    let u: [Dual<Dual<S, D>, P>; P] = std::array::from_fn(|j| {
        let (k, c) = (j / dq, j % dq);
        let inner = Dual {
            v: first[j],
            d: std::array::from_fn(|a| {
                if k == 0 {
                    first[layout.slot(1 + a, c)]
                } else {
                    second[Layout::pair(a, k - 1) * dq + c]
                }
            }),
        };
        let mut out = Dual::constant(inner);
        out.d[j] = Dual::constant(S::cst(1.0));
        out
    });
    let xi: [Dual<Dual<S, D>, P>; D] =
        std::array::from_fn(|a| Dual::constant(Dual::variable(S::cst(coord[a]), a)));
    let out = density.lagrangian(&u, &xi);
    let mut r = [S::zero(); 2];
    for (c, rc) in r.iter_mut().enumerate().take(dq) {
        let mut v = out.d[c].v;
        for a in 0..D {
            v -= out.d[layout.slot(1 + a, c)].d[a];
        }
        *rc = v;
    }
    r
}

/// `R = ∂L/∂q − Σ_a D_a(∂L/∂q_a)`, one entry per field component.
pub fn residual<L: LagrangianDensity>(density: &L, jet: &Jet) -> Result<Vec<f64>> {
    jet.check()?;
    let layout = density.layout();
    if jet.layout != layout {
        return Err(Error::DimensionMismatch(format!(
            "jet layout {:?} does not match density layout {:?}",
            jet.layout, layout
        )));
    }
    let second = jet.second.as_ref().ok_or(Error::MissingSecondDerivatives)?;
    let r = dispatch_layout!(layout, P, D, _NJ => {
        residual_generic::<L, f64, P, D>(density, &jet.first, second, &jet.coord)
    });
    Ok(r[..layout.field_dim()].to_vec())
}

/// Residual with its exact gradient and Hessian over the `NJ` jet variables
/// (first-order slots, then second partials).
pub(crate) struct PointDerivs<const NJ: usize> {
    pub r: [f64; 2],
    pub g: [[f64; NJ]; 2],
    pub h: [[[f64; NJ]; NJ]; 2],
}

pub(crate) fn residual_derivs<L, const P: usize, const D: usize, const NJ: usize>(
    density: &L,
    z: &[f64; NJ],
    coord: &[f64],
) -> PointDerivs<NJ>
where
    L: LagrangianDensity,
{
    if !density.coordinate_dependent() {
        match P {
            2 => return residual_derivs_taylor::<L, P, D, NJ, { taylor_len(2) }>(density, z, coord),
            3 => return residual_derivs_taylor::<L, P, D, NJ, { taylor_len(3) }>(density, z, coord),
            4 => return residual_derivs_taylor::<L, P, D, NJ, { taylor_len(4) }>(density, z, coord),
            _ => {}
        }
    }
    residual_derivs_nested::<L, P, D, NJ>(density, z, coord)
}

/// [`residual_derivs`] by nesting [`Hyper`] over the jet inside the residual's
/// own dual layers; handles explicit coordinate dependence.
pub(crate) fn residual_derivs_nested<L, const P: usize, const D: usize, const NJ: usize>(
    density: &L,
    z: &[f64; NJ],
    coord: &[f64],
) -> PointDerivs<NJ>
where
    L: LagrangianDensity,
{
    let vars: [Hyper<f64, NJ>; NJ] = std::array::from_fn(|v| Hyper::variable(z[v], v));
    let r = residual_generic::<L, Hyper<f64, NJ>, P, D>(density, &vars[..P], &vars[P..], coord);
    PointDerivs {
        r: [r[0].v, r[1].v],
        g: [r[0].g, r[1].g],
        h: [r[0].h, r[1].h],
    }
}

/// [`residual_derivs`] for densities without explicit coordinate
/// dependence, from one fourth-order Taylor expansion of `L` in the slots.
///
/// With `D_a u_j` a single jet variable `z[e(a, j)]`, the residual reads
/// `R = L_q − Σ_{a,j} L_{u_k u_j} z[e]` (`k` the slot of `∂_a q`), so its
/// gradient and Hessian need partials of `L` up to fourth order.
pub(crate) fn residual_derivs_taylor<L, const P: usize, const D: usize, const NJ: usize, const N: usize>(
    density: &L,
    z: &[f64; NJ],
    coord: &[f64],
) -> PointDerivs<NJ>
where
    L: LagrangianDensity,
{
    let layout = density.layout();
    let dq = layout.field_dim();
    let u: [Taylor4<P, N>; P] = std::array::from_fn(|i| Taylor4::variable(z[i], i));
    let xi: [Taylor4<P, N>; D] = std::array::from_fn(|a| Taylor4::constant(coord[a]));
    let l = density.lagrangian(&u, &xi);
    let tab = taylor_table(P);
    let d = |vars: &[usize]| -> f64 {
        let k = tab.index(vars);
        l.c[k] * tab.factorials[k]
    };
    let jet_index = |a: usize, j: usize| -> usize {
        let (deriv, c) = (j / dq, j % dq);
        if deriv == 0 {
            layout.slot(1 + a, c)
        } else {
            P + Layout::pair(a, deriv - 1) * dq + c
        }
    };
    let mut out = PointDerivs {
        r: [0.0; 2],
        g: [[0.0; NJ]; 2],
        h: [[[0.0; NJ]; NJ]; 2],
    };
    for c in 0..dq {
        let q = layout.slot(0, c);
        let (r, g, h) = (&mut out.r[c], &mut out.g[c], &mut out.h[c]);
        *r = d(&[q]);
        for m in 0..P {
            g[m] = d(&[q, m]);
            for n in 0..P {
                h[m][n] = d(&[q, m, n]);
            }
        }
        for a in 0..D {
            let k = layout.slot(1 + a, c);
            for j in 0..P {
                let e = jet_index(a, j);
                let ze = z[e];
                *r -= d(&[k, j]) * ze;
                g[e] -= d(&[k, j]);
                for m in 0..P {
                    let gm = d(&[k, j, m]);
                    g[m] -= gm * ze;
                    for n in 0..P {
                        h[m][n] -= d(&[k, j, m, n]) * ze;
                    }
                    h[m][e] -= gm;
                    h[e][m] -= gm;
                }
            }
        }
    }
    out
}

/// Affine part `R(z) ≈ r0 + A z` of the residual at the zero jet.
pub(crate) fn residual_linearization<L, const P: usize, const D: usize, const NJ: usize>(
    density: &L,
    coord: &[f64],
) -> ([f64; 2], [[f64; NJ]; 2])
where
    L: LagrangianDensity,
{
    let vars: [Dual<f64, NJ>; NJ] = std::array::from_fn(|v| Dual::variable(0.0, v));
    let r = residual_generic::<L, Dual<f64, NJ>, P, D>(density, &vars[..P], &vars[P..], coord);
    ([r[0].v, r[1].v], [r[0].d, r[1].d])
}

/// Precomputed Hermite evaluation rows at the quadrature points of a cell
/// with fixed edge lengths.
///
/// Jet variable `v` of a point is `Σ_j rows[v / dq][j] · data[j·dq + v % dq]`,
/// so a cell's jet is linear in its node data.
#[derive(Clone, Debug)]
pub struct CellStencil {
    pub basis: HermiteBasis,
    pub size: Vec<f64>,
    /// Quadrature points relative to the cell's lower corner.
    pub offsets: Vec<Vec<f64>>,
    /// Physical quadrature weights.
    pub weights: Vec<f64>,
    rows: Vec<f64>,
    n_rows: usize,
}

impl CellStencil {
    pub fn new(basis: HermiteBasis, size: &[f64], counts: &[usize]) -> Self {
        let rule = QuadratureRule::tensor(
            counts,
            &size.iter().map(|&h| (0.0, h)).collect::<Vec<_>>(),
        );
        let n_rows = 1 + basis.axes() + basis.layout().pairs();
        let mut rows = Vec::with_capacity(rule.len() * n_rows * basis.size());
        for p in &rule.points {
            let u: Vec<f64> = p.iter().zip(size).map(|(x, h)| x / h).collect();
            for row in basis.stencil(&u, size) {
                rows.extend(row);
            }
        }
        Self {
            basis,
            size: size.to_vec(),
            offsets: rule.points,
            weights: rule.weights,
            rows,
            n_rows,
        }
    }

    pub fn points(&self) -> usize {
        self.weights.len()
    }

    /// Row `r` (see [`HermiteBasis::derivative_rows`]) at point `i`.
    pub fn row(&self, i: usize, r: usize) -> &[f64] {
        let n = self.basis.size();
        let start = (i * self.n_rows + r) * n;
        &self.rows[start..start + n]
    }

    /// Coefficient of node data entry `k` in jet variable `v` at point `i`.
    pub fn coeff(&self, i: usize, v: usize, k: usize) -> f64 {
        let dq = self.basis.layout().field_dim();
        if k % dq != v % dq {
            return 0.0;
        }
        self.row(i, v / dq)[k / dq]
    }

    pub fn jet_vars<const NJ: usize>(&self, i: usize, data: &[f64]) -> [f64; NJ] {
        let dq = self.basis.layout().field_dim();
        std::array::from_fn(|v| {
            let c = v % dq;
            self.row(i, v / dq)
                .iter()
                .enumerate()
                .map(|(j, r)| r * data[j * dq + c])
                .sum()
        })
    }

    pub fn coord(&self, lo: &[f64], i: usize) -> Vec<f64> {
        lo.iter().zip(&self.offsets[i]).map(|(a, b)| a + b).collect()
    }
}

/// `J = Σ ω‖R‖²` on one cell from its node data.
pub(crate) fn cell_error<L, const P: usize, const D: usize, const NJ: usize>(
    density: &L,
    stencil: &CellStencil,
    lo: &[f64],
    data: &[f64],
) -> f64
where
    L: LagrangianDensity,
{
    let dq = density.layout().field_dim();
    let mut j = 0.0;
    for i in 0..stencil.points() {
        let z = stencil.jet_vars::<NJ>(i, data);
        let coord = stencil.coord(lo, i);
        let r = residual_generic::<L, f64, P, D>(density, &z[..P], &z[P..], &coord);
        let sq: f64 = r[..dq].iter().map(|v| v * v).sum();
        j += stencil.weights[i] * sq;
    }
    j
}

/// Gradient and Hessian of a cell's `J` with respect to a subset of its node
/// data entries.
pub(crate) struct CellDerivs {
    pub j: f64,
    pub g: Vec<f64>,
    /// Row-major `free × free`.
    pub h: Vec<f64>,
}

pub(crate) fn cell_derivs<L, const P: usize, const D: usize, const NJ: usize>(
    density: &L,
    stencil: &CellStencil,
    lo: &[f64],
    data: &[f64],
    free: &[usize],
) -> CellDerivs
where
    L: LagrangianDensity,
{
    let dq = density.layout().field_dim();
    let nf = free.len();
    let mut out = CellDerivs {
        j: 0.0,
        g: vec![0.0; nf],
        h: vec![0.0; nf * nf],
    };
    let mut m = vec![[0.0; NJ]; nf];
    let mut a = vec![0.0; nf];
    for i in 0..stencil.points() {
        let z = stencil.jet_vars::<NJ>(i, data);
        let coord = stencil.coord(lo, i);
        let pd = residual_derivs::<L, P, D, NJ>(density, &z, &coord);
        for (f, &k) in free.iter().enumerate() {
            for v in 0..NJ {
                m[f][v] = stencil.coeff(i, v, k);
            }
        }
        let w = stencil.weights[i];
        for c in 0..dq {
            let r = pd.r[c];
            out.j += w * r * r;
            for f in 0..nf {
                a[f] = (0..NJ).map(|v| pd.g[c][v] * m[f][v]).sum();
                out.g[f] += 2.0 * w * r * a[f];
            }
            for f in 0..nf {
                let hm: [f64; NJ] =
                    std::array::from_fn(|v| (0..NJ).map(|u| pd.h[c][v][u] * m[f][u]).sum());
                for e in f..nf {
                    let second: f64 = (0..NJ).map(|v| m[e][v] * hm[v]).sum();
                    let val = 2.0 * w * (a[f] * a[e] + r * second);
                    out.h[f * nf + e] += val;
                    if e != f {
                        out.h[e * nf + f] += val;
                    }
                }
            }
        }
    }
    out
}

/// Quadratic form of `J` for densities whose residual is affine in the jet:
/// `J = ½ dᵀK d + kᵀd + j0` over the cell's node data `d`.
#[derive(Clone, Debug)]
pub struct AffineCell {
    pub n: usize,
    /// Row-major `n × n`.
    pub k_mat: Vec<f64>,
    pub k_vec: Vec<f64>,
    pub j0: f64,
}

impl AffineCell {
    pub(crate) fn build<L, const P: usize, const D: usize, const NJ: usize>(
        density: &L,
        stencil: &CellStencil,
        lo: &[f64],
    ) -> Self
    where
        L: LagrangianDensity,
    {
        let dq = density.layout().field_dim();
        let n = stencil.basis.data_len();
        let mut k_mat = vec![0.0; n * n];
        let mut k_vec = vec![0.0; n];
        let mut j0 = 0.0;
        let mut wrow = vec![0.0; n];
        for i in 0..stencil.points() {
            let coord = stencil.coord(lo, i);
            let (r0, a) = residual_linearization::<L, P, D, NJ>(density, &coord);
            let w = stencil.weights[i];
            for c in 0..dq {
                for (k, wk) in wrow.iter_mut().enumerate() {
                    *wk = (0..NJ).map(|v| a[c][v] * stencil.coeff(i, v, k)).sum();
                }
                for p in 0..n {
                    if wrow[p] == 0.0 {
                        continue;
                    }
                    let s = 2.0 * w * wrow[p];
                    for q in 0..n {
                        k_mat[p * n + q] += s * wrow[q];
                    }
                    k_vec[p] += s * r0[c];
                }
                j0 += w * r0[c] * r0[c];
            }
        }
        Self {
            n,
            k_mat,
            k_vec,
            j0,
        }
    }

    pub fn value(&self, d: &[f64]) -> f64 {
        let mut j = self.j0;
        for p in 0..self.n {
            let kd: f64 = (0..self.n).map(|q| self.k_mat[p * self.n + q] * d[q]).sum();
            j += d[p] * (0.5 * kd + self.k_vec[p]);
        }
        j
    }
}

fn cell_lo_size(nodes: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let d = nodes[0].len();
    let lo = nodes[0].clone();
    let size = (0..d).map(|a| nodes[1 << a][a] - lo[a]).collect();
    (lo, size)
}

fn check_rule(rule: &QuadratureRule, lo: &[f64], size: &[f64]) -> Result<()> {
    for p in &rule.points {
        if p.len() != lo.len() {
            return Err(Error::DimensionMismatch(
                "quadrature rule dimension differs from the cell".into(),
            ));
        }
        let inside = (0..lo.len()).all(|a| {
            let tol = 1e-9 * size[a];
            p[a] >= lo[a] - tol && p[a] <= lo[a] + size[a] + tol
        });
        if !inside {
            return Err(Error::OutsidePatch { point: p.clone() });
        }
    }
    Ok(())
}

/// Patch error `J = Σ ω_i ‖R(q̂ | x_i)‖²` of the interpolant through `data`.
pub fn patch_error<L: LagrangianDensity>(
    density: &L,
    nodes: &[Vec<f64>],
    data: &[f64],
    rule: &QuadratureRule,
) -> Result<f64> {
    let patch = fit_hermite(nodes, data, &HermiteBasis::new(density.layout()))?;
    let mut j = 0.0;
    for (p, w) in rule.points.iter().zip(&rule.weights) {
        let r = residual(density, &eval_patch(&patch, p)?)?;
        j += w * r.iter().map(|v| v * v).sum::<f64>();
    }
    Ok(j)
}

/// `J` with its gradient and Hessian over the entries of `data` selected by
/// `free`.
pub fn patch_error_derivatives<L: LagrangianDensity>(
    density: &L,
    nodes: &[Vec<f64>],
    data: &[f64],
    rule: &QuadratureRule,
    free: &[bool],
) -> Result<(f64, Vec<f64>, Vec<Vec<f64>>)> {
    let basis = HermiteBasis::new(density.layout());
    fit_hermite(nodes, data, &basis)?;
    if free.len() != data.len() {
        return Err(Error::DimensionMismatch(format!(
            "mask has {} entries, data has {}",
            free.len(),
            data.len()
        )));
    }
    let (lo, size) = cell_lo_size(nodes);
    check_rule(rule, &lo, &size)?;
    let stencil = CellStencil::from_rule(basis, &lo, &size, rule);
    let idx: Vec<usize> = (0..free.len()).filter(|&k| free[k]).collect();
    let d = dispatch_layout!(density.layout(), P, D, NJ => {
        cell_derivs::<L, P, D, NJ>(density, &stencil, &lo, data, &idx)
    });
    let n = idx.len();
    let h = (0..n).map(|r| d.h[r * n..(r + 1) * n].to_vec()).collect();
    Ok((d.j, d.g, h))
}

impl CellStencil {
    /// Stencil at the points of an explicit rule given in physical coordinates.
    pub fn from_rule(basis: HermiteBasis, lo: &[f64], size: &[f64], rule: &QuadratureRule) -> Self {
        let n_rows = 1 + basis.axes() + basis.layout().pairs();
        let mut rows = Vec::with_capacity(rule.len() * n_rows * basis.size());
        let mut offsets = Vec::with_capacity(rule.len());
        for p in &rule.points {
            let off: Vec<f64> = p.iter().zip(lo).map(|(x, l)| x - l).collect();
            let u: Vec<f64> = off.iter().zip(size).map(|(x, h)| x / h).collect();
            for row in basis.stencil(&u, size) {
                rows.extend(row);
            }
            offsets.push(off);
        }
        Self {
            basis,
            size: size.to_vec(),
            offsets,
            weights: rule.weights.clone(),
            rows,
            n_rows,
        }
    }
}

/// Discrete action `S_d = Σ ω_i L(q̂(x_i), ∂q̂(x_i), x_i)`.
pub fn discrete_action<L: LagrangianDensity>(
    density: &L,
    nodes: &[Vec<f64>],
    data: &[f64],
    rule: &QuadratureRule,
) -> Result<f64> {
    let patch = fit_hermite(nodes, data, &HermiteBasis::new(density.layout()))?;
    let mut s = 0.0;
    for (p, w) in rule.points.iter().zip(&rule.weights) {
        let jet = eval_patch(&patch, p)?;
        s += w * density.lagrangian(&jet.first, &jet.coord);
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hermite::{cell_nodes, data_index};
    use crate::lagrangian::{
        blend_densities, ConstantDensity, DoublePendulum, HarmonicOscillator, Wave1d,
    };
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn wave_data(basis: &HermiteBasis, nodes: &[Vec<f64>], k: f64, w: f64) -> Vec<f64> {
        let mut data = vec![0.0; basis.data_len()];
        for (ni, x) in nodes.iter().enumerate() {
            let ph = k * x[1] - w * x[0];
            data[data_index(basis, ni, 0, 0)] = ph.sin();
            data[data_index(basis, ni, 1, 0)] = -w * ph.cos();
            data[data_index(basis, ni, 2, 0)] = k * ph.cos();
            data[data_index(basis, ni, 3, 0)] = k * w * ph.sin();
        }
        data
    }

    fn plane_wave_jet(t: f64, x: f64, k: f64, w: f64) -> Jet {
        let ph = k * x - w * t;
        let (s, c) = (ph.sin(), ph.cos());
        Jet {
            layout: Layout::wave(1),
            first: vec![s, -w * c, k * c],
            second: Some(vec![-w * w * s, k * w * s, -k * k * s]),
            coord: vec![t, x],
        }
    }

    /// Hand-derived equations of motion for the unit double pendulum.
    fn pendulum_oracle(u: &[f64], acc: &[f64]) -> [f64; 2] {
        let (q1, q2, v1, v2) = (u[0], u[1], u[2], u[3]);
        let (a1, a2) = (acc[0], acc[1]);
        let (s, c) = ((q1 - q2).sin(), (q1 - q2).cos());
        [
            -v1 * v2 * s - 2.0 * q1.sin() - (2.0 * a1 + a2 * c - v2 * s * (v1 - v2)),
            v1 * v2 * s - q2.sin() - (a2 + a1 * c - v1 * s * (v1 - v2)),
        ]
    }

    #[test]
    fn plane_wave_residual_vanishes() {
        let d = Wave1d { c2: 0.05 };
        let (k, w) = (2.0, 2.0 * 0.05f64.sqrt());
        for i in 0..20 {
            let r = residual(&d, &plane_wave_jet(0.3 * i as f64, 0.7 * i as f64, k, w)).unwrap();
            assert!(r[0].abs() < 1e-10);
        }
    }

    #[test]
    fn wave_residual_of_t_squared() {
        let d = Wave1d { c2: 0.05 };
        let jet = Jet {
            layout: d.layout(),
            first: vec![4.0, 4.0, 0.0],
            second: Some(vec![2.0, 0.0, 0.0]),
            coord: vec![2.0, 0.0],
        };
        assert_eq!(residual(&d, &jet).unwrap(), vec![-2.0]);
    }

    #[test]
    fn missing_second_derivatives_rejected() {
        let d = Wave1d { c2: 0.05 };
        let jet = Jet::first_order(d.layout(), vec![0.0; 3], vec![0.0; 2]).unwrap();
        assert!(matches!(residual(&d, &jet), Err(Error::MissingSecondDerivatives)));
    }

    #[test]
    fn pendulum_residual_matches_equations_of_motion() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let u: Vec<f64> = (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let acc: Vec<f64> = (0..2).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let jet = Jet {
                layout: Layout::ode(2),
                first: u.clone(),
                second: Some(acc.clone()),
                coord: vec![0.0],
            };
            let r = residual(&DoublePendulum, &jet).unwrap();
            let want = pendulum_oracle(&u, &acc);
            for c in 0..2 {
                assert!((r[c] - want[c]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn blend_of_identical_densities_matches_homogeneous() {
        let w = Wave1d { c2: 0.05 };
        let b = blend_densities(w, w, 0.5, 7.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let jet = Jet {
                layout: w.layout(),
                first: (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect(),
                second: Some((0..3).map(|_| rng.gen_range(-2.0..2.0)).collect()),
                coord: vec![rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)],
            };
            let a = residual(&w, &jet).unwrap()[0];
            let c = residual(&b, &jet).unwrap()[0];
            assert!((a - c).abs() < 1e-12);
        }
    }

    #[test]
    fn blend_residual_has_explicit_coordinate_term() {
        // R = −q_tt + (c² q_x)_x = −q_tt + c² q_xx + c²'(x) q_x
        let b = blend_densities(Wave1d { c2: 0.05 }, Wave1d { c2: 0.2 }, 1.0, 3.0).unwrap();
        let x: f64 = 1.2;
        let s = 1.0 / (1.0 + (-3.0 * (x - 1.0)).exp());
        let c2 = 0.05 + 0.15 * s;
        let dc2 = 0.15 * 3.0 * s * (1.0 - s);
        let jet = Jet {
            layout: b.layout(),
            first: vec![0.1, 0.2, 0.7],
            second: Some(vec![0.4, -0.3, 1.1]),
            coord: vec![0.0, x],
        };
        let r = residual(&b, &jet).unwrap()[0];
        assert!((r - (-0.4 + c2 * 1.1 + dc2 * 0.7)).abs() < 1e-13);
    }

    #[test]
    fn exact_solution_in_span_gives_zero_error() {
        // q = t + 2x + 3tx solves q_tt = c² q_xx and lies in the bicubic span.
        let d = Wave1d { c2: 0.05 };
        let basis = HermiteBasis::new(d.layout());
        let nodes = cell_nodes(&[0.0, 0.0], &[0.1, 0.2]);
        let mut data = vec![0.0; 16];
        for (ni, x) in nodes.iter().enumerate() {
            data[data_index(&basis, ni, 0, 0)] = x[0] + 2.0 * x[1] + 3.0 * x[0] * x[1];
            data[data_index(&basis, ni, 1, 0)] = 1.0 + 3.0 * x[1];
            data[data_index(&basis, ni, 2, 0)] = 2.0 + 3.0 * x[0];
            data[data_index(&basis, ni, 3, 0)] = 3.0;
        }
        let rule = QuadratureRule::tensor(&[3, 6], &[(0.0, 0.1), (0.0, 0.2)]);
        let j = patch_error(&d, &nodes, &data, &rule).unwrap();
        assert!(j < 1e-20);
        let free: Vec<bool> = (0..16).map(|k| k >= 4).collect();
        let (_, g, _) = patch_error_derivatives(&d, &nodes, &data, &rule, &free).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn perturbed_patch_matches_oversampled_quadrature() {
        let d = Wave1d { c2: 0.05 };
        let basis = HermiteBasis::new(d.layout());
        let (k, w) = (2.0, 2.0 * 0.05f64.sqrt());
        let nodes = cell_nodes(&[0.0, 0.0], &[0.1, 0.1]);
        let mut data = wave_data(&basis, &nodes, k, w);
        data[data_index(&basis, 3, 0, 0)] += 0.01;
        let rule = QuadratureRule::tensor(&[3, 6], &[(0.0, 0.1), (0.0, 0.1)]);
        let fine = QuadratureRule::tensor(&[20, 20], &[(0.0, 0.1), (0.0, 0.1)]);
        let j = patch_error(&d, &nodes, &data, &rule).unwrap();
        let jf = patch_error(&d, &nodes, &data, &fine).unwrap();
        assert!(j > 0.0);
        assert!((j - jf).abs() / jf < 0.02, "{j} vs {jf}");
    }

    #[test]
    fn patch_error_is_deterministic_and_order_insensitive() {
        let d = DoublePendulum;
        let basis = HermiteBasis::new(d.layout());
        let nodes = cell_nodes(&[0.0], &[0.02]);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let data: Vec<f64> = (0..basis.data_len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let rule = QuadratureRule::tensor(&[4], &[(0.0, 0.02)]);
        let a = patch_error(&d, &nodes, &data, &rule).unwrap();
        let b = patch_error(&d, &nodes, &data, &rule).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        let mut rev = rule.clone();
        rev.points.reverse();
        rev.weights.reverse();
        let c = patch_error(&d, &nodes, &data, &rev).unwrap();
        assert!((a - c).abs() <= 1e-14 * a);
    }

    fn fd_check<L: LagrangianDensity>(d: &L, nodes: &[Vec<f64>], rule: &QuadratureRule, seed: u64) {
        let basis = HermiteBasis::new(d.layout());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = basis.data_len();
        for _ in 0..50 {
            let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let free: Vec<bool> = (0..n).map(|k| k >= n / 2).collect();
            let idx: Vec<usize> = (0..n).filter(|&k| free[k]).collect();
            let (_, g, h) = patch_error_derivatives(d, nodes, &data, rule, &free).unwrap();
            let eps = 1e-6;
            for (f, &k) in idx.iter().enumerate() {
                let mut p = data.clone();
                let mut m = data.clone();
                p[k] += eps;
                m[k] -= eps;
                let fd = (patch_error(d, nodes, &p, rule).unwrap()
                    - patch_error(d, nodes, &m, rule).unwrap())
                    / (2.0 * eps);
                let scale = g.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-8);
                assert!((fd - g[f]).abs() / scale < 1e-5, "grad {f}: {fd} vs {}", g[f]);
                let (_, gp, _) = patch_error_derivatives(d, nodes, &p, rule, &free).unwrap();
                let (_, gm, _) = patch_error_derivatives(d, nodes, &m, rule, &free).unwrap();
                let hscale = h.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-8);
                for e in 0..idx.len() {
                    let fdh = (gp[e] - gm[e]) / (2.0 * eps);
                    assert!((fdh - h[e][f]).abs() / hscale < 1e-4, "hess {e},{f}");
                    assert_eq!(h[e][f], h[f][e]);
                }
            }
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let nodes = cell_nodes(&[0.0], &[0.1]);
        let rule = QuadratureRule::tensor(&[2], &[(0.0, 0.1)]);
        fd_check(&DoublePendulum, &nodes, &rule, 21);
        let nodes = cell_nodes(&[0.0, -0.5], &[0.2, 0.3]);
        let rule = QuadratureRule::tensor(&[3, 6], &[(0.0, 0.2), (-0.5, -0.2)]);
        let b = blend_densities(Wave1d { c2: 0.05 }, Wave1d { c2: 0.2 }, -0.3, 5.0).unwrap();
        fd_check(&b, &nodes, &rule, 22);
    }

    #[test]
    fn affine_form_reproduces_patch_error() {
        let d = Wave1d { c2: 0.05 };
        let basis = HermiteBasis::new(d.layout());
        let stencil = CellStencil::new(basis, &[0.1, 0.2], &[3, 6]);
        let cell = AffineCell::build::<_, 3, 2, 6>(&d, &stencil, &[0.0, 0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let nodes = cell_nodes(&[0.0, 0.0], &[0.1, 0.2]);
        let rule = QuadratureRule::tensor(&[3, 6], &[(0.0, 0.1), (0.0, 0.2)]);
        for _ in 0..10 {
            let data: Vec<f64> = (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let a = cell.value(&data);
            let b = patch_error(&d, &nodes, &data, &rule).unwrap();
            assert!((a - b).abs() <= 1e-12 * b.max(1.0));
        }
    }

    #[test]
    fn discrete_action_examples() {
        let one = ConstantDensity {
            layout: Layout::wave(1),
            value: 1.0,
        };
        let nodes = cell_nodes(&[0.5, 1.0], &[0.2, 0.3]);
        let rule = QuadratureRule::tensor(&[3, 6], &[(0.5, 0.7), (1.0, 1.3)]);
        let s = discrete_action(&one, &nodes, &[0.0; 16], &rule).unwrap();
        assert!((s - 0.06).abs() < 1e-15);

        let free = HarmonicOscillator::free_particle();
        let (v, dt) = (1.7, 0.02);
        let nodes = cell_nodes(&[0.0], &[dt]);
        let rule = QuadratureRule::tensor(&[2], &[(0.0, dt)]);
        let s = discrete_action(&free, &nodes, &[0.0, v, v * dt, v], &rule).unwrap();
        assert!((s - 0.5 * v * v * dt).abs() < 1e-13);
    }

    fn compare_paths<L: LagrangianDensity, const P: usize, const D: usize, const NJ: usize>(d: &L, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..20 {
            let z: [f64; NJ] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
            let coord: Vec<f64> = (0..D).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let a = residual_derivs_nested::<L, P, D, NJ>(d, &z, &coord);
            let b = residual_derivs::<L, P, D, NJ>(d, &z, &coord);
            let tol = |x: f64| 1e-10 * (1.0 + x.abs());
            for c in 0..d.layout().field_dim() {
                assert!((a.r[c] - b.r[c]).abs() < tol(a.r[c]));
                for m in 0..NJ {
                    assert!((a.g[c][m] - b.g[c][m]).abs() < tol(a.g[c][m]), "g[{m}]: {} vs {}", a.g[c][m], b.g[c][m]);
                    for n in 0..NJ {
                        let (x, y) = (a.h[c][m][n], b.h[c][m][n]);
                        assert!((x - y).abs() < tol(x), "h[{m}][{n}]: {x} vs {y}");
                    }
                }
            }
        }
    }

    #[test]
    fn taylor_residual_derivatives_match_nested_carriers() {
        use crate::lagrangian::Wave2d;
        use crate::mlp::MlpDensity;
        compare_paths::<_, 2, 1, 3>(&HarmonicOscillator::unit(), 1);
        compare_paths::<_, 4, 1, 6>(&DoublePendulum, 2);
        compare_paths::<_, 3, 2, 6>(&Wave1d { c2: 0.3 }, 3);
        compare_paths::<_, 4, 3, 10>(&Wave2d { c2: 0.7 }, 4);
        compare_paths::<_, 3, 2, 6>(&MlpDensity::new(Layout::wave(1), &[8, 8], 5).unwrap(), 5);
        compare_paths::<_, 4, 3, 10>(&MlpDensity::new(Layout::wave(2), &[6], 6).unwrap(), 6);
    }
}
