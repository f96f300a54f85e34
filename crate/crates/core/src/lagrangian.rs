//! Lagrangian densities on first-order jets.
//!
//! A density is a pure scalar map `L(u, ξ)` of the first-order jet slots
//! `u = (q, q_t, q_x, q_y)` (per field component) and, for inhomogeneous
//! media, the explicit coordinates `ξ = (t, x, y)`. Implementations are written
//! once against [`Scalar`]; all derivatives come from the forward-mode
//! carriers in [`crate::autodiff`].

use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Dual, Hyper, Scalar};
use crate::error::{Error, Result};
use crate::mlp::MlpDensity;

/// Spatial and field dimension of a system.
///
/// Slots are ordered derivative-major: all field values first, then all
/// time derivatives, then `x` derivatives, then `y` derivatives.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Layout {
    spatial_dim: usize,
    field_dim: usize,
}

impl Layout {
    pub fn new(spatial_dim: usize, field_dim: usize) -> Result<Self> {
        match (spatial_dim, field_dim) {
            (0, 1) | (0, 2) | (1, 1) | (2, 1) => Ok(Self {
                spatial_dim,
                field_dim,
            }),
            _ => Err(Error::UnsupportedLayout {
                spatial_dim,
                field_dim,
            }),
        }
    }

    pub const fn ode(field_dim: usize) -> Self {
        assert!(field_dim == 1 || field_dim == 2);
        Self {
            spatial_dim: 0,
            field_dim,
        }
    }

    pub const fn wave(spatial_dim: usize) -> Self {
        assert!(spatial_dim == 1 || spatial_dim == 2);
        Self {
            spatial_dim,
            field_dim: 1,
        }
    }

    pub fn spatial_dim(&self) -> usize {
        self.spatial_dim
    }

    pub fn field_dim(&self) -> usize {
        self.field_dim
    }

    /// Number of space-time axes (time is axis 0).
    pub fn axes(&self) -> usize {
        self.spatial_dim + 1
    }

    pub fn slots(&self) -> usize {
        self.field_dim * (self.spatial_dim + 2)
    }

    /// Slot of `q_c` (`deriv == 0`) or of `∂_a q_c` (`deriv == 1 + a`).
    pub fn slot(&self, deriv: usize, comp: usize) -> usize {
        deriv * self.field_dim + comp
    }

    /// Number of distinct second partials per component.
    pub fn pairs(&self) -> usize {
        let a = self.axes();
        a * (a + 1) / 2
    }

    /// Index of the second partial `∂_a ∂_b` (order: tt, tx, xx, ty, xy, yy).
    pub fn pair(a: usize, b: usize) -> usize {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        hi * (hi + 1) / 2 + lo
    }

    /// Jet entries per component: value, first partials, second partials.
    pub fn jet_per_component(&self) -> usize {
        1 + self.axes() + self.pairs()
    }

    /// Hermite degrees of freedom per node (all components).
    pub fn node_dofs(&self) -> usize {
        self.field_dim << self.axes()
    }
}

/// Expands `$body` with `$p` (slot count), `$d` (axis count) and `$nj` (jet
/// entries over all components) bound as constants for the given layout.
macro_rules! dispatch_layout {
    ($layout:expr, $p:ident, $d:ident, $nj:ident => $body:expr) => {{
        let layout: $crate::lagrangian::Layout = $layout;
        match (layout.spatial_dim(), layout.field_dim()) {
            (0, 1) => {
                const $p: usize = 2;
                const $d: usize = 1;
                const $nj: usize = 3;
                $body
            }
            (0, 2) => {
                const $p: usize = 4;
                const $d: usize = 1;
                const $nj: usize = 6;
                $body
            }
            (1, 1) => {
                const $p: usize = 3;
                const $d: usize = 2;
                const $nj: usize = 6;
                $body
            }
            (2, 1) => {
                const $p: usize = 4;
                const $d: usize = 3;
                const $nj: usize = 10;
                $body
            }
            _ => unreachable!("layouts are validated on construction"),
        }
    }};
}
pub(crate) use dispatch_layout;

/// Field value and partial derivatives at one space-time point.
#[derive(Clone, Debug, PartialEq)]
pub struct Jet {
    pub layout: Layout,
    /// First-order slots, see [`Layout::slot`].
    pub first: Vec<f64>,
    /// Second partials indexed `pair * field_dim + comp`.
    pub second: Option<Vec<f64>>,
    /// `(t, x, y)` truncated to the layout's axes.
    pub coord: Vec<f64>,
}

impl Jet {
    pub fn zero(layout: Layout) -> Self {
        Self {
            layout,
            first: vec![0.0; layout.slots()],
            second: Some(vec![0.0; layout.pairs() * layout.field_dim()]),
            coord: vec![0.0; layout.axes()],
        }
    }

    /// First-order jet without second partials.
    pub fn first_order(layout: Layout, first: Vec<f64>, coord: Vec<f64>) -> Result<Self> {
        let jet = Self {
            layout,
            first,
            second: None,
            coord,
        };
        jet.check()?;
        Ok(jet)
    }

    pub fn check(&self) -> Result<()> {
        let l = self.layout;
        if self.first.len() != l.slots() {
            return Err(Error::DimensionMismatch(format!(
                "jet has {} slots, layout needs {}",
                self.first.len(),
                l.slots()
            )));
        }
        if self.coord.len() != l.axes() {
            return Err(Error::DimensionMismatch(format!(
                "jet has {} coordinates, layout needs {}",
                self.coord.len(),
                l.axes()
            )));
        }
        if let Some(s) = &self.second {
            if s.len() != l.pairs() * l.field_dim() {
                return Err(Error::DimensionMismatch(format!(
                    "jet has {} second partials, layout needs {}",
                    s.len(),
                    l.pairs() * l.field_dim()
                )));
            }
        }
        Ok(())
    }

    pub fn value(&self, comp: usize) -> f64 {
        self.first[self.layout.slot(0, comp)]
    }

    pub fn d(&self, axis: usize, comp: usize) -> f64 {
        self.first[self.layout.slot(1 + axis, comp)]
    }

    pub fn dd(&self, a: usize, b: usize, comp: usize) -> Option<f64> {
        self.second
            .as_ref()
            .map(|s| s[Layout::pair(a, b) * self.layout.field_dim() + comp])
    }
}

/// A Lagrangian density `L(u, ξ)`.
///
/// Evaluation must be pure: identical inputs give bit-identical outputs.
pub trait LagrangianDensity: Send + Sync {
    fn layout(&self) -> Layout;

    /// Evaluates the density. `slots` has [`Layout::slots`] entries and
    /// `coord` has [`Layout::axes`] entries.
    fn lagrangian<S: Scalar>(&self, slots: &[S], coord: &[S]) -> S;

    /// True when `L` is a polynomial of degree at most two in the slots for
    /// every fixed coordinate. The Euler-Lagrange residual is then affine in
    /// the jet.
    fn quadratic_in_slots(&self) -> bool {
        false
    }

    /// True when `L` depends explicitly on the coordinates.
    fn coordinate_dependent(&self) -> bool {
        false
    }
}

impl<L: LagrangianDensity> LagrangianDensity for &L {
    fn layout(&self) -> Layout {
        (**self).layout()
    }
    fn lagrangian<S: Scalar>(&self, slots: &[S], coord: &[S]) -> S {
        (**self).lagrangian(slots, coord)
    }
    fn quadratic_in_slots(&self) -> bool {
        (**self).quadratic_in_slots()
    }
    fn coordinate_dependent(&self) -> bool {
        (**self).coordinate_dependent()
    }
}

impl<L: LagrangianDensity> LagrangianDensity for Arc<L> {
    fn layout(&self) -> Layout {
        (**self).layout()
    }
    fn lagrangian<S: Scalar>(&self, slots: &[S], coord: &[S]) -> S {
        (**self).lagrangian(slots, coord)
    }
    fn quadratic_in_slots(&self) -> bool {
        (**self).quadratic_in_slots()
    }
    fn coordinate_dependent(&self) -> bool {
        (**self).coordinate_dependent()
    }
}

/// Value, slot gradient and slot Hessian of a density at one jet.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityEval {
    pub value: f64,
    pub gradient: Vec<f64>,
    pub hessian: Vec<Vec<f64>>,
    /// Explicit-coordinate gradient `∂L/∂ξ`; zero for homogeneous densities.
    pub coord_gradient: Vec<f64>,
}

fn check_jet<L: LagrangianDensity>(density: &L, jet: &Jet) -> Result<()> {
    jet.check()?;
    if jet.layout != density.layout() {
        return Err(Error::DimensionMismatch(format!(
            "jet layout {:?} does not match density layout {:?}",
            jet.layout,
            density.layout()
        )));
    }
    Ok(())
}

pub(crate) fn slot_derivatives<L: LagrangianDensity, const P: usize>(
    density: &L,
    slots: &[f64],
    coord: &[f64],
) -> Hyper<f64, P> {
    let u: [Hyper<f64, P>; P] = std::array::from_fn(|i| Hyper::variable(slots[i], i));
    let xi: Vec<Hyper<f64, P>> = coord.iter().map(|&c| Hyper::constant(c)).collect();
    density.lagrangian(&u, &xi)
}

/// Evaluates `L`, its slot gradient and its slot Hessian.
pub fn eval_density<L: LagrangianDensity>(density: &L, jet: &Jet) -> Result<DensityEval> {
    check_jet(density, jet)?;
    let h = dispatch_layout!(density.layout(), P, _D, _NJ => {
        let h = slot_derivatives::<L, P>(density, &jet.first, &jet.coord);
        (h.v, h.g.to_vec(), h.h.iter().map(|r| r.to_vec()).collect::<Vec<_>>())
    });
    let coord_gradient = if density.coordinate_dependent() {
        let u: Vec<Dual<f64, 3>> = jet.first.iter().map(|&v| Dual::constant(v)).collect();
        let xi: Vec<Dual<f64, 3>> = jet
            .coord
            .iter()
            .enumerate()
            .map(|(i, &c)| Dual::variable(c, i))
            .collect();
        density.lagrangian(&u, &xi).d[..jet.coord.len()].to_vec()
    } else {
        vec![0.0; jet.coord.len()]
    };
    Ok(DensityEval {
        value: h.0,
        gradient: h.1,
        hessian: h.2,
        coord_gradient,
    })
}

/// Wave-speed estimate `ĉ² = -(∂²L/∂q_x²)/(∂²L/∂q_t²)` at the zero jet.
pub fn estimate_wave_speed<L: LagrangianDensity>(density: &L) -> Result<f64> {
    let layout = density.layout();
    if layout.spatial_dim() == 0 || layout.field_dim() != 1 {
        return Err(Error::DimensionMismatch(
            "wave-speed estimate needs a scalar field with a spatial axis".into(),
        ));
    }
    let eval = eval_density(density, &Jet::zero(layout))?;
    let tt = eval.hessian[layout.slot(1, 0)][layout.slot(1, 0)];
    if tt.abs() < 1e-12 {
        return Err(Error::DegenerateDensity(tt));
    }
    let xx = eval.hessian[layout.slot(2, 0)][layout.slot(2, 0)];
    Ok(-xx / tt)
}

/// `L = q̇₁² + ½q̇₂² + q̇₁q̇₂cos(q₁−q₂) + 2cos q₁ + cos q₂`, unit masses and lengths.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DoublePendulum;

impl LagrangianDensity for DoublePendulum {
    fn layout(&self) -> Layout {
        Layout::ode(2)
    }

    fn lagrangian<S: Scalar>(&self, u: &[S], _coord: &[S]) -> S {
        let (q1, q2, v1, v2) = (u[0], u[1], u[2], u[3]);
        v1 * v1 + v2 * v2 * 0.5 + v1 * v2 * (q1 - q2).cos() + q1.cos() * 2.0 + q2.cos()
    }
}

/// `L = ½ m q_t² − ½ k q²`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HarmonicOscillator {
    pub mass: f64,
    pub stiffness: f64,
}

impl HarmonicOscillator {
    pub fn unit() -> Self {
        Self {
            mass: 1.0,
            stiffness: 1.0,
        }
    }

    pub fn free_particle() -> Self {
        Self {
            mass: 1.0,
            stiffness: 0.0,
        }
    }
}

impl LagrangianDensity for HarmonicOscillator {
    fn layout(&self) -> Layout {
        Layout::ode(1)
    }

    fn lagrangian<S: Scalar>(&self, u: &[S], _coord: &[S]) -> S {
        u[1] * u[1] * (0.5 * self.mass) - u[0] * u[0] * (0.5 * self.stiffness)
    }

    fn quadratic_in_slots(&self) -> bool {
        true
    }
}

/// `L = ½ q_t² − ½ c² q_x²`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Wave1d {
    pub c2: f64,
}

impl LagrangianDensity for Wave1d {
    fn layout(&self) -> Layout {
        Layout::wave(1)
    }

    fn lagrangian<S: Scalar>(&self, u: &[S], _coord: &[S]) -> S {
        (u[1] * u[1] - u[2] * u[2] * self.c2) * 0.5
    }

    fn quadratic_in_slots(&self) -> bool {
        true
    }
}

/// `L = ½ q_t² − ½ c² (q_x² + q_y²)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Wave2d {
    pub c2: f64,
}

impl LagrangianDensity for Wave2d {
    fn layout(&self) -> Layout {
        Layout::wave(2)
    }

    fn lagrangian<S: Scalar>(&self, u: &[S], _coord: &[S]) -> S {
        (u[1] * u[1] - (u[2] * u[2] + u[3] * u[3]) * self.c2) * 0.5
    }

    fn quadratic_in_slots(&self) -> bool {
        true
    }
}

/// Constant density, mostly useful for quadrature checks.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConstantDensity {
    pub layout: Layout,
    pub value: f64,
}

impl LagrangianDensity for ConstantDensity {
    fn layout(&self) -> Layout {
        self.layout
    }

    fn lagrangian<S: Scalar>(&self, _u: &[S], _coord: &[S]) -> S {
        S::cst(self.value)
    }

    fn quadratic_in_slots(&self) -> bool {
        true
    }
}

/// Gauge-equivalent density `A·L + B·q_t + C` (scalar fields only use the
/// first time-derivative slot).
#[derive(Clone, Debug, PartialEq)]
pub struct GaugeTransformed<L> {
    pub inner: L,
    pub scale: f64,
    pub momentum_shift: f64,
    pub offset: f64,
}

impl<L: LagrangianDensity> LagrangianDensity for GaugeTransformed<L> {
    fn layout(&self) -> Layout {
        self.inner.layout()
    }

    fn lagrangian<S: Scalar>(&self, u: &[S], coord: &[S]) -> S {
        let qt = u[self.layout().slot(1, 0)];
        self.inner.lagrangian(u, coord) * self.scale + qt * self.momentum_shift + self.offset
    }

    fn quadratic_in_slots(&self) -> bool {
        self.inner.quadratic_in_slots()
    }

    fn coordinate_dependent(&self) -> bool {
        self.inner.coordinate_dependent()
    }
}

/// `σ(k(x − x₀))·L_right + (1 − σ)·L_left`.
#[derive(Clone, Debug, PartialEq)]
pub struct Blend<A, B> {
    pub left: A,
    pub right: B,
    pub center: f64,
    pub sharpness: f64,
}

/// Joins two densities along `x = center` with a logistic transition.
pub fn blend_densities<A, B>(left: A, right: B, center: f64, sharpness: f64) -> Result<Blend<A, B>>
where
    A: LagrangianDensity,
    B: LagrangianDensity,
{
    if !(sharpness > 0.0) {
        return Err(Error::InvalidSharpness(sharpness));
    }
    if left.layout() != right.layout() {
        return Err(Error::DimensionMismatch(format!(
            "blend of {:?} and {:?}",
            left.layout(),
            right.layout()
        )));
    }
    if left.layout().spatial_dim() == 0 {
        return Err(Error::DimensionMismatch(
            "blend needs a spatial axis".into(),
        ));
    }
    Ok(Blend {
        left,
        right,
        center,
        sharpness,
    })
}

impl<A: LagrangianDensity, B: LagrangianDensity> LagrangianDensity for Blend<A, B> {
    fn layout(&self) -> Layout {
        self.left.layout()
    }

    fn lagrangian<S: Scalar>(&self, u: &[S], coord: &[S]) -> S {
        let s = ((coord[1] - self.center) * self.sharpness).sigmoid();
        let l = self.left.lagrangian(u, coord);
        let r = self.right.lagrangian(u, coord);
        l + (r - l) * s
    }

    fn quadratic_in_slots(&self) -> bool {
        self.left.quadratic_in_slots() && self.right.quadratic_in_slots()
    }

    fn coordinate_dependent(&self) -> bool {
        true
    }
}

/// Any density the command line can build from configuration.
#[derive(Clone, Debug)]
pub enum AnyDensity {
    DoublePendulum(DoublePendulum),
    Harmonic(HarmonicOscillator),
    Wave1d(Wave1d),
    Wave2d(Wave2d),
    Blend(Box<Blend<AnyDensity, AnyDensity>>),
    Mlp(Arc<MlpDensity>),
}

impl LagrangianDensity for AnyDensity {
    fn layout(&self) -> Layout {
        match self {
            Self::DoublePendulum(d) => d.layout(),
            Self::Harmonic(d) => d.layout(),
            Self::Wave1d(d) => d.layout(),
            Self::Wave2d(d) => d.layout(),
            Self::Blend(d) => d.layout(),
            Self::Mlp(d) => d.layout(),
        }
    }

    fn lagrangian<S: Scalar>(&self, u: &[S], coord: &[S]) -> S {
        match self {
            Self::DoublePendulum(d) => d.lagrangian(u, coord),
            Self::Harmonic(d) => d.lagrangian(u, coord),
            Self::Wave1d(d) => d.lagrangian(u, coord),
            Self::Wave2d(d) => d.lagrangian(u, coord),
            Self::Blend(d) => d.lagrangian(u, coord),
            Self::Mlp(d) => d.lagrangian(u, coord),
        }
    }

    fn quadratic_in_slots(&self) -> bool {
        match self {
            Self::DoublePendulum(d) => d.quadratic_in_slots(),
            Self::Harmonic(d) => d.quadratic_in_slots(),
            Self::Wave1d(d) => d.quadratic_in_slots(),
            Self::Wave2d(d) => d.quadratic_in_slots(),
            Self::Blend(d) => d.quadratic_in_slots(),
            Self::Mlp(d) => d.quadratic_in_slots(),
        }
    }

    fn coordinate_dependent(&self) -> bool {
        match self {
            Self::Blend(_) => true,
            Self::Mlp(d) => d.coordinate_dependent(),
            _ => false,
        }
    }
}

/// Serializable density selection, e.g. `kind = "wave1d"`, `c2 = 0.05`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DensitySpec {
    DoublePendulum,
    Harmonic {
        mass: f64,
        stiffness: f64,
    },
    Wave1d {
        c2: f64,
    },
    Wave2d {
        c2: f64,
    },
    Blend {
        left: Box<DensitySpec>,
        right: Box<DensitySpec>,
        x0: f64,
        #[serde(default = "default_sharpness")]
        k: f64,
    },
    Mlp {
        path: PathBuf,
    },
}

pub fn default_sharpness() -> f64 {
    40.0
}

impl DensitySpec {
    pub fn build(&self) -> Result<AnyDensity> {
        Ok(match self {
            Self::DoublePendulum => AnyDensity::DoublePendulum(DoublePendulum),
            Self::Harmonic { mass, stiffness } => AnyDensity::Harmonic(HarmonicOscillator {
                mass: *mass,
                stiffness: *stiffness,
            }),
            Self::Wave1d { c2 } => AnyDensity::Wave1d(Wave1d { c2: *c2 }),
            Self::Wave2d { c2 } => AnyDensity::Wave2d(Wave2d { c2: *c2 }),
            Self::Blend { left, right, x0, k } => AnyDensity::Blend(Box::new(blend_densities(
                left.build()?,
                right.build()?,
                *x0,
                *k,
            )?)),
            Self::Mlp { path } => AnyDensity::Mlp(Arc::new(crate::mlp::load_density(path)?)),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn jet(layout: Layout, first: &[f64], coord: &[f64]) -> Jet {
        Jet::first_order(layout, first.to_vec(), coord.to_vec()).unwrap()
    }

    /// Central-difference gradient and Hessian of `L` over the slots.
    fn fd_derivatives<L: LagrangianDensity>(d: &L, j: &Jet) -> (Vec<f64>, Vec<Vec<f64>>) {
        let h = 1e-4;
        let n = j.first.len();
        let eval = |u: &[f64]| d.lagrangian(u, &j.coord);
        let mut grad = vec![0.0; n];
        let mut hess = vec![vec![0.0; n]; n];
        for i in 0..n {
            let mut p = j.first.clone();
            let mut m = j.first.clone();
            p[i] += h;
            m[i] -= h;
            grad[i] = (eval(&p) - eval(&m)) / (2.0 * h);
            for k in 0..n {
                let mut pp = j.first.clone();
                let mut pm = j.first.clone();
                let mut mp = j.first.clone();
                let mut mm = j.first.clone();
                pp[i] += h;
                pp[k] += h;
                pm[i] += h;
                pm[k] -= h;
                mp[i] -= h;
                mp[k] += h;
                mm[i] -= h;
                mm[k] -= h;
                hess[i][k] = (eval(&pp) - eval(&pm) - eval(&mp) + eval(&mm)) / (4.0 * h * h);
            }
        }
        (grad, hess)
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1.0)
    }

    fn check_against_fd<L: LagrangianDensity>(d: &L, seed: u64) {
        let layout = d.layout();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..100 {
            let first: Vec<f64> = (0..layout.slots()).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let coord: Vec<f64> = (0..layout.axes()).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let j = jet(layout, &first, &coord);
            let e = eval_density(d, &j).unwrap();
            let (g, h) = fd_derivatives(d, &j);
            for i in 0..g.len() {
                assert!(rel_err(e.gradient[i], g[i]) < 1e-5, "grad {i}");
                for k in 0..g.len() {
                    assert!(rel_err(e.hessian[i][k], h[i][k]) < 1e-5, "hess {i},{k}");
                    assert_eq!(e.hessian[i][k], e.hessian[k][i]);
                }
            }
        }
    }

    #[test]
    fn wave_density_example_values() {
        let d = Wave1d { c2: 0.05 };
        let e = eval_density(&d, &jet(d.layout(), &[0.3, 1.0, 2.0], &[0.0, 0.0])).unwrap();
        assert!((e.value - 0.4).abs() < 1e-15);
        assert_eq!(e.gradient[1], 1.0);
        assert!((e.hessian[2][2] + 0.05).abs() < 1e-15);
    }

    #[test]
    fn double_pendulum_equilibrium() {
        let d = DoublePendulum;
        let e = eval_density(&d, &Jet::zero(d.layout())).unwrap();
        assert_eq!(e.value, 3.0);
        assert_eq!(e.gradient[0], 0.0);
        assert_eq!(e.gradient[1], 0.0);
    }

    #[test]
    fn double_pendulum_is_reflection_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let u: Vec<f64> = (0..4).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let m: Vec<f64> = u.iter().map(|x| -x).collect();
            let a = DoublePendulum.lagrangian(&u, &[0.0]);
            let b = DoublePendulum.lagrangian(&m, &[0.0]);
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn analytic_derivatives_match_finite_differences() {
        check_against_fd(&DoublePendulum, 1);
        check_against_fd(&Wave1d { c2: 0.05 }, 2);
        check_against_fd(&Wave2d { c2: 1.0 }, 3);
        check_against_fd(&HarmonicOscillator::unit(), 4);
        let b = blend_densities(Wave1d { c2: 0.05 }, Wave1d { c2: 0.2 }, 1.0, 3.0).unwrap();
        check_against_fd(&b, 5);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let j = Jet::zero(Layout::wave(2));
        assert!(matches!(
            eval_density(&Wave1d { c2: 1.0 }, &j),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn wave_speed_of_analytic_densities() {
        assert!((estimate_wave_speed(&Wave1d { c2: 0.05 }).unwrap() - 0.05).abs() < 1e-15);
        assert!((estimate_wave_speed(&Wave2d { c2: 1.0 }).unwrap() - 1.0).abs() < 1e-15);
        let flat = GaugeTransformed {
            inner: Wave1d { c2: 0.05 },
            scale: 0.0,
            momentum_shift: 0.0,
            offset: 1.0,
        };
        assert!(matches!(
            estimate_wave_speed(&flat),
            Err(Error::DegenerateDensity(_))
        ));
    }

    #[test]
    fn blend_midpoint_and_tails() {
        let l = Wave1d { c2: 0.05 };
        let r = Wave1d { c2: 0.2 };
        let b = blend_densities(l, r, 1.0, 10.0).unwrap();
        let u = [0.3, 0.7, -1.2];
        let mid = b.lagrangian(&u, &[0.0, 1.0]);
        let avg = 0.5 * (l.lagrangian(&u, &[0.0, 1.0]) + r.lagrangian(&u, &[0.0, 1.0]));
        assert!((mid - avg).abs() < 1e-15);
        let far = b.lagrangian(&u, &[0.0, -5.0]);
        assert!((far - l.lagrangian(&u, &[0.0, -5.0])).abs() < 1e-12);
        assert!(matches!(
            blend_densities(l, r, 1.0, 0.0),
            Err(Error::InvalidSharpness(_))
        ));
    }

    #[test]
    fn blend_wave_speed_profile_follows_sigmoid() {
        let b = blend_densities(Wave1d { c2: 0.05 }, Wave1d { c2: 0.2 }, 1.0, 40.0).unwrap();
        for i in 0..101 {
            let x = -4.0 + 0.1 * i as f64;
            let mut j = Jet::zero(b.layout());
            j.coord[1] = x;
            let e = eval_density(&b, &j).unwrap();
            let c2 = -e.hessian[2][2] / e.hessian[1][1];
            let s = 1.0 / (1.0 + (-(40.0 * (x - 1.0))).exp());
            let expected = 0.05 * (1.0 - s) + 0.2 * s;
            assert!((c2 - expected).abs() < 1e-10, "x = {x}");
        }
    }

    #[test]
    fn blend_exposes_coordinate_gradient() {
        let b = blend_densities(Wave1d { c2: 0.05 }, Wave1d { c2: 0.2 }, 0.0, 2.0).unwrap();
        let j = jet(b.layout(), &[0.0, 0.0, 1.0], &[0.0, 0.0]);
        let e = eval_density(&b, &j).unwrap();
        // dL/dx = σ'(0)·k·(L_r − L_l) = ¼·2·(−0.1 + 0.025)
        assert!((e.coord_gradient[1] - 0.5 * (-0.075)).abs() < 1e-15);
        let w = eval_density(&Wave1d { c2: 0.05 }, &j).unwrap();
        assert_eq!(w.coord_gradient, vec![0.0, 0.0]);
    }

    #[test]
    fn spec_rejects_unknown_keys() {
        let ok: DensitySpec = toml::from_str("kind = \"wave1d\"\nc2 = 0.05").unwrap();
        assert_eq!(ok, DensitySpec::Wave1d { c2: 0.05 });
        assert!(toml::from_str::<DensitySpec>("kind = \"wave1d\"\nc2 = 0.05\nmu = 1.0").is_err());
    }
}
