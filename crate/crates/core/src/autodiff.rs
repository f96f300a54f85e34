//! Forward-mode differentiation carriers.
//!
//! [`Dual`] carries a value and a gradient over `N` seeded variables,
//! [`Hyper`] additionally carries the dense Hessian. Both are generic over
//! their inner scalar so they nest: `Dual<Dual<f64, D>, P>` yields mixed
//! second derivatives, `Hyper<Dual<..>, N>` third and fourth order, and so on.
//! [`Taylor4`] collects all partials up to fourth order in one flat carrier.
//! Densities are written once against [`Scalar`] and evaluated on whichever
//! carrier the caller needs.

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

/// Arithmetic needed to evaluate a Lagrangian density.
pub trait Scalar:
    Copy
    + Debug
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
{
    fn cst(v: f64) -> Self;

    /// Innermost real part.
    fn re(&self) -> f64;

    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn recip(self) -> Self;
    fn tanh(self) -> Self;
    /// `ln(1 + e^x)`, evaluated without overflow.
    fn softplus(self) -> Self;
    /// Logistic function `1 / (1 + e^-x)`.
    fn sigmoid(self) -> Self;

    fn zero() -> Self {
        Self::cst(0.0)
    }

    fn powi(self, n: u32) -> Self {
        let mut acc = Self::cst(1.0);
        for _ in 0..n {
            acc *= self;
        }
        acc
    }
}

fn sigmoid_f64(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Scalar for f64 {
    #[inline]
    fn cst(v: f64) -> Self {
        v
    }
    #[inline]
    fn re(&self) -> f64 {
        *self
    }
    #[inline]
    fn sin(self) -> Self {
        f64::sin(self)
    }
    #[inline]
    fn cos(self) -> Self {
        f64::cos(self)
    }
    #[inline]
    fn exp(self) -> Self {
        f64::exp(self)
    }
    #[inline]
    fn ln(self) -> Self {
        f64::ln(self)
    }
    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    #[inline]
    fn recip(self) -> Self {
        1.0 / self
    }
    #[inline]
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
    #[inline]
    fn softplus(self) -> Self {
        self.max(0.0) + (-self.abs()).exp().ln_1p()
    }
    #[inline]
    fn sigmoid(self) -> Self {
        sigmoid_f64(self)
    }
}

/// Value plus first derivatives with respect to `N` variables.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dual<S, const N: usize> {
    pub v: S,
    pub d: [S; N],
}

impl<S: Scalar, const N: usize> Dual<S, N> {
    pub fn constant(v: S) -> Self {
        Self {
            v,
            d: [S::zero(); N],
        }
    }

    /// Independent variable number `i`.
    pub fn variable(v: S, i: usize) -> Self {
        let mut d = [S::zero(); N];
        d[i] = S::cst(1.0);
        Self { v, d }
    }

    #[inline]
    fn chain(self, f0: S, f1: S) -> Self {
        let mut d = self.d;
        for x in d.iter_mut() {
            *x = f1 * *x;
        }
        Self { v: f0, d }
    }
}

/// Value, gradient and dense Hessian with respect to `N` variables.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hyper<S, const N: usize> {
    pub v: S,
    pub g: [S; N],
    pub h: [[S; N]; N],
}

impl<S: Scalar, const N: usize> Hyper<S, N> {
    pub fn constant(v: S) -> Self {
        Self {
            v,
            g: [S::zero(); N],
            h: [[S::zero(); N]; N],
        }
    }

    pub fn variable(v: S, i: usize) -> Self {
        let mut out = Self::constant(v);
        out.g[i] = S::cst(1.0);
        out
    }

    #[inline]
    fn chain(self, f0: S, f1: S, f2: S) -> Self {
        let mut out = Self::constant(f0);
        for i in 0..N {
            out.g[i] = f1 * self.g[i];
            let fg = f2 * self.g[i];
            for j in i..N {
                let hij = f1 * self.h[i][j] + fg * self.g[j];
                out.h[i][j] = hij;
                out.h[j][i] = hij;
            }
        }
        out
    }
}

macro_rules! impl_ops {
    ($ty:ident) => {
        impl<S: Scalar, const N: usize> Add for $ty<S, N> {
            type Output = Self;
            #[inline]
            fn add(mut self, rhs: Self) -> Self {
                self += rhs;
                self
            }
        }

        impl<S: Scalar, const N: usize> Sub for $ty<S, N> {
            type Output = Self;
            #[inline]
            fn sub(mut self, rhs: Self) -> Self {
                self -= rhs;
                self
            }
        }

        impl<S: Scalar, const N: usize> Neg for $ty<S, N> {
            type Output = Self;
            #[inline]
            fn neg(self) -> Self {
                self * -1.0
            }
        }

        impl<S: Scalar, const N: usize> Add<f64> for $ty<S, N> {
            type Output = Self;
            #[inline]
            fn add(mut self, rhs: f64) -> Self {
                self.v += S::cst(rhs);
                self
            }
        }

        impl<S: Scalar, const N: usize> Sub<f64> for $ty<S, N> {
            type Output = Self;
            #[inline]
            fn sub(mut self, rhs: f64) -> Self {
                self.v -= S::cst(rhs);
                self
            }
        }

        impl<S: Scalar, const N: usize> Div<f64> for $ty<S, N> {
            type Output = Self;
            #[inline]
            fn div(self, rhs: f64) -> Self {
                self * (1.0 / rhs)
            }
        }

        impl<S: Scalar, const N: usize> Div for $ty<S, N> {
            type Output = Self;
            #[inline]
            fn div(self, rhs: Self) -> Self {
                self * rhs.recip()
            }
        }

        impl<S: Scalar, const N: usize> MulAssign for $ty<S, N> {
            #[inline]
            fn mul_assign(&mut self, rhs: Self) {
                *self = *self * rhs;
            }
        }
    };
}

impl_ops!(Dual);
impl_ops!(Hyper);

impl<S: Scalar, const N: usize> AddAssign for Dual<S, N> {
    #[inline]
    fn add_assign(&mut self, rhs: Self) {
        self.v += rhs.v;
        for i in 0..N {
            self.d[i] += rhs.d[i];
        }
    }
}

impl<S: Scalar, const N: usize> SubAssign for Dual<S, N> {
    #[inline]
    fn sub_assign(&mut self, rhs: Self) {
        self.v -= rhs.v;
        for i in 0..N {
            self.d[i] -= rhs.d[i];
        }
    }
}

impl<S: Scalar, const N: usize> Mul for Dual<S, N> {
    type Output = Self;
    #[inline]
    fn mul(self, rhs: Self) -> Self {
        let mut d = [S::zero(); N];
        for i in 0..N {
            d[i] = self.v * rhs.d[i] + rhs.v * self.d[i];
        }
        Self {
            v: self.v * rhs.v,
            d,
        }
    }
}

impl<S: Scalar, const N: usize> Mul<f64> for Dual<S, N> {
    type Output = Self;
    #[inline]
    fn mul(mut self, rhs: f64) -> Self {
        self.v = self.v * rhs;
        for x in self.d.iter_mut() {
            *x = *x * rhs;
        }
        self
    }
}

impl<S: Scalar, const N: usize> AddAssign for Hyper<S, N> {
    #[inline]
    fn add_assign(&mut self, rhs: Self) {
        self.v += rhs.v;
        for i in 0..N {
            self.g[i] += rhs.g[i];
            for j in 0..N {
                self.h[i][j] += rhs.h[i][j];
            }
        }
    }
}

impl<S: Scalar, const N: usize> SubAssign for Hyper<S, N> {
    #[inline]
    fn sub_assign(&mut self, rhs: Self) {
        self.v -= rhs.v;
        for i in 0..N {
            self.g[i] -= rhs.g[i];
            for j in 0..N {
                self.h[i][j] -= rhs.h[i][j];
            }
        }
    }
}

impl<S: Scalar, const N: usize> Mul for Hyper<S, N> {
    type Output = Self;
    #[inline]
    fn mul(self, rhs: Self) -> Self {
        let mut out = Self::constant(self.v * rhs.v);
        for i in 0..N {
            out.g[i] = self.v * rhs.g[i] + rhs.v * self.g[i];
            for j in i..N {
                let hij = self.v * rhs.h[i][j]
                    + rhs.v * self.h[i][j]
                    + self.g[i] * rhs.g[j]
                    + self.g[j] * rhs.g[i];
                out.h[i][j] = hij;
                out.h[j][i] = hij;
            }
        }
        out
    }
}

impl<S: Scalar, const N: usize> Mul<f64> for Hyper<S, N> {
    type Output = Self;
    #[inline]
    fn mul(mut self, rhs: f64) -> Self {
        self.v = self.v * rhs;
        for i in 0..N {
            self.g[i] = self.g[i] * rhs;
            for j in 0..N {
                self.h[i][j] = self.h[i][j] * rhs;
            }
        }
        self
    }
}

impl<S: Scalar, const N: usize> Scalar for Dual<S, N> {
    fn cst(v: f64) -> Self {
        Self::constant(S::cst(v))
    }
    fn re(&self) -> f64 {
        self.v.re()
    }
    fn sin(self) -> Self {
        self.chain(self.v.sin(), self.v.cos())
    }
    fn cos(self) -> Self {
        self.chain(self.v.cos(), -self.v.sin())
    }
    fn exp(self) -> Self {
        let e = self.v.exp();
        self.chain(e, e)
    }
    fn ln(self) -> Self {
        self.chain(self.v.ln(), self.v.recip())
    }
    fn sqrt(self) -> Self {
        let s = self.v.sqrt();
        self.chain(s, s.recip() * 0.5)
    }
    fn recip(self) -> Self {
        let r = self.v.recip();
        self.chain(r, -(r * r))
    }
    fn tanh(self) -> Self {
        let t = self.v.tanh();
        self.chain(t, -(t * t) + 1.0)
    }
    fn softplus(self) -> Self {
        self.chain(self.v.softplus(), self.v.sigmoid())
    }
    fn sigmoid(self) -> Self {
        let s = self.v.sigmoid();
        self.chain(s, s * (-s + 1.0))
    }
}

impl<S: Scalar, const N: usize> Scalar for Hyper<S, N> {
    fn cst(v: f64) -> Self {
        Self::constant(S::cst(v))
    }
    fn re(&self) -> f64 {
        self.v.re()
    }
    fn sin(self) -> Self {
        let s = self.v.sin();
        self.chain(s, self.v.cos(), -s)
    }
    fn cos(self) -> Self {
        let c = self.v.cos();
        self.chain(c, -self.v.sin(), -c)
    }
    fn exp(self) -> Self {
        let e = self.v.exp();
        self.chain(e, e, e)
    }
    fn ln(self) -> Self {
        let r = self.v.recip();
        self.chain(self.v.ln(), r, -(r * r))
    }
    fn sqrt(self) -> Self {
        let s = self.v.sqrt();
        let r = s.recip();
        self.chain(s, r * 0.5, -(r * r * r) * 0.25)
    }
    fn recip(self) -> Self {
        let r = self.v.recip();
        let r2 = r * r;
        self.chain(r, -r2, r2 * r * 2.0)
    }
    fn tanh(self) -> Self {
        let t = self.v.tanh();
        let d1 = -(t * t) + 1.0;
        self.chain(t, d1, -(t * d1) * 2.0)
    }
    fn softplus(self) -> Self {
        let s = self.v.sigmoid();
        self.chain(self.v.softplus(), s, s * (-s + 1.0))
    }
    fn sigmoid(self) -> Self {
        let s = self.v.sigmoid();
        let d1 = s * (-s + 1.0);
        self.chain(s, d1, d1 * (-(s * 2.0) + 1.0))
    }
}

/// Degree-4 truncated Taylor polynomial in `P` variables with `N` =
/// C(P + 4, 4) coefficients in graded order.
///
/// One pass of a density on this carrier yields every partial derivative up
/// to fourth order, which is what the residual's Hessian needs, at a fraction
/// of the cost of nesting [`Hyper`] inside two layers of [`Dual`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Taylor4<const P: usize, const N: usize> {
    pub c: [f64; N],
}

/// Monomial exponents and the product table for `p` variables.
#[derive(Debug)]
pub(crate) struct TaylorTable {
    pub exps: Vec<Vec<u8>>,
    /// `(i, j, k)`: coefficient `i` times coefficient `j` lands in `k`.
    pub products: Vec<(u16, u16, u16)>,
    /// `α!` per monomial, mapping coefficients to partial derivatives.
    pub factorials: Vec<f64>,
    /// Coefficient index by base-5 exponent code `Σ αᵥ 5ᵛ`.
    pub by_code: Vec<u16>,
}

impl TaylorTable {
    /// Coefficient index of `∂_{v₁}…∂_{vₖ}` (repeats allowed, k ≤ 4).
    #[inline]
    pub fn index(&self, vars: &[usize]) -> usize {
        self.by_code[vars.iter().map(|&v| 5usize.pow(v as u32)).sum::<usize>()] as usize
    }
}

const TAYLOR_MAX_VARS: usize = 6;

pub(crate) const fn taylor_len(p: usize) -> usize {
    (p + 1) * (p + 2) * (p + 3) * (p + 4) / 24
}

fn build_taylor_table(p: usize) -> TaylorTable {
    let mut exps: Vec<Vec<u8>> = Vec::new();
    for deg in 0..=4u8 {
        // Graded, then lexicographic with the first variable's power descending.
        fn rec(p: usize, left: u8, cur: &mut Vec<u8>, out: &mut Vec<Vec<u8>>) {
            if cur.len() + 1 == p {
                cur.push(left);
                out.push(cur.clone());
                cur.pop();
                return;
            }
            for e in (0..=left).rev() {
                cur.push(e);
                rec(p, left - e, cur, out);
                cur.pop();
            }
        }
        rec(p, deg, &mut Vec::new(), &mut exps);
    }
    let index: std::collections::HashMap<Vec<u8>, usize> =
        exps.iter().enumerate().map(|(i, e)| (e.clone(), i)).collect();
    let mut products = Vec::new();
    for (i, a) in exps.iter().enumerate() {
        for (j, b) in exps.iter().enumerate() {
            let sum: Vec<u8> = a.iter().zip(b).map(|(x, y)| x + y).collect();
            if let Some(&k) = index.get(&sum) {
                products.push((i as u16, j as u16, k as u16));
            }
        }
    }
    let factorials = exps
        .iter()
        .map(|e| e.iter().map(|&k| (1..=k as u32).product::<u32>() as f64).product())
        .collect();
    let mut by_code = vec![u16::MAX; 5usize.pow(p as u32)];
    for (i, e) in exps.iter().enumerate() {
        let code: usize = e.iter().enumerate().map(|(v, &k)| k as usize * 5usize.pow(v as u32)).sum();
        by_code[code] = i as u16;
    }
    TaylorTable {
        exps,
        products,
        factorials,
        by_code,
    }
}

pub(crate) fn taylor_table(p: usize) -> &'static TaylorTable {
    static TABLES: std::sync::OnceLock<Vec<TaylorTable>> = std::sync::OnceLock::new();
    assert!((1..=TAYLOR_MAX_VARS).contains(&p), "Taylor carrier supports 1 to 6 variables");
    &TABLES.get_or_init(|| (1..=TAYLOR_MAX_VARS).map(build_taylor_table).collect())[p - 1]
}

impl<const P: usize, const N: usize> Taylor4<P, N> {
    pub fn constant(v: f64) -> Self {
        debug_assert_eq!(N, taylor_len(P));
        let mut c = [0.0; N];
        c[0] = v;
        Self { c }
    }

    /// Independent variable `i` expanded about `v`.
    pub fn variable(v: f64, i: usize) -> Self {
        let mut out = Self::constant(v);
        out.c[1 + i] = 1.0;
        out
    }

    /// `∂^α f` at the expansion point for the exponent vector `alpha`.
    pub fn derivative(&self, alpha: &[u8]) -> f64 {
        let t = taylor_table(P);
        let k = t.exps.iter().position(|e| e == alpha).expect("exponent of degree at most 4");
        self.c[k] * t.factorials[k]
    }

    /// `Σ_k f⁽ᵏ⁾(a)/k! δᵏ` where `a` is the constant term and `δ` the rest.
    fn compose(self, f: [f64; 5]) -> Self {
        let mut d = self;
        d.c[0] = 0.0;
        let mut out = Self::constant(f[0]);
        let mut pow = d;
        let mut fact = 1.0;
        for (k, fk) in f.iter().enumerate().skip(1) {
            fact *= k as f64;
            let s = fk / fact;
            for (o, p) in out.c.iter_mut().zip(&pow.c) {
                *o += s * p;
            }
            if k < 4 {
                pow = pow * d;
            }
        }
        out
    }
}

impl<const P: usize, const N: usize> Add for Taylor4<P, N> {
    type Output = Self;
    #[inline]
    fn add(mut self, rhs: Self) -> Self {
        self += rhs;
        self
    }
}

impl<const P: usize, const N: usize> Sub for Taylor4<P, N> {
    type Output = Self;
    #[inline]
    fn sub(mut self, rhs: Self) -> Self {
        self -= rhs;
        self
    }
}

impl<const P: usize, const N: usize> AddAssign for Taylor4<P, N> {
    #[inline]
    fn add_assign(&mut self, rhs: Self) {
        for (a, b) in self.c.iter_mut().zip(&rhs.c) {
            *a += b;
        }
    }
}

impl<const P: usize, const N: usize> SubAssign for Taylor4<P, N> {
    #[inline]
    fn sub_assign(&mut self, rhs: Self) {
        for (a, b) in self.c.iter_mut().zip(&rhs.c) {
            *a -= b;
        }
    }
}

impl<const P: usize, const N: usize> Mul for Taylor4<P, N> {
    type Output = Self;
    #[inline]
    fn mul(self, rhs: Self) -> Self {
        let mut c = [0.0; N];
        for &(i, j, k) in &taylor_table(P).products {
            c[k as usize] += self.c[i as usize] * rhs.c[j as usize];
        }
        Self { c }
    }
}

impl<const P: usize, const N: usize> MulAssign for Taylor4<P, N> {
    #[inline]
    fn mul_assign(&mut self, rhs: Self) {
        *self = *self * rhs;
    }
}

impl<const P: usize, const N: usize> Mul<f64> for Taylor4<P, N> {
    type Output = Self;
    #[inline]
    fn mul(mut self, rhs: f64) -> Self {
        for a in self.c.iter_mut() {
            *a *= rhs;
        }
        self
    }
}

impl<const P: usize, const N: usize> Div for Taylor4<P, N> {
    type Output = Self;
    #[inline]
    fn div(self, rhs: Self) -> Self {
        self * rhs.recip()
    }
}

impl<const P: usize, const N: usize> Div<f64> for Taylor4<P, N> {
    type Output = Self;
    #[inline]
    fn div(self, rhs: f64) -> Self {
        self * (1.0 / rhs)
    }
}

impl<const P: usize, const N: usize> Add<f64> for Taylor4<P, N> {
    type Output = Self;
    #[inline]
    fn add(mut self, rhs: f64) -> Self {
        self.c[0] += rhs;
        self
    }
}

impl<const P: usize, const N: usize> Sub<f64> for Taylor4<P, N> {
    type Output = Self;
    #[inline]
    fn sub(mut self, rhs: f64) -> Self {
        self.c[0] -= rhs;
        self
    }
}

impl<const P: usize, const N: usize> Neg for Taylor4<P, N> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        self * -1.0
    }
}

impl<const P: usize, const N: usize> Scalar for Taylor4<P, N> {
    fn cst(v: f64) -> Self {
        Self::constant(v)
    }
    fn re(&self) -> f64 {
        self.c[0]
    }
    fn sin(self) -> Self {
        let (s, c) = self.c[0].sin_cos();
        self.compose([s, c, -s, -c, s])
    }
    fn cos(self) -> Self {
        let (s, c) = self.c[0].sin_cos();
        self.compose([c, -s, -c, s, c])
    }
    fn exp(self) -> Self {
        let e = self.c[0].exp();
        self.compose([e; 5])
    }
    fn ln(self) -> Self {
        let a = self.c[0];
        let r = 1.0 / a;
        self.compose([a.ln(), r, -r * r, 2.0 * r * r * r, -6.0 * r * r * r * r])
    }
    fn sqrt(self) -> Self {
        let a = self.c[0];
        let s = a.sqrt();
        let r = 1.0 / a;
        self.compose([s, 0.5 * s * r, -0.25 * s * r * r, 0.375 * s * r * r * r, -0.9375 * s * r * r * r * r])
    }
    fn recip(self) -> Self {
        let r = 1.0 / self.c[0];
        let r2 = r * r;
        self.compose([r, -r2, 2.0 * r2 * r, -6.0 * r2 * r2, 24.0 * r2 * r2 * r])
    }
    fn tanh(self) -> Self {
        let t = self.c[0].tanh();
        let u = 1.0 - t * t;
        self.compose([t, u, -2.0 * t * u, u * (6.0 * t * t - 2.0), u * (16.0 * t - 24.0 * t * t * t)])
    }
    fn softplus(self) -> Self {
        let a = self.c[0];
        let s = sigmoid_f64(a);
        let d = sigmoid_derivatives(s);
        self.compose([a.softplus(), s, d[0], d[1], d[2]])
    }
    fn sigmoid(self) -> Self {
        let s = sigmoid_f64(self.c[0]);
        let d = sigmoid_derivatives(s);
        self.compose([s, d[0], d[1], d[2], d[3]])
    }
}

/// First four derivatives of the logistic function given its value `s`.
fn sigmoid_derivatives(s: f64) -> [f64; 4] {
    let d1 = s * (1.0 - s);
    [
        d1,
        d1 * (1.0 - 2.0 * s),
        d1 * (1.0 - 6.0 * s + 6.0 * s * s),
        d1 * (1.0 - 2.0 * s) * (1.0 - 12.0 * s + 12.0 * s * s),
    ]
}
