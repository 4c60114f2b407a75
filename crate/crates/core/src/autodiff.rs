//! Forward-mode automatic differentiation with fixed-width dual numbers.
//!
//! A [`Dual<N>`] carries a value and `N` partial derivatives. The width is a
//! compile-time constant picked at each call site (for example the number of
//! decision variables touched by one collocation interval), so the cost of a
//! derivative evaluation stays proportional to the local block size.
//!
//! Code that should be differentiable is written once, generically over the
//! [`Real`] trait, and instantiated with `f64` for plain evaluation or with
//! `Dual<N>` for derivatives.

use std::fmt;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AdError {
    #[error("singular matrix in linear solve (pivot ratio estimate {cond:.3e})")]
    Singular { cond: f64 },
    #[error("derivative is not finite: {0}")]
    Domain(String),
    #[error("seed index {index} out of range for vector of length {len}")]
    SeedOutOfRange { index: usize, len: usize },
}

/// Scalar abstraction shared by `f64` and [`Dual`].
pub trait Real:
    Copy
    + fmt::Debug
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
    fn value(&self) -> f64;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn sqrt(self) -> Self;

    fn zero() -> Self {
        Self::cst(0.0)
    }

    fn powi2(self) -> Self {
        self * self
    }

    /// Smoothed absolute value `sqrt(x^2 + eps_sq)`.
    fn abs_smooth(self, eps_sq: f64) -> Self {
        (self * self + eps_sq).sqrt()
    }

    /// Solves the dense system `a x = b`.
    fn solve<const M: usize>(a: &[[Self; M]; M], b: &[Self; M]) -> Result<[Self; M], AdError>;
}

/// Dual number with `N` derivative directions.
#[derive(Clone, Copy, PartialEq)]
pub struct Dual<const N: usize> {
    pub re: f64,
    pub du: [f64; N],
}

impl<const N: usize> fmt::Debug for Dual<N> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Dual({:?}, {:?})", self.re, &self.du[..])
    }
}

impl<const N: usize> Dual<N> {
    pub fn constant(re: f64) -> Self {
        Self { re, du: [0.0; N] }
    }

    /// Independent variable seeded along direction `i`.
    pub fn variable(re: f64, i: usize) -> Self {
        let mut du = [0.0; N];
        du[i] = 1.0;
        Self { re, du }
    }

    #[inline]
    fn chain(self, re: f64, scale: f64) -> Self {
        let mut du = self.du;
        for d in du.iter_mut() {
            *d *= scale;
        }
        Self { re, du }
    }
}

impl<const N: usize> Add for Dual<N> {
    type Output = Self;
    #[inline]
    fn add(mut self, o: Self) -> Self {
        self.re += o.re;
        for (a, b) in self.du.iter_mut().zip(o.du.iter()) {
            *a += b;
        }
        self
    }
}

impl<const N: usize> Sub for Dual<N> {
    type Output = Self;
    #[inline]
    fn sub(mut self, o: Self) -> Self {
        self.re -= o.re;
        for (a, b) in self.du.iter_mut().zip(o.du.iter()) {
            *a -= b;
        }
        self
    }
}

impl<const N: usize> Mul for Dual<N> {
    type Output = Self;
    #[inline]
    fn mul(self, o: Self) -> Self {
        let mut du = [0.0; N];
        for i in 0..N {
            du[i] = self.du[i] * o.re + self.re * o.du[i];
        }
        Self { re: self.re * o.re, du }
    }
}

impl<const N: usize> Div for Dual<N> {
    type Output = Self;
    #[inline]
    fn div(self, o: Self) -> Self {
        let inv = 1.0 / o.re;
        let re = self.re * inv;
        let mut du = [0.0; N];
        for i in 0..N {
            du[i] = (self.du[i] - re * o.du[i]) * inv;
        }
        Self { re, du }
    }
}

impl<const N: usize> Neg for Dual<N> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        self.chain(-self.re, -1.0)
    }
}

impl<const N: usize> Add<f64> for Dual<N> {
    type Output = Self;
    #[inline]
    fn add(mut self, o: f64) -> Self {
        self.re += o;
        self
    }
}

impl<const N: usize> Sub<f64> for Dual<N> {
    type Output = Self;
    #[inline]
    fn sub(mut self, o: f64) -> Self {
        self.re -= o;
        self
    }
}

impl<const N: usize> Mul<f64> for Dual<N> {
    type Output = Self;
    #[inline]
    fn mul(self, o: f64) -> Self {
        self.chain(self.re * o, o)
    }
}

impl<const N: usize> Div<f64> for Dual<N> {
    type Output = Self;
    #[inline]
    fn div(self, o: f64) -> Self {
        self * (1.0 / o)
    }
}

impl<const N: usize> AddAssign for Dual<N> {
    #[inline]
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl<const N: usize> SubAssign for Dual<N> {
    #[inline]
    fn sub_assign(&mut self, o: Self) {
        *self = *self - o;
    }
}

impl<const N: usize> MulAssign for Dual<N> {
    #[inline]
    fn mul_assign(&mut self, o: Self) {
        *self = *self * o;
    }
}

impl<const N: usize> Real for Dual<N> {
    #[inline]
    fn cst(v: f64) -> Self {
        Self::constant(v)
    }
    #[inline]
    fn value(&self) -> f64 {
        self.re
    }
    #[inline]
    fn sin(self) -> Self {
        let (s, c) = self.re.sin_cos();
        self.chain(s, c)
    }
    #[inline]
    fn cos(self) -> Self {
        let (s, c) = self.re.sin_cos();
        self.chain(c, -s)
    }
    #[inline]
    fn sqrt(self) -> Self {
        let r = self.re.sqrt();
        self.chain(r, 0.5 / r)
    }

    fn solve<const M: usize>(a: &[[Self; M]; M], b: &[Self; M]) -> Result<[Self; M], AdError> {
        solve_linear_dual(a, b)
    }
}

impl Real for f64 {
    #[inline]
    fn cst(v: f64) -> Self {
        v
    }
    #[inline]
    fn value(&self) -> f64 {
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
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }

    fn solve<const M: usize>(a: &[[f64; M]; M], b: &[f64; M]) -> Result<[f64; M], AdError> {
        let lu = Lu::factor(a)?;
        Ok(lu.solve(b))
    }
}

/// Dense LU factorization with partial pivoting, row-major and fixed size.
#[derive(Debug, Clone)]
pub struct Lu<const M: usize> {
    lu: [[f64; M]; M],
    perm: [usize; M],
}

impl<const M: usize> Lu<M> {
    pub fn factor(a: &[[f64; M]; M]) -> Result<Self, AdError> {
        let mut lu = *a;
        let mut perm = [0usize; M];
        for (i, p) in perm.iter_mut().enumerate() {
            *p = i;
        }
        let scale = a
            .iter()
            .flat_map(|r| r.iter())
            .fold(0.0f64, |m, v| m.max(v.abs()));
        let mut pmax = 0.0f64;
        for k in 0..M {
            let mut piv = k;
            for i in k + 1..M {
                if lu[i][k].abs() > lu[piv][k].abs() {
                    piv = i;
                }
            }
            let p = lu[piv][k].abs();
            pmax = pmax.max(p);
            if p <= f64::EPSILON * scale * M as f64 || p == 0.0 {
                return Err(AdError::Singular {
                    cond: if p == 0.0 { f64::INFINITY } else { pmax / p },
                });
            }
            lu.swap(k, piv);
            perm.swap(k, piv);
            for i in k + 1..M {
                let f = lu[i][k] / lu[k][k];
                lu[i][k] = f;
                for j in k + 1..M {
                    lu[i][j] -= f * lu[k][j];
                }
            }
        }
        Ok(Self { lu, perm })
    }

    pub fn solve(&self, b: &[f64; M]) -> [f64; M] {
        let mut x = [0.0; M];
        for i in 0..M {
            x[i] = b[self.perm[i]];
        }
        for i in 0..M {
            for j in 0..i {
                x[i] -= self.lu[i][j] * x[j];
            }
        }
        for i in (0..M).rev() {
            for j in i + 1..M {
                x[i] -= self.lu[i][j] * x[j];
            }
            x[i] /= self.lu[i][i];
        }
        x
    }
}

/// Solves `a x = b` for dual-valued operands.
///
/// The value part is solved by LU; each derivative direction then solves
/// `A dx = db - dA x` with the same factorization.
pub fn solve_linear_dual<const M: usize, const N: usize>(
    a: &[[Dual<N>; M]; M],
    b: &[Dual<N>; M],
) -> Result<[Dual<N>; M], AdError> {
    let mut av = [[0.0; M]; M];
    let mut bv = [0.0; M];
    for i in 0..M {
        bv[i] = b[i].re;
        for j in 0..M {
            av[i][j] = a[i][j].re;
        }
    }
    let lu = Lu::factor(&av)?;
    let xv = lu.solve(&bv);
    let mut x = [Dual::<N>::constant(0.0); M];
    for i in 0..M {
        x[i].re = xv[i];
    }
    for d in 0..N {
        let mut rhs = [0.0; M];
        for i in 0..M {
            let mut r = b[i].du[d];
            for j in 0..M {
                r -= a[i][j].du[d] * xv[j];
            }
            rhs[i] = r;
        }
        let dx = lu.solve(&rhs);
        for i in 0..M {
            x[i].du[d] = dx[i];
        }
    }
    Ok(x)
}

/// Lifts a real vector to duals, seeding an identity block on `seed`.
///
/// The k-th seeded index receives derivative direction k.
pub fn lift<const N: usize>(x: &[f64], seed: &[usize]) -> Result<Vec<Dual<N>>, AdError> {
    let mut out: Vec<Dual<N>> = x.iter().map(|&v| Dual::constant(v)).collect();
    for (k, &i) in seed.iter().enumerate() {
        if i >= x.len() {
            return Err(AdError::SeedOutOfRange { index: i, len: x.len() });
        }
        if k >= N {
            return Err(AdError::SeedOutOfRange { index: k, len: N });
        }
        out[i].du[k] = 1.0;
    }
    Ok(out)
}

fn check_finite<const N: usize>(ys: &[Dual<N>]) -> Result<(), AdError> {
    for (i, y) in ys.iter().enumerate() {
        if !y.re.is_finite() || y.du.iter().any(|d| !d.is_finite()) {
            return Err(AdError::Domain(format!("output {i} = {y:?}")));
        }
    }
    Ok(())
}

/// Dense Jacobian of `f` at `x`; row `i` holds the partials of output `i`.
pub fn jacobian<const N: usize, F>(f: F, x: &[f64; N]) -> Result<Vec<[f64; N]>, AdError>
where
    F: Fn(&[Dual<N>; N]) -> Vec<Dual<N>>,
{
    let mut xd = [Dual::<N>::constant(0.0); N];
    for i in 0..N {
        xd[i] = Dual::variable(x[i], i);
    }
    let ys = f(&xd);
    check_finite(&ys)?;
    Ok(ys.into_iter().map(|y| y.du).collect())
}

/// Gradient of a scalar function.
pub fn gradient<const N: usize, F>(f: F, x: &[f64; N]) -> Result<[f64; N], AdError>
where
    F: Fn(&[Dual<N>; N]) -> Dual<N>,
{
    let rows = jacobian(|v| vec![f(v)], x)?;
    Ok(rows[0])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn central_diff<F: Fn(f64) -> f64>(f: F, x: f64) -> f64 {
        let h = 1e-6;
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn lift_seeds_identity() {
        let v = lift::<1>(&[2.0], &[0]).unwrap();
        assert_eq!(v[0].re, 2.0);
        assert_eq!(v[0].du, [1.0]);

        let v = lift::<1>(&[3.0, 4.0], &[1]).unwrap();
        assert_eq!(v[0].du, [0.0]);
        assert_eq!(v[1].du, [1.0]);

        let x: Vec<f64> = (0..10).map(|i| i as f64 * 0.1).collect();
        let seed: Vec<usize> = (0..10).collect();
        let v = lift::<10>(&x, &seed).unwrap();
        for i in 0..10 {
            assert_eq!(v[i].re, x[i]);
            for j in 0..10 {
                assert_eq!(v[i].du[j], if i == j { 1.0 } else { 0.0 });
            }
        }
        assert!(lift::<1>(&[1.0], &[3]).is_err());
    }

    #[test]
    fn square_and_smoothed_abs() {
        let g = gradient(|x: &[Dual<1>; 1]| x[0] * x[0], &[3.0]).unwrap();
        assert_eq!(g[0], 6.0);
        let g = gradient(|x: &[Dual<1>; 1]| x[0].abs_smooth(0.01), &[0.0]).unwrap();
        assert_eq!(g[0], 0.0);
    }

    #[test]
    fn sqrt_at_zero_is_domain_error() {
        let r = gradient(|x: &[Dual<1>; 1]| (x[0] * x[0]).sqrt(), &[0.0]);
        assert!(matches!(r, Err(AdError::Domain(_))));
    }

    #[test]
    fn constant_and_linear_gradients() {
        let g = gradient(|_x: &[Dual<3>; 3]| Dual::constant(4.2), &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(g, [0.0; 3]);
        let c = [1.5, -2.0, 0.25];
        let g = gradient(
            |x: &[Dual<3>; 3]| x[0] * c[0] + x[1] * c[1] + x[2] * c[2] + 7.0,
            &[0.3, -0.1, 9.0],
        )
        .unwrap();
        assert_eq!(g, c);
    }

    #[test]
    fn primitives_match_finite_differences() {
        let xs = [-2.3, -0.7, 0.4, 1.1, 2.9];
        for &x in &xs {
            let cases: Vec<(Box<dyn Fn(Dual<1>) -> Dual<1>>, Box<dyn Fn(f64) -> f64>)> = vec![
                (Box::new(|d| d.sin()), Box::new(f64::sin)),
                (Box::new(|d| d.cos()), Box::new(f64::cos)),
                (Box::new(|d| (d * d + 1.0).sqrt()), Box::new(|v| (v * v + 1.0).sqrt())),
                (Box::new(|d| d.abs_smooth(0.01)), Box::new(|v| (v * v + 0.01).sqrt())),
                (Box::new(|d| Dual::constant(1.0) / (d * d + 0.5)), Box::new(|v| 1.0 / (v * v + 0.5))),
                (Box::new(|d| d * d.sin() - d * 3.0), Box::new(|v| v * v.sin() - 3.0 * v)),
            ];
            for (fd, ff) in cases {
                let ad = fd(Dual::variable(x, 0)).du[0];
                let fdv = central_diff(&ff, x);
                assert!((ad - fdv).abs() <= 1e-6 * fdv.abs().max(1.0), "{ad} vs {fdv}");
            }
        }
    }

    #[test]
    fn deriv_free_arithmetic_is_bit_exact() {
        let a = 0.1234567;
        let b = -9.87654321;
        let da = Dual::<3>::constant(a);
        let db = Dual::<3>::constant(b);
        assert_eq!((da + db).re, a + b);
        assert_eq!((da - db).re, a - b);
        assert_eq!((da * db).re, a * b);
        assert_eq!((da * db).du, [0.0; 3]);
    }

    #[test]
    fn identity_solve_passes_derivatives_through() {
        let mut a = [[Dual::<2>::constant(0.0); 3]; 3];
        for i in 0..3 {
            a[i][i] = Dual::constant(1.0);
        }
        let b = [
            Dual { re: 1.0, du: [1.0, 0.0] },
            Dual { re: -2.0, du: [0.0, 3.0] },
            Dual { re: 0.5, du: [0.25, -1.0] },
        ];
        let x = solve_linear_dual(&a, &b).unwrap();
        assert_eq!(x, b);
    }

    #[test]
    fn two_by_two_solve_matches_finite_differences() {
        // A(p) x = b(p) with p = (p0, p1)
        let build = |p0: f64, p1: f64| {
            (
                [[2.0 + p0, p1.sin()], [0.5 * p0 * p1, 3.0 - p1]],
                [p0.cos(), 1.0 + p0 * p0],
            )
        };
        let p = [0.3, -0.8];
        let x = solve_linear_dual(
            &{
                let v0 = Dual::<2>::variable(p[0], 0);
                let v1 = Dual::<2>::variable(p[1], 1);
                [[v0 + 2.0, v1.sin()], [v0 * v1 * 0.5, -v1 + 3.0]]
            },
            &{
                let v0 = Dual::<2>::variable(p[0], 0);
                [v0.cos(), v0 * v0 + 1.0]
            },
        )
        .unwrap();
        let plain = |p0: f64, p1: f64| {
            let (a, b) = build(p0, p1);
            f64::solve(&a, &b).unwrap()
        };
        let h = 1e-6;
        for d in 0..2 {
            let mut pp = p;
            let mut pm = p;
            pp[d] += h;
            pm[d] -= h;
            let xp = plain(pp[0], pp[1]);
            let xm = plain(pm[0], pm[1]);
            for i in 0..2 {
                let fd = (xp[i] - xm[i]) / (2.0 * h);
                assert!((x[i].du[d] - fd).abs() <= 1e-6 * fd.abs().max(1.0));
            }
        }
        // the defining identity A dx = db - dA x holds for every direction
        let xv = plain(p[0], p[1]);
        assert!((x[0].re - xv[0]).abs() < 1e-14 && (x[1].re - xv[1]).abs() < 1e-14);
    }

    #[test]
    fn singular_matrix_reports_condition() {
        let a = [[1.0, 2.0], [2.0, 4.0]];
        let r = f64::solve(&a, &[1.0, 1.0]);
        assert!(matches!(r, Err(AdError::Singular { .. })));
    }

    #[test]
    fn jacobian_composition_matches_chain_rule() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        fn g<T: Real>(x: &[T; 3]) -> [T; 3] {
            [x[0] * x[1], x[1].sin() + x[2], x[2] * x[2] - x[0]]
        }
        fn f<T: Real>(y: &[T; 3]) -> [T; 3] {
            [y[0].cos() * y[2], y[1] * y[1] + y[0], (y[2] * y[2] + 1.0).sqrt()]
        }
        for _ in 0..20 {
            let x: [f64; 3] = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let jfg = jacobian(|v| f(&g(v)).to_vec(), &x).unwrap();
            let jg = jacobian(|v| g(v).to_vec(), &x).unwrap();
            let gx = g(&x);
            let jf = jacobian(|v| f(v).to_vec(), &gx).unwrap();
            for i in 0..3 {
                for j in 0..3 {
                    let prod: f64 = (0..3).map(|k| jf[i][k] * jg[k][j]).sum();
                    assert!((prod - jfg[i][j]).abs() <= 1e-10);
                }
            }
        }
    }
}
