//! Shared numerical kernel: scalar fields and their gradients, determinants,
//! generalized cross products, dense solves, periodic quadrature, bracketed
//! root refinement and the trigonometric moments `T_{i,j}`.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
use core::fmt;

#[allow(unused_imports)]
use num_traits::Float;

use crate::{Error, Result};

type EvalFn = dyn Fn(&[f64]) -> f64 + Send + Sync;
type GradFn = dyn Fn(&[f64]) -> Vec<f64> + Send + Sync;

/// A real function on `R^n` with an optional analytic gradient.
///
/// Cloning is cheap; the closures are reference counted.
#[derive(Clone)]
pub struct ScalarField {
    arity: usize,
    eval: Arc<EvalFn>,
    grad: Option<Arc<GradFn>>,
}

impl fmt::Debug for ScalarField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScalarField")
            .field("arity", &self.arity)
            .field("analytic_gradient", &self.grad.is_some())
            .finish()
    }
}

impl ScalarField {
    pub fn new<F>(arity: usize, eval: F) -> Self
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        Self {
            arity,
            eval: Arc::new(eval),
            grad: None,
        }
    }

    /// Attaches an analytic gradient.
    pub fn with_gradient<G>(mut self, grad: G) -> Self
    where
        G: Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        self.grad = Some(Arc::new(grad));
        self
    }

    /// The coordinate function `x ↦ x_i` (zero-based `i`).
    pub fn coordinate(arity: usize, i: usize) -> Self {
        assert!(i < arity, "coordinate index out of range");
        Self::new(arity, move |x| x[i]).with_gradient(move |_| {
            let mut g = vec![0.0; arity];
            g[i] = 1.0;
            g
        })
    }

    pub fn constant(arity: usize, value: f64) -> Self {
        Self::new(arity, move |_| value).with_gradient(move |_| vec![0.0; arity])
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn has_gradient(&self) -> bool {
        self.grad.is_some()
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        (self.eval)(x)
    }

    /// Evaluates and rejects NaN/∞.
    pub fn try_eval(&self, x: &[f64]) -> Result<f64> {
        self.check_arity(x)?;
        let v = (self.eval)(x);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite)
        }
    }

    /// Analytic gradient when present, otherwise [`fd_gradient`](Self::fd_gradient).
    pub fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_arity(x)?;
        match &self.grad {
            Some(g) => {
                let v = g(x);
                if v.len() != self.arity {
                    return Err(Error::DimensionMismatch {
                        expected: self.arity,
                        got: v.len(),
                    });
                }
                if v.iter().all(|c| c.is_finite()) {
                    Ok(v)
                } else {
                    Err(Error::NonFinite)
                }
            }
            None => self.fd_gradient(x),
        }
    }

    /// Fourth-order central differences with step `ε^{1/3}·max(1,|x_i|)`.
    pub fn fd_gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_arity(x)?;
        let mut probe = x.to_vec();
        let mut out = Vec::with_capacity(x.len());
        for i in 0..x.len() {
            let step = fd_step(x[i]);
            let d = central_difference(
                |t| {
                    probe[i] = t;
                    (self.eval)(&probe)
                },
                x[i],
                step,
            );
            probe[i] = x[i];
            if !d.is_finite() {
                return Err(Error::NonFinite);
            }
            out.push(d);
        }
        Ok(out)
    }

    /// Pointwise product `self·other`; the gradient follows the Leibniz rule
    /// when both factors carry one.
    pub fn product(&self, other: &ScalarField) -> ScalarField {
        let (a, b) = (self.clone(), other.clone());
        let field = {
            let (a, b) = (a.clone(), b.clone());
            ScalarField::new(self.arity, move |x| a.eval(x) * b.eval(x))
        };
        if a.has_gradient() && b.has_gradient() {
            field.with_gradient(move |x| {
                let (fa, fb) = (a.eval(x), b.eval(x));
                let ga = a.gradient(x).unwrap_or_else(|_| vec![f64::NAN; x.len()]);
                let gb = b.gradient(x).unwrap_or_else(|_| vec![f64::NAN; x.len()]);
                ga.iter().zip(&gb).map(|(u, v)| u * fb + fa * v).collect()
            })
        } else {
            field
        }
    }

    fn check_arity(&self, x: &[f64]) -> Result<()> {
        if x.len() == self.arity {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected: self.arity,
                got: x.len(),
            })
        }
    }
}

/// Finite-difference step used throughout the crate.
pub fn fd_step(x: f64) -> f64 {
    f64::EPSILON.cbrt() * x.abs().max(1.0)
}

/// Five-point central difference of a scalar function of one variable.
pub fn central_difference<F: FnMut(f64) -> f64>(mut f: F, x: f64, step: f64) -> f64 {
    let fp1 = f(x + step);
    let fm1 = f(x - step);
    let fp2 = f(x + 2.0 * step);
    let fm2 = f(x - 2.0 * step);
    (8.0 * (fp1 - fm1) - (fp2 - fm2)) / (12.0 * step)
}

pub fn gradient(f: &ScalarField, x: &[f64]) -> Result<Vec<f64>> {
    f.gradient(x)
}

/// `∂(f_1,…,f_n)/∂(x_1,…,x_n)` at `x`.
pub fn jacobian_determinant(fields: &[&ScalarField], x: &[f64]) -> Result<f64> {
    let n = x.len();
    if fields.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: fields.len(),
        });
    }
    let rows = fields
        .iter()
        .map(|f| f.gradient(x))
        .collect::<Result<Vec<_>>>()?;
    let det = determinant(&rows);
    if det.is_finite() {
        Ok(det)
    } else {
        Err(Error::NonFinite)
    }
}

/// In-place LU factorisation with partial pivoting of a row-major `n×n`
/// matrix. Returns the permutation sign, or `None` when a pivot is exactly
/// zero.
fn lu_in_place(a: &mut [f64], n: usize, perm: &mut [usize]) -> Option<f64> {
    for (i, p) in perm.iter_mut().enumerate() {
        *p = i;
    }
    let mut sign = 1.0;
    for k in 0..n {
        let mut piv = k;
        let mut best = a[k * n + k].abs();
        for r in (k + 1)..n {
            let v = a[r * n + k].abs();
            if v > best {
                best = v;
                piv = r;
            }
        }
        if best == 0.0 {
            return None;
        }
        if piv != k {
            for c in 0..n {
                a.swap(k * n + c, piv * n + c);
            }
            perm.swap(k, piv);
            sign = -sign;
        }
        let d = a[k * n + k];
        for r in (k + 1)..n {
            let factor = a[r * n + k] / d;
            a[r * n + k] = factor;
            for c in (k + 1)..n {
                a[r * n + c] -= factor * a[k * n + c];
            }
        }
    }
    Some(sign)
}

fn flatten(rows: &[Vec<f64>]) -> Vec<f64> {
    rows.iter().flat_map(|r| r.iter().copied()).collect()
}

/// Determinant of a square matrix given by rows.
pub fn determinant(rows: &[Vec<f64>]) -> f64 {
    let n = rows.len();
    if n == 0 {
        return 1.0;
    }
    debug_assert!(rows.iter().all(|r| r.len() == n));
    let mut a = flatten(rows);
    let mut perm = vec![0; n];
    match lu_in_place(&mut a, n, &mut perm) {
        Some(sign) => (0..n).fold(sign, |acc, i| acc * a[i * n + i]),
        None => 0.0,
    }
}

/// The unique `v` with `⟨v, w⟩ = det(u_1, …, u_{n−1}, w)` for every `w`,
/// i.e. the Hodge star of `u_1 ∧ … ∧ u_{n−1}`.
pub fn generalized_cross(u: &[Vec<f64>]) -> Result<Vec<f64>> {
    let n = u.len() + 1;
    if n < 2 {
        return Err(Error::InvalidArgument("need at least one vector"));
    }
    if let Some(bad) = u.iter().find(|r| r.len() != n) {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: bad.len(),
        });
    }
    // Cofactor expansion along the last row: v_k = (-1)^{n+k} M_{n,k}.
    let mut out = Vec::with_capacity(n);
    let mut minor: Vec<Vec<f64>> = vec![Vec::with_capacity(n - 1); n - 1];
    for k in 0..n {
        for (dst, src) in minor.iter_mut().zip(u) {
            dst.clear();
            dst.extend(
                src.iter()
                    .enumerate()
                    .filter(|&(c, _)| c != k)
                    .map(|(_, v)| *v),
            );
        }
        let sign = if (n - 1 + k) % 2 == 0 { 1.0 } else { -1.0 };
        let v = sign * determinant(&minor);
        if !v.is_finite() {
            return Err(Error::NonFinite);
        }
        out.push(v);
    }
    Ok(out)
}

/// Solves `⟨rows_i, X⟩ = rhs_i`.
///
/// Fails with [`Error::SingularMatrix`] when `|det| ≤ 1e-12·Π‖rows_i‖`.
pub fn linear_solve(rows: &[Vec<f64>], rhs: &[f64]) -> Result<Vec<f64>> {
    let n = rows.len();
    if rhs.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: rhs.len(),
        });
    }
    if let Some(bad) = rows.iter().find(|r| r.len() != n) {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: bad.len(),
        });
    }
    let norm_product: f64 = rows.iter().map(|r| norm(r)).product();
    let mut a = flatten(rows);
    let mut perm = vec![0; n];
    let sign = lu_in_place(&mut a, n, &mut perm).ok_or(Error::SingularMatrix)?;
    let det = (0..n).fold(sign, |acc, i| acc * a[i * n + i]);
    if !det.is_finite() || det.abs() <= 1e-12 * norm_product {
        return Err(Error::SingularMatrix);
    }
    let mut x: Vec<f64> = perm.iter().map(|&p| rhs[p]).collect();
    for i in 0..n {
        for j in 0..i {
            x[i] -= a[i * n + j] * x[j];
        }
    }
    for i in (0..n).rev() {
        for j in (i + 1)..n {
            x[i] -= a[i * n + j] * x[j];
        }
        x[i] /= a[i * n + i];
    }
    if x.iter().all(|v| v.is_finite()) {
        Ok(x)
    } else {
        Err(Error::NonFinite)
    }
}

/// Sample count used for loop integrals unless the caller overrides it.
pub const DEFAULT_QUADRATURE_POINTS: usize = 512;

/// Trapezoid rule over `n` uniform samples of a `2π`-periodic integrand.
pub fn periodic_quadrature<G: FnMut(f64) -> f64>(mut g: G, n: usize) -> Result<f64> {
    if n < 16 || !n.is_power_of_two() {
        return Err(Error::InvalidArgument(
            "sample count must be a power of two >= 16",
        ));
    }
    let step = 2.0 * PI / n as f64;
    let v = (0..n).map(|k| g(k as f64 * step)).sum::<f64>() * step;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite)
    }
}

/// Trapezoid values on `n` and `2n` points sharing the `n` coarse samples.
pub(crate) fn periodic_sums<G: FnMut(f64) -> f64>(mut g: G, n: usize) -> (f64, f64) {
    let fine_step = PI / n as f64;
    let mut even = 0.0;
    let mut odd = 0.0;
    for k in 0..(2 * n) {
        let v = g(k as f64 * fine_step);
        if k % 2 == 0 {
            even += v;
        } else {
            odd += v;
        }
    }
    (even * 2.0 * fine_step, (even + odd) * fine_step)
}

/// Trapezoid rule on `n` points together with the `2n`-point value; the
/// integrand is evaluated `2n` times.
pub fn periodic_quadrature_pair<G: FnMut(f64) -> f64>(g: G, n: usize) -> Result<(f64, f64)> {
    if n < 16 || !n.is_power_of_two() {
        return Err(Error::InvalidArgument(
            "sample count must be a power of two >= 16",
        ));
    }
    let (a, b) = periodic_sums(g, n);
    if a.is_finite() && b.is_finite() {
        Ok((a, b))
    } else {
        Err(Error::NonFinite)
    }
}

/// `T_{i,j} = ∫_0^{2π} cos^i θ sin^j θ dθ`.
///
/// Zero unless both exponents are even; for `i = 2p`, `j = 2q` the value is
/// `2π (2p)!(2q)! / (4^{p+q} p! q! (p+q)!)`, accumulated as a product of
/// factors no larger than one so it never overflows.
pub fn trig_moment(i: u32, j: u32) -> f64 {
    if i % 2 == 1 || j % 2 == 1 {
        return 0.0;
    }
    let (p, q) = (i / 2, j / 2);
    let mut ratio = 1.0;
    for k in 1..=p {
        ratio *= f64::from(2 * k - 1) / f64::from(2 * k);
    }
    for l in 1..=q {
        ratio *= f64::from(2 * l - 1) / f64::from(2 * (p + l));
    }
    2.0 * PI * ratio
}

/// Brent's method on a sign-changing bracket, to `|b − a| ≤ tol`.
pub fn refine_root<G: FnMut(f64) -> f64>(mut g: G, bracket: (f64, f64), tol: f64) -> Result<f64> {
    let (mut a, mut b) = bracket;
    let mut fa = g(a);
    let mut fb = g(b);
    if !fa.is_finite() || !fb.is_finite() {
        return Err(Error::NonFinite);
    }
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa * fb > 0.0 {
        return Err(Error::NoSignChange);
    }
    let tol = tol.max(0.0);
    let mut c = a;
    let mut fc = fa;
    let mut d = b - a;
    let mut e = d;
    for _ in 0..200 {
        if fb * fc > 0.0 {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol1 = 2.0 * f64::EPSILON * b.abs() + 0.5 * tol;
        let xm = 0.5 * (c - b);
        if xm.abs() <= tol1 || fb == 0.0 {
            return Ok(b);
        }
        if e.abs() >= tol1 && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * xm * s;
                q = 1.0 - s;
            } else {
                let qa = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * xm * qa * (qa - r) - (b - a) * (r - 1.0));
                q = (qa - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            }
            p = p.abs();
            let min1 = 3.0 * xm * q - (tol1 * q).abs();
            let min2 = (e * q).abs();
            if 2.0 * p < min1.min(min2) {
                e = d;
                d = p / q;
            } else {
                d = xm;
                e = d;
            }
        } else {
            d = xm;
            e = d;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol1 { d } else { tol1.copysign(xm) };
        fb = g(b);
        if !fb.is_finite() {
            return Err(Error::NonFinite);
        }
    }
    Err(Error::NoConvergence)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
