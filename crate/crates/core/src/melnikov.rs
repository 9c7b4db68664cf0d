//! First-order displacement coefficient `I(h) = ∮_{γ_h} −P_1 dy_2 + P_2 dy_1`
//! over a family of closed orbits in a leaf slice, its closed polynomial
//! form for polynomial perturbations, and zero isolation.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::SQRT_2;
use core::fmt;

#[allow(unused_imports)]
use num_traits::Float;

use crate::darboux::LeafCoordinates;
use crate::numkernel::{
    periodic_quadrature_pair, refine_root, trig_moment, ScalarField, DEFAULT_QUADRATURE_POINTS,
};
use crate::perturb::PolynomialPerturbation;
use crate::{Error, Result};

type CurveFn = dyn Fn(f64, f64) -> [f64; 2] + Send + Sync;

/// A family `θ ↦ (y_1, y_2)(h, θ)` of closed curves, `2π`-periodic in `θ`,
/// for `h` in the open interval `h_range`.
#[derive(Clone)]
pub struct OrbitParameterization {
    curve: Arc<CurveFn>,
    tangent: Arc<CurveFn>,
    h_range: (f64, f64),
}

impl fmt::Debug for OrbitParameterization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OrbitParameterization")
            .field("h_range", &self.h_range)
            .finish()
    }
}

impl OrbitParameterization {
    /// `tangent` is `∂/∂θ` of `curve`.
    pub fn new<C, T>(curve: C, tangent: T, h_range: (f64, f64)) -> Result<Self>
    where
        C: Fn(f64, f64) -> [f64; 2] + Send + Sync + 'static,
        T: Fn(f64, f64) -> [f64; 2] + Send + Sync + 'static,
    {
        if !(h_range.0 < h_range.1) || !h_range.0.is_finite() || !h_range.1.is_finite() {
            return Err(Error::InvalidArgument(
                "h_range must be a finite, nonempty interval",
            ));
        }
        Ok(Self {
            curve: Arc::new(curve),
            tangent: Arc::new(tangent),
            h_range,
        })
    }

    /// Circles `y_1² + y_2² = 2h`, counter-clockwise from `(√(2h), 0)`.
    pub fn circles(h_range: (f64, f64)) -> Result<Self> {
        Self::new(
            |h, t| {
                let r = (2.0 * h).sqrt();
                [r * t.cos(), r * t.sin()]
            },
            |h, t| {
                let r = (2.0 * h).sqrt();
                [-r * t.sin(), r * t.cos()]
            },
            h_range,
        )
    }

    pub fn h_range(&self) -> (f64, f64) {
        self.h_range
    }

    pub fn contains(&self, h: f64) -> bool {
        h > self.h_range.0 && h < self.h_range.1
    }

    pub fn point(&self, h: f64, theta: f64) -> [f64; 2] {
        (self.curve)(h, theta)
    }

    pub fn tangent(&self, h: f64, theta: f64) -> [f64; 2] {
        (self.tangent)(h, theta)
    }

    /// Chart point `(y_1, y_2, c_1, …)`.
    pub fn chart_point(&self, h: f64, theta: f64, leaf: &LeafCoordinates) -> Vec<f64> {
        let [a, b] = self.point(h, theta);
        let mut y = vec![a, b];
        y.extend_from_slice(leaf.values());
        y
    }
}

/// `(I(h), ∮|integrand|)`; the second value sets the scale for the
/// identically-zero test.
fn integral_with_mass(
    orbit: &OrbitParameterization,
    p1: &ScalarField,
    p2: &ScalarField,
    leaf: &LeafCoordinates,
    h: f64,
) -> Result<(f64, f64)> {
    if !orbit.contains(h) {
        return Err(Error::OutsideRange);
    }
    let n = leaf.len() + 2;
    if p1.arity() != n || p2.arity() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: p1.arity().min(p2.arity()),
        });
    }
    let mut y = vec![0.0; n];
    y[2..].copy_from_slice(leaf.values());
    let mut mass_y = y.clone();
    let mut integrand = |t: f64| {
        let [a, b] = orbit.point(h, t);
        let [da, db] = orbit.tangent(h, t);
        y[0] = a;
        y[1] = b;
        -p1.eval(&y) * db + p2.eval(&y) * da
    };
    let (coarse, fine) = periodic_quadrature_pair(&mut integrand, DEFAULT_QUADRATURE_POINTS)?;
    if (coarse - fine).abs() > 1e-10 * (1.0 + fine.abs()) {
        return Err(Error::Unresolved);
    }
    let mass = periodic_quadrature_pair(
        |t: f64| {
            let [a, b] = orbit.point(h, t);
            let [da, db] = orbit.tangent(h, t);
            mass_y[0] = a;
            mass_y[1] = b;
            (p1.eval(&mass_y) * db).abs() + (p2.eval(&mass_y) * da).abs()
        },
        DEFAULT_QUADRATURE_POINTS,
    )?
    .1;
    Ok((fine, mass))
}

/// `I(h) = ∮ −P_1 dy_2 + P_2 dy_1` along the orbit at level `h` with the
/// leaf coordinates frozen. The orbit orientation is the one of the
/// parameterization (counter-clockwise for [`OrbitParameterization::circles`]).
///
/// The trapezoid value on 512 points is compared with the 1024-point value;
/// a disagreement above `1e-10·(1+|I|)` is reported as
/// [`Error::Unresolved`].
pub fn melnikov_integral(
    orbit: &OrbitParameterization,
    p1: &ScalarField,
    p2: &ScalarField,
    leaf: &LeafCoordinates,
    h: f64,
) -> Result<f64> {
    integral_with_mass(orbit, p1, p2, leaf, h).map(|(i, _)| i)
}

type SourceFn = dyn Fn(f64) -> Result<(f64, f64)> + Send + Sync;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ZeroKind {
    Simple,
    PossiblyMultiple,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MelnikovZero {
    pub h: f64,
    pub kind: ZeroKind,
    pub derivative: f64,
}

/// Sampled `I(h)` with its isolated zeros.
#[derive(Clone)]
pub struct MelnikovCurve {
    pub leaf: Option<LeafCoordinates>,
    pub h_range: (f64, f64),
    pub samples: Vec<(f64, f64)>,
    pub zeros: Vec<MelnikovZero>,
    /// `I` vanishes on every sample up to `1e-12` of the integrand scale.
    pub all_zero: bool,
    source: Arc<SourceFn>,
}

impl fmt::Debug for MelnikovCurve {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MelnikovCurve")
            .field("leaf", &self.leaf)
            .field("h_range", &self.h_range)
            .field("samples", &self.samples.len())
            .field("zeros", &self.zeros)
            .field("all_zero", &self.all_zero)
            .finish()
    }
}

pub const MIN_SCAN_SAMPLES: usize = 32;
const ENDPOINT_MARGIN: f64 = 1e-6;

impl MelnikovCurve {
    /// `I` at an arbitrary `h` inside the range (not restricted to samples).
    pub fn value(&self, h: f64) -> Result<f64> {
        (self.source)(h).map(|(v, _)| v)
    }

    /// Largest `|I|` over the samples.
    pub fn max_abs(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, s| m.max(s.1.abs()))
    }

    pub fn simple_zeros(&self) -> impl Iterator<Item = &MelnikovZero> {
        self.zeros.iter().filter(|z| z.kind == ZeroKind::Simple)
    }
}

/// Scans `I` on a uniform grid strictly inside `h_range` and isolates its
/// zeros.
pub fn melnikov_scan(
    orbit: &OrbitParameterization,
    p1: &ScalarField,
    p2: &ScalarField,
    leaf: &LeafCoordinates,
    samples: usize,
) -> Result<MelnikovCurve> {
    let (o, a, b) = (orbit.clone(), p1.clone(), p2.clone());
    let l = leaf.clone();
    let source: Arc<SourceFn> = Arc::new(move |h| integral_with_mass(&o, &a, &b, &l, h));
    let mut curve = scan_source(source, orbit.h_range(), samples)?;
    curve.leaf = Some(leaf.clone());
    Ok(curve)
}

/// Scans an arbitrary function of `h` the same way as [`melnikov_scan`].
/// The identically-zero test compares against `max|f|` itself, so only an
/// exactly vanishing function is flagged.
pub fn scan_function<F>(f: F, h_range: (f64, f64), samples: usize) -> Result<MelnikovCurve>
where
    F: Fn(f64) -> f64 + Send + Sync + 'static,
{
    let (lo, hi) = h_range;
    let source: Arc<SourceFn> = Arc::new(move |h| {
        if !(h > lo && h < hi) {
            return Err(Error::OutsideRange);
        }
        let v = f(h);
        if v.is_finite() {
            Ok((v, v.abs()))
        } else {
            Err(Error::NonFinite)
        }
    });
    scan_source(source, h_range, samples)
}

fn scan_source(
    source: Arc<SourceFn>,
    h_range: (f64, f64),
    samples: usize,
) -> Result<MelnikovCurve> {
    if samples < MIN_SCAN_SAMPLES {
        return Err(Error::InvalidArgument("a scan needs at least 32 samples"));
    }
    let (a, b) = h_range;
    if !(a < b) {
        return Err(Error::InvalidArgument(
            "h_range must be a nonempty interval",
        ));
    }
    let width = b - a;
    let lo = a + ENDPOINT_MARGIN * width;
    let hi = b - ENDPOINT_MARGIN * width;
    let step = (hi - lo) / (samples - 1) as f64;
    let mut pts = Vec::with_capacity(samples);
    let mut scale: f64 = 0.0;
    for k in 0..samples {
        let h = if k + 1 == samples {
            hi
        } else {
            lo + k as f64 * step
        };
        let (v, mass) = source(h)?;
        scale = scale.max(mass);
        pts.push((h, v));
    }
    let max_abs = pts.iter().fold(0.0_f64, |m, s| m.max(s.1.abs()));
    let all_zero = max_abs <= 1e-12 * scale;

    let mut curve = MelnikovCurve {
        leaf: None,
        h_range,
        samples: pts,
        zeros: Vec::new(),
        all_zero,
        source,
    };
    if all_zero {
        return Ok(curve);
    }

    let g = |h: f64| curve.value(h).unwrap_or(f64::NAN);
    let mut roots = Vec::new();
    for (k, w) in curve.samples.windows(2).enumerate() {
        let ((h0, v0), (h1, v1)) = (w[0], w[1]);
        if v0 == 0.0 && k > 0 {
            // Counted once, as the right end of the previous window.
            continue;
        }
        if v0 == 0.0 {
            roots.push(h0);
        } else if v1 == 0.0 {
            roots.push(h1);
        } else if v0 * v1 < 0.0 {
            roots.push(refine_root(g, (h0, h1), 1e-13 * width)?);
        }
    }
    let derivative_scale = max_abs / width;
    for h in roots {
        let d = melnikov_prime(&curve, h)?;
        let kind = if d.abs() > 1e-6 * derivative_scale {
            ZeroKind::Simple
        } else {
            ZeroKind::PossiblyMultiple
        };
        curve.zeros.push(MelnikovZero {
            h,
            kind,
            derivative: d,
        });
    }
    Ok(curve)
}

/// `dI/dh` by the five-point stencil on fresh evaluations of `I` near `h`.
pub fn melnikov_prime(curve: &MelnikovCurve, h: f64) -> Result<f64> {
    let (a, b) = curve.h_range;
    if !(h > a && h < b) {
        return Err(Error::OutsideRange);
    }
    let width = b - a;
    let room = (h - a).min(b - h) / 2.5;
    let step = (1e-3 * width).min(room);
    let mut failure = None;
    let d = crate::numkernel::central_difference(
        |t| match curve.value(t) {
            Ok(v) => v,
            Err(e) => {
                failure.get_or_insert(e);
                f64::NAN
            }
        },
        h,
        step,
    );
    match failure {
        Some(e) => Err(e),
        None if d.is_finite() => Ok(d),
        None => Err(Error::NonFinite),
    }
}

/// Polynomial in `h`; `coeffs[k]` multiplies `h^k`.
#[derive(Debug, Clone, PartialEq)]
pub struct HPolynomial {
    pub coeffs: Vec<f64>,
}

impl HPolynomial {
    pub fn new(mut coeffs: Vec<f64>) -> Self {
        while coeffs.last() == Some(&0.0) {
            coeffs.pop();
        }
        Self { coeffs }
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// `None` for the zero polynomial.
    pub fn degree(&self) -> Option<usize> {
        self.coeffs.len().checked_sub(1)
    }

    pub fn eval(&self, h: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, c| acc * h + c)
    }

    pub fn derivative(&self) -> HPolynomial {
        HPolynomial::new(
            self.coeffs
                .iter()
                .enumerate()
                .skip(1)
                .map(|(k, c)| k as f64 * c)
                .collect(),
        )
    }

    /// `a_1, a_3, …` in `I(h) = h(a_1 + a_3 h + …)`.
    pub fn odd_coefficients(&self) -> Vec<f64> {
        self.coeffs.iter().skip(1).copied().collect()
    }

    fn vanishes_at(&self, h: f64) -> bool {
        let mag: f64 = self
            .coeffs
            .iter()
            .enumerate()
            .map(|(k, c)| c.abs() * h.abs().powi(k as i32))
            .sum();
        self.eval(h).abs() <= 1e-12 * mag
    }

    /// Real roots in the open interval `(a, b)` with their multiplicities,
    /// sorted. The zero polynomial has none.
    pub fn roots_in(&self, a: f64, b: f64) -> Vec<(f64, u32)> {
        match self.degree() {
            None | Some(0) => return Vec::new(),
            _ => {}
        }
        let crit = self.derivative().roots_in(a, b);
        let mut out = Vec::new();
        let mut knots: Vec<f64> = Vec::with_capacity(crit.len() + 2);
        knots.push(a);
        for &(c, m) in &crit {
            if self.vanishes_at(c) {
                out.push((c, m + 1));
            }
            knots.push(c);
        }
        knots.push(b);
        let value = |h: f64| {
            if out.iter().any(|&(r, _)| r == h) {
                0.0
            } else {
                self.eval(h)
            }
        };
        let mut simple = Vec::new();
        for w in knots.windows(2) {
            let (u, v) = (w[0], w[1]);
            let (fu, fv) = (value(u), value(v));
            if fu * fv < 0.0 {
                if let Ok(r) = refine_root(|h| self.eval(h), (u, v), 1e-15 * (1.0 + b.abs())) {
                    if r > a && r < b {
                        simple.push((r, 1));
                    }
                }
            }
        }
        out.extend(simple);
        out.sort_by(|x, y| x.0.total_cmp(&y.0));
        out
    }
}

/// Closed form of `I(h)` over the circles for a polynomial perturbation:
/// `I(h) = Σ_{i+j odd} −(√2)^{i+j+1}(r_{ij}T_{i+1,j} + s_{ij}T_{i,j+1})·h^{(i+j+1)/2}`.
/// Terms with `i+j` even vanish identically.
pub fn polynomial_melnikov(
    pp: &PolynomialPerturbation,
    leaf: &LeafCoordinates,
) -> Result<HPolynomial> {
    if leaf.len() + 2 != pp.n() {
        return Err(Error::DimensionMismatch {
            expected: pp.n() - 2,
            got: leaf.len(),
        });
    }
    let c = leaf.values();
    let m = pp.degree();
    let mut coeffs = vec![0.0; (m as usize + 1) / 2 + 1];
    for s in 0..=m {
        for i in 0..=s {
            let j = s - i;
            let (r, q) = (pp.r_at(i, j, c), pp.s_at(i, j, c));
            if r == 0.0 && q == 0.0 {
                continue;
            }
            if !r.is_finite() || !q.is_finite() {
                return Err(Error::NonFinite);
            }
            let tilde = -SQRT_2.powi(s as i32 + 1);
            let bracket = tilde * (r * trig_moment(i + 1, j) + q * trig_moment(i, j + 1));
            if s % 2 == 0 {
                debug_assert_eq!(bracket, 0.0);
                continue;
            }
            coeffs[(s as usize + 1) / 2] += bracket;
        }
    }
    Ok(HPolynomial::new(coeffs))
}

/// Largest possible number of zeros of the closed-form `I` on the open
/// interval for degree `m`.
pub fn zero_count_bound(m: u32) -> u32 {
    if m % 2 == 1 {
        (m - 1) / 2
    } else {
        m.saturating_sub(2) / 2
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::f64::consts::PI;

    fn leaf() -> LeafCoordinates {
        LeafCoordinates::new(vec![2.0])
    }

    fn orbit() -> OrbitParameterization {
        OrbitParameterization::circles((0.0, 2.0)).unwrap()
    }

    fn cubic_p1() -> ScalarField {
        ScalarField::new(3, |y| y[0] * (1.0 - (y[0] * y[0] + y[1] * y[1])))
    }

    fn zero() -> ScalarField {
        ScalarField::constant(3, 0.0)
    }

    #[test]
    fn integral_examples() {
        let i = melnikov_integral(
            &orbit(),
            &ScalarField::coordinate(3, 0),
            &zero(),
            &leaf(),
            0.5,
        )
        .unwrap();
        assert!((i + PI).abs() < 1e-12);
        let k = ScalarField::constant(3, 3.7);
        assert!(
            melnikov_integral(&orbit(), &zero(), &k, &leaf(), 0.9)
                .unwrap()
                .abs()
                < 1e-12
        );
        assert!(
            melnikov_integral(&orbit(), &cubic_p1(), &zero(), &leaf(), 0.5)
                .unwrap()
                .abs()
                < 1e-12
        );
        assert_eq!(
            melnikov_integral(&orbit(), &cubic_p1(), &zero(), &leaf(), 2.0),
            Err(Error::OutsideRange)
        );
    }

    #[test]
    fn unresolved_integrand_is_reported() {
        let wild = ScalarField::new(3, |y| (400.0 * y[0]).sin());
        assert_eq!(
            melnikov_integral(&orbit(), &wild, &zero(), &leaf(), 1.5),
            Err(Error::Unresolved)
        );
    }

    #[test]
    fn scan_examples() {
        let c = melnikov_scan(&orbit(), &cubic_p1(), &zero(), &leaf(), 64).unwrap();
        assert!(!c.all_zero);
        assert_eq!(c.zeros.len(), 1);
        assert!((c.zeros[0].h - 0.5).abs() < 1e-9);
        assert_eq!(c.zeros[0].kind, ZeroKind::Simple);

        assert!(
            melnikov_scan(&orbit(), &zero(), &zero(), &leaf(), 64)
                .unwrap()
                .all_zero
        );
        let one = ScalarField::constant(3, 1.0);
        assert!(
            melnikov_scan(&orbit(), &one, &zero(), &leaf(), 64)
                .unwrap()
                .all_zero
        );
        assert!(melnikov_scan(&orbit(), &one, &zero(), &leaf(), 16).is_err());
    }

    #[test]
    fn prime_examples() {
        let c = scan_function(|h| 2.0 * PI * h * (2.0 * h - 1.0), (0.0, 2.0), 32).unwrap();
        assert!((melnikov_prime(&c, 0.5).unwrap() - 2.0 * PI).abs() < 1e-8);
        let c = scan_function(|h| -2.0 * PI * h, (0.0, 2.0), 32).unwrap();
        assert!((melnikov_prime(&c, 1.3).unwrap() + 2.0 * PI).abs() < 1e-8);
        let c = scan_function(|_| 4.0, (0.0, 2.0), 32).unwrap();
        assert!(melnikov_prime(&c, 1.0).unwrap().abs() < 1e-9);
        assert_eq!(melnikov_prime(&c, 2.0), Err(Error::OutsideRange));
    }

    #[test]
    fn polynomial_examples() {
        let mut pp = PolynomialPerturbation::new(3, 1).unwrap();
        pp.set_r_const(1, 0, 1.0).unwrap();
        let p = polynomial_melnikov(&pp, &leaf()).unwrap();
        assert!((p.eval(0.7) + 2.0 * PI * 0.7).abs() < 1e-12);

        let mut pp = PolynomialPerturbation::new(3, 3).unwrap();
        pp.set_r_const(1, 0, 1.0).unwrap();
        pp.set_r_const(3, 0, -1.0).unwrap();
        pp.set_r_const(1, 2, -1.0).unwrap();
        let p = polynomial_melnikov(&pp, &leaf()).unwrap();
        assert!((p.coeffs[1] + 2.0 * PI).abs() < 1e-12);
        assert!((p.coeffs[2] - 4.0 * PI).abs() < 1e-12);
        // Oracle: quadrature of the same perturbation.
        let q = melnikov_integral(&orbit(), &pp.p1(), &pp.p2(), &leaf(), 0.3).unwrap();
        assert!((q - p.eval(0.3)).abs() < 1e-12);

        let mut even = PolynomialPerturbation::new(3, 2).unwrap();
        even.set_r_const(2, 0, 5.0).unwrap();
        assert!(polynomial_melnikov(&even, &leaf()).unwrap().is_zero());
    }

    #[test]
    fn bound_examples() {
        assert_eq!(zero_count_bound(3), 1);
        assert_eq!(zero_count_bound(4), 1);
        assert_eq!(zero_count_bound(7), 3);
        assert_eq!(zero_count_bound(1), 0);
        assert_eq!(zero_count_bound(2), 0);
    }

    #[test]
    fn roots_with_multiplicity() {
        // h (h - 0.5)^2 (h - 1.5)
        let p = HPolynomial::new(vec![0.0, -0.375, 1.75, -2.5, 1.0]);
        let r = p.roots_in(0.0, 2.0);
        assert_eq!(r.len(), 2);
        assert!((r[0].0 - 0.5).abs() < 1e-6 && r[0].1 == 2);
        assert!((r[1].0 - 1.5).abs() < 1e-12 && r[1].1 == 1);
        // Excludes the endpoint root at 0.
        let p = HPolynomial::new(vec![0.0, 1.0]);
        assert!(p.roots_in(0.0, 1.0).is_empty());
    }
}
