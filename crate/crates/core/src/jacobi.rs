//! The hyperelliptic model family
//!
//! ```text
//! x1' =  x2 x3 ⋯ xn
//! x2' = −x1 x3 ⋯ xn
//! x_{i+2}' = −k_i² x1 x2 ⋯ (x_{i+2} omitted) ⋯ xn
//! ```
//!
//! with first integrals `H = (x1² + x2²)/2`, `C_i = (k_i² x1² + x_{i+2}²)/2`
//! and `ν = 1`. Its solution from `(0, 1, …, 1)` defines the Jacobi
//! hyperelliptic functions `sn, cn, dn_1, …, dn_{n-2}`.

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::cycles::{integrate, IntegratorConfig, LeafSlice, Trajectory};
use crate::darboux::{DarbouxChart, LeafCoordinates};
use crate::integrable::IntegrableSystem;
use crate::melnikov::OrbitParameterization;
use crate::numkernel::{refine_root, ScalarField};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct HyperellipticParams {
    n: usize,
    k: Vec<f64>,
}

impl HyperellipticParams {
    pub fn new(k: Vec<f64>) -> Result<Self> {
        if k.is_empty() {
            return Err(Error::InvalidArgument("at least one modulus is required"));
        }
        if k.iter().any(|v| *v == 0.0 || !v.is_finite()) {
            return Err(Error::InvalidArgument("moduli must be finite and nonzero"));
        }
        Ok(Self { n: k.len() + 2, k })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> &[f64] {
        &self.k
    }
}

/// Signs `ε_3, …, ε_n` of `x_3, …, x_n` selecting one chart domain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignTuple(Vec<i8>);

impl SignTuple {
    pub fn new(signs: Vec<i8>) -> Result<Self> {
        if signs.iter().any(|s| *s != 1 && *s != -1) {
            return Err(Error::InvalidArgument("signs must be +1 or -1"));
        }
        Ok(Self(signs))
    }

    pub fn all_positive(len: usize) -> Self {
        Self(vec![1; len])
    }

    pub fn values(&self) -> &[i8] {
        &self.0
    }

    pub fn product(&self) -> f64 {
        self.0.iter().map(|s| f64::from(*s)).product()
    }

    /// Every tuple of the given length, in lexicographic order with `−1`
    /// before `+1`.
    pub fn all(len: usize) -> Vec<SignTuple> {
        (0..(1usize << len))
            .map(|mask| {
                SignTuple(
                    (0..len)
                        .map(|i| {
                            if mask >> (len - 1 - i) & 1 == 1 {
                                1
                            } else {
                                -1
                            }
                        })
                        .collect(),
                )
            })
            .collect()
    }
}

pub fn build_system(p: &HyperellipticParams) -> IntegrableSystem {
    let n = p.n;
    let casimirs =
        p.k.iter()
            .enumerate()
            .map(|(i, &k)| {
                let k2 = k * k;
                ScalarField::new(n, move |x| 0.5 * (k2 * x[0] * x[0] + x[i + 2] * x[i + 2]))
                    .with_gradient(move |x| {
                        let mut g = vec![0.0; n];
                        g[0] = k2 * x[0];
                        g[i + 2] = x[i + 2];
                        g
                    })
            })
            .collect();
    let h = ScalarField::new(n, |x| 0.5 * (x[0] * x[0] + x[1] * x[1])).with_gradient(move |x| {
        let mut g = vec![0.0; n];
        g[0] = x[0];
        g[1] = x[1];
        g
    });
    IntegrableSystem::new(n, casimirs, h, ScalarField::constant(n, 1.0))
        .expect("hyperelliptic parameters were validated")
}

/// The chart `(x1, x2, C_1, …, C_{n-2})` on `{ε_i x_{i+2} > 0}` with image
/// `{k_i² y1² < 2 y_{i+2}}`.
pub fn build_chart(p: &HyperellipticParams, signs: &SignTuple) -> Result<DarbouxChart> {
    if signs.0.len() != p.n - 2 {
        return Err(Error::DimensionMismatch {
            expected: p.n - 2,
            got: signs.0.len(),
        });
    }
    let sys = build_system(p);
    let n = p.n;
    let eps: Vec<f64> = signs.0.iter().map(|s| f64::from(*s)).collect();
    let k2: Vec<f64> = p.k.iter().map(|k| k * k).collect();
    let (eps_src, k2_img, k2_inv, eps_inv) = (eps.clone(), k2.clone(), k2, eps);
    let chart = DarbouxChart::new(
        sys,
        ScalarField::coordinate(n, 0),
        ScalarField::coordinate(n, 1),
    )?
    .with_source_domain(move |x| eps_src.iter().enumerate().all(|(i, e)| e * x[i + 2] > 0.0))
    .with_image_domain(move |y| {
        k2_img
            .iter()
            .enumerate()
            .all(|(i, k2)| 2.0 * y[i + 2] - k2 * y[0] * y[0] > 0.0)
    })
    .with_inverse(move |y| {
        let mut x = Vec::with_capacity(n);
        x.push(y[0]);
        x.push(y[1]);
        for (i, (k2, e)) in k2_inv.iter().zip(&eps_inv).enumerate() {
            let rad = 2.0 * y[i + 2] - k2 * y[0] * y[0];
            if !(rad > 0.0) {
                return Err(Error::OutsideDomain);
            }
            x.push(e * rad.sqrt());
        }
        Ok(x)
    });
    Ok(chart)
}

fn check_leaf(p: &HyperellipticParams, leaf: &LeafCoordinates) -> Result<()> {
    if leaf.len() != p.n - 2 {
        return Err(Error::DimensionMismatch {
            expected: p.n - 2,
            got: leaf.len(),
        });
    }
    if leaf.values().iter().any(|c| !(*c > 0.0)) {
        return Err(Error::NonPositiveLeaf);
    }
    Ok(())
}

/// `ρ_c = min_i √(2c_i)/|k_i|`.
pub fn rho(p: &HyperellipticParams, leaf: &LeafCoordinates) -> Result<f64> {
    check_leaf(p, leaf)?;
    Ok(leaf
        .values()
        .iter()
        .zip(&p.k)
        .map(|(c, k)| (2.0 * c).sqrt() / k.abs())
        .fold(f64::INFINITY, f64::min))
}

/// Circles `y1² + y2² = 2h` for `h ∈ (0, ρ_c²/2)`.
pub fn orbit_family(
    p: &HyperellipticParams,
    leaf: &LeafCoordinates,
) -> Result<OrbitParameterization> {
    let r = rho(p, leaf)?;
    OrbitParameterization::circles((0.0, 0.5 * r * r))
}

/// Chart, orbit family and leaf bundled for the displacement machinery.
pub fn leaf_slice(
    p: &HyperellipticParams,
    leaf: &LeafCoordinates,
    signs: &SignTuple,
) -> Result<LeafSlice> {
    LeafSlice::new(build_chart(p, signs)?, orbit_family(p, leaf)?, leaf.clone())
}

/// The point of `γ_h` at angle `θ`, in chart and ambient coordinates.
pub fn orbit_point(
    p: &HyperellipticParams,
    leaf: &LeafCoordinates,
    signs: &SignTuple,
    h: f64,
    theta: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let orbit = orbit_family(p, leaf)?;
    if !orbit.contains(h) {
        return Err(Error::OutsideRange);
    }
    let y = orbit.chart_point(h, theta, leaf);
    let x = build_chart(p, signs)?.inverse(&y, None)?;
    Ok((y, x))
}

/// Integrator settings used for the special functions.
pub fn tight_config() -> IntegratorConfig {
    IntegratorConfig {
        rel_tol: 1e-13,
        abs_tol: 1e-14,
        ..IntegratorConfig::default()
    }
}

pub fn initial_condition(p: &HyperellipticParams) -> Vec<f64> {
    let mut x = vec![1.0; p.n];
    x[0] = 0.0;
    x
}

fn solve_to(p: &HyperellipticParams, t: f64, cfg: &IntegratorConfig) -> Result<Trajectory> {
    integrate(
        &build_system(p).vector_field(),
        &initial_condition(p),
        t,
        cfg,
    )
}

/// `(sn, cn, dn_1, …, dn_{n-2})(t)`.
pub fn jacobi_functions(
    p: &HyperellipticParams,
    t: f64,
    cfg: &IntegratorConfig,
) -> Result<Vec<f64>> {
    if !t.is_finite() {
        return Err(Error::NonFinite);
    }
    Ok(solve_to(p, t, cfg)?.final_state().to_vec())
}

/// One row of [`jacobi_table`].
#[derive(Debug, Clone, PartialEq)]
pub struct JacobiRow {
    pub t: f64,
    pub values: Vec<f64>,
    /// `|sn² + cn² − 1|`.
    pub identity_cn: f64,
    /// `|k_i² sn² + dn_i² − 1|` for each `i`.
    pub identity_dn: Vec<f64>,
    /// Inversion residual, `None` off the monotonic branch.
    pub inversion: Option<f64>,
}

/// Evaluates the functions on a grid with one forward and one backward
/// integration and dense output.
pub fn jacobi_table(
    p: &HyperellipticParams,
    ts: &[f64],
    cfg: &IntegratorConfig,
) -> Result<Vec<JacobiRow>> {
    if ts.iter().any(|t| !t.is_finite()) {
        return Err(Error::NonFinite);
    }
    let t_hi = ts.iter().copied().fold(0.0_f64, f64::max);
    let t_lo = ts.iter().copied().fold(0.0_f64, f64::min);
    let fwd = solve_to(p, t_hi, cfg)?;
    let bwd = solve_to(p, t_lo, cfg)?;
    let t_max = monotonic_limit(p, t_hi.max(1.0), cfg)?;
    let mut rows = Vec::with_capacity(ts.len());
    for &t in ts {
        let values = if t >= 0.0 { fwd.at(t) } else { bwd.at(t) }.ok_or(Error::NoConvergence)?;
        let sn2 = values[0] * values[0];
        let identity_cn = (sn2 + values[1] * values[1] - 1.0).abs();
        let identity_dn =
            p.k.iter()
                .enumerate()
                .map(|(i, k)| (k * k * sn2 + values[i + 2] * values[i + 2] - 1.0).abs())
                .collect();
        let inversion = if t >= 0.0 && t < t_max {
            Some((hyperelliptic_integral(p, values[0])? - t).abs())
        } else {
            None
        };
        rows.push(JacobiRow {
            t,
            values,
            identity_cn,
            identity_dn,
            inversion,
        });
    }
    Ok(rows)
}

/// First time at which `sn' = cn·dn_1⋯dn_{n-2}` vanishes, searched up to
/// `horizon`; infinite when `sn` stays increasing that long.
pub fn monotonic_limit(
    p: &HyperellipticParams,
    horizon: f64,
    cfg: &IntegratorConfig,
) -> Result<f64> {
    let traj = solve_to(p, horizon, cfg)?;
    let rate = |x: &[f64]| x[1..].iter().product::<f64>();
    for seg in &traj.segments {
        let (a, b) = (seg.eval(seg.t0), seg.eval(seg.t1()));
        let (ra, rb) = (rate(&a), rate(&b));
        if ra > 0.0 && rb <= 0.0 {
            return refine_root(|t| rate(&seg.eval(t)), (seg.t0, seg.t1()), 1e-14);
        }
    }
    Ok(f64::INFINITY)
}

/// `∫_0^s du / √((1 − u²) Π (1 − k_i² u²))` by adaptive Gauss–Legendre
/// after `u = s(1 − v²)`, which removes the square-root endpoint
/// singularity at a turning point.
pub fn hyperelliptic_integral(p: &HyperellipticParams, s: f64) -> Result<f64> {
    if s == 0.0 {
        return Ok(0.0);
    }
    let radicand = |u: f64| {
        let mut r = 1.0 - u * u;
        for k in &p.k {
            r *= 1.0 - k * k * u * u;
        }
        r
    };
    let lim = p.k.iter().fold(1.0_f64, |m, k| m.min(1.0 / k.abs()));
    if s.abs() > lim {
        return Err(Error::OutsideMonotonicBranch);
    }
    let g = |v: f64| {
        let u = s * (1.0 - v * v);
        let r = radicand(u);
        if r <= 0.0 {
            // Only reachable at v = 0 when |s| sits on the turning point.
            0.0
        } else {
            2.0 * s * v / r.sqrt()
        }
    };
    let nodes = gauss_legendre(10);
    let v = adaptive_gl(&g, 0.0, 1.0, &nodes, 1e-14, 0);
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite)
    }
}

/// `|∫_0^{sn(t)} … − t|` on the monotonic branch `0 ≤ t < t_max`.
pub fn inversion_check(p: &HyperellipticParams, t: f64, cfg: &IntegratorConfig) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(Error::OutsideMonotonicBranch);
    }
    if t == 0.0 {
        return Ok(0.0);
    }
    let t_max = monotonic_limit(p, t, cfg)?;
    if t >= t_max {
        return Err(Error::OutsideMonotonicBranch);
    }
    let sn = jacobi_functions(p, t, cfg)?[0];
    Ok((hyperelliptic_integral(p, sn)? - t).abs())
}

/// Nodes and weights on `[−1, 1]` by Newton iteration on `P_n`.
fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = (core::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        out.push((x, 2.0 / ((1.0 - x * x) * dp * dp)));
    }
    out
}

fn gl_panel<G: Fn(f64) -> f64>(g: &G, a: f64, b: f64, nodes: &[(f64, f64)]) -> f64 {
    let (m, r) = (0.5 * (a + b), 0.5 * (b - a));
    r * nodes.iter().map(|(x, w)| w * g(m + r * x)).sum::<f64>()
}

fn adaptive_gl<G: Fn(f64) -> f64>(
    g: &G,
    a: f64,
    b: f64,
    nodes: &[(f64, f64)],
    tol: f64,
    depth: u32,
) -> f64 {
    let whole = gl_panel(g, a, b, nodes);
    let m = 0.5 * (a + b);
    let (l, r) = (gl_panel(g, a, m, nodes), gl_panel(g, m, b, nodes));
    if depth >= 40 || (whole - (l + r)).abs() <= tol * (1.0 + (l + r).abs()) {
        l + r
    } else {
        adaptive_gl(g, a, m, nodes, tol, depth + 1) + adaptive_gl(g, m, b, nodes, tol, depth + 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkernel::max_abs_diff;

    fn p(k: &[f64]) -> HyperellipticParams {
        HyperellipticParams::new(k.to_vec()).unwrap()
    }

    #[test]
    fn system_examples() {
        let v = build_system(&p(&[1.0]))
            .vector_field_at(&[0.0, 1.0, 1.0])
            .unwrap();
        assert!(max_abs_diff(&v, &[1.0, 0.0, 0.0]) < 1e-12);
        let sys = build_system(&p(&[1.0, 2.0]));
        let x = [0.0, 1.0, 1.0, 1.0];
        assert!(max_abs_diff(&sys.vector_field_at(&x).unwrap(), &[1.0, 0.0, 0.0, 0.0]) < 1e-12);
        assert_eq!(sys.hamiltonian().eval(&x), 0.5);
        assert_eq!(sys.casimir_values(&x), vec![0.5, 0.5]);
    }

    #[test]
    fn chart_examples() {
        let params = p(&[1.0]);
        let chart = build_chart(&params, &SignTuple::all_positive(1)).unwrap();
        assert_eq!(
            chart.forward(&[0.0, 1.0, 1.0]).unwrap(),
            vec![0.0, 1.0, 0.5]
        );
        assert!(
            max_abs_diff(
                &chart.inverse(&[0.0, 1.0, 0.5], None).unwrap(),
                &[0.0, 1.0, 1.0]
            ) < 1e-15
        );
        assert!((chart.nu_phi(&[0.0, 1.0, 0.5], None).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(
            chart.inverse(&[1.0, 0.0, 0.4], None),
            Err(Error::OutsideDomain)
        );

        let chart4 = build_chart(&p(&[1.0, 1.0]), &SignTuple::all_positive(2)).unwrap();
        assert_eq!(
            chart4.forward(&[0.0, 1.0, 1.0, 1.0]).unwrap(),
            vec![0.0, 1.0, 0.5, 0.5]
        );

        let neg = build_chart(&params, &SignTuple::new(vec![-1]).unwrap()).unwrap();
        assert!((neg.nu_phi(&[0.0, 1.0, 0.5], None).unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(neg.forward(&[0.0, 1.0, 1.0]), Err(Error::OutsideDomain));
    }

    #[test]
    fn rho_examples() {
        assert_eq!(
            rho(&p(&[1.0]), &LeafCoordinates::new(vec![2.0])).unwrap(),
            2.0
        );
        let r = rho(&p(&[1.0, 2.0]), &LeafCoordinates::new(vec![0.5, 0.5])).unwrap();
        assert!((r - 0.5).abs() < 1e-15);
        assert_eq!(
            rho(&p(&[1.0]), &LeafCoordinates::new(vec![0.0])),
            Err(Error::NonPositiveLeaf)
        );
    }

    #[test]
    fn orbit_examples() {
        let params = p(&[1.0]);
        let leaf = LeafCoordinates::new(vec![2.0]);
        let signs = SignTuple::all_positive(1);
        let (y, x) = orbit_point(&params, &leaf, &signs, 0.5, 0.0).unwrap();
        assert!(max_abs_diff(&y, &[1.0, 0.0, 2.0]) < 1e-15);
        assert!(max_abs_diff(&x, &[1.0, 0.0, 3f64.sqrt()]) < 1e-15);
        assert_eq!(
            orbit_point(&params, &leaf, &signs, 2.0, 0.0),
            Err(Error::OutsideRange)
        );
        let o = orbit_family(&params, &leaf).unwrap();
        let (a, b) = (o.point(0.7, 0.0), o.point(0.7, 2.0 * core::f64::consts::PI));
        assert!((a[0] - b[0]).abs() < 1e-14 && (a[1] - b[1]).abs() < 1e-14);
    }

    #[test]
    fn jacobi_examples() {
        let cfg = tight_config();
        let params = p(&[1.0]);
        assert_eq!(
            jacobi_functions(&params, 0.0, &cfg).unwrap(),
            vec![0.0, 1.0, 1.0]
        );
        let v = jacobi_functions(&params, 1.0, &cfg).unwrap();
        let sech = 1.0 / 1f64.cosh();
        assert!(max_abs_diff(&v, &[1f64.tanh(), sech, sech]) < 1e-8);
    }

    #[test]
    fn inversion_examples() {
        let cfg = tight_config();
        let params = p(&[0.5]);
        assert!(inversion_check(&params, 0.5, &cfg).unwrap() <= 1e-6);
        assert!(inversion_check(&params, 1e-6, &cfg).unwrap() <= 1e-12);
        let t_max = monotonic_limit(&params, 20.0, &cfg).unwrap();
        assert!(t_max.is_finite());
        assert_eq!(
            inversion_check(&params, t_max + 0.5, &cfg),
            Err(Error::OutsideMonotonicBranch)
        );
        assert_eq!(
            monotonic_limit(&p(&[1.0]), 20.0, &cfg).unwrap(),
            f64::INFINITY
        );
    }

    #[test]
    fn gauss_legendre_is_exact_for_polynomials() {
        let nodes = gauss_legendre(10);
        let v = gl_panel(&|x: f64| x.powi(18) + x.powi(3), -1.0, 1.0, &nodes);
        assert!((v - 2.0 / 19.0).abs() < 1e-14);
    }

    #[test]
    fn sign_tuples() {
        let all = SignTuple::all(2);
        assert_eq!(all.len(), 4);
        assert_eq!(all[0].values(), &[-1, -1]);
        assert!(SignTuple::new(vec![0]).is_err());
    }
}
