use std::f64::consts::PI;

use leafcycle_core::jacobi::{orbit_family, HyperellipticParams};
use leafcycle_core::melnikov::{
    melnikov_integral, melnikov_scan, polynomial_melnikov, zero_count_bound, HPolynomial, ZeroKind,
};
use leafcycle_core::perturb::PolynomialPerturbation;
use leafcycle_core::LeafCoordinates;
use proptest::prelude::*;

/// Coefficient table `(r, s)` for every monomial of total degree `1..=m`.
fn coefficients(m: u32) -> impl Strategy<Value = Vec<(f64, f64)>> {
    let count = ((m + 1) * (m + 2) / 2 - 1) as usize;
    prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64), count)
}

fn setup() -> impl Strategy<Value = (usize, Vec<f64>, Vec<f64>, u32, Vec<(f64, f64)>)> {
    (3usize..=5, 1u32..=9).prop_flat_map(|(n, m)| {
        (
            Just(n),
            prop::collection::vec(0.4..2.0f64, n - 2),
            prop::collection::vec(0.5..3.0f64, n - 2),
            Just(m),
            coefficients(m),
        )
    })
}

/// Coefficients are scaled by `radius^{-(i+j)}`, and the `r` ones also vary
/// with the first leaf value.
fn build(n: usize, m: u32, table: &[(f64, f64)], radius: f64) -> PolynomialPerturbation {
    let mut pp = PolynomialPerturbation::new(n, m).unwrap();
    let mut it = table.iter();
    for s in 1..=m {
        for i in 0..=s {
            let (a, b) = *it.next().unwrap();
            let scale = radius.powi(-(s as i32));
            pp.set_r(i, s - i, move |c: &[f64]| scale * a * (1.0 + 0.1 * c[0]))
                .unwrap();
            pp.set_s_const(i, s - i, scale * b).unwrap();
        }
    }
    pp
}

fn cubic() -> PolynomialPerturbation {
    let mut pp = PolynomialPerturbation::new(3, 3).unwrap();
    pp.set_r_const(1, 0, 1.0).unwrap();
    pp.set_r_const(3, 0, -1.0).unwrap();
    pp.set_r_const(1, 2, -1.0).unwrap();
    pp
}

fn designed() -> PolynomialPerturbation {
    let mut pp = PolynomialPerturbation::new(3, 5).unwrap();
    pp.set_r_const(1, 0, 0.525).unwrap();
    pp.set_r_const(3, 0, -5.0 / 3.0).unwrap();
    pp.set_r_const(5, 0, 1.0).unwrap();
    pp
}

fn unit_leaf() -> (HyperellipticParams, LeafCoordinates) {
    (
        HyperellipticParams::new(vec![1.0]).unwrap(),
        LeafCoordinates::new(vec![2.0]),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn closed_form_matches_quadrature((n, k, c, m, table) in setup()) {
        let p = HyperellipticParams::new(k).unwrap();
        let leaf = LeafCoordinates::new(c);
        let orbit = orbit_family(&p, &leaf).unwrap();
        let (a, b) = orbit.h_range();
        let pp = build(n, m, &table, (2.0 * b).sqrt());
        let poly = polynomial_melnikov(&pp, &leaf).unwrap();
        let (p1, p2) = (pp.p1(), pp.p2());
        for s in 1..=20 {
            let h = a + (b - a) * f64::from(s) / 21.0;
            let q = melnikov_integral(&orbit, &p1, &p2, &leaf, h).unwrap();
            prop_assert!((poly.eval(h) - q).abs() <= 1e-8 * (1.0 + q.abs()));
        }
    }

    #[test]
    fn integral_is_linear_in_the_perturbation((n, k, c, m, table) in setup(), lambda in -5.0..5.0f64) {
        prop_assume!(lambda.abs() > 1e-3);
        let p = HyperellipticParams::new(k).unwrap();
        let leaf = LeafCoordinates::new(c);
        let orbit = orbit_family(&p, &leaf).unwrap();
        let (a, b) = orbit.h_range();
        let pp = build(n, m, &table, (2.0 * b).sqrt());
        let scaled = pp.scaled(lambda);
        for s in 1..=5 {
            let h = a + (b - a) * f64::from(s) / 6.0;
            let base = melnikov_integral(&orbit, &pp.p1(), &pp.p2(), &leaf, h).unwrap();
            let got = melnikov_integral(&orbit, &scaled.p1(), &scaled.p2(), &leaf, h).unwrap();
            prop_assert!((got - lambda * base).abs() <= 1e-12 * (lambda * base).abs().max(1e-12));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn zero_count_never_exceeds_the_bound(
        (n, k, c, m, table) in (3usize..=4, 3u32..=7).prop_flat_map(|(n, m)| (
            Just(n),
            prop::collection::vec(0.4..2.0f64, n - 2),
            prop::collection::vec(0.5..3.0f64, n - 2),
            Just(m),
            coefficients(m),
        ))
    ) {
        let p = HyperellipticParams::new(k).unwrap();
        let leaf = LeafCoordinates::new(c);
        let orbit = orbit_family(&p, &leaf).unwrap();
        let pp = build(n, m, &table, (2.0 * orbit.h_range().1).sqrt());
        let curve = melnikov_scan(&orbit, &pp.p1(), &pp.p2(), &leaf, 96).unwrap();
        prop_assert!(curve.zeros.len() <= zero_count_bound(m) as usize);
        let poly = polynomial_melnikov(&pp, &leaf).unwrap();
        let (a, b) = orbit.h_range();
        let roots = poly.roots_in(a, b);
        prop_assert!(roots.len() <= zero_count_bound(m) as usize);
    }
}

#[test]
fn cubic_example_closed_form() {
    // I(h) = 2πh(2h − 1).
    let (p, leaf) = unit_leaf();
    let poly = polynomial_melnikov(&cubic(), &leaf).unwrap();
    assert_eq!(poly.degree(), Some(2));
    assert!(poly.coeffs[0].abs() < 1e-15);
    assert!((poly.coeffs[1] + 2.0 * PI).abs() < 1e-13);
    assert!((poly.coeffs[2] - 4.0 * PI).abs() < 1e-13);
    let orbit = orbit_family(&p, &leaf).unwrap();
    let pp = cubic();
    let curve = melnikov_scan(&orbit, &pp.p1(), &pp.p2(), &leaf, 128).unwrap();
    let zeros: Vec<_> = curve.simple_zeros().collect();
    assert_eq!(zeros.len(), 1);
    assert!((zeros[0].h - 0.5).abs() <= 1e-9);
    assert!((zeros[0].derivative - 2.0 * PI).abs() < 1e-5);
}

#[test]
fn designed_coefficients_place_two_simple_zeros() {
    let (p, leaf) = unit_leaf();
    let orbit = orbit_family(&p, &leaf).unwrap();
    let pp = designed();
    let curve = melnikov_scan(&orbit, &pp.p1(), &pp.p2(), &leaf, 200).unwrap();
    assert_eq!(curve.zeros.len(), 2);
    assert!(curve.zeros.iter().all(|z| z.kind == ZeroKind::Simple));
    assert!((curve.zeros[0].h - 0.3).abs() <= 1e-9);
    assert!((curve.zeros[1].h - 0.7).abs() <= 1e-9);
    assert_eq!(curve.zeros.len() as u32, zero_count_bound(5));
    let roots = polynomial_melnikov(&pp, &leaf).unwrap().roots_in(0.0, 2.0);
    assert_eq!(roots.len(), 2);
    assert!(roots.iter().all(|&(_, mult)| mult == 1));
}

#[test]
fn double_root_is_reported_once_with_multiplicity() {
    let poly = HPolynomial::new(vec![0.0, 0.25, -1.0, 1.0]);
    let roots = poly.roots_in(0.0, 1.0);
    assert_eq!(roots.len(), 1);
    assert!((roots[0].0 - 0.5).abs() < 1e-6);
    assert_eq!(roots[0].1, 2);
}

#[test]
fn identically_zero_integral_is_flagged() {
    let (p, leaf) = unit_leaf();
    let orbit = orbit_family(&p, &leaf).unwrap();
    // Only even-degree terms: every contribution integrates to zero.
    let mut pp = PolynomialPerturbation::new(3, 2).unwrap();
    pp.set_r_const(2, 0, 1.0).unwrap();
    pp.set_s_const(0, 2, -0.5).unwrap();
    let curve = melnikov_scan(&orbit, &pp.p1(), &pp.p2(), &leaf, 64).unwrap();
    assert!(curve.all_zero);
    assert!(polynomial_melnikov(&pp, &leaf).unwrap().is_zero());
}
