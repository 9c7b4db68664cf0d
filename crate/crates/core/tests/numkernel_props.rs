use leafcycle_core::numkernel::{
    determinant, dot, generalized_cross, jacobian_determinant, linear_solve, norm,
    periodic_quadrature, trig_moment,
};
use leafcycle_core::ScalarField;
use proptest::prelude::*;

fn vector(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0..2.0f64, n)
}

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(vector(cols), rows)
}

fn sized_matrix() -> impl Strategy<Value = (usize, Vec<Vec<f64>>)> {
    (3usize..=6).prop_flat_map(|n| (Just(n), matrix(n, n)))
}

/// A mildly nonlinear field with a hand-written gradient.
fn wavy(n: usize, a: f64) -> ScalarField {
    ScalarField::new(n, move |x| {
        (a * x[0]).sin() * x[1] + x.iter().map(|v| v * v * v).sum::<f64>()
    })
    .with_gradient(move |x| {
        let mut g: Vec<f64> = x.iter().map(|v| 3.0 * v * v).collect();
        g[0] += a * (a * x[0]).cos() * x[1];
        g[1] += (a * x[0]).sin();
        g
    })
}

proptest! {
    #[test]
    fn analytic_gradient_matches_finite_differences(n in 3usize..=6, a in -2.0..2.0f64, seed in vector(6)) {
        let f = wavy(n, a);
        let x = &seed[..n];
        let g = f.gradient(x).unwrap();
        let fd = f.fd_gradient(x).unwrap();
        let err = g.iter().zip(&fd).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
        prop_assert!(err <= 1e-5 * (1.0 + norm(&g)), "err {err}");
    }

    #[test]
    fn cross_is_orthogonal_to_inputs((n, m) in sized_matrix()) {
        let u = &m[..n - 1];
        let v = generalized_cross(u).unwrap();
        for row in u {
            let scale = norm(&v) * norm(row);
            prop_assert!(dot(&v, row).abs() <= 1e-10 * scale.max(1e-300));
        }
        // Defining identity against the last row as a test vector.
        let d = determinant(&m);
        prop_assert!((dot(&v, &m[n - 1]) - d).abs() <= 1e-10 * (1.0 + d.abs() + norm(&v) * norm(&m[n - 1])));
    }

    #[test]
    fn jacobian_determinant_flips_sign_under_swap(n in 3usize..=5, coeffs in matrix(5, 5), x in vector(5)) {
        let fields: Vec<ScalarField> = (0..n)
            .map(|i| {
                let c = coeffs[i][..n].to_vec();
                ScalarField::new(n, move |x| {
                    c.iter().zip(x).map(|(a, v)| a * v).sum::<f64>() + (c[0] * x[i]).sin()
                })
            })
            .collect();
        let x = &x[..n];
        let refs: Vec<&ScalarField> = fields.iter().collect();
        let mut swapped = refs.clone();
        swapped.swap(0, n - 1);
        let a = jacobian_determinant(&refs, x).unwrap();
        let b = jacobian_determinant(&swapped, x).unwrap();
        prop_assert!((a + b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1e-300));
    }

    #[test]
    fn linear_solve_has_small_residual((n, mut m) in sized_matrix(), rhs in vector(6)) {
        // Diagonal dominance keeps the system well conditioned.
        for (i, row) in m.iter_mut().enumerate() {
            row[i] += 4.0 * n as f64;
        }
        let rhs = &rhs[..n];
        let x = linear_solve(&m, rhs).unwrap();
        let residual: Vec<f64> = m.iter().zip(rhs).map(|(row, b)| dot(row, &x) - b).collect();
        prop_assert!(norm(&residual) <= 1e-10 * norm(rhs).max(1e-300));
    }

    #[test]
    fn moments_match_quadrature(i in 0u32..=10, j in 0u32..=10) {
        prop_assume!(i + j <= 10);
        let q = periodic_quadrature(|t| t.cos().powi(i as i32) * t.sin().powi(j as i32), 512).unwrap();
        let t = trig_moment(i, j);
        prop_assert!((t - q).abs() <= 1e-10);
        if i % 2 == 1 || j % 2 == 1 {
            prop_assert_eq!(t, 0.0);
        }
    }
}
