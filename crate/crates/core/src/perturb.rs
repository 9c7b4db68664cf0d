//! The two geometric perturbation classes.
//!
//! A *leaf-fixed* perturbation `A` keeps one leaf `Σ_c` invariant:
//! `⟨∇Φ_k, A⟩ = ν·JacΦ·(P_k∘Φ)` for `k = 1, 2` and
//! `⟨∇C_i, A⟩ = Σ_j (C_j − c_j)(R_{ij}∘Φ)`.
//! A *foliated* perturbation keeps every leaf invariant:
//! `⟨∇Φ_k, A⟩ = ν·JacΦ·(Q_k∘Φ)` and `⟨∇C_i, A⟩ = 0`.
//!
//! Both are built by solving the `n×n` linear system at each point. The
//! generalized-cross-product form is provided as an independent route.

use alloc::collections::BTreeMap;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

#[allow(unused_imports)]
use num_traits::Float;

use crate::darboux::{DarbouxChart, LeafCoordinates};
use crate::integrable::VelocityField;
use crate::numkernel::{dot, generalized_cross, linear_solve, ScalarField};
use crate::{Error, Result};

/// Data of a leaf-fixed perturbation. `p1`, `p2` and the entries of `r` are
/// functions of the chart coordinates `y`.
#[derive(Debug, Clone)]
pub struct LeafPerturbation {
    pub p1: ScalarField,
    pub p2: ScalarField,
    /// `(n−2)×(n−2)` matrix; an empty matrix means `R ≡ 0`.
    pub r: Vec<Vec<ScalarField>>,
    pub leaf: LeafCoordinates,
}

impl LeafPerturbation {
    /// `R ≡ 0`.
    pub fn without_r(p1: ScalarField, p2: ScalarField, leaf: LeafCoordinates) -> Self {
        Self {
            p1,
            p2,
            r: Vec::new(),
            leaf,
        }
    }

    fn validate(&self, n: usize) -> Result<()> {
        for f in [&self.p1, &self.p2] {
            if f.arity() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: f.arity(),
                });
            }
        }
        if self.leaf.len() != n - 2 {
            return Err(Error::DimensionMismatch {
                expected: n - 2,
                got: self.leaf.len(),
            });
        }
        if !self.r.is_empty() {
            if self.r.len() != n - 2 || self.r.iter().any(|row| row.len() != n - 2) {
                return Err(Error::InvalidArgument("R must be (n-2)x(n-2)"));
            }
            if let Some(f) = self.r.iter().flatten().find(|f| f.arity() != n) {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: f.arity(),
                });
            }
        }
        Ok(())
    }

    /// `Σ_j (C_j − c_j)·R_{ij}(y)` for each `i`, with `C_j = y_{j+2}`.
    pub fn leaf_terms(&self, y: &[f64]) -> Vec<f64> {
        let m = self.leaf.len();
        if self.r.is_empty() {
            return vec![0.0; m];
        }
        let c = self.leaf.values();
        (0..m)
            .map(|i| {
                (0..m)
                    .map(|j| (y[j + 2] - c[j]) * self.r[i][j].eval(y))
                    .sum()
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct FoliatedPerturbation {
    pub q1: ScalarField,
    pub q2: ScalarField,
}

pub type CoefficientFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// `P_1 = Σ r_{ij}(y_3..y_n) y_1^i y_2^j`, `P_2 = Σ s_{ij}(y_3..y_n) y_1^i y_2^j`
/// over `0 ≤ i+j ≤ m`.
#[derive(Clone)]
pub struct PolynomialPerturbation {
    n: usize,
    degree: u32,
    r: BTreeMap<(u32, u32), CoefficientFn>,
    s: BTreeMap<(u32, u32), CoefficientFn>,
}

impl fmt::Debug for PolynomialPerturbation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PolynomialPerturbation")
            .field("n", &self.n)
            .field("degree", &self.degree)
            .field("r", &self.r.keys().collect::<Vec<_>>())
            .field("s", &self.s.keys().collect::<Vec<_>>())
            .finish()
    }
}

impl PolynomialPerturbation {
    pub fn new(n: usize, degree: u32) -> Result<Self> {
        if degree < 1 {
            return Err(Error::InvalidArgument("degree must be at least 1"));
        }
        if n < 3 {
            return Err(Error::InvalidArgument("dimension must be at least 3"));
        }
        Ok(Self {
            n,
            degree,
            r: BTreeMap::new(),
            s: BTreeMap::new(),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn degree(&self) -> u32 {
        self.degree
    }

    fn check_index(&self, i: u32, j: u32) -> Result<()> {
        if i + j > self.degree {
            Err(Error::InvalidArgument(
                "monomial exceeds the declared degree",
            ))
        } else {
            Ok(())
        }
    }

    pub fn set_r<F>(&mut self, i: u32, j: u32, coef: F) -> Result<()>
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        self.check_index(i, j)?;
        self.r.insert((i, j), Arc::new(coef));
        Ok(())
    }

    pub fn set_s<F>(&mut self, i: u32, j: u32, coef: F) -> Result<()>
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        self.check_index(i, j)?;
        self.s.insert((i, j), Arc::new(coef));
        Ok(())
    }

    pub fn set_r_const(&mut self, i: u32, j: u32, value: f64) -> Result<()> {
        self.set_r(i, j, move |_| value)
    }

    pub fn set_s_const(&mut self, i: u32, j: u32, value: f64) -> Result<()> {
        self.set_s(i, j, move |_| value)
    }

    /// `r_{ij}(c)` (zero when absent).
    pub fn r_at(&self, i: u32, j: u32, c: &[f64]) -> f64 {
        self.r.get(&(i, j)).map_or(0.0, |f| f(c))
    }

    pub fn s_at(&self, i: u32, j: u32, c: &[f64]) -> f64 {
        self.s.get(&(i, j)).map_or(0.0, |f| f(c))
    }

    pub fn r_terms(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        self.r.keys().copied()
    }

    pub fn s_terms(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        self.s.keys().copied()
    }

    fn field(n: usize, table: BTreeMap<(u32, u32), CoefficientFn>) -> ScalarField {
        ScalarField::new(n, move |y| {
            let c = &y[2..];
            table
                .iter()
                .map(|(&(i, j), f)| f(c) * y[0].powi(i as i32) * y[1].powi(j as i32))
                .sum()
        })
    }

    pub fn p1(&self) -> ScalarField {
        Self::field(self.n, self.r.clone())
    }

    pub fn p2(&self) -> ScalarField {
        Self::field(self.n, self.s.clone())
    }

    /// Scales every coefficient by `lambda`.
    pub fn scaled(&self, lambda: f64) -> Self {
        let scale = |t: &BTreeMap<(u32, u32), CoefficientFn>| {
            t.iter()
                .map(|(k, f)| {
                    let f = f.clone();
                    let g: CoefficientFn = Arc::new(move |c: &[f64]| lambda * f(c));
                    (*k, g)
                })
                .collect()
        };
        Self {
            n: self.n,
            degree: self.degree,
            r: scale(&self.r),
            s: scale(&self.s),
        }
    }
}

/// Right-hand sides of the defining system at a source point `x`.
fn defining_rhs(
    chart: &DarbouxChart,
    x: &[f64],
    first: &ScalarField,
    second: &ScalarField,
    leaf: Option<&LeafPerturbation>,
) -> Result<(Vec<Vec<f64>>, Vec<f64>, f64)> {
    let y = chart.forward(x)?;
    let rows = chart.jacobian_matrix(x)?;
    let nj = chart.nu_jac(x)?;
    let mut rhs = Vec::with_capacity(x.len());
    rhs.push(nj * first.try_eval(&y)?);
    rhs.push(nj * second.try_eval(&y)?);
    match leaf {
        Some(spec) => rhs.extend(spec.leaf_terms(&y)),
        None => rhs.extend(core::iter::repeat_n(0.0, x.len() - 2)),
    }
    let jac = crate::numkernel::determinant(&rows);
    Ok((rows, rhs, jac))
}

fn solve_rows(rows: &[Vec<f64>], rhs: &[f64]) -> Result<Vec<f64>> {
    linear_solve(rows, rhs).map_err(|e| match e {
        Error::SingularMatrix => Error::SingularJacobian,
        other => other,
    })
}

/// `A = (1/JacΦ)·Σ_i σ_i h_i ⋆(rows without i)`, where `⋆` is the
/// generalized cross product and `σ_i = (−1)^{n−i}` (1-based `i`) unless
/// overridden.
fn theta_combination(
    rows: &[Vec<f64>],
    rhs: &[f64],
    jac: f64,
    signs: Option<&[f64]>,
) -> Result<Vec<f64>> {
    let n = rows.len();
    if jac == 0.0 || !jac.is_finite() {
        return Err(Error::SingularJacobian);
    }
    let mut out = vec![0.0; n];
    let mut others: Vec<Vec<f64>> = Vec::with_capacity(n - 1);
    for i in 0..n {
        if rhs[i] == 0.0 {
            continue;
        }
        others.clear();
        others.extend(
            rows.iter()
                .enumerate()
                .filter(|&(k, _)| k != i)
                .map(|(_, r)| r.clone()),
        );
        let theta = generalized_cross(&others)?;
        let sigma = match signs {
            Some(s) => s[i],
            None if (n - 1 - i) % 2 == 0 => 1.0,
            None => -1.0,
        };
        for (o, t) in out.iter_mut().zip(&theta) {
            *o += sigma * rhs[i] * t;
        }
    }
    for o in &mut out {
        *o /= jac;
    }
    Ok(out)
}

fn restrict(chart: &DarbouxChart, field: VelocityField) -> VelocityField {
    let domain = chart.source_domain_arc();
    field.with_domain(move |x| domain(x))
}

/// Leaf-fixed perturbation built by the linear solve.
pub fn leaf_fixed_field(chart: &DarbouxChart, spec: &LeafPerturbation) -> Result<VelocityField> {
    spec.validate(chart.n())?;
    let (chart_c, spec_c) = (chart.clone(), spec.clone());
    let field = VelocityField::new(chart.n(), move |x, out| {
        let (rows, rhs, _) = defining_rhs(&chart_c, x, &spec_c.p1, &spec_c.p2, Some(&spec_c))?;
        out.copy_from_slice(&solve_rows(&rows, &rhs)?);
        Ok(())
    });
    Ok(restrict(chart, field))
}

/// Leaf-fixed perturbation built from the generalized cross products.
pub fn leaf_fixed_field_theta(
    chart: &DarbouxChart,
    spec: &LeafPerturbation,
) -> Result<VelocityField> {
    spec.validate(chart.n())?;
    let (chart_c, spec_c) = (chart.clone(), spec.clone());
    let field = VelocityField::new(chart.n(), move |x, out| {
        let (rows, rhs, jac) = defining_rhs(&chart_c, x, &spec_c.p1, &spec_c.p2, Some(&spec_c))?;
        out.copy_from_slice(&theta_combination(&rows, &rhs, jac, None)?);
        Ok(())
    });
    Ok(restrict(chart, field))
}

fn check_foliated(chart: &DarbouxChart, spec: &FoliatedPerturbation) -> Result<()> {
    for f in [&spec.q1, &spec.q2] {
        if f.arity() != chart.n() {
            return Err(Error::DimensionMismatch {
                expected: chart.n(),
                got: f.arity(),
            });
        }
    }
    Ok(())
}

/// Foliation-preserving perturbation built by the linear solve.
pub fn foliated_field(chart: &DarbouxChart, spec: &FoliatedPerturbation) -> Result<VelocityField> {
    check_foliated(chart, spec)?;
    let (chart_c, spec_c) = (chart.clone(), spec.clone());
    let field = VelocityField::new(chart.n(), move |x, out| {
        let (rows, rhs, _) = defining_rhs(&chart_c, x, &spec_c.q1, &spec_c.q2, None)?;
        out.copy_from_slice(&solve_rows(&rows, &rhs)?);
        Ok(())
    });
    Ok(restrict(chart, field))
}

/// Foliation-preserving perturbation built from the generalized cross
/// products, with the same alternating signs as the leaf-fixed class.
pub fn foliated_field_theta(
    chart: &DarbouxChart,
    spec: &FoliatedPerturbation,
) -> Result<VelocityField> {
    foliated_theta_with_signs(chart, spec, None)
}

fn foliated_theta_with_signs(
    chart: &DarbouxChart,
    spec: &FoliatedPerturbation,
    first_two: Option<[f64; 2]>,
) -> Result<VelocityField> {
    check_foliated(chart, spec)?;
    let (chart_c, spec_c) = (chart.clone(), spec.clone());
    let n = chart.n();
    let field = VelocityField::new(n, move |x, out| {
        let (rows, rhs, jac) = defining_rhs(&chart_c, x, &spec_c.q1, &spec_c.q2, None)?;
        let signs = first_two.map(|[a, b]| {
            let mut s = vec![0.0; n];
            s[0] = a;
            s[1] = b;
            s
        });
        out.copy_from_slice(&theta_combination(&rows, &rhs, jac, signs.as_deref())?);
        Ok(())
    });
    Ok(restrict(chart, field))
}

/// Which tangency identity [`tangency_report`] measures.
#[derive(Debug, Clone, Copy)]
pub enum TangencyMode<'a> {
    /// `⟨∇C_i, A⟩ = 0`.
    Foliation,
    /// `⟨∇C_i, A⟩ = Σ_j (C_j − c_j)(R_{ij}∘Φ)`.
    Leaf(&'a LeafPerturbation),
}

/// Largest violation of the tangency identity over the source points.
pub fn tangency_report(
    chart: &DarbouxChart,
    a: &VelocityField,
    mode: TangencyMode<'_>,
    points: &[Vec<f64>],
) -> Result<f64> {
    let sys = chart.system();
    let mut worst: f64 = 0.0;
    for x in points {
        let v = a.eval(x)?;
        let grads = sys.casimir_gradients(x)?;
        let target = match mode {
            TangencyMode::Foliation => vec![0.0; grads.len()],
            TangencyMode::Leaf(spec) => spec.leaf_terms(&chart.forward(x)?),
        };
        for (g, t) in grads.iter().zip(&target) {
            worst = worst.max((dot(g, &v) - t).abs());
        }
    }
    Ok(worst)
}

/// `X + eps·A`.
pub fn perturbed_field(x: &VelocityField, a: &VelocityField, eps: f64) -> Result<VelocityField> {
    x.add_scaled(a, eps)
}
