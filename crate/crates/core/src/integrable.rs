//! Completely integrable systems in Nambu–Poisson form.
//!
//! A system on `R^n` is described by its Casimirs `C_1..C_{n-2}`, its
//! Hamiltonian `H` and a rescaling `ν`. The vector field is
//! `X_i = ν·∂(C_1,…,C_{n-2},x_i,H)/∂(x_1,…,x_n)` and the bracket is
//! `{f,g} = ν·∂(C_1,…,C_{n-2},f,g)/∂(x_1,…,x_n)`.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::numkernel::{determinant, dot, ScalarField};
use crate::{Error, Result};

pub type DomainFn = dyn Fn(&[f64]) -> bool + Send + Sync;
type RhsFn = dyn Fn(&[f64], &mut [f64]) -> Result<()> + Send + Sync;

/// Right-hand side of an autonomous ODE, optionally restricted to a domain.
#[derive(Clone)]
pub struct VelocityField {
    dim: usize,
    rhs: Arc<RhsFn>,
    domain: Option<Arc<DomainFn>>,
}

impl fmt::Debug for VelocityField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("VelocityField")
            .field("dim", &self.dim)
            .field("restricted", &self.domain.is_some())
            .finish()
    }
}

impl VelocityField {
    pub fn new<F>(dim: usize, rhs: F) -> Self
    where
        F: Fn(&[f64], &mut [f64]) -> Result<()> + Send + Sync + 'static,
    {
        Self {
            dim,
            rhs: Arc::new(rhs),
            domain: None,
        }
    }

    /// Restricts the field; [`integrate`](crate::cycles::integrate) stops with
    /// `DomainExit` when a state fails the predicate.
    pub fn with_domain<D>(mut self, domain: D) -> Self
    where
        D: Fn(&[f64]) -> bool + Send + Sync + 'static,
    {
        self.domain = Some(Arc::new(domain));
        self
    }

    pub(crate) fn with_domain_arc(mut self, domain: Option<Arc<DomainFn>>) -> Self {
        self.domain = domain;
        self
    }

    pub fn zero(dim: usize) -> Self {
        Self::new(dim, |_, out| {
            out.fill(0.0);
            Ok(())
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn in_domain(&self, x: &[f64]) -> bool {
        self.domain.as_ref().is_none_or(|d| d(x))
    }

    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        if x.len() != self.dim || out.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.len().max(out.len()),
            });
        }
        (self.rhs)(x, out)?;
        if out.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite)
        }
    }

    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim];
        self.eval_into(x, &mut out)?;
        Ok(out)
    }

    /// Pointwise `self + eps·other` on the intersection of both domains.
    pub fn add_scaled(&self, other: &VelocityField, eps: f64) -> Result<VelocityField> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: other.dim,
            });
        }
        let (a, b) = (self.clone(), other.clone());
        let dim = self.dim;
        let field = VelocityField::new(dim, move |x, out| {
            a.eval_into(x, out)?;
            if eps != 0.0 {
                let mut tmp = vec![0.0; dim];
                b.eval_into(x, &mut tmp)?;
                for (o, t) in out.iter_mut().zip(&tmp) {
                    *o += eps * t;
                }
            }
            Ok(())
        });
        let domain: Option<Arc<DomainFn>> = match (self.domain.clone(), other.domain.clone()) {
            (Some(p), Some(q)) => Some(Arc::new(move |x: &[f64]| p(x) && q(x))),
            (p, q) => p.or(q),
        };
        Ok(field.with_domain_arc(domain))
    }
}

/// Maximal Lie-derivative magnitudes of the first integrals along a field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriftReport {
    pub casimir: f64,
    /// Present only when requested (meaningful for the unperturbed field).
    pub hamiltonian: Option<f64>,
}

#[derive(Clone)]
pub struct IntegrableSystem {
    n: usize,
    casimirs: Vec<ScalarField>,
    hamiltonian: ScalarField,
    rescale: ScalarField,
    domain: Arc<DomainFn>,
}

impl fmt::Debug for IntegrableSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("IntegrableSystem")
            .field("n", &self.n)
            .finish()
    }
}

impl IntegrableSystem {
    /// The domain defaults to all of `R^n`.
    pub fn new(
        n: usize,
        casimirs: Vec<ScalarField>,
        hamiltonian: ScalarField,
        rescale: ScalarField,
    ) -> Result<Self> {
        if n < 3 {
            return Err(Error::InvalidArgument("dimension must be at least 3"));
        }
        if casimirs.len() != n - 2 {
            return Err(Error::DimensionMismatch {
                expected: n - 2,
                got: casimirs.len(),
            });
        }
        for f in casimirs.iter().chain([&hamiltonian, &rescale]) {
            if f.arity() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: f.arity(),
                });
            }
        }
        Ok(Self {
            n,
            casimirs,
            hamiltonian,
            rescale,
            domain: Arc::new(|_| true),
        })
    }

    pub fn with_domain<D>(mut self, domain: D) -> Self
    where
        D: Fn(&[f64]) -> bool + Send + Sync + 'static,
    {
        self.domain = Arc::new(domain);
        self
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn casimirs(&self) -> &[ScalarField] {
        &self.casimirs
    }

    pub fn hamiltonian(&self) -> &ScalarField {
        &self.hamiltonian
    }

    pub fn rescale(&self) -> &ScalarField {
        &self.rescale
    }

    pub fn in_domain(&self, x: &[f64]) -> bool {
        (self.domain)(x)
    }

    pub(crate) fn domain_arc(&self) -> Arc<DomainFn> {
        self.domain.clone()
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: x.len(),
            });
        }
        if !self.in_domain(x) {
            return Err(Error::OutsideDomain);
        }
        Ok(())
    }

    /// Gradient rows of the Casimirs at `x`.
    pub fn casimir_gradients(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.casimirs.iter().map(|c| c.gradient(x)).collect()
    }

    pub fn casimir_values(&self, x: &[f64]) -> Vec<f64> {
        self.casimirs.iter().map(|c| c.eval(x)).collect()
    }

    pub fn vector_field_at(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_point(x)?;
        let n = self.n;
        let mut rows = self.casimir_gradients(x)?;
        rows.push(vec![0.0; n]);
        rows.push(self.hamiltonian.gradient(x)?);
        let nu = self.rescale.try_eval(x)?;
        let slot = n - 2;
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            rows[slot].fill(0.0);
            rows[slot][i] = 1.0;
            let v = nu * determinant(&rows);
            if !v.is_finite() {
                return Err(Error::NonFinite);
            }
            out.push(v);
        }
        Ok(out)
    }

    pub fn poisson_bracket(&self, f: &ScalarField, g: &ScalarField, x: &[f64]) -> Result<f64> {
        self.check_point(x)?;
        if f.arity() != self.n || g.arity() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: if f.arity() != self.n {
                    f.arity()
                } else {
                    g.arity()
                },
            });
        }
        let mut rows = self.casimir_gradients(x)?;
        rows.push(f.gradient(x)?);
        rows.push(g.gradient(x)?);
        let v = self.rescale.try_eval(x)? * determinant(&rows);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite)
        }
    }

    /// `X` as a [`VelocityField`] restricted to the system domain.
    pub fn vector_field(&self) -> VelocityField {
        let sys = self.clone();
        let domain = self.domain.clone();
        VelocityField::new(self.n, move |x, out| {
            let v = sys.vector_field_at(x)?;
            out.copy_from_slice(&v);
            Ok(())
        })
        .with_domain_arc(Some(domain))
    }

    /// `max |⟨∇C_i, F⟩|` over the points, and `max |⟨∇H, F⟩|` when
    /// `include_hamiltonian` is set.
    pub fn first_integral_drift(
        &self,
        field: &VelocityField,
        points: &[Vec<f64>],
        include_hamiltonian: bool,
    ) -> Result<DriftReport> {
        let mut casimir: f64 = 0.0;
        let mut ham: f64 = 0.0;
        for x in points {
            let v = field.eval(x)?;
            for c in &self.casimirs {
                casimir = casimir.max(dot(&c.gradient(x)?, &v).abs());
            }
            if include_hamiltonian {
                ham = ham.max(dot(&self.hamiltonian.gradient(x)?, &v).abs());
            }
        }
        Ok(DriftReport {
            casimir,
            hamiltonian: include_hamiltonian.then_some(ham),
        })
    }

    /// Smallest `|ν|` over the points; zero flags a realization that
    /// degenerates somewhere in the sample.
    pub fn rescale_audit(&self, points: &[Vec<f64>]) -> Result<f64> {
        let mut min = f64::INFINITY;
        for x in points {
            min = min.min(self.rescale.try_eval(x)?.abs());
        }
        Ok(min)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkernel::max_abs_diff;

    fn hyper3() -> IntegrableSystem {
        let c = ScalarField::new(3, |x| 0.5 * (x[0] * x[0] + x[2] * x[2]));
        let h = ScalarField::new(3, |x| 0.5 * (x[0] * x[0] + x[1] * x[1]));
        IntegrableSystem::new(3, vec![c], h, ScalarField::constant(3, 1.0)).unwrap()
    }

    #[test]
    fn field_examples() {
        let sys = hyper3();
        let v = sys.vector_field_at(&[0.0, 1.0, 1.0]).unwrap();
        assert!(max_abs_diff(&v, &[1.0, 0.0, 0.0]) < 1e-9);
        let v = sys.vector_field_at(&[0.5, 0.5, 0.5]).unwrap();
        assert!(max_abs_diff(&v, &[0.25, -0.25, -0.25]) < 1e-9);
        // x1 = x2 = 0 is a critical point of H.
        let v = sys.vector_field_at(&[0.0, 0.0, 0.7]).unwrap();
        assert!(v.iter().all(|c| c.abs() < 1e-12));
    }

    #[test]
    fn bracket_examples() {
        let sys = hyper3();
        let f = ScalarField::new(3, |x| x[0] * x[1] + x[2].sin());
        let g = ScalarField::new(3, |x| x[1] * x[2]);
        let x = [0.3, -0.4, 1.2];
        assert!(sys.poisson_bracket(&f, &f, &x).unwrap().abs() < 1e-12);
        let c = sys.casimirs()[0].clone();
        assert!(sys.poisson_bracket(&c, &g, &x).unwrap().abs() < 1e-10);
        let x1 = ScalarField::coordinate(3, 0);
        let b = sys
            .poisson_bracket(&x1, sys.hamiltonian(), &[0.0, 1.0, 1.0])
            .unwrap();
        assert!((b - 1.0).abs() < 1e-9);
    }

    #[test]
    fn drift_examples() {
        let sys = hyper3();
        let pts: Vec<Vec<f64>> = (0..20)
            .map(|i| {
                let t = i as f64 * 0.37;
                vec![t.sin(), t.cos() * 1.3, 0.5 + 0.1 * t]
            })
            .collect();
        let r = sys
            .first_integral_drift(&sys.vector_field(), &pts, true)
            .unwrap();
        assert!(r.casimir < 1e-10 && r.hamiltonian.unwrap() < 1e-10);

        let unit = VelocityField::new(3, |_, out| {
            out.copy_from_slice(&[1.0, 0.0, 0.0]);
            Ok(())
        });
        let r = sys
            .first_integral_drift(&unit, &[vec![0.5, 0.0, 1.0]], false)
            .unwrap();
        assert!((r.casimir - 0.5).abs() < 1e-9);
        assert!(r.hamiltonian.is_none());
    }

    #[test]
    fn domain_is_enforced() {
        let sys = hyper3().with_domain(|x| x[2] > 0.0);
        assert_eq!(
            sys.vector_field_at(&[0.0, 1.0, -1.0]),
            Err(Error::OutsideDomain)
        );
        assert!(!sys.vector_field().in_domain(&[0.0, 1.0, -1.0]));
    }

    #[test]
    fn add_scaled_examples() {
        let sys = hyper3();
        let x = sys.vector_field();
        let same = x.add_scaled(&VelocityField::zero(3), 1.0).unwrap();
        let p = [0.2, 0.9, -0.4];
        assert_eq!(same.eval(&p).unwrap(), x.eval(&p).unwrap());
        let cancel = x.add_scaled(&x, -1.0).unwrap();
        assert!(cancel.eval(&p).unwrap().iter().all(|v| v.abs() < 1e-15));
    }
}
