//! Darboux charts `Φ = (Φ_1, Φ_2, C_1, …, C_{n-2})`.
//!
//! In such a chart the integrable field becomes
//! `Φ_*X = ν_Φ·(∂_{y2}H̃, −∂_{y1}H̃, 0, …, 0)` with `H̃ = H∘Φ⁻¹` and
//! `ν_Φ = (ν·Jac Φ)∘Φ⁻¹`.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

#[allow(unused_imports)]
use num_traits::Float;

use crate::integrable::{DomainFn, IntegrableSystem, VelocityField};
use crate::numkernel::{
    central_difference, determinant, dot, fd_step, linear_solve, max_abs_diff, ScalarField,
};
use crate::{Error, Result};

type InverseFn = dyn Fn(&[f64]) -> Result<Vec<f64>> + Send + Sync;

/// Values `c_1..c_{n-2}` of the Casimirs selecting one symplectic leaf.
#[derive(Debug, Clone, PartialEq)]
pub struct LeafCoordinates(pub Vec<f64>);

impl LeafCoordinates {
    pub fn new(c: Vec<f64>) -> Self {
        Self(c)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Smallest Gram determinant of the Casimir gradients over the points.
    /// Zero means the leaf is singular somewhere in the sample.
    pub fn regularity(&self, sys: &IntegrableSystem, points: &[Vec<f64>]) -> Result<f64> {
        let mut min = f64::INFINITY;
        for x in points {
            let g = sys.casimir_gradients(x)?;
            let gram: Vec<Vec<f64>> = g
                .iter()
                .map(|a| g.iter().map(|b| dot(a, b)).collect())
                .collect();
            min = min.min(determinant(&gram));
        }
        Ok(min)
    }
}

#[derive(Clone)]
pub struct DarbouxChart {
    sys: IntegrableSystem,
    phi1: ScalarField,
    phi2: ScalarField,
    inverse: Option<Arc<InverseFn>>,
    source_domain: Arc<DomainFn>,
    image_domain: Arc<DomainFn>,
}

impl fmt::Debug for DarbouxChart {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DarbouxChart")
            .field("n", &self.sys.n())
            .field("analytic_inverse", &self.inverse.is_some())
            .finish()
    }
}

/// Result of [`DarbouxChart::darboux_residual`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DarbouxResidual {
    /// `max ‖Φ_*X − model‖_∞` over the points.
    pub max_abs: f64,
    /// `max ‖Φ_*X − model‖_∞ / ‖model‖_∞`.
    pub max_relative: f64,
    /// `max ‖Φ_*X‖_∞`.
    pub max_field: f64,
}

/// Result of [`DarbouxChart::audit`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChartAudit {
    pub min_abs_jacobian: f64,
    /// `Some(±1)` when `ν_Φ` kept one strict sign on every sample.
    pub nu_phi_sign: Option<i8>,
    pub max_roundtrip: f64,
}

impl ChartAudit {
    pub fn passes(&self) -> bool {
        self.min_abs_jacobian > 1e-10 && self.nu_phi_sign.is_some() && self.max_roundtrip <= 1e-9
    }
}

const NEWTON_TOL: f64 = 1e-12;
const NEWTON_MAX_ITER: usize = 50;

impl DarbouxChart {
    /// Chart on the system domain with the image domain unrestricted.
    pub fn new(sys: IntegrableSystem, phi1: ScalarField, phi2: ScalarField) -> Result<Self> {
        let n = sys.n();
        for f in [&phi1, &phi2] {
            if f.arity() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: f.arity(),
                });
            }
        }
        let source_domain = sys.domain_arc();
        Ok(Self {
            sys,
            phi1,
            phi2,
            inverse: None,
            source_domain,
            image_domain: Arc::new(|_| true),
        })
    }

    /// Flow-box variant with `Φ_2 = H`.
    pub fn flow_box(sys: IntegrableSystem, phi1: ScalarField) -> Result<Self> {
        let h = sys.hamiltonian().clone();
        Self::new(sys, phi1, h)
    }

    pub fn with_inverse<F>(mut self, inverse: F) -> Self
    where
        F: Fn(&[f64]) -> Result<Vec<f64>> + Send + Sync + 'static,
    {
        self.inverse = Some(Arc::new(inverse));
        self
    }

    /// Restricts the source side `Ω′` (intersected with the system domain).
    pub fn with_source_domain<D>(mut self, domain: D) -> Self
    where
        D: Fn(&[f64]) -> bool + Send + Sync + 'static,
    {
        let sys_domain = self.sys.domain_arc();
        self.source_domain = Arc::new(move |x| sys_domain(x) && domain(x));
        self
    }

    pub fn with_image_domain<D>(mut self, domain: D) -> Self
    where
        D: Fn(&[f64]) -> bool + Send + Sync + 'static,
    {
        self.image_domain = Arc::new(domain);
        self
    }

    pub fn system(&self) -> &IntegrableSystem {
        &self.sys
    }

    pub fn n(&self) -> usize {
        self.sys.n()
    }

    pub fn has_analytic_inverse(&self) -> bool {
        self.inverse.is_some()
    }

    pub fn in_source(&self, x: &[f64]) -> bool {
        (self.source_domain)(x)
    }

    pub fn in_image(&self, y: &[f64]) -> bool {
        (self.image_domain)(y)
    }

    pub(crate) fn source_domain_arc(&self) -> Arc<DomainFn> {
        self.source_domain.clone()
    }

    /// The chart components `(Φ_1, Φ_2, C_1, …)` as scalar fields.
    pub fn components(&self) -> Vec<ScalarField> {
        let mut v = vec![self.phi1.clone(), self.phi2.clone()];
        v.extend(self.sys.casimirs().iter().cloned());
        v
    }

    fn forward_unchecked(&self, x: &[f64]) -> Vec<f64> {
        let mut y = Vec::with_capacity(x.len());
        y.push(self.phi1.eval(x));
        y.push(self.phi2.eval(x));
        y.extend(self.sys.casimirs().iter().map(|c| c.eval(x)));
        y
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_len(x)?;
        if !self.in_source(x) {
            return Err(Error::OutsideDomain);
        }
        let y = self.forward_unchecked(x);
        if y.iter().all(|v| v.is_finite()) {
            Ok(y)
        } else {
            Err(Error::NonFinite)
        }
    }

    /// Rows are the gradients of the chart components at `x`.
    pub fn jacobian_matrix(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.check_len(x)?;
        let mut rows = vec![self.phi1.gradient(x)?, self.phi2.gradient(x)?];
        rows.extend(self.sys.casimir_gradients(x)?);
        Ok(rows)
    }

    pub fn jacobian(&self, x: &[f64]) -> Result<f64> {
        let d = determinant(&self.jacobian_matrix(x)?);
        if d.is_finite() {
            Ok(d)
        } else {
            Err(Error::NonFinite)
        }
    }

    /// `Φ⁻¹(y)`: the analytic inverse when present, otherwise damped Newton
    /// started from `guess`.
    pub fn inverse(&self, y: &[f64], guess: Option<&[f64]>) -> Result<Vec<f64>> {
        self.check_len(y)?;
        if !self.in_image(y) {
            return Err(Error::OutsideDomain);
        }
        if let Some(inv) = &self.inverse {
            let x = inv(y)?;
            return if x.iter().all(|v| v.is_finite()) {
                Ok(x)
            } else {
                Err(Error::NonFinite)
            };
        }
        let guess = guess.ok_or(Error::InvalidArgument(
            "chart has no analytic inverse; a starting guess is required",
        ))?;
        self.newton_inverse(y, guess)
    }

    fn newton_inverse(&self, y: &[f64], guess: &[f64]) -> Result<Vec<f64>> {
        self.check_len(guess)?;
        let scale = 1.0 + y.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let residual = |x: &[f64]| -> Vec<f64> {
            self.forward_unchecked(x)
                .iter()
                .zip(y)
                .map(|(a, b)| a - b)
                .collect()
        };
        let inf = |r: &[f64]| r.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let mut x = guess.to_vec();
        let mut r = residual(&x);
        let mut rn = inf(&r);
        for _ in 0..NEWTON_MAX_ITER {
            if !rn.is_finite() {
                return Err(Error::NonFinite);
            }
            if rn <= NEWTON_TOL * scale {
                return Ok(x);
            }
            let jm = self.jacobian_matrix(&x)?;
            let neg: Vec<f64> = r.iter().map(|v| -v).collect();
            let dx = linear_solve(&jm, &neg).map_err(|e| match e {
                Error::SingularMatrix => Error::SingularJacobian,
                other => other,
            })?;
            let mut lambda = 1.0;
            let mut accepted = false;
            for _ in 0..30 {
                let trial: Vec<f64> = x.iter().zip(&dx).map(|(a, d)| a + lambda * d).collect();
                let rt = residual(&trial);
                let rtn = inf(&rt);
                if rtn.is_finite() && rtn < rn {
                    x = trial;
                    r = rt;
                    rn = rtn;
                    accepted = true;
                    break;
                }
                lambda *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        if rn <= NEWTON_TOL * scale {
            Ok(x)
        } else {
            Err(Error::NoConvergence)
        }
    }

    /// `ν(x)·Jac Φ(x)`, i.e. `ν_Φ∘Φ` evaluated on the source side.
    pub fn nu_jac(&self, x: &[f64]) -> Result<f64> {
        let v = self.sys.rescale().try_eval(x)? * self.jacobian(x)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite)
        }
    }

    pub fn nu_phi(&self, y: &[f64], guess: Option<&[f64]>) -> Result<f64> {
        let x = self.inverse(y, guess)?;
        self.nu_jac(&x)
    }

    /// `DΦ(x)·F(x)`.
    pub fn pushforward_at_source(&self, field: &VelocityField, x: &[f64]) -> Result<Vec<f64>> {
        let v = field.eval(x)?;
        let jm = self.jacobian_matrix(x)?;
        Ok(jm.iter().map(|row| dot(row, &v)).collect())
    }

    /// `(Φ_*F)(y) = DΦ(x)·F(x)` with `x = Φ⁻¹(y)`.
    pub fn pushforward_field(
        &self,
        field: &VelocityField,
        y: &[f64],
        guess: Option<&[f64]>,
    ) -> Result<Vec<f64>> {
        let x = self.inverse(y, guess)?;
        self.pushforward_at_source(field, &x)
    }

    /// `H̃ = H∘Φ⁻¹` at `y`.
    pub fn pushed_hamiltonian(&self, y: &[f64], guess: Option<&[f64]>) -> Result<f64> {
        let x = self.inverse(y, guess)?;
        self.sys.hamiltonian().try_eval(&x)
    }

    /// `(∂_{y1}H̃, ∂_{y2}H̃)` by the five-point stencil with the leaf
    /// coordinates frozen.
    pub fn pushed_hamiltonian_partials(
        &self,
        y: &[f64],
        guess: Option<&[f64]>,
    ) -> Result<[f64; 2]> {
        let base = guess.map(|g| g.to_vec());
        let mut out = [0.0; 2];
        for (k, slot) in out.iter_mut().enumerate() {
            let mut probe = y.to_vec();
            let mut failure = None;
            let d = central_difference(
                |t| {
                    probe[k] = t;
                    match self.pushed_hamiltonian(&probe, base.as_deref()) {
                        Ok(v) => v,
                        Err(e) => {
                            failure.get_or_insert(e);
                            f64::NAN
                        }
                    }
                },
                y[k],
                fd_step(y[k]),
            );
            if let Some(e) = failure {
                return Err(e);
            }
            if !d.is_finite() {
                return Err(Error::NonFinite);
            }
            *slot = d;
        }
        Ok(out)
    }

    /// Right side of the Darboux normal form at `y`, with `ν_Φ` multiplied by
    /// `nu_scale` (1 for the genuine model).
    pub fn darboux_model(
        &self,
        y: &[f64],
        guess: Option<&[f64]>,
        nu_scale: f64,
    ) -> Result<Vec<f64>> {
        let x = self.inverse(y, guess)?;
        let nu = nu_scale * self.nu_jac(&x)?;
        let [d1, d2] = self.pushed_hamiltonian_partials(y, Some(&x))?;
        let mut out = vec![0.0; y.len()];
        out[0] = nu * d2;
        out[1] = -nu * d1;
        Ok(out)
    }

    /// Compares `Φ_*X` with the Darboux normal form at chart points.
    pub fn darboux_residual(&self, points: &[Vec<f64>], nu_scale: f64) -> Result<DarbouxResidual> {
        let field = self.sys.vector_field();
        let mut rep = DarbouxResidual {
            max_abs: 0.0,
            max_relative: 0.0,
            max_field: 0.0,
        };
        for y in points {
            let x = self
                .inverse(y, None)
                .or_else(|_| self.inverse(y, Some(y)))?;
            let pushed = self.pushforward_at_source(&field, &x)?;
            let model = self.darboux_model(y, Some(&x), nu_scale)?;
            let diff = max_abs_diff(&pushed, &model);
            let model_norm = model.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            let field_norm = pushed.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            rep.max_abs = rep.max_abs.max(diff);
            if model_norm > 0.0 {
                rep.max_relative = rep.max_relative.max(diff / model_norm);
            }
            rep.max_field = rep.max_field.max(field_norm);
        }
        Ok(rep)
    }

    /// Samples `|Jac Φ|`, the sign of `ν_Φ` and `‖Φ(Φ⁻¹(y)) − y‖` over chart
    /// points.
    pub fn audit(&self, points: &[Vec<f64>]) -> Result<ChartAudit> {
        let mut min_jac = f64::INFINITY;
        let mut sign: Option<i8> = None;
        let mut consistent = true;
        let mut roundtrip: f64 = 0.0;
        for y in points {
            let x = self.inverse(y, Some(y))?;
            if !self.in_source(&x) {
                return Err(Error::OutsideDomain);
            }
            min_jac = min_jac.min(self.jacobian(&x)?.abs());
            let nu = self.nu_jac(&x)?;
            let s = if nu > 0.0 {
                1
            } else if nu < 0.0 {
                -1
            } else {
                0
            };
            match sign {
                _ if s == 0 => consistent = false,
                None => sign = Some(s),
                Some(prev) if prev != s => consistent = false,
                _ => {}
            }
            roundtrip = roundtrip.max(max_abs_diff(&self.forward_unchecked(&x), y));
        }
        Ok(ChartAudit {
            min_abs_jacobian: min_jac,
            nu_phi_sign: if consistent { sign } else { None },
            max_roundtrip: roundtrip,
        })
    }

    fn check_len(&self, v: &[f64]) -> Result<()> {
        if v.len() == self.n() {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected: self.n(),
                got: v.len(),
            })
        }
    }
}
