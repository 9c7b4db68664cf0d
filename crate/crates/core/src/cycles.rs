//! ODE integration, Poincaré sections, the displacement function and
//! limit-cycle detection.
//!
//! The integrator is the Dormand–Prince 5(4) pair with PI step-size control
//! and its free fourth-order dense output.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

#[allow(unused_imports)]
use num_traits::Float;

use crate::darboux::{DarbouxChart, LeafCoordinates};
use crate::integrable::VelocityField;
use crate::melnikov::OrbitParameterization;
use crate::numkernel::{dot, refine_root, ScalarField};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_step: f64,
    /// Largest `|t|` a single integration or return search may reach.
    pub max_time: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            rel_tol: 1e-10,
            abs_tol: 1e-12,
            max_step: f64::INFINITY,
            max_time: 1e3,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = |t: f64| (1e-14..=1e-2).contains(&t);
        if !ok(self.rel_tol) || !ok(self.abs_tol) {
            return Err(Error::InvalidArgument(
                "tolerances must lie in [1e-14, 1e-2]",
            ));
        }
        if !(self.max_step > 0.0) || !(self.max_time > 0.0) {
            return Err(Error::InvalidArgument(
                "max_step and max_time must be positive",
            ));
        }
        Ok(())
    }
}

const A21: f64 = 0.2;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

const SAFE: f64 = 0.9;
const BETA: f64 = 0.04;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;
const MAX_STEPS: usize = 2_000_000;

/// Dense output over one accepted step `[t0, t0 + h]`.
#[derive(Debug, Clone)]
pub struct DenseSegment {
    pub t0: f64,
    pub h: f64,
    cont: [Vec<f64>; 5],
}

impl DenseSegment {
    pub fn t1(&self) -> f64 {
        self.t0 + self.h
    }

    pub fn contains(&self, t: f64) -> bool {
        let (lo, hi) = if self.h >= 0.0 {
            (self.t0, self.t1())
        } else {
            (self.t1(), self.t0)
        };
        t >= lo && t <= hi
    }

    pub fn eval_into(&self, t: f64, out: &mut [f64]) {
        let s = if self.h == 0.0 {
            0.0
        } else {
            (t - self.t0) / self.h
        };
        let s1 = 1.0 - s;
        let [c0, c1, c2, c3, c4] = &self.cont;
        for (i, o) in out.iter_mut().enumerate() {
            *o = c0[i] + s * (c1[i] + s1 * (c2[i] + s * (c3[i] + s1 * c4[i])));
        }
    }

    pub fn eval(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.cont[0].len()];
        self.eval_into(t, &mut out);
        out
    }
}

/// Accepted steps of an integration together with their dense output.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub segments: Vec<DenseSegment>,
}

impl Trajectory {
    pub fn final_state(&self) -> &[f64] {
        self.states.last().map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn final_time(&self) -> f64 {
        self.times.last().copied().unwrap_or(0.0)
    }

    /// Interpolated state at `t`, or `None` outside the covered interval.
    pub fn at(&self, t: f64) -> Option<Vec<f64>> {
        if self.segments.is_empty() {
            return (self.times.first() == Some(&t)).then(|| self.states[0].clone());
        }
        let forward = self.segments[0].h >= 0.0;
        let idx = self
            .segments
            .partition_point(|s| if forward { s.t1() < t } else { s.t1() > t });
        self.segments
            .get(idx)
            .filter(|s| s.contains(t))
            .map(|s| s.eval(t))
    }
}

struct Stepper<'a> {
    field: &'a VelocityField,
    cfg: IntegratorConfig,
    t: f64,
    y: Vec<f64>,
    k1: Vec<f64>,
    h: f64,
    dir: f64,
    facold: f64,
    last_rejected: bool,
    steps: usize,
    ks: [Vec<f64>; 5],
    ytmp: Vec<f64>,
    ynew: Vec<f64>,
    k7: Vec<f64>,
}

fn eval_field(field: &VelocityField, x: &[f64], out: &mut [f64], t: f64) -> Result<()> {
    match field.eval_into(x, out) {
        Err(Error::OutsideDomain) => Err(Error::DomainExit { t }),
        other => other,
    }
}

impl<'a> Stepper<'a> {
    fn new(
        field: &'a VelocityField,
        x0: &[f64],
        t0: f64,
        dir: f64,
        cfg: IntegratorConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        let n = field.dim();
        if x0.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: x0.len(),
            });
        }
        if !field.in_domain(x0) {
            return Err(Error::DomainExit { t: t0 });
        }
        let mut k1 = vec![0.0; n];
        eval_field(field, x0, &mut k1, t0)?;
        let mut s = Self {
            field,
            cfg,
            t: t0,
            y: x0.to_vec(),
            k1,
            h: 0.0,
            dir,
            facold: 1e-4,
            last_rejected: false,
            steps: 0,
            ks: core::array::from_fn(|_| vec![0.0; n]),
            ytmp: vec![0.0; n],
            ynew: vec![0.0; n],
            k7: vec![0.0; n],
        };
        s.h = s.initial_step()?;
        Ok(s)
    }

    fn scale(&self, a: f64, b: f64) -> f64 {
        self.cfg.abs_tol + self.cfg.rel_tol * a.abs().max(b.abs())
    }

    fn initial_step(&mut self) -> Result<f64> {
        let n = self.y.len() as f64;
        let mut d0 = 0.0;
        let mut d1 = 0.0;
        for i in 0..self.y.len() {
            let sk = self.scale(self.y[i], self.y[i]);
            d0 += (self.y[i] / sk).powi(2);
            d1 += (self.k1[i] / sk).powi(2);
        }
        let (d0, d1) = ((d0 / n).sqrt(), (d1 / n).sqrt());
        if d1 == 0.0 {
            return Ok(self.cfg.max_step.min(1.0) * self.dir);
        }
        let mut h0 = if d0 < 1e-10 || d1 < 1e-10 {
            1e-6
        } else {
            0.01 * d0 / d1
        };
        h0 = h0.min(self.cfg.max_step);
        for i in 0..self.y.len() {
            self.ytmp[i] = self.y[i] + self.dir * h0 * self.k1[i];
        }
        let mut f1 = vec![0.0; self.y.len()];
        if eval_field(self.field, &self.ytmp, &mut f1, self.t).is_err() {
            return Ok(self.dir * h0 * 1e-3);
        }
        let mut d2 = 0.0;
        for i in 0..self.y.len() {
            let sk = self.scale(self.y[i], self.y[i]);
            d2 += ((f1[i] - self.k1[i]) / sk).powi(2);
        }
        let d2 = (d2 / n).sqrt() / h0;
        let m = d1.max(d2);
        let h1 = if m <= 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            (0.01 / m).powf(0.2)
        };
        Ok(self.dir * (100.0 * h0).min(h1).min(self.cfg.max_step))
    }

    /// Computes the stages for step `h`. On success `ynew`, `k7` and the
    /// stage buffers hold the trial step.
    fn stages(&mut self, h: f64) -> Result<()> {
        let n = self.y.len();
        let t = self.t;
        let y = &self.y;
        let k1 = &self.k1;
        let [k2, k3, k4, k5, k6] = &mut self.ks;
        for i in 0..n {
            self.ytmp[i] = y[i] + h * A21 * k1[i];
        }
        eval_field(self.field, &self.ytmp, k2, t)?;
        for i in 0..n {
            self.ytmp[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i]);
        }
        eval_field(self.field, &self.ytmp, k3, t)?;
        for i in 0..n {
            self.ytmp[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
        }
        eval_field(self.field, &self.ytmp, k4, t)?;
        for i in 0..n {
            self.ytmp[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
        }
        eval_field(self.field, &self.ytmp, k5, t)?;
        for i in 0..n {
            self.ytmp[i] =
                y[i] + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
        }
        eval_field(self.field, &self.ytmp, k6, t)?;
        for i in 0..n {
            self.ynew[i] =
                y[i] + h * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
        }
        eval_field(self.field, &self.ynew, &mut self.k7, t)?;
        Ok(())
    }

    fn error_norm(&self, h: f64) -> f64 {
        let n = self.y.len();
        let [_, k3, k4, k5, k6] = &self.ks;
        let mut acc = 0.0;
        for i in 0..n {
            let e = h
                * (E1 * self.k1[i]
                    + E3 * k3[i]
                    + E4 * k4[i]
                    + E5 * k5[i]
                    + E6 * k6[i]
                    + E7 * self.k7[i]);
            let sk = self.scale(self.y[i], self.ynew[i]);
            acc += (e / sk).powi(2);
        }
        (acc / n as f64).sqrt()
    }

    /// Advances one accepted step, never past `t_stop`. Returns the dense
    /// segment of the step.
    fn step(&mut self, t_stop: f64) -> Result<DenseSegment> {
        let expo1 = 0.2 - BETA * 0.75;
        loop {
            self.steps += 1;
            if self.steps > MAX_STEPS {
                return Err(Error::StepUnderflow { t: self.t });
            }
            let remaining = t_stop - self.t;
            let mut h = self.h;
            if h.abs() > self.cfg.max_step {
                h = self.cfg.max_step * self.dir;
            }
            let last = h.abs() >= remaining.abs();
            if last {
                h = remaining;
            }
            if h.abs() <= 1e-14 * self.t.abs().max(1.0) && !last {
                return Err(Error::StepUnderflow { t: self.t });
            }
            match self.stages(h) {
                Ok(()) => {}
                Err(Error::DomainExit { t }) => {
                    // Stage left the domain: shrink and retry.
                    if h.abs() <= 1e-12 * self.t.abs().max(1.0) {
                        return Err(Error::DomainExit { t });
                    }
                    self.h = h * 0.25;
                    self.last_rejected = true;
                    continue;
                }
                Err(e) => return Err(e),
            }
            let err = self.error_norm(h);
            if !err.is_finite() {
                self.h = h * 0.25;
                self.last_rejected = true;
                continue;
            }
            let fac11 = err.powf(expo1);
            if err <= 1.0 {
                let fac =
                    (fac11 / self.facold.powf(BETA) / SAFE).clamp(1.0 / FAC_MAX, 1.0 / FAC_MIN);
                let mut hnew = h / fac;
                self.facold = err.max(1e-4);
                if self.last_rejected {
                    hnew = if hnew.abs() > h.abs() { h } else { hnew };
                }
                self.last_rejected = false;

                if !self.field.in_domain(&self.ynew) {
                    if h.abs() <= 1e-12 * self.t.abs().max(1.0) {
                        return Err(Error::DomainExit { t: self.t + h });
                    }
                    self.h = h * 0.25;
                    self.last_rejected = true;
                    continue;
                }
                let n = self.y.len();
                let [_, k3, k4, k5, k6] = &self.ks;
                let mut cont = [
                    vec![0.0; n],
                    vec![0.0; n],
                    vec![0.0; n],
                    vec![0.0; n],
                    vec![0.0; n],
                ];
                for i in 0..n {
                    let ydiff = self.ynew[i] - self.y[i];
                    let bspl = h * self.k1[i] - ydiff;
                    cont[0][i] = self.y[i];
                    cont[1][i] = ydiff;
                    cont[2][i] = bspl;
                    cont[3][i] = ydiff - h * self.k7[i] - bspl;
                    cont[4][i] = h
                        * (D1 * self.k1[i]
                            + D3 * k3[i]
                            + D4 * k4[i]
                            + D5 * k5[i]
                            + D6 * k6[i]
                            + D7 * self.k7[i]);
                }
                let seg = DenseSegment {
                    t0: self.t,
                    h,
                    cont,
                };
                self.t = if last { t_stop } else { self.t + h };
                core::mem::swap(&mut self.y, &mut self.ynew);
                core::mem::swap(&mut self.k1, &mut self.k7);
                if !last || hnew.abs() > 0.0 {
                    self.h = hnew;
                }
                return Ok(seg);
            }
            self.h = h / (fac11 / SAFE).min(1.0 / FAC_MIN);
            self.last_rejected = true;
        }
    }
}

/// Integrates `x' = F(x)` from `x0` over `[0, t_end]` (`t_end` may be
/// negative).
pub fn integrate(
    field: &VelocityField,
    x0: &[f64],
    t_end: f64,
    cfg: &IntegratorConfig,
) -> Result<Trajectory> {
    cfg.validate()?;
    if !t_end.is_finite() {
        return Err(Error::NonFinite);
    }
    if t_end.abs() > cfg.max_time {
        return Err(Error::TimeBudgetExceeded);
    }
    let mut traj = Trajectory {
        times: vec![0.0],
        states: vec![x0.to_vec()],
        segments: Vec::new(),
    };
    if t_end == 0.0 {
        if x0.len() != field.dim() {
            return Err(Error::DimensionMismatch {
                expected: field.dim(),
                got: x0.len(),
            });
        }
        return Ok(traj);
    }
    let dir = if t_end > 0.0 { 1.0 } else { -1.0 };
    let mut st = Stepper::new(field, x0, 0.0, dir, *cfg)?;
    while (t_end - st.t) * dir > 0.0 {
        let seg = st.step(t_end)?;
        traj.segments.push(seg);
        traj.times.push(st.t);
        traj.states.push(st.y.clone());
    }
    Ok(traj)
}

/// A hypersurface `σ = 0` crossed in a given direction at admissible
/// points.
#[derive(Clone)]
pub struct SectionSpec {
    pub sigma: ScalarField,
    /// `+1` for `σ` increasing through zero, `−1` for decreasing.
    pub direction: i8,
    admissible: Arc<dyn Fn(&[f64]) -> bool + Send + Sync>,
}

impl fmt::Debug for SectionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SectionSpec")
            .field("direction", &self.direction)
            .finish()
    }
}

impl SectionSpec {
    pub fn new<A>(sigma: ScalarField, direction: i8, admissible: A) -> Result<Self>
    where
        A: Fn(&[f64]) -> bool + Send + Sync + 'static,
    {
        if direction != 1 && direction != -1 {
            return Err(Error::InvalidArgument("direction must be +1 or -1"));
        }
        Ok(Self {
            sigma,
            direction,
            admissible: Arc::new(admissible),
        })
    }

    /// `Φ_2 = 0` with `Φ_1 > 0`.
    pub fn chart_axis(chart: &DarbouxChart, direction: i8) -> Result<Self> {
        let comps = chart.components();
        let phi1 = comps[0].clone();
        Self::new(comps[1].clone(), direction, move |x| phi1.eval(x) > 0.0)
    }

    pub fn is_admissible(&self, x: &[f64]) -> bool {
        (self.admissible)(x)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReturnPoint {
    pub x: Vec<f64>,
    pub t: f64,
}

/// Smallest time a crossing must be away from the start to count as a
/// return rather than the departure.
const MIN_RETURN_TIME: f64 = 1e-6;

/// Integrates until the next admissible crossing of the section in its
/// direction, located to `1e-12` in time.
pub fn poincare_return(
    field: &VelocityField,
    section: &SectionSpec,
    x0: &[f64],
    cfg: &IntegratorConfig,
) -> Result<ReturnPoint> {
    poincare_return_with_path(field, section, x0, cfg).map(|(r, _)| r)
}

fn poincare_return_with_path(
    field: &VelocityField,
    section: &SectionSpec,
    x0: &[f64],
    cfg: &IntegratorConfig,
) -> Result<(ReturnPoint, Vec<DenseSegment>)> {
    let mut st = Stepper::new(field, x0, 0.0, 1.0, *cfg)?;
    let dirn = f64::from(section.direction);
    let mut s_prev = section.sigma.eval(x0);
    let mut segments = Vec::new();
    loop {
        if st.t >= cfg.max_time {
            return Err(Error::NoReturn);
        }
        let seg = match st.step(cfg.max_time) {
            Ok(s) => s,
            Err(Error::StepUnderflow { .. }) if st.t >= cfg.max_time => {
                return Err(Error::NoReturn)
            }
            Err(e) => return Err(e),
        };
        let s_new = section.sigma.eval(&st.y);
        let crossed = dirn * s_prev < 0.0 && dirn * s_new >= 0.0;
        if crossed {
            let mut buf = vec![0.0; x0.len()];
            let g = |t: f64| {
                seg.eval_into(t, &mut buf);
                section.sigma.eval(&buf)
            };
            let tc = refine_root(g, (seg.t0, seg.t1()), 1e-12)?;
            let xc = seg.eval(tc);
            if tc > MIN_RETURN_TIME && section.is_admissible(&xc) {
                let grad = section.sigma.gradient(&xc)?;
                let v = field.eval(&xc)?;
                let rate = dot(&grad, &v);
                let norm = dot(&grad, &grad).sqrt() * dot(&v, &v).sqrt();
                if !(rate.abs() > 1e-12 * norm) {
                    return Err(Error::NonTransversal);
                }
                segments.push(seg);
                return Ok((ReturnPoint { x: xc, t: tc }, segments));
            }
        }
        segments.push(seg);
        s_prev = s_new;
    }
}

/// A chart, a family of closed orbits in its leaf slices and one leaf.
#[derive(Debug, Clone)]
pub struct LeafSlice {
    pub chart: DarbouxChart,
    pub orbit: OrbitParameterization,
    pub leaf: LeafCoordinates,
}

impl LeafSlice {
    pub fn new(
        chart: DarbouxChart,
        orbit: OrbitParameterization,
        leaf: LeafCoordinates,
    ) -> Result<Self> {
        if leaf.len() + 2 != chart.n() {
            return Err(Error::DimensionMismatch {
                expected: chart.n() - 2,
                got: leaf.len(),
            });
        }
        Ok(Self { chart, orbit, leaf })
    }

    /// Ambient point of `γ_h` at angle `θ`.
    pub fn lift(&self, h: f64, theta: f64) -> Result<Vec<f64>> {
        let y = self.orbit.chart_point(h, theta, &self.leaf);
        self.chart.inverse(&y, None).or_else(|e| match e {
            Error::InvalidArgument(_) => self.chart.inverse(&y, Some(&y)),
            other => Err(other),
        })
    }

    /// `γ_h` lifted to ambient coordinates as a closed polyline.
    pub fn lifted_orbit(&self, h: f64, points: usize) -> Result<Vec<Vec<f64>>> {
        let two_pi = 2.0 * core::f64::consts::PI;
        (0..=points)
            .map(|k| self.lift(h, two_pi * k as f64 / points as f64))
            .collect()
    }
}

/// One return of the displacement map.
#[derive(Debug, Clone, PartialEq)]
pub struct Displacement {
    pub h: f64,
    pub delta: f64,
    pub start: Vec<f64>,
    pub ret: ReturnPoint,
}

fn section_for(field: &VelocityField, slice: &LeafSlice, x0: &[f64]) -> Result<SectionSpec> {
    let probe = SectionSpec::chart_axis(&slice.chart, 1)?;
    let rate = dot(&probe.sigma.gradient(x0)?, &field.eval(x0)?);
    if rate == 0.0 || !rate.is_finite() {
        return Err(Error::NonTransversal);
    }
    SectionSpec::chart_axis(&slice.chart, if rate > 0.0 { 1 } else { -1 })
}

/// `δ(h) = H(x_return) − h` for the trajectory started at the point of
/// `γ_h` on the section `Φ_2 = 0, Φ_1 > 0`.
pub fn displacement_detail(
    field: &VelocityField,
    slice: &LeafSlice,
    h: f64,
    cfg: &IntegratorConfig,
) -> Result<Displacement> {
    if !slice.orbit.contains(h) {
        return Err(Error::OutsideRange);
    }
    let x0 = slice.lift(h, 0.0)?;
    let section = section_for(field, slice, &x0)?;
    let ret = poincare_return(field, &section, &x0, cfg)?;
    let eta = slice.chart.system().hamiltonian().try_eval(&ret.x)?;
    Ok(Displacement {
        h,
        delta: eta - h,
        start: x0,
        ret,
    })
}

pub fn displacement(
    field: &VelocityField,
    slice: &LeafSlice,
    h: f64,
    cfg: &IntegratorConfig,
) -> Result<f64> {
    displacement_detail(field, slice, h, cfg).map(|d| d.delta)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LimitCycleReport {
    pub eps: f64,
    /// The orbit level the cycle is expected to bifurcate from.
    pub h_star_source: f64,
    /// Level of the cycle's section point.
    pub h_eps: f64,
    /// Closed ambient polyline, first point repeated at the end.
    pub cycle_points: Vec<Vec<f64>>,
    pub period: f64,
    /// `∫ ν·JacΦ dt` over one period: the period in the rescaled time in
    /// which the unperturbed field is Hamiltonian.
    pub normalized_period: f64,
    pub return_slope: f64,
    pub hausdorff_to_source: f64,
    /// Distance between the start and the return point of the cycle.
    pub closure_gap: f64,
    pub iterations: usize,
}

const CYCLE_SAMPLES: usize = 1000;
const SECANT_MAX_ITER: usize = 60;

fn noise_floor(h: f64, cfg: &IntegratorConfig) -> f64 {
    100.0 * (cfg.rel_tol * h.abs().max(1.0) + cfg.abs_tol)
}

/// Secant iteration on `δ(·, ε)` from `h_guess`; the report measures the
/// cycle against `γ_{h_star}`.
pub fn find_limit_cycle_from(
    field: &VelocityField,
    slice: &LeafSlice,
    h_star: f64,
    h_guess: f64,
    eps: f64,
    cfg: &IntegratorConfig,
) -> Result<LimitCycleReport> {
    let (a, b) = slice.orbit.h_range();
    let width = b - a;
    if !slice.orbit.contains(h_guess) {
        return Err(Error::OutsideRange);
    }
    let noise = noise_floor(h_guess, cfg);
    let clamp = |h: f64| h.clamp(a + 1e-9 * width, b - 1e-9 * width);

    let mut h0 = h_guess;
    let mut d0 = displacement(field, slice, h0, cfg)?;
    let off = 1e-3 * width;
    let mut h1 = if slice.orbit.contains(h0 + off) {
        h0 + off
    } else {
        h0 - off
    };
    let mut d1 = displacement(field, slice, h1, cfg)?;
    if d0.abs() <= noise && d1.abs() <= noise {
        return Err(Error::NotIsolated);
    }
    let mut iterations = 0;
    loop {
        iterations += 1;
        if iterations > SECANT_MAX_ITER {
            return Err(Error::NoConvergence);
        }
        if (d1 - d0).abs() <= noise * 1e-2 {
            // Flat secant: converged if already at the noise level.
            if d1.abs() <= noise {
                break;
            }
            return Err(Error::NotIsolated);
        }
        let mut h2 = h1 - d1 * (h1 - h0) / (d1 - d0);
        if !h2.is_finite() {
            return Err(Error::NoConvergence);
        }
        if !slice.orbit.contains(h2) {
            h2 = clamp(h2);
        }
        let step = (h2 - h1).abs();
        let d2 = displacement(field, slice, h2, cfg)?;
        h0 = h1;
        d0 = d1;
        h1 = h2;
        d1 = d2;
        if step <= 1e-11 * (1.0 + h1.abs()) || d1 == 0.0 {
            break;
        }
    }
    if !(d1.abs() <= 1e3 * noise) {
        return Err(Error::NoConvergence);
    }
    let h_eps = h1;

    let detail = displacement_detail(field, slice, h_eps, cfg)?;
    let period = detail.ret.t;
    let traj = integrate(field, &detail.start, period, cfg)?;
    let mut cycle_points = Vec::with_capacity(CYCLE_SAMPLES + 1);
    for k in 0..CYCLE_SAMPLES {
        let t = period * k as f64 / CYCLE_SAMPLES as f64;
        cycle_points.push(traj.at(t).ok_or(Error::NoConvergence)?);
    }
    cycle_points.push(detail.start.clone());
    let closure_gap = detail
        .start
        .iter()
        .zip(&detail.ret.x)
        .map(|(p, q)| (p - q) * (p - q))
        .sum::<f64>()
        .sqrt();

    // Composite Simpson for ∫ ν·JacΦ dt on the dense output.
    let m = 2 * CYCLE_SAMPLES;
    let dt = period / m as f64;
    let mut normalized_period = 0.0;
    for k in 0..=m {
        let x = traj.at(dt * k as f64).ok_or(Error::NoConvergence)?;
        let w = if k == 0 || k == m {
            1.0
        } else if k % 2 == 1 {
            4.0
        } else {
            2.0
        };
        normalized_period += w * slice.chart.nu_jac(&x)?;
    }
    normalized_period *= dt / 3.0;

    let s = (1e-4 * width).min((h_eps - a).min(b - h_eps) / 2.0);
    let eta_plus = s + displacement(field, slice, h_eps + s, cfg)?;
    let eta_minus = -s + displacement(field, slice, h_eps - s, cfg)?;
    let return_slope = (eta_plus - eta_minus) / (2.0 * s);

    let source = slice.lifted_orbit(h_star, CYCLE_SAMPLES)?;
    let hausdorff_to_source = hausdorff_distance(&cycle_points, &source);

    Ok(LimitCycleReport {
        eps,
        h_star_source: h_star,
        h_eps,
        cycle_points,
        period,
        normalized_period,
        return_slope,
        hausdorff_to_source,
        closure_gap,
        iterations,
    })
}

/// [`find_limit_cycle_from`] started at the expected level itself.
pub fn find_limit_cycle(
    field: &VelocityField,
    slice: &LeafSlice,
    h_guess: f64,
    eps: f64,
    cfg: &IntegratorConfig,
) -> Result<LimitCycleReport> {
    find_limit_cycle_from(field, slice, h_guess, h_guess, eps, cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvergenceClass {
    /// Every cycle was found and the distances strictly decrease.
    Decaying,
    /// Every cycle was found but the distances do not decrease.
    Stalled,
    /// Some cycle could not be found.
    NonBifurcating,
}

#[derive(Debug, Clone)]
pub struct ConvergenceEntry {
    pub eps: f64,
    pub outcome: core::result::Result<LimitCycleReport, Error>,
}

#[derive(Debug, Clone)]
pub struct ConvergenceReport {
    pub h_star: f64,
    pub entries: Vec<ConvergenceEntry>,
    /// `d(ε_{k+1}) / d(ε_k)` for consecutive successes.
    pub ratios: Vec<f64>,
    pub class: ConvergenceClass,
}

/// Hunts the cycle for each `ε` of a strictly decreasing list, warm
/// starting each search from the previous cycle level.
pub fn convergence_study<F>(
    family: F,
    slice: &LeafSlice,
    h_star: f64,
    eps_list: &[f64],
    cfg: &IntegratorConfig,
) -> Result<ConvergenceReport>
where
    F: Fn(f64) -> Result<VelocityField>,
{
    if eps_list.is_empty() {
        return Err(Error::InvalidArgument("eps_list is empty"));
    }
    if eps_list.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::InvalidArgument(
            "eps_list must be strictly decreasing",
        ));
    }
    let mut entries = Vec::with_capacity(eps_list.len());
    let mut guess = h_star;
    for &eps in eps_list {
        let outcome =
            family(eps).and_then(|f| find_limit_cycle_from(&f, slice, h_star, guess, eps, cfg));
        if let Ok(r) = &outcome {
            guess = r.h_eps;
        }
        entries.push(ConvergenceEntry { eps, outcome });
    }
    let distances: Vec<f64> = entries
        .iter()
        .filter_map(|e| e.outcome.as_ref().ok().map(|r| r.hausdorff_to_source))
        .collect();
    let ratios: Vec<f64> = distances.windows(2).map(|w| w[1] / w[0]).collect();
    let class = if distances.len() < entries.len() {
        ConvergenceClass::NonBifurcating
    } else if distances.windows(2).all(|w| w[1] < w[0]) {
        ConvergenceClass::Decaying
    } else {
        ConvergenceClass::Stalled
    };
    Ok(ConvergenceReport {
        h_star,
        entries,
        ratios,
        class,
    })
}

fn point_segment_distance(p: &[f64], a: &[f64], b: &[f64]) -> f64 {
    let mut ab2 = 0.0;
    let mut ap_ab = 0.0;
    for i in 0..p.len() {
        let d = b[i] - a[i];
        ab2 += d * d;
        ap_ab += (p[i] - a[i]) * d;
    }
    let t = if ab2 > 0.0 {
        (ap_ab / ab2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let mut acc = 0.0;
    for i in 0..p.len() {
        let q = a[i] + t * (b[i] - a[i]);
        acc += (p[i] - q) * (p[i] - q);
    }
    acc.sqrt()
}

fn directed(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .map(|p| {
            if b.len() == 1 {
                return point_segment_distance(p, &b[0], &b[0]);
            }
            b.windows(2)
                .map(|w| point_segment_distance(p, &w[0], &w[1]))
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max)
}

/// Symmetric Hausdorff distance between polylines, measured from the
/// vertices of each to the segments of the other.
pub fn hausdorff_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return f64::INFINITY;
    }
    directed(a, b).max(directed(b, a))
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::f64::consts::PI;

    fn rotation() -> VelocityField {
        VelocityField::new(2, |y, out| {
            out[0] = y[1];
            out[1] = -y[0];
            Ok(())
        })
    }

    #[test]
    fn rotation_returns_after_two_pi() {
        let traj = integrate(
            &rotation(),
            &[1.0, 0.0],
            2.0 * PI,
            &IntegratorConfig::default(),
        )
        .unwrap();
        let x = traj.final_state();
        assert!((x[0] - 1.0).abs() < 1e-8 && x[1].abs() < 1e-8);
        // Dense output matches the closed form mid-step.
        let mid = traj.at(1.2345).unwrap();
        assert!((mid[0] - 1.2345f64.cos()).abs() < 1e-8);
        assert!((mid[1] + 1.2345f64.sin()).abs() < 1e-8);
    }

    #[test]
    fn backward_integration() {
        let traj = integrate(&rotation(), &[1.0, 0.0], -1.0, &IntegratorConfig::default()).unwrap();
        let x = traj.final_state();
        assert!((x[0] - 1f64.cos()).abs() < 1e-9 && (x[1] - 1f64.sin()).abs() < 1e-9);
        assert!(traj.at(-0.5).is_some());
    }

    #[test]
    fn zero_field_stays_put() {
        let traj = integrate(
            &VelocityField::zero(3),
            &[0.3, -1.0, 2.0],
            10.0,
            &IntegratorConfig::default(),
        )
        .unwrap();
        assert_eq!(traj.final_state(), &[0.3, -1.0, 2.0]);
    }

    #[test]
    fn config_validation_and_budget() {
        let bad = IntegratorConfig {
            rel_tol: 1e-16,
            ..IntegratorConfig::default()
        };
        assert!(bad.validate().is_err());
        let cfg = IntegratorConfig {
            max_time: 5.0,
            ..IntegratorConfig::default()
        };
        assert_eq!(
            integrate(&rotation(), &[1.0, 0.0], 6.0, &cfg).unwrap_err(),
            Error::TimeBudgetExceeded
        );
    }

    #[test]
    fn domain_exit_is_reported() {
        let drift = VelocityField::new(1, |_, out| {
            out[0] = 1.0;
            Ok(())
        })
        .with_domain(|x| x[0] < 1.0);
        match integrate(&drift, &[0.0], 5.0, &IntegratorConfig::default()) {
            Err(Error::DomainExit { t }) => assert!(t > 0.99 && t < 1.01, "{t}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rotation_return_time() {
        let sigma = ScalarField::coordinate(2, 1);
        let sec = SectionSpec::new(sigma, -1, |x| x[0] > 0.0).unwrap();
        let r =
            poincare_return(&rotation(), &sec, &[1.0, 0.0], &IntegratorConfig::default()).unwrap();
        assert!((r.t - 2.0 * PI).abs() < 1e-8);
        assert!((r.x[0] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn no_return_when_leaving() {
        let away = VelocityField::new(2, |_, out| {
            out[0] = 1.0;
            out[1] = 1.0;
            Ok(())
        });
        let sec = SectionSpec::new(ScalarField::coordinate(2, 1), -1, |x| x[0] > 0.0).unwrap();
        let cfg = IntegratorConfig {
            max_time: 50.0,
            ..IntegratorConfig::default()
        };
        assert_eq!(
            poincare_return(&away, &sec, &[1.0, 0.0], &cfg),
            Err(Error::NoReturn)
        );
    }

    fn circle(r: f64, n: usize) -> Vec<Vec<f64>> {
        (0..=n)
            .map(|k| {
                let t = 2.0 * PI * k as f64 / n as f64;
                vec![r * t.cos(), r * t.sin()]
            })
            .collect()
    }

    #[test]
    fn hausdorff_examples() {
        let a = circle(1.0, 400);
        assert!(hausdorff_distance(&a, &a) < 1e-15);
        assert!((hausdorff_distance(&a, &circle(1.2, 400)) - 0.2).abs() < 1e-3);
        assert!((hausdorff_distance(&[vec![0.0, 0.0]], &a) - 1.0).abs() < 1e-3);
    }
}
