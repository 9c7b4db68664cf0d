//! Subcommand pipelines.

use std::path::PathBuf;

use anyhow::{anyhow, Context, Result};
use leafcycle_core::cycles::{
    convergence_study, integrate, ConvergenceClass, IntegratorConfig, LeafSlice,
};
use leafcycle_core::jacobi::{
    build_chart, build_system, initial_condition, jacobi_table, orbit_family, tight_config,
    HyperellipticParams, SignTuple,
};
use leafcycle_core::melnikov::{
    melnikov_integral, melnikov_scan, polynomial_melnikov, OrbitParameterization, ZeroKind,
};
use leafcycle_core::numkernel::{periodic_quadrature, trig_moment};
use leafcycle_core::perturb::{
    foliated_field, foliated_field_theta, leaf_fixed_field, leaf_fixed_field_theta,
    perturbed_field, tangency_report, TangencyMode,
};
use leafcycle_core::{DarbouxChart, IntegrableSystem, LeafCoordinates, ScalarField, VelocityField};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ConfigError, Experiment, ExperimentConfig, Mode, SCHEMA_VERSION};
use crate::output::{finite, num, Csv, OutputDir};

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out: PathBuf,
    pub seed: u64,
    pub threads: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Success,
    AllZero,
    NoCycles,
    VerifyFailed,
}

impl Status {
    pub fn exit_code(self) -> u8 {
        match self {
            Status::Success => 0,
            Status::AllZero => 2,
            Status::NoCycles => 3,
            Status::VerifyFailed => 4,
        }
    }
}

fn pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .context("building the worker pool")
}

/// Orbit family of `leaf`, restricted to the configured `h_range`.
fn orbits(
    cfg: &ExperimentConfig,
    exp: &Experiment,
    leaf: &LeafCoordinates,
) -> Result<OrbitParameterization> {
    let family = orbit_family(&exp.params, leaf)
        .map_err(|e| ConfigError::Invalid(format!("leaf {:?}: {e}", leaf.values())))?;
    let Some([a, b]) = cfg.h_range else {
        return Ok(family);
    };
    let (lo, hi) = family.h_range();
    if a < lo || b > hi {
        return Err(ConfigError::Invalid(format!(
            "h_range [{a}, {b}] leaves the orbit family ({lo}, {hi}) of leaf {:?}",
            leaf.values()
        ))
        .into());
    }
    Ok(OrbitParameterization::circles((a, b))?)
}

fn kind_name(k: ZeroKind) -> &'static str {
    match k {
        ZeroKind::Simple => "simple",
        ZeroKind::PossiblyMultiple => "possibly_multiple",
    }
}

#[derive(Serialize)]
struct ZeroOut {
    h: f64,
    kind: &'static str,
    derivative: Option<f64>,
}

#[derive(Serialize)]
struct RootOut {
    h: f64,
    multiplicity: u32,
}

#[derive(Serialize)]
struct LeafZeros {
    c: Vec<f64>,
    h_range: [f64; 2],
    all_zero: bool,
    zeros: Vec<ZeroOut>,
    /// Coefficients of the closed form in powers of `h`.
    #[serde(skip_serializing_if = "Option::is_none")]
    closed_form: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    closed_form_roots: Option<Vec<RootOut>>,
}

#[derive(Serialize)]
struct ZerosFile {
    schema_version: u32,
    mode: Mode,
    leaves: Vec<LeafZeros>,
}

pub fn run_melnikov(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Status> {
    let exp = cfg.hyperelliptic()?;
    let leaves = cfg.leaves();
    let pp = exp.polynomial();
    let work = |leaf: &LeafCoordinates| -> Result<_> {
        let orbit = orbits(cfg, &exp, leaf)?;
        let (p1, p2) = exp.p_fields(leaf);
        let curve = melnikov_scan(&orbit, &p1, &p2, leaf, cfg.samples)?;
        let closed = pp
            .as_ref()
            .map(|pp| polynomial_melnikov(pp, leaf))
            .transpose()?;
        Ok((orbit, curve, closed))
    };
    let results: Vec<_> = pool(opts.threads)?.install(|| leaves.par_iter().map(work).collect());

    let m = exp.n() - 2;
    let mut columns = vec!["leaf".to_string()];
    columns.extend((1..=m).map(|i| format!("c{i}")));
    columns.extend(["h".to_string(), "I".to_string()]);
    if pp.is_some() {
        columns.push("I_closed".into());
    }
    let mut csv = Csv::new(&columns);
    let mut file = ZerosFile {
        schema_version: SCHEMA_VERSION,
        mode: exp.mode,
        leaves: Vec::new(),
    };
    let mut any_all_zero = false;
    for (idx, (leaf, res)) in leaves.iter().zip(results).enumerate() {
        let (orbit, curve, closed) = res?;
        for &(h, v) in &curve.samples {
            let mut row = vec![idx.to_string()];
            row.extend(leaf.values().iter().map(|c| num(*c)));
            row.extend([num(h), num(v)]);
            if let Some(p) = &closed {
                row.push(num(p.eval(h)));
            }
            csv.row(&row);
        }
        let (a, b) = orbit.h_range();
        if curve.all_zero {
            any_all_zero = true;
            eprintln!(
                "Melnikov function vanishes identically on leaf {:?}: it must not be identically zero for its \
                 zeros to locate limit cycles; first-order analysis is inconclusive",
                leaf.values()
            );
        }
        file.leaves.push(LeafZeros {
            c: leaf.values().to_vec(),
            h_range: [a, b],
            all_zero: curve.all_zero,
            zeros: curve
                .zeros
                .iter()
                .map(|z| ZeroOut {
                    h: z.h,
                    kind: kind_name(z.kind),
                    derivative: finite(z.derivative),
                })
                .collect(),
            closed_form: closed.as_ref().map(|p| p.coeffs.clone()),
            closed_form_roots: closed.as_ref().map(|p| {
                p.roots_in(a, b)
                    .into_iter()
                    .map(|(h, multiplicity)| RootOut { h, multiplicity })
                    .collect()
            }),
        });
    }
    let out = OutputDir::create(&opts.out)?;
    out.write_csv("melnikov.csv", csv)?;
    out.write_json("zeros.json", &file)?;
    Ok(if any_all_zero {
        Status::AllZero
    } else {
        Status::Success
    })
}

fn perturbation_field(
    exp: &Experiment,
    chart: &DarbouxChart,
    leaf: &LeafCoordinates,
) -> Result<VelocityField> {
    Ok(match exp.mode {
        Mode::LeafFixed => leaf_fixed_field(chart, &exp.leaf_perturbation(leaf))?,
        Mode::Foliated => foliated_field(chart, &exp.foliated_perturbation(leaf))?,
    })
}

#[derive(Serialize)]
struct HuntEntry {
    eps: f64,
    status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    h_eps: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    period: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    normalized_period: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    return_slope: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    hausdorff_to_source: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    closure_gap: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    iterations: Option<usize>,
}

#[derive(Serialize)]
struct HuntCycle {
    h_star: f64,
    class: &'static str,
    ratios: Vec<Option<f64>>,
    entries: Vec<HuntEntry>,
}

#[derive(Serialize)]
struct HuntFile {
    schema_version: u32,
    mode: Mode,
    leaf: Vec<f64>,
    cycles: Vec<HuntCycle>,
}

pub fn run_hunt(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Status> {
    let exp = cfg.hyperelliptic()?;
    if cfg.leaf_sweep.is_some() {
        return Err(ConfigError::Invalid("leaf_sweep applies to `melnikov` only".into()).into());
    }
    let eps_list = cfg.checked_eps_list()?.to_vec();
    let integ = cfg.integrator()?;
    let leaf = LeafCoordinates::new(cfg.leaf.clone());
    let orbit = orbits(cfg, &exp, &leaf)?;
    let chart = build_chart(&exp.params, &exp.signs)?;
    let h_stars = match &cfg.h_star {
        Some(list) => {
            if let Some(h) = list.iter().find(|h| !orbit.contains(**h)) {
                return Err(ConfigError::Invalid(format!(
                    "h_star {h} is outside the orbit family"
                ))
                .into());
            }
            list.clone()
        }
        None => {
            let (p1, p2) = exp.p_fields(&leaf);
            let curve = melnikov_scan(&orbit, &p1, &p2, &leaf, cfg.samples)?;
            if curve.all_zero {
                eprintln!(
                    "Melnikov function vanishes identically: no first-order cycle prediction"
                );
            }
            curve.simple_zeros().map(|z| z.h).collect()
        }
    };
    let slice = LeafSlice::new(chart.clone(), orbit, leaf.clone())?;
    let a = perturbation_field(&exp, &chart, &leaf)?;
    let base = chart.system().vector_field();
    let family = |eps: f64| perturbed_field(&base, &a, eps);
    let studies: Vec<_> = pool(opts.threads)?.install(|| {
        h_stars
            .par_iter()
            .map(|&h| convergence_study(family, &slice, h, &eps_list, &integ))
            .collect()
    });

    let n = exp.n();
    let mut csv = Csv::new(
        &[
            "h_star",
            "eps",
            "status",
            "h_eps",
            "hausdorff",
            "return_slope",
            "period",
        ]
        .map(String::from),
    );
    let mut cols = vec!["h_star".to_string(), "eps".into(), "index".into()];
    cols.extend((1..=n).map(|i| format!("x{i}")));
    let mut cycles_csv = Csv::new(&cols);
    let mut file = HuntFile {
        schema_version: SCHEMA_VERSION,
        mode: exp.mode,
        leaf: cfg.leaf.clone(),
        cycles: Vec::new(),
    };
    let mut successes = 0;
    for (h_star, study) in h_stars.iter().zip(studies) {
        let study = study?;
        let mut entries = Vec::new();
        for e in &study.entries {
            match &e.outcome {
                Ok(r) => {
                    successes += 1;
                    csv.row(&[
                        num(*h_star),
                        num(e.eps),
                        "ok".into(),
                        num(r.h_eps),
                        num(r.hausdorff_to_source),
                        num(r.return_slope),
                        num(r.period),
                    ]);
                    for (i, x) in r.cycle_points.iter().enumerate() {
                        let mut row = vec![num(*h_star), num(e.eps), i.to_string()];
                        row.extend(x.iter().map(|v| num(*v)));
                        cycles_csv.row(&row);
                    }
                    entries.push(HuntEntry {
                        eps: e.eps,
                        status: "ok".into(),
                        h_eps: finite(r.h_eps),
                        period: finite(r.period),
                        normalized_period: finite(r.normalized_period),
                        return_slope: finite(r.return_slope),
                        hausdorff_to_source: finite(r.hausdorff_to_source),
                        closure_gap: finite(r.closure_gap),
                        iterations: Some(r.iterations),
                    });
                }
                Err(err) => {
                    let status = format!("{err:?}");
                    csv.row(&[
                        num(*h_star),
                        num(e.eps),
                        status.clone(),
                        String::new(),
                        String::new(),
                        String::new(),
                        String::new(),
                    ]);
                    entries.push(HuntEntry {
                        eps: e.eps,
                        status,
                        h_eps: None,
                        period: None,
                        normalized_period: None,
                        return_slope: None,
                        hausdorff_to_source: None,
                        closure_gap: None,
                        iterations: None,
                    });
                }
            }
        }
        file.cycles.push(HuntCycle {
            h_star: *h_star,
            class: match study.class {
                ConvergenceClass::Decaying => "decaying",
                ConvergenceClass::Stalled => "stalled",
                ConvergenceClass::NonBifurcating => "non_bifurcating",
            },
            ratios: study.ratios.iter().map(|r| finite(*r)).collect(),
            entries,
        });
    }
    let out = OutputDir::create(&opts.out)?;
    out.write_csv("hunt.csv", csv)?;
    out.write_csv("cycles.csv", cycles_csv)?;
    out.write_json("hunt.json", &file)?;
    Ok(if successes > 0 {
        Status::Success
    } else {
        Status::NoCycles
    })
}

pub fn run_jacobi(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Status> {
    let exp = cfg.hyperelliptic()?;
    let jc = &cfg.jacobi;
    if jc.steps == 0 || !(jc.t_end > 0.0) || !jc.t_end.is_finite() {
        return Err(ConfigError::Invalid(
            "jacobi needs steps >= 1 and a positive finite t_end".into(),
        )
        .into());
    }
    let ts: Vec<f64> = (0..=jc.steps)
        .map(|i| jc.t_end * i as f64 / jc.steps as f64)
        .collect();
    let rows = jacobi_table(&exp.params, &ts, &tight_config())?;
    let m = exp.n() - 2;
    let mut cols: Vec<String> = ["t", "sn", "cn"].map(String::from).to_vec();
    cols.extend((1..=m).map(|i| format!("dn{i}")));
    cols.push("identity_cn".into());
    cols.extend((1..=m).map(|i| format!("identity_dn{i}")));
    cols.push("inversion".into());
    let mut csv = Csv::new(&cols);
    for r in &rows {
        let mut row = vec![num(r.t)];
        row.extend(r.values.iter().map(|v| num(*v)));
        row.push(num(r.identity_cn));
        row.extend(r.identity_dn.iter().map(|v| num(*v)));
        row.push(r.inversion.map(num).unwrap_or_default());
        csv.row(&row);
    }
    OutputDir::create(&opts.out)?.write_csv("jacobi.csv", csv)?;
    Ok(Status::Success)
}

#[derive(Debug, Clone, Serialize)]
pub struct Group {
    pub name: &'static str,
    pub pass: bool,
    /// Largest measured residual; `None` when the group could not run.
    pub residual: Option<f64>,
    pub tolerance: f64,
    pub detail: String,
}

impl Group {
    fn measured(name: &'static str, residual: f64, tolerance: f64, detail: String) -> Self {
        Self {
            name,
            pass: residual <= tolerance,
            residual: finite(residual),
            tolerance,
            detail,
        }
    }

    fn from_result(name: &'static str, tolerance: f64, r: Result<(f64, String)>) -> Self {
        match r {
            Ok((res, detail)) => Self::measured(name, res, tolerance, detail),
            Err(e) => Self {
                name,
                pass: false,
                residual: None,
                tolerance,
                detail: format!("error: {e:#}"),
            },
        }
    }
}

#[derive(Serialize)]
struct VerifyFile {
    schema_version: u32,
    seed: u64,
    pass: bool,
    groups: Vec<Group>,
}

fn hyperelliptic_rhs(k: &[f64], x: &[f64]) -> Vec<f64> {
    let all_but = |skip: &[usize]| -> f64 {
        x.iter()
            .enumerate()
            .filter(|(i, _)| !skip.contains(i))
            .map(|(_, v)| v)
            .product()
    };
    let mut out = vec![all_but(&[0]), -all_but(&[1])];
    out.extend(
        k.iter()
            .enumerate()
            .map(|(i, ki)| -ki * ki * all_but(&[i + 2])),
    );
    out
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn source_points(rng: &mut ChaCha8Rng, signs: &[i8], count: usize) -> Vec<Vec<f64>> {
    (0..count)
        .map(|_| {
            let mut x = vec![rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5)];
            x.extend(
                signs
                    .iter()
                    .map(|s| f64::from(*s) * rng.random_range(0.2..1.5)),
            );
            x
        })
        .collect()
}

fn realization_group(
    sys: &IntegrableSystem,
    points: &[Vec<f64>],
    reference: &dyn Fn(&[f64]) -> Vec<f64>,
) -> Result<(f64, String)> {
    let mut worst: f64 = 0.0;
    for x in points {
        let got = sys.vector_field_at(x)?;
        let want = reference(x);
        worst = worst.max(max_diff(&got, &want) / max_abs(&want).max(f64::MIN_POSITIVE));
    }
    Ok((
        worst,
        format!("{} points, relative deviation", points.len()),
    ))
}

fn bracket_group(sys: &IntegrableSystem, points: &[Vec<f64>]) -> Result<(f64, String)> {
    let n = sys.n();
    let mut worst: f64 = 0.0;
    for x in points {
        let v = sys.vector_field_at(x)?;
        for (i, vi) in v.iter().enumerate() {
            let b = sys.poisson_bracket(&ScalarField::coordinate(n, i), sys.hamiltonian(), x)?;
            worst = worst.max((b - vi).abs() / (1.0 + vi.abs()));
        }
    }
    Ok((worst, "{x_i, H} against component i".into()))
}

fn first_integral_group(sys: &IntegrableSystem, points: &[Vec<f64>]) -> Result<(f64, String)> {
    let d = sys.first_integral_drift(&sys.vector_field(), points, true)?;
    let h = d.hamiltonian.unwrap_or(0.0);
    Ok((
        d.casimir.max(h),
        format!("casimirs {:.3e}, hamiltonian {h:.3e}", d.casimir),
    ))
}

/// Every group for the hyperelliptic system family.
fn hyperelliptic_groups<'a>(
    cfg: &'a ExperimentConfig,
    exp: &'a Experiment,
    seed: u64,
) -> Result<Vec<Box<dyn Fn() -> Group + Send + Sync + 'a>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pts = cfg.verify.points.max(1);
    let mut systems = vec![exp.params.clone()];
    for &n in &cfg.verify.n_values {
        if n < 3 {
            return Err(ConfigError::Invalid("verify.n_values entries must be >= 3".into()).into());
        }
        for _ in 0..cfg.verify.k_tuples {
            let k: Vec<f64> = (0..n - 2)
                .map(|_| {
                    let m = rng.random_range(0.3..2.0);
                    if rng.random_bool(0.5) {
                        m
                    } else {
                        -m
                    }
                })
                .collect();
            systems.push(HyperellipticParams::new(k)?);
        }
    }
    // Pre-drawn samples keep every group independent of scheduling.
    let sampled: Vec<(HyperellipticParams, Vec<Vec<f64>>)> = systems
        .into_iter()
        .map(|p| {
            let n = p.n();
            let x: Vec<Vec<f64>> = (0..pts)
                .map(|_| (0..n).map(|_| rng.random_range(-2.0..2.0)).collect())
                .collect();
            (p, x)
        })
        .collect();
    let chart_samples: Vec<(HyperellipticParams, SignTuple, Vec<Vec<f64>>)> = sampled
        .iter()
        .flat_map(|(p, _)| {
            let m = p.n() - 2;
            let tuples = if m <= 3 {
                SignTuple::all(m)
            } else {
                vec![SignTuple::all_positive(m)]
            };
            tuples
                .into_iter()
                .map(|s| (p.clone(), s))
                .collect::<Vec<_>>()
        })
        .map(|(p, s)| {
            let x = source_points(&mut rng, s.values(), pts);
            (p, s, x)
        })
        .collect();
    let own_points = match &cfg.verify.sample_points {
        Some(p) => p.clone(),
        None => source_points(&mut rng, exp.signs.values(), pts),
    };
    let h_fracs: Vec<f64> = (1..=20).map(|i| 0.9 * f64::from(i) / 20.0).collect();
    let integ = cfg.integrator()?;

    let mut groups: Vec<Box<dyn Fn() -> Group + Send + Sync + 'a>> = Vec::new();
    let s1 = sampled.clone();
    groups.push(Box::new(move || {
        let r = (|| {
            let mut worst: f64 = 0.0;
            for (p, x) in &s1 {
                let sys = build_system(p);
                let k = p.k().to_vec();
                let (w, _) = realization_group(&sys, x, &|x| hyperelliptic_rhs(&k, x))?;
                worst = worst.max(w);
            }
            Ok((
                worst,
                format!(
                    "{} systems, relative deviation from the closed-form right-hand side",
                    s1.len()
                ),
            ))
        })();
        Group::from_result("nambu_realization", 1e-10, r)
    }));
    let s2 = sampled.clone();
    groups.push(Box::new(move || {
        let r = (|| {
            let mut worst: f64 = 0.0;
            let mut drift: f64 = 0.0;
            for (p, x) in &s2 {
                let sys = build_system(p);
                worst = worst.max(bracket_group(&sys, x)?.0);
                drift = drift.max(first_integral_group(&sys, x)?.0);
            }
            Ok((
                worst.max(drift),
                format!("bracket {worst:.3e}, first integrals {drift:.3e}"),
            ))
        })();
        Group::from_result("bracket_identities", 1e-10, r)
    }));
    let cs = chart_samples.clone();
    groups.push(Box::new(move || {
        let r = (|| {
            let mut closed: f64 = 0.0;
            let mut model: f64 = 0.0;
            for (p, s, xs) in &cs {
                let chart = build_chart(p, s)?;
                let field = chart.system().vector_field();
                let sign: f64 = s.product();
                let mut ys = Vec::with_capacity(xs.len());
                for x in xs {
                    let y = chart.forward(x)?;
                    let got = chart.pushforward_at_source(&field, x)?;
                    let prod: f64 = p
                        .k()
                        .iter()
                        .enumerate()
                        .map(|(i, k)| 2.0 * y[i + 2] - k * k * y[0] * y[0])
                        .product();
                    let nu = sign * prod.sqrt();
                    let mut want = vec![0.0; y.len()];
                    want[0] = nu * y[1];
                    want[1] = -nu * y[0];
                    closed = closed.max(max_diff(&got, &want));
                    ys.push(y);
                }
                let res = chart.darboux_residual(&ys, 1.0)?;
                model = model.max(res.max_abs / (1.0 + res.max_field));
            }
            Ok((
                closed.max(model),
                format!(
                    "{} charts, closed form {closed:.3e}, generic normal form {model:.3e}",
                    cs.len()
                ),
            ))
        })();
        Group::from_result("darboux_commutation", 1e-7, r)
    }));
    let own = own_points.clone();
    groups.push(Box::new(move || {
        let r = (|| {
            let chart = build_chart(&exp.params, &exp.signs)?;
            let mut ys = Vec::with_capacity(own.len());
            for (i, x) in own.iter().enumerate() {
                let y = chart.forward(x).map_err(|e| {
                    anyhow!("sample point {i} is not in the chart domain of the sign tuple: {e}")
                })?;
                ys.push(y);
            }
            let audit = chart.audit(&ys)?;
            let detail = format!(
                "min |Jac| {:.3e}, nu_phi sign {:?}, round trip {:.3e}",
                audit.min_abs_jacobian, audit.nu_phi_sign, audit.max_roundtrip
            );
            if audit.passes() {
                Ok((audit.max_roundtrip, detail))
            } else {
                Err(anyhow!("audit failed: {detail}"))
            }
        })();
        Group::from_result("chart_audit", 1e-9, r)
    }));
    let own = own_points.clone();
    groups.push(Box::new(move || {
        let r = (|| {
            let chart = build_chart(&exp.params, &exp.signs)?;
            let leaf = LeafCoordinates::new(cfg.leaf.clone());
            let fol = exp.foliated_perturbation(&leaf);
            let spec = exp.leaf_perturbation(&leaf);
            let f_solve = foliated_field(&chart, &fol)?;
            let f_theta = foliated_field_theta(&chart, &fol)?;
            let l_solve = leaf_fixed_field(&chart, &spec)?;
            let l_theta = leaf_fixed_field_theta(&chart, &spec)?;
            let t_fol = tangency_report(&chart, &f_solve, TangencyMode::Foliation, &own)?;
            let t_leaf = tangency_report(&chart, &l_solve, TangencyMode::Leaf(&spec), &own)?;
            let mut agree: f64 = 0.0;
            for x in &own {
                for (a, b) in [(&f_solve, &f_theta), (&l_solve, &l_theta)] {
                    let (u, v) = (a.eval(x)?, b.eval(x)?);
                    agree = agree.max(max_diff(&u, &v) / (1.0 + max_abs(&u)));
                }
            }
            // Scale each check to its own tolerance.
            let worst = (t_fol / 1e-10).max(t_leaf / 1e-9).max(agree / 1e-9);
            Ok((
                worst,
                format!("tangency foliated {t_fol:.3e} (<= 1e-10), leaf {t_leaf:.3e} (<= 1e-9), solver vs closed formula {agree:.3e} (<= 1e-9)"),
            ))
        })();
        Group::from_result("perturbation_identities", 1.0, r)
    }));
    groups.push(Box::new(|| {
        let r = (|| {
            let mut worst: f64 = 0.0;
            for s in 0..=10u32 {
                for i in 0..=s {
                    let j = s - i;
                    let q = periodic_quadrature(
                        |t| t.cos().powi(i as i32) * t.sin().powi(j as i32),
                        512,
                    )?;
                    worst = worst.max((q - trig_moment(i, j)).abs());
                }
            }
            Ok((worst, "i + j <= 10".into()))
        })();
        Group::from_result("trig_moments", 1e-10, r)
    }));
    if let Some(pp) = exp.polynomial() {
        let hf = h_fracs.clone();
        groups.push(Box::new(move || {
            let r = (|| {
                let leaf = LeafCoordinates::new(cfg.leaf.clone());
                let orbit = orbit_family(&exp.params, &leaf)?;
                let poly = polynomial_melnikov(&pp, &leaf)?;
                let (p1, p2) = (pp.p1(), pp.p2());
                let hi = orbit.h_range().1;
                let mut worst: f64 = 0.0;
                for f in &hf {
                    let h = f * hi;
                    let q = melnikov_integral(&orbit, &p1, &p2, &leaf, h)?;
                    worst = worst.max((poly.eval(h) - q).abs() / (1.0 + q.abs()));
                }
                Ok((worst, format!("{} levels, mixed deviation", hf.len())))
            })();
            Group::from_result("melnikov_closed_form", 1e-8, r)
        }));
    }
    let s3 = sampled.clone();
    groups.push(Box::new(move || {
        let r = (|| {
            let mut worst: f64 = 0.0;
            for (p, _) in &s3 {
                let sys = build_system(p);
                let x0 = initial_condition(p);
                let traj = integrate(&sys.vector_field(), &x0, 50.0, &integ)?;
                let first = |x: &[f64]| {
                    let mut v = sys.casimir_values(x);
                    v.push(sys.hamiltonian().eval(x));
                    v
                };
                let f0 = first(&x0);
                for x in &traj.states {
                    worst = worst.max(max_diff(&first(x), &f0));
                }
            }
            Ok((worst, "t in [0, 50]".into()))
        })();
        Group::from_result("conservation", 1e-8, r)
    }));
    let s4 = sampled;
    groups.push(Box::new(move || {
        let r = (|| {
            let ts: Vec<f64> = (0..=50).map(|i| 0.1 * f64::from(i)).collect();
            let mut identity: f64 = 0.0;
            let mut inversion: f64 = 0.0;
            for (p, _) in &s4 {
                for row in jacobi_table(p, &ts, &tight_config())? {
                    identity = identity.max(row.identity_cn);
                    identity = row.identity_dn.iter().fold(identity, |m, v| m.max(*v));
                    if let Some(v) = row.inversion {
                        inversion = inversion.max(v);
                    }
                }
            }
            Ok((
                identity.max(inversion / 100.0),
                format!("identities {identity:.3e}, inversion {inversion:.3e} (<= 1e-6)"),
            ))
        })();
        Group::from_result("jacobi_identities", 1e-8, r)
    }));
    Ok(groups)
}

fn custom_groups(cfg: &ExperimentConfig, seed: u64) -> Result<Vec<Group>> {
    let custom = cfg.custom()?.expect("custom system");
    let sys = &custom.system;
    let n = sys.n();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points: Vec<Vec<f64>> = match &cfg.verify.sample_points {
        Some(p) => {
            if p.iter().any(|x| x.len() != n) {
                return Err(ConfigError::Invalid(format!(
                    "verify.sample_points must have {n} coordinates"
                ))
                .into());
            }
            p.clone()
        }
        None => (0..cfg.verify.points.max(1))
            .map(|_| (0..n).map(|_| rng.random_range(-1.5..1.5)).collect())
            .collect(),
    };
    let rhs = custom.rhs.clone();
    let reference = move |x: &[f64]| rhs.iter().map(|f| f.eval(x)).collect::<Vec<_>>();
    let min_nu = sys.rescale_audit(&points);
    Ok(vec![
        Group::from_result(
            "nambu_realization",
            1e-8,
            realization_group(sys, &points, &reference),
        ),
        Group::from_result(
            "bracket_identities",
            1e-8,
            bracket_group(sys, &points).and_then(|b| {
                let f = first_integral_group(sys, &points)?;
                Ok((b.0.max(f.0), format!("bracket {:.3e}, {}", b.0, f.1)))
            }),
        ),
        match min_nu {
            Ok(v) => Group {
                name: "rescaling_nonvanishing",
                pass: v > 0.0,
                residual: finite(v),
                tolerance: 0.0,
                detail: format!("min |nu| {v:.3e} must be positive"),
            },
            Err(e) => Group::from_result("rescaling_nonvanishing", 0.0, Err(e.into())),
        },
    ])
}

pub fn run_verify(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Status> {
    let groups = if cfg.custom()?.is_some() {
        custom_groups(cfg, opts.seed)?
    } else {
        let exp = cfg.hyperelliptic()?;
        let checks = hyperelliptic_groups(cfg, &exp, opts.seed)?;
        pool(opts.threads)?.install(|| checks.par_iter().map(|g| g()).collect())
    };
    let pass = groups.iter().all(|g| g.pass);
    for g in &groups {
        eprintln!(
            "{} {}: {}",
            if g.pass { "PASS" } else { "FAIL" },
            g.name,
            g.detail
        );
    }
    let file = VerifyFile {
        schema_version: SCHEMA_VERSION,
        seed: opts.seed,
        pass,
        groups,
    };
    OutputDir::create(&opts.out)?.write_json("verify.json", &file)?;
    Ok(if pass {
        Status::Success
    } else {
        Status::VerifyFailed
    })
}

/// Integrator settings are validated up front for every subcommand.
pub fn preflight(cfg: &ExperimentConfig) -> Result<IntegratorConfig, ConfigError> {
    cfg.integrator()
}
