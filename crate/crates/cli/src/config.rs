//! Experiment configuration: a single JSON document.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use leafcycle_core::cycles::IntegratorConfig;
use leafcycle_core::jacobi::{HyperellipticParams, SignTuple};
use leafcycle_core::perturb::{FoliatedPerturbation, LeafPerturbation, PolynomialPerturbation};
use leafcycle_core::{IntegrableSystem, LeafCoordinates, ScalarField};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{parse_in, Env, Expr, ExprError, Scope};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid config JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("in `{field}`: {source}")]
    Expression {
        field: String,
        #[source]
        source: ExprError,
    },
    #[error("{0}")]
    Invalid(String),
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError::Invalid(msg.into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub system: SystemConfig,
    /// `ε_3 … ε_n`, each ±1.
    pub signs: Vec<i8>,
    /// Leaf values `c_1 … c_{n−2}`.
    pub leaf: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub leaf_sweep: Option<LeafSweep>,
    pub perturbation: PerturbationConfig,
    pub eps_list: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h_range: Option<[f64; 2]>,
    /// Melnikov levels to hunt; the scan's simple zeros when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h_star: Option<Vec<f64>>,
    pub samples: usize,
    pub seed: u64,
    pub tolerances: Tolerances,
    pub jacobi: JacobiConfig,
    pub verify: VerifyConfig,
    pub output_dir: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SystemConfig {
    Hyperelliptic {
        k: Vec<f64>,
    },
    /// Expressions in `x1 … xn`. Supported by `verify` only.
    Custom {
        n: usize,
        casimirs: Vec<String>,
        hamiltonian: String,
        nu: String,
        /// Expected right-hand side, compared with the Nambu realization.
        rhs: Vec<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LeafSweep {
    /// Zero-based index of the leaf value that varies.
    pub index: usize,
    pub from: f64,
    pub to: f64,
    pub count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    LeafFixed,
    Foliated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationConfig {
    pub mode: Mode,
    pub terms: Terms,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case", deny_unknown_fields)]
pub enum Terms {
    /// `P1 = Σ r_ij y1^i y2^j`, `P2 = Σ s_ij y1^i y2^j`; keys are `"i,j"`,
    /// coefficients are expressions in `c`, `k` and `pi`.
    Polynomial {
        degree: u32,
        #[serde(default)]
        r: BTreeMap<String, String>,
        #[serde(default)]
        s: BTreeMap<String, String>,
    },
    /// Free expressions in `y`, `c`, `k`, `pi`; `r` is the `(n−2)×(n−2)`
    /// matrix of the leaf-fixed mode (empty means zero).
    Expressions {
        p1: String,
        p2: String,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        r: Vec<Vec<String>>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_time: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_step: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JacobiConfig {
    pub t_end: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    /// Dimensions checked with random moduli besides the configured system.
    pub n_values: Vec<usize>,
    pub k_tuples: usize,
    pub points: usize,
    /// Ambient points for the chart audit; sampled from the sign tuple when
    /// absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_points: Option<Vec<Vec<f64>>>,
}

impl Default for ExperimentConfig {
    /// The cubic example: `Q1 = y1(1 − y1² − y2²)` on the leaf `c = 2` of the
    /// three-dimensional system with `k = 1`.
    fn default() -> Self {
        let r = [("1,0", "1"), ("3,0", "-1"), ("1,2", "-1")]
            .into_iter()
            .map(|(a, b)| (a.to_string(), b.to_string()))
            .collect();
        Self {
            schema_version: SCHEMA_VERSION,
            system: SystemConfig::Hyperelliptic { k: vec![1.0] },
            signs: vec![1],
            leaf: vec![2.0],
            leaf_sweep: None,
            perturbation: PerturbationConfig {
                mode: Mode::Foliated,
                terms: Terms::Polynomial {
                    degree: 3,
                    r,
                    s: BTreeMap::new(),
                },
            },
            eps_list: vec![0.1, 0.05, 0.025],
            h_range: None,
            h_star: None,
            samples: 200,
            seed: 0,
            tolerances: Tolerances {
                rel_tol: 1e-10,
                abs_tol: 1e-12,
                max_time: 1e3,
                max_step: None,
            },
            jacobi: JacobiConfig {
                t_end: 5.0,
                steps: 50,
            },
            verify: VerifyConfig {
                n_values: vec![3, 4, 5],
                k_tuples: 3,
                points: 50,
                sample_points: None,
            },
            output_dir: "out".into(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = serde_json::from_str(text)?;
        if cfg.schema_version != SCHEMA_VERSION {
            return invalid(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                cfg.schema_version
            ));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn integrator(&self) -> Result<IntegratorConfig, ConfigError> {
        let t = &self.tolerances;
        let cfg = IntegratorConfig {
            rel_tol: t.rel_tol,
            abs_tol: t.abs_tol,
            max_time: t.max_time,
            max_step: t.max_step.unwrap_or(f64::INFINITY),
        };
        cfg.validate()
            .map_err(|e| ConfigError::Invalid(format!("tolerances: {e}")))?;
        Ok(cfg)
    }

    pub fn dimension(&self) -> usize {
        match &self.system {
            SystemConfig::Hyperelliptic { k } => k.len() + 2,
            SystemConfig::Custom { n, .. } => *n,
        }
    }

    /// The hyperelliptic experiment this config describes, with every
    /// expression parsed and checked.
    pub fn hyperelliptic(&self) -> Result<Experiment, ConfigError> {
        let SystemConfig::Hyperelliptic { k } = &self.system else {
            return invalid("this subcommand needs the hyperelliptic system; custom systems support `verify` only");
        };
        if k.is_empty() {
            return invalid("system.k must have at least one entry");
        }
        let params = HyperellipticParams::new(k.clone())
            .map_err(|e| ConfigError::Invalid(format!("system.k: {e}")))?;
        let m = k.len();
        if self.signs.len() != m {
            return invalid(format!("signs must have {m} entries"));
        }
        let signs = SignTuple::new(self.signs.clone())
            .map_err(|e| ConfigError::Invalid(format!("signs: {e}")))?;
        if self.leaf.len() != m || self.leaf.iter().any(|c| !c.is_finite() || *c <= 0.0) {
            return invalid(format!("leaf must have {m} positive entries"));
        }
        if let Some(s) = &self.leaf_sweep {
            if s.index >= m || s.count == 0 || !(s.from > 0.0) || !(s.to > 0.0) {
                return invalid("leaf_sweep needs index < n-2, count >= 1 and positive bounds");
            }
            if self.perturbation.mode != Mode::Foliated {
                return invalid("leaf_sweep is available for foliated perturbations only");
            }
        }
        if self.samples < leafcycle_core::melnikov::MIN_SCAN_SAMPLES {
            return invalid(format!(
                "samples must be at least {}",
                leafcycle_core::melnikov::MIN_SCAN_SAMPLES
            ));
        }
        if let Some([a, b]) = self.h_range {
            if !(a < b) || !a.is_finite() || !b.is_finite() {
                return invalid("h_range must be an increasing pair");
            }
        }
        let n = m + 2;
        let terms = CompiledTerms::new(&self.perturbation, n)?;
        Ok(Experiment {
            params,
            signs,
            terms,
            mode: self.perturbation.mode,
        })
    }

    /// Leaves visited by the Melnikov run.
    pub fn leaves(&self) -> Vec<LeafCoordinates> {
        match &self.leaf_sweep {
            None => vec![LeafCoordinates::new(self.leaf.clone())],
            Some(s) => (0..s.count)
                .map(|i| {
                    let t = if s.count == 1 {
                        0.0
                    } else {
                        i as f64 / (s.count - 1) as f64
                    };
                    let mut c = self.leaf.clone();
                    c[s.index] = s.from + t * (s.to - s.from);
                    LeafCoordinates::new(c)
                })
                .collect(),
        }
    }

    /// Checks the list used by `hunt`.
    pub fn checked_eps_list(&self) -> Result<&[f64], ConfigError> {
        if self.eps_list.is_empty() {
            return invalid("eps_list is empty");
        }
        if self.eps_list.iter().any(|e| !e.is_finite() || *e <= 0.0)
            || self.eps_list.windows(2).any(|w| !(w[1] < w[0]))
        {
            return invalid("eps_list must be positive, finite and strictly decreasing");
        }
        Ok(&self.eps_list)
    }

    /// The custom system, with casimirs, Hamiltonian, rescaling and the
    /// expected right-hand side.
    pub fn custom(&self) -> Result<Option<CustomSystem>, ConfigError> {
        let SystemConfig::Custom {
            n,
            casimirs,
            hamiltonian,
            nu,
            rhs,
        } = &self.system
        else {
            return Ok(None);
        };
        let n = *n;
        if n < 3 || casimirs.len() != n - 2 || rhs.len() != n {
            return invalid("custom system needs n >= 3, n-2 casimirs and n rhs entries");
        }
        let scope = Scope {
            x: n,
            ..Scope::default()
        };
        let field = |name: String, src: &str| -> Result<ScalarField, ConfigError> {
            let e = Arc::new(
                parse_in(src, &scope).map_err(|source| ConfigError::Expression {
                    field: name,
                    source,
                })?,
            );
            Ok(ScalarField::new(n, move |x| {
                e.eval(&Env {
                    x,
                    ..Env::default()
                })
            }))
        };
        let cs = casimirs
            .iter()
            .enumerate()
            .map(|(i, s)| field(format!("system.casimirs[{i}]"), s))
            .collect::<Result<Vec<_>, _>>()?;
        let h = field("system.hamiltonian".into(), hamiltonian)?;
        let nu = field("system.nu".into(), nu)?;
        let rhs = rhs
            .iter()
            .enumerate()
            .map(|(i, s)| field(format!("system.rhs[{i}]"), s))
            .collect::<Result<Vec<_>, _>>()?;
        let system = IntegrableSystem::new(n, cs, h, nu)
            .map_err(|e| ConfigError::Invalid(format!("custom system: {e}")))?;
        Ok(Some(CustomSystem { system, rhs }))
    }
}

pub struct CustomSystem {
    pub system: IntegrableSystem,
    pub rhs: Vec<ScalarField>,
}

/// Parsed perturbation terms, ready to be bound to a leaf.
#[derive(Debug, Clone)]
pub enum CompiledTerms {
    Polynomial {
        degree: u32,
        r: Vec<((u32, u32), Arc<Expr>)>,
        s: Vec<((u32, u32), Arc<Expr>)>,
    },
    Expressions {
        p1: Arc<Expr>,
        p2: Arc<Expr>,
        r: Vec<Vec<Arc<Expr>>>,
    },
}

fn parse_key(key: &str, degree: u32) -> Result<(u32, u32), ConfigError> {
    let bad = || {
        ConfigError::Invalid(format!(
            "polynomial key `{key}` must be `i,j` with i+j <= {degree}"
        ))
    };
    let (a, b) = key.split_once(',').ok_or_else(bad)?;
    let i: u32 = a.trim().parse().map_err(|_| bad())?;
    let j: u32 = b.trim().parse().map_err(|_| bad())?;
    if i + j > degree {
        return Err(bad());
    }
    Ok((i, j))
}

impl CompiledTerms {
    fn new(p: &PerturbationConfig, n: usize) -> Result<Self, ConfigError> {
        let m = n - 2;
        let expr = |name: String, src: &str, scope: &Scope| {
            parse_in(src, scope)
                .map(Arc::new)
                .map_err(|source| ConfigError::Expression {
                    field: name,
                    source,
                })
        };
        match &p.terms {
            Terms::Polynomial { degree, r, s } => {
                let scope = Scope {
                    c: m,
                    k: m,
                    ..Scope::default()
                };
                let table = |name: &str, t: &BTreeMap<String, String>| {
                    t.iter()
                        .map(|(key, src)| {
                            Ok((
                                parse_key(key, *degree)?,
                                expr(format!("perturbation.terms.{name}[{key}]"), src, &scope)?,
                            ))
                        })
                        .collect::<Result<Vec<_>, ConfigError>>()
                };
                Ok(Self::Polynomial {
                    degree: *degree,
                    r: table("r", r)?,
                    s: table("s", s)?,
                })
            }
            Terms::Expressions { p1, p2, r } => {
                let scope = Scope {
                    y: n,
                    c: m,
                    k: m,
                    x: 0,
                };
                if !r.is_empty() {
                    if p.mode != Mode::LeafFixed {
                        return invalid(
                            "perturbation.terms.r is only meaningful for leaf_fixed mode",
                        );
                    }
                    if r.len() != m || r.iter().any(|row| row.len() != m) {
                        return invalid(format!("perturbation.terms.r must be {m}x{m}"));
                    }
                }
                let r = r
                    .iter()
                    .enumerate()
                    .map(|(i, row)| {
                        row.iter()
                            .enumerate()
                            .map(|(j, src)| {
                                expr(format!("perturbation.terms.r[{i}][{j}]"), src, &scope)
                            })
                            .collect::<Result<Vec<_>, _>>()
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(Self::Expressions {
                    p1: expr("perturbation.terms.p1".into(), p1, &scope)?,
                    p2: expr("perturbation.terms.p2".into(), p2, &scope)?,
                    r,
                })
            }
        }
    }
}

/// A validated hyperelliptic experiment.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub params: HyperellipticParams,
    pub signs: SignTuple,
    pub terms: CompiledTerms,
    pub mode: Mode,
}

fn bind(e: &Arc<Expr>, n: usize, c: Vec<f64>, k: Vec<f64>) -> ScalarField {
    let e = e.clone();
    ScalarField::new(n, move |y| {
        e.eval(&Env {
            y,
            c: &c,
            k: &k,
            x: &[],
        })
    })
}

impl Experiment {
    pub fn n(&self) -> usize {
        self.params.n()
    }

    /// The polynomial table, when the terms are polynomial.
    pub fn polynomial(&self) -> Option<PolynomialPerturbation> {
        let CompiledTerms::Polynomial { degree, r, s } = &self.terms else {
            return None;
        };
        let mut pp = PolynomialPerturbation::new(self.n(), *degree).ok()?;
        let k = self.params.k().to_vec();
        for (table, is_r) in [(r, true), (s, false)] {
            for ((i, j), e) in table {
                let (e, k) = (e.clone(), k.clone());
                let f = move |c: &[f64]| {
                    e.eval(&Env {
                        c,
                        k: &k,
                        ..Env::default()
                    })
                };
                let done = if is_r {
                    pp.set_r(*i, *j, f)
                } else {
                    pp.set_s(*i, *j, f)
                };
                done.ok()?;
            }
        }
        Some(pp)
    }

    /// `(P1, P2)` as functions of the chart coordinates on `leaf`.
    pub fn p_fields(&self, leaf: &LeafCoordinates) -> (ScalarField, ScalarField) {
        match &self.terms {
            CompiledTerms::Polynomial { .. } => {
                let pp = self.polynomial().expect("validated table");
                (pp.p1(), pp.p2())
            }
            CompiledTerms::Expressions { p1, p2, .. } => {
                let (n, c, k) = (self.n(), leaf.values().to_vec(), self.params.k().to_vec());
                (bind(p1, n, c.clone(), k.clone()), bind(p2, n, c, k))
            }
        }
    }

    pub fn leaf_perturbation(&self, leaf: &LeafCoordinates) -> LeafPerturbation {
        let (p1, p2) = self.p_fields(leaf);
        let r = match &self.terms {
            CompiledTerms::Expressions { r, .. } => {
                let (n, c, k) = (self.n(), leaf.values().to_vec(), self.params.k().to_vec());
                r.iter()
                    .map(|row| {
                        row.iter()
                            .map(|e| bind(e, n, c.clone(), k.clone()))
                            .collect()
                    })
                    .collect()
            }
            CompiledTerms::Polynomial { .. } => Vec::new(),
        };
        LeafPerturbation {
            p1,
            p2,
            r,
            leaf: leaf.clone(),
        }
    }

    pub fn foliated_perturbation(&self, leaf: &LeafCoordinates) -> FoliatedPerturbation {
        let (q1, q2) = self.p_fields(leaf);
        FoliatedPerturbation { q1, q2 }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips() {
        let cfg = ExperimentConfig::default();
        assert_eq!(ExperimentConfig::from_json(&cfg.to_json()).unwrap(), cfg);
        assert!(cfg.hyperelliptic().is_ok());
    }

    #[test]
    fn rejects_bad_inputs() {
        let mut cfg = ExperimentConfig::default();
        cfg.eps_list = vec![];
        assert!(cfg.checked_eps_list().is_err());
        cfg.eps_list = vec![0.05, 0.1];
        assert!(cfg.checked_eps_list().is_err());

        let mut cfg = ExperimentConfig::default();
        cfg.perturbation.terms = Terms::Expressions {
            p1: "y1 + z".into(),
            p2: "0".into(),
            r: vec![],
        };
        assert!(matches!(
            cfg.hyperelliptic(),
            Err(ConfigError::Expression { .. })
        ));

        let mut cfg = ExperimentConfig::default();
        cfg.perturbation.terms = Terms::Polynomial {
            degree: 3,
            r: [("2,2".to_string(), "1".to_string())].into_iter().collect(),
            s: BTreeMap::new(),
        };
        assert!(cfg.hyperelliptic().is_err());

        let mut cfg = ExperimentConfig::default();
        cfg.signs = vec![1, 1];
        assert!(cfg.hyperelliptic().is_err());

        assert!(ExperimentConfig::from_json("{\"schema_version\": 2}").is_err());
    }
}
