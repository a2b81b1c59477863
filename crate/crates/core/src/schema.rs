//! The versioned JSON spec-file format: a serializable mirror of
//! [`SystemSpec`] with tagged unions for kernels, birth shapes, and birth
//! terms, plus path-labelled semantic validation.
//!
//! Top level:
//!
//! ```json
//! {
//!   "version": 1, "n": 2, "tau": 1.0, "domain_start": 0.0,
//!   "d": [ {"expr": {...}, "bounds": {...}}, ... ],
//!   "linear": [ [ null, {"a": {...}, "kernel": {"kind": "instant"}} ], ... ],
//!   "birth": [ {"kind": "birth", ...} | {"kind": "distributed", ...} | null ],
//!   "harvest": [ null | {"kappa": {...}, "g": {...}} ]
//! }
//! ```
//!
//! Expression nodes use `{"kind": "const" | "t_pow" | "affine" | "rational"
//! | "sum" | "prod" | "quot" | "piecewise" | "table", ...}`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::system::{
    BirthShape, DelayKernel, DistributedTerm, HarvestTerm, LinearTerm, Nonlinearity, ShapeTime,
    SystemError, SystemSpec, TermWeight,
};
use crate::timefn::CoefficientFn;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SchemaError {
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
    #[error("unsupported spec-file version {found} (expected {SCHEMA_VERSION})")]
    Version { found: u32 },
    #[error("component {component} uses a programmatic birth term that has no file form")]
    NotSerializable { component: usize },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    System(#[from] SystemError),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelJson {
    Instant,
    Lag { lag: CoefficientFn },
    Uniform { width: CoefficientFn },
    Density { shape: crate::timefn::Expr, support: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ShapeJson {
    Nicholson {
        c: CoefficientFn,
    },
    MackeyGlass {
        c: CoefficientFn,
        alpha: f64,
    },
    Custom {
        h: crate::timefn::Expr,
        deriv0: f64,
        #[serde(default = "one")]
        scale: f64,
    },
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeightJson {
    Integral {
        lambda: CoefficientFn,
        lag: CoefficientFn,
    },
    Point {
        lag: CoefficientFn,
    },
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ShapeTimeJson {
    #[default]
    IntegrationVariable,
    CurrentTime,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DistributedTermJson {
    pub b: CoefficientFn,
    pub weight: WeightJson,
    pub shape: ShapeJson,
    #[serde(default)]
    pub shape_time: ShapeTimeJson,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BirthJson {
    Birth {
        beta: CoefficientFn,
        kernel: KernelJson,
        shape: ShapeJson,
    },
    Distributed {
        terms: Vec<DistributedTermJson>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinearJson {
    pub a: CoefficientFn,
    pub kernel: KernelJson,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HarvestJson {
    pub kappa: CoefficientFn,
    pub g: crate::timefn::Expr,
    #[serde(default = "one")]
    pub g_scale: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpecFile {
    pub version: u32,
    pub n: usize,
    pub tau: f64,
    #[serde(default)]
    pub domain_start: f64,
    pub d: Vec<CoefficientFn>,
    #[serde(default)]
    pub linear: Vec<Vec<Option<LinearJson>>>,
    #[serde(default)]
    pub birth: Vec<Option<BirthJson>>,
    #[serde(default)]
    pub harvest: Vec<Option<HarvestJson>>,
}

fn kernel_to_core(k: &KernelJson) -> DelayKernel {
    match k {
        KernelJson::Instant => DelayKernel::InstantPoint,
        KernelJson::Lag { lag } => DelayKernel::LagPoint { lag: lag.clone() },
        KernelJson::Uniform { width } => DelayKernel::UniformDensity {
            width: width.clone(),
        },
        KernelJson::Density { shape, support } => DelayKernel::Density {
            shape: shape.clone(),
            support: *support,
        },
    }
}

fn kernel_from_core(k: &DelayKernel) -> KernelJson {
    match k {
        DelayKernel::InstantPoint => KernelJson::Instant,
        DelayKernel::LagPoint { lag } => KernelJson::Lag { lag: lag.clone() },
        DelayKernel::UniformDensity { width } => KernelJson::Uniform {
            width: width.clone(),
        },
        DelayKernel::Density { shape, support } => KernelJson::Density {
            shape: shape.clone(),
            support: *support,
        },
    }
}

fn shape_to_core(s: &ShapeJson) -> BirthShape {
    match s {
        ShapeJson::Nicholson { c } => BirthShape::Nicholson { c: c.clone() },
        ShapeJson::MackeyGlass { c, alpha } => BirthShape::MackeyGlass {
            c: c.clone(),
            alpha: *alpha,
        },
        ShapeJson::Custom { h, deriv0, scale } => BirthShape::Custom {
            h: h.clone(),
            deriv0: *deriv0,
            scale: *scale,
        },
    }
}

fn shape_from_core(s: &BirthShape) -> ShapeJson {
    match s {
        BirthShape::Nicholson { c } => ShapeJson::Nicholson { c: c.clone() },
        BirthShape::MackeyGlass { c, alpha } => ShapeJson::MackeyGlass {
            c: c.clone(),
            alpha: *alpha,
        },
        BirthShape::Custom { h, deriv0, scale } => ShapeJson::Custom {
            h: h.clone(),
            deriv0: *deriv0,
            scale: *scale,
        },
    }
}

impl SpecFile {
    pub fn from_system(sys: &SystemSpec) -> Result<SpecFile, SchemaError> {
        let mut birth = Vec::with_capacity(sys.n);
        for (i, b) in sys.birth.iter().enumerate() {
            birth.push(match b {
                None => None,
                Some(Nonlinearity::Birth {
                    beta,
                    kernel,
                    shape,
                }) => Some(BirthJson::Birth {
                    beta: beta.clone(),
                    kernel: kernel_from_core(kernel),
                    shape: shape_from_core(shape),
                }),
                Some(Nonlinearity::DistributedBirth { terms }) => Some(BirthJson::Distributed {
                    terms: terms
                        .iter()
                        .map(|t| DistributedTermJson {
                            b: t.b.clone(),
                            weight: match &t.weight {
                                TermWeight::Integral { lambda, lag } => WeightJson::Integral {
                                    lambda: lambda.clone(),
                                    lag: lag.clone(),
                                },
                                TermWeight::Point { lag } => {
                                    WeightJson::Point { lag: lag.clone() }
                                }
                            },
                            shape: shape_from_core(&t.shape),
                            shape_time: match t.shape_time {
                                ShapeTime::IntegrationVariable => {
                                    ShapeTimeJson::IntegrationVariable
                                }
                                ShapeTime::CurrentTime => ShapeTimeJson::CurrentTime,
                            },
                        })
                        .collect(),
                }),
                Some(Nonlinearity::CustomEnvelope { .. })
                | Some(Nonlinearity::ClampedMinBirth { .. }) => {
                    return Err(SchemaError::NotSerializable { component: i })
                }
            });
        }
        Ok(SpecFile {
            version: SCHEMA_VERSION,
            n: sys.n,
            tau: sys.tau,
            domain_start: sys.domain_start,
            d: sys.d.clone(),
            linear: sys
                .linear
                .iter()
                .map(|row| {
                    row.iter()
                        .map(|t| {
                            t.as_ref().map(|t| LinearJson {
                                a: t.a.clone(),
                                kernel: kernel_from_core(&t.kernel),
                            })
                        })
                        .collect()
                })
                .collect(),
            birth,
            harvest: sys
                .harvest
                .iter()
                .map(|h| {
                    h.as_ref().map(|h| HarvestJson {
                        kappa: h.kappa.clone(),
                        g: h.g.clone(),
                        g_scale: h.g_scale,
                    })
                })
                .collect(),
        })
    }

    pub fn into_system(self) -> Result<SystemSpec, SchemaError> {
        if self.version != SCHEMA_VERSION {
            return Err(SchemaError::Version {
                found: self.version,
            });
        }
        let fail = |path: &str, message: &str| SchemaError::Invalid {
            path: path.to_string(),
            message: message.to_string(),
        };
        if !(self.tau >= 0.0) || !self.tau.is_finite() {
            return Err(fail("tau", "must be a finite nonnegative number"));
        }
        if self.n == 0 {
            return Err(fail("n", "must be at least 1"));
        }
        if self.d.len() != self.n {
            return Err(fail("d", &format!("expected {} entries", self.n)));
        }
        for (i, c) in self.d.iter().enumerate() {
            c.validate()
                .map_err(|e| fail(&format!("d[{i}]"), &e.to_string()))?;
        }
        let linear_rows = if self.linear.is_empty() {
            vec![vec![None; self.n]; self.n]
        } else {
            if self.linear.len() != self.n || self.linear.iter().any(|r| r.len() != self.n) {
                return Err(fail("linear", "must be an n x n matrix"));
            }
            let mut rows = Vec::with_capacity(self.n);
            for (i, row) in self.linear.iter().enumerate() {
                let mut out = Vec::with_capacity(self.n);
                for (j, term) in row.iter().enumerate() {
                    out.push(match term {
                        None => None,
                        Some(t) => {
                            t.a.validate().map_err(|e| {
                                fail(&format!("linear[{i}][{j}].a"), &e.to_string())
                            })?;
                            Some(LinearTerm {
                                a: t.a.clone(),
                                kernel: kernel_to_core(&t.kernel),
                            })
                        }
                    });
                }
                rows.push(out);
            }
            rows
        };
        let birth = if self.birth.is_empty() {
            vec![None; self.n]
        } else {
            if self.birth.len() != self.n {
                return Err(fail("birth", &format!("expected {} entries", self.n)));
            }
            self.birth
                .iter()
                .map(|b| {
                    b.as_ref().map(|b| match b {
                        BirthJson::Birth {
                            beta,
                            kernel,
                            shape,
                        } => Nonlinearity::Birth {
                            beta: beta.clone(),
                            kernel: kernel_to_core(kernel),
                            shape: shape_to_core(shape),
                        },
                        BirthJson::Distributed { terms } => Nonlinearity::DistributedBirth {
                            terms: terms
                                .iter()
                                .map(|t| DistributedTerm {
                                    b: t.b.clone(),
                                    weight: match &t.weight {
                                        WeightJson::Integral { lambda, lag } => {
                                            TermWeight::Integral {
                                                lambda: lambda.clone(),
                                                lag: lag.clone(),
                                            }
                                        }
                                        WeightJson::Point { lag } => {
                                            TermWeight::Point { lag: lag.clone() }
                                        }
                                    },
                                    shape: shape_to_core(&t.shape),
                                    shape_time: match t.shape_time {
                                        ShapeTimeJson::IntegrationVariable => {
                                            ShapeTime::IntegrationVariable
                                        }
                                        ShapeTimeJson::CurrentTime => ShapeTime::CurrentTime,
                                    },
                                })
                                .collect(),
                        },
                    })
                })
                .collect()
        };
        let harvest = if self.harvest.is_empty() {
            vec![None; self.n]
        } else {
            if self.harvest.len() != self.n {
                return Err(fail("harvest", &format!("expected {} entries", self.n)));
            }
            let mut out = Vec::with_capacity(self.n);
            for (i, h) in self.harvest.iter().enumerate() {
                out.push(match h {
                    None => None,
                    Some(h) => {
                        let term = HarvestTerm {
                            kappa: h.kappa.clone(),
                            g: h.g.clone(),
                            g_scale: h.g_scale,
                        };
                        term.validate()
                            .map_err(|e| fail(&format!("harvest[{i}]"), &e.to_string()))?;
                        Some(term)
                    }
                });
            }
            out
        };
        let sys = SystemSpec::new(
            self.n,
            self.tau,
            self.domain_start,
            self.d,
            linear_rows,
            birth,
            harvest,
        )?;
        let t_lo = sys.domain_start.max(0.0);
        sys.validate(t_lo, t_lo + 50.0)?;
        Ok(sys)
    }
}

pub fn to_json(sys: &SystemSpec) -> Result<String, SchemaError> {
    Ok(serde_json::to_string_pretty(&SpecFile::from_system(sys)?)?)
}

pub fn from_json(json: &str) -> Result<SystemSpec, SchemaError> {
    let file: SpecFile = serde_json::from_str(json)?;
    file.into_system()
}
