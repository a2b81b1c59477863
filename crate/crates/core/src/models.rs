//! Built-in model constructors and the fixture catalogue used by the CLI
//! and the test suite. Each fixture records the outcomes its construction
//! guarantees, so checks against it double as regression tests.

use std::str::FromStr;

use crate::experiments::ExactSolution;
use crate::hypotheses::VerdictKind;
use crate::integrator::InitialSegment;
use crate::system::{
    BirthShape, DelayKernel, DistributedTerm, LinearTerm, Nonlinearity, SystemError, SystemSpec,
    TermWeight,
};
use crate::timefn::{poly_mul, CoefficientFn, Expr, Piece};

/// Expected check outcomes for a fixture ("certified", "refuted-on-grid",
/// "undecided"); `None` leaves a status unpinned.
#[derive(Debug, Clone, Default)]
pub struct ExpectedOutcomes {
    pub h2: Option<&'static str>,
    pub h2_star: Option<&'static str>,
    pub h5: Option<&'static str>,
    pub h5_star: Option<&'static str>,
    pub h4_ok: Option<bool>,
    pub verdict: Option<VerdictKind>,
    pub blocking_contains: Option<&'static str>,
}

#[derive(Debug, Clone)]
pub struct ModelFixture {
    pub name: &'static str,
    pub spec: SystemSpec,
    pub exact: Option<ExactSolution>,
    /// Initial data used by default runs: the exact segment when one
    /// exists, the vector of ones otherwise.
    pub default_init: InitialSegment,
    pub expected: ExpectedOutcomes,
}

/// One birth term of the structured family: coefficient, optional inner
/// weight λ (integral form when present, point form otherwise), lag, and
/// the shape coefficient c.
#[derive(Debug, Clone)]
pub struct BirthTermSpec {
    pub b: CoefficientFn,
    pub lambda: Option<CoefficientFn>,
    pub lag: CoefficientFn,
    pub c: CoefficientFn,
}

fn assemble_birth(
    terms: Vec<BirthTermSpec>,
    shape_of: impl Fn(CoefficientFn) -> BirthShape,
) -> Option<Nonlinearity> {
    if terms.is_empty() {
        return None;
    }
    let dist: Vec<DistributedTerm> = terms
        .into_iter()
        .map(|t| DistributedTerm {
            b: t.b,
            weight: match t.lambda {
                Some(lambda) => TermWeight::Integral {
                    lambda,
                    lag: t.lag,
                },
                None => TermWeight::Point { lag: t.lag },
            },
            shape: shape_of(t.c),
            shape_time: Default::default(),
        })
        .collect();
    Some(Nonlinearity::DistributedBirth { terms: dist })
}

/// Structured system with unimodal exponential birth terms.
pub fn nicholson_system(
    d: Vec<CoefficientFn>,
    linear: Vec<Vec<Option<LinearTerm>>>,
    births: Vec<Vec<BirthTermSpec>>,
    tau: f64,
    domain_start: f64,
) -> Result<SystemSpec, SystemError> {
    let n = d.len();
    let birth = births
        .into_iter()
        .map(|terms| assemble_birth(terms, |c| BirthShape::Nicholson { c }))
        .collect();
    let sys = SystemSpec::new(n, tau, domain_start, d, linear, birth, vec![None; n])?;
    sys.validate(domain_start.max(0.0), domain_start.max(0.0) + 50.0)?;
    Ok(sys)
}

/// Structured system with saturating rational birth terms, exponent ≥ 1.
pub fn mackey_glass_system(
    d: Vec<CoefficientFn>,
    linear: Vec<Vec<Option<LinearTerm>>>,
    births: Vec<Vec<BirthTermSpec>>,
    alpha: Vec<f64>,
    tau: f64,
    domain_start: f64,
) -> Result<SystemSpec, SystemError> {
    let n = d.len();
    for &a in &alpha {
        if a < 1.0 {
            return Err(SystemError::BadExponent { alpha: a });
        }
    }
    let birth = births
        .into_iter()
        .zip(alpha)
        .map(|(terms, a)| assemble_birth(terms, |c| BirthShape::MackeyGlass { c, alpha: a }))
        .collect();
    let sys = SystemSpec::new(n, tau, domain_start, d, linear, birth, vec![None; n])?;
    sys.validate(domain_start.max(0.0), domain_start.max(0.0) + 50.0)?;
    Ok(sys)
}

/// Two identical patches with constant migration and one delayed
/// exponential birth term per patch; every permanence requirement is
/// satisfied by construction. The positive equilibrium solves
/// 0.75 x = 2 x e^{-x}, i.e. x* = ln(8/3).
pub fn two_patch_nicholson() -> ModelFixture {
    let coupling = |_| {
        Some(LinearTerm {
            a: CoefficientFn::constant(0.25),
            kernel: DelayKernel::InstantPoint,
        })
    };
    let birth = || {
        Some(Nonlinearity::Birth {
            beta: CoefficientFn::constant(2.0),
            kernel: DelayKernel::LagPoint {
                lag: CoefficientFn::constant(1.0),
            },
            shape: BirthShape::Nicholson {
                c: CoefficientFn::constant(1.0),
            },
        })
    };
    let spec = SystemSpec::new(
        2,
        1.0,
        0.0,
        vec![CoefficientFn::constant(1.0), CoefficientFn::constant(1.0)],
        vec![vec![None, coupling(0)], vec![coupling(1), None]],
        vec![birth(), birth()],
        vec![None, None],
    )
    .unwrap();
    ModelFixture {
        name: "nicholson2patch",
        spec,
        exact: None,
        default_init: InitialSegment::Constant(vec![1.0, 1.0]),
        expected: ExpectedOutcomes {
            h2: Some("certified"),
            h2_star: Some("certified"),
            h5: Some("certified"),
            h5_star: Some("certified"),
            h4_ok: Some(true),
            verdict: Some(VerdictKind::Permanent),
            blocking_contains: None,
        },
    }
}

/// Constant-coefficient symmetric pair `x_i' = -d x_i + a x_j(t-τ)`:
/// the stable comparator for decay studies (ratio d/a > 1 restores the
/// ratio dominance certificate).
pub fn constant_linear_pair(d: f64, a: f64, tau: f64) -> SystemSpec {
    let term = || {
        Some(LinearTerm {
            a: CoefficientFn::constant(a),
            kernel: DelayKernel::LagPoint {
                lag: CoefficientFn::constant(tau),
            },
        })
    };
    SystemSpec::new(
        2,
        tau,
        0.0,
        vec![CoefficientFn::constant(d), CoefficientFn::constant(d)],
        vec![vec![None, term()], vec![term(), None]],
        vec![None, None],
        vec![None, None],
    )
    .unwrap()
}

// helper: expr for t + k
fn t_plus(k: f64) -> Expr {
    Expr::affine(1.0, k)
}

/// Catalogue identifiers of the worked examples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExampleId {
    E31,
    E32,
    E33,
    E34,
    E35,
}

impl FromStr for ExampleId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s
            .trim()
            .trim_start_matches("example")
            .trim_start_matches(' ')
        {
            "3.1" => Ok(ExampleId::E31),
            "3.2" => Ok(ExampleId::E32),
            "3.3" => Ok(ExampleId::E33),
            "3.4" => Ok(ExampleId::E34),
            "3.5" => Ok(ExampleId::E35),
            other => Err(format!("unknown example id `{other}`")),
        }
    }
}

/// Example 3.1 parameters: planar linear pair whose coupling grows
/// quadratically while decay minus coupling stays pinned at μ.
#[derive(Debug, Clone)]
pub struct UnstableLinearPairParams {
    pub c: f64,
    pub mu: f64,
    /// Constant delay; the constructor also accepts a time-varying lag
    /// via `lag_override`.
    pub tau: f64,
    pub lag_override: Option<CoefficientFn>,
}

impl Default for UnstableLinearPairParams {
    fn default() -> Self {
        UnstableLinearPairParams {
            c: 2.0,
            mu: 1.0,
            tau: 0.5,
            lag_override: None,
        }
    }
}

/// Planar linear system with a solution converging to the vector of ones:
/// decay dominance holds with additive margin μ, yet no ratio above one
/// survives because coupling and decay both blow up together.
pub fn example_3_1(p: UnstableLinearPairParams) -> Result<ModelFixture, SystemError> {
    let UnstableLinearPairParams {
        c,
        mu,
        tau,
        lag_override,
    } = p;
    if !(c > tau) || !(tau > 0.0) || !(mu > 0.0) {
        return Err(SystemError::Dimension {
            detail: format!("need C > tau > 0 and mu > 0, got C = {c}, tau = {tau}, mu = {mu}"),
        });
    }
    let (a_expr, d_expr) = match &lag_override {
        None => {
            // constant lag: everything collapses to rational forms
            // a(t) = (mu/tau) (t - tau + c)(t + c + 1)
            let a_num: Vec<f64> = poly_mul(&[c - tau, 1.0], &[c + 1.0, 1.0])
                .iter()
                .map(|x| x * mu / tau)
                .collect();
            let a = Expr::rational(a_num, vec![1.0]);
            // d(t) = (mu/tau)(t - tau + c + 1)(t + c) + 1/((t+c)(t+c+1))
            let d_main: Vec<f64> = poly_mul(&[c + 1.0 - tau, 1.0], &[c, 1.0])
                .iter()
                .map(|x| x * mu / tau)
                .collect();
            let d = Expr::sum(vec![
                Expr::rational(d_main, vec![1.0]),
                Expr::rational(vec![1.0], poly_mul(&[c, 1.0], &[c + 1.0, 1.0])),
            ]);
            (a, d)
        }
        Some(lag) => {
            let lag_e = lag.expr().clone();
            let shift = |k: f64| {
                Expr::sum(vec![t_plus(k), Expr::prod(vec![Expr::constant(-1.0), lag_e.clone()])])
            };
            let a = Expr::prod(vec![
                Expr::constant(mu),
                Expr::quot(
                    Expr::prod(vec![shift(c), t_plus(c + 1.0)]),
                    lag_e.clone(),
                ),
            ]);
            let d = Expr::sum(vec![
                Expr::quot(
                    Expr::constant(1.0),
                    Expr::prod(vec![t_plus(c), t_plus(c + 1.0)]),
                ),
                Expr::prod(vec![
                    a.clone(),
                    Expr::quot(
                        Expr::prod(vec![shift(c + 1.0), t_plus(c)]),
                        Expr::prod(vec![shift(c), t_plus(c + 1.0)]),
                    ),
                ]),
            ]);
            (a, d)
        }
    };
    let lag = lag_override.unwrap_or_else(|| CoefficientFn::constant(tau));
    let term = || {
        Some(LinearTerm {
            a: CoefficientFn::new(a_expr.clone()),
            kernel: DelayKernel::LagPoint { lag: lag.clone() },
        })
    };
    let d_fn = CoefficientFn::new(d_expr);
    let spec = SystemSpec::new(
        2,
        tau,
        0.0,
        vec![d_fn.clone(), d_fn],
        vec![vec![None, term()], vec![term(), None]],
        vec![None, None],
        vec![None, None],
    )?;
    spec.validate(0.0, 100.0)?;
    // phi(t) = 1 + 1/(t + c) solves the scalar equation; the symmetric
    // pair (phi, phi) solves the planar one
    let phi = CoefficientFn::new(Expr::rational(vec![c + 1.0, 1.0], vec![c, 1.0]));
    Ok(ModelFixture {
        name: "example3.1",
        spec,
        exact: Some(ExactSolution {
            components: vec![phi.clone(), phi],
            valid_from: -tau,
        }),
        default_init: InitialSegment::Exprs(vec![
            Expr::rational(vec![c + 1.0, 1.0], vec![c, 1.0]),
            Expr::rational(vec![c + 1.0, 1.0], vec![c, 1.0]),
        ]),
        expected: ExpectedOutcomes {
            h2: Some("certified"),
            h2_star: Some("refuted-on-grid"),
            h5: None,
            h5_star: None,
            h4_ok: Some(false),
            verdict: Some(VerdictKind::NoVerdict),
            blocking_contains: Some("no birth term"),
        },
    })
}

/// Example 3.2 parameters: power-law coefficients, distributed coupling,
/// saturating birth with user-supplied coefficient growth.
#[derive(Debug, Clone)]
pub struct PowerMatrixFamilyParams {
    pub eta: f64,
    /// diagonal decay constants d_i
    pub d: Vec<f64>,
    /// distributed coupling constants b_ij (norm contribution b_ij·r)
    pub b: Vec<Vec<f64>>,
    /// constant width of the uniform coupling kernels
    pub r: f64,
    /// width of the uniform birth kernel
    pub sigma: f64,
    /// birth coefficient scale: β_i(t) = beta_scale_i · t^η
    pub beta_scale: Vec<f64>,
    pub nu: f64,
}

impl Default for PowerMatrixFamilyParams {
    fn default() -> Self {
        PowerMatrixFamilyParams {
            eta: 1.0,
            d: vec![2.0, 2.0],
            b: vec![vec![0.0, 1.0], vec![1.0, 0.0]],
            r: 0.5,
            sigma: 0.5,
            beta_scale: vec![3.0, 3.0],
            nu: 1.0,
        }
    }
}

/// The constant part `N = D - A` of the power family; its nonsingular
/// M-matrix property is what the ratio dominance check certifies.
pub fn power_family_matrix(p: &PowerMatrixFamilyParams) -> Vec<Vec<f64>> {
    let n = p.d.len();
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    let a = p.b[i][j] * p.r;
                    if i == j {
                        p.d[i] - a
                    } else {
                        -a
                    }
                })
                .collect()
        })
        .collect()
}

/// All coefficients grow like t^η (none bounded), coupling is distributed;
/// with `N = D - A` a nonsingular M-matrix the ratio dominance hypotheses
/// certify and the uniform-persistence criterion applies.
pub fn example_3_2(p: PowerMatrixFamilyParams) -> Result<ModelFixture, SystemError> {
    let n = p.d.len();
    let domain_start: f64 = 1.0;
    let tau = p.r.max(p.sigma);
    let tpow = |k: f64| Expr::prod(vec![Expr::constant(k), Expr::tpow(p.eta)]);
    let d: Vec<CoefficientFn> = p
        .d
        .iter()
        .map(|&k| CoefficientFn::new(tpow(k)).with_domain_start(0.0))
        .collect();
    let mut linear: Vec<Vec<Option<LinearTerm>>> = vec![vec![None; n]; n];
    for i in 0..n {
        for j in 0..n {
            let norm = p.b[i][j] * p.r;
            if norm > 0.0 {
                linear[i][j] = Some(LinearTerm {
                    a: CoefficientFn::new(tpow(norm)),
                    kernel: DelayKernel::UniformDensity {
                        width: CoefficientFn::constant(p.r),
                    },
                });
            }
        }
    }
    let birth: Vec<Option<Nonlinearity>> = p
        .beta_scale
        .iter()
        .map(|&k| {
            Some(Nonlinearity::Birth {
                beta: CoefficientFn::new(tpow(k)).with_bounds(
                    k * domain_start.powf(p.eta),
                    None,
                    domain_start,
                ),
                kernel: DelayKernel::UniformDensity {
                    width: CoefficientFn::constant(p.sigma),
                },
                shape: BirthShape::MackeyGlass {
                    c: CoefficientFn::constant(1.0),
                    alpha: p.nu,
                },
            })
        })
        .collect();
    let spec = SystemSpec::new(n, tau, domain_start, d, linear, birth, vec![None; n])?;
    spec.validate(domain_start, domain_start + 50.0)?;
    Ok(ModelFixture {
        name: "example3.2",
        spec,
        exact: None,
        default_init: InitialSegment::Constant(vec![1.0; n]),
        expected: ExpectedOutcomes {
            h2: Some("certified"),
            h2_star: Some("certified"),
            h5: Some("certified"),
            h5_star: Some("certified"),
            h4_ok: Some(true),
            verdict: Some(VerdictKind::UniformlyPersistent),
            blocking_contains: None,
        },
    })
}

/// Example 3.3 parameters: planar pair with decay t^η, coupling t^η - 1,
/// constant birth coefficient β > 1.
#[derive(Debug, Clone)]
pub struct PowerCoupledPairParams {
    pub eta: f64,
    pub beta: f64,
    /// delays in the linear part (the undelayed variant is permanent)
    pub linear_delays: bool,
    pub linear_lag: f64,
    pub birth_lag: f64,
}

impl Default for PowerCoupledPairParams {
    fn default() -> Self {
        PowerCoupledPairParams {
            eta: 1.0,
            beta: 2.0,
            linear_delays: true,
            linear_lag: 0.5,
            birth_lag: 0.5,
        }
    }
}

/// Decay and coupling both grow like t^η with difference exactly one, so
/// the additive certificates hold with margins 1 and β - 1; the coupling
/// norms are unbounded, which blocks the permanence criterion unless the
/// linear delays are removed.
pub fn example_3_3(p: PowerCoupledPairParams) -> Result<ModelFixture, SystemError> {
    if p.beta <= 1.0 {
        return Err(SystemError::Dimension {
            detail: format!("need beta > 1, got {}", p.beta),
        });
    }
    let domain_start = 1.0;
    let tau = p.linear_lag.max(p.birth_lag);
    let d = CoefficientFn::new(Expr::tpow(p.eta)).with_domain_start(0.0);
    let a = CoefficientFn::new(Expr::sum(vec![Expr::tpow(p.eta), Expr::constant(-1.0)]))
        .with_domain_start(0.0);
    let kernel = if p.linear_delays {
        DelayKernel::LagPoint {
            lag: CoefficientFn::constant(p.linear_lag),
        }
    } else {
        DelayKernel::InstantPoint
    };
    let term = || {
        Some(LinearTerm {
            a: a.clone(),
            kernel: kernel.clone(),
        })
    };
    let birth = || {
        Some(Nonlinearity::Birth {
            beta: CoefficientFn::constant(p.beta),
            kernel: DelayKernel::LagPoint {
                lag: CoefficientFn::constant(p.birth_lag),
            },
            shape: BirthShape::Nicholson {
                c: CoefficientFn::constant(1.0),
            },
        })
    };
    let spec = SystemSpec::new(
        2,
        tau,
        domain_start,
        vec![d.clone(), d],
        vec![vec![None, term()], vec![term(), None]],
        vec![birth(), birth()],
        vec![None, None],
    )?;
    spec.validate(domain_start, domain_start + 50.0)?;
    let expected = if p.linear_delays {
        ExpectedOutcomes {
            h2: Some("certified"),
            h2_star: None,
            h5: Some("certified"),
            h5_star: Some("certified"),
            h4_ok: Some(true),
            verdict: Some(VerdictKind::NoVerdict),
            blocking_contains: Some("unbounded"),
        }
    } else {
        ExpectedOutcomes {
            h2: Some("certified"),
            h2_star: None,
            h5: Some("certified"),
            h5_star: Some("certified"),
            h4_ok: Some(true),
            verdict: Some(VerdictKind::Permanent),
            blocking_contains: None,
        }
    };
    Ok(ModelFixture {
        name: "example3.3",
        spec,
        exact: None,
        default_init: InitialSegment::Constant(vec![1.0, 1.0]),
        expected,
    })
}

/// Example 3.4 parameters: scalar equation with a birth shape whose slope
/// vanishes at the origin.
#[derive(Debug, Clone)]
pub struct FlatSlopeScalarParams {
    pub c: f64,
    pub mu: f64,
    pub mu1: f64,
    pub tau: f64,
}

impl Default for FlatSlopeScalarParams {
    fn default() -> Self {
        FlatSlopeScalarParams {
            c: 2.0,
            mu: 0.5,
            mu1: 1.1,
            tau: 0.5,
        }
    }
}

/// Scalar equation built so that 1/(t + C) is a solution: all matrix
/// certificates hold, yet the envelope hypothesis fails because the birth
/// shape has zero slope at the origin — and indeed the system is not
/// persistent.
pub fn example_3_4(p: FlatSlopeScalarParams) -> Result<ModelFixture, SystemError> {
    let FlatSlopeScalarParams { c, mu, mu1, tau } = p;
    if !(c > tau.max(1.0)) || !(mu1 > mu + 1.0 / c) {
        return Err(SystemError::Dimension {
            detail: format!(
                "need C > max(tau, 1) and mu1 > mu + 1/C, got C = {c}, tau = {tau}, \
                 mu = {mu}, mu1 = {mu1}"
            ),
        });
    }
    // a(t) = mu (t + C - tau)/tau
    let a = CoefficientFn::new(Expr::rational(
        vec![mu * (c - tau) / tau, mu / tau],
        vec![1.0],
    ));
    // beta(t) = mu1 (t + C)/(t + C - 1), decreasing from mu1 C/(C-1) to mu1
    let beta = CoefficientFn::new(Expr::rational(vec![mu1 * c, mu1], vec![c - 1.0, 1.0]))
        .with_bounds(mu1, Some(mu1 * c / (c - 1.0)), 0.0);
    // d(t) = a(t) + (beta(t) + 1)/(t + C) + mu
    let mid = Expr::rational(
        vec![(mu1 + 1.0) * c - 1.0, mu1 + 1.0],
        poly_mul(&[c - 1.0, 1.0], &[c, 1.0]),
    );
    let d = CoefficientFn::new(Expr::sum(vec![
        Expr::rational(vec![mu * (c - tau) / tau, mu / tau], vec![1.0]),
        mid,
        Expr::constant(mu),
    ]));
    // h(x) = x² below one, one above: zero right slope at the origin
    let h = Expr::Piecewise {
        pieces: vec![Piece {
            until: 1.0,
            expr: Expr::rational(vec![0.0, 0.0, 1.0], vec![1.0]),
        }],
        tail: Box::new(Expr::constant(1.0)),
    };
    let spec = SystemSpec::new(
        1,
        tau,
        0.0,
        vec![d],
        vec![vec![Some(LinearTerm {
            a,
            kernel: DelayKernel::LagPoint {
                lag: CoefficientFn::constant(tau),
            },
        })]],
        vec![Some(Nonlinearity::Birth {
            beta,
            kernel: DelayKernel::InstantPoint,
            shape: BirthShape::Custom {
                h,
                deriv0: 0.0,
                scale: 1.0,
            },
        })],
        vec![None],
    )?;
    spec.validate(0.0, 100.0)?;
    let phi = CoefficientFn::new(Expr::rational(vec![1.0], vec![c, 1.0]));
    Ok(ModelFixture {
        name: "example3.4",
        spec,
        exact: Some(ExactSolution {
            components: vec![phi],
            valid_from: -tau,
        }),
        default_init: InitialSegment::Exprs(vec![Expr::rational(vec![1.0], vec![c, 1.0])]),
        expected: ExpectedOutcomes {
            h2: Some("certified"),
            h2_star: None,
            h5: Some("certified"),
            h5_star: Some("certified"),
            h4_ok: Some(false),
            verdict: Some(VerdictKind::NoVerdict),
            blocking_contains: Some("slope at zero"),
        },
    })
}

/// Example 3.5 parameters: symmetric pair with bounded instantaneous
/// coupling and a birth coefficient growing linearly.
#[derive(Debug, Clone)]
pub struct DecayingPairParams {
    pub c: f64,
    pub mu: f64,
    pub tau: f64,
    pub coupling: f64,
}

impl Default for DecayingPairParams {
    fn default() -> Self {
        DecayingPairParams {
            c: 1.0,
            mu: 1.0,
            tau: 0.5,
            coupling: 1.0,
        }
    }
}

/// Symmetric pair built so that (1/(t+C), 1/(t+C)) is a solution: both
/// additive certificates hold, but the birth coefficient is unbounded, so
/// the permanence criterion cannot fire — and the ratio certificate's
/// margin collapses toward one across the grid.
pub fn example_3_5(p: DecayingPairParams) -> Result<ModelFixture, SystemError> {
    let DecayingPairParams {
        c,
        mu,
        tau,
        coupling,
    } = p;
    if !(0.0 < tau && tau < 1.0) || !(c > tau) || !(mu > 0.0) {
        return Err(SystemError::Dimension {
            detail: format!("need tau in (0,1), C > tau, mu > 0; got tau = {tau}, C = {c}"),
        });
    }
    // d1(t) = mu (t + C)/(1 - tau)
    let d1 = Expr::rational(vec![mu * c / (1.0 - tau), mu / (1.0 - tau)], vec![1.0]);
    // full decay d(t) = coupling + d1(t)
    let d = CoefficientFn::new(Expr::sum(vec![Expr::constant(coupling), d1]));
    // beta(t) = (t + C + 1 - tau)(mu (t+C)² - (1 - tau)) / ((1 - tau)(t + C)²)
    let num: Vec<f64> = poly_mul(
        &[c + 1.0 - tau, 1.0],
        &[mu * c * c - (1.0 - tau), 2.0 * mu * c, mu],
    );
    let den: Vec<f64> = [c * c, 2.0 * c, 1.0]
        .iter()
        .map(|x| x * (1.0 - tau))
        .collect();
    let beta = CoefficientFn::new(Expr::rational(num, den)).with_bounds(1.0, None, 0.0);
    let term = || {
        Some(LinearTerm {
            a: CoefficientFn::constant(coupling),
            kernel: DelayKernel::InstantPoint,
        })
    };
    let birth = || {
        Some(Nonlinearity::Birth {
            beta: beta.clone(),
            kernel: DelayKernel::LagPoint {
                lag: CoefficientFn::constant(tau),
            },
            shape: BirthShape::MackeyGlass {
                c: CoefficientFn::constant(1.0),
                alpha: 1.0,
            },
        })
    };
    let spec = SystemSpec::new(
        2,
        tau,
        0.0,
        vec![d.clone(), d],
        vec![vec![None, term()], vec![term(), None]],
        vec![birth(), birth()],
        vec![None, None],
    )?;
    spec.validate(0.0, 100.0)?;
    let phi = || Expr::rational(vec![1.0], vec![c, 1.0]);
    Ok(ModelFixture {
        name: "example3.5",
        spec,
        exact: Some(ExactSolution {
            components: vec![
                CoefficientFn::new(phi()),
                CoefficientFn::new(phi()),
            ],
            valid_from: -tau,
        }),
        default_init: InitialSegment::Exprs(vec![phi(), phi()]),
        expected: ExpectedOutcomes {
            h2: Some("certified"),
            h2_star: None,
            h5: Some("certified"),
            h5_star: None,
            h4_ok: Some(true),
            verdict: Some(VerdictKind::NoVerdict),
            blocking_contains: Some("not bounded above"),
        },
    })
}

/// Fixture with default parameters for a catalogue id.
pub fn example_fixture(id: ExampleId) -> ModelFixture {
    match id {
        ExampleId::E31 => example_3_1(Default::default()).unwrap(),
        ExampleId::E32 => example_3_2(Default::default()).unwrap(),
        ExampleId::E33 => example_3_3(Default::default()).unwrap(),
        ExampleId::E34 => example_3_4(Default::default()).unwrap(),
        ExampleId::E35 => example_3_5(Default::default()).unwrap(),
    }
}

pub const BUILTIN_NAMES: [&str; 6] = [
    "nicholson2patch",
    "example3.1",
    "example3.2",
    "example3.3",
    "example3.4",
    "example3.5",
];

/// Catalogue lookup used by the CLI.
pub fn builtin(name: &str) -> Option<ModelFixture> {
    match name {
        "nicholson2patch" => Some(two_patch_nicholson()),
        other => other.parse::<ExampleId>().ok().map(example_fixture),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::{FnHistory, History};

    #[test]
    fn two_patch_equilibrium_is_a_fixed_point() {
        // oracle: bisection on 0.75 x = 2 x e^{-x}, i.e. e^{-x} = 0.375
        let mut lo = 0.1f64;
        let mut hi = 3.0f64;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if (-mid).exp() > 0.375 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let x_star = 0.5 * (lo + hi);
        assert!((x_star - (8.0f64 / 3.0).ln()).abs() < 1e-10);

        let sys = two_patch_nicholson().spec;
        let hist = FnHistory {
            n: 2,
            f: move |_, _| x_star,
        };
        let rhs = sys.rhs_eval(5.0, &hist).unwrap();
        assert!(rhs[0].abs() < 1e-12 && rhs[1].abs() < 1e-12, "{rhs:?}");
    }

    #[test]
    fn unstable_pair_decay_minus_coupling_is_mu() {
        let f = example_3_1(Default::default()).unwrap();
        let a = f.spec.linear[0][1].as_ref().unwrap();
        for &t in &[0.0, 1.0, 10.0, 500.0] {
            let d = f.spec.d[0].eval(t).unwrap();
            let av = a.a.eval(t).unwrap();
            let gap = d - av - 1.0; // mu = 1
            let tiny = 1.0 / ((t + 2.0) * (t + 3.0));
            assert!((gap - tiny).abs() < 1e-9 * (1.0 + d.abs()), "t={t} gap={gap}");
        }
    }

    #[test]
    fn exact_solutions_satisfy_their_systems() {
        for f in [
            example_3_1(Default::default()).unwrap(),
            example_3_4(Default::default()).unwrap(),
            example_3_5(Default::default()).unwrap(),
        ] {
            let sol = f.exact.as_ref().unwrap();
            let r =
                crate::experiments::verify_exact_solution(&f.spec, sol, 1.0, 50.0, 200).unwrap();
            assert!(
                r.max_residual < 1e-9,
                "{}: residual {}",
                f.name,
                r.max_residual
            );
        }
    }

    #[test]
    fn flat_slope_scalar_parameter_constraints() {
        let bad = example_3_4(FlatSlopeScalarParams {
            mu1: 0.6,
            ..Default::default()
        });
        assert!(bad.is_err());
    }

    #[test]
    fn power_family_matrix_is_m_matrix_with_defaults() {
        let p = PowerMatrixFamilyParams::default();
        let n = power_family_matrix(&p);
        assert_eq!(n[0][0], 2.0);
        assert_eq!(n[0][1], -0.5);
        let w = crate::hypotheses::mmatrix_witness(&n).unwrap().unwrap();
        assert!(w.u.iter().all(|&x| x > 0.0));
    }

    #[test]
    fn discrete_delay_nicholson_via_point_terms() {
        // two discrete-lag birth terms on one component
        let births = vec![vec![
            BirthTermSpec {
                b: CoefficientFn::constant(1.0),
                lambda: None,
                lag: CoefficientFn::constant(0.5),
                c: CoefficientFn::constant(1.0).with_bounds(1.0, Some(1.0), 0.0),
            },
            BirthTermSpec {
                b: CoefficientFn::constant(1.0),
                lambda: None,
                lag: CoefficientFn::constant(1.0),
                c: CoefficientFn::constant(2.0).with_bounds(2.0, Some(2.0), 0.0),
            },
        ]];
        let sys = nicholson_system(
            vec![CoefficientFn::constant(1.0)],
            vec![vec![None]],
            births,
            1.0,
            0.0,
        )
        .unwrap();
        // beta is the sum of the point coefficients
        let beta = sys.beta_of().unwrap()[0].as_ref().unwrap().eval(3.0).unwrap();
        assert!((beta - 2.0).abs() < 1e-12);
        // worst-case envelope constant is the larger declared bound
        let env = sys.lower_envelope(1e12).unwrap()[0].clone().unwrap();
        assert!((env.monotone_cap - 0.5).abs() < 1e-12);
        // rhs at constant history: -x + x e^{-x} + x e^{-2x}
        let hist = FnHistory { n: 1, f: |_, _| 1.0 };
        let rhs = sys.rhs_eval(2.0, &hist).unwrap()[0];
        let want = -1.0 + (-1.0f64).exp() + (-2.0f64).exp();
        assert!((rhs - want).abs() < 1e-12);
    }

    #[test]
    fn mackey_glass_exponent_is_validated() {
        let bad = mackey_glass_system(
            vec![CoefficientFn::constant(1.0)],
            vec![vec![None]],
            vec![vec![BirthTermSpec {
                b: CoefficientFn::constant(1.0),
                lambda: None,
                lag: CoefficientFn::constant(0.5),
                c: CoefficientFn::constant(1.0),
            }]],
            vec![0.5],
            1.0,
            0.0,
        );
        assert!(matches!(bad, Err(SystemError::BadExponent { .. })));
    }

    #[test]
    fn builtin_catalogue_resolves() {
        for name in BUILTIN_NAMES {
            assert!(builtin(name).is_some(), "{name} missing");
        }
        assert!(builtin("nope").is_none());
    }

    #[test]
    fn rhs_matches_closed_form_derivative_at_exact_history() {
        // symmetric-pair fixture: rhs at the exact history equals the
        // analytic derivative (-1/(t+C)², both components)
        let f = example_3_5(Default::default()).unwrap();
        let c = 1.0;
        let hist = FnHistory {
            n: 2,
            f: move |_, t: f64| 1.0 / (t + c),
        };
        for &t in &[1.0, 5.0, 42.0] {
            let rhs = f.spec.rhs_eval(t, &hist).unwrap();
            let want = -1.0 / ((t + c) * (t + c));
            assert!((rhs[0] - want).abs() < 1e-9, "t={t}: {} vs {want}", rhs[0]);
            assert!((rhs[1] - want).abs() < 1e-9);
        }
    }
}
