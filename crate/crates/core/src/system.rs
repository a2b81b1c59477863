//! The system class: diagonal decay, nonnegative delayed linear coupling in
//! Riesz form, nonlinear birth terms with positive envelopes, and optional
//! strictly sublinear harvesting.
//!
//! A system reads, component by component,
//!
//! ```text
//! x_i'(t) = -d_i(t) x_i(t) + Σ_j a_ij(t) ∫ x_j(t+s) dν_ij(t,s)
//!           + f_i(t, x_i over [t-τ, t]) - K_i(t, x_i(t))
//! ```
//!
//! with every kernel ν normalized to total mass one, so `a_ij(t)` is the
//! operator norm of the coupling functional.

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::quad;
use crate::timefn::{CoefficientFn, Expr, TimeFnError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HistoryError {
    #[error("history requested at t = {t}, outside the covered span [{lo}, {hi}]")]
    Gap { t: f64, lo: f64, hi: f64 },
    #[error("history component {component} out of range (n = {n})")]
    Component { component: usize, n: usize },
}

#[derive(Debug, Error)]
pub enum SystemError {
    #[error(transparent)]
    Time(#[from] TimeFnError),
    #[error(transparent)]
    History(#[from] HistoryError),
    #[error("negative history value {value:.3e} for component {component} near t = {t}")]
    NegativeHistory {
        component: usize,
        t: f64,
        value: f64,
    },
    #[error("kernel mass at t = {t} is {mass}, expected 1 within {tol:.1e}")]
    KernelMass { t: f64, mass: f64, tol: f64 },
    #[error("kernel lag/support {value} at t = {t} escapes [0, {tau}]")]
    LagOutOfRange { t: f64, value: f64, tau: f64 },
    #[error("decay coefficient d_{index} must be positive, got {value} at t = {t}")]
    NonPositiveDecay { index: usize, t: f64, value: f64 },
    #[error("coupling coefficient a_{i}{j} must be nonnegative, got {value} at t = {t}")]
    NegativeCoupling {
        i: usize,
        j: usize,
        t: f64,
        value: f64,
    },
    #[error("birth coefficient for component {component} must be positive, got {value} at t = {t}")]
    NonPositiveBirth {
        component: usize,
        t: f64,
        value: f64,
    },
    #[error("component {component} mixes birth shape families; no common envelope")]
    MixedShapes { component: usize },
    #[error("component {component} needs a declared upper bound on c to build its envelope")]
    MissingShapeBound { component: usize },
    #[error("mackey-glass exponent must satisfy alpha >= 1, got {alpha}")]
    BadExponent { alpha: f64 },
    #[error("harvest coefficient must carry declared finite bounds")]
    HarvestUnbounded,
    #[error("harvest shape must vanish at zero with zero right slope; {detail}")]
    BadHarvestShape { detail: String },
    #[error("scaling vector must be positive componentwise")]
    NonPositiveScale,
    #[error("clamp point {m} exceeds the monotone cap {cap} of component {component}")]
    ClampAboveCap { component: usize, m: f64, cap: f64 },
    #[error("clamp window needs 0 < m <= M, got m = {m}, M = {mm}")]
    BadClampWindow { m: f64, mm: f64 },
    #[error("envelope for component {component} has zero slope at the origin; no normalized form")]
    UnnormalizableEnvelope { component: usize },
    #[error("dimension mismatch: {detail}")]
    Dimension { detail: String },
}

/// Read access to one solution segment: values on `[t-τ, t]` per component.
pub trait History {
    fn dim(&self) -> usize;
    fn value(&self, component: usize, t: f64) -> Result<f64, HistoryError>;
    /// Minimum of the component over `[t_lo, t_hi]`.
    fn min_on(&self, component: usize, t_lo: f64, t_hi: f64) -> Result<f64, HistoryError>;
}

/// Closure-backed history for tests and residual oracles.
pub struct FnHistory<F: Fn(usize, f64) -> f64> {
    pub n: usize,
    pub f: F,
}

impl<F: Fn(usize, f64) -> f64> History for FnHistory<F> {
    fn dim(&self) -> usize {
        self.n
    }

    fn value(&self, component: usize, t: f64) -> Result<f64, HistoryError> {
        if component >= self.n {
            return Err(HistoryError::Component {
                component,
                n: self.n,
            });
        }
        Ok((self.f)(component, t))
    }

    fn min_on(&self, component: usize, t_lo: f64, t_hi: f64) -> Result<f64, HistoryError> {
        let f = |t: f64| self.value(component, t);
        crate::numerics::scan_golden_min(t_lo, t_hi, 129, f)
    }
}

/// History seen through a positive componentwise rescaling `x ↦ factor·x`.
pub struct ScaledHistory<'a> {
    pub inner: &'a dyn History,
    pub factors: Vec<f64>,
}

impl History for ScaledHistory<'_> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn value(&self, component: usize, t: f64) -> Result<f64, HistoryError> {
        Ok(self.inner.value(component, t)? * self.factors[component])
    }

    fn min_on(&self, component: usize, t_lo: f64, t_hi: f64) -> Result<f64, HistoryError> {
        Ok(self.inner.min_on(component, t_lo, t_hi)? * self.factors[component])
    }
}

const KERNEL_MASS_TOL: f64 = 1e-10;

/// Normalized delay measure ν(t, ·) on `[-τ, 0]`.
#[derive(Debug, Clone, PartialEq)]
pub enum DelayKernel {
    /// Point mass at lag zero: reads the instantaneous value.
    InstantPoint,
    /// Point mass at a (possibly time-varying) lag.
    LagPoint { lag: CoefficientFn },
    /// Uniform density over `[-width(t), 0]`; normalized for every width.
    UniformDensity { width: CoefficientFn },
    /// General density on `[-support, 0]`, stored pre-normalized.
    Density { shape: Expr, support: f64 },
}

impl DelayKernel {
    /// Verify normalization by quadrature of the kernel alone.
    pub fn mass(&self, t: f64) -> Result<f64, SystemError> {
        match self {
            DelayKernel::InstantPoint | DelayKernel::LagPoint { .. } => Ok(1.0),
            DelayKernel::UniformDensity { width } => {
                let w = width.eval(t)?;
                if w == 0.0 {
                    return Ok(1.0);
                }
                Ok(quad::integrate(-w, 0.0, |_s| {
                    Ok::<f64, SystemError>(1.0 / w)
                })?)
            }
            DelayKernel::Density { shape, support } => {
                Ok(quad::integrate_composite(-support, 0.0, 4, |s| {
                    shape.eval(s).map_err(SystemError::from)
                })?)
            }
        }
    }

    /// Largest time offset into the past the kernel can read at time `t`.
    pub fn reach(&self, t: f64) -> Result<f64, SystemError> {
        match self {
            DelayKernel::InstantPoint => Ok(0.0),
            DelayKernel::LagPoint { lag } => Ok(lag.eval(t)?),
            DelayKernel::UniformDensity { width } => Ok(width.eval(t)?),
            DelayKernel::Density { support, .. } => Ok(*support),
        }
    }

    pub fn is_instant(&self) -> bool {
        matches!(self, DelayKernel::InstantPoint)
    }

    /// ∫ read(t+s) dν(t, s), with `read` an absolute-time accessor.
    pub fn apply<E: From<SystemError> + From<TimeFnError>>(
        &self,
        t: f64,
        mut read: impl FnMut(f64) -> Result<f64, E>,
    ) -> Result<f64, E> {
        match self {
            DelayKernel::InstantPoint => read(t),
            DelayKernel::LagPoint { lag } => {
                let l = lag.eval(t).map_err(E::from)?;
                read(t - l)
            }
            DelayKernel::UniformDensity { width } => {
                let w = width.eval(t).map_err(E::from)?;
                if w == 0.0 {
                    return read(t);
                }
                let v = quad::integrate(t - w, t, &mut read)?;
                Ok(v / w)
            }
            DelayKernel::Density { shape, support } => {
                quad::integrate(-support, 0.0, |s| {
                    let k = shape.eval(s).map_err(|e| E::from(SystemError::from(e)))?;
                    Ok(k * read(t + s)?)
                })
            }
        }
    }

    pub fn validate(&self, tau: f64, t_lo: f64, t_hi: f64) -> Result<(), SystemError> {
        let samples = 65;
        match self {
            DelayKernel::InstantPoint => Ok(()),
            DelayKernel::LagPoint { lag: c } | DelayKernel::UniformDensity { width: c } => {
                for i in 0..samples {
                    let t = t_lo + (t_hi - t_lo) * i as f64 / (samples - 1) as f64;
                    let v = c.eval(t)?;
                    if !(0.0..=tau + 1e-12).contains(&v) {
                        return Err(SystemError::LagOutOfRange { t, value: v, tau });
                    }
                }
                Ok(())
            }
            DelayKernel::Density { support, .. } => {
                if !(0.0..=tau + 1e-12).contains(support) {
                    return Err(SystemError::LagOutOfRange {
                        t: t_lo,
                        value: *support,
                        tau,
                    });
                }
                let mass = self.mass(t_lo)?;
                if (mass - 1.0).abs() > KERNEL_MASS_TOL {
                    return Err(SystemError::KernelMass {
                        t: t_lo,
                        mass,
                        tol: KERNEL_MASS_TOL,
                    });
                }
                Ok(())
            }
        }
    }
}

/// One nonnegative coupling functional `φ ↦ a(t)·∫φ dν(t,·)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearTerm {
    pub a: CoefficientFn,
    pub kernel: DelayKernel,
}

/// Pointwise birth response `g(t, x)`.
#[derive(Debug, Clone, PartialEq)]
pub enum BirthShape {
    /// `x e^{-c(t) x}` — unimodal with unit slope at the origin.
    Nicholson { c: CoefficientFn },
    /// `x / (1 + c(t) x^alpha)`, `alpha >= 1`.
    MackeyGlass { c: CoefficientFn, alpha: f64 },
    /// Builder-supplied shape `h(scale·x)/scale` with declared slope at 0+.
    Custom { h: Expr, deriv0: f64, scale: f64 },
}

fn check_nonnegative_state(component: usize, t: f64, x: f64) -> Result<f64, SystemError> {
    if x < 0.0 {
        if x > -1e-12 {
            return Ok(0.0);
        }
        return Err(SystemError::NegativeHistory {
            component,
            t,
            value: x,
        });
    }
    Ok(x)
}

impl BirthShape {
    pub fn response(&self, t_coef: f64, x: f64) -> Result<f64, SystemError> {
        match self {
            BirthShape::Nicholson { c } => {
                let cv = c.eval(t_coef)?;
                Ok(x * (-cv * x).exp())
            }
            BirthShape::MackeyGlass { c, alpha } => {
                let cv = c.eval(t_coef)?;
                Ok(x / (1.0 + cv * x.powf(*alpha)))
            }
            BirthShape::Custom { h, scale, .. } => Ok(h.eval(scale * x)? / scale),
        }
    }

    /// Shape after the variable rescaling `x ↦ v·x` of the whole component.
    pub fn rescaled(&self, v: f64) -> BirthShape {
        match self {
            BirthShape::Nicholson { c } => BirthShape::Nicholson { c: c.scaled(v) },
            BirthShape::MackeyGlass { c, alpha } => BirthShape::MackeyGlass {
                c: c.scaled(v.powf(*alpha)),
                alpha: *alpha,
            },
            BirthShape::Custom { h, deriv0, scale } => BirthShape::Custom {
                h: h.clone(),
                deriv0: *deriv0,
                scale: scale * v,
            },
        }
    }

    fn declared_c_hi(&self) -> Option<f64> {
        match self {
            BirthShape::Nicholson { c } | BirthShape::MackeyGlass { c, .. } => {
                c.declared_bounds().and_then(|b| b.hi)
            }
            BirthShape::Custom { .. } => None,
        }
    }

    fn declared_c_lo(&self) -> Option<f64> {
        match self {
            BirthShape::Nicholson { c } | BirthShape::MackeyGlass { c, .. } => c
                .declared_bounds()
                .map(|b| b.lo)
                .filter(|&lo| lo > 0.0),
            BirthShape::Custom { .. } => None,
        }
    }

    /// A uniform upper bound on the response, when one is derivable.
    pub fn sup_bound(&self) -> Option<f64> {
        match self {
            BirthShape::Nicholson { .. } => {
                // x e^{-cx} <= 1/(e c_lo)
                self.declared_c_lo()
                    .map(|lo| 1.0 / (std::f64::consts::E * lo))
            }
            BirthShape::MackeyGlass { alpha, .. } => {
                let lo = self.declared_c_lo()?;
                if *alpha == 1.0 {
                    Some(1.0 / lo)
                } else {
                    // maximum of x/(1 + lo x^alpha) at x* = (1/(lo (alpha-1)))^{1/alpha}
                    let xs = (1.0 / (lo * (alpha - 1.0))).powf(1.0 / alpha);
                    Some(xs * (alpha - 1.0) / alpha)
                }
            }
            BirthShape::Custom { h, scale, .. } => {
                // sampled sup over a wide logarithmic grid; a heuristic, flagged upstream
                let mut sup: f64 = 0.0;
                let mut x = 1e-6;
                while x <= 1e8 {
                    sup = sup.max(h.eval(scale * x).ok()? / scale);
                    x *= 1.3;
                }
                Some(sup)
            }
        }
    }
}

/// Inner weighting of one distributed birth term.
#[derive(Debug, Clone, PartialEq)]
pub enum TermWeight {
    /// `∫_{t-lag(t)}^{t} λ(s) g(·, x(s)) ds`
    Integral {
        lambda: CoefficientFn,
        lag: CoefficientFn,
    },
    /// `g(·, x(t - lag(t)))`
    Point { lag: CoefficientFn },
}

/// Where the shape's own coefficient is evaluated inside a distributed
/// integral: at the integration variable (default) or at the current time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ShapeTime {
    #[default]
    IntegrationVariable,
    CurrentTime,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistributedTerm {
    pub b: CoefficientFn,
    pub weight: TermWeight,
    pub shape: BirthShape,
    pub shape_time: ShapeTime,
}

/// Per-component nonlinear birth term.
pub enum Nonlinearity {
    /// `beta(t) · ∫ g(t, x(t+s)) dν(t, s)`
    Birth {
        beta: CoefficientFn,
        kernel: DelayKernel,
        shape: BirthShape,
    },
    /// `Σ_k b_k(t) · (integral or point weighting of g_k)`
    DistributedBirth { terms: Vec<DistributedTerm> },
    /// Arbitrary evaluator with a declared lower envelope. Not serializable.
    CustomEnvelope {
        eval: Arc<dyn Fn(f64, &dyn History, usize) -> Result<f64, SystemError> + Send + Sync>,
        beta: CoefficientFn,
        h_minus: Expr,
        deriv0: f64,
    },
    /// `beta(t) · H(min of the segment)` with `H` the clamped envelope;
    /// the birth term of cooperative lower systems. Not serializable.
    ClampedMinBirth {
        beta: BetaFn,
        shape: EnvelopeShape,
        clamp: f64,
    },
}

impl Clone for Nonlinearity {
    fn clone(&self) -> Self {
        match self {
            Nonlinearity::Birth {
                beta,
                kernel,
                shape,
            } => Nonlinearity::Birth {
                beta: beta.clone(),
                kernel: kernel.clone(),
                shape: shape.clone(),
            },
            Nonlinearity::DistributedBirth { terms } => Nonlinearity::DistributedBirth {
                terms: terms.clone(),
            },
            Nonlinearity::CustomEnvelope {
                eval,
                beta,
                h_minus,
                deriv0,
            } => Nonlinearity::CustomEnvelope {
                eval: eval.clone(),
                beta: beta.clone(),
                h_minus: h_minus.clone(),
                deriv0: *deriv0,
            },
            Nonlinearity::ClampedMinBirth { beta, shape, clamp } => Nonlinearity::ClampedMinBirth {
                beta: beta.clone(),
                shape: shape.clone(),
                clamp: *clamp,
            },
        }
    }
}

impl fmt::Debug for Nonlinearity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Nonlinearity::Birth { beta, kernel, .. } => f
                .debug_struct("Birth")
                .field("beta", beta)
                .field("kernel", kernel)
                .finish_non_exhaustive(),
            Nonlinearity::DistributedBirth { terms } => f
                .debug_struct("DistributedBirth")
                .field("terms", &terms.len())
                .finish(),
            Nonlinearity::CustomEnvelope { beta, .. } => f
                .debug_struct("CustomEnvelope")
                .field("beta", beta)
                .finish_non_exhaustive(),
            Nonlinearity::ClampedMinBirth { clamp, .. } => f
                .debug_struct("ClampedMinBirth")
                .field("clamp", clamp)
                .finish_non_exhaustive(),
        }
    }
}

/// Strictly sublinear negative feedback `K(t, x) = κ(t)·g(scale·x)/scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct HarvestTerm {
    pub kappa: CoefficientFn,
    pub g: Expr,
    pub g_scale: f64,
}

impl HarvestTerm {
    pub fn new(kappa: CoefficientFn, g: Expr) -> Result<Self, SystemError> {
        let term = HarvestTerm {
            kappa,
            g,
            g_scale: 1.0,
        };
        term.validate()?;
        Ok(term)
    }

    pub fn eval(&self, t: f64, x: f64) -> Result<f64, SystemError> {
        Ok(self.kappa.eval(t)? * self.g.eval(self.g_scale * x)? / self.g_scale)
    }

    pub fn validate(&self) -> Result<(), SystemError> {
        match self.kappa.declared_bounds() {
            Some(b) if b.hi.is_some() => {}
            _ => return Err(SystemError::HarvestUnbounded),
        }
        let g0 = self.g.eval(0.0)?;
        if g0.abs() > 1e-12 {
            return Err(SystemError::BadHarvestShape {
                detail: format!("g(0) = {g0}"),
            });
        }
        let slope = self.g.eval(1e-7)? / 1e-7;
        if slope.abs() > 1e-3 {
            return Err(SystemError::BadHarvestShape {
                detail: format!("right slope at 0 is {slope:.3e}"),
            });
        }
        for i in 0..64 {
            let x = 10.0 * (i as f64 + 1.0) / 64.0;
            if self.g.eval(self.g_scale * x)? < -1e-12 {
                return Err(SystemError::BadHarvestShape {
                    detail: format!("g({x}) < 0"),
                });
            }
        }
        Ok(())
    }

    fn rescaled(&self, v: f64) -> HarvestTerm {
        HarvestTerm {
            kappa: self.kappa.clone(),
            g: self.g.clone(),
            g_scale: self.g_scale * v,
        }
    }
}

/// Envelope coefficient β_i(t); closed form or quadrature-backed.
#[derive(Debug, Clone)]
pub enum BetaFn {
    Closed { f: CoefficientFn, factor: f64 },
    /// Σ_k b_k(t) · ∫_{t-lag_k(t)}^t λ_k(s) ds (point terms contribute b_k).
    Integrated {
        terms: Vec<(CoefficientFn, Option<(CoefficientFn, CoefficientFn)>)>,
        factor: f64,
    },
}

impl BetaFn {
    pub fn eval(&self, t: f64) -> Result<f64, SystemError> {
        match self {
            BetaFn::Closed { f, factor } => Ok(factor * f.eval(t)?),
            BetaFn::Integrated { terms, factor } => {
                let mut acc = 0.0;
                for (b, inner) in terms {
                    let bv = b.eval(t)?;
                    match inner {
                        None => acc += bv,
                        Some((lambda, lag)) => {
                            let l = lag.eval(t)?;
                            let integral = quad::integrate(t - l, t, |s| {
                                lambda.eval(s).map_err(SystemError::from)
                            })?;
                            acc += bv * integral;
                        }
                    }
                }
                Ok(factor * acc)
            }
        }
    }

    /// Declared bounds carried through when derivable.
    pub fn declared(&self) -> Option<(f64, Option<f64>, f64)> {
        match self {
            BetaFn::Closed { f, factor } => f
                .declared_bounds()
                .map(|b| (factor * b.lo, b.hi.map(|h| factor * h), b.valid_from)),
            BetaFn::Integrated { .. } => None,
        }
    }

    pub fn with_factor(&self, extra: f64) -> BetaFn {
        match self {
            BetaFn::Closed { f, factor } => BetaFn::Closed {
                f: f.clone(),
                factor: factor * extra,
            },
            BetaFn::Integrated { terms, factor } => BetaFn::Integrated {
                terms: terms.clone(),
                factor: factor * extra,
            },
        }
    }
}

/// Worst-case lower shape h⁻ backing the envelope inequality.
#[derive(Debug, Clone)]
pub enum EnvelopeShapeKind {
    Nicholson { cbar: f64 },
    MackeyGlass { cbar: f64, alpha: f64 },
    Custom { h: Expr, scale: f64 },
}

#[derive(Debug, Clone)]
pub struct EnvelopeShape {
    pub kind: EnvelopeShapeKind,
    /// Right slope of the raw shape at the origin.
    pub deriv0: f64,
}

impl EnvelopeShape {
    pub fn eval_raw(&self, x: f64) -> Result<f64, SystemError> {
        match &self.kind {
            EnvelopeShapeKind::Nicholson { cbar } => Ok(x * (-cbar * x).exp()),
            EnvelopeShapeKind::MackeyGlass { cbar, alpha } => {
                Ok(x / (1.0 + cbar * x.powf(*alpha)))
            }
            EnvelopeShapeKind::Custom { h, scale } => Ok(h.eval(scale * x)? / scale),
        }
    }

    /// Shape normalized to unit slope at the origin. Requires `deriv0 > 0`.
    pub fn eval_normalized(&self, x: f64) -> Result<f64, SystemError> {
        Ok(self.eval_raw(x)? / self.deriv0)
    }

    /// Largest m with the shape increasing on (0, m].
    pub fn monotone_cap(&self, fallback: f64) -> f64 {
        match &self.kind {
            EnvelopeShapeKind::Nicholson { cbar } => 1.0 / cbar,
            EnvelopeShapeKind::MackeyGlass { cbar, alpha } => {
                if *alpha <= 1.0 {
                    fallback
                } else {
                    (1.0 / (cbar * (alpha - 1.0))).powf(1.0 / alpha)
                }
            }
            EnvelopeShapeKind::Custom { .. } => {
                // scan for the first decrease, then refine
                let mut prev_x = 0.0;
                let mut prev_v = 0.0;
                let mut x = 1e-4;
                while x <= fallback {
                    let v = match self.eval_raw(x) {
                        Ok(v) => v,
                        Err(_) => return prev_x,
                    };
                    if v < prev_v {
                        return crate::numerics::bisect_increase_edge(
                            |u| self.eval_raw(u).unwrap_or(f64::NEG_INFINITY),
                            prev_x.max(1e-8),
                            x,
                        );
                    }
                    prev_x = x;
                    prev_v = v;
                    x *= 1.25;
                }
                fallback
            }
        }
    }

    /// Limit inferior of the normalized shape as x → ∞ (sampled for
    /// custom shapes).
    pub fn liminf_at_infinity(&self) -> f64 {
        match &self.kind {
            EnvelopeShapeKind::Nicholson { .. } => 0.0,
            EnvelopeShapeKind::MackeyGlass { cbar, alpha } => {
                if *alpha == 1.0 {
                    1.0 / (cbar * self.deriv0)
                } else {
                    0.0
                }
            }
            EnvelopeShapeKind::Custom { .. } => [1e4, 1e6, 1e8]
                .iter()
                .map(|&x| self.eval_normalized(x).unwrap_or(0.0))
                .fold(f64::INFINITY, f64::min),
        }
    }

    pub fn rescaled(&self, v: f64) -> EnvelopeShape {
        let kind = match &self.kind {
            EnvelopeShapeKind::Nicholson { cbar } => EnvelopeShapeKind::Nicholson { cbar: cbar * v },
            EnvelopeShapeKind::MackeyGlass { cbar, alpha } => EnvelopeShapeKind::MackeyGlass {
                cbar: cbar * v.powf(*alpha),
                alpha: *alpha,
            },
            EnvelopeShapeKind::Custom { h, scale } => EnvelopeShapeKind::Custom {
                h: h.clone(),
                scale: scale * v,
            },
        };
        EnvelopeShape {
            kind,
            deriv0: self.deriv0,
        }
    }
}

/// The (β_i, h_i⁻) data of one component's birth term.
#[derive(Debug, Clone)]
pub struct Envelope {
    /// β, already normalized (multiplied by the raw slope) when that slope
    /// is positive; raw otherwise.
    pub beta: BetaFn,
    pub shape: EnvelopeShape,
    pub monotone_cap: f64,
    /// Raw slope of the builder shape at the origin; the envelope
    /// hypothesis needs this positive.
    pub deriv0_raw: f64,
}

pub const DEFAULT_MONOTONE_CAP: f64 = 1e12;

impl Nonlinearity {
    pub fn eval(
        &self,
        component: usize,
        t: f64,
        tau: f64,
        hist: &dyn History,
    ) -> Result<f64, SystemError> {
        match self {
            Nonlinearity::Birth {
                beta,
                kernel,
                shape,
            } => {
                let b = beta.eval(t)?;
                let v = kernel.apply::<SystemError>(t, |s| {
                    let x = check_nonnegative_state(component, s, hist.value(component, s)?)?;
                    shape.response(t, x)
                })?;
                Ok(b * v)
            }
            Nonlinearity::DistributedBirth { terms } => {
                let mut acc = 0.0;
                for term in terms {
                    let b = term.b.eval(t)?;
                    match &term.weight {
                        TermWeight::Point { lag } => {
                            let l = lag.eval(t)?;
                            let x = check_nonnegative_state(
                                component,
                                t - l,
                                hist.value(component, t - l)?,
                            )?;
                            let t_shape = match term.shape_time {
                                ShapeTime::IntegrationVariable => t - l,
                                ShapeTime::CurrentTime => t,
                            };
                            acc += b * term.shape.response(t_shape, x)?;
                        }
                        TermWeight::Integral { lambda, lag } => {
                            let l = lag.eval(t)?;
                            let v = quad::integrate(t - l, t, |s| {
                                let x = check_nonnegative_state(
                                    component,
                                    s,
                                    hist.value(component, s)?,
                                )?;
                                let t_shape = match term.shape_time {
                                    ShapeTime::IntegrationVariable => s,
                                    ShapeTime::CurrentTime => t,
                                };
                                Ok::<f64, SystemError>(lambda.eval(s)? * term.shape.response(t_shape, x)?)
                            })?;
                            acc += b * v;
                        }
                    }
                }
                Ok(acc)
            }
            Nonlinearity::CustomEnvelope { eval, .. } => eval(t, hist, component),
            Nonlinearity::ClampedMinBirth { beta, shape, clamp } => {
                let u = hist.min_on(component, t - tau, t)?;
                let u = check_nonnegative_state(component, t, u)?;
                let arg = u.min(*clamp);
                let h = shape.eval_normalized(arg)?.min(arg);
                Ok(beta.eval(t)? * h)
            }
        }
    }

    /// Envelope coefficient β_i before normalization.
    pub fn beta_raw(&self) -> BetaFn {
        match self {
            Nonlinearity::Birth { beta, .. } => BetaFn::Closed {
                f: beta.clone(),
                factor: 1.0,
            },
            Nonlinearity::DistributedBirth { terms } => BetaFn::Integrated {
                terms: terms
                    .iter()
                    .map(|term| {
                        let inner = match &term.weight {
                            TermWeight::Point { .. } => None,
                            TermWeight::Integral { lambda, lag } => {
                                Some((lambda.clone(), lag.clone()))
                            }
                        };
                        (term.b.clone(), inner)
                    })
                    .collect(),
                factor: 1.0,
            },
            Nonlinearity::CustomEnvelope { beta, .. } => BetaFn::Closed {
                f: beta.clone(),
                factor: 1.0,
            },
            Nonlinearity::ClampedMinBirth { beta, .. } => beta.clone(),
        }
    }

    fn shapes(&self) -> Vec<&BirthShape> {
        match self {
            Nonlinearity::Birth { shape, .. } => vec![shape],
            Nonlinearity::DistributedBirth { terms } => terms.iter().map(|t| &t.shape).collect(),
            _ => vec![],
        }
    }

    /// Derive the (β, h⁻) envelope from worst-case declared constants.
    pub fn envelope(&self, component: usize, cap_fallback: f64) -> Result<Envelope, SystemError> {
        let (shape, deriv0_raw) = match self {
            Nonlinearity::Birth { .. } | Nonlinearity::DistributedBirth { .. } => {
                let shapes = self.shapes();
                let first = shapes[0];
                let same_family = shapes.iter().all(|s| {
                    std::mem::discriminant(*s) == std::mem::discriminant(first)
                        && match (s, first) {
                            (
                                BirthShape::MackeyGlass { alpha: a1, .. },
                                BirthShape::MackeyGlass { alpha: a2, .. },
                            ) => a1 == a2,
                            _ => true,
                        }
                });
                if !same_family {
                    return Err(SystemError::MixedShapes { component });
                }
                match first {
                    BirthShape::Nicholson { .. } => {
                        let cbar = shapes
                            .iter()
                            .map(|s| s.declared_c_hi())
                            .collect::<Option<Vec<_>>>()
                            .ok_or(SystemError::MissingShapeBound { component })?
                            .into_iter()
                            .fold(f64::NEG_INFINITY, f64::max);
                        (
                            EnvelopeShape {
                                kind: EnvelopeShapeKind::Nicholson { cbar },
                                deriv0: 1.0,
                            },
                            1.0,
                        )
                    }
                    BirthShape::MackeyGlass { alpha, .. } => {
                        let cbar = shapes
                            .iter()
                            .map(|s| s.declared_c_hi())
                            .collect::<Option<Vec<_>>>()
                            .ok_or(SystemError::MissingShapeBound { component })?
                            .into_iter()
                            .fold(f64::NEG_INFINITY, f64::max);
                        (
                            EnvelopeShape {
                                kind: EnvelopeShapeKind::MackeyGlass {
                                    cbar,
                                    alpha: *alpha,
                                },
                                deriv0: 1.0,
                            },
                            1.0,
                        )
                    }
                    BirthShape::Custom { h, deriv0, scale } => (
                        EnvelopeShape {
                            kind: EnvelopeShapeKind::Custom {
                                h: h.clone(),
                                scale: *scale,
                            },
                            deriv0: if *deriv0 > 0.0 { *deriv0 } else { 1.0 },
                        },
                        *deriv0,
                    ),
                }
            }
            Nonlinearity::CustomEnvelope {
                h_minus, deriv0, ..
            } => (
                EnvelopeShape {
                    kind: EnvelopeShapeKind::Custom {
                        h: h_minus.clone(),
                        scale: 1.0,
                    },
                    deriv0: if *deriv0 > 0.0 { *deriv0 } else { 1.0 },
                },
                *deriv0,
            ),
            Nonlinearity::ClampedMinBirth { beta, shape, .. } => {
                return Ok(Envelope {
                    beta: beta.clone(),
                    shape: shape.clone(),
                    monotone_cap: shape.monotone_cap(cap_fallback),
                    deriv0_raw: shape.deriv0,
                });
            }
        };

        // Normalize so the slope at the origin is one (possible only for a
        // positive raw slope; otherwise keep the raw pair and let the
        // envelope hypothesis fail downstream).
        let beta_raw = self.beta_raw();
        let beta = if deriv0_raw > 0.0 {
            beta_raw.with_factor(deriv0_raw)
        } else {
            beta_raw
        };
        let cap = shape.monotone_cap(cap_fallback);
        Ok(Envelope {
            beta,
            shape,
            monotone_cap: cap,
            deriv0_raw,
        })
    }

    fn rescaled(&self, v: f64) -> Nonlinearity {
        match self {
            Nonlinearity::Birth {
                beta,
                kernel,
                shape,
            } => Nonlinearity::Birth {
                beta: beta.clone(),
                kernel: kernel.clone(),
                shape: shape.rescaled(v),
            },
            Nonlinearity::DistributedBirth { terms } => Nonlinearity::DistributedBirth {
                terms: terms
                    .iter()
                    .map(|t| DistributedTerm {
                        b: t.b.clone(),
                        weight: t.weight.clone(),
                        shape: t.shape.rescaled(v),
                        shape_time: t.shape_time,
                    })
                    .collect(),
            },
            Nonlinearity::CustomEnvelope {
                eval,
                beta,
                h_minus,
                deriv0,
            } => {
                let inner = eval.clone();
                let factor = v;
                Nonlinearity::CustomEnvelope {
                    eval: Arc::new(move |t, hist, comp| {
                        let mut factors = vec![1.0; hist.dim()];
                        factors[comp] = factor;
                        let scaled = ScaledHistory {
                            inner: hist,
                            factors,
                        };
                        Ok(inner(t, &scaled, comp)? / factor)
                    }),
                    beta: beta.clone(),
                    h_minus: h_minus.clone(),
                    deriv0: *deriv0,
                }
            }
            Nonlinearity::ClampedMinBirth { beta, shape, clamp } => Nonlinearity::ClampedMinBirth {
                beta: beta.with_factor(1.0),
                shape: shape.rescaled(v),
                clamp: clamp / v,
            },
        }
    }
}

/// A complete system: dimension, maximal delay, decay, coupling, birth,
/// harvesting. Immutable after construction; evaluation is thread-safe.
#[derive(Debug, Clone)]
pub struct SystemSpec {
    pub n: usize,
    pub tau: f64,
    pub domain_start: f64,
    pub d: Vec<CoefficientFn>,
    pub linear: Vec<Vec<Option<LinearTerm>>>,
    pub birth: Vec<Option<Nonlinearity>>,
    pub harvest: Vec<Option<HarvestTerm>>,
}

impl SystemSpec {
    pub fn new(
        n: usize,
        tau: f64,
        domain_start: f64,
        d: Vec<CoefficientFn>,
        linear: Vec<Vec<Option<LinearTerm>>>,
        birth: Vec<Option<Nonlinearity>>,
        harvest: Vec<Option<HarvestTerm>>,
    ) -> Result<Self, SystemError> {
        if d.len() != n || linear.len() != n || birth.len() != n || harvest.len() != n {
            return Err(SystemError::Dimension {
                detail: format!(
                    "n = {n}, d = {}, linear = {}, birth = {}, harvest = {}",
                    d.len(),
                    linear.len(),
                    birth.len(),
                    harvest.len()
                ),
            });
        }
        if linear.iter().any(|row| row.len() != n) {
            return Err(SystemError::Dimension {
                detail: "linear term matrix is not n x n".into(),
            });
        }
        Ok(SystemSpec {
            n,
            tau,
            domain_start,
            d,
            linear,
            birth,
            harvest,
        })
    }

    /// Spot-check structural invariants on a sampling window.
    pub fn validate(&self, t_lo: f64, t_hi: f64) -> Result<(), SystemError> {
        let samples = 65;
        for i in 0..self.n {
            for k in 0..samples {
                let t = t_lo + (t_hi - t_lo) * k as f64 / (samples - 1) as f64;
                let v = self.d[i].eval(t)?;
                if v <= 0.0 {
                    return Err(SystemError::NonPositiveDecay { index: i, t, value: v });
                }
            }
        }
        for (i, row) in self.linear.iter().enumerate() {
            for (j, term) in row.iter().enumerate() {
                if let Some(term) = term {
                    term.kernel.validate(self.tau, t_lo, t_hi)?;
                    for k in 0..samples {
                        let t = t_lo + (t_hi - t_lo) * k as f64 / (samples - 1) as f64;
                        let v = term.a.eval(t)?;
                        if v < 0.0 {
                            return Err(SystemError::NegativeCoupling { i, j, t, value: v });
                        }
                    }
                }
            }
        }
        for (i, b) in self.birth.iter().enumerate() {
            match b {
                Some(Nonlinearity::Birth { beta, kernel, shape }) => {
                    kernel.validate(self.tau, t_lo, t_hi)?;
                    self.check_positive_coef(beta, i, t_lo, t_hi, samples)?;
                    self.check_shape_c(shape, i, t_lo, t_hi, samples)?;
                }
                Some(Nonlinearity::DistributedBirth { terms }) => {
                    for term in terms {
                        let lag = match &term.weight {
                            TermWeight::Point { lag } => lag,
                            TermWeight::Integral { lag, .. } => lag,
                        };
                        DelayKernel::LagPoint { lag: lag.clone() }.validate(self.tau, t_lo, t_hi)?;
                        self.check_shape_c(&term.shape, i, t_lo, t_hi, samples)?;
                    }
                }
                _ => {}
            }
        }
        for h in self.harvest.iter().flatten() {
            h.validate()?;
        }
        Ok(())
    }

    fn check_positive_coef(
        &self,
        c: &CoefficientFn,
        component: usize,
        t_lo: f64,
        t_hi: f64,
        samples: usize,
    ) -> Result<(), SystemError> {
        for k in 0..samples {
            let t = t_lo + (t_hi - t_lo) * k as f64 / (samples - 1) as f64;
            let v = c.eval(t)?;
            if v <= 0.0 {
                return Err(SystemError::NonPositiveBirth {
                    component,
                    t,
                    value: v,
                });
            }
        }
        Ok(())
    }

    fn check_shape_c(
        &self,
        shape: &BirthShape,
        component: usize,
        t_lo: f64,
        t_hi: f64,
        samples: usize,
    ) -> Result<(), SystemError> {
        match shape {
            BirthShape::Nicholson { c } | BirthShape::MackeyGlass { c, .. } => {
                if let BirthShape::MackeyGlass { alpha, .. } = shape {
                    if *alpha < 1.0 {
                        return Err(SystemError::BadExponent { alpha: *alpha });
                    }
                }
                self.check_positive_coef(c, component, t_lo, t_hi, samples)
            }
            BirthShape::Custom { .. } => Ok(()),
        }
    }

    /// One coupling functional applied to one component's history.
    pub fn linear_term_eval(
        term: &LinearTerm,
        component: usize,
        t: f64,
        hist: &dyn History,
    ) -> Result<f64, SystemError> {
        let a = term.a.eval(t)?;
        let v = term
            .kernel
            .apply::<SystemError>(t, |s| Ok(hist.value(component, s)?))?;
        Ok(a * v)
    }

    /// Right-hand side at time `t` against the given history segment.
    pub fn rhs_eval(&self, t: f64, hist: &dyn History) -> Result<Vec<f64>, SystemError> {
        let mut out = vec![0.0; self.n];
        self.rhs_eval_into(t, hist, &mut out)?;
        Ok(out)
    }

    /// Allocation-free form for integrator hot loops.
    pub fn rhs_eval_into(
        &self,
        t: f64,
        hist: &dyn History,
        out: &mut [f64],
    ) -> Result<(), SystemError> {
        for i in 0..self.n {
            let xi = hist.value(i, t)?;
            let mut v = -self.d[i].eval(t)? * xi;
            for (j, term) in self.linear[i].iter().enumerate() {
                if let Some(term) = term {
                    v += Self::linear_term_eval(term, j, t, hist)?;
                }
            }
            if let Some(f) = &self.birth[i] {
                v += f.eval(i, t, self.tau, hist)?;
            }
            if let Some(k) = &self.harvest[i] {
                v -= k.eval(t, xi.max(0.0))?;
            }
            out[i] = v;
        }
        Ok(())
    }

    /// Envelope coefficients β_i (normalized), `None` for components
    /// without a birth term.
    pub fn beta_of(&self) -> Result<Vec<Option<BetaFn>>, SystemError> {
        self.lower_envelope(DEFAULT_MONOTONE_CAP)
            .map(|envs| envs.into_iter().map(|e| e.map(|e| e.beta)).collect())
    }

    /// Per-component (β_i, h_i⁻, monotone cap); `None` without a birth term.
    pub fn lower_envelope(
        &self,
        cap_fallback: f64,
    ) -> Result<Vec<Option<Envelope>>, SystemError> {
        self.birth
            .iter()
            .enumerate()
            .map(|(i, b)| b.as_ref().map(|b| b.envelope(i, cap_fallback)).transpose())
            .collect()
    }

    /// Rescale variables componentwise by a positive vector; solutions
    /// correspond under `x̂_i = x_i / v_i`.
    pub fn scale_system(&self, v: &[f64]) -> Result<SystemSpec, SystemError> {
        if v.len() != self.n {
            return Err(SystemError::Dimension {
                detail: format!("scaling vector has length {}, expected {}", v.len(), self.n),
            });
        }
        if v.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
            return Err(SystemError::NonPositiveScale);
        }
        let linear = self
            .linear
            .iter()
            .enumerate()
            .map(|(i, row)| {
                row.iter()
                    .enumerate()
                    .map(|(j, term)| {
                        term.as_ref().map(|term| LinearTerm {
                            a: term.a.scaled(v[j] / v[i]),
                            kernel: term.kernel.clone(),
                        })
                    })
                    .collect()
            })
            .collect();
        let birth = self
            .birth
            .iter()
            .enumerate()
            .map(|(i, b)| b.as_ref().map(|b| b.rescaled(v[i])))
            .collect();
        let harvest = self
            .harvest
            .iter()
            .enumerate()
            .map(|(i, h)| h.as_ref().map(|h| h.rescaled(v[i])))
            .collect();
        Ok(SystemSpec {
            n: self.n,
            tau: self.tau,
            domain_start: self.domain_start,
            d: self.d.clone(),
            linear,
            birth,
            harvest,
        })
    }

    /// The auxiliary cooperative system bounding this one from below:
    /// birth terms become `β_i(t)·H_i(min of the segment)` with `H_i` the
    /// envelope clamped at `m` and capped by the identity.
    pub fn build_cooperative_lower(&self, m: f64, m_upper: f64) -> Result<SystemSpec, SystemError> {
        if !(m > 0.0) || m_upper < m {
            return Err(SystemError::BadClampWindow { m, mm: m_upper });
        }
        let envelopes = self.lower_envelope(DEFAULT_MONOTONE_CAP)?;
        let mut birth = Vec::with_capacity(self.n);
        for (i, env) in envelopes.into_iter().enumerate() {
            match env {
                None => birth.push(None),
                Some(env) => {
                    if env.deriv0_raw <= 0.0 {
                        return Err(SystemError::UnnormalizableEnvelope { component: i });
                    }
                    if m > env.monotone_cap {
                        return Err(SystemError::ClampAboveCap {
                            component: i,
                            m,
                            cap: env.monotone_cap,
                        });
                    }
                    birth.push(Some(Nonlinearity::ClampedMinBirth {
                        beta: env.beta,
                        shape: env.shape,
                        clamp: m,
                    }));
                }
            }
        }
        Ok(SystemSpec {
            n: self.n,
            tau: self.tau,
            domain_start: self.domain_start,
            d: self.d.clone(),
            linear: self.linear.clone(),
            birth,
            harvest: self.harvest.clone(),
        })
    }

    /// True when no coupling functional carries a delay.
    pub fn linear_part_undelayed(&self) -> bool {
        self.linear
            .iter()
            .flatten()
            .flatten()
            .all(|term| term.kernel.is_instant())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::timefn::Piece;

    fn const_hist(n: usize, v: f64) -> FnHistory<impl Fn(usize, f64) -> f64> {
        FnHistory {
            n,
            f: move |_, _| v,
        }
    }

    #[test]
    fn linear_term_point_kernels() {
        let hist = const_hist(1, 3.0);
        let term = LinearTerm {
            a: CoefficientFn::constant(2.0),
            kernel: DelayKernel::InstantPoint,
        };
        let v = SystemSpec::linear_term_eval(&term, 0, 5.0, &hist).unwrap();
        assert_eq!(v, 6.0);

        // a ≡ 1, lag ≡ 1, hist(s) = s at t = 0 reads hist(-1) = -1
        let ramp = FnHistory {
            n: 1,
            f: |_, s: f64| s,
        };
        let term = LinearTerm {
            a: CoefficientFn::constant(1.0),
            kernel: DelayKernel::LagPoint {
                lag: CoefficientFn::constant(1.0),
            },
        };
        assert!((SystemSpec::linear_term_eval(&term, 0, 0.0, &ramp).unwrap() + 1.0).abs() < 1e-15);
    }

    #[test]
    fn linear_term_uniform_density() {
        // ∫_{-1}^{0} s ds = -1/2
        let ramp = FnHistory {
            n: 1,
            f: |_, s: f64| s,
        };
        let term = LinearTerm {
            a: CoefficientFn::constant(1.0),
            kernel: DelayKernel::UniformDensity {
                width: CoefficientFn::constant(1.0),
            },
        };
        let v = SystemSpec::linear_term_eval(&term, 0, 0.0, &ramp).unwrap();
        assert!((v + 0.5).abs() < 1e-12);
    }

    #[test]
    fn kernel_mass_is_one() {
        let kernels = vec![
            DelayKernel::UniformDensity {
                width: CoefficientFn::constant(0.7),
            },
            DelayKernel::Density {
                // normalized triangular density on [-1, 0]: k(s) = 2(1+s)
                shape: Expr::affine(2.0, 2.0),
                support: 1.0,
            },
        ];
        for k in kernels {
            for &t in &[0.0, 3.0, 11.5] {
                assert!((k.mass(t).unwrap() - 1.0).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn nicholson_and_mackey_glass_values() {
        let nich = BirthShape::Nicholson {
            c: CoefficientFn::constant(1.0),
        };
        assert_eq!(nich.response(0.0, 0.0).unwrap(), 0.0);
        assert!((nich.response(0.0, 1.0).unwrap() - (-1.0f64).exp()).abs() < 1e-15);
        let mg = BirthShape::MackeyGlass {
            c: CoefficientFn::constant(1.0),
            alpha: 1.0,
        };
        assert!((mg.response(0.0, 1.0).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn negative_history_is_fatal_in_birth_terms() {
        let birth = Nonlinearity::Birth {
            beta: CoefficientFn::constant(1.0),
            kernel: DelayKernel::InstantPoint,
            shape: BirthShape::Nicholson {
                c: CoefficientFn::constant(1.0),
            },
        };
        let hist = const_hist(1, -0.5);
        let err = birth.eval(0, 1.0, 1.0, &hist).unwrap_err();
        assert!(matches!(err, SystemError::NegativeHistory { .. }));
    }

    #[test]
    fn pure_decay_rhs() {
        let sys = SystemSpec::new(
            1,
            0.0,
            0.0,
            vec![CoefficientFn::constant(1.0)],
            vec![vec![None]],
            vec![None],
            vec![None],
        )
        .unwrap();
        let hist = const_hist(1, 2.0);
        let v = sys.rhs_eval(3.0, &hist).unwrap();
        assert_eq!(v, vec![-2.0]);
    }

    #[test]
    fn beta_of_distributed_terms() {
        // single term, b ≡ 3, λ ≡ 1, lag ≡ 2: β(t) = 6
        let term = DistributedTerm {
            b: CoefficientFn::constant(3.0),
            weight: TermWeight::Integral {
                lambda: CoefficientFn::constant(1.0),
                lag: CoefficientFn::constant(2.0),
            },
            shape: BirthShape::Nicholson {
                c: CoefficientFn::constant(1.0),
            },
            shape_time: ShapeTime::IntegrationVariable,
        };
        let f = Nonlinearity::DistributedBirth { terms: vec![term] };
        let beta = f.beta_raw();
        assert!((beta.eval(5.0).unwrap() - 6.0).abs() < 1e-12);

        // b ≡ 1, λ(s) = s, lag ≡ 1 at t = 2: ∫_1^2 s ds = 1.5
        let term = DistributedTerm {
            b: CoefficientFn::constant(1.0),
            weight: TermWeight::Integral {
                lambda: CoefficientFn::new(Expr::tpow(1.0)).with_domain_start(f64::NEG_INFINITY),
                lag: CoefficientFn::constant(1.0),
            },
            shape: BirthShape::Nicholson {
                c: CoefficientFn::constant(1.0),
            },
            shape_time: ShapeTime::IntegrationVariable,
        };
        let f = Nonlinearity::DistributedBirth { terms: vec![term] };
        assert!((f.beta_raw().eval(2.0).unwrap() - 1.5).abs() < 1e-12);
    }

    #[test]
    fn envelope_monotone_caps() {
        let nich = Nonlinearity::Birth {
            beta: CoefficientFn::constant(1.0),
            kernel: DelayKernel::InstantPoint,
            shape: BirthShape::Nicholson {
                c: CoefficientFn::constant(1.0),
            },
        };
        let env = nich.envelope(0, DEFAULT_MONOTONE_CAP).unwrap();
        assert!((env.monotone_cap - 1.0).abs() < 1e-12);
        assert!((env.shape.eval_normalized(1.0).unwrap() - (-1.0f64).exp()).abs() < 1e-15);

        let mg1 = Nonlinearity::Birth {
            beta: CoefficientFn::constant(1.0),
            kernel: DelayKernel::InstantPoint,
            shape: BirthShape::MackeyGlass {
                c: CoefficientFn::constant(1.0),
                alpha: 1.0,
            },
        };
        let env = mg1.envelope(0, DEFAULT_MONOTONE_CAP).unwrap();
        assert_eq!(env.monotone_cap, DEFAULT_MONOTONE_CAP);
        assert!(env.shape.liminf_at_infinity() > 0.9);

        let mg2 = Nonlinearity::Birth {
            beta: CoefficientFn::constant(1.0),
            kernel: DelayKernel::InstantPoint,
            shape: BirthShape::MackeyGlass {
                c: CoefficientFn::constant(1.0),
                alpha: 2.0,
            },
        };
        let env = mg2.envelope(0, DEFAULT_MONOTONE_CAP).unwrap();
        assert!((env.monotone_cap - 1.0).abs() < 1e-12);
        // numeric cross-check: the shape really does stop increasing at 1
        let h = |x: f64| x / (1.0 + x * x);
        assert!(h(0.999) < h(1.0) && h(1.001) < h(1.0));
    }

    #[test]
    fn envelope_normalization_at_origin() {
        for shape in [
            EnvelopeShape {
                kind: EnvelopeShapeKind::Nicholson { cbar: 1.0 },
                deriv0: 1.0,
            },
            EnvelopeShape {
                kind: EnvelopeShapeKind::MackeyGlass {
                    cbar: 2.0,
                    alpha: 1.0,
                },
                deriv0: 1.0,
            },
        ] {
            for &x in &[1e-3, 1e-5, 1e-7] {
                let ratio = shape.eval_normalized(x).unwrap() / x;
                assert!((ratio - 1.0).abs() < 1e-2, "ratio {ratio} at {x}");
            }
        }
    }

    #[test]
    fn clamped_envelope_values() {
        // Nicholson cbar = 1, m = 0.5: H(0.25) = 0.25 e^{-0.25}, H(2) = 0.5 e^{-0.5}
        let birth = Nonlinearity::Birth {
            beta: CoefficientFn::constant(1.0),
            kernel: DelayKernel::LagPoint {
                lag: CoefficientFn::constant(1.0),
            },
            shape: BirthShape::Nicholson {
                c: CoefficientFn::constant(1.0).with_bounds(1.0, Some(1.0), 0.0),
            },
        };
        let sys = SystemSpec::new(
            1,
            1.0,
            0.0,
            vec![CoefficientFn::constant(1.0)],
            vec![vec![None]],
            vec![Some(birth)],
            vec![None],
        )
        .unwrap();
        let lower = sys.build_cooperative_lower(0.5, 3.0).unwrap();
        let eval_h = |level: f64| {
            let hist = const_hist(1, level);
            lower.birth[0]
                .as_ref()
                .unwrap()
                .eval(0, 0.0, 1.0, &hist)
                .unwrap()
        };
        assert!((eval_h(0.25) - 0.25 * (-0.25f64).exp()).abs() < 1e-14);
        assert!((eval_h(2.0) - 0.5 * (-0.5f64).exp()).abs() < 1e-14);
        assert_eq!(eval_h(0.0), 0.0);
    }

    #[test]
    fn clamp_above_cap_is_rejected() {
        let birth = Nonlinearity::Birth {
            beta: CoefficientFn::constant(1.0),
            kernel: DelayKernel::InstantPoint,
            shape: BirthShape::Nicholson {
                c: CoefficientFn::constant(1.0).with_bounds(1.0, Some(1.0), 0.0),
            },
        };
        let sys = SystemSpec::new(
            1,
            1.0,
            0.0,
            vec![CoefficientFn::constant(1.0)],
            vec![vec![None]],
            vec![Some(birth)],
            vec![None],
        )
        .unwrap();
        assert!(matches!(
            sys.build_cooperative_lower(1.5, 3.0),
            Err(SystemError::ClampAboveCap { .. })
        ));
    }

    #[test]
    fn scaling_transforms_coupling_and_round_trips() {
        let a12 = LinearTerm {
            a: CoefficientFn::constant(1.0),
            kernel: DelayKernel::InstantPoint,
        };
        let sys = SystemSpec::new(
            2,
            0.0,
            0.0,
            vec![CoefficientFn::constant(1.0), CoefficientFn::constant(1.0)],
            vec![vec![None, Some(a12)], vec![None, None]],
            vec![None, None],
            vec![None, None],
        )
        .unwrap();
        let scaled = sys.scale_system(&[2.0, 1.0]).unwrap();
        let a = scaled.linear[0][1].as_ref().unwrap().a.eval(0.0).unwrap();
        assert!((a - 0.5).abs() < 1e-15);

        let back = scaled.scale_system(&[0.5, 1.0]).unwrap();
        for &t in &[0.0, 1.0, 10.0] {
            let orig = sys.linear[0][1].as_ref().unwrap().a.eval(t).unwrap();
            let rt = back.linear[0][1].as_ref().unwrap().a.eval(t).unwrap();
            assert!((orig - rt).abs() <= 1e-14 * orig.abs().max(1.0));
        }
        // identity scaling keeps the coefficient identical
        let id = sys.scale_system(&[1.0, 1.0]).unwrap();
        assert_eq!(
            id.linear[0][1].as_ref().unwrap().a.eval(3.0).unwrap(),
            1.0
        );
    }

    #[test]
    fn custom_shape_with_flat_slope() {
        // h(x) = x^2 clamped at 1; slope at zero is 0, so the envelope
        // cannot be normalized and the clamped lower system is rejected.
        let h = Expr::Piecewise {
            pieces: vec![Piece {
                until: 1.0,
                expr: Expr::rational(vec![0.0, 0.0, 1.0], vec![1.0]),
            }],
            tail: Box::new(Expr::constant(1.0)),
        };
        let birth = Nonlinearity::Birth {
            beta: CoefficientFn::constant(1.0),
            kernel: DelayKernel::InstantPoint,
            shape: BirthShape::Custom {
                h,
                deriv0: 0.0,
                scale: 1.0,
            },
        };
        let env = birth.envelope(0, DEFAULT_MONOTONE_CAP).unwrap();
        assert_eq!(env.deriv0_raw, 0.0);
        let sys = SystemSpec::new(
            1,
            0.0,
            0.0,
            vec![CoefficientFn::constant(1.0)],
            vec![vec![None]],
            vec![Some(birth)],
            vec![None],
        )
        .unwrap();
        assert!(matches!(
            sys.build_cooperative_lower(0.5, 1.0),
            Err(SystemError::UnnormalizableEnvelope { .. })
        ));
    }

    #[test]
    fn harvest_validation() {
        let bad = HarvestTerm::new(
            CoefficientFn::constant(1.0),
            Expr::tpow(1.0), // slope 1 at zero: not sublinear
        );
        assert!(matches!(bad, Err(SystemError::BadHarvestShape { .. })));
        let ok = HarvestTerm::new(
            CoefficientFn::constant(1.0),
            Expr::rational(vec![0.0, 0.0, 1.0], vec![1.0]),
        )
        .unwrap();
        assert!((ok.eval(0.0, 2.0).unwrap() - 4.0).abs() < 1e-14);
        let unbounded = HarvestTerm::new(CoefficientFn::new(Expr::tpow(1.0)), Expr::constant(0.0));
        assert!(matches!(unbounded, Err(SystemError::HarvestUnbounded)));
    }

    #[test]
    fn rhs_never_falls_below_pure_decay_for_nonnegative_history() {
        // birth and coupling terms are nonnegative, so component i of the
        // right-hand side dominates -d_i(t)·x_i(t)
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let sys = crate::models::two_patch_nicholson().spec;
        for _ in 0..200 {
            let base: Vec<f64> = (0..2).map(|_| rng.gen_range(0.0..4.0)).collect();
            let amp: Vec<f64> = (0..2).map(|_| rng.gen_range(0.0..1.0)).collect();
            let t = rng.gen_range(1.0..50.0);
            let b = base.clone();
            let a = amp.clone();
            let hist = FnHistory {
                n: 2,
                f: move |i, s: f64| b[i] + a[i] * (1.0 + (s * 1.3).sin()) / 2.0,
            };
            let rhs = sys.rhs_eval(t, &hist).unwrap();
            for i in 0..2 {
                let xi = hist.value(i, t).unwrap();
                let floor = -sys.d[i].eval(t).unwrap() * xi;
                assert!(rhs[i] >= floor - 1e-12);
            }
        }
    }
}
