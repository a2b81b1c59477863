//! Time-varying scalar coefficients as closed expression trees.
//!
//! Every coefficient that appears in a system — decay rates, coupling
//! strengths, birth coefficients, delays — is a [`CoefficientFn`]: an
//! immutable expression tree over the time variable plus optional
//! builder-declared bounds. Trees (rather than callbacks) keep spec files
//! serializable and runs reproducible.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TimeFnError {
    #[error("evaluation at t = {t} lies before the domain start {start}")]
    BeforeDomain { t: f64, start: f64 },
    #[error("non-finite value while evaluating a `{node}` node at t = {t}")]
    NonFinite { node: &'static str, t: f64 },
    #[error("sampled value {value} at t = {t} escapes the declared bounds [{lo}, {hi}]")]
    DeclaredBoundsViolated { t: f64, value: f64, lo: f64, hi: f64 },
    #[error("`{node}` node must not be empty")]
    EmptyNode { node: &'static str },
    #[error("table node needs strictly increasing abscissae and matching value count")]
    BadTable,
    #[error("sampling window needs t1 < t2 and at least two grid points")]
    BadWindow,
}

/// One branch of a piecewise expression: active while `t < until`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Piece {
    pub until: f64,
    pub expr: Expr,
}

/// Closed composition tree over one real variable.
///
/// The node set is fixed by the spec-file schema: `const`, `t_pow`,
/// `affine`, `rational`, `sum`, `prod`, `quot`, `piecewise`, `table`.
/// Polynomial coefficient vectors are stored lowest degree first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Expr {
    Const { value: f64 },
    TPow { eta: f64 },
    Affine { a: f64, b: f64 },
    Rational { num: Vec<f64>, den: Vec<f64> },
    Sum { terms: Vec<Expr> },
    Prod { factors: Vec<Expr> },
    Quot { num: Box<Expr>, den: Box<Expr> },
    Piecewise { pieces: Vec<Piece>, tail: Box<Expr> },
    Table { ts: Vec<f64>, values: Vec<f64> },
}

fn horner(coeffs: &[f64], t: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, c| acc * t + c)
}

pub(crate) fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, ai) in a.iter().enumerate() {
        for (j, bj) in b.iter().enumerate() {
            out[i + j] += ai * bj;
        }
    }
    out
}

fn poly_deriv(a: &[f64]) -> Vec<f64> {
    if a.len() <= 1 {
        return vec![0.0];
    }
    a.iter()
        .enumerate()
        .skip(1)
        .map(|(i, c)| i as f64 * c)
        .collect()
}

fn poly_sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = a.to_vec();
    out.resize(a.len().max(b.len()), 0.0);
    for (i, bi) in b.iter().enumerate() {
        out[i] -= bi;
    }
    out
}

impl Expr {
    pub fn constant(value: f64) -> Self {
        Expr::Const { value }
    }

    pub fn tpow(eta: f64) -> Self {
        Expr::TPow { eta }
    }

    pub fn affine(a: f64, b: f64) -> Self {
        Expr::Affine { a, b }
    }

    pub fn rational(num: Vec<f64>, den: Vec<f64>) -> Self {
        Expr::Rational { num, den }
    }

    pub fn sum(terms: Vec<Expr>) -> Self {
        Expr::Sum { terms }
    }

    pub fn prod(factors: Vec<Expr>) -> Self {
        Expr::Prod { factors }
    }

    pub fn quot(num: Expr, den: Expr) -> Self {
        Expr::Quot {
            num: Box::new(num),
            den: Box::new(den),
        }
    }

    pub fn scaled(self, k: f64) -> Self {
        Expr::Prod {
            factors: vec![Expr::constant(k), self],
        }
    }

    pub fn eval(&self, t: f64) -> Result<f64, TimeFnError> {
        let v = self.eval_raw(t)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(TimeFnError::NonFinite {
                node: self.node_name(),
                t,
            })
        }
    }

    fn node_name(&self) -> &'static str {
        match self {
            Expr::Const { .. } => "const",
            Expr::TPow { .. } => "t_pow",
            Expr::Affine { .. } => "affine",
            Expr::Rational { .. } => "rational",
            Expr::Sum { .. } => "sum",
            Expr::Prod { .. } => "prod",
            Expr::Quot { .. } => "quot",
            Expr::Piecewise { .. } => "piecewise",
            Expr::Table { .. } => "table",
        }
    }

    fn eval_raw(&self, t: f64) -> Result<f64, TimeFnError> {
        match self {
            Expr::Const { value } => Ok(*value),
            Expr::TPow { eta } => Ok(t.powf(*eta)),
            Expr::Affine { a, b } => Ok(a * t + b),
            Expr::Rational { num, den } => {
                let d = horner(den, t);
                if d == 0.0 {
                    return Err(TimeFnError::NonFinite { node: "rational", t });
                }
                Ok(horner(num, t) / d)
            }
            Expr::Sum { terms } => {
                let mut acc = 0.0;
                for term in terms {
                    acc += term.eval_raw(t)?;
                }
                Ok(acc)
            }
            Expr::Prod { factors } => {
                let mut acc = 1.0;
                for f in factors {
                    acc *= f.eval_raw(t)?;
                }
                Ok(acc)
            }
            Expr::Quot { num, den } => {
                let d = den.eval_raw(t)?;
                if d == 0.0 {
                    return Err(TimeFnError::NonFinite { node: "quot", t });
                }
                Ok(num.eval_raw(t)? / d)
            }
            Expr::Piecewise { pieces, tail } => {
                for p in pieces {
                    if t < p.until {
                        return p.expr.eval_raw(t);
                    }
                }
                tail.eval_raw(t)
            }
            Expr::Table { ts, values } => {
                if ts.len() < 2 || ts.len() != values.len() {
                    return Err(TimeFnError::BadTable);
                }
                // Clamp outside the tabulated range; linear interpolation inside.
                if t <= ts[0] {
                    return Ok(values[0]);
                }
                if t >= *ts.last().unwrap() {
                    return Ok(*values.last().unwrap());
                }
                let idx = ts.partition_point(|&x| x <= t) - 1;
                let w = (t - ts[idx]) / (ts[idx + 1] - ts[idx]);
                Ok(values[idx] * (1.0 - w) + values[idx + 1] * w)
            }
        }
    }

    /// First derivative as another tree. Exact except on `table` nodes
    /// (piecewise slopes) and at `piecewise` breakpoints, where the
    /// right-hand branch is used.
    pub fn derivative(&self) -> Expr {
        match self {
            Expr::Const { .. } => Expr::constant(0.0),
            Expr::TPow { eta } => {
                if *eta == 0.0 {
                    Expr::constant(0.0)
                } else {
                    Expr::prod(vec![Expr::constant(*eta), Expr::tpow(eta - 1.0)])
                }
            }
            Expr::Affine { a, .. } => Expr::constant(*a),
            Expr::Rational { num, den } => {
                // (n'd - nd') / d^2
                let n1 = poly_mul(&poly_deriv(num), den);
                let n2 = poly_mul(num, &poly_deriv(den));
                Expr::rational(poly_sub(&n1, &n2), poly_mul(den, den))
            }
            Expr::Sum { terms } => Expr::sum(terms.iter().map(Expr::derivative).collect()),
            Expr::Prod { factors } => {
                let mut terms = Vec::with_capacity(factors.len());
                for (i, _) in factors.iter().enumerate() {
                    let mut fs: Vec<Expr> = factors.clone();
                    fs[i] = fs[i].derivative();
                    terms.push(Expr::prod(fs));
                }
                Expr::sum(terms)
            }
            Expr::Quot { num, den } => {
                let top = Expr::sum(vec![
                    Expr::prod(vec![num.derivative(), (**den).clone()]),
                    Expr::prod(vec![
                        Expr::constant(-1.0),
                        (**num).clone(),
                        den.derivative(),
                    ]),
                ]);
                Expr::quot(top, Expr::prod(vec![(**den).clone(), (**den).clone()]))
            }
            Expr::Piecewise { pieces, tail } => Expr::Piecewise {
                pieces: pieces
                    .iter()
                    .map(|p| Piece {
                        until: p.until,
                        expr: p.expr.derivative(),
                    })
                    .collect(),
                tail: Box::new(tail.derivative()),
            },
            Expr::Table { ts, values } => {
                // Piecewise-constant slopes of the interpolant.
                let mut pieces = Vec::new();
                for i in 0..ts.len().saturating_sub(1) {
                    let slope = (values[i + 1] - values[i]) / (ts[i + 1] - ts[i]);
                    pieces.push(Piece {
                        until: ts[i + 1],
                        expr: Expr::constant(slope),
                    });
                }
                Expr::Piecewise {
                    pieces,
                    tail: Box::new(Expr::constant(0.0)),
                }
            }
        }
    }

    /// Whether [`Expr::derivative`] is the exact derivative everywhere on
    /// the interior of the domain (false once a `table` node is involved).
    pub fn derivative_is_exact(&self) -> bool {
        match self {
            Expr::Table { .. } => false,
            Expr::Const { .. } | Expr::TPow { .. } | Expr::Affine { .. } | Expr::Rational { .. } => {
                true
            }
            Expr::Sum { terms } => terms.iter().all(Expr::derivative_is_exact),
            Expr::Prod { factors } => factors.iter().all(Expr::derivative_is_exact),
            Expr::Quot { num, den } => num.derivative_is_exact() && den.derivative_is_exact(),
            Expr::Piecewise { pieces, tail } => {
                pieces.iter().all(|p| p.expr.derivative_is_exact()) && tail.derivative_is_exact()
            }
        }
    }

    pub fn validate(&self) -> Result<(), TimeFnError> {
        match self {
            Expr::Const { .. } | Expr::TPow { .. } | Expr::Affine { .. } => Ok(()),
            Expr::Rational { num, den } => {
                if num.is_empty() || den.is_empty() {
                    Err(TimeFnError::EmptyNode { node: "rational" })
                } else {
                    Ok(())
                }
            }
            Expr::Sum { terms } => {
                if terms.is_empty() {
                    return Err(TimeFnError::EmptyNode { node: "sum" });
                }
                terms.iter().try_for_each(Expr::validate)
            }
            Expr::Prod { factors } => {
                if factors.is_empty() {
                    return Err(TimeFnError::EmptyNode { node: "prod" });
                }
                factors.iter().try_for_each(Expr::validate)
            }
            Expr::Quot { num, den } => {
                num.validate()?;
                den.validate()
            }
            Expr::Piecewise { pieces, tail } => {
                pieces.iter().try_for_each(|p| p.expr.validate())?;
                tail.validate()
            }
            Expr::Table { ts, values } => {
                if ts.len() < 2 || ts.len() != values.len() {
                    return Err(TimeFnError::BadTable);
                }
                if ts.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(TimeFnError::BadTable);
                }
                Ok(())
            }
        }
    }
}

/// Bounds asserted by the model builder, valid on `[valid_from, ∞)`.
/// `hi = None` declares "bounded below only". Sampled evaluations are
/// checked against these on every grid the checkers use.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeclaredBounds {
    pub lo: f64,
    pub hi: Option<f64>,
    #[serde(default)]
    pub valid_from: f64,
}

impl DeclaredBounds {
    pub fn hi_or_inf(&self) -> f64 {
        self.hi.unwrap_or(f64::INFINITY)
    }
}

/// Finite stand-in for "no lower limit on the domain": JSON has no
/// encoding for infinities.
pub const UNBOUNDED_BELOW: f64 = -1e300;

/// A time-varying scalar coefficient: expression tree plus metadata.
/// Immutable after construction and safe to evaluate from many threads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientFn {
    expr: Expr,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    declared: Option<DeclaredBounds>,
    #[serde(default)]
    domain_start: f64,
}

impl CoefficientFn {
    pub fn new(expr: Expr) -> Self {
        CoefficientFn {
            expr,
            declared: None,
            domain_start: 0.0,
        }
    }

    pub fn constant(value: f64) -> Self {
        // finite sentinel keeps the JSON form round-trippable
        let mut c = CoefficientFn::new(Expr::constant(value));
        c.declared = Some(DeclaredBounds {
            lo: value,
            hi: Some(value),
            valid_from: UNBOUNDED_BELOW,
        });
        c.domain_start = UNBOUNDED_BELOW;
        c
    }

    pub fn with_bounds(mut self, lo: f64, hi: Option<f64>, valid_from: f64) -> Self {
        self.declared = Some(DeclaredBounds { lo, hi, valid_from });
        self
    }

    pub fn with_domain_start(mut self, start: f64) -> Self {
        self.domain_start = start;
        self
    }

    pub fn expr(&self) -> &Expr {
        &self.expr
    }

    pub fn declared_bounds(&self) -> Option<&DeclaredBounds> {
        self.declared.as_ref()
    }

    pub fn domain_start(&self) -> f64 {
        self.domain_start
    }

    /// Multiply by a positive constant, carrying declared bounds along.
    pub fn scaled(&self, k: f64) -> CoefficientFn {
        let declared = self.declared.as_ref().map(|b| DeclaredBounds {
            lo: b.lo * k,
            hi: b.hi.map(|h| h * k),
            valid_from: b.valid_from,
        });
        CoefficientFn {
            expr: self.expr.clone().scaled(k),
            declared,
            domain_start: self.domain_start,
        }
    }

    pub fn eval(&self, t: f64) -> Result<f64, TimeFnError> {
        if t < self.domain_start {
            return Err(TimeFnError::BeforeDomain {
                t,
                start: self.domain_start,
            });
        }
        self.expr.eval(t)
    }

    /// Min and max over a uniform grid on `[t1, t2]` (endpoints included).
    /// Declared bounds, when present, are enforced on every sampled point.
    pub fn sampled_bounds(
        &self,
        t1: f64,
        t2: f64,
        grid_points: usize,
    ) -> Result<(f64, f64), TimeFnError> {
        if !(t1 < t2) || grid_points < 2 {
            return Err(TimeFnError::BadWindow);
        }
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..grid_points {
            let t = t1 + (t2 - t1) * i as f64 / (grid_points - 1) as f64;
            let v = self.eval(t)?;
            if let Some(b) = &self.declared {
                if t >= b.valid_from {
                    let slack = 1e-12 * (1.0 + v.abs());
                    if v < b.lo - slack || v > b.hi_or_inf() + slack {
                        return Err(TimeFnError::DeclaredBoundsViolated {
                            t,
                            value: v,
                            lo: b.lo,
                            hi: b.hi_or_inf(),
                        });
                    }
                }
            }
            lo = lo.min(v);
            hi = hi.max(v);
        }
        Ok((lo, hi))
    }

    pub fn derivative_expr(&self) -> Expr {
        self.expr.derivative()
    }

    pub fn derivative_is_exact(&self) -> bool {
        self.expr.derivative_is_exact()
    }

    pub fn validate(&self) -> Result<(), TimeFnError> {
        self.expr.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_eval() {
        assert_eq!(CoefficientFn::constant(3.5).eval(10.0).unwrap(), 3.5);
    }

    #[test]
    fn power_eval() {
        let f = CoefficientFn::new(Expr::tpow(2.0));
        assert_eq!(f.eval(3.0).unwrap(), 9.0);
    }

    #[test]
    fn birth_coefficient_rational_form() {
        // mu1*(t+C)/(t+C-1) with mu1 = 2, C = 2 evaluates to 4 at t = 0.
        let (mu1, c) = (2.0, 2.0);
        let f = CoefficientFn::new(Expr::rational(vec![mu1 * c, mu1], vec![c - 1.0, 1.0]));
        assert!((f.eval(0.0).unwrap() - 4.0).abs() < 1e-15);
    }

    #[test]
    fn sampled_bounds_constant_and_linear() {
        let one = CoefficientFn::constant(1.0);
        assert_eq!(one.sampled_bounds(0.0, 10.0, 11).unwrap(), (1.0, 1.0));
        let id = CoefficientFn::new(Expr::tpow(1.0));
        assert_eq!(id.sampled_bounds(0.0, 10.0, 11).unwrap(), (0.0, 10.0));
    }

    #[test]
    fn quadratic_coupling_is_increasing_on_window() {
        // a(t) = mu*(t - tau + C)*(t + C + 1)/tau, mu = 1, tau = 0.5, C = 1:
        // positive increasing quadratic for t >= 0, so sup sits at the right end.
        let (mu, tau, c) = (1.0, 0.5, 1.0);
        let k = mu / tau;
        let num = poly_mul(&[c - tau, 1.0], &[c + 1.0, 1.0]);
        let a = CoefficientFn::new(Expr::rational(
            num.iter().map(|x| x * k).collect(),
            vec![1.0],
        ));
        let (lo, hi) = a.sampled_bounds(0.0, 100.0, 501).unwrap();
        assert_eq!(lo, a.eval(0.0).unwrap());
        assert_eq!(hi, a.eval(100.0).unwrap());
        // brute-force monotonicity over the same grid
        let mut prev = f64::NEG_INFINITY;
        for i in 0..=500 {
            let v = a.eval(100.0 * i as f64 / 500.0).unwrap();
            assert!(v > prev);
            prev = v;
        }
    }

    #[test]
    fn eval_is_deterministic() {
        let f = CoefficientFn::new(Expr::quot(
            Expr::sum(vec![Expr::tpow(1.5), Expr::constant(0.25)]),
            Expr::affine(0.3, 2.0),
        ));
        let a = f.eval(7.123456).unwrap();
        for _ in 0..100 {
            assert_eq!(f.eval(7.123456).unwrap().to_bits(), a.to_bits());
        }
    }

    #[test]
    fn domain_start_is_enforced() {
        let f = CoefficientFn::new(Expr::tpow(1.0)).with_domain_start(1.0);
        assert!(matches!(
            f.eval(0.5),
            Err(TimeFnError::BeforeDomain { .. })
        ));
        assert_eq!(f.eval(1.0).unwrap(), 1.0);
    }

    #[test]
    fn declared_bounds_violation_is_reported() {
        let f = CoefficientFn::new(Expr::tpow(1.0)).with_bounds(0.0, Some(5.0), 0.0);
        let err = f.sampled_bounds(0.0, 10.0, 11).unwrap_err();
        assert!(matches!(err, TimeFnError::DeclaredBoundsViolated { .. }));
    }

    #[test]
    fn rational_derivative_is_exact() {
        // d/dt 1/(t+2) = -1/(t+2)^2
        let f = Expr::rational(vec![1.0], vec![2.0, 1.0]);
        let df = f.derivative();
        assert!(f.derivative_is_exact());
        for &t in &[0.0, 1.0, 5.0, 77.3] {
            let want = -1.0 / ((t + 2.0) * (t + 2.0));
            assert!((df.eval(t).unwrap() - want).abs() < 1e-14 * (1.0 + want.abs()));
        }
    }

    #[test]
    fn product_and_quotient_derivatives() {
        // f = t^2 * (t+1), f' = 3t^2 + 2t
        let f = Expr::prod(vec![Expr::tpow(2.0), Expr::affine(1.0, 1.0)]);
        let df = f.derivative();
        for &t in &[0.5, 2.0, 9.0] {
            assert!((df.eval(t).unwrap() - (3.0 * t * t + 2.0 * t)).abs() < 1e-10);
        }
        // g = t / (1 + t), g' = 1/(1+t)^2
        let g = Expr::quot(Expr::tpow(1.0), Expr::affine(1.0, 1.0));
        let dg = g.derivative();
        for &t in &[0.0, 1.0, 4.0] {
            let want = 1.0 / ((1.0 + t) * (1.0 + t));
            assert!((dg.eval(t).unwrap() - want).abs() < 1e-12);
        }
    }

    #[test]
    fn piecewise_and_table() {
        // h(x) = x^2 for x < 1, else 1 (the flat-slope birth shape)
        let h = Expr::Piecewise {
            pieces: vec![Piece {
                until: 1.0,
                expr: Expr::rational(vec![0.0, 0.0, 1.0], vec![1.0]),
            }],
            tail: Box::new(Expr::constant(1.0)),
        };
        assert_eq!(h.eval(0.5).unwrap(), 0.25);
        assert_eq!(h.eval(2.0).unwrap(), 1.0);

        let tab = Expr::Table {
            ts: vec![0.0, 1.0, 2.0],
            values: vec![0.0, 2.0, 2.0],
        };
        assert_eq!(tab.eval(0.5).unwrap(), 1.0);
        assert_eq!(tab.eval(1.5).unwrap(), 2.0);
        assert_eq!(tab.eval(-3.0).unwrap(), 0.0); // clamped
        assert_eq!(tab.eval(9.0).unwrap(), 2.0); // clamped
        assert!(!tab.derivative_is_exact());
    }

    #[test]
    fn json_round_trip() {
        let f = CoefficientFn::new(Expr::sum(vec![
            Expr::tpow(1.0),
            Expr::constant(-1.0),
            Expr::quot(Expr::constant(2.0), Expr::affine(1.0, 3.0)),
        ]))
        .with_bounds(0.5, None, 1.0);
        let s = serde_json::to_string(&f).unwrap();
        let g: CoefficientFn = serde_json::from_str(&s).unwrap();
        assert_eq!(f, g);
        assert!(s.contains("\"kind\":\"t_pow\""));
    }

    #[test]
    fn sampled_bounds_widen_under_nested_refinement() {
        let f = CoefficientFn::new(Expr::prod(vec![
            Expr::affine(1.0, -4.0),
            Expr::affine(1.0, -6.0),
        ]));
        // doubling the grid keeps old points, so the interval can only widen
        let mut k = 5;
        let (mut lo, mut hi) = f.sampled_bounds(0.0, 10.0, k).unwrap();
        for _ in 0..4 {
            k = 2 * k - 1;
            let (lo2, hi2) = f.sampled_bounds(0.0, 10.0, k).unwrap();
            assert!(lo2 <= lo && hi2 >= hi);
            lo = lo2;
            hi = hi2;
        }
    }
}
