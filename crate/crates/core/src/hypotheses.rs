//! Grid certification of the structural hypotheses behind persistence and
//! permanence, and the verdict logic combining them.
//!
//! Every check has honest grid semantics: "certified" means the defining
//! inequality holds at every sampled time with the stored witness and
//! margin — evidence on a grid, never a proof over all large times.
//! Margins that visibly decay across the grid are reported as undecided
//! rather than certified.

use serde::Serialize;

use crate::lp::{self, LpError, MaxSlack};
use crate::system::{SystemError, SystemSpec};
use crate::timefn::CoefficientFn;

/// Uniform sampling grid on `[t_check, t_max]`, endpoints included.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridSpec {
    pub t_check: f64,
    pub t_max: f64,
    pub points: usize,
}

impl GridSpec {
    pub fn new(t_check: f64, t_max: f64, points: usize) -> Self {
        GridSpec {
            t_check,
            t_max,
            points,
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.points)
            .map(|i| {
                self.t_check
                    + (self.t_max - self.t_check) * i as f64 / (self.points - 1).max(1) as f64
            })
            .collect()
    }

    pub fn refined(&self, factor: usize) -> GridSpec {
        GridSpec {
            t_check: self.t_check,
            t_max: self.t_max,
            points: (self.points - 1) * factor + 1,
        }
    }
}

/// Sampled matrix data: diagonal decay D, coupling norms A, envelope
/// coefficients B, per grid time.
#[derive(Debug, Clone)]
pub struct MatrixSamples {
    pub n: usize,
    pub grid: GridSpec,
    pub times: Vec<f64>,
    pub d: Vec<Vec<f64>>,
    pub a: Vec<Vec<Vec<f64>>>,
    pub b: Vec<Vec<f64>>,
}

impl MatrixSamples {
    fn half(&self, second: bool) -> MatrixSamples {
        let k = self.times.len();
        let mid = k / 2;
        let range = if second { mid..k } else { 0..mid };
        MatrixSamples {
            n: self.n,
            grid: self.grid,
            times: self.times[range.clone()].to_vec(),
            d: self.d[range.clone()].to_vec(),
            a: self.a[range.clone()].to_vec(),
            b: self.b[range].to_vec(),
        }
    }
}

/// Sample D, A, B over the grid. A entry is the coupling norm (kernels are
/// mass-one, so the coefficient itself); B is the normalized envelope
/// coefficient, zero where a component has no birth term.
pub fn sample_matrices(sys: &SystemSpec, grid: &GridSpec) -> Result<MatrixSamples, SystemError> {
    let times = grid.times();
    let n = sys.n;
    let envelopes = sys.lower_envelope(crate::system::DEFAULT_MONOTONE_CAP)?;
    let mut d = Vec::with_capacity(times.len());
    let mut a = Vec::with_capacity(times.len());
    let mut b = Vec::with_capacity(times.len());
    for &t in &times {
        let mut dk = Vec::with_capacity(n);
        for (i, di) in sys.d.iter().enumerate() {
            let v = di.eval(t)?;
            if v <= 0.0 {
                return Err(SystemError::NonPositiveDecay { index: i, t, value: v });
            }
            dk.push(v);
        }
        let mut ak = vec![vec![0.0; n]; n];
        for (i, row) in sys.linear.iter().enumerate() {
            for (j, term) in row.iter().enumerate() {
                if let Some(term) = term {
                    let v = term.a.eval(t)?;
                    if v < 0.0 {
                        return Err(SystemError::NegativeCoupling { i, j, t, value: v });
                    }
                    ak[i][j] = v;
                }
            }
        }
        let mut bk = Vec::with_capacity(n);
        for (i, env) in envelopes.iter().enumerate() {
            match env {
                None => bk.push(0.0),
                Some(env) => {
                    let v = env.beta.eval(t)?;
                    if v <= 0.0 {
                        return Err(SystemError::NonPositiveBirth {
                            component: i,
                            t,
                            value: v,
                        });
                    }
                    bk.push(v);
                }
            }
        }
        d.push(dk);
        a.push(ak);
        b.push(bk);
    }
    Ok(MatrixSamples {
        n,
        grid: *grid,
        times,
        d,
        a,
        b,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Hypothesis {
    /// Diagonal decay dominates coupling with additive margin δ.
    H2,
    /// Diagonal decay dominates coupling with ratio α > 1.
    H2Star,
    /// Birth plus coupling dominates decay with additive margin δ.
    H5,
    /// Birth dominates net decay with ratio α > 1.
    H5Star,
    /// Decay minus birth upper-envelope dominates coupling (dissipativity).
    SublinearDissipative,
}

impl std::fmt::Display for Hypothesis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Hypothesis::H2 => "H2",
            Hypothesis::H2Star => "H2*",
            Hypothesis::H5 => "H5",
            Hypothesis::H5Star => "H5*",
            Hypothesis::SublinearDissipative => "sublinear-dissipative",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", content = "value")]
pub enum Margin {
    Delta(f64),
    Ratio(f64),
}

impl Margin {
    pub fn value(&self) -> f64 {
        match self {
            Margin::Delta(v) | Margin::Ratio(v) => *v,
        }
    }
}

/// A certificate: positive vector (max component one), margin, and the
/// grid it was established on. Re-verifiable by direct substitution.
#[derive(Debug, Clone, Serialize)]
pub struct Witness {
    pub hypothesis: Hypothesis,
    pub v: Vec<f64>,
    pub margin: Margin,
    pub slack: f64,
    pub grid: GridSpec,
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum CheckStatus {
    Certified(Witness),
    RefutedOnGrid { best_margin: f64, note: String },
    Undecided { reason: String },
}

impl CheckStatus {
    pub fn is_certified(&self) -> bool {
        matches!(self, CheckStatus::Certified(_))
    }

    pub fn witness(&self) -> Option<&Witness> {
        match self {
            CheckStatus::Certified(w) => Some(w),
            _ => None,
        }
    }

    pub fn word(&self) -> &'static str {
        match self {
            CheckStatus::Certified(_) => "certified",
            CheckStatus::RefutedOnGrid { .. } => "refuted-on-grid",
            CheckStatus::Undecided { .. } => "undecided",
        }
    }
}

#[derive(Debug, Clone)]
pub struct CheckOptions {
    /// Upper cap for expanding margin searches.
    pub margin_cap: f64,
    /// Relative bisection tolerance on the certified margin.
    pub bisect_rel_tol: f64,
    /// Strictness floor for ratio hypotheses: certified needs α ≥ 1 + this.
    pub ratio_margin: f64,
    /// Enable the tail-decay guard (undecided when the certified margin
    /// visibly decays across the grid, evidence of a vanishing limit).
    pub tail_guard: bool,
}

impl Default for CheckOptions {
    fn default() -> Self {
        CheckOptions {
            margin_cap: 1e9,
            bisect_rel_tol: 1e-9,
            ratio_margin: 1e-6,
            tail_guard: true,
        }
    }
}

fn feasible(rows: Vec<Vec<f64>>, n: usize) -> Result<Option<MaxSlack>, LpError> {
    let out = lp::max_slack(&rows, n)?;
    if out.slack_scaled >= -1e-11 {
        Ok(Some(out))
    } else {
        Ok(None)
    }
}

/// Largest feasible margin by expanding search plus bisection.
/// Returns (margin, witness at that margin) or the refutation detail.
fn sup_margin(
    rows_at: &dyn Fn(f64) -> Vec<Vec<f64>>,
    n: usize,
    base: f64,
    cap: f64,
    rel_tol: f64,
) -> Result<Result<(f64, MaxSlack), MaxSlack>, LpError> {
    let feas = |m: f64| feasible(rows_at(m), n);
    let Some(base_wit) = feas(base)? else {
        let detail = lp::max_slack(&rows_at(base), n)?;
        return Ok(Err(detail));
    };
    let mut lo = base;
    let mut hi = (base.abs().max(1.0)) * 2.0;
    let mut lo_wit = base_wit;
    loop {
        if hi >= cap {
            if let Some(w) = feas(cap)? {
                return Ok(Ok((cap, w)));
            }
            hi = cap;
            break;
        }
        match feas(hi)? {
            Some(w) => {
                lo = hi;
                lo_wit = w;
                hi *= 4.0;
            }
            None => break,
        }
    }
    let tol = rel_tol * hi.max(1.0);
    let mut lo = lo;
    let mut hi = hi;
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        match feas(mid)? {
            Some(w) => {
                lo = mid;
                lo_wit = w;
            }
            None => hi = mid,
        }
    }
    Ok(Ok((lo, lo_wit)))
}

/// Tail-decay guard: certified margins on the two grid halves. When the
/// later half's margin has visibly collapsed toward the feasibility floor
/// the full-grid certificate is downgraded to undecided.
fn tail_decays(e_first: f64, e_second: f64) -> bool {
    e_second < 0.6 * e_first && e_second < 1e-2 * e_first.max(1.0)
}

struct CheckSpec<'a> {
    hypothesis: Hypothesis,
    samples: &'a MatrixSamples,
    opts: &'a CheckOptions,
    /// margin ↦ constraint rows over v
    rows_at: Box<dyn Fn(&MatrixSamples, f64) -> Vec<Vec<f64>> + 'a>,
    /// additive checks start at 0, ratio checks at the strictness floor
    base: f64,
    ratio: bool,
}

fn run_check(spec: CheckSpec<'_>) -> CheckStatus {
    let CheckSpec {
        hypothesis,
        samples,
        opts,
        rows_at,
        base,
        ratio,
    } = spec;
    let n = samples.n;
    let full = |m: f64| rows_at(samples, m);
    let outcome = match sup_margin(&full, n, base, opts.margin_cap, opts.bisect_rel_tol) {
        Ok(o) => o,
        Err(LpError::Cycling(p)) => {
            return CheckStatus::Undecided {
                reason: format!("linear program cycling guard tripped after {p} pivots"),
            }
        }
    };
    let (margin, wit) = match outcome {
        Ok(pair) => pair,
        Err(detail) => {
            let note = if ratio {
                format!(
                    "no ratio of at least 1 + {:.0e} is feasible on the grid",
                    base - 1.0
                )
            } else {
                "infeasible already at margin zero".to_string()
            };
            return CheckStatus::RefutedOnGrid {
                best_margin: detail.slack,
                note,
            };
        }
    };
    // additive margins certify only when meaningfully positive
    let floor = if ratio {
        base
    } else {
        (opts.bisect_rel_tol * margin.abs().max(1.0)).max(1e-12)
    };
    if !ratio && margin <= floor {
        return CheckStatus::RefutedOnGrid {
            best_margin: margin,
            note: "feasible only at a vanishing margin".to_string(),
        };
    }

    if opts.tail_guard && samples.times.len() >= 8 {
        let first = samples.half(false);
        let second = samples.half(true);
        let sup_on = |s: &MatrixSamples| -> Option<f64> {
            let rows = |m: f64| rows_at(s, m);
            match sup_margin(&rows, n, base, opts.margin_cap, opts.bisect_rel_tol) {
                Ok(Ok((m, _))) => Some(m),
                _ => None,
            }
        };
        if let (Some(m1), Some(m2)) = (sup_on(&first), sup_on(&second)) {
            let (e1, e2) = if ratio {
                (m1 - 1.0, m2 - 1.0)
            } else {
                (m1, m2)
            };
            if tail_decays(e1, e2) {
                return CheckStatus::Undecided {
                    reason: format!(
                        "certified margin decays across the grid ({e1:.3e} on the early half, \
                         {e2:.3e} on the late half); the inequality is unlikely to persist \
                         beyond the sampled window"
                    ),
                };
            }
        }
    }

    CheckStatus::Certified(Witness {
        hypothesis,
        v: wit.v,
        margin: if ratio {
            Margin::Ratio(margin)
        } else {
            Margin::Delta(margin)
        },
        slack: wit.slack,
        grid: samples.grid,
    })
}

fn rows_decay_vs_coupling(s: &MatrixSamples, delta: f64, alpha: f64) -> Vec<Vec<f64>> {
    // (D - alpha*A - delta*I) v >= 0, one row per component per time
    let n = s.n;
    let mut rows = Vec::with_capacity(s.times.len() * n);
    for k in 0..s.times.len() {
        for r in 0..n {
            let mut row = vec![0.0; n];
            for j in 0..n {
                row[j] = -alpha * s.a[k][r][j];
            }
            row[r] += s.d[k][r] - delta;
            rows.push(row);
        }
    }
    rows
}

fn rows_birth_vs_net_decay(s: &MatrixSamples, delta: f64, alpha: f64) -> Vec<Vec<f64>> {
    // (B + alpha*(A - D) - delta*I) v >= 0; alpha = 1 gives the additive
    // form, delta = 0 with alpha > 1 the ratio form B >= alpha (D - A)
    let n = s.n;
    let mut rows = Vec::with_capacity(s.times.len() * n);
    for k in 0..s.times.len() {
        for r in 0..n {
            let mut row = vec![0.0; n];
            for j in 0..n {
                row[j] = alpha * s.a[k][r][j];
            }
            row[r] += s.b[k][r] - alpha * s.d[k][r] - delta;
            rows.push(row);
        }
    }
    rows
}

/// Additive decay dominance: `[D(t) - A(t) - δI] v ≥ 0` on the grid.
pub fn check_h2(samples: &MatrixSamples, opts: &CheckOptions) -> CheckStatus {
    run_check(CheckSpec {
        hypothesis: Hypothesis::H2,
        samples,
        opts,
        rows_at: Box::new(|s, delta| rows_decay_vs_coupling(s, delta, 1.0)),
        base: 0.0,
        ratio: false,
    })
}

/// Ratio decay dominance: `D(t) v ≥ α A(t) v` with α > 1 on the grid.
pub fn check_h2_star(samples: &MatrixSamples, opts: &CheckOptions) -> CheckStatus {
    run_check(CheckSpec {
        hypothesis: Hypothesis::H2Star,
        samples,
        opts,
        rows_at: Box::new(|s, alpha| rows_decay_vs_coupling(s, 0.0, alpha)),
        base: 1.0 + opts.ratio_margin,
        ratio: true,
    })
}

/// Additive birth dominance: `[B(t) + A(t) - D(t) - δI] v ≥ 0` on the grid.
pub fn check_h5(samples: &MatrixSamples, opts: &CheckOptions) -> CheckStatus {
    run_check(CheckSpec {
        hypothesis: Hypothesis::H5,
        samples,
        opts,
        rows_at: Box::new(|s, delta| rows_birth_vs_net_decay(s, delta, 1.0)),
        base: 0.0,
        ratio: false,
    })
}

/// Ratio birth dominance: `B(t) v ≥ α [D(t) - A(t)] v` with α > 1.
pub fn check_h5_star(samples: &MatrixSamples, opts: &CheckOptions) -> CheckStatus {
    run_check(CheckSpec {
        hypothesis: Hypothesis::H5Star,
        samples,
        opts,
        rows_at: Box::new(|s, alpha| rows_birth_vs_net_decay(s, 0.0, alpha)),
        base: 1.0 + opts.ratio_margin,
        ratio: true,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct MMatrixWitness {
    pub v: Vec<f64>,
    pub u: Vec<f64>,
}

#[derive(Debug, thiserror::Error)]
pub enum HypothesesError {
    #[error("matrix has a positive off-diagonal entry at ({i}, {j}); not of M-matrix form")]
    PositiveOffDiagonal { i: usize, j: usize },
    #[error("upper-envelope gain for component {component} is {gain}, must be < 1")]
    GainNotSublinear { component: usize, gain: f64 },
    #[error(transparent)]
    System(#[from] SystemError),
    #[error(transparent)]
    Lp(#[from] LpError),
}

/// Positive v with `N v > 0` for a square matrix with nonpositive
/// off-diagonal entries, when one exists.
pub fn mmatrix_witness(
    n_mat: &[Vec<f64>],
) -> Result<Option<MMatrixWitness>, HypothesesError> {
    let n = n_mat.len();
    for (i, row) in n_mat.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            if i != j && v > 0.0 {
                return Err(HypothesesError::PositiveOffDiagonal { i, j });
            }
        }
    }
    let out = lp::max_slack(n_mat, n)?;
    if out.slack_scaled > 1e-10 {
        let u = n_mat
            .iter()
            .map(|row| row.iter().zip(&out.v).map(|(a, b)| a * b).sum())
            .collect();
        Ok(Some(MMatrixWitness { v: out.v, u }))
    } else {
        Ok(None)
    }
}

/// Dissipativity via a sublinear upper envelope: the caller supplies
/// `β_i⁺` and the asymptotic gains of `h_i⁺` (each must be < 1); the check
/// is `[D(t) - diag(β⁺(t)) - A(t)] u ≥ 0` on the grid.
pub fn check_sublinear_dissipative(
    sys: &SystemSpec,
    beta_plus: &[CoefficientFn],
    h_plus_gain: &[f64],
    grid: &GridSpec,
) -> Result<CheckStatus, HypothesesError> {
    for (i, &g) in h_plus_gain.iter().enumerate() {
        if g >= 1.0 {
            return Err(HypothesesError::GainNotSublinear {
                component: i,
                gain: g,
            });
        }
    }
    let samples = sample_matrices(sys, grid)?;
    let n = samples.n;
    let mut rows = Vec::with_capacity(samples.times.len() * n);
    for (k, &t) in samples.times.iter().enumerate() {
        for r in 0..n {
            let mut row = vec![0.0; n];
            for j in 0..n {
                row[j] = -samples.a[k][r][j];
            }
            row[r] += samples.d[k][r] - beta_plus[r].eval(t).map_err(SystemError::from)?;
            rows.push(row);
        }
    }
    let out = lp::max_slack(&rows, n)?;
    if out.slack_scaled >= -1e-11 {
        Ok(CheckStatus::Certified(Witness {
            hypothesis: Hypothesis::SublinearDissipative,
            v: out.v,
            margin: Margin::Delta(0.0),
            slack: out.slack,
            grid: *grid,
        }))
    } else {
        Ok(CheckStatus::RefutedOnGrid {
            best_margin: out.slack,
            note: "decay minus birth envelope does not dominate coupling on the grid".into(),
        })
    }
}

/// Re-verify a certificate by direct substitution on a refined grid at a
/// scaled-down margin. Returns false when the finer sampling breaks the
/// inequality (grid under-resolution).
pub fn reverify_witness(
    sys: &SystemSpec,
    witness: &Witness,
    refine_factor: usize,
    margin_scale: f64,
) -> Result<bool, HypothesesError> {
    let grid = witness.grid.refined(refine_factor);
    let samples = sample_matrices(sys, &grid)?;
    let rows = match (witness.hypothesis, witness.margin) {
        (Hypothesis::H2, Margin::Delta(d)) => {
            rows_decay_vs_coupling(&samples, d * margin_scale, 1.0)
        }
        (Hypothesis::H2Star, Margin::Ratio(a)) => {
            rows_decay_vs_coupling(&samples, 0.0, 1.0 + (a - 1.0) * margin_scale)
        }
        (Hypothesis::H5, Margin::Delta(d)) => {
            rows_birth_vs_net_decay(&samples, d * margin_scale, 1.0)
        }
        (Hypothesis::H5Star, Margin::Ratio(a)) => {
            rows_birth_vs_net_decay(&samples, 0.0, 1.0 + (a - 1.0) * margin_scale)
        }
        (Hypothesis::SublinearDissipative, _) => rows_decay_vs_coupling(&samples, 0.0, 1.0),
        _ => rows_decay_vs_coupling(&samples, 0.0, 1.0),
    };
    let ok = rows.iter().all(|r| {
        let scale = r.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1e-300);
        let val: f64 = r.iter().zip(&witness.v).map(|(a, b)| a * b).sum();
        val / scale >= -1e-9
    });
    Ok(ok)
}

/// Boundedness and structural flags feeding the verdict. `declared` means
/// the flag rests on builder-declared bounds; sampled flags come from a
/// growth heuristic on the grid and carry a warning.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Flag {
    pub value: bool,
    pub declared: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct H4Flag {
    pub ok: bool,
    pub reasons: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SystemFlags {
    pub no_delay_linear: bool,
    pub a_bounded: Flag,
    pub beta_bounded_above: Flag,
    pub beta_liminf_positive: Flag,
    pub f_bounded: Flag,
    pub h1_positive_decay: bool,
    /// Complete continuity of the birth terms cannot be checked
    /// numerically; recorded as builder-asserted.
    pub h3_asserted: bool,
    pub h4: H4Flag,
    pub hminus_liminf_positive: bool,
    pub warnings: Vec<String>,
}

fn growth_heuristic_bounded(values: &[f64]) -> bool {
    let mid = values.len() / 2;
    let sup1 = values[..mid].iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let sup2 = values[mid..].iter().fold(0.0f64, |m, v| m.max(v.abs()));
    sup2 <= 1.5 * sup1.max(1e-12)
}

/// Derive the flags from declared bounds where present, sampled data
/// (with warnings) otherwise.
pub fn system_flags(sys: &SystemSpec, grid: &GridSpec) -> Result<SystemFlags, SystemError> {
    let times = grid.times();
    let mut warnings = Vec::new();

    let no_delay_linear = sys.linear_part_undelayed();

    let mut a_bounded = true;
    let mut a_declared = true;
    for (i, row) in sys.linear.iter().enumerate() {
        for (j, term) in row.iter().enumerate() {
            if let Some(term) = term {
                match term.a.declared_bounds() {
                    Some(b) if b.hi.is_some() => {}
                    _ => {
                        a_declared = false;
                        let vals: Vec<f64> = times
                            .iter()
                            .map(|&t| term.a.eval(t))
                            .collect::<Result<_, _>>()?;
                        let bounded = growth_heuristic_bounded(&vals);
                        if !bounded {
                            a_bounded = false;
                        }
                        warnings.push(format!(
                            "coupling a[{i}][{j}] has no declared upper bound; sampled growth \
                             suggests it is {}",
                            if bounded { "bounded" } else { "unbounded" }
                        ));
                    }
                }
            }
        }
    }

    let envelopes = sys.lower_envelope(crate::system::DEFAULT_MONOTONE_CAP)?;
    let mut beta_bounded = true;
    let mut beta_bounded_declared = true;
    let mut beta_liminf_pos = true;
    let mut beta_liminf_declared = true;
    let mut h4_reasons = Vec::new();
    let mut hminus_liminf_positive = true;
    for (i, env) in envelopes.iter().enumerate() {
        let Some(env) = env else {
            h4_reasons.push(format!(
                "component {i} has no birth term, so no positive envelope exists"
            ));
            continue;
        };
        if env.deriv0_raw <= 0.0 {
            h4_reasons.push(format!(
                "component {i}: envelope slope at zero is {}; a positive slope is required",
                env.deriv0_raw
            ));
        }
        if env.shape.liminf_at_infinity() <= 1e-12 {
            hminus_liminf_positive = false;
        }
        match env.beta.declared() {
            Some((lo, hi, _from)) => {
                if hi.is_none() {
                    beta_bounded = false;
                }
                if lo <= 0.0 {
                    beta_liminf_pos = false;
                }
            }
            None => {
                beta_bounded_declared = false;
                beta_liminf_declared = false;
                let vals: Vec<f64> = times
                    .iter()
                    .map(|&t| env.beta.eval(t))
                    .collect::<Result<_, _>>()?;
                if !growth_heuristic_bounded(&vals) {
                    beta_bounded = false;
                }
                let mid = vals.len() / 2;
                let tail_min = vals[mid..].iter().cloned().fold(f64::INFINITY, f64::min);
                if tail_min <= 1e-12 {
                    beta_liminf_pos = false;
                }
                warnings.push(format!(
                    "birth coefficient of component {i} carries no declared bounds; \
                     boundedness flags are sampled"
                ));
            }
        }
    }

    // f bounded: per component, a uniform bound on the shape response and a
    // bounded birth coefficient
    let mut f_bounded = true;
    let mut f_declared = true;
    for (i, (birth, env)) in sys.birth.iter().zip(&envelopes).enumerate() {
        if birth.is_none() {
            continue;
        }
        let env = env.as_ref().unwrap();
        let beta_hi = match env.beta.declared() {
            Some((_, hi, _)) => {
                if hi.is_none() {
                    f_bounded = false;
                }
                hi
            }
            None => {
                f_declared = false;
                None
            }
        };
        let shape_sup = match birth.as_ref().unwrap() {
            crate::system::Nonlinearity::Birth { shape, .. } => shape.sup_bound(),
            crate::system::Nonlinearity::DistributedBirth { terms } => terms
                .iter()
                .map(|t| t.shape.sup_bound())
                .try_fold(0.0f64, |acc, s| s.map(|s| acc.max(s))),
            crate::system::Nonlinearity::CustomEnvelope { .. } => None,
            crate::system::Nonlinearity::ClampedMinBirth { shape, clamp, .. } => {
                shape.eval_normalized(*clamp).ok()
            }
        };
        match shape_sup {
            Some(_) => {}
            None => {
                f_declared = false;
                warnings.push(format!(
                    "no uniform bound derivable for the birth response of component {i}"
                ));
                f_bounded = false;
            }
        }
        if beta_hi.is_none() && env.beta.declared().is_none() {
            // sampled growth already folded into beta_bounded
            if !beta_bounded {
                f_bounded = false;
            }
        }
    }
    if !beta_bounded {
        f_bounded = false;
    }

    // positive decay on the grid
    let mut h1 = true;
    for di in &sys.d {
        for &t in &times {
            if di.eval(t)? <= 0.0 {
                h1 = false;
            }
        }
    }

    let h4_ok = h4_reasons.is_empty();
    Ok(SystemFlags {
        no_delay_linear,
        a_bounded: Flag {
            value: a_bounded,
            declared: a_declared,
        },
        beta_bounded_above: Flag {
            value: beta_bounded,
            declared: beta_bounded_declared,
        },
        beta_liminf_positive: Flag {
            value: beta_liminf_pos,
            declared: beta_liminf_declared,
        },
        f_bounded: Flag {
            value: f_bounded,
            declared: f_declared,
        },
        h1_positive_decay: h1,
        h3_asserted: true,
        h4: H4Flag {
            ok: h4_ok,
            reasons: h4_reasons,
        },
        hminus_liminf_positive,
        warnings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum VerdictKind {
    Permanent,
    UniformlyPersistent,
    NoVerdict,
}

impl std::fmt::Display for VerdictKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            VerdictKind::Permanent => "PERMANENT",
            VerdictKind::UniformlyPersistent => "UNIFORMLY PERSISTENT",
            VerdictKind::NoVerdict => "NO VERDICT",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum VerdictBranch {
    PermanenceUndelayedLinear,
    PermanenceBoundedLinear,
    PersistenceUndelayedLinear,
    PersistenceGeneral,
}

impl std::fmt::Display for VerdictBranch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            VerdictBranch::PermanenceUndelayedLinear => {
                "permanence criterion, undelayed linear part"
            }
            VerdictBranch::PermanenceBoundedLinear => {
                "permanence criterion, bounded delayed linear part"
            }
            VerdictBranch::PersistenceUndelayedLinear => {
                "uniform-persistence criterion, undelayed linear part"
            }
            VerdictBranch::PersistenceGeneral => "uniform-persistence criterion, general form",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Verdict {
    pub kind: VerdictKind,
    pub branch: Option<VerdictBranch>,
    /// Conditions that blocked stronger conclusions, most informative
    /// first.
    pub blocking: Vec<String>,
    /// Certified direction of the eventual componentwise floor: every
    /// component eventually stays above m·v_j for one positive m.
    pub floor_vector: Option<Vec<f64>>,
}

pub struct VerdictInputs<'a> {
    pub h2: &'a CheckStatus,
    pub h5: &'a CheckStatus,
    pub h5_star: &'a CheckStatus,
    pub flags: &'a SystemFlags,
}

/// The criterion tables: permanence needs decay dominance (dissipativity),
/// a tame linear part, a certified birth-dominance hypothesis matching the
/// right boundedness flag, and bounded birth terms. Uniform persistence
/// needs only the ratio birth-dominance hypothesis plus envelope
/// conditions.
pub fn permanence_verdict(inp: &VerdictInputs<'_>) -> Verdict {
    let f = inp.flags;
    let mut blocking: Vec<String> = Vec::new();

    let structural_ok = f.h1_positive_decay && f.h3_asserted && f.h4.ok;
    if !f.h1_positive_decay {
        blocking.push("decay coefficients are not positive on the grid".into());
    }
    for r in &f.h4.reasons {
        blocking.push(format!("envelope hypothesis fails: {r}"));
    }

    // permanence
    let mut perm_blockers: Vec<String> = Vec::new();
    if !inp.h2.is_certified() {
        perm_blockers.push(format!(
            "decay-dominance certificate (H2) is {}",
            inp.h2.word()
        ));
    }
    if !(f.no_delay_linear || f.a_bounded.value) {
        perm_blockers.push("delayed linear coupling with unbounded norms".into());
    }
    let route_additive = inp.h5.is_certified() && f.beta_bounded_above.value;
    let route_ratio = inp.h5_star.is_certified() && f.beta_liminf_positive.value;
    if !(route_additive || route_ratio) {
        if inp.h5.is_certified() && !f.beta_bounded_above.value {
            perm_blockers.push(
                "birth coefficients are not bounded above (blocks the additive birth-dominance \
                 route)"
                    .into(),
            );
        } else if !inp.h5.is_certified() {
            perm_blockers.push(format!(
                "birth-dominance certificate (H5) is {}",
                inp.h5.word()
            ));
        }
        if !inp.h5_star.is_certified() {
            perm_blockers.push(format!(
                "ratio birth-dominance certificate (H5*) is {}",
                inp.h5_star.word()
            ));
        } else if !f.beta_liminf_positive.value {
            perm_blockers.push("birth coefficients are not bounded below away from zero".into());
        }
    }
    if !f.f_bounded.value {
        perm_blockers.push("birth terms are not uniformly bounded".into());
    }

    if structural_ok && perm_blockers.is_empty() {
        let branch = if f.no_delay_linear {
            VerdictBranch::PermanenceUndelayedLinear
        } else {
            VerdictBranch::PermanenceBoundedLinear
        };
        let witness = if route_additive {
            inp.h5.witness()
        } else {
            inp.h5_star.witness()
        };
        return Verdict {
            kind: VerdictKind::Permanent,
            branch: Some(branch),
            blocking: Vec::new(),
            floor_vector: witness.map(|w| w.v.clone()),
        };
    }
    blocking.extend(perm_blockers);

    // uniform persistence
    let mut pers_blockers: Vec<String> = Vec::new();
    if !inp.h5_star.is_certified() {
        pers_blockers.push(format!(
            "ratio birth-dominance certificate (H5*) is {}",
            inp.h5_star.word()
        ));
    }
    if !f.no_delay_linear && !f.beta_liminf_positive.value {
        pers_blockers.push("birth coefficients are not bounded below away from zero".into());
    }
    if !f.hminus_liminf_positive {
        pers_blockers
            .push("the lower envelope shape vanishes at infinity (no uniform floor)".into());
    }
    if structural_ok && pers_blockers.is_empty() {
        let branch = if f.no_delay_linear {
            VerdictBranch::PersistenceUndelayedLinear
        } else {
            VerdictBranch::PersistenceGeneral
        };
        return Verdict {
            kind: VerdictKind::UniformlyPersistent,
            branch: Some(branch),
            blocking,
            floor_vector: inp.h5_star.witness().map(|w| w.v.clone()),
        };
    }
    blocking.extend(pers_blockers);
    let mut seen = std::collections::HashSet::new();
    blocking.retain(|b| seen.insert(b.clone()));

    Verdict {
        kind: VerdictKind::NoVerdict,
        branch: None,
        blocking,
        floor_vector: None,
    }
}

/// Limit-ratio diagnostics computed on the tail half of the grid:
/// min over components of d_i / Σ_j a_ij and β_i / (d_i - Σ_j a_ij).
#[derive(Debug, Clone, Serialize)]
pub struct RatioDiagnostics {
    pub decay_over_coupling: Option<f64>,
    pub birth_over_net_decay: Option<f64>,
}

pub fn ratio_diagnostics(samples: &MatrixSamples) -> RatioDiagnostics {
    let tail = samples.half(true);
    let mut r1 = f64::INFINITY;
    let mut any1 = false;
    let mut r2 = f64::INFINITY;
    let mut any2 = false;
    for k in 0..tail.times.len() {
        for i in 0..tail.n {
            let coupling: f64 = tail.a[k][i].iter().sum();
            if coupling > 0.0 {
                r1 = r1.min(tail.d[k][i] / coupling);
                any1 = true;
            }
            let net = tail.d[k][i] - coupling;
            if net > 0.0 && tail.b[k][i] > 0.0 {
                r2 = r2.min(tail.b[k][i] / net);
                any2 = true;
            }
        }
    }
    RatioDiagnostics {
        decay_over_coupling: any1.then_some(r1),
        birth_over_net_decay: any2.then_some(r2),
    }
}

/// Full pipeline: sample, run the four checks, compute flags and
/// diagnostics, and fold everything into a verdict.
#[derive(Debug, Clone, Serialize)]
pub struct HypothesisReport {
    pub grid: GridSpec,
    pub h2: CheckStatus,
    pub h2_star: CheckStatus,
    pub h5: CheckStatus,
    pub h5_star: CheckStatus,
    pub flags: SystemFlags,
    pub diagnostics: RatioDiagnostics,
    pub verdict: Verdict,
}

pub fn analyze(
    sys: &SystemSpec,
    grid: &GridSpec,
    opts: &CheckOptions,
) -> Result<HypothesisReport, HypothesesError> {
    let samples = sample_matrices(sys, grid)?;
    let h2 = check_h2(&samples, opts);
    let h2_star = check_h2_star(&samples, opts);
    let h5 = check_h5(&samples, opts);
    let h5_star = check_h5_star(&samples, opts);
    let flags = system_flags(sys, grid)?;
    let diagnostics = ratio_diagnostics(&samples);
    let verdict = permanence_verdict(&VerdictInputs {
        h2: &h2,
        h5: &h5,
        h5_star: &h5_star,
        flags: &flags,
    });
    Ok(HypothesisReport {
        grid: *grid,
        h2,
        h2_star,
        h5,
        h5_star,
        flags,
        diagnostics,
        verdict,
    })
}

impl HypothesisReport {
    pub fn text_summary(&self) -> String {
        let mut out = String::new();
        let fmt_status = |name: &str, s: &CheckStatus| -> String {
            match s {
                CheckStatus::Certified(w) => {
                    let margin = match w.margin {
                        Margin::Delta(d) => format!("delta = {d:.6e}"),
                        Margin::Ratio(a) => format!("alpha = {a:.6e}"),
                    };
                    let v: Vec<String> = w.v.iter().map(|x| format!("{x:.4}")).collect();
                    format!("  {name}: certified, {margin}, v = ({})\n", v.join(", "))
                }
                CheckStatus::RefutedOnGrid { best_margin, note } => {
                    format!("  {name}: refuted on grid ({note}; best slack {best_margin:.3e})\n")
                }
                CheckStatus::Undecided { reason } => format!("  {name}: undecided ({reason})\n"),
            }
        };
        out.push_str(&format!(
            "grid: [{}, {}] with {} points\n",
            self.grid.t_check, self.grid.t_max, self.grid.points
        ));
        out.push_str(&fmt_status("H2 ", &self.h2));
        out.push_str(&fmt_status("H2*", &self.h2_star));
        out.push_str(&fmt_status("H5 ", &self.h5));
        out.push_str(&fmt_status("H5*", &self.h5_star));
        out.push_str(&format!(
            "flags: undelayed-linear={}, a-bounded={}, beta-bounded={}, beta-liminf>0={}, \
             f-bounded={}, envelope-ok={}, envelope-liminf>0={}\n",
            self.flags.no_delay_linear,
            self.flags.a_bounded.value,
            self.flags.beta_bounded_above.value,
            self.flags.beta_liminf_positive.value,
            self.flags.f_bounded.value,
            self.flags.h4.ok,
            self.flags.hminus_liminf_positive,
        ));
        if let Some(r) = self.diagnostics.decay_over_coupling {
            out.push_str(&format!("tail ratio decay/coupling: {r:.6}\n"));
        }
        if let Some(r) = self.diagnostics.birth_over_net_decay {
            out.push_str(&format!("tail ratio birth/net-decay: {r:.6}\n"));
        }
        out.push_str(&format!("verdict: {}", self.verdict.kind));
        if let Some(b) = self.verdict.branch {
            out.push_str(&format!(" via {b}"));
        }
        out.push('\n');
        if let Some(v) = &self.verdict.floor_vector {
            let vs: Vec<String> = v.iter().map(|x| format!("{x:.4}")).collect();
            out.push_str(&format!(
                "floor direction: components eventually exceed m * ({}) for some m > 0\n",
                vs.join(", ")
            ));
        }
        for b in &self.verdict.blocking {
            out.push_str(&format!("blocked: {b}\n"));
        }
        for w in &self.flags.warnings {
            out.push_str(&format!("warning: {w}\n"));
        }
        out
    }
}
