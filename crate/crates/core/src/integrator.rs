//! Method-of-steps integration: explicit fourth-order Runge-Kutta with
//! cubic-Hermite dense output.
//!
//! Each accepted step draws history only from already-computed segments
//! (the fixed step is capped at a quarter of the delay span, so delayed
//! reads stay behind the step start). Instantaneous reads inside a stage
//! are served by the stage value itself through a short provisional
//! linear sliver. Positivity is monitored, never enforced.

use std::io::{self, Write};

use thiserror::Error;

use crate::system::{History, HistoryError, SystemError, SystemSpec};
use crate::timefn::Expr;

#[derive(Debug, Error)]
pub enum IntegrateError {
    #[error("step {h} exceeds a quarter of the delay span {tau}")]
    StepTooLarge { h: f64, tau: f64 },
    #[error("step must be positive and finite, got {h}")]
    BadStep { h: f64 },
    #[error("horizon {t_end} does not exceed the start time {t0}")]
    BadHorizon { t0: f64, t_end: f64 },
    #[error("component {component} crossed the positivity floor {floor} near t = {t}")]
    PositivityViolation {
        component: usize,
        t: f64,
        floor: f64,
    },
    #[error("step limit {max} exceeded")]
    MaxSteps { max: usize },
    #[error("initial data is not admissible: {detail}")]
    Inadmissible { detail: String },
    #[error(transparent)]
    System(#[from] SystemError),
}

/// Initial data on `[t0 - τ, t0]`, evaluated at absolute time.
#[derive(Debug, Clone)]
pub enum InitialSegment {
    Constant(Vec<f64>),
    /// One expression tree per component.
    Exprs(Vec<Expr>),
    /// Dense output carried over from a previous run (for chained runs).
    Dense {
        t_lo: f64,
        t_hi: f64,
        segs: Vec<Segment>,
    },
}

impl InitialSegment {
    pub fn dim(&self) -> Option<usize> {
        match self {
            InitialSegment::Constant(v) => Some(v.len()),
            InitialSegment::Exprs(v) => Some(v.len()),
            InitialSegment::Dense { segs, .. } => segs.first().map(|s| s.coeffs.len()),
        }
    }

    pub fn eval(&self, component: usize, t: f64) -> Result<f64, HistoryError> {
        match self {
            InitialSegment::Constant(v) => {
                v.get(component).copied().ok_or(HistoryError::Component {
                    component,
                    n: v.len(),
                })
            }
            InitialSegment::Exprs(v) => {
                let e = v.get(component).ok_or(HistoryError::Component {
                    component,
                    n: v.len(),
                })?;
                e.eval(t).map_err(|_| HistoryError::Gap {
                    t,
                    lo: f64::NEG_INFINITY,
                    hi: f64::INFINITY,
                })
            }
            InitialSegment::Dense { t_lo, t_hi, segs } => {
                let t = t.clamp(*t_lo, *t_hi);
                let seg = find_segment(segs, t).ok_or(HistoryError::Gap {
                    t,
                    lo: *t_lo,
                    hi: *t_hi,
                })?;
                Ok(seg.value(component, t))
            }
        }
    }

    fn min_on(&self, component: usize, a: f64, b: f64) -> Result<f64, HistoryError> {
        match self {
            InitialSegment::Constant(v) => self.eval(component, a).map(|_| v[component]),
            InitialSegment::Exprs(_) => {
                crate::numerics::scan_golden_min(a, b, 33, |t| self.eval(component, t))
            }
            InitialSegment::Dense { segs, .. } => segments_min(segs, component, a, b),
        }
    }
}

/// One dense-output step: cubic per component in u = (t - t_lo)/h.
#[derive(Debug, Clone)]
pub struct Segment {
    pub t_lo: f64,
    pub h: f64,
    /// coeffs[comp] = [c0, c1, c2, c3]: value c0 + c1 u + c2 u² + c3 u³.
    pub coeffs: Vec<[f64; 4]>,
}

impl Segment {
    fn hermite(t_lo: f64, h: f64, y0: &[f64], f0: &[f64], y1: &[f64], f1: &[f64]) -> Segment {
        let coeffs = y0
            .iter()
            .enumerate()
            .map(|(i, &a)| {
                let dy = y1[i] - a;
                let c1 = h * f0[i];
                let c2 = 3.0 * dy - h * (2.0 * f0[i] + f1[i]);
                let c3 = -2.0 * dy + h * (f0[i] + f1[i]);
                [a, c1, c2, c3]
            })
            .collect();
        Segment { t_lo, h, coeffs }
    }

    #[inline]
    pub fn value(&self, component: usize, t: f64) -> f64 {
        let u = (t - self.t_lo) / self.h;
        let c = &self.coeffs[component];
        ((c[3] * u + c[2]) * u + c[1]) * u + c[0]
    }

    pub fn t_hi(&self) -> f64 {
        self.t_lo + self.h
    }

    /// Minimum over [a, b] ∩ [t_lo, t_hi]: endpoints plus interior
    /// critical points of the cubic.
    fn min_on(&self, component: usize, a: f64, b: f64) -> f64 {
        let ua = ((a - self.t_lo) / self.h).clamp(0.0, 1.0);
        let ub = ((b - self.t_lo) / self.h).clamp(0.0, 1.0);
        let c = &self.coeffs[component];
        let eval_u = |u: f64| ((c[3] * u + c[2]) * u + c[1]) * u + c[0];
        let mut best = eval_u(ua).min(eval_u(ub));
        // roots of 3 c3 u² + 2 c2 u + c1
        let (qa, qb, qc) = (3.0 * c[3], 2.0 * c[2], c[1]);
        if qa.abs() < 1e-300 {
            if qb.abs() > 0.0 {
                let u = -qc / qb;
                if u > ua && u < ub {
                    best = best.min(eval_u(u));
                }
            }
        } else {
            let disc = qb * qb - 4.0 * qa * qc;
            if disc >= 0.0 {
                let r = disc.sqrt();
                for u in [(-qb - r) / (2.0 * qa), (-qb + r) / (2.0 * qa)] {
                    if u > ua && u < ub {
                        best = best.min(eval_u(u));
                    }
                }
            }
        }
        best
    }
}

fn find_segment(segs: &[Segment], t: f64) -> Option<&Segment> {
    if segs.is_empty() {
        return None;
    }
    let idx = segs.partition_point(|s| s.t_hi() < t - 1e-13);
    segs.get(idx).or_else(|| segs.last()).filter(|s| {
        t >= s.t_lo - 1e-9 * (1.0 + t.abs()) && t <= s.t_hi() + 1e-9 * (1.0 + t.abs())
    })
}

fn segments_min(segs: &[Segment], component: usize, a: f64, b: f64) -> Result<f64, HistoryError> {
    let mut best = f64::INFINITY;
    let start = segs.partition_point(|s| s.t_hi() < a - 1e-13);
    for seg in &segs[start..] {
        if seg.t_lo > b + 1e-13 {
            break;
        }
        best = best.min(seg.min_on(component, a, b));
    }
    if best.is_finite() {
        Ok(best)
    } else {
        Err(HistoryError::Gap {
            t: a,
            lo: segs.first().map(|s| s.t_lo).unwrap_or(a),
            hi: segs.last().map(|s| s.t_hi()).unwrap_or(b),
        })
    }
}

/// Stored history during a run: analytic initial part plus computed steps.
struct HistoryBuffer<'a> {
    n: usize,
    init: &'a InitialSegment,
    init_lo: f64,
    t0: f64,
    t_now: f64,
    segs: Vec<Segment>,
    /// Oldest time that must stay reachable; earlier segments are pruned
    /// in streaming mode.
    retain_from: f64,
    prune: bool,
    pruned_upto: usize,
    /// Index of the last segment a delayed read landed in; reads advance
    /// nearly monotonically, so a local scan beats a cold binary search.
    hint: std::cell::Cell<usize>,
}

impl HistoryBuffer<'_> {
    fn find_hinted(&self, t: f64) -> Option<&Segment> {
        let lo = self.pruned_upto;
        let n = self.segs.len();
        if n == lo {
            return None;
        }
        let mut i = self.hint.get().clamp(lo, n - 1);
        let mut scanned = 0;
        loop {
            let seg = &self.segs[i];
            if t < seg.t_lo - 1e-13 {
                if i == lo {
                    break;
                }
                i -= 1;
            } else if t > seg.t_hi() + 1e-13 {
                if i + 1 == n {
                    break;
                }
                i += 1;
            } else {
                self.hint.set(i);
                return Some(seg);
            }
            scanned += 1;
            if scanned > 64 {
                // fall back to the cold search
                let found = find_segment(&self.segs[lo..], t)?;
                let idx = (found as *const Segment as usize
                    - self.segs.as_ptr() as usize)
                    / std::mem::size_of::<Segment>();
                self.hint.set(idx);
                return Some(found);
            }
        }
        find_segment(&self.segs[lo..], t)
    }

    fn value(&self, component: usize, t: f64) -> Result<f64, HistoryError> {
        // Explicitness: the integrator never reads stored history past the
        // current step start.
        debug_assert!(t <= self.t_now + 1e-9 * (1.0 + t.abs()));
        if t > self.t_now + 1e-9 * (1.0 + t.abs()) {
            return Err(HistoryError::Gap {
                t,
                lo: self.init_lo,
                hi: self.t_now,
            });
        }
        if t <= self.t0 {
            return self.init.eval(component, t.max(self.init_lo));
        }
        match self.find_hinted(t) {
            Some(seg) => Ok(seg.value(component, t)),
            None => Err(HistoryError::Gap {
                t,
                lo: self.init_lo,
                hi: self.t_now,
            }),
        }
    }

    fn min_on(&self, component: usize, a: f64, b: f64) -> Result<f64, HistoryError> {
        let a = a.max(self.init_lo);
        let mut best = f64::INFINITY;
        if a <= self.t0 {
            best = best.min(self.init.min_on(component, a, b.min(self.t0))?);
        }
        if b > self.t0 && !self.segs[self.pruned_upto..].is_empty() {
            best = best.min(segments_min(
                &self.segs[self.pruned_upto..],
                component,
                a.max(self.t0),
                b,
            )?);
        }
        Ok(best)
    }

    fn push(&mut self, seg: Segment) {
        self.t_now = seg.t_hi();
        self.segs.push(seg);
        if self.prune {
            let cutoff = self.t_now - self.retain_from;
            while self.pruned_upto < self.segs.len()
                && self.segs[self.pruned_upto].t_hi() < cutoff
            {
                self.pruned_upto += 1;
            }
            // compact occasionally so memory stays bounded
            if self.pruned_upto > 4096 {
                self.segs.drain(..self.pruned_upto);
                let h = self.hint.get().saturating_sub(self.pruned_upto);
                self.hint.set(h);
                self.pruned_upto = 0;
            }
        }
    }
}

/// View used for one RK stage: stored history up to the step start plus a
/// provisional linear sliver up to the stage time.
struct StageHistory<'a, 'b> {
    buf: &'a HistoryBuffer<'b>,
    t_base: f64,
    y_base: &'a [f64],
    t_stage: f64,
    y_stage: &'a [f64],
}

impl History for StageHistory<'_, '_> {
    fn dim(&self) -> usize {
        self.buf.n
    }

    fn value(&self, component: usize, t: f64) -> Result<f64, HistoryError> {
        if t <= self.t_base {
            return self.buf.value(component, t);
        }
        if t <= self.t_stage + 1e-12 * (1.0 + t.abs()) {
            if self.t_stage == self.t_base {
                return Ok(self.y_base[component]);
            }
            let w = ((t - self.t_base) / (self.t_stage - self.t_base)).clamp(0.0, 1.0);
            return Ok(self.y_base[component] * (1.0 - w) + self.y_stage[component] * w);
        }
        Err(HistoryError::Gap {
            t,
            lo: self.buf.init_lo,
            hi: self.t_stage,
        })
    }

    fn min_on(&self, component: usize, a: f64, b: f64) -> Result<f64, HistoryError> {
        let mut best = f64::INFINITY;
        if a <= self.t_base {
            best = self.buf.min_on(component, a, b.min(self.t_base))?;
        }
        if b > self.t_base {
            // linear sliver: endpoints suffice
            best = best
                .min(self.value(component, b.min(self.t_stage))?)
                .min(self.y_base[component]);
        }
        Ok(best)
    }
}

#[derive(Debug, Clone)]
pub struct IntegrateOptions {
    pub step: f64,
    /// Shrink the step so the delay span is an integer number of steps
    /// (keeps derivative breakpoints at multiples of τ on step knots).
    pub align_breakpoints: bool,
    /// Components crossing this floor abort the run; `None` disables the
    /// monitor (for sign-indefinite linear tests).
    pub positivity_floor: Option<f64>,
    pub max_steps: usize,
    /// Keep the full dense output. Off for long streamed runs, where only
    /// a rolling window of history is retained.
    pub keep_dense: bool,
    /// Record `(t, x)` samples on this uniform spacing.
    pub sample_every: Option<f64>,
}

impl Default for IntegrateOptions {
    fn default() -> Self {
        IntegrateOptions {
            step: 1e-2,
            align_breakpoints: true,
            positivity_floor: Some(0.0),
            max_steps: 100_000_000,
            keep_dense: true,
            sample_every: None,
        }
    }
}

impl IntegrateOptions {
    pub fn with_step(step: f64) -> Self {
        IntegrateOptions {
            step,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct StepStats {
    pub steps: usize,
    pub rhs_evals: usize,
    pub step_size: f64,
    pub min_state: f64,
}

/// Dense-output solution on `[t0, t_end]`, plus the initial data; never
/// extrapolates outside its span.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub n: usize,
    pub t0: f64,
    pub t_end: f64,
    pub tau: f64,
    init: InitialSegment,
    init_lo: f64,
    segs: Vec<Segment>,
    pub stats: StepStats,
    pub samples: Option<Vec<(f64, Vec<f64>)>>,
}

impl Trajectory {
    pub fn value_at(&self, t: f64) -> Result<Vec<f64>, HistoryError> {
        (0..self.n).map(|i| self.value(i, t)).collect()
    }

    pub fn final_state(&self) -> Result<(f64, Vec<f64>), HistoryError> {
        Ok((self.t_end, self.value_at(self.t_end)?))
    }

    /// Minimum of the dense output over a window (knot scan plus interior
    /// critical points of each cubic).
    pub fn window_min(&self, component: usize, a: f64, b: f64) -> Result<f64, HistoryError> {
        self.min_on(component, a, b)
    }

    /// CSV export `t,x1,...,xn` on a uniform grid, 17 significant digits.
    pub fn export_csv<W: Write>(&self, w: &mut W, from: f64, to: f64, dt: f64) -> io::Result<()> {
        write!(w, "t")?;
        for i in 1..=self.n {
            write!(w, ",x{i}")?;
        }
        writeln!(w)?;
        let steps = ((to - from) / dt).round() as usize;
        for k in 0..=steps {
            let t = from + k as f64 * dt;
            let x = self
                .value_at(t.min(self.t_end))
                .map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e.to_string()))?;
            write!(w, "{:.16e}", t)?;
            for v in x {
                write!(w, ",{:.16e}", v)?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    /// Final stretch `[t_end - span, t_end]` as initial data for a
    /// follow-up run.
    pub fn tail_initial(&self, span: f64) -> InitialSegment {
        let from = self.t_end - span;
        let start = self.segs.partition_point(|s| s.t_hi() < from - 1e-13);
        InitialSegment::Dense {
            t_lo: self.segs[start].t_lo,
            t_hi: self.t_end,
            segs: self.segs[start..].to_vec(),
        }
    }
}

impl History for Trajectory {
    fn dim(&self) -> usize {
        self.n
    }

    fn value(&self, component: usize, t: f64) -> Result<f64, HistoryError> {
        if t < self.init_lo - 1e-12 || t > self.t_end + 1e-9 * (1.0 + t.abs()) {
            return Err(HistoryError::Gap {
                t,
                lo: self.init_lo,
                hi: self.t_end,
            });
        }
        if t <= self.t0 {
            return self.init.eval(component, t.max(self.init_lo));
        }
        match find_segment(&self.segs, t) {
            Some(seg) => Ok(seg.value(component, t)),
            None => Err(HistoryError::Gap {
                t,
                lo: self.init_lo,
                hi: self.t_end,
            }),
        }
    }

    fn min_on(&self, component: usize, a: f64, b: f64) -> Result<f64, HistoryError> {
        let a = a.max(self.init_lo);
        let b = b.min(self.t_end);
        let mut best = f64::INFINITY;
        if a <= self.t0 {
            best = best.min(self.init.min_on(component, a, b.min(self.t0))?);
        }
        if b > self.t0 {
            best = best.min(segments_min(&self.segs, component, a.max(self.t0), b)?);
        }
        Ok(best)
    }
}

/// Integrate from initial data in the admissible cone (componentwise
/// nonnegative with a positive value at the start time).
pub fn integrate(
    sys: &SystemSpec,
    init: &InitialSegment,
    t_end: f64,
    opts: &IntegrateOptions,
) -> Result<Trajectory, IntegrateError> {
    let t0 = sys.domain_start;
    if !(t_end > t0) {
        return Err(IntegrateError::BadHorizon { t0, t_end });
    }
    if !(opts.step > 0.0) || !opts.step.is_finite() {
        return Err(IntegrateError::BadStep { h: opts.step });
    }
    let tau = sys.tau;
    let mut h = opts.step;
    if tau > 0.0 {
        if h > tau / 4.0 + 1e-12 {
            return Err(IntegrateError::StepTooLarge { h, tau });
        }
        if opts.align_breakpoints {
            h = tau / (tau / h).ceil();
        }
    }

    let n = sys.n;
    if let Some(d) = init.dim() {
        if d != n {
            return Err(IntegrateError::Inadmissible {
                detail: format!("initial data has {d} components, system has {n}"),
            });
        }
    }
    let init_lo = t0 - tau;

    let y0: Vec<f64> = (0..n)
        .map(|i| init.eval(i, t0))
        .collect::<Result<_, _>>()
        .map_err(|e| IntegrateError::Inadmissible {
            detail: e.to_string(),
        })?;

    if let Some(floor) = opts.positivity_floor {
        // admissible set: nonnegative segment, positive at the start point
        for i in 0..n {
            if y0[i] <= floor {
                return Err(IntegrateError::Inadmissible {
                    detail: format!("component {i} is {} at t0; must exceed {floor}", y0[i]),
                });
            }
            for k in 0..=32 {
                let t = init_lo + (t0 - init_lo) * k as f64 / 32.0;
                let v = init.eval(i, t).map_err(|e| IntegrateError::Inadmissible {
                    detail: e.to_string(),
                })?;
                if v < floor - 1e-12 {
                    return Err(IntegrateError::Inadmissible {
                        detail: format!("component {i} is {v} at t = {t}, below {floor}"),
                    });
                }
            }
        }
    }

    let mut buf = HistoryBuffer {
        n,
        init,
        init_lo,
        t0,
        t_now: t0,
        segs: Vec::new(),
        retain_from: tau.max(opts.step) * 2.0 + 4.0 * h,
        prune: !opts.keep_dense,
        pruned_upto: 0,
        hint: std::cell::Cell::new(0),
    };

    let mut stats = StepStats {
        step_size: h,
        min_state: y0.iter().cloned().fold(f64::INFINITY, f64::min),
        ..Default::default()
    };
    let mut samples: Option<Vec<(f64, Vec<f64>)>> = opts.sample_every.map(|_| Vec::new());
    let mut next_sample = t0;
    let mut t = t0;
    let mut y = y0;

    fn stage_into(
        sys: &SystemSpec,
        buf: &HistoryBuffer,
        t_base: f64,
        y_base: &[f64],
        t_stage: f64,
        y_stage: &[f64],
        out: &mut [f64],
    ) -> Result<(), IntegrateError> {
        let view = StageHistory {
            buf,
            t_base,
            y_base,
            t_stage,
            y_stage,
        };
        sys.rhs_eval_into(t_stage, &view, out)?;
        Ok(())
    }

    let mut f_now = vec![0.0; n];
    stage_into(sys, &buf, t, &y, t, &y, &mut f_now)?;
    stats.rhs_evals += 1;

    let mut scratch = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut y_next = vec![0.0; n];
    let mut f_next = vec![0.0; n];
    while t < t_end - 1e-12 * (1.0 + t_end.abs()) {
        if stats.steps >= opts.max_steps {
            return Err(IntegrateError::MaxSteps {
                max: opts.max_steps,
            });
        }
        let hs = h.min(t_end - t);
        let k1 = &f_now;
        for i in 0..n {
            scratch[i] = y[i] + 0.5 * hs * k1[i];
        }
        stage_into(sys, &buf, t, &y, t + 0.5 * hs, &scratch, &mut k2)?;
        for i in 0..n {
            scratch[i] = y[i] + 0.5 * hs * k2[i];
        }
        stage_into(sys, &buf, t, &y, t + 0.5 * hs, &scratch, &mut k3)?;
        for i in 0..n {
            scratch[i] = y[i] + hs * k3[i];
        }
        stage_into(sys, &buf, t, &y, t + hs, &scratch, &mut k4)?;
        for i in 0..n {
            y_next[i] = y[i] + hs / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        // derivative at the right knot doubles as the next step's first stage
        stage_into(sys, &buf, t, &y, t + hs, &y_next, &mut f_next)?;
        stats.rhs_evals += 4;

        let seg = Segment::hermite(t, hs, &y, k1, &y_next, &f_next);
        if let Some(floor) = opts.positivity_floor {
            for i in 0..n {
                let m = seg.min_on(i, t, t + hs);
                stats.min_state = stats.min_state.min(m);
                if m < floor - 1e-12 {
                    return Err(IntegrateError::PositivityViolation {
                        component: i,
                        t: t + hs,
                        floor,
                    });
                }
            }
        } else {
            for i in 0..n {
                stats.min_state = stats.min_state.min(y_next[i]);
            }
        }
        buf.push(seg);
        t += hs;
        std::mem::swap(&mut y, &mut y_next);
        std::mem::swap(&mut f_now, &mut f_next);
        stats.steps += 1;

        if let Some(every) = opts.sample_every {
            while next_sample <= t + 1e-12 {
                let xs = (0..n)
                    .map(|i| buf.value(i, next_sample.min(t)))
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(SystemError::from)?;
                samples.as_mut().unwrap().push((next_sample, xs));
                next_sample += every;
            }
        }
    }

    Ok(Trajectory {
        n,
        t0,
        t_end: t,
        tau,
        init: init.clone(),
        init_lo,
        segs: buf.segs.split_off(buf.pruned_upto.min(buf.segs.len())),
        stats,
        samples,
    })
}
