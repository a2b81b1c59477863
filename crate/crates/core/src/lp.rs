//! Small dense LP feasibility: the engine behind every hypothesis check.
//!
//! `max_slack` solves  max s  subject to  R_k · v ≥ s  for every row,
//! ε ≤ v_i ≤ 1, by a two-phase tableau simplex with Bland's rule wrapped
//! in an active-set loop (the binding rows of these families are few, so
//! each inner tableau stays tiny no matter how many grid rows exist).

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LpError {
    #[error("simplex cycling guard exceeded after {0} pivots")]
    Cycling(usize),
}

pub const V_FLOOR: f64 = 1e-9;
const PIVOT_TOL: f64 = 1e-11;
const ITER_CAP: usize = 20_000;

#[derive(Debug, Clone)]
pub struct MaxSlack {
    /// Positive vector, normalized to max component one.
    pub v: Vec<f64>,
    /// Worst raw row value R_k · v at the returned v.
    pub slack: f64,
    /// Worst row value after per-row max-abs scaling; scale-free
    /// feasibility signal.
    pub slack_scaled: f64,
}

enum Rel {
    Le,
    Ge,
}

struct Tableau {
    m: usize,
    ncols: usize,
    rows: Vec<Vec<f64>>, // m rows of ncols + 1 (rhs last)
    obj: Vec<f64>,       // reduced-cost row, same width
    basis: Vec<usize>,
    pivots: usize,
}

impl Tableau {
    fn pivot(&mut self, row: usize, col: usize) {
        let p = self.rows[row][col];
        for v in self.rows[row].iter_mut() {
            *v /= p;
        }
        for i in 0..self.m {
            if i != row {
                let f = self.rows[i][col];
                if f != 0.0 {
                    for j in 0..=self.ncols {
                        let d = self.rows[row][j];
                        self.rows[i][j] -= f * d;
                    }
                }
            }
        }
        let f = self.obj[col];
        if f != 0.0 {
            for j in 0..=self.ncols {
                let d = self.rows[row][j];
                self.obj[j] -= f * d;
            }
        }
        self.basis[row] = col;
        self.pivots += 1;
    }

    /// Iterate to optimality (all reduced costs ≥ -tol) with Bland's rule,
    /// restricted to columns `j < col_limit`.
    fn run(&mut self, col_limit: usize) -> Result<(), LpError> {
        loop {
            let mut enter = None;
            for j in 0..col_limit {
                if self.obj[j] < -PIVOT_TOL {
                    enter = Some(j);
                    break;
                }
            }
            let Some(col) = enter else { return Ok(()) };
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.m {
                if self.rows[i][col] > PIVOT_TOL {
                    let ratio = self.rows[i][self.ncols] / self.rows[i][col];
                    let better = match leave {
                        None => true,
                        Some((li, lr)) => {
                            ratio < lr - 1e-15
                                || ((ratio - lr).abs() <= 1e-15 && self.basis[i] < self.basis[li])
                        }
                    };
                    if better {
                        leave = Some((i, ratio));
                    }
                }
            }
            let Some((row, _)) = leave else {
                // callers box every variable, so an unbounded ray is a bug
                panic!("max-slack program reported unbounded");
            };
            self.pivot(row, col);
            if self.pivots > ITER_CAP {
                return Err(LpError::Cycling(self.pivots));
            }
        }
    }
}

/// Maximize c·x subject to rows (a, rel, b), x ≥ 0. Returns (x, value);
/// `None` when infeasible.
fn simplex_max(
    c: &[f64],
    cons: &[(Vec<f64>, Rel, f64)],
) -> Result<Option<(Vec<f64>, f64)>, LpError> {
    let nx = c.len();
    let m = cons.len();
    let mut canon: Vec<(Vec<f64>, Rel, f64)> = Vec::with_capacity(m);
    for (a, rel, b) in cons {
        if *b < 0.0 {
            let neg: Vec<f64> = a.iter().map(|x| -x).collect();
            let flipped = match rel {
                Rel::Le => Rel::Ge,
                Rel::Ge => Rel::Le,
            };
            canon.push((neg, flipped, -b));
        } else {
            canon.push((
                a.clone(),
                match rel {
                    Rel::Le => Rel::Le,
                    Rel::Ge => Rel::Ge,
                },
                *b,
            ));
        }
    }
    let n_slack = m;
    let n_art = canon.iter().filter(|(_, r, _)| matches!(r, Rel::Ge)).count();
    let ncols = nx + n_slack + n_art;
    let mut t = Tableau {
        m,
        ncols,
        rows: vec![vec![0.0; ncols + 1]; m],
        obj: vec![0.0; ncols + 1],
        basis: vec![0; m],
        pivots: 0,
    };
    let mut art_cols = Vec::new();
    let mut next_art = nx + n_slack;
    for (i, (a, rel, b)) in canon.iter().enumerate() {
        t.rows[i][..nx].copy_from_slice(a);
        t.rows[i][ncols] = *b;
        match rel {
            Rel::Le => {
                t.rows[i][nx + i] = 1.0;
                t.basis[i] = nx + i;
            }
            Rel::Ge => {
                t.rows[i][nx + i] = -1.0;
                t.rows[i][next_art] = 1.0;
                t.basis[i] = next_art;
                art_cols.push(next_art);
                next_art += 1;
            }
        }
    }

    if n_art > 0 {
        // phase 1: maximize -(sum of artificials); obj = -c priced out
        for &col in &art_cols {
            t.obj[col] = 1.0;
        }
        for i in 0..m {
            if art_cols.binary_search(&t.basis[i]).is_ok() {
                for j in 0..=ncols {
                    let d = t.rows[i][j];
                    t.obj[j] -= d;
                }
            }
        }
        t.run(ncols)?;
        if -t.obj[ncols] > 1e-7 {
            return Ok(None);
        }
        // drive leftover artificials out of the basis where possible
        for i in 0..m {
            if art_cols.binary_search(&t.basis[i]).is_ok() {
                if let Some(col) = (0..nx + n_slack).find(|&j| t.rows[i][j].abs() > PIVOT_TOL) {
                    t.pivot(i, col);
                }
            }
        }
    }

    // phase 2: obj = -c priced out against the current basis
    t.obj = vec![0.0; ncols + 1];
    for j in 0..nx {
        t.obj[j] = -c[j];
    }
    for i in 0..m {
        let b = t.basis[i];
        if b < nx && c[b] != 0.0 {
            let f = c[b];
            for j in 0..=ncols {
                let d = t.rows[i][j];
                t.obj[j] += f * d;
            }
        }
    }
    t.run(nx + n_slack)?;

    let mut x = vec![0.0; nx];
    for i in 0..m {
        if t.basis[i] < nx {
            x[t.basis[i]] = t.rows[i][ncols];
        }
    }
    let val = c.iter().zip(&x).map(|(ci, xi)| ci * xi).sum();
    Ok(Some((x, val)))
}

/// Inner LP over a subset of (scaled) rows.
fn solve_active(rows: &[&Vec<f64>], n: usize) -> Result<(Vec<f64>, f64), LpError> {
    // variables: w_1..w_n (v = eps + w), sp, sn (s = sp - sn)
    let mut cons: Vec<(Vec<f64>, Rel, f64)> = Vec::with_capacity(rows.len() + n);
    for r in rows {
        let mut a = Vec::with_capacity(n + 2);
        a.extend_from_slice(r);
        a.push(-1.0);
        a.push(1.0);
        let rhs = -V_FLOOR * r.iter().sum::<f64>();
        cons.push((a, Rel::Ge, rhs));
    }
    for j in 0..n {
        let mut a = vec![0.0; n + 2];
        a[j] = 1.0;
        cons.push((a, Rel::Le, 1.0 - V_FLOOR));
    }
    let mut c = vec![0.0; n + 2];
    c[n] = 1.0;
    c[n + 1] = -1.0;
    let (x, val) = simplex_max(&c, &cons)?
        .expect("boxed max-slack program is always feasible");
    let v: Vec<f64> = (0..n).map(|j| V_FLOOR + x[j]).collect();
    Ok((v, val))
}

/// Maximize the worst slack of `rows · v` over the box `[ε, 1]^n`.
pub fn max_slack(rows: &[Vec<f64>], n: usize) -> Result<MaxSlack, LpError> {
    assert!(!rows.is_empty() && rows.iter().all(|r| r.len() == n));
    // per-row max-abs scaling for conditioning; decisions use scaled slacks
    let scaled: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| {
            let m = r.iter().fold(0.0f64, |acc, x| acc.max(x.abs())).max(1e-300);
            r.iter().map(|x| x / m).collect()
        })
        .collect();

    // seed with the worst rows at v = 1
    let mut order: Vec<usize> = (0..scaled.len()).collect();
    order.sort_by(|&a, &b| {
        let sa: f64 = scaled[a].iter().sum();
        let sb: f64 = scaled[b].iter().sum();
        sa.partial_cmp(&sb).unwrap()
    });
    let mut active: Vec<usize> = order.into_iter().take(n + 2).collect();

    let mut result = None;
    for _ in 0..400 {
        let subset: Vec<&Vec<f64>> = active.iter().map(|&i| &scaled[i]).collect();
        let (v, s_active) = solve_active(&subset, n)?;
        let mut worst = f64::INFINITY;
        let mut worst_idx = 0;
        for (i, r) in scaled.iter().enumerate() {
            let val: f64 = r.iter().zip(&v).map(|(a, b)| a * b).sum();
            if val < worst {
                worst = val;
                worst_idx = i;
            }
        }
        if worst >= s_active - 1e-10 || active.contains(&worst_idx) {
            result = Some(v);
            break;
        }
        active.push(worst_idx);
    }
    let v = result.expect("active-set loop exhausted without convergence");

    // normalize to max component one; scaling v scales every row value by
    // the same positive factor, so feasibility signs are preserved
    let vmax = v.iter().cloned().fold(0.0f64, f64::max);
    let v: Vec<f64> = v.iter().map(|x| (x / vmax).max(V_FLOOR)).collect();
    let slack = rows
        .iter()
        .map(|r| r.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>())
        .fold(f64::INFINITY, f64::min);
    let slack_scaled = scaled
        .iter()
        .map(|r| r.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>())
        .fold(f64::INFINITY, f64::min);
    Ok(MaxSlack {
        v,
        slack,
        slack_scaled,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_rows() {
        let out = max_slack(&[vec![1.0, 0.0], vec![0.0, 1.0]], 2).unwrap();
        assert!((out.v[0] - 1.0).abs() < 1e-9 && (out.v[1] - 1.0).abs() < 1e-9);
        assert!((out.slack - 1.0).abs() < 1e-8);
    }

    #[test]
    fn symmetric_m_matrix() {
        let out = max_slack(&[vec![2.0, -1.0], vec![-1.0, 2.0]], 2).unwrap();
        assert!((out.v[0] - 1.0).abs() < 1e-9 && (out.v[1] - 1.0).abs() < 1e-9);
        assert!((out.slack - 1.0).abs() < 1e-8);
    }

    #[test]
    fn infeasible_pair() {
        // both rows nonpositive against any positive v; brute-force grid
        // over v confirms no positive vector works
        let rows = vec![vec![0.0, -1.0], vec![-1.0, 0.0]];
        let mut brute_best = f64::NEG_INFINITY;
        for i in 1..=20 {
            for j in 1..=20 {
                let v = [i as f64 / 20.0, j as f64 / 20.0];
                let worst = (-v[1]).min(-v[0]);
                brute_best = brute_best.max(worst);
            }
        }
        assert!(brute_best < 0.0);
        let out = max_slack(&rows, 2).unwrap();
        assert!(out.slack < 0.0);
    }

    #[test]
    fn many_redundant_rows_stay_cheap_and_correct() {
        // a large family dominated by one binding row
        let mut rows = Vec::new();
        for k in 0..2000 {
            let t = 1.0 + k as f64;
            rows.push(vec![2.0 + 1.0 / t, -1.0]);
            rows.push(vec![-1.0, 2.0 + 1.0 / t]);
        }
        let out = max_slack(&rows, 2).unwrap();
        let binding = 1.0 + 1.0 / 2000.0;
        assert!((out.slack - binding).abs() < 1e-6, "slack {}", out.slack);
        assert!((out.v[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn single_negative_row_floors_at_epsilon() {
        let out = max_slack(&[vec![-1.0]], 1).unwrap();
        assert!(out.slack < 0.0);
    }

    #[test]
    fn mixed_scale_rows_certify_cleanly() {
        // one huge-magnitude family and one O(1) family, both feasible
        let mut rows = Vec::new();
        for k in 0..500 {
            let t = 10.0 + k as f64 * 25.0;
            rows.push(vec![2.0e6 + t, -1.0e6]);
            rows.push(vec![-1.0e6, 2.0e6 + t]);
            rows.push(vec![1.0, -0.25]);
            rows.push(vec![-0.25, 1.0]);
        }
        let out = max_slack(&rows, 2).unwrap();
        assert!(out.slack_scaled > 0.0);
        assert!((out.v[0] - 1.0).abs() < 1e-6 && (out.v[1] - 1.0).abs() < 1e-6);
        assert!((out.slack - 0.75).abs() < 1e-6);
    }
}
