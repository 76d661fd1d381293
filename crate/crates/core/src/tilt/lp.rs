//! Bounded-variable primal simplex for the moment-cancellation problem
//!
//! ```text
//! minimise   Σ_r (s⁺_r + s⁻_r)
//! subject to Σ_i a_ri·f_i + s⁺_r − s⁻_r = 0      (r < k)
//!            lb ≤ f_i ≤ ub,  s± ≥ 0
//! ```
//!
//! `k` is tiny (the explored dimension) and `m` can be tens of thousands, so
//! the basis inverse is rebuilt densely every iteration and pricing is a
//! single pass over the columns.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub f: Vec<f64>,
    /// Optimal `‖Σ a_i f_i‖₁`.
    pub objective: f64,
    /// Simplex multipliers at the optimum.
    pub duals: Vec<f64>,
    pub iterations: usize,
}

#[derive(Clone, Copy, PartialEq, Debug)]
enum State {
    Lower,
    Upper,
    Basic(usize),
}

/// `cols[i]` is the constraint column of `f_i` (length `k`).
pub fn solve(cols: &[Vec<f64>], k: usize, lb: f64, ub: f64) -> Result<LpSolution> {
    let m = cols.len();
    if !(lb <= ub) {
        return Err(Error::Precondition(format!("empty box [{lb}, {ub}]")));
    }
    let nvar = m + 2 * k;
    // Artificial j ∈ [0, 2k): column sign(j)·e_{j/2}, sign + for even j.
    let art_col = |j: usize| -> (usize, f64) { (j / 2, if j % 2 == 0 { 1.0 } else { -1.0 }) };
    let col = |v: usize| -> DVector<f64> {
        if v < m {
            DVector::from_column_slice(&cols[v])
        } else {
            let (r, s) = art_col(v - m);
            let mut e = DVector::zeros(k);
            e[r] = s;
            e
        }
    };
    let upper = |v: usize| if v < m { ub } else { f64::INFINITY };
    let lower = |v: usize| if v < m { lb } else { 0.0 };
    let cost = |v: usize| if v < m { 0.0 } else { 1.0 };

    let mut x = vec![0.0; nvar];
    let mut state = vec![State::Lower; nvar];
    x[..m].fill(lb);
    let mut resid = vec![0.0; k];
    for c in cols {
        for (r, a) in resid.iter_mut().zip(c) {
            *r -= a * lb;
        }
    }
    let mut basis: Vec<usize> = (0..k)
        .map(|r| m + 2 * r + usize::from(resid[r] < 0.0))
        .collect();
    for (r, &v) in basis.iter().enumerate() {
        state[v] = State::Basic(r);
        x[v] = resid[r].abs();
    }

    let tol = 1e-12;
    let max_iter = 50 * (nvar + 10);
    let mut degenerate_run = 0usize;
    let mut iterations = 0;
    loop {
        if iterations >= max_iter {
            return Err(Error::Precondition("tilt LP iteration limit reached".into()));
        }
        iterations += 1;

        let bmat = DMatrix::from_fn(k, k, |i, j| col(basis[j])[i]);
        let binv = bmat
            .try_inverse()
            .ok_or_else(|| Error::Precondition("singular simplex basis".into()))?;

        // Refresh basic values from the nonbasic ones.
        // Nonbasic artificials sit at zero.
        let mut rhs = DVector::zeros(k);
        for v in 0..m {
            if !matches!(state[v], State::Basic(_)) {
                for (r, a) in cols[v].iter().enumerate() {
                    rhs[r] -= x[v] * a;
                }
            }
        }
        let xb = &binv * rhs;
        for (r, &v) in basis.iter().enumerate() {
            x[v] = xb[r];
        }

        let cb = DVector::from_iterator(k, basis.iter().map(|&v| cost(v)));
        let y = binv.transpose() * cb;

        let reduced = |v: usize| -> f64 {
            if v < m {
                -cols[v].iter().zip(y.iter()).map(|(a, b)| a * b).sum::<f64>()
            } else {
                let (r, s) = art_col(v - m);
                1.0 - s * y[r]
            }
        };
        let bland = degenerate_run > 50;
        let mut entering: Option<(usize, f64, f64)> = None;
        for v in 0..nvar {
            let dir = match state[v] {
                State::Basic(_) => continue,
                State::Lower => {
                    let d = reduced(v);
                    if d < -tol && upper(v) > lower(v) {
                        1.0
                    } else {
                        continue;
                    }
                }
                State::Upper => {
                    let d = reduced(v);
                    if d > tol {
                        -1.0
                    } else {
                        continue;
                    }
                }
            };
            let score = reduced(v).abs();
            if bland {
                entering = Some((v, dir, score));
                break;
            }
            if entering.is_none_or(|(_, _, s)| score > s) {
                entering = Some((v, dir, score));
            }
        }
        let Some((q, dir, _)) = entering else {
            let f = x[..m].iter().map(|v| v.clamp(lb, ub)).collect();
            let objective = x[m..].iter().map(|v| v.max(0.0)).sum();
            return Ok(LpSolution {
                f,
                objective,
                duals: y.as_slice().to_vec(),
                iterations,
            });
        };

        // x_B(t) = x_B − t·dir·B⁻¹a_q
        let delta = -(&binv * col(q)) * dir;
        let mut step = upper(q) - lower(q);
        let mut leave: Option<(usize, f64)> = None;
        for (r, &v) in basis.iter().enumerate() {
            let dv = delta[r];
            if dv < -1e-14 {
                let t = (x[v] - lower(v)).max(0.0) / -dv;
                if t < step {
                    step = t;
                    leave = Some((r, lower(v)));
                }
            } else if dv > 1e-14 && upper(v).is_finite() {
                let t = (upper(v) - x[v]).max(0.0) / dv;
                if t < step {
                    step = t;
                    leave = Some((r, upper(v)));
                }
            }
        }
        if !step.is_finite() {
            return Err(Error::Precondition("tilt LP unbounded".into()));
        }
        degenerate_run = if step <= 1e-15 { degenerate_run + 1 } else { 0 };

        x[q] += dir * step;
        for (r, &v) in basis.iter().enumerate() {
            x[v] += step * delta[r];
        }
        match leave {
            None => {
                state[q] = if dir > 0.0 { State::Upper } else { State::Lower };
                x[q] = if dir > 0.0 { upper(q) } else { lower(q) };
            }
            Some((r, bound)) => {
                let out = basis[r];
                x[out] = bound;
                state[out] = if bound == lower(out) { State::Lower } else { State::Upper };
                basis[r] = q;
                state[q] = State::Basic(r);
            }
        }
    }
}
