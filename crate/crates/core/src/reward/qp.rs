//! Margin-constrained reward projection.
//!
//! Finds the reward vector nearest to the structure scores (least squares)
//! subject to every correct sample sitting at least `eps` above the group
//! mean and every incorrect sample at least `eps` below it. Each constraint
//! is linear: with `a_i = sign_i * (e_i - 1/n * 1)` it reads
//! `a_i . R >= eps`, and every `a_i` annihilates the all-ones direction, so
//! the feasible set and the solution are translation-invariant.
//!
//! Solved exactly with a primal active-set method: group sizes are small
//! (tens at most), so each working-set subproblem is a tiny Gram system.

use super::RewardError;

const STEP_TOL: f64 = 1e-11;
const DUAL_TOL: f64 = 1e-10;
const PIVOT_TOL: f64 = 1e-10;

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// `a_i . v` for the i-th margin constraint.
fn constraint_dot(signs: &[f64], i: usize, v: &[f64], mean_v: f64) -> f64 {
    signs[i] * (v[i] - mean_v)
}

fn is_feasible(v: &[f64], signs: &[f64], eps: f64, slack: f64) -> bool {
    let m = mean(v);
    (0..v.len()).all(|i| constraint_dot(signs, i, v, m) >= eps - slack)
}

pub(crate) fn signs_from_labels(labels: &[bool]) -> Vec<f64> {
    labels.iter().map(|&b| if b { 1.0 } else { -1.0 }).collect()
}

/// Unique minimizer of `sum (R_i - S_i)^2` under the margin constraints.
///
/// Returns `Infeasible` when the labels are homogeneous (summing the
/// constraints forces `0 >= n * eps`) and `NumericalFailure` when the
/// solution fails its own KKT check at `kkt_tol`.
pub fn shape_rewards_qp(
    scores: &[f64],
    labels: &[bool],
    eps: f64,
    kkt_tol: f64,
) -> Result<Vec<f64>, RewardError> {
    let n = scores.len();
    if n < 2 || labels.len() != n {
        return Err(RewardError::GroupTooSmall { size: n.min(labels.len()) });
    }
    let n_pos = labels.iter().filter(|&&b| b).count();
    let n_neg = n - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(RewardError::Infeasible);
    }
    let signs = signs_from_labels(labels);

    // Already-feasible scores are the unconstrained optimum: exact fixed point.
    if is_feasible(scores, &signs, eps, 0.0) {
        return Ok(scores.to_vec());
    }

    // Feasible start: +/- t meets every margin for mixed labels.
    let t = eps * n as f64 / (2.0 * n_pos.min(n_neg) as f64);
    let mut x: Vec<f64> = signs.iter().map(|s| s * t).collect();
    let mut working: Vec<usize> = Vec::new();

    let max_iters = 100 + 20 * n;
    for _ in 0..max_iters {
        let (candidate, duals) = match solve_eqp(scores, &signs, &working, eps) {
            Ok(pair) => pair,
            Err(dependent) => {
                working.remove(dependent);
                continue;
            }
        };

        let step: f64 = candidate
            .iter()
            .zip(&x)
            .map(|(c, xi)| (c - xi).abs())
            .fold(0.0, f64::max);

        if step <= STEP_TOL {
            let worst = duals
                .iter()
                .enumerate()
                .filter(|(_, v)| **v < -DUAL_TOL)
                .min_by(|a, b| a.1.partial_cmp(b.1).expect("duals are finite"));
            if let Some((idx, _)) = worst {
                working.remove(idx);
                x = candidate;
                continue;
            }
            let residual = kkt_residual(&candidate, scores, labels, eps, kkt_tol);
            if residual > kkt_tol {
                return Err(RewardError::NumericalFailure { residual });
            }
            return Ok(candidate);
        }

        let mean_x = mean(&x);
        let p: Vec<f64> = candidate.iter().zip(&x).map(|(c, xi)| c - xi).collect();
        let mean_p = mean(&p);
        let mut alpha = 1.0f64;
        let mut blocker = None;
        for i in 0..n {
            if working.contains(&i) {
                continue;
            }
            let d = signs[i] * (p[i] - mean_p);
            if d < -1e-13 {
                let bound = (eps - constraint_dot(&signs, i, &x, mean_x)) / d;
                if bound < alpha {
                    alpha = bound.max(0.0);
                    blocker = Some(i);
                }
            }
        }
        for (xi, pi) in x.iter_mut().zip(&p) {
            *xi += alpha * pi;
        }
        if alpha < 1.0 {
            if let Some(b) = blocker {
                working.push(b);
            }
        }
    }
    Err(RewardError::NumericalFailure { residual: f64::INFINITY })
}

/// Equality-constrained subproblem: minimize `||x - s||^2` with the working
/// constraints active. Stationarity gives `x = s + sum nu_j a_j`; the duals
/// solve the Gram system `(A_W A_W^T) nu = eps - A_W s`.
///
/// `Err(k)` flags a linearly dependent working constraint to drop.
fn solve_eqp(
    scores: &[f64],
    signs: &[f64],
    working: &[usize],
    eps: f64,
) -> Result<(Vec<f64>, Vec<f64>), usize> {
    let n = scores.len();
    let m = working.len();
    if m == 0 {
        return Ok((scores.to_vec(), Vec::new()));
    }
    let mean_s = mean(scores);
    let mut gram = vec![vec![0.0f64; m]; m];
    let mut rhs = vec![0.0f64; m];
    for a in 0..m {
        for (b, row) in gram[a].iter_mut().enumerate().take(m) {
            let delta = if working[a] == working[b] { 1.0 } else { 0.0 };
            *row = signs[working[a]] * signs[working[b]] * (delta - 1.0 / n as f64);
        }
        rhs[a] = eps - constraint_dot(signs, working[a], scores, mean_s);
    }
    let duals = gauss_solve(gram, rhs)?;

    let mut x = scores.to_vec();
    let weighted: f64 = duals.iter().zip(working).map(|(nu, &j)| nu * signs[j]).sum();
    for xi in x.iter_mut() {
        *xi -= weighted / n as f64;
    }
    for (nu, &j) in duals.iter().zip(working) {
        x[j] += nu * signs[j];
    }
    Ok((x, duals))
}

/// Gaussian elimination with partial pivoting on a small dense system.
/// `Err(k)` reports a vanishing pivot in column `k`.
fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Result<Vec<f64>, usize> {
    let m = b.len();
    for col in 0..m {
        let pivot_row = (col..m)
            .max_by(|&p, &q| {
                a[p][col]
                    .abs()
                    .partial_cmp(&a[q][col].abs())
                    .expect("pivots are finite")
            })
            .expect("non-empty column");
        if a[pivot_row][col].abs() < PIVOT_TOL {
            return Err(col);
        }
        a.swap(col, pivot_row);
        b.swap(col, pivot_row);
        for row in col + 1..m {
            let factor = a[row][col] / a[col][col];
            if factor == 0.0 {
                continue;
            }
            let (upper, lower) = a.split_at_mut(row);
            let pivot_row = &upper[col];
            for (entry, pivot) in lower[0][col..m].iter_mut().zip(&pivot_row[col..m]) {
                *entry -= factor * pivot;
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0f64; m];
    for row in (0..m).rev() {
        let mut acc = b[row];
        for k in row + 1..m {
            acc -= a[row][k] * x[k];
        }
        x[row] = acc / a[row][row];
    }
    Ok(x)
}

/// Worst violation across the KKT conditions: primal feasibility, Lagrangian
/// stationarity, dual non-negativity, and complementary slackness. Dual
/// multipliers are reconstructed by least squares over the constraints
/// active at `activity_tol`.
pub fn kkt_residual(
    rewards: &[f64],
    scores: &[f64],
    labels: &[bool],
    eps: f64,
    activity_tol: f64,
) -> f64 {
    let n = rewards.len();
    if n == 0 || scores.len() != n || labels.len() != n {
        return f64::INFINITY;
    }
    let signs = signs_from_labels(labels);
    let mean_r = mean(rewards);

    let slacks: Vec<f64> = (0..n)
        .map(|i| constraint_dot(&signs, i, rewards, mean_r) - eps)
        .collect();
    let primal = slacks.iter().fold(0.0f64, |acc, s| acc.max(-s));

    let active: Vec<usize> =
        (0..n).filter(|&i| slacks[i].abs() <= activity_tol).collect();

    // Least-squares duals: (A_W A_W^T) nu = A_W * grad, grad = 2 (R - S).
    let grad: Vec<f64> = rewards.iter().zip(scores).map(|(r, s)| 2.0 * (r - s)).collect();
    let mean_grad = mean(&grad);
    let m = active.len();
    let mut duals = vec![0.0f64; m];
    if m > 0 {
        let mut gram = vec![vec![0.0f64; m]; m];
        let mut rhs = vec![0.0f64; m];
        for a in 0..m {
            for (b, entry) in gram[a].iter_mut().enumerate().take(m) {
                let delta = if active[a] == active[b] { 1.0 } else { 0.0 };
                *entry = signs[active[a]] * signs[active[b]] * (delta - 1.0 / n as f64);
            }
            rhs[a] = constraint_dot(&signs, active[a], &grad, mean_grad);
        }
        duals = lsq_solve(gram, rhs);
    }

    // With every constraint active the constraint matrix has a rank-one
    // kernel spanned by the sign vector, so duals form a one-parameter
    // family; shift along the kernel into the non-negative orthant when
    // that is possible.
    if m == n {
        let mut lo = f64::NEG_INFINITY;
        let mut hi = f64::INFINITY;
        for (a, &i) in active.iter().enumerate() {
            if signs[i] > 0.0 {
                lo = lo.max(-duals[a]);
            } else {
                hi = hi.min(duals[a]);
            }
        }
        if lo <= hi {
            let t = lo.max(0.0).min(hi);
            for (a, &i) in active.iter().enumerate() {
                duals[a] += t * signs[i];
            }
        }
    }

    // Stationarity: grad - sum nu_j a_j = 0.
    let weighted: f64 = duals.iter().zip(&active).map(|(nu, &j)| nu * signs[j]).sum();
    let mut stationarity = 0.0f64;
    for i in 0..n {
        let mut contribution = -weighted / n as f64;
        if let Some(pos) = active.iter().position(|&j| j == i) {
            contribution += duals[pos] * signs[i];
        }
        stationarity = stationarity.max((grad[i] - contribution).abs());
    }

    let dual_negativity = duals.iter().fold(0.0f64, |acc, nu| acc.max(-nu));
    let complementarity = active
        .iter()
        .zip(&duals)
        .fold(0.0f64, |acc, (&j, nu)| acc.max((nu * slacks[j]).abs()));

    primal.max(stationarity).max(dual_negativity).max(complementarity)
}

/// As [`gauss_solve`] but treats vanishing pivots as dependent rows whose
/// multiplier is zero, so duplicated active constraints stay solvable.
fn lsq_solve(a: Vec<Vec<f64>>, b: Vec<f64>) -> Vec<f64> {
    let m = b.len();
    let mut dropped = vec![false; m];
    loop {
        let kept: Vec<usize> = (0..m).filter(|&i| !dropped[i]).collect();
        let reduced_a: Vec<Vec<f64>> = kept
            .iter()
            .map(|&i| kept.iter().map(|&j| a[i][j]).collect())
            .collect();
        let reduced_b: Vec<f64> = kept.iter().map(|&i| b[i]).collect();
        match gauss_solve(reduced_a, reduced_b) {
            Ok(solution) => {
                let mut full = vec![0.0f64; m];
                for (value, &i) in solution.into_iter().zip(&kept) {
                    full[i] = value;
                }
                return full;
            }
            // Dependent row; zero its multiplier and retry without it.
            Err(col) => dropped[kept[col]] = true,
        }
    }
}

/// True iff `rewards` satisfies all KKT conditions of the projection
/// problem within `tol`.
pub fn verify_kkt(
    rewards: &[f64],
    scores: &[f64],
    labels: &[bool],
    eps: f64,
    tol: f64,
) -> bool {
    kkt_residual(rewards, scores, labels, eps, tol) <= tol
}

/// Slow reference solver: projected gradient ascent on the dual of the
/// projection problem. Kept deliberately independent of the active-set
/// path so the two can cross-check each other.
pub mod reference {
    use super::{mean, signs_from_labels};

    /// Dual iteration: `nu <- max(0, nu + eta * (eps - A s - 0.5 A A^T nu))`,
    /// primal recovered as `R = S + 0.5 A^T nu`.
    ///
    /// Convergence is measured on the duals: kernel components of the
    /// constraint matrix move `nu` without moving `R`, so a primal-delta
    /// stop could fire while the duals are still sliding toward the box
    /// boundary. The dual Hessian's spectrum is `{1/2, 0}`, so any step
    /// below 4 converges.
    pub fn projected_gradient(
        scores: &[f64],
        labels: &[bool],
        eps: f64,
        max_iters: usize,
        tol: f64,
    ) -> Option<Vec<f64>> {
        let n = scores.len();
        let n_pos = labels.iter().filter(|&&b| b).count();
        if n_pos == 0 || n_pos == n {
            return None;
        }
        let signs = signs_from_labels(labels);
        let mean_s = mean(scores);
        let eta = 1.5;

        let mut nu = vec![0.0f64; n];
        for _ in 0..max_iters {
            let w: f64 = signs.iter().zip(&nu).map(|(s, v)| s * v).sum();
            let mut next = vec![0.0f64; n];
            for i in 0..n {
                let a_dot_s = signs[i] * (scores[i] - mean_s);
                let aat_nu = signs[i] * (signs[i] * nu[i] - w / n as f64);
                next[i] = (nu[i] + eta * (eps - a_dot_s - 0.5 * aat_nu)).max(0.0);
            }
            let delta = next
                .iter()
                .zip(&nu)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            nu = next;
            if delta < tol {
                break;
            }
        }
        let w: f64 = signs.iter().zip(&nu).map(|(s, v)| s * v).sum();
        let mut r = vec![0.0f64; n];
        for i in 0..n {
            r[i] = scores[i] + 0.5 * (signs[i] * nu[i] - w / n as f64);
        }
        Some(r)
    }
}
