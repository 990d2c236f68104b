//! Small dense Levenberg–Marquardt solver with forward-difference Jacobians.

#[derive(Debug, Clone)]
pub struct LmOptions {
    pub max_iterations: usize,
    /// Stop when the relative cost decrease falls below this.
    pub cost_tol: f64,
    /// Stop when the relative parameter step falls below this.
    pub step_tol: f64,
    /// Relative finite-difference step.
    pub fd_step: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        LmOptions {
            max_iterations: 200,
            cost_tol: 1e-14,
            step_tol: 1e-12,
            fd_step: 1e-7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LmResult {
    pub x: Vec<f64>,
    pub residuals: Vec<f64>,
    /// ½‖r‖².
    pub cost: f64,
    /// JᵀJ at the solution.
    pub jtj: Vec<Vec<f64>>,
    pub iterations: usize,
    pub converged: bool,
}

pub fn jacobian<F>(f: &F, x: &[f64], r0: &[f64], rel_step: f64) -> Option<Vec<Vec<f64>>>
where
    F: Fn(&[f64]) -> Option<Vec<f64>>,
{
    let m = r0.len();
    let mut j = vec![vec![0.0; x.len()]; m];
    let mut xp = x.to_vec();
    for k in 0..x.len() {
        let h = rel_step * x[k].abs().max(1e-3);
        xp[k] = x[k] + h;
        let rp = f(&xp)?;
        xp[k] = x[k];
        for i in 0..m {
            j[i][k] = (rp[i] - r0[i]) / h;
        }
    }
    Some(j)
}

fn normal_equations(j: &[Vec<f64>], r: &[f64]) -> (Vec<Vec<f64>>, Vec<f64>) {
    let n = j.first().map_or(0, |row| row.len());
    let mut a = vec![vec![0.0; n]; n];
    let mut g = vec![0.0; n];
    for (row, ri) in j.iter().zip(r) {
        for p in 0..n {
            g[p] += row[p] * ri;
            for q in 0..n {
                a[p][q] += row[p] * row[q];
            }
        }
    }
    (a, g)
}

/// Solves a symmetric positive-definite system by Cholesky; `None` if the
/// matrix is not positive definite.
pub fn cholesky_solve(a: &[Vec<f64>], b: &[f64]) -> Option<Vec<f64>> {
    let n = b.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for k in 0..=i {
            let mut s = a[i][k];
            for p in 0..k {
                s -= l[i][p] * l[k][p];
            }
            if i == k {
                if s <= 0.0 || !s.is_finite() {
                    return None;
                }
                l[i][i] = s.sqrt();
            } else {
                l[i][k] = s / l[k][k];
            }
        }
    }
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut s = b[i];
        for p in 0..i {
            s -= l[i][p] * y[p];
        }
        y[i] = s / l[i][i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for p in i + 1..n {
            s -= l[p][i] * x[p];
        }
        x[i] = s / l[i][i];
    }
    Some(x)
}

/// Inverse of a symmetric positive-definite matrix.
pub fn spd_inverse(a: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = a.len();
    let mut inv = vec![vec![0.0; n]; n];
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        let col = cholesky_solve(a, &e)?;
        for i in 0..n {
            inv[i][j] = col[i];
        }
    }
    Some(inv)
}

/// Minimises ½‖f(x)‖². `f` returns `None` for infeasible parameters, which
/// the solver treats as a rejected step.
pub fn minimize<F>(f: F, x0: &[f64], opts: &LmOptions) -> Option<LmResult>
where
    F: Fn(&[f64]) -> Option<Vec<f64>>,
{
    let mut x = x0.to_vec();
    let mut r = f(&x)?;
    let mut cost = 0.5 * r.iter().map(|v| v * v).sum::<f64>();
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    let mut j = jacobian(&f, &x, &r, opts.fd_step)?;
    while iterations < opts.max_iterations {
        iterations += 1;
        let (a, g) = normal_equations(&j, &r);
        let mut accepted = false;
        for _ in 0..30 {
            let mut damped = a.clone();
            for (k, row) in damped.iter_mut().enumerate() {
                row[k] += lambda * a[k][k].max(1e-30);
            }
            let neg_g: Vec<f64> = g.iter().map(|v| -v).collect();
            let step = match cholesky_solve(&damped, &neg_g) {
                Some(s) => s,
                None => {
                    lambda *= 10.0;
                    continue;
                }
            };
            let xn: Vec<f64> = x.iter().zip(&step).map(|(a, b)| a + b).collect();
            if let Some(rn) = f(&xn) {
                let cn = 0.5 * rn.iter().map(|v| v * v).sum::<f64>();
                if cn.is_finite() && cn <= cost {
                    let rel_dec = (cost - cn) / cost.max(1e-300);
                    let rel_step = step
                        .iter()
                        .zip(&xn)
                        .map(|(s, v)| s.abs() / v.abs().max(1e-12))
                        .fold(0.0, f64::max);
                    x = xn;
                    r = rn;
                    cost = cn;
                    lambda = (lambda / 3.0).max(1e-12);
                    accepted = true;
                    if rel_dec < opts.cost_tol || rel_step < opts.step_tol {
                        converged = true;
                    }
                    break;
                }
            }
            lambda *= 4.0;
        }
        if !accepted {
            // No downhill step exists at any damping: a stationary point.
            converged = true;
        }
        if converged {
            break;
        }
        j = jacobian(&f, &x, &r, opts.fd_step)?;
    }
    let j = jacobian(&f, &x, &r, opts.fd_step)?;
    let (jtj, _) = normal_equations(&j, &r);
    Some(LmResult {
        x,
        residuals: r,
        cost,
        jtj,
        iterations,
        converged,
    })
}
