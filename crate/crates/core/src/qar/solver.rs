//! Deterministic primal-dual interior-point solver for the quantile
//! regression linear program, with a vertex-polish step.
//!
//! The LP is solved through its bounded dual
//!   max y'a  s.t.  X'a = (1-tau) X'1,  0 <= a <= 1,
//! whose multipliers for the equality constraints recover the regression
//! coefficients. Each Newton step only factorizes a (p+1)x(p+1) weighted
//! normal matrix, so the cost per iteration is O(n p^2).

use crate::error::{Error, Result};

const MAX_ITER: usize = 100;
const BOUNDARY_FRACTION: f64 = 0.9995;

/// Dense row-major design matrix with a handful of columns.
pub struct Design {
    pub rows: Vec<f64>, // n * k, row-major
    pub n: usize,
    pub k: usize,
}

impl Design {
    fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.k..(i + 1) * self.k]
    }

    fn matvec(&self, beta: &[f64], out: &mut [f64]) {
        for i in 0..self.n {
            out[i] = dot(self.row(i), beta);
        }
    }

    /// X' diag(d) v
    fn weighted_tvec(&self, d: &[f64], v: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for i in 0..self.n {
            let w = d[i] * v[i];
            for (o, x) in out.iter_mut().zip(self.row(i)) {
                *o += w * x;
            }
        }
    }

    /// X' diag(d) X, upper triangle packed into a k*k buffer.
    fn weighted_gram(&self, d: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for i in 0..self.n {
            let row = self.row(i);
            let di = d[i];
            for a in 0..self.k {
                let da = di * row[a];
                for b in a..self.k {
                    out[a * self.k + b] += da * row[b];
                }
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// In-place Cholesky solve of a symmetric positive-definite system given the
/// upper triangle of `m`. Fails on (numerically) rank-deficient input.
fn cholesky_solve(m: &[f64], rhs: &[f64], k: usize) -> Result<Vec<f64>> {
    let mut l = vec![0.0; k * k];
    let max_diag = (0..k)
        .map(|i| m[i * k + i].abs())
        .fold(0.0_f64, f64::max)
        .max(1.0);
    for j in 0..k {
        let mut diag = m[j * k + j];
        for t in 0..j {
            diag -= l[j * k + t] * l[j * k + t];
        }
        if diag <= 1e-12 * max_diag {
            return Err(Error::DegenerateFit(
                "rank-deficient design matrix".into(),
            ));
        }
        let dj = diag.sqrt();
        l[j * k + j] = dj;
        for i in (j + 1)..k {
            let mut v = m[j * k + i]; // upper triangle holds m[j][i], j < i
            for t in 0..j {
                v -= l[i * k + t] * l[j * k + t];
            }
            l[i * k + j] = v / dj;
        }
    }
    // forward then backward substitution
    let mut x = rhs.to_vec();
    for i in 0..k {
        for t in 0..i {
            x[i] -= l[i * k + t] * x[t];
        }
        x[i] /= l[i * k + i];
    }
    for i in (0..k).rev() {
        for t in (i + 1)..k {
            x[i] -= l[t * k + i] * x[t];
        }
        x[i] /= l[i * k + i];
    }
    Ok(x)
}

/// Gaussian elimination with partial pivoting for the polish step.
fn lu_solve(mut m: Vec<f64>, mut rhs: Vec<f64>, k: usize) -> Option<Vec<f64>> {
    for col in 0..k {
        let (pivot_row, pivot_val) = (col..k)
            .map(|r| (r, m[r * k + col].abs()))
            .fold((col, 0.0), |acc, cur| if cur.1 > acc.1 { cur } else { acc });
        if pivot_val < 1e-12 {
            return None;
        }
        if pivot_row != col {
            for c in 0..k {
                m.swap(col * k + c, pivot_row * k + c);
            }
            rhs.swap(col, pivot_row);
        }
        let pivot = m[col * k + col];
        for r in (col + 1)..k {
            let factor = m[r * k + col] / pivot;
            if factor == 0.0 {
                continue;
            }
            for c in col..k {
                m[r * k + c] -= factor * m[col * k + c];
            }
            rhs[r] -= factor * rhs[col];
        }
    }
    for i in (0..k).rev() {
        for t in (i + 1)..k {
            rhs[i] -= m[i * k + t] * rhs[t];
        }
        rhs[i] /= m[i * k + i];
    }
    Some(rhs)
}

fn pinball_objective(residuals: &[f64], tau: f64) -> f64 {
    residuals
        .iter()
        .map(|&r| if r >= 0.0 { tau * r } else { (tau - 1.0) * r })
        .sum()
}

fn step_length(v: &[f64], dv: &[f64]) -> f64 {
    let mut alpha = 1.0_f64;
    for (&x, &dx) in v.iter().zip(dv) {
        if dx < 0.0 {
            alpha = alpha.min(-x / dx * BOUNDARY_FRACTION);
        }
    }
    alpha
}

/// Minimizes the summed pinball loss over coefficient vectors, returning
/// `(theta, objective)`.
pub fn solve_quantile_lp(design: &Design, y: &[f64], tau: f64) -> Result<(Vec<f64>, f64)> {
    let (n, k) = (design.n, design.k);
    assert_eq!(y.len(), n);

    // start at the analytic center of the box, with an OLS coefficient guess
    let ones = vec![1.0; n];
    let mut gram = vec![0.0; k * k];
    design.weighted_gram(&ones, &mut gram);
    let mut xty = vec![0.0; k];
    design.weighted_tvec(&ones, y, &mut xty);
    let mut beta = cholesky_solve(&gram, &xty, k)?;

    let mut r = vec![0.0; n];
    design.matvec(&beta, &mut r);
    for i in 0..n {
        r[i] = y[i] - r[i];
    }
    let scale = 1.0 + r.iter().map(|v| v.abs()).sum::<f64>() / n as f64;
    let eps0 = 0.1 * scale;
    let mut z: Vec<f64> = r.iter().map(|&v| v.max(0.0) + eps0).collect();
    let mut w: Vec<f64> = z.iter().zip(&r).map(|(&zi, &ri)| zi - ri).collect();
    let mut a = vec![1.0 - tau; n];
    let mut s = vec![tau; n];

    let mut d = vec![0.0; n];
    let mut xb = vec![0.0; n];
    let mut rhs = vec![0.0; k];
    let mut converged = false;

    for _ in 0..MAX_ITER {
        let gap: f64 = dot(&a, &z) + dot(&s, &w);
        let obj = pinball_objective(&r, tau);
        let dual_res = r
            .iter()
            .zip(&w)
            .zip(&z)
            .map(|((&ri, &wi), &zi)| (wi - zi - ri).abs())
            .fold(0.0_f64, f64::max);
        if gap <= 1e-12 * (1.0 + obj.abs()) && dual_res <= 1e-9 * scale {
            converged = true;
            break;
        }

        for i in 0..n {
            d[i] = 1.0 / (z[i] / a[i] + w[i] / s[i]);
        }

        // affine-scaling (predictor) direction
        design.weighted_gram(&d, &mut gram);
        design.weighted_tvec(&d, &r, &mut rhs);
        let db_aff = cholesky_solve(&gram, &rhs, k)?;
        design.matvec(&db_aff, &mut xb);
        let da_aff: Vec<f64> = (0..n).map(|i| d[i] * (r[i] - xb[i])).collect();
        let dz_aff: Vec<f64> = (0..n).map(|i| -z[i] - z[i] / a[i] * da_aff[i]).collect();
        let dw_aff: Vec<f64> = (0..n).map(|i| -w[i] + w[i] / s[i] * da_aff[i]).collect();
        let ds_aff: Vec<f64> = da_aff.iter().map(|v| -v).collect();

        let ap_aff = step_length(&a, &da_aff).min(step_length(&s, &ds_aff));
        let ad_aff = step_length(&z, &dz_aff).min(step_length(&w, &dw_aff));

        let mu = gap / (2.0 * n as f64);
        let mut gap_aff = 0.0;
        for i in 0..n {
            gap_aff += (a[i] + ap_aff * da_aff[i]) * (z[i] + ad_aff * dz_aff[i])
                + (s[i] + ap_aff * ds_aff[i]) * (w[i] + ad_aff * dw_aff[i]);
        }
        let mu_aff = gap_aff / (2.0 * n as f64);
        let sigma = (mu_aff / mu).powi(3).clamp(0.0, 1.0);
        let mu_t = sigma * mu;

        // corrected direction
        let xi: Vec<f64> = (0..n)
            .map(|i| {
                r[i] + mu_t * (1.0 / a[i] - 1.0 / s[i])
                    - da_aff[i] * dz_aff[i] / a[i]
                    - da_aff[i] * dw_aff[i] / s[i]
            })
            .collect();
        design.weighted_tvec(&d, &xi, &mut rhs);
        let db = cholesky_solve(&gram, &rhs, k)?;
        design.matvec(&db, &mut xb);
        let da: Vec<f64> = (0..n).map(|i| d[i] * (xi[i] - xb[i])).collect();
        let dz: Vec<f64> = (0..n)
            .map(|i| mu_t / a[i] - z[i] - da_aff[i] * dz_aff[i] / a[i] - z[i] / a[i] * da[i])
            .collect();
        let dw: Vec<f64> = (0..n)
            .map(|i| mu_t / s[i] - w[i] + da_aff[i] * dw_aff[i] / s[i] + w[i] / s[i] * da[i])
            .collect();
        let ds: Vec<f64> = da.iter().map(|v| -v).collect();

        let ap = step_length(&a, &da).min(step_length(&s, &ds)).min(1.0);
        let ad = step_length(&z, &dz).min(step_length(&w, &dw)).min(1.0);

        for i in 0..n {
            a[i] += ap * da[i];
            s[i] += ap * ds[i];
            z[i] += ad * dz[i];
            w[i] += ad * dw[i];
        }
        for (b, db_i) in beta.iter_mut().zip(&db) {
            *b += ad * db_i;
        }
        design.matvec(&beta, &mut r);
        for i in 0..n {
            r[i] = y[i] - r[i];
        }
    }

    if !converged {
        let gap: f64 = dot(&a, &z) + dot(&s, &w);
        let obj = pinball_objective(&r, tau);
        if gap > 1e-7 * (1.0 + obj.abs()) {
            return Err(Error::NoConvergence(MAX_ITER));
        }
    }

    let (beta, obj) = polish(design, y, tau, beta, &r);
    Ok((beta, obj))
}

/// Moves the interior-point solution onto the LP vertex it converged
/// towards: re-solve the interpolation through the k observations with the
/// smallest residual magnitudes, kept only if the objective does not worsen.
fn polish(design: &Design, y: &[f64], tau: f64, beta: Vec<f64>, r: &[f64]) -> (Vec<f64>, f64) {
    let (n, k) = (design.n, design.k);
    let obj = pinball_objective(r, tau);

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| r[i].abs().partial_cmp(&r[j].abs()).unwrap().then(i.cmp(&j)));
    let basis = &order[..k.min(n)];
    if basis.len() < k {
        return (beta, obj);
    }

    let mut m = Vec::with_capacity(k * k);
    let mut rhs = Vec::with_capacity(k);
    for &i in basis {
        m.extend_from_slice(design.row(i));
        rhs.push(y[i]);
    }
    let Some(candidate) = lu_solve(m, rhs, k) else {
        return (beta, obj);
    };
    if candidate.iter().any(|v| !v.is_finite()) {
        return (beta, obj);
    }
    let mut res = vec![0.0; n];
    design.matvec(&candidate, &mut res);
    for i in 0..n {
        res[i] = y[i] - res[i];
    }
    let cand_obj = pinball_objective(&res, tau);
    if cand_obj <= obj + 1e-9 * (1.0 + obj.abs()) {
        (candidate, cand_obj)
    } else {
        (beta, obj)
    }
}
