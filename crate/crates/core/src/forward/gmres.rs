//! Restarted GMRES with right preconditioning.

pub struct GmresOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Solves `A x = b` from `x = 0`, stopping when `|b - A x|_2 <= tol`.
pub fn gmres<A, M>(mut apply: A, mut precond: M, b: &[f64], tol: f64, restart: usize, max_iter: usize) -> GmresOutcome
where
    A: FnMut(&[f64]) -> Vec<f64>,
    M: FnMut(&[f64]) -> Vec<f64>,
{
    let dim = b.len();
    let mut x = vec![0.0; dim];
    let mut r = b.to_vec();
    let mut beta = norm(&r);
    let mut total = 0;
    while beta > tol && total < max_iter {
        let mut v: Vec<Vec<f64>> = vec![r.iter().map(|t| t / beta).collect()];
        let mut z: Vec<Vec<f64>> = Vec::new();
        let mut h: Vec<Vec<f64>> = Vec::new();
        let mut cs: Vec<f64> = Vec::new();
        let mut sn: Vec<f64> = Vec::new();
        let mut g = vec![beta];
        let mut k = 0;
        while k < restart && total < max_iter {
            let zk = precond(&v[k]);
            let mut w = apply(&zk);
            z.push(zk);
            let mut col = vec![0.0; k + 2];
            // modified Gram-Schmidt, twice for stability
            for _ in 0..2 {
                for (j, vj) in v.iter().enumerate() {
                    let c = dot(&w, vj);
                    col[j] += c;
                    for (wi, vi) in w.iter_mut().zip(vj) {
                        *wi -= c * vi;
                    }
                }
            }
            let wn = norm(&w);
            col[k + 1] = wn;
            for j in 0..k {
                let t = cs[j] * col[j] + sn[j] * col[j + 1];
                col[j + 1] = -sn[j] * col[j] + cs[j] * col[j + 1];
                col[j] = t;
            }
            let rho = col[k].hypot(col[k + 1]);
            let (c, s) = if rho == 0.0 { (1.0, 0.0) } else { (col[k] / rho, col[k + 1] / rho) };
            col[k] = rho;
            col[k + 1] = 0.0;
            cs.push(c);
            sn.push(s);
            g.push(-s * g[k]);
            g[k] *= c;
            h.push(col);
            k += 1;
            total += 1;
            if g[k].abs() <= tol || wn == 0.0 {
                break;
            }
            v.push(w.iter().map(|t| t / wn).collect());
        }
        // back substitution
        let mut y = vec![0.0; k];
        for i in (0..k).rev() {
            let mut s = g[i];
            for j in (i + 1)..k {
                s -= h[j][i] * y[j];
            }
            y[i] = s / h[i][i];
        }
        for (j, yj) in y.iter().enumerate() {
            for (xi, zi) in x.iter_mut().zip(&z[j]) {
                *xi += yj * zi;
            }
        }
        let ax = apply(&x);
        r = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
        let new_beta = norm(&r);
        if new_beta >= beta * (1.0 - 1e-12) && k == 0 {
            break;
        }
        beta = new_beta;
    }
    GmresOutcome { x, iterations: total, residual: beta }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_nonsymmetric_system() {
        let n = 50;
        let a = |x: &[f64]| -> Vec<f64> {
            (0..n)
                .map(|i| {
                    let mut s = (4.0 + i as f64 * 0.01) * x[i];
                    if i > 0 {
                        s -= x[i - 1];
                    }
                    if i + 2 < n {
                        s += 0.5 * x[i + 2];
                    }
                    s
                })
                .collect()
        };
        let b: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let out = gmres(a, |v| v.iter().map(|t| t / 4.0).collect(), &b, 1e-13, 10, 500);
        let ax = a(&out.x);
        let err: f64 = ax.iter().zip(&b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        assert!(err < 1e-12, "{err}");
    }
}
