//! Chebyshev collocation on a diameter `[-1, 1]` folded onto `[0, 1]` by parity.

use nalgebra::DMatrix;

#[derive(Debug, Clone)]
pub struct Chebyshev {
    /// Number of nodes in `(0, 1]`; node 0 is `rho = 1`.
    pub npos: usize,
    /// Polynomial degree on the full diameter (odd, so `rho = 0` is never a node).
    pub big_n: usize,
    /// Full grid `cos(pi j / N)`, `j = 0..=N`.
    pub full: Vec<f64>,
    pub rho: Vec<f64>,
    /// `[even, odd]` first and second derivative matrices on the positive nodes.
    pub d1: [DMatrix<f64>; 2],
    pub d2: [DMatrix<f64>; 2],
}

impl Chebyshev {
    pub fn new(npos: usize) -> Self {
        assert!(npos >= 2);
        let big_n = 2 * npos - 1;
        let nf = big_n as f64;
        let full: Vec<f64> = (0..=big_n).map(|j| (std::f64::consts::PI * j as f64 / nf).cos()).collect();
        let c = |j: usize| if j == 0 || j == big_n { 2.0 } else { 1.0 };
        let mut d = DMatrix::zeros(big_n + 1, big_n + 1);
        for i in 0..=big_n {
            for j in 0..=big_n {
                if i != j {
                    let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
                    // x_i - x_j without cancellation
                    let diff = 2.0
                        * (std::f64::consts::PI * (i + j) as f64 / (2.0 * nf)).sin()
                        * (std::f64::consts::PI * (j as f64 - i as f64) / (2.0 * nf)).sin();
                    d[(i, j)] = c(i) / c(j) * sign / diff;
                }
            }
            let s: f64 = (0..=big_n).filter(|&j| j != i).map(|j| d[(i, j)]).sum();
            d[(i, i)] = -s;
        }
        let dd = &d * &d;
        let fold = |m: &DMatrix<f64>, sign: f64| {
            DMatrix::from_fn(npos, npos, |i, j| m[(i, j)] + sign * m[(i, big_n - j)])
        };
        Chebyshev {
            npos,
            big_n,
            rho: full[..npos].to_vec(),
            full,
            d1: [fold(&d, 1.0), fold(&d, -1.0)],
            d2: [fold(&dd, 1.0), fold(&dd, -1.0)],
        }
    }

    /// Interpolates values on the positive nodes (extended with parity) at `x`.
    pub fn interpolate(&self, vals: &[f64], parity: usize, x: f64) -> f64 {
        let s = if parity % 2 == 0 { 1.0 } else { -1.0 };
        let mut num = 0.0;
        let mut den = 0.0;
        for j in 0..=self.big_n {
            let v = if j < self.npos { vals[j] } else { s * vals[self.big_n - j] };
            let diff = x - self.full[j];
            if diff == 0.0 {
                return v;
            }
            let mut w = if j % 2 == 0 { 1.0 } else { -1.0 };
            if j == 0 || j == self.big_n {
                w *= 0.5;
            }
            num += w / diff * v;
            den += w / diff;
        }
        num / den
    }
}
