//! Functions on the unit sphere in harmonic coefficients, quadrature grids,
//! and operators that act diagonally on harmonic degrees.

use std::f64::consts::PI;
use std::num::NonZeroUsize;
use std::sync::Arc;

use gauss_quad::legendre::GaussLegendre;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::problem::{Pt, RescaledProblem};
use crate::radial::{self, RadialError, RadialProfile};

pub const DEFAULT_DEGREE_2D: usize = 32;
pub const DEFAULT_DEGREE_3D: usize = 12;

/// Multipliers below this fraction of the largest one count as zero.
pub const DEGENERACY_RATIO: f64 = 1e-10;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum ModalError {
    #[error("ModeNearZero: degree {degree} multiplier {multiplier:.3e} is below the invertibility threshold")]
    ModeNearZero { degree: usize, multiplier: f64 },
    #[error(transparent)]
    ModeSolve(#[from] RadialError),
    #[error("sphere function shape mismatch: expected n={n}, L={degree}")]
    Shape { n: usize, degree: usize },
}

pub fn default_degree(n: usize) -> usize {
    if n == 2 {
        DEFAULT_DEGREE_2D
    } else {
        DEFAULT_DEGREE_3D
    }
}

/// Number of real harmonics of degree `<= degree` on `S^{n-1}`.
pub fn coeff_count(n: usize, degree: usize) -> usize {
    if n == 2 {
        2 * degree + 1
    } else {
        (degree + 1) * (degree + 1)
    }
}

/// Position of the harmonic `(l, m)` in a coefficient vector. For `n = 2`,
/// `m = l` is `cos(l theta)` and `m = -l` is `sin(l theta)`.
pub fn index(n: usize, l: usize, m: i64) -> usize {
    if n == 2 {
        debug_assert!(l == 0 || m.unsigned_abs() as usize == l, "order {m} is not valid for degree {l} on the circle");
        match (l, m.signum()) {
            (0, _) => 0,
            (_, 1) => 2 * l - 1,
            _ => 2 * l,
        }
    } else {
        ((l * l + l) as i64 + m) as usize
    }
}

/// Inverse of [`index`].
pub fn degree_order(n: usize, i: usize) -> (usize, i64) {
    if n == 2 {
        if i == 0 {
            (0, 0)
        } else {
            let l = (i + 1) / 2;
            (l, if i % 2 == 1 { l as i64 } else { -(l as i64) })
        }
    } else {
        let l = (i as f64).sqrt() as usize;
        let l = if (l + 1) * (l + 1) <= i { l + 1 } else { l };
        (l, i as i64 - (l * l + l) as i64)
    }
}

/// Eigenvalue of the Laplace–Beltrami operator on degree `l`.
pub fn laplace_eigenvalue(n: usize, l: usize) -> f64 {
    -((l * (l + n - 2)) as f64)
}

/// Normalization of the degree-one harmonics: `omega_i = Y_i / k1_scale`.
pub fn k1_scale(n: usize) -> f64 {
    if n == 2 {
        1.0 / PI.sqrt()
    } else {
        (3.0 / (4.0 * PI)).sqrt()
    }
}

/// The Dirichlet-to-Neumann multiplier of the unit ball on degree `l`.
pub fn dtn_multiplier(_n: usize, l: usize) -> f64 {
    l as f64
}

/// Normalized associated Legendre values `Pbar[l][m]` for `0 <= m <= l <= degree`
/// (no Condon–Shortley phase), plus `sin(theta) d/dtheta Pbar`.
fn legendre(degree: usize, ct: f64, st: f64) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut p = vec![vec![0.0; degree + 1]; degree + 1];
    p[0][0] = 1.0 / (4.0 * PI).sqrt();
    for m in 1..=degree {
        p[m][m] = ((2 * m + 1) as f64 / (2 * m) as f64).sqrt() * st * p[m - 1][m - 1];
    }
    for m in 0..degree {
        p[m + 1][m] = ((2 * m + 3) as f64).sqrt() * ct * p[m][m];
    }
    for m in 0..=degree {
        for l in (m + 2)..=degree {
            let (lf, mf) = (l as f64, m as f64);
            let a = ((4.0 * lf * lf - 1.0) / (lf * lf - mf * mf)).sqrt();
            let b = (((lf - 1.0).powi(2) - mf * mf) / (4.0 * (lf - 1.0).powi(2) - 1.0)).sqrt();
            p[l][m] = a * (ct * p[l - 1][m] - b * p[l - 2][m]);
        }
    }
    let mut sd = vec![vec![0.0; degree + 1]; degree + 1];
    for l in 0..=degree {
        for m in 0..=l {
            let (lf, mf) = (l as f64, m as f64);
            let prev = if l > m { p[l - 1][m] } else { 0.0 };
            sd[l][m] = lf * ct * p[l][m] - ((2.0 * lf + 1.0) * (lf * lf - mf * mf) / (2.0 * lf - 1.0)).sqrt() * prev;
        }
    }
    (p, sd)
}

/// All basis values at `omega` and, when `grad` is given, their tangential
/// gradients in Cartesian components. `omega` must be a unit vector.
pub fn basis_at(n: usize, degree: usize, omega: &Pt, grad: Option<&mut Vec<Pt>>) -> Vec<f64> {
    let count = coeff_count(n, degree);
    let mut vals = vec![0.0; count];
    let mut grads = vec![[0.0; 3]; count];
    if n == 2 {
        let th = omega[1].atan2(omega[0]);
        let t = [-th.sin(), th.cos(), 0.0];
        vals[0] = 1.0 / (2.0 * PI).sqrt();
        let s = 1.0 / PI.sqrt();
        for l in 1..=degree {
            let lf = l as f64;
            let (sn, cs) = (lf * th).sin_cos();
            vals[2 * l - 1] = s * cs;
            vals[2 * l] = s * sn;
            let dc = -s * lf * sn;
            let ds = s * lf * cs;
            grads[2 * l - 1] = [dc * t[0], dc * t[1], 0.0];
            grads[2 * l] = [ds * t[0], ds * t[1], 0.0];
        }
    } else {
        let ct = omega[2].clamp(-1.0, 1.0);
        let st = (omega[0] * omega[0] + omega[1] * omega[1]).sqrt();
        let ph = omega[1].atan2(omega[0]);
        let (sp, cp) = ph.sin_cos();
        let e_th = [ct * cp, ct * sp, -st];
        let e_ph = [-sp, cp, 0.0];
        let (p, sd) = legendre(degree, ct, st);
        let want_grad = grad.is_some();
        let inv_st = if st > 1e-300 { 1.0 / st } else { 0.0 };
        for l in 0..=degree {
            for m in 0..=l {
                let (smp, cmp) = (m as f64 * ph).sin_cos();
                let dth = sd[l][m] * inv_st;
                if m == 0 {
                    let i = l * l + l;
                    vals[i] = p[l][0];
                    if want_grad {
                        grads[i] = [dth * e_th[0], dth * e_th[1], dth * e_th[2]];
                    }
                } else {
                    let r2 = 2f64.sqrt();
                    let ic = l * l + l + m;
                    let is = l * l + l - m;
                    vals[ic] = r2 * p[l][m] * cmp;
                    vals[is] = r2 * p[l][m] * smp;
                    if want_grad {
                        let mf = m as f64;
                        let a = r2 * dth;
                        let b = r2 * p[l][m] * inv_st * mf;
                        for k in 0..3 {
                            grads[ic][k] = a * cmp * e_th[k] - b * smp * e_ph[k];
                            grads[is][k] = a * smp * e_th[k] + b * cmp * e_ph[k];
                        }
                    }
                }
            }
        }
    }
    if let Some(g) = grad {
        *g = grads;
    }
    vals
}

/// Quadrature grid on the sphere with tabulated basis values and gradients.
#[derive(Debug)]
pub struct SphereGrid {
    pub n: usize,
    pub degree: usize,
    pub nodes: Vec<Pt>,
    pub weights: Vec<f64>,
    /// Node-major: `values[q * count + i]`.
    values: Vec<f64>,
    grads: Vec<Pt>,
    count: usize,
}

impl SphereGrid {
    /// Grid integrating products of three functions of degree `degree` exactly.
    pub fn new(n: usize, degree: usize) -> Arc<Self> {
        let (nodes, weights) = if n == 2 {
            let m = 3 * degree + 4;
            let nodes = (0..m)
                .map(|k| {
                    let th = 2.0 * PI * k as f64 / m as f64;
                    [th.cos(), th.sin(), 0.0]
                })
                .collect();
            (nodes, vec![2.0 * PI / m as f64; m])
        } else {
            let nt = (3 * (degree + 1) + 1) / 2;
            let np = 2 * nt;
            let gl = GaussLegendre::new(NonZeroUsize::new(nt).unwrap());
            let mut nodes = Vec::with_capacity(nt * np);
            let mut weights = Vec::with_capacity(nt * np);
            for &(x, w) in gl.as_node_weight_pairs() {
                let st = (1.0 - x * x).sqrt();
                for k in 0..np {
                    let ph = 2.0 * PI * k as f64 / np as f64;
                    nodes.push([st * ph.cos(), st * ph.sin(), x]);
                    weights.push(w * 2.0 * PI / np as f64);
                }
            }
            (nodes, weights)
        };
        let count = coeff_count(n, degree);
        let mut values = Vec::with_capacity(nodes.len() * count);
        let mut grads = Vec::with_capacity(nodes.len() * count);
        for w in &nodes {
            let mut g = Vec::new();
            values.extend(basis_at(n, degree, w, Some(&mut g)));
            grads.extend(g);
        }
        Arc::new(SphereGrid { n, degree, nodes, weights, values, grads, count })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
    pub fn coeff_count(&self) -> usize {
        self.count
    }
    pub fn value(&self, q: usize, i: usize) -> f64 {
        self.values[q * self.count + i]
    }
    pub fn grad(&self, q: usize, i: usize) -> Pt {
        self.grads[q * self.count + i]
    }
    pub fn row(&self, q: usize) -> &[f64] {
        &self.values[q * self.count..(q + 1) * self.count]
    }
    pub fn grad_row(&self, q: usize) -> &[Pt] {
        &self.grads[q * self.count..(q + 1) * self.count]
    }

    /// Coefficients (up to this grid's degree) of node values by quadrature.
    pub fn analyze(&self, vals: &[f64]) -> Vec<f64> {
        let mut c = vec![0.0; self.count];
        for (q, (&v, &w)) in vals.iter().zip(&self.weights).enumerate() {
            let wv = w * v;
            for (ci, b) in c.iter_mut().zip(self.row(q)) {
                *ci += wv * b;
            }
        }
        c
    }

    /// Node values of a coefficient vector (which may be shorter than the grid basis).
    pub fn synthesize(&self, coeffs: &[f64]) -> Vec<f64> {
        let k = coeffs.len().min(self.count);
        (0..self.len()).map(|q| self.row(q)[..k].iter().zip(coeffs).map(|(b, c)| b * c).sum()).collect()
    }

    pub fn synthesize_grad(&self, coeffs: &[f64]) -> Vec<Pt> {
        let k = coeffs.len().min(self.count);
        (0..self.len())
            .map(|q| {
                let mut g = [0.0; 3];
                for (b, c) in self.grad_row(q)[..k].iter().zip(coeffs) {
                    for d in 0..3 {
                        g[d] += b[d] * c;
                    }
                }
                g
            })
            .collect()
    }

    pub fn function(&self, vals: &[f64]) -> SphereFunction {
        SphereFunction { n: self.n, degree: self.degree, coeffs: self.analyze(vals) }
    }

    /// Samples `f` at the nodes and projects.
    pub fn project<F: FnMut(&Pt) -> f64>(&self, mut f: F) -> SphereFunction {
        let vals: Vec<f64> = self.nodes.iter().map(&mut f).collect();
        self.function(&vals)
    }
}

/// Truncated harmonic expansion on `S^{n-1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SphereFunction {
    pub n: usize,
    pub degree: usize,
    pub coeffs: Vec<f64>,
}

/// One serialized harmonic coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Harmonic {
    pub degree: usize,
    pub order: i64,
    pub value: f64,
}

impl SphereFunction {
    pub fn zeros(n: usize, degree: usize) -> Self {
        SphereFunction { n, degree, coeffs: vec![0.0; coeff_count(n, degree)] }
    }

    pub fn get(&self, l: usize, m: i64) -> f64 {
        if l > self.degree {
            return 0.0;
        }
        self.coeffs[index(self.n, l, m)]
    }

    pub fn set(&mut self, l: usize, m: i64, v: f64) {
        let i = index(self.n, l, m);
        self.coeffs[i] = v;
    }

    /// Evaluates at a unit vector.
    pub fn eval(&self, omega: &Pt) -> f64 {
        basis_at(self.n, self.degree, omega, None).iter().zip(&self.coeffs).map(|(b, c)| b * c).sum()
    }

    /// Resized copy; extra degrees are zero, dropped degrees are discarded.
    pub fn with_degree(&self, degree: usize) -> Self {
        let mut out = SphereFunction::zeros(self.n, degree);
        let k = out.coeffs.len().min(self.coeffs.len());
        out.coeffs[..k].copy_from_slice(&self.coeffs[..k]);
        out
    }

    pub fn l2_norm(&self) -> f64 {
        self.coeffs.iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    /// Maximum modulus over the nodes of `grid`.
    pub fn sup_norm(&self, grid: &SphereGrid) -> f64 {
        grid.synthesize(&self.coeffs).into_iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// L2 norm of the coefficients with degree above `degree/2`.
    pub fn tail_norm(&self) -> f64 {
        (0..self.coeffs.len())
            .filter(|&i| degree_order(self.n, i).0 > self.degree / 2)
            .map(|i| self.coeffs[i].powi(2))
            .sum::<f64>()
            .sqrt()
    }

    fn map_degree(&self, keep: impl Fn(usize) -> bool) -> Self {
        let mut out = self.clone();
        for (i, c) in out.coeffs.iter_mut().enumerate() {
            if !keep(degree_order(self.n, i).0) {
                *c = 0.0;
            }
        }
        out
    }

    /// Orthogonal projection on the degree-one harmonics.
    pub fn project_k(&self) -> Self {
        self.map_degree(|l| l == 1)
    }

    /// Orthogonal projection on the complement of the degree-one harmonics.
    pub fn project_perp(&self) -> Self {
        self.map_degree(|l| l != 1)
    }

    /// `Y` with `project_k(f) = Y . omega`.
    pub fn extract_k_vector(&self) -> Vec<f64> {
        let c = k1_scale(self.n);
        if self.degree == 0 {
            return vec![0.0; self.n];
        }
        if self.n == 2 {
            vec![c * self.get(1, 1), c * self.get(1, -1)]
        } else {
            vec![c * self.get(1, 1), c * self.get(1, -1), c * self.get(1, 0)]
        }
    }

    /// The function `y . omega`.
    pub fn from_k_vector(n: usize, degree: usize, y: &[f64]) -> Self {
        let mut f = SphereFunction::zeros(n, degree.max(1));
        let c = k1_scale(n);
        f.set(1, 1, y[0] / c);
        f.set(1, -1, y[1] / c);
        if n == 3 {
            f.set(1, 0, y[2] / c);
        }
        f
    }

    pub fn axpy(&mut self, a: f64, x: &SphereFunction) {
        for (c, v) in self.coeffs.iter_mut().zip(&x.coeffs) {
            *c += a * v;
        }
    }

    pub fn scaled(&self, a: f64) -> Self {
        SphereFunction { n: self.n, degree: self.degree, coeffs: self.coeffs.iter().map(|c| a * c).collect() }
    }

    pub fn harmonics(&self) -> Vec<Harmonic> {
        self.coeffs
            .iter()
            .enumerate()
            .map(|(i, &value)| {
                let (degree, order) = degree_order(self.n, i);
                Harmonic { degree, order, value }
            })
            .collect()
    }

    pub fn from_harmonics(n: usize, degree: usize, hs: &[Harmonic]) -> Result<Self, ModalError> {
        let mut f = SphereFunction::zeros(n, degree);
        for h in hs {
            if h.degree > degree || h.order.unsigned_abs() as usize > h.degree || (n == 2 && h.degree > 0 && h.order.unsigned_abs() as usize != h.degree) {
                return Err(ModalError::Shape { n, degree });
            }
            f.set(h.degree, h.order, h.value);
        }
        Ok(f)
    }
}

/// An operator acting on degree `l` by multiplication with `multipliers[l]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalOperator {
    pub n: usize,
    pub degree: usize,
    pub multipliers: Vec<f64>,
    pub p: Vec<f64>,
    pub lambda_bar: f64,
}

impl ModalOperator {
    /// The Dirichlet-to-Neumann map of the unit ball.
    pub fn ball_dtn(n: usize, degree: usize) -> Self {
        ModalOperator { n, degree, multipliers: (0..=degree).map(|l| dtn_multiplier(n, l)).collect(), p: vec![0.0; n], lambda_bar: 0.0 }
    }

    pub fn apply(&self, f: &SphereFunction) -> SphereFunction {
        let mut out = f.clone();
        for (i, c) in out.coeffs.iter_mut().enumerate() {
            let l = degree_order(f.n, i).0;
            *c *= self.multipliers.get(l).copied().unwrap_or(0.0);
        }
        out
    }

    /// Inverse on the complement of degree one; the degree-one part of the
    /// result is zero.
    pub fn apply_inverse(&self, f: &SphereFunction) -> Result<SphereFunction, ModalError> {
        let scale = self.multipliers.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut out = f.clone();
        for (i, c) in out.coeffs.iter_mut().enumerate() {
            let l = degree_order(f.n, i).0;
            if l == 1 {
                *c = 0.0;
                continue;
            }
            let Some(&mu) = self.multipliers.get(l) else {
                return Err(ModalError::Shape { n: self.n, degree: self.degree });
            };
            if mu.abs() <= DEGENERACY_RATIO * scale || mu == 0.0 {
                return Err(ModalError::ModeNearZero { degree: l, multiplier: mu });
            }
            *c /= mu;
        }
        Ok(out)
    }
}

/// The linearized shape operator on degrees `0..=degree`:
/// `-phi'(1) g_l'(1)/g_l(1) + phi''(1)`.
pub fn build_hp(rp: &RescaledProblem, prof: &RadialProfile, degree: usize) -> Result<ModalOperator, ModalError> {
    let d1 = prof.d1();
    let dd1 = prof.dd1();
    let multipliers = (0..=degree)
        .into_par_iter()
        .map(|l| radial::mode_log_derivative(rp, prof, l).map(|g| -d1 * g + dd1))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ModalOperator { n: rp.dim(), degree, multipliers, p: rp.p.clone(), lambda_bar: rp.lambda_bar })
}

/// `apply_inverse` with the operator named as in the shape iteration.
pub fn apply_inverse_hp(op: &ModalOperator, f: &SphereFunction) -> Result<SphereFunction, ModalError> {
    op.apply_inverse(f)
}
