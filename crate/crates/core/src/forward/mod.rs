//! Semilinear Dirichlet solver in the perturbed ball `|z| < 1 + eps B(z/|z|)`.
//!
//! The domain is pulled back to the unit ball by `z = R(rho, w) w` with
//! `R = rho + eps (rho^3 B_even(w) + rho^4 B_odd(w))`, which is odd under
//! `(rho, w) -> (-rho, -w)`, so every harmonic coefficient of the solution is
//! an analytic function of `rho` on the whole diameter. The unknowns are those
//! coefficients at Chebyshev nodes folded by parity; the operator is applied
//! pseudo-spectrally on a sphere quadrature grid.

mod cheb;
mod gmres;

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, LU, Dyn};
use thiserror::Error;

use crate::expr::ExprError;
use crate::modal::{self, basis_at, SphereFunction, SphereGrid};
use crate::problem::{Pt, RescaledProblem};
use crate::radial;

pub use cheb::Chebyshev;
pub use gmres::{gmres, GmresOutcome};

#[derive(Error, Debug, Clone, PartialEq)]
pub enum ForwardError {
    #[error("NewtonDiverged in forward.solve_dirichlet after {iterations} iterations (residual {residual:.3e})")]
    NewtonDiverged { iterations: usize, residual: f64 },
    #[error("MapDegenerate in forward.solve_dirichlet: {0}")]
    MapDegenerate(String),
    #[error("linear solve failed in forward.{stage}: residual {residual:.3e}")]
    LinearSolve { stage: &'static str, residual: f64 },
    #[error("evaluation failed in forward solver: {0}")]
    Eval(#[from] ExprError),
}

/// Resolution and tolerances of a forward solve.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ForwardOptions {
    /// Chebyshev nodes in `(0, 1]`.
    pub radial_nodes: usize,
    /// Harmonic truncation degree.
    pub degree: usize,
    /// Max-norm residual target.
    pub tol: f64,
    pub max_newton: usize,
}

impl ForwardOptions {
    pub fn for_dim(n: usize) -> Self {
        if n == 2 {
            ForwardOptions { radial_nodes: 24, degree: modal::DEFAULT_DEGREE_2D, tol: 1e-10, max_newton: 30 }
        } else {
            ForwardOptions { radial_nodes: 16, degree: modal::DEFAULT_DEGREE_3D, tol: 1e-10, max_newton: 30 }
        }
    }

    pub fn refined(&self, extra_nodes: usize, extra_degree: usize) -> Self {
        ForwardOptions { radial_nodes: self.radial_nodes + extra_nodes, degree: self.degree + extra_degree, ..*self }
    }
}

fn dot(a: &Pt, b: &Pt) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Pulled-back operator coefficients at one node.
#[derive(Debug, Clone, Copy, Default)]
struct NodeGeom {
    z: Pt,
    r: f64,
    r_rho: f64,
    /// `grad_S R / R_rho`.
    a: Pt,
    /// `grad_S R`.
    gr: Pt,
    c_rr: f64,
    c_r: f64,
    c_lap: f64,
    g_rs: Pt,
    g_s: Pt,
}

/// The pulled-back geometry for one shape `B` and one problem.
#[derive(Debug)]
pub struct MappedGrid {
    pub n: usize,
    pub eps: f64,
    pub cheb: Chebyshev,
    pub sphere: Arc<SphereGrid>,
    pub shape: SphereFunction,
    /// Parity and Laplace–Beltrami eigenvalue per coefficient.
    parity: Vec<usize>,
    eig: Vec<f64>,
    geom: Vec<NodeGeom>,
}

/// `(R, R_rho, R_rhorho, grad_S R, grad_S R_rho, Delta_S R)` from even/odd shape parts.
#[allow(clippy::too_many_arguments)]
fn map_terms(eps: f64, rho: f64, be: f64, bo: f64, gbe: &Pt, gbo: &Pt, lbe: f64, lbo: f64) -> (f64, f64, f64, Pt, Pt, f64) {
    let (r2, r3, r4) = (rho * rho, rho * rho * rho, rho * rho * rho * rho);
    let r = rho + eps * (r3 * be + r4 * bo);
    let r_rho = 1.0 + eps * (3.0 * r2 * be + 4.0 * r3 * bo);
    let r_rr = eps * (6.0 * rho * be + 12.0 * r2 * bo);
    let mut gr = [0.0; 3];
    let mut grr = [0.0; 3];
    for d in 0..3 {
        gr[d] = eps * (r3 * gbe[d] + r4 * gbo[d]);
        grr[d] = eps * (3.0 * r2 * gbe[d] + 4.0 * r3 * gbo[d]);
    }
    let lr = eps * (r3 * lbe + r4 * lbo);
    (r, r_rho, r_rr, gr, grr, lr)
}

fn split_parity(b: &SphereFunction) -> (SphereFunction, SphereFunction) {
    let mut even = b.clone();
    let mut odd = b.clone();
    for i in 0..b.coeffs.len() {
        if modal::degree_order(b.n, i).0 % 2 == 0 {
            odd.coeffs[i] = 0.0;
        } else {
            even.coeffs[i] = 0.0;
        }
    }
    (even, odd)
}

fn laplacian_coeffs(f: &SphereFunction) -> Vec<f64> {
    f.coeffs
        .iter()
        .enumerate()
        .map(|(i, c)| c * modal::laplace_eigenvalue(f.n, modal::degree_order(f.n, i).0))
        .collect()
}

impl MappedGrid {
    pub fn new(rp: &RescaledProblem, shape: &SphereFunction, opts: &ForwardOptions) -> Result<Self, ForwardError> {
        let n = rp.dim();
        let eps = rp.eps;
        let cheb = Chebyshev::new(opts.radial_nodes);
        let sphere = SphereGrid::new(n, opts.degree);
        let shape = shape.with_degree(opts.degree);
        let (be, bo) = split_parity(&shape);
        let be_v = sphere.synthesize(&be.coeffs);
        let bo_v = sphere.synthesize(&bo.coeffs);
        let be_g = sphere.synthesize_grad(&be.coeffs);
        let bo_g = sphere.synthesize_grad(&bo.coeffs);
        let be_l = sphere.synthesize(&laplacian_coeffs(&be));
        let bo_l = sphere.synthesize(&laplacian_coeffs(&bo));
        let max_shift = be_v.iter().zip(&bo_v).fold(0.0f64, |m, (a, b)| m.max((eps * (a + b)).abs()));
        if max_shift >= 0.5 {
            return Err(ForwardError::MapDegenerate(format!("|eps B| reaches {max_shift:.3} (must stay below 0.5)")));
        }
        let m = sphere.len();
        let nf = n as f64;
        let mut geom = Vec::with_capacity(cheb.npos * m);
        let mut drift = [0.0; 3];
        for &rho in &cheb.rho {
            for q in 0..m {
                let w = sphere.nodes[q];
                let (r, r_rho, r_rr, gr, grr, lr) = map_terms(eps, rho, be_v[q], bo_v[q], &be_g[q], &bo_g[q], be_l[q], bo_l[q]);
                if !(r_rho > 0.0) || !(r > 0.0) {
                    return Err(ForwardError::MapDegenerate(format!("radial Jacobian {r_rho:.3e} at rho = {rho:.4}")));
                }
                let mut a = [0.0; 3];
                let mut a_rho = [0.0; 3];
                for d in 0..3 {
                    a[d] = gr[d] / r_rho;
                    a_rho[d] = grr[d] / r_rho - gr[d] * r_rr / (r_rho * r_rho);
                }
                let div_a = lr / r_rho - dot(&gr, &grr) / (r_rho * r_rho);
                let aa = dot(&a, &a);
                let z = [r * w[0], r * w[1], r * w[2]];
                let mut c_r = -r_rr / r_rho.powi(3) + (nf - 1.0) / (r * r_rho) + (dot(&a, &a_rho) - div_a) / (r * r);
                let mut g_s = [0.0; 3];
                if rp.spec.has_drift() && eps != 0.0 {
                    rp.drift(&z[..n], &mut drift)?;
                    c_r += eps * (dot(&drift, &w) / r_rho - dot(&drift, &a) / r);
                    for d in 0..3 {
                        g_s[d] = eps * drift[d] / r;
                    }
                }
                geom.push(NodeGeom {
                    z,
                    r,
                    r_rho,
                    a,
                    gr,
                    c_rr: 1.0 / (r_rho * r_rho) + aa / (r * r),
                    c_r,
                    c_lap: 1.0 / (r * r),
                    g_rs: [-2.0 * a[0] / (r * r), -2.0 * a[1] / (r * r), -2.0 * a[2] / (r * r)],
                    g_s,
                });
            }
        }
        let k = sphere.coeff_count();
        let parity = (0..k).map(|i| modal::degree_order(n, i).0 % 2).collect();
        let eig = (0..k).map(|i| modal::laplace_eigenvalue(n, modal::degree_order(n, i).0)).collect();
        Ok(MappedGrid { n, eps, cheb, sphere, shape, parity, eig, geom })
    }

    pub fn npos(&self) -> usize {
        self.cheb.npos
    }
    pub fn coeff_count(&self) -> usize {
        self.sphere.coeff_count()
    }
    pub fn unknowns(&self) -> usize {
        self.npos() * self.coeff_count()
    }

    /// Physical boundary radius `R(1, w_q)` at the sphere nodes.
    pub fn boundary_radius(&self) -> Vec<f64> {
        self.geom[..self.sphere.len()].iter().map(|g| g.r).collect()
    }

    fn radial_derivs(&self, w: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (np, k) = (self.npos(), self.coeff_count());
        let mut wr = vec![0.0; np * k];
        let mut wrr = vec![0.0; np * k];
        for i in 0..np {
            for j in 0..np {
                let wj = &w[j * k..(j + 1) * k];
                let d1 = [self.cheb.d1[0][(i, j)], self.cheb.d1[1][(i, j)]];
                let d2 = [self.cheb.d2[0][(i, j)], self.cheb.d2[1][(i, j)]];
                for c in 0..k {
                    let p = self.parity[c];
                    wr[i * k + c] += d1[p] * wj[c];
                    wrr[i * k + c] += d2[p] * wj[c];
                }
            }
        }
        (wr, wrr)
    }

    /// Interior rows: projection of the pulled-back operator plus `pointwise`;
    /// boundary rows: the coefficients at `rho = 1`.
    fn operator<P>(&self, w: &[f64], mut pointwise: P) -> Result<Vec<f64>, ExprError>
    where
        P: FnMut(usize, f64) -> Result<f64, ExprError>,
    {
        let (np, k, m) = (self.npos(), self.coeff_count(), self.sphere.len());
        let mut out = vec![0.0; np * k];
        out[..k].copy_from_slice(&w[..k]);
        let (wr, wrr) = self.radial_derivs(w);
        let mut lap = vec![0.0; k];
        let mut node = vec![0.0; m];
        for i in 1..np {
            let row = &w[i * k..(i + 1) * k];
            let rr = &wr[i * k..(i + 1) * k];
            for c in 0..k {
                lap[c] = row[c] * self.eig[c];
            }
            let v = self.sphere.synthesize(row);
            let vr = self.sphere.synthesize(rr);
            let vrr = self.sphere.synthesize(&wrr[i * k..(i + 1) * k]);
            let vl = self.sphere.synthesize(&lap);
            let gv = self.sphere.synthesize_grad(row);
            let gr = self.sphere.synthesize_grad(rr);
            for q in 0..m {
                let g = &self.geom[i * m + q];
                node[q] = g.c_rr * vrr[q] + g.c_r * vr[q] + g.c_lap * vl[q] + dot(&g.g_rs, &gr[q]) + dot(&g.g_s, &gv[q]) + pointwise(i * m + q, v[q])?;
            }
            out[i * k..(i + 1) * k].copy_from_slice(&self.sphere.analyze(&node));
        }
        Ok(out)
    }

    /// Values of a coefficient array at every node, `i * m + q`.
    fn node_values(&self, w: &[f64]) -> Vec<f64> {
        let k = self.coeff_count();
        (0..self.npos()).flat_map(|i| self.sphere.synthesize(&w[i * k..(i + 1) * k])).collect()
    }

    /// Outward normal derivative at the boundary nodes of the field with coefficients `w`.
    fn normal_derivative(&self, w: &[f64]) -> Vec<f64> {
        let k = self.coeff_count();
        let (wr, _) = self.radial_derivs(w);
        let ur = self.sphere.synthesize(&wr[..k]);
        let gu = self.sphere.synthesize_grad(&w[..k]);
        (0..self.sphere.len())
            .map(|q| {
                let g = &self.geom[q];
                let om = self.sphere.nodes[q];
                let mut grad = [0.0; 3];
                let mut nu = [0.0; 3];
                for d in 0..3 {
                    grad[d] = ur[q] / g.r_rho * om[d] + (gu[q][d] - g.a[d] * ur[q]) / g.r;
                    nu[d] = om[d] - g.gr[d] / g.r;
                }
                dot(&grad, &nu) / dot(&nu, &nu).sqrt()
            })
            .collect()
    }
}

/// Per-degree radial preconditioner: the unperturbed polar operator with the
/// angular mean of the potential.
struct Preconditioner {
    lus: Vec<LU<f64, Dyn, Dyn>>,
    degree_of: Vec<usize>,
    npos: usize,
}

impl Preconditioner {
    fn new(grid: &MappedGrid, lambda_bar: f64, fu: &[f64]) -> Self {
        let (np, m) = (grid.npos(), grid.sphere.len());
        let area: f64 = grid.sphere.weights.iter().sum();
        let mean: Vec<f64> = (0..np)
            .map(|i| (0..m).map(|q| grid.sphere.weights[q] * fu[i * m + q]).sum::<f64>() / area)
            .collect();
        let nf = grid.n as f64;
        let lus = (0..=grid.sphere.degree)
            .map(|l| {
                let p = l % 2;
                let ll = (l * (l + grid.n - 2)) as f64;
                let mut a = DMatrix::zeros(np, np);
                a[(0, 0)] = 1.0;
                for i in 1..np {
                    let rho = grid.cheb.rho[i];
                    for j in 0..np {
                        a[(i, j)] = grid.cheb.d2[p][(i, j)] + (nf - 1.0) / rho * grid.cheb.d1[p][(i, j)];
                    }
                    a[(i, i)] += -ll / (rho * rho) + lambda_bar * mean[i];
                }
                a.lu()
            })
            .collect();
        let degree_of = (0..grid.coeff_count()).map(|c| modal::degree_order(grid.n, c).0).collect();
        Preconditioner { lus, degree_of, npos: np }
    }

    fn apply(&self, r: &[f64]) -> Vec<f64> {
        let k = self.degree_of.len();
        let mut out = vec![0.0; r.len()];
        for c in 0..k {
            let col = DVector::from_fn(self.npos, |i, _| r[i * k + c]);
            let x = self.lus[self.degree_of[c]].solve(&col).unwrap_or(col);
            for i in 0..self.npos {
                out[i * k + c] = x[i];
            }
        }
        out
    }
}

/// One damped Newton step.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NewtonStep {
    pub residual: f64,
    pub gmres_iterations: usize,
    pub damping: f64,
}

/// Converged solution `u = shift + sum_k W_k(rho) Y_k(w)`.
#[derive(Debug, Clone)]
pub struct FieldSolution {
    pub rp: RescaledProblem,
    pub grid: Arc<MappedGrid>,
    pub opts: ForwardOptions,
    pub shift: f64,
    pub coeffs: Vec<f64>,
    /// Max-norm discrete residual.
    pub residual: f64,
    pub log: Vec<NewtonStep>,
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

struct System<'a> {
    rp: &'a RescaledProblem,
    grid: &'a MappedGrid,
    shift: f64,
    bc: Vec<f64>,
}

impl<'a> System<'a> {
    fn residual(&self, w: &[f64]) -> Result<Vec<f64>, ExprError> {
        let lam = self.rp.lambda_bar;
        let n = self.rp.dim();
        let mut out = self.grid.operator(w, |idx, v| {
            if lam == 0.0 {
                return Ok(0.0);
            }
            let z = &self.grid.geom[idx].z;
            Ok(lam * self.rp.forcing(&z[..n], self.shift + v)?)
        })?;
        for (o, g) in out.iter_mut().zip(&self.bc) {
            *o -= g;
        }
        Ok(out)
    }

    fn potential(&self, w: &[f64]) -> Result<Vec<f64>, ExprError> {
        let n = self.rp.dim();
        if self.rp.lambda_bar == 0.0 {
            return Ok(vec![0.0; self.grid.geom.len()]);
        }
        self.grid
            .node_values(w)
            .iter()
            .zip(&self.grid.geom)
            .map(|(v, g)| self.rp.forcing_du(&g.z[..n], self.shift + v))
            .collect()
    }

    fn jacobian_apply(&self, fu: &[f64], v: &[f64]) -> Vec<f64> {
        let lam = self.rp.lambda_bar;
        self.grid.operator(v, |idx, x| Ok(lam * fu[idx] * x)).expect("linear operator is infallible")
    }
}

/// Solves `Delta u + eps b(p + eps z).grad u + lambda_bar F(p + eps z, u) = 0` in
/// `|z| < 1 + eps B`, `u = f0(p + eps z)` on the boundary.
pub fn solve_dirichlet(
    rp: &RescaledProblem,
    shape: &SphereFunction,
    init: Option<&FieldSolution>,
    opts: &ForwardOptions,
) -> Result<FieldSolution, ForwardError> {
    let grid = Arc::new(MappedGrid::new(rp, shape, opts)?);
    let n = rp.dim();
    let shift = rp.f0_center()?;
    let (np, k, m) = (grid.npos(), grid.coeff_count(), grid.sphere.len());

    let mut bvals = Vec::with_capacity(m);
    for (q, r) in grid.boundary_radius().into_iter().enumerate() {
        let w = grid.sphere.nodes[q];
        let z = [r * w[0], r * w[1], r * w[2]];
        bvals.push(rp.f0(&z[..n])? - shift);
    }
    let mut bc = vec![0.0; np * k];
    bc[..k].copy_from_slice(&grid.sphere.analyze(&bvals));
    let sys = System { rp, grid: &grid, shift, bc };

    let mut w = match init {
        Some(prev) if prev.coeffs.len() == np * k && prev.rp.dim() == n => {
            let mut w = prev.coeffs.clone();
            let ds = prev.shift - shift;
            w[0] += ds / grid.sphere.value(0, 0);
            for i in 1..np {
                w[i * k] += ds / grid.sphere.value(0, 0);
            }
            w
        }
        _ => initial_guess(rp, &grid, shift)?,
    };
    w[..k].copy_from_slice(&sys.bc[..k]);

    let mut r = sys.residual(&w)?;
    let mut res = max_abs(&r);
    let mut log = Vec::new();
    for it in 0..opts.max_newton {
        if res <= opts.tol * 0.1 {
            break;
        }
        let fu = sys.potential(&w)?;
        let pre = Preconditioner::new(&grid, rp.lambda_bar, &fu);
        let rhs: Vec<f64> = r.iter().map(|x| -x).collect();
        let gtol = (norm2(&r) * 1e-9).max(opts.tol * 1e-3);
        let out = gmres(|v| sys.jacobian_apply(&fu, v), |v| pre.apply(v), &rhs, gtol, 80, 800);
        let mut t = 1.0;
        let mut accepted = None;
        while t > 1e-4 {
            let trial: Vec<f64> = w.iter().zip(&out.x).map(|(a, b)| a + t * b).collect();
            if let Ok(rt) = sys.residual(&trial) {
                let rn = max_abs(&rt);
                if rn.is_finite() && (rn < (1.0 - 1e-4 * t) * res || rn <= opts.tol * 0.1) {
                    accepted = Some((trial, rt, rn));
                    break;
                }
            }
            t *= 0.5;
        }
        log.push(NewtonStep { residual: res, gmres_iterations: out.iterations, damping: t });
        match accepted {
            Some((tw, tr, tn)) => {
                w = tw;
                r = tr;
                res = tn;
            }
            None => {
                if res <= opts.tol {
                    break;
                }
                return Err(ForwardError::NewtonDiverged { iterations: it + 1, residual: res });
            }
        }
        if it + 1 == opts.max_newton && res > opts.tol {
            return Err(ForwardError::NewtonDiverged { iterations: it + 1, residual: res });
        }
    }
    if !(res <= opts.tol) {
        return Err(ForwardError::NewtonDiverged { iterations: log.len(), residual: res });
    }
    log.push(NewtonStep { residual: res, gmres_iterations: 0, damping: 0.0 });
    Ok(FieldSolution { rp: rp.clone(), grid, opts: *opts, shift, coeffs: w, residual: res, log })
}

fn initial_guess(rp: &RescaledProblem, grid: &MappedGrid, shift: f64) -> Result<Vec<f64>, ForwardError> {
    let n = rp.dim();
    let prof = if rp.lambda_bar > 0.0 { radial::solve_phi(rp).ok() } else { None };
    let (np, k, m) = (grid.npos(), grid.coeff_count(), grid.sphere.len());
    let mut w = vec![0.0; np * k];
    let mut vals = vec![0.0; m];
    for i in 0..np {
        for q in 0..m {
            let g = &grid.geom[i * m + q];
            let phi = prof.as_ref().and_then(|p| p.eval(g.r.min(p.r_max()))).map_or(0.0, |v| v.0);
            let data = rp.f0(&g.z[..n]).map(|v| v - shift).unwrap_or(0.0);
            vals[q] = phi + data;
        }
        w[i * k..(i + 1) * k].copy_from_slice(&grid.sphere.analyze(&vals));
    }
    Ok(w)
}

impl FieldSolution {
    pub fn n(&self) -> usize {
        self.grid.n
    }

    /// Neumann derivative at the boundary quadrature nodes.
    pub fn neumann_at_nodes(&self) -> Vec<f64> {
        self.grid.normal_derivative(&self.coeffs)
    }

    /// `nu . grad u` on `r = 1 + eps B(w)` as a function of `w`.
    pub fn neumann_trace(&self) -> SphereFunction {
        self.grid.sphere.function(&self.neumann_at_nodes())
    }

    /// Boundary points `z_q = R(1, w_q) w_q`.
    pub fn boundary_points(&self) -> Vec<Pt> {
        self.grid.geom[..self.grid.sphere.len()].iter().map(|g| g.z).collect()
    }

    /// Largest pointwise mismatch with the Dirichlet datum at the boundary nodes.
    pub fn dirichlet_error(&self) -> Result<f64, ExprError> {
        let k = self.grid.coeff_count();
        let vals = self.grid.sphere.synthesize(&self.coeffs[..k]);
        let n = self.n();
        let mut err = 0.0f64;
        for (v, z) in vals.iter().zip(self.boundary_points()) {
            err = err.max((self.shift + v - self.rp.f0(&z[..n])?).abs());
        }
        Ok(err)
    }

    /// Field values at every grid node, with the node positions.
    pub fn nodal_values(&self) -> Vec<(Pt, f64)> {
        self.grid.node_values(&self.coeffs).into_iter().zip(&self.grid.geom).map(|(v, g)| (g.z, self.shift + v)).collect()
    }

    /// Map coordinates `(rho, w)` of a point `z`.
    pub fn locate(&self, z: &[f64]) -> (f64, Pt) {
        let mut w = [0.0; 3];
        let r: f64 = z.iter().map(|v| v * v).sum::<f64>().sqrt();
        if r == 0.0 {
            w[0] = 1.0;
            return (0.0, w);
        }
        for (d, v) in z.iter().enumerate() {
            w[d] = v / r;
        }
        let (be, bo) = self.shape_at(&w);
        let eps = self.grid.eps;
        let mut rho = r;
        for _ in 0..50 {
            let f = rho + eps * (rho.powi(3) * be + rho.powi(4) * bo) - r;
            let df = 1.0 + eps * (3.0 * rho * rho * be + 4.0 * rho.powi(3) * bo);
            let step = f / df;
            rho -= step;
            if step.abs() < 1e-16 {
                break;
            }
        }
        (rho, w)
    }

    fn shape_at(&self, w: &Pt) -> (f64, f64) {
        let s = &self.grid.shape;
        let b = basis_at(s.n, s.degree, w, None);
        let mut even = 0.0;
        let mut odd = 0.0;
        for (i, (y, c)) in b.iter().zip(&s.coeffs).enumerate() {
            if modal::degree_order(s.n, i).0 % 2 == 0 {
                even += y * c;
            } else {
                odd += y * c;
            }
        }
        (even, odd)
    }

    /// Interpolated coefficients at `rho`; `flip` marks radial derivatives,
    /// whose parity is opposite to that of the field.
    fn radial_coeffs_at(&self, w: &[f64], rho: f64, flip: usize) -> Vec<f64> {
        let (np, k) = (self.grid.npos(), self.grid.coeff_count());
        let mut col = vec![0.0; np];
        (0..k)
            .map(|c| {
                for i in 0..np {
                    col[i] = w[i * k + c];
                }
                self.grid.cheb.interpolate(&col, self.grid.parity[c] + flip, rho)
            })
            .collect()
    }

    /// `u(z)` by spectral interpolation; valid for `z` in the closed domain
    /// and slightly beyond it.
    pub fn value_at(&self, z: &[f64]) -> f64 {
        let (rho, w) = self.locate(z);
        let c = self.radial_coeffs_at(&self.coeffs, rho, 0);
        let b = basis_at(self.n(), self.grid.sphere.degree, &w, None);
        self.shift + b.iter().zip(&c).map(|(y, v)| y * v).sum::<f64>()
    }

    /// `grad u(z)` by spectral differentiation; `z` must be nonzero.
    pub fn gradient_at(&self, z: &[f64]) -> Pt {
        let (rho, w) = self.locate(z);
        let (be, bo) = self.shape_at(&w);
        let n = self.n();
        let s = &self.grid.shape;
        let mut gb = Vec::new();
        basis_at(n, s.degree, &w, Some(&mut gb));
        let mut gbe = [0.0; 3];
        let mut gbo = [0.0; 3];
        for (i, (g, c)) in gb.iter().zip(&s.coeffs).enumerate() {
            let t = if modal::degree_order(n, i).0 % 2 == 0 { &mut gbe } else { &mut gbo };
            for d in 0..3 {
                t[d] += g[d] * c;
            }
        }
        let (r, r_rho, _, gr, _, _) = map_terms(self.grid.eps, rho, be, bo, &gbe, &gbo, 0.0, 0.0);
        let (wr, _) = self.grid.radial_derivs(&self.coeffs);
        let cu = self.radial_coeffs_at(&self.coeffs, rho, 0);
        let cr = self.radial_coeffs_at(&wr, rho, 1);
        let mut gy = Vec::new();
        let y = basis_at(n, self.grid.sphere.degree, &w, Some(&mut gy));
        let ur: f64 = y.iter().zip(&cr).map(|(a, b)| a * b).sum();
        let mut gs = [0.0; 3];
        for (g, c) in gy.iter().zip(&cu) {
            for d in 0..3 {
                gs[d] += g[d] * c;
            }
        }
        let mut out = [0.0; 3];
        for d in 0..3 {
            out[d] = ur / r_rho * w[d] + (gs[d] - gr[d] / r_rho * ur) / r;
        }
        out
    }

    /// Solves the linearized problem with boundary data `psi` and returns its
    /// Neumann derivative on the perturbed boundary.
    pub fn dtn_apply(&self, psi: &SphereFunction) -> Result<SphereFunction, ForwardError> {
        let grid = &*self.grid;
        let (np, k) = (grid.npos(), grid.coeff_count());
        let sys = System { rp: &self.rp, grid, shift: self.shift, bc: vec![0.0; np * k] };
        let fu = sys.potential(&self.coeffs)?;
        let pre = Preconditioner::new(grid, self.rp.lambda_bar, &fu);
        let mut rhs = vec![0.0; np * k];
        let psi = psi.with_degree(grid.sphere.degree);
        rhs[..k].copy_from_slice(&psi.coeffs);
        let scale = norm2(&rhs).max(1e-300);
        let out = gmres(|v| sys.jacobian_apply(&fu, v), |v| pre.apply(v), &rhs, scale * 1e-13, 80, 800);
        if out.residual > scale * 1e-9 {
            return Err(ForwardError::LinearSolve { stage: "dtn_apply", residual: out.residual });
        }
        Ok(grid.sphere.function(&grid.normal_derivative(&out.x)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;
    use crate::problem::ProblemSpec;

    fn rp(f: &str, f0: &str, lam: f64) -> RescaledProblem {
        let spec = ProblemSpec::laplacian(2, parse(f).unwrap(), parse(f0).unwrap(), parse("1").unwrap()).unwrap();
        RescaledProblem::new(Arc::new(spec), &[0.0, 0.0], 1.0, lam)
    }

    #[test]
    fn torsion_ball() {
        let rp = rp("1", "0", 0.5);
        let opts = ForwardOptions::for_dim(2);
        let sol = solve_dirichlet(&rp, &SphereFunction::zeros(2, opts.degree), None, &opts).unwrap();
        assert!(sol.residual < 1e-10);
        for (z, u) in sol.nodal_values() {
            let r2 = z[0] * z[0] + z[1] * z[1];
            assert!((u - 0.125 * (1.0 - r2)).abs() < 1e-10);
        }
        assert!(sol.neumann_at_nodes().iter().all(|v| (v + 0.25).abs() < 1e-10));
    }

    #[test]
    fn harmonic_in_perturbed_disk() {
        let rp = rp("1", "x1^2 - x2^2 + 0.3*x1", 0.0);
        let opts = ForwardOptions::for_dim(2);
        let mut b = SphereFunction::zeros(2, opts.degree);
        b.set(2, 2, 0.1 / modal::k1_scale(2));
        let sol = solve_dirichlet(&rp, &b, None, &opts).unwrap();
        for (z, u) in sol.nodal_values() {
            assert!((u - (z[0] * z[0] - z[1] * z[1] + 0.3 * z[0])).abs() < 1e-9);
        }
        let pts = sol.boundary_points();
        let bvals = b.with_degree(opts.degree);
        for (q, (dn, z)) in sol.neumann_at_nodes().iter().zip(&pts).enumerate() {
            let w = sol.grid.sphere.nodes[q];
            let r = (z[0] * z[0] + z[1] * z[1]).sqrt();
            // outward normal of r = 1 + B(w)
            let mut gb = Vec::new();
            let _ = basis_at(2, opts.degree, &w, Some(&mut gb));
            let mut g = [0.0; 3];
            for (gi, c) in gb.iter().zip(&bvals.coeffs) {
                for d in 0..3 {
                    g[d] += gi[d] * c;
                }
            }
            let nu = [w[0] - g[0] / r, w[1] - g[1] / r];
            let len = (nu[0] * nu[0] + nu[1] * nu[1]).sqrt();
            let grad = [2.0 * z[0] + 0.3, -2.0 * z[1]];
            let exact = (grad[0] * nu[0] + grad[1] * nu[1]) / len;
            assert!((dn - exact).abs() < 1e-8, "q={q}");
        }
        let z = [0.3, -0.5];
        assert!((sol.value_at(&z) - (0.09 - 0.25 + 0.09)).abs() < 1e-9, "{}", sol.value_at(&z));
        let g = sol.gradient_at(&z);
        assert!((g[0] - 0.9).abs() < 1e-8 && (g[1] - 1.0).abs() < 1e-8, "{g:?}");
    }

    #[test]
    fn liouville_ball() {
        let lam = 0.4;
        let rp = rp("exp(u)", "0", lam);
        let opts = ForwardOptions::for_dim(2);
        let sol = solve_dirichlet(&rp, &SphereFunction::zeros(2, opts.degree), None, &opts).unwrap();
        let b = 8.0 - 2.0 * lam;
        let a = (b - (b * b - 4.0 * lam * lam).sqrt()) / (2.0 * lam);
        for (z, u) in sol.nodal_values() {
            let r2 = z[0] * z[0] + z[1] * z[1];
            assert!((u - (8.0 * a / (lam * (1.0 + a * r2).powi(2))).ln()).abs() < 1e-9);
        }
    }

    #[test]
    fn degenerate_map_rejected() {
        let rp = rp("1", "0", 0.5);
        let mut b = SphereFunction::zeros(2, 8);
        b.set(0, 0, 2.0);
        assert!(matches!(
            solve_dirichlet(&rp, &b, None, &ForwardOptions::for_dim(2)),
            Err(ForwardError::MapDegenerate(_))
        ));
    }
}
