//! Shape and center iterations producing overdetermined domains, plus the
//! forward certification of their Neumann condition.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::ExprError;
use crate::forward::{self, FieldSolution, ForwardError, ForwardOptions};
use crate::modal::{self, Harmonic, ModalError, ModalOperator, SphereFunction};
use crate::problem::{ProblemError, ProblemSpec, RescaledProblem};
use crate::radial::{self, Corrector, RadialError, RadialProfile};

#[derive(Error, Debug, Clone, PartialEq)]
pub enum OuterError {
    #[error(transparent)]
    Radial(#[from] RadialError),
    #[error(transparent)]
    Modal(#[from] ModalError),
    #[error(transparent)]
    Forward(#[from] ForwardError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error("evaluation failed in outer iteration: {0}")]
    Eval(#[from] ExprError),
    #[error("ShapeNewtonDiverged in outer.solve_shape after {iterations} iterations (residual {residual:.3e})")]
    ShapeNewtonDiverged { iterations: usize, residual: f64 },
    #[error("PointNewtonDiverged in outer.find_point after {iterations} iterations (|Y/eps| = {residual:.3e})")]
    PointNewtonDiverged { iterations: usize, residual: f64 },
    #[error("DegenerateCriticalPoint in outer.find_point: Jacobian of Y/eps has determinant {det:.3e}")]
    DegenerateCriticalPoint { det: f64 },
    #[error("NotTorsion in outer.find_point_torsion: the forcing must be a positive constant")]
    NotTorsion,
}

/// Iteration controls for the shape and point solvers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OuterOptions {
    pub forward: ForwardOptions,
    /// `|P defect|_inf / |eps|` target of the shape iteration.
    pub shape_tol: f64,
    pub shape_max_iter: usize,
    /// `|Y| / |eps|` target of the point iteration.
    pub point_tol: f64,
    pub point_max_iter: usize,
    /// Refinement of the certification solve over `forward`.
    pub cert_extra_nodes: usize,
    pub cert_extra_degree: usize,
    /// Minimal `|det|` of the Jacobian of `Y/eps` at the returned point.
    pub degeneracy_det: f64,
}

impl OuterOptions {
    pub fn for_dim(n: usize) -> Self {
        let (extra_nodes, extra_degree) = if n == 2 { (8, 8) } else { (4, 2) };
        OuterOptions {
            forward: ForwardOptions::for_dim(n),
            shape_tol: 1e-9,
            shape_max_iter: 30,
            point_tol: 1e-8,
            point_max_iter: 30,
            cert_extra_nodes: extra_nodes,
            cert_extra_degree: extra_degree,
            degeneracy_det: 1e-8,
        }
    }

    pub fn certification(&self) -> ForwardOptions {
        self.forward.refined(self.cert_extra_nodes, self.cert_extra_degree)
    }
}

/// Everything about the frozen problem at one center.
#[derive(Debug, Clone)]
pub struct PointContext {
    pub rp: RescaledProblem,
    pub profile: RadialProfile,
    pub corrector: Corrector,
    pub hp: ModalOperator,
    pub c_bar: f64,
}

impl PointContext {
    pub fn new(spec: Arc<ProblemSpec>, p: &[f64], eps: f64, lambda_bar: f64, degree: usize) -> Result<Self, OuterError> {
        spec.check_positivity(p)?;
        let rp = RescaledProblem::new(spec, p, eps, lambda_bar);
        let profile = radial::solve_phi(&rp)?;
        let corrector = radial::solve_corrector(&rp, &profile)?;
        let hp = modal::build_hp(&rp, &profile, degree)?;
        let c_bar = -profile.d1() / rp.f1_center()?;
        Ok(PointContext { rp, profile, corrector, hp, c_bar })
    }

    /// First-order coefficient of the defect at `B = 0`:
    /// `kappa_1 grad f0 - (phi'(1)/f1) grad f1 + V`, with `kappa_1 = phi''(1)/phi'(1)`.
    pub fn first_order_field(&self) -> Result<Vec<f64>, ExprError> {
        first_order_field(&self.rp, &self.profile, &self.corrector)
    }
}

pub fn first_order_field(rp: &RescaledProblem, prof: &RadialProfile, cor: &Corrector) -> Result<Vec<f64>, ExprError> {
    let g0 = rp.spec.grad_f0_at(&rp.p)?;
    let g1 = rp.spec.grad_f1_at(&rp.p)?;
    let f1 = rp.f1_center()?;
    let k1 = prof.degree_one_dtn();
    Ok((0..rp.dim()).map(|j| k1 * g0[j] - prof.d1() / f1 * g1[j] + cor.v[j]).collect())
}

/// Neumann defect `d_nu u + c_bar f1~` on the perturbed boundary.
#[derive(Debug, Clone)]
pub struct Defect {
    pub function: SphereFunction,
    pub nodes: Vec<f64>,
    pub field: FieldSolution,
    /// `min f1~` over the boundary nodes.
    pub min_f1: f64,
}

pub fn neumann_defect(
    rp: &RescaledProblem,
    c_bar: f64,
    shape: &SphereFunction,
    init: Option<&FieldSolution>,
    opts: &ForwardOptions,
) -> Result<Defect, OuterError> {
    let field = forward::solve_dirichlet(rp, shape, init, opts)?;
    let n = rp.dim();
    let dn = field.neumann_at_nodes();
    let mut min_f1 = f64::INFINITY;
    let mut nodes = Vec::with_capacity(dn.len());
    for (v, z) in dn.iter().zip(field.boundary_points()) {
        let f1 = rp.f1(&z[..n])?;
        min_f1 = min_f1.min(f1);
        nodes.push(v + c_bar * f1);
    }
    let function = field.grid.sphere.function(&nodes);
    Ok(Defect { function, nodes, field, min_f1 })
}

/// Result of the shape iteration at a fixed center.
#[derive(Debug, Clone)]
pub struct ShapeSolution {
    pub shape: SphereFunction,
    pub defect: Defect,
    /// `|P defect|_inf / |eps|` per iteration.
    pub history: Vec<f64>,
}

impl ShapeSolution {
    pub fn iterations(&self) -> usize {
        self.history.len() - 1
    }
    /// The degree-one part of the defect, `Y`.
    pub fn y(&self) -> Vec<f64> {
        self.defect.function.extract_k_vector()
    }
}

fn perp_sup(f: &SphereFunction, grid: &modal::SphereGrid) -> f64 {
    f.project_perp().sup_norm(grid)
}

/// Quasi-Newton `B <- B - H_p^{-1} P[defect / eps]` from `B = 0`.
pub fn solve_shape(ctx: &PointContext, opts: &OuterOptions) -> Result<ShapeSolution, OuterError> {
    let eps = ctx.rp.eps;
    let degree = opts.forward.degree;
    let mut shape = SphereFunction::zeros(ctx.rp.dim(), degree);
    let mut defect = neumann_defect(&ctx.rp, ctx.c_bar, &shape, None, &opts.forward)?;
    let mut history = vec![perp_sup(&defect.function, &defect.field.grid.sphere) / eps.abs()];
    loop {
        let res = *history.last().unwrap();
        if res < opts.shape_tol {
            break;
        }
        let it = history.len() - 1;
        if it >= opts.shape_max_iter || !res.is_finite() || (it >= 3 && res > 10.0 * history[0]) {
            return Err(OuterError::ShapeNewtonDiverged { iterations: it, residual: res });
        }
        let step = ctx.hp.apply_inverse(&defect.function.project_perp().scaled(1.0 / eps))?;
        shape.axpy(-1.0, &step);
        defect = match neumann_defect(&ctx.rp, ctx.c_bar, &shape, Some(&defect.field), &opts.forward) {
            Ok(d) => d,
            Err(OuterError::Forward(_)) => {
                return Err(OuterError::ShapeNewtonDiverged { iterations: it + 1, residual: res });
            }
            Err(e) => return Err(e),
        };
        history.push(perp_sup(&defect.function, &defect.field.grid.sphere) / eps.abs());
    }
    Ok(ShapeSolution { shape, defect, history })
}

/// `Y_eps(p)` after the shape iteration, with the context and the shape.
pub fn y_field(spec: &Arc<ProblemSpec>, p: &[f64], eps: f64, lambda_bar: f64, opts: &OuterOptions) -> Result<(PointContext, ShapeSolution), OuterError> {
    let ctx = PointContext::new(spec.clone(), p, eps, lambda_bar, opts.forward.degree)?;
    let shape = solve_shape(&ctx, opts)?;
    Ok((ctx, shape))
}

/// Independent forward check of the overdetermined condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    /// `max |d_nu u + c_bar f1~|` over the boundary nodes of the certification grid.
    pub max_defect: f64,
    /// `max_defect / (c_bar min f1~)`.
    pub relative_defect: f64,
    pub min_f1: f64,
    pub forward_residual: f64,
    pub dirichlet_error: f64,
    pub certification_newton_iterations: usize,
    pub shape_residual: f64,
    pub shape_iterations: usize,
    pub point_iterations: usize,
    pub shape_sup_norm: f64,
    pub shape_tail_norm: f64,
    pub certification: ForwardOptions,
}

/// One certified overdetermined domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainSolution {
    pub n: usize,
    /// Center in the coordinates of the reduced problem.
    pub p: Vec<f64>,
    /// Center in the original coordinates (equal to `p` when `A = I`).
    pub p_physical: Vec<f64>,
    pub eps: f64,
    pub lambda_bar: f64,
    pub c_bar: f64,
    /// `lambda_bar / eps^2`.
    pub lambda: f64,
    /// `c_bar / eps`.
    pub c: f64,
    pub shape_degree: usize,
    pub shape: Vec<Harmonic>,
    /// `Y_eps(p) / eps` at the returned center.
    pub y_over_eps: Vec<f64>,
    pub report: ResidualReport,
    pub spec_hash: String,
}

impl DomainSolution {
    pub fn shape_function(&self) -> Result<SphereFunction, ModalError> {
        SphereFunction::from_harmonics(self.n, self.shape_degree, &self.shape)
    }
}

/// Re-solves the Dirichlet problem on a finer grid and measures the Neumann defect.
pub fn certify(
    spec: &Arc<ProblemSpec>,
    p: &[f64],
    eps: f64,
    lambda_bar: f64,
    c_bar: f64,
    shape: &SphereFunction,
    fopts: &ForwardOptions,
) -> Result<(Defect, f64), OuterError> {
    let rp = RescaledProblem::new(spec.clone(), p, eps, lambda_bar);
    let defect = neumann_defect(&rp, c_bar, shape, None, fopts)?;
    let max = defect.nodes.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    Ok((defect, max))
}

fn assemble(
    spec: &Arc<ProblemSpec>,
    ctx: &PointContext,
    shape: &ShapeSolution,
    point_iterations: usize,
    opts: &OuterOptions,
) -> Result<DomainSolution, OuterError> {
    let cert_opts = opts.certification();
    let rp = &ctx.rp;
    let (defect, max) = certify(spec, &rp.p, rp.eps, rp.lambda_bar, ctx.c_bar, &shape.shape, &cert_opts)?;
    let n = rp.dim();
    let frame = spec.frame();
    let p_physical = (0..n).map(|i| (0..n).map(|j| frame[(i, j)] * rp.p[j]).sum()).collect();
    let sphere = &shape.defect.field.grid.sphere;
    Ok(DomainSolution {
        n,
        p: rp.p.clone(),
        p_physical,
        eps: rp.eps,
        lambda_bar: rp.lambda_bar,
        c_bar: ctx.c_bar,
        lambda: rp.lambda(),
        c: rp.c_from_scaled(ctx.c_bar),
        shape_degree: shape.shape.degree,
        shape: shape.shape.harmonics(),
        y_over_eps: shape.y().iter().map(|y| y / rp.eps).collect(),
        report: ResidualReport {
            max_defect: max,
            relative_defect: max / (ctx.c_bar * defect.min_f1),
            min_f1: defect.min_f1,
            forward_residual: defect.field.residual,
            dirichlet_error: defect.field.dirichlet_error()?,
            certification_newton_iterations: defect.field.log.len() - 1,
            shape_residual: *shape.history.last().unwrap(),
            shape_iterations: shape.iterations(),
            point_iterations,
            shape_sup_norm: shape.shape.sup_norm(sphere),
            shape_tail_norm: shape.shape.tail_norm(),
            certification: cert_opts,
        },
        spec_hash: spec.content_hash(),
    })
}

fn vec_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Forward-difference Jacobian of `Y/eps` at `p`.
fn field_jacobian(spec: &Arc<ProblemSpec>, p: &[f64], f0: &[f64], eps: f64, lambda_bar: f64, opts: &OuterOptions) -> Result<DMatrix<f64>, OuterError> {
    let n = p.len();
    let h = (eps * eps).max(1e-4);
    let cols = (0..n)
        .into_par_iter()
        .map(|j| {
            let mut q = p.to_vec();
            q[j] += h;
            let (_, s) = y_field(spec, &q, eps, lambda_bar, opts)?;
            Ok(s.y().iter().zip(f0).map(|(y, f)| (y / eps - f) / h).collect::<Vec<f64>>())
        })
        .collect::<Result<Vec<_>, OuterError>>()?;
    Ok(DMatrix::from_fn(n, n, |i, j| cols[j][i]))
}

/// Newton on `p -> Y_eps(p)` from `p0`, then certification.
pub fn find_point(spec: &ProblemSpec, eps: f64, lambda_bar: f64, p0: &[f64], opts: &OuterOptions) -> Result<DomainSolution, OuterError> {
    let spec = Arc::new(spec.clone());
    let mut p = p0.to_vec();
    let (mut ctx, mut shape) = y_field(&spec, &p, eps, lambda_bar, opts)?;
    let mut f: Vec<f64> = shape.y().iter().map(|y| y / eps).collect();
    let mut iterations = 0;
    let mut jac: Option<DMatrix<f64>> = None;
    while vec_norm(&f) >= opts.point_tol {
        if iterations >= opts.point_max_iter {
            return Err(OuterError::PointNewtonDiverged { iterations, residual: vec_norm(&f) });
        }
        iterations += 1;
        let j = field_jacobian(&spec, &p, &f, eps, lambda_bar, opts)?;
        let Some(step) = j.clone().lu().solve(&DVector::from_column_slice(&f)) else {
            return Err(OuterError::DegenerateCriticalPoint { det: j.determinant() });
        };
        jac = Some(j);
        let mut t = 1.0;
        let mut accepted = None;
        let base = vec_norm(&f);
        while t > 1.0 / 256.0 {
            let trial: Vec<f64> = p.iter().zip(step.iter()).map(|(a, s)| a - t * s).collect();
            if let Ok((c, s)) = y_field(&spec, &trial, eps, lambda_bar, opts) {
                let ft: Vec<f64> = s.y().iter().map(|y| y / eps).collect();
                if vec_norm(&ft) < (1.0 - 1e-4 * t) * base || vec_norm(&ft) < opts.point_tol {
                    accepted = Some((trial, c, s, ft));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((tp, c, s, ft)) = accepted else {
            return Err(OuterError::PointNewtonDiverged { iterations, residual: base });
        };
        p = tp;
        ctx = c;
        shape = s;
        f = ft;
    }
    if let Some(j0) = jac {
        // Jacobian at the converged point (the last one was taken one step earlier).
        let j = if iterations > 0 { field_jacobian(&spec, &p, &f, eps, lambda_bar, opts).unwrap_or(j0) } else { j0 };
        let det = j.determinant();
        if det.abs() < opts.degeneracy_det {
            return Err(OuterError::DegenerateCriticalPoint { det });
        }
    }
    assemble(&spec, &ctx, &shape, iterations, opts)
}

/// Shape iteration and certification at the fixed center `p` (no point
/// iteration); the overdetermined condition then holds up to `Y . w`.
pub fn solve_at(spec: &ProblemSpec, eps: f64, lambda_bar: f64, p: &[f64], opts: &OuterOptions) -> Result<DomainSolution, OuterError> {
    let spec = Arc::new(spec.clone());
    let (ctx, shape) = y_field(&spec, p, eps, lambda_bar, opts)?;
    assemble(&spec, &ctx, &shape, 0, opts)
}

/// The torsion variant: constant forcing `F = k`, `lambda_bar = n kappa / k`,
/// targeting critical points of `f0 + kappa log f1`.
pub fn find_point_torsion(spec: &ProblemSpec, eps: f64, kappa: f64, p0: &[f64], opts: &OuterOptions) -> Result<DomainSolution, OuterError> {
    let k = torsion_constant(spec)?;
    find_point(spec, eps, torsion_lambda_bar(spec.dim(), kappa, k), p0, opts)
}

pub fn torsion_constant(spec: &ProblemSpec) -> Result<f64, OuterError> {
    match spec.forcing().constant_value() {
        Some(k) if spec.is_torsion() && k > 0.0 => Ok(k),
        _ => Err(OuterError::NotTorsion),
    }
}

pub fn torsion_lambda_bar(n: usize, kappa: f64, forcing: f64) -> f64 {
    n as f64 * kappa / forcing
}

/// One row of a convergence table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderRow {
    pub quantity: String,
    pub eps: Vec<f64>,
    pub values: Vec<f64>,
    /// Observed orders between consecutive entries; `None` where undefined.
    pub orders: Vec<Option<f64>>,
}

/// Differences below this are solver noise and carry no order information.
pub const ORDER_NOISE_FLOOR: f64 = 1e-12;

fn order(a: f64, b: f64, ea: f64, eb: f64) -> Option<f64> {
    if a.abs() < ORDER_NOISE_FLOOR || b.abs() < ORDER_NOISE_FLOOR {
        return None;
    }
    let o = (a.abs() / b.abs()).ln() / (ea.abs() / eb.abs()).ln();
    o.is_finite().then_some(o)
}

impl OrderRow {
    /// Orders of a quantity that tends to zero.
    pub fn errors(quantity: &str, eps: &[f64], values: Vec<f64>) -> Self {
        let orders = (1..values.len()).map(|i| order(values[i - 1], values[i], eps[i - 1], eps[i])).collect();
        OrderRow { quantity: quantity.into(), eps: eps.to_vec(), values, orders }
    }

    /// Richardson orders from successive differences of a quantity with an unknown limit.
    pub fn limit(quantity: &str, eps: &[f64], values: Vec<f64>) -> Self {
        let d: Vec<f64> = values.windows(2).map(|w| w[0] - w[1]).collect();
        let mut orders = vec![None];
        orders.extend((1..d.len()).map(|i| order(d[i - 1], d[i], eps[i - 1], eps[i])));
        orders.truncate(values.len().saturating_sub(1));
        OrderRow { quantity: quantity.into(), eps: eps.to_vec(), values, orders }
    }

    pub fn min_order(&self) -> Option<f64> {
        self.orders.iter().flatten().copied().reduce(f64::min)
    }
}

/// Per-`eps` quantities at the fixed seed point `p0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedAsymptotics {
    pub eps: f64,
    /// `|Y/eps - first_order_field|_inf` at `p0`.
    pub y_over_eps_error: f64,
    /// `|d_nu u - phi'(1) - eps first-order bracket . w|_inf` at `p0`, `B = 0`.
    pub neumann_remainder: f64,
    /// `|P defect|_inf` at `p0`, `B = 0`.
    pub initial_perp_defect: f64,
}

pub fn seed_asymptotics(spec: &Arc<ProblemSpec>, p0: &[f64], eps: f64, lambda_bar: f64, opts: &OuterOptions) -> Result<SeedAsymptotics, OuterError> {
    let (ctx, shape) = y_field(spec, p0, eps, lambda_bar, opts)?;
    let lead = ctx.first_order_field()?;
    let y = shape.y();
    let y_err = y.iter().zip(&lead).fold(0.0f64, |m, (a, b)| m.max((a / eps - b).abs()));
    let rp = &ctx.rp;
    let zero = SphereFunction::zeros(rp.dim(), opts.forward.degree);
    let field = forward::solve_dirichlet(rp, &zero, None, &opts.forward)?;
    let dn = field.neumann_at_nodes();
    let bracket: Vec<f64> = {
        let g0 = spec.grad_f0_at(p0)?;
        let k1 = ctx.profile.degree_one_dtn();
        (0..rp.dim()).map(|j| k1 * g0[j] + ctx.corrector.v[j]).collect()
    };
    let mut rem = 0.0f64;
    for (q, v) in dn.iter().enumerate() {
        let w = field.grid.sphere.nodes[q];
        let lin: f64 = (0..rp.dim()).map(|j| bracket[j] * w[j]).sum();
        rem = rem.max((v - ctx.profile.d1() - eps * lin).abs());
    }
    let d0 = &shape.history[0];
    Ok(SeedAsymptotics { eps, y_over_eps_error: y_err, neumann_remainder: rem, initial_perp_defect: d0 * eps.abs() })
}

/// Solutions and convergence table of an `eps` sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub eps: Vec<f64>,
    pub solutions: Vec<Result<DomainSolution, String>>,
    pub seed: Vec<Result<SeedAsymptotics, String>>,
    pub table: Vec<OrderRow>,
}

pub fn sweep(spec: &ProblemSpec, eps_list: &[f64], lambda_bar: f64, p0: &[f64], opts: &OuterOptions) -> SweepReport {
    let arc = Arc::new(spec.clone());
    let runs: Vec<(Result<DomainSolution, String>, Result<SeedAsymptotics, String>)> = eps_list
        .par_iter()
        .map(|&eps| {
            let sol = find_point(spec, eps, lambda_bar, p0, opts).map_err(|e| e.to_string());
            let seed = seed_asymptotics(&arc, p0, eps, lambda_bar, opts).map_err(|e| e.to_string());
            (sol, seed)
        })
        .collect();
    let (solutions, seed): (Vec<_>, Vec<_>) = runs.into_iter().unzip();
    let mut table = Vec::new();
    let ok_seed: Vec<&SeedAsymptotics> = seed.iter().filter_map(|s| s.as_ref().ok()).collect();
    if ok_seed.len() == eps_list.len() {
        table.push(OrderRow::errors("y_over_eps_limit", eps_list, ok_seed.iter().map(|s| s.y_over_eps_error).collect()));
        table.push(OrderRow::errors("neumann_expansion", eps_list, ok_seed.iter().map(|s| s.neumann_remainder).collect()));
        table.push(OrderRow::errors("initial_perp_defect", eps_list, ok_seed.iter().map(|s| s.initial_perp_defect).collect()));
    }
    let ok: Vec<&DomainSolution> = solutions.iter().filter_map(|s| s.as_ref().ok()).collect();
    if ok.len() == eps_list.len() {
        table.push(OrderRow::errors("b_norm", eps_list, ok.iter().map(|s| s.report.shape_sup_norm).collect()));
        table.push(OrderRow::limit("b_norm_over_eps", eps_list, ok.iter().map(|s| s.report.shape_sup_norm / s.eps.abs()).collect()));
        table.push(OrderRow::limit("c_bar", eps_list, ok.iter().map(|s| s.c_bar).collect()));
        for j in 0..spec.dim() {
            table.push(OrderRow::limit(&format!("p_eps[{j}]"), eps_list, ok.iter().map(|s| s.p[j]).collect()));
        }
    }
    SweepReport { eps: eps_list.to_vec(), solutions, seed, table }
}

/// Leading-order field at one grid point of a scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanPoint {
    pub p: Vec<f64>,
    pub field: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanReport {
    pub points: Vec<ScanPoint>,
    /// Centers of cells where every component of the field changes sign.
    pub candidates: Vec<Vec<f64>>,
}

/// Evaluates the leading-order field on a uniform grid over the box `[lo, hi]`
/// with `cells` cells per axis and reports sign-change cells.
pub fn scan(spec: &ProblemSpec, lambda_bar: f64, lo: &[f64], hi: &[f64], cells: usize) -> ScanReport {
    let n = spec.dim();
    let arc = Arc::new(spec.clone());
    let per = cells + 1;
    let total = per.pow(n as u32);
    let coord = |idx: usize| -> Vec<f64> {
        let mut rest = idx;
        (0..n)
            .map(|d| {
                let i = rest % per;
                rest /= per;
                lo[d] + (hi[d] - lo[d]) * i as f64 / cells as f64
            })
            .collect()
    };
    let points: Vec<ScanPoint> = (0..total)
        .into_par_iter()
        .map(|idx| {
            let p = coord(idx);
            let field = (|| -> Result<Vec<f64>, OuterError> {
                arc.check_positivity(&p)?;
                let rp = RescaledProblem::new(arc.clone(), &p, 1.0, lambda_bar);
                let prof = radial::solve_phi(&rp)?;
                let cor = radial::solve_corrector(&rp, &prof)?;
                Ok(first_order_field(&rp, &prof, &cor)?)
            })()
            .ok();
            ScanPoint { p, field }
        })
        .collect();
    let mut candidates = Vec::new();
    let cell_total = cells.pow(n as u32);
    'cell: for c in 0..cell_total {
        let mut rest = c;
        let base: Vec<usize> = (0..n)
            .map(|_| {
                let i = rest % cells;
                rest /= cells;
                i
            })
            .collect();
        let mut corners = Vec::new();
        for mask in 0..(1usize << n) {
            let mut idx = 0;
            let mut stride = 1;
            for d in 0..n {
                idx += (base[d] + ((mask >> d) & 1)) * stride;
                stride *= per;
            }
            match &points[idx].field {
                Some(f) => corners.push(f.clone()),
                None => continue 'cell,
            }
        }
        let changes = (0..n).all(|j| {
            let pos = corners.iter().any(|f| f[j] >= 0.0);
            let neg = corners.iter().any(|f| f[j] <= 0.0);
            pos && neg
        });
        if changes {
            candidates.push((0..n).map(|d| lo[d] + (hi[d] - lo[d]) * (base[d] as f64 + 0.5) / cells as f64).collect());
        }
    }
    ScanReport { points, candidates }
}
