//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on failure.

use std::sync::Arc;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use overdet_core::forward::{self, ForwardOptions};
use overdet_core::modal::{self, SphereFunction};
use overdet_core::outer::{self, OrderRow, OuterOptions};
use overdet_core::problem::{ProblemSpec, RescaledProblem};
use overdet_core::radial;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

const SWEEP: [f64; 3] = [0.04, 0.02, 0.01];

fn spec(n: usize, f: &str, f0: &str, f1: &str) -> ProblemSpec {
    ProblemSpec::parse(n, f, f0, f1, &vec!["0"; n], DMatrix::identity(n, n)).unwrap()
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn c1_linear_oracles() -> Outcome {
    let s = Arc::new(spec(2, "1", "1", "1"));
    let rp = RescaledProblem::new(s, &[0.0, 0.0], 0.1, 0.5);
    let prof = radial::solve_phi(&rp).map_err(|e| e.to_string())?;
    let mut err = 0.0f64;
    for k in 0..=prof.one {
        let r = prof.r[k];
        err = err.max((prof.phi[k] - 0.125 * (1.0 - r * r)).abs());
    }
    err = err.max((prof.d1() + 0.25).abs());
    let c_bar = -prof.d1() / rp.f1_center().unwrap();
    err = err.max((c_bar - 0.25).abs());
    let op = modal::build_hp(&rp, &prof, modal::DEFAULT_DEGREE_2D).map_err(|e| e.to_string())?;
    for (l, m) in op.multipliers.iter().enumerate() {
        err = err.max((m - 0.25 * (l as f64 - 1.0)).abs());
    }
    check(err < 1e-9, format!("max error {err:.2e} over phi, phi'(1), c_bar and l = 0..={}", op.degree))
}

/// Randomized nonlinear problems with positive forcing along the profile.
fn random_problem(rng: &mut ChaCha8Rng, n: usize) -> (ProblemSpec, Vec<f64>, f64) {
    let a = rng.gen_range(0.5..1.5);
    let b = rng.gen_range(0.2..1.0);
    let c = rng.gen_range(-1.0..1.0);
    let forcing = match rng.gen_range(0..5) {
        0 => format!("{a} * exp(u)"),
        1 => format!("u + sin({c} * x1) + 2"),
        2 => format!("{a} * exp({b} * u) * (1 + 0.3 * cos(x2))"),
        3 => format!("{a} + {b} * u^2 + 0.2 * x1"),
        _ => format!("{a} * (2 + tanh(u)) * (1 + {b} * x2^2)"),
    };
    let f0 = format!("{b} + {c} * x1 + 0.5 * x2^2");
    let s = spec(n, &forcing, &f0, "1");
    let p: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect();
    (s, p, rng.gen_range(0.05..0.3))
}

fn kernel_ratio(s: ProblemSpec, p: &[f64], lambda_bar: f64, degree: usize) -> Result<(f64, f64), String> {
    let rp = RescaledProblem::new(Arc::new(s), p, 0.05, lambda_bar);
    let prof = radial::solve_phi(&rp).map_err(|e| e.to_string())?;
    let op = modal::build_hp(&rp, &prof, degree).map_err(|e| e.to_string())?;
    let scale = (prof.d1() * prof.dd1()).abs().sqrt();
    Ok((op.multipliers[1].abs(), scale))
}

fn c2_kernel() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    for i in 0..10 {
        let n = if i < 7 { 2 } else { 3 };
        let (s, p, lambda_bar) = random_problem(&mut rng, n);
        let text = s.canonical_text().replace('\n', "; ");
        let (m1, scale) = kernel_ratio(s, &p, lambda_bar, 8).map_err(|e| format!("{text}: {e}"))?;
        if m1 >= 1e-8 * scale + 1e-12 {
            return Err(format!("{text}: degree-one multiplier {m1:.3e} against scale {scale:.3e}"));
        }
        worst = worst.max(m1 / scale);
    }
    check(true, format!("10 problems, max |mu_1| / |phi'(1) phi''(1)|^(1/2) = {worst:.2e}"))
}

/// `sup |d_nu u - phi'(1) - eps (kappa_1 grad f0 + V) . w|` at `B = 0`.
fn neumann_remainder(s: &Arc<ProblemSpec>, p: &[f64], eps: f64, lambda_bar: f64) -> Result<f64, String> {
    let rp = RescaledProblem::new(s.clone(), p, eps, lambda_bar);
    let prof = radial::solve_phi(&rp).map_err(|e| e.to_string())?;
    let cor = radial::solve_corrector(&rp, &prof).map_err(|e| e.to_string())?;
    let opts = ForwardOptions::for_dim(s.dim());
    let field = forward::solve_dirichlet(&rp, &SphereFunction::zeros(s.dim(), opts.degree), None, &opts).map_err(|e| e.to_string())?;
    let g0 = s.grad_f0_at(p).unwrap();
    let k1 = prof.degree_one_dtn();
    let bracket: Vec<f64> = (0..s.dim()).map(|j| k1 * g0[j] + cor.v[j]).collect();
    let dn = field.neumann_at_nodes();
    let mut rem = 0.0f64;
    for (q, v) in dn.iter().enumerate() {
        let w = field.grid.sphere.nodes[q];
        let lin: f64 = (0..s.dim()).map(|j| bracket[j] * w[j]).sum();
        rem = rem.max((v - prof.d1() - eps * lin).abs());
    }
    Ok(rem)
}

fn c3_neumann_asymptotics() -> Outcome {
    let cases = [
        ("exp(u)", "1 + (x1^2 + x2^2)/2", [0.3, 0.2], 0.4),
        ("1 + 0.5*x1 - 0.3*x2", "x1 + x2^2", [0.1, -0.2], 0.5),
    ];
    let mut parts = Vec::new();
    for (f, f0, p, lambda_bar) in cases {
        let s = Arc::new(spec(2, f, f0, "1"));
        let values = SWEEP.iter().map(|&e| neumann_remainder(&s, &p, e, lambda_bar)).collect::<Result<Vec<_>, _>>()?;
        let row = OrderRow::errors("neumann", &SWEEP, values);
        let o = row.min_order().ok_or("order undefined")?;
        parts.push(format!("F = {f}: orders {:?}", row.orders.iter().map(|o| o.map(|v| (v * 1000.0).round() / 1000.0)).collect::<Vec<_>>()));
        if o < 1.9 {
            return Err(parts.join("; "));
        }
    }
    Ok(parts.join("; "))
}

/// Observed orders of `|Y/eps - lead|` at a fixed center.
fn y_orders(s: ProblemSpec, p: &[f64], lambda_bar: f64, lead: &[f64]) -> Result<OrderRow, String> {
    let s = Arc::new(s);
    let opts = OuterOptions::for_dim(s.dim());
    let mut errs = Vec::new();
    for &eps in &SWEEP {
        let (_, shape) = outer::y_field(&s, p, eps, lambda_bar, &opts).map_err(|e| e.to_string())?;
        let y = shape.y();
        errs.push((0..s.dim()).map(|j| (y[j] / eps - lead[j]).abs()).fold(0.0, f64::max));
    }
    Ok(OrderRow::errors("y_over_eps", &SWEEP, errs))
}

fn c4_vector_field() -> Outcome {
    let n = 2.0;
    // linear: F = f(x), constant drift; lead = grad f0 + lb f/(n f1) grad f1 - lb (grad f - b f/n)/(n+2)
    let lb = 0.5;
    let p = [0.2, -0.1];
    let (x, y) = (p[0], p[1]);
    let f = 1.0 + 0.5 * x + y * y;
    let gf = [0.5, 2.0 * y];
    let f1 = 1.0 + 0.3 * x + 0.2 * y;
    let gf1 = [0.3, 0.2];
    let gf0 = [2.0 * x + y, x];
    let b = [0.2, -0.1];
    let lead: Vec<f64> = (0..2).map(|j| gf0[j] + lb * f / (n * f1) * gf1[j] - lb * (gf[j] - b[j] * f / n) / (n + 2.0)).collect();
    let s = ProblemSpec::parse(2, "1 + 0.5*x1 + x2^2", "x1^2 + x1*x2", "1 + 0.3*x1 + 0.2*x2", &["0.2", "-0.1"], DMatrix::identity(2, 2)).unwrap();
    let lin = y_orders(s, &p, lb, &lead)?;

    // torsion: F = 1, lambda_bar = n kappa; lead = grad (f0 + kappa log f1) = (1 - kappa x1, -kappa x2)
    let kappa = 0.5;
    let p = [1.5, 0.3];
    let lead = [1.0 - kappa * p[0], -kappa * p[1]];
    let s = spec(2, "1", "x1", "exp(-(x1^2 + x2^2)/2)");
    let tor = y_orders(s, &p, outer::torsion_lambda_bar(2, kappa, 1.0), &lead)?;

    let lo = lin.min_order().ok_or("order undefined")?;
    let to = tor.min_order().ok_or("order undefined")?;
    check(lo >= 0.9 && to >= 0.9, format!("min order linear {lo:.3}, torsion {to:.3}"))
}

fn c5_theorem_2d() -> Outcome {
    let s = spec(2, "exp(u)", "1 + (x1^2 + x2^2)/2", "1 + 0.3*x1");
    let lambda_bar = 0.2;
    let opts = OuterOptions::for_dim(2);
    let mut detail = Vec::new();
    let mut ratios = Vec::new();
    for &eps in &SWEEP {
        let sol = outer::find_point(&s, eps, lambda_bar, &[0.0, 0.0], &opts).map_err(|e| e.to_string())?;
        let rel = sol.report.relative_defect;
        let pn = sol.p.iter().map(|x| x * x).sum::<f64>().sqrt();
        ratios.push(sol.report.shape_sup_norm / eps);
        if eps == 0.02 && rel >= 1e-6 {
            return Err(format!("relative defect {rel:.2e} at eps = 0.02"));
        }
        if pn > lambda_bar + eps {
            return Err(format!("|p_eps| = {pn:.4} exceeds lambda_bar + eps at eps = {eps}"));
        }
        detail.push(format!("eps {eps}: rel defect {rel:.1e}, |p| {pn:.4}"));
    }
    let (lo, hi) = ratios.iter().fold((f64::INFINITY, 0.0f64), |(a, b), r| (a.min(*r), b.max(*r)));
    detail.push(format!("|B|/eps in [{lo:.4}, {hi:.4}]"));
    check((hi - lo) / lo <= 0.3, detail.join("; "))
}

fn c6_torsion() -> Outcome {
    let s = spec(2, "1", "x1", "exp(-(x1^2 + x2^2)/2)");
    let opts = OuterOptions::for_dim(2);
    let mut detail = Vec::new();
    for &eps in &SWEEP {
        let sol = outer::find_point_torsion(&s, eps, 0.5, &[1.8, 0.1], &opts).map_err(|e| e.to_string())?;
        let d = dist(&sol.p, &[2.0, 0.0]);
        let rel = sol.report.relative_defect;
        if d > eps || rel >= 1e-6 {
            return Err(format!("eps {eps}: |p - (2,0)| = {d:.2e}, rel defect {rel:.2e}"));
        }
        detail.push(format!("eps {eps}: |p - (2,0)|/eps {:.3}, rel defect {rel:.1e}", d / eps));
    }
    Ok(detail.join("; "))
}

fn c7_classical_serrin() -> Outcome {
    let mut worst = (0.0f64, 0.0f64, 0.0f64);
    for (n, f, f0, f1) in [(2, "1", "0", "1"), (2, "exp(u)", "1", "2"), (3, "1", "0.5", "1")] {
        let s = spec(n, f, f0, f1);
        let sol = outer::find_point(&s, 0.05, 0.5, &vec![0.0; n], &OuterOptions::for_dim(n)).map_err(|e| e.to_string())?;
        let b = sol.shape.iter().fold(0.0f64, |m, h| m.max(h.value.abs()));
        worst = (worst.0.max(b), worst.1.max(sup(&sol.y_over_eps)), worst.2.max(sol.report.relative_defect));
    }
    let (b, y, d) = worst;
    check(b < 1e-12 && y < 1e-12 && d < 1e-9, format!("|B| {b:.1e}, |Y/eps| {y:.1e}, rel defect {d:.1e}"))
}

fn c8_constant_matrix() -> Outcome {
    let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
    let original = ProblemSpec::parse(2, "exp(u)", "1 + (x1^2 + x2^2)/2", "1 + 0.3*x1", &["0", "0"], a.clone()).unwrap();
    let reduced = original.affine_reduce().map_err(|e| e.to_string())?;
    let eps = 0.02;
    let opts = OuterOptions::for_dim(2);
    let sol = outer::find_point(&reduced, eps, 0.2, &[0.0, 0.0], &opts).map_err(|e| e.to_string())?;
    let shape = sol.shape_function().map_err(|e| e.to_string())?;
    let (defect, _) = outer::certify(&Arc::new(reduced.clone()), &sol.p, eps, 0.2, sol.c_bar, &shape, &opts.certification()).map_err(|e| e.to_string())?;
    let field = &defect.field;
    let frame = reduced.frame().clone();
    let inv = frame.clone().try_inverse().unwrap();
    let mv = |m: &DMatrix<f64>, v: [f64; 2]| [m[(0, 0)] * v[0] + m[(0, 1)] * v[1], m[(1, 0)] * v[0] + m[(1, 1)] * v[1]];
    // u in original coordinates
    let u = |x: [f64; 2]| {
        let y = mv(&inv, x);
        field.value_at(&[(y[0] - sol.p[0]) / eps, (y[1] - sol.p[1]) / eps])
    };
    let radius = |t: f64| 1.0 + eps * shape.eval(&[t.cos(), t.sin(), 0.0]);
    let h = 1e-4 * eps;
    let mut worst = 0.0f64;
    let mut worst_dirichlet = 0.0f64;
    let mut min_f1 = f64::INFINITY;
    for k in 0..64 {
        let t = std::f64::consts::TAU * k as f64 / 64.0;
        let r = radius(t);
        let z = [r * t.cos(), r * t.sin()];
        let x = mv(&frame, [sol.p[0] + eps * z[0], sol.p[1] + eps * z[1]]);
        // outward normal of the boundary curve in y, then in x
        let dr = (radius(t + 1e-6) - radius(t - 1e-6)) / 2e-6;
        let tangent_y = [dr * t.cos() - r * t.sin(), dr * t.sin() + r * t.cos()];
        let nu_y = [tangent_y[1], -tangent_y[0]];
        let nx = mv(&inv, nu_y);
        let len = (nx[0] * nx[0] + nx[1] * nx[1]).sqrt();
        let nu = [nx[0] / len, nx[1] / len];
        let grad = [(u([x[0] + h, x[1]]) - u([x[0] - h, x[1]])) / (2.0 * h), (u([x[0], x[1] + h]) - u([x[0], x[1] - h])) / (2.0 * h)];
        let a_nu = mv(&a, nu);
        let conormal = (a_nu[0] * grad[0] + a_nu[1] * grad[1]) / (nu[0] * a_nu[0] + nu[1] * a_nu[1]).sqrt();
        let f1 = original.f1_at(&x).unwrap();
        min_f1 = min_f1.min(f1);
        worst = worst.max((conormal + sol.c * f1).abs());
        worst_dirichlet = worst_dirichlet.max((u(x) - original.f0_at(&x).unwrap()).abs());
    }
    let rel = worst / (sol.c * min_f1);
    check(
        rel < 1e-4 && worst_dirichlet < 1e-8,
        format!("p = ({:.5}, {:.5}), relative conormal defect {rel:.2e}, Dirichlet error {worst_dirichlet:.1e}", sol.p_physical[0], sol.p_physical[1]),
    )
}

fn c9_three_dimensions() -> Outcome {
    let s = spec(3, "exp(u)", "1 + (x1^2 + x2^2 + x3^2)/2", "1 + 0.3*x1");
    let opts = OuterOptions::for_dim(3);
    let sol = outer::find_point(&s, 0.02, 0.2, &[0.0, 0.0, 0.0], &opts).map_err(|e| e.to_string())?;
    let rel = sol.report.relative_defect;
    let (m1, scale) = kernel_ratio(s, &sol.p, 0.2, opts.forward.degree)?;
    check(
        rel < 1e-5 && m1 < 1e-6 * scale,
        format!("L = {}, p = ({:.5}, {:.1e}, {:.1e}), rel defect {rel:.2e}, |mu_1|/scale {:.1e}", opts.forward.degree, sol.p[0], sol.p[1], sol.p[2], m1 / scale),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome, Duration); 9] = [
        ("closed-form linear oracles", c1_linear_oracles, Duration::from_secs(1)),
        ("degree-one kernel", c2_kernel, Duration::from_secs(10)),
        ("Neumann asymptotics", c3_neumann_asymptotics, Duration::from_secs(30)),
        ("center field asymptotics", c4_vector_field, Duration::from_secs(120)),
        ("end-to-end n = 2", c5_theorem_2d, Duration::from_secs(180)),
        ("torsion variant", c6_torsion, Duration::from_secs(120)),
        ("classical Serrin", c7_classical_serrin, Duration::from_secs(20)),
        ("constant coefficient matrix", c8_constant_matrix, Duration::from_secs(180)),
        ("n = 3 smoke test", c9_three_dimensions, Duration::from_secs(600)),
    ];
    let mut failed = 0;
    for (i, (name, f, limit)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = f();
        let took = start.elapsed();
        let (status, detail) = match outcome {
            Ok(d) if took <= *limit => ("PASS", d),
            Ok(d) => ("FAIL", format!("{d}; over the {:.0} s limit", limit.as_secs_f64())),
            Err(d) => ("FAIL", d),
        };
        if status == "FAIL" {
            failed += 1;
        }
        println!("{status} criterion {} ({name}) [{:.2} s]: {detail}", i + 1, took.as_secs_f64());
    }
    if failed > 0 {
        println!("{failed} of {} criteria failed", criteria.len());
        std::process::exit(1);
    }
    println!("all {} criteria passed", criteria.len());
}
