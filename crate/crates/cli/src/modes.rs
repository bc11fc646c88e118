//! One function per mode; each writes `report.json` plus its CSV tables.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use overdet_core::modal::{self, Harmonic};
use overdet_core::outer::{self, DomainSolution, OuterError};
use overdet_core::problem::RescaledProblem;
use overdet_core::radial;
use serde::Serialize;

use crate::config::{Mode, Resolved};
use crate::report::{cell, write_csv, write_json, write_report};
use crate::{CliError, Outcome};

fn solver(e: OuterError) -> CliError {
    CliError::Solver(e.to_string())
}

fn header(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

fn indexed(prefix: &str, n: usize) -> impl Iterator<Item = String> + '_ {
    (1..=n).map(move |j| format!("{prefix}{j}"))
}

pub fn run(r: &Resolved, out: &Path) -> Result<Outcome, CliError> {
    match r.config.mode {
        Mode::Profile => profile(r, out),
        Mode::HpSpectrum => hp_spectrum(r, out),
        Mode::FindPoint | Mode::Solve => domain(r, out),
        Mode::Verify => verify(r, out),
        Mode::Sweep => sweep(r, out),
        Mode::Scan => scan(r, out),
    }
}

fn physical(r: &Resolved, p: &[f64]) -> Vec<f64> {
    let frame = r.reduced.frame();
    (0..p.len()).map(|i| (0..p.len()).map(|j| frame[(i, j)] * p[j]).sum()).collect()
}

#[derive(Serialize)]
struct ProfileResult {
    p: Vec<f64>,
    p_physical: Vec<f64>,
    lambda_bar: f64,
    u_center: f64,
    phi_origin: f64,
    phi_prime_1: f64,
    phi_second_1: f64,
    degree_one_dtn: f64,
    c_bar: f64,
    corrector_slope: Vec<f64>,
    first_order_field: Vec<f64>,
    shooting_iterations: usize,
    table_rows: usize,
}

fn frozen(r: &Resolved) -> RescaledProblem {
    RescaledProblem::frozen(Arc::new(r.reduced.clone()), &r.p0_reduced, r.config.lambda_bar.unwrap_or(0.0))
}

fn profile(r: &Resolved, out: &Path) -> Result<Outcome, CliError> {
    let rp = frozen(r);
    let prof = radial::solve_phi(&rp).map_err(|e| solver(e.into()))?;
    let cor = radial::solve_corrector(&rp, &prof).map_err(|e| solver(e.into()))?;
    let f1 = rp.f1_center().map_err(|e| solver(e.into()))?;
    let field = outer::first_order_field(&rp, &prof, &cor).map_err(|e| solver(e.into()))?;
    let n = rp.dim();
    let mut rows = Vec::new();
    for k in 0..=prof.one {
        let rk = prof.r[k];
        let w = cor.eval(rk).unwrap_or_else(|| vec![f64::NAN; n]);
        let mut row = vec![cell(Some(rk)), cell(Some(prof.phi[k])), cell(Some(prof.dphi[k])), cell(Some(prof.ddphi[k]))];
        row.extend(w.iter().map(|v| cell(Some(*v))));
        rows.push(row);
    }
    let mut head = header(&["r", "phi", "dphi", "ddphi"]);
    head.extend(indexed("W", n));
    let csv = write_csv(&out.join("profile.csv"), &head, &rows)?;
    let result = ProfileResult {
        p: rp.p.clone(),
        p_physical: physical(r, &rp.p),
        lambda_bar: rp.lambda_bar,
        u_center: prof.u_center,
        phi_origin: prof.phi_at_origin(),
        phi_prime_1: prof.d1(),
        phi_second_1: prof.dd1(),
        degree_one_dtn: prof.degree_one_dtn(),
        c_bar: -prof.d1() / f1,
        corrector_slope: cor.v.clone(),
        first_order_field: field,
        shooting_iterations: prof.shooting_iterations,
        table_rows: rows.len(),
    };
    let report = write_report(out, &r.config, r.reduced.content_hash(), &result)?;
    Ok(Outcome {
        files: vec![report, csv],
        summary: format!("profile: phi(0) = {:.12e}, phi'(1) = {:.12e}, c_bar = {:.12e}", result.phi_origin, result.phi_prime_1, result.c_bar),
    })
}

fn hp_spectrum(r: &Resolved, out: &Path) -> Result<Outcome, CliError> {
    let rp = frozen(r);
    let prof = radial::solve_phi(&rp).map_err(|e| solver(e.into()))?;
    let op = modal::build_hp(&rp, &prof, r.config.options.forward.degree).map_err(|e| solver(e.into()))?;
    let rows: Vec<Vec<String>> = op.multipliers.iter().enumerate().map(|(l, m)| vec![l.to_string(), cell(Some(*m))]).collect();
    let csv = write_csv(&out.join("hp_spectrum.csv"), &header(&["l", "multiplier"]), &rows)?;
    let report = write_report(out, &r.config, r.reduced.content_hash(), &op)?;
    let kernel = op.multipliers.get(1).copied().unwrap_or(0.0);
    Ok(Outcome { files: vec![report, csv], summary: format!("hp-spectrum: {} degrees, degree-one multiplier {kernel:.3e}", op.multipliers.len()) })
}

fn shape_rows(shape: &[Harmonic]) -> Vec<Vec<String>> {
    shape.iter().map(|h| vec![h.degree.to_string(), h.order.to_string(), cell(Some(h.value))]).collect()
}

fn domain(r: &Resolved, out: &Path) -> Result<Outcome, CliError> {
    let c = &r.config;
    let eps = c.eps.expect("validated");
    let lambda_bar = c.lambda_bar.expect("validated");
    let sol = if c.mode == Mode::FindPoint {
        outer::find_point(&r.reduced, eps, lambda_bar, &r.p0_reduced, &c.options)
    } else {
        outer::solve_at(&r.reduced, eps, lambda_bar, &r.p0_reduced, &c.options)
    }
    .map_err(solver)?;
    let report = write_report(out, c, r.reduced.content_hash(), &sol)?;
    let stored = write_json(&out.join("domain.json"), &sol)?;
    let csv = write_csv(&out.join("shape.csv"), &header(&["degree", "order", "value"]), &shape_rows(&sol.shape))?;
    Ok(Outcome {
        files: vec![report, stored, csv],
        summary: format!(
            "{}: p = {:?}, c = {:.12e}, |B|_inf = {:.3e}, relative defect = {:.3e}",
            c.mode.name(),
            sol.p_physical,
            sol.c,
            sol.report.shape_sup_norm,
            sol.report.relative_defect
        ),
    })
}

#[derive(Serialize)]
struct VerifyResult {
    solution: String,
    p: Vec<f64>,
    eps: f64,
    lambda_bar: f64,
    c_bar: f64,
    stored_relative_defect: f64,
    max_defect: f64,
    relative_defect: f64,
    min_f1: f64,
    forward_residual: f64,
    dirichlet_error: f64,
    newton_iterations: usize,
    passed: bool,
}

/// Accepts either a stored `domain.json` or a `report.json` whose result is one.
fn load_solution(path: &PathBuf) -> Result<DomainSolution, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    let inner = match value.get("result") {
        Some(v) if value.get("schema").is_some() => v.clone(),
        _ => value,
    };
    serde_json::from_value(inner).map_err(|e| CliError::Validation(format!("{} is not a domain solution: {e}", path.display())))
}

fn verify(r: &Resolved, out: &Path) -> Result<Outcome, CliError> {
    let c = &r.config;
    let path = r.solution_path.as_ref().expect("validated");
    let sol = load_solution(path)?;
    let hash = r.reduced.content_hash();
    if sol.n != r.reduced.dim() || sol.spec_hash != hash {
        return Err(CliError::Validation(format!(
            "{} was computed for a different problem (hash {} against {hash})",
            path.display(),
            sol.spec_hash
        )));
    }
    let shape = sol.shape_function().map_err(|e| solver(e.into()))?;
    let spec = Arc::new(r.reduced.clone());
    let cert = c.options.certification();
    let (defect, max) = outer::certify(&spec, &sol.p, sol.eps, sol.lambda_bar, sol.c_bar, &shape, &cert).map_err(solver)?;
    let relative = max / (sol.c_bar * defect.min_f1);
    let result = VerifyResult {
        solution: c.solution.clone().unwrap_or_default(),
        p: sol.p.clone(),
        eps: sol.eps,
        lambda_bar: sol.lambda_bar,
        c_bar: sol.c_bar,
        stored_relative_defect: sol.report.relative_defect,
        max_defect: max,
        relative_defect: relative,
        min_f1: defect.min_f1,
        forward_residual: defect.field.residual,
        dirichlet_error: defect.field.dirichlet_error().map_err(|e| solver(e.into()))?,
        newton_iterations: defect.field.log.len().saturating_sub(1),
        passed: relative < c.verify_tol,
    };
    let report = write_report(out, c, hash, &result)?;
    if !result.passed {
        return Err(CliError::VerificationFailed { relative, tol: c.verify_tol });
    }
    Ok(Outcome { files: vec![report], summary: format!("verify: relative defect {relative:.3e} < {:.1e}", c.verify_tol) })
}

fn sweep(r: &Resolved, out: &Path) -> Result<Outcome, CliError> {
    let c = &r.config;
    let eps_list = c.eps_list.as_ref().expect("validated");
    let rep = outer::sweep(&r.reduced, eps_list, c.lambda_bar.expect("validated"), &r.p0_reduced, &c.options);
    let n = r.reduced.dim();

    let mut rows = Vec::new();
    for row in &rep.table {
        for (i, (e, v)) in row.eps.iter().zip(&row.values).enumerate() {
            let order = if i == 0 { None } else { row.orders.get(i - 1).copied().flatten() };
            rows.push(vec![row.quantity.clone(), cell(Some(*e)), cell(Some(*v)), cell(order)]);
        }
    }
    let orders = write_csv(&out.join("sweep_orders.csv"), &header(&["quantity", "eps", "value", "order"]), &rows)?;

    let mut head = header(&["eps", "status"]);
    head.extend(indexed("p", n));
    head.extend(header(&["c_bar", "b_sup_norm", "relative_defect"]));
    let sol_rows: Vec<Vec<String>> = rep
        .solutions
        .iter()
        .zip(eps_list)
        .map(|(s, e)| {
            let mut row = vec![cell(Some(*e))];
            match s {
                Ok(d) => {
                    row.push("ok".into());
                    row.extend(d.p_physical.iter().map(|v| cell(Some(*v))));
                    row.extend([cell(Some(d.c_bar)), cell(Some(d.report.shape_sup_norm)), cell(Some(d.report.relative_defect))]);
                }
                Err(_) => {
                    row.push("failed".into());
                    row.extend(std::iter::repeat(String::new()).take(n + 3));
                }
            }
            row
        })
        .collect();
    let points = write_csv(&out.join("sweep_solutions.csv"), &head, &sol_rows)?;
    let report = write_report(out, c, r.reduced.content_hash(), &rep)?;
    if let Some((e, Err(msg))) = eps_list.iter().zip(&rep.solutions).find(|(_, s)| s.is_err()) {
        return Err(CliError::Solver(format!("sweep at eps = {e}: {msg}")));
    }
    let worst = rep.table.iter().filter_map(|row| row.min_order().map(|o| (row.quantity.as_str(), o))).fold(None, |acc: Option<(&str, f64)>, x| match acc {
        Some(a) if a.1 <= x.1 => Some(a),
        _ => Some(x),
    });
    let summary = match worst {
        Some((q, o)) => format!("sweep: {} points, smallest observed order {o:.3} ({q})", eps_list.len()),
        None => format!("sweep: {} points", eps_list.len()),
    };
    Ok(Outcome { files: vec![report, orders, points], summary })
}

fn scan(r: &Resolved, out: &Path) -> Result<Outcome, CliError> {
    let c = &r.config;
    let b = c.scan.as_ref().expect("validated");
    let rep = outer::scan(&r.reduced, c.lambda_bar.expect("validated"), &b.lo, &b.hi, b.cells);
    let n = r.reduced.dim();
    let mut head: Vec<String> = indexed("p", n).collect();
    head.extend(indexed("Y", n));
    let rows: Vec<Vec<String>> = rep
        .points
        .iter()
        .map(|pt| {
            let mut row: Vec<String> = pt.p.iter().map(|v| cell(Some(*v))).collect();
            match &pt.field {
                Some(f) => row.extend(f.iter().map(|v| cell(Some(*v)))),
                None => row.extend(std::iter::repeat(String::new()).take(n)),
            }
            row
        })
        .collect();
    let csv = write_csv(&out.join("scan.csv"), &head, &rows)?;
    let report = write_report(out, c, r.reduced.content_hash(), &rep)?;
    Ok(Outcome { files: vec![report, csv], summary: format!("scan: {} candidate cells", rep.candidates.len()) })
}
