//! Run configuration: a TOML file with a `[problem]` and a `[run]` table.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use overdet_core::expr::{self, Expression};
use overdet_core::outer::{self, OuterOptions};
use overdet_core::problem::ProblemSpec;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Pipeline stage selected by the subcommand or by `run.mode`.
#[derive(clap::Subcommand, Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Radial profile and first-order corrector at p0 (CSV table).
    Profile,
    /// Multipliers of the linearized shape operator at p0.
    HpSpectrum,
    /// Newton iteration for the center, then shape solve and certification.
    FindPoint,
    /// Shape solve and certification at the fixed center p0.
    Solve,
    /// Re-certifies a stored domain solution.
    Verify,
    /// find-point over a list of eps values with a convergence table.
    Sweep,
    /// Grid scan of the leading-order center field for sign changes.
    Scan,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Profile => "profile",
            Mode::HpSpectrum => "hp-spectrum",
            Mode::FindPoint => "find-point",
            Mode::Solve => "solve",
            Mode::Verify => "verify",
            Mode::Sweep => "sweep",
            Mode::Scan => "scan",
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub problem: ProblemSection,
    #[serde(default)]
    pub run: RunSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    pub n: usize,
    #[serde(rename = "F")]
    pub forcing: String,
    pub f0: String,
    pub f1: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<Vec<String>>,
    #[serde(default, rename = "A", skip_serializing_if = "Option::is_none")]
    pub a: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub mode: Option<Mode>,
    pub eps: Option<f64>,
    pub eps_list: Option<Vec<f64>>,
    pub lambda_bar: Option<f64>,
    pub kappa: Option<f64>,
    pub p0: Option<Vec<f64>>,
    pub solution: Option<String>,
    pub scan_lo: Option<Vec<f64>>,
    pub scan_hi: Option<Vec<f64>>,
    pub scan_cells: Option<usize>,
    pub out_dir: Option<String>,
    pub radial_nodes: Option<usize>,
    pub degree: Option<usize>,
    pub cert_extra_nodes: Option<usize>,
    pub cert_extra_degree: Option<usize>,
    pub forward_tol: Option<f64>,
    pub max_newton: Option<usize>,
    pub shape_tol: Option<f64>,
    pub shape_max_iter: Option<usize>,
    pub point_tol: Option<f64>,
    pub point_max_iter: Option<usize>,
    pub degeneracy_det: Option<f64>,
    pub verify_tol: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub cells: usize,
}

/// A validated configuration with every default filled in. This is what a
/// report embeds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub mode: Mode,
    pub problem: ProblemSection,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps_list: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_bar: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    /// Seed or fixed center in the original coordinates.
    pub p0: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub solution: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scan: Option<ScanBox>,
    pub options: OuterOptions,
    pub verify_tol: f64,
}

pub const DEFAULT_SCAN_CELLS: usize = 16;
pub const DEFAULT_VERIFY_TOL: f64 = 1e-6;

/// Everything a mode needs to run.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub config: RunConfig,
    /// Problem as written.
    pub original: ProblemSpec,
    /// Problem after reduction of the coefficient matrix to the identity.
    pub reduced: ProblemSpec,
    /// `p0` in the reduced coordinates.
    pub p0_reduced: Vec<f64>,
    pub solution_path: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

fn parse_expr(what: &str, src: &str) -> Result<Expression, CliError> {
    expr::parse(src).map_err(|e| invalid(format!("{what} = {src:?}: {e}")))
}

fn positive(what: &str, v: Option<f64>) -> Result<(), CliError> {
    match v {
        Some(x) if !(x.is_finite() && x > 0.0) => Err(invalid(format!("run.{what} must be positive and finite, got {x}"))),
        _ => Ok(()),
    }
}

fn check_len(what: &str, v: &[f64], n: usize) -> Result<(), CliError> {
    if v.len() != n {
        return Err(invalid(format!("run.{what} has {} components, expected {n}", v.len())));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(invalid(format!("run.{what} has a non-finite component")));
    }
    Ok(())
}

pub fn read(path: &Path) -> Result<ConfigFile, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| invalid(format!("cannot read {}: {e}", path.display())))?;
    parse(&text)
}

pub fn parse(text: &str) -> Result<ConfigFile, CliError> {
    toml::from_str(text).map_err(|e| invalid(e.to_string()))
}

fn build_problem(p: &ProblemSection) -> Result<(ProblemSection, ProblemSpec), CliError> {
    let n = p.n;
    if n != 2 && n != 3 {
        return Err(invalid(format!("problem.n = {n}: only 2 and 3 are supported")));
    }
    let b = p.b.clone().unwrap_or_else(|| vec!["0".into(); n]);
    let a = p.a.clone().unwrap_or_else(|| (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect());
    if a.len() != n || a.iter().any(|row| row.len() != n) {
        return Err(invalid(format!("problem.A must be an {n}x{n} array of numbers")));
    }
    let matrix = DMatrix::from_fn(n, n, |i, j| a[i][j]);
    let drift = b.iter().enumerate().map(|(i, s)| parse_expr(&format!("problem.b[{i}]"), s)).collect::<Result<Vec<_>, _>>()?;
    let spec = ProblemSpec::new(
        n,
        parse_expr("problem.F", &p.forcing)?,
        parse_expr("problem.f0", &p.f0)?,
        parse_expr("problem.f1", &p.f1)?,
        drift,
        matrix,
    )
    .map_err(|e| invalid(format!("problem: {e}")))?;
    Ok((ProblemSection { b: Some(b), a: Some(a), ..p.clone() }, spec))
}

/// Validates the file against the selected mode. `mode` comes from the
/// command line and overrides `run.mode`.
pub fn resolve(file: &ConfigFile, mode: Option<Mode>, base_dir: &Path) -> Result<Resolved, CliError> {
    let run = &file.run;
    let Some(mode) = mode.or(run.mode) else {
        return Err(invalid("no mode: give a subcommand or set run.mode"));
    };
    let (problem, original) = build_problem(&file.problem)?;
    let n = original.dim();
    let reduced = original.affine_reduce().map_err(|e| invalid(format!("problem: {e}")))?;

    let p0 = run.p0.clone().unwrap_or_else(|| vec![0.0; n]);
    check_len("p0", &p0, n)?;
    let inv_frame = reduced.frame().clone().try_inverse().ok_or_else(|| invalid("coefficient matrix is singular"))?;
    let p0_reduced: Vec<f64> = (0..n).map(|i| (0..n).map(|j| inv_frame[(i, j)] * p0[j]).sum()).collect();

    let mut options = OuterOptions::for_dim(n);
    let f = &mut options.forward;
    f.radial_nodes = run.radial_nodes.unwrap_or(f.radial_nodes);
    f.degree = run.degree.unwrap_or(f.degree);
    f.tol = run.forward_tol.unwrap_or(f.tol);
    f.max_newton = run.max_newton.unwrap_or(f.max_newton);
    options.cert_extra_nodes = run.cert_extra_nodes.unwrap_or(options.cert_extra_nodes);
    options.cert_extra_degree = run.cert_extra_degree.unwrap_or(options.cert_extra_degree);
    options.shape_tol = run.shape_tol.unwrap_or(options.shape_tol);
    options.shape_max_iter = run.shape_max_iter.unwrap_or(options.shape_max_iter);
    options.point_tol = run.point_tol.unwrap_or(options.point_tol);
    options.point_max_iter = run.point_max_iter.unwrap_or(options.point_max_iter);
    options.degeneracy_det = run.degeneracy_det.unwrap_or(options.degeneracy_det);
    if options.forward.radial_nodes < 4 || options.forward.degree < 2 {
        return Err(invalid("run.radial_nodes must be at least 4 and run.degree at least 2"));
    }
    for (what, v) in [
        ("forward_tol", run.forward_tol),
        ("shape_tol", run.shape_tol),
        ("point_tol", run.point_tol),
        ("degeneracy_det", run.degeneracy_det),
        ("verify_tol", run.verify_tol),
    ] {
        positive(what, v)?;
    }

    let lambda_bar = match (run.lambda_bar, run.kappa) {
        (Some(_), Some(_)) => return Err(invalid("give either run.lambda_bar or run.kappa, not both")),
        (Some(l), None) => {
            if !(l.is_finite() && l >= 0.0) {
                return Err(invalid(format!("run.lambda_bar must be non-negative and finite, got {l}")));
            }
            Some(l)
        }
        (None, Some(k)) => {
            positive("kappa", Some(k))?;
            let c = outer::torsion_constant(&reduced).map_err(|e| invalid(e.to_string()))?;
            Some(outer::torsion_lambda_bar(n, k, c))
        }
        (None, None) => None,
    };
    if lambda_bar.is_none() && mode != Mode::Verify {
        return Err(invalid(format!("mode {} needs run.lambda_bar or run.kappa", mode.name())));
    }

    let needs_eps = matches!(mode, Mode::FindPoint | Mode::Solve);
    if needs_eps && run.eps.is_none() {
        return Err(invalid(format!("mode {} needs run.eps", mode.name())));
    }
    if let Some(e) = run.eps {
        if !(e.is_finite() && e != 0.0 && e.abs() < 1.0) {
            return Err(invalid(format!("run.eps must be nonzero with |eps| < 1, got {e}")));
        }
    }
    if mode == Mode::Sweep {
        match &run.eps_list {
            Some(list) if list.len() >= 2 => {
                if list.iter().any(|e| !(e.is_finite() && *e != 0.0 && e.abs() < 1.0)) {
                    return Err(invalid("run.eps_list entries must be nonzero with |eps| < 1"));
                }
            }
            _ => return Err(invalid("mode sweep needs run.eps_list with at least two entries")),
        }
    }
    if matches!(mode, Mode::Profile | Mode::HpSpectrum | Mode::FindPoint | Mode::Solve | Mode::Sweep) {
        reduced.check_positivity(&p0_reduced).map_err(|e| invalid(e.to_string()))?;
    }

    let scan = if mode == Mode::Scan {
        let (Some(lo), Some(hi)) = (&run.scan_lo, &run.scan_hi) else {
            return Err(invalid("mode scan needs run.scan_lo and run.scan_hi"));
        };
        check_len("scan_lo", lo, n)?;
        check_len("scan_hi", hi, n)?;
        if lo.iter().zip(hi).any(|(a, b)| a >= b) {
            return Err(invalid("run.scan_lo must be below run.scan_hi in every component"));
        }
        let cells = run.scan_cells.unwrap_or(DEFAULT_SCAN_CELLS);
        if cells == 0 {
            return Err(invalid("run.scan_cells must be positive"));
        }
        Some(ScanBox { lo: lo.clone(), hi: hi.clone(), cells })
    } else {
        None
    };

    let solution_path = match (&run.solution, mode) {
        (Some(s), _) => Some(base_dir.join(s)),
        (None, Mode::Verify) => return Err(invalid("mode verify needs run.solution")),
        (None, _) => None,
    };

    let config = RunConfig {
        mode,
        problem,
        eps: run.eps,
        eps_list: run.eps_list.clone(),
        lambda_bar,
        kappa: run.kappa,
        p0,
        solution: run.solution.clone(),
        scan,
        options,
        verify_tol: run.verify_tol.unwrap_or(DEFAULT_VERIFY_TOL),
    };
    Ok(Resolved {
        config,
        original,
        reduced,
        p0_reduced,
        solution_path,
        out_dir: run.out_dir.as_ref().map(|d| base_dir.join(d)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
[problem]
n = 2
F = "exp(u)"
f0 = "1 + (x1^2 + x2^2)/2"
f1 = "1 + 0.3*x1"
"#;

    fn resolve_text(extra: &str, mode: Option<Mode>) -> Result<Resolved, CliError> {
        let file = parse(&format!("{BASE}\n[run]\n{extra}"))?;
        resolve(&file, mode, Path::new("."))
    }

    #[test]
    fn defaults_are_filled() {
        let r = resolve_text("lambda_bar = 0.2\neps = 0.02", Some(Mode::FindPoint)).unwrap();
        assert_eq!(r.config.p0, vec![0.0, 0.0]);
        assert_eq!(r.config.problem.b.as_deref(), Some(&["0".to_string(), "0".to_string()][..]));
        assert_eq!(r.config.options, OuterOptions::for_dim(2));
    }

    #[test]
    fn syntax_error_reports_column() {
        let file = parse("[problem]\nn = 2\nF = \"exp(u\"\nf0 = \"1\"\nf1 = \"1\"\n[run]\nlambda_bar = 0.1").unwrap();
        let err = resolve(&file, Some(Mode::Profile), Path::new(".")).unwrap_err();
        assert!(matches!(err, CliError::Validation(_)));
        assert!(err.to_string().contains("column"), "{err}");
    }

    #[test]
    fn missing_fields_are_validation_errors() {
        assert!(matches!(resolve_text("lambda_bar = 0.2", Some(Mode::Solve)), Err(CliError::Validation(_))));
        assert!(matches!(resolve_text("eps = 0.1", Some(Mode::Solve)), Err(CliError::Validation(_))));
        assert!(matches!(resolve_text("lambda_bar = 0.2\neps_list = [0.1]", Some(Mode::Sweep)), Err(CliError::Validation(_))));
        assert!(matches!(resolve_text("lambda_bar = 0.2", Some(Mode::Verify)), Err(CliError::Validation(_))));
        assert!(matches!(resolve_text("lambda_bar = 0.2", None), Err(CliError::Validation(_))));
        assert!(matches!(resolve_text("lambda_bar = 0.2\nkappa = 1.0", Some(Mode::Profile)), Err(CliError::Validation(_))));
        assert!(matches!(resolve_text("lambda_bar = 0.2\nbogus = 1", Some(Mode::Profile)), Err(CliError::Validation(_))));
    }

    #[test]
    fn subcommand_overrides_config_mode() {
        let r = resolve_text("mode = \"scan\"\nlambda_bar = 0.2", Some(Mode::Profile)).unwrap();
        assert_eq!(r.config.mode, Mode::Profile);
        let r = resolve_text("mode = \"hp-spectrum\"\nlambda_bar = 0.2", None).unwrap();
        assert_eq!(r.config.mode, Mode::HpSpectrum);
    }

    #[test]
    fn kappa_requires_constant_forcing() {
        assert!(resolve_text("kappa = 0.5", Some(Mode::Profile)).is_err());
        let file = parse("[problem]\nn = 2\nF = \"2\"\nf0 = \"x1\"\nf1 = \"1\"\n[run]\nkappa = 0.5").unwrap();
        let r = resolve(&file, Some(Mode::Profile), Path::new(".")).unwrap();
        assert!((r.config.lambda_bar.unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn matrix_must_be_spd() {
        let text = format!("{BASE}A = [[1.0, 2.0], [2.0, 1.0]]\n[run]\nlambda_bar = 0.2");
        let err = resolve(&parse(&text).unwrap(), Some(Mode::Profile), Path::new(".")).unwrap_err();
        assert!(err.to_string().contains("positive definite"), "{err}");
    }

    #[test]
    fn seed_is_mapped_to_reduced_coordinates() {
        let text = format!("{BASE}A = [[2.0, 1.0], [1.0, 2.0]]\n[run]\nlambda_bar = 0.2\np0 = [0.3, -0.1]");
        let r = resolve(&parse(&text).unwrap(), Some(Mode::Profile), Path::new(".")).unwrap();
        let frame = r.reduced.frame();
        for i in 0..2 {
            let x: f64 = (0..2).map(|j| frame[(i, j)] * r.p0_reduced[j]).sum();
            assert!((x - r.config.p0[i]).abs() < 1e-14);
        }
    }
}
