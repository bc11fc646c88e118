//! Problem data, the small-scale rescaling around a center point, and the
//! affine reduction of a constant coefficient matrix to the identity.

use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::expr::{ExprError, Expression, Variable};

#[derive(Error, Debug, Clone, PartialEq)]
pub enum ProblemError {
    #[error("unsupported dimension {0}: only n = 2 and n = 3 are implemented")]
    Dimension(usize),
    #[error("{what} uses variable `{var}`, which is not available in dimension {n}")]
    VariableOutOfRange { what: String, var: Variable, n: usize },
    #[error("{0} must not depend on u")]
    DependsOnU(String),
    #[error("drift b has {got} components, expected {n}")]
    DriftLength { got: usize, n: usize },
    #[error("coefficient matrix must be {n}x{n}")]
    MatrixShape { n: usize },
    #[error("coefficient matrix entry a{i}{j} is position dependent; only constant matrices are supported (variable A(x) needs geodesic normal coordinates, which this library does not implement)")]
    VariableMatrix { i: usize, j: usize },
    #[error("coefficient matrix is not symmetric positive definite (min eigenvalue {min_eigenvalue:.3e}, asymmetry {asymmetry:.3e})")]
    NotSpd { min_eigenvalue: f64, asymmetry: f64 },
    #[error("positivity hypothesis fails at p = {p:?}: {what} = {value}")]
    NotPositive { what: &'static str, p: Vec<f64>, value: f64 },
    #[error("evaluation failed: {0}")]
    Eval(#[from] ExprError),
}

/// A semilinear overdetermined problem `a_ij d_ij u + b.grad u + lambda F(x,u) = 0`
/// with `u = f0` and conormal derivative `-c f1` on the boundary.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    n: usize,
    forcing: Expression,
    f0: Expression,
    f1: Expression,
    drift: Vec<Expression>,
    matrix: DMatrix<f64>,
    /// `x = frame * y` maps the coordinates the data is expressed in back to
    /// the coordinates the user wrote them in (identity unless reduced).
    frame: DMatrix<f64>,
    derived: Derived,
}

#[derive(Debug, Clone)]
struct Derived {
    forcing_du: Expression,
    forcing_dx: Vec<Expression>,
    grad_f0: Vec<Expression>,
    grad_f1: Vec<Expression>,
    hess_f0: Vec<Vec<Expression>>,
}

fn check_vars(what: &str, e: &Expression, n: usize, allow_u: bool) -> Result<(), ProblemError> {
    for v in e.variables() {
        match v {
            Variable::X(i) if i >= n => {
                return Err(ProblemError::VariableOutOfRange { what: what.to_string(), var: v, n })
            }
            Variable::U if !allow_u => return Err(ProblemError::DependsOnU(what.to_string())),
            _ => {}
        }
    }
    Ok(())
}

fn gradient(e: &Expression, n: usize) -> Vec<Expression> {
    (0..n).map(|i| e.differentiate(Variable::X(i))).collect()
}

impl ProblemSpec {
    pub fn new(
        n: usize,
        forcing: Expression,
        f0: Expression,
        f1: Expression,
        drift: Vec<Expression>,
        matrix: DMatrix<f64>,
    ) -> Result<Self, ProblemError> {
        if n != 2 && n != 3 {
            return Err(ProblemError::Dimension(n));
        }
        check_vars("F", &forcing, n, true)?;
        check_vars("f0", &f0, n, false)?;
        check_vars("f1", &f1, n, false)?;
        if drift.len() != n {
            return Err(ProblemError::DriftLength { got: drift.len(), n });
        }
        for (i, b) in drift.iter().enumerate() {
            check_vars(&format!("b{}", i + 1), b, n, false)?;
        }
        if matrix.nrows() != n || matrix.ncols() != n {
            return Err(ProblemError::MatrixShape { n });
        }
        check_spd(&matrix)?;
        let derived = Derived {
            forcing_du: forcing.differentiate(Variable::U),
            forcing_dx: gradient(&forcing, n),
            grad_f0: gradient(&f0, n),
            grad_f1: gradient(&f1, n),
            hess_f0: gradient(&f0, n).iter().map(|g| gradient(g, n)).collect(),
        };
        Ok(ProblemSpec { n, forcing, f0, f1, drift, matrix, frame: DMatrix::identity(n, n), derived })
    }

    /// Problem with identity coefficient matrix and zero drift.
    pub fn laplacian(n: usize, forcing: Expression, f0: Expression, f1: Expression) -> Result<Self, ProblemError> {
        let drift = vec![Expression::constant(0.0); n];
        Self::new(n, forcing, f0, f1, drift, DMatrix::identity(n, n))
    }

    /// Parses each datum from source text.
    pub fn parse(n: usize, forcing: &str, f0: &str, f1: &str, drift: &[&str], matrix: DMatrix<f64>) -> Result<Self, ProblemError> {
        let drift = drift.iter().map(|s| crate::expr::parse(s)).collect::<Result<Vec<_>, _>>()?;
        Self::new(
            n,
            crate::expr::parse(forcing)?,
            crate::expr::parse(f0)?,
            crate::expr::parse(f1)?,
            drift,
            matrix,
        )
    }

    pub fn dim(&self) -> usize {
        self.n
    }
    pub fn forcing(&self) -> &Expression {
        &self.forcing
    }
    pub fn f0(&self) -> &Expression {
        &self.f0
    }
    pub fn f1(&self) -> &Expression {
        &self.f1
    }
    pub fn drift(&self) -> &[Expression] {
        &self.drift
    }
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }
    pub fn frame(&self) -> &DMatrix<f64> {
        &self.frame
    }

    /// `F` does not depend on `u`.
    pub fn is_linear(&self) -> bool {
        !self.forcing.depends_on(Variable::U)
    }

    /// `F` is a constant.
    pub fn is_torsion(&self) -> bool {
        self.forcing.is_constant()
    }

    pub fn has_drift(&self) -> bool {
        self.drift.iter().any(|b| b.constant_value() != Some(0.0))
    }

    pub fn is_identity_matrix(&self) -> bool {
        self.matrix == DMatrix::identity(self.n, self.n)
    }

    pub fn forcing_at(&self, x: &[f64], u: f64) -> Result<f64, ExprError> {
        self.forcing.eval(x, u)
    }
    pub fn forcing_du_at(&self, x: &[f64], u: f64) -> Result<f64, ExprError> {
        self.derived.forcing_du.eval(x, u)
    }
    pub fn forcing_dx_at(&self, j: usize, x: &[f64], u: f64) -> Result<f64, ExprError> {
        self.derived.forcing_dx[j].eval(x, u)
    }
    pub fn f0_at(&self, x: &[f64]) -> Result<f64, ExprError> {
        self.f0.eval_x(x)
    }
    pub fn f1_at(&self, x: &[f64]) -> Result<f64, ExprError> {
        self.f1.eval_x(x)
    }
    pub fn drift_at(&self, x: &[f64]) -> Result<Vec<f64>, ExprError> {
        self.drift.iter().map(|b| b.eval_x(x)).collect()
    }
    pub fn grad_f0_at(&self, x: &[f64]) -> Result<Vec<f64>, ExprError> {
        self.derived.grad_f0.iter().map(|g| g.eval_x(x)).collect()
    }
    pub fn grad_f1_at(&self, x: &[f64]) -> Result<Vec<f64>, ExprError> {
        self.derived.grad_f1.iter().map(|g| g.eval_x(x)).collect()
    }
    pub fn hess_f0_at(&self, x: &[f64]) -> Result<DMatrix<f64>, ExprError> {
        let mut h = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                h[(i, j)] = self.derived.hess_f0[i][j].eval_x(x)?;
            }
        }
        Ok(h)
    }

    /// Checks `F(p, f0(p)) > 0` and `f1(p) > 0`.
    pub fn check_positivity(&self, p: &[f64]) -> Result<(), ProblemError> {
        let u = self.f0_at(p)?;
        let fv = self.forcing_at(p, u)?;
        if fv <= 0.0 {
            return Err(ProblemError::NotPositive { what: "F(p, f0(p))", p: p.to_vec(), value: fv });
        }
        let f1 = self.f1_at(p)?;
        if f1 <= 0.0 {
            return Err(ProblemError::NotPositive { what: "f1(p)", p: p.to_vec(), value: f1 });
        }
        Ok(())
    }

    /// Canonical text of the problem; stable across runs.
    pub fn canonical_text(&self) -> String {
        let mut s = format!("n={}\nF={}\nf0={}\nf1={}\n", self.n, self.forcing, self.f0, self.f1);
        for (i, b) in self.drift.iter().enumerate() {
            s.push_str(&format!("b{}={}\n", i + 1, b));
        }
        for i in 0..self.n {
            let row: Vec<String> = (0..self.n).map(|j| format!("{:?}", self.matrix[(i, j)])).collect();
            s.push_str(&format!("A{}={}\n", i + 1, row.join(",")));
        }
        s
    }

    /// SHA-256 of [`Self::canonical_text`], hex encoded.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_text().as_bytes()))
    }

    /// Changes variables `x = A^{1/2} y` so that the principal part becomes the
    /// Laplacian. Data are composed with the map and the drift becomes
    /// `A^{-1/2} b(A^{1/2} y)`. The Neumann datum is read as the derivative along
    /// the unit normal of the metric `A^{-1}`, which is invariant under the map.
    pub fn affine_reduce(&self) -> Result<ProblemSpec, ProblemError> {
        check_spd(&self.matrix)?;
        if self.is_identity_matrix() {
            return Ok(self.clone());
        }
        let (sqrt_a, inv_sqrt_a) = sqrt_spd(&self.matrix);
        let n = self.n;
        let subst: Vec<Expression> = (0..n)
            .map(|i| Expression::linear(&(0..n).map(|j| sqrt_a[(i, j)]).collect::<Vec<_>>()))
            .collect();
        let composed: Vec<Expression> = self.drift.iter().map(|b| b.substitute(&subst)).collect();
        let drift = (0..n)
            .map(|i| {
                let terms: Vec<(f64, &Expression)> = (0..n).map(|j| (inv_sqrt_a[(i, j)], &composed[j])).collect();
                Expression::scaled_sum(&terms)
            })
            .collect();
        let mut reduced = ProblemSpec::new(
            n,
            self.forcing.substitute(&subst),
            self.f0.substitute(&subst),
            self.f1.substitute(&subst),
            drift,
            DMatrix::identity(n, n),
        )?;
        reduced.frame = &self.frame * sqrt_a;
        Ok(reduced)
    }
}

fn check_spd(a: &DMatrix<f64>) -> Result<(), ProblemError> {
    let asym = (a - a.transpose()).abs().max();
    let scale = a.abs().max().max(1.0);
    let eig = SymmetricEigen::new(a.clone());
    let min = eig.eigenvalues.min();
    if asym > 1e-12 * scale || !(min > 0.0) {
        return Err(ProblemError::NotSpd { min_eigenvalue: min, asymmetry: asym });
    }
    Ok(())
}

/// Square root and inverse square root of an SPD matrix via eigendecomposition.
pub fn sqrt_spd(a: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(a.clone());
    let q = &eig.eigenvectors;
    let s = DMatrix::from_diagonal(&eig.eigenvalues.map(f64::sqrt));
    let si = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| 1.0 / v.sqrt()));
    (q * s * q.transpose(), q * si * q.transpose())
}

/// The problem seen in coordinates `z = (x - p)/eps` with `lambda = lambda_bar / eps^2`.
#[derive(Debug, Clone)]
pub struct RescaledProblem {
    pub spec: Arc<ProblemSpec>,
    pub p: Vec<f64>,
    pub eps: f64,
    pub lambda_bar: f64,
}

/// Fixed-size spatial point; only the first `n` entries are meaningful.
pub type Pt = [f64; 3];

impl RescaledProblem {
    /// Panics if `eps == 0`, `lambda_bar < 0`, or `p` has the wrong length.
    pub fn new(spec: Arc<ProblemSpec>, p: &[f64], eps: f64, lambda_bar: f64) -> Self {
        assert_eq!(p.len(), spec.dim(), "center point has wrong dimension");
        assert!(eps != 0.0 && eps.is_finite(), "eps must be nonzero");
        assert!(lambda_bar >= 0.0 && lambda_bar.is_finite(), "lambda_bar must be nonnegative");
        RescaledProblem { spec, p: p.to_vec(), eps, lambda_bar }
    }

    /// The limit `eps = 0`: all data frozen at `p`. Only the rescaled
    /// evaluators are meaningful; physical conversions are not.
    pub fn frozen(spec: Arc<ProblemSpec>, p: &[f64], lambda_bar: f64) -> Self {
        assert_eq!(p.len(), spec.dim(), "center point has wrong dimension");
        assert!(lambda_bar >= 0.0 && lambda_bar.is_finite(), "lambda_bar must be nonnegative");
        RescaledProblem { spec, p: p.to_vec(), eps: 0.0, lambda_bar }
    }

    pub fn dim(&self) -> usize {
        self.spec.dim()
    }

    /// Physical eigenvalue-like parameter `lambda = lambda_bar / eps^2`.
    pub fn lambda(&self) -> f64 {
        self.lambda_bar / (self.eps * self.eps)
    }

    /// Physical Neumann constant `c = c_bar / eps`.
    pub fn c_from_scaled(&self, c_bar: f64) -> f64 {
        c_bar / self.eps
    }

    /// `x = p + eps z`.
    pub fn to_physical(&self, z: &[f64]) -> Pt {
        let mut x = [0.0; 3];
        for i in 0..self.dim() {
            x[i] = self.p[i] + self.eps * z[i];
        }
        x
    }

    fn x(&self, z: &[f64]) -> Pt {
        self.to_physical(z)
    }

    pub fn forcing(&self, z: &[f64], u: f64) -> Result<f64, ExprError> {
        let x = self.x(z);
        self.spec.forcing_at(&x[..self.dim()], u)
    }
    pub fn forcing_du(&self, z: &[f64], u: f64) -> Result<f64, ExprError> {
        let x = self.x(z);
        self.spec.forcing_du_at(&x[..self.dim()], u)
    }
    pub fn f0(&self, z: &[f64]) -> Result<f64, ExprError> {
        let x = self.x(z);
        self.spec.f0_at(&x[..self.dim()])
    }
    pub fn f1(&self, z: &[f64]) -> Result<f64, ExprError> {
        let x = self.x(z);
        self.spec.f1_at(&x[..self.dim()])
    }
    /// Drift `b(p + eps z)` written into `out`.
    pub fn drift(&self, z: &[f64], out: &mut Pt) -> Result<(), ExprError> {
        let x = self.x(z);
        for (i, b) in self.spec.drift().iter().enumerate() {
            out[i] = b.eval_x(&x[..self.dim()])?;
        }
        Ok(())
    }

    /// Boundary Dirichlet datum `f0(p + eps (1 + eps B(w)) w)`.
    pub fn f0_boundary(&self, omega: &[f64], b: f64) -> Result<f64, ExprError> {
        let s = 1.0 + self.eps * b;
        let z: Vec<f64> = omega.iter().map(|w| s * w).collect();
        self.f0(&z)
    }

    pub fn f0_center(&self) -> Result<f64, ExprError> {
        self.spec.f0_at(&self.p)
    }
    pub fn f1_center(&self) -> Result<f64, ExprError> {
        self.spec.f1_at(&self.p)
    }
}
