//! Analytic expressions for the problem data.
//!
//! Expressions are infix formulas over the spatial variables `x1..x3`, the
//! unknown `u`, numeric literals and the constants `pi` and `e`. They support
//! exact symbolic differentiation and total evaluation: every failure of the
//! real-valued semantics (log of a non-positive number, division by zero,
//! overflow, ...) is reported as an [`ExprError`], never as a NaN.

mod diff;
mod parse;

use std::fmt;

use thiserror::Error;

pub use parse::parse;

/// Maximum spatial dimension supported by the variable set.
pub const MAX_DIM: usize = 3;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum ExprError {
    #[error("syntax error at column {column}: {message}")]
    Syntax { column: usize, message: String },
    #[error("unknown identifier `{name}` at column {column}")]
    UnknownIdentifier { name: String, column: usize },
    #[error("variable `{0}` is not bound at this evaluation point")]
    Unbound(Variable),
    #[error("domain error: {func}({arg}) is undefined")]
    Domain { func: &'static str, arg: f64 },
    #[error("non-finite result in {0}")]
    NonFinite(&'static str),
}

/// A variable an expression may depend on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variable {
    /// Spatial coordinate, zero-based (`X(0)` is `x1`).
    X(usize),
    /// The unknown function value.
    U,
}

impl fmt::Display for Variable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Variable::X(i) => write!(f, "x{}", i + 1),
            Variable::U => f.write_str("u"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Log,
    Sqrt,
    Tanh,
}

impl Func {
    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
            Func::Tanh => "tanh",
        }
    }

    pub fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sqrt" => Func::Sqrt,
            "tanh" => Func::Tanh,
            _ => return None,
        })
    }

    pub const ALL: [Func; 6] = [Func::Sin, Func::Cos, Func::Exp, Func::Log, Func::Sqrt, Func::Tanh];

    fn apply(self, a: f64) -> Result<f64, ExprError> {
        let v = match self {
            Func::Sin => a.sin(),
            Func::Cos => a.cos(),
            Func::Exp => a.exp(),
            Func::Log => {
                if a <= 0.0 {
                    return Err(ExprError::Domain { func: "log", arg: a });
                }
                a.ln()
            }
            Func::Sqrt => {
                if a < 0.0 {
                    return Err(ExprError::Domain { func: "sqrt", arg: a });
                }
                a.sqrt()
            }
            Func::Tanh => a.tanh(),
        };
        finite(v, self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinOp {
    fn symbol(self) -> char {
        match self {
            BinOp::Add => '+',
            BinOp::Sub => '-',
            BinOp::Mul => '*',
            BinOp::Div => '/',
            BinOp::Pow => '^',
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Node {
    Const(f64),
    Var(Variable),
    Neg(Box<Node>),
    Bin(BinOp, Box<Node>, Box<Node>),
    Call(Func, Box<Node>),
}

/// An immutable expression tree.
#[derive(Debug, Clone, PartialEq)]
pub struct Expression {
    pub(crate) root: Node,
}

fn finite(v: f64, what: &'static str) -> Result<f64, ExprError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(ExprError::NonFinite(what))
    }
}

fn pow(a: f64, b: f64) -> Result<f64, ExprError> {
    if b.fract() == 0.0 && b.abs() < i32::MAX as f64 {
        if a == 0.0 && b < 0.0 {
            return Err(ExprError::Domain { func: "pow", arg: a });
        }
        return finite(a.powi(b as i32), "pow");
    }
    if a < 0.0 || (a == 0.0 && b < 0.0) {
        return Err(ExprError::Domain { func: "pow", arg: a });
    }
    finite(a.powf(b), "pow")
}

impl Node {
    fn eval(&self, x: &[f64], u: Option<f64>) -> Result<f64, ExprError> {
        match self {
            Node::Const(c) => Ok(*c),
            Node::Var(Variable::X(i)) => x.get(*i).copied().ok_or(ExprError::Unbound(Variable::X(*i))),
            Node::Var(Variable::U) => u.ok_or(ExprError::Unbound(Variable::U)),
            Node::Neg(a) => Ok(-a.eval(x, u)?),
            Node::Bin(op, a, b) => {
                let a = a.eval(x, u)?;
                let b = b.eval(x, u)?;
                match op {
                    BinOp::Add => finite(a + b, "+"),
                    BinOp::Sub => finite(a - b, "-"),
                    BinOp::Mul => finite(a * b, "*"),
                    BinOp::Div => {
                        if b == 0.0 {
                            Err(ExprError::Domain { func: "div", arg: b })
                        } else {
                            finite(a / b, "/")
                        }
                    }
                    BinOp::Pow => pow(a, b),
                }
            }
            Node::Call(f, a) => f.apply(a.eval(x, u)?),
        }
    }

    fn visit_vars(&self, out: &mut Vec<Variable>) {
        match self {
            Node::Const(_) => {}
            Node::Var(v) => {
                if !out.contains(v) {
                    out.push(*v)
                }
            }
            Node::Neg(a) | Node::Call(_, a) => a.visit_vars(out),
            Node::Bin(_, a, b) => {
                a.visit_vars(out);
                b.visit_vars(out);
            }
        }
    }

    fn depth(&self) -> usize {
        match self {
            Node::Const(_) | Node::Var(_) => 1,
            Node::Neg(a) | Node::Call(_, a) => 1 + a.depth(),
            Node::Bin(_, a, b) => 1 + a.depth().max(b.depth()),
        }
    }

    fn substitute(&self, xs: &[Node]) -> Node {
        match self {
            Node::Var(Variable::X(i)) if *i < xs.len() => xs[*i].clone(),
            Node::Const(_) | Node::Var(_) => self.clone(),
            Node::Neg(a) => diff::neg(a.substitute(xs)),
            Node::Call(f, a) => Node::Call(*f, Box::new(a.substitute(xs))),
            Node::Bin(op, a, b) => diff::bin(*op, a.substitute(xs), b.substitute(xs)),
        }
    }
}

impl fmt::Display for Node {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Node::Const(c) if *c < 0.0 => write!(f, "(-{})", -c),
            Node::Const(c) => write!(f, "{}", c),
            Node::Var(v) => write!(f, "{}", v),
            Node::Neg(a) => write!(f, "(-{})", a),
            Node::Bin(op, a, b) => write!(f, "({} {} {})", a, op.symbol(), b),
            Node::Call(func, a) => write!(f, "{}({})", func.name(), a),
        }
    }
}

impl fmt::Display for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.root.fmt(f)
    }
}

impl Expression {
    pub fn constant(c: f64) -> Self {
        Expression { root: Node::Const(c) }
    }

    pub fn var(v: Variable) -> Self {
        Expression { root: Node::Var(v) }
    }

    /// Evaluates at spatial point `x` with `u` bound.
    pub fn eval(&self, x: &[f64], u: f64) -> Result<f64, ExprError> {
        self.root.eval(x, Some(u))
    }

    /// Evaluates an expression that must not depend on `u`.
    pub fn eval_x(&self, x: &[f64]) -> Result<f64, ExprError> {
        self.root.eval(x, None)
    }

    /// Exact symbolic partial derivative.
    pub fn differentiate(&self, var: Variable) -> Expression {
        Expression { root: diff::derivative(&self.root, var) }
    }

    /// Variables appearing in the expression, in order of first occurrence.
    pub fn variables(&self) -> Vec<Variable> {
        let mut out = Vec::new();
        self.root.visit_vars(&mut out);
        out
    }

    pub fn depends_on(&self, var: Variable) -> bool {
        self.variables().contains(&var)
    }

    pub fn is_constant(&self) -> bool {
        self.variables().is_empty()
    }

    /// Value of a variable-free expression.
    pub fn constant_value(&self) -> Option<f64> {
        if self.is_constant() {
            self.root.eval(&[], None).ok()
        } else {
            None
        }
    }

    pub fn depth(&self) -> usize {
        self.root.depth()
    }

    /// Replaces `x_i` by `xs[i]` for every `i < xs.len()`.
    pub fn substitute(&self, xs: &[Expression]) -> Expression {
        let nodes: Vec<Node> = xs.iter().map(|e| e.root.clone()).collect();
        Expression { root: self.root.substitute(&nodes) }
    }

    /// Sum of `coeffs[i] * x_i`, used to build linear changes of variables.
    pub fn linear(coeffs: &[f64]) -> Expression {
        let mut acc = Node::Const(0.0);
        for (i, &c) in coeffs.iter().enumerate() {
            let term = diff::mul(Node::Const(c), Node::Var(Variable::X(i)));
            acc = diff::add(acc, term);
        }
        Expression { root: acc }
    }

    pub fn scaled_sum(terms: &[(f64, &Expression)]) -> Expression {
        let mut acc = Node::Const(0.0);
        for (c, e) in terms {
            acc = diff::add(acc, diff::mul(Node::Const(*c), e.root.clone()));
        }
        Expression { root: acc }
    }

    pub(crate) fn from_node(root: Node) -> Self {
        Expression { root }
    }
}

impl std::str::FromStr for Expression {
    type Err = ExprError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse(s)
    }
}
