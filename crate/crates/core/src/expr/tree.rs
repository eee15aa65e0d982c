use std::fmt;
use std::sync::Arc;

use super::jet::Scalar;
use crate::error::{Error, Result};

/// Elementary functions accepted by the grammar.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Ln,
    Sqrt,
    Abs2,
}

impl Func {
    pub fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "exp" => Func::Exp,
            "ln" => Func::Ln,
            "sqrt" => Func::Sqrt,
            "abs2" => Func::Abs2,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Ln => "ln",
            Func::Sqrt => "sqrt",
            Func::Abs2 => "abs2",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    /// Zero-based state index.
    Var(usize),
    /// Index into the owning tree's parameter table.
    Param(usize),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    /// Power with a constant exponent.
    Pow(Box<Expr>, f64),
    Call(Func, Box<Expr>),
}

/// Named scalar parameters shared by every expression of a system.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamTable {
    pub names: Vec<String>,
    pub values: Vec<f64>,
}

impl ParamTable {
    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.index_of(name).map(|i| self.values[i])
    }

    pub fn set(&mut self, name: &str, value: f64) {
        match self.index_of(name) {
            Some(i) => self.values[i] = value,
            None => {
                self.names.push(name.to_string());
                self.values.push(value);
            }
        }
    }
}

/// An immutable expression over state variables `x1..xn` and named parameters.
#[derive(Debug, Clone)]
pub struct ExprTree {
    root: Expr,
    dim: usize,
    params: Arc<ParamTable>,
}

impl ExprTree {
    pub(crate) fn new(root: Expr, dim: usize, params: Arc<ParamTable>) -> Result<Self> {
        if let Some(i) = max_var(&root) {
            if i >= dim {
                return Err(Error::DimensionMismatch(format!(
                    "variable x{} referenced but dimension is {dim}",
                    i + 1
                )));
            }
        }
        Ok(ExprTree { root, dim, params })
    }

    pub fn constant(c: f64, dim: usize) -> Self {
        ExprTree {
            root: Expr::Const(c),
            dim,
            params: Arc::new(ParamTable::default()),
        }
    }

    pub fn root(&self) -> &Expr {
        &self.root
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn params(&self) -> &ParamTable {
        &self.params
    }

    /// Product of two trees over the same variables and parameters.
    pub fn product(&self, other: &ExprTree) -> Result<ExprTree> {
        if self.dim != other.dim || self.params != other.params {
            return Err(Error::DimensionMismatch(
                "cannot combine expressions over different variables".into(),
            ));
        }
        Ok(ExprTree {
            root: Expr::Mul(Box::new(self.root.clone()), Box::new(other.root.clone())),
            dim: self.dim,
            params: self.params.clone(),
        })
    }

    /// True when no state variable occurs in the tree.
    pub fn is_constant(&self) -> bool {
        max_var(&self.root).is_none()
    }

    pub fn eval(&self, point: &[f64]) -> Result<f64> {
        self.check_point(point)?;
        let vars: Vec<f64> = point.to_vec();
        self.eval_with(&vars)
    }

    /// Evaluate with seeded scalars (plain values or jets).
    pub fn eval_with<S: Scalar>(&self, vars: &[S]) -> Result<S> {
        eval_node(&self.root, vars, &self.params, self.dim)
    }

    fn check_point(&self, point: &[f64]) -> Result<()> {
        if point.len() != self.dim {
            return Err(Error::DimensionMismatch(format!(
                "point has dimension {} but expression expects {}",
                point.len(),
                self.dim
            )));
        }
        Ok(())
    }

    pub fn display_node<'a>(&'a self, node: &'a Expr) -> impl fmt::Display + 'a {
        NodeDisplay {
            node,
            params: &self.params,
        }
    }
}

impl fmt::Display for ExprTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.display_node(&self.root))
    }
}

fn max_var(e: &Expr) -> Option<usize> {
    match e {
        Expr::Var(i) => Some(*i),
        Expr::Const(_) | Expr::Param(_) => None,
        Expr::Neg(a) | Expr::Pow(a, _) | Expr::Call(_, a) => max_var(a),
        Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
            match (max_var(a), max_var(b)) {
                (Some(x), Some(y)) => Some(x.max(y)),
                (x, y) => x.or(y),
            }
        }
    }
}

fn domain(node: &Expr, params: &ParamTable, reason: impl Into<String>) -> Error {
    Error::Domain {
        expr: NodeDisplay { node, params }.to_string(),
        reason: reason.into(),
    }
}

fn eval_node<S: Scalar>(node: &Expr, vars: &[S], params: &ParamTable, n: usize) -> Result<S> {
    let out = match node {
        Expr::Const(c) => S::constant(*c, n),
        Expr::Var(i) => vars[*i].clone(),
        Expr::Param(i) => S::constant(params.values[*i], n),
        Expr::Neg(a) => eval_node(a, vars, params, n)?.neg(),
        Expr::Add(a, b) => eval_node(a, vars, params, n)?.add(&eval_node(b, vars, params, n)?),
        Expr::Sub(a, b) => eval_node(a, vars, params, n)?.sub(&eval_node(b, vars, params, n)?),
        Expr::Mul(a, b) => eval_node(a, vars, params, n)?.mul(&eval_node(b, vars, params, n)?),
        Expr::Div(a, b) => {
            let num = eval_node(a, vars, params, n)?;
            let den = eval_node(b, vars, params, n)?;
            if den.value() == 0.0 {
                return Err(domain(node, params, "division by zero"));
            }
            num.div(&den)
        }
        Expr::Pow(a, p) => {
            let u = eval_node(a, vars, params, n)?;
            let v = u.value();
            let p = *p;
            let integer = p.fract() == 0.0;
            if v < 0.0 && !integer {
                return Err(domain(node, params, "negative base with non-integer exponent"));
            }
            if v == 0.0 && p < 0.0 {
                return Err(domain(node, params, "zero raised to a negative power"));
            }
            let pw = |k: f64| {
                if integer && k.abs() < i32::MAX as f64 {
                    v.powi(k as i32)
                } else {
                    v.powf(k)
                }
            };
            let f1 = if p == 0.0 { 0.0 } else { p * pw(p - 1.0) };
            let f2 = if p == 0.0 || p == 1.0 {
                0.0
            } else {
                p * (p - 1.0) * pw(p - 2.0)
            };
            u.lift(pw(p), f1, f2)
        }
        Expr::Call(func, a) => {
            let u = eval_node(a, vars, params, n)?;
            let v = u.value();
            match func {
                Func::Sin => u.lift(v.sin(), v.cos(), -v.sin()),
                Func::Cos => u.lift(v.cos(), -v.sin(), -v.cos()),
                Func::Exp => {
                    let ex = v.exp();
                    u.lift(ex, ex, ex)
                }
                Func::Ln => {
                    if v <= 0.0 {
                        return Err(domain(node, params, "logarithm of a non-positive value"));
                    }
                    u.lift(v.ln(), 1.0 / v, -1.0 / (v * v))
                }
                Func::Sqrt => {
                    if v < 0.0 {
                        return Err(domain(node, params, "square root of a negative value"));
                    }
                    let s = v.sqrt();
                    u.lift(s, 0.5 / s, -0.25 / (s * v))
                }
                Func::Abs2 => u.mul(&u),
            }
        }
    };
    if !out.is_finite() {
        return Err(domain(node, params, "non-finite result"));
    }
    Ok(out)
}

struct NodeDisplay<'a> {
    node: &'a Expr,
    params: &'a ParamTable,
}

impl NodeDisplay<'_> {
    fn child<'b>(&'b self, node: &'b Expr) -> NodeDisplay<'b> {
        NodeDisplay {
            node,
            params: self.params,
        }
    }
}

fn write_number(f: &mut fmt::Formatter<'_>, c: f64) -> fmt::Result {
    if c < 0.0 || (c == 0.0 && c.is_sign_negative()) {
        write!(f, "(-{:?})", -c)
    } else {
        write!(f, "{c:?}")
    }
}

impl fmt::Display for NodeDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.node {
            Expr::Const(c) => write_number(f, *c),
            Expr::Var(i) => write!(f, "x{}", i + 1),
            Expr::Param(i) => f.write_str(&self.params.names[*i]),
            Expr::Neg(a) => write!(f, "(-{})", self.child(a)),
            Expr::Add(a, b) => write!(f, "({} + {})", self.child(a), self.child(b)),
            Expr::Sub(a, b) => write!(f, "({} - {})", self.child(a), self.child(b)),
            Expr::Mul(a, b) => write!(f, "({} * {})", self.child(a), self.child(b)),
            Expr::Div(a, b) => write!(f, "({} / {})", self.child(a), self.child(b)),
            Expr::Pow(a, p) => {
                write!(f, "({}^", self.child(a))?;
                write_number(f, *p)?;
                f.write_str(")")
            }
            Expr::Call(func, a) => write!(f, "{}({})", func.name(), self.child(a)),
        }
    }
}
