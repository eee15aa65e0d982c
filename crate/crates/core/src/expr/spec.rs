//! System specification documents.
//!
//! A document is a sequence of statements separated by newlines or `;`.
//! `#` starts a comment. Statements may appear in any order:
//!
//! ```text
//! dim = 2                 # total state dimension
//! e_dim = 1               # optional: first e_dim coordinates are e, the rest x
//! params: lam = 0.5, mu = 1
//! F1 = -(lam + x2*sin(x2))*x1
//! G1 = mu*x2              # transverse models: x-dynamics
//! g1 = 1                  # control input field
//! alpha = 1               # optional scaling of g
//! Q = [1, 0, 0, 1]        # dense row-major
//! P = [1, 0, 0, 1]        # constant metric for controller synthesis
//! ```
//!
//! A section header `F:` (or `G:`, `g:`) takes one expression per following
//! line until the next statement that contains `=` or another header.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

use super::parser::{parse_constant, parse_expr, Origin};
use super::tree::{ExprTree, ParamTable};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct SystemSpec {
    /// Total state dimension.
    pub dim: usize,
    /// Dimension of the transverse coordinate `e` when the document declares one.
    pub e_dim: Option<usize>,
    pub params: Arc<ParamTable>,
    pub f: Vec<ExprTree>,
    pub g_manifold: Vec<ExprTree>,
    pub control: Vec<ExprTree>,
    pub alpha: Option<ExprTree>,
    pub q: Option<DMatrix<f64>>,
    pub p: Option<DMatrix<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Field {
    F,
    G,
    Control,
}

struct Statement {
    text: String,
    origin: Origin,
}

fn split_statements(text: &str) -> Vec<Statement> {
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("");
        let mut col = 0;
        for piece in line.split(';') {
            let lead = piece.len() - piece.trim_start().len();
            let trimmed = piece.trim();
            if !trimmed.is_empty() {
                out.push(Statement {
                    text: trimmed.to_string(),
                    origin: Origin {
                        line: lineno + 1,
                        column: col + lead + 1,
                    },
                });
            }
            col += piece.len() + 1;
        }
    }
    out
}

fn syntax(origin: Origin, message: impl Into<String>) -> Error {
    Error::Syntax {
        line: origin.line,
        column: origin.column,
        message: message.into(),
    }
}

fn shifted(origin: Origin, by: usize) -> Origin {
    Origin {
        line: origin.line,
        column: origin.column + by,
    }
}

fn parse_matrix(body: &str, params: &ParamTable, origin: Origin) -> Result<Vec<f64>> {
    let inner = body
        .trim()
        .strip_prefix('[')
        .and_then(|b| b.strip_suffix(']'))
        .ok_or_else(|| syntax(origin, "matrix must be written as [a, b, ...] in row-major order"))?;
    inner
        .split(',')
        .map(|item| parse_constant(item.trim(), params, origin))
        .collect()
}

fn square(values: Vec<f64>, what: &str) -> Result<DMatrix<f64>> {
    let n = (values.len() as f64).sqrt().round() as usize;
    if n * n != values.len() || n == 0 {
        return Err(Error::DimensionMismatch(format!(
            "{what} has {} entries, which is not a square matrix",
            values.len()
        )));
    }
    Ok(DMatrix::from_row_slice(n, n, &values))
}

impl SystemSpec {
    pub fn parse(text: &str) -> Result<SystemSpec> {
        Self::parse_with(text, &[])
    }

    /// Parse a document, then apply parameter overrides (which may also
    /// introduce parameters the document does not declare).
    pub fn parse_with(text: &str, overrides: &[(String, f64)]) -> Result<SystemSpec> {
        let statements = split_statements(text);
        let mut dim = None;
        let mut e_dim = None;
        let mut params = ParamTable::default();

        // First pass: scalars and parameters, so expressions can refer to them.
        for st in &statements {
            if let Some(rest) = st.text.strip_prefix("params") {
                let off = "params".len();
                let rest = rest.trim_start().trim_start_matches(':');
                for item in rest.split(',').filter(|i| !i.trim().is_empty()) {
                    let (name, value) = item
                        .split_once('=')
                        .ok_or_else(|| syntax(st.origin, format!("expected name = value in `{}`", item.trim())))?;
                    let name = name.trim();
                    if !is_identifier(name) {
                        return Err(syntax(st.origin, format!("invalid parameter name `{name}`")));
                    }
                    let v = parse_constant(value.trim(), &params, shifted(st.origin, off))?;
                    params.set(name, v);
                }
                continue;
            }
            let (lhs, rhs) = st.text.split_once('=').map(|(l, r)| (l.trim(), r)).unwrap_or(("", ""));
            match lhs {
                "dim" => dim = Some(parse_count(rhs, st.origin)?),
                "e_dim" => e_dim = Some(parse_count(rhs, st.origin)?),
                _ => {}
            }
        }
        for (name, value) in overrides {
            params.set(name, *value);
        }
        let dim = dim.ok_or_else(|| syntax(Origin::default(), "missing `dim` declaration"))?;
        if dim == 0 {
            return Err(Error::DimensionMismatch("dim must be at least 1".into()));
        }
        if let Some(ed) = e_dim {
            if ed == 0 || ed >= dim {
                return Err(Error::DimensionMismatch(format!(
                    "e_dim = {ed} must satisfy 1 <= e_dim < dim = {dim}"
                )));
            }
        }
        let params = Arc::new(params);

        let mut indexed: Vec<(Field, usize, ExprTree, Origin)> = Vec::new();
        let mut sectioned: Vec<(Field, ExprTree)> = Vec::new();
        let mut section: Option<Field> = None;
        let mut alpha = None;
        let mut q = None;
        let mut p = None;

        for st in &statements {
            let Some((lhs, rhs)) = st.text.split_once('=') else {
                let head = st.text.trim();
                if let Some(name) = head.strip_suffix(':') {
                    section = Some(match name.trim() {
                        "F" => Field::F,
                        "G" => Field::G,
                        "g" => Field::Control,
                        other => return Err(syntax(st.origin, format!("unknown section `{other}`"))),
                    });
                    continue;
                }
                if head.starts_with("params") {
                    continue;
                }
                match section {
                    Some(field) => {
                        sectioned.push((field, parse_expr(head, dim, &params, st.origin)?));
                        continue;
                    }
                    None => return Err(syntax(st.origin, format!("expected a statement, found `{head}`"))),
                }
            };
            section = None;
            let name = lhs.trim();
            let rhs_origin = shifted(st.origin, lhs.len() + 1 + (rhs.len() - rhs.trim_start().len()));
            if name.starts_with("params") || name == "dim" || name == "e_dim" {
                continue;
            }
            match name {
                "alpha" => {
                    alpha = Some(parse_expr(rhs.trim(), dim, &params, rhs_origin)?);
                    continue;
                }
                "Q" => {
                    q = Some(square(parse_matrix(rhs, &params, rhs_origin)?, "Q")?);
                    continue;
                }
                "P" => {
                    p = Some(square(parse_matrix(rhs, &params, rhs_origin)?, "P")?);
                    continue;
                }
                _ => {}
            }
            let (field, idx) = match name.split_at(1) {
                ("F", k) => (Field::F, k),
                ("G", k) => (Field::G, k),
                ("g", k) => (Field::Control, k),
                _ => return Err(Error::UnknownIdentifier(format!(
                    "{name} (line {}, column {})",
                    st.origin.line, st.origin.column
                ))),
            };
            let k: usize = idx
                .parse()
                .map_err(|_| syntax(st.origin, format!("invalid component name `{name}`")))?;
            if k == 0 {
                return Err(syntax(st.origin, "components are numbered from 1"));
            }
            indexed.push((field, k, parse_expr(rhs.trim(), dim, &params, rhs_origin)?, st.origin));
        }

        let collect = |field: Field| -> Result<Vec<ExprTree>> {
            let mut by_index: Vec<(usize, ExprTree)> = indexed
                .iter()
                .filter(|(f, ..)| *f == field)
                .map(|(_, k, t, _)| (*k, t.clone()))
                .collect();
            let listed: Vec<ExprTree> = sectioned
                .iter()
                .filter(|(f, _)| *f == field)
                .map(|(_, t)| t.clone())
                .collect();
            if !by_index.is_empty() && !listed.is_empty() {
                return Err(Error::DimensionMismatch(
                    "a field may be given either by indexed statements or by a section, not both".into(),
                ));
            }
            if !listed.is_empty() {
                return Ok(listed);
            }
            by_index.sort_by_key(|(k, _)| *k);
            for (pos, (k, _)) in by_index.iter().enumerate() {
                if *k != pos + 1 {
                    return Err(Error::DimensionMismatch(format!(
                        "components must be numbered 1..n without gaps or repeats (found index {k})"
                    )));
                }
            }
            Ok(by_index.into_iter().map(|(_, t)| t).collect())
        };

        let f = collect(Field::F)?;
        let g_manifold = collect(Field::G)?;
        let control = collect(Field::Control)?;

        let (want_f, want_g) = match e_dim {
            Some(ed) => (ed, dim - ed),
            None => (dim, 0),
        };
        if f.len() != want_f {
            return Err(Error::DimensionMismatch(format!(
                "expected {want_f} F expressions, found {}",
                f.len()
            )));
        }
        if g_manifold.len() != want_g {
            return Err(Error::DimensionMismatch(format!(
                "expected {want_g} G expressions, found {}",
                g_manifold.len()
            )));
        }
        if !control.is_empty() && control.len() != dim {
            return Err(Error::DimensionMismatch(format!(
                "control field has {} components but dim = {dim}",
                control.len()
            )));
        }
        for (m, what) in [(&q, "Q"), (&p, "P")] {
            if let Some(m) = m {
                let expect = e_dim.unwrap_or(dim);
                if m.nrows() != expect && m.nrows() != dim {
                    return Err(Error::DimensionMismatch(format!(
                        "{what} is {}x{} but the system dimension is {expect}",
                        m.nrows(),
                        m.ncols()
                    )));
                }
            }
        }
        Ok(SystemSpec {
            dim,
            e_dim,
            params,
            f,
            g_manifold,
            control,
            alpha,
            q,
            p,
        })
    }
}

fn parse_count(rhs: &str, origin: Origin) -> Result<usize> {
    rhs.trim()
        .parse()
        .map_err(|_| syntax(origin, format!("expected a positive integer, found `{}`", rhs.trim())))
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn write_matrix(f: &mut fmt::Formatter<'_>, name: &str, m: &DMatrix<f64>) -> fmt::Result {
    let items: Vec<String> = (0..m.nrows())
        .flat_map(|i| (0..m.ncols()).map(move |j| (i, j)))
        .map(|(i, j)| format!("{:?}", m[(i, j)]))
        .collect();
    writeln!(f, "{name} = [{}]", items.join(", "))
}

/// Re-emits the document in canonical indexed form.
impl fmt::Display for SystemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "dim = {}", self.dim)?;
        if let Some(ed) = self.e_dim {
            writeln!(f, "e_dim = {ed}")?;
        }
        if !self.params.names.is_empty() {
            let items: Vec<String> = self
                .params
                .names
                .iter()
                .zip(&self.params.values)
                .map(|(n, v)| format!("{n} = {v:?}"))
                .collect();
            writeln!(f, "params: {}", items.join(", "))?;
        }
        for (i, t) in self.f.iter().enumerate() {
            writeln!(f, "F{} = {t}", i + 1)?;
        }
        for (i, t) in self.g_manifold.iter().enumerate() {
            writeln!(f, "G{} = {t}", i + 1)?;
        }
        for (i, t) in self.control.iter().enumerate() {
            writeln!(f, "g{} = {t}", i + 1)?;
        }
        if let Some(a) = &self.alpha {
            writeln!(f, "alpha = {a}")?;
        }
        if let Some(q) = &self.q {
            write_matrix(f, "Q", q)?;
        }
        if let Some(p) = &self.p {
            write_matrix(f, "P", p)?;
        }
        Ok(())
    }
}
